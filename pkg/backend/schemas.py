"""Pydantic models for configuration files, reports and the model document."""

import math
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .chaos import SearchBox


# Power system case file

class Bus(BaseModel):
    id: int
    type: Literal["slack", "pv", "pq"] = "pq"
    v: float = Field(1.0, gt=0)  # p.u. magnitude (setpoint for slack/pv, guess for pq)
    angle: float = 0.0  # rad


class Branch(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    from_bus: int = Field(alias="from")
    to_bus: int = Field(alias="to")
    r: float = Field(0.0, ge=0)
    x: float
    b: float = 0.0  # total line charging susceptance

    @model_validator(mode="after")
    def check_impedance(self):
        if self.r == 0.0 and self.x == 0.0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus} has zero impedance")
        if self.from_bus == self.to_bus:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus} connects a bus to itself")
        return self


class Load(BaseModel):
    bus: int
    p: float
    q: float = 0.0


class Generator(BaseModel):
    bus: int
    h: float = Field(gt=0)  # inertia constant, s on system base
    xd_prime: float = Field(gt=0)
    pm: float  # scheduled output / mechanical power, p.u.
    name: Optional[str] = None


class PowerCase(BaseModel):
    name: str = "case"
    f0: float = Field(60.0, gt=0)
    base_mva: float = Field(100.0, gt=0)
    buses: List[Bus]
    branches: List[Branch]
    loads: List[Load] = Field(default_factory=list)
    generators: List[Generator]

    @model_validator(mode="after")
    def check_topology(self):
        ids = [bus.id for bus in self.buses]
        if len(set(ids)) != len(ids):
            raise ValueError("bus ids must be unique")
        known = set(ids)
        slack = [bus.id for bus in self.buses if bus.type == "slack"]
        if len(slack) != 1:
            raise ValueError(f"exactly one slack bus required, found {len(slack)}")
        if len(self.generators) < 2:
            raise ValueError("at least 2 generators required")
        gen_buses = [gen.bus for gen in self.generators]
        if len(set(gen_buses)) != len(gen_buses):
            raise ValueError("at most one generator per bus")
        for bus_id in gen_buses + [ld.bus for ld in self.loads]:
            if bus_id not in known:
                raise ValueError(f"unknown bus {bus_id}")
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise ValueError(f"branch {br.from_bus}-{br.to_bus} references an unknown bus")
        for bus in self.buses:
            if bus.type in ("slack", "pv") and bus.id not in gen_buses:
                raise ValueError(f"{bus.type} bus {bus.id} has no generator")
        return self

    def bus_position(self) -> Dict[int, int]:
        return {bus.id: k for k, bus in enumerate(self.buses)}

    @property
    def omega_s(self) -> float:
        return 2.0 * math.pi * self.f0

    def scaled_loads(self, level: float) -> "PowerCase":
        """Copy with every load multiplied by ``level``."""
        loads = [ld.model_copy(update={"p": ld.p * level, "q": ld.q * level}) for ld in self.loads]
        return self.model_copy(update={"loads": loads}, deep=True)

    def with_dispatch(self, pm: List[float]) -> "PowerCase":
        """Copy with the scheduled generator outputs replaced."""
        if len(pm) != len(self.generators):
            raise ValueError(f"{len(pm)} outputs for {len(self.generators)} generators")
        gens = [gen.model_copy(update={"pm": float(p)}) for gen, p in zip(self.generators, pm)]
        return self.model_copy(update={"generators": gens}, deep=True)


class ScenarioConfig(BaseModel):
    load_levels: List[float] = Field(default_factory=lambda: [0.85, 0.95, 1.05, 1.15])
    dispatches_per_level: int = Field(5, ge=1)
    fault_buses: Optional[List[int]] = None
    t_clear: Union[float, List[float]] = 0.1
    horizon: float = Field(5.0, gt=0)
    dt: float = Field(0.005, gt=0)
    seed: int = 0
    dispatch_spread: float = Field(0.5, ge=0, lt=1)

    @field_validator("load_levels")
    @classmethod
    def check_levels(cls, levels):
        if not levels or any(level <= 0 for level in levels):
            raise ValueError("load_levels must be a non-empty list of positive fractions")
        return levels

    @field_validator("t_clear")
    @classmethod
    def check_clearing(cls, value):
        times = value if isinstance(value, list) else [value]
        if not times or any(t < 0 for t in times):
            raise ValueError("t_clear must be non-negative")
        return value

    def clearing_times(self) -> List[float]:
        return list(self.t_clear) if isinstance(self.t_clear, list) else [self.t_clear]


# Optimizer and training options

class OptimizerConfig(BaseModel):
    population: int = Field(20, ge=2)
    max_generations: int = Field(200, ge=1)
    precision_start: float = 2.0
    precision_end: float = 1e-5
    precision_update: float = 1.25
    lower: List[float] = Field(default_factory=lambda: [1e-6, 1e-6])  # [lambda, sigma]
    upper: List[float] = Field(default_factory=lambda: [500.0, 1000.0])
    s_min: float = 1.0
    s_max: Optional[float] = None  # None -> box diagonal
    chaos_max_steps: int = Field(200, ge=1)
    chaos_refine_steps: int = Field(200, ge=0)  # 0 turns polishing of escape points off
    chaos_refine_radius: float = Field(0.05, gt=0, le=0.5)  # initial half-width, fraction of box width
    fitness_stop: Optional[float] = 99.5
    m: float = 0.99
    n: float = 1.01
    seed: int = Field(0, ge=0)
    chaos_enabled: bool = True
    adaptive_sensing: bool = True
    sensing_range: Optional[float] = None  # used when adaptive_sensing is off
    threads: Optional[int] = 1

    @model_validator(mode="after")
    def check_constants(self):
        if not self.precision_start > self.precision_end > 0:
            raise ValueError("need precision_start > precision_end > 0")
        if self.precision_update <= 1:
            raise ValueError("precision_update must exceed 1")
        if not 0 < self.m < 1 < self.n:
            raise ValueError("need 0 < m < 1 < n")
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper bounds differ in length")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("every lower bound must be below its upper bound")
        if self.s_min >= self.resolved_s_max():
            raise ValueError("need s_min < s_max")
        return self

    def box(self) -> SearchBox:
        return SearchBox(self.lower, self.upper)

    def resolved_s_max(self) -> float:
        if self.s_max is not None:
            return self.s_max
        return float(math.dist(self.lower, self.upper))

    def resolved_sensing_range(self) -> float:
        if self.sensing_range is not None:
            return self.sensing_range
        return 0.5 * (self.s_min + self.resolved_s_max())


class LlmOptions(BaseModel):
    outer_tol: float = Field(1e-4, gt=0)
    max_outer_iters: int = Field(30, ge=1)
    inner_tol: float = Field(1e-8, gt=0)
    max_inner_iters: int = Field(200, ge=1)
    armijo: float = Field(1e-4, gt=0, lt=1)
    initial_step: float = Field(1.0, gt=0)
    min_step: float = Field(1e-30, gt=0)


class ExperimentConfig(BaseModel):
    case_path: Optional[Path] = None
    scenario_path: Optional[Path] = None
    dataset_path: Optional[Path] = None
    train_fraction: float = Field(0.75, gt=0, lt=1)
    split_seed: int = 0
    folds: int = Field(5, ge=2)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    llm: LlmOptions = Field(default_factory=LlmOptions)
    irrelevant_counts: List[int] = Field(default_factory=lambda: [0, 50, 100, 150, 200])
    ablation_drop: int = Field(5, ge=1)
    compare_runs: int = Field(10, ge=1)
    compare_tolerance: float = Field(0.5, ge=0)
    out_dir: Path = Path("runs")
    threads: Optional[int] = None
    seed: int = 0

    @field_validator("case_path", "scenario_path", "dataset_path")
    @classmethod
    def check_exists(cls, path):
        if path is not None and not Path(path).exists():
            raise ValueError(f"file not found: {path}")
        return path

    @field_validator("irrelevant_counts")
    @classmethod
    def check_counts(cls, counts):
        if any(c < 0 for c in counts):
            raise ValueError("irrelevant feature counts must be >= 0")
        return counts


# Reports and persisted documents

class FeatureWeight(BaseModel):
    feature: str
    weight: float = Field(ge=0)


class ConfusionCounts(BaseModel):
    stable_as_stable: int = 0
    stable_as_unstable: int = 0
    unstable_as_stable: int = 0
    unstable_as_unstable: int = 0

    @property
    def total(self) -> int:
        return (self.stable_as_stable + self.stable_as_unstable
                + self.unstable_as_stable + self.unstable_as_unstable)


class EvaluationReport(BaseModel):
    n_samples: int
    accuracy: float = Field(ge=0, le=100)
    confusion: ConfusionCounts

    @model_validator(mode="after")
    def check_counts(self):
        if self.confusion.total != self.n_samples:
            raise ValueError("confusion counts must sum to the number of samples")
        return self


class RunReport(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    optimizer: str
    lambda_: float = Field(alias="lambda")
    sigma: float
    cv_accuracy: float = Field(ge=0, le=100)
    test: EvaluationReport
    n_train: int
    feature_weights: List[FeatureWeight]
    generations_run: int
    chaos_triggers: int
    trace_path: Optional[str] = None
    trained_model_path: Optional[str] = None
    seed: int
    timings: Dict[str, float] = Field(default_factory=dict)


class ModelDocument(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    format_version: int = 1
    feature_names: List[str]
    weights: List[float]
    lambda_: float = Field(alias="lambda")
    sigma: float
    means: List[float]
    stds: List[float]
    train_features: List[List[float]]
    train_labels: List[int]
