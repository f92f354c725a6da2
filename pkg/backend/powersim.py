"""
Classical-model transient stability simulator.

Each scenario starts from the power flow equilibrium, applies a bolted
three-phase fault at t=0, clears it at ``t_clear`` without changing the
topology, and integrates the swing equations with fourth-order Runge-Kutta
on Kron-reduced admittance matrices. Trajectories are labelled stable (+1)
or unstable (-1) and turned into the 33 transient features Tz1..Tz33.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from .dataset import Dataset
from .exceptions import ConfigError, NumericalError, SimulationError
from .powerflow import PowerFlowResult, reduced_admittance, solve_power_flow
from .schemas import PowerCase, ScenarioConfig

logger = logging.getLogger(__name__)

INSTABILITY_THRESHOLD = 2.0 * math.pi  # rad, any generator pair
FEATURE_NAMES = tuple(f"Tz{k}" for k in range(1, 34))

# Per sampling instant after clearing (in cycles): the ordered feature kinds.
_POST_CLEARING_LAYOUT = (
    (0, ("shock", "coi_max_angle", "ke_of_largest_angle", "angle_of_max_ke", "max_ke", "mean_ke",
         "max_swing", "coi_max_speed")),
    (3, ("shock", "max_ke", "mean_ke", "coi_max_angle", "max_swing", "ke_of_largest_angle",
         "coi_max_speed")),
    (6, ("shock", "max_ke", "mean_ke", "ke_of_largest_angle", "coi_max_angle", "max_swing",
         "coi_max_speed")),
    (9, ("shock", "ke_of_largest_angle", "max_ke", "mean_ke", "coi_max_angle", "max_swing",
         "coi_max_speed")),
)


@dataclass(frozen=True)
class InitialConditions:
    e: np.ndarray  # internal EMF magnitudes
    delta0: np.ndarray  # rad
    pm: np.ndarray  # mechanical power = pre-fault electrical power
    power_flow: PowerFlowResult


@dataclass(frozen=True)
class Trajectory:
    time: np.ndarray
    delta: np.ndarray  # (T, G) rad
    omega: np.ndarray  # (T, G) rad/s deviation from synchronous speed
    pe: np.ndarray  # (T, G) p.u.; row 0 uses the fault-on network
    m: np.ndarray
    pm: np.ndarray
    t0: float
    t_clear: float
    dt: float
    fault_bus: Optional[int]
    diverged: bool = False

    def index_of(self, t: float) -> int:
        k = int(round((t - self.time[0]) / self.dt))
        if not 0 <= k < self.time.size:
            raise SimulationError(f"time {t:.4f} s is outside the simulated window "
                                  f"[{self.time[0]:.4f}, {self.time[-1]:.4f}]")
        return k


def inertia_coefficients(case: PowerCase) -> np.ndarray:
    """M_i = 2 H_i / omega_s."""
    return np.array([2.0 * gen.h for gen in case.generators]) / case.omega_s


def initial_conditions(case: PowerCase, power_flow: Optional[PowerFlowResult] = None) -> InitialConditions:
    """Internal EMFs behind x_d' from the terminal conditions; P_m equals the generator output."""
    pf = power_flow or solve_power_flow(case)
    pos = case.bus_position()
    v = pf.voltages[[pos[gen.bus] for gen in case.generators]]
    s = pf.p_gen + 1j * pf.q_gen
    current = np.conj(s / v)
    xd = np.array([gen.xd_prime for gen in case.generators])
    emf = v + 1j * xd * current
    return InitialConditions(np.abs(emf), np.angle(emf), pf.p_gen.copy(), pf)


def electrical_power(delta: np.ndarray, e: np.ndarray, y_red: np.ndarray) -> np.ndarray:
    """P_ei = E_i^2 G_ii + sum_j E_i E_j (G_ij cos d_ij + B_ij sin d_ij)."""
    phasors = e * np.exp(1j * delta)
    return np.real(phasors * np.conj(y_red @ phasors))


def _derivatives(delta, omega, pm, m, e, y_red):
    return omega, (pm - electrical_power(delta, e, y_red)) / m


def integrate_swing(delta0: np.ndarray, omega0: np.ndarray, pm: np.ndarray, m: np.ndarray,
                    e: np.ndarray, y_red: np.ndarray, dt: float, n_steps: int
                    ) -> Tuple[np.ndarray, np.ndarray, bool]:
    """Classical RK4 over ``n_steps`` steps on one fixed network.

    Returns (delta, omega, diverged) with n_steps + 1 rows; on a non-finite
    state the arrays are truncated at the last finite row.
    """
    delta = np.empty((n_steps + 1, delta0.size))
    omega = np.empty((n_steps + 1, delta0.size))
    delta[0], omega[0] = delta0, omega0
    d, w = np.asarray(delta0, dtype=float), np.asarray(omega0, dtype=float)
    for k in range(n_steps):
        k1d, k1w = _derivatives(d, w, pm, m, e, y_red)
        k2d, k2w = _derivatives(d + 0.5 * dt * k1d, w + 0.5 * dt * k1w, pm, m, e, y_red)
        k3d, k3w = _derivatives(d + 0.5 * dt * k2d, w + 0.5 * dt * k2w, pm, m, e, y_red)
        k4d, k4w = _derivatives(d + dt * k3d, w + dt * k3w, pm, m, e, y_red)
        d = d + dt / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)
        w = w + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(w))):
            return delta[:k + 1], omega[:k + 1], True
        delta[k + 1], omega[k + 1] = d, w
    return delta, omega, False


def _grid_steps(span: float, dt: float, what: str) -> int:
    steps = int(round(span / dt))
    if abs(steps * dt - span) > 1e-9 * max(1.0, span):
        raise ConfigError(f"dt={dt} does not divide {what}={span}")
    return steps


def simulate_fault(case: PowerCase, fault_bus: Optional[int], t_clear: float, horizon: float, dt: float,
                   init: Optional[InitialConditions] = None) -> Trajectory:
    """Fault on at t=0, cleared at ``t_clear``; ``t_clear=0`` holds the pre-fault equilibrium."""
    if dt <= 0 or horizon <= 0:
        raise ConfigError("dt and horizon must be positive")
    if t_clear < 0 or t_clear > horizon:
        raise ConfigError(f"t_clear={t_clear} must lie in [0, horizon]")
    n_fault = _grid_steps(t_clear, dt, "t_clear")
    n_total = _grid_steps(horizon, dt, "horizon")
    init = init or initial_conditions(case)
    voltages = init.power_flow.voltages
    m = inertia_coefficients(case)
    post = reduced_admittance(case, "postfault", voltages)
    omega0 = np.zeros_like(init.delta0)

    if n_fault > 0:
        faulted = reduced_admittance(case, "fault", voltages, fault_bus)
        d1, w1, diverged = integrate_swing(init.delta0, omega0, init.pm, m, init.e, faulted, dt, n_fault)
        if not diverged:
            d2, w2, diverged = integrate_swing(d1[-1], w1[-1], init.pm, m, init.e, post, dt,
                                               n_total - n_fault)
            delta = np.vstack([d1, d2[1:]])
            omega = np.vstack([w1, w2[1:]])
        else:
            delta, omega = d1, w1
    else:
        delta, omega, diverged = integrate_swing(init.delta0, omega0, init.pm, m, init.e, post, dt, n_total)
        faulted = None

    pe = np.array([electrical_power(d, init.e, post) for d in delta])
    if faulted is not None:
        # the fault network holds on [t0+, t_clear-]; at t_clear the post-fault value applies
        for k in range(min(n_fault, delta.shape[0])):
            pe[k] = electrical_power(delta[k], init.e, faulted)
    time = dt * np.arange(delta.shape[0])
    if diverged:
        logger.debug(f"Trajectory for fault at bus {fault_bus} diverged at t={time[-1]:.3f} s")
    return Trajectory(time, delta, omega, pe, m, init.pm.copy(), 0.0, t_clear, dt,
                      fault_bus if n_fault > 0 else None, diverged)


def max_angle_spread(delta: np.ndarray) -> np.ndarray:
    """Largest pairwise angle difference per row."""
    delta = np.atleast_2d(delta)
    return delta.max(axis=1) - delta.min(axis=1)


def stability_label(traj: Trajectory) -> int:
    if traj.diverged:
        return -1
    return -1 if float(np.max(max_angle_spread(traj.delta))) > INSTABILITY_THRESHOLD else 1


def coi_frame(traj: Trajectory, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """Rotor angles and speeds relative to the centre of inertia at time ``t``."""
    k = traj.index_of(t)
    return _coi(traj.delta[k], traj.omega[k], traj.m)


def _coi(delta: np.ndarray, omega: np.ndarray, m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    total = np.sum(m)
    return delta - np.dot(m, delta) / total, omega - np.dot(m, omega) / total


def _snapshot_features(delta: np.ndarray, omega: np.ndarray, m: np.ndarray) -> dict:
    rel_delta, rel_omega = _coi(delta, omega, m)
    ke = 0.5 * m * rel_omega ** 2
    far = int(np.argmax(np.abs(rel_delta)))
    leading = int(np.argmax(rel_delta))
    fastest = int(np.argmax(ke))
    return {
        "shock": float(np.sum(ke)),
        "coi_max_angle": float(rel_delta[far]),
        "coi_max_speed": float(rel_omega[far]),
        "ke_of_largest_angle": float(ke[leading]),
        "angle_of_max_ke": float(rel_delta[fastest]),
        "max_ke": float(np.max(ke)),
        "mean_ke": float(np.mean(ke)),
        "max_swing": float(np.max(delta) - np.min(delta)),
    }


def extract_features(traj: Trajectory, case: PowerCase) -> np.ndarray:
    """The 33 features, in Tz1..Tz33 order."""
    cycle = 1.0 / case.f0
    last = traj.t_clear + 9.0 * cycle
    if traj.time[-1] + 0.5 * traj.dt < last:
        raise SimulationError(f"trajectory ends at {traj.time[-1]:.4f} s, features need {last:.4f} s")

    accel_power = traj.pm - traj.pe[0]
    accel = accel_power / traj.m
    first = int(np.argmax(accel))
    values: List[float] = [
        float(np.mean(traj.pm)),
        float(accel[first]),
        float(traj.delta[0, first]),
        float(np.mean(accel_power)),
    ]
    for cycles, kinds in _POST_CLEARING_LAYOUT:
        k = traj.index_of(traj.t_clear + cycles * cycle)
        snapshot = _snapshot_features(traj.delta[k], traj.omega[k], traj.m)
        values.extend(snapshot[kind] for kind in kinds)
    out = np.array(values)
    if out.size != len(FEATURE_NAMES) or not np.all(np.isfinite(out)):
        raise SimulationError("feature extraction produced a non-finite value")
    return out


def dispatch_case(case: PowerCase, level: float, rng: np.random.Generator, spread: float) -> PowerCase:
    """Scale loads by ``level`` and redraw generator outputs around their base shares."""
    base_pm = np.array([gen.pm for gen in case.generators])
    base_load = sum(ld.p for ld in case.loads)
    loss_ratio = max(0.0, float(np.sum(base_pm)) / base_load - 1.0) if base_load > 0 else 0.0
    scaled = case.scaled_loads(level)
    total = level * base_load * (1.0 + loss_ratio)
    shares = base_pm / np.sum(base_pm) * rng.uniform(1.0 - spread, 1.0 + spread, base_pm.size)
    return scaled.with_dispatch(list(total * shares / np.sum(shares)))


def _run_scenario(case, init, fault_bus, t_clear, grid):
    try:
        traj = simulate_fault(case, fault_bus, t_clear, grid.horizon, grid.dt, init)
        return extract_features(traj, case), stability_label(traj)
    except NumericalError as exc:
        logger.warning(f"Skipping fault at bus {fault_bus} (t_clear={t_clear}): {exc}")
        return str(exc)


def generate_dataset(case: PowerCase, grid: ScenarioConfig, seed: Optional[int] = None,
                     threads: Optional[int] = None, skipped: Optional[list] = None) -> Dataset:
    """Simulate the scenario grid: load level x dispatch x fault bus x clearing time.

    Rows come out in that nesting order whatever the thread count. Infeasible
    scenarios are skipped with a warning and, when ``skipped`` is given,
    appended to it as dicts.
    """
    seed = grid.seed if seed is None else seed
    skipped = skipped if skipped is not None else []
    known = [bus.id for bus in case.buses]
    faults = grid.fault_buses or known
    unknown = [b for b in faults if b not in known]
    if unknown:
        raise ConfigError(f"fault buses {unknown} are not in case '{case.name}'")
    clearing = grid.clearing_times()
    for t in clearing:
        _grid_steps(t, grid.dt, "t_clear")
    last_sample = max(clearing) + 9.0 / case.f0
    if grid.horizon < last_sample:
        raise ConfigError(f"horizon {grid.horizon} s is shorter than the last feature sample {last_sample:.4f} s")

    jobs = []
    for li, level in enumerate(grid.load_levels):
        for d in range(grid.dispatches_per_level):
            rng = np.random.default_rng([seed, li, d])
            scenario = dispatch_case(case, level, rng, grid.dispatch_spread)
            try:
                init = initial_conditions(scenario)
            except NumericalError as exc:
                logger.warning(f"Skipping load level {level}, dispatch {d}: {exc}")
                skipped.extend({"load_level": level, "dispatch": d, "fault_bus": bus, "t_clear": t,
                                "reason": str(exc)} for bus in faults for t in clearing)
                continue
            jobs.extend((level, d, scenario, init, bus, t) for bus in faults for t in clearing)

    logger.info(f"Simulating {len(jobs)} scenarios of case '{case.name}'")
    results = Parallel(n_jobs=threads or 1, prefer="threads")(
        delayed(_run_scenario)(scenario, init, bus, t, grid) for _, _, scenario, init, bus, t in jobs)
    rows = []
    for (level, d, _, _, bus, t), result in zip(jobs, results):
        if isinstance(result, str):
            skipped.append({"load_level": level, "dispatch": d, "fault_bus": bus, "t_clear": t,
                            "reason": result})
        else:
            rows.append(result)
    if len(rows) < 2:
        raise SimulationError(f"only {len(rows)} of the scenarios were feasible")
    features = np.array([r[0] for r in rows])
    labels = np.array([r[1] for r in rows])
    logger.info(f"Generated {len(rows)} samples ({int(np.sum(labels == 1))} stable, "
                f"{int(np.sum(labels == -1))} unstable), {len(skipped)} skipped")
    return Dataset(features, labels, FEATURE_NAMES)
