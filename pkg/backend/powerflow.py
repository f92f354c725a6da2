"""
Network side of the simulator: bus admittance matrix, AC power flow,
augmented node admittance with generator internal nodes and Kron reduction.

Node order of the augmented matrix: the case buses in file order, then one
internal node per generator in file order.
"""

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.optimize import root
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .exceptions import ConfigError, PowerFlowError, SingularNetworkError
from .schemas import PowerCase

logger = logging.getLogger(__name__)

FAULT_ADMITTANCE = -1j * 1e7  # bolted three-phase fault shunt, p.u.
BALANCE_TOLERANCE = 1e-6

Stage = Literal["prefault", "fault", "postfault"]


@dataclass(frozen=True)
class PowerFlowResult:
    voltages: np.ndarray  # complex bus voltages, case bus order
    p_gen: np.ndarray  # per generator, case generator order
    q_gen: np.ndarray
    max_mismatch: float
    load_p: float = 0.0  # total load served

    @property
    def losses(self) -> float:
        return float(np.sum(self.p_gen)) - self.load_p


def check_connected(case: PowerCase) -> None:
    pos = case.bus_position()
    rows = [pos[br.from_bus] for br in case.branches]
    cols = [pos[br.to_bus] for br in case.branches]
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(pos), len(pos)))
    count, _ = connected_components(graph, directed=False)
    if count != 1:
        raise SingularNetworkError(f"network '{case.name}' splits into {count} islands")


def build_ybus(case: PowerCase) -> np.ndarray:
    """Bus admittance matrix from the branch list (pi model, line charging split in half)."""
    pos = case.bus_position()
    y = np.zeros((len(pos), len(pos)), dtype=complex)
    for br in case.branches:
        i, j = pos[br.from_bus], pos[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b
        y[i, i] += ys + ysh
        y[j, j] += ys + ysh
        y[i, j] -= ys
        y[j, i] -= ys
    return y


def _specified_injections(case: PowerCase):
    pos = case.bus_position()
    p = np.zeros(len(pos))
    q = np.zeros(len(pos))
    for gen in case.generators:
        p[pos[gen.bus]] += gen.pm
    for ld in case.loads:
        p[pos[ld.bus]] -= ld.p
        q[pos[ld.bus]] -= ld.q
    return p, q


def solve_power_flow(case: PowerCase) -> PowerFlowResult:
    """Polar AC power flow solved with ``scipy.optimize.root``.

    Unknowns are the angles of every non-slack bus and the magnitudes of PQ buses.
    """
    check_connected(case)
    ybus = build_ybus(case)
    types = np.array([bus.type for bus in case.buses])
    v_set = np.array([bus.v for bus in case.buses])
    theta0 = np.array([bus.angle for bus in case.buses])
    ang_idx = np.flatnonzero(types != "slack")
    mag_idx = np.flatnonzero(types == "pq")
    p_spec, q_spec = _specified_injections(case)

    def unpack(x):
        theta = theta0.copy()
        vm = v_set.copy()
        theta[ang_idx] = x[:ang_idx.size]
        vm[mag_idx] = x[ang_idx.size:]
        return vm * np.exp(1j * theta)

    def mismatch(x):
        v = unpack(x)
        s = v * np.conj(ybus @ v)
        return np.concatenate([s.real[ang_idx] - p_spec[ang_idx], s.imag[mag_idx] - q_spec[mag_idx]])

    x0 = np.concatenate([theta0[ang_idx], v_set[mag_idx]])
    sol = root(mismatch, x0, method="hybr", options={"xtol": 1e-12})
    residual = mismatch(sol.x)
    worst = float(np.max(np.abs(residual))) if residual.size else 0.0
    if not np.all(np.isfinite(sol.x)) or worst > BALANCE_TOLERANCE:
        raise PowerFlowError(f"power flow for '{case.name}' did not converge "
                             f"(max mismatch {worst:.3g} p.u.: {sol.message})")
    v = unpack(sol.x)
    if np.any(np.abs(v) < 0.1):
        raise PowerFlowError(f"power flow for '{case.name}' converged to a low-voltage solution")

    s = v * np.conj(ybus @ v)
    pos = case.bus_position()
    load_p = np.zeros(len(pos))
    load_q = np.zeros(len(pos))
    for ld in case.loads:
        load_p[pos[ld.bus]] += ld.p
        load_q[pos[ld.bus]] += ld.q
    gen_pos = [pos[gen.bus] for gen in case.generators]
    p_gen = s.real[gen_pos] + load_p[gen_pos]
    q_gen = s.imag[gen_pos] + load_q[gen_pos]
    logger.debug(f"Power flow '{case.name}' converged, mismatch {worst:.2e}")
    return PowerFlowResult(v, p_gen, q_gen, worst, float(np.sum(load_p)))


def load_admittances(case: PowerCase, voltages: np.ndarray) -> np.ndarray:
    """Constant-impedance equivalents y = (P - jQ)/|V|^2 of the loads, per bus."""
    pos = case.bus_position()
    y = np.zeros(len(pos), dtype=complex)
    for ld in case.loads:
        k = pos[ld.bus]
        y[k] += complex(ld.p, -ld.q) / abs(voltages[k]) ** 2
    return y


def build_admittance(case: PowerCase, stage: Stage = "prefault", fault_bus: Optional[int] = None,
                     voltages: Optional[np.ndarray] = None) -> np.ndarray:
    """Augmented node admittance over buses plus generator internal nodes.

    Loads become constant admittances at ``voltages`` (solved from the power
    flow when omitted). The fault stage adds a bolted shunt at ``fault_bus``;
    the post-fault network equals the pre-fault one.
    """
    if stage not in ("prefault", "fault", "postfault"):
        raise ConfigError(f"unknown network stage '{stage}'")
    check_connected(case)
    if voltages is None:
        voltages = solve_power_flow(case).voltages
    pos = case.bus_position()
    nb, ng = len(pos), len(case.generators)
    y = np.zeros((nb + ng, nb + ng), dtype=complex)
    y[:nb, :nb] = build_ybus(case)
    y[np.arange(nb), np.arange(nb)] += load_admittances(case, voltages)
    for k, gen in enumerate(case.generators):
        i, g = pos[gen.bus], nb + k
        yg = 1.0 / (1j * gen.xd_prime)
        y[i, i] += yg
        y[g, g] += yg
        y[i, g] -= yg
        y[g, i] -= yg
    if stage == "fault":
        if fault_bus not in pos:
            raise ConfigError(f"fault bus {fault_bus} is not in case '{case.name}'")
        y[pos[fault_bus], pos[fault_bus]] += FAULT_ADMITTANCE
    return y


def kron_reduce(y: np.ndarray, retained: Sequence[int]) -> np.ndarray:
    """Y_rr - Y_re Y_ee^-1 Y_er over the ``retained`` node indices."""
    y = np.asarray(y)
    retained = np.asarray(retained, dtype=int)
    eliminated = np.setdiff1d(np.arange(y.shape[0]), retained)
    y_rr = y[np.ix_(retained, retained)]
    if eliminated.size == 0:
        return y_rr.copy()
    y_re = y[np.ix_(retained, eliminated)]
    y_er = y[np.ix_(eliminated, retained)]
    y_ee = y[np.ix_(eliminated, eliminated)]
    try:
        return y_rr - y_re @ linalg.solve(y_ee, y_er)
    except linalg.LinAlgError as exc:
        raise SingularNetworkError(f"eliminated block is singular: {exc}") from exc


def reduced_admittance(case: PowerCase, stage: Stage, voltages: np.ndarray,
                       fault_bus: Optional[int] = None) -> np.ndarray:
    nb = len(case.buses)
    full = build_admittance(case, stage, fault_bus, voltages)
    return kron_reduce(full, np.arange(nb, nb + len(case.generators)))
