"""Problem data for horizon-coupled economic dispatch with storage.

A :class:`DedsInstance` bundles n units over h slots: quadratic generation
costs, injection box bounds, ramp limits between consecutive slots, stored
energy capacity bounds coupling all slots through the running sum of storage
flows, and the demand split into per-bus loads plus one external load assigned
to the anchor unit. Public numbering of units is 1-based; arrays are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels


def _as_floats(x, shape, name):
    arr = np.asarray(x, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _coeff_grid(x, n, h, name):
    # per-unit scalars broadcast across slots; per-slot grids pass through
    arr = np.asarray(x, dtype=float)
    if arr.shape == (n,):
        arr = np.repeat(arr[:, None], h, axis=1)
    if arr.shape != (n, h):
        raise ValueError(f"{name} must have shape ({n},) or ({n}, {h}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(eq=False)
class DedsInstance:
    """Data of one dispatch-with-storage problem.

    ``cost_a/b/c`` may be given per unit (shape (n,)) or per unit and slot
    (shape (n, h)); they are stored materialized as (n, h). ``storage_mask``
    marks the units that own a storage device; flows of unmarked units are
    pinned to zero by every solver in the package.
    """

    n: int
    horizon: int
    cost_a: np.ndarray
    cost_b: np.ndarray
    cost_c: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    ramp_down: np.ndarray
    ramp_up: np.ndarray
    cap_min: np.ndarray
    cap_max: np.ndarray
    s_initial: np.ndarray
    external_load: np.ndarray
    bus_loads: np.ndarray
    anchor_unit: int = 1
    storage_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        n, h = self.n, self.horizon
        if n < 1 or h < 1:
            raise ValueError(f"need n >= 1 and horizon >= 1, got n={n}, horizon={h}")
        self.cost_a = _coeff_grid(self.cost_a, n, h, "cost_a")
        self.cost_b = _coeff_grid(self.cost_b, n, h, "cost_b")
        self.cost_c = _coeff_grid(self.cost_c, n, h, "cost_c")
        for name in ("p_min", "p_max", "ramp_down", "ramp_up",
                     "cap_min", "cap_max", "s_initial"):
            setattr(self, name, _as_floats(getattr(self, name), (n,), name))
        self.external_load = _as_floats(self.external_load, (h,), "external_load")
        self.bus_loads = _as_floats(self.bus_loads, (n, h), "bus_loads")
        if self.storage_mask is None:
            self.storage_mask = np.ones(n, dtype=bool)
        else:
            self.storage_mask = np.asarray(self.storage_mask, dtype=bool)
            if self.storage_mask.shape != (n,):
                raise ValueError(f"storage_mask must have shape ({n},)")
        if np.any(self.cost_c < 0):
            raise ValueError("cost_c must be nonnegative (convex stage costs)")
        if np.any(self.p_min > self.p_max):
            raise ValueError("p_min must not exceed p_max")
        if np.any(self.ramp_down <= 0) or np.any(self.ramp_up <= 0):
            raise ValueError("ramp limits must be positive")
        if np.any(self.cap_min > self.s_initial) or np.any(self.s_initial > self.cap_max):
            raise ValueError("s_initial must lie within [cap_min, cap_max]")
        if np.any(self.external_load < 0) or np.any(self.bus_loads < 0):
            raise ValueError("loads must be nonnegative")
        if not (1 <= self.anchor_unit <= n):
            raise ValueError(f"anchor_unit must be in 1..{n}, got {self.anchor_unit}")

    # capacity bounds on the running sum of flows, shifted by the initial level
    def cap_lo(self) -> np.ndarray:
        return self.cap_min - self.s_initial

    def cap_hi(self) -> np.ndarray:
        return self.cap_max - self.s_initial

    def smask_u8(self) -> np.ndarray:
        return self.storage_mask.astype(np.uint8)


@dataclass(eq=False)
class Schedule:
    """A candidate operating plan: injections I and storage flows S, both (n, h)."""

    injections: np.ndarray
    storage_flows: np.ndarray

    def __post_init__(self):
        self.injections = np.asarray(self.injections, dtype=float)
        self.storage_flows = np.asarray(self.storage_flows, dtype=float)
        if self.injections.shape != self.storage_flows.shape or self.injections.ndim != 2:
            raise ValueError("injections and storage_flows must share one (n, h) shape")


@dataclass(frozen=True)
class FeasibilityReport:
    """Worst violation per constraint family (0.0 when satisfied) and the verdict."""

    load_violation: float
    box_violation: float
    storage_violation: float
    injection_violation: float
    ramp_violation: float
    feasible: bool
    tol: float


class KktResidual(NamedTuple):
    load_res: float
    storage_res: float
    injection_consensus_res: float


def total_load(inst: DedsInstance) -> np.ndarray:
    """Per-slot demand the injections must meet: external plus all bus loads."""
    return inst.external_load + inst.bus_loads.sum(axis=0)


def load_placement(inst: DedsInstance) -> np.ndarray:
    """Demand as the network sees it: each unit holds its bus load; the anchor
    additionally holds the external load. Column sums equal total_load."""
    vec = inst.bus_loads.copy()
    vec[inst.anchor_unit - 1] += inst.external_load
    return vec


def _match(inst: DedsInstance, sched: Schedule) -> None:
    want = (inst.n, inst.horizon)
    if sched.injections.shape != want:
        raise ValueError(
            f"schedule shape {sched.injections.shape} does not match instance {want}")


def evaluate_cost(inst: DedsInstance, sched: Schedule) -> float:
    """Total generation cost of the plan, summed over units and slots."""
    _match(inst, sched)
    p = sched.injections + sched.storage_flows
    return float(np.sum(inst.cost_a + inst.cost_b * p + inst.cost_c * p * p))


def check_feasibility(inst: DedsInstance, sched: Schedule, tol: float = 1e-6) -> FeasibilityReport:
    """Measure the worst violation of every constraint family at ``sched``.

    All violations are reported in the constraint's natural units (power or
    energy); ``feasible`` holds when every one of them is at most ``tol``.
    """
    _match(inst, sched)
    I, S = sched.injections, sched.storage_flows
    p = I + S
    l = total_load(inst)
    load = float(np.abs(I.sum(axis=0) - l).max())
    box = float(max(np.maximum(inst.p_min[:, None] - p, 0.0).max(),
                    np.maximum(p - inst.p_max[:, None], 0.0).max()))
    U = np.cumsum(S, axis=1)
    storage = float(max(np.maximum(inst.cap_lo()[:, None] - U, 0.0).max(),
                        np.maximum(U - inst.cap_hi()[:, None], 0.0).max()))
    injection = float(np.maximum(-I, 0.0).max())
    if inst.horizon > 1:
        d = p[:, 1:] - p[:, :-1]
        ramp = float(max(np.maximum(-inst.ramp_down[:, None] - d, 0.0).max(),
                         np.maximum(d - inst.ramp_up[:, None], 0.0).max()))
    else:
        ramp = 0.0
    worst = max(load, box, storage, injection, ramp)
    return FeasibilityReport(load_violation=load, box_violation=box,
                             storage_violation=storage, injection_violation=injection,
                             ramp_violation=ramp, feasible=bool(worst <= tol), tol=tol)


def kkt_residual(inst: DedsInstance, eps: float, sched: Schedule) -> KktResidual:
    """Stationarity and load residuals of a plan under the penalized objective.

    * ``load_res``: worst per-slot absolute load mismatch,
    * ``storage_res``: sup norm of the storage block of the canonical
      penalized subgradient (zero rows for units without storage),
    * ``injection_consensus_res``: worst per-slot spread of the injection
      block around its network mean (the consensus condition at optimality).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    _match(inst, sched)
    I, S = sched.injections, sched.storage_flows
    z1, z2 = kernels.subgradient_arrays(
        I, S, inst.cost_b, inst.cost_c, inst.p_min, inst.p_max,
        inst.ramp_down, inst.ramp_up, inst.cap_lo(), inst.cap_hi(),
        inst.smask_u8(), 1.0 / eps)
    load = float(np.abs(I.sum(axis=0) - total_load(inst)).max())
    storage = float(np.abs(z2).max())
    spread = np.abs(z1 - z1.mean(axis=0)).max()
    return KktResidual(load_res=load, storage_res=storage,
                       injection_consensus_res=float(spread))
