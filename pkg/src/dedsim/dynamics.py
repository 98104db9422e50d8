"""The four-block saddle-point flow and its simulator.

State blocks, all (n, h): injections I, storage flows S, auxiliary consensus
state z, and integral state v. The flow descends the penalized cost along the
network (I via a Laplacian-filtered subgradient plus a z feedback, S by plain
subgradient descent) while (z, v) run a distributed PI loop that steers the
per-slot injection totals onto the demand. Column sums of v are conserved by
construction; the per-slot aggregate mismatch obeys a damped second-order ODE
with rate constants set by alpha and nu1*nu2 alone.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .graph import LaplacianData
from .penalty import penalized_cost
from .problem import (
    DedsInstance,
    KktResidual,
    Schedule,
    evaluate_cost,
    kkt_residual,
    load_placement,
    total_load,
)

# stop rule: every residual below this, for this many consecutive samples
STOP_THRESHOLD = 1e-4
STOP_CONSECUTIVE = 100


class EpsilonUnverifiedWarning(UserWarning):
    """Raised (as a warning) when a run starts without a penalty certificate."""


class StiffnessWarning(UserWarning):
    """The explicit step is large relative to the fastest time constant."""


class GainCheck(NamedTuple):
    ok: bool
    margin: float


class FieldValue(NamedTuple):
    dI: np.ndarray
    dS: np.ndarray
    dz: np.ndarray
    dv: np.ndarray


@dataclass(frozen=True)
class GainParameters:
    """Flow gains: consensus damping alpha, diffusion beta, feedback gains
    nu1/nu2, and the penalty weight eps."""

    alpha: float
    beta: float
    nu1: float
    nu2: float
    eps: float

    def __post_init__(self):
        for name in ("alpha", "beta", "nu1", "nu2", "eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(eq=False)
class NetworkState:
    """Full network state; arrays are copied and stored C-contiguous float64."""

    I: np.ndarray
    S: np.ndarray
    z: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.I = np.ascontiguousarray(self.I, dtype=float).copy()
        self.S = np.ascontiguousarray(self.S, dtype=float).copy()
        self.z = np.ascontiguousarray(self.z, dtype=float).copy()
        self.v = np.ascontiguousarray(self.v, dtype=float).copy()
        shapes = {self.I.shape, self.S.shape, self.z.shape, self.v.shape}
        if len(shapes) != 1 or self.I.ndim != 2:
            raise ValueError("all state blocks must share one (n, h) shape")

    def copy(self) -> "NetworkState":
        return NetworkState(I=self.I, S=self.S, z=self.z, v=self.v)


@dataclass(eq=False)
class TrajectoryRecord:
    """Sampled trajectory of one run plus its stop-rule bookkeeping.

    Sample axis first: state snapshots are (m, n, h), per-slot quantities
    (m, h), scalars (m,). ``damped`` counts chatter-guard interventions inside
    the chunk ending at each sample.
    """

    times: np.ndarray
    I: np.ndarray
    S: np.ndarray
    z: np.ndarray
    v: np.ndarray
    xi: np.ndarray
    cost: np.ndarray
    penalized: np.ndarray
    lyapunov: np.ndarray
    conservation: np.ndarray
    load_res: np.ndarray
    storage_res: np.ndarray
    consensus_res: np.ndarray
    z_inf: np.ndarray
    field_res: np.ndarray
    damped: np.ndarray
    dt: float
    method: str
    sample_every: int
    converged: bool
    stop_time: float | None
    diverged: bool
    final_residuals: KktResidual
    message_count: int = 0
    message_bytes: int = 0
    mode: str = "monolithic"

    def final_state(self) -> NetworkState:
        return NetworkState(I=self.I[-1], S=self.S[-1], z=self.z[-1], v=self.v[-1])

    def final_schedule(self) -> Schedule:
        return Schedule(injections=self.I[-1], storage_flows=self.S[-1])


def validate_gains(lap: LaplacianData, p: GainParameters) -> GainCheck:
    """Check the sufficient convergence condition on the gains.

    The condition is nu1/(beta*nu2*lambda2) + nu2^2*lambda_max(L^T L)/(2*alpha)
    < lambda2, with lambda2 the second-smallest eigenvalue of L + L^T; the
    margin is the gap (positive = satisfied). A 1x1 network has no consensus
    coupling, so the condition is vacuous and the margin infinite. For larger
    networks a nonpositive lambda2 means the graph was not strongly connected
    or not weight balanced, which is rejected outright.
    """
    n = lap.L.shape[0]
    if n == 1:
        return GainCheck(ok=True, margin=math.inf)
    # without weight balance the ones vector leaves the kernel of L + L^T and
    # its second eigenvalue stops measuring connectivity at all
    colsums = np.abs(lap.L.sum(axis=0))
    if colsums.max() > 1e-9 * max(1.0, float(np.abs(lap.L).max())):
        raise ValueError(
            f"graph is not weight balanced (max |column sum| = "
            f"{colsums.max():.3g}); the flow's convergence theory needs balance")
    lam2 = lap.lambda2_sym
    if lam2 <= 0:
        raise ValueError(
            "lambda2_sym must be positive for n > 1; the graph is not strongly "
            "connected")
    lhs = p.nu1 / (p.beta * p.nu2 * lam2) + (p.nu2 ** 2) * lap.lambda_max_LtL / (2.0 * p.alpha)
    margin = lam2 - lhs
    return GainCheck(ok=bool(margin > 0), margin=float(margin))


def box_pattern_state(inst: DedsInstance, pattern) -> NetworkState:
    """Initial state with every injection at a box edge: 1 in the pattern
    puts slot k at p_max, 0 at p_min; S, z, v start at zero."""
    pattern = list(pattern)
    if len(pattern) != inst.horizon:
        raise ValueError(f"pattern must have length {inst.horizon}")
    I = np.empty((inst.n, inst.horizon))
    for k, bit in enumerate(pattern):
        I[:, k] = inst.p_max if bit else inst.p_min
    zeros = np.zeros_like(I)
    return NetworkState(I=I, S=zeros, z=zeros, v=zeros)


def uniform_state(inst: DedsInstance) -> NetworkState:
    """Initial state splitting each slot's demand equally; S, z, v zero."""
    l = total_load(inst)
    I = np.repeat((l / inst.n)[None, :], inst.n, axis=0)
    zeros = np.zeros_like(I)
    return NetworkState(I=I, S=zeros, z=zeros, v=zeros)


def _n_steps(t_final: float, dt: float) -> int:
    # shared by the monolithic and agent run loops (agents shadows round())
    return int(round(t_final / dt)) if t_final > 0 else 0


def _csr_from_laplacian(L: np.ndarray):
    # off-diagonal of L is -A, so negation recovers the arc weights exactly
    n = L.shape[0]
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    cols, wts = [], []
    for i in range(n):
        nz = np.nonzero(L[i])[0]
        nz = nz[nz != i]
        row_ptr[i + 1] = row_ptr[i] + nz.size
        cols.append(nz.astype(np.int64))
        wts.append(-L[i, nz])
    col_idx = np.concatenate(cols) if n else np.zeros(0, dtype=np.int64)
    weights = np.concatenate(wts) if n else np.zeros(0)
    return row_ptr, col_idx, weights


def _kernel_args(inst: DedsInstance, p: GainParameters):
    return dict(
        b=inst.cost_b, c=inst.cost_c, p_min=inst.p_min, p_max=inst.p_max,
        ramp_dn=inst.ramp_down, ramp_up=inst.ramp_up,
        cap_lo=inst.cap_lo(), cap_hi=inst.cap_hi(), smask=inst.smask_u8(),
        inv_eps=1.0 / p.eps)


def vector_field(inst: DedsInstance, lap: LaplacianData, p: GainParameters,
                 state: NetworkState) -> FieldValue:
    """Right-hand side of the flow at a state."""
    ka = _kernel_args(inst, p)
    z1, z2 = kernels.subgradient_arrays(state.I, state.S, **ka)
    row_ptr, col_idx, weights = _csr_from_laplacian(lap.L)
    dI, dS, dz, dv = kernels.field_arrays(
        state.I, state.S, state.z, state.v, z1, z2, row_ptr, col_idx, weights,
        load_placement(inst), p.alpha, p.beta, p.nu1, p.nu2)
    return FieldValue(dI=dI, dS=dS, dz=dz, dv=dv)


def step(inst: DedsInstance, lap: LaplacianData, p: GainParameters,
         state: NetworkState, dt: float, method: str = "euler") -> NetworkState:
    """One explicit step of size dt; ``euler`` or ``rk4``.

    Single-shot and guard-free (the anti-chattering damping lives in the run
    loops). Raises on a non-finite result, which signals dt too large for the
    penalty stiffness.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if method == "euler":
        f = vector_field(inst, lap, p, state)
        new = NetworkState(I=state.I + dt * f.dI, S=state.S + dt * f.dS,
                           z=state.z + dt * f.dz, v=state.v + dt * f.dv)
    elif method == "rk4":
        def at(si, ss, sz, sv):
            return vector_field(inst, lap, p, NetworkState(I=si, S=ss, z=sz, v=sv))
        k1 = at(state.I, state.S, state.z, state.v)
        k2 = at(state.I + (0.5 * dt) * k1.dI, state.S + (0.5 * dt) * k1.dS,
                state.z + (0.5 * dt) * k1.dz, state.v + (0.5 * dt) * k1.dv)
        k3 = at(state.I + (0.5 * dt) * k2.dI, state.S + (0.5 * dt) * k2.dS,
                state.z + (0.5 * dt) * k2.dz, state.v + (0.5 * dt) * k2.dv)
        k4 = at(state.I + dt * k3.dI, state.S + dt * k3.dS,
                state.z + dt * k3.dz, state.v + dt * k3.dv)
        w = dt / 6.0
        new = NetworkState(
            I=state.I + w * (k1.dI + 2.0 * k2.dI + 2.0 * k3.dI + k4.dI),
            S=state.S + w * (k1.dS + 2.0 * k2.dS + 2.0 * k3.dS + k4.dS),
            z=state.z + w * (k1.dz + 2.0 * k2.dz + 2.0 * k3.dz + k4.dz),
            v=state.v + w * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv))
    else:
        raise ValueError(f"unknown method {method!r}")
    if not all(np.all(np.isfinite(a)) for a in (new.I, new.S, new.z, new.v)):
        raise FloatingPointError("state became non-finite; reduce dt")
    return new


def mismatch(inst: DedsInstance, state: NetworkState) -> np.ndarray:
    """Per-slot aggregate load mismatch xi_k = sum_i I_ik - l_k, shape (h,)."""
    return state.I.sum(axis=0) - total_load(inst)


def mismatch_closed_form(xi0, xidot0, alpha: float, nu1nu2: float, t):
    """Exact solution of xi'' = -alpha*xi' - nu1nu2*xi.

    ``xi0``/``xidot0`` may be scalars or arrays; ``t`` scalar or array
    (broadcast against each other). Handles the overdamped, critically damped
    and underdamped root configurations.
    """
    xi0 = np.asarray(xi0, dtype=float)
    xidot0 = np.asarray(xidot0, dtype=float)
    t = np.asarray(t, dtype=float)
    disc = alpha * alpha - 4.0 * nu1nu2
    tol = 1e-12 * max(alpha * alpha, 4.0 * nu1nu2)
    if disc > tol:
        rt = math.sqrt(disc)
        r1 = (-alpha + rt) / 2.0
        r2 = (-alpha - rt) / 2.0
        A = (xidot0 - r2 * xi0) / (r1 - r2)
        B = (r1 * xi0 - xidot0) / (r1 - r2)
        return A * np.exp(r1 * t) + B * np.exp(r2 * t)
    if disc < -tol:
        om = math.sqrt(-disc) / 2.0
        decay = np.exp((-alpha / 2.0) * t)
        return decay * (xi0 * np.cos(om * t)
                        + ((xidot0 + (alpha / 2.0) * xi0) / om) * np.sin(om * t))
    r = -alpha / 2.0
    return (xi0 + (xidot0 - r * xi0) * t) * np.exp(r * t)


def lyapunov_value(inst: DedsInstance, p: GainParameters, state: NetworkState) -> float:
    """Energy function of the flow: penalized cost plus the weighted squared
    norms of the transformed PI states (both vanish on the equilibrium set)."""
    feps = penalized_cost(inst, p.eps, Schedule(state.I, state.S))
    w1 = state.z
    w2 = state.v + p.alpha * state.z - p.nu2 * (load_placement(inst) - state.I)
    return float(feps + 0.5 * (p.nu1 * p.nu2 * np.sum(w1 * w1) + np.sum(w2 * w2)))


def _diagnostics(inst, p, csr, load_vec, I, S, z, v):
    ka = _kernel_args(inst, p)
    z1, z2 = kernels.subgradient_arrays(I, S, **ka)
    dI, dS, dz, dv = kernels.field_arrays(
        I, S, z, v, z1, z2, csr[0], csr[1], csr[2],
        load_vec, p.alpha, p.beta, p.nu1, p.nu2)
    l = total_load(inst)
    xi = I.sum(axis=0) - l
    sched = Schedule(I, S)
    cost = evaluate_cost(inst, sched)
    feps = penalized_cost(inst, p.eps, sched)
    w2 = v + p.alpha * z - p.nu2 * (load_vec - I)
    lyap = float(feps + 0.5 * (p.nu1 * p.nu2 * np.sum(z * z) + np.sum(w2 * w2)))
    cons = v.sum(axis=0)
    load_res = float(np.abs(xi).max())
    storage_res = float(np.abs(z2).max())
    consensus_res = float(np.abs(z1 - z1.mean(axis=0)).max())
    z_inf = float(np.abs(z).max()) if z.size else 0.0
    field_res = max(float(np.abs(a).max()) for a in (dI, dS, dz, dv))
    return dict(xi=xi, cost=cost, feps=feps, lyap=lyap, cons=cons,
                load_res=load_res, storage_res=storage_res,
                consensus_res=consensus_res, z_inf=z_inf, field_res=field_res)


def _check_start(inst, lap, p, state0, dt, override_gain_check, eps_bound):
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    check = validate_gains(lap, p)
    if not check.ok and not override_gain_check:
        raise ValueError(
            f"gain condition violated (margin {check.margin:.6g}); "
            "pass override_gain_check=True to integrate anyway")
    colsums = np.abs(state0.v.sum(axis=0))
    if colsums.size and colsums.max() > 1e-9:
        raise ValueError(
            f"v(0) column sums must vanish (max |sum| = {colsums.max():.3g}); "
            "the flow conserves them, so a biased start never converges")
    if eps_bound is None:
        warnings.warn(
            "no penalty certificate supplied; eps admissibility is unverified",
            EpsilonUnverifiedWarning, stacklevel=3)
    elif p.eps >= eps_bound:
        warnings.warn(
            f"eps = {p.eps} is not below the supplied bound {eps_bound:.6g}; "
            "the penalty may not be exact", EpsilonUnverifiedWarning, stacklevel=3)
    stiff = 1.0 / p.eps + p.alpha + p.beta + 2.0 * float(inst.cost_c.max())
    if dt * stiff >= 0.5:
        warnings.warn(
            f"dt * stiffness = {dt * stiff:.3g} >= 0.5; expect heavy chattering "
            "or instability", StiffnessWarning, stacklevel=3)


def integrate(inst: DedsInstance, lap: LaplacianData, p: GainParameters,
              state0: NetworkState, dt: float, t_final: float,
              sample_every: int = 1, method: str = "euler",
              override_gain_check: bool = False,
              eps_bound: float | None = None) -> TrajectoryRecord:
    """Run the flow from ``state0`` and record samples every ``sample_every``
    steps (the initial state is always sample 0).

    The run stops early once every stop-rule residual stays below 1e-4 for
    100 consecutive samples, and aborts (``diverged=True``) if the state goes
    non-finite. Rejected starts (gain condition without override, biased v(0))
    raise ValueError. ``eps_bound`` is an optional certified penalty
    threshold; without one an EpsilonUnverifiedWarning is emitted.
    """
    _check_start(inst, lap, p, state0, dt, override_gain_check, eps_bound)
    if sample_every < 1:
        raise ValueError("sample_every must be at least 1")
    if method not in ("euler", "rk4"):
        raise ValueError(f"unknown method {method!r}")
    n_steps = _n_steps(t_final, dt)

    state = state0.copy()
    I, S, z, v = state.I, state.S, state.z, state.v
    prev_dS = np.zeros_like(S)
    csr = _csr_from_laplacian(lap.L)
    load_vec = load_placement(inst)
    ka = _kernel_args(inst, p)

    samples = []

    def take_sample(t, damped):
        d = _diagnostics(inst, p, csr, load_vec, I, S, z, v)
        d.update(t=t, damped=damped, I=I.copy(), S=S.copy(), z=z.copy(), v=v.copy())
        samples.append(d)
        return d

    first = take_sample(0.0, 0)
    worst0 = max(first[k] for k in ("load_res", "storage_res", "consensus_res",
                                    "z_inf", "field_res"))
    quiet = 1 if worst0 < STOP_THRESHOLD else 0

    converged = quiet >= STOP_CONSECUTIVE
    diverged = False
    stop_time = 0.0 if converged else None
    done = 0
    while done < n_steps and not converged and not diverged:
        chunk = min(sample_every, n_steps - done)
        if method == "euler":
            damped = kernels.euler_chunk(
                I, S, z, v, prev_dS,
                ka["b"], ka["c"], ka["p_min"], ka["p_max"], ka["ramp_dn"],
                ka["ramp_up"], ka["cap_lo"], ka["cap_hi"], ka["smask"],
                csr[0], csr[1], csr[2], load_vec,
                p.alpha, p.beta, p.nu1, p.nu2, ka["inv_eps"], dt, chunk, True)
        else:
            damped = 0
            st = NetworkState(I=I, S=S, z=z, v=v)
            for _ in range(chunk):
                st = step(inst, lap, p, st, dt, method="rk4")
            I[...], S[...], z[...], v[...] = st.I, st.S, st.z, st.v
        done += chunk
        t = done * dt
        if not all(np.all(np.isfinite(a)) for a in (I, S, z, v)):
            diverged = True
            samples.append(dict(
                xi=np.full(inst.horizon, np.nan), cost=math.nan, feps=math.nan,
                lyap=math.nan, cons=np.full(inst.horizon, np.nan),
                load_res=math.nan, storage_res=math.nan, consensus_res=math.nan,
                z_inf=math.nan, field_res=math.nan, t=t, damped=damped,
                I=I.copy(), S=S.copy(), z=z.copy(), v=v.copy()))
            break
        d = take_sample(t, damped)
        worst = max(d[k] for k in ("load_res", "storage_res", "consensus_res",
                                   "z_inf", "field_res"))
        quiet = quiet + 1 if worst < STOP_THRESHOLD else 0
        if quiet >= STOP_CONSECUTIVE:
            converged = True
            stop_time = t

    final_sched = Schedule(injections=I, storage_flows=S)
    if diverged:
        final_res = KktResidual(math.nan, math.nan, math.nan)
    else:
        final_res = kkt_residual(inst, p.eps, final_sched)
    return TrajectoryRecord(
        times=np.array([s["t"] for s in samples]),
        I=np.stack([s["I"] for s in samples]),
        S=np.stack([s["S"] for s in samples]),
        z=np.stack([s["z"] for s in samples]),
        v=np.stack([s["v"] for s in samples]),
        xi=np.stack([s["xi"] for s in samples]),
        cost=np.array([s["cost"] for s in samples]),
        penalized=np.array([s["feps"] for s in samples]),
        lyapunov=np.array([s["lyap"] for s in samples]),
        conservation=np.stack([s["cons"] for s in samples]),
        load_res=np.array([s["load_res"] for s in samples]),
        storage_res=np.array([s["storage_res"] for s in samples]),
        consensus_res=np.array([s["consensus_res"] for s in samples]),
        z_inf=np.array([s["z_inf"] for s in samples]),
        field_res=np.array([s["field_res"] for s in samples]),
        damped=np.array([s["damped"] for s in samples], dtype=np.int64),
        dt=dt, method=method, sample_every=sample_every,
        converged=converged, stop_time=stop_time, diverged=diverged,
        final_residuals=final_res)
