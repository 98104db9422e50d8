"""Centralized solvers used to validate the distributed flow.

Two independent routes to the optimum: a projected subgradient descent on the
penalized objective over the load-balance hyperplanes, and (for very small
instances) an exhaustive refined grid search whose objective evaluation is
deliberately written from scratch rather than calling the penalty module, so
a shared bug cannot hide in a three-way comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dynamics import GainParameters, NetworkState, TrajectoryRecord, integrate, uniform_state
from .graph import LaplacianData
from .penalty import penalized_cost
from .problem import DedsInstance, KktResidual, Schedule, evaluate_cost, kkt_residual, total_load


@dataclass(eq=False)
class OracleResult:
    """Best plan found, its costs, and the KKT residuals it achieves.

    ``converged`` reports whether the residual tolerance was met within the
    iteration budget; a False flag still carries the best iterate found.
    """

    schedule: Schedule
    optimal_cost: float
    penalized: float
    iterations: int
    final_residuals: KktResidual
    converged: bool


@dataclass(eq=False)
class VerificationReport:
    """Side-by-side outcome of the centralized solver and the flow."""

    oracle: OracleResult
    record: TrajectoryRecord
    cost_gap_rel: float
    injection_gap: float
    storage_gap: float


def solve_centralized(inst: DedsInstance, eps: float, max_iters: int = 50000,
                      tol: float = 1e-6) -> OracleResult:
    """Projected subgradient descent with diminishing steps a/(b + iter).

    Each iteration steps along the canonical penalized subgradient and then
    re-projects the injections onto the per-slot load equalities (so every
    iterate balances the load to rounding). The best iterate by penalized
    cost is tracked and returned; convergence is declared when its KKT
    residual triple drops below ``tol``. Hitting the iteration budget flags
    the result as not converged instead of raising.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    n, h = inst.n, inst.horizon
    l = total_load(inst)
    scale = max(1.0, float(l.max()) / n)
    a_step = 0.1 * scale
    b_step = 100.0
    inv_eps = 1.0 / eps
    mask = inst.storage_mask

    I = np.repeat((l / n)[None, :], n, axis=0)
    S = np.zeros((n, h))
    args = (inst.cost_b, inst.cost_c, inst.p_min, inst.p_max, inst.ramp_down,
            inst.ramp_up, inst.cap_lo(), inst.cap_hi(), inst.smask_u8(), inv_eps)

    best_f = penalized_cost(inst, eps, Schedule(I, S))
    best_I, best_S = I.copy(), S.copy()
    converged = False
    iterations = 0
    for it in range(max_iters):
        iterations = it + 1
        z1, z2 = kernels.subgradient_arrays(I, S, *args)
        step = a_step / (b_step + it)
        I = I - step * z1
        S = S - step * z2
        if not mask.all():
            S[~mask] = 0.0
        I = I - ((I.sum(axis=0) - l) / n)[None, :]
        if it % 10 == 0:
            f = penalized_cost(inst, eps, Schedule(I, S))
            if f < best_f:
                best_f = f
                best_I, best_S = I.copy(), S.copy()
        if it % 200 == 199:
            res = kkt_residual(inst, eps, Schedule(best_I, best_S))
            if max(res) < tol:
                converged = True
                break

    sched = Schedule(injections=best_I, storage_flows=best_S)
    return OracleResult(
        schedule=sched, optimal_cost=evaluate_cost(inst, sched),
        penalized=best_f, iterations=iterations,
        final_residuals=kkt_residual(inst, eps, sched), converged=converged)


def _penalized_batch(inst: DedsInstance, inv_eps: float,
                     Ib: np.ndarray, Sb: np.ndarray) -> np.ndarray:
    # standalone evaluation of the penalized objective on a (B, n, h) batch;
    # intentionally does NOT call the penalty module (independent route)
    p = Ib + Sb
    cost = (inst.cost_a[None] + inst.cost_b[None] * p
            + inst.cost_c[None] * p * p).sum(axis=(1, 2))
    pen = np.maximum(inst.p_min[None, :, None] - p, 0.0).sum(axis=(1, 2))
    pen += np.maximum(p - inst.p_max[None, :, None], 0.0).sum(axis=(1, 2))
    U = np.cumsum(Sb, axis=2)
    m = inst.storage_mask[None, :, None]  # capacity vacuous without storage
    pen += np.where(m, np.maximum(inst.cap_lo()[None, :, None] - U, 0.0), 0.0).sum(axis=(1, 2))
    pen += np.where(m, np.maximum(U - inst.cap_hi()[None, :, None], 0.0), 0.0).sum(axis=(1, 2))
    pen += np.maximum(-Ib, 0.0).sum(axis=(1, 2))
    if inst.horizon > 1:
        d = p[:, :, 1:] - p[:, :, :-1]
        pen += np.maximum(-inst.ramp_down[None, :, None] - d, 0.0).sum(axis=(1, 2))
        pen += np.maximum(d - inst.ramp_up[None, :, None], 0.0).sum(axis=(1, 2))
    return cost + inv_eps * pen


def brute_force_tiny(inst: DedsInstance, eps: float, grid_step: float = 1e-3) -> OracleResult:
    """Exhaustive refined grid minimization of the penalized objective.

    Only for instances with n * horizon <= 4. Free coordinates: the
    injections of units 1..n-1 (unit n is eliminated through the load
    equalities) and the cumulative storage path of every storage-owning unit
    (so the capacity window is a per-coordinate box). A 7-point grid per
    dimension is refined around the incumbent, halving the window each pass,
    until the resolution reaches ``grid_step``.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    n, h = inst.n, inst.horizon
    if n * h > 4:
        raise ValueError(f"n * horizon = {n * h} exceeds the tiny-instance limit of 4")
    l = total_load(inst)
    inv_eps = 1.0 / eps
    mask = inst.storage_mask
    units_s = np.nonzero(mask)[0]

    pad = max(1.0, 0.05 * float(max(l.max(), 1.0)))
    lows, highs = [], []
    for i in range(n - 1):
        for k in range(h):
            lows.append(-pad)
            highs.append(float(l[k]) + pad)
    cap_lo, cap_hi = inst.cap_lo(), inst.cap_hi()
    for i in units_s:
        for _ in range(h):
            lows.append(float(cap_lo[i]) - pad)
            highs.append(float(cap_hi[i]) + pad)
    lows = np.array(lows)
    highs = np.array(highs)
    d = len(lows)
    n_free_I = (n - 1) * h

    def batch_from_coords(X):
        B = X.shape[0]
        Ib = np.empty((B, n, h))
        if n_free_I:
            Ib[:, :n - 1, :] = X[:, :n_free_I].reshape(B, n - 1, h)
        Ib[:, n - 1, :] = l[None, :] - Ib[:, :n - 1, :].sum(axis=1)
        Sb = np.zeros((B, n, h))
        if units_s.size:
            U = X[:, n_free_I:].reshape(B, units_s.size, h)
            Sb_rows = np.diff(np.concatenate([np.zeros((B, units_s.size, 1)), U],
                                             axis=2), axis=2)
            Sb[:, units_s, :] = Sb_rows
        return Ib, Sb

    if d == 0:
        # single unit without storage: the plan is fully determined
        Ib, Sb = batch_from_coords(np.zeros((1, 0)))
        sched = Schedule(injections=Ib[0], storage_flows=Sb[0])
        return OracleResult(
            schedule=sched, optimal_cost=evaluate_cost(inst, sched),
            penalized=float(_penalized_batch(inst, inv_eps, Ib, Sb)[0]),
            iterations=1, final_residuals=kkt_residual(inst, eps, sched),
            converged=True)

    center = 0.5 * (lows + highs)
    half = 0.5 * (highs - lows)
    total_evals = 0
    best_x, best_f = center.copy(), math.inf
    for _ in range(64):
        axes = [np.linspace(center[j] - half[j], center[j] + half[j], 7)
                for j in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        X = np.stack([m.ravel() for m in mesh], axis=1)
        fvals = np.empty(X.shape[0])
        for s in range(0, X.shape[0], 200000):
            Ib, Sb = batch_from_coords(X[s:s + 200000])
            fvals[s:s + 200000] = _penalized_batch(inst, inv_eps, Ib, Sb)
        total_evals += X.shape[0]
        j = int(np.argmin(fvals))
        if fvals[j] < best_f:
            best_f = float(fvals[j])
            best_x = X[j].copy()
        step = half / 3.0
        if step.max() <= grid_step:
            break
        center = np.clip(best_x, lows, highs)
        half = np.maximum(step * 1.5, grid_step)

    Ib, Sb = batch_from_coords(best_x[None, :])
    sched = Schedule(injections=Ib[0], storage_flows=Sb[0])
    return OracleResult(
        schedule=sched, optimal_cost=evaluate_cost(inst, sched),
        penalized=best_f, iterations=total_evals,
        final_residuals=kkt_residual(inst, eps, sched), converged=True)


def verify_against_dynamics(inst: DedsInstance, lap: LaplacianData,
                            gains: GainParameters, dt: float, t_final: float,
                            state0: NetworkState | None = None,
                            sample_every: int = 100, max_iters: int = 50000,
                            tol: float = 1e-6,
                            eps_bound: float | None = None) -> VerificationReport:
    """Run both the centralized solver and the flow, report their gaps."""
    oracle = solve_centralized(inst, gains.eps, max_iters=max_iters, tol=tol)
    if state0 is None:
        state0 = uniform_state(inst)
    record = integrate(inst, lap, gains, state0, dt, t_final,
                       sample_every=sample_every, eps_bound=eps_bound)
    sched = record.final_schedule()
    denom = max(1.0, abs(oracle.optimal_cost))
    cost_gap = abs(float(record.cost[-1]) - oracle.optimal_cost) / denom
    inj_gap = float(np.abs(sched.injections - oracle.schedule.injections).max())
    sto_gap = float(np.abs(sched.storage_flows - oracle.schedule.storage_flows).max())
    return VerificationReport(oracle=oracle, record=record, cost_gap_rel=cost_gap,
                              injection_gap=inj_gap, storage_gap=sto_gap)
