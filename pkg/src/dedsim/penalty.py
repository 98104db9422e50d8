"""Exact-penalty reformulation: constraint residuals, penalized cost, and the
canonical subgradient pair.

The seven inequality families of the dispatch problem enter a single
nonsmooth objective f + (1/eps) * sum of positive parts. For small enough
eps (epsilon_upper_bound gives a sufficient threshold from any strictly
feasible point) minimizers of the penalized objective over the load-balance
hyperplane are exactly the constrained optima.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .problem import DedsInstance, Schedule, evaluate_cost, total_load

SELECTION_RULE = "midpoint-at-kink"


@dataclass(eq=False)
class PenaltyTerms:
    """Raw residuals of the seven constraint families (positive = violated).

    T1/T2: injection-plus-storage below/above its box, (n, h).
    T3/T4: stored energy below/above its capacity window, (n, h).
    T5: negative injection, (n, h).
    T6/T7: downward/upward ramp excess between consecutive slots, (n, h-1).
    """

    T1: np.ndarray
    T2: np.ndarray
    T3: np.ndarray
    T4: np.ndarray
    T5: np.ndarray
    T6: np.ndarray
    T7: np.ndarray

    def families(self):
        return (self.T1, self.T2, self.T3, self.T4, self.T5, self.T6, self.T7)


@dataclass(eq=False)
class PenaltySubgradient:
    """One canonical element of the penalized objective's subdifferential.

    ``zeta1`` differentiates with respect to injections, ``zeta2`` with
    respect to storage flows (rows of units without storage are zero). Both
    blocks use one shared hinge selection per constraint family, taking the
    midpoint value at kinks.
    """

    zeta1: np.ndarray
    zeta2: np.ndarray
    selection_rule: str = SELECTION_RULE


def penalty_terms(inst: DedsInstance, sched: Schedule) -> PenaltyTerms:
    """Evaluate all seven families of constraint residuals at a plan."""
    I, S = sched.injections, sched.storage_flows
    p = I + S
    U = np.cumsum(S, axis=1)
    d = p[:, 1:] - p[:, :-1]
    return PenaltyTerms(
        T1=inst.p_min[:, None] - p,
        T2=p - inst.p_max[:, None],
        T3=inst.cap_lo()[:, None] - U,
        T4=U - inst.cap_hi()[:, None],
        T5=-I,
        T6=-inst.ramp_down[:, None] - d,
        T7=d - inst.ramp_up[:, None],
    )


def penalized_cost(inst: DedsInstance, eps: float, sched: Schedule) -> float:
    """Generation cost plus 1/eps times the total constraint violation.

    Units without storage have vacuous capacity constraints: their T3/T4
    rows are excluded from the sum (their S variables are pinned to zero, so
    on the pinned domain this changes nothing; off it, the exclusion keeps
    the cost consistent with the subgradient selection).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    terms = penalty_terms(inst, sched)
    mask = inst.storage_mask[:, None]
    pen = sum(float(np.maximum(T, 0.0).sum())
              for T in (terms.T1, terms.T2, terms.T5, terms.T6, terms.T7))
    pen += float(np.where(mask, np.maximum(terms.T3, 0.0), 0.0).sum())
    pen += float(np.where(mask, np.maximum(terms.T4, 0.0), 0.0).sum())
    return evaluate_cost(inst, sched) + (1.0 / eps) * pen


def subgradient(inst: DedsInstance, eps: float, sched: Schedule) -> PenaltySubgradient:
    """Canonical subgradient of the penalized objective at a plan."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    z1, z2 = kernels.subgradient_arrays(
        sched.injections, sched.storage_flows, inst.cost_b, inst.cost_c,
        inst.p_min, inst.p_max, inst.ramp_down, inst.ramp_up,
        inst.cap_lo(), inst.cap_hi(), inst.smask_u8(), 1.0 / eps)
    return PenaltySubgradient(zeta1=z1, zeta2=z2)


def epsilon_upper_bound(rho: float, f_slater: float, f_opt: float) -> float:
    """Sufficient penalty threshold rho / (f_slater - f_opt).

    ``rho`` is the smallest inequality margin of a strictly feasible plan,
    ``f_slater`` its cost, ``f_opt`` the optimal cost (an upper estimate of
    the optimum inflates the bound slightly; prefer tight values). Any eps
    strictly below the returned value makes the penalty exact.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if f_slater <= f_opt:
        raise ValueError(
            f"strictly feasible cost {f_slater} must exceed optimal cost {f_opt}")
    return rho / (f_slater - f_opt)


def _upper_hull(ys: np.ndarray) -> np.ndarray:
    # least concave majorant of {(k, ys[k])} at integer abscissae
    m = len(ys)
    hull = [0]
    for k in range(1, m):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            # drop j when it lies below chord i..k
            if (ys[j] - ys[i]) * (k - i) <= (ys[k] - ys[i]) * (j - i):
                hull.pop()
            else:
                break
        hull.append(k)
    out = np.empty(m)
    for a, b in zip(hull[:-1], hull[1:]):
        t = np.arange(a, b + 1) - a
        out[a:b + 1] = ys[a] + (ys[b] - ys[a]) * t / (b - a)
    return out


def _waterfill(g: float, b: np.ndarray, c: np.ndarray,
               lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    # equal-marginal dispatch of total g into [lo, hi]; requires c > 0
    if np.any(c <= 0):
        raise ValueError("equal-marginal dispatch needs strictly convex costs")
    if not (lo.sum() <= g <= hi.sum()):
        raise ValueError("dispatch target outside box totals")
    mu_lo = float((b + 2.0 * c * lo).min())
    mu_hi = float((b + 2.0 * c * hi).max())
    for _ in range(200):
        mu = 0.5 * (mu_lo + mu_hi)
        p = np.clip((mu - b) / (2.0 * c), lo, hi)
        if p.sum() < g:
            mu_lo = mu
        else:
            mu_hi = mu
    p = np.clip((0.5 * (mu_lo + mu_hi) - b) / (2.0 * c), lo, hi)
    # absorb the bisection leftover in the slackest unit
    gap = g - p.sum()
    room = np.where(gap > 0, hi - p, p - lo)
    j = int(np.argmax(room))
    p[j] += gap
    return p


def slater_candidate(inst: DedsInstance, reserve: float = None,
                     box_margin_frac: float = 0.02):
    """Heuristic strictly feasible plan: ``(schedule, rho)``.

    Builds the flattest cumulative generation path that keeps a positive
    stored-energy reserve (least concave majorant of the lifted cumulative
    load), dispatches each slot by equal marginal cost with a box margin, and
    splits the storage path across units by capacity share. ``rho`` is the
    smallest margin over all inequality families. Raises ValueError when the
    construction fails to stay strictly interior (e.g. no storage slack, or
    demand out of reach); callers should treat that as "no certificate", not
    as infeasibility.
    """
    n, h = inst.n, inst.horizon
    l = total_load(inst)
    mask = inst.storage_mask
    cap_hi = inst.cap_hi()
    cap_room = float(cap_hi[mask].sum()) if mask.any() else 0.0
    if reserve is None:
        reserve = 0.2 * cap_room
    if not mask.any():
        reserve = 0.0

    lam = np.concatenate([[0.0], np.cumsum(l)])
    lifted = lam.copy()
    lifted[1:] += reserve
    M = _upper_hull(lifted)
    g = np.diff(M)                      # aggregate generation per slot
    U_agg = M[1:] - lam[1:]             # aggregate stored-energy path
    if mask.any() and (U_agg.min() <= 0 or U_agg.max() >= cap_room):
        raise ValueError("no strict storage interior at this reserve")

    # per-unit storage split by capacity share, then per-slot dispatch
    share = np.zeros(n)
    if mask.any():
        share[mask] = cap_hi[mask] / cap_hi[mask].sum()
    U = share[:, None] * U_agg[None, :]
    S = np.diff(np.concatenate([np.zeros((n, 1)), U], axis=1), axis=1)

    m_box = box_margin_frac * (inst.p_max - inst.p_min)
    lo = inst.p_min + m_box
    hi = inst.p_max - m_box
    P = np.empty((n, h))
    for k in range(h):
        P[:, k] = _waterfill(float(g[k]), inst.cost_b[:, k], inst.cost_c[:, k], lo, hi)
    I = P - S
    # absorb float rounding so the load equalities hold exactly
    for k in range(h):
        j = int(np.argmax(I[:, k]))
        I[j, k] += l[k] - I[:, k].sum()
    sched = Schedule(injections=I, storage_flows=S)

    margins = [
        float((P - inst.p_min[:, None]).min()),
        float((inst.p_max[:, None] - P).min()),
        float(I.min()),
    ]
    if mask.any():
        margins.append(float((U - inst.cap_lo()[:, None])[mask].min()))
        margins.append(float((inst.cap_hi()[:, None] - U)[mask].min()))
    if h > 1:
        d = P[:, 1:] - P[:, :-1]
        margins.append(float((d + inst.ramp_down[:, None]).min()))
        margins.append(float((inst.ramp_up[:, None] - d).min()))
    rho = min(margins)
    if rho <= 0:
        raise ValueError(f"candidate not strictly interior (margin {rho:.6g})")
    load_gap = float(np.abs(I.sum(axis=0) - l).max())
    if load_gap > 1e-9 * max(1.0, float(np.abs(l).max())):
        raise ValueError(f"candidate misses the load balance by {load_gap:.3g}")
    return sched, rho
