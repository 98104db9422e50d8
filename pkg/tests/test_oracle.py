"""Centralized-solver tests: the refined-grid tiny oracle, the projected
subgradient solver, and three-way agreement with the flow on instances whose
optima are derived by hand in conftest.
"""

import warnings

import numpy as np
import pytest

from conftest import (
    T1_EPS,
    T1_EPS_BOUND,
    T1_OPT,
    T2_OPT,
    T3_OPT,
    T5_OPT,
    T6_EPS,
    T6_P_OPT,
    T6_PEN_OPT,
    TINY_GAINS,
    make_t1,
    make_t2,
    make_t3,
    make_t5,
    make_t6,
    pair_graph,
    single_graph,
)
from dedsim.dynamics import EpsilonUnverifiedWarning, integrate, uniform_state
from dedsim.graph import laplacian
from dedsim.oracle import (
    brute_force_tiny,
    solve_centralized,
    verify_against_dynamics,
)
from dedsim.penalty import epsilon_upper_bound, penalized_cost, slater_candidate
from dedsim.problem import DedsInstance, check_feasibility, evaluate_cost


def _dyn_cost(inst, g, t_final=60.0, dt=1e-3):
    lap = laplacian(g)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EpsilonUnverifiedWarning)
        rec = integrate(inst, lap, TINY_GAINS, uniform_state(inst),
                        dt=dt, t_final=t_final, sample_every=int(round(0.1 / dt)))
    return float(rec.cost[-1]), rec


TINY_CASES = [
    ("storage-floor", make_t1, T1_OPT, single_graph),
    ("interior", make_t2, T2_OPT, single_graph),
    ("no-storage-pair", make_t3, T3_OPT, pair_graph),
    ("two-slot-prefix", make_t5, T5_OPT, single_graph),
]


@pytest.mark.parametrize("label,make,opt,mkgraph",
                         [c for c in TINY_CASES], ids=[c[0] for c in TINY_CASES])
def test_three_way_agreement(label, make, opt, mkgraph):
    """Grid oracle, projected subgradient, and the flow all land on the same
    hand-derived optimum."""
    inst = make()
    eps = TINY_GAINS.eps
    tol = 1e-3 * max(1.0, abs(opt))

    bf = brute_force_tiny(inst, eps)
    assert abs(bf.optimal_cost - opt) <= 1e-4 * max(1.0, abs(opt))

    oc = solve_centralized(inst, eps)
    assert abs(oc.optimal_cost - opt) <= tol

    dyn, rec = _dyn_cost(inst, mkgraph())
    assert abs(dyn - opt) <= 3 * tol  # chatter amplitude on active kinks
    assert not rec.diverged


def test_symmetric_pair_splits_equally():
    # identical quadratic units, no storage: the unique optimum is the even
    # split p = (4, 4) with cost 2 * (1 + 16) = 34
    sym = DedsInstance(
        n=2, horizon=1, cost_a=[1.0, 1.0], cost_b=[0.0, 0.0],
        cost_c=[1.0, 1.0], p_min=[0.0, 0.0], p_max=[10.0, 10.0],
        ramp_down=[5.0, 5.0], ramp_up=[5.0, 5.0], cap_min=[0.0, 0.0],
        cap_max=[0.0, 0.0], s_initial=[0.0, 0.0], external_load=[8.0],
        bus_loads=[[0.0], [0.0]], storage_mask=[False, False])
    for res in (solve_centralized(sym, 0.1), brute_force_tiny(sym, 0.1)):
        assert np.allclose(res.schedule.injections.ravel(), [4.0, 4.0], atol=1e-3)
        assert res.optimal_cost == pytest.approx(34.0, abs=1e-3)
        assert not res.schedule.storage_flows.any()


def test_exact_penalty_on_certified_instance(t1):
    """With eps below the certified threshold the penalized minimizer is
    feasible and its penalized value equals the plain cost."""
    assert T1_EPS < T1_EPS_BOUND
    # the midpoint plan (S = 1, p = 5) has margin 2 and cost 19.5, so any
    # eps below 2 / (19.5 - 9.5) = 0.2 prices violations out exactly
    assert epsilon_upper_bound(2.0, 19.5, T1_OPT) == pytest.approx(T1_EPS_BOUND)
    sched, rho = slater_candidate(t1)
    bound = epsilon_upper_bound(rho, evaluate_cost(t1, sched), T1_OPT)
    assert bound > T1_EPS
    for res in (brute_force_tiny(t1, T1_EPS), solve_centralized(t1, T1_EPS)):
        rep = check_feasibility(t1, res.schedule, tol=1e-4)
        assert rep.feasible, rep
        plain = evaluate_cost(t1, res.schedule)
        assert res.penalized == pytest.approx(plain, abs=1e-3)
        assert res.optimal_cost == pytest.approx(T1_OPT, abs=1e-2)


def test_infeasible_instance_penalized_minimizer(t6):
    # demand 10 against a 3-unit box: the penalized minimizer parks at the
    # box edge with the storage floor overrun priced into the objective
    bf = brute_force_tiny(t6, T6_EPS)
    p = bf.schedule.injections + bf.schedule.storage_flows
    assert p.ravel()[0] == pytest.approx(T6_P_OPT, abs=1e-3)
    assert bf.penalized == pytest.approx(T6_PEN_OPT, abs=1e-2)
    assert bf.penalized > bf.optimal_cost  # the violation is priced, not hidden
    assert not check_feasibility(t6, bf.schedule, tol=1e-6).feasible
    with pytest.raises(ValueError):
        slater_candidate(t6)


def test_centralized_iterates_stay_load_balanced(t2, t5):
    for inst in (t2, t5):
        res = solve_centralized(inst, 0.1, max_iters=3000)
        assert res.final_residuals.load_res <= 1e-9


def test_penalized_value_dominates_plain_cost(t1, t6):
    for inst, eps in ((t1, T1_EPS), (t6, T6_EPS)):
        res = brute_force_tiny(inst, eps)
        sched = res.schedule
        assert res.penalized >= evaluate_cost(inst, sched) - 1e-12
        assert res.penalized == pytest.approx(
            penalized_cost(inst, eps, sched), rel=1e-12)


def test_budget_exhaustion_is_flagged(t2):
    res = solve_centralized(t2, 0.1, max_iters=50)
    assert not res.converged
    assert res.iterations == 50


def test_brute_force_size_guard():
    rng = np.random.default_rng(3)
    from conftest import random_instance
    inst = random_instance(rng, n=3, h=2)
    with pytest.raises(ValueError, match="tiny"):
        brute_force_tiny(inst, 0.1)


def test_eps_must_be_positive(t2):
    with pytest.raises(ValueError, match="eps"):
        solve_centralized(t2, 0.0)
    with pytest.raises(ValueError, match="eps"):
        brute_force_tiny(t2, -1.0)


def test_verify_against_dynamics_toy(toy):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EpsilonUnverifiedWarning)
        rep = verify_against_dynamics(toy.inst, toy.lap, toy.gains,
                                      dt=1e-3, t_final=40.0)
    # the flow stops on the exact optimum; the subgradient oracle gets within
    # a percent and honestly reports that its own tolerance was not reached
    assert rep.record.converged
    assert float(rep.record.cost[-1]) == pytest.approx(8.0, abs=1e-6)
    assert rep.cost_gap_rel < 0.02
    assert rep.injection_gap < 0.5
    assert rep.storage_gap < 0.5
