"""Time the compiled integration kernel against the pure-numpy fallback.

Drives the hot loop (euler_chunk) on the ten-unit benchmark scenario with
both backends, reports steps per second and the speedup, and verifies the
final states agree bitwise. Run as:

    python3 benchmarks/kernel_benchmark.py [--steps 50000] [--dt 1e-3]
"""

import argparse
import time

import numpy as np

from dedsim.cli import config_from_dict, _initial_state
from dedsim.dynamics import _csr_from_laplacian, _kernel_args
from dedsim.graph import laplacian
from dedsim.kernels import available_backends, get_backend
from dedsim.problem import load_placement
from dedsim.scenarios import builtin_config


def run_backend(name, cfg, dt, n_steps):
    inst, gains = cfg.instance, cfg.gains
    lap = laplacian(cfg.graph)
    st = _initial_state(cfg)
    I, S, z, v = (np.ascontiguousarray(a.copy()) for a in (st.I, st.S, st.z, st.v))
    prev_dS = np.zeros_like(S)
    ka = _kernel_args(inst, gains)
    row_ptr, col_idx, weights = _csr_from_laplacian(lap.L)
    chunk = get_backend(name)
    t0 = time.perf_counter()
    damped = chunk(I, S, z, v, prev_dS,
                   ka["b"], ka["c"], ka["p_min"], ka["p_max"],
                   ka["ramp_dn"], ka["ramp_up"], ka["cap_lo"], ka["cap_hi"],
                   ka["smask"], row_ptr, col_idx, weights,
                   load_placement(inst),
                   gains.alpha, gains.beta, gains.nu1, gains.nu2,
                   ka["inv_eps"], dt, n_steps, True)
    elapsed = time.perf_counter() - t0
    return elapsed, damped, (I, S, z, v)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=50000,
                    help="forward-Euler steps per backend (default 50000)")
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--scenario", default="new-england-10")
    args = ap.parse_args(argv)

    cfg = config_from_dict(builtin_config(args.scenario))
    names = available_backends()
    print(f"scenario {args.scenario}: n={cfg.instance.n}, "
          f"h={cfg.instance.horizon}, {args.steps} steps at dt={args.dt:g}")
    results = {}
    for name in names:
        run_backend(name, cfg, args.dt, min(args.steps, 200))  # warm up
        elapsed, damped, state = run_backend(name, cfg, args.dt, args.steps)
        results[name] = (elapsed, state)
        print(f"  {name:9s} {elapsed:8.3f} s   "
              f"{args.steps / elapsed:12,.0f} steps/s   damped={damped}")

    if len(results) == 2:
        slow, fast = results["fallback"][0], results["native"][0]
        print(f"  speedup: native is {slow / fast:.1f}x faster")
        sa, sb = results["fallback"][1], results["native"][1]
        same = all(np.array_equal(a, b) for a, b in zip(sa, sb))
        print(f"  final states bitwise equal: {same}")
        if not same:
            raise SystemExit("backend mismatch")
    else:
        print("  (compiled backend not built; only the fallback was timed)")


if __name__ == "__main__":
    main()
