"""Built-in scenario configurations.

Each builtin is a plain JSON-compatible dict in exactly the schema
:func:`dedsim.cli.parse_config` accepts, so they double as format
documentation: dump one with ``dedsim --scenario NAME --dump-config out.json``.

``new-england-10`` is the ten-unit benchmark system: quadratic costs and
asymmetric ramp limits per unit, identical 95 MWh storage headroom everywhere,
a six-slot demand profile with one shared external load plus per-bus loads,
and a directed ring with four bidirectional chords for communication.
"""

import copy

NEW_ENGLAND_10 = {
    "name": "new-england-10",
    "units": {
        "cost_a": [240.0, 200.0, 220.0, 200.0, 220.0, 190.0, 200.0, 170.0, 190.0, 220.0],
        "cost_b": [7.0, 10.0, 8.5, 11.0, 10.5, 12.0, 10.0, 9.0, 11.0, 8.8],
        "cost_c": [0.0070, 0.0095, 0.0090, 0.0090, 0.0080, 0.0075, 0.0100, 0.0090, 0.0072, 0.0080],
        "p_min": [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        "p_max": [1040.0, 646.0, 725.0, 652.0, 508.0, 687.0, 580.0, 564.0, 865.0, 1100.0],
        "ramp_down": [120.0, 90.0, 100.0, 90.0, 90.0, 90.0, 120.0, 90.0, 100.0, 90.0],
        "ramp_up": [80.0, 50.0, 65.0, 50.0, 50.0, 50.0, 80.0, 50.0, 65.0, 50.0],
        "cap_min": [5.0] * 10,
        "cap_max": [100.0] * 10,
        "s_initial": [5.0] * 10,
        "storage_mask": [True] * 10,
    },
    "demand": {
        "external_load": [1950.0, 1980.0, 2700.0, 2370.0, 1900.0, 1850.0],
        "bus_loads": [[10.0 * i] * 6 for i in range(1, 11)],
        "anchor_unit": 1,
    },
    "graph": {
        "edges": (
            [[i, i % 10 + 1, 1.0] for i in range(1, 11)]
            + [[1, 5, 1.0], [5, 1, 1.0], [2, 6, 1.0], [6, 2, 1.0],
               [3, 7, 1.0], [7, 3, 1.0], [4, 8, 1.0], [8, 4, 1.0]]
        ),
    },
    "gains": {"alpha": 4.0, "beta": 10.0, "nu1": 0.65, "nu2": 0.65, "eps": 0.007},
    "initial": {"kind": "box_pattern", "pattern": [1, 1, 0, 0, 1, 0]},
    "run": {"dt": 0.001, "t_final": 400.0, "sample_every": 1000, "method": "euler"},
}

# Both units have their cheapest operating point strictly inside every
# constraint (marginal cost zero at p = 4), so the flow settles at a genuine
# equilibrium instead of chattering on a constraint face: the stop rule fires
# and the optimal cost is exactly 8.0.
TWO_UNIT_TOY = {
    "name": "two-unit-toy",
    "units": {
        "cost_a": [10.0, 14.0],
        "cost_b": [-4.0, -6.0],
        "cost_c": [0.5, 0.75],
        "p_min": [0.0, 0.0],
        "p_max": [10.0, 10.0],
        "ramp_down": [5.0, 5.0],
        "ramp_up": [5.0, 5.0],
        "cap_min": [-8.0, -8.0],
        "cap_max": [8.0, 8.0],
        "s_initial": [0.0, 0.0],
        "storage_mask": [True, True],
    },
    "demand": {
        "external_load": [4.0, 6.0],
        "bus_loads": [[0.0, 0.0], [0.0, 0.0]],
        "anchor_unit": 1,
    },
    "graph": {"edges": [[1, 2, 1.0], [2, 1, 1.0]]},
    "gains": {"alpha": 2.0, "beta": 1.0, "nu1": 1.0, "nu2": 1.0, "eps": 0.05},
    "initial": {"kind": "uniform_split"},
    "run": {"dt": 0.001, "t_final": 40.0, "sample_every": 100, "method": "euler"},
}

_BUILTINS = {
    "new-england-10": NEW_ENGLAND_10,
    "two-unit-toy": TWO_UNIT_TOY,
}


def builtin_names():
    return sorted(_BUILTINS)


def builtin_config(name: str) -> dict:
    """A deep copy of a builtin scenario config dict."""
    if name not in _BUILTINS:
        raise KeyError(
            f"unknown scenario {name!r}; builtins: {', '.join(builtin_names())}")
    return copy.deepcopy(_BUILTINS[name])
