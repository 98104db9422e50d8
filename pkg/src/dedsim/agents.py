"""Agent-level simulator: one process per unit, synchronous message rounds.

Each agent owns exactly its unit's row of every state block plus its own
problem data; the only information crossing unit boundaries is the
(z row, zeta1 row) pair published each round. One synchronous round performs
numerically the same update as one monolithic Euler step: the per-row
arithmetic in :mod:`dedsim.kernels.fallback` uses identical expression trees,
so agent-mode and monolithic-mode trajectories match bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dynamics import (
    STOP_CONSECUTIVE,
    STOP_THRESHOLD,
    GainParameters,
    NetworkState,
    TrajectoryRecord,
    _check_start,
    _diagnostics,
    _n_steps,
)
from .graph import Digraph, csr_arrays, laplacian
from .problem import DedsInstance, KktResidual, Schedule, kkt_residual


@dataclass(eq=False)
class NeighborMessage:
    """What one agent broadcasts per round: who it is, its z row, and its
    injection-subgradient row."""

    sender: int
    z_row: np.ndarray
    zeta1_row: np.ndarray


@dataclass(eq=False)
class AgentState:
    """One unit's private state and problem slice. ``unit`` is 1-based;
    ``out_neighbors`` holds 0-based positions of the units it listens to,
    ascending, with matching arc weights."""

    unit: int
    I: np.ndarray
    S: np.ndarray
    z: np.ndarray
    v: np.ndarray
    prev_dS: np.ndarray
    cost_b: np.ndarray
    cost_c: np.ndarray
    p_min: float
    p_max: float
    ramp_down: float
    ramp_up: float
    cap_lo: float
    cap_hi: float
    has_storage: bool
    load: np.ndarray
    out_neighbors: np.ndarray
    out_weights: np.ndarray


class AgentNetwork:
    """The collection of agents plus the shared clock's bookkeeping.

    Iterable and indexable like a list of :class:`AgentState`. Message
    delivery is structurally local: an agent's mailbox only ever contains
    messages from its out-neighbors, and ``last_consumed`` records which
    senders each agent actually read in the most recent round.
    """

    def __init__(self, inst: DedsInstance, g: Digraph, gains: GainParameters,
                 agents: list):
        self.inst = inst
        self.graph = g
        self.gains = gains
        self.agents = agents
        self.n = inst.n
        self.h = inst.horizon
        self.last_consumed: dict = {}
        self.message_count = 0
        self.message_bytes = 0

    def __iter__(self):
        return iter(self.agents)

    def __len__(self):
        return len(self.agents)

    def __getitem__(self, i):
        return self.agents[i]

    def assemble_state(self) -> NetworkState:
        return NetworkState(I=np.stack([a.I for a in self.agents]),
                            S=np.stack([a.S for a in self.agents]),
                            z=np.stack([a.z for a in self.agents]),
                            v=np.stack([a.v for a in self.agents]))


def init_agents(inst: DedsInstance, g: Digraph, gains: GainParameters,
                state0: NetworkState) -> AgentNetwork:
    """Split instance and state into per-unit agents.

    Each agent receives copies of its own rows only; the anchor unit's load
    row additionally carries the external load, exactly as the monolithic
    load placement does.
    """
    if g.n != inst.n:
        raise ValueError(f"graph has {g.n} vertices but instance has {inst.n} units")
    if state0.I.shape != (inst.n, inst.horizon):
        raise ValueError("state0 shape does not match the instance")
    row_ptr, col_idx, weights = csr_arrays(g)
    cap_lo = inst.cap_lo()
    cap_hi = inst.cap_hi()
    agents = []
    for i in range(inst.n):
        load = inst.bus_loads[i].copy()
        if i == inst.anchor_unit - 1:
            load = load + inst.external_load
        lo, hi = row_ptr[i], row_ptr[i + 1]
        agents.append(AgentState(
            unit=i + 1,
            I=state0.I[i].copy(), S=state0.S[i].copy(),
            z=state0.z[i].copy(), v=state0.v[i].copy(),
            prev_dS=np.zeros(inst.horizon),
            cost_b=inst.cost_b[i].copy(), cost_c=inst.cost_c[i].copy(),
            p_min=float(inst.p_min[i]), p_max=float(inst.p_max[i]),
            ramp_down=float(inst.ramp_down[i]), ramp_up=float(inst.ramp_up[i]),
            cap_lo=float(cap_lo[i]), cap_hi=float(cap_hi[i]),
            has_storage=bool(inst.storage_mask[i]),
            load=load,
            out_neighbors=col_idx[lo:hi].copy(),
            out_weights=weights[lo:hi].copy()))
    return AgentNetwork(inst, g, gains, agents)


def round(net: AgentNetwork, dt: float, guard: bool = False) -> int:
    """One synchronous round: compute-and-publish, then consume-and-update.

    Phase 1 evaluates every agent's subgradient rows against the pre-round
    state and broadcasts (z row, zeta1 row). Phase 2 assembles each agent's
    Laplacian terms from its mailbox and takes one Euler step of size dt.
    With ``guard`` the anti-chattering damping is applied using the agent's
    stored previous storage derivative. Returns the damped entry count.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    p = net.gains
    inv_eps = 1.0 / p.eps
    ab = p.alpha * p.beta

    # phase 1: every agent computes from the pre-round state and publishes
    published = {}
    own_rows = {}
    for a in net.agents:
        z1_row, z2_row = kernels.row_subgradient(
            a.I, a.S, a.cost_b, a.cost_c, a.p_min, a.p_max,
            a.ramp_down, a.ramp_up, a.cap_lo, a.cap_hi, a.has_storage, inv_eps)
        published[a.unit - 1] = NeighborMessage(
            sender=a.unit, z_row=a.z.copy(), zeta1_row=z1_row)
        own_rows[a.unit - 1] = (z1_row, z2_row)

    # delivery: agent i's mailbox holds exactly its out-neighbors' messages
    mailboxes = {a.unit - 1: {int(j): published[int(j)] for j in a.out_neighbors}
                 for a in net.agents}
    deliveries = sum(len(box) for box in mailboxes.values())
    net.message_count += deliveries
    net.message_bytes += deliveries * (2 * net.h * 8 + 8)

    # phase 2: consume mailboxes, update private rows
    damped = 0
    consumed = {}
    for a in net.agents:
        i = a.unit - 1
        z1_row, z2_row = own_rows[i]
        lap_z1 = np.zeros(net.h)
        lap_z = np.zeros(net.h)
        reads = []
        for j, w in zip(a.out_neighbors, a.out_weights):
            m = mailboxes[i][int(j)]
            reads.append(m.sender)
            lap_z1 = lap_z1 + w * (z1_row - m.zeta1_row)
            lap_z = lap_z + w * (a.z - m.z_row)
        consumed[a.unit] = tuple(reads)
        dI = -lap_z1 + p.nu1 * a.z
        dS = -z2_row
        dz = -p.alpha * a.z - p.beta * lap_z - a.v + p.nu2 * (a.load - a.I)
        dv = ab * lap_z
        if guard:
            flip = a.prev_dS * dS < 0.0
            nflip = int(np.count_nonzero(flip))
            if nflip:
                damped += nflip
                dS_eff = np.where(flip, 0.5 * dS, dS)
            else:
                dS_eff = dS
        else:
            dS_eff = dS
        a.I = a.I + dt * dI
        a.S = a.S + dt * dS_eff
        a.z = a.z + dt * dz
        a.v = a.v + dt * dv
        a.prev_dS = dS
    net.last_consumed = consumed
    return damped


def run(net: AgentNetwork, dt: float, t_final: float,
        sample_every: int = 1, override_gain_check: bool = False,
        eps_bound: float | None = None) -> TrajectoryRecord:
    """Run synchronous rounds until ``t_final`` (or the stop rule fires).

    Produces the same TrajectoryRecord as the monolithic integrator, with the
    same stop rule and chatter guard; message traffic totals are attached.
    ``t_final = 0`` records the initial sample only.
    """
    inst, p = net.inst, net.gains
    lap = laplacian(net.graph)
    state0 = net.assemble_state()
    _check_start(inst, lap, p, state0, dt, override_gain_check, eps_bound)
    if sample_every < 1:
        raise ValueError("sample_every must be at least 1")
    n_steps = _n_steps(t_final, dt)
    csr = csr_arrays(net.graph)
    load_vec = np.stack([a.load for a in net.agents])

    samples = []

    def take_sample(t, damped):
        st = net.assemble_state()
        d = _diagnostics(inst, p, csr, load_vec, st.I, st.S, st.z, st.v)
        d.update(t=t, damped=damped, I=st.I, S=st.S, z=st.z, v=st.v)
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
        damped = 0
        for _ in range(chunk):
            damped += round(net, dt, guard=True)
        done += chunk
        t = done * dt
        st = net.assemble_state()
        if not all(np.all(np.isfinite(x)) for x in (st.I, st.S, st.z, st.v)):
            diverged = True
            samples.append(dict(
                xi=np.full(net.h, np.nan), cost=math.nan, feps=math.nan,
                lyap=math.nan, cons=np.full(net.h, np.nan), load_res=math.nan,
                storage_res=math.nan, consensus_res=math.nan, z_inf=math.nan,
                field_res=math.nan, t=t, damped=damped,
                I=st.I, S=st.S, z=st.z, v=st.v))
            break
        d = take_sample(t, damped)
        worst = max(d[k] for k in ("load_res", "storage_res", "consensus_res",
                                   "z_inf", "field_res"))
        quiet = quiet + 1 if worst < STOP_THRESHOLD else 0
        if quiet >= STOP_CONSECUTIVE:
            converged = True
            stop_time = t

    final = net.assemble_state()
    if diverged:
        final_res = KktResidual(math.nan, math.nan, math.nan)
    else:
        final_res = kkt_residual(inst, p.eps, Schedule(final.I, final.S))
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
        dt=dt, method="euler", sample_every=sample_every,
        converged=converged, stop_time=stop_time, diverged=diverged,
        final_residuals=final_res,
        message_count=net.message_count, message_bytes=net.message_bytes,
        mode="agents")
