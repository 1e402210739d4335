"""Network layer: multi-rate main loop and the two swapping controllers.

The global clock advances in steps of the smallest per-link heralding
latency; each link agent steps whenever its own tick boundary is reached.
Within a tick, agents step first, then expired link-buffer entries are
swept, then the controller runs, so a pair delivered this tick is visible
to the controller this tick.  That ordering is what makes simultaneous
SWAP-ASAP insensitive to the external coherence time: it can consume pairs
at age zero.

This module is also the pure-Python reference engine.  The compiled twin in
``_engine_c`` reproduces it operation-for-operation (same RNG draws, same
floating-point expression order), and the two are required by tests to
produce bit-identical event streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .buffers import CHAIN_TIER, LINK_TIER, Buffer, ChainEntry, WernerPairEntry
from .mlp import MLPWeights
from .linklayer import (
    Action,
    AgentState,
    LinkConfig,
    SyntheticSource,
    action_mask,
    env_step,
    observation,
    sample_action,
    greedy_action,
    scripted_policy,
    synthetic_source_step,
)
from .physics import DEFAULT_CONSTANTS, decohere, swap_fidelity, swap_tree

PROTOCOLS = ("sequential", "simultaneous")


@dataclass(frozen=True)
class ChainTopology:
    """Link lengths and the external-memory parameters of one chain."""

    lengths: tuple
    Tc_ext: float
    F_min: float = 0.81
    capacity: int = 20
    consts: object = DEFAULT_CONSTANTS

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(float(L) for L in self.lengths))
        if not self.lengths:
            raise ValueError("topology needs at least one link")
        if any(L <= 0 for L in self.lengths):
            raise ValueError("link lengths must be positive")
        if self.Tc_ext <= 0:
            raise ValueError("Tc_ext must be positive")

    @property
    def n(self):
        return len(self.lengths)

    @property
    def taus(self):
        return tuple(L / self.consts.c_fiber for L in self.lengths)

    @property
    def tau_min(self):
        return min(self.taus)

    def make_link_buffers(self):
        return [
            Buffer(LINK_TIER, self.n, self.Tc_ext, self.capacity, self.F_min)
            for _ in range(self.n)
        ]

    def make_chain_buffers(self):
        return [
            Buffer(CHAIN_TIER, self.n, self.Tc_ext, self.capacity, self.F_min)
            for _ in range(self.n - 1)
        ]


@dataclass(frozen=True)
class DeliveryEvent:
    """One emitted end-to-end pair.

    age is emit time minus the delivery time of the oldest contributing link
    pair; dwell is the cumulative chain-buffer residence of the emitting
    chain (identically 0 under simultaneous SWAP-ASAP, which holds none).
    """

    F_e2e: float
    t_emit: float
    age: float
    dwell: float


class SyntheticLinkSource:
    """Link-layer stand-in emitting calibrated memoryless deliveries."""

    def __init__(self, params: SyntheticSource):
        self.params = params

    def step(self, t, rng):
        return synthetic_source_step(t, self.params, rng)


class AgentLinkSource:
    """A WN2M2 agent driven by a scripted or network policy.

    Runs any instantaneous actions (CONSUME, DISCARD) and then exactly one
    time-advancing action per tick.  A CONSUME ends the episode and the next
    one starts immediately, within the same tick.
    """

    def __init__(self, config: LinkConfig, policy="scripted", weights=None, stochastic=True):
        self.config = config
        self.kind = policy
        self.weights = weights
        self.stochastic = stochastic
        self.state = AgentState()

    def _choose(self, rng):
        if self.kind == "scripted":
            return scripted_policy(self.state, self.config)
        obs = observation(self.state, self.config)
        mask = action_mask(self.state, self.config)
        if self.stochastic:
            return sample_action(self.weights, obs, mask, rng)
        return greedy_action(self.weights, obs, mask)

    def step(self, t, rng):
        delivery = None
        for _ in range(8):  # bounded: at most CONSUME + DISCARD before advancing
            action = self._choose(rng)
            self.state, done, emitted = env_step(self.state, action, self.config, rng)
            if emitted is not None:
                delivery = (emitted[0], t)
            if done:
                self.state = AgentState()
            if action in (Action.WAIT, Action.PURIFY):
                return delivery
        raise RuntimeError("policy failed to advance time within one tick")


class SequentialController:
    """Swap-and-wait: partial chains grow hop by hop through chain buffers."""

    def __init__(self, topology: ChainTopology):
        self.topology = topology
        self.chain_buffers = topology.make_chain_buffers()

    def step(self, t, link_buffers):
        topo = self.topology
        n = topo.n
        if n == 1:
            return _single_link_emit(t, link_buffers[0], topo.Tc_ext)
        events = []
        chains = self.chain_buffers
        for C in chains:
            C.discard_expired(t)
        for ell in range(2, n + 1):
            C_prev = chains[ell - 2]
            B = link_buffers[ell - 1]
            while C_prev.entries and B.entries:
                chain = C_prev.pop_freshest(t)
                if t - chain.t_old > chain.t_cut:
                    continue  # chain expired
                pair = B.pop_freshest()
                if t - pair.t_del > pair.t_cut:
                    C_prev.repush(chain, t)
                    continue
                F_ch = decohere(chain.F_ch, t - chain.t_sw, topo.Tc_ext)
                F_pair = decohere(pair.F_del, t - pair.t_del, topo.Tc_ext)
                F_new = swap_fidelity(F_ch, F_pair)
                t_old = min(chain.t_old, pair.t_del)
                if ell == n:
                    events.append(DeliveryEvent(F_new, t, t - t_old, chain.dwell))
                else:
                    chains[ell - 1].push(
                        ChainEntry(F_new, t, t_old, dwell=chain.dwell), t
                    )
        # seed new length-2 chains from non-expired link-1 pairs
        B1 = link_buffers[0]
        while B1.entries:
            pair = B1.pop_freshest()
            if t - pair.t_del <= pair.t_cut:
                self.chain_buffers[0].push(
                    ChainEntry(pair.F_del, pair.t_del, pair.t_del), t
                )
        return events


class SimultaneousController:
    """Wait-and-swap: one balanced swap tree per tick when all links are ready.

    Holds no state across ticks; everything is consumed in the tick it is
    assembled.
    """

    def __init__(self, topology: ChainTopology):
        self.topology = topology

    def step(self, t, link_buffers):
        for B in link_buffers:
            if not B.entries:
                return []
        fids = []
        t_dels = []
        for B in link_buffers:
            pair = None
            while B.entries:
                cand = B.pop_freshest()
                if t - cand.t_del > cand.t_cut:
                    continue  # expired entry discarded
                pair = cand
                break
            if pair is None:
                return []  # this buffer drained; abort, partial pops stand
            fids.append(decohere(pair.F_del, t - pair.t_del, self.topology.Tc_ext))
            t_dels.append(pair.t_del)
        return [DeliveryEvent(swap_tree(fids), t, t - min(t_dels), 0.0)]


def _single_link_emit(t, B, Tc_ext):
    """Degenerate one-link chain: the freshest valid pair is the E2E pair."""
    while B.entries:
        pair = B.pop_freshest()
        if t - pair.t_del > pair.t_cut:
            continue
        return [DeliveryEvent(decohere(pair.F_del, t - pair.t_del, Tc_ext), t, t - pair.t_del, 0.0)]
    return []


def make_controller(protocol, topology):
    if protocol == "sequential":
        return SequentialController(topology)
    if protocol == "simultaneous":
        return SimultaneousController(topology)
    raise ValueError(f"unknown protocol {protocol!r}")


def main_loop(topology, sources, controller, T_sim, rng, link_buffers=None):
    """Run one trial; returns the list of emitted DeliveryEvents in time order.

    Tick times are i * tau_min for i = 1, 2, ... while strictly below T_sim;
    link agents step whenever a tick reaches their next own-tau boundary.
    """
    if T_sim <= 0:
        raise ValueError("T_sim must be positive")
    if link_buffers is None:
        link_buffers = topology.make_link_buffers()
    taus = topology.taus
    tau_min = topology.tau_min
    n = topology.n
    steps_taken = [0] * n
    events = []
    i = 1
    while True:
        t = i * tau_min
        if t >= T_sim:
            break
        for ell in range(n):
            if t >= (steps_taken[ell] + 1) * taus[ell]:
                delivery = sources[ell].step(t, rng)
                steps_taken[ell] += 1
                if delivery is not None:
                    link_buffers[ell].push(WernerPairEntry(delivery[0], delivery[1]), t)
        for B in link_buffers:
            B.discard_expired(t)
        events.extend(controller.step(t, link_buffers))
        i += 1
    return events


def dwell_accounting(events):
    """Mean chain-buffer dwell per emitted pair; None when nothing emitted."""
    if not events:
        return None
    return sum(e.dwell for e in events) / len(events)


def simulate_trial(
    lengths,
    tc_ext,
    f_min,
    capacity,
    protocol,
    mode,
    T_sim,
    bitgen,
    taus,
    pgens,
    floor_link,
    floor_chain,
    f_mean=0.9575,
    interval_ticks=7.36,
    jitter=0.0,
    tc_int=1.0,
    f_gen=0.92,
    f0=0.94,
    step_cap=200,
    policy_sizes=None,
    policy_params=None,
    policy_stochastic=True,
    collect_events=False,
):
    """Pure-Python trial engine (reference implementation).

    Returns (n_deliveries, sum_F, t_last, sum_dwell, events) where events is
    a tuple of float64 arrays (F, t_emit, age, dwell) or None.  The compiled
    backend exposes the same entry point.
    """
    topo = ChainTopology(tuple(lengths), tc_ext, f_min, capacity)
    rng = np.random.Generator(bitgen)
    sources = []
    for ell in range(topo.n):
        if mode == "synthetic":
            sources.append(
                SyntheticLinkSource(
                    SyntheticSource(interval_ticks * taus[ell], f_mean, taus[ell], jitter)
                )
            )
        elif mode == "scripted":
            cfg = LinkConfig(lengths[ell], tc_int, f_gen, f0, step_cap)
            sources.append(AgentLinkSource(cfg, policy="scripted"))
        elif mode == "policy":
            cfg = LinkConfig(lengths[ell], tc_int, f_gen, f0, step_cap)
            weights = MLPWeights(tuple(policy_sizes), np.asarray(policy_params))
            sources.append(
                AgentLinkSource(cfg, policy="policy", weights=weights, stochastic=policy_stochastic)
            )
        else:
            raise ValueError(f"unknown link mode {mode!r}")
    controller = make_controller(protocol, topo)
    events = main_loop(topo, sources, controller, T_sim, rng)

    n_del = len(events)
    sum_F = 0.0
    sum_dwell = 0.0
    t_last = 0.0
    for e in events:
        sum_F += e.F_e2e
        sum_dwell += e.dwell
        t_last = e.t_emit
    arrays = None
    if collect_events:
        arrays = (
            np.array([e.F_e2e for e in events], dtype=np.float64),
            np.array([e.t_emit for e in events], dtype=np.float64),
            np.array([e.age for e in events], dtype=np.float64),
            np.array([e.dwell for e in events], dtype=np.float64),
        )
    return n_del, sum_F, t_last, sum_dwell, arrays
