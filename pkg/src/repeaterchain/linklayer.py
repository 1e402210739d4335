"""Per-link environment: two memory slots, four masked actions, deliveries.

One agent owns one elementary link.  Episodes run on the link's heralding
tick tau = L / c_fiber: WAIT and PURIFY advance time by exactly one tau,
DISCARD and CONSUME are instantaneous.  A CONSUME delivers the best slot
into the external link buffer and immediately starts a new episode, so the
mask's fidelity gate is the only thing standing between the agent and a
sub-floor delivery.

Distillation heralding is collapsed into a single transition: an episode is
never observed with an unresolved outcome, so the observation's p component
stays at 1 (the delayed-information variant is out of scope here).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum

from . import mlp
from .physics import DEFAULT_CONSTANTS, decohere, distill, p_gen

DEFAULT_F_GEN = 0.92
DEFAULT_F0 = 0.94
DEFAULT_STEP_CAP = 200
DEFAULT_HORIZON_TICKS = 50.0


class Action(IntEnum):
    WAIT = 0
    DISCARD = 1
    PURIFY = 2
    CONSUME = 3


class IllegalActionError(ValueError):
    """Raised when a step is attempted with an action the mask forbids."""


@dataclass(frozen=True)
class LinkConfig:
    """Static parameters of one elementary link's environment."""

    L: float
    Tc_int: float
    F_gen: float = DEFAULT_F_GEN
    F0: float = DEFAULT_F0
    step_cap: int = DEFAULT_STEP_CAP
    horizon_ticks: float = DEFAULT_HORIZON_TICKS
    consts: object = DEFAULT_CONSTANTS

    def __post_init__(self):
        if not 0.25 < self.F_gen < 1.0:
            raise ValueError("F_gen must lie strictly between 0.25 and 1")
        if self.Tc_int <= 0.0:
            raise ValueError("Tc_int must be positive")

    @property
    def tau(self):
        return self.L / self.consts.c_fiber

    @property
    def p_gen(self):
        return p_gen(self.L, self.consts)


@dataclass(frozen=True)
class AgentState:
    """Episode state: slot fidelities (None = empty), pending-p, elapsed time."""

    F1: float | None = None
    F2: float | None = None
    p: float = 1.0
    t: float = 0.0
    ticks: int = 0

    def occupied(self):
        return (self.F1 is not None, self.F2 is not None)

    def best_fidelity(self):
        vals = [v for v in (self.F1, self.F2) if v is not None]
        return max(vals) if vals else None


def observation(state, config):
    """Network input (F1, F2, p, t / horizon); empty slots encode as 0."""
    return (
        state.F1 if state.F1 is not None else 0.0,
        state.F2 if state.F2 is not None else 0.0,
        state.p,
        state.t / (config.horizon_ticks * config.tau),
    )


def action_mask(state, config):
    """Legality of (WAIT, DISCARD, PURIFY, CONSUME) in the given state."""
    both = state.F1 is not None and state.F2 is not None
    best = state.best_fidelity()
    return (
        True,
        both,
        both and state.p == 1.0,
        best is not None and best >= config.F0,
    )


def env_step(state, action, config, rng):
    """Apply one action; returns (next_state, episode_done, delivery | None).

    delivery is (F_del, episode time of delivery).  Raises
    IllegalActionError when the mask forbids the action.  Hitting the step
    cap on a time-advancing action ends the episode with no delivery.
    """
    mask = action_mask(state, config)
    if not mask[action]:
        raise IllegalActionError(f"action {Action(action).name} illegal in state {state}")

    tau = config.tau
    if action == Action.WAIT:
        F1, F2 = _decohere_slots(state, tau, config.Tc_int)
        if F1 is None or F2 is None:
            if rng.random() < config.p_gen:
                if F1 is None:
                    F1 = config.F_gen
                else:
                    F2 = config.F_gen
        nxt = replace(state, F1=F1, F2=F2, t=state.t + tau, ticks=state.ticks + 1)
        return _cap_check(nxt, config)

    if action == Action.DISCARD:
        if state.F2 <= state.F1:
            nxt = replace(state, F2=None)
        else:
            nxt = replace(state, F1=None)
        return nxt, False, None

    if action == Action.PURIFY:
        F1, F2 = _decohere_slots(state, tau, config.Tc_int)
        succ, F_out = distill(F1, F2)
        if rng.random() < succ:
            F1, F2 = F_out, None
        else:
            F1, F2 = None, None
        nxt = replace(state, F1=F1, F2=F2, t=state.t + tau, ticks=state.ticks + 1)
        return _cap_check(nxt, config)

    # CONSUME: emit the best slot, clear both, end the episode
    F_del = state.best_fidelity()
    nxt = replace(state, F1=None, F2=None)
    return nxt, True, (F_del, state.t)


def _decohere_slots(state, dt, Tc):
    F1 = decohere(state.F1, dt, Tc) if state.F1 is not None else None
    F2 = decohere(state.F2, dt, Tc) if state.F2 is not None else None
    return F1, F2


def _cap_check(state, config):
    if state.ticks >= config.step_cap:
        return replace(state, F1=None, F2=None), True, None
    return state, False, None


def scripted_policy(state, config):
    """Deterministic baseline: CONSUME when allowed, else PURIFY, else WAIT."""
    mask = action_mask(state, config)
    if mask[Action.CONSUME]:
        return Action.CONSUME
    if mask[Action.PURIFY]:
        return Action.PURIFY
    return Action.WAIT


@dataclass(frozen=True)
class SyntheticSource:
    """Memoryless stand-in for a converged link policy.

    Emits a delivery per tick with probability tau / mean_interval at
    fidelity F_mean (optionally jittered uniformly by +-jitter).  Only the
    two reported moments of the real link layer are known, so a memoryless
    process matching them is the declared substitute.
    """

    mean_interval: float
    F_mean: float
    tau: float
    jitter: float = 0.0

    def __post_init__(self):
        if self.mean_interval <= 0.0:
            raise ValueError("mean_interval must be positive")

    @property
    def p_emit(self):
        return min(1.0, self.tau / self.mean_interval)


def synthetic_source_step(now, params, rng):
    """One tick of the synthetic source; returns (F, now) or None."""
    if rng.random() >= params.p_emit:
        return None
    F = params.F_mean
    if params.jitter > 0.0:
        F = F + params.jitter * (2.0 * rng.random() - 1.0)
        F = min(1.0, max(0.2500000001, F))
    return F, now


def policy_forward(weights, observation, mask):
    """Masked action probabilities from an MLP policy (scalar path)."""
    return mlp.forward_scalar(weights, observation, mask)


def sample_action(weights, obs, mask, rng):
    """Draw an action from the stochastic masked policy (one uniform)."""
    probs = mlp.forward_scalar(weights, obs, mask)
    return mlp.sample_from_probs(probs, rng.random())


def greedy_action(weights, obs, mask):
    probs = mlp.forward_scalar(weights, obs, mask)
    best = 0
    for i in range(1, len(probs)):
        if probs[i] > probs[best]:
            best = i
    return best
