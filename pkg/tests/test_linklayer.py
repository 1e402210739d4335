"""Link-layer environment tests: mask, step semantics, policies, sources."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repeaterchain import linklayer as LL
from repeaterchain import mlp
from repeaterchain.physics import decohere, distill


def cfg(**kw):
    kw.setdefault("L", 10.0)
    kw.setdefault("Tc_int", 2500e-6)
    return LL.LinkConfig(**kw)


class ForcedRng:
    """Deterministic uniform stream for forcing env outcomes."""

    def __init__(self, values):
        self.values = list(values)

    def random(self):
        return self.values.pop(0)


# ------------------------------------------------------------------- mask


def test_mask_both_empty_only_wait():
    assert LL.action_mask(LL.AgentState(), cfg()) == (True, False, False, False)


def test_mask_one_good_slot():
    st_ = LL.AgentState(F1=0.95)
    assert LL.action_mask(st_, cfg()) == (True, False, False, True)


def test_mask_two_low_slots():
    st_ = LL.AgentState(F1=0.92, F2=0.92)
    assert LL.action_mask(st_, cfg()) == (True, True, True, False)


def test_mask_consume_needs_max_at_target():
    st_ = LL.AgentState(F1=0.92, F2=0.95)
    mask = LL.action_mask(st_, cfg())
    assert mask[LL.Action.CONSUME]


# --------------------------------------------------------------- env_step


def test_wait_generation_success():
    state = LL.AgentState()
    nxt, done, d = LL.env_step(state, LL.Action.WAIT, cfg(), ForcedRng([0.0]))
    assert not done and d is None
    assert nxt.F1 == cfg().F_gen and nxt.F2 is None
    assert nxt.t == pytest.approx(cfg().tau)
    assert nxt.ticks == 1


def test_wait_generation_failure_still_advances():
    nxt, done, d = LL.env_step(LL.AgentState(), LL.Action.WAIT, cfg(), ForcedRng([0.999]))
    assert nxt.F1 is None and nxt.t == pytest.approx(cfg().tau)


def test_wait_decoheres_occupied_slots():
    c = cfg()
    state = LL.AgentState(F1=0.95, F2=0.93)
    nxt, _, _ = LL.env_step(state, LL.Action.WAIT, c, ForcedRng([0.9]))
    assert nxt.F1 == pytest.approx(decohere(0.95, c.tau, c.Tc_int))
    assert nxt.F2 == pytest.approx(decohere(0.93, c.tau, c.Tc_int))


def test_purify_perfect_inputs_guaranteed():
    c = cfg(Tc_int=1e9)
    state = LL.AgentState(F1=1.0, F2=1.0)
    nxt, done, d = LL.env_step(state, LL.Action.PURIFY, c, ForcedRng([0.9999]))
    assert not done and d is None
    assert nxt.F1 == pytest.approx(1.0) and nxt.F2 is None


def test_purify_failure_empties_both():
    c = cfg()
    state = LL.AgentState(F1=0.9, F2=0.9)
    nxt, _, _ = LL.env_step(state, LL.Action.PURIFY, c, ForcedRng([0.999999]))
    assert nxt.F1 is None and nxt.F2 is None


def test_purify_success_fidelity_matches_distill_of_decohered():
    c = cfg()
    state = LL.AgentState(F1=0.93, F2=0.91)
    F1d = decohere(0.93, c.tau, c.Tc_int)
    F2d = decohere(0.91, c.tau, c.Tc_int)
    _, expected = distill(F1d, F2d)
    nxt, _, _ = LL.env_step(state, LL.Action.PURIFY, c, ForcedRng([0.0]))
    assert nxt.F1 == pytest.approx(expected)


def test_consume_takes_best_slot_case_enumeration():
    # exhaustive two-slot cases with F0 = 0.94
    c = cfg()
    for slots in [(0.95, 0.96), (0.96, 0.95), (0.95, None), (None, 0.96)]:
        state = LL.AgentState(F1=slots[0], F2=slots[1], t=7 * c.tau, ticks=7)
        nxt, done, d = LL.env_step(state, LL.Action.CONSUME, c, ForcedRng([]))
        assert done
        best = max(v for v in slots if v is not None)
        assert d == (best, state.t)
        assert nxt.F1 is None and nxt.F2 is None


def test_discard_removes_lower_slot():
    nxt, done, _ = LL.env_step(
        LL.AgentState(F1=0.93, F2=0.91), LL.Action.DISCARD, cfg(), ForcedRng([])
    )
    assert not done and nxt.F1 == 0.93 and nxt.F2 is None


def test_illegal_action_raises():
    with pytest.raises(LL.IllegalActionError):
        LL.env_step(LL.AgentState(), LL.Action.PURIFY, cfg(), ForcedRng([]))
    with pytest.raises(LL.IllegalActionError):
        LL.env_step(LL.AgentState(F1=0.92), LL.Action.CONSUME, cfg(), ForcedRng([]))


def test_step_cap_ends_episode_without_delivery():
    c = cfg(step_cap=3)
    state = LL.AgentState(ticks=2, t=2 * c.tau)
    nxt, done, d = LL.env_step(state, LL.Action.WAIT, c, ForcedRng([0.99]))
    assert done and d is None
    assert nxt.F1 is None and nxt.F2 is None


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=60), st.integers(0, 2**31))
def test_random_legal_walk_invariants(choices, seed):
    """Random legal actions: deliveries respect F0, time advances per tick."""
    c = cfg(F_gen=0.93, F0=0.94)
    rng = np.random.Generator(np.random.PCG64(seed))
    state = LL.AgentState()
    for pick in choices:
        mask = LL.action_mask(state, c)
        legal = [a for a in range(4) if mask[a]]
        action = legal[pick % len(legal)]
        before = state.t
        state, done, d = LL.env_step(state, action, c, rng)
        if d is not None:
            assert d[0] >= c.F0
        if action in (LL.Action.WAIT, LL.Action.PURIFY):
            assert state.t == pytest.approx(before + c.tau)
        else:
            assert state.t == before
        if done:
            state = LL.AgentState()


def test_env_trajectory_reproducible_per_seed():
    c = cfg(F_gen=0.95)
    def run(seed):
        rng = np.random.Generator(np.random.PCG64(seed))
        state, out = LL.AgentState(), []
        for _ in range(200):
            action = LL.scripted_policy(state, c)
            state, done, d = LL.env_step(state, action, c, rng)
            out.append((action, state.F1, state.F2, d))
            if done:
                state = LL.AgentState()
        return out
    assert run(5) == run(5)
    assert run(5) != run(6)


# ----------------------------------------------------------- policies


def test_scripted_policy_priorities():
    c = cfg()
    assert LL.scripted_policy(LL.AgentState(F1=0.95), c) == LL.Action.CONSUME
    assert LL.scripted_policy(LL.AgentState(F1=0.92, F2=0.92), c) == LL.Action.PURIFY
    assert LL.scripted_policy(LL.AgentState(), c) == LL.Action.WAIT


def test_policy_forward_zero_weights_uniform():
    w = mlp.MLPWeights((4, 8, 4), np.zeros(mlp.param_count((4, 8, 4))))
    probs = LL.policy_forward(w, (0.1, 0.2, 1.0, 0.0), (True, True, True, True))
    assert probs == [0.25, 0.25, 0.25, 0.25]
    probs = LL.policy_forward(w, (0.1, 0.2, 1.0, 0.0), (True, False, True, True))
    assert probs[1] == 0.0
    assert probs[0] == pytest.approx(1 / 3, abs=1e-15)


def test_policy_forward_random_weights_properties():
    rng = np.random.default_rng(0)
    w = mlp.init_weights((4, 64, 64, 4), rng)
    for _ in range(1000):
        obs = rng.random(4)
        mask = tuple(bool(b) for b in rng.integers(0, 2, 4))
        if not any(mask):
            mask = (True,) + mask[1:]
        probs = LL.policy_forward(w, obs, mask)
        assert sum(probs) == pytest.approx(1.0, abs=1e-12)
        for p, legal in zip(probs, mask):
            assert p >= 0.0
            if not legal:
                assert p == 0.0


def test_policy_forward_shape_errors():
    w = mlp.init_weights((4, 8, 4), np.random.default_rng(1))
    with pytest.raises(ValueError):
        LL.policy_forward(w, (0.1, 0.2), (True,) * 4)
    with pytest.raises(ValueError):
        mlp.MLPWeights((4, 8, 4), np.zeros(3))


# ----------------------------------------------------- synthetic source


def test_synthetic_source_every_tick_when_interval_tau():
    tau = 50e-6
    src = LL.SyntheticSource(tau, 0.9575, tau)
    rng = np.random.Generator(np.random.PCG64(0))
    for k in range(100):
        assert LL.synthetic_source_step(k * tau, src, rng) == (0.9575, k * tau)


def test_synthetic_source_degenerate_fidelity():
    tau = 50e-6
    src = LL.SyntheticSource(7.36 * tau, 0.9575, tau)
    rng = np.random.Generator(np.random.PCG64(1))
    fids = set()
    for k in range(5000):
        d = LL.synthetic_source_step(k * tau, src, rng)
        if d:
            fids.add(d[0])
    assert fids == {0.9575}


def test_synthetic_source_interval_converges():
    tau = 50e-6
    src = LL.SyntheticSource(7.36 * tau, 0.9575, tau)
    rng = np.random.Generator(np.random.PCG64(2))
    n = sum(
        1 for k in range(10**6) if LL.synthetic_source_step(k * tau, src, rng)
    )
    mean_interval = 10**6 * tau / n
    assert mean_interval == pytest.approx(7.36 * tau, rel=0.01)


def test_synthetic_source_infinite_interval():
    src = LL.SyntheticSource(math.inf, 0.9575, 50e-6)
    rng = np.random.Generator(np.random.PCG64(3))
    assert all(LL.synthetic_source_step(0.0, src, rng) is None for _ in range(100))
