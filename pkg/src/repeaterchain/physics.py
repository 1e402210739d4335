"""Werner-state physics: decoherence, swapping, distillation, and rate metrics.

All states are Werner states, identified by their fidelity F to a maximally
entangled pair, with F in [0.25, 1].  The equivalent Werner parameter
f = (4F - 1) / 3 is exposed because both depolarizing decay and the twirled
swap are exactly multiplicative in f, which makes it the natural oracle
parametrization for tests.

Everything here is a pure function of its arguments; no module state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "PhysicsConstants",
    "DEFAULT_CONSTANTS",
    "fidelity_to_werner",
    "werner_to_fidelity",
    "decohere",
    "swap_fidelity",
    "swap_tree",
    "entropy",
    "skr_utility",
    "p_gen",
    "f_req",
    "cutoff",
    "cutoff_from_floor",
    "distill",
]


@dataclass(frozen=True)
class PhysicsConstants:
    """Fixed hardware parameters shared by every experiment.

    L_att: fiber attenuation length, km.
    c_fiber: speed of light in fiber, km/s.
    K: coupling/loss prefactor of the per-attempt generation probability.
    F_min: application-level fidelity floor (six-state SKR-positive threshold).
    """

    L_att: float = 22.0
    c_fiber: float = 200000.0
    K: float = 0.9
    F_min: float = 0.81

    def __post_init__(self):
        if self.L_att <= 0 or self.c_fiber <= 0:
            raise ValueError("L_att and c_fiber must be positive")
        if not 0.0 < self.K <= 1.0:
            raise ValueError("K must be in (0, 1]")
        if not 0.25 < self.F_min < 1.0:
            raise ValueError("F_min must be in (0.25, 1)")


DEFAULT_CONSTANTS = PhysicsConstants()


def fidelity_to_werner(F):
    """Werner parameter f = (4F - 1) / 3."""
    return (4.0 * F - 1.0) / 3.0


def werner_to_fidelity(f):
    """Inverse of :func:`fidelity_to_werner`."""
    return 0.25 + 0.75 * f


def decohere(F, dt, Tc):
    """Depolarize a Werner pair stored for dt seconds at coherence time Tc.

    Returns 0.25 + (F - 0.25) * exp(-2 dt / Tc).  Monotone down in dt with
    fixed point at the maximally mixed F = 0.25.
    """
    if Tc <= 0.0:
        raise ValueError(f"coherence time must be positive, got {Tc}")
    if dt < 0.0:
        raise ValueError(f"storage time must be non-negative, got {dt}")
    return 0.25 + (F - 0.25) * math.exp(-2.0 * dt / Tc)


def swap_fidelity(F1, F2):
    """Fidelity after a twirled Bell-state-measurement swap of two pairs.

    Multiplicative in the Werner parameter: f_out = f1 * f2.
    """
    return F1 * F2 + (1.0 - F1) * (1.0 - F2) / 3.0


def swap_tree(fidelities):
    """Combine a chain of pair fidelities via a balanced binary swap tree.

    Splits at the midpoint floor(m / 2) and recurses; a single element is
    returned unchanged.  Because the swap is associative in f, the bracketing
    only matters at the level of floating-point rounding.
    """
    m = len(fidelities)
    if m == 0:
        raise ValueError("swap tree needs at least one pair")
    if m == 1:
        return fidelities[0]
    mid = m // 2
    return swap_fidelity(swap_tree(fidelities[:mid]), swap_tree(fidelities[mid:]))


def entropy(F):
    """Werner-state Shannon entropy H(F) = -F log2 F - (1-F) log2((1-F)/3).

    Defined on [0.25, 1]; F = 1 returns the x log x -> 0 limit, 0 bits.
    1 - H(F) is the (unclamped) six-state secret-key fraction, with a single
    zero crossing near F = 0.811.
    """
    if F < 0.25 or F > 1.0:
        raise ValueError(f"fidelity {F} outside [0.25, 1]")
    if F == 1.0:
        return 0.0
    return -F * math.log2(F) - (1.0 - F) * math.log2((1.0 - F) / 3.0)


def skr_utility(mean_F, mean_interval, n_deliveries):
    """Per-pair efficiency: clamped secret-key fraction per delivery interval.

    Returns max{0, 1 - H(mean_F)} / mean_interval in bits/second.  A run with
    no deliveries has no defined interval and scores 0 by convention.
    """
    if n_deliveries == 0:
        return 0.0
    if mean_interval <= 0.0:
        raise ValueError("mean interval must be positive when deliveries exist")
    rate = 1.0 - entropy(mean_F)
    if rate <= 0.0:
        return 0.0
    return rate / mean_interval


def p_gen(L, consts=DEFAULT_CONSTANTS):
    """Per-attempt heralded generation success probability for an L km link."""
    if L < 0.0:
        raise ValueError("link length must be non-negative")
    return consts.K * math.exp(-L / consts.L_att)


def f_req(m, F_min=DEFAULT_CONSTANTS.F_min):
    """Fidelity floor a pair must hold to absorb an m-link swap budget.

    f_req(m) is the fidelity whose Werner parameter is the m-th root of
    F_min's, so that m swaps of pairs at the floor still meet F_min.
    Monotone increasing in m; f_req(1) = F_min.
    """
    if m < 1:
        raise ValueError(f"budget tier m must be >= 1, got {m}")
    return 0.25 + 0.75 * ((4.0 * F_min - 1.0) / 3.0) ** (1.0 / m)


def cutoff_from_floor(F, floor, Tc):
    """Storage time after which decay drives fidelity F below `floor`.

    Non-positive when F is already at or below the floor; callers treat that
    as reject-at-push.
    """
    if F <= 0.25:
        raise ValueError("cutoff undefined at or below the maximally mixed state")
    return -(Tc * 0.5) * math.log((floor - 0.25) / (F - 0.25))


def cutoff(F, m, Tc, F_min=DEFAULT_CONSTANTS.F_min):
    """Per-pair cutoff against the tier-m floor f_req(m) at coherence Tc."""
    return cutoff_from_floor(F, f_req(m, F_min), Tc)


def distill(F1, F2):
    """Werner-twirled recurrence distillation of two pairs.

    Returns (success probability, output fidelity conditioned on success).
    The output is re-twirled to Werner form.  Fixed points at F = 1 and the
    maximally mixed F = 0.25.
    """
    succ = (
        F1 * F2
        + F1 * (1.0 - F2) / 3.0
        + (1.0 - F1) * F2 / 3.0
        + 5.0 * (1.0 - F1) * (1.0 - F2) / 9.0
    )
    F_out = (F1 * F2 + (1.0 - F1) * (1.0 - F2) / 9.0) / succ
    return succ, F_out
