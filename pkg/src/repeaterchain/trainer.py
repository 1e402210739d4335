"""Policy-gradient training of the link-layer network.

REINFORCE over the masked policy with two return streams per episode:
terminal delivery fidelity and time-to-go.  Their score-function gradient
estimates are combined through the chain rule of the SKR utility
u(J_F, J_T) = (1 - H(J_F)) / J_T at the batch means, with a bootstrap that
zeroes the time coefficient while mean fidelity sits below the
SKR-positive threshold (there the unclamped formula would reward stalling).

Episode collection runs all episodes of a batch in lockstep over decision
steps, each episode drawing from its own spawned generator, so results
depend only on (seed, config).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import mlp
from .linklayer import LinkConfig
from .physics import DEFAULT_CONSTANTS, entropy

F_BOOT_DEFAULT = 0.811


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 60
    batch_size: int = 10000
    seed: int = 0
    f_boot: float = F_BOOT_DEFAULT
    hidden: tuple = (64, 64)


@dataclass
class BatchStats:
    J_F: float
    J_T: float
    batch_size: int


@dataclass
class EpisodeRecord:
    """Spec-shaped view of one episode: trajectory plus the two returns."""

    trajectory: list  # (observation, action, mask) per decision
    G_F: float
    G_T: np.ndarray  # time-to-go at each decision


@dataclass
class BatchRecords:
    """Flat step arrays for a whole batch; episode views built on demand."""

    obs: np.ndarray       # (S, 4)
    mask: np.ndarray      # (S, 4) bool
    actions: np.ndarray   # (S,)
    episode: np.ndarray   # (S,) episode index per step
    elapsed: np.ndarray   # (S,) episode time at the decision
    G_F: np.ndarray       # (B,) terminal fidelity, 0 for failed episodes
    duration: np.ndarray  # (B,) episode length in seconds

    def step_time_to_go(self):
        return self.duration[self.episode] - self.elapsed

    def episodes(self):
        for k in range(len(self.G_F)):
            idx = np.nonzero(self.episode == k)[0]
            yield EpisodeRecord(
                trajectory=[
                    (tuple(self.obs[i]), int(self.actions[i]), tuple(self.mask[i]))
                    for i in idx
                ],
                G_F=float(self.G_F[k]),
                G_T=self.duration[k] - self.elapsed[idx],
            )


class AdamState:
    def __init__(self, n_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def ascend(self, params, grad):
        """One maximizing Adam update, in place."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        params += self.lr * mhat / (np.sqrt(vhat) + self.eps)


def collect_batch(weights, link_config, batch_size, rng, greedy=False):
    """Roll out `batch_size` episodes under the masked policy.

    `rng` is a numpy Generator; each episode draws from its own spawned
    child stream (action draw first, then any environment draw), so a
    given (seed, config) always reproduces the same batch.
    Returns (BatchRecords, BatchStats).
    """
    cfg = link_config
    B = batch_size
    gens = rng.spawn(B)
    tau = cfg.tau
    decay = math.exp(-2.0 * tau / cfg.Tc_int)
    horizon = cfg.horizon_ticks * tau

    F1 = np.zeros(B); F2 = np.zeros(B)
    occ1 = np.zeros(B, bool); occ2 = np.zeros(B, bool)
    t = np.zeros(B); ticks = np.zeros(B, np.int64)
    active = np.ones(B, bool)
    G_F = np.zeros(B); duration = np.zeros(B)

    steps_obs, steps_mask, steps_act, steps_ep, steps_elapsed = [], [], [], [], []

    max_rounds = 3 * cfg.step_cap + 8
    for _ in range(max_rounds):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        obs = np.zeros((idx.size, 4))
        obs[:, 0] = np.where(occ1[idx], F1[idx], 0.0)
        obs[:, 1] = np.where(occ2[idx], F2[idx], 0.0)
        obs[:, 2] = 1.0
        obs[:, 3] = t[idx] / horizon
        both = occ1[idx] & occ2[idx]
        best = np.maximum(np.where(occ1[idx], F1[idx], -1.0),
                          np.where(occ2[idx], F2[idx], -1.0))
        mask = np.empty((idx.size, 4), bool)
        mask[:, 0] = True
        mask[:, 1] = both
        mask[:, 2] = both
        mask[:, 3] = best >= cfg.F0

        probs, _ = mlp.forward_batch(weights, obs, mask)
        if greedy:
            act = probs.argmax(axis=1)
        else:
            u = np.array([gens[k].random() for k in idx])
            cum = np.cumsum(probs, axis=1)
            hit = u[:, None] < cum
            act = hit.argmax(axis=1)
            none_hit = ~hit.any(axis=1)  # rounding guard at u ~ 1
            if none_hit.any():
                last_legal = (probs > 0).cumsum(axis=1).argmax(axis=1)
                act = np.where(none_hit, last_legal, act)

        steps_obs.append(obs)
        steps_mask.append(mask)
        steps_act.append(act)
        steps_ep.append(idx.copy())
        steps_elapsed.append(t[idx].copy())

        # CONSUME: emit best slot, end episode
        rows = idx[act == 3]
        if rows.size:
            G_F[rows] = np.maximum(np.where(occ1[rows], F1[rows], -1.0),
                                   np.where(occ2[rows], F2[rows], -1.0))
            duration[rows] = t[rows]
            active[rows] = False

        # DISCARD: drop the lower-fidelity slot
        rows = idx[act == 1]
        if rows.size:
            drop2 = F2[rows] <= F1[rows]
            occ2[rows[drop2]] = False
            occ1[rows[~drop2]] = False

        # WAIT: decohere, then attempt generation into the first empty slot
        rows = idx[act == 0]
        if rows.size:
            r1 = rows[occ1[rows]]
            F1[r1] = 0.25 + (F1[r1] - 0.25) * decay
            r2 = rows[occ2[rows]]
            F2[r2] = 0.25 + (F2[r2] - 0.25) * decay
            gen_rows = rows[~(occ1[rows] & occ2[rows])]
            for r in gen_rows:
                if gens[r].random() < cfg.p_gen:
                    if not occ1[r]:
                        F1[r] = cfg.F_gen; occ1[r] = True
                    else:
                        F2[r] = cfg.F_gen; occ2[r] = True
            t[rows] += tau
            ticks[rows] += 1

        # PURIFY: decohere both, then a twirled recurrence round
        rows = idx[act == 2]
        if rows.size:
            A = 0.25 + (F1[rows] - 0.25) * decay
            Bv = 0.25 + (F2[rows] - 0.25) * decay
            succ = (A * Bv + A * (1.0 - Bv) / 3.0 + (1.0 - A) * Bv / 3.0
                    + 5.0 * (1.0 - A) * (1.0 - Bv) / 9.0)
            F_out = (A * Bv + (1.0 - A) * (1.0 - Bv) / 9.0) / succ
            win = np.array([gens[r].random() for r in rows]) < succ
            F1[rows] = np.where(win, F_out, F1[rows])
            occ1[rows] = win
            occ2[rows] = False
            t[rows] += tau
            ticks[rows] += 1

        # step cap: episode ends with no delivery
        capped = idx[(ticks[idx] >= cfg.step_cap) & active[idx]]
        if capped.size:
            duration[capped] = t[capped]
            active[capped] = False

    if active.any():  # pathological policy refused to terminate; fail them
        warnings.warn("episodes force-terminated at the lockstep bound")
        rows = np.nonzero(active)[0]
        duration[rows] = t[rows]
        active[rows] = False

    records = BatchRecords(
        obs=np.concatenate(steps_obs),
        mask=np.concatenate(steps_mask),
        actions=np.concatenate(steps_act),
        episode=np.concatenate(steps_ep),
        elapsed=np.concatenate(steps_elapsed),
        G_F=G_F,
        duration=duration,
    )
    stats = BatchStats(J_F=float(G_F.mean()), J_T=float(duration.mean()), batch_size=B)
    return records, stats


def entropy_derivative(F):
    """dH/dF for the Werner entropy: log2((1-F)/(3F))."""
    return math.log2((1.0 - F) / (3.0 * F))


def utility_gradient_combine(grad_JF, grad_JT, stats, f_boot=F_BOOT_DEFAULT):
    """Chain-rule combination of the two return-stream gradients.

    du/dJ_F = -H'(J_F)/J_T and du/dJ_T = -(1 - H(J_F))/J_T^2, evaluated
    unclamped; below the SKR-positive threshold the time coefficient is
    replaced by 0 (bootstrap), keeping only the fidelity pressure.
    """
    if stats.J_T <= 0.0:
        raise ValueError("J_T must be positive")
    if not 0.25 < stats.J_F < 1.0:
        raise ValueError(f"J_F = {stats.J_F} outside (0.25, 1)")
    du_dJF = -entropy_derivative(stats.J_F) / stats.J_T
    du_dJT = -(1.0 - entropy(stats.J_F)) / (stats.J_T * stats.J_T)
    if stats.J_F < f_boot:
        du_dJT = 0.0
    return du_dJF * grad_JF + du_dJT * grad_JT


def policy_gradients(weights, records, stats):
    """Per-stream REINFORCE gradients with mean baselines.

    Returns (grad_JF, grad_JT): flat estimates of dJ_F/dtheta and
    dJ_T/dtheta.  G_F applies to every step of its episode; G_T is the
    per-step time-to-go.
    """
    B = stats.batch_size
    probs, cache = mlp.forward_batch(weights, records.obs, records.mask)
    # degenerate batches (all returns equal) must yield exactly zero
    # advantages; the float mean of identical values is not exact and Adam
    # would amplify the dust into a real update
    adv_F = (records.G_F[records.episode] - records.G_F.mean()) / B
    if np.ptp(records.G_F) == 0.0:
        adv_F[:] = 0.0
    grad_JF = mlp.backward_logprob(weights, cache, records.actions, adv_F)
    gts = records.step_time_to_go()
    adv_T = (gts - gts.mean()) / B
    if np.ptp(gts) == 0.0:
        adv_T[:] = 0.0
    grad_JT = mlp.backward_logprob(weights, cache, records.actions, adv_T)
    return grad_JF, grad_JT


def reinforce_step(weights, records, stats, adam, f_boot=F_BOOT_DEFAULT):
    """One combined policy-gradient ascent step (in place on `weights`).

    When the batch mean fidelity is outside (0.25, 1) (early training with
    mostly failed episodes) the utility surface is undefined; the update
    falls back to pure fidelity ascent, the natural extension of the
    bootstrap regime.
    """
    if len(records.actions) == 0:
        raise ValueError("empty batch")
    grad_JF, grad_JT = policy_gradients(weights, records, stats)
    if 0.25 < stats.J_F < 1.0:
        combined = utility_gradient_combine(grad_JF, grad_JT, stats, f_boot)
    else:
        combined = grad_JF
    adam.ascend(weights.params, combined)
    return weights


def batch_utility(stats):
    """Trace metric: clamped utility at the batch means (0 when undefined)."""
    if not 0.25 < stats.J_F < 1.0:
        return 0.0
    val = 1.0 - entropy(stats.J_F)
    return max(0.0, val) / stats.J_T


def train_policy(link_config, trainer_config, progress=None):
    """Train one policy; returns (weights, trace rows).

    Trace rows are (iteration, J_F, J_T, utility).  A non-improving utility
    trend is surfaced as a warning; the trace is always returned so the
    run stays auditable.
    """
    tc = trainer_config
    rng = np.random.Generator(np.random.PCG64(tc.seed))
    sizes = (4, *tc.hidden, 4)
    weights = mlp.init_weights(sizes, rng)
    adam = AdamState(weights.params.size, tc.learning_rate, tc.beta1, tc.beta2, tc.eps)
    trace = []
    for it in range(tc.iterations):
        records, stats = collect_batch(weights, link_config, tc.batch_size, rng)
        reinforce_step(weights, records, stats, adam, tc.f_boot)
        trace.append((it, stats.J_F, stats.J_T, batch_utility(stats)))
        if progress:
            progress(trace[-1])
    _warn_if_flat(trace)
    return weights, trace


def _warn_if_flat(trace, window=20):
    utils = [row[3] for row in trace]
    if len(utils) < 2 * window:
        return
    head = float(np.median(utils[:window]))
    tail = float(np.median(utils[-window:]))
    if tail <= head:
        warnings.warn(
            f"training utility did not improve (median {head:.4g} -> {tail:.4g}); "
            "see the persisted trace"
        )


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "J_F", "J_T", "utility"])
        for row in trace:
            w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


BANK_L_VALUES = (5.0, 10.0)
BANK_TC_RATIOS = (5, 10, 25, 50, 100)


def bank_filename(L, ratio):
    return f"policy_L{L:g}_tcr{ratio:g}.mlp"


def train_policy_bank(out_dir, trainer_config, L_values=BANK_L_VALUES,
                      tc_ratios=BANK_TC_RATIOS, f0=0.94, f_gen=0.94,
                      progress=None):
    """Train one policy per (L, Tc_int/tau) cell; returns the weight paths.

    All cells share the delivery-fidelity target f0.  The default raw
    fidelity equals f0: with one-tick distillation rounds the slots are at
    least (2 tau, 1 tau) old when distilled, so any lower raw fidelity
    leaves the consume gate unreachable at the stressed Tc_int cells.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    idx = 0
    for L in L_values:
        for ratio in tc_ratios:
            tau = L / DEFAULT_CONSTANTS.c_fiber
            cfg = LinkConfig(L=L, Tc_int=ratio * tau, F_gen=f_gen, F0=f0)
            sub = replace(trainer_config, seed=trainer_config.seed + idx)
            if progress:
                progress(f"training L={L:g} km, Tc_int={ratio:g} tau")
            weights, trace = train_policy(cfg, sub)
            path = out_dir / bank_filename(L, ratio)
            mlp.save_weights(path, weights)
            write_trace(path.with_suffix(".trace.csv"), trace)
            paths.append(path)
            idx += 1
    return paths


def evaluate_policy(weights, link_config, episodes, seed, greedy=True):
    """Greedy (or stochastic) evaluation over independent episodes.

    Returns a dict with the delivered fraction, mean delivered fidelity,
    minimum delivered fidelity, and the mean inter-delivery interval
    (total elapsed time per delivery).
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    records, stats = collect_batch(weights, link_config, episodes, rng, greedy=greedy)
    delivered = records.G_F > 0
    n_del = int(delivered.sum())
    out = {
        "episodes": episodes,
        "delivered_fraction": n_del / episodes,
        "J_F": stats.J_F,
        "J_T": stats.J_T,
    }
    if n_del:
        out["mean_F_del"] = float(records.G_F[delivered].mean())
        out["min_F_del"] = float(records.G_F[delivered].min())
        out["mean_interval"] = float(records.duration.sum() / n_del)
    return out
