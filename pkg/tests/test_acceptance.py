"""Acceptance suite: one test per criterion, at the stated tolerances.

Run with `pytest tests/test_acceptance.py -s` to see one PASS/FAIL line per
criterion.  The full suite takes tens of minutes on two cores; the heavy
experiment sweeps are shared across criteria through session fixtures.

Criterion 3 reports this artifact's own u_SKR magnitudes: the synthetic
link stand-in pins only the mean delivery fidelity and mean interval, so
absolute rates are calibration-dependent and only the regime structure
(collapse, constancy, ordering) is asserted.
"""

import os
from dataclasses import replace

import numpy as np
import pytest

import repeaterchain.harness as H
import repeaterchain.trainer as TR
from repeaterchain import mlp
from repeaterchain import physics as P
from repeaterchain.cli import main as cli_main
from repeaterchain.engine import DEFAULT_BACKEND
from repeaterchain.linklayer import LinkConfig

os.environ.setdefault(H.WORKERS_ENV, "2")

TAU10 = 50e-6
N_TRIALS = 200
T_SIM = 5.0
STRESSED_US = (250, 500, 1250, 2500, 5000)


def report(criterion, ok, detail):
    tag = "PASS" if ok else "FAIL"
    print(f"[{tag}] criterion {criterion}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# --------------------------------------------------------------- fixtures


def _regime_cells(link_mode, f_gen=0.9575):
    cells = []
    for tc_us in STRESSED_US:
        cells.append(
            H.TrialSpec(
                lengths=(10.0,) * 4, tc_ext=tc_us * 1e-6, tc_int=tc_us * 1e-6,
                protocol="sequential", link_mode=link_mode, f_gen=f_gen,
                t_sim=T_SIM,
            )
        )
    return tuple(cells)


@pytest.fixture(scope="session")
def regime_rows():
    """Criterion 3/6 data: synthetic calibrated source over the stressed grid."""
    cfg = H.SweepConfig(
        experiment="matched", cells=_regime_cells("synthetic"),
        n_trials=N_TRIALS, base_seed=0,
    )
    rows = H.run_sweep(cfg)
    return {(round(r["tc_ext_s"] * 1e6), r["protocol"]): r for r in rows}


@pytest.fixture(scope="session")
def relaxed_rows():
    cfg = H.experiment_config("relaxed", {"trials": N_TRIALS, "seed": 0})
    return H.run_sweep(cfg)


@pytest.fixture(scope="session")
def offdiag_rows():
    cfg = H.experiment_config("offdiag", {"trials": N_TRIALS, "seed": 0})
    rows = H.run_sweep(cfg)
    return rows


@pytest.fixture(scope="session")
def policy_bank(tmp_path_factory):
    out = tmp_path_factory.mktemp("bank")
    tcfg = TR.TrainerConfig(iterations=60, batch_size=10000, seed=100)
    paths = TR.train_policy_bank(out, tcfg)
    return paths


# -------------------------------------------------------------- criteria


def test_criterion_1_cutoff_anchor():
    t_cut = P.cutoff(0.9575, 4, 1250e-6)
    fr = P.f_req(4)
    ok = abs(t_cut - 9.2e-6) <= 0.1e-6 and abs(fr - 0.9472) <= 1e-4
    report(1, ok, f"cutoff anchor t_cut={t_cut*1e6:.3f}us (9.2 +- 0.1), "
                  f"f_req(4)={fr:.5f} (0.9472 +- 1e-4)")


def test_criterion_2_physics_property_suite():
    rng = np.random.default_rng(0)
    # decoherence semigroup
    semigroup_ok = True
    for F in np.linspace(0.25, 1.0, 21):
        for a, b in rng.random((10, 2)) * 2e-3:
            lhs = P.decohere(F, a + b, 1250e-6)
            rhs = P.decohere(P.decohere(F, a, 1250e-6), b, 1250e-6)
            semigroup_ok &= abs(lhs - rhs) <= 1e-12

    # swap-tree association invariance, all bracketings m <= 5
    def all_brackets(fids):
        if len(fids) == 1:
            return [fids[0]]
        out = []
        for s in range(1, len(fids)):
            for lv in all_brackets(fids[:s]):
                for rv in all_brackets(fids[s:]):
                    out.append(P.swap_fidelity(lv, rv))
        return out

    assoc_ok = True
    for m in (2, 3, 4, 5):
        fids = list(0.8 + 0.19 * rng.random(m))
        ref = P.swap_tree(fids)
        assoc_ok &= all(abs(v - ref) <= 1e-12 for v in all_brackets(fids))

    # cutoff/decohere round trip to 1e-10
    round_ok = True
    for F in np.linspace(0.948, 0.999, 30):
        for m in (1, 4):
            t_cut = P.cutoff(F, m, 1250e-6)
            if t_cut > 0:
                round_ok &= abs(P.decohere(F, t_cut, 1250e-6) - P.f_req(m)) <= 1e-10

    # distillation closed form vs density-matrix oracle, 50-point grid, 1e-6
    from test_physics import distill_oracle

    distill_ok = True
    for F in np.linspace(0.26, 0.999, 50):
        succ, F_out = P.distill(F, F)
        o_succ, o_F = distill_oracle(F, F)
        distill_ok &= abs(succ - o_succ) <= 1e-6 and abs(F_out - o_F) <= 1e-6

    ok = semigroup_ok and assoc_ok and round_ok and distill_ok
    report(2, ok, f"semigroup={semigroup_ok} bracketings={assoc_ok} "
                  f"roundtrip={round_ok} distill_oracle={distill_ok}")


def test_criterion_3_regime_structure(regime_rows):
    seq = {tc: regime_rows[(tc, "sequential")] for tc in STRESSED_US}
    sim = {tc: regime_rows[(tc, "simultaneous")] for tc in STRESSED_US}

    # (a) sequential collapse below the threshold
    collapse_ok = all(seq[tc]["n_deliveries_total"] == 0 for tc in (250, 500, 1250))

    # (b) simultaneous constant within 5% relative spread
    sim_u = [sim[tc]["mean_uskr_bps"] for tc in STRESSED_US]
    spread = (max(sim_u) - min(sim_u)) / np.mean(sim_u)
    constant_ok = spread <= 0.05

    # (c) sequential recovers but stays strictly below simultaneous
    recover_ok = True
    for tc in (2500, 5000):
        recover_ok &= seq[tc]["n_deliveries_total"] > 0
        recover_ok &= seq[tc]["mean_uskr_bps"] < sim[tc]["mean_uskr_bps"]

    detail = (
        f"seq u(bps) by tc_ext(us) "
        + " ".join(f"{tc}:{seq[tc]['mean_uskr_bps']:.3f}" for tc in STRESSED_US)
        + f" | sim constant {np.mean(sim_u):.3f} bps (spread {spread*100:.2f}%)"
        + " | magnitudes are this artifact's own calibration"
    )
    report(3, collapse_ok and constant_ok and recover_ok, detail)


def test_criterion_4_relaxed_equivalence(relaxed_rows):
    worst = 0.0
    worst_cell = None
    key = lambda r: (r["lengths"], r["tc_ext_s"])
    cells = {}
    for r in relaxed_rows:
        cells.setdefault(key(r), {})[r["protocol"]] = r["mean_uskr_bps"]
    for cell, by_proto in cells.items():
        gap = abs(by_proto["sequential"] - by_proto["simultaneous"])
        rel = gap / by_proto["simultaneous"]
        if rel > worst:
            worst, worst_cell = rel, cell
    ok = worst <= 0.01
    report(4, ok, f"worst relative protocol gap {worst*100:.3f}% at {worst_cell} "
                  f"(must be <= 1%) over {len(cells)} topology x Tc cells")


def test_criterion_5_offdiag_factorization(offdiag_rows):
    grid = [r * TAU10 for r in (5, 10, 25, 50, 100)]
    flat_ok = True
    worst_flat = 0.0
    for proto in ("sequential", "simultaneous"):
        for tc_ext in grid:
            row_u = [
                r["mean_uskr_bps"] for r in offdiag_rows
                if r["protocol"] == proto and r["tc_ext_s"] == tc_ext
            ]
            assert len(row_u) == 5
            mean = np.mean(row_u)
            if mean > 0:
                spread = (max(row_u) - min(row_u)) / mean
                worst_flat = max(worst_flat, spread)
                flat_ok &= spread <= 0.02
            else:
                flat_ok &= max(row_u) == 0.0

    # columns: collapse then recovery as Tc_ext grows (sequential)
    col = {}
    for r in offdiag_rows:
        if r["protocol"] == "sequential":
            col.setdefault(r["tc_ext_s"], []).append(r["n_deliveries_total"])
    totals = [sum(col[tc]) for tc in grid]
    column_ok = all(t == 0 for t in totals[:3]) and all(t > 0 for t in totals[3:])

    report(5, flat_ok and column_ok,
           f"rows flat in Tc_int (worst spread {worst_flat*100:.3f}%, limit 2%); "
           f"sequential column totals {totals} follow 0 -> nonzero")


def test_criterion_6_dwell_diagnostic(regime_rows):
    sim_dwell_ok = all(
        regime_rows[(tc, "simultaneous")]["mean_dwell_s"] in (None, 0.0)
        for tc in STRESSED_US
    )
    collapsed = [regime_rows[(tc, "sequential")]["mean_dwell_s"] for tc in (250, 500, 1250)]
    collapsed_ok = all(d is None or d < TAU10 for d in collapsed)
    d2500 = regime_rows[(2500, "sequential")]["mean_dwell_s"]
    d5000 = regime_rows[(5000, "sequential")]["mean_dwell_s"]
    order_ok = d2500 is not None and d5000 is not None and 0.0 < d2500 < d5000
    report(6, sim_dwell_ok and collapsed_ok and order_ok,
           f"simultaneous dwell exactly 0; sequential dwell absent in collapse, "
           f"then {d2500*1e6:.1f}us -> {d5000*1e6:.1f}us at 2500/5000us")


def test_criterion_7_trainer(policy_bank):
    # (i) analytic policy gradient vs finite differences on the toy env
    from test_training import central_fd, toy_exact_gradients, toy_expectations, toy_weights

    w = toy_weights(3)
    J_F, J_T = toy_expectations(w)
    grad_JF, grad_JT = toy_exact_gradients(w)
    combined = TR.utility_gradient_combine(grad_JF, grad_JT, TR.BatchStats(J_F, J_T, 1))

    def u_of(ww):
        jf, jt = toy_expectations(ww)
        return (1.0 - P.entropy(jf)) / jt

    fd = central_fd(u_of, w, eps=1e-7)
    grad_rel_err = float(np.linalg.norm(combined - fd) / np.linalg.norm(fd))
    grad_ok = grad_rel_err <= 1e-3

    # (ii) non-decreasing median utility over 20-iteration windows, 3 seeds
    cfg = LinkConfig(L=10.0, Tc_int=25 * TAU10, F_gen=0.94, F0=0.94)
    trend_ok = True
    for seed in (0, 1, 2):
        tcfg = TR.TrainerConfig(iterations=60, batch_size=10000, seed=seed)
        _, trace = TR.train_policy(cfg, tcfg)
        utils = [row[3] for row in trace]
        medians = [float(np.median(utils[k:k + 20])) for k in range(0, 60, 20)]
        trend_ok &= all(a <= b + 1e-12 for a, b in zip(medians, medians[1:]))

    # (iii) bank guarantee: only F_del >= F0 pairs, positive rate, and the
    # calibration targets F_del >= 0.94, interval < 15 tau
    bank_ok = True
    for path in policy_bank:
        weights = mlp.load_weights(path)
        name = path.stem  # policy_L{L}_tcr{ratio}
        L = float(name.split("_")[1][1:])
        ratio = float(name.split("tcr")[1])
        tau = L / 200000.0
        lc = LinkConfig(L=L, Tc_int=ratio * tau, F_gen=0.94, F0=0.94)
        ev = TR.evaluate_policy(weights, lc, 10**4, seed=7)
        bank_ok &= ev["delivered_fraction"] > 0
        bank_ok &= ev.get("min_F_del", 0.0) >= lc.F0
        # deliveries sit exactly at 0.94; allow the float-mean dust of
        # averaging 10^4 identical values
        bank_ok &= ev.get("mean_F_del", 0.0) >= 0.94 - 1e-9
        bank_ok &= ev.get("mean_interval", np.inf) < 15 * tau

    report(7, grad_ok and trend_ok and bank_ok,
           f"gradient FD rel err {grad_rel_err:.2e} (<=1e-3); "
           f"median utility non-decreasing on 3 seeds: {trend_ok}; "
           f"bank of {len(policy_bank)} policies meets F_del/interval targets: {bank_ok}")


def test_criterion_8_determinism(tmp_path, monkeypatch):
    # simulate: identical CSV bytes for the same seed
    argv = ["simulate", "--protocol", "sequential", "--lengths", "10,10,10,10",
            "--tc-ext", "2500e-6", "--trials", "5", "--sim-time", "0.5",
            "--seed", "11"]
    blobs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        cli_main(argv + ["--out", str(out)])
        blobs.append(out.read_bytes())
    sim_ok = blobs[0] == blobs[1]

    # sweep: identical CSV bytes across worker counts
    cells = _regime_cells("synthetic")[3:]  # the two delivering columns
    cfg = H.SweepConfig(experiment="matched", cells=cells, n_trials=6, base_seed=5)
    cfg = replace(cfg, cells=tuple(replace(c, t_sim=0.5) for c in cfg.cells))
    sweep_blobs = []
    for workers in ("1", "2"):
        monkeypatch.setenv(H.WORKERS_ENV, workers)
        rows = H.run_sweep(cfg)
        path = tmp_path / f"sweep_w{workers}.csv"
        H.write_results_csv(path, rows)
        sweep_blobs.append(path.read_bytes())
    sweep_ok = sweep_blobs[0] == sweep_blobs[1]

    report(8, sim_ok and sweep_ok,
           f"simulate byte-identical={sim_ok}, sweep byte-identical across "
           f"worker counts={sweep_ok} (backend={DEFAULT_BACKEND})")

