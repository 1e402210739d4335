"""Command-line surface: simulate, sweep, and train subcommands."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import __version__, mlp
from .engine import DEFAULT_BACKEND
from .harness import (
    EXPERIMENTS,
    TrialSpec,
    experiment_config,
    parse_config_file,
    run_sweep,
    run_trial,
    write_events_csv,
    write_figure_csv,
    write_manifest,
    write_results_csv,
)
from .linklayer import LinkConfig
from .physics import DEFAULT_CONSTANTS
from .trainer import (
    TrainerConfig,
    evaluate_policy,
    train_policy,
    train_policy_bank,
    write_trace,
)


def build_parser():
    p = argparse.ArgumentParser(
        prog="repeaterchain",
        description="Repeater-chain simulator: sequential vs simultaneous swapping",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run trials of a single configuration")
    sim.add_argument("--protocol", choices=["sequential", "simultaneous"], required=True)
    sim.add_argument("--lengths", required=True, help="comma list of link lengths, km")
    sim.add_argument("--tc-ext", type=float, required=True, help="external coherence time, s")
    sim.add_argument("--tc-int", type=float, default=1250e-6, help="internal coherence time, s")
    sim.add_argument("--link-mode", choices=["synthetic", "scripted", "policy"],
                     default="synthetic")
    sim.add_argument("--policy", help="policy weight file (link-mode policy)")
    sim.add_argument("--trials", type=int, default=200)
    sim.add_argument("--sim-time", type=float, default=5.0, help="simulated seconds per trial")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", help="per-trial results CSV")
    sim.add_argument("--events-out", help="optional per-delivery event log CSV")
    sim.add_argument("--f-mean", type=float, default=0.9575, help="synthetic delivery fidelity")
    sim.add_argument("--interval-ticks", type=float, default=7.36,
                     help="synthetic mean delivery interval, in link ticks")
    sim.add_argument("--f-gen", type=float, default=0.9575,
                     help="raw heralded fidelity (scripted/policy modes)")
    sim.add_argument("--f0", type=float, default=0.94, help="delivery fidelity target")

    sw = sub.add_parser("sweep", help="run one of the experiment families")
    sw.add_argument("--experiment", choices=list(EXPERIMENTS), required=True)
    sw.add_argument("--config", help="flat key = value override file")
    sw.add_argument("--out-dir", required=True)

    tr = sub.add_parser("train", help="train link-layer policies")
    tr.add_argument("--L", type=float, default=10.0, help="link length, km")
    tr.add_argument("--tc-int-ratio", type=float, default=25.0,
                    help="internal coherence time in units of the link tick")
    tr.add_argument("--f0", type=float, default=0.94)
    tr.add_argument("--f-gen", type=float, default=0.94,
                    help="raw heralded fidelity (default equals f0; see README)")
    tr.add_argument("--batch", type=int, default=10000)
    tr.add_argument("--iters", type=int, default=60)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.add_argument("--out", help="weight file to write (single policy)")
    tr.add_argument("--bank", action="store_true",
                    help="train the full 10-policy (L, Tc_int) bank")
    tr.add_argument("--out-dir", help="bank output directory")
    tr.add_argument("--eval-episodes", type=int, default=2000,
                    help="greedy evaluation episodes after training")
    return p


def cmd_simulate(args):
    lengths = tuple(float(x) for x in args.lengths.split(","))
    spec = TrialSpec(
        lengths=lengths,
        tc_ext=args.tc_ext,
        tc_int=args.tc_int,
        protocol=args.protocol,
        link_mode=args.link_mode,
        f_mean=args.f_mean,
        interval_ticks=args.interval_ticks,
        f_gen=args.f_gen,
        f0=args.f0,
        t_sim=args.sim_time,
    )
    if args.link_mode == "policy":
        if not args.policy:
            raise SystemExit("--link-mode policy needs --policy FILE")
        spec = spec.with_policy(mlp.load_weights(args.policy))

    rows = []
    events_log = []
    for k in range(args.trials):
        seed = args.seed + k
        if args.events_out:
            result, events = run_trial(spec, seed, collect_events=True)
            events_log.append((k, args.protocol, events))
        else:
            result = run_trial(spec, seed)
        rows.append((k, seed, result))

    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "seed", "n_deliveries", "mean_F", "t_last_s",
                        "u_skr_bps", "mean_dwell_s"])
            for k, seed, r in rows:
                w.writerow([k, seed, r.n_deliveries,
                            "" if r.mean_F is None else repr(r.mean_F),
                            "" if r.T_last is None else repr(r.T_last),
                            repr(r.u_skr),
                            "" if r.mean_dwell is None else repr(r.mean_dwell)])
    if args.events_out:
        write_events_csv(args.events_out, events_log)

    us = [r.u_skr for _, _, r in rows]
    n_tot = sum(r.n_deliveries for _, _, r in rows)
    mean_u = sum(us) / len(us)
    print(f"backend={DEFAULT_BACKEND} protocol={args.protocol} lengths={args.lengths} "
          f"tc_ext={args.tc_ext:g}s trials={args.trials}")
    print(f"mean u_SKR = {mean_u:.4f} bps, total deliveries = {n_tot}")
    return 0


def cmd_sweep(args):
    overrides = parse_config_file(args.config) if args.config else {}
    config = experiment_config(args.experiment, overrides)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    total_cells = len(config.cells) * len(config.protocols)
    print(f"experiment={config.experiment}: {len(config.cells)} cells x "
          f"{len(config.protocols)} protocols x {config.n_trials} trials "
          f"(backend={DEFAULT_BACKEND})")

    def progress(done, total):
        if done % max(1, total // 20) == 0:
            print(f"  {done}/{total} trials", file=sys.stderr)

    rows = run_sweep(config, progress=progress)
    write_results_csv(out_dir / "results.csv", rows)
    write_figure_csv(out_dir / "figure_data.csv", rows)
    write_manifest(out_dir / "manifest.json", config)
    print(f"wrote {out_dir / 'results.csv'} ({total_cells} rows)")
    return 0


def cmd_train(args):
    tcfg = TrainerConfig(
        learning_rate=args.lr,
        iterations=args.iters,
        batch_size=args.batch,
        seed=args.seed,
    )
    if args.bank:
        out_dir = args.out_dir or "policies"
        paths = train_policy_bank(
            out_dir, tcfg, f0=args.f0, f_gen=args.f_gen,
            progress=lambda msg: print(msg),
        )
        print(f"wrote {len(paths)} policies to {out_dir}")
        return 0

    tau = args.L / DEFAULT_CONSTANTS.c_fiber
    cfg = LinkConfig(L=args.L, Tc_int=args.tc_int_ratio * tau,
                     F_gen=args.f_gen, F0=args.f0)
    weights, trace = train_policy(
        cfg, tcfg,
        progress=lambda row: print(
            f"iter {row[0]:4d}: J_F={row[1]:.4f} J_T={row[2]*1e6:9.2f}us "
            f"u={row[3]:.3f}", file=sys.stderr),
    )
    out = args.out or f"policy_L{args.L:g}_tcr{args.tc_int_ratio:g}.mlp"
    mlp.save_weights(out, weights)
    write_trace(Path(out).with_suffix(".trace.csv"), trace)
    report = evaluate_policy(weights, cfg, args.eval_episodes, seed=args.seed + 10**6)
    print(f"wrote {out}")
    print("greedy evaluation:", report)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(args)
    if args.command == "sweep":
        return cmd_sweep(args)
    return cmd_train(args)


if __name__ == "__main__":
    sys.exit(main())
