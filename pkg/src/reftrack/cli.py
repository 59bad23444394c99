"""Command-line pipeline.

Subcommands: refgen, collect, train-model, train-policy, eval, compare,
rounds, ablate, plant step-response, selftest.  Each resolves a RunConfig
from --config (JSON file) or --profile (built-in), optionally overridden by
--seed / --threads / --out, and writes artifacts under the output directory:

    refs/         train_###.traj, test_###.traj
    datasets/     train.ds, holdout.ds
    checkpoints/  model.json, policy.json
    reports/      loss curves, metrics.txt / metrics.tsv, tables
    figures/      tracking and loss-curve PNGs
    series/       per-trajectory tracking curves for external plotting

Exit codes: 0 success, 2 usage, 3 config problem or artifact/config hash
mismatch, 4 checkpoint missing or incompatible, 5 malformed data file,
1 other error.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import config as config_mod
from . import fileio, report
from .collect import collect_dataset, replay_check
from .config import ConfigError, RunConfig, config_hash, plant_hash
from .evaluate import (
    collect_holdout,
    compute_metrics,
    implement_policy,
    make_references,
    run_ablations,
    run_comparison,
    run_pipeline,
    run_rounds,
)
from .fileio import DataFormatError
from .netlib import CheckpointError, load_checkpoint, save_checkpoint
from .plant import forward_kinematics, step_response
from .selftest import run_selftest
from .train import train_model, train_policy

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_CHECKPOINT = 4
EXIT_DATA = 5


def _resolve_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = config_mod.load_config(args.config)
    else:
        cfg = config_mod.profile_config(getattr(args, "profile", None) or "desk")
    if getattr(args, "seed", None) is not None:
        cfg = config_mod.with_seed(cfg, args.seed)
    if getattr(args, "threads", None) is not None:
        cfg = replace(cfg, threads=args.threads)
    out = getattr(args, "out", None) or os.environ.get("REFTRACK_OUT")
    if out:
        cfg = replace(cfg, artifact_dir=out)
    return cfg


def _dirs(cfg: RunConfig) -> dict:
    base = cfg.artifact_dir
    d = {name: os.path.join(base, name)
         for name in ("refs", "datasets", "checkpoints", "reports", "figures", "series")}
    for path in d.values():
        os.makedirs(path, exist_ok=True)
    d["base"] = base
    return d


def _load_refs(cfg: RunConfig, dirs: dict):
    """Read reference trajectories from disk, generating them first if absent."""
    train = fileio.read_trajectories(dirs["refs"], "train", max_step=cfg.cycle.max_step)
    test = fileio.read_trajectories(dirs["refs"], "test", max_step=cfg.cycle.max_step)
    if not train or not test:
        return _cmd_refgen_impl(cfg, dirs)
    return train, test


def _cmd_refgen_impl(cfg: RunConfig, dirs: dict):
    train, test = make_references(cfg)
    h = config_hash(cfg)
    fileio.write_trajectories(train, dirs["refs"], "train", h)
    fileio.write_trajectories(test, dirs["refs"], "test", h)
    print(f"wrote {len(train)} train + {len(test)} test trajectories to {dirs['refs']}")
    return train, test


def cmd_refgen(args) -> int:
    cfg = _resolve_config(args)
    _cmd_refgen_impl(cfg, _dirs(cfg))
    return EXIT_OK


def cmd_collect(args) -> int:
    cfg = _resolve_config(args)
    dirs = _dirs(cfg)
    train, test = _load_refs(cfg, dirs)
    dataset = collect_dataset(train, cfg.plant, cfg.gains, cfg.sigma_max, cfg.noise_ratio,
                              seed=cfg.seed, threads=cfg.threads,
                              meta={"config": config_hash(cfg),
                                    "plant": plant_hash(cfg.plant)})
    replay_check(dataset, cfg.plant)
    holdout = collect_holdout(cfg, test, threads=cfg.threads)
    holdout.meta["config"] = config_hash(cfg)
    holdout.meta["plant"] = plant_hash(cfg.plant)
    fileio.write_dataset(dataset, os.path.join(dirs["datasets"], "train.ds"))
    fileio.write_dataset(holdout, os.path.join(dirs["datasets"], "holdout.ds"))
    print(f"collected {dataset.size()} transitions "
          f"({len(dataset.runs)} passes, sigma_max={cfg.sigma_max}, "
          f"ratio={cfg.noise_ratio[0]}:{cfg.noise_ratio[1]}) + "
          f"{holdout.size()} holdout transitions")
    return EXIT_OK


def cmd_train_model(args) -> int:
    cfg = _resolve_config(args)
    dirs = _dirs(cfg)
    dataset = fileio.read_dataset(os.path.join(dirs["datasets"], "train.ds"))
    holdout = fileio.read_dataset(os.path.join(dirs["datasets"], "holdout.ds"))
    log = print if args.verbose else None
    params, curve = train_model(dataset, cfg.model_train, holdout=holdout, log=log)
    path = os.path.join(dirs["checkpoints"], "model.json")
    save_checkpoint(params, path, kind="model",
                    meta={"h": cfg.model_train.h, "config": config_hash(cfg)})
    fileio.write_loss_curve(curve, os.path.join(dirs["reports"], "model_losscurve.txt"))
    report.save_loss_figure(curve, os.path.join(dirs["figures"], "model_losscurve.png"),
                            "dynamics model training")
    final = curve[-1] if curve else {}
    print(f"model trained ({len(curve)} epochs, final loss "
          f"{final.get('train_loss', float('nan')):.3e}, holdout MAE "
          f"{final.get('holdout_mae', float('nan')):.5f} rad) -> {path}")
    return EXIT_OK


def cmd_train_policy(args) -> int:
    cfg = _resolve_config(args)
    dirs = _dirs(cfg)
    dataset = fileio.read_dataset(os.path.join(dirs["datasets"], "train.ds"))
    holdout = fileio.read_dataset(os.path.join(dirs["datasets"], "holdout.ds"))
    model, _kind, _meta = load_checkpoint(os.path.join(dirs["checkpoints"], "model.json"),
                                          expect_kind="model")
    log = print if args.verbose else None
    params, curve = train_policy(dataset, model, cfg.policy_train, holdout=holdout, log=log)
    path = os.path.join(dirs["checkpoints"], "policy.json")
    save_checkpoint(params, path, kind="policy",
                    meta={"h": cfg.policy_train.h, "config": config_hash(cfg)})
    fileio.write_loss_curve(curve, os.path.join(dirs["reports"], "policy_losscurve.txt"))
    report.save_loss_figure(curve, os.path.join(dirs["figures"], "policy_losscurve.png"),
                            "adjustment policy training")
    final = curve[-1] if curve else {}
    print(f"policy trained ({len(curve)} epochs, final Po.MAE "
          f"{final.get('po_mae', float('nan')):.5f} rad) -> {path}")
    return EXIT_OK


def _check_hash(cfg: RunConfig, stored: str, what: str, force: bool) -> None:
    expect = config_hash(cfg)
    if stored and stored != "none" and stored != expect and not force:
        raise ConfigError(
            f"{what} was produced by config {stored}, current config is {expect} "
            f"(use --force to evaluate anyway)")


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    dirs = _dirs(cfg)
    _train_refs, test = _load_refs(cfg, dirs)
    policy_path = os.path.join(dirs["checkpoints"], "policy.json")
    policy, _kind, meta = load_checkpoint(policy_path, expect_kind="policy")
    _check_hash(cfg, str(meta.get("config", "")), f"checkpoint {policy_path}", args.force)
    record = implement_policy(test, policy, cfg.plant, cfg.gains, threads=cfg.threads)
    fk = lambda q: forward_kinematics(q, cfg.plant)
    rep = compute_metrics(record, fk, test, label="pd+policy")
    train_ds_path = os.path.join(dirs["datasets"], "train.ds")
    if os.path.exists(train_ds_path):
        rep.interaction_steps = fileio.read_dataset(train_ds_path).size()
    table = report.comparison_table([rep])
    with open(os.path.join(dirs["reports"], "metrics.txt"), "w") as f:
        f.write(f"# config={config_hash(cfg)} seed={cfg.seed}\n")
        f.write(table)
    fileio.write_metric_records([rep], os.path.join(dirs["reports"], "metrics.tsv"),
                                config_hash(cfg))
    report.export_run_figures(record, test, dirs["figures"])
    for run, traj in zip(record.runs, test):
        fileio.write_series(run, traj, os.path.join(dirs["series"], f"{traj.id}.tsv"))
    print(table, end="")
    print(f"reports in {dirs['reports']}, figures in {dirs['figures']}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _resolve_config(args)
    dirs = _dirs(cfg)
    _train_refs, test = _load_refs(cfg, dirs)
    model_path = os.path.join(dirs["checkpoints"], "model.json")
    policy_path = os.path.join(dirs["checkpoints"], "policy.json")
    _model, _k, mmeta = load_checkpoint(model_path, expect_kind="model")
    policy, _k, pmeta = load_checkpoint(policy_path, expect_kind="policy")
    _check_hash(cfg, str(pmeta.get("config", "")), f"checkpoint {policy_path}", args.force)
    fk = lambda q: forward_kinematics(q, cfg.plant)
    pd_record = implement_policy(test, None, cfg.plant, cfg.gains, threads=cfg.threads)
    pol_record = implement_policy(test, policy, cfg.plant, cfg.gains, threads=cfg.threads)
    pd_rep = compute_metrics(pd_record, fk, test, label="pd")
    pol_rep = compute_metrics(pol_record, fk, test, label="pd+policy")
    train_ds_path = os.path.join(dirs["datasets"], "train.ds")
    if os.path.exists(train_ds_path):
        pol_rep.interaction_steps = fileio.read_dataset(train_ds_path).size()
    table = report.comparison_table([pd_rep, pol_rep])
    with open(os.path.join(dirs["reports"], "comparison.txt"), "w") as f:
        f.write(f"# config={config_hash(cfg)} seed={cfg.seed}\n")
        f.write(table)
    fileio.write_metric_records([pd_rep, pol_rep],
                                os.path.join(dirs["reports"], "comparison.tsv"),
                                config_hash(cfg))
    report.export_run_figures(pol_record, test, dirs["figures"])
    print(table, end="")
    return EXIT_OK


def cmd_rounds(args) -> int:
    cfg = _resolve_config(args)
    dirs = _dirs(cfg)
    log = print if args.verbose else None
    results = run_rounds(cfg, n_rounds=args.rounds, log=log)
    reports = [r.report for r in results]
    table = report.comparison_table(reports)
    with open(os.path.join(dirs["reports"], "rounds.txt"), "w") as f:
        f.write(f"# config={config_hash(cfg)} seed={cfg.seed}\n")
        f.write(table)
    fileio.write_metric_records(reports, os.path.join(dirs["reports"], "rounds.tsv"),
                                config_hash(cfg))
    for r in results:
        save_checkpoint(r.model, os.path.join(dirs["checkpoints"], f"model_round{r.round}.json"),
                        kind="model", meta={"config": config_hash(cfg), "round": r.round})
        save_checkpoint(r.policy,
                        os.path.join(dirs["checkpoints"], f"policy_round{r.round}.json"),
                        kind="policy", meta={"config": config_hash(cfg), "round": r.round})
    print(table, end="")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    dirs = _dirs(cfg)
    log = print if args.verbose else None
    result = run_ablations(cfg, log=log)
    text = (f"# config={config_hash(cfg)} seed={cfg.seed}\n"
            + "noise-mix ablation (equal data volume):\n"
            + report.ablation_noise_table(result.noise_arms)
            + "\nsmoothness-weight ablation:\n"
            + report.ablation_smooth_table(result.smooth_arms))
    with open(os.path.join(dirs["reports"], "ablation.txt"), "w") as f:
        f.write(text)
    fileio.write_metric_records(
        [a.report for a in result.noise_arms + result.smooth_arms],
        os.path.join(dirs["reports"], "ablation.tsv"), config_hash(cfg))
    print(text, end="")
    return EXIT_OK


def cmd_plant_step_response(args) -> int:
    cfg = _resolve_config(args)
    dirs = _dirs(cfg)
    rows = []
    responses = []
    from .core import JOINT_NAMES

    for j, name in enumerate(JOINT_NAMES):
        t, q, qdot = step_response(cfg.plant, j, args.command, args.duration)
        responses.append((name, t, q, qdot, j))
        k, tau = cfg.plant.gain[j], cfg.plant.tau[j]
        rows.append([name, f"{k * args.command:.3f}", f"{qdot[-1, j]:.3f}",
                     f"{tau:.2f}", f"{cfg.plant.delay[j]}"])
    table = report.format_table(("joint", "k*u (rad/s)", "final qdot", "tau (s)", "delay"),
                                rows)
    path = os.path.join(dirs["reports"], "step_response.txt")
    with open(path, "w") as f:
        f.write(table)
    report.save_step_response_figure(responses,
                                     os.path.join(dirs["figures"], "step_response.png"))
    print(table, end="")
    return EXIT_OK


def cmd_selftest(args) -> int:
    return run_selftest()


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a RunConfig JSON file")
    p.add_argument("--profile", choices=sorted(config_mod.PROFILES),
                   help="built-in profile (default: desk)")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--threads", type=int, help="cap for parallel sections")
    p.add_argument("--out", help="artifact directory override")
    p.add_argument("--force", action="store_true",
                   help="skip artifact/config hash verification")
    p.add_argument("--verbose", action="store_true", help="log per-epoch progress")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reftrack",
        description="closed-loop dynamics learning and reference-trajectory adjustment")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, desc in [
        ("refgen", cmd_refgen, "generate synthetic loading-cycle reference trajectories"),
        ("collect", cmd_collect, "collect the mixed-noise closed-loop dataset"),
        ("train-model", cmd_train_model, "train the closed-loop dynamics model"),
        ("train-policy", cmd_train_policy, "train the reference adjustment policy"),
        ("eval", cmd_eval, "deploy the policy on the test set and report metrics"),
        ("compare", cmd_compare, "PD baseline vs adjustment policy table"),
        ("rounds", cmd_rounds, "continual-learning rounds"),
        ("ablate", cmd_ablate, "noise-mix and smoothness ablations"),
        ("selftest", cmd_selftest, "gradient checks and metric oracles"),
    ]:
        p = sub.add_parser(name, help=desc)
        _add_common(p)
        p.set_defaults(fn=fn)
        if name == "rounds":
            p.add_argument("--rounds", type=int, default=3)

    plant_p = sub.add_parser("plant", help="plant inspection tools")
    plant_sub = plant_p.add_subparsers(dest="plant_command", required=True)
    sr = plant_sub.add_parser("step-response", help="dump per-joint step responses")
    _add_common(sr)
    sr.add_argument("--command", type=float, default=0.5, help="command magnitude")
    sr.add_argument("--duration", type=float, default=3.0, help="seconds to simulate")
    sr.set_defaults(fn=cmd_plant_step_response)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"reftrack: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as e:
        print(f"reftrack: checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except DataFormatError as e:
        print(f"reftrack: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"reftrack: missing file: {e}", file=sys.stderr)
        return EXIT_OTHER
    except (ValueError, AssertionError, RuntimeError) as e:
        print(f"reftrack: error: {e}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
