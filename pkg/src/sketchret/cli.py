"""Batch command-line front-end.

Subcommands: gen-data | pretrain | train | eval | plot. Every run
directory is self-contained: effective config, seed, version stamp, NDJSON
logs, and checkpoints. Exit codes: 0 success, 1 runtime failure, 2 usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys

import numpy as np

from . import __version__
from . import config as cfgmod
from . import evaluation as ev
from . import trainer as tr
from .sketch_data import load_corpus, save_corpus
from .synthetic import build_corpus

USAGE_EXIT = 2
RUNTIME_EXIT = 1


class UsageError(Exception):
    pass


def _version_stamp() -> str:
    stamp = f"sketchret {__version__}"
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=os.path.dirname(__file__),
            capture_output=True,
            text=True,
            timeout=5,
        )
        if rev.returncode == 0:
            stamp += f" ({rev.stdout.strip()})"
    except (OSError, subprocess.SubprocessError):
        pass
    return stamp


def _prepare_run_dir(cfg, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    cfgmod.write_effective_config(cfg, os.path.join(out_dir, "config.effective"))
    with open(os.path.join(out_dir, "version.txt"), "w", encoding="utf-8") as fh:
        fh.write(_version_stamp() + "\n")


def _load_cfg(args, extra_overrides=None) -> cfgmod.ExperimentConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if getattr(args, "cycles", None) is not None:
        overrides["cycles"] = args.cycles
    if getattr(args, "no_iw", False):
        overrides["iw"] = False
    if getattr(args, "no_tr", False):
        overrides["tr"] = False
    if getattr(args, "attn_1d", False):
        overrides["at"] = False
    if getattr(args, "no_jt", False):
        overrides["jt"] = False
    overrides.update(extra_overrides or {})
    return cfgmod.load_config(args.config, cli_overrides=overrides)


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    out = args.out or cfg.data_dir
    if os.path.exists(out) and os.listdir(out) and not args.force:
        raise UsageError(f"output directory {out!r} exists; pass --force to overwrite")
    try:
        spec = cfg.shape_spec().validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    corpus = build_corpus(spec, cfg.n_labeled, cfg.n_unlabeled, cfg.n_test, cfg.seed)
    os.makedirs(out, exist_ok=True)
    save_corpus(out, corpus)
    offsets = np.concatenate([p.sketch.offsets.reshape(-1) for p in corpus.labeled.pairs])
    print(f"corpus written to {out}")
    print(f"  labeled pairs : {len(corpus.labeled)}")
    print(f"  unlabeled     : {len(corpus.unlabeled)}")
    print(f"  test pairs    : {len(corpus.test)}")
    print(f"  offset std    : {np.std(offsets):.6f}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    out = args.out or cfg.out_dir
    corpus = load_corpus(cfg.data_dir)
    _prepare_run_dir(cfg, out)
    logger = tr.TrainLogger(out)
    try:
        models = tr.pretrain(corpus, cfg.train_config(), logger, out_dir=out)
    finally:
        logger.close()
    cache = tr.DataCache(corpus, cfg.train_config())
    metrics = tr.evaluate(models, cache, cfg.train_config())
    with open(os.path.join(out, "pretrain_metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=2)
    print(f"pretraining complete; checkpoints under {out}/checkpoints")
    for key, value in sorted(metrics.items()):
        print(f"  {key}: {value:.4f}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = args.out or cfg.out_dir
    if tr.latest_step(out) is None:
        raise UsageError(
            f"no pre-trained checkpoints under {out!r}; run 'sketchret pretrain --out {out}' first"
        )
    corpus = load_corpus(cfg.data_dir)
    _prepare_run_dir(cfg, out)
    result = tr.run_pipeline(corpus, cfg.train_config(), out_dir=out, resume=True)
    print(f"joint training complete; metrics -> {out}/metrics.json")
    for key, value in sorted(result["metrics"].items()):
        print(f"  {key}: {value:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    out = args.out or cfg.out_dir
    step = args.checkpoint
    if tr.latest_step(out) is None:
        raise UsageError(f"no checkpoints under {out!r}; nothing to evaluate")
    corpus = load_corpus(cfg.data_dir)
    tcfg = cfg.train_config()
    models = tr.load_models(out, tcfg, step=step)
    cache = tr.DataCache(corpus, tcfg)
    metrics = tr.evaluate(models, cache, tcfg, with_fid=True)

    eval_dir = os.path.join(out, "eval")
    os.makedirs(eval_dir, exist_ok=True)
    with open(os.path.join(eval_dir, "metrics.ndjson"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"checkpoint": step or tr.latest_step(out), **metrics}, sort_keys=True) + "\n")
    with open(os.path.join(eval_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(sorted(metrics))
        writer.writerow([metrics[k] for k in sorted(metrics)])

    n_pairs = min(cfg.consistency_pairs, len(cache.unlabeled_ids))
    if n_pairs >= 20:
        ids, photos = cache.unlabeled_batch(np.arange(n_pairs))
        table = tr.certainty_consistency_eval(models, photos, ids, tcfg, seed=tcfg.seed)
        with open(os.path.join(eval_dir, "consistency.csv"), "w", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin", "lo", "hi", "count", "mean_arp"])
            for row in table:
                writer.writerow([row["bin"], row["lo"], row["hi"], row["count"], row["mean_arp"]])
    print(f"evaluation written to {eval_dir}")
    for key, value in sorted(metrics.items()):
        print(f"  {key}: {value:.4f}")
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cfg = _load_cfg(args)
    out = args.out or cfg.out_dir
    log_path = os.path.join(out, "train.ndjson")
    records = []
    if os.path.exists(log_path):
        with open(log_path, "r", encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
    plots_dir = os.path.join(out, "plots")
    made = []

    by_phase = {}
    for r in records:
        by_phase.setdefault(r.get("phase"), []).append(r)
    loss_keys = {
        "pretrain_gen": "total",
        "pretrain_ret": "triplet",
        "retrieval": "total",
        "discriminator": "d_loss",
        "generator": "vae",
    }
    curves = {p: [r[k] for r in rows if k in r] for p, rows in by_phase.items() for k in [loss_keys.get(p)] if k}
    curves = {p: v for p, v in curves.items() if v}
    if curves:
        os.makedirs(plots_dir, exist_ok=True)
        fig, ax = plt.subplots(figsize=(7, 4))
        for phase, values in sorted(curves.items()):
            ax.plot(values, label=phase)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend()
        fig.tight_layout()
        fig.savefig(os.path.join(plots_dir, "losses.png"), dpi=120)
        plt.close(fig)
        made.append("losses.png")

    consistency_path = os.path.join(out, "eval", "consistency.csv")
    if os.path.exists(consistency_path):
        with open(consistency_path, "r", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if rows:
            os.makedirs(plots_dir, exist_ok=True)
            fig, ax = plt.subplots(figsize=(5.5, 4))
            ax.plot([float(r["lo"]) + 0.05 for r in rows], [float(r["mean_arp"]) for r in rows], "o-")
            ax.set_xlabel("certainty score level")
            ax.set_ylabel("mean ARP")
            ax.set_xlim(0, 1)
            fig.tight_layout()
            fig.savefig(os.path.join(plots_dir, "certainty.png"), dpi=120)
            plt.close(fig)
            made.append("certainty.png")

    sweep_path = os.path.join(out, "sweep.csv")
    if os.path.exists(sweep_path):
        with open(sweep_path, "r", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if rows:
            os.makedirs(plots_dir, exist_ok=True)
            fig, ax = plt.subplots(figsize=(5.5, 4))
            for mode in ("semi", "supervised"):
                pts = {}
                for r in rows:
                    if r["mode"] == mode and r.get("acc1"):
                        pts.setdefault(float(r["fraction"]), []).append(float(r["acc1"]))
                if pts:
                    xs = sorted(pts)
                    ax.plot(xs, [float(np.mean(pts[x])) for x in xs], "o-", label=mode)
            ax.set_xlabel("labeled fraction")
            ax.set_ylabel("Acc@1")
            ax.legend()
            fig.tight_layout()
            fig.savefig(os.path.join(plots_dir, "sweep.png"), dpi=120)
            plt.close(fig)
            made.append("sweep.png")

    if not made:
        print("error: no data to plot (empty or missing logs)", file=sys.stderr)
        return RUNTIME_EXIT
    print(f"plots written to {plots_dir}: {', '.join(made)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sketchret",
        description="Semi-supervised sketch-to-photo retrieval experiments (batch, non-interactive).",
    )
    parser.add_argument("--version", action="version", version=_version_stamp())
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the experiment seed")
        p.add_argument("--out", default=None, help=out_help)

    p = sub.add_parser("gen-data", help="write a synthetic photo-sketch corpus")
    common(p, "corpus output directory (default: config data_dir)")
    p.add_argument("--force", action="store_true", help="overwrite an existing corpus directory")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("pretrain", help="pre-train generator and retrieval, snapshot the teacher")
    common(p, "run directory (default: config out_dir)")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("train", help="run the joint semi-supervised loop (resumes from the run dir)")
    common(p, "run directory with pretrain checkpoints")
    p.add_argument("--cycles", type=int, default=None, help="number of additional cycles to run")
    p.add_argument("--no-iw", action="store_true", help="disable instance weighting")
    p.add_argument("--no-tr", action="store_true", help="disable teacher regularisation")
    p.add_argument("--attn-1d", action="store_true", help="use 1D attention in the generator")
    p.add_argument("--no-jt", action="store_true", help="disable joint generator training")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint: Acc@q, ARP, FID, consistency")
    common(p, "run directory holding checkpoints")
    p.add_argument("--checkpoint", type=int, default=None, help="checkpoint step (default: latest)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("plot", help="render figures from run logs")
    common(p, "run directory holding logs")
    p.set_defaults(fn=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
