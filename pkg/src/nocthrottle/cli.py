"""Command-line front end.

    nocthrottle simulate --policy baseline --seed 3
    nocthrottle collect  --desk --out runs/a
    nocthrottle label    --out runs/a
    nocthrottle train    --out runs/a --depth 4
    nocthrottle eval     --desk --out runs/a
    nocthrottle sweep    --desk --out runs/a      # collect, label, train, eval
    nocthrottle report   --out runs/a

Every command takes ``--config``, ``--seed``, ``--policy``, ``--sweep``,
``--desk`` and ``--out``; the output root defaults to ``$NOCTHROTTLE_OUT``.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from . import pipeline
from .config import OUTPUT_ROOT_ENV, POLICIES, RunConfig, load_config
from .errors import ConfigError, LivelockError, ModelLoadError, NocError, TrainingError
from .metrics import compute_metrics, metrics_csv

log = logging.getLogger("nocthrottle")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MODEL = 4
EXIT_SIMULATION = 5


def _parse_rates(text: str) -> tuple:
    try:
        rates = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rate list {text!r}") from None
    if not rates:
        raise argparse.ArgumentTypeError("empty rate list")
    return rates


def _parse_depths(text: str) -> tuple:
    try:
        if "-" in text:
            lo, hi = (int(x) for x in text.split("-", 1))
            return tuple(range(lo, hi + 1))
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad depth list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the seed (and drop any seed list)")
    common.add_argument("--policy", choices=POLICIES, help="throttling policy")
    common.add_argument("--sweep", type=_parse_rates, help="comma-separated injection rates")
    common.add_argument("--desk", action="store_true", help="100k-cycle desk scale with the desk rate sweep")
    common.add_argument("--out", type=Path, help=f"output root (default ${OUTPUT_ROOT_ENV} or ./nocthrottle-out)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="nocthrottle", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="run one simulation per (rate, seed)")
    sub.add_parser("collect", parents=[common], help="simulate with feature sampling on")

    p = sub.add_parser("label", parents=[common], help="label collected features")
    p.add_argument("--delta", type=int, help="labeling window (default: config)")

    p = sub.add_parser("train", parents=[common], help="depth sweep and per-sink models")
    p.add_argument("--delta", type=int, help="labeling window when labels are missing")
    p.add_argument("--depth", type=int, help="depth of the saved models (default: config)")
    p.add_argument("--depths", type=_parse_depths, default=pipeline.SWEEP_DEPTHS,
                   help="depths to sweep, e.g. 2-8 (default 2-8)")
    p.add_argument("--shared", action="store_true", help="one model for all sinks")

    p = sub.add_parser("eval", parents=[common], help="compare policies on identical workloads")
    p.add_argument("--policies", default="none,baseline,proposed")

    p = sub.add_parser("sweep", parents=[common], help="collect, label, train and evaluate")
    p.add_argument("--depth", type=int)
    p.add_argument("--policies", default="none,baseline,proposed")

    sub.add_parser("report", parents=[common], help="print the accuracy and comparison reports")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg.with_seed(args.seed), seeds=())
    if args.policy is not None:
        cfg = cfg.with_policy(args.policy)
    if args.sweep is not None:
        cfg = replace(cfg, sweep=args.sweep)
    if args.desk:
        cfg = cfg.desk()
    if args.out is not None:
        cfg = replace(cfg, out=str(args.out))
    return cfg


def _policies(text: str) -> List[str]:
    names = [p.strip() for p in text.split(",") if p.strip()]
    bad = [p for p in names if p not in POLICIES]
    if bad or not names:
        raise ConfigError(f"unknown policies {bad}; choose from {POLICIES}")
    return names


# -- commands ----------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> int:
    from .engine import run

    out = cfg.output_dir() / "simulate"
    pipeline.echo_config(cfg, out)
    rows = []
    for rate, seed, c in pipeline._run_configs(cfg):
        res = run(c)
        name = pipeline.run_name(rate, seed)
        res.trace.write(_mkdir(out / name) / "trace.csv")
        m = compute_metrics(res.trace)
        rows.append({"policy": c.controller.policy, "rate": rate, "seed": seed, **m.as_row()})
        print(f"{name}: " + "  ".join(f"{k}={v:.4g}" for k, v in m.as_row().items()))
    pipeline.write_atomic(out / "metrics.csv", metrics_csv(rows))
    return EXIT_OK


def cmd_collect(cfg: RunConfig) -> int:
    out = cfg.output_dir()
    written = pipeline.collect(cfg, out)
    for name, paths in written.items():
        print(f"{name}: {len(paths)} sink files under {out / 'collect' / name}")
    return EXIT_OK


def cmd_label(cfg: RunConfig, delta: Optional[int]) -> int:
    out = cfg.output_dir()
    delta = cfg.controller.delta if delta is None else delta
    summary = pipeline.label(out / "collect", out / "labeled", delta)
    ones = sum(s["label1"] for s in summary.values())
    total = sum(s["samples"] for s in summary.values())
    print(f"labeled {total} samples in {len(summary)} files (delta={delta}, label-1: {ones})")
    return EXIT_OK


def cmd_train(cfg: RunConfig, depth: Optional[int], depths: Sequence[int], shared: bool,
              delta: Optional[int] = None) -> int:
    out = cfg.output_dir()
    c = cfg.controller
    if not (out / "labeled").exists():
        cmd_label(cfg, delta)
    datasets = pipeline.load_labeled(out / "labeled")
    result = pipeline.train_models(
        datasets, depths=depths, depth=c.depth if depth is None else depth, shared=shared or c.shared_model,
        train_fraction=c.train_fraction, seed=cfg.seed, min_leaf=c.min_leaf, class_weight=c.class_weight,
        delta=c.delta if delta is None else delta)
    pipeline.save_models(result, out / "models")
    print(result.table)
    print(f"recommended depth: {result.recommended_depth}; saved depth: {result.chosen_depth}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, policies: Sequence[str]) -> int:
    out = cfg.output_dir()
    if "proposed" in policies and not cfg.controller.model_dir:
        cfg = replace(cfg, controller=replace(cfg.controller, model_dir=str(out / "models")))
    pipeline.echo_config(cfg, out / "eval")
    result = pipeline.evaluate(cfg, policies)
    pipeline.write_eval(result, out / "eval", policies)
    comparison = out / "eval" / "comparison.txt"
    if comparison.exists():
        print(comparison.read_text())
    else:
        print(f"wrote {len(result.rows)} runs to {out / 'eval' / 'metrics.csv'}")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    out = cfg.output_dir()
    parts = []
    for rel in ("models/accuracy.txt", "eval/comparison.txt"):
        path = out / rel
        if path.exists():
            parts.append(f"== {rel} ==\n{path.read_text().rstrip()}\n")
    if not parts:
        raise FileNotFoundError(f"nothing to report under {out}")
    text = "\n".join(parts)
    pipeline.write_atomic(out / "report.txt", text)
    print(text)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, depth: Optional[int], policies: Sequence[str]) -> int:
    if cfg.controller.policy == "proposed":
        cfg = cfg.with_policy("none")  # collection never runs the learned policy
    start = time.monotonic()
    steps = [
        ("collect", lambda: cmd_collect(cfg)),
        ("label", lambda: cmd_label(cfg, None)),
        ("train", lambda: cmd_train(cfg, depth, pipeline.SWEEP_DEPTHS, False)),
        ("eval", lambda: cmd_eval(cfg, policies)),
        ("report", lambda: cmd_report(cfg)),
    ]
    for name, step in steps:
        t0 = time.monotonic()
        step()
        log.info("%s done in %.1fs", name, time.monotonic() - t0)
    print(f"pipeline finished in {time.monotonic() - start:.1f}s")
    return EXIT_OK


def _mkdir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def dispatch(args) -> int:
    cfg = resolve_config(args)
    cmd = args.command
    if cmd == "simulate":
        return cmd_simulate(cfg)
    if cmd == "collect":
        return cmd_collect(cfg)
    if cmd == "label":
        return cmd_label(cfg, args.delta)
    if cmd == "train":
        return cmd_train(cfg, args.depth, args.depths, args.shared, args.delta)
    if cmd == "eval":
        return cmd_eval(cfg, _policies(args.policies))
    if cmd == "sweep":
        return cmd_sweep(cfg, args.depth, _policies(args.policies))
    return cmd_report(cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelLoadError, TrainingError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except LivelockError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except NocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
