"""Command-line surface: data generation, training, evaluation, experiments.

Subcommands:
  gen-data   write a synthetic dataset container
  train      train from a config file, write a checkpoint
  eval       evaluate a checkpoint on a dataset, print/write metrics CSV
  ablate     train + evaluate the four ablation variants
  noise      clean-vs-noisy prompt evaluation for a trained checkpoint
  gradcheck  run the finite-difference gradient-check registry

Every command exits 0 on success; any error prints one diagnostic line to
stderr and exits 1.
"""

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, load_config
from .dataset import load_dataset, save_dataset, split_by_instance, synth_dataset
from .experiments import run_ablation, run_noise_suite
from .metrics import evaluate, metrics_csv_lines, write_metrics_csv
from .train import load_checkpoint, save_checkpoint, train, write_history_csv
from .verify import run_all


def _parse_thresholds(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    values = tuple(float(part) for part in text.split(","))
    if any(t <= 0 for t in values):
        raise ValueError(f"thresholds must be positive: {text!r}")
    return values


def _split_samples(samples, cfg: ExperimentConfig, split: str):
    if split == "all":
        return samples
    categories = {"train": cfg.train_categories, "val": cfg.val_categories,
                  "test": cfg.test_categories}[split]
    chosen = [s for s in samples if s.category in categories]
    if not chosen:
        raise ValueError(f"no samples in split {split!r} "
                         f"(categories {categories})")
    return chosen


def _train_samples(samples, cfg: ExperimentConfig):
    chosen = split_by_instance(samples, cfg.train_categories,
                               cfg.train_instances)
    if not chosen:
        raise ValueError("training split is empty; check train_categories "
                         "and train_instances against the dataset")
    return chosen


def _load_data(path: str | None, cfg: ExperimentConfig | None = None):
    path = path or (cfg.data if cfg else "")
    if not path:
        raise ValueError("no dataset given: pass --data or set data= in the config")
    return load_dataset(path)


def _emit_rows(rows, out: str | None) -> None:
    print("\n".join(metrics_csv_lines(rows)))
    if out:
        write_metrics_csv(out, rows)


def _cmd_gen_data(args) -> int:
    samples = synth_dataset(args.seed, n_categories=args.categories,
                            instances=args.instances,
                            image_size=args.image_size)
    save_dataset(args.out, samples)
    print(f"wrote {len(samples)} samples "
          f"({args.categories} categories x {args.instances}) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    samples = _train_samples(_load_data(args.data, cfg), cfg)
    result = train(cfg, samples)
    save_checkpoint(args.out, cfg, result.params, result.state)
    if args.history:
        write_history_csv(args.history, result.history)
    last = result.history[-1].total if result.history else float("nan")
    print(f"trained {result.stopped_at} steps on {len(samples)} samples; "
          f"final total loss {last!r}; checkpoint: {args.out}")
    return 0


def _cmd_eval(args) -> int:
    cfg, params, _ = load_checkpoint(args.ckpt)
    samples = _split_samples(_load_data(args.data), cfg, args.split)
    row = evaluate(params, samples, cfg,
                   thresholds=_parse_thresholds(args.thresholds),
                   split_id=args.split)
    _emit_rows([row], args.out)
    return 0


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    samples = _load_data(args.data, cfg)
    if args.checkpoint_dir:
        Path(args.checkpoint_dir).mkdir(parents=True, exist_ok=True)
    rows, _ = run_ablation(cfg, samples, checkpoint_dir=args.checkpoint_dir)
    _emit_rows(rows, args.out)
    return 0


def _cmd_noise(args) -> int:
    cfg, params, _ = load_checkpoint(args.ckpt)
    samples = _split_samples(_load_data(args.data), cfg, args.split)
    report = run_noise_suite(params, cfg, samples, kind=args.kind,
                             rate=args.rate, seed=args.seed)
    _emit_rows(report.rows, args.out)
    print(f"# class_embedding_changed_fraction={report.class_changed_fraction!r}")
    if report.gates_clean is not None:
        a, b = report.gates_clean
        print(f"# mean_gates_clean={a!r},{b!r}")
        a, b = report.gates_noisy
        print(f"# mean_gates_noisy={a!r},{b!r}")
    return 0


def _cmd_gradcheck(args) -> int:
    reports = run_all(args.module)
    failed = 0
    for name, report in reports.items():
        print(f"{name}: {report}")
        failed += 0 if report.ok else 1
    if failed:
        print(f"{failed} of {len(reports)} gradient checks FAILED",
              file=sys.stderr)
        return 1
    print(f"all {len(reports)} gradient checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textpose",
        description="Text-prompted keypoint localization on synthetic scenes.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--categories", type=int, default=14)
    p.add_argument("--instances", type=int, default=8)
    p.add_argument("--image-size", type=int, default=64)
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--data", default=None, help="dataset path (overrides config)")
    p.add_argument("--history", default=None, help="per-step loss CSV path")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--thresholds", default="0.05,0.1,0.15,0.2,0.25",
                   help="comma-separated PCK thresholds; empty for loss-only")
    p.add_argument("--split", choices=("train", "val", "test", "all"),
                   default="all")
    p.add_argument("--out", default=None, help="also write the CSV here")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="run the four-variant ablation")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--checkpoint-dir", default=None)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("noise", help="evaluate prompt-noise robustness")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--kind", choices=("class", "typo"), required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"),
                   default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_noise)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--module", default=None,
                   help="run a single named check (default: all)")
    p.set_defaults(fn=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - single CLI error boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
