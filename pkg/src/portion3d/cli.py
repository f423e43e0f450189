"""Command-line operator surface.

Commands: gen-data, reconstruct, train, eval, ablate, gradcheck. stdout
carries machine-parseable key=value lines; human prose goes to stderr.
Exit codes: 0 success, 2 config error, 3 I/O or file-format error,
4 unknown sample or variant, 5 numerical failure, 6 gradcheck failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dataset import (
    GeneratorConfig,
    build_dataset,
    generator_config_from_dict,
    load_manifest,
)
from .errors import ConfigError, FormatError, NumericalError, PortionError
from .evaluation import evaluate, run_ablation, write_report
from .formats import read_ply, write_ply
from .training import (
    TrainConfig,
    VARIANTS,
    load_checkpoint,
    save_checkpoint,
    train,
    train_config_from_dict,
    variant_cloud,
    write_history_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_UNKNOWN = 4
EXIT_NUMERICAL = 5
EXIT_GRADCHECK = 6


def _say(text: str) -> None:
    print(text, file=sys.stderr)


def _emit(**kv) -> None:
    print(" ".join(f"{key}={value}" for key, value in kv.items()))


def _load_json(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}"
        ) from exc


def cmd_gen_data(args) -> int:
    config = GeneratorConfig()
    if args.config:
        config = generator_config_from_dict(_load_json(args.config))
    if args.seed is not None:
        config = generator_config_from_dict(
            {**_config_dict(config), "seed": args.seed}
        )
    manifest = build_dataset(config, args.out)
    n_train = len(manifest.split_samples("train"))
    n_test = len(manifest.split_samples("test"))
    _emit(
        samples=len(manifest.samples),
        train=n_train,
        test=n_test,
        seed=config.seed,
        manifest=Path(args.out) / "manifest.json",
    )
    return EXIT_OK


def _config_dict(config: GeneratorConfig) -> dict:
    return {
        "n_samples": config.n_samples,
        "split_fraction": config.split_fraction,
        "seed": config.seed,
        "image_size": config.image_size,
        "focal_px": config.focal_px,
        "n_points": config.n_points,
        "fill_lo": config.fill_lo,
        "fill_hi": config.fill_hi,
        "size_ratio": config.size_ratio,
        "base_size": config.base_size,
        "classes": [
            {
                "id": c.id,
                "name": c.name,
                "energy_density": c.energy_density,
                "albedo": list(c.albedo),
            }
            for c in config.classes
        ],
    }


def cmd_reconstruct(args) -> int:
    manifest = load_manifest(Path(args.manifest))
    if args.variant not in VARIANTS:
        _say(f"unknown variant {args.variant!r}; valid variants: {', '.join(VARIANTS)}")
        return EXIT_UNKNOWN
    try:
        sample = manifest.sample_by_id(args.sample)
    except ConfigError:
        _say(f"unknown sample id {args.sample}")
        return EXIT_UNKNOWN
    n_points = len(read_ply(manifest.path(sample.gtpc)))
    config = TrainConfig(
        variant=args.variant,
        n_points=n_points,
        k_neighbors=min(16, max(1, n_points - 1)),
    )
    cloud = variant_cloud(manifest, sample, config)
    write_ply(cloud, args.out)
    lo, hi = cloud.bounds()
    _emit(
        sample=sample.id,
        variant=args.variant,
        points=len(cloud),
        out=args.out,
        bbox_min="({:.6g},{:.6g},{:.6g})".format(*lo),
        bbox_max="({:.6g},{:.6g},{:.6g})".format(*hi),
    )
    return EXIT_OK


def cmd_train(args) -> int:
    config = TrainConfig()
    if args.config:
        config = train_config_from_dict(_load_json(args.config))
    if args.seed is not None:
        config = train_config_from_dict({**config.to_dict(), "seed": args.seed})
    manifest = load_manifest(Path(args.manifest))
    _say(
        f"training {config.attribute} model: modality={config.modality} "
        f"variant={config.variant} epochs={config.epochs}"
    )
    ckpt = train(manifest, config)
    save_checkpoint(ckpt, args.out)
    history_path = Path(args.out).with_suffix(".history.csv")
    write_history_csv(ckpt.history, history_path)
    _emit(
        checkpoint=args.out,
        history=history_path,
        epochs=config.epochs,
        final_train_l1=repr(float(ckpt.history[-1])),
        input_digest=ckpt.input_digest,
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    manifest = load_manifest(Path(args.manifest))
    row = evaluate(ckpt, manifest, split=args.split)
    _emit(
        attribute=row.attribute,
        mae=repr(row.mae),
        mape=repr(row.mape),
        modality=row.modality,
        variant=row.variant,
        n_test=row.n_test,
    )
    return EXIT_OK


def cmd_ablate(args) -> int:
    manifest = load_manifest(Path(args.manifest))
    base = TrainConfig(epochs=40)  # lighter default than cmd_train; grid is 12x replicates runs
    if args.config:
        base = train_config_from_dict(_load_json(args.config))
    if args.seed is not None:
        base = train_config_from_dict({**base.to_dict(), "seed": args.seed})

    def progress(task, outcome):
        modality, variant, attribute, replicate = task
        status = "ok" if not isinstance(outcome, Exception) else f"failed: {outcome}"
        _say(f"replicate {replicate} {modality}/{variant}/{attribute}: {status}")

    report = run_ablation(
        manifest, base, replicates=args.replicates, jobs=args.jobs, progress=progress
    )
    csv_path, json_path = write_report(report, args.out)
    trends = report.metadata["trends"]
    _emit(
        report_csv=csv_path,
        report_json=json_path,
        rows=len(report.rows),
        trend_a=trends["trend_a"]["verdict"],
        trend_b=trends["trend_b"]["verdict"],
        trend_c=trends["trend_c"]["verdict"],
    )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(n_seeds=args.seeds)
    failures = [r for r in results if not r.passed]
    worst: dict = {}
    for r in results:
        if r.name not in worst or r.max_rel_err > worst[r.name].max_rel_err:
            worst[r.name] = r
    for name in sorted(worst):
        r = worst[name]
        _emit(
            check=name,
            max_rel_err=f"{r.max_rel_err:.3e}",
            tolerance=f"{r.tolerance:.0e}",
            status="pass" if r.passed else "fail",
        )
    _emit(checks=len(results), failures=len(failures))
    return EXIT_OK if not failures else EXIT_GRADCHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="portion3d",
        description="Synthetic monocular food-portion estimation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", default=None, help="generator config JSON")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("reconstruct", help="write one sample's point-cloud variant as PLY")
    p.add_argument("--manifest", required=True, help="dataset manifest.json")
    p.add_argument("--sample", type=int, required=True, help="sample id")
    p.add_argument("--variant", required=True, help=f"one of {', '.join(VARIANTS)}")
    p.add_argument("--out", required=True, help="output PLY path")
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("train", help="train one regression model")
    p.add_argument("--config", default=None, help="train config JSON")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the modality x variant x attribute grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--config", default=None, help="base train config JSON")
    p.add_argument("--seed", type=int, default=None, help="override base seed")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        _say(f"config error: {exc}")
        return EXIT_CONFIG
    except NumericalError as exc:
        _say(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
    except (FormatError, OSError) as exc:
        _say(f"i/o error: {exc}")
        return EXIT_IO
    except PortionError as exc:
        _say(f"error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
