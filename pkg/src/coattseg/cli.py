"""Command-line entry point: ``coattseg <subcommand> ...``.

Exit codes: 0 success, 1 validation/usage failure, 2 I/O or parse failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as fio
from .benchmark import Dataset, evaluate_runs, train_on_fold
from .coattention import ConfigurationError
from .episodes import (
    Episode,
    SamplingError,
    default_class_order,
    folds_document,
    generate_synthetic_dataset,
    make_folds,
)
from .gradcheck import model_gradcheck
from .model import ModelConfig, TrainingDiverged, forward_episode, load_checkpoint, save_checkpoint
from .tensor import ContractError, DimensionError

logger = logging.getLogger("coattseg")

GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _add_fold_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--scheme", choices=["pascal", "vos", "custom"], default=None)
    p.add_argument("--folds", type=int, default=None, help="fold count for the custom scheme")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coattseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("split-folds", help="write a folds.json class partition")
    p.add_argument("--scheme", choices=["pascal", "vos", "custom"], required=True)
    p.add_argument("--classes", help="class list, one label per line (default: shipped ordering)")
    p.add_argument("--folds", type=int, default=None, help="fold count for the custom scheme")
    p.add_argument("--out", default="folds.json")

    p = sub.add_parser("gen-synth", help="generate a synthetic blob dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--two-object", action="store_true")
    p.add_argument("--size", type=int, default=None, help="image side in pixels")
    p.add_argument("--frames", type=int, default=None, help="frames per sequence (video mode)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", default="8,16,6", help="C,WH,d")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")

    p = sub.add_parser("train", help="fixed-iteration training on a fold's train classes")
    _add_fold_args(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", help="JSON ModelConfig")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", required=True, help="checkpoint directory")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a fold's test classes")
    _add_fold_args(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", help="dataset directory (default: the one used for training)")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--episodes", type=int, default=100, help="episodes per run")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)

    p = sub.add_parser("render", help="write a support/query/prediction overlay PGM")
    p.add_argument("--episode", required=True, help="episode JSON, manifest line, or a file holding one")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", help="dataset directory (default: the one used for training)")
    p.add_argument("--out", required=True)
    return parser


# -- subcommands ----------------------------------------------------------------


def cmd_split_folds(args) -> int:
    classes = fio.read_class_list(args.classes) if args.classes else None
    if classes is None:
        if args.scheme == "custom":
            raise ConfigurationError("the custom scheme needs --classes")
        classes = default_class_order(args.scheme)
    folds = make_folds(classes, args.scheme, args.folds)
    fio.write_json(args.out, folds_document(classes, args.scheme, folds))
    print(f"wrote {len(folds)} folds x {len(folds[0].test_classes)} test classes to {args.out}")
    return 0


def cmd_gen_synth(args) -> int:
    overrides = {}
    if args.size is not None:
        overrides["size"] = args.size
    elif args.two_object:
        overrides["size"] = 32
    index = generate_synthetic_dataset(
        args.out,
        n_classes=args.classes,
        items_per_class=args.per_class,
        two_object=args.two_object,
        seed=args.seed,
        frames=args.frames,
        **overrides,
    )
    print(f"wrote {len(index.records)} records to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    try:
        c, wh, d = (int(x) for x in args.dims.split(","))
    except ValueError:
        raise UsageError(f"--dims must be C,WH,d integers, got {args.dims!r}") from None
    worst = 0.0
    for seed in range(args.seed, args.seed + args.seeds):
        result = model_gradcheck(seed, channels=c, locations=wh, embed_dim=d)
        logger.info("seed %d: %.3e at %s", seed, result.max_rel_error, result.worst_parameter)
        worst = max(worst, result.max_rel_error)
    ok = worst <= GRADCHECK_TOLERANCE
    print(f"max relative error {worst:.3e} ({'ok' if ok else 'FAIL'}, tolerance {GRADCHECK_TOLERANCE:g})")
    return 0 if ok else 1


def _resolve_fold(args, dataset: Dataset, meta: dict | None = None):
    scheme = args.scheme or (meta or {}).get("scheme") or "custom"
    n_folds = args.folds or (meta or {}).get("n_folds")
    folds = dataset.folds(scheme, n_folds if scheme == "custom" else None)
    if not 0 <= args.fold < len(folds):
        raise ConfigurationError(f"fold {args.fold} out of range 0..{len(folds) - 1}")
    return scheme, n_folds, folds[args.fold]


def cmd_train(args) -> int:
    config = ModelConfig.load(args.config) if args.config else ModelConfig()
    if args.seed is not None:
        config = ModelConfig.from_dict({**config.to_dict(), "seed": args.seed})
    dataset = Dataset.open(args.data)
    scheme, n_folds, fold = _resolve_fold(args, dataset)
    model, result = train_on_fold(dataset, fold, config)
    extra = {
        "data": str(Path(args.data).resolve()),
        "scheme": scheme,
        "n_folds": n_folds,
        "fold_id": fold.fold_id,
        "losses": result.losses,
    }
    save_checkpoint(args.out, model, extra)
    if result.losses:
        print(f"trained {len(result.losses)} iterations, loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}")
    else:
        print("trained 0 iterations")
    return 0


def cmd_eval(args) -> int:
    model, meta = load_checkpoint(args.ckpt)
    dataset = Dataset.open(args.data or meta["data"])
    scheme, _, fold = _resolve_fold(args, dataset, meta)
    out = evaluate_runs(model, dataset, fold, args.runs, args.seed, args.episodes, scheme)
    report = {"scheme": scheme, "fold_id": fold.fold_id, "seed": args.seed, **out}
    fio.write_json(args.report, report)
    s = out["summary"]
    print(
        f"mean-IoU {s['mean_iou']['mean']:.4f} +- {s['mean_iou']['stddev']:.4f}, "
        f"binary-IoU {s['binary_iou']['mean']:.4f} over {s['runs']} runs"
    )
    return 0


def _parse_episode(text: str, dataset: Dataset) -> Episode:
    path = Path(text)
    if not text.lstrip().startswith("{") and path.exists():
        text = path.read_text(encoding="utf-8").strip().splitlines()[0]
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise fio.ParseError(f"episode is not valid JSON ({exc.msg})") from None
    if "support" in obj:
        return Episode.from_dict(obj)
    # a manifest record: use it as the query, the first other item of its class as support
    label = obj["class"]
    root = dataset.root
    query = str(root / obj["image_or_feature_path"])
    mask = str(root / obj["mask_path"])
    others = [r for r in dataset.index.static.get(label, []) if r["image_or_feature_path"] != query]
    if not others:
        raise SamplingError(f"no other item of class {label!r} to use as support")
    return Episode(((others[0]["image_or_feature_path"], label),), query, mask, label, 0)


def _to_gray(image: np.ndarray) -> np.ndarray:
    g = image.mean(axis=0) if image.ndim == 3 else image
    lo, hi = float(g.min()), float(g.max())
    return (g - lo) / (hi - lo) if hi > lo else np.zeros_like(g)


def cmd_render(args) -> int:
    model, meta = load_checkpoint(args.ckpt)
    dataset = Dataset.open(args.data or meta["data"])
    episode = _parse_episode(args.episode, dataset)
    pred = forward_episode(episode, model, dataset.loader)
    support = _to_gray(dataset.loader.array(episode.support[0][0]))
    query = _to_gray(dataset.loader.array(episode.query))
    overlay = np.where(pred.binarized, 1.0, 0.5 * query)
    gap = np.ones((query.shape[0], 1))
    panel = np.concatenate([support, gap, query, gap, overlay], axis=1)
    panel = np.kron(panel, np.ones((4, 4)))
    fio.write_pgm(args.out, np.round(panel * 255))
    print(f"wrote {args.out}")
    return 0


COMMANDS = {
    "split-folds": cmd_split_folds,
    "gen-synth": cmd_gen_synth,
    "gradcheck": cmd_gradcheck,
    "train": cmd_train,
    "eval": cmd_eval,
    "render": cmd_render,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (fio.ParseError, fio.DataError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, ContractError, DimensionError, SamplingError,
            fio.LookupFailure, TrainingDiverged, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
