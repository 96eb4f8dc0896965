"""Single entry-point command line: every pipeline stage as a subcommand.

Exit codes: 0 success, 1 usage, 2 validation failure, 3 runtime failure.
Commands write machine-readable artifacts (JSON/JSONL) next to the
human-readable tables they print.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import applications, rasters
from .annotation import AnnotationService, serve
from .dataset import (
    DatasetManifest,
    DatasetValidationError,
    SynthSpec,
    load_and_validate,
    standin_smoother,
    synth_generate,
    vote_statistics,
)
from .groundtruth import GroundTruthError
from .losses import NeighborhoodSpec
from .metrics import MetricError, greedy_param_search, pooled_errors
from .models import CheckpointError, load_checkpoint, save_checkpoint
from .reports import (
    LeaderboardRow,
    format_leaderboard,
    format_timing_table,
    leaderboard_jsonl,
    rows_from_report,
    timing_jsonl,
)
from .trainer import (
    TrainConfig,
    TrainingError,
    evaluate_split,
    resnet_mini_config,
    resnet_paper_config,
    timeit,
    train,
    vdcnn_mini_config,
    vdcnn_paper_config,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

PRESETS = {
    "vdcnn-paper": vdcnn_paper_config,
    "resnet-paper": resnet_paper_config,
    "vdcnn-mini": vdcnn_mini_config,
    "resnet-mini": resnet_mini_config,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _smoother_from_spec(spec: str):
    """identity | gaussian:SIGMA | standin:M,P | checkpoint:PATH"""
    if spec == "identity":
        return applications.identity_smoother, "identity"
    if spec.startswith("gaussian:"):
        sigma = float(spec.split(":", 1)[1])
        return applications.gaussian_smoother(sigma), f"gaussian({sigma:g})"
    if spec.startswith("standin:"):
        m, p = (int(v) for v in spec.split(":", 1)[1].split(","))
        return (lambda img: np.clip(standin_smoother(img, m, p), 0.0, 1.0),
                f"m{m}_p{p}")
    if spec.startswith("checkpoint:"):
        path = spec.split(":", 1)[1]
        model = load_checkpoint(path)
        return applications.model_smoother(model), Path(path).stem
    raise DatasetValidationError(f"unknown smoother spec {spec!r}")


def _require(path, kind="path"):
    if not Path(path).exists():
        raise DatasetValidationError(f"{kind} does not exist: {path}")
    return Path(path)


# ---------------------------------------------------------------------------
# subcommand handlers


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_train=args.train, n_test=args.test, height=args.size, width=args.size,
        seed=args.seed, votes_per_image=args.votes_per_image,
        vote_mode=args.vote_mode,
        concentrated_target=tuple(int(v) for v in args.vote_target.split(",")))
    manifest_path, _ = synth_generate(spec, args.out)
    print(f"wrote {manifest_path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    ds = load_and_validate(_require(args.data, "manifest"))
    print(f"ok: {len(ds.manifest.images)} images, {len(ds.records)} votes, "
          f"mode={ds.manifest.mode}")
    return EXIT_OK


def cmd_stats(args) -> int:
    ds = load_and_validate(_require(args.data, "manifest"))
    stats = vote_statistics(ds)
    top_m, top_votes = stats.top_method()
    lines = [f"images: {stats.n_images}   votes: {stats.total_votes}"]
    lines.append("votes per method: " + " ".join(
        f"m{m + 1}={int(v)}" for m, v in enumerate(stats.per_method)))
    lines.append(f"top method: m{top_m} with {top_votes} of {stats.total_votes} choices")
    lines.append("votes per setting of top method: " + " ".join(
        f"p{p + 1}={int(v)}" for p, v in enumerate(stats.per_param[top_m - 1])))
    lines.append("max repeated choices distribution: " + " ".join(
        f"{k}:{v}" for k, v in stats.max_repeat_hist.items()))
    ge3 = stats.images_with_max_repeat_at_least(3)
    lines.append(f"images with max repeated choices >= 3: {ge3} (out of {stats.n_images})")
    text = "\n".join(lines)
    print(text)
    if args.json:
        doc = {
            "images": stats.n_images,
            "votes": stats.total_votes,
            "per_method": [int(v) for v in stats.per_method],
            "per_param": [[int(v) for v in row] for row in stats.per_param],
            "top_method": top_m,
            "top_method_votes": top_votes,
            "max_repeat_hist": {str(k): v for k, v in stats.max_repeat_hist.items()},
            "max_repeat_ge3": ge3,
        }
        Path(args.json).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def _model_rows(ds, split, checkpoints, names, mode):
    rows = []
    sets = ds.groundtruth_sets(split)
    for path, name in zip(checkpoints, names):
        model = load_checkpoint(_require(path, "checkpoint"))
        from .models import forward
        outputs = {t: forward(model, ds.source(t)) for t in sets}
        r, a = pooled_errors(outputs, sets, mode=mode)
        rows.append(LeaderboardRow(name, r, None, a, None))
    return rows


METRIC_MODES = {"default": "entry", "strict-paper": "paper"}


def cmd_evaluate(args) -> int:
    ds = load_and_validate(_require(args.data, "manifest"))
    args.mode = METRIC_MODES[args.mode]
    split = args.split
    sets = ds.groundtruth_sets(split)
    if not sets:
        raise DatasetValidationError(f"split {split!r} is empty")
    report = greedy_param_search(ds.candidate_grid(split), sets, mode=args.mode)
    rows = rows_from_report(report)
    names = args.name or [Path(c).stem for c in args.checkpoint]
    if len(names) != len(args.checkpoint):
        raise DatasetValidationError("--name count must match --checkpoint count")
    rows += _model_rows(ds, split, args.checkpoint, names, args.mode)
    table = format_leaderboard(rows)
    print(table, end="")
    if args.out:
        Path(args.out + ".txt").write_text(table)
        Path(args.out + ".jsonl").write_text(leaderboard_jsonl(rows))
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    ds = load_and_validate(_require(args.data, "manifest"))
    args.mode = METRIC_MODES[args.mode]
    sets = ds.groundtruth_sets(args.split)
    report = greedy_param_search(ds.candidate_grid(args.split), sets, mode=args.mode)
    for m in report.methods:
        cells = " ".join(f"p{p}={m.wrmse_by_param[p]:.2f}"
                         for p in sorted(m.wrmse_by_param))
        print(f"{m.name}: WRMSE {cells}  min={m.wrmse_min:.2f} at p={m.wrmse_argp}")
    if args.out:
        doc = {m.name: {
            "wrmse": {str(p): v for p, v in m.wrmse_by_param.items()},
            "wmae": {str(p): v for p, v in m.wmae_by_param.items()},
            "wrmse_min": m.wrmse_min, "wrmse_argp": m.wrmse_argp,
            "wmae_min": m.wmae_min, "wmae_argp": m.wmae_argp,
        } for m in report.methods}
        Path(args.out).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_and_validate(_require(args.data, "manifest"))
    overrides = {}
    if args.config:
        overrides.update(json.loads(Path(_require(args.config, "config")).read_text()))
    if args.steps is not None:
        overrides["max_steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.loss is not None:
        overrides["loss"] = args.loss
    config = PRESETS[args.preset](**overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(rec):
        print(f"step {rec['step']}: loss {rec['loss_norm']:.5f} lr {rec['lr']:g}",
              file=sys.stderr)

    result = train(ds, config, progress=progress if args.verbose else None)
    ckpt_path = out / "model.ckpt"
    save_checkpoint(result.model, ckpt_path, optimizer=result.optimizer,
                    metadata={"steps": result.steps, "preset": args.preset,
                              "lr": result.optimizer.lr})
    (out / "train_log.jsonl").write_text(result.log.to_jsonl())
    if result.aborted:
        print(f"aborted: {result.abort_reason}; last good checkpoint at {ckpt_path}",
              file=sys.stderr)
        return EXIT_RUNTIME
    print(f"trained {result.steps} steps -> {ckpt_path}")
    return EXIT_OK


def cmd_infer(args) -> int:
    model = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    img = rasters.load_image(_require(args.input, "input image"))
    from .models import forward
    rasters.save_image(args.output, forward(model, img))
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_timeit(args) -> int:
    ds = load_and_validate(_require(args.data, "manifest"))
    ids = ds.split_ids(args.split)
    images = [ds.source(t) for t in ids]
    rows = []
    for spec in args.smoother:
        smoother, name = _smoother_from_spec(spec)
        res = timeit(smoother, images, name=name, warmup=args.warmup)
        rows.append((res.name, res.mean_seconds))
    table = format_timing_table(rows)
    print(table, end="")
    if args.out:
        Path(args.out + ".txt").write_text(table)
        Path(args.out + ".jsonl").write_text(timing_jsonl(rows))
    return EXIT_OK


def cmd_tonemap(args) -> int:
    hdr = applications.HdrImage(rasters.read_pfm(_require(args.input, "HDR input")))
    smoother, _ = _smoother_from_spec(args.smoother)
    out = applications.tone_map(hdr, smoother, compression=args.compression)
    rasters.save_image(args.output, out)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    img = rasters.load_image(_require(args.input, "input image"))
    smoother, _ = _smoother_from_spec(args.smoother)
    out = applications.contrast_enhance(img, smoother, gamma=args.gamma)
    rasters.save_image(args.output, out)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_serve(args) -> int:
    manifest_path = _require(args.data, "manifest")
    manifest = DatasetManifest.load(manifest_path)
    volunteers = [f"v{i + 1:02d}" for i in range(args.volunteers)]
    service = AnnotationService(
        Path(manifest_path).parent, manifest, volunteers,
        votes_per_image=args.votes_per_image, seed=args.seed)
    serve(service, host=args.host, port=args.port, ui_dir=args.ui)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="epsbench",
                     description="Edge-preserving smoothing benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic fixture dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--train", type=int, default=4, help="training images")
    p.add_argument("--test", type=int, default=1, help="test images")
    p.add_argument("--size", type=int, default=64, help="square image extent")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--votes-per-image", type=int, default=14)
    p.add_argument("--vote-mode", choices=["spread", "concentrated"], default="spread")
    p.add_argument("--vote-target", default="6,4",
                   help="method,param receiving all votes in concentrated mode")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("validate", help="validate a dataset directory")
    p.add_argument("--data", required=True, help="path to manifest.json")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("stats", help="vote statistics tables")
    p.add_argument("--data", required=True)
    p.add_argument("--json", help="also write machine-readable stats here")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("evaluate", help="leaderboard of methods (and checkpoints)")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--mode", default="default", choices=["default", "strict-paper"],
                   help="metric pooling convention")
    p.add_argument("--checkpoint", action="append", default=[],
                   help="add a trained model row (repeatable)")
    p.add_argument("--name", action="append", default=None,
                   help="display name per --checkpoint")
    p.add_argument("--out", help="prefix for .txt/.jsonl artifacts")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("gridsearch", help="full WRMSE/WMAE grid per method")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--mode", default="default", choices=["default", "strict-paper"])
    p.add_argument("--out", help="write the grid as JSON here")
    p.set_defaults(fn=cmd_gridsearch)

    p = sub.add_parser("train", help="train a baseline model")
    p.add_argument("--data", required=True)
    p.add_argument("--preset", default="resnet-mini", choices=sorted(PRESETS))
    p.add_argument("--config", help="JSON file of TrainConfig overrides")
    p.add_argument("--steps", type=int, help="override max_steps")
    p.add_argument("--seed", type=int, help="override sampling seed")
    p.add_argument("--loss", choices=["l2", "l1", "l1+nb"], help="override loss")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="smooth one image with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("timeit", help="mean seconds per image for smoothers")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--smoother", action="append", required=True,
                   help="identity | gaussian:S | standin:M,P | checkpoint:PATH")
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--out", help="prefix for .txt/.jsonl artifacts")
    p.set_defaults(fn=cmd_timeit)

    p = sub.add_parser("tonemap", help="HDR to LDR via base/detail decomposition")
    p.add_argument("--input", required=True, help="PFM radiance image")
    p.add_argument("--output", required=True, help="PNG output")
    p.add_argument("--smoother", default="gaussian:2")
    p.add_argument("--compression", type=float, default=5.0)
    p.set_defaults(fn=cmd_tonemap)

    p = sub.add_parser("enhance", help="illumination-reflectance contrast enhancement")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--smoother", default="gaussian:2")
    p.add_argument("--gamma", type=float, default=0.6)
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("serve", help="start the annotation service")
    p.add_argument("--data", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--volunteers", type=int, default=26)
    p.add_argument("--votes-per-image", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ui", help="directory with the selection UI bundle")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (DatasetValidationError, GroundTruthError, MetricError,
            CheckpointError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingError, OSError, applications.HdrError,
            rasters.RasterError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
