"""Command-line entry point: ``regtrack <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import ablation as abl
from .config import ConfigError, as_kv, apply_kv, format_kv, read_kv
from .datasets import (
    Annotation,
    AnnotationFormatError,
    FORMATS,
    Dataset,
    format_corner4,
    format_vot8,
    manifest_image_line,
    manifest_sequence_line,
    read_manifest,
    write_manifest,
)
from .evaluation import (
    TABLE1_COLUMNS,
    TABLE2_COLUMNS,
    NoisyInitSpec,
    ProtocolConfig,
    aggregate,
    evaluate,
    rank_trackers,
    run_noisy_init_experiment,
    score_sequence,
    table1_rows,
    table2_rows,
    to_csv,
    to_text,
)
from .geometry import BoundingBox, DegenerateBoxError
from .imageio import write_image
from .motion import extract_motion_stats, fit_motion_stats, model_from_fits, read_motion_file, write_motion_file
from .net import NetConfig, WeightFileError, load_weights
from .synthetic import SyntheticSceneConfig, make_sequences, make_still_images
from .tracker import IdentityNet, TrackRecord, track_sequence, write_predictions
from .trainer import DESK_BACKBONE_ITERATIONS, EmptySourceError, NonFiniteLossError, Sources, TrainConfig, pretrain_features, train, with_backbone

log = logging.getLogger("regtrack")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
DATA_ERRORS = (OSError, AnnotationFormatError, ConfigError, EmptySourceError, WeightFileError, DegenerateBoxError)

# config-file sections: key prefix -> default dataclass
SECTIONS = {
    "net.": NetConfig(),
    "train.": TrainConfig(),
    "scene.": SyntheticSceneConfig(),
    "protocol.": ProtocolConfig(),
    "noisy.": NoisyInitSpec(),
    "ablation.": abl.AblationSpec(),
}
ABLATION_KEYS = ("repetitions", "backbone_iterations")
TOP_LEVEL = ("seed", "threads", "backbone_iterations")
# recorded in snapshots for provenance; ignored when a snapshot is read back as a config
INFO_KEYS = ("command", "manifest", "test_manifest", "motion", "weights", "suite", "format", "count", "images")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# config ----------------------------------------------------------------------


@dataclasses.dataclass
class RunConfig:
    net: NetConfig
    train: TrainConfig
    scene: SyntheticSceneConfig
    protocol: ProtocolConfig
    noisy: NoisyInitSpec
    repetitions: int = 3
    backbone_iterations: int = DESK_BACKBONE_ITERATIONS
    seed: int = 0
    threads: int = 1

    def snapshot(self, extra: dict | None = None) -> str:
        values = {"seed": self.seed, "threads": self.threads, "backbone_iterations": self.backbone_iterations,
                  "ablation.repetitions": self.repetitions}
        values.update(extra or {})
        for prefix, name in (("net.", "net"), ("train.", "train"), ("scene.", "scene"), ("protocol.", "protocol"),
                             ("noisy.", "noisy")):
            values.update(as_kv(getattr(self, name), prefix))
        return format_kv(values, "resolved regtrack configuration")


def load_run_config(path=None, seed: int | None = None, threads: int | None = None) -> RunConfig:
    kv = read_kv(path) if path else {}
    known = set(TOP_LEVEL) | set(INFO_KEYS) | {"ablation." + k for k in ABLATION_KEYS}
    for prefix, obj in SECTIONS.items():
        if prefix != "ablation.":
            known |= {prefix + f.name for f in dataclasses.fields(obj)}
    unknown = sorted(set(kv) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    try:
        base_seed = int(kv.get("seed", 0)) if seed is None else seed
        cfg = RunConfig(
            net=apply_kv(NetConfig(), kv, "net."),
            train=apply_kv(TrainConfig(), kv, "train."),
            scene=apply_kv(SyntheticSceneConfig(), kv, "scene."),
            protocol=apply_kv(ProtocolConfig(), kv, "protocol."),
            noisy=apply_kv(NoisyInitSpec(), kv, "noisy."),
            repetitions=int(kv.get("ablation.repetitions", 3)),
            backbone_iterations=int(kv.get("backbone_iterations",
                                           kv.get("ablation.backbone_iterations", DESK_BACKBONE_ITERATIONS))),
            seed=base_seed,
            threads=int(kv.get("threads", 1)) if threads is None else threads,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or '<defaults>'}: {exc}") from None
    # the run seed drives every random stream
    cfg.net = dataclasses.replace(cfg.net, seed=cfg.seed)
    cfg.train = dataclasses.replace(cfg.train, seed=cfg.seed)
    cfg.noisy = dataclasses.replace(cfg.noisy, seed=cfg.seed)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from None
    return out


def _write_snapshot(out: Path, cfg: RunConfig, args, extra: dict | None = None):
    values = {"command": args.command}
    for key in ("manifest", "test_manifest", "motion", "weights", "suite", "format"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = ",".join(map(str, v)) if isinstance(v, list) else v
    values.update(extra or {})
    (out / "resolved_config.txt").write_text(cfg.snapshot(values))


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _load_dataset(path) -> Dataset:
    return read_manifest(_require_file(path, "manifest"), load_frames=True)


# subcommands -------------------------------------------------------------------


def cmd_synthesize(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    ext = "." + args.image_format
    entries = []
    seqs = make_sequences(cfg.scene, args.count, cfg.seed, args.prefix)
    for seq in seqs:
        fdir = out / "videos" / seq.seq_id
        fdir.mkdir(parents=True, exist_ok=True)
        for i in range(len(seq)):
            write_image(fdir / f"{i:06d}{ext}", seq.frame(i))
        ann_name = f"videos/{seq.seq_id}.txt"
        text = format_corner4(seq.annotations) if args.format == "corner4" else format_vot8(seq.annotations)
        (out / ann_name).write_text(text)
        entries.append(manifest_sequence_line(seq.seq_id, f"videos/{seq.seq_id}", ann_name, args.format,
                                              seq.class_label))
    if args.images:
        (out / "images").mkdir(exist_ok=True)
    for i, ex in enumerate(make_still_images(cfg.scene, args.images, cfg.seed)):
        name = f"images/img{i:06d}{ext}"
        write_image(out / name, ex.image)
        entries.append(manifest_image_line(name, ex.box, ex.class_label))
    write_manifest(out / "manifest.txt", entries)
    _write_snapshot(out, cfg, args, {"count": args.count, "images": args.images})
    print(f"wrote {len(seqs)} sequence(s) and {args.images} image(s) to {out / 'manifest.txt'}")
    return EXIT_OK


def cmd_fit_motion(args, cfg: RunConfig) -> int:
    ds = read_manifest(_require_file(args.manifest, "manifest"))
    if not ds.videos:
        raise EmptySourceError(f"{args.manifest}: no video sequences to fit")
    try:
        stats = extract_motion_stats(ds.videos)
        fits = fit_motion_stats(stats)
    except ValueError as exc:
        raise AnnotationFormatError(f"{args.manifest}: {exc}") from None
    out = _out_dir(args)
    write_motion_file(out / "motion.txt", fits)
    _write_snapshot(out, cfg, args)
    for k, f in fits.items():
        print(f"{k}: loc={f.loc:.6g} scale={f.scale:.6g} samples={f.count}")
        if f.degenerate:
            log.warning("%s: degenerate fit (all samples at the location; scale is 0)", k)
    if stats.skipped:
        print(f"skipped {stats.skipped} pair(s) with degenerate labels")
    return EXIT_OK


def _motion(args, cfg: RunConfig):
    if not getattr(args, "motion", None):
        return None
    fits = read_motion_file(_require_file(args.motion, "motion file"))
    return model_from_fits(fits, context=cfg.train.context)


def cmd_train(args, cfg: RunConfig) -> int:
    ds = _load_dataset(args.manifest)
    sources = Sources(ds.videos, ds.images)
    sources.enabled(cfg.train.source_mix)
    out = _out_dir(args)
    _write_snapshot(out, cfg, args)
    motion = _motion(args, cfg)
    backbone = None
    if cfg.backbone_iterations > 0:
        backbone = pretrain_features(cfg.net, sources, dataclasses.replace(cfg.train, iterations=cfg.backbone_iterations))
    net = with_backbone(cfg.net, backbone) if backbone is not None else _fresh(cfg.net)
    res = train(cfg.train, sources, net, out, motion)
    last = res.losses[-1] if res.losses else float("nan")
    print(f"trained {cfg.train.iterations} iterations in {res.seconds:.1f} s; final loss {last:.4f}; "
          f"weights in {out / 'final.bin'}")
    return EXIT_OK


def _fresh(net_cfg):
    from .net import Network

    return Network(net_cfg)


def _load_net(spec: str):
    if spec == "identity":
        return IdentityNet(), "identity"
    net, _ = load_weights(_require_file(spec, "weights file"))
    return net, Path(spec).stem


def _parse_box(text: str) -> BoundingBox:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"--init expects x1,y1,x2,y2, got {text!r}") from None
    if len(vals) != 4:
        raise ConfigError(f"--init expects 4 values, got {len(vals)}")
    return BoundingBox(*vals)


def cmd_track(args, cfg: RunConfig) -> int:
    ds = _load_dataset(args.manifest)
    seqs = [s for s in ds.videos if not args.sequence or s.seq_id in args.sequence]
    if args.sequence:
        missing = sorted(set(args.sequence) - {s.seq_id for s in seqs})
        if missing:
            raise AnnotationFormatError(f"sequence id(s) not in manifest: {missing}")
    net, tracker_id = _load_net(args.weights)
    init = _parse_box(args.init) if args.init else None
    out = _out_dir(args)
    _write_snapshot(out, cfg, args)
    status = EXIT_OK
    for seq in seqs:
        rec = track_sequence(net, seq, init, tracker_id)
        path = out / f"{seq.seq_id}.txt"
        if args.format == "vot8":
            anns = [Annotation(i, BoundingBox(*r)) for i, r in enumerate(rec.predictions) if np.all(np.isfinite(r))]
            path.write_text(format_vot8(anns))
        else:
            write_predictions(path, rec, {"checkpoint": tracker_id}, timing=args.timing)
        if rec.error:
            log.error("%s: %s", seq.seq_id, rec.error)
            status = EXIT_DATA
        print(f"{seq.seq_id}: {len(seq)} frames, {len(rec.fallbacks)} fallback(s) -> {path}")
    return status


def _records_from_predictions(pred_dir: Path, ds: Dataset, fmt: str) -> list[TrackRecord]:
    from .datasets import parse_annotations

    records = []
    for seq in ds.videos:
        path = pred_dir / f"{seq.seq_id}.txt"
        pred = parse_annotations(_require_file(path, "prediction file"), fmt).dense_boxes()
        gt = seq.dense_boxes()
        full = np.full_like(gt, np.nan)
        n = min(len(pred), len(gt))
        full[:n] = pred[:n]
        records.append(TrackRecord(seq.seq_id, pred_dir.name, full, gt, seq.dense_flags()))
    return records


def cmd_eval(args, cfg: RunConfig) -> int:
    ds = _load_dataset(args.manifest)
    if not args.weights and not args.predictions:
        raise UsageError("eval needs --weights and/or --predictions")
    out = _out_dir(args)
    _write_snapshot(out, cfg, args)
    tables, noisy = [], []
    for spec in args.weights or []:
        net, tid = _load_net(spec)
        table, _ = evaluate(net, ds.videos, cfg.protocol, tid)
        tables.append(table)
        if args.noisy:
            noisy.append(run_noisy_init_experiment(net, ds.videos, cfg.noisy, cfg.protocol, tid))
    for d in args.predictions or []:
        recs = _records_from_predictions(Path(d), ds, args.format)
        tables.append(aggregate(Path(d).name, [score_sequence(r, cfg.protocol) for r in recs],
                                cfg.protocol.sensitivity))
    rows = table1_rows(tables)
    (out / "scores.csv").write_text(to_csv(rows, TABLE1_COLUMNS))
    text = to_text(rows, TABLE1_COLUMNS)
    (out / "scores.txt").write_text(text)
    print(text, end="")
    if len(tables) >= 2:
        exact = rank_trackers(tables)
        noisy_report = rank_trackers(noisy) if len(noisy) == len(tables) else None
        # wall-clock speed is opt-in so default outputs stay reproducible
        rrows = table2_rows(exact, noisy_report, [t.fps for t in tables] if args.timing else None)
        (out / "ranks.csv").write_text(to_csv(rrows, TABLE2_COLUMNS))
        print(to_text(rrows, TABLE2_COLUMNS), end="")
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig) -> int:
    train_ds = _load_dataset(args.manifest)
    test_ds = _load_dataset(args.test_manifest)
    out = _out_dir(args)
    _write_snapshot(out, cfg, args)
    spec = abl.AblationSpec(cfg.net, cfg.train, cfg.protocol, cfg.repetitions, cfg.seed, cfg.backbone_iterations)
    motion = _motion(args, cfg)
    sources = Sources(train_ds.videos, train_ds.images)

    def progress(r):
        state = f"overall error {r.table.overall_error():.4f}" if r.ok else f"FAILED ({r.error})"
        print(f"[{r.name} rep {r.repetition}] {state} in {r.seconds:.0f} s", flush=True)

    status = EXIT_OK
    results = []
    if args.suite in ("table1", "all"):
        res = abl.run_ablation_suite(abl.TABLE1_VARIANTS, sources, test_ds.videos, spec, motion, progress)
        results += res
        (out / "table1.csv").write_text(abl.report(res, "csv"))
        print(abl.report(res), end="")
        seen = [row for r in res if r.name == "full" for row in abl.seen_unseen_rows(r, train_ds.videos,
                                                                                    test_ds.videos, spec)]
        if seen:
            cols = ("variant", "sequences", "overall_error", "accuracy_error", "robustness_error", "failures")
            (out / "seen_unseen.csv").write_text(to_csv(seen, cols))
    if args.suite in ("single_input", "all"):
        res = abl.run_ablation_suite([abl.FULL, abl.SINGLE_INPUT], sources, test_ds.videos, spec, motion, progress)
        results += res
        attrs = ("all", "occlusion", "camera_motion", "size_change")
        rows = abl.attribute_rows(res, attrs)
        (out / "single_input.csv").write_text(to_csv(rows, ("variant",) + attrs))
        print(to_text(rows, ("variant",) + attrs), end="")
    if args.suite in ("size", "all"):
        res = abl.training_size_sweep(train_ds.videos, train_ds.images, test_ds.videos, spec, motion=motion,
                                      progress=progress)
        results += res
        (out / "training_size.csv").write_text(abl.report(res, "csv"))
        print(abl.report(res), end="")
    if any(not r.ok for r in results):
        status = EXIT_RUNTIME
    return status


COMMANDS = {
    "synthesize": cmd_synthesize,
    "fit-motion": cmd_fit_motion,
    "train": cmd_train,
    "track": cmd_track,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, help="BLAS threads; 1 is fully deterministic")
    common.add_argument("--format", choices=FORMATS, default="corner4", help="annotation / prediction format")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="regtrack", description="Offline-trained regression tracker toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synthesize", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--count", type=int, default=10, help="number of video sequences")
    s.add_argument("--images", type=int, default=0, help="number of still images")
    s.add_argument("--prefix", default="seq")
    s.add_argument("--image-format", choices=("ppm", "png"), default="ppm")

    s = sub.add_parser("fit-motion", parents=[common], help="fit the Laplace motion model to a dataset")
    s.add_argument("--manifest", required=True)

    s = sub.add_parser("train", parents=[common], help="train a network")
    s.add_argument("--manifest", required=True)
    s.add_argument("--motion", help="fitted motion-model file (default: config b_translation / b_scale)")

    s = sub.add_parser("track", parents=[common], help="track sequences with trained weights")
    s.add_argument("--manifest", required=True)
    s.add_argument("--weights", required=True, help="weights file, or 'identity' for the static oracle")
    s.add_argument("--sequence", action="append", help="restrict to these sequence ids")
    s.add_argument("--init", help="initial box x1,y1,x2,y2 (default: first ground-truth box)")
    s.add_argument("--timing", action="store_true", help="include wall-clock timing in the header")

    s = sub.add_parser("eval", parents=[common], help="score trackers on a benchmark")
    s.add_argument("--manifest", required=True, help="ground-truth manifest")
    s.add_argument("--weights", action="append", help="live evaluation with reinitialization")
    s.add_argument("--predictions", action="append", help="directory of prediction files")
    s.add_argument("--noisy", action="store_true", help="also run the noisy-initialization experiment")
    s.add_argument("--timing", action="store_true", help="add measured frames/s to the rank table")

    s = sub.add_parser("ablate", parents=[common], help="train and compare ablation variants")
    s.add_argument("--manifest", required=True, help="training manifest")
    s.add_argument("--test-manifest", required=True)
    s.add_argument("--motion")
    s.add_argument("--suite", choices=("table1", "single_input", "size", "all"), default="table1")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_run_config(args.config, args.seed, args.threads)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=cfg.threads):
            return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"regtrack {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"regtrack {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLossError, Exception) as exc:  # noqa: BLE001 - top-level reporting
        print(f"regtrack {args.command}: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
