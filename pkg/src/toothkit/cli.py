"""``toothkit`` command line: one subcommand per pipeline stage.

Every option can also come from ``--config file.json`` (see
:data:`toothkit.config.SCHEMA`); flags win over the file. All problems with
the configuration are reported together, as JSON on stderr, before any work
starts. Each run writes a manifest recording argv, effective config, seed,
input/output hashes, tool version and timings.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import __version__
from .augment import AugmentConfig, augment_dataset
from .coco import (
    CocoDataset,
    load_images,
    load_png,
    parse_dataset,
    parse_prediction_records,
    parse_predictions,
    save_images,
    save_png,
    serialize_dataset,
    serialize_predictions,
    write_json,
)
from .config import DEFAULTS, get_path, merge, schema_errors, set_path
from .errors import ParseError, ToothkitError
from .evaluate import EvalConfig, EvalReport, compare_reports, evaluate
from .imgproc import preprocess_image, rasterize_window
from .matching import LossWeights, SlotOutput, hungarian_loss
from .postproc import SectionGeometry, postprocess
from .split import SplitSpec, split_datasets, stratified_split
from .synth import (
    EmptyPanoramic,
    PatientSpec,
    ToothBankEntry,
    bank_metadata,
    build_tooth_bank,
    synthesize_batch,
)
from .types import BBox, PolygonMask, ToothClass

log = logging.getLogger("toothkit")

RANDOMIZED = {"split", "augment", "synthesize"}


class ConfigError(ToothkitError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


# ---------------------------------------------------------------- parser


def _opt(p: argparse.ArgumentParser, flag: str, dest: str, **kw) -> None:
    p.add_argument(flag, dest=dest, default=None, **kw)


def _ratios(text: str) -> dict[str, float]:
    out = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        if not name or not value:
            raise argparse.ArgumentTypeError(f"expected name=weight pairs, got {text!r}")
        out[name.strip()] = float(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON pipeline config")
    _opt(common, "--seed", "seed", type=int, help="master seed (required by randomized commands)")
    _opt(common, "--threads", "threads", type=int, help="worker threads, 0 = one per CPU")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-q", "--quiet", action="store_true")
    verbosity.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="toothkit", description="Panoramic tooth dataset and evaluation toolkit.")
    parser.add_argument("--version", action="version", version=f"toothkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="equalize, crop, pad and resize images")
    _opt(p, "--dataset", "paths.dataset", help="COCO ground truth")
    _opt(p, "--images", "paths.images", help="directory of source PNGs")
    _opt(p, "--out", "paths.out", help="output directory")
    _opt(p, "--size", "preprocess.size", type=int)
    _opt(p, "--margin", "preprocess.margin", type=float)
    _opt(p, "--pad-value", "preprocess.pad_value", type=int)
    p.add_argument("--no-equalize", dest="preprocess.equalize", action="store_const", const=False, default=None)

    p = sub.add_parser("split", parents=[common], help="iterative stratified train/val/test split")
    _opt(p, "--dataset", "paths.dataset")
    _opt(p, "--out", "paths.out")
    _opt(p, "--ratios", "split.ratios", type=_ratios, help="e.g. train=72,val=48,test=36")

    p = sub.add_parser("augment", parents=[common], help="append augmented copies")
    _opt(p, "--dataset", "paths.dataset")
    _opt(p, "--images", "paths.images")
    _opt(p, "--out", "paths.out")
    _opt(p, "--rotation", "augment.rotation_range_deg", type=float)
    _opt(p, "--translation", "augment.translation_range_frac", type=float)
    p.add_argument("--enable-translation", dest="augment.enable_translation", action="store_const", const=True, default=None)
    _opt(p, "--noise-sigma", "augment.noise_sigma", type=float)
    _opt(p, "--contrast", "augment.contrast_range", type=float, nargs=2, metavar=("LO", "HI"))
    _opt(p, "--strategy", "augment.strategy", choices=("uniform", "deciduous_priority"))
    _opt(p, "--copies-uniform", "augment.copies_uniform", type=int)
    _opt(p, "--copies-deciduous", "augment.copies_deciduous", type=int)
    _opt(p, "--copies-other", "augment.copies_other", type=int)

    p = sub.add_parser("bank", parents=[common], help="export the tooth bank")
    _opt(p, "--dataset", "paths.dataset")
    _opt(p, "--images", "paths.images")
    _opt(p, "--out", "paths.out")

    p = sub.add_parser("synthesize", parents=[common], help="compose panoramics from banked teeth")
    _opt(p, "--dataset", "paths.dataset", help="COCO file the tooth bank is cut from")
    _opt(p, "--images", "paths.images")
    _opt(p, "--bank", "paths.bank", help="exported bank directory (instead of --dataset/--images)")
    _opt(p, "--empties", "paths.empties", help="directory of empty panoramic PNGs")
    _opt(p, "--empties-manifest", "paths.empties_manifest", help="defaults to <empties>/manifest.json")
    _opt(p, "--specs", "paths.specs", help="JSON array of {age, teeth}")
    _opt(p, "--out", "paths.out")
    _opt(p, "--age-tolerance", "synthesis.age_tolerance", type=int)
    _opt(p, "--overlap-reject-iou", "synthesis.overlap_reject_iou", type=float)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against ground truth")
    _opt(p, "--gt", "paths.gt")
    _opt(p, "--pred", "paths.pred")
    _opt(p, "--iou", "evaluate.iou_threshold", type=float)
    _opt(p, "--mode", "evaluate.iou_mode", choices=("bbox", "mask"))
    _opt(p, "--score-floor", "evaluate.score_floor", type=float)
    _opt(p, "--report", "paths.report")
    _opt(p, "--confusion-csv", "paths.confusion_csv")

    p = sub.add_parser("postprocess", parents=[common], help="quadrant correction and duplicate removal")
    _opt(p, "--pred", "paths.pred")
    _opt(p, "--out", "paths.out")
    _opt(p, "--xmid", "geometry.x_mid", type=float)
    _opt(p, "--ymid", "geometry.y_mid", type=float)
    _opt(p, "--dead-zone", "geometry.dead_zone", type=float)
    _opt(p, "--geometry", "paths.geometry", help="JSON {image_id: [x_mid, y_mid]} overrides")
    _opt(p, "--changes", "paths.changes", help="change log path (default <out>.changes.json)")

    p = sub.add_parser("compare", parents=[common], help="difference table of two evaluation reports")
    p.add_argument("report_a", type=Path)
    p.add_argument("report_b", type=Path)
    _opt(p, "--out", "paths.out")

    p = sub.add_parser("loss", parents=[common], help="set-matching loss breakdown for debugging")
    _opt(p, "--gt", "paths.gt")
    _opt(p, "--pred", "paths.pred", help="predictions carrying 53-entry 'probs'")
    for name in ("w_class", "w_l1", "w_giou", "w_dice"):
        _opt(p, f"--{name.replace('_', '-')}", f"loss.{name}", type=float)
    return parser


# ---------------------------------------------------------------- config


_REQUIRED: dict[str, list[str]] = {
    "preprocess": ["paths.dataset", "paths.images", "paths.out"],
    "split": ["paths.dataset", "paths.out"],
    "augment": ["paths.dataset", "paths.images", "paths.out"],
    "bank": ["paths.dataset", "paths.images", "paths.out"],
    "synthesize": ["paths.empties", "paths.specs", "paths.out"],
    "evaluate": ["paths.gt", "paths.pred", "paths.report"],
    "postprocess": ["paths.pred", "paths.out"],
    "compare": [],
    "loss": ["paths.gt", "paths.pred"],
}
_INPUT_FILES = ("paths.dataset", "paths.specs", "paths.gt", "paths.pred", "paths.geometry", "paths.empties_manifest")
_INPUT_DIRS = ("paths.images", "paths.empties", "paths.bank")


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults <- config file <- flags, then validate everything at once."""
    problems: list[str] = []
    file_cfg: dict = {}
    if args.config is not None:
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"config: cannot read {args.config}: {exc}"]) from None
        if not isinstance(file_cfg, dict):
            raise ConfigError(["config: top level must be an object"])
        problems += [f"config {p}" for p in schema_errors(file_cfg)]

    cfg = merge(DEFAULTS, file_cfg if not problems else {})
    for key, value in vars(args).items():
        if value is None or key in ("command", "config", "quiet", "verbose", "report_a", "report_b"):
            continue
        set_path(cfg, key, value)
    if args.command == "synthesize" and get_path(cfg, "paths.empties") and not get_path(cfg, "paths.empties_manifest"):
        set_path(cfg, "paths.empties_manifest", str(Path(get_path(cfg, "paths.empties")) / "manifest.json"))

    if not problems:
        problems += schema_errors(cfg)
    for dotted in _REQUIRED[args.command]:
        if not get_path(cfg, dotted):
            problems.append(f"{dotted}: required by '{args.command}'")
    if args.command == "synthesize" and not get_path(cfg, "paths.bank"):
        for dotted in ("paths.dataset", "paths.images"):
            if not get_path(cfg, dotted):
                problems.append(f"{dotted}: required by 'synthesize' unless --bank is given")
    if args.command in RANDOMIZED and cfg.get("seed") is None:
        problems.append(f"seed: required by randomized command '{args.command}'")
    for dotted in _INPUT_FILES:
        value = get_path(cfg, dotted)
        if value and not Path(value).is_file():
            problems.append(f"{dotted}: file not found: {value}")
    for dotted in _INPUT_DIRS:
        value = get_path(cfg, dotted)
        if value and not Path(value).is_dir():
            problems.append(f"{dotted}: directory not found: {value}")
    if args.command == "compare":
        for p in (args.report_a, args.report_b):
            if not p.is_file():
                problems.append(f"report: file not found: {p}")
    if problems:
        raise ConfigError(problems)
    return cfg


# ---------------------------------------------------------------- helpers


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_gt(cfg: dict, key: str = "paths.dataset", with_pixels: bool = False) -> CocoDataset:
    d = parse_dataset(get_path(cfg, key))
    if with_pixels:
        d = load_images(d, get_path(cfg, "paths.images"))
    return d


def _read_json(path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON ({exc})") from None


class Run:
    """Collects inputs and outputs of one command for its manifest."""

    def __init__(self, manifest_path: Path):
        self.manifest_path = Path(manifest_path)
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []

    def read(self, *paths) -> None:
        self.inputs += [Path(p) for p in paths if p]

    def wrote(self, *paths) -> None:
        self.outputs += [Path(p) for p in paths]


# ---------------------------------------------------------------- commands


def cmd_preprocess(cfg: dict, run: Run) -> None:
    out = Path(cfg["paths"]["out"])
    opts = cfg["preprocess"]
    d = _load_gt(cfg, with_pixels=True)
    run.read(cfg["paths"]["dataset"])
    by_image = d.annotations_by_image()
    items, maps = [], {}
    for img in d.images:
        roi = opts["rois"].get(str(img.id))
        anns = [a.to_tooth_annotation() for a in by_image[img.id]]
        pixels, new_anns, amap = preprocess_image(
            img.pixels, anns, BBox(*roi) if roi else None, opts["size"], opts["margin"], opts["pad_value"], opts["equalize"]
        )
        new_img = type(img)(img.id, img.file_name, pixels.shape[1], pixels.shape[0], img.age, pixels)
        items.append((new_img, new_anns))
        maps[str(img.id)] = amap.to_list()
    result = CocoDataset().with_annotated_images(items)
    run.wrote(*save_images(result, out / "images"))
    serialize_dataset(result, out / "dataset.json")
    write_json(maps, out / "maps.json")
    run.wrote(out / "dataset.json", out / "maps.json")


def cmd_split(cfg: dict, run: Run) -> None:
    out = Path(cfg["paths"]["out"])
    d = _load_gt(cfg)
    run.read(cfg["paths"]["dataset"])
    spec = SplitSpec.from_weights(cfg["split"]["ratios"], cfg["seed"])
    assignment = stratified_split(d, spec)
    for name, part in split_datasets(d, assignment, spec.names).items():
        serialize_dataset(part, out / f"{name}.json")
        run.wrote(out / f"{name}.json")
        log.info("split %s: %d images", name, len(part.images))
    manifest = {
        "seed": spec.seed,
        "ratios": [[n, f] for n, f in spec.ratios],
        "assignment": {str(k): assignment[k] for k in sorted(assignment)},
    }
    write_json(manifest, out / "split_manifest.json")
    run.wrote(out / "split_manifest.json")


def cmd_augment(cfg: dict, run: Run) -> None:
    out = Path(cfg["paths"]["out"])
    a = cfg["augment"]
    aug_cfg = AugmentConfig(**{**a, "contrast_range": tuple(a["contrast_range"])}, seed=cfg["seed"])
    d = _load_gt(cfg, with_pixels=True)
    run.read(cfg["paths"]["dataset"])
    result = augment_dataset(d, aug_cfg, threads=cfg["threads"])
    log.info("augment: %d -> %d images", len(d.images), len(result.images))
    run.wrote(*save_images(result, out / "images"))
    serialize_dataset(result, out / "dataset.json")
    run.wrote(out / "dataset.json")


def write_bank(bank: Sequence[ToothBankEntry], out: Path) -> list[Path]:
    written = []
    for k, entry in enumerate(bank):
        save_png(entry.pixels, out / "patches" / f"{k:05d}.png")
        save_png(entry.mask.astype(np.uint8) * 255, out / "masks" / f"{k:05d}.png")
        written += [out / "patches" / f"{k:05d}.png", out / "masks" / f"{k:05d}.png"]
    write_json(bank_metadata(bank), out / "bank.json")
    return written + [out / "bank.json"]


def read_bank(bank_dir: Path) -> list[ToothBankEntry]:
    bank_dir = Path(bank_dir)
    bank = []
    for meta in _read_json(bank_dir / "bank.json"):
        k = meta["index"]
        bank.append(
            ToothBankEntry(
                tooth=ToothClass(meta["tooth"]),
                pixels=load_png(bank_dir / "patches" / f"{k:05d}.png"),
                mask=load_png(bank_dir / "masks" / f"{k:05d}.png") > 127,
                source_bbox=BBox(*meta["source_bbox"]),
                polygon=PolygonMask.from_flat(meta["polygon"]),
                source_image_id=meta["source_image_id"],
                source_annotation_id=meta["source_annotation_id"],
                source_age=meta["source_age"],
                source_size=tuple(meta["source_size"]),
            )
        )
    return bank


def cmd_bank(cfg: dict, run: Run) -> None:
    d = _load_gt(cfg, with_pixels=True)
    run.read(cfg["paths"]["dataset"])
    bank = build_tooth_bank(d)
    log.info("bank: %d entries", len(bank))
    run.wrote(*write_bank(bank, Path(cfg["paths"]["out"])))


def read_empties(empties_dir: Path, manifest: Path) -> list[EmptyPanoramic]:
    records = _read_json(manifest)
    if not isinstance(records, list):
        raise ParseError(f"{manifest}: expected a JSON array of {{id, file_name, age}}")
    out = []
    for rec in records:
        name = rec.get("file_name", f"{rec['id']}.png")
        out.append(EmptyPanoramic(str(rec["id"]), load_png(Path(empties_dir) / name), rec.get("age")))
    return out


def read_specs(path) -> list[PatientSpec]:
    records = _read_json(path)
    if not isinstance(records, list):
        raise ParseError(f"{path}: expected a JSON array of {{age, teeth}}")
    return [PatientSpec(frozenset(ToothClass(c) for c in rec.get("teeth", [])), rec.get("age")) for rec in records]


def cmd_synthesize(cfg: dict, run: Run) -> None:
    out = Path(cfg["paths"]["out"])
    paths = cfg["paths"]
    if paths.get("bank"):
        bank = read_bank(Path(paths["bank"]))
        run.read(Path(paths["bank"]) / "bank.json")
    else:
        bank = build_tooth_bank(_load_gt(cfg, with_pixels=True))
        run.read(paths["dataset"])
    empties = read_empties(Path(paths["empties"]), Path(paths["empties_manifest"]))
    specs = read_specs(paths["specs"])
    run.read(paths["empties_manifest"], paths["specs"])
    s = cfg["synthesis"]
    result = synthesize_batch(
        specs, empties, bank, cfg["seed"], s["age_tolerance"], s["overlap_reject_iou"], threads=cfg["threads"]
    )
    log.info("synthesize: %d/%d images, %d overlapping pairs", len(result.dataset.images), len(specs), result.overlap_pairs)
    run.wrote(*save_images(result.dataset, out / "images"))
    serialize_dataset(result.dataset, out / "dataset.json")
    write_json(result.provenance_json(), out / "provenance.json")
    run.wrote(out / "dataset.json", out / "provenance.json")


def cmd_evaluate(cfg: dict, run: Run) -> None:
    paths = cfg["paths"]
    gt = parse_dataset(paths["gt"])
    preds = parse_predictions(paths["pred"])
    run.read(paths["gt"], paths["pred"])
    report = evaluate(preds, gt, EvalConfig(**cfg["evaluate"]))
    report_path = Path(paths["report"])
    write_json(report.to_dict(), report_path)
    csv_path = Path(paths.get("confusion_csv") or report_path.with_suffix(".confusion.csv"))
    csv_path.write_text(report.confusion_csv(), encoding="utf-8")
    run.wrote(report_path, csv_path)
    print(report.render(), end="")


def geometry_from_cfg(cfg: dict) -> SectionGeometry:
    g = cfg["geometry"]
    overrides = {int(k): tuple(v) for k, v in g["overrides"].items()}
    if cfg["paths"].get("geometry"):
        raw = _read_json(cfg["paths"]["geometry"])
        overrides.update({int(k): tuple(v) for k, v in raw.items()})
    return SectionGeometry(g["x_mid"], g["y_mid"], overrides, g["dead_zone"])


def cmd_postprocess(cfg: dict, run: Run) -> None:
    paths = cfg["paths"]
    records = parse_prediction_records(paths["pred"])
    run.read(paths["pred"], paths.get("geometry"))
    survivors, changes = postprocess([r.prediction for r in records], geometry_from_cfg(cfg))
    out = Path(paths["out"])
    serialize_predictions(survivors, out)
    changes_path = Path(paths.get("changes") or out.with_suffix(".changes.json"))
    write_json(changes, changes_path)
    run.wrote(out, changes_path)
    log.info("postprocess: %d -> %d predictions, %d changes", len(records), len(survivors), len(changes))


def cmd_compare(cfg: dict, run: Run, args: argparse.Namespace) -> None:
    a = EvalReport.from_dict(_read_json(args.report_a))
    b = EvalReport.from_dict(_read_json(args.report_b))
    run.read(args.report_a, args.report_b)
    comparison = compare_reports(a, b)
    print(comparison.render(), end="")
    if cfg["paths"].get("out"):
        write_json(comparison.to_dict(), cfg["paths"]["out"])
        run.wrote(cfg["paths"]["out"])


def cmd_loss(cfg: dict, run: Run) -> None:
    paths = cfg["paths"]
    gt = parse_dataset(paths["gt"])
    records = parse_prediction_records(paths["pred"])
    run.read(paths["gt"], paths["pred"])
    weights = LossWeights(**cfg["loss"])
    by_image: dict[int, list] = {}
    for r in records:
        if r.probs is None:
            raise ParseError("every prediction needs a 'probs' vector for the loss")
        by_image.setdefault(r.prediction.image_id, []).append(r)
    gts = gt.annotations_by_image()
    result = {"images": {}, "total": 0.0}
    for img in gt.images:
        slots = []
        for r in by_image.get(img.id, []):
            mask = None
            if r.prediction.mask is not None:
                mask = rasterize_window(r.prediction.mask, 0, 0, img.width, img.height)
            slots.append(SlotOutput(np.asarray(r.probs), r.prediction.bbox, mask))
        anns = [a.to_tooth_annotation() for a in gts[img.id]]
        breakdown = hungarian_loss(slots, anns, weights, (img.width, img.height))
        result["images"][str(img.id)] = breakdown.to_dict()
        result["total"] += breakdown.total
    print(json.dumps(result, indent=1, default=lambda v: None if v != v else v))


COMMANDS: dict[str, Callable] = {
    "preprocess": cmd_preprocess,
    "split": cmd_split,
    "augment": cmd_augment,
    "bank": cmd_bank,
    "synthesize": cmd_synthesize,
    "evaluate": cmd_evaluate,
    "postprocess": cmd_postprocess,
    "compare": cmd_compare,
    "loss": cmd_loss,
}


def manifest_location(command: str, cfg: dict) -> Optional[Path]:
    paths = cfg["paths"]
    if command in ("preprocess", "split", "augment", "bank", "synthesize"):
        return Path(paths["out"]) / "manifest.json"
    if command == "evaluate":
        return Path(paths["report"]).with_suffix(".manifest.json")
    if command in ("postprocess", "compare") and paths.get("out"):
        return Path(paths["out"]).with_suffix(".manifest.json")
    return None


def write_manifest(run: Run, command: str, argv: Sequence[str], cfg: dict, started: float, finished: float) -> None:
    base = run.manifest_path.parent

    def rel(p: Path) -> str:
        try:
            return str(p.resolve().relative_to(base.resolve()))
        except ValueError:
            return str(p)

    manifest = {
        "tool": "toothkit",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "seed": cfg.get("seed"),
        "config": cfg,
        "inputs": [{"path": str(p), "sha256": sha256(p)} for p in run.inputs if p.is_file()],
        "outputs": [{"path": rel(p), "sha256": sha256(p)} for p in sorted(set(run.outputs))],
        "timings": {
            "started": _dt.datetime.fromtimestamp(started, _dt.timezone.utc).isoformat(),
            "finished": _dt.datetime.fromtimestamp(finished, _dt.timezone.utc).isoformat(),
            "seconds": round(finished - started, 6),
        },
    }
    write_json(manifest, run.manifest_path)


def _fail(kind: str, message: str, problems: Optional[list[str]] = None) -> None:
    payload: dict[str, Any] = {"error": kind, "message": message}
    if problems:
        payload["problems"] = problems
    print(json.dumps(payload), file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    logging.captureWarnings(True)
    if args.quiet:
        logging.getLogger("py.warnings").setLevel(logging.ERROR)

    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        _fail("config", "invalid configuration", exc.problems)
        return 2

    started = time.time()
    location = manifest_location(args.command, cfg)
    run = Run(location or Path("."))
    try:
        if args.command == "compare":
            cmd_compare(cfg, run, args)
        else:
            COMMANDS[args.command](cfg, run)
    except (ToothkitError, ValueError, OSError, KeyError) as exc:
        _fail(type(exc).__name__, str(exc))
        return 1
    if location is not None:
        write_manifest(run, args.command, argv, cfg, started, time.time())
    return 0

