"""Command-line batch front-end: ``octabio <command> ...``.

Commands: process, features, volume, classify, evaluate, phantom.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import phantom as ph
from .biomarkers import read_records_csv, record_from_mask, write_records_csv
from .imgcore import (
    DEFAULT_PIXELS_PER_SIDE,
    DEFAULT_SCAN_SIZE_UM,
    CropRect,
    load_gray,
    load_mask,
    save_gray,
    save_mask,
    write_pgm,
)
from .metrics import aggregate, overlap
from .segmentation import STAGE_NAMES, PipelineConfig, load_config, pipeline_stages
from .volume3d import (
    SectionStack,
    export_stl,
    format_measurements,
    load_stack_manifest,
    measurement_row,
    voxel_surface,
)
from .whitebox import (
    DL_RULES,
    SVM_RULES,
    Label,
    RuleSet,
    accuracy,
    apply_cuts,
    discretize_supervised,
    ensemble_votes,
    extract_dt_rules,
    parse_label,
    train_decision_tree,
    train_test_split,
)

log = logging.getLogger("octabio")


# -- manifest -------------------------------------------------------------------

@dataclass
class Entry:
    image_id: str
    path: Path
    crop: CropRect | None = None
    label: Label | None = None
    annotation: Path | None = None
    stack: str | None = None
    section: int | None = None


@dataclass
class DatasetManifest:
    entries: list
    scan_size_um: float = DEFAULT_SCAN_SIZE_UM
    pixels_per_side: int = DEFAULT_PIXELS_PER_SIDE
    slice_distance_um: float = 25.0
    missing: list = field(default_factory=list)

    @property
    def pixel_pitch_um(self) -> float:
        return self.scan_size_um / self.pixels_per_side

    def stack_groups(self) -> dict:
        groups: dict = {}
        for e in self.entries:
            if e.stack is not None:
                groups.setdefault(e.stack, []).append(e)
        return {k: sorted(v, key=lambda e: e.section) for k, v in groups.items()}

    def load_image(self, entry: Entry):
        img = load_gray(entry.path, scan_size_um=1.0)
        return type(img)(img.pixels, self.pixel_pitch_um * img.width)


def load_manifest(path, strict: bool = False) -> DatasetManifest:
    """Parse a dataset manifest JSON.

    Paths resolve relative to the manifest. Missing image files raise when
    ``strict``; otherwise they are listed in ``missing`` so batch commands
    can report those entries as failed.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    base = path.parent
    geom = doc.get("geometry", {})
    entries, seen = [], set()
    for raw in doc.get("entries", []):
        iid = str(raw["image_id"])
        if iid in seen:
            raise ValueError(f"duplicate image_id {iid!r}")
        seen.add(iid)
        crop = raw.get("crop")
        entries.append(Entry(
            image_id=iid,
            path=base / raw["path"],
            crop=CropRect(*crop) if crop else None,
            label=parse_label(raw["label"]) if raw.get("label") else None,
            annotation=base / raw["annotation"] if raw.get("annotation") else None,
            stack=raw.get("stack"),
            section=raw.get("section"),
        ))
    m = DatasetManifest(
        entries,
        float(geom.get("scan_size_um", DEFAULT_SCAN_SIZE_UM)),
        int(geom.get("pixels_per_side", DEFAULT_PIXELS_PER_SIDE)),
        float(doc.get("slice_distance_um", 25.0)),
    )
    m.missing = [e.image_id for e in entries if not e.path.is_file()]
    if strict and m.missing:
        raise FileNotFoundError(f"missing images: {m.missing}")
    for name, group in m.stack_groups().items():
        idx = [e.section for e in group]
        if any(i is None for i in idx) or idx != list(range(idx[0], idx[0] + len(idx))):
            raise ValueError(f"stack {name!r} does not have contiguous section indices")
    return m


def write_manifest(path, entries, scan_size_um, pixels_per_side, slice_distance_um=25.0):
    doc = {
        "geometry": {"scan_size_um": scan_size_um, "pixels_per_side": pixels_per_side},
        "slice_distance_um": slice_distance_um,
        "entries": entries,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


# -- helpers --------------------------------------------------------------------

def _config(args) -> PipelineConfig:
    return load_config(args.config) if getattr(args, "config", None) else PipelineConfig()


def _map(fn, items, jobs):
    """Apply ``fn`` to every item; results come back in input order."""
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _segment(manifest: DatasetManifest, entry: Entry, cfg: PipelineConfig):
    img = manifest.load_image(entry)
    return pipeline_stages(img, cfg, entry.crop)


# -- commands -------------------------------------------------------------------

def cmd_process(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _config(args)
    out = Path(args.out)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    def run(entry):
        rec = {"image_id": entry.image_id}
        try:
            stages, mask = _segment(manifest, entry, cfg)
        except Exception as exc:  # entry-level failure; the batch goes on
            log.error("%s: %s", entry.image_id, exc)
            return {**rec, "status": "failed", "error": str(exc)}
        mask_path = out / "masks" / f"{entry.image_id}.pgm"
        save_mask(mask, mask_path)
        if args.dump_stages:
            sdir = out / "stages" / entry.image_id
            sdir.mkdir(parents=True, exist_ok=True)
            for k, name in enumerate(STAGE_NAMES, 1):
                write_pgm(sdir / f"{k:02d}_{name}.pgm", stages[name])
        return {
            **rec,
            "status": "ok",
            "mask": str(mask_path.relative_to(out)),
            "object_pixels": mask.count,
            "empty": mask.count == 0,
        }

    results = _map(run, manifest.entries, args.jobs)
    failed = [r["image_id"] for r in results if r["status"] != "ok"]
    report = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "entries": results,
        "failed": failed,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"processed {len(results) - len(failed)}/{len(results)} entries -> {out}")
    return 1 if failed else 0


def cmd_features(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _config(args)

    def run(entry):
        try:
            _, mask = _segment(manifest, entry, cfg)
        except Exception as exc:
            log.error("%s: %s", entry.image_id, exc)
            return None
        return record_from_mask(entry.image_id, mask)

    records = _map(run, manifest.entries, args.jobs)
    ok = [r for r in records if r is not None]
    labels = {e.image_id: e.label.value for e in manifest.entries if e.label is not None}
    if args.out and args.out != "-":
        with open(args.out, "w", newline="") as fh:
            write_records_csv(ok, fh, cfg.config_hash(), labels)
    else:
        write_records_csv(ok, sys.stdout, cfg.config_hash(), labels)
    return 1 if len(ok) != len(records) else 0


def cmd_volume(args) -> int:
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    stacks = {}
    status = 0
    if args.stack:
        stacks[Path(args.stack).stem] = load_stack_manifest(args.stack)
    else:
        manifest = load_manifest(args.manifest)
        cfg = _config(args)
        groups = manifest.stack_groups()
        names = args.group or sorted(groups)
        for name in names:
            if name not in groups:
                log.error("no stack group %r in manifest", name)
                status = 1
                continue
            try:
                masks = _map(lambda e: _segment(manifest, e, cfg)[1], groups[name], args.jobs)
            except Exception as exc:
                log.error("stack %s: %s", name, exc)
                status = 1
                continue
            stacks[name] = SectionStack(tuple(masks), manifest.slice_distance_um)
    rows = []
    for name, stack in stacks.items():
        row = measurement_row(name, stack)
        rows.append(row)
        if row["pixels"] == 0:
            log.warning("stack %s is empty; no STL written", name)
            continue
        if out:
            stl = out / f"{name}.stl"
            export_stl(voxel_surface(stack), stl)
            row["stl"] = str(stl)
    print(format_measurements(rows))
    if out:
        (out / "volume.json").write_text(json.dumps(rows, indent=2) + "\n")
    return status


def _rules_from_dir(rules_dir: Path, name: str, default: RuleSet) -> RuleSet:
    p = rules_dir / f"{name}.json"
    if p.exists():
        return RuleSet.load(p)
    default.save(p)
    return default


def cmd_classify(args) -> int:
    with open(args.features, newline="") as fh:
        records, labels = read_records_csv(fh)
    unlabeled = [r.image_id for r in records if r.image_id not in labels]
    if unlabeled:
        warnings.warn(f"skipping {len(unlabeled)} unlabeled rows")
        log.warning("skipping unlabeled rows: %s", ", ".join(unlabeled))
    records = [r for r in records if r.image_id in labels]
    truth = {r.image_id: parse_label(labels[r.image_id]) for r in records}
    ids = [r.image_id for r in records]
    by_id = {r.image_id: r for r in records}
    train_ids, test_ids = train_test_split(ids, [truth[i] for i in ids], args.ratio, args.seed)

    train = [by_id[i] for i in train_ids]
    train_y = [truth[i] for i in train_ids]
    tree = train_decision_tree(train, train_y, args.max_depth)
    dt_rules = extract_dt_rules(tree)
    cuts = discretize_supervised(train, train_y)

    rules_dir = Path(args.rules)
    rules_dir.mkdir(parents=True, exist_ok=True)
    dt_rules.save(rules_dir / "dt_learned.json")
    (rules_dir / "cuts.json").write_text(json.dumps(cuts.__dict__, indent=2) + "\n")
    svm = _rules_from_dir(rules_dir, "svm", SVM_RULES)
    dl = _rules_from_dir(rules_dir, "dl", DL_RULES)

    rows = []
    for i in test_ids:
        rec = by_id[i]
        v = ensemble_votes(rec, apply_cuts(rec, cuts), dt_rules, svm, dl)
        rows.append({"image_id": i, **v, "truth": truth[i]})

    def fmt(x):
        return "Abstain" if x is None else str(x)

    out_path = Path(args.out) if args.out else rules_dir / "classify_report.csv"
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "DT", "SVM", "DL", "ensemble", "truth"])
        for r in rows:
            w.writerow([r["image_id"], fmt(r["DT"]), fmt(r["SVM"]), fmt(r["DL"]), fmt(r["ensemble"]), fmt(r["truth"])])

    train_acc = accuracy([tree.predict(r) for r in train], train_y)
    print(f"train/test: {len(train_ids)}/{len(test_ids)}  seed={args.seed}")
    print(f"DT train accuracy: {train_acc:.4f}")
    if rows:
        t = [r["truth"] for r in rows]
        for key in ("DT", "SVM", "DL", "ensemble"):
            preds = [r[key] for r in rows]
            covered = sum(p is not None for p in preds)
            print(f"{key:>8} test accuracy: {accuracy(preds, t):.4f}  (covered {covered}/{len(t)})")
    for r in dt_rules:
        print(f"  {r}")
    return 0


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _config(args)
    entries = [e for e in manifest.entries if e.annotation is not None]
    skipped = len(manifest.entries) - len(entries)
    if skipped:
        log.warning("skipping %d entries without annotation", skipped)

    def run(entry):
        try:
            if args.masks:
                mask = load_mask(Path(args.masks) / f"{entry.image_id}.pgm")
            else:
                mask = _segment(manifest, entry, cfg)[1]
            ref = load_mask(entry.annotation)
            return entry.image_id, overlap(mask, ref), None
        except Exception as exc:
            log.error("%s: %s", entry.image_id, exc)
            return entry.image_id, None, str(exc)

    results = _map(run, entries, args.jobs)
    reports = [r for _, r, _ in results if r is not None]
    doc = {
        "config_hash": cfg.config_hash(),
        "per_image": [
            {"image_id": i, **(r.to_dict() if r else {"error": err})} for i, r, err in results
        ],
        "aggregate": aggregate(reports),
    }
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    agg = doc["aggregate"]
    if agg["n"]:
        print(
            f"n={agg['n']}  mean Jaccard {agg['mean_jaccard']:.4f}  mean Dice {agg['mean_dice']:.4f}  "
            f"pooled Jaccard {agg['pooled_jaccard']:.4f}  pooled Dice {agg['pooled_dice']:.4f}"
        )
    return 1 if len(reports) != len(results) else 0


def cmd_phantom(args) -> int:
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "truth").mkdir(parents=True, exist_ok=True)
    size = args.size
    scan = DEFAULT_SCAN_SIZE_UM * size / DEFAULT_PIXELS_PER_SIDE
    entries = []

    def add(iid, img, truth, label=None, stack=None, section=None):
        save_gray(img, out / "images" / f"{iid}.pgm")
        save_mask(truth, out / "truth" / f"{iid}.pgm")
        e = {"image_id": iid, "path": f"images/{iid}.pgm", "annotation": f"truth/{iid}.pgm"}
        if label:
            e["label"] = label
        if stack is not None:
            e.update(stack=stack, section=section)
        entries.append(e)

    if args.kind in ("suite", "mixed"):
        for iid, img, truth in ph.phantom_suite(args.count, args.seed, size):
            add(iid, img, truth, "Sick")
    if args.kind in ("healthy", "mixed"):
        for k in range(args.count):
            img, truth = ph.healthy_phantom(args.seed * 1000 + 500 + k, size)
            add(f"healthy_{k:02d}", img, truth, "NotSick")
    if args.kind == "stack":
        radius = size * 0.3
        for visit, (n, r) in enumerate(((args.sections, radius), (args.sections + 2, radius * 0.85)), 1):
            imgs, truths = ph.section_stack_phantom(n, r, args.seed + visit, size)
            for z, (img, truth) in enumerate(zip(imgs, truths)):
                add(f"visit{visit}_s{z:03d}", img, truth, stack=f"visit{visit}", section=z)
    write_manifest(out / "manifest.json", entries, scan, size)
    print(f"wrote {len(entries)} phantom images -> {out / 'manifest.json'}")
    return 0


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="octabio", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, manifest=True, out_help="output path"):
        if manifest:
            sp.add_argument("--manifest", required=True, help="dataset manifest JSON")
        sp.add_argument("--config", help="pipeline config (.json or .toml)")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=int, default=1)

    sp = sub.add_parser("process", help="segment every manifest entry")
    common(sp, out_help="output directory")
    sp.add_argument("--dump-stages", action="store_true", help="write one PGM per pipeline stage")
    sp.set_defaults(func=cmd_process)

    sp = sub.add_parser("features", help="biomarker CSV for every entry")
    common(sp, out_help="CSV file (default stdout)")
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("volume", help="stack volume table and STL export")
    sp.add_argument("--manifest")
    sp.add_argument("--stack", help="stack manifest of section masks (instead of --manifest)")
    sp.add_argument("--group", action="append", help="stack group to measure (repeatable)")
    common(sp, manifest=False, out_help="output directory for STL/JSON")
    sp.set_defaults(func=cmd_volume)

    sp = sub.add_parser("classify", help="train and evaluate the white-box classifiers")
    sp.add_argument("--features", required=True, help="labelled features CSV")
    sp.add_argument("--rules", required=True, help="rules directory (read/write)")
    sp.add_argument("--ratio", type=float, default=0.8)
    sp.add_argument("--max-depth", type=int, default=3)
    common(sp, manifest=False, out_help="report CSV (default <rules>/classify_report.csv)")
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("evaluate", help="Jaccard/Dice against annotations")
    common(sp, out_help="JSON report path")
    sp.add_argument("--masks", help="directory of precomputed masks (<image_id>.pgm)")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("phantom", help="write a synthetic phantom dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--kind", choices=("suite", "healthy", "mixed", "stack"), default="suite")
    sp.add_argument("--count", type=int, default=20)
    sp.add_argument("--sections", type=int, default=50)
    sp.add_argument("--size", type=int, default=DEFAULT_PIXELS_PER_SIDE)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_phantom)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "volume" and not (args.manifest or args.stack):
        print("volume: need --manifest or --stack", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
