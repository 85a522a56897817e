"""Command-line orchestration: import -> pairs -> match -> evaluate -> compare.

The pipeline is staged through files (manifest, pair CSV, ``.corr`` directory,
report) so externally produced correspondences can slot in at the ``.corr``
stage.  Exit codes: 0 success, 1 data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from . import dataset as ds
from .errors import MatchbenchError, ParseError
from .estimation import RansacConfig
from .images import read_image
from .matching import DirectoryCorrespondenceSource, MatcherConfig, run_builtin_matcher, save_correspondences
from .metrics import MetricConfig, evaluate_pairs, read_report, write_report, write_report_csvs

log = logging.getLogger("matchbench")

META_MAGIC = "matchbench-meta 1"


@dataclass
class RunConfig:
    """Mirror of the evaluation config file; flags override file values."""

    seed: int = 0
    jobs: int = 1
    matcher: str = "builtin"
    estimator: RansacConfig = dataclasses.field(default_factory=RansacConfig)
    metrics: MetricConfig = dataclasses.field(default_factory=MetricConfig)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}", path=path) from exc
        if not isinstance(doc, dict):
            raise ParseError("config must be a JSON object", path=path)
        known = {"seed", "jobs", "matcher", "estimator", "metrics"}
        unknown = set(doc) - known
        if unknown:
            raise ParseError(f"unknown config keys: {sorted(unknown)}", path=path)
        try:
            estimator = RansacConfig(**doc.get("estimator", {}))
            metric_doc = dict(doc.get("metrics", {}))
            if "thresholds" in metric_doc:
                metric_doc["thresholds"] = tuple(metric_doc["thresholds"])
            metrics = MetricConfig(**metric_doc)
        except TypeError as exc:
            raise ParseError(f"bad config field: {exc}", path=path) from exc
        return cls(
            seed=int(doc.get("seed", 0)),
            jobs=int(doc.get("jobs", 1)),
            matcher=str(doc.get("matcher", "builtin")),
            estimator=estimator,
            metrics=metrics,
        )


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("MATCHBENCH_JOBS", "1")))
    except ValueError:
        return 1


def _digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def _args_doc(args) -> dict:
    """Reproducible view of the parsed arguments (no callables, paths as text)."""
    return {k: str(v) if isinstance(v, Path) else v for k, v in vars(args).items() if k != "func"}


def _write_meta(target: Path, command: str, config_doc: dict, seed: int | None) -> None:
    """Sidecar recording tool version, config digest, and seed for an output."""
    meta = {
        "schema": META_MAGIC,
        "tool_version": __version__,
        "command": command,
        "config_digest": _digest_bytes(json.dumps(config_doc, sort_keys=True, default=str).encode("utf-8")),
        "seed": seed,
    }
    if target.is_dir():
        meta_path = target / "run_meta.json"
    else:
        meta_path = Path(str(target) + ".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


# ------------------------------------------------------------------- commands


def cmd_import(args) -> int:
    out = Path(args.output)
    if args.format == "kitti":
        if not args.sequence:
            raise UsageError("--sequence is required for --format kitti")
        manifest = ds.import_kitti(args.input, args.sequence)
    elif args.format == "tum":
        manifest = ds.import_tum(args.input)
    else:
        manifest = ds.import_strecha(args.input)
    ds.write_manifest(manifest, out)
    _write_meta(out, "import", _args_doc(args), None)
    posed = sum(1 for im in manifest.images if im.has_pose)
    print(f"{manifest.name}: {len(manifest)} images, {posed} with ground-truth pose -> {out}")
    return 0


def cmd_pairs(args) -> int:
    manifest = ds.read_manifest(args.manifest)
    if args.mode == "short" and manifest.fps <= 0:
        raise UsageError("short mode needs an ordered sequence (manifest fps > 0)")
    if args.mode != "short" and args.k is not None:
        # paper-style wide sequences: keep the first frame of every fragment
        manifest = ds.subsample_fragments(manifest, args.k)
    if args.mode == "short":
        pairs = ds.generate_short_baseline_pairs(manifest, args.k if args.k is not None else 15)
    elif args.mode == "wide-exhaustive":
        pairs = ds.generate_wide_exhaustive(manifest)
    else:
        pairs = ds.generate_wide_window_pairs(manifest, args.window)
    out = Path(args.output)
    ds.write_pairs_csv(pairs, out)
    _write_meta(out, "pairs", _args_doc(args), None)
    print(f"{len(pairs)} pairs -> {out}")
    return 0


def _match_worker(work):
    pair_id, ref_path, query_path, max_features, ratio = work
    try:
        image_a = read_image(ref_path)
        image_b = read_image(query_path)
    except (MatchbenchError, OSError) as exc:
        return pair_id, None, f"{exc}"
    corr = run_builtin_matcher(image_a, image_b, MatcherConfig(max_features, ratio), pair_id=pair_id)
    return pair_id, corr, None


def cmd_match(args) -> int:
    manifest = ds.read_manifest(args.manifest)
    rows = ds.read_pairs_csv(args.pairs)
    pairs = ds.pairs_from_rows(rows, manifest)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_root = Path(args.image_root) if args.image_root else Path(args.manifest).resolve().parent

    work = []
    for task in sorted(pairs, key=lambda t: t.pair_id):
        ref = image_root / manifest.images[task.ref_index].path
        query = image_root / manifest.images[task.query_index].path
        work.append((task.pair_id, ref, query, args.max_features, args.ratio))

    if args.jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_match_worker, work))
    else:
        outcomes = [_match_worker(w) for w in work]

    written = 0
    skipped = 0
    for pair_id, corr, reason in outcomes:  # single writer, ordered by pair id
        if corr is None:
            skipped += 1
            log.warning("pair %d skipped: %s", pair_id, reason)
            continue
        save_correspondences(corr, out_dir)
        written += 1
    _write_meta(out_dir, "match", _args_doc(args), None)
    print(f"{written} pairs matched, {skipped} skipped -> {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.jobs is not None:
        config.jobs = args.jobs
    overrides = {
        "inlier_threshold": args.inlier_threshold,
        "confidence": args.confidence,
        "max_iterations": args.max_iterations,
    }
    est_fields = {k: v for k, v in overrides.items() if v is not None}
    estimator = dataclasses.replace(config.estimator, seed=config.seed, **est_fields)

    manifest = ds.read_manifest(args.manifest)
    pairs_path = Path(args.pairs)
    rows = ds.read_pairs_csv(pairs_path)
    pairs = ds.pairs_from_rows(rows, manifest)
    report = evaluate_pairs(
        manifest,
        pairs,
        DirectoryCorrespondenceSource(args.corr),
        estimator,
        config.metrics,
        matcher_name=config.matcher,
        pair_list_digest=_digest_bytes(pairs_path.read_bytes()),
        jobs=config.jobs,
    )
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    # the exports carry fixed names; refuse to clobber an unrelated pairs.csv
    # (e.g. the input pair list) living in the report directory
    for name, header in (("sp.csv", "threshold_deg,"), ("pairs.csv", "pair_id,e_r,")):
        existing = out.parent / name
        if existing.is_file():
            with open(existing, "r", encoding="utf-8") as fh:
                first = fh.readline()
            if not first.startswith(header):
                raise UsageError(
                    f"{existing} exists and is not a previous export; "
                    "write the report into a separate results directory"
                )
    write_report(report, out)
    write_report_csvs(report, out.parent)
    _write_meta(out, "evaluate", {**_args_doc(args), "resolved_estimator": dataclasses.asdict(estimator)}, config.seed)
    ap_text = "-" if report.ap is None else f"{report.ap:.1f}"
    print(f"AUC {report.auc:.6f}  AP {ap_text}  ({len(report.results)} pairs, {len(report.failures)} failed)")
    return 0


def cmd_compare(args) -> int:
    if len(args.reports) < 2:
        raise UsageError("need at least 2 reports to compare")
    reports = [read_report(p) for p in args.reports]

    sequences: list[str] = []
    matchers: list[str] = []
    digests: dict[str, str] = {}
    table: dict[tuple[str, str], float] = {}
    for report in reports:
        if report.sequence not in sequences:
            sequences.append(report.sequence)
            digests[report.sequence] = report.pair_list_digest
        elif digests[report.sequence] != report.pair_list_digest:
            print(
                f"error: reports for sequence {report.sequence!r} were made on different pair lists",
                file=sys.stderr,
            )
            return 1
        if report.matcher not in matchers:
            matchers.append(report.matcher)
        table[(report.matcher, report.sequence)] = report.auc

    best = {
        seq: max(auc for (_, s), auc in table.items() if s == seq) for seq in sequences
    }
    lines = ["matcher," + ",".join(sequences)]
    for matcher in matchers:
        cells = [matcher]
        for seq in sequences:
            auc = table.get((matcher, seq))
            if auc is None:
                cells.append("")
            elif auc == best[seq]:
                cells.append(f"{auc:.6f}*")  # per-column best
            else:
                cells.append(f"{auc:.6f}")
        lines.append(",".join(cells))
    text = "\n".join(lines) + "\n"
    Path(args.output).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


# ----------------------------------------------------------------- entry point


class UsageError(Exception):
    """Command-line misuse detected after argparse (exit code 2)."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="matchbench",
        description="Feature-matcher evaluation harness: pose-based pair scoring.",
    )
    parser.add_argument("--version", action="version", version=f"matchbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("import", help="convert a dataset layout into a canonical manifest")
    p.add_argument("--format", required=True, choices=["tum", "kitti", "strecha"])
    p.add_argument("--input", required=True, help="dataset directory")
    p.add_argument("--sequence", help="sequence id (kitti only)")
    p.add_argument("--output", required=True, help="manifest JSON to write")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("pairs", help="generate an evaluation pair list from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", required=True, choices=["short", "wide-exhaustive", "wide-window"])
    p.add_argument("--k", type=int, help="fragment length (short mode; wide modes: subsample first)")
    p.add_argument("--window", type=int, default=9, help="forward window (wide-window mode)")
    p.add_argument("--output", required=True, help="pair CSV to write")
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("match", help="run the built-in matcher over a pair list")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--matcher", default="builtin", choices=["builtin"])
    p.add_argument("--image-root", help="base directory for image paths (default: manifest directory)")
    p.add_argument("--max-features", type=int, default=1500)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.add_argument("--output", required=True, help="directory for .corr files")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("evaluate", help="estimate poses from correspondences and score them")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--corr", required=True, help="directory of <pair_id>.corr files")
    p.add_argument("--config", help="run-config JSON; flags override file values")
    p.add_argument("--seed", type=int)
    p.add_argument("--inlier-threshold", type=float)
    p.add_argument("--confidence", type=float)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--output", required=True, help="report JSON to write")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="tabulate AUC across reports on the same pair lists")
    p.add_argument("--reports", required=True, nargs="+")
    p.add_argument("--output", required=True, help="comparison CSV to write")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (MatchbenchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
