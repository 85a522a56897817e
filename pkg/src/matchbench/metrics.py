"""Pose-error scoring and aggregation: SP curves, AUC, AP bars, timings.

A pair counts as correctly matched when its pose error is strictly below the
threshold; failed estimations carry e = +inf and therefore never count.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import PairTask, SequenceManifest
from .errors import InvalidInputError, MatchbenchError, ParseError
from .estimation import MIN_SAMPLE, RansacConfig, estimate_relative_pose
from .geometry import pose_error, rotation_error_deg, translation_error_deg

log = logging.getLogger(__name__)

REPORT_MAGIC = "matchbench-report 1"
# below this ground-truth baseline (meters) the translation direction is undefined
DEGENERATE_BASELINE_M = 1e-6
TIMING_UNKNOWN = -1.0

POLICY_ROTATION_ONLY = "rotation-only"
POLICY_EXCLUDE_PAIR = "exclude-pair"


@dataclass
class MetricConfig:
    thresholds: tuple[float, ...] = tuple(float(t) for t in range(1, 21))
    ap_threshold: float = 5.0
    degenerate_translation_policy: str = POLICY_ROTATION_ONLY

    def __post_init__(self):
        self.thresholds = tuple(float(t) for t in self.thresholds)
        if not self.thresholds or any(t <= 0 for t in self.thresholds):
            raise InvalidInputError("thresholds must be positive")
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise InvalidInputError("thresholds must be strictly increasing")
        if self.degenerate_translation_policy not in (POLICY_ROTATION_ONLY, POLICY_EXCLUDE_PAIR):
            raise InvalidInputError(
                f"unknown degenerate-translation policy {self.degenerate_translation_policy!r}"
            )


@dataclass
class PairResult:
    """Per-pair errors (degrees; +inf when estimation failed) and bookkeeping."""

    pair_id: int
    e_r: float
    e_t: float
    e: float
    correspondence_count: int
    inlier_count: int
    detect_ms: float = TIMING_UNKNOWN
    match_ms: float = TIMING_UNKNOWN
    select_ms: float = TIMING_UNKNOWN
    estimate_ms: float = TIMING_UNKNOWN


@dataclass
class TimingSummary:
    """Mean per-stage milliseconds over the timing subset (None: all unknown)."""

    detect_ms: float | None
    match_ms: float | None
    select_ms: float | None
    estimate_ms: float | None
    subset_size: int


@dataclass
class EvaluationReport:
    sequence: str
    matcher: str
    seed: int
    estimator_digest: str
    pair_list_digest: str
    metric_config: MetricConfig
    results: list[PairResult]
    sp: list[tuple[float, float]]
    auc: float
    ap: float | None
    timing: TimingSummary
    dropped: list[tuple[int, str]] = field(default_factory=list)
    failures: list[tuple[int, str]] = field(default_factory=list)
    tool_version: str = __version__


def classify_pair(e: float, threshold: float) -> bool:
    """True iff the pose error is strictly below the threshold."""
    if threshold <= 0:
        raise InvalidInputError("threshold must be positive")
    return e < threshold


def sp_curve(results: list[PairResult], config: MetricConfig) -> list[tuple[float, float]]:
    """Success ratio per threshold; the denominator is all pairs, failures included."""
    if not results:
        raise InvalidInputError("cannot build an SP curve from zero pairs")
    errors = np.array([r.e for r in results])
    total = len(results)
    return [(t, float(np.count_nonzero(errors < t)) / total) for t in config.thresholds]


def auc(sp: list[tuple[float, float]]) -> float:
    """Mean of the success ratios over the discrete threshold grid."""
    if not sp:
        raise InvalidInputError("cannot average an empty SP curve")
    return float(sum(ratio for _, ratio in sp) / len(sp))


def ap(results: list[PairResult], config: MetricConfig) -> float | None:
    """Mean correspondence count over correctly matched pairs (None if there are none)."""
    counts = [r.correspondence_count for r in results if r.e < config.ap_threshold]
    if not counts:
        return None
    return float(sum(counts) / len(counts))


def timing_summary(results: list[PairResult], subset_size: int = 200) -> TimingSummary:
    """Per-stage mean milliseconds over the first ``subset_size`` pairs by pair id.

    Unknown sentinels are ignored per stage; a stage with no known values
    reports None.
    """
    subset = sorted(results, key=lambda r: r.pair_id)[: max(0, subset_size)]

    def mean_known(stage):
        known = [getattr(r, stage) for r in subset if getattr(r, stage) >= 0.0]
        return float(sum(known) / len(known)) if known else None

    return TimingSummary(
        mean_known("detect_ms"),
        mean_known("match_ms"),
        mean_known("select_ms"),
        mean_known("estimate_ms"),
        len(subset),
    )


# ------------------------------------------------------------------ evaluation


def config_digest(config) -> str:
    """Stable hex digest of a dataclass config (identifies estimator settings)."""
    doc = json.dumps(dataclasses.asdict(config), sort_keys=True, default=str)
    return hashlib.sha256(doc.encode("utf-8")).hexdigest()[:16]


def _evaluate_single(task, corr_source, K1, K2, est_cfg, metric_cfg):
    """Returns (PairResult | None, note).  None means the pair was excluded."""
    try:
        corr_set = corr_source(task)
    except (MatchbenchError, OSError) as exc:
        failed = PairResult(task.pair_id, math.inf, math.inf, math.inf, 0, 0)
        return failed, f"correspondences unavailable: {exc}"

    n_corr = len(corr_set)
    stage_ms = (corr_set.detect_ms, corr_set.match_ms, corr_set.select_ms)
    started = time.perf_counter()
    try:
        if n_corr < MIN_SAMPLE:
            raise InvalidInputError(f"{n_corr} correspondences < minimal sample {MIN_SAMPLE}")
        pair_cfg = dataclasses.replace(est_cfg, seed=est_cfg.seed ^ task.pair_id)
        estimate = estimate_relative_pose(corr_set.correspondences, K1, K2, pair_cfg)
    except MatchbenchError as exc:
        estimate_ms = (time.perf_counter() - started) * 1000.0
        failed = PairResult(
            task.pair_id, math.inf, math.inf, math.inf, n_corr, 0, *stage_ms, estimate_ms
        )
        return failed, f"estimation failed: {exc}"
    estimate_ms = (time.perf_counter() - started) * 1000.0

    e_r = rotation_error_deg(estimate.pose.rotation, task.gt_relative.rotation)
    t_gt = task.gt_relative.translation
    if np.linalg.norm(t_gt) < DEGENERATE_BASELINE_M:
        if metric_cfg.degenerate_translation_policy == POLICY_EXCLUDE_PAIR:
            return None, "degenerate ground-truth translation (pair excluded)"
        e_t, e = math.nan, e_r  # rotation-only
        note = "degenerate ground-truth translation (rotation-only error)"
    else:
        e_t = translation_error_deg(estimate.pose.translation, t_gt)
        e = pose_error(e_r, e_t)
        note = None
    inliers = int(np.count_nonzero(estimate.inlier_mask))
    return PairResult(task.pair_id, e_r, e_t, e, n_corr, inliers, *stage_ms, estimate_ms), note


def _evaluate_star(args):
    return _evaluate_single(*args)


def evaluate_pairs(
    manifest: SequenceManifest,
    pairs: list[PairTask],
    corr_source,
    estimator_config: RansacConfig | None = None,
    metric_config: MetricConfig | None = None,
    *,
    matcher_name: str = "unknown",
    pair_list_digest: str = "",
    jobs: int = 1,
) -> EvaluationReport:
    """Score every pair and aggregate SP/AUC/AP/timing into a report.

    ``corr_source`` maps a PairTask to a CorrespondenceSet (see
    ``matching.load_correspondences``); it must be picklable when jobs > 1.
    Failures (missing files, too few correspondences, no RANSAC consensus)
    are recorded as e = +inf results, never aborts.  Deterministic given the
    estimator seed: each pair runs with seed XOR pair_id.
    """
    est_cfg = estimator_config or RansacConfig()
    metric_cfg = metric_config or MetricConfig()
    ordered = sorted(pairs, key=lambda t: t.pair_id)
    work = [
        (
            task,
            corr_source,
            manifest.images[task.ref_index].calibration,
            manifest.images[task.query_index].calibration,
            est_cfg,
            metric_cfg,
        )
        for task in ordered
    ]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_evaluate_star, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        outcomes = [_evaluate_single(*w) for w in work]

    results: list[PairResult] = []
    dropped: list[tuple[int, str]] = []
    failures: list[tuple[int, str]] = []
    for task, (result, note) in zip(ordered, outcomes):
        if result is None:
            dropped.append((task.pair_id, note))
            log.info("pair %d dropped: %s", task.pair_id, note)
            continue
        results.append(result)
        if note is not None:
            failures.append((task.pair_id, note))

    if results:
        sp = sp_curve(results, metric_cfg)
        auc_score = auc(sp)
    else:
        sp, auc_score = [], 0.0
    return EvaluationReport(
        sequence=manifest.name,
        matcher=matcher_name,
        seed=est_cfg.seed,
        estimator_digest=config_digest(est_cfg),
        pair_list_digest=pair_list_digest,
        metric_config=metric_cfg,
        results=results,
        sp=sp,
        auc=auc_score,
        ap=ap(results, metric_cfg),
        timing=timing_summary(results),
        dropped=dropped,
        failures=failures,
    )


# ------------------------------------------------------------- serialization


def _encode_float(value: float):
    if value is None or math.isfinite(value):
        return value
    return repr(value)  # 'inf', '-inf', 'nan'


def _decode_float(value, what: str, path=None) -> float:
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            raise ParseError(f"bad float token {value!r} for {what}", path=path) from None
    if isinstance(value, (int, float)):
        return float(value)
    raise ParseError(f"bad value {value!r} for {what}", path=path)


_PAIR_FIELDS = (
    "pair_id", "e_r", "e_t", "e", "n_corr", "n_inlier",
    "detect_ms", "match_ms", "select_ms", "estimate_ms",
)


def write_report(report: EvaluationReport, path) -> None:
    doc = {
        "schema": REPORT_MAGIC,
        "tool_version": report.tool_version,
        "sequence": report.sequence,
        "matcher": report.matcher,
        "seed": report.seed,
        "estimator_digest": report.estimator_digest,
        "pair_list_digest": report.pair_list_digest,
        "metric_config": {
            "thresholds": list(report.metric_config.thresholds),
            "ap_threshold": report.metric_config.ap_threshold,
            "degenerate_translation_policy": report.metric_config.degenerate_translation_policy,
        },
        "sp": [[t, r] for t, r in report.sp],
        "auc": report.auc,
        "ap": report.ap,
        "timing": {
            "detect_ms": report.timing.detect_ms,
            "match_ms": report.timing.match_ms,
            "select_ms": report.timing.select_ms,
            "estimate_ms": report.timing.estimate_ms,
            "subset_size": report.timing.subset_size,
        },
        "pairs": [
            {
                "pair_id": r.pair_id,
                "e_r": _encode_float(r.e_r),
                "e_t": _encode_float(r.e_t),
                "e": _encode_float(r.e),
                "n_corr": r.correspondence_count,
                "n_inlier": r.inlier_count,
                "detect_ms": r.detect_ms,
                "match_ms": r.match_ms,
                "select_ms": r.select_ms,
                "estimate_ms": r.estimate_ms,
            }
            for r in report.results
        ],
        "dropped": [{"pair_id": p, "reason": reason} for p, reason in report.dropped],
        "failures": [{"pair_id": p, "reason": reason} for p, reason in report.failures],
    }
    Path(path).write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def read_report(path) -> EvaluationReport:
    path = Path(path)

    def reject_constant(token):
        raise ParseError(f"non-finite literal {token!r} not allowed (use strings)", path=path)

    try:
        doc = json.loads(path.read_text(encoding="utf-8"), parse_constant=reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=path) from exc
    required = (
        "schema", "tool_version", "sequence", "matcher", "seed", "estimator_digest",
        "pair_list_digest", "metric_config", "sp", "auc", "ap", "timing", "pairs",
        "dropped", "failures",
    )
    for key in required:
        if key not in doc:
            raise ParseError(f"report missing required field {key!r}", path=path)
    if doc["schema"] != REPORT_MAGIC:
        raise ParseError(f"unsupported report schema {doc['schema']!r}", path=path)
    mc = doc["metric_config"]
    for key in ("thresholds", "ap_threshold", "degenerate_translation_policy"):
        if key not in mc:
            raise ParseError(f"metric_config missing required field {key!r}", path=path)
    metric_cfg = MetricConfig(
        tuple(mc["thresholds"]), mc["ap_threshold"], mc["degenerate_translation_policy"]
    )
    results = []
    for i, entry in enumerate(doc["pairs"]):
        for key in _PAIR_FIELDS:
            if key not in entry:
                raise ParseError(f"pair {i} missing required field {key!r}", path=path)
        results.append(
            PairResult(
                int(entry["pair_id"]),
                _decode_float(entry["e_r"], "e_r", path),
                _decode_float(entry["e_t"], "e_t", path),
                _decode_float(entry["e"], "e", path),
                int(entry["n_corr"]),
                int(entry["n_inlier"]),
                _decode_float(entry["detect_ms"], "detect_ms", path),
                _decode_float(entry["match_ms"], "match_ms", path),
                _decode_float(entry["select_ms"], "select_ms", path),
                _decode_float(entry["estimate_ms"], "estimate_ms", path),
            )
        )
    t = doc["timing"]
    timing = TimingSummary(
        t.get("detect_ms"), t.get("match_ms"), t.get("select_ms"), t.get("estimate_ms"),
        int(t.get("subset_size", 0)),
    )
    return EvaluationReport(
        sequence=str(doc["sequence"]),
        matcher=str(doc["matcher"]),
        seed=int(doc["seed"]),
        estimator_digest=str(doc["estimator_digest"]),
        pair_list_digest=str(doc["pair_list_digest"]),
        metric_config=metric_cfg,
        results=results,
        sp=[(float(t_), float(r_)) for t_, r_ in doc["sp"]],
        auc=float(doc["auc"]),
        ap=None if doc["ap"] is None else float(doc["ap"]),
        timing=timing,
        dropped=[(int(d["pair_id"]), str(d["reason"])) for d in doc["dropped"]],
        failures=[(int(d["pair_id"]), str(d["reason"])) for d in doc["failures"]],
        tool_version=str(doc["tool_version"]),
    )


def write_report_csvs(report: EvaluationReport, directory) -> tuple[Path, Path]:
    """Emit ``sp.csv`` and ``pairs.csv`` next to the report for plotting tools."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sp_path = directory / "sp.csv"
    sp_lines = ["threshold_deg,success_ratio"]
    for threshold, ratio in report.sp:
        sp_lines.append(f"{threshold!r},{ratio!r}")
    sp_path.write_text("\n".join(sp_lines) + "\n", encoding="utf-8")

    pairs_path = directory / "pairs.csv"
    lines = [",".join(_PAIR_FIELDS)]
    for r in report.results:
        lines.append(
            ",".join(
                repr(float(v)) if isinstance(v, float) else str(v)
                for v in (
                    r.pair_id, r.e_r, r.e_t, r.e, r.correspondence_count, r.inlier_count,
                    r.detect_ms, r.match_ms, r.select_ms, r.estimate_ms,
                )
            )
        )
    pairs_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return sp_path, pairs_path
