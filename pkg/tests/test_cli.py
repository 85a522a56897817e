import json
import math
from pathlib import Path

import numpy as np
import pytest

from matchbench.cli import main
from matchbench.dataset import (
    ImageEntry,
    SequenceManifest,
    read_manifest,
    read_pairs_csv,
    write_manifest,
    write_pairs_csv,
)
from matchbench.geometry import Calibration, Pose
from matchbench.matching import load_correspondences
from matchbench.metrics import (
    EvaluationReport,
    MetricConfig,
    PairResult,
    TimingSummary,
    read_report,
    write_report,
)
from synthetic import random_rotation

SMOKE = Path(__file__).parent / "fixtures" / "smoke"


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    """import + pairs once; matching subset reused across CLI tests."""
    root = tmp_path_factory.mktemp("cli_smoke")
    manifest = root / "manifest.json"
    pairs = root / "pairs.csv"
    assert main(["import", "--format", "tum", "--input", str(SMOKE), "--output", str(manifest)]) == 0
    assert main(["pairs", "--manifest", str(manifest), "--mode", "short", "--k", "15", "--output", str(pairs)]) == 0
    small = root / "pairs3.csv"
    rows = read_pairs_csv(pairs)[:3]
    small.write_text("pair_id,ref,query\n" + "\n".join(f"{a},{b},{c}" for a, b, c in rows) + "\n")
    corr = root / "corr"
    assert (
        main(
            [
                "match", "--manifest", str(manifest), "--pairs", str(small),
                "--image-root", str(SMOKE), "--output", str(corr),
            ]
        )
        == 0
    )
    return {"root": root, "manifest": manifest, "pairs": pairs, "pairs3": small, "corr": corr}


# -------------------------------------------------------------------- import


def test_import_tum_fixture(smoke_run, capsys):
    m = read_manifest(smoke_run["manifest"])
    assert len(m) == 30
    assert all(im.has_pose for im in m.images)
    assert m.fps == 30.0


def test_import_unknown_format_usage_error(tmp_path):
    with pytest.raises(SystemExit) as excinfo:
        main(["import", "--format", "sift", "--input", str(tmp_path), "--output", str(tmp_path / "m.json")])
    assert excinfo.value.code == 2


def test_import_empty_directory_data_error(tmp_path, capsys):
    code = main(["import", "--format", "strecha", "--input", str(tmp_path), "--output", str(tmp_path / "m.json")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_import_missing_sequence_flag_for_kitti(tmp_path):
    code = main(["import", "--format", "kitti", "--input", str(tmp_path), "--output", str(tmp_path / "m.json")])
    assert code == 2


def test_import_writes_meta_sidecar(smoke_run):
    meta = json.loads((smoke_run["root"] / "manifest.json.meta.json").read_text())
    assert meta["schema"] == "matchbench-meta 1"
    assert meta["command"] == "import"
    assert "config_digest" in meta and "tool_version" in meta


# --------------------------------------------------------------------- pairs


def test_pairs_wide_exhaustive_30_images(smoke_run, tmp_path, capsys):
    out = tmp_path / "wide.csv"
    assert main(["pairs", "--manifest", str(smoke_run["manifest"]), "--mode", "wide-exhaustive", "--output", str(out)]) == 0
    assert "435 pairs" in capsys.readouterr().out
    assert len(read_pairs_csv(out)) == 435


def test_pairs_short_prints_28(smoke_run, capsys):
    assert len(read_pairs_csv(smoke_run["pairs"])) == 28


def test_pairs_wide_window_on_five_images(tmp_path, capsys):
    rng = np.random.default_rng(0)
    images = [
        ImageEntry(f"i{i}.png", float(i), Calibration(500, 500, 320, 240), Pose(random_rotation(rng), rng.uniform(-1, 1, 3)))
        for i in range(5)
    ]
    write_manifest(SequenceManifest("five", 0.0, images), tmp_path / "m.json")
    out = tmp_path / "w.csv"
    assert main(["pairs", "--manifest", str(tmp_path / "m.json"), "--mode", "wide-window", "--window", "9", "--output", str(out)]) == 0
    assert "10 pairs" in capsys.readouterr().out


def test_pairs_short_mode_on_unordered_is_usage_error(tmp_path, capsys):
    rng = np.random.default_rng(1)
    images = [
        ImageEntry(f"i{i}.png", float(i), Calibration(500, 500, 320, 240), Pose(random_rotation(rng), rng.uniform(-1, 1, 3)))
        for i in range(10)
    ]
    write_manifest(SequenceManifest("unordered", 0.0, images), tmp_path / "m.json")
    code = main(["pairs", "--manifest", str(tmp_path / "m.json"), "--mode", "short", "--output", str(tmp_path / "p.csv")])
    assert code == 2


def test_pairs_subsample_then_window(smoke_run, tmp_path, capsys):
    out = tmp_path / "sw.csv"
    assert main(
        ["pairs", "--manifest", str(smoke_run["manifest"]), "--mode", "wide-window", "--k", "15", "--window", "9", "--output", str(out)]
    ) == 0
    # 30 images -> 2 fragment heads -> 1 pair
    assert len(read_pairs_csv(out)) == 1


# --------------------------------------------------------------------- match


def test_match_writes_conforming_corr_files(smoke_run):
    corr_dir = smoke_run["corr"]
    files = sorted(corr_dir.glob("*.corr"))
    assert [f.name for f in files] == ["0.corr", "1.corr", "2.corr"]
    for f in files:
        lines = f.read_text().splitlines()
        assert lines[0] == "matchbench-corr 1"
        assert lines[1].startswith("times ")
        assert all(len(line.split()) == 4 for line in lines[2:])
    cs = load_correspondences(corr_dir, 0)
    assert len(cs) > 50


def test_match_rerun_identical_modulo_times(smoke_run, tmp_path):
    out2 = tmp_path / "corr2"
    assert main(
        [
            "match", "--manifest", str(smoke_run["manifest"]), "--pairs", str(smoke_run["pairs3"]),
            "--image-root", str(SMOKE), "--output", str(out2),
        ]
    ) == 0
    for f1 in sorted(smoke_run["corr"].glob("*.corr")):
        a = f1.read_text().splitlines()
        b = (out2 / f1.name).read_text().splitlines()
        assert a[0] == b[0] and a[2:] == b[2:]


def test_match_missing_image_skipped(smoke_run, tmp_path, capsys):
    manifest = read_manifest(smoke_run["manifest"])
    broken = SequenceManifest(manifest.name, manifest.fps, list(manifest.images))
    broken.images[1] = ImageEntry("rgb/nonexistent.png", broken.images[1].timestamp,
                                  broken.images[1].calibration, broken.images[1].pose)
    mpath = tmp_path / "m.json"
    write_manifest(broken, mpath)
    out = tmp_path / "corr"
    assert main(
        ["match", "--manifest", str(mpath), "--pairs", str(smoke_run["pairs3"]),
         "--image-root", str(SMOKE), "--output", str(out)]
    ) == 0
    assert "1 skipped" in capsys.readouterr().out
    assert len(list(out.glob("*.corr"))) == 2


# ------------------------------------------------------------------ evaluate


def test_evaluate_prints_auc_and_writes_exports(smoke_run, tmp_path, capsys):
    out = tmp_path / "results" / "report.json"
    code = main(
        ["evaluate", "--manifest", str(smoke_run["manifest"]), "--pairs", str(smoke_run["pairs3"]),
         "--corr", str(smoke_run["corr"]), "--seed", "7", "--output", str(out)]
    )
    assert code == 0
    printed = capsys.readouterr().out
    assert printed.startswith("AUC ")
    report = read_report(out)
    assert report.auc > 0.9  # 3 easy pairs
    assert (out.parent / "sp.csv").is_file() and (out.parent / "pairs.csv").is_file()
    meta = json.loads(Path(str(out) + ".meta.json").read_text())
    assert meta["seed"] == 7


def test_evaluate_empty_corr_dir_gives_zero_auc(smoke_run, tmp_path, capsys):
    empty = tmp_path / "none"
    empty.mkdir()
    out = tmp_path / "results" / "report.json"
    code = main(
        ["evaluate", "--manifest", str(smoke_run["manifest"]), "--pairs", str(smoke_run["pairs3"]),
         "--corr", str(empty), "--output", str(out)]
    )
    assert code == 0
    assert read_report(out).auc == 0.0


def test_evaluate_rerun_identical_excluding_timings(smoke_run, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name / "report.json"
        assert main(
            ["evaluate", "--manifest", str(smoke_run["manifest"]), "--pairs", str(smoke_run["pairs3"]),
             "--corr", str(smoke_run["corr"]), "--seed", "3", "--output", str(out)]
        ) == 0
        outs.append(out)

    def strip_timings(path):
        doc = json.loads(path.read_text())
        doc.pop("timing")
        for pair in doc["pairs"]:
            for key in ("detect_ms", "match_ms", "select_ms", "estimate_ms"):
                pair.pop(key)
        return doc

    assert strip_timings(outs[0]) == strip_timings(outs[1])


def test_evaluate_config_file_with_flag_override(smoke_run, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"seed": 1, "matcher": "builtin", "estimator": {"min_iterations": 50}}))
    out = tmp_path / "results" / "report.json"
    assert main(
        ["evaluate", "--manifest", str(smoke_run["manifest"]), "--pairs", str(smoke_run["pairs3"]),
         "--corr", str(smoke_run["corr"]), "--config", str(cfg), "--seed", "9", "--output", str(out)]
    ) == 0
    assert read_report(out).seed == 9  # flag wins over the file


def test_evaluate_bad_config_is_data_error(smoke_run, tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text('{"bogus_key": 1}')
    code = main(
        ["evaluate", "--manifest", str(smoke_run["manifest"]), "--pairs", str(smoke_run["pairs3"]),
         "--corr", str(smoke_run["corr"]), "--config", str(cfg), "--output", str(tmp_path / "r.json")]
    )
    assert code == 1


def test_evaluate_refuses_to_clobber_foreign_pairs_csv(smoke_run, tmp_path):
    outdir = tmp_path / "results"
    outdir.mkdir()
    (outdir / "pairs.csv").write_text("pair_id,ref,query\n0,0,1\n")  # an input pair list
    code = main(
        ["evaluate", "--manifest", str(smoke_run["manifest"]), "--pairs", str(smoke_run["pairs3"]),
         "--corr", str(smoke_run["corr"]), "--output", str(outdir / "report.json")]
    )
    assert code == 2


# ------------------------------------------------------------------- compare


def _mini_report(matcher, sequence, auc_value, digest):
    results = [PairResult(0, 1.0, 1.0, 1.0, 100, 90, 1.0, 1.0, 1.0, 1.0)]
    cfg = MetricConfig()
    sp = [(t, auc_value) for t in cfg.thresholds]
    return EvaluationReport(
        sequence, matcher, 0, "estdigest", digest, cfg, results, sp, auc_value, 100.0,
        TimingSummary(1.0, 1.0, 1.0, 1.0, 1),
    )


def test_compare_marks_best_and_orders_columns(tmp_path, capsys):
    paths = []
    for matcher, seq, auc_value in (("alpha", "s1", 0.4), ("beta", "s1", 0.6)):
        p = tmp_path / f"{matcher}.json"
        write_report(_mini_report(matcher, seq, auc_value, "d1"), p)
        paths.append(str(p))
    out = tmp_path / "table.csv"
    assert main(["compare", "--reports", *paths, "--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "matcher,s1"
    assert lines[1] == "alpha,0.400000"
    assert lines[2] == "beta,0.600000*"


def test_compare_digest_mismatch_fails(tmp_path, capsys):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    write_report(_mini_report("alpha", "s1", 0.4, "d1"), p1)
    write_report(_mini_report("beta", "s1", 0.6, "d2"), p2)
    assert main(["compare", "--reports", str(p1), str(p2), "--output", str(tmp_path / "t.csv")]) == 1
    assert "different pair lists" in capsys.readouterr().err


def test_compare_three_reports_column_order_follows_input(tmp_path):
    paths = []
    for matcher, seq, auc_value, digest in (
        ("m1", "s2", 0.5, "dB"),
        ("m1", "s1", 0.3, "dA"),
        ("m2", "s1", 0.2, "dA"),
    ):
        p = tmp_path / f"{matcher}_{seq}.json"
        write_report(_mini_report(matcher, seq, auc_value, digest), p)
        paths.append(str(p))
    out = tmp_path / "t.csv"
    assert main(["compare", "--reports", *paths, "--output", str(out)]) == 0
    header = out.read_text().splitlines()[0]
    assert header == "matcher,s2,s1"  # input order


def test_compare_needs_two_reports(tmp_path):
    p = tmp_path / "a.json"
    write_report(_mini_report("alpha", "s1", 0.4, "d1"), p)
    assert main(["compare", "--reports", str(p), "--output", str(tmp_path / "t.csv")]) == 2


# ---------------------------------------------------------------- exit codes


def test_missing_manifest_is_data_error(tmp_path, capsys):
    code = main(["pairs", "--manifest", str(tmp_path / "nope.json"), "--mode", "short", "--output", str(tmp_path / "p.csv")])
    assert code == 1
