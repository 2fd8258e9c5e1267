import csv
import subprocess
import sys

import numpy as np
import pytest

from lapse3d.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from lapse3d.metrics import count_cells
from lapse3d.stackio import read_stack
from lapse3d.tracking import read_tracks_csv


def _cfg(tmp_path, body, name="run.cfg"):
    path = tmp_path / name
    path.write_text(body)
    return str(path)


def _metrics(path):
    with open(path) as fh:
        return {(r["frame"], r["metric"]): float(r["value"]) for r in csv.DictReader(fh)}


@pytest.fixture(scope="module")
def synth_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    cfg = _cfg(d, "[output]\ndir = data\n[synth]\ndims = 64 64 64\nn_cells = 10\nseed = 3\nn_frames = 2\ndrift = 1 0 0\n")
    assert main(["--config", cfg, "-q", "synth"]) == EXIT_OK
    return d


def test_synth_writes_ground_truth(synth_run):
    data = synth_run / "data"
    names = sorted(p.name for p in data.iterdir())
    assert "gt_tracks.csv" in names
    for t in (0, 1):
        for stem in ("image", "gt_labels"):
            assert f"{stem}_t{t:03d}.vxg" in names
        assert f"gt_junctions_t{t:03d}.csv" in names
    assert count_cells(read_stack(data / "gt_labels_t000.vxg")) == 10


def test_seed_flag_overrides_config(tmp_path):
    body = "[output]\ndir = {}\n[synth]\ndims = 64 64 16\nn_cells = 5\n"
    a = _cfg(tmp_path, body.format("a"), "a.cfg")
    b = _cfg(tmp_path, body.format("b"), "b.cfg")
    assert main(["--config", a, "--seed", "4", "-q", "synth"]) == EXIT_OK
    assert main(["-q", "synth", "--config", b, "--seed", "5"]) == EXIT_OK
    x = np.asarray(read_stack(tmp_path / "a" / "gt_labels_t000.vxg").data)
    y = np.asarray(read_stack(tmp_path / "b" / "gt_labels_t000.vxg").data)
    assert not np.array_equal(x, y)


def _segment_cfg(d, out):
    return _cfg(d, f"[input]\nstacks = data/image_t*.vxg\n[output]\ndir = {out}\n", f"{out}.cfg")


def test_segment_counts_cells_and_is_deterministic(synth_run):
    d = synth_run
    assert main(["--config", _segment_cfg(d, "seg1"), "-q", "segment"]) == EXIT_OK
    assert main(["--config", _segment_cfg(d, "seg2"), "--threads", "2", "-q", "segment"]) == EXIT_OK
    for t in (0, 1):
        a = (d / "seg1" / f"labels_t{t:03d}.vxg").read_bytes()
        b = (d / "seg2" / f"labels_t{t:03d}.vxg").read_bytes()
        assert a == b
        assert count_cells(read_stack(d / "seg1" / f"labels_t{t:03d}.vxg")) == 10


def test_features_track_evaluate(synth_run):
    d = synth_run
    if not (d / "seg1" / "labels_t000.vxg").exists():
        main(["--config", _segment_cfg(d, "seg1"), "-q", "segment"])
    cfg = _cfg(
        d,
        "[output]\ndir = seg1\n"
        "[evaluate]\ngt_labels = data/gt_labels_t*.vxg\npred_labels = seg1/labels_t*.vxg\n"
        "gt_junctions = data/gt_junctions_t*.csv\ngt_tracks = data/gt_tracks.csv\n",
        "eval.cfg",
    )
    assert main(["--config", cfg, "-q", "features"]) == EXIT_OK
    for stem in ("edges", "vertices", "features", "junctions", "segments"):
        assert (d / "seg1" / f"{stem}_t000.csv").exists()
    assert main(["--config", cfg, "-q", "track"]) == EXIT_OK
    tg = read_tracks_csv(d / "seg1" / "tracks.csv")
    assert len(tg.tracks()) == 10 and len(tg.edges) == 10
    assert main(["--config", cfg, "-q", "evaluate"]) == EXIT_OK
    m = _metrics(d / "seg1" / "metrics.csv")
    assert m[("all", "cells_pred_mean")] == 10.0
    assert m[("all", "junction_e")] == 0.0
    assert m[("all", "tra")] == 1.0
    assert m[("all", "boundary_f")] >= 0.99


def test_evaluate_identity_row(synth_run):
    d = synth_run
    cfg = _cfg(
        d,
        "[output]\ndir = ident\n"
        "[evaluate]\ngt_labels = data/gt_labels_t*.vxg\npred_labels = data/gt_labels_t*.vxg\n"
        "gt_junctions = data/gt_junctions_t*.csv\npred_junctions = data/gt_junctions_t*.csv\n"
        "gt_tracks = data/gt_tracks.csv\npred_tracks = data/gt_tracks.csv\n",
        "ident.cfg",
    )
    assert main(["--config", cfg, "-q", "evaluate"]) == EXIT_OK
    m = _metrics(d / "ident" / "metrics.csv")
    for t in ("0", "1"):
        assert m[(t, "boundary_f")] == 1.0
        assert m[(t, "junction_e")] == 0.0
    assert m[("all", "tra")] == 1.0
    assert m[("all", "aogm")] == 0.0
    assert m[("all", "cells_gt_std")] == 0.0


def test_track_single_frame(synth_run):
    d = synth_run
    cfg = _cfg(d, "[input]\nlabels = data/gt_labels_t000.vxg\n[output]\ndir = one\n", "one.cfg")
    assert main(["--config", cfg, "-q", "track"]) == EXIT_OK
    tg = read_tracks_csv(d / "one" / "tracks.csv")
    assert len(tg.tracks()) == 10 and not tg.edges


def test_track_zero_threshold_links_nothing_across_differing_frames(tmp_path):
    cfg = _cfg(
        tmp_path,
        "[output]\ndir = out\n[synth]\ndims = 64 64 16\nn_cells = 6\ngrowth = 1.1\nn_frames = 2\n"
        "[input]\nlabels = out/gt_labels_t*.vxg\n[tracking]\nthreshold = 0\n",
    )
    assert main(["--config", cfg, "-q", "synth"]) == EXIT_OK
    assert main(["--config", cfg, "-q", "track"]) == EXIT_OK
    tg = read_tracks_csv(tmp_path / "out" / "tracks.csv")
    assert len(tg.nodes) == 12 and not tg.edges


def test_missing_input_is_a_usage_error(tmp_path, capsys):
    cfg = _cfg(tmp_path, "[input]\nstacks = nowhere.vxg\n")
    assert main(["--config", cfg, "segment"]) == EXIT_USAGE
    assert "nowhere.vxg" in capsys.readouterr().err


def test_bad_config_reports_line(tmp_path, capsys):
    cfg = _cfg(tmp_path, "[crf]\n\ngamma1 = x\n")
    assert main(["--config", cfg, "segment"]) == EXIT_USAGE
    assert f"{cfg}:3:" in capsys.readouterr().err


def test_corrupt_stack_is_a_data_error(tmp_path):
    (tmp_path / "bad.vxg").write_bytes(b"NOPE" + bytes(40))
    cfg = _cfg(tmp_path, "[input]\nstacks = bad.vxg\n[output]\ndir = out\n")
    assert main(["--config", cfg, "-q", "segment"]) == EXIT_DATA


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["--threads", "0", "track"]) == EXIT_USAGE


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "lapse3d.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for name in ("segment", "features", "track", "evaluate", "synth"):
        assert name in r.stdout
