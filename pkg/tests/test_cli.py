import csv
import hashlib
import json
import os

import numpy as np
import pytest

from radiotrace import cli, datasets, evaluation, inference
from radiotrace.config import RunConfig

SMALL = {
    "T": 40,
    "n_subcarriers": 64,
    "subcarrier_stride": 8,
    "grid_spacing": 0.5,
    "delta_s": 0.5,
    "max_iters": 3,
    "eta_candidates": [0, 100],
    "seed": 4,
}


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(SMALL, indent=1))
    assert cli.run(["simulate", "--config", str(cfg_path), "--out", str(root / "ds")]) == 0
    return root, str(cfg_path), str(root / "ds")


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_layout(workdir):
    root, cfg, ds = workdir
    meta = json.load(open(os.path.join(ds, "meta.json")))
    assert meta["Q"] == 4
    for q in range(4):
        assert os.path.exists(os.path.join(ds, f"csi_ap{q}.bin"))
    assert len(rows(os.path.join(ds, "groundtruth.csv"))) == SMALL["T"]
    manifest = json.load(open(os.path.join(ds, "manifest.json")))
    assert manifest["seed"] == 4 and manifest["config_hash"] == RunConfig(**SMALL).config_hash()


def test_simulate_deterministic(workdir):
    root, cfg, ds = workdir
    assert cli.run(["simulate", "--config", cfg, "--out", str(root / "ds2")]) == 0
    a = json.load(open(os.path.join(ds, "manifest.json")))["files"]
    b = json.load(open(root / "ds2" / "manifest.json"))["files"]
    assert a == b and len(a) == 6


def test_infer_eta_zero_matches_library(workdir):
    root, cfg, ds = workdir
    out = str(root / "run0")
    assert cli.run(["infer", ds, "--config", cfg, "--eta", "0", "--out", out]) == 0
    idx, xy = cli.read_trajectory(os.path.join(out, "trajectory.csv"))
    rc = RunConfig(**SMALL).with_overrides(eta=0.0)
    pipe = cli.Pipeline(datasets.read_dataset(ds), rc)
    res = inference.alternate_optimize(pipe.obs, pipe.graph, pipe.aps, rc.inference_config())
    np.testing.assert_array_equal(idx, res.trajectory.node_indices)
    np.testing.assert_allclose(xy, res.trajectory.coordinates, rtol=1e-8)
    doc = json.load(open(os.path.join(out, "params.json")))
    assert doc["eta"] == 0.0 and doc["eta_mode"] == "fixed"
    assert len(rows(os.path.join(out, "objective_trace.csv"))) == len(res.trace)


@pytest.fixture(scope="module")
def auto_run(workdir):
    root, cfg, ds = workdir
    out = str(root / "auto")
    assert cli.run(["infer", ds, "--config", cfg, "--eta", "auto", "--out", out]) == 0
    return out


def test_infer_auto_records_choice(workdir, auto_run):
    doc = json.load(open(os.path.join(auto_run, "params.json")))
    assert doc["eta_mode"] == "auto" and doc["eta"] in (0.0, 100.0)
    diag = rows(os.path.join(auto_run, "eta_diagnostics.csv"))
    assert [float(r["eta"]) for r in diag] == [0.0, 100.0]
    best = max(diag, key=lambda r: (float(r["score"]), -float(r["eta"])))
    assert float(best["eta"]) == doc["eta"]
    assert len(rows(os.path.join(auto_run, "trajectory.csv"))) == SMALL["T"]


def test_infer_rerun_identical(workdir, auto_run):
    root, cfg, ds = workdir
    out = str(root / "auto2")
    assert cli.run(["infer", ds, "--config", cfg, "--eta", "auto", "--out", out]) == 0
    for name in ("trajectory.csv", "params.json", "objective_trace.csv", "eta_diagnostics.csv"):
        assert sha(os.path.join(out, name)) == sha(os.path.join(auto_run, name))


@pytest.fixture(scope="module")
def mapped(workdir, auto_run):
    root, cfg, ds = workdir
    assert cli.run(["map", ds, os.path.join(auto_run, "trajectory.csv"), "--config", cfg]) == 0
    return auto_run


def test_map_outputs_match_library(workdir, mapped):
    root, cfg, ds = workdir
    rc = RunConfig(**SMALL)
    pipe = cli.Pipeline(datasets.read_dataset(ds), rc)
    _, coords = cli.read_trajectory(os.path.join(mapped, "trajectory.csv"))
    from radiotrace import radiomap

    rm = radiomap.build_radiomap(coords, pipe.obs, pipe.csi, pipe.graph, rc.kernel_bandwidth_m)
    for q in range(4):
        rss = rows(os.path.join(mapped, f"rss_map_ap{q}.csv"))
        assert len(rss) == int(rm.coverage_mask.sum())
        for r in rss[:20]:
            i = int(r["node_index"])
            assert float(r["rss_db"]) == rm.rss_map[q, i]
        beams = rows(os.path.join(mapped, f"best_beam_ap{q}.csv"))
        assert all(int(r["best_beam"]) == rm.best_beam[q, int(r["node_index"])] for r in beams)
    loaded = cli.load_radiomap(os.path.join(mapped, "radiomap.npz"))
    np.testing.assert_array_equal(loaded.coverage_mask, rm.coverage_mask)
    cov = rm.coverage_mask
    np.testing.assert_allclose(loaded.channel_map[2][cov], rm.channel_map[2][cov])


def test_pgm_format(workdir, mapped):
    root, cfg, ds = workdir
    raw = open(os.path.join(mapped, "rss_ap0.pgm"), "rb").read()
    assert raw.startswith(b"P5\n")
    img, maxval = cli.read_pgm(os.path.join(mapped, "rss_ap0.pgm"))
    meta = json.load(open(os.path.join(mapped, "rss_ap0.json")))
    assert maxval == 255 and img.shape == (meta["rows"], meta["cols"])
    pipe = cli.Pipeline(datasets.read_dataset(ds), RunConfig(**SMALL))
    rc = pipe.graph.grid_index
    assert img.shape == (rc[:, 0].max() + 1, rc[:, 1].max() + 1)
    assert img.max() == 255 and img[img > 0].min() == 1


def test_single_node_coverage(workdir):
    root, cfg, ds = workdir
    out = root / "single"
    out.mkdir()
    with open(out / "trajectory.csv", "w") as fh:
        fh.write("t,node_index,x,y\n")
        for t in range(SMALL["T"]):
            fh.write(f"{t},7,0.75,0.25\n")
    assert cli.run(["map", ds, str(out / "trajectory.csv"), "--config", cfg, "--bandwidth-h", "0.01"]) == 0
    for q in range(4):
        assert len(rows(out / f"rss_map_ap{q}.csv")) == 1


def test_eval_matches_library_and_truth_injection(workdir, mapped):
    root, cfg, ds = workdir
    assert cli.run(["eval", ds, mapped, "--config", cfg]) == 0
    m = json.load(open(os.path.join(mapped, "metrics.json")))
    assert set(m) >= {"e_loc_m", "e_beam_pct", "e_rmse_pct", "e_cd", "per_ap", "config"}
    truth = datasets.read_groundtruth(ds)
    _, coords = cli.read_trajectory(os.path.join(mapped, "trajectory.csv"))
    assert m["e_loc_m"] == pytest.approx(evaluation.e_loc(coords, truth), rel=1e-12)
    sweep = rows(os.path.join(mapped, "eta_sweep.csv"))
    assert len(sweep) == 2 and all(r["e_loc_m"] for r in sweep)
    # truth written as the trajectory
    inj = root / "inject"
    inj.mkdir()
    with open(inj / "trajectory.csv", "w") as fh:
        fh.write("t,node_index,x,y\n")
        for t, (x, y) in enumerate(truth):
            fh.write(f"{t},0,{float(x)!r},{float(y)!r}\n")
    assert cli.run(["map", ds, str(inj / "trajectory.csv"), "--config", cfg]) == 0
    assert cli.run(["eval", ds, str(inj), "--config", cfg]) == 0
    assert json.load(open(inj / "metrics.json"))["e_loc_m"] == 0.0


def test_annotation_free(workdir, tmp_path, capsys):
    root, cfg, ds = workdir
    blind = tmp_path / "blind"
    assert cli.run(["simulate", "--config", cfg, "--out", str(blind)]) == 0
    os.remove(blind / "groundtruth.csv")
    assert cli.run(["infer", str(blind), "--config", cfg, "--eta", "100"]) == 0
    run_dir = blind / "run"
    assert cli.run(["map", str(blind), str(run_dir / "trajectory.csv"), "--config", cfg]) == 0
    capsys.readouterr()
    assert cli.run(["eval", str(blind), str(run_dir), "--config", cfg]) == cli.EXIT_DATA
    assert "evaluation requires ground truth" in capsys.readouterr().err


def test_exit_codes(workdir, tmp_path, capsys):
    root, cfg, ds = workdir
    bad = tmp_path / "bad.json"
    bad.write_text('{\n "T": 10,\n "bogus": 1\n}')
    assert cli.run(["simulate", "--config", str(bad), "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    assert "line 3" in capsys.readouterr().err
    assert cli.run(["infer", ds, "--config", cfg, "--eta", "lots"]) == cli.EXIT_CONFIG
    assert cli.run(["infer", str(tmp_path / "nothing"), "--config", cfg]) == cli.EXIT_DATA
    assert cli.run(["map", ds, str(tmp_path / "nope.csv"), "--config", cfg]) == cli.EXIT_DATA
    prune = tmp_path / "prune.json"
    prune.write_text(json.dumps({**SMALL, "prune_enabled": True, "beam_width": 1, "eta": 0}))
    capsys.readouterr()
    assert cli.run(["infer", ds, "--config", str(prune), "--out", str(tmp_path / "p")]) == cli.EXIT_NUMERIC
    assert "--beam-width" in capsys.readouterr().err
