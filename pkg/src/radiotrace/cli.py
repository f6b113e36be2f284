"""Command-line pipeline: simulate, infer, map, eval.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  Only ``eval`` reads ``groundtruth.csv``.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import datasets, evaluation, features, graph as graph_mod, inference, radiomap, sim
from .config import ConfigError, load_config

log = logging.getLogger("radiotrace")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

TRAJECTORY = "trajectory.csv"
PARAMS = "params.json"
TRACE = "objective_trace.csv"
ETA_DIAG = "eta_diagnostics.csv"
MAPS_NPZ = "radiomap.npz"
METRICS = "metrics.json"
MANIFEST = "manifest.json"


class NumericalError(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out, command, cfg, extra=None):
    files = {}
    for name in sorted(os.listdir(out)):
        full = os.path.join(out, name)
        if name != MANIFEST and os.path.isfile(full):
            files[name] = _sha256(full)
    doc = {"command": command, "seed": cfg.seed, "config_hash": cfg.config_hash(), "config": cfg.to_dict(), "files": files}
    doc.update(extra or {})
    _write_json(os.path.join(out, MANIFEST), doc)


def _out_dir(cfg, default):
    out = cfg.out or default
    os.makedirs(out, exist_ok=True)
    return out


def _scene_from_config(cfg):
    lam = sim.SPEED_OF_LIGHT / cfg.carrier_freq_hz
    common = dict(
        n_ant=cfg.n_ant,
        wavelength_m=lam,
        n_scatterers=cfg.n_scatterers,
        reflectivity=(cfg.reflectivity_min, cfg.reflectivity_max),
        seed=cfg.scene_seed,
        clearance_m=cfg.clearance_m,
    )
    if cfg.layout == "lshape":
        return sim.lshape_scene(**common)
    return sim.hall_scene(width_m=cfg.width_m, height_m=cfg.height_m, **common)


class Pipeline:
    """Features, graph and dictionaries of one dataset under one config."""

    def __init__(self, data, cfg):
        self.data = data
        self.cfg = cfg
        lam = data.config.wavelength_m
        res = np.deg2rad(cfg.angle_resolution_deg)
        self.dictionaries = [features.angular_dictionary(ap, lam, resolution_rad=res) for ap in data.aps]
        stride = min(cfg.subcarrier_stride, data.config.n_subcarriers)
        self.stride = stride
        self.csi = tuple(features.decimate(h, stride) for h in data.csi)
        self.obs = features.extract_observations(data.csi, self.dictionaries, cfg.eps_h, stride=stride, n_signal=cfg.n_signal)
        self.aps = data.ap_positions
        d_max = cfg.v_max * data.config.sample_interval_s
        if d_max < cfg.grid_spacing:
            log.warning("max step %.3g m is below the grid spacing %.3g m; the graph has only self-loops", d_max, cfg.grid_spacing)
        self.graph = graph_mod.build_graph(data.region, cfg.grid_spacing, d_max, cfg.sigma_m)


def _load(cfg, path):
    data = datasets.read_dataset(path)
    try:
        return Pipeline(data, cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _write_trajectory(path, traj):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "node_index", "x", "y"])
        for t, (i, (x, y)) in enumerate(zip(traj.node_indices, traj.coordinates)):
            w.writerow([t, int(i), f"{x:.9g}", f"{y:.9g}"])


def read_trajectory(path):
    """``(node_indices, coordinates)`` from a trajectory CSV."""
    if not os.path.exists(path):
        raise datasets.DataError(f"{path} not found")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        rows.sort(key=lambda r: int(r["t"]))
        idx = np.array([int(r["node_index"]) for r in rows], dtype=np.int64)
        xy = np.array([[float(r["x"]), float(r["y"])] for r in rows], dtype=float).reshape(-1, 2)
    except (KeyError, ValueError) as exc:
        raise datasets.DataError(f"{path}: malformed trajectory ({exc})") from exc
    return idx, xy


def write_pgm(path, image):
    """8-bit binary PGM ("P5"); ``image`` rows run top to bottom."""
    image = np.asarray(image, dtype=np.uint8)
    rows, cols = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise datasets.DataError(f"{path}: not a binary PGM")
    cols, rows, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    body = parts[4]
    return np.frombuffer(body[: rows * cols], dtype=np.uint8).reshape(rows, cols), maxval


def heatmap(values, graph, covered):
    """Grid image of per-node ``values``; uncovered pixels are 0, the rest 1..255.

    Row 0 of the image is the largest ``y``.  Returns ``(image, meta)``.
    """
    rc = graph.grid_index
    n_rows, n_cols = int(rc[:, 0].max()) + 1, int(rc[:, 1].max()) + 1
    img = np.zeros((n_rows, n_cols), dtype=np.uint8)
    vals = np.asarray(values, dtype=float)
    ok = covered & np.isfinite(vals)
    lo = float(vals[ok].min()) if ok.any() else 0.0
    hi = float(vals[ok].max()) if ok.any() else 0.0
    span = hi - lo if hi > lo else 1.0
    levels = 1 + np.round(254 * (vals[ok] - lo) / span).astype(int)
    img[n_rows - 1 - rc[ok, 0], rc[ok, 1]] = levels
    meta = {
        "rows": n_rows,
        "cols": n_cols,
        "value_min": lo,
        "value_max": hi,
        "nodata": 0,
        "spacing_m": graph.spacing_m,
        "x0": float(graph.nodes[rc[:, 1] == 0, 0].min()) if n_cols else 0.0,
        "y0": float(graph.nodes[rc[:, 0] == 0, 1].min()) if n_rows else 0.0,
        "level": "1 + round(254 * (value - value_min) / (value_max - value_min))",
        "row_order": "top row is the largest y",
    }
    return img, meta


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg):
    out = _out_dir(cfg, "dataset")
    scene = _scene_from_config(cfg)
    ocfg = sim.OfdmConfig(
        carrier_freq_hz=cfg.carrier_freq_hz,
        bandwidth_hz=cfg.bandwidth_hz,
        n_subcarriers=cfg.n_subcarriers,
        sample_interval_s=cfg.delta_s,
    )
    ds = sim.gen_dataset(
        scene,
        ocfg,
        T=cfg.T,
        v_max=cfg.v_max,
        noise_std=cfg.noise_std,
        seed=cfg.seed,
        phase_offset=cfg.phase_offset,
        pause_prob=cfg.pause_prob,
        pause_mean_steps=cfg.pause_mean_steps,
    )
    datasets.write_dataset(out, ds)
    _write_manifest(out, "simulate", cfg)
    return out


def cmd_infer(cfg, dataset_dir):
    pipe = _load(cfg, dataset_dir)
    out = _out_dir(cfg, os.path.join(dataset_dir, "run"))
    extra = {}
    if cfg.auto_eta:
        eta, diag, results = evaluation.select_eta(
            cfg.eta_candidates,
            pipe.obs,
            pipe.graph,
            pipe.aps,
            cfg.inference_config(),
            lambda_c=cfg.lambda_c,
            workers=cfg.threads,
        )
        result = results[eta]
        with open(os.path.join(out, ETA_DIAG), "w", newline="") as fh:
            keys = ["eta", "score", "normalized_objective", "padp_residual", "iterations", "converged"]
            w = csv.writer(fh)
            w.writerow(keys)
            for row in diag:
                w.writerow([repr(float(row[k])) if isinstance(row[k], float) else row[k] for k in keys])
        for e, res in results.items():
            _write_trajectory(os.path.join(out, f"trajectory_eta{e:g}.csv"), res.trajectory)
        extra["eta_candidates"] = list(cfg.eta_candidates)
    else:
        result = inference.alternate_optimize(pipe.obs, pipe.graph, pipe.aps, cfg.inference_config())
    if not np.isfinite(result.trace).all():
        raise NumericalError("objective trace contains non-finite values")
    _write_trajectory(os.path.join(out, TRAJECTORY), result.trajectory)
    doc = {
        "eta": result.eta,
        "eta_mode": "auto" if cfg.auto_eta else "fixed",
        "iterations": result.iterations,
        "converged": result.converged,
        "objective": float(max(result.trace)),
        "params": result.params.to_dict(),
    }
    _write_json(os.path.join(out, PARAMS), doc)
    with open(os.path.join(out, TRACE), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective"])
        for k, j in enumerate(result.trace):
            w.writerow([k, repr(float(j))])
    _write_manifest(out, "infer", cfg, {"dataset": os.path.abspath(dataset_dir), **extra})
    return out, result


def cmd_map(cfg, dataset_dir, trajectory_path):
    pipe = _load(cfg, dataset_dir)
    idx, coords = read_trajectory(trajectory_path)
    if len(coords) != pipe.obs.T:
        raise datasets.DataError(f"{trajectory_path}: {len(coords)} rows but the dataset has T = {pipe.obs.T}")
    out = _out_dir(cfg, os.path.dirname(os.path.abspath(trajectory_path)))
    rmap = radiomap.build_radiomap(
        coords, pipe.obs, pipe.csi, pipe.graph, cfg.kernel_bandwidth_m, cfg.eps_w, coverage_threshold=cfg.coverage_threshold
    )
    save_radiomap(os.path.join(out, MAPS_NPZ), rmap)
    g = pipe.graph
    cov = np.flatnonzero(rmap.coverage_mask)
    for q in range(rmap.Q):
        with open(os.path.join(out, f"rss_map_ap{q}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_index", "x", "y", "rss_db", "weight_sum"])
            for i in cov:
                w.writerow([i, f"{g.nodes[i, 0]:.9g}", f"{g.nodes[i, 1]:.9g}", repr(float(rmap.rss_map[q, i])), repr(float(rmap.weight_sum[i]))])
        with open(os.path.join(out, f"best_beam_ap{q}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_index", "x", "y", "best_beam"])
            for i in cov:
                w.writerow([i, f"{g.nodes[i, 0]:.9g}", f"{g.nodes[i, 1]:.9g}", int(rmap.best_beam[q, i])])
        gains = rmap.beam_gain[q]
        with open(os.path.join(out, f"beam_gain_ap{q}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_index", "x", "y"] + [f"beam_{b}" for b in range(gains.shape[1])])
            for i in cov:
                w.writerow([i, f"{g.nodes[i, 0]:.9g}", f"{g.nodes[i, 1]:.9g}"] + [repr(float(v)) for v in gains[i]])
        for name, vals in (("rss", rmap.rss_map[q]), ("best_beam", rmap.best_beam[q].astype(float))):
            img, meta = heatmap(vals, g, rmap.coverage_mask)
            write_pgm(os.path.join(out, f"{name}_ap{q}.pgm"), img)
            _write_json(os.path.join(out, f"{name}_ap{q}.json"), meta)
    _write_manifest(out, "map", cfg, {"dataset": os.path.abspath(dataset_dir), "trajectory": os.path.abspath(trajectory_path)})
    return out, rmap


def cmd_eval(cfg, dataset_dir, run_dir):
    # the only place ground truth is read
    truth = datasets.read_groundtruth(dataset_dir)
    pipe = _load(cfg, dataset_dir)
    _, coords = read_trajectory(os.path.join(run_dir, TRAJECTORY))
    if len(coords) != len(truth):
        raise datasets.DataError(f"trajectory has {len(coords)} rows, ground truth {len(truth)}")
    rmap = load_radiomap(os.path.join(run_dir, MAPS_NPZ))
    report = evaluation.evaluate(coords, truth, pipe.csi, rmap, pipe.dictionaries, config=cfg.to_dict())
    out = _out_dir(cfg, run_dir)
    _write_json(os.path.join(out, METRICS), report.to_dict())
    err = np.linalg.norm(coords - truth, axis=1)
    with open(os.path.join(out, "localization_errors.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "error_m"])
        for t, e in enumerate(err):
            w.writerow([t, repr(float(e))])
    diag_path = os.path.join(run_dir, ETA_DIAG)
    if os.path.exists(diag_path):
        with open(diag_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        for row in rows:
            path = os.path.join(run_dir, f"trajectory_eta{float(row['eta']):g}.csv")
            row["e_loc_m"] = repr(evaluation.e_loc(read_trajectory(path)[1], truth)) if os.path.exists(path) else ""
        with open(os.path.join(out, "eta_sweep.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else ["eta", "e_loc_m"])
            w.writeheader()
            w.writerows(rows)
    _write_manifest(out, "eval", cfg, {"dataset": os.path.abspath(dataset_dir), "run": os.path.abspath(run_dir)})
    return out, report


def save_radiomap(path, rmap):
    cov = np.flatnonzero(rmap.coverage_mask)
    arrays = {
        "node_coords": rmap.node_coords,
        "rss_map": rmap.rss_map,
        "best_beam": rmap.best_beam,
        "bandwidth_m": np.array(rmap.bandwidth_m),
        "coverage_mask": rmap.coverage_mask,
        "weight_sum": rmap.weight_sum,
        "covered_nodes": cov,
    }
    for q in range(rmap.Q):
        arrays[f"channel_ap{q}"] = rmap.channel_map[q][cov]
        arrays[f"beam_gain_ap{q}"] = rmap.beam_gain[q]
        if rmap.padp_map[q] is not None:
            arrays[f"padp_ap{q}"] = rmap.padp_map[q][cov]
    np.savez(path, **arrays)


def load_radiomap(path):
    """Inverse of :func:`save_radiomap`; PADP maps are restored densely when present."""
    if not os.path.exists(path):
        raise datasets.DataError(f"{path} not found (run the map command first)")
    with np.load(path) as z:
        cov = z["covered_nodes"]
        n = len(z["node_coords"])
        Q = z["rss_map"].shape[0]
        chans, padps, gains = [], [], []
        for q in range(Q):
            c = z[f"channel_ap{q}"]
            full = np.zeros((n,) + c.shape[1:], dtype=c.dtype)
            full[cov] = c
            chans.append(full)
            gains.append(z[f"beam_gain_ap{q}"])
            if f"padp_ap{q}" in z:
                p = z[f"padp_ap{q}"]
                pf = np.zeros((n,) + p.shape[1:], dtype=p.dtype)
                pf[cov] = p
                padps.append(pf)
            else:
                padps.append(None)
        return radiomap.RadioMap(
            node_coords=z["node_coords"],
            rss_map=z["rss_map"],
            padp_map=padps,
            channel_map=chans,
            beam_gain=gains,
            best_beam=z["best_beam"],
            bandwidth_m=float(z["bandwidth_m"]),
            coverage_mask=z["coverage_mask"],
            weight_sum=z["weight_sum"],
        )


# ---------------------------------------------------------------- entry point


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file with flat keys")
    common.add_argument("--eta", help='regularization weight, or "auto"')
    common.add_argument("--beam-width", type=int)
    common.add_argument("--grid-spacing", type=float)
    common.add_argument("--bandwidth-h", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="radiotrace", description="Label-free trajectory inference and radio mapping from CSI.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write a synthetic dataset directory")
    s = sub.add_parser("infer", parents=[common], help="recover the trajectory and propagation parameters")
    s.add_argument("dataset")
    s = sub.add_parser("map", parents=[common], help="build radio maps from a recovered trajectory")
    s.add_argument("dataset")
    s.add_argument("trajectory")
    s = sub.add_parser("eval", parents=[common], help="score a run against ground truth")
    s.add_argument("dataset")
    s.add_argument("run")
    return p


def _flag_overrides(args):
    eta = args.eta
    if eta is not None and eta != "auto":
        try:
            eta = float(eta)
        except ValueError:
            raise ConfigError(f"expected a number or \"auto\", got {args.eta!r}", field="eta") from None
    return dict(
        eta=eta,
        beam_width=args.beam_width,
        grid_spacing=args.grid_spacing,
        bandwidth_h=args.bandwidth_h,
        seed=args.seed,
        threads=args.threads,
        out=args.out,
    )


def run(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(**_flag_overrides(args))
        if args.command == "simulate":
            out = cmd_simulate(cfg)
        elif args.command == "infer":
            out, _ = cmd_infer(cfg, args.dataset)
        elif args.command == "map":
            out, _ = cmd_map(cfg, args.dataset, args.trajectory)
        else:
            out, _ = cmd_eval(cfg, args.dataset, args.run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except datasets.MissingGroundTruthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (datasets.DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except inference.DeadEndError as exc:
        print(f"numerical error: {exc}; try a larger --beam-width", file=sys.stderr)
        return EXIT_NUMERIC
    except (NumericalError, inference.SingularFitError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(out)
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
