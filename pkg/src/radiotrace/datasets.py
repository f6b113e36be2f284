"""On-disk dataset directory.

Layout::

    meta.json          OFDM config, AP geometries, polygon, T, Q, seed, scene
    csi_ap<q>.bin      little-endian float32 interleaved (re, im), [T][N_ant][N_sub]
    groundtruth.csv    optional; columns t,x,y

Readers of CSI never touch ``groundtruth.csv``; only
:func:`read_groundtruth` does.
"""

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .sim import ArrayGeometry, OfdmConfig, Scene

FORMAT_VERSION = 1
META = "meta.json"
GROUNDTRUTH = "groundtruth.csv"


class DataError(RuntimeError):
    pass


class MissingGroundTruthError(DataError):
    def __init__(self, path):
        super().__init__(f"evaluation requires ground truth: {path} not found")


def csi_filename(q):
    return f"csi_ap{q}.bin"


def write_dataset(path, ds, extra_meta=None, write_truth=True):
    os.makedirs(path, exist_ok=True)
    T = ds.T
    Q = ds.scene.n_aps
    meta = {
        "format_version": FORMAT_VERSION,
        "ofdm": ds.config.to_dict(),
        "aps": [ap.to_dict() for ap in ds.scene.aps],
        "polygon": np.asarray(ds.scene.walkable_region).tolist(),
        "T": T,
        "Q": Q,
        "seed": ds.seed,
        "n_ant": [ap.n_ant for ap in ds.scene.aps],
        "n_sub": ds.config.n_subcarriers,
        "scene": ds.scene.to_dict(),
    }
    if extra_meta:
        meta.update(extra_meta)
    with open(os.path.join(path, META), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    for q in range(Q):
        arr = np.asarray(ds.csi[q], dtype=np.complex64)
        inter = np.empty(arr.shape + (2,), dtype="<f4")
        inter[..., 0] = arr.real
        inter[..., 1] = arr.imag
        inter.tofile(os.path.join(path, csi_filename(q)))
    if write_truth:
        with open(os.path.join(path, GROUNDTRUTH), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y"])
            for t, (x, y) in enumerate(ds.positions):
                w.writerow([t, f"{x:.9g}", f"{y:.9g}"])
    return meta


@dataclass(frozen=True)
class LoadedDataset:
    meta: dict
    config: OfdmConfig
    aps: tuple
    region: np.ndarray
    csi: tuple

    @property
    def T(self):
        return int(self.meta["T"])

    @property
    def Q(self):
        return len(self.aps)

    @property
    def ap_positions(self):
        return np.array([ap.ap_position for ap in self.aps], dtype=float)

    def scene(self):
        if "scene" in self.meta:
            return Scene.from_dict(self.meta["scene"])
        return Scene(aps=self.aps, walkable_region=self.region)


def read_meta(path):
    fn = os.path.join(path, META)
    if not os.path.exists(fn):
        raise DataError(f"{fn} not found")
    try:
        with open(fn) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{fn}: malformed JSON at line {exc.lineno}: {exc.msg}") from exc


def read_dataset(path):
    meta = read_meta(path)
    try:
        cfg = OfdmConfig.from_dict(meta["ofdm"])
        aps = tuple(ArrayGeometry.from_dict(a) for a in meta["aps"])
        region = np.asarray(meta["polygon"], dtype=float)
        T = int(meta["T"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: invalid meta.json ({exc})") from exc
    csi = []
    for q, ap in enumerate(aps):
        fn = os.path.join(path, csi_filename(q))
        if not os.path.exists(fn):
            raise DataError(f"{fn} not found")
        raw = np.fromfile(fn, dtype="<f4")
        expected = T * ap.n_ant * cfg.n_subcarriers * 2
        if raw.size != expected:
            raise DataError(f"{fn}: expected {expected} float32 values, found {raw.size}")
        raw = raw.reshape(T, ap.n_ant, cfg.n_subcarriers, 2).astype(float)
        csi.append(raw[..., 0] + 1j * raw[..., 1])
    return LoadedDataset(meta=meta, config=cfg, aps=aps, region=region, csi=tuple(csi))


def read_groundtruth(path):
    fn = os.path.join(path, GROUNDTRUTH)
    if not os.path.exists(fn):
        raise MissingGroundTruthError(fn)
    with open(fn, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        rows.sort(key=lambda r: int(r["t"]))
        return np.array([[float(r["x"]), float(r["y"])] for r in rows])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{fn}: malformed ground truth ({exc})") from exc
