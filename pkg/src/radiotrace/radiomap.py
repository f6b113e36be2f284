"""Kernel-smoothed radio maps anchored on a recovered trajectory."""

from dataclasses import dataclass

import numpy as np

from .features import phase_normalize

EPS_W = 1e-9
COVERAGE_THRESHOLD = 0.05


@dataclass(frozen=True)
class BeamCodebook:
    beams: np.ndarray  # (N_ant, B_c), one unit-norm beam per column

    def __post_init__(self):
        norms = np.linalg.norm(self.beams, axis=0)
        if self.beams.shape[1] < 1 or not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError("codebook beams must be unit-norm columns")

    @property
    def n_beams(self):
        return self.beams.shape[1]


def dft_codebook(n_ant):
    """Columns of the unitary ``n_ant``-point DFT matrix."""
    n = np.arange(n_ant)
    return BeamCodebook(np.exp(-2j * np.pi * np.outer(n, n) / n_ant) / np.sqrt(n_ant))


def kernel_weights(p, coords, h):
    if h <= 0:
        raise ValueError("bandwidth h must be positive")
    d2 = np.sum((np.asarray(coords, dtype=float) - np.asarray(p, dtype=float)) ** 2, axis=-1)
    return np.exp(-d2 / (2.0 * h**2))


def smooth_map(values, weights, eps_w=EPS_W):
    """``sum_t w_t v_t / (sum_t w_t + eps_w)`` over the leading axis of ``values``."""
    values = np.asarray(values)
    weights = np.asarray(weights, dtype=float)
    if values.shape[0] != weights.shape[0]:
        raise ValueError(f"{values.shape[0]} payloads but {weights.shape[0]} weights")
    return np.tensordot(weights, values, axes=(0, 0)) / (weights.sum() + eps_w)


def beam_gain_map(channel, codebook):
    """Average over subcarriers of ``|w_b^H h_m|^2`` for every beam ``b``."""
    channel = np.asarray(channel)
    if channel.shape[-2] != codebook.beams.shape[0]:
        raise ValueError("channel and codebook antenna counts differ")
    proj = np.swapaxes(codebook.beams.conj().T @ channel, -1, -2)
    return np.mean(np.abs(proj) ** 2, axis=-2)


def best_beam(gains):
    gains = np.asarray(gains)
    if gains.shape[-1] == 0:
        raise ValueError("empty gain vector")
    return np.argmax(gains, axis=-1)


@dataclass
class RadioMap:
    """Per-AP maps over the graph nodes; uncovered nodes hold NaN / -1 / zeros.

    ``padp_map[q]`` and ``channel_map[q]`` are stored densely for all nodes.
    """

    node_coords: np.ndarray
    rss_map: np.ndarray  # (Q, N)
    padp_map: list  # Q x (N, N_a, N_sub)
    channel_map: list  # Q x (N, N_ant, N_sub)
    beam_gain: list  # Q x (N, B_c)
    best_beam: np.ndarray  # (Q, N)
    bandwidth_m: float
    coverage_mask: np.ndarray  # (N,)
    weight_sum: np.ndarray  # (N,)

    @property
    def Q(self):
        return self.rss_map.shape[0]

    def lookup(self, points):
        """Nearest covered node for each query point (``-1`` if none covered)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        covered = np.flatnonzero(self.coverage_mask)
        if len(covered) == 0:
            return np.full(len(pts), -1)
        d2 = ((pts[:, None, :] - self.node_coords[covered][None]) ** 2).sum(-1)
        return covered[np.argmin(d2, axis=1)]


def build_radiomap(traj_coords, obs, csi, graph, h, eps_w=EPS_W, codebooks=None, coverage_threshold=COVERAGE_THRESHOLD, with_padp=True):
    """RSS, PADP, channel and beam maps at every graph node.

    ``csi[q]`` is the raw ``(T, N_ant, N_sub)`` CSI of AP ``q``; channel maps
    average its phase-normalized snapshots.  ``codebooks`` defaults to DFT
    codebooks sized to each AP.
    """
    coords = np.asarray(traj_coords, dtype=float)
    T = len(coords)
    if T != obs.T:
        raise ValueError("trajectory and observations differ in length")
    nodes = graph.nodes
    Q = obs.Q
    d2 = ((nodes[:, None, :] - coords[None, :, :]) ** 2).sum(-1)
    W = np.exp(-d2 / (2.0 * h**2))
    wsum = W.sum(axis=1)
    covered = wsum >= coverage_threshold
    idx = np.flatnonzero(covered)
    Wc = W[idx] / (wsum[idx] + eps_w)[:, None]
    N = len(nodes)
    rss_map = np.full((Q, N), np.nan)
    best = np.full((Q, N), -1, dtype=np.int64)
    padp_maps, chan_maps, gains = [], [], []
    if codebooks is None:
        codebooks = [dft_codebook(np.asarray(c).shape[1]) for c in csi]
    for q in range(Q):
        rss_map[q, idx] = Wc @ obs.rss_db[:, q]
        if with_padp and obs.padp:
            p = obs.padp[q]
            pm = np.zeros((N,) + p.shape[1:], dtype=np.float32)
            pm[idx] = (Wc.astype(np.float32) @ p.reshape(T, -1)).reshape((len(idx),) + p.shape[1:])
            padp_maps.append(pm)
        else:
            padp_maps.append(None)
        hq = np.asarray(csi[q])
        htil = np.stack([phase_normalize(hq[t]) for t in range(T)])
        cm = np.zeros((N,) + hq.shape[1:], dtype=complex)
        cm[idx] = (Wc @ htil.reshape(T, -1)).reshape((len(idx),) + hq.shape[1:])
        chan_maps.append(cm)
        gq = np.full((N, codebooks[q].n_beams), np.nan)
        gq[idx] = beam_gain_map(cm[idx], codebooks[q])
        best[q, idx] = best_beam(gq[idx])
        gains.append(gq)
    return RadioMap(
        node_coords=nodes.copy(),
        rss_map=rss_map,
        padp_map=padp_maps,
        channel_map=chan_maps,
        beam_gain=gains,
        best_beam=best,
        bandwidth_m=float(h),
        coverage_mask=covered,
        weight_sum=wsum,
    )
