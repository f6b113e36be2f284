"""CSI features: normalization, PADP and its distance, RSS, MUSIC bearings.

CSI matrices are complex arrays of shape ``(N_ant, N_sub)``; sequences stack a
leading time axis.
"""

from dataclasses import dataclass

import numpy as np

from .sim import steering_vector

EPS_H = 1e-9


@dataclass(frozen=True)
class AngularDictionary:
    grid_angles_rad: np.ndarray
    steering_columns: np.ndarray

    def __post_init__(self):
        if len(self.grid_angles_rad) < 2:
            raise ValueError("an angular dictionary needs at least two grid angles")
        if np.any(np.diff(self.grid_angles_rad) <= 0):
            raise ValueError("grid angles must be strictly increasing")

    @property
    def n_angles(self):
        return len(self.grid_angles_rad)


def angular_dictionary(geom, wavelength_m, fov_rad=(-np.pi / 2, np.pi / 2), resolution_rad=np.deg2rad(1.0)):
    """Steering dictionary over ``orientation + fov`` at ``resolution_rad`` steps.

    The default half-plane field of view keeps a linear array free of
    front/back ambiguity.
    """
    lo, hi = fov_rad
    n = int(round((hi - lo) / resolution_rad)) + 1
    angles = geom.orientation_rad + np.linspace(lo, hi, n)
    return AngularDictionary(angles, steering_vector(geom, wavelength_m, angles))


class DelayTransform:
    """Unitary DFT ``F[k, m] = exp(-2j pi k m / N) / sqrt(N)``.

    ``apply(X)`` computes ``X @ F^H`` with an FFT.
    """

    def __init__(self, n_sub):
        self.n_sub = int(n_sub)

    @property
    def matrix(self):
        k = np.arange(self.n_sub)
        return np.exp(-2j * np.pi * np.outer(k, k) / self.n_sub) / np.sqrt(self.n_sub)

    def apply(self, x):
        if x.shape[-1] != self.n_sub:
            raise ValueError(f"expected {self.n_sub} subcarriers, got {x.shape[-1]}")
        return np.fft.ifft(x, axis=-1, norm="ortho")


def decimate(h, stride=1):
    """Keep every ``stride``-th subcarrier column."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return h[..., ::stride]


def normalize_csi(h, eps_h=EPS_H):
    norm = np.linalg.norm(h, axis=(-2, -1), keepdims=True)
    return h / (norm + eps_h)


def padp(h_norm, dictionary, transform=None):
    """``|A^H H F^H|`` element-wise; works on a single matrix or a stack."""
    a = dictionary.steering_columns
    if h_norm.shape[-2] != a.shape[0]:
        raise ValueError(f"CSI has {h_norm.shape[-2]} antennas, dictionary {a.shape[0]}")
    if transform is None:
        transform = DelayTransform(h_norm.shape[-1])
    return np.abs(a.conj().T @ transform.apply(h_norm))


def padp_distance(p_i, p_j):
    if p_i.shape != p_j.shape:
        raise ValueError(f"PADP shapes differ: {p_i.shape} vs {p_j.shape}")
    return float(np.linalg.norm(p_i - p_j) / np.sqrt(p_i.size))


def rss(h, eps_h=EPS_H):
    """Received power in dB, ``10 log10(||H||_F^2 + eps_h)``."""
    power = np.sum(np.abs(h) ** 2, axis=(-2, -1))
    return 10.0 * np.log10(power + eps_h)


def spatial_covariance(h):
    n_sub = h.shape[-1]
    v = h @ np.swapaxes(h.conj(), -1, -2) / n_sub
    return 0.5 * (v + np.swapaxes(v.conj(), -1, -2))


def music_spectrum(v, dictionary, n_signal=1):
    a = dictionary.steering_columns
    n_ant = a.shape[0]
    if v.shape != (n_ant, n_ant):
        raise ValueError(f"covariance must be {n_ant}x{n_ant}, got {v.shape}")
    if not 1 <= n_signal < n_ant:
        raise ValueError("need 1 <= n_signal < N_ant")
    _, vecs = np.linalg.eigh(v)
    noise = vecs[:, : n_ant - n_signal]
    proj = np.sum(np.abs(noise.conj().T @ a) ** 2, axis=0)
    return 1.0 / np.maximum(proj, np.finfo(float).tiny)


def music_bearing(v, dictionary, n_signal=1, tie_rtol=1e-12):
    """Grid angle maximizing the MUSIC pseudo-spectrum.

    Values within ``tie_rtol`` of the maximum count as ties, resolved to the
    smallest grid index.  Returns ``(angle_rad, spectrum)``.
    """
    spec = music_spectrum(v, dictionary, n_signal)
    peak = spec.max()
    k = int(np.flatnonzero(spec >= peak * (1.0 - tie_rtol))[0])
    return float(dictionary.grid_angles_rad[k]), spec


def phase_normalize(h):
    """Rotate ``h`` so its largest-magnitude entry is real and nonnegative."""
    mags = np.abs(h)
    if not mags.any():
        return h.copy()
    ref = h.flat[int(np.argmax(mags))]
    return h * np.exp(-1j * np.angle(ref))


@dataclass(frozen=True)
class ObservationSequence:
    """Per-step features for ``T`` steps and ``Q`` APs.

    ``padp[q]`` has shape ``(T, N_a, N_sub)``; ``padp_step_dist[t - 1, q]``
    is the PADP distance between steps ``t - 1`` and ``t``.
    """

    rss_db: np.ndarray
    bearing_rad: np.ndarray
    padp_step_dist: np.ndarray
    padp: tuple = ()

    def __post_init__(self):
        T, Q = self.rss_db.shape
        if self.bearing_rad.shape != (T, Q):
            raise ValueError("bearing and RSS arrays must share shape (T, Q)")
        if self.padp_step_dist.shape != (max(T - 1, 0), Q):
            raise ValueError("padp_step_dist must have shape (T - 1, Q)")
        if np.any(self.padp_step_dist < 0):
            raise ValueError("PADP distances must be nonnegative")

    @property
    def T(self):
        return self.rss_db.shape[0]

    @property
    def Q(self):
        return self.rss_db.shape[1]


def extract_observations(csi, dictionaries, eps_h=EPS_H, stride=1, n_signal=1, keep_padp=True):
    """Features from per-AP CSI stacks ``csi[q]`` of shape ``(T, N_ant, N_sub)``.

    RSS is taken from the full CSI; PADP and the covariance use the
    ``stride``-decimated subcarriers.
    """
    Q = len(csi)
    T = csi[0].shape[0]
    rss_db = np.empty((T, Q))
    bearing = np.empty((T, Q))
    step = np.empty((max(T - 1, 0), Q))
    padps = []
    for q in range(Q):
        h = np.asarray(csi[q])
        rss_db[:, q] = rss(h, eps_h)
        hd = decimate(h, stride)
        cov = spatial_covariance(hd)
        for t in range(T):
            bearing[t, q], _ = music_bearing(cov[t], dictionaries[q], n_signal)
        p = padp(normalize_csi(hd, eps_h), dictionaries[q])
        diff = p[1:] - p[:-1]
        step[:, q] = np.sqrt(np.sum(diff**2, axis=(1, 2)) / p[0].size)
        if keep_padp:
            padps.append(p.astype(np.float32))
    return ObservationSequence(rss_db=rss_db, bearing_rad=bearing, padp_step_dist=step, padp=tuple(padps))
