"""Synthetic multipath MIMO-OFDM scenes with ground-truth trajectories.

The channel of AP ``q`` on subcarrier ``m`` is a sum of plane-wave paths

    h[:, m] = sum_l kappa_l * exp(-2j*pi*m*df*tau_l) * a(theta_l) + noise

with a line-of-sight path (when visible) and one single-bounce path per
visible point scatterer.  Path amplitudes follow free-space spreading
``lambda / (4*pi*length)``; scattered paths are further scaled by the complex
reflectivity of the scatterer.
"""

from dataclasses import dataclass, field

import numpy as np

from .graph import as_polygon, distance_to_boundary, points_in_polygon, segment_in_region

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class OfdmConfig:
    carrier_freq_hz: float = 1.272e9
    bandwidth_hz: float = 50e6
    n_subcarriers: int = 1024
    sample_interval_s: float = 0.2

    def __post_init__(self):
        if min(self.carrier_freq_hz, self.bandwidth_hz, self.sample_interval_s) <= 0:
            raise ValueError("OFDM frequencies and sample interval must be positive")
        if int(self.n_subcarriers) < 1:
            raise ValueError("n_subcarriers must be a positive integer")

    @property
    def subcarrier_spacing_hz(self):
        return self.bandwidth_hz / self.n_subcarriers

    @property
    def wavelength_m(self):
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    def to_dict(self):
        return {
            "carrier_freq_hz": self.carrier_freq_hz,
            "bandwidth_hz": self.bandwidth_hz,
            "n_subcarriers": self.n_subcarriers,
            "subcarrier_spacing_hz": self.subcarrier_spacing_hz,
            "sample_interval_s": self.sample_interval_s,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            carrier_freq_hz=float(d["carrier_freq_hz"]),
            bandwidth_hz=float(d["bandwidth_hz"]),
            n_subcarriers=int(d["n_subcarriers"]),
            sample_interval_s=float(d["sample_interval_s"]),
        )


def rotation_2d(angle_rad):
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class ArrayGeometry:
    """Antenna array of one AP.

    ``element_positions`` are local coordinates, shape ``(N_ant, 2)`` or
    ``(N_ant, 3)``; only the horizontal components enter the azimuth model.
    Broadside points along the local x axis, rotated by ``rotation`` into the
    global frame.
    """

    element_positions: np.ndarray
    rotation: np.ndarray
    orientation_rad: float
    ap_position: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        if not np.allclose(r @ r.T, np.eye(len(r)), atol=1e-9):
            raise ValueError("rotation must be orthonormal")
        if len(self.element_positions) < 1:
            raise ValueError("an array needs at least one element")

    @property
    def n_ant(self):
        return len(self.element_positions)

    def to_dict(self):
        return {
            "element_positions": np.asarray(self.element_positions).tolist(),
            "rotation": np.asarray(self.rotation).tolist(),
            "orientation_rad": float(self.orientation_rad),
            "ap_position": np.asarray(self.ap_position).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            element_positions=np.asarray(d["element_positions"], dtype=float),
            rotation=np.asarray(d["rotation"], dtype=float),
            orientation_rad=float(d["orientation_rad"]),
            ap_position=np.asarray(d["ap_position"], dtype=float),
        )


def ula_geometry(n_ant, ap_position, orientation_rad, spacing_m):
    """Uniform linear array along the local y axis (broadside = orientation)."""
    elements = np.zeros((n_ant, 2))
    elements[:, 1] = spacing_m * np.arange(n_ant)
    return ArrayGeometry(
        element_positions=elements,
        rotation=rotation_2d(orientation_rad),
        orientation_rad=float(orientation_rad),
        ap_position=np.asarray(ap_position, dtype=float),
    )


def steering_vector(geom, wavelength_m, direction_rad):
    """Array response ``exp(-j 2pi/lambda u(theta)^T R r_n)`` for every element.

    ``direction_rad`` may be a scalar (returns ``(N_ant,)``) or an array of
    angles (returns ``(N_ant, K)``).
    """
    if wavelength_m <= 0:
        raise ValueError("wavelength must be positive")
    theta = np.asarray(direction_rad, dtype=float)
    elems = np.asarray(geom.element_positions, dtype=float)
    rot = np.asarray(geom.rotation, dtype=float)
    local = elems[:, : rot.shape[1]]
    glob = (rot @ local.T).T[:, :2]
    u = np.stack([np.cos(theta), np.sin(theta)], axis=0)
    phase = (2 * np.pi / wavelength_m) * np.tensordot(glob, u, axes=(1, 0))
    return np.exp(-1j * phase)


@dataclass(frozen=True)
class PathComponent:
    gain: complex
    delay_s: float
    direction_rad: float

    def __post_init__(self):
        if self.delay_s < 0:
            raise ValueError("path delay must be nonnegative")


@dataclass(frozen=True)
class Scene:
    aps: tuple
    walkable_region: np.ndarray
    scatterer_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    scatterer_reflectivity: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    los_enabled: bool = True
    clearance_m: float = 1.0

    def __post_init__(self):
        from .graph import polygon_area

        if len(self.aps) < 1:
            raise ValueError("a scene needs at least one AP")
        if abs(polygon_area(self.walkable_region)) <= 0:
            raise ValueError("walkable region must have positive area")

    @property
    def n_aps(self):
        return len(self.aps)

    def to_dict(self):
        return {
            "aps": [ap.to_dict() for ap in self.aps],
            "walkable_region": as_polygon(self.walkable_region).tolist(),
            "scatterer_positions": np.asarray(self.scatterer_positions).tolist(),
            "scatterer_reflectivity": [
                [float(z.real), float(z.imag)] for z in np.asarray(self.scatterer_reflectivity)
            ],
            "los_enabled": bool(self.los_enabled),
            "clearance_m": float(self.clearance_m),
        }

    @classmethod
    def from_dict(cls, d):
        refl = np.asarray(d.get("scatterer_reflectivity", []), dtype=float).reshape(-1, 2)
        return cls(
            aps=tuple(ArrayGeometry.from_dict(a) for a in d["aps"]),
            walkable_region=np.asarray(d["walkable_region"], dtype=float),
            scatterer_positions=np.asarray(d.get("scatterer_positions", []), dtype=float).reshape(-1, 2),
            scatterer_reflectivity=refl[:, 0] + 1j * refl[:, 1],
            los_enabled=bool(d.get("los_enabled", True)),
            clearance_m=float(d.get("clearance_m", 1.0)),
        )


def _visible_many(a, targets, region, clearance_m):
    """For each target ``b``: segment ``a-b`` stays within ``clearance_m`` of the region."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if len(targets) == 0:
        return np.zeros(0, dtype=bool)
    lengths = np.linalg.norm(targets - a, axis=1)
    n = max(2, int(np.ceil(lengths.max() / max(clearance_m / 4.0, 1e-3))) + 1)
    s = np.linspace(0.0, 1.0, n)
    pts = a[None, None, :] + s[None, :, None] * (targets - a)[:, None, :]
    flat = pts.reshape(-1, 2)
    ok = points_in_polygon(flat, region)
    if not ok.all():
        ok[~ok] = distance_to_boundary(flat[~ok], region) <= clearance_m
    return ok.reshape(len(targets), n).all(axis=1)


def _visible(a, b, region, clearance_m):
    return bool(_visible_many(np.asarray(a, dtype=float), np.asarray(b, dtype=float)[None], region, clearance_m)[0])


# scatterer-to-AP visibility depends only on the scene; scenes hold arrays and
# are unhashable, so entries are keyed by id and checked by identity
_SCAT_CACHE = {}
_SCAT_CACHE_MAX = 32


def _scatterer_visibility(scene, ap_index):
    key = (id(scene), ap_index)
    hit = _SCAT_CACHE.get(key)
    if hit is None or hit[0] is not scene:
        if len(_SCAT_CACHE) >= _SCAT_CACHE_MAX:
            _SCAT_CACHE.clear()
        o = np.asarray(scene.aps[ap_index].ap_position, dtype=float)
        vis = np.array(
            [_visible(s, o, as_polygon(scene.walkable_region), scene.clearance_m) for s in scene.scatterer_positions],
            dtype=bool,
        )
        hit = (scene, vis)
        _SCAT_CACHE[key] = hit
    return hit[1]


def trace_paths(scene, user_pos, ap_index, wavelength_m):
    """LoS and single-bounce paths between the user and one AP."""
    if not 0 <= ap_index < scene.n_aps:
        raise IndexError(f"ap_index {ap_index} out of range for {scene.n_aps} APs")
    ap = scene.aps[ap_index]
    o = np.asarray(ap.ap_position, dtype=float)
    x = np.asarray(user_pos, dtype=float)
    region = as_polygon(scene.walkable_region)
    paths = []

    def gain(length, refl=1.0):
        return refl * wavelength_m / (4 * np.pi * length) * np.exp(-2j * np.pi * length / wavelength_m)

    scat = np.asarray(scene.scatterer_positions, dtype=float).reshape(-1, 2)
    from_user = _visible_many(x, np.vstack([o[None], scat]), region, scene.clearance_m)
    if scene.los_enabled and from_user[0]:
        d = max(float(np.linalg.norm(x - o)), 1e-6)
        paths.append(
            PathComponent(gain(d), d / SPEED_OF_LIGHT, float(np.arctan2(x[1] - o[1], x[0] - o[0])))
        )
    if len(scat):
        to_ap = _scatterer_visibility(scene, ap_index)
        for k in np.flatnonzero(from_user[1:] & to_ap):
            s, refl = scat[k], scene.scatterer_reflectivity[k]
            length = max(float(np.linalg.norm(x - s) + np.linalg.norm(s - o)), 1e-6)
            paths.append(
                PathComponent(
                    gain(length, refl),
                    length / SPEED_OF_LIGHT,
                    float(np.arctan2(s[1] - o[1], s[0] - o[0])),
                )
            )
    return paths


def channel_from_paths(paths, geom, cfg):
    """Noise-free ``(N_ant, N_sub)`` channel of a list of :class:`PathComponent`."""
    h = np.zeros((geom.n_ant, cfg.n_subcarriers), dtype=complex)
    if not paths:
        return h
    m = np.arange(cfg.n_subcarriers)
    gains = np.array([p.gain for p in paths], dtype=complex)
    delays = np.array([p.delay_s for p in paths])
    dirs = np.array([p.direction_rad for p in paths])
    a = steering_vector(geom, cfg.wavelength_m, dirs)
    freq = np.exp(-2j * np.pi * np.outer(delays, m) * cfg.subcarrier_spacing_hz)
    return (a * gains[None, :]) @ freq


def complex_noise(rng, shape, noise_std):
    """Circular complex Gaussian with ``E|n|^2 = noise_std**2``."""
    if noise_std <= 0:
        return np.zeros(shape, dtype=complex)
    scale = noise_std / np.sqrt(2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synth_channel(scene, user_pos, ap_index, cfg, noise_std, rng):
    paths = trace_paths(scene, user_pos, ap_index, cfg.wavelength_m)
    h = channel_from_paths(paths, scene.aps[ap_index], cfg)
    return h + complex_noise(rng, h.shape, noise_std)


def gen_trajectory(region, v_max, delta_s, T, rng, turn_std_rad=0.4, speed_jitter=0.25, max_tries=1000, pause_prob=0.0, pause_mean_steps=10.0):
    """Bounded-speed random walk inside ``region``.

    The heading takes a wrapped-Gaussian turn per step and the speed fraction
    follows a clipped random walk in [0, 1].  Infeasible steps are redrawn;
    after repeated failure the walker stands still for that step.  With
    ``pause_prob > 0`` the walker stops after a step with that probability and
    stays put for a geometric number of samples (mean ``pause_mean_steps``).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    poly = as_polygon(region)
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    start = None
    for _ in range(max_tries):
        cand = lo + rng.random(2) * (hi - lo)
        if points_in_polygon(cand[None], poly)[0]:
            start = cand
            break
    if start is None:
        raise ValueError("could not place a starting point inside the region")
    d_max = max(float(v_max) * float(delta_s), 0.0)
    pos = np.empty((T, 2))
    pos[0] = start
    heading = rng.uniform(-np.pi, np.pi)
    speed = rng.random()
    paused = 0
    for t in range(1, T):
        if paused > 0:
            paused -= 1
            pos[t] = pos[t - 1]
            continue
        speed = float(np.clip(speed + speed_jitter * rng.standard_normal(), 0.0, 1.0))
        step = speed * d_max
        nxt = pos[t - 1]
        for attempt in range(50):
            spread = turn_std_rad if attempt < 10 else np.pi
            h = heading + spread * rng.standard_normal()
            cand = pos[t - 1] + step * np.array([np.cos(h), np.sin(h)])
            if segment_in_region(pos[t - 1], cand, poly):
                nxt, heading = cand, float(np.angle(np.exp(1j * h)))
                break
        pos[t] = nxt
        if pause_prob > 0 and rng.random() < pause_prob:
            paused = int(rng.geometric(1.0 / max(pause_mean_steps, 1.0)))
    return pos


@dataclass(frozen=True)
class GroundTruthDataset:
    """``csi[q]`` is a complex array ``(T, N_ant, N_sub)`` for AP ``q``."""

    csi: tuple
    positions: np.ndarray
    config: OfdmConfig
    scene: Scene
    seed: int = 0

    @property
    def T(self):
        return len(self.positions)


def gen_dataset(scene, cfg, T, v_max, noise_std, seed, phase_offset=False, positions=None, pause_prob=0.0, pause_mean_steps=10.0):
    """Trajectory plus per-AP CSI sequences, deterministic in ``seed``.

    ``phase_offset`` applies an independent random global phase to every
    snapshot, emulating unsynchronized sounding.  Passing ``positions``
    replaces the random walk.
    """
    ss = np.random.SeedSequence(seed)
    traj_ss, *ap_ss = ss.spawn(1 + scene.n_aps)
    if positions is None:
        positions = gen_trajectory(
            scene.walkable_region,
            v_max,
            cfg.sample_interval_s,
            T,
            np.random.default_rng(traj_ss),
            pause_prob=pause_prob,
            pause_mean_steps=pause_mean_steps,
        )
    positions = np.asarray(positions, dtype=float)
    csi = []
    for q in range(scene.n_aps):
        rng = np.random.default_rng(ap_ss[q])
        seq = np.empty((len(positions), scene.aps[q].n_ant, cfg.n_subcarriers), dtype=complex)
        for t, x in enumerate(positions):
            seq[t] = synth_channel(scene, x, q, cfg, noise_std, rng)
            if phase_offset:
                seq[t] *= np.exp(1j * rng.uniform(-np.pi, np.pi))
        csi.append(seq)
    return GroundTruthDataset(csi=tuple(csi), positions=positions, config=cfg, scene=scene, seed=int(seed))


L_SHAPE = np.array([[0.0, 0.0], [14.0, 0.0], [14.0, 7.0], [7.0, 7.0], [7.0, 14.0], [0.0, 14.0]])


def _wall_scatterers(poly, n_scatterers, reflectivity, rng):
    # uniform by wall length, random magnitude and phase
    edges = np.roll(poly, -1, axis=0) - poly
    lengths = np.linalg.norm(edges, axis=1)
    picks = rng.choice(len(poly), size=n_scatterers, p=lengths / lengths.sum())
    frac = rng.random(n_scatterers)
    scat = poly[picks] + frac[:, None] * edges[picks]
    mag = rng.uniform(reflectivity[0], reflectivity[1], n_scatterers)
    return scat, mag * np.exp(1j * rng.uniform(-np.pi, np.pi, n_scatterers))


def lshape_scene(n_ant=8, wavelength_m=SPEED_OF_LIGHT / 1.272e9, n_scatterers=8, reflectivity=(0.2, 0.5), seed=0, los_enabled=True, clearance_m=1.0):
    """14 m x 14 m L-shaped hall with four inward-facing ULAs.

    Scatterers are placed uniformly on the outer walls with random
    reflectivity magnitude in ``reflectivity`` and uniform phase.  The notch
    blocks the direct path of two APs over part of the far arm.
    """
    rng = np.random.default_rng(seed)
    spacing = wavelength_m / 2.0
    aps = (
        ula_geometry(n_ant, (-0.5, 7.0), 0.0, spacing),
        ula_geometry(n_ant, (7.0, -0.5), np.pi / 2, spacing),
        ula_geometry(n_ant, (14.5, 3.5), np.pi, spacing),
        ula_geometry(n_ant, (3.5, 14.5), -np.pi / 2, spacing),
    )
    scat, refl = _wall_scatterers(L_SHAPE, n_scatterers, reflectivity, rng)
    return Scene(
        aps=aps,
        walkable_region=L_SHAPE.copy(),
        scatterer_positions=scat,
        scatterer_reflectivity=refl,
        los_enabled=los_enabled,
        clearance_m=clearance_m,
    )


def hall_scene(width_m=14.0, height_m=10.0, n_ant=8, wavelength_m=SPEED_OF_LIGHT / 1.272e9, n_scatterers=16, reflectivity=(0.5, 0.9), seed=1, los_enabled=True, clearance_m=1.0):
    """Rectangular hall with one ULA centred behind each wall, facing inward."""
    rng = np.random.default_rng(seed)
    w, h = float(width_m), float(height_m)
    poly = np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])
    spacing = wavelength_m / 2.0
    aps = (
        ula_geometry(n_ant, (-0.5, h / 2), 0.0, spacing),
        ula_geometry(n_ant, (w / 2, -0.5), np.pi / 2, spacing),
        ula_geometry(n_ant, (w + 0.5, h / 2), np.pi, spacing),
        ula_geometry(n_ant, (w / 2, h + 0.5), -np.pi / 2, spacing),
    )
    scat, refl = _wall_scatterers(poly, n_scatterers, reflectivity, rng)
    return Scene(
        aps=aps,
        walkable_region=poly,
        scatterer_positions=scat,
        scatterer_reflectivity=refl,
        los_enabled=los_enabled,
        clearance_m=clearance_m,
    )


def square_scene(side_m=8.0, n_ant=8, wavelength_m=SPEED_OF_LIGHT / 1.272e9, n_scatterers=0, seed=0):
    """Square room with two ULAs on adjacent walls; a small LoS-only default."""
    rng = np.random.default_rng(seed)
    poly = np.array([[0.0, 0.0], [side_m, 0.0], [side_m, side_m], [0.0, side_m]])
    spacing = wavelength_m / 2.0
    aps = (
        ula_geometry(n_ant, (-0.5, side_m / 2), 0.0, spacing),
        ula_geometry(n_ant, (side_m / 2, -0.5), np.pi / 2, spacing),
    )
    scat = rng.uniform(0, side_m, (n_scatterers, 2))
    refl = rng.uniform(0.2, 0.5, n_scatterers) * np.exp(1j * rng.uniform(-np.pi, np.pi, n_scatterers))
    return Scene(aps=aps, walkable_region=poly, scatterer_positions=scat, scatterer_reflectivity=refl)


@dataclass(frozen=True)
class SyntheticSetup:
    """A reproducible scene plus recording and graph settings.

    ``standard_setup`` returns the benchmark used by the demos and the
    acceptance checks; the fields are plain values so variants are a
    ``dataclasses.replace`` away.
    """

    layout: str = "hall"
    n_ant: int = 8
    n_scatterers: int = 16
    reflectivity: tuple = (0.5, 0.9)
    scene_seed: int = 1
    n_subcarriers: int = 64
    sample_interval_s: float = 0.5
    T: int = 300
    v_max: float = 2.0
    noise_std: float = 1e-4
    pause_prob: float = 0.1
    pause_mean_steps: float = 10.0
    grid_spacing_m: float = 0.25
    los_enabled: bool = True
    clearance_m: float = 1.0

    @property
    def d_max_m(self):
        return self.v_max * self.sample_interval_s

    def ofdm(self):
        return OfdmConfig(n_subcarriers=self.n_subcarriers, sample_interval_s=self.sample_interval_s)

    def scene(self):
        builders = {"hall": hall_scene, "lshape": lshape_scene}
        if self.layout not in builders:
            raise ValueError(f"unknown layout {self.layout!r}")
        return builders[self.layout](
            n_ant=self.n_ant,
            wavelength_m=self.ofdm().wavelength_m,
            n_scatterers=self.n_scatterers,
            reflectivity=self.reflectivity,
            seed=self.scene_seed,
            los_enabled=self.los_enabled,
            clearance_m=self.clearance_m,
        )

    def dataset(self, seed):
        return gen_dataset(
            self.scene(),
            self.ofdm(),
            T=self.T,
            v_max=self.v_max,
            noise_std=self.noise_std,
            seed=seed,
            pause_prob=self.pause_prob,
            pause_mean_steps=self.pause_mean_steps,
        )


def standard_setup():
    """Multipath-rich rectangular hall, stop-and-go walker, 0.25 m grid."""
    return SyntheticSetup()
