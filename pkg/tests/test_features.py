import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radiotrace import features, sim

LAM = sim.SPEED_OF_LIGHT / 1.272e9
GEOM = sim.ula_geometry(4, (0.0, 0.0), 0.0, LAM / 2)
DICT = features.angular_dictionary(GEOM, LAM, resolution_rad=np.deg2rad(5.0))


def random_csi(rng, shape=(4, 8), scale=1.0):
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def test_normalize_zero_and_unit():
    z = np.zeros((3, 4), complex)
    np.testing.assert_array_equal(features.normalize_csi(z), z)
    h = random_csi(np.random.default_rng(0), (3, 4))
    h /= np.linalg.norm(h)
    np.testing.assert_allclose(features.normalize_csi(h, eps_h=1e-15), h, atol=1e-14)


def test_normalize_scale():
    h = random_csi(np.random.default_rng(1), (3, 4), scale=2.0)
    np.testing.assert_allclose(features.normalize_csi(h), features.normalize_csi(5 * h), atol=1e-6)


def test_padp_rank_one_peak():
    k, r = 7, 5
    n_sub = 8
    f = features.DelayTransform(n_sub).matrix[r]
    h = np.outer(DICT.steering_columns[:, k], f)
    p = features.padp(features.normalize_csi(h), DICT)
    assert np.unravel_index(np.argmax(p), p.shape) == (k, r)


def test_padp_zero_and_shape_check():
    p = features.padp(np.zeros((4, 8), complex), DICT)
    assert p.shape == (DICT.n_angles, 8) and not p.any()
    with pytest.raises(ValueError):
        features.padp(np.zeros((3, 8), complex), DICT)


def test_delay_transform_matches_matrix():
    x = random_csi(np.random.default_rng(2), (4, 8))
    tr = features.DelayTransform(8)
    np.testing.assert_allclose(tr.apply(x), x @ tr.matrix.conj().T, atol=1e-12)
    np.testing.assert_allclose(tr.matrix @ tr.matrix.conj().T, np.eye(8), atol=1e-12)


def test_padp_distance_examples():
    p = np.abs(random_csi(np.random.default_rng(3), (5, 6)))
    assert features.padp_distance(p, p) == 0.0
    assert features.padp_distance(np.ones((3, 7)), np.zeros((3, 7))) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        features.padp_distance(np.ones((2, 2)), np.ones((2, 3)))


def test_rss_examples():
    h = np.zeros((2, 2), complex)
    h[0, 0] = 1.0
    assert features.rss(h, eps_h=1e-300) == pytest.approx(0.0, abs=1e-12)
    assert features.rss(np.zeros((2, 2)), eps_h=1e-10) == pytest.approx(-100.0)
    assert features.rss(h * 10, eps_h=1e-9) == pytest.approx(20.0, abs=1e-6)


def test_covariance_rank_one_and_zero():
    a = DICT.steering_columns[:, 3]
    n_sub = 8
    f = np.exp(1j * np.random.default_rng(4).uniform(0, 2 * np.pi, n_sub))
    v = features.spatial_covariance(np.outer(a, f))
    np.testing.assert_allclose(v, np.outer(a, a.conj()), atol=1e-12)
    assert not features.spatial_covariance(np.zeros((4, 8), complex)).any()


def test_music_identity_tie_break():
    ang, spec = features.music_bearing(np.eye(4, dtype=complex), DICT)
    assert np.ptp(spec) <= 1e-9 * spec.max()
    assert ang == DICT.grid_angles_rad[0]


def test_music_two_paths():
    a1, a2 = DICT.steering_columns[:, 8], DICT.steering_columns[:, 28]
    v = 2.0 * np.outer(a1, a1.conj()) + np.outer(a2, a2.conj())
    ang, _ = features.music_bearing(v, DICT, n_signal=2)
    assert ang in (DICT.grid_angles_rad[8], DICT.grid_angles_rad[28])


def test_music_argument_checks():
    with pytest.raises(ValueError):
        features.music_spectrum(np.eye(3), DICT)
    with pytest.raises(ValueError):
        features.music_spectrum(np.eye(4), DICT, n_signal=4)


def test_phase_normalize_examples():
    rng = np.random.default_rng(5)
    h = random_csi(rng)
    out = features.phase_normalize(h)
    ref = out.flat[np.argmax(np.abs(out))]
    assert abs(ref.imag) < 1e-12 and ref.real >= 0
    np.testing.assert_allclose(features.phase_normalize(out), out, atol=1e-14)
    np.testing.assert_allclose(features.phase_normalize(h * np.exp(1j * np.pi / 3)), out, atol=1e-12)
    np.testing.assert_allclose(np.abs(out), np.abs(h), rtol=1e-15)
    z = np.zeros((2, 2), complex)
    np.testing.assert_array_equal(features.phase_normalize(z), z)


def test_decimate():
    h = np.arange(12).reshape(2, 6)
    np.testing.assert_array_equal(features.decimate(h, 2), h[:, ::2])
    with pytest.raises(ValueError):
        features.decimate(h, 0)


def test_dictionary_validation():
    with pytest.raises(ValueError):
        features.AngularDictionary(np.array([0.0]), np.ones((2, 1)))
    with pytest.raises(ValueError):
        features.AngularDictionary(np.array([0.0, 0.0]), np.ones((2, 2)))


def test_extract_observations_matches_direct():
    rng = np.random.default_rng(6)
    csi = [random_csi(rng, (5, 4, 8)) for _ in range(2)]
    obs = features.extract_observations(csi, [DICT, DICT], stride=2)
    assert obs.T == 5 and obs.Q == 2
    for q in range(2):
        p = [features.padp(features.normalize_csi(csi[q][t][:, ::2]), DICT) for t in range(5)]
        for t in range(1, 5):
            assert obs.padp_step_dist[t - 1, q] == pytest.approx(features.padp_distance(p[t], p[t - 1]))
        assert obs.rss_db[2, q] == pytest.approx(features.rss(csi[q][2]))
        ang, _ = features.music_bearing(features.spatial_covariance(csi[q][3][:, ::2]), DICT)
        assert obs.bearing_rad[3, q] == ang


def test_observation_sequence_validation():
    with pytest.raises(ValueError):
        features.ObservationSequence(np.zeros((3, 2)), np.zeros((3, 1)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        features.ObservationSequence(np.zeros((3, 2)), np.zeros((3, 2)), -np.ones((2, 2)))


# property suites

csi_seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=100, deadline=None)
@given(seed=csi_seeds, phase=st.floats(0, 2 * np.pi), scale=st.floats(1.0, 1e3))
def test_padp_phase_and_scale_invariance(seed, phase, scale):
    h = random_csi(np.random.default_rng(seed))
    p = features.padp(features.normalize_csi(h), DICT)
    q = features.padp(features.normalize_csi(scale * np.exp(1j * phase) * h), DICT)
    np.testing.assert_allclose(q, p, atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(seed=csi_seeds)
def test_padp_distance_pseudometric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (features.padp(features.normalize_csi(random_csi(rng)), DICT) for _ in range(3))
    dab = features.padp_distance(a, b)
    assert dab >= 0
    assert features.padp_distance(a, a) == 0
    assert dab == features.padp_distance(b, a)
    assert features.padp_distance(a, c) <= dab + features.padp_distance(b, c) + 1e-12


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 16), spacing=st.floats(0.05, 1.0), phi=st.floats(-np.pi, np.pi), theta=st.floats(-np.pi, np.pi))
def test_steering_unit_magnitude(n, spacing, phi, theta):
    geom = sim.ula_geometry(n, (0.0, 0.0), phi, spacing)
    np.testing.assert_allclose(np.abs(sim.steering_vector(geom, LAM, theta)), 1.0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(k=st.integers(0, DICT.n_angles - 1), gain=st.floats(1e-3, 1e3))
def test_music_grid_exact(k, gain):
    a = DICT.steering_columns[:, k]
    v = gain * np.outer(a, a.conj())
    ang, spec = features.music_bearing(v, DICT)
    idx = int(np.flatnonzero(DICT.grid_angles_rad == ang)[0])
    assert spec[idx] >= spec.max() * (1 - 1e-12)
    # the two endfire angles share one steering vector on a half-wavelength ULA
    assert idx == k or np.allclose(DICT.steering_columns[:, idx], a, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(seed=csi_seeds)
def test_covariance_hermitian_psd(seed):
    v = features.spatial_covariance(random_csi(np.random.default_rng(seed)))
    np.testing.assert_allclose(v, v.conj().T, atol=1e-12)
    assert np.linalg.eigvalsh(v).min() >= -1e-12
