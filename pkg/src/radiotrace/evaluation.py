"""Localization and radio-map metrics, and annotation-free selection of eta.

Ground truth enters only the metric functions; :func:`select_eta` has no
truth argument.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .features import DelayTransform, padp, padp_distance, normalize_csi, phase_normalize
from .inference import alternate_optimize, objective_terms
from .radiomap import beam_gain_map, dft_codebook

log = logging.getLogger(__name__)

EPS_E = 1e-9
DEFAULT_ETAS = (0.0, 100.0, 300.0, 1000.0, 3000.0, 10000.0)


def _check_same(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def e_loc(est, truth):
    """Mean Euclidean distance in meters; ``est`` is coordinates or a Trajectory."""
    est = np.asarray(getattr(est, "coordinates", est), dtype=float)
    truth = np.asarray(truth, dtype=float)
    if len(est) != len(truth):
        raise ValueError(f"length mismatch: {len(est)} vs {len(truth)}")
    return float(np.mean(np.linalg.norm(est - truth, axis=1)))


def e_beam(ref_gains, est_gains, eps_e=EPS_E):
    ref = np.asarray(ref_gains, dtype=float)
    est = np.asarray(est_gains, dtype=float)
    _check_same(ref, est)
    return float(np.mean(np.abs((ref - est) / (ref + eps_e))) * 100.0)


def e_rmse(ref_csi, est_csi):
    """Mean over leading axes of ``||H - H_hat||_F / sqrt(N_ant N_sub)``, in percent."""
    ref = np.asarray(ref_csi)
    est = np.asarray(est_csi)
    _check_same(ref, est)
    n = ref.shape[-2] * ref.shape[-1]
    err = np.linalg.norm(ref - est, axis=(-2, -1)) / np.sqrt(n)
    return float(np.mean(err) * 100.0)


def e_cd(ref_csi, est_csi, dictionaries, eps_h=1e-9):
    """Mean PADP distance; arrays are ``(T, Q, N_ant, N_sub)``."""
    ref = np.asarray(ref_csi)
    est = np.asarray(est_csi)
    _check_same(ref, est)
    transform = DelayTransform(ref.shape[-1])
    total, count = 0.0, 0
    for q in range(ref.shape[1]):
        pr = padp(normalize_csi(ref[:, q], eps_h), dictionaries[q], transform)
        pe = padp(normalize_csi(est[:, q], eps_h), dictionaries[q], transform)
        for t in range(ref.shape[0]):
            total += padp_distance(pr[t], pe[t])
            count += 1
    return total / count


@dataclass
class MetricsReport:
    e_loc_m: float
    e_beam_pct: float
    e_rmse_pct: float
    e_cd: float
    per_ap: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("e_loc_m", "e_beam_pct", "e_rmse_pct", "e_cd"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")

    def to_dict(self):
        return asdict(self)


def map_reconstruction(csi, truth, radiomap, codebooks=None):
    """Reference and map-predicted channels and best-beam gains at the true positions.

    Both channels are divided by the reference's RMS entry magnitude so the
    channel error reads as a relative error.  Returns ``(ref, est, ref_gain,
    est_gain)`` with channel arrays of shape ``(T, Q, N_ant, N_sub)`` and gain
    arrays ``(T, Q)``.
    """
    truth = np.asarray(truth, dtype=float)
    T = len(truth)
    Q = len(csi)
    node = radiomap.lookup(truth)
    if np.any(node < 0):
        raise ValueError("radio map has no covered node")
    ref = np.empty((T, Q) + np.asarray(csi[0]).shape[1:], dtype=complex)
    est = np.empty_like(ref)
    ref_gain = np.empty((T, Q))
    est_gain = np.empty((T, Q))
    for q in range(Q):
        book = codebooks[q] if codebooks is not None else dft_codebook(ref.shape[2])
        for t in range(T):
            h = phase_normalize(np.asarray(csi[q][t]))
            scale = np.linalg.norm(h) / np.sqrt(h.size)
            scale = scale if scale > 0 else 1.0
            ref[t, q] = h / scale
            est[t, q] = radiomap.channel_map[q][node[t]] / scale
            g_ref = beam_gain_map(ref[t, q], book)
            b = int(np.argmax(g_ref))
            ref_gain[t, q] = g_ref[b]
            est_gain[t, q] = beam_gain_map(est[t, q], book)[b]
    return ref, est, ref_gain, est_gain


def evaluate(est_coords, truth, csi, radiomap, dictionaries, codebooks=None, config=None):
    """All four metrics for one run; maps are probed at the true positions."""
    ref, est, ref_gain, est_gain = map_reconstruction(csi, truth, radiomap, codebooks)
    per_ap = []
    for q in range(len(csi)):
        per_ap.append(
            {
                "ap": q,
                "e_beam_pct": e_beam(ref_gain[:, q], est_gain[:, q]),
                "e_rmse_pct": e_rmse(ref[:, q], est[:, q]),
                "e_cd": e_cd(ref[:, q : q + 1], est[:, q : q + 1], [dictionaries[q]]),
            }
        )
    return MetricsReport(
        e_loc_m=e_loc(est_coords, truth),
        e_beam_pct=e_beam(ref_gain, est_gain),
        e_rmse_pct=e_rmse(ref, est),
        e_cd=e_cd(ref, est, dictionaries),
        per_ap=per_ap,
        config=dict(config or {}),
    )


def padp_residual_consistency(result, obs):
    """Mean standardized PADP residual ``(g - gamma1 d)^2 / (gamma2 d + sigma0^2)``."""
    if obs.T < 2:
        return 0.0
    d = result.trajectory.step_lengths()
    p = result.params
    vals = [
        (obs.padp_step_dist[:, q] - p.gamma1[q] * d) ** 2 / (p.gamma2[q] * d + p.sigma0_sq[q])
        for q in range(p.Q)
    ]
    return float(np.mean(vals))


def eta_score(result, obs, graph, aps, lambda_c=1.0):
    """Selection score: eta-free part of the objective per step minus the residual term."""
    emission, transition, _ = objective_terms(result.trajectory, result.params, obs, graph, aps)
    normalized = (emission + transition) / obs.T
    residual = padp_residual_consistency(result, obs)
    return normalized - lambda_c * residual, normalized, residual


def select_eta(candidates, obs, graph, aps, cfg, lambda_c=1.0, workers=1):
    """Choose eta without ground truth.

    Every candidate is optimized with :func:`alternate_optimize` and scored
    by :func:`eta_score`; the largest score wins, ties going to the smaller
    eta.  Returns ``(eta, diagnostics, results)`` where ``results`` maps each
    successful eta to its :class:`InferenceResult`.
    """
    cands = sorted(float(c) for c in candidates)
    if not cands:
        raise ValueError("need at least one eta candidate")

    def run(eta):
        try:
            return alternate_optimize(obs, graph, aps, replace(cfg, eta=eta))
        except Exception as exc:  # a failing candidate is skipped
            log.warning("eta=%g failed: %s", eta, exc)
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(run, cands))
    else:
        outs = [run(e) for e in cands]
    diagnostics, results = [], {}
    for eta, res in zip(cands, outs):
        if isinstance(res, Exception):
            continue
        score, normalized, residual = eta_score(res, obs, graph, aps, lambda_c)
        diagnostics.append(
            {
                "eta": eta,
                "score": score,
                "normalized_objective": normalized,
                "padp_residual": residual,
                "iterations": res.iterations,
                "converged": res.converged,
            }
        )
        results[eta] = res
    if not diagnostics:
        raise RuntimeError("every eta candidate failed")
    best = max(diagnostics, key=lambda r: (r["score"], -r["eta"]))
    return best["eta"], diagnostics, results
