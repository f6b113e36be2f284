"""Spatially regularized trajectory inference over a :class:`SpatialGraph`.

The decoded trajectory maximizes

    J = sum_t l_t(x_t) + sum_{t>=2} log P(x_t | x_{t-1})
        - eta * sum_{t>=2} sum_q psi_{t,q}(x_{t-1}, x_t)

where ``l_t`` combines a log-distance RSS likelihood with a wrapped-Gaussian
bearing likelihood per AP and ``psi`` penalizes disagreement between the PADP
step distance and the decoded displacement.  Trajectory and propagation
parameters are refined alternately.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .features import ObservationSequence  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


class DeadEndError(RuntimeError):
    """A pruned candidate set has no feasible predecessor in the previous set."""

    def __init__(self, t):
        super().__init__(
            f"no candidate at step {t} is reachable from the previous candidate set; "
            "increase beam_width"
        )
        self.t = t


class SingularFitError(ValueError):
    pass


@dataclass(frozen=True)
class PropagationParams:
    beta_db: np.ndarray
    alpha: np.ndarray
    sigma_s_sq: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    sigma0_sq: np.ndarray
    sigma_theta_sq: float
    d0: float = 0.1
    eps_d: float = 1e-9
    gamma_min: float = 1e-6

    def __post_init__(self):
        for name in ("beta_db", "alpha", "sigma_s_sq", "gamma1", "gamma2", "sigma0_sq"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        q = len(self.beta_db)
        if any(len(getattr(self, n)) != q for n in ("alpha", "sigma_s_sq", "gamma1", "gamma2", "sigma0_sq")):
            raise ValueError("per-AP parameter arrays must share length Q")
        if np.any(self.sigma_s_sq <= 0) or self.sigma_theta_sq <= 0 or np.any(self.sigma0_sq <= 0):
            raise ValueError("variances must be positive")
        if self.d0 <= 0 or self.gamma_min <= 0:
            raise ValueError("d0 and gamma_min must be positive")
        if np.any(self.gamma2 < self.gamma_min * (1 - 1e-12)):
            raise ValueError("gamma2 must be >= gamma_min")

    @property
    def Q(self):
        return len(self.beta_db)

    def to_dict(self):
        per_ap = [
            {
                "beta_db": float(self.beta_db[q]),
                "alpha": float(self.alpha[q]),
                "sigma_s_sq": float(self.sigma_s_sq[q]),
                "gamma1": float(self.gamma1[q]),
                "gamma2": float(self.gamma2[q]),
                "sigma0_sq": float(self.sigma0_sq[q]),
            }
            for q in range(self.Q)
        ]
        return {
            "aps": per_ap,
            "sigma_theta_sq": float(self.sigma_theta_sq),
            "d0": self.d0,
            "eps_d": self.eps_d,
            "gamma_min": self.gamma_min,
        }

    @classmethod
    def from_dict(cls, d):
        aps = d["aps"]
        return cls(
            **{k: [a[k] for a in aps] for k in ("beta_db", "alpha", "sigma_s_sq", "gamma1", "gamma2", "sigma0_sq")},
            sigma_theta_sq=float(d["sigma_theta_sq"]),
            d0=float(d["d0"]),
            eps_d=float(d["eps_d"]),
            gamma_min=float(d["gamma_min"]),
        )


@dataclass(frozen=True)
class InferenceConfig:
    eta: float = 3000.0
    beam_width: int = 256
    max_iters: int = 20
    rel_tol: float = 1e-6
    sigma_theta_floor: float = 1e-4
    sigma_s_floor: float = 1e-6
    prune_enabled: bool = False
    sigma0_sq: float = 1e-4
    gamma_min: float = 1e-6
    eps_d: float = 1e-9
    d0: float = 0.1

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if min(self.sigma_theta_floor, self.sigma_s_floor, self.sigma0_sq, self.gamma_min, self.d0) <= 0:
            raise ValueError("floors and d0 must be positive")


@dataclass(frozen=True)
class Trajectory:
    node_indices: np.ndarray
    coordinates: np.ndarray

    @classmethod
    def from_nodes(cls, graph, node_indices):
        idx = np.asarray(node_indices, dtype=np.int64)
        return cls(idx, graph.nodes[idx])

    def __len__(self):
        return len(self.node_indices)

    def step_lengths(self):
        return np.linalg.norm(np.diff(self.coordinates, axis=0), axis=1)


def bearing(x, o):
    """Azimuth from ``o`` towards ``x`` in (-pi, pi]."""
    dx, dy = float(x[0] - o[0]), float(x[1] - o[1])
    if dx == 0.0 and dy == 0.0:
        raise ValueError("bearing is undefined when x coincides with the AP")
    return wrap_angle(np.arctan2(dy, dx))


def wrap_angle(delta):
    """Map angles to (-pi, pi]."""
    out = np.pi - np.mod(np.pi - np.asarray(delta, dtype=float), 2.0 * np.pi)
    return float(out) if np.ndim(out) == 0 else out


def emission_loglik(node, rss_t, bearing_t, params, aps):
    """Log-likelihood of one step's RSS and bearings at a candidate position."""
    aps = np.atleast_2d(np.asarray(aps, dtype=float))
    total = 0.0
    for q in range(len(aps)):
        d = float(np.hypot(node[0] - aps[q, 0], node[1] - aps[q, 1]))
        resid = rss_t[q] - params.beta_db[q] + params.alpha[q] * np.log10(d + params.d0)
        ang = wrap_angle(bearing_t[q] - np.arctan2(node[1] - aps[q, 1], node[0] - aps[q, 0]))
        total += -resid**2 / (2 * params.sigma_s_sq[q]) - 0.5 * (LOG_2PI + np.log(params.sigma_s_sq[q]))
        total += -ang**2 / (2 * params.sigma_theta_sq) - 0.5 * (LOG_2PI + np.log(params.sigma_theta_sq))
    return float(total)


def emission_table(nodes, obs, params, aps):
    """``(T, N)`` table of emission scores for every step and node."""
    nodes = np.asarray(nodes, dtype=float)
    aps = np.atleast_2d(np.asarray(aps, dtype=float))
    table = np.zeros((obs.T, len(nodes)))
    for q in range(len(aps)):
        rel = nodes - aps[q]
        u = np.log10(np.hypot(rel[:, 0], rel[:, 1]) + params.d0)
        phi = np.arctan2(rel[:, 1], rel[:, 0])
        resid = obs.rss_db[:, q : q + 1] - params.beta_db[q] + params.alpha[q] * u[None, :]
        ang = wrap_angle(obs.bearing_rad[:, q : q + 1] - phi[None, :])
        table -= resid**2 / (2 * params.sigma_s_sq[q])
        table -= ang**2 / (2 * params.sigma_theta_sq)
        table -= 0.5 * (LOG_2PI + np.log(params.sigma_s_sq[q])) + 0.5 * (LOG_2PI + np.log(params.sigma_theta_sq))
    return table


def padp_pair_energy(g, d, gamma1, gamma2, sigma0_sq):
    """PADP continuity energy of a step of length ``d`` given PADP distance ``g``."""
    var = gamma2 * np.asarray(d, dtype=float) + sigma0_sq
    return (g - gamma1 * d) ** 2 / (2 * var) + 0.5 * np.log(var)


def _step_energies(g_t, dist, params):
    """Sum over APs of the pair energy for one step; ``g_t`` is ``(Q,)``."""
    total = np.zeros_like(dist, dtype=float)
    for q in range(len(g_t)):
        total += padp_pair_energy(g_t[q], dist, params.gamma1[q], params.gamma2[q], params.sigma0_sq[q])
    return total


def _segment_argmax(scores, src, starts, n_nodes):
    """Max score and first-smallest ``src`` achieving it, per destination segment."""
    best = np.maximum.reduceat(scores, starts)
    counts = np.diff(np.append(starts, len(scores)))
    is_max = scores == np.repeat(best, counts)
    arg = np.minimum.reduceat(np.where(is_max, src, n_nodes), starts)
    return best, arg


def viterbi_decode(graph, emissions, obs=None, params=None, cfg=None):
    """Maximize the regularized path score over graph-feasible trajectories.

    ``emissions`` is a ``(T, N)`` score table.  With ``cfg.prune_enabled`` the
    recursion at step ``t`` only considers the ``beam_width`` nodes with the
    highest emission score at ``t`` and predecessors in the previous such set.
    Ties go to the smallest predecessor index (and the smallest final node).
    Returns ``(Trajectory, score)``.
    """
    cfg = cfg or InferenceConfig()
    emissions = np.asarray(emissions, dtype=float)
    T, N = emissions.shape
    if T < 1:
        raise ValueError("need at least one time step")
    if N != graph.n_nodes:
        raise ValueError(f"emission table has {N} columns, graph {graph.n_nodes} nodes")
    eta = float(cfg.eta)
    use_energy = eta > 0 and T > 1
    if use_energy and (obs is None or params is None):
        raise ValueError("eta > 0 needs observations and parameters")
    uniq_d, inv_d = np.unique(graph.dist, return_inverse=True)

    prune = cfg.prune_enabled and cfg.beam_width < N
    if prune:
        order = np.argsort(-emissions, axis=1, kind="stable")
        beams = [np.sort(order[t, : cfg.beam_width]) for t in range(T)]
    omega = np.full(N, -np.inf)
    if prune:
        omega[beams[0]] = emissions[0, beams[0]]
    else:
        omega[:] = emissions[0]
    back = np.zeros((T, N), dtype=np.int64)
    starts_all = graph.indptr[:-1]
    for t in range(1, T):
        if use_energy:
            step_e = _step_energies(obs.padp_step_dist[t - 1], uniq_d, params)[inv_d]
            edge_w = graph.log_p - eta * step_e
        else:
            edge_w = graph.log_p
        if prune:
            dst_nodes = beams[t]
            lo = graph.indptr[dst_nodes]
            counts = graph.indptr[dst_nodes + 1] - lo
            starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
            eidx = np.repeat(lo - starts, counts) + np.arange(counts.sum())
            scores = omega[graph.src[eidx]] + edge_w[eidx]
            best, arg = _segment_argmax(scores, graph.src[eidx], starts, N)
            new = np.full(N, -np.inf)
            new[dst_nodes] = best + emissions[t, dst_nodes]
            back[t, dst_nodes] = arg
            if not np.isfinite(new[dst_nodes]).any():
                raise DeadEndError(t)
        else:
            scores = omega[graph.src] + edge_w
            best, arg = _segment_argmax(scores, graph.src, starts_all, N)
            new = best + emissions[t]
            back[t] = arg
        omega = new
    path = np.empty(T, dtype=np.int64)
    path[-1] = int(np.argmax(omega))
    score = float(omega[path[-1]])
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return Trajectory.from_nodes(graph, path), score


def objective_terms(traj, params, obs, graph, aps):
    """``(emission_sum, log_transition_sum, energy_sum)`` of a trajectory.

    An infeasible transition makes the transition sum ``-inf``.
    """
    idx = np.asarray(traj.node_indices)
    T = len(idx)
    emis = emission_table(graph.nodes[np.unique(idx)], obs, params, aps)
    col = {n: k for k, n in enumerate(np.unique(idx))}
    emission_sum = float(sum(emis[t, col[int(idx[t])]] for t in range(T)))
    trans = 0.0
    for t in range(1, T):
        lp = graph.edge_log_prob(int(idx[t - 1]), int(idx[t]))
        if not np.isfinite(lp):
            log.warning("infeasible transition %d -> %d at step %d", idx[t - 1], idx[t], t)
            trans = -np.inf
            break
        trans += lp
    energy = 0.0
    if T > 1:
        d = np.linalg.norm(np.diff(graph.nodes[idx], axis=0), axis=1)
        for q in range(params.Q):
            energy += float(
                np.sum(padp_pair_energy(obs.padp_step_dist[:, q], d, params.gamma1[q], params.gamma2[q], params.sigma0_sq[q]))
            )
    return emission_sum, trans, energy


def objective(traj, params, obs, graph, eta, aps):
    e, tr, en = objective_terms(traj, params, obs, graph, aps)
    if not np.isfinite(tr):
        return -np.inf
    return e + tr - eta * en


def fit_pathloss(positions, rss_seq, ap, d0):
    """Least-squares ``r = beta - alpha * log10(||x - o|| + d0)``.

    Returns ``(beta, alpha, sigma_s_sq)`` with the mean squared residual as
    the variance.
    """
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    r = np.asarray(rss_seq, dtype=float)
    u = np.log10(np.linalg.norm(x - np.asarray(ap, dtype=float), axis=1) + d0)
    if len(u) < 2 or np.ptp(u) <= 1e-12 * max(1.0, np.abs(u).max()):
        raise SingularFitError("path-loss fit is singular: all positions are equidistant from the AP")
    B = np.stack([np.ones_like(u), -u], axis=1)
    (beta, alpha), *_ = np.linalg.lstsq(B, r, rcond=None)
    resid = r - beta + alpha * u
    return float(beta), float(alpha), float(np.mean(resid**2))


def fit_angle_var(positions, bearings, aps, floor):
    """Mean squared wrapped bearing residual over all steps and APs."""
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    aps = np.atleast_2d(np.asarray(aps, dtype=float))
    b = np.asarray(bearings, dtype=float).reshape(len(x), len(aps))
    phi = np.arctan2(x[:, None, 1] - aps[None, :, 1], x[:, None, 0] - aps[None, :, 0])
    return max(float(np.mean(wrap_angle(b - phi) ** 2)), floor)


def fit_padp_params(positions, g_seq, eps_d, gamma_min):
    """Slope and variance coefficient of the PADP continuity surrogate per AP."""
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    if len(x) < 2:
        raise ValueError("need at least two steps")
    g = np.asarray(g_seq, dtype=float).reshape(len(x) - 1, -1)
    d = np.linalg.norm(np.diff(x, axis=0), axis=1)
    gamma1 = (d @ g) / (np.sum(d**2) + eps_d)
    resid = g - d[:, None] * gamma1[None, :]
    gamma2 = np.maximum(gamma_min, np.sum(resid**2, axis=0) / (np.sum(d) + eps_d))
    return gamma1, gamma2


def initial_params(obs, graph, aps, cfg):
    """Location-free starting point for the first decode.

    The path-loss exponent starts at the free-space value 20; the reference
    power is set so the mean RSS matches the mean log-distance over the graph.
    """
    aps = np.atleast_2d(np.asarray(aps, dtype=float))
    Q = len(aps)
    alpha0 = np.full(Q, 20.0)
    beta0 = np.empty(Q)
    for q in range(Q):
        u = np.log10(np.linalg.norm(graph.nodes - aps[q], axis=1) + cfg.d0)
        beta0[q] = np.mean(obs.rss_db[:, q]) + alpha0[q] * np.mean(u)
    sigma_s = np.maximum(np.var(obs.rss_db, axis=0), max(cfg.sigma_s_floor, 1.0))
    return PropagationParams(
        beta_db=beta0,
        alpha=alpha0,
        sigma_s_sq=sigma_s,
        gamma1=np.zeros(Q),
        gamma2=np.full(Q, max(1.0, cfg.gamma_min)),
        sigma0_sq=np.full(Q, cfg.sigma0_sq),
        sigma_theta_sq=float(np.deg2rad(10.0) ** 2),
        d0=cfg.d0,
        eps_d=cfg.eps_d,
        gamma_min=cfg.gamma_min,
    )


def update_params(traj, obs, aps, prev, cfg, guard_energy=True):
    """One parameter step on a fixed trajectory.

    Path-loss and angular parameters take their closed-form updates.  The
    PADP continuity update of an AP is kept only if it does not raise that
    AP's summed pair energy on ``traj`` (when ``guard_energy``), which keeps
    the alternating objective monotone.  Failed fits keep the previous value.
    """
    aps = np.atleast_2d(np.asarray(aps, dtype=float))
    x = traj.coordinates
    beta, alpha, sig_s = prev.beta_db.copy(), prev.alpha.copy(), prev.sigma_s_sq.copy()
    for q in range(len(aps)):
        try:
            b, a, s = fit_pathloss(x, obs.rss_db[:, q], aps[q], prev.d0)
        except SingularFitError as exc:
            warnings.warn(f"AP {q}: {exc}; keeping previous path-loss parameters", RuntimeWarning, stacklevel=2)
            continue
        beta[q], alpha[q], sig_s[q] = b, a, max(s, cfg.sigma_s_floor)
    sig_t = fit_angle_var(x, obs.bearing_rad, aps, cfg.sigma_theta_floor)
    g1, g2 = prev.gamma1.copy(), prev.gamma2.copy()
    if len(x) >= 2:
        new1, new2 = fit_padp_params(x, obs.padp_step_dist, prev.eps_d, prev.gamma_min)
        d = traj.step_lengths()
        for q in range(len(aps)):
            g = obs.padp_step_dist[:, q]
            if guard_energy:
                old_e = np.sum(padp_pair_energy(g, d, g1[q], g2[q], prev.sigma0_sq[q]))
                new_e = np.sum(padp_pair_energy(g, d, new1[q], new2[q], prev.sigma0_sq[q]))
                if not new_e <= old_e:
                    continue
            g1[q], g2[q] = new1[q], new2[q]
    return replace(prev, beta_db=beta, alpha=alpha, sigma_s_sq=sig_s, gamma1=g1, gamma2=g2, sigma_theta_sq=sig_t)


@dataclass
class InferenceResult:
    trajectory: Trajectory
    params: PropagationParams
    trace: list
    converged: bool
    iterations: int
    eta: float
    trajectories: list = field(default_factory=list, repr=False)


def alternate_optimize(obs, graph, aps, cfg=None, init=None):
    """Alternate parameter updates and regularized decoding.

    The first trajectory is the ``eta = 0`` decode under location-free
    initial parameters.  ``trace[k]`` is the objective (at ``cfg.eta``) of the
    ``k``-th decode under the parameters it was decoded with, except
    ``trace[0]`` which scores the initial decode under the parameters fitted
    to it.  Returns the best-scoring iterate.
    """
    cfg = cfg or InferenceConfig()
    obs_T = obs.T
    params0 = init if init is not None else initial_params(obs, graph, aps, cfg)
    emis = emission_table(graph.nodes, obs, params0, aps)
    traj, _ = viterbi_decode(graph, emis, obs, params0, replace(cfg, eta=0.0))
    params = update_params(traj, obs, aps, params0, cfg, guard_energy=False) if obs_T >= 1 else params0
    trace = [objective(traj, params, obs, graph, cfg.eta, aps)]
    history = [traj]
    best = (trace[0], traj, params)
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if it > 1:
            params = update_params(traj, obs, aps, params, cfg, guard_energy=True)
        emis = emission_table(graph.nodes, obs, params, aps)
        traj, _ = viterbi_decode(graph, emis, obs, params, cfg)
        j = objective(traj, params, obs, graph, cfg.eta, aps)
        history.append(traj)
        prev_j = trace[-1]
        trace.append(j)
        if j > best[0]:
            best = (j, traj, params)
        log.debug("iteration %d: objective %.6f", it, j)
        if abs(j - prev_j) <= cfg.rel_tol * max(abs(prev_j), 1e-12):
            converged = True
            break
    return InferenceResult(
        trajectory=best[1],
        params=best[2],
        trace=trace,
        converged=converged,
        iterations=it,
        eta=float(cfg.eta),
        trajectories=history,
    )
