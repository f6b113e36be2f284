"""Walkable-region discretization and the mobility kernel.

A region is a simple polygon given as an ``(M, 2)`` array of vertices in
meters (no repeated closing vertex).  Points on the boundary count as inside.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

_TOL = 1e-9


def as_polygon(region):
    poly = np.asarray(region, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
        raise ValueError("region must be an (M, 2) vertex array with M >= 3")
    if np.allclose(poly[0], poly[-1]):
        poly = poly[:-1]
    return poly


def polygon_area(region):
    poly = as_polygon(region)
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _point_segment_distance(points, a, b):
    """Distances from ``points`` (K, 2) to each segment ``a[i]-b[i]``; (K, M)."""
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom = np.where(denom > 0, denom, 1.0)
    ap = points[:, None, :] - a[None, :, :]
    s = np.clip(np.einsum("kij,ij->ki", ap, ab) / denom, 0.0, 1.0)
    closest = a[None] + s[..., None] * ab[None]
    return np.linalg.norm(points[:, None, :] - closest, axis=-1)


def distance_to_boundary(points, region):
    poly = as_polygon(region)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return _point_segment_distance(pts, poly, np.roll(poly, -1, axis=0)).min(axis=1)


def points_in_polygon(points, region):
    """Vectorized containment with the boundary counted as inside."""
    poly = as_polygon(region)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = poly
    b = np.roll(poly, -1, axis=0)
    x = pts[:, 0:1]
    y = pts[:, 1:2]
    ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    straddle = (ay > y) != (by > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = ax + (y - ay) * (bx - ax) / (by - ay)
    crossings = np.sum(straddle & (x < x_cross), axis=1)
    inside = crossings % 2 == 1
    on_edge = _point_segment_distance(pts, a, b).min(axis=1) <= _TOL
    return inside | on_edge


def point_in_polygon(point, region):
    return bool(points_in_polygon(np.asarray(point, dtype=float)[None], region)[0])


def _cross(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (
        b[..., 0] - o[..., 0]
    )


def _intersection_params(p, q, a, b):
    """Parameters ``s`` in [0, 1] along ``p->q`` where it meets edges ``a-b``."""
    d = q - p
    e = b - a
    denom = d[0] * e[:, 1] - d[1] * e[:, 0]
    ap = a - p
    params = []
    parallel = np.abs(denom) <= _TOL * max(1.0, np.linalg.norm(d)) * np.maximum(
        1.0, np.linalg.norm(e, axis=1)
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (ap[:, 0] * e[:, 1] - ap[:, 1] * e[:, 0]) / denom
        u = (ap[:, 0] * d[1] - ap[:, 1] * d[0]) / denom
    hit = ~parallel & (s >= -_TOL) & (s <= 1 + _TOL) & (u >= -_TOL) & (u <= 1 + _TOL)
    params.extend(np.clip(s[hit], 0.0, 1.0).tolist())
    dd = float(np.dot(d, d))
    if dd > 0:
        # collinear overlaps contribute their endpoints
        collinear = parallel & (np.abs(_cross(p[None], q[None], a)) <= _TOL * max(1.0, dd))
        for k in np.flatnonzero(collinear):
            for v in (a[k], b[k]):
                t = float(np.dot(v - p, d) / dd)
                if -_TOL <= t <= 1 + _TOL:
                    params.append(min(max(t, 0.0), 1.0))
    return params


def segment_in_region(p_i, p_j, region):
    """True iff the closed segment ``p_i -> p_j`` lies inside the polygon.

    The segment is split at every intersection with a polygon edge; it is
    inside exactly when both endpoints and every piece's midpoint are.
    """
    poly = as_polygon(region)
    p = np.asarray(p_i, dtype=float)
    q = np.asarray(p_j, dtype=float)
    if not points_in_polygon(np.stack([p, q]), poly).all():
        return False
    if np.allclose(p, q, atol=_TOL, rtol=0.0):
        return True
    b = np.roll(poly, -1, axis=0)
    cuts = np.unique(np.concatenate([[0.0, 1.0], _intersection_params(p, q, poly, b)]))
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    mids = mids[np.diff(cuts) > _TOL]
    if len(mids) == 0:
        return True
    return bool(points_in_polygon(p[None] + mids[:, None] * (q - p)[None], poly).all())


def build_nodes(region, spacing_m):
    """Grid nodes inside ``region``, centered in its bounding box, row-major.

    Each axis gets ``floor(extent / spacing)`` points so the outermost nodes sit
    half a leftover spacing away from the bounding box.  Returns the ``(N, 2)``
    node coordinates and their ``(N, 2)`` integer ``(row, col)`` grid indices.
    """
    if spacing_m <= 0:
        raise ValueError("spacing_m must be positive")
    poly = as_polygon(region)
    lo = poly.min(axis=0)
    hi = poly.max(axis=0)
    extent = hi - lo
    counts = np.floor(extent / spacing_m + _TOL).astype(int)
    if np.any(counts < 1):
        raise ValueError(f"grid spacing {spacing_m} m exceeds the region extent {extent.tolist()}")
    offset = lo + 0.5 * (extent - (counts - 1) * spacing_m)
    xs = offset[0] + spacing_m * np.arange(counts[0])
    ys = offset[1] + spacing_m * np.arange(counts[1])
    rows, cols = np.meshgrid(np.arange(counts[1]), np.arange(counts[0]), indexing="ij")
    rc = np.stack([rows.ravel(), cols.ravel()], axis=1)
    pts = np.stack([xs[rc[:, 1]], ys[rc[:, 0]]], axis=1)
    keep = points_in_polygon(pts, poly)
    if not keep.any():
        raise ValueError("no grid node falls inside the region")
    return pts[keep], rc[keep]


def build_edges(nodes, d_max_m, region):
    """Feasible moves: ``||p_i - p_j|| <= d_max_m`` and the segment stays inside.

    Returns sorted ``(src, dst)`` index arrays, symmetric, self-loops included.
    Edges are ordered by ``dst`` and then ``src``.
    """
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    poly = as_polygon(region)
    diff = nodes[:, None, :] - nodes[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    cand_i, cand_j = np.nonzero(np.triu(dist <= d_max_m + _TOL, k=1))
    pairs = [
        (i, j)
        for i, j in zip(cand_i.tolist(), cand_j.tolist())
        if segment_in_region(nodes[i], nodes[j], poly)
    ]
    src = [i for i in range(n)] + [i for i, _ in pairs] + [j for _, j in pairs]
    dst = [i for i in range(n)] + [j for _, j in pairs] + [i for i, _ in pairs]
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    order = np.lexsort((src, dst))
    return src[order], dst[order]


@dataclass(frozen=True)
class SpatialGraph:
    """Node grid, feasible edges and the truncated-Gaussian transition kernel.

    Edge arrays are sorted by destination then source; ``indptr`` delimits the
    incoming edges of each destination node.
    """

    nodes: np.ndarray
    grid_index: np.ndarray
    spacing_m: float
    region: np.ndarray
    d_max_m: float
    sigma_m: float
    src: np.ndarray
    dst: np.ndarray
    dist: np.ndarray
    log_p: np.ndarray
    indptr: np.ndarray = field(repr=False)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_edges(self):
        return len(self.src)

    @property
    def transitions(self):
        """Row-stochastic sparse kernel ``P[i, j]``."""
        return sp.csr_matrix(
            (np.exp(self.log_p), (self.src, self.dst)), shape=(self.n_nodes, self.n_nodes)
        )

    def neighbors(self, i):
        """Successors of node ``i`` (equal to its predecessors; edges are symmetric)."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.src[lo:hi]

    def edge_log_prob(self, i, j):
        lo, hi = self.indptr[j], self.indptr[j + 1]
        k = np.searchsorted(self.src[lo:hi], i)
        if k < hi - lo and self.src[lo + k] == i:
            return float(self.log_p[lo + k])
        return -np.inf

    def nearest_node(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d2 = ((pts[:, None, :] - self.nodes[None, :, :]) ** 2).sum(axis=-1)
        return np.argmin(d2, axis=1)


def transition_matrix(nodes, src, dst, sigma_m):
    """Log transition probabilities for each edge, normalized per source row."""
    nodes = np.asarray(nodes, dtype=float)
    d2 = ((nodes[src] - nodes[dst]) ** 2).sum(axis=1)
    logits = -d2 / (2.0 * sigma_m**2)
    n = len(nodes)
    # per-row log-sum-exp over outgoing edges
    row_max = np.full(n, -np.inf)
    np.maximum.at(row_max, src, logits)
    z = np.zeros(n)
    np.add.at(z, src, np.exp(logits - row_max[src]))
    log_z = row_max + np.log(z)
    return logits - log_z[src]


def build_graph(region, spacing_m, d_max_m, sigma_m=None):
    """Assemble a :class:`SpatialGraph`; ``sigma_m`` defaults to ``d_max_m / 2``."""
    if d_max_m < 0:
        raise ValueError("d_max_m must be nonnegative")
    poly = as_polygon(region)
    nodes, grid_index = build_nodes(poly, spacing_m)
    if sigma_m is None:
        sigma_m = d_max_m / 2.0 if d_max_m > 0 else 1.0
    if sigma_m <= 0:
        raise ValueError("sigma_m must be positive")
    src, dst = build_edges(nodes, d_max_m, poly)
    log_p = transition_matrix(nodes, src, dst, sigma_m)
    dist = np.linalg.norm(nodes[src] - nodes[dst], axis=1)
    indptr = np.searchsorted(dst, np.arange(len(nodes) + 1))
    return SpatialGraph(
        nodes=nodes,
        grid_index=grid_index,
        spacing_m=float(spacing_m),
        region=poly,
        d_max_m=float(d_max_m),
        sigma_m=float(sigma_m),
        src=src,
        dst=dst,
        dist=dist,
        log_p=log_p,
        indptr=indptr,
    )


def graph_from_nodes(nodes, region, d_max_m, sigma_m, spacing_m=1.0):
    """Graph over an explicit node list (used for small hand-built instances)."""
    nodes = np.asarray(nodes, dtype=float)
    poly = as_polygon(region)
    src, dst = build_edges(nodes, d_max_m, poly)
    log_p = transition_matrix(nodes, src, dst, sigma_m)
    return SpatialGraph(
        nodes=nodes,
        grid_index=np.stack([np.zeros(len(nodes), int), np.arange(len(nodes))], axis=1),
        spacing_m=float(spacing_m),
        region=poly,
        d_max_m=float(d_max_m),
        sigma_m=float(sigma_m),
        src=src,
        dst=dst,
        dist=np.linalg.norm(nodes[src] - nodes[dst], axis=1),
        log_p=log_p,
        indptr=np.searchsorted(dst, np.arange(len(nodes) + 1)),
    )


def export_graph_csv(graph, nodes_path, edges_path):
    with open(nodes_path, "w") as fh:
        fh.write("node_index,x,y,row,col\n")
        for i, (p, rc) in enumerate(zip(graph.nodes, graph.grid_index)):
            fh.write(f"{i},{p[0]:.6f},{p[1]:.6f},{rc[0]},{rc[1]}\n")
    with open(edges_path, "w") as fh:
        fh.write("src,dst,distance,probability\n")
        for s, d, dist, lp in zip(graph.src, graph.dst, graph.dist, graph.log_p):
            fh.write(f"{s},{d},{dist:.6f},{np.exp(lp):.12g}\n")
