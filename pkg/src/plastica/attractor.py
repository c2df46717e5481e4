"""Numerical pullback attractors, forward omega limit sets and the forward
attracting set, represented as point clouds with epsilon-box covers.

A pullback component A(t) is the limit of the images phi(t, t0, B*) as t0
is pulled back; here that limit is realised as a Cauchy sequence of arrival
clouds in the Hausdorff metric. Forward limit sets collect every state visited
after a burn-in time.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import norm, qmc

from .errors import InvarianceError
from .trajectory import propagate
from . import io


def directed_distance(A, B):
    """sup over a in A of the distance from a to B (the attraction semi-distance)."""
    A = _cloud(A)
    B = _cloud(B)
    if len(A) == 0 or len(B) == 0:
        raise ValueError("distance to or from an empty set")
    dist, _ = cKDTree(B).query(A, k=1)
    return float(np.max(dist))


def hausdorff_distance(A, B):
    """Symmetric Hausdorff distance between two finite point sets."""
    return max(directed_distance(A, B), directed_distance(B, A))


def _cloud(P):
    if isinstance(P, SetEstimate):
        return P.points
    P = np.asarray(P, dtype=float)
    if P.ndim == 0:
        return P.reshape(1, 1)
    if P.ndim == 1:
        return P[:, None]
    return P


@dataclass
class SetEstimate:
    """Finite point set plus its cover by boxes of side ``box_size``.

    Box ``i`` (an integer d-tuple) is the half-open cell
    ``[i * box_size, (i + 1) * box_size)``.
    """
    points: np.ndarray
    box_size: float
    boxes: np.ndarray
    t: Optional[float] = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_points(cls, points, box_size, t=None, thin=False, meta=None):
        """Cover ``points``; with ``thin`` keep only the first point in each box."""
        pts = _cloud(points)
        if not box_size > 0:
            raise ValueError("box_size must be positive")
        idx = np.floor(pts / box_size).astype(np.int64)
        boxes, first = np.unique(idx, axis=0, return_index=True)
        if thin:
            pts = pts[np.sort(first)]
        return cls(pts, float(box_size), boxes, t, dict(meta or {}))

    @property
    def n_boxes(self):
        return len(self.boxes)

    def box_centers(self):
        return (self.boxes + 0.5) * self.box_size

    def centroid(self):
        return self.points.mean(axis=0)

    def within(self, other, fattening):
        """True if every point lies within ``fattening`` of ``other``."""
        return directed_distance(self.points, _cloud(other)) <= fattening

    def to_json(self):
        return {"t": self.t, "eps": self.box_size,
                "boxes": self.boxes.tolist(), "points": self.points.tolist()}

    @classmethod
    def from_json(cls, obj):
        pts = np.array(obj["points"], dtype=float)
        boxes = np.array(obj["boxes"], dtype=np.int64).reshape(-1, pts.shape[1])
        return cls(pts, obj["eps"], boxes, obj["t"])

    def save(self, path):
        return io.write_json(path, self.to_json())


def sample_ball(radius, n, dim, seed=0):
    """Deterministic cloud on the closed ball: centre, boundary shell, interior.

    In two or more dimensions one eighth of the points sit on the sphere; the
    interior comes from a scrambled Halton sequence.
    """
    if n < 3:
        raise ValueError("need at least 3 cloud points")
    halton = qmc.Halton(d=dim + 1, scramble=True, seed=seed)
    if dim == 1:
        # the 1-D sphere is just the two endpoints
        shell = np.array([[-radius], [radius]])
        u = halton.random(n - 3)[:, 0]
        interior = (2.0 * u - 1.0)[:, None] * radius
    else:
        n_shell = max(2, n // 8)
        n_int = n - n_shell - 1
        hs = qmc.Halton(d=dim, scramble=True, seed=seed + 1).random(n_shell)
        dirs = norm.ppf(np.clip(hs, 1e-12, 1 - 1e-12))
        shell = radius * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        h = halton.random(n_int)
        g = norm.ppf(np.clip(h[:, :dim], 1e-12, 1 - 1e-12))
        r = radius * h[:, dim] ** (1.0 / dim)
        interior = r[:, None] * g / np.linalg.norm(g, axis=1, keepdims=True)
    return np.vstack([np.zeros((1, dim)), shell, interior])


def _evolve_checked(src, X0, t0, t1, dt, radius, margin, threads, record):
    times, states = propagate(src, X0, t0, t1, dt, record=True, threads=threads)
    norms = np.linalg.norm(states, axis=-1)
    if radius is not None:
        out = norms > radius + margin
        if out.any():
            ti, pi = np.argwhere(out)[0]
            raise InvarianceError(
                f"cloud point left B*(radius {radius}) + {margin} at t={times[ti]!r}",
                states[ti, pi], float(times[ti]))
    return (times, states) if record else states[-1]


@dataclass
class PullbackSweep:
    target_t: float
    t0_sequence: list
    estimates: list
    hausdorff_gaps: list
    eps: float
    converged: bool
    converged_at: Optional[float]
    nested: list

    @property
    def final(self):
        return self.estimates[-1]

    def rows(self):
        """Rows ``(t0, n_points, n_boxes, hausdorff_gap)`` for the sweep report."""
        return [(float(t0), len(e.points), e.n_boxes, float(g))
                for t0, e, g in zip(self.t0_sequence, self.estimates, self.hausdorff_gaps)]

    def save_csv(self, path):
        return io.write_table(path, ["t0", "n_points", "n_boxes", "hausdorff_gap"], self.rows())


def pullback_attractor_estimate(src, B_star, target_t, t0_sequence, cloud_n, eps,
                                dt=0.01, box_size=None, margin=None, threads=1, seed=0):
    """Pull the starting time back through ``t0_sequence`` and track arrivals.

    For each t0 a cloud sampled from the ball of radius ``B_star`` is evolved
    to ``target_t`` and box-covered. The sweep is declared converged once two
    consecutive Hausdorff gaps are at most ``eps``; this is a heuristic, not
    a rate guarantee. ``box_size`` defaults to ``eps / 2``.
    """
    seq = [float(t) for t in t0_sequence]
    if not seq:
        raise ValueError("empty t0 sequence")
    if any(b >= a for a, b in zip(seq, seq[1:])):
        raise ValueError("t0_sequence must be strictly decreasing")
    if seq[0] > target_t:
        raise ValueError("every t0 must precede target_t")
    box = eps / 2.0 if box_size is None else box_size
    margin = eps if margin is None else margin
    X0 = sample_ball(B_star, cloud_n, src.dim, seed)
    estimates, gaps, nested = [], [], []
    run = 0
    converged_at = None
    for t0 in seq:
        if t0 == target_t:
            arrivals = X0.copy()
        else:
            arrivals = _evolve_checked(src, X0, t0, target_t, dt, B_star, margin, threads, False)
        est = SetEstimate.from_points(arrivals, box, t=target_t, meta={"t0": t0})
        if estimates:
            prev = estimates[-1]
            gap = hausdorff_distance(est.points, prev.points)
            nested.append(est.within(prev, eps))
            run = run + 1 if gap <= eps else 0
            if run >= 2 and converged_at is None:
                converged_at = t0
        else:
            gap = math.nan
        estimates.append(est)
        gaps.append(gap)
    return PullbackSweep(target_t, seq, estimates, gaps, eps,
                         converged_at is not None, converged_at, nested)


def forward_limit_set_estimate(src, B_star, t0, tau_burn, t_end, cloud_n, eps,
                               dt=0.01, sample_every=1, box_size=None, margin=None,
                               threads=1, seed=0):
    """States visited in ``[tau_burn, t_end]`` by a cloud started on B* at t0.

    The returned estimate is thinned to one point per box; ``meta`` holds the
    shrink check (the set collected after a later burn-in lies inside the
    ``eps``-fattening of this one).
    """
    if not t0 < tau_burn < t_end:
        raise ValueError("need t0 < tau_burn < t_end")
    box = eps / 2.0 if box_size is None else box_size
    margin = eps if margin is None else margin
    X0 = sample_ball(B_star, cloud_n, src.dim, seed)
    times, states = _evolve_checked(src, X0, t0, t_end, dt, B_star, margin, threads, True)
    keep = np.nonzero(times >= tau_burn - 1e-12)[0][::sample_every]
    est = SetEstimate.from_points(states[keep].reshape(-1, src.dim), box, t=t0, thin=True)
    later = keep[times[keep] >= (tau_burn + t_end) / 2.0]
    late = SetEstimate.from_points(states[later].reshape(-1, src.dim), box, t=t0, thin=True)
    est.meta.update(t0=t0, tau_burn=tau_burn, t_end=t_end,
                    shrink_ok=bool(late.within(est, eps)))
    return est


def _close_box_gaps(boxes):
    """Add single missing boxes lying between two occupied neighbours on an axis."""
    occupied = {tuple(b) for b in boxes.tolist()}
    added = set()
    d = boxes.shape[1]
    for b in occupied:
        for j in range(d):
            step = [0] * d
            step[j] = 1
            mid = tuple(x + s for x, s in zip(b, step))
            far = tuple(x + 2 * s for x, s in zip(b, step))
            if mid not in occupied and far in occupied:
                added.add(mid)
    return sorted(added)


def forward_attracting_set(src, B_star, t0_list, tau_burn, t_end, cloud_n, eps,
                           dt=0.01, sample_every=1, box_size=None, margin=None,
                           threads=1, seed=0):
    """Union of the forward limit set estimates over ``t0_list``.

    Single-box holes between occupied boxes are filled (their centres become
    points). ``meta["monotone"]`` records, for each consecutive pair of
    starting times, whether the earlier limit set sits inside the
    ``eps``-fattening of the later one.
    """
    t0s = sorted(float(t) for t in t0_list)
    if not t0s:
        raise ValueError("t0_list is empty")
    box = eps / 2.0 if box_size is None else box_size
    parts = [forward_limit_set_estimate(src, B_star, t0, tau_burn, t_end, cloud_n, eps,
                                        dt, sample_every, box, margin, threads, seed)
             for t0 in t0s]
    pts = np.vstack([p.points for p in parts])
    union = SetEstimate.from_points(pts, box, thin=True)
    fill = _close_box_gaps(union.boxes)
    if fill:
        extra = (np.array(fill, dtype=float) + 0.5) * box
        union = SetEstimate.from_points(np.vstack([union.points, extra]), box, thin=True)
    monotone = [bool(a.within(b, eps)) for a, b in zip(parts, parts[1:])]
    union.meta.update(t0_list=t0s, tau_burn=tau_burn, t_end=t_end, monotone=monotone,
                      components=[p.meta for p in parts])
    union.meta["parts"] = parts
    return union


def forward_attraction_check(src, target, test_sets, t0, t_end, eps, dt=0.01,
                             n_report=20, threads=1):
    """Directed distance from evolved test clouds to ``target`` over time.

    Each entry of ``test_sets`` is a point array (or a ball radius, sampled
    with :func:`sample_ball`). The report lists ``(t, distance)`` pairs and
    whether the distance ends below ``eps``.
    """
    tgt = _cloud(target)
    reports = []
    for B in test_sets:
        X0 = sample_ball(float(B), 257, src.dim) if np.ndim(B) == 0 else _cloud(B)
        times, states = propagate(src, X0, t0, t_end, dt, record=True, threads=threads)
        picks = np.unique(np.linspace(0, len(times) - 1, n_report + 1).round().astype(int))
        series = [(float(times[i]), directed_distance(states[i], tgt)) for i in picks]
        dists = np.array([d for _, d in series])
        reports.append({"series": series, "final": float(dists[-1]),
                        "attracted": bool(dists[-1] <= eps),
                        "min_after_half": float(dists[len(dists) // 2:].min())})
    return reports


def invariance_defect(src, estimate, t_from, t_to, dt=0.01):
    """Directed distance from phi(t_to, t_from, estimate) back to the estimate."""
    moved = propagate(src, estimate.points, t_from, t_to, dt)
    return directed_distance(moved, estimate.points)
