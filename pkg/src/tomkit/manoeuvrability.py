"""Rasterised manoeuvrability field and the keypoint pipeline that picks p*.

Grid convention: cell ``(i, j)`` covers ``origin + [i, i+1) * cell`` along x and
``origin + [j, j+1) * cell`` along y; arrays are indexed ``[j, i]`` (row = y).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from shapely.geometry import LineString
from shapely.ops import unary_union

from . import geometry as geo
from .affordance import (
    LEFT,
    RIGHT,
    AffordanceSet,
    AffordanceVector,
    compute_tool_affordances,
    select_affordance,
)
from .errors import InvalidParameter, NoCandidate, OutOfGrid, TomError
from .geometry import Segment2, Vec2

log = logging.getLogger(__name__)

TIE_TOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    origin: Vec2
    cell_size: float
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "origin", geo.vec(self.origin))
        if not self.cell_size > 0:
            raise InvalidParameter("cell_size must be positive")
        if self.width < 8 or self.height < 8:
            raise InvalidParameter("grid must be at least 8x8 cells")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height) * self.cell_size

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin.x + (np.arange(self.width) + 0.5) * self.cell_size
        ys = self.origin.y + (np.arange(self.height) + 0.5) * self.cell_size
        return np.meshgrid(xs, ys)

    def cell_of(self, p) -> Optional[tuple[int, int]]:
        """(row, col) of the cell containing ``p``; None when outside."""
        i = math.floor((p[0] - self.origin.x) / self.cell_size)
        j = math.floor((p[1] - self.origin.y) / self.cell_size)
        if 0 <= i < self.width and 0 <= j < self.height:
            return (j, i)
        return None

    def center_of(self, row: int, col: int) -> Vec2:
        return Vec2(
            self.origin.x + (col + 0.5) * self.cell_size,
            self.origin.y + (row + 0.5) * self.cell_size,
        )


@dataclass(frozen=True, eq=False)
class BinaryMask:
    spec: GridSpec
    bits: np.ndarray
    segment_index: int = -1
    side: str = ""

    def __post_init__(self):
        if self.bits.shape != self.spec.shape:
            raise InvalidParameter("mask dimensions do not match the grid spec")

    def at(self, p) -> bool:
        cell = self.spec.cell_of(p)
        return cell is not None and bool(self.bits[cell])


@dataclass(frozen=True, eq=False)
class ManoeuvrabilityGrid:
    spec: GridSpec
    values: np.ndarray
    counts: np.ndarray

    def value_at(self, p) -> float:
        cell = self.spec.cell_of(p)
        return 0.0 if cell is None else float(self.values[cell])


@dataclass(frozen=True)
class AnalysisParams:
    cell_size: float = 2e-3
    sigma_frac: float = 0.25
    kappa_thresh: Optional[float] = None  # default 0.5 / r_obj
    rdp_eps: Optional[float] = None  # default r_obj / 2
    cluster_eps: Optional[float] = None  # default 1.5 * r_obj
    min_pts: int = 1
    smoothing_window: int = 5
    resample_step: float = geo.DEFAULT_RESAMPLE_STEP
    arc_tol: float = geo.DEFAULT_ARC_TOL
    grid: Optional[GridSpec] = None
    metric_distance_norm: str = "grid_diagonal"

    def resolved(self, r_obj: float) -> "AnalysisParams":
        return AnalysisParams(
            cell_size=self.cell_size,
            sigma_frac=self.sigma_frac,
            kappa_thresh=0.5 / r_obj if self.kappa_thresh is None else self.kappa_thresh,
            rdp_eps=r_obj / 2.0 if self.rdp_eps is None else self.rdp_eps,
            cluster_eps=1.5 * r_obj if self.cluster_eps is None else self.cluster_eps,
            min_pts=self.min_pts,
            smoothing_window=self.smoothing_window,
            resample_step=self.resample_step,
            arc_tol=self.arc_tol,
            grid=self.grid,
            metric_distance_norm=self.metric_distance_norm,
        )


@dataclass(frozen=True, eq=False)
class ToolAnalysis:
    tool: tuple[Vec2, ...]
    affordances: AffordanceSet
    grid: ManoeuvrabilityGrid
    masks: tuple[BinaryMask, ...]
    feature_points: tuple[Vec2, ...]
    keypoints: tuple[Vec2, ...]
    filtered: tuple[Vec2, ...]
    a_star: AffordanceVector
    p_star: Vec2
    r_obj: float
    params: AnalysisParams = field(repr=False, default_factory=AnalysisParams)

    def to_dict(self) -> dict:
        pts = lambda seq: [[float(p[0]), float(p[1])] for p in seq]  # noqa: E731
        a = self.a_star
        return {
            "tool": pts(self.tool),
            "r_obj": self.r_obj,
            "p_star": [float(self.p_star.x), float(self.p_star.y)],
            "a_star": {
                "origin": list(a.origin),
                "direction": list(a.direction),
                "magnitude": a.magnitude,
                "segment_index": a.segment_index,
                "side": a.side,
            },
            "feature_points": pts(self.feature_points),
            "keypoints": pts(self.keypoints),
            "filtered": pts(self.filtered),
            "grid": {
                "origin": list(self.grid.spec.origin),
                "cell_size": self.grid.spec.cell_size,
                "width": self.grid.spec.width,
                "height": self.grid.spec.height,
            },
        }


def rasterize_segment_affordance(
    s: Segment2, side: str, spec: GridSpec, sigma_frac: float = 0.25
) -> BinaryMask:
    """Filled Gaussian lobe on one side of a segment.

    A cell centre at along-segment coordinate t and signed offset d (positive
    to the left) is set when 0 <= t <= L and 0 <= ±d <= (L/2) exp(-(t-L/2)^2 / 2 sigma^2).
    """
    if side not in (LEFT, RIGHT):
        raise InvalidParameter(f"unknown side {side!r}")
    if not sigma_frac > 0:
        raise InvalidParameter("sigma_frac must be positive")
    a = Vec2(*s.a)
    d = Vec2(*s.b) - a
    L = d.norm()
    if L <= geo.SEGMENT_MIN_LENGTH:
        raise geo.DegenerateContour("segment has zero length")
    u = d * (1.0 / L)
    X, Y = spec.centers()
    rx, ry = X - a.x, Y - a.y
    t = rx * u.x + ry * u.y
    off = u.x * ry - u.y * rx
    if side == RIGHT:
        off = -off
    sigma = sigma_frac * L
    env = (L / 2.0) * np.exp(-((t - L / 2.0) ** 2) / (2.0 * sigma * sigma))
    bits = (t >= 0.0) & (t <= L) & (off >= 0.0) & (off <= env)
    return BinaryMask(spec, bits, -1, side)


def build_grid(
    tool: Sequence, spec: GridSpec, sigma_frac: float = 0.25
) -> tuple[ManoeuvrabilityGrid, list[BinaryMask]]:
    masks = []
    counts = np.zeros(spec.shape, dtype=np.int32)
    for i, s in enumerate(geo.polyline_segments(tool)):
        for side in (LEFT, RIGHT):
            m = rasterize_segment_affordance(s, side, spec, sigma_frac)
            m = BinaryMask(spec, m.bits, i, side)
            masks.append(m)
            counts += m.bits
    peak = int(counts.max())
    if peak == 0:
        raise OutOfGrid("no affordance area falls inside the grid")
    values = counts.astype(float) / peak
    return ManoeuvrabilityGrid(spec, values, counts), masks


def auto_grid(tool: Sequence, r_obj: float, cell_size: float = 2e-3) -> GridSpec:
    """Grid covering the tool, its affordance lobes and the offset contour."""
    pts = np.asarray(geo.polyline(tool), dtype=float)
    longest = max(s.length for s in geo.polyline_segments(tool))
    margin = max(longest / 2.0, r_obj) + r_obj + 4 * cell_size
    lo = pts.min(axis=0) - margin
    hi = pts.max(axis=0) + margin
    w = max(8, int(math.ceil((hi[0] - lo[0]) / cell_size)))
    h = max(8, int(math.ceil((hi[1] - lo[1]) / cell_size)))
    return GridSpec(Vec2(float(lo[0]), float(lo[1])), cell_size, w, h)


def _local_maxima(kappa: np.ndarray, window: int) -> np.ndarray:
    half = max(1, window // 2)
    stacked = np.stack([np.roll(kappa, k) for k in range(-half, half + 1)])
    return kappa >= stacked.max(axis=0)


def simplified_contour(tool: Sequence, r_obj: float, rdp_eps: float, arc_tol: float) -> np.ndarray:
    contour = geo.offset_polyline(tool, r_obj, arc_tol)
    return geo.rdp_simplify_closed(contour, rdp_eps)


def extract_feature_points(
    tool: Sequence,
    r_obj: float,
    kappa_thresh: float,
    rdp_eps: float,
    window: int = 5,
    resample_step: float = geo.DEFAULT_RESAMPLE_STEP,
    arc_tol: float = geo.DEFAULT_ARC_TOL,
) -> list[Vec2]:
    """High-curvature points of the tool contour expanded by ``r_obj``."""
    if not r_obj > 0:
        raise InvalidParameter("r_obj must be positive")
    simple = simplified_contour(tool, r_obj, rdp_eps, arc_tol)
    ring = geo.resample_closed(simple, resample_step)
    kappa = geo.contour_curvature(ring, window)
    hits = (kappa > kappa_thresh) & _local_maxima(kappa, window)
    return [Vec2(float(x), float(y)) for x, y in ring[hits]]


def flat_keypoints(tool: Sequence, r_obj: float, rdp_eps: float, arc_tol: float) -> list[Vec2]:
    """Midpoints of the straight sides of the tool contour expanded by ``r_obj``.

    Each segment side is offset by r_obj; the parts buried in another segment's buffer are cut
    away and every exposed piece at least r_obj long contributes its midpoint.
    """
    segs = geo.polyline_segments(tool)
    quad = geo._quad_segs(r_obj, arc_tol)
    out = []
    for i, s in enumerate(segs):
        others = [LineString(o) for j, o in enumerate(segs) if j != i]
        # shrink the buffers slightly so a side that only touches another buffer is kept
        buried = unary_union([o.buffer(r_obj * (1 - 1e-6), quad_segs=quad) for o in others]) if others else None
        for n in geo.segment_normal_pair(s):
            side = LineString([s.a + n * r_obj, s.b + n * r_obj])
            exposed = side if buried is None else side.difference(buried)
            for piece in getattr(exposed, "geoms", [exposed]):
                if not piece.is_empty and piece.length >= r_obj:
                    q = piece.interpolate(0.5, normalized=True)
                    out.append(Vec2(float(q.x), float(q.y)))
    return out


def dbscan_labels(points: Sequence, eps: float, min_pts: int) -> list[int]:
    """Plain DBSCAN; -1 marks noise. Labels are assigned in discovery order."""
    if not eps > 0:
        raise InvalidParameter("eps must be positive")
    if min_pts < 1:
        raise InvalidParameter("min_pts must be >= 1")
    n = len(points)
    if n == 0:
        return []
    P = np.asarray([(p[0], p[1]) for p in points], dtype=float)
    dist = np.hypot(P[:, None, 0] - P[None, :, 0], P[:, None, 1] - P[None, :, 1])
    neigh = [np.flatnonzero(dist[i] <= eps) for i in range(n)]
    core = np.array([len(nb) >= min_pts for nb in neigh])
    labels = [-2] * n  # -2 unvisited
    cluster = 0
    for i in range(n):
        if labels[i] != -2:
            continue
        if not core[i]:
            labels[i] = -1
            continue
        labels[i] = cluster
        queue = list(neigh[i])
        while queue:
            j = int(queue.pop(0))
            if labels[j] == -1:
                labels[j] = cluster
            if labels[j] != -2:
                continue
            labels[j] = cluster
            if core[j]:
                queue.extend(int(k) for k in neigh[j])
        cluster += 1
    return labels


def cluster_keypoints(points: Sequence, eps: float, min_pts: int = 1) -> list[Vec2]:
    """One representative per density cluster: the member nearest the centroid."""
    labels = dbscan_labels(points, eps, min_pts)
    reps = []
    for c in sorted({l for l in labels if l >= 0}):
        members = [Vec2(*points[i]) for i, l in enumerate(labels) if l == c]
        cx = sum(p.x for p in members) / len(members)
        cy = sum(p.y for p in members) / len(members)
        d = [math.hypot(p.x - cx, p.y - cy) for p in members]
        reps.append(members[int(np.argmin(d))])
    return reps


def filter_redundant(keypoints: Sequence, masks: Sequence[BinaryMask]) -> list[Vec2]:
    """Keep keypoints lying inside at least one affordance area."""
    kept = []
    for p in keypoints:
        if masks and masks[0].spec.cell_of(p) is None:
            log.info("keypoint %s lies outside the grid; dropped", tuple(p))
            continue
        if any(m.at(p) for m in masks):
            kept.append(Vec2(*p))
    return kept


def point_metric(p, grid: ManoeuvrabilityGrid, a_star: AffordanceVector, norm: float) -> float:
    return (1.0 - grid.value_at(p)) + (Vec2(*p) - a_star.endpoint).norm() / norm


def select_point(
    filtered: Sequence, grid: ManoeuvrabilityGrid, a_star: AffordanceVector, norm: Optional[float] = None
) -> Vec2:
    """argmin of (1 - M[p]) + |p - a*| / norm; ties (within 1e-12) go to the lowest index."""
    if len(filtered) == 0:
        raise NoCandidate("no non-redundant keypoint to choose from")
    norm = grid.spec.diagonal if norm is None else norm
    scores = [point_metric(p, grid, a_star, norm) for p in filtered]
    best = min(scores)
    first = next(i for i, s in enumerate(scores) if s - best <= TIE_TOL)
    return Vec2(*filtered[first])


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except TomError as err:
        err.stage = name
        raise


def analyze_tool(
    tool: Sequence,
    r_obj: float,
    v_target,
    params: Optional[AnalysisParams] = None,
    affordance: Optional[tuple[int, str]] = None,
) -> ToolAnalysis:
    """Full tool analysis: affordances, a*, field, keypoints and p*.

    ``affordance`` forces a* to the given (segment_index, side) instead of
    the similarity argmin; the stepping controller uses it for the tip.
    """
    if not r_obj > 0:
        raise InvalidParameter("r_obj must be positive")
    params = (params or AnalysisParams()).resolved(r_obj)
    pts = _stage("affordances", geo.polyline, tool)
    aff = _stage("affordances", compute_tool_affordances, pts)
    if affordance is None:
        a_star = _stage("select_affordance", select_affordance, aff, v_target)
    else:
        a_star = aff.find(*affordance)
    spec = params.grid or _stage("grid", auto_grid, pts, r_obj, params.cell_size)
    grid, masks = _stage("grid", build_grid, pts, spec, params.sigma_frac)
    features = _stage(
        "features",
        extract_feature_points,
        pts,
        r_obj,
        params.kappa_thresh,
        params.rdp_eps,
        params.smoothing_window,
        params.resample_step,
        params.arc_tol,
    )
    candidates = features + _stage("features", flat_keypoints, pts, r_obj, params.rdp_eps, params.arc_tol)
    keypoints = _stage("cluster", cluster_keypoints, candidates, params.cluster_eps, params.min_pts)
    filtered = _stage("filter", filter_redundant, keypoints, masks)
    p_star = _stage("select_point", select_point, filtered, grid, a_star)
    return ToolAnalysis(
        tool=pts,
        affordances=aff,
        grid=grid,
        masks=tuple(masks),
        feature_points=tuple(features),
        keypoints=tuple(keypoints),
        filtered=tuple(filtered),
        a_star=a_star,
        p_star=p_star,
        r_obj=float(r_obj),
        params=params,
    )
