"""Planar primitives: points, poses, segments, disk offsetting, RDP and curvature."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from shapely.geometry import LineString

from .errors import (
    AmbiguousProjection,
    DegenerateContour,
    DegenerateVector,
    InvalidParameter,
)

SEGMENT_MIN_LENGTH = 1e-9
DEFAULT_ARC_TOL = 1e-3
DEFAULT_RESAMPLE_STEP = 2e-3


class Vec2(NamedTuple):
    """A 2D point or displacement in meters."""

    x: float
    y: float

    def __add__(self, other):  # type: ignore[override]
        return Vec2(self.x + other[0], self.y + other[1])

    def __sub__(self, other):
        return Vec2(self.x - other[0], self.y - other[1])

    def __mul__(self, c):  # type: ignore[override]
        return Vec2(self.x * c, self.y * c)

    __rmul__ = __mul__

    def __neg__(self):
        return Vec2(-self.x, -self.y)

    def dot(self, other) -> float:
        return self.x * other[0] + self.y * other[1]

    def cross(self, other) -> float:
        return self.x * other[1] - self.y * other[0]

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def unit(self) -> "Vec2":
        n = self.norm()
        if n <= 0.0:
            raise DegenerateVector("cannot normalize a zero vector")
        return Vec2(self.x / n, self.y / n)

    def rotated(self, angle: float) -> "Vec2":
        c, s = math.cos(angle), math.sin(angle)
        return Vec2(c * self.x - s * self.y, s * self.x + c * self.y)

    def angle(self) -> float:
        return math.atan2(self.y, self.x)


Point2 = Vec2
Vector2 = Vec2


def vec(p) -> Vec2:
    x, y = float(p[0]), float(p[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise InvalidParameter(f"non-finite coordinate {p!r}")
    return Vec2(x, y)


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    t = math.remainder(theta, 2.0 * math.pi)
    if t <= -math.pi:
        t += 2.0 * math.pi
    return t


@dataclass(frozen=True)
class Pose2:
    position: Vec2
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "position", vec(self.position))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    def apply(self, local) -> Vec2:
        """Map a point from this pose's local frame into the world."""
        return self.position + Vec2(local[0], local[1]).rotated(self.theta)

    def apply_dir(self, local) -> Vec2:
        return Vec2(local[0], local[1]).rotated(self.theta)

    def inverse_apply(self, world) -> Vec2:
        return (Vec2(world[0], world[1]) - self.position).rotated(-self.theta)


class Segment2(NamedTuple):
    a: Vec2
    b: Vec2

    @property
    def direction(self) -> Vec2:
        return self.b - self.a

    @property
    def length(self) -> float:
        return (self.b - self.a).norm()

    @property
    def midpoint(self) -> Vec2:
        return Vec2((self.a.x + self.b.x) / 2.0, (self.a.y + self.b.y) / 2.0)


def segment(a, b) -> Segment2:
    s = Segment2(vec(a), vec(b))
    if s.length <= SEGMENT_MIN_LENGTH:
        raise DegenerateContour(f"segment {a}->{b} has zero length")
    return s


def polyline(points: Sequence) -> tuple[Vec2, ...]:
    """Validate and freeze a polyline (>= 2 points, consecutive points distinct)."""
    pts = tuple(vec(p) for p in points)
    if len(pts) < 2:
        raise InvalidParameter("a polyline needs at least 2 points")
    for a, b in zip(pts, pts[1:]):
        if (b - a).norm() <= SEGMENT_MIN_LENGTH:
            raise DegenerateContour(f"repeated polyline vertex {a}")
    return pts


def polyline_segments(points: Sequence) -> list[Segment2]:
    pts = polyline(points)
    return [Segment2(a, b) for a, b in zip(pts, pts[1:])]


def angle_between(u, v) -> float:
    """Unsigned angle in [0, pi] between two non-zero vectors."""
    u, v = Vec2(*u), Vec2(*v)
    nu, nv = u.norm(), v.norm()
    if nu <= 0.0 or nv <= 0.0:
        raise DegenerateVector("angle_between needs non-zero vectors")
    c = u.dot(v) / (nu * nv)
    return math.acos(max(-1.0, min(1.0, c)))


def segment_normal_pair(s: Segment2) -> tuple[Vec2, Vec2]:
    """Unit normals of ``s``: left of the a->b direction first, then right."""
    d = Vec2(*s.b) - Vec2(*s.a)
    n = d.norm()
    if n <= SEGMENT_MIN_LENGTH:
        raise DegenerateContour("segment has zero length")
    left = Vec2(-d.y / n, d.x / n)
    return left, -left


def closest_point_on_circle(center, radius: float, q) -> Vec2:
    if radius <= 0:
        raise InvalidParameter("radius must be positive")
    c, q = vec(center), vec(q)
    d = q - c
    n = d.norm()
    if n <= 1e-12:
        raise AmbiguousProjection("query point coincides with the circle center")
    return c + d * (radius / n)


def closest_point_on_segment(p, s: Segment2) -> Vec2:
    a, b = Vec2(*s.a), Vec2(*s.b)
    d = b - a
    t = (Vec2(*p) - a).dot(d) / d.dot(d)
    t = min(1.0, max(0.0, t))
    return a + d * t


def point_segment_distance(p, s: Segment2) -> float:
    return (Vec2(*p) - closest_point_on_segment(p, s)).norm()


def point_line_distance(p, a, b) -> float:
    a, b, p = Vec2(*a), Vec2(*b), Vec2(*p)
    d = b - a
    n = d.norm()
    if n == 0.0:
        return (p - a).norm()
    return abs(d.cross(p - a)) / n


def segments_intersect(p1, p2, q1, q2) -> bool:
    """Proper or touching intersection test between two closed segments."""
    p1, p2, q1, q2 = Vec2(*p1), Vec2(*p2), Vec2(*q1), Vec2(*q2)

    def orient(a, b, c):
        v = (b - a).cross(c - a)
        return 0 if abs(v) < 1e-15 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return min(a.x, b.x) - 1e-15 <= c.x <= max(a.x, b.x) + 1e-15 and min(
            a.y, b.y
        ) - 1e-15 <= c.y <= max(a.y, b.y) + 1e-15

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, q1):
        return True
    if o2 == 0 and on_seg(p1, p2, q2):
        return True
    if o3 == 0 and on_seg(q1, q2, p1):
        return True
    if o4 == 0 and on_seg(q1, q2, p2):
        return True
    return False


# --- contours -------------------------------------------------------------


def signed_area(points) -> float:
    p = np.asarray(points, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def point_in_polygon(q, points) -> bool:
    """Even-odd ray casting; boundary points count as inside."""
    x, y = float(q[0]), float(q[1])
    p = np.asarray(points, dtype=float)
    n = len(p)
    inside = False
    for i in range(n):
        x1, y1 = p[i]
        x2, y2 = p[(i + 1) % n]
        if point_segment_distance((x, y), Segment2(Vec2(x1, y1), Vec2(x2, y2))) < 1e-12:
            return True
        if (y1 > y) != (y2 > y):
            xs = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xs > x:
                inside = not inside
    return inside


def _quad_segs(radius: float, arc_tol: float) -> int:
    if arc_tol >= radius:
        return 1
    step = 2.0 * math.acos(1.0 - arc_tol / radius)
    return max(1, math.ceil((math.pi / 2.0) / step))


def offset_polyline(shape: Sequence, radius: float, arc_tol: float = DEFAULT_ARC_TOL) -> np.ndarray:
    """Boundary of the Minkowski sum of a polyline with a disk.

    Returns an (N, 2) counter-clockwise vertex array without the closing repeat.
    """
    if not radius > 0:
        raise InvalidParameter("offset radius must be positive")
    if not arc_tol > 0:
        raise InvalidParameter("arc_tol must be positive")
    pts = polyline(shape)
    geom = LineString(pts).buffer(
        radius, quad_segs=_quad_segs(radius, arc_tol), cap_style="round", join_style="round"
    )
    ring = np.asarray(geom.exterior.coords, dtype=float)[:-1]
    if signed_area(ring) < 0:
        ring = ring[::-1]
    # drop vertices that collapse onto their predecessor
    keep = np.ones(len(ring), dtype=bool)
    for i in range(1, len(ring)):
        if np.hypot(*(ring[i] - ring[i - 1])) <= SEGMENT_MIN_LENGTH:
            keep[i] = False
    return ring[keep]


def rdp_simplify(points: Sequence, epsilon: float) -> list:
    """Ramer-Douglas-Peucker simplification of an open point sequence.

    Returns a subset of the input (same objects, same order) keeping both
    endpoints. Iterative so long contours do not hit the recursion limit.
    """
    pts = list(points)
    if len(pts) == 0:
        raise InvalidParameter("rdp_simplify needs points")
    if epsilon < 0:
        raise InvalidParameter("epsilon must be >= 0")
    if len(pts) < 3:
        return pts
    arr = np.asarray([(p[0], p[1]) for p in pts], dtype=float)
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        a, b = arr[i], arr[j]
        d = b - a
        n = math.hypot(d[0], d[1])
        seg = arr[i + 1 : j]
        if n == 0.0:
            dist = np.hypot(seg[:, 0] - a[0], seg[:, 1] - a[1])
        else:
            dist = np.abs(d[0] * (seg[:, 1] - a[1]) - d[1] * (seg[:, 0] - a[0])) / n
        k = int(np.argmax(dist))
        if dist[k] > epsilon:
            m = i + 1 + k
            keep[m] = True
            stack.append((m, j))
            stack.append((i, m))
    return [p for p, k in zip(pts, keep) if k]


def rdp_simplify_closed(points, epsilon: float) -> np.ndarray:
    """RDP on a closed ring: split at vertex 0 and the vertex farthest from it."""
    p = np.asarray(points, dtype=float)
    if len(p) < 4:
        return p.copy()
    far = int(np.argmax(np.hypot(*(p - p[0]).T)))
    first = rdp_simplify([tuple(q) for q in p[: far + 1]], epsilon)
    second = rdp_simplify([tuple(q) for q in np.vstack([p[far:], p[:1]])], epsilon)
    return np.asarray(first[:-1] + second[:-1], dtype=float)


def resample_closed(points, step: float = DEFAULT_RESAMPLE_STEP) -> np.ndarray:
    """Resample a closed ring at (near-)uniform arc length spacing ``step``."""
    if not step > 0:
        raise InvalidParameter("resample step must be positive")
    p = np.asarray(points, dtype=float)
    ring = np.vstack([p, p[:1]])
    seglen = np.hypot(*np.diff(ring, axis=0).T)
    if np.any(seglen <= SEGMENT_MIN_LENGTH):
        raise DegenerateContour("repeated contour vertex")
    s = np.concatenate([[0.0], np.cumsum(seglen)])
    total = s[-1]
    n = max(3, int(round(total / step)))
    t = np.arange(n) * (total / n)
    x = np.interp(t, s, ring[:, 0])
    y = np.interp(t, s, ring[:, 1])
    return np.column_stack([x, y])


def contour_curvature(points, smoothing_window: int = 5) -> np.ndarray:
    """Unsigned discrete curvature at each vertex of a closed contour.

    Vertices are smoothed with a circular moving average of
    ``smoothing_window`` samples, then first and second derivatives with
    respect to arc length come from three-point (non-uniform) centered
    differences.
    """
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or len(p) < 3:
        raise InvalidParameter("curvature needs at least 3 vertices")
    if smoothing_window < 1:
        raise InvalidParameter("smoothing_window must be >= 1")
    if np.any(np.hypot(*(np.roll(p, -1, axis=0) - p).T) <= SEGMENT_MIN_LENGTH):
        raise DegenerateContour("repeated contour vertex")
    w = min(int(smoothing_window), len(p))
    if w > 1:
        half = w // 2
        offsets = range(-half, w - half)
        p = sum(np.roll(p, -o, axis=0) for o in offsets) / w
    prev, nxt = np.roll(p, 1, axis=0), np.roll(p, -1, axis=0)
    h1 = np.hypot(*(p - prev).T)
    h2 = np.hypot(*(nxt - p).T)
    if np.any(h1 <= SEGMENT_MIN_LENGTH) or np.any(h2 <= SEGMENT_MIN_LENGTH):
        raise DegenerateContour("contour collapses after smoothing")
    denom = h1 * h2 * (h1 + h2)
    a, b = h1[:, None], h2[:, None]
    d1 = (a**2 * nxt - b**2 * prev + (b**2 - a**2) * p) / denom[:, None]
    d2 = 2.0 * (a * nxt - (a + b) * p + b * prev) / denom[:, None]
    num = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    speed = np.hypot(d1[:, 0], d1[:, 1])
    return num / speed**3
