"""Active (tool) and passive (wall) affordance vectors, Eq.-style selection and exit vector."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import AmbiguousInterior, DegenerateVector, InvalidParameter, NoExit
from .geometry import (
    Segment2,
    Vec2,
    angle_between,
    polyline_segments,
    segment,
    segment_normal_pair,
    vec,
)

LEFT = "left"
RIGHT = "right"
_SIDE_ORDER = {LEFT: 0, RIGHT: 1}


@dataclass(frozen=True)
class AffordanceVector:
    origin: Vec2
    direction: Vec2
    magnitude: float
    segment_index: int
    side: str

    @property
    def vector(self) -> Vec2:
        return self.direction * self.magnitude

    @property
    def endpoint(self) -> Vec2:
        return self.origin + self.vector

    @property
    def key(self) -> tuple[int, int]:
        return (self.segment_index, _SIDE_ORDER[self.side])


@dataclass(frozen=True)
class AffordanceSet:
    vectors: tuple[AffordanceVector, ...]
    tool_id: str = ""

    def __len__(self):
        return len(self.vectors)

    def __iter__(self):
        return iter(self.vectors)

    def find(self, segment_index: int, side: str) -> AffordanceVector:
        for v in self.vectors:
            if v.segment_index == segment_index and v.side == side:
                return v
        raise KeyError((segment_index, side))


@dataclass(frozen=True)
class ExitSpec:
    direction: Vec2
    travel: float
    exit_point: Vec2


def compute_tool_affordances(tool: Sequence, tool_id: str = "") -> AffordanceSet:
    """Two normals per segment at its midpoint, each scaled by half the segment length."""
    out = []
    for i, s in enumerate(polyline_segments(tool)):
        left, right = segment_normal_pair(s)
        half = s.length / 2.0
        out.append(AffordanceVector(s.midpoint, left, half, i, LEFT))
        out.append(AffordanceVector(s.midpoint, right, half, i, RIGHT))
    return AffordanceSet(tuple(out), tool_id)


def similarity_scores(aff: AffordanceSet, v_target) -> list[float]:
    v = Vec2(*v_target)
    if v.norm() <= 0.0:
        raise DegenerateVector("target vector is zero")
    return [angle_between(v, a.direction) for a in aff]


def select_affordance(aff: AffordanceSet, v_target) -> AffordanceVector:
    """Affordance whose direction makes the smallest angle with ``v_target``.

    Ties (within 1e-12 rad) go to the lowest segment index, left before right.
    """
    if len(aff) == 0:
        raise InvalidParameter("empty affordance set")
    scores = similarity_scores(aff, v_target)
    best = min(scores)
    tied = [a for a, s in zip(aff, scores) if s - best <= 1e-12]
    return min(tied, key=lambda a: a.key)


def _wall_segments(walls) -> list[Segment2]:
    if not walls:
        raise InvalidParameter("at least one wall segment is required")
    return [w if isinstance(w, Segment2) else segment(*w) for w in walls]


def compute_wall_affordances(walls, interior_hint) -> list[AffordanceVector]:
    """One inward-pointing normal per wall segment, magnitude half the wall length."""
    hint = vec(interior_hint)
    out = []
    for i, s in enumerate(_wall_segments(walls)):
        left, right = segment_normal_pair(s)
        side = (s.b - s.a).cross(hint - s.a)
        if abs(side) <= 1e-12 * max(1.0, s.length):
            raise AmbiguousInterior(f"interior hint is collinear with wall {i}")
        if side > 0:
            out.append(AffordanceVector(s.midpoint, left, s.length / 2.0, i, LEFT))
        else:
            out.append(AffordanceVector(s.midpoint, right, s.length / 2.0, i, RIGHT))
    return out


def compute_exit(walls, interior_hint, p_obj) -> ExitSpec:
    """Sum the passive wall affordances; the sum anchored at ``p_obj`` is the exit point."""
    total = Vec2(0.0, 0.0)
    for a in compute_wall_affordances(walls, interior_hint):
        total = total + a.vector
    travel = total.norm()
    scale = max(1.0, max(s.length for s in _wall_segments(walls)))
    if travel <= 1e-12 * scale:
        raise NoExit("wall affordances cancel out; no exit direction")
    direction = total * (1.0 / travel)
    return ExitSpec(direction, travel, vec(p_obj) + direction * travel)
