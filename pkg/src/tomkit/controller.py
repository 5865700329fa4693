"""Pose construction for Interact and the alternating reposition / rotation-drag stepping controller.

Tool geometry comes from a ToolAnalysis computed in the end-effector frame, i.e. with the grasp
point at the origin, so a world pose ``Pose2(grasp_position, theta)`` maps analysis points to the table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

from .affordance import LEFT, RIGHT, ExitSpec
from .errors import AlreadyAligned, CannotEnter, InvalidParameter, ToolTooShort, Unreachable
from .geometry import (
    Pose2,
    Segment2,
    Vec2,
    angle_between,
    closest_point_on_circle,
    closest_point_on_segment,
    normalize_angle,
    point_segment_distance,
    polyline_segments,
    segment,
    segments_intersect,
    vec,
)
from .manoeuvrability import ToolAnalysis

ANTICLOCKWISE = "anticlockwise"
CLOCKWISE = "clockwise"


class Circle(NamedTuple):
    center: Vec2
    radius: float


@dataclass(frozen=True)
class InteractPlan:
    start_pose: Pose2
    end_pose: Pose2
    circle_start: Circle
    circle_end: Circle
    r: float


@dataclass(frozen=True)
class InteractParams:
    k_int: float = 0.15
    pos_tol: float = 2e-3
    rot_rate: float = math.radians(15)
    goal_tol: float = 5e-3
    standoff: float = 4e-3  # gap left between tool and object when the approach ends

    def __post_init__(self):
        if not 0 < self.k_int <= 1:
            raise InvalidParameter("k_int must lie in (0, 1]")
        if not (self.pos_tol > 0 and self.rot_rate > 0 and self.goal_tol > 0):
            raise InvalidParameter("pos_tol, rot_rate and goal_tol must be positive")
        if self.standoff < 0:
            raise InvalidParameter("standoff must be non-negative")


@dataclass(frozen=True)
class SteppingParams:
    k: float = 0.5
    w: float = 0.5
    angle_rot: float = math.radians(10)
    parallel_tol: float = math.radians(5)
    strict_paper_signs: bool = True
    extract_step: float = 5e-3

    def __post_init__(self):
        if not (0 < self.k <= 1 and 0 < self.w <= 1):
            raise InvalidParameter("k and w must lie in (0, 1]")
        if not self.angle_rot > 0:
            raise InvalidParameter("angle_rot must be positive")
        if not self.parallel_tol >= 0:
            raise InvalidParameter("parallel_tol must be non-negative")


@dataclass(frozen=True)
class SteppingState:
    tau: int
    ee_pose: Pose2
    obj: Vec2
    contact: bool
    angle_obj: float
    direction: str
    phi: float = 0.0


# --------------------------------------------------------------------------- helpers


def _p_star(analysis: ToolAnalysis) -> Vec2:
    return Vec2(*analysis.p_star)


def pose_placing(local: Vec2, world: Vec2, theta: float) -> Pose2:
    """Pose with heading ``theta`` that maps the tool-frame point ``local`` onto ``world``."""
    theta = normalize_angle(theta)
    return Pose2(vec(world) - Vec2(*local).rotated(theta), theta)


def contact_normal(analysis: ToolAnalysis) -> Vec2:
    """Unit push direction at p* in the tool frame: the mean normal of every segment touching it."""
    p = _p_star(analysis)
    segs = polyline_segments(analysis.tool)
    dists = [point_segment_distance(p, s) for s in segs]
    near = min(dists)
    total = Vec2(0.0, 0.0)
    for s, d in zip(segs, dists):
        if d <= near + 1e-4 and d > 1e-12:
            total = total + (p - closest_point_on_segment(p, s)).unit()
    if total.norm() < 1e-12:
        return analysis.a_star.direction
    return total.unit()


def push_pose(analysis: ToolAnalysis, p_center, direction) -> Pose2:
    """Place p* on ``p_center`` with the contact normal at p* along ``direction``."""
    g = Vec2(*direction).unit()
    theta = g.angle() - contact_normal(analysis).angle()
    return pose_placing(_p_star(analysis), vec(p_center), theta)


# --------------------------------------------------------------------------- interact


def interact_poses(
    analysis: ToolAnalysis,
    grasp_offset,
    p_obj,
    p_goal,
    robot_base,
    reach: Optional[float] = None,
    mode: str = "nearest_base",
) -> InteractPlan:
    """Start and end grasp poses on circles of radius r around the object and the goal.

    ``mode="nearest_base"`` puts each grasp position at the point of its circle closest to the robot
    base and turns the tool so p* sits on the circle centre. ``mode="push"`` instead orients the tool so
    the contact normal at p* points from the object to the goal (used by the simulator).
    """
    p_obj, p_goal, base = vec(p_obj), vec(p_goal), vec(robot_base)
    if (p_goal - p_obj).norm() <= 1e-12:
        raise InvalidParameter("object already sits on the goal")
    local = _p_star(analysis) - vec(grasp_offset)
    r = local.norm()
    if r < analysis.r_obj:
        raise ToolTooShort(f"grasp-to-p* distance {r:.4f} m is below the object radius")
    if mode == "nearest_base":
        poses = []
        for c in (p_obj, p_goal):
            pos = closest_point_on_circle(c, r, base)
            theta = (c - pos).angle() - local.angle()
            poses.append(Pose2(pos, theta))
        start, end = poses
    elif mode == "push":
        g = p_goal - p_obj
        start = push_pose(analysis, p_obj, g)
        end = push_pose(analysis, p_goal, g)
        off = vec(grasp_offset).rotated(start.theta)
        start = Pose2(start.position + off, start.theta)
        end = Pose2(end.position + off, end.theta)
    else:
        raise InvalidParameter(f"unknown mode {mode!r}")
    if reach is not None:
        for name, pose in (("start", start), ("end", end)):
            if (pose.position - base).norm() > reach + 1e-9:
                raise Unreachable(f"{name} pose is {(pose.position - base).norm():.3f} m from the base (reach {reach})")
    return InteractPlan(start, end, Circle(p_obj, r), Circle(p_goal, r), r)


def alignment_cost(pose: Pose2, analysis: ToolAnalysis, p_obj, anchor: Pose2) -> float:
    """J = |p*(pose) - p_obj| + |grasp(pose) - anchor|."""
    return (pose.apply(_p_star(analysis)) - vec(p_obj)).norm() + (pose.position - anchor.position).norm()


def align_tool_pose(analysis: ToolAnalysis, p_obj, start_anchor: Pose2) -> Pose2:
    """Put p* on the object and rotate about it so the grasp lands as close to the anchor as possible."""
    p_obj = vec(p_obj)
    local = _p_star(analysis)
    r = local.norm()
    if (start_anchor.position - p_obj).norm() <= 1e-12:
        theta = start_anchor.theta  # every rotation is equally good; keep the anchor heading
        return pose_placing(local, p_obj, theta)
    pos = closest_point_on_circle(p_obj, r, start_anchor.position)
    theta = (p_obj - pos).angle() - local.angle()
    return Pose2(pos, theta)


def interact_step(
    current: Pose2,
    plan: InteractPlan,
    k_int: float,
    pos_tol: float = 2e-3,
    rot_rate: float = math.radians(15),
) -> Pose2:
    if not 0 < k_int <= 1:
        raise InvalidParameter("k_int must lie in (0, 1]")
    end = plan.end_pose
    gap = end.position - current.position
    if gap.norm() > pos_tol:
        return Pose2(current.position + gap * k_int, current.theta)
    turn = normalize_angle(end.theta - current.theta)
    turn = max(-rot_rate, min(rot_rate, turn))
    return Pose2(current.position + gap * k_int, current.theta + turn)


# --------------------------------------------------------------------------- stepping


def step_trigger(tau: int) -> int:
    if tau < 0:
        raise InvalidParameter("tau must be non-negative")
    return 1 if tau % 2 == 0 else 0


def rotation_angle(phi_tau: float, direction: str, angle_obj: float, angle_rot: float, strict: bool = True) -> float:
    """Tool angle increment for a rotation-drag step.

    Anticlockwise gives ``-angle_obj - angle_rot``; clockwise gives ``-phi_tau + pi - angle_obj - angle_rot``.
    With ``strict=False`` the clockwise branch is the mirror image ``angle_obj + angle_rot``.
    """
    for x in (phi_tau, angle_obj, angle_rot):
        if not math.isfinite(x):
            raise InvalidParameter("rotation_angle inputs must be finite")
    if direction == ANTICLOCKWISE:
        out = -angle_obj - angle_rot
    elif direction == CLOCKWISE:
        out = (-phi_tau + math.pi - angle_obj - angle_rot) if strict else (angle_obj + angle_rot)
    else:
        raise InvalidParameter(f"unknown direction {direction!r}")
    return normalize_angle(out)


def tip_affordance(analysis: ToolAnalysis):
    """Affordance of the last segment; the side facing p* when analysis did not pick the tip."""
    last = len(analysis.tool) - 2
    if analysis.a_star.segment_index == last:
        return analysis.a_star
    a = analysis.affordances.find(last, LEFT)
    b = analysis.affordances.find(last, RIGHT)
    p = _p_star(analysis)
    return a if (p - a.origin).dot(a.direction) >= 0 else b


def stepping_analysis(analysis: ToolAnalysis) -> ToolAnalysis:
    """Analysis with a* on the tip and p* on the tip's midpoint band.

    The band point (segment midpoint pushed out by the object radius along a^tip) is where the
    tip face meets the block squarely.
    """
    a = tip_affordance(analysis)
    return replace(analysis, a_star=a, p_star=a.origin + a.direction * analysis.r_obj)


def tool_angle(ee_pose: Pose2, analysis: ToolAnalysis, strict: bool = True) -> float:
    """phi: heading of the grasp-to-p* ray. Measured clockwise (image style) when ``strict``."""
    beta = normalize_angle(ee_pose.theta + _p_star(analysis).angle())
    return normalize_angle(-beta) if strict else beta


def object_angle(analysis: ToolAnalysis, ee_pose: Pose2, obj) -> float:
    """Angle at the grasp point between the object centre and the tool's tip key point, in [0, pi]."""
    tip = ee_pose.apply(analysis.tool[-1])
    u = vec(obj) - ee_pose.position
    v = tip - ee_pose.position
    if u.norm() < 1e-12 or v.norm() < 1e-12:
        return 0.0
    return angle_between(u, v)


def tip_direction_world(analysis: ToolAnalysis, ee_pose: Pose2) -> Vec2:
    return tip_affordance(analysis).direction.rotated(ee_pose.theta)


def _rotation_sense(a: Vec2, b: Vec2) -> str:
    return ANTICLOCKWISE if a.cross(b) > 0 else CLOCKWISE


def is_aligned(state: SteppingState, exit: ExitSpec, analysis: ToolAnalysis, params: SteppingParams) -> bool:
    """a^tip within parallel_tol of v_exit, or already rotated past it."""
    a = tip_direction_world(analysis, state.ee_pose)
    if angle_between(a, exit.direction) <= params.parallel_tol:
        return True
    return _rotation_sense(a, exit.direction) != state.direction and a.dot(exit.direction) > 0


def stepping_step(
    state: SteppingState, exit: ExitSpec, analysis: ToolAnalysis, params: SteppingParams = SteppingParams()
) -> tuple[Pose2, SteppingState]:
    if is_aligned(state, exit, analysis, params):
        raise AlreadyAligned("tip affordance is parallel to the exit direction")
    ee = state.ee_pose
    p = ee.position
    if step_trigger(state.tau):
        # reposition: slide p* towards the object, heading fixed
        delta = (state.obj - ee.apply(_p_star(analysis))) * params.k
        nxt = Pose2(p + delta, ee.theta)
    else:
        r = _p_star(analysis).norm()
        phi = tool_angle(ee, analysis, params.strict_paper_signs)
        if params.strict_paper_signs:
            target = Vec2(state.obj.x - r * math.cos(phi), state.obj.y + r * math.sin(phi))
        else:
            target = Vec2(state.obj.x - r * math.cos(phi), state.obj.y - r * math.sin(phi))
        d_phi = rotation_angle(phi, state.direction, state.angle_obj, params.angle_rot, params.strict_paper_signs)
        # phi is measured clockwise under the strict convention, so the world heading moves the other way
        d_theta = -d_phi if params.strict_paper_signs else d_phi
        nxt = Pose2(p + (target - p) * params.w, ee.theta + d_theta)
    new = replace(
        state,
        tau=state.tau + 1,
        ee_pose=nxt,
        angle_obj=object_angle(analysis, nxt, state.obj),
        phi=tool_angle(nxt, analysis, params.strict_paper_signs),
    )
    return nxt, new


def _hull_contains_segment(walls: Sequence[Segment2], s: Segment2) -> bool:
    from shapely.geometry import LineString, MultiPoint

    hull = MultiPoint([tuple(p) for w in walls for p in w]).convex_hull
    return hull.buffer(1e-9).covers(LineString([tuple(s.a), tuple(s.b)]))


def stepping_init(
    analysis: ToolAnalysis,
    walls: Sequence,
    exit: ExitSpec,
    p_obj,
    params: SteppingParams = SteppingParams(),
) -> SteppingState:
    """Lay the tip segment parallel to the first wall with p* on the object."""
    walls = [w if isinstance(w, Segment2) else segment(*w) for w in walls]
    if not walls:
        raise InvalidParameter("stepping needs at least one wall")
    p_obj = vec(p_obj)
    tip_local = segment(analysis.tool[-2], analysis.tool[-1])
    a_tip = tip_affordance(analysis)
    s1 = walls[0]
    base = (s1.b - s1.a).angle() - (tip_local.b - tip_local.a).angle()
    # of the two parallel headings keep the one whose tip affordance faces away from the first wall
    inward = p_obj - s1.a
    side = (s1.b - s1.a).cross(inward)
    options = []
    for theta in (base, base + math.pi):
        a_w = a_tip.direction.rotated(theta)
        n = (s1.b - s1.a).unit().rotated(math.pi / 2 if side > 0 else -math.pi / 2)
        options.append((-a_w.dot(n), normalize_angle(theta)))
    theta = min(options)[1]
    pose = pose_placing(_p_star(analysis), p_obj, theta)
    tip_w = segment(pose.apply(tip_local.a), pose.apply(tip_local.b))
    for w in walls:
        if segments_intersect(tip_w.a, tip_w.b, w.a, w.b):
            raise CannotEnter("tool tip collides with a wall at the entry pose")
    if not _hull_contains_segment(walls, tip_w):
        raise CannotEnter("tool tip does not fit inside the wall opening")
    if point_segment_distance(p_obj, tip_w) < analysis.r_obj - 1e-6:
        raise CannotEnter("tool tip overlaps the object at the entry pose")
    a_w = a_tip.direction.rotated(theta)
    return SteppingState(
        tau=0,
        ee_pose=pose,
        obj=p_obj,
        contact=True,
        angle_obj=object_angle(analysis, pose, p_obj),
        direction=_rotation_sense(a_w, exit.direction),
        phi=tool_angle(pose, analysis, params.strict_paper_signs),
    )
