"""Quasi-static planar world: tools are kinematic, the block is a disk pushed out of penetration.

Only the tool of the arm that is currently executing a contact motion touches the block; idle held
tools are treated as lifted. Walls are fixed obstacles for the block.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from shapely.geometry import Point

from . import controller as ctl
from .affordance import ExitSpec, compute_exit
from .errors import (
    AlreadyAligned,
    ContactJam,
    InvalidParameter,
    InvalidPlan,
    StepFailed,
    Timeout,
    TomError,
    Unreachable,
)
from .geometry import Pose2, Segment2, Vec2, closest_point_on_segment, normalize_angle, polyline_segments, segment, vec
from .manoeuvrability import AnalysisParams, ToolAnalysis, analyze_tool
from .planner import (
    HANDOVER,
    TARGET,
    Approach,
    Grasp,
    Interact,
    Observation,
    Pass,
    Plan,
    Release,
    Stepping,
    ToolSpec,
    handover_zone,
    is_confined,
    validate_plan,
    wall_hull,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "t",
    "obj_x",
    "obj_y",
    "ee_left_x",
    "ee_left_y",
    "ee_left_th",
    "ee_right_x",
    "ee_right_y",
    "ee_right_th",
    "error_m",
    "contact",
    "seg_idx",
    "mode",
]


@dataclass(frozen=True)
class SimParams:
    interact: ctl.InteractParams = ctl.InteractParams()
    stepping: ctl.SteppingParams = ctl.SteppingParams()
    analysis: AnalysisParams = AnalysisParams()
    budget: int = 2000  # frames per motion function
    max_actions: int = 100  # stepping actions, extraction included
    contact_tol: float = 1e-3
    substep: Optional[float] = None  # default: a quarter of the block radius
    replan_angle: float = math.radians(25)
    stall_bisect: int = 6  # bisection steps locating where a pinched move stops
    p_region: float = 0.3  # p* counts as on the block within this fraction of its radius


@dataclass
class Frame:
    t: int
    obj: Vec2
    ee: dict  # arm -> Pose2 or None
    error: float
    contact: int
    seg_idx: int  # -1 without contact
    side: str
    tool: str
    mode: str
    arm: str = ""
    p_contact: Optional[int] = None  # stepping only: 1 while the block sits on p*


@dataclass
class Command:
    """One controller output, kept for checking the stepping alternation afterwards."""

    tau: int
    arm: str
    pose: Pose2
    mode: str
    theta_before: float = 0.0
    phi: float = 0.0
    rotation: float = 0.0  # rotation_angle output on rotation-drag commands


@dataclass
class RunLog:
    frames: list = field(default_factory=list)
    commands: list = field(default_factory=list)
    wall_clock: float = 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for f in self.frames:
            row = [f.t, _n(f.obj.x), _n(f.obj.y)]
            for arm in ("left", "right"):
                pose = f.ee.get(arm)
                row += ["", "", ""] if pose is None else [_n(pose.position.x), _n(pose.position.y), _n(pose.theta)]
            row += [_n(f.error), f.contact, f.seg_idx, f.mode]
            w.writerow(row)
        return buf.getvalue()


def _n(x: float) -> str:
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


@dataclass
class WorldState:
    observation: Observation
    obj: Vec2
    tool_poses: dict  # tool id -> Pose2 of the tool frame
    held: dict  # arm -> tool id or None
    ee: dict  # arm -> end-effector Pose2 while holding, else None
    time: int = 0
    exit: Optional[ExitSpec] = None
    analyses: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, obs: Observation) -> "WorldState":
        ex = None
        if obs.walls:
            try:
                ex = compute_exit(obs.walls, obs.interior_hint, obs.block.center)
            except TomError:
                ex = None
        return cls(
            obs,
            obs.block.center,
            {t.id: t.home_pose for t in obs.tools},
            {r.id: None for r in obs.robots},
            {r.id: None for r in obs.robots},
            0,
            ex,
        )

    @property
    def r_obj(self) -> float:
        return self.observation.block.radius

    def tool_segments(self, tool_id: str) -> list[Segment2]:
        t = self.observation.tool(tool_id)
        pose = self.tool_poses[tool_id]
        return polyline_segments(t.world_shape(pose))

    def error(self) -> float:
        obs = self.observation
        if obs.target is not None:
            return (self.obj - obs.target).norm()
        if self.exit is not None:
            return (self.obj - self.exit.exit_point).norm()
        return 0.0


# --------------------------------------------------------------------------- contact


def resolve_push(
    tool_segments: Sequence,
    center,
    radius: float,
    prev_obj=None,
    walls: Sequence = (),
    max_iter: int = 8,
    tol: float = 1e-9,
) -> Vec2:
    """Push the disk out of the tool (and walls) along the deepest penetration normal, repeatedly."""
    c = vec(center)
    prev = vec(prev_obj) if prev_obj is not None else None
    obstacles = [s if isinstance(s, Segment2) else segment(*s) for s in tool_segments]
    walls = [s if isinstance(s, Segment2) else segment(*s) for s in walls]
    for _ in range(max_iter + 1):
        deepest = None
        for s in obstacles + walls:
            q = closest_point_on_segment(c, s)
            depth = radius - (c - q).norm()
            if depth > tol and (deepest is None or depth > deepest[0]):
                deepest = (depth, s, q)
        if deepest is None:
            return c
        depth, s, q = deepest
        n = c - q
        if n.norm() < 1e-12:
            # centre on the segment: leave towards the side the disk came from
            d = (s.b - s.a).unit()
            nrm = d.rotated(math.pi / 2)
            ref = prev if prev is not None else c + nrm
            n = nrm if (ref - q).dot(nrm) >= 0 else -nrm
        c = c + n.unit() * depth
    worst = max((radius - (c - closest_point_on_segment(c, s)).norm() for s in obstacles + walls), default=0.0)
    if worst > 1e-6:
        raise ContactJam(f"block stays {worst * 1e3:.3f} mm inside the tool or a wall")
    return c


def _contact(world: WorldState, tool_id: Optional[str], tol: float) -> tuple[int, int, str]:
    if tool_id is None:
        return 0, -1, ""
    segs = world.tool_segments(tool_id)
    dists = [(world.obj - closest_point_on_segment(world.obj, s)).norm() for s in segs]
    i = min(range(len(segs)), key=lambda k: dists[k])
    if dists[i] > world.r_obj + tol:
        return 0, -1, ""
    s = segs[i]
    side = "left" if (s.b - s.a).cross(world.obj - s.a) > 0 else "right"
    return 1, i, side


# --------------------------------------------------------------------------- execution helpers


class _Runner:
    def __init__(self, world: WorldState, params: SimParams, log_: RunLog):
        self.w = world
        self.p = params
        self.log = log_

    # frames -----------------------------------------------------------------
    def frame(self, mode: str, arm: str = "", tool: Optional[str] = None):
        w = self.w
        c, i, side = _contact(w, tool, self.p.contact_tol)
        w.time += 1
        self.log.frames.append(Frame(w.time, w.obj, dict(w.ee), w.error(), c, i, side, tool or "", mode, arm))

    def set_ee(self, arm: str, pose: Pose2):
        w = self.w
        tool = w.observation.tool(w.held[arm])
        w.ee[arm] = pose
        # tool frame = ee frame shifted back by the grasp point
        w.tool_poses[tool.id] = Pose2(pose.apply(-tool.grasp_point), pose.theta)

    def move(self, arm: str, target: Pose2):
        """Drive the held tool to ``target`` in small increments, resolving contact after each one."""
        w = self.w
        cur = w.ee[arm]
        tool_id = w.held[arm]
        tool = w.observation.tool(tool_id)
        sub = self.p.substep or w.r_obj / 4
        dtheta = normalize_angle(target.theta - cur.theta)
        reach = max((p - tool.grasp_point).norm() for p in tool.shape)
        span = (target.position - cur.position).norm() + abs(dtheta) * reach
        n = max(1, math.ceil(span / sub))
        def at(f: float) -> Pose2:
            return Pose2(cur.position + (target.position - cur.position) * f, cur.theta + dtheta * f)

        def push(f: float, obj: Vec2) -> Vec2:
            self.set_ee(arm, at(f))
            return resolve_push(w.tool_segments(tool_id), obj, w.r_obj, obj, w.observation.walls)

        done = 0.0
        for k in range(1, n + 1):
            f = k / n
            try:
                w.obj = push(f, w.obj)
            except ContactJam:
                # block pinched against a wall: bisect for the furthest feasible pose, then stall there
                lo, hi, obj = done, f, w.obj
                for _ in range(self.p.stall_bisect):
                    mid = (lo + hi) / 2
                    try:
                        obj, lo = push(mid, w.obj), mid
                    except ContactJam:
                        hi = mid
                self.set_ee(arm, at(lo))
                w.obj = obj
                return False
            done = f
        self.set_ee(arm, target)
        return True

    # analysis ---------------------------------------------------------------
    def analysis(self, tool: ToolSpec, direction: Vec2, affordance=None) -> ToolAnalysis:
        local_dir = direction.rotated(-tool.home_pose.theta)
        key = (tool.id, round(local_dir.angle(), 9), affordance)
        if key not in self.w.analyses:
            self.w.analyses[key] = analyze_tool(tool.local_shape(), self.w.r_obj, local_dir, self.p.analysis, affordance)
        return self.w.analyses[key]

    def goal_point(self, goal: str, arm: str, other: Optional[str] = None) -> Vec2:
        obs = self.w.observation
        if goal == TARGET:
            return obs.target
        if goal == HANDOVER:
            a = obs.robot(arm)
            b = obs.robot(other) if other else next(r for r in obs.robots if r.id != arm)
            z = handover_zone(a, b)
            if z is None:
                raise InvalidPlan("reach disks do not overlap")
            return z
        raise InvalidPlan(f"unknown goal {goal!r}")

    def check_reach(self, arm: str, pose: Pose2):
        r = self.w.observation.robot(arm)
        if (pose.position - r.base).norm() > r.reach + 1e-9:
            raise Unreachable(f"arm {arm} cannot reach {tuple(round(v, 3) for v in pose.position)}")

    # motion functions ------------------------------------------------------------
    def grasp(self, fn: Grasp):
        w = self.w
        tool = w.observation.tool(fn.tool)
        if w.held.get(fn.arm) is not None or fn.tool in w.held.values():
            raise InvalidPlan(f"cannot grasp {fn.tool} with {fn.arm}")
        w.held[fn.arm] = fn.tool
        home = tool.home_pose
        w.ee[fn.arm] = Pose2(home.apply(tool.grasp_point), home.theta)
        self.frame("grasp", fn.arm)

    def release(self, fn: Release):
        w = self.w
        if w.held.get(fn.arm) != fn.tool:
            raise InvalidPlan(f"{fn.arm} does not hold {fn.tool}")
        w.tool_poses[fn.tool] = w.observation.tool(fn.tool).home_pose
        w.held[fn.arm] = None
        w.ee[fn.arm] = None
        self.frame("release", fn.arm)

    def place(self, arm: str, pose: Pose2, mode: str):
        """Lift the tool and set it down at ``pose`` (no contact on the way)."""
        self.check_reach(arm, pose)
        self.set_ee(arm, pose)
        w = self.w
        w.obj = resolve_push(w.tool_segments(w.held[arm]), w.obj, w.r_obj, w.obj, w.observation.walls)
        self.frame(mode, arm, w.held[arm])

    def push_plan(self, arm: str, goal: Vec2) -> tuple[ToolAnalysis, ctl.InteractPlan]:
        w = self.w
        tool = w.observation.tool(w.held[arm])
        g = goal - w.obj
        an = self.analysis(tool, g)
        plan = ctl.interact_poses(an, (0, 0), w.obj, goal, w.observation.robot(arm).base, mode="push")
        return an, plan

    def approach(self, fn: Approach, goal: Optional[Vec2], stepping: bool):
        w = self.w
        if stepping:
            st, _ = self.stepping_start(fn.arm)
            self.place(fn.arm, st.ee_pose, "approach")
            return
        if goal is None or (goal - w.obj).norm() <= self.p.interact.goal_tol:
            self.frame("approach", fn.arm, w.held[fn.arm])
            return
        an, plan = self.push_plan(fn.arm, goal)
        back = (goal - w.obj).unit() * -self.p.interact.standoff
        start = Pose2(plan.start_pose.position + back, plan.start_pose.theta)
        self.place(fn.arm, start, "approach")

    def interact(self, arm: str, goal: Vec2, mode: str):
        w = self.w
        ip = self.p.interact
        tool_id = w.held[arm]
        frames = 0
        an, plan = self.push_plan(arm, goal)
        direction = goal - w.obj
        while (w.obj - goal).norm() > ip.goal_tol:
            if frames >= self.p.budget:
                raise Timeout(f"{mode} did not reach the goal within {self.p.budget} frames", self.log)
            g = goal - w.obj
            p_star = w.ee[arm].apply(an.p_star)
            drifted = (p_star - w.obj).norm() > 0.5 * w.r_obj + ip.standoff
            turned = g.norm() > 1e-9 and math.acos(max(-1, min(1, g.unit().dot(direction.unit())))) > self.p.replan_angle
            if drifted or turned:
                an, plan = self.push_plan(arm, goal)
                direction = g
                back = g.unit() * -ip.standoff
                self.place(arm, Pose2(plan.start_pose.position + back, plan.start_pose.theta), "approach")
                frames += 1
                continue
            nxt = ctl.interact_step(w.ee[arm], plan, ip.k_int, ip.pos_tol, ip.rot_rate)
            self.check_reach(arm, nxt)
            self.move(arm, nxt)
            self.frame(mode, arm, tool_id)
            frames += 1

    def stepping_start(self, arm: str):
        w = self.w
        obs = w.observation
        tool = obs.tool(w.held[arm])
        if w.exit is None:
            raise InvalidPlan("stepping needs walls with an exit")
        last = len(tool.shape) - 2
        sp = self.p.stepping
        errors = []
        for side in ("left", "right"):
            an = ctl.stepping_analysis(self.analysis(tool, w.exit.direction, (last, side)))
            try:
                st = ctl.stepping_init(an, obs.walls, w.exit, w.obj, sp)
            except TomError as e:
                errors.append(e)
                continue
            self.check_reach(arm, st.ee_pose)
            return st, an
        raise errors[0]

    def cleared(self) -> bool:
        hull = wall_hull(self.w.observation.walls)
        return hull.distance(Point(*self.w.obj)) >= self.w.r_obj

    def stepping(self, fn: Stepping):
        w = self.w
        sp = self.p.stepping
        st, an = self.stepping_start(fn.arm)
        if w.ee[fn.arm] != st.ee_pose:
            self.place(fn.arm, st.ee_pose, "approach")
        tool_id = w.held[fn.arm]
        actions = 0
        aligned = False
        while not self.cleared():
            if actions >= self.p.max_actions:
                raise Timeout(f"block still inside the walls after {actions} actions", self.log)
            st = replace(st, obj=w.obj, angle_obj=ctl.object_angle(an, w.ee[fn.arm], w.obj))
            if not aligned:
                try:
                    nxt, st_next = ctl.stepping_step(st, w.exit, an, sp)
                except AlreadyAligned:
                    aligned = True
            if aligned:
                nxt = Pose2(w.ee[fn.arm].position + w.exit.direction * sp.extract_step, w.ee[fn.arm].theta)
                mode = "extract"
                st_next = replace(st, tau=st.tau + 1, ee_pose=nxt)
            else:
                mode = "reposition" if ctl.step_trigger(st.tau) else "rotation-drag"
            self.check_reach(fn.arm, nxt)
            rot = 0.0
            if mode == "rotation-drag":
                rot = ctl.rotation_angle(st.phi, st.direction, st.angle_obj, sp.angle_rot, sp.strict_paper_signs)
            self.log.commands.append(Command(st.tau, fn.arm, nxt, mode, w.ee[fn.arm].theta, st.phi, rot))
            self.move(fn.arm, nxt)
            st = replace(st_next, obj=w.obj, ee_pose=w.ee[fn.arm])
            self.frame(mode, fn.arm, tool_id)
            gap = (w.ee[fn.arm].apply(an.p_star) - w.obj).norm()
            self.log.frames[-1].p_contact = int(gap <= self.p.p_region * w.r_obj)
            c = self.log.frames[-1].contact
            st = replace(st, contact=bool(c))
            actions += 1


def _lookahead_goal(runner: _Runner, plan: Plan, i: int) -> tuple[Optional[Vec2], bool]:
    arm = plan.steps[i].arm
    for s in plan.steps[i + 1 :]:
        if getattr(s, "arm", None) != arm:
            continue
        if isinstance(s, Interact):
            return runner.goal_point(s.goal, arm), False
        if isinstance(s, Pass):
            return runner.goal_point(HANDOVER, arm, s.arm2), False
        if isinstance(s, Stepping):
            return None, True
        if isinstance(s, (Release, Grasp)):
            break
    return None, False


def execute_motion_function(world: WorldState, fn, params: SimParams = SimParams(), log_: Optional[RunLog] = None, plan=None, index=0) -> tuple[WorldState, RunLog]:
    """Run one motion function on ``world`` (mutated in place) and return the extended log."""
    log_ = log_ if log_ is not None else RunLog()
    r = _Runner(world, params, log_)
    if isinstance(fn, Grasp):
        r.grasp(fn)
    elif isinstance(fn, Release):
        r.release(fn)
    else:
        if world.held.get(fn.arm) != fn.tool:
            raise InvalidPlan(f"{fn.arm} does not hold {fn.tool}")
        if isinstance(fn, Approach):
            goal, stepping = (None, False)
            if plan is not None:
                goal, stepping = _lookahead_goal(r, plan, index)
            elif is_confined(replace(world.observation, block=replace(world.observation.block, center=world.obj))):
                stepping = True
            elif world.observation.target is not None:
                goal = world.observation.target
            r.approach(fn, goal, stepping)
        elif isinstance(fn, Interact):
            r.interact(fn.arm, r.goal_point(fn.goal, fn.arm), "interact")
        elif isinstance(fn, Pass):
            r.interact(fn.arm1, r.goal_point(HANDOVER, fn.arm1, fn.arm2), "pass")
        elif isinstance(fn, Stepping):
            r.stepping(fn)
        else:
            raise InvalidPlan(f"unknown motion function {fn!r}")
    return world, log_


def run_plan(world: WorldState, plan: Plan, params: SimParams = SimParams()) -> RunLog:
    rep = validate_plan(plan, world.observation)
    if not rep.ok:
        raise InvalidPlan("; ".join(v.message for v in rep.violations), rep)
    log_ = RunLog()
    t0 = time.perf_counter()
    log_.frames.append(Frame(0, world.obj, dict(world.ee), world.error(), 0, -1, "", "", "start"))
    for i, fn in enumerate(plan.steps):
        try:
            execute_motion_function(world, fn, params, log_, plan, i)
        except TomError as e:
            log_.wall_clock = time.perf_counter() - t0
            raise StepFailed(i, e, log_) from e
    log_.wall_clock = time.perf_counter() - t0
    return log_


def metrics(log_: RunLog) -> dict:
    if not log_.frames:
        raise InvalidParameter("empty run log")
    hist = {}
    for f in log_.frames:
        if f.contact:
            key = f"{f.tool}:{f.seg_idx}:{f.side}"
            hist[key] = hist.get(key, 0) + 1
    return {
        "error_series": [f.error for f in log_.frames],
        "contact_series": [f.contact for f in log_.frames],
        "p_star_contact_series": [f.p_contact for f in log_.frames if f.p_contact is not None],
        "segment_contact_histogram": dict(sorted(hist.items())),
        "steps": len(log_.frames),
        "final_error": log_.frames[-1].error,
        "wall_clock": log_.wall_clock,
    }


def alternation_violations(commands: Sequence[Command], params: ctl.SteppingParams = ctl.SteppingParams()) -> list[int]:
    """Indices of stepping commands that break the parity rule.

    Even tau must be a pure translation, odd tau must turn by exactly the rotation_angle output.
    """
    bad = []
    for i, c in enumerate(commands):
        if c.mode == "extract":
            continue
        turn = normalize_angle(c.pose.theta - c.theta_before)
        if ctl.step_trigger(c.tau):
            ok = c.mode == "reposition" and turn == 0.0
        else:
            want = normalize_angle(-c.rotation if params.strict_paper_signs else c.rotation)
            ok = c.mode == "rotation-drag" and abs(normalize_angle(turn - want)) <= 1e-9
        if not ok:
            bad.append(i)
    return bad
