"""Symbolic task planner: scene embedding, rule engine, LLM backend, validator, scenario generator.

Plans are lists of motion functions written as ``grasp(right, hook); approach(right, hook, block); ...``.
The rule engine is the reference planner; an HTTP language-model backend is optional and its output
is always validated against the same abstract state machine.
"""

from __future__ import annotations

import json
import logging
import math
import os
import random
import re
import urllib.error
import urllib.request
from dataclasses import MISSING, dataclass, field, fields
from typing import ClassVar, Optional, Sequence

from shapely.geometry import MultiPoint, Point

from .affordance import compute_exit
from .errors import (
    BackendUnavailable,
    Infeasible,
    InvalidParameter,
    InvalidPlan,
    MalformedPlanText,
    NoExit,
    SchemaError,
    UnderspecifiedTask,
)
from .geometry import Pose2, Segment2, Vec2, normalize_angle, polyline, segment, vec

log = logging.getLogger(__name__)

ARMS = ("left", "right")
BLOCK = "block"
TARGET = "target"
HANDOVER = "handover"
PLAN_SCHEMA_VERSION = 1


# --------------------------------------------------------------------------- observation


@dataclass(frozen=True)
class RobotSpec:
    id: str
    base: Vec2
    reach: float

    def __post_init__(self):
        object.__setattr__(self, "base", vec(self.base))
        if self.id not in ARMS:
            raise SchemaError(f"robot id must be one of {ARMS}, got {self.id!r}")
        if not self.reach > 0:
            raise SchemaError(f"robot {self.id}: reach must be positive")

    def reaches(self, p, slack: float = 1e-9) -> bool:
        return (vec(p) - self.base).norm() <= self.reach + slack


@dataclass(frozen=True)
class ToolSpec:
    id: str
    shape: tuple
    home_pose: Pose2
    grasp_point: Vec2 = Vec2(0.0, 0.0)
    kind: str = ""
    hook_class: bool = False

    def __post_init__(self):
        object.__setattr__(self, "shape", polyline(self.shape))
        object.__setattr__(self, "grasp_point", vec(self.grasp_point))
        if not self.id:
            raise SchemaError("tool id must be non-empty")

    @property
    def grasp_world(self) -> Vec2:
        return self.home_pose.apply(self.grasp_point)

    def local_shape(self) -> tuple[Vec2, ...]:
        """Shape relative to the grasp point (the end-effector frame)."""
        g = self.grasp_point
        return tuple(p - g for p in self.shape)

    def world_shape(self, pose: Optional[Pose2] = None) -> tuple[Vec2, ...]:
        return tuple((pose or self.home_pose).apply(p) for p in self.shape)


@dataclass(frozen=True)
class Manipulandum:
    center: Vec2
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", vec(self.center))
        if not self.radius > 0:
            raise SchemaError("block radius must be positive")


@dataclass(frozen=True)
class Observation:
    robots: tuple[RobotSpec, ...]
    tools: tuple[ToolSpec, ...]
    block: Manipulandum
    target: Optional[Vec2] = None
    walls: tuple[Segment2, ...] = ()
    interior_hint: Optional[Vec2] = None

    def __post_init__(self):
        object.__setattr__(self, "robots", tuple(sorted(self.robots, key=lambda r: r.id)))
        object.__setattr__(self, "tools", tuple(self.tools))
        object.__setattr__(self, "walls", tuple(w if isinstance(w, Segment2) else segment(*w) for w in self.walls))
        if self.target is not None:
            object.__setattr__(self, "target", vec(self.target))
        if self.interior_hint is not None:
            object.__setattr__(self, "interior_hint", vec(self.interior_hint))
        for kind, ids in (("robot", [r.id for r in self.robots]), ("tool", [t.id for t in self.tools])):
            if len(set(ids)) != len(ids):
                raise SchemaError(f"duplicate {kind} id")
        if not self.robots:
            raise SchemaError("at least one robot is required")
        if self.walls and self.interior_hint is None:
            raise SchemaError("walls require an interior_hint")

    def robot(self, arm: str) -> RobotSpec:
        for r in self.robots:
            if r.id == arm:
                return r
        raise KeyError(arm)

    def tool(self, tool_id: str) -> ToolSpec:
        for t in self.tools:
            if t.id == tool_id:
                return t
        raise KeyError(tool_id)

    def has_robot(self, arm: str) -> bool:
        return any(r.id == arm for r in self.robots)

    def has_tool(self, tool_id: str) -> bool:
        return any(t.id == tool_id for t in self.tools)


def wall_hull(walls: Sequence[Segment2]):
    """Convex hull of the wall end points as a shapely geometry (None without walls)."""
    if not walls:
        return None
    return MultiPoint([tuple(p) for w in walls for p in w]).convex_hull


def is_confined(obs: Observation) -> bool:
    hull = wall_hull(obs.walls)
    if hull is None or hull.area <= 0:
        return False
    return bool(hull.contains(Point(*obs.block.center)))


def handover_zone(a: RobotSpec, b: RobotSpec) -> Optional[Vec2]:
    """Centroid of the intersection of two reach disks; None when they do not overlap."""
    d_vec = b.base - a.base
    d = d_vec.norm()
    r1, r2 = a.reach, b.reach
    if d >= r1 + r2:
        return None
    if d <= abs(r1 - r2):
        return a.base if r1 <= r2 else b.base
    u = d_vec * (1.0 / d)
    x1 = (d * d + r1 * r1 - r2 * r2) / (2 * d)  # chord position measured from a
    x2 = d - x1

    def cap(r, x):
        # circular segment beyond a chord at distance x from the centre
        alpha = math.acos(max(-1.0, min(1.0, x / r)))
        area = r * r * (alpha - math.sin(alpha) * math.cos(alpha))
        g = 4 * r * math.sin(alpha) ** 3 / (3 * (2 * alpha - math.sin(2 * alpha)))
        return area, g

    A1, g1 = cap(r1, x1)
    A2, g2 = cap(r2, x2)
    along = (A1 * g1 + A2 * (d - g2)) / (A1 + A2)
    return a.base + u * along


# --------------------------------------------------------------------------- motion functions


@dataclass(frozen=True)
class Grasp:
    arm: str
    tool: str
    fn: ClassVar[str] = "grasp"


@dataclass(frozen=True)
class Approach:
    arm: str
    tool: str
    m: str = BLOCK
    fn: ClassVar[str] = "approach"


@dataclass(frozen=True)
class Interact:
    arm: str
    tool: str
    m: str = BLOCK
    goal: str = TARGET
    fn: ClassVar[str] = "interact"


@dataclass(frozen=True)
class Stepping:
    arm: str
    tool: str
    m: str = BLOCK
    fn: ClassVar[str] = "stepping"


@dataclass(frozen=True)
class Pass:
    arm1: str
    tool: str
    m: str
    arm2: str
    fn: ClassVar[str] = "pass"

    @property
    def arm(self) -> str:
        return self.arm1


@dataclass(frozen=True)
class Release:
    arm: str
    tool: str
    fn: ClassVar[str] = "release"


MotionFunction = Grasp | Approach | Interact | Stepping | Pass | Release
FUNCTIONS = {cls.fn: cls for cls in (Grasp, Approach, Interact, Stepping, Pass, Release)}


def fn_args(step) -> tuple[str, ...]:
    return tuple(getattr(step, f.name) for f in fields(step))


def fn_text(step) -> str:
    return f"{step.fn}({', '.join(fn_args(step))})"


@dataclass(frozen=True)
class Plan:
    steps: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def to_text(self) -> str:
        return "; ".join(fn_text(s) for s in self.steps)

    def to_json(self) -> dict:
        out = []
        for s in self.steps:
            d = {"fn": s.fn}
            d.update({f.name: getattr(s, f.name) for f in fields(s)})
            out.append(d)
        return {"schema_version": PLAN_SCHEMA_VERSION, "steps": out}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, doc) -> "Plan":
        if isinstance(doc, list):
            doc = {"schema_version": PLAN_SCHEMA_VERSION, "steps": doc}
        if not isinstance(doc, dict) or "steps" not in doc:
            raise SchemaError("plan document needs a 'steps' list")
        if doc.get("schema_version", PLAN_SCHEMA_VERSION) != PLAN_SCHEMA_VERSION:
            raise SchemaError(f"unsupported plan schema_version {doc.get('schema_version')!r}")
        steps = []
        for i, raw in enumerate(doc["steps"]):
            if not isinstance(raw, dict) or raw.get("fn") not in FUNCTIONS:
                raise SchemaError(f"steps[{i}]: unknown or missing 'fn'")
            cls_ = FUNCTIONS[raw["fn"]]
            names = [f.name for f in fields(cls_)]
            extra = set(raw) - set(names) - {"fn"}
            if extra:
                raise SchemaError(f"steps[{i}]: unknown keys {sorted(extra)}")
            try:
                steps.append(cls_(**{k: str(raw[k]) for k in names if k in raw}))
            except TypeError as e:
                raise SchemaError(f"steps[{i}]: {e}") from None
        return cls(tuple(steps))


_CALL = re.compile(r"\b(" + "|".join(FUNCTIONS) + r")\s*\(([^()]*)\)", re.IGNORECASE)


def parse_plan_text(text: str) -> Plan:
    """Parse ``name(arg, ...)`` calls from free text; anything between calls is ignored."""
    steps = []
    for m in _CALL.finditer(text or ""):
        cls_ = FUNCTIONS[m.group(1).lower()]
        args = [a.strip().strip("'\"").lower() for a in m.group(2).split(",") if a.strip()]
        n_req = sum(1 for f in fields(cls_) if f.default is MISSING)
        if not n_req <= len(args) <= len(fields(cls_)):
            raise MalformedPlanText(f"{m.group(0)!r}: wrong number of arguments", text)
        steps.append(cls_(*args))
    if not steps:
        raise MalformedPlanText("no motion function calls found", text)
    return Plan(tuple(steps))


# --------------------------------------------------------------------------- embedding

_VERBS = ("move", "push", "drag", "pull", "bring", "take", "get", "slide", "deliver", "extract", "shift")


@dataclass(frozen=True)
class PlanningRequest:
    instruction: str
    canonical: str
    observation: Observation
    embedded: tuple[tuple[str, str], ...]

    @property
    def text(self) -> str:
        return "".join(f"{k}: {v}\n" for k, v in self.embedded)

    def get(self, key: str) -> str:
        return dict(self.embedded)[key]


def _f(x: float) -> str:
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


def _pt(p) -> str:
    return f"{_f(p[0])},{_f(p[1])}"


def instruction_intent(canonical: str) -> Optional[str]:
    words = re.findall(r"[a-z]+", canonical)
    for v in _VERBS:
        if v in words:
            return v
    return None


def embed(instruction: str, obs: Observation) -> PlanningRequest:
    if instruction is None or not instruction.strip():
        raise UnderspecifiedTask("instruction is empty")
    if obs.target is None and not obs.walls:
        raise UnderspecifiedTask("scene has neither a target nor walls")
    canonical = " ".join(instruction.strip().lower().split())
    kv = [("instruction", instruction.strip()), ("instruction.canonical", canonical)]
    kv.append(("task.intent", instruction_intent(canonical) or "unknown"))
    for r in obs.robots:
        kv.append((f"robot.{r.id}.base", _pt(r.base)))
        kv.append((f"robot.{r.id}.reach", _f(r.reach)))
    for t in obs.tools:
        kv.append((f"tool.{t.id}.kind", t.kind or "custom"))
        kv.append((f"tool.{t.id}.home", f"{_pt(t.home_pose.position)},{_f(t.home_pose.theta)}"))
        kv.append((f"tool.{t.id}.grasp", _pt(t.grasp_world)))
        kv.append((f"tool.{t.id}.keypoints", ";".join(_pt(p) for p in t.world_shape())))
        kv.append((f"tool.{t.id}.hook_class", "yes" if t.hook_class else "no"))
    kv.append(("p_obj", _pt(obs.block.center)))
    kv.append(("block.radius", _f(obs.block.radius)))
    kv.append(("p_target", "none" if obs.target is None else _pt(obs.target)))
    for i, w in enumerate(obs.walls):
        kv.append((f"wall.{i}", f"{_pt(w.a)};{_pt(w.b)}"))
    if obs.interior_hint is not None:
        kv.append(("wall.interior", _pt(obs.interior_hint)))
    return PlanningRequest(instruction, canonical, obs, tuple(kv))


# --------------------------------------------------------------------------- rule engine


def _by_distance(items, key_point, origin):
    return sorted(items, key=lambda it: ((key_point(it) - origin).norm(), it.id))


def _tools_for(obs: Observation, arm: RobotSpec, hook_only=False, exclude=()):
    ok = [
        t
        for t in obs.tools
        if arm.reaches(t.grasp_world) and t.id not in exclude and (t.hook_class or not hook_only)
    ]
    return _by_distance(ok, lambda t: t.grasp_world, arm.base)


def plan_rule_based(req: PlanningRequest) -> Plan:
    obs = req.observation
    if instruction_intent(req.canonical) is None:
        raise UnderspecifiedTask(f"no known task verb in {req.canonical!r}")
    if not obs.tools:
        raise Infeasible("scene has no tools")
    block = obs.block.center
    target = obs.target
    near_block = [r for r in _by_distance(obs.robots, lambda r: r.base, block) if r.reaches(block)]
    if not near_block:
        raise Infeasible("no arm can reach the block")

    if is_confined(obs):
        try:
            exit_point = compute_exit(obs.walls, obs.interior_hint, block).exit_point
        except NoExit as e:
            raise Infeasible(f"confined block has no exit: {e}") from None
        for arm in near_block:
            hooks = _tools_for(obs, arm, hook_only=True)
            if not hooks or not arm.reaches(exit_point):
                continue
            if target is not None and not arm.reaches(target):
                continue
            a, t = arm.id, hooks[0].id
            steps = [Grasp(a, t), Approach(a, t, BLOCK), Stepping(a, t, BLOCK)]
            if target is not None:
                steps.append(Interact(a, t, BLOCK, TARGET))
            steps.append(Release(a, t))
            return Plan(tuple(steps))
        raise Infeasible("no arm holds a hook-class tool that can extract the block")

    if target is None:
        return Plan(())

    # (b) one arm covers block and target
    for arm in near_block:
        if arm.reaches(target):
            tools = _tools_for(obs, arm)
            if tools:
                a, t = arm.id, tools[0].id
                return Plan((Grasp(a, t), Approach(a, t, BLOCK), Interact(a, t, BLOCK, TARGET), Release(a, t)))

    # (c)/(d) hand the block over through the shared zone
    near_target = [r for r in _by_distance(obs.robots, lambda r: r.base, target) if r.reaches(target)]
    for A in near_block:
        for B in near_target:
            if B.id == A.id or handover_zone(A, B) is None:
                continue
            a, b = A.id, B.id
            for ta in _tools_for(obs, A):
                others = _tools_for(obs, B, exclude=(ta.id,))
                if others:
                    tb = others[0].id
                    return Plan(
                        (
                            Grasp(a, ta.id),
                            Grasp(b, tb),
                            Approach(a, ta.id, BLOCK),
                            Pass(a, ta.id, BLOCK, b),
                            Approach(b, tb, BLOCK),
                            Interact(b, tb, BLOCK, TARGET),
                            Release(a, ta.id),
                            Release(b, tb),
                        )
                    )
            shared = [t for t in _tools_for(obs, A) if B.reaches(t.grasp_world)]
            if shared:
                t = shared[0].id
                return Plan(
                    (
                        Grasp(a, t),
                        Approach(a, t, BLOCK),
                        Pass(a, t, BLOCK, b),
                        Release(a, t),
                        Grasp(b, t),
                        Approach(b, t, BLOCK),
                        Interact(b, t, BLOCK, TARGET),
                        Release(b, t),
                    )
                )
    raise Infeasible("no arm or tool combination moves the block to the target")


# --------------------------------------------------------------------------- validation


@dataclass(frozen=True)
class Violation:
    index: int  # -1 for whole-plan problems
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()
    redundant: tuple[int, ...] = ()
    terminal_reached: bool = False

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def clean(self) -> bool:
        return self.ok and not self.redundant

    def codes(self) -> list[str]:
        return [v.code for v in self.violations]

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [{"index": v.index, "code": v.code, "message": v.message} for v in self.violations],
            "redundant": list(self.redundant),
            "terminal_reached": self.terminal_reached,
        }


@dataclass
class AbstractState:
    """What the validator tracks while replaying a plan."""

    block: Vec2
    confined: bool
    held: dict = field(default_factory=dict)  # arm -> tool
    engaged: set = field(default_factory=set)  # arms whose tool is placed at the block


def _replay(plan: Plan, obs: Observation) -> tuple[list[Violation], AbstractState]:
    st = AbstractState(obs.block.center, is_confined(obs))
    out: list[Violation] = []

    def bad(i, code, msg):
        out.append(Violation(i, code, msg))

    prev = None
    for i, s in enumerate(plan.steps):
        if s == prev:
            bad(i, "duplicate-step", f"{fn_text(s)} repeats the previous step")
        prev = s
        arms = [s.arm1, s.arm2] if isinstance(s, Pass) else [s.arm]
        missing = [a for a in arms if not obs.has_robot(a)]
        if missing:
            bad(i, "unknown-arm", f"unknown arm {missing[0]!r}")
            continue
        if not obs.has_tool(s.tool):
            bad(i, "unknown-tool", f"unknown tool {s.tool!r}")
            continue
        if getattr(s, "m", BLOCK) != BLOCK:
            bad(i, "unknown-object", f"unknown object {s.m!r}")
            continue
        arm = obs.robot(s.arm)
        tool = obs.tool(s.tool)
        if isinstance(s, Grasp):
            holder = next((a for a, t in st.held.items() if t == s.tool), None)
            if s.arm in st.held:
                bad(i, "arm-busy", f"arm {s.arm} already holds {st.held[s.arm]}")
            elif holder is not None:
                bad(i, "tool-busy", f"tool {s.tool} is held by {holder}")
            elif not arm.reaches(tool.grasp_world):
                bad(i, "tool-unreachable", f"arm {s.arm} cannot reach tool {s.tool}")
            else:
                st.held[s.arm] = s.tool
            continue
        if st.held.get(s.arm) != s.tool:
            bad(i, "tool-not-held", f"arm {s.arm} does not hold {s.tool}")
            continue
        if isinstance(s, Release):
            del st.held[s.arm]
            st.engaged.discard(s.arm)
            continue
        if not arm.reaches(st.block):
            bad(i, "object-unreachable", f"block is outside the reach of {s.arm}")
            continue
        if isinstance(s, Approach):
            st.engaged.add(s.arm)
            continue
        if s.arm not in st.engaged:
            bad(i, "not-approached", f"{s.fn} by {s.arm} before approaching the block")
            continue
        if isinstance(s, Stepping):
            if not st.confined:
                bad(i, "not-confined", "stepping on a block that is not confined")
            elif not tool.hook_class:
                bad(i, "tool-incapable", f"tool {s.tool} cannot drag")
            else:
                try:
                    st.block = compute_exit(obs.walls, obs.interior_hint, st.block).exit_point
                    st.confined = False
                except NoExit:
                    bad(i, "no-exit", "walls have no exit direction")
            continue
        if st.confined:
            bad(i, "object-confined", f"{s.fn} while the block is confined")
            continue
        if isinstance(s, Interact):
            if s.goal == TARGET:
                goal = obs.target
            elif s.goal == HANDOVER:
                others = [r for r in obs.robots if r.id != s.arm]
                goal = handover_zone(arm, others[0]) if others else None
            else:
                goal = None
                bad(i, "unknown-goal", f"unknown goal {s.goal!r}")
                continue
            if goal is None:
                bad(i, "unknown-goal", f"goal {s.goal!r} is not defined in this scene")
            elif not arm.reaches(goal):
                bad(i, "target-unreachable", f"goal is outside the reach of {s.arm}")
            else:
                st.block = goal
            continue
        if isinstance(s, Pass):
            if s.arm2 == s.arm1:
                bad(i, "unknown-arm", "pass to the same arm")
                continue
            zone = handover_zone(arm, obs.robot(s.arm2))
            if zone is None:
                bad(i, "no-handover-zone", f"reach of {s.arm1} and {s.arm2} do not overlap")
            else:
                st.block = zone
                st.engaged.discard(s.arm1)
            continue
    for a, t in sorted(st.held.items()):
        bad(-1, "tool-not-released", f"arm {a} still holds {t}")
    return out, st


def _terminal(st: AbstractState, obs: Observation) -> bool:
    if st.confined:
        return False
    if obs.target is not None and (st.block - obs.target).norm() > 1e-9:
        return False
    return not st.held


def _check(plan: Plan, obs: Observation) -> tuple[list[Violation], bool]:
    v, st = _replay(plan, obs)
    done = _terminal(st, obs)
    if not done:
        v.append(Violation(-1, "goal-not-reached", "plan ends before the task is complete"))
    return v, done


def validate_plan(plan: Plan, obs: Observation) -> ValidationReport:
    violations, done = _check(plan, obs)
    redundant = []
    for i in range(len(plan.steps)):
        rest = Plan(plan.steps[:i] + plan.steps[i + 1 :])
        if not _check(rest, obs)[0]:
            redundant.append(i)
    return ValidationReport(tuple(violations), tuple(redundant), done)


# --------------------------------------------------------------------------- LLM backend

PROMPT_TEMPLATE = """You are a symbolic task planner for a dual-arm robot that moves a block with tools.
Available motion functions:
  grasp(arm, tool)
  approach(arm, tool, m)
  interact(arm, tool, m, goal)
  stepping(arm, tool, m)
  pass(arm1, tool, m, arm2)
  release(arm, tool)
Arms are 'left' and 'right'; m is 'block'; goal is 'target'.
Answer with the function calls only, separated by semicolons.

Scene:
{scene}
Task: {instruction}
Plan:"""


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str
    model: str = "tom-planner"
    api_key: Optional[str] = None
    timeout: float = 30.0

    @classmethod
    def from_env(cls, model: Optional[str] = None, timeout: float = 30.0) -> "BackendConfig":
        endpoint = os.environ.get("TOM_LLM_ENDPOINT")
        if not endpoint:
            raise BackendUnavailable("TOM_LLM_ENDPOINT is not set")
        return cls(endpoint, model or os.environ.get("TOM_LLM_MODEL", "tom-planner"), os.environ.get("TOM_LLM_KEY"), timeout)


def build_prompt(req: PlanningRequest) -> str:
    return PROMPT_TEMPLATE.format(scene=req.text.rstrip(), instruction=req.instruction.strip())


def _completion_text(body: bytes) -> str:
    raw = body.decode("utf-8", errors="replace")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError:
        return raw
    if isinstance(doc, str):
        return doc
    if isinstance(doc, dict):
        for key in ("text", "completion", "output", "response"):
            if isinstance(doc.get(key), str):
                return doc[key]
        choices = doc.get("choices")
        if isinstance(choices, list) and choices:
            c = choices[0]
            if isinstance(c.get("text"), str):
                return c["text"]
            msg = c.get("message") or {}
            if isinstance(msg.get("content"), str):
                return msg["content"]
    return raw


def plan_llm(req: PlanningRequest, backend: BackendConfig) -> Plan:
    prompt = build_prompt(req)
    body = json.dumps({"model": backend.model, "prompt": prompt}).encode()
    headers = {"Content-Type": "application/json"}
    if backend.api_key:
        headers["Authorization"] = f"Bearer {backend.api_key}"
    request = urllib.request.Request(backend.endpoint, data=body, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(request, timeout=backend.timeout) as resp:
            payload = resp.read()
    except (urllib.error.URLError, OSError, ValueError) as e:
        raise BackendUnavailable(f"LLM backend request failed: {e}") from e
    text = _completion_text(payload)
    plan = parse_plan_text(text)
    report = validate_plan(plan, req.observation)
    if not report.ok:
        raise InvalidPlan("; ".join(v.message for v in report.violations), report)
    return plan


# --------------------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class Scenario:
    observation: Observation
    instruction: str
    expected_plan: Plan
    seed: int
    case: str = ""


DEFAULT_BOUNDS = (-0.6, 0.6, 0.0, 0.6)  # xmin, xmax, ymin, ymax
_STOCK_KINDS = ("stick", "hook", "yhook")


def _q(x: float, step: float = 0.01) -> float:
    # positions on a 1 cm lattice keep the combination space finite
    return round(round(x / step) * step, 6)


def _random_scene(rng: random.Random, bounds) -> tuple[Observation, str]:
    from .tools import HOOK_CLASS, STOCK

    xmin, xmax, ymin, ymax = bounds
    w, h = xmax - xmin, ymax - ymin
    cx = (xmin + xmax) / 2
    reach = _q(rng.uniform(0.45, 0.6) * w)
    robots = (
        RobotSpec("left", (_q(cx - 0.3 * w + rng.uniform(-0.02, 0.02) * w), _q(ymin)), reach),
        RobotSpec("right", (_q(cx + 0.3 * w + rng.uniform(-0.02, 0.02) * w), _q(ymin)), reach),
    )

    def spot():
        return Vec2(_q(rng.uniform(xmin + 0.05 * w, xmax - 0.05 * w)), _q(rng.uniform(ymin + 0.15 * h, ymax - 0.05 * h)))

    kinds = rng.sample(_STOCK_KINDS, rng.choice((1, 2)))
    tools = []
    for i, k in enumerate(kinds):
        p = Vec2(_q(cx + rng.uniform(-0.2, 0.2) * w), _q(ymin + rng.uniform(0.05, 0.15) * h))
        theta = _q(rng.uniform(-math.pi, math.pi), 0.05)
        tools.append(ToolSpec(k, STOCK[k], Pose2(p, theta), kind=k, hook_class=HOOK_CLASS[k]))
    walls = ()
    hint = None
    target = spot()
    if rng.random() < 0.25:
        c = spot()
        half = _q(rng.uniform(0.05, 0.08))
        depth = _q(rng.uniform(0.08, 0.12))
        walls = (
            segment((c.x - half, c.y - depth / 2), (c.x + half, c.y - depth / 2)),
            segment((c.x - half, c.y - depth / 2), (c.x - half, c.y + depth / 2)),
            segment((c.x + half, c.y - depth / 2), (c.x + half, c.y + depth / 2)),
        )
        hint = c
        block = Manipulandum(c, 0.02)
        if rng.random() < 0.5:
            target = None
        instruction = "Drag the block out of the walls" + ("" if target is None else " and move it to the target")
    else:
        block = Manipulandum(spot(), 0.02)
        instruction = rng.choice(("Move the block to the target", "Push the block to the target", "Bring the block to the target"))
    return Observation(robots, tuple(tools), block, target, walls, hint), instruction


def generate_scenarios(seed: int, count: int, bounds=DEFAULT_BOUNDS, max_tries: int = 10000) -> list[Scenario]:
    """Random feasible scenes with their rule-engine plans; identical for identical seeds."""
    if count < 1:
        raise InvalidParameter("count must be at least 1")
    xmin, xmax, ymin, ymax = bounds
    if not (xmax > xmin and ymax > ymin):
        raise InvalidParameter("bounds must have positive extent")
    rng = random.Random(seed)
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > max_tries * count:
            raise Infeasible("could not place enough feasible scenes inside the bounds")
        obs, instruction = _random_scene(rng, bounds)
        try:
            plan = plan_rule_based(embed(instruction, obs))
        except (Infeasible, UnderspecifiedTask):
            continue
        if not plan.steps:
            continue
        out.append(Scenario(obs, instruction, plan, seed, plan_case(plan)))
    return out


def plan_case(plan: Plan) -> str:
    names = [s.fn for s in plan.steps]
    if "stepping" in names:
        return "confined"
    if "pass" in names:
        return "sharing" if len({s.tool for s in plan.steps}) == 1 else "two-tool"
    return "single-arm"


# --------------------------------------------------------------------------- mirroring


def _swap(arm: str) -> str:
    return {"left": "right", "right": "left"}.get(arm, arm)


def mirror_observation(obs: Observation, axis_x: float = 0.0) -> Observation:
    """Reflect the scene about the vertical line x = axis_x and swap arm ids."""

    def m(p):
        return Vec2(2 * axis_x - p[0], p[1])

    robots = tuple(RobotSpec(_swap(r.id), m(r.base), r.reach) for r in obs.robots)
    tools = tuple(
        ToolSpec(
            t.id,
            tuple(Vec2(p.x, -p.y) for p in t.shape),
            Pose2(m(t.home_pose.position), normalize_angle(math.pi - t.home_pose.theta)),
            Vec2(t.grasp_point.x, -t.grasp_point.y),
            t.kind,
            t.hook_class,
        )
        for t in obs.tools
    )
    walls = tuple(segment(m(w.a), m(w.b)) for w in obs.walls)
    return Observation(
        robots,
        tools,
        Manipulandum(m(obs.block.center), obs.block.radius),
        None if obs.target is None else m(obs.target),
        walls,
        None if obs.interior_hint is None else m(obs.interior_hint),
    )


def mirror_plan(plan: Plan) -> Plan:
    steps = []
    for s in plan.steps:
        kw = {f.name: getattr(s, f.name) for f in fields(s)}
        for k in ("arm", "arm1", "arm2"):
            if k in kw:
                kw[k] = _swap(kw[k])
        steps.append(type(s)(**kw))
    return Plan(tuple(steps))


__all__ = [
    "Approach",
    "BackendConfig",
    "Grasp",
    "Interact",
    "Manipulandum",
    "Observation",
    "Pass",
    "Plan",
    "PlanningRequest",
    "Release",
    "RobotSpec",
    "Scenario",
    "Stepping",
    "ToolSpec",
    "ValidationReport",
    "embed",
    "generate_scenarios",
    "handover_zone",
    "plan_llm",
    "plan_rule_based",
    "validate_plan",
]
