"""Scene, plan and tool files, SVG/PGM/CSV artifacts and the ``tomkit`` command line."""

from __future__ import annotations

import argparse
import base64
import io
import json
import logging
import math
import re
import sys
import time
from dataclasses import dataclass, fields, replace
from functools import cache
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np
from PIL import Image
from shapely.geometry import Point

from . import controller as ctl
from . import errors as E
from .geometry import Pose2, Vec2, segment
from .manoeuvrability import AnalysisParams, GridSpec, ToolAnalysis, analyze_tool
from .planner import (
    FUNCTIONS,
    BackendConfig,
    Manipulandum,
    Observation,
    Plan,
    RobotSpec,
    ToolSpec,
    embed,
    generate_scenarios,
    plan_llm,
    plan_rule_based,
    validate_plan,
    wall_hull,
)
from .simworld import RunLog, SimParams, WorldState, metrics, run_plan
from .tools import HOOK_CLASS, STOCK

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_UNKNOWN_KEY_VALIDATORS = {"additionalProperties", "propertyNames"}

# --------------------------------------------------------------------------- JSON and schemas


@cache
def load_schema(name: str) -> dict:
    """Bundled JSON schema: ``scene``, ``plan`` or ``tool``."""
    text = resources.files("tomkit.schemas").joinpath(f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


@cache
def _validator(name: str, ref: str = "") -> jsonschema.Draft202012Validator:
    schema = load_schema(name)
    if ref:
        schema = {"$defs": schema["$defs"], "$ref": f"#/$defs/{ref}"}
    return jsonschema.Draft202012Validator(schema)


def _line_col(text: str, pos: int) -> tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    return line, pos - (text.rfind("\n", 0, pos) + 1) + 1


def parse_json(text: str, path: str = "<string>"):
    """Decode JSON, rejecting duplicate keys; errors carry line and column."""
    dup = []

    def pairs(items):
        seen = {}
        for k, v in items:
            if k in seen and not dup:
                dup.append(k)
            seen[k] = v
        return seen

    try:
        doc = json.loads(text, object_pairs_hook=pairs)
    except json.JSONDecodeError as e:
        raise E.ParseError(e.msg, path, e.lineno, e.colno) from None
    if dup:
        # the hook does not see positions, so point at the last occurrence of the key
        hits = list(re.finditer(re.escape(json.dumps(dup[0])) + r"\s*:", text))
        line, col = _line_col(text, hits[-1].start()) if hits else (0, 0)
        raise E.ParseError(f"duplicate key {dup[0]!r}", path, line, col)
    return doc


def read_json(path) -> object:
    path = str(path)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_json(text, path)


def _where(err: jsonschema.ValidationError) -> str:
    out = ""
    for p in err.absolute_path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def check_schema(doc, name: str, strict: bool = True, ref: str = "") -> None:
    """Validate ``doc``; unknown keys are errors when strict and warnings otherwise."""
    errs = sorted(_validator(name, ref).iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    hard = []
    for e in errs:
        if not strict and _UNKNOWN_KEY_VALIDATORS & {e.validator, *map(str, e.schema_path)}:
            log.warning("%s: %s (ignored)", _where(e), e.message)
        else:
            hard.append(e)
    if hard:
        raise E.SchemaError("; ".join(f"{_where(e)}: {e.message}" for e in hard))


# --------------------------------------------------------------------------- values


def _angle(d: dict, key: str, where: str, default=None):
    """Radian value of ``key``, accepting ``key_deg`` in degrees instead."""
    deg = key + "_deg"
    if key in d and deg in d:
        raise E.SchemaError(f"{where}: give either {key!r} or {deg!r}, not both")
    if deg in d:
        return math.radians(d[deg])
    if key in d:
        return float(d[key])
    if default is None:
        raise E.SchemaError(f"{where}: {key!r} (or {deg!r}) is required")
    return default


def _section(cls, d: dict, where: str, angles=()):
    kw = {}
    names = {f.name for f in fields(cls)}
    for k, v in d.items():
        base = k[:-4] if k.endswith("_deg") else k
        if base in angles:
            kw[base] = _angle(d, base, where)
        elif k in names:
            kw[k] = v
    return kw


def params_from_dict(d: Optional[dict]) -> SimParams:
    """SimParams from a ``params`` section; angles in radians unless the key ends in ``_deg``."""
    d = d or {}
    sp = SimParams()
    inter = replace(sp.interact, **_section(ctl.InteractParams, d.get("interact", {}), "params.interact", ("rot_rate",)))
    step = replace(
        sp.stepping,
        **_section(ctl.SteppingParams, d.get("stepping", {}), "params.stepping", ("angle_rot", "parallel_tol")),
    )
    ana = replace(sp.analysis, **_section(AnalysisParams, d.get("analysis", {}), "params.analysis"))
    top = _section(SimParams, d.get("sim", {}), "params.sim", ("replan_angle",))
    out = replace(sp, interact=inter, stepping=step, analysis=ana, **top)
    if not out.budget >= 1 or not out.max_actions >= 1:
        raise E.InvalidParameter("budget and max_actions must be at least 1")
    return out


_PARAM_SECTIONS = {
    "interact": (ctl.InteractParams, None),
    "stepping": (ctl.SteppingParams, None),
    "analysis": (AnalysisParams, ("grid", "metric_distance_norm")),
}


def params_to_dict(sp: SimParams) -> dict:
    """Only the values that differ from the defaults."""
    out = {}
    for name, (cls, skip) in _PARAM_SECTIONS.items():
        cur, ref = getattr(sp, name), cls()
        diff = {f.name: getattr(cur, f.name) for f in fields(cls) if getattr(cur, f.name) != getattr(ref, f.name)}
        for k in skip or ():
            diff.pop(k, None)
        if diff:
            out[name] = diff
    ref = SimParams()
    sim = {
        f.name: getattr(sp, f.name)
        for f in fields(SimParams)
        if f.name not in _PARAM_SECTIONS and getattr(sp, f.name) != getattr(ref, f.name)
    }
    if sim:
        out["sim"] = sim
    return out


def merge_params(base: Optional[dict], over: Optional[dict]) -> dict:
    out = {k: dict(v) for k, v in (base or {}).items()}
    for k, v in (over or {}).items():
        out.setdefault(k, {}).update(v)
    return out


# --------------------------------------------------------------------------- scenes


def observation_from_dict(scene: dict) -> Observation:
    """Observation from an already schema-checked ``scene`` section."""
    tools, ids = [], set()
    for i, t in enumerate(scene.get("tools", [])):
        where = f"scene.tools[{i}]"
        if t["id"] in ids:
            raise E.SchemaError(f"{where}.id: duplicate tool id {t['id']!r}")
        ids.add(t["id"])
        hp = t["home_pose"]
        pose = Pose2((hp["x"], hp["y"]), _angle(hp, "theta", f"{where}.home_pose"))
        kind = t.get("kind", "")
        hook = t.get("hook_class", HOOK_CLASS.get(kind, False))
        tools.append(ToolSpec(t["id"], t["shape"], pose, t.get("grasp_point", (0.0, 0.0)), kind, hook))
    arms = [r["id"] for r in scene["robots"]]
    if len(set(arms)) != len(arms):
        raise E.SchemaError("scene.robots: duplicate robot id")
    robots = [RobotSpec(r["id"], r["base"], r["reach"]) for r in scene["robots"]]
    b = scene["block"]
    return Observation(
        tuple(robots),
        tuple(tools),
        Manipulandum(b["center"], b["radius"]),
        scene.get("target"),
        tuple(segment(*w) for w in scene.get("walls", [])),
        scene.get("interior_hint"),
    )


def scene_from_doc(doc, strict: bool = True) -> tuple[Observation, str, SimParams]:
    check_schema(doc, "scene", strict)
    try:
        obs = observation_from_dict(doc["scene"])
    except E.SchemaError:
        raise
    except (E.TomError, ValueError) as e:
        raise E.SchemaError(f"scene: {e}") from None
    return obs, doc.get("instruction", ""), params_from_dict(doc.get("params"))


def load_scene(path, strict: bool = True) -> tuple[Observation, str, SimParams]:
    """Read and validate a scene file: (observation, instruction, simulation parameters)."""
    return scene_from_doc(read_json(path), strict)


def _pt(p) -> list:
    return [float(p[0]), float(p[1])]


def scene_to_dict(obs: Observation, instruction: str = "", params: Optional[SimParams] = None) -> dict:
    scene = {
        "robots": [{"id": r.id, "base": _pt(r.base), "reach": r.reach} for r in obs.robots],
        "tools": [
            {
                "id": t.id,
                "shape": [_pt(p) for p in t.shape],
                "home_pose": {"x": t.home_pose.position.x, "y": t.home_pose.position.y, "theta": t.home_pose.theta},
                "grasp_point": _pt(t.grasp_point),
                "kind": t.kind,
                "hook_class": t.hook_class,
            }
            for t in obs.tools
        ],
        "block": {"center": _pt(obs.block.center), "radius": obs.block.radius},
    }
    if obs.target is not None:
        scene["target"] = _pt(obs.target)
    if obs.walls:
        scene["walls"] = [[_pt(w.a), _pt(w.b)] for w in obs.walls]
    if obs.interior_hint is not None:
        scene["interior_hint"] = _pt(obs.interior_hint)
    doc = {"schema_version": SCHEMA_VERSION, "scene": scene}
    if instruction:
        doc["instruction"] = instruction
    p = params_to_dict(params) if params is not None else {}
    if p:
        doc["params"] = p
    return doc


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def save_scene(path, obs: Observation, instruction: str = "", params: Optional[SimParams] = None) -> None:
    Path(path).write_text(dumps(scene_to_dict(obs, instruction, params)), encoding="utf-8")


# --------------------------------------------------------------------------- plans and tools


def _fn_fields(fn: str) -> set:
    return {f.name for f in fields(FUNCTIONS[fn])}


def plan_from_doc(doc, strict: bool = True) -> Plan:
    if isinstance(doc, list):
        doc = {"schema_version": SCHEMA_VERSION, "steps": doc}
    check_schema(doc, "plan", strict)
    if not strict:
        keep = lambda s: {k: v for k, v in s.items() if k == "fn" or k in _fn_fields(s["fn"])}  # noqa: E731
        doc = {"steps": [keep(s) for s in doc["steps"]]}
    return Plan.from_json(doc)


def load_plan(path, strict: bool = True) -> Plan:
    return plan_from_doc(read_json(path), strict)


def load_tool(path, strict: bool = True) -> tuple[str, tuple]:
    """(tool id, shape in the grasp frame) from a tool file."""
    doc = read_json(path)
    check_schema(doc, "tool", strict)
    return doc.get("id", Path(path).stem), tuple(tuple(p) for p in doc["shape"])


# --------------------------------------------------------------------------- rendering

RENDER_KINDS = ("scene_frame", "grid_heatmap", "trajectory_overlay")
ARM_COLORS = {"left": "#1f77b4", "right": "#d62728"}


@dataclass(frozen=True)
class RenderSpec:
    kind: str
    path: Path
    scale: float = 500.0  # pixels per meter

    def __post_init__(self):
        object.__setattr__(self, "path", Path(self.path))
        if self.kind not in RENDER_KINDS:
            raise E.InvalidParameter(f"render kind must be one of {RENDER_KINDS}")
        if not self.scale > 0:
            raise E.InvalidParameter("render scale must be positive")


def _f(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


class Svg:
    """Minimal SVG writer with y pointing up in world coordinates."""

    def __init__(self, lo, hi, scale: float, margin: float = 10.0):
        self.lo, self.hi, self.scale, self.margin = Vec2(*lo), Vec2(*hi), scale, margin
        self.w = (self.hi.x - self.lo.x) * scale + 2 * margin
        self.h = (self.hi.y - self.lo.y) * scale + 2 * margin
        self.items: list[str] = []

    def xy(self, p) -> tuple[str, str]:
        return _f((p[0] - self.lo.x) * self.scale + self.margin), _f((self.hi.y - p[1]) * self.scale + self.margin)

    def add(self, tag: str, **attrs) -> None:
        a = " ".join(f'{k.rstrip("_").replace("_", "-")}="{v}"' for k, v in attrs.items())
        self.items.append(f"<{tag} {a}/>")

    def circle(self, c, r: float, **attrs) -> None:
        x, y = self.xy(c)
        self.add("circle", cx=x, cy=y, r=_f(r * self.scale), **attrs)

    def line(self, a, b, **attrs) -> None:
        (x1, y1), (x2, y2) = self.xy(a), self.xy(b)
        self.add("line", x1=x1, y1=y1, x2=x2, y2=y2, **attrs)

    def polyline(self, pts, **attrs) -> None:
        if len(pts) >= 2:
            self.add("polyline", points=" ".join(",".join(self.xy(p)) for p in pts), fill="none", **attrs)

    def square(self, c, half: float, **attrs) -> None:
        x, y = self.xy((c[0] - half, c[1] + half))
        self.add("rect", x=x, y=y, width=_f(2 * half * self.scale), height=_f(2 * half * self.scale), **attrs)

    def text(self) -> str:
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(self.w)}" height="{_f(self.h)}" '
            f'viewBox="0 0 {_f(self.w)} {_f(self.h)}">'
        )
        bg = f'<rect x="0" y="0" width="{_f(self.w)}" height="{_f(self.h)}" fill="white"/>'
        return "\n".join([head, bg, *self.items, "</svg>"]) + "\n"


def scene_bounds(obs: Observation, extra: Sequence = ()) -> tuple[Vec2, Vec2]:
    pts = [obs.block.center, *extra]
    for r in obs.robots:
        pts += [r.base - Vec2(r.reach, 0.0), r.base + Vec2(r.reach, r.reach), r.base + Vec2(0.0, -0.02)]
    if obs.target is not None:
        pts.append(obs.target)
    for w in obs.walls:
        pts += [w.a, w.b]
    for t in obs.tools:
        pts += list(t.world_shape())
    arr = np.array([(p[0], p[1]) for p in pts])
    pad = 2 * obs.block.radius
    return Vec2(*(arr.min(axis=0) - pad)), Vec2(*(arr.max(axis=0) + pad))


def _tool_pose_from_ee(tool: ToolSpec, ee: Pose2) -> Pose2:
    return Pose2(ee.apply(-tool.grasp_point), ee.theta)


def _workspace(svg: Svg, obs: Observation) -> None:
    for r in obs.robots:
        svg.circle(r.base, r.reach, fill=ARM_COLORS[r.id], fill_opacity="0.05", stroke=ARM_COLORS[r.id], stroke_width="0.5")
        svg.circle(r.base, 0.01, fill=ARM_COLORS[r.id])
    for w in obs.walls:
        svg.line(w.a, w.b, stroke="black", stroke_width="3")
    if obs.target is not None:
        svg.square(obs.target, obs.block.radius, fill="none", stroke="#2ca02c", stroke_width="1.5")


def render_scene_frame(obs: Observation, obj, tool_poses: dict, ee: Optional[dict] = None, scale: float = 500.0) -> str:
    """Workspace, walls, target, tools at the given poses and the block."""
    svg = Svg(*scene_bounds(obs), scale)
    _workspace(svg, obs)
    for tid, pose in sorted(tool_poses.items()):
        svg.polyline(obs.tool(tid).world_shape(pose), stroke="#555555", stroke_width="3", stroke_linecap="round")
    for arm, pose in sorted((ee or {}).items()):
        if pose is not None:
            svg.circle(pose.position, 0.006, fill=ARM_COLORS[arm])
    svg.circle(obj, obs.block.radius, fill="#ff7f0e", fill_opacity="0.8", stroke="black", stroke_width="0.5")
    return svg.text()


def render_frame(obs: Observation, frame, scale: float = 500.0) -> str:
    """A logged frame; only the tool of the acting arm is drawn."""
    poses = {}
    if frame.tool and frame.arm and frame.ee.get(frame.arm) is not None:
        poses[frame.tool] = _tool_pose_from_ee(obs.tool(frame.tool), frame.ee[frame.arm])
    return render_scene_frame(obs, frame.obj, poses, frame.ee, scale)


def render_trajectory(obs: Observation, log_: RunLog, scale: float = 500.0) -> str:
    """Block path and end-effector paths over the initial scene."""
    svg = Svg(*scene_bounds(obs, [f.obj for f in log_.frames]), scale)
    _workspace(svg, obs)
    for t in obs.tools:
        svg.polyline(t.world_shape(), stroke="#aaaaaa", stroke_width="2", stroke_linecap="round")
    for arm in ARM_COLORS:
        path = [f.ee[arm].position for f in log_.frames if f.ee.get(arm) is not None]
        svg.polyline(path, stroke=ARM_COLORS[arm], stroke_width="1", stroke_opacity="0.7")
    objs = [f.obj for f in log_.frames]
    svg.polyline(objs, stroke="#ff7f0e", stroke_width="2")
    if objs:
        svg.circle(objs[0], obs.block.radius, fill="none", stroke="#ff7f0e", stroke_dasharray="3,2")
        svg.circle(objs[-1], obs.block.radius, fill="#ff7f0e", fill_opacity="0.8", stroke="black", stroke_width="0.5")
    return svg.text()


def grid_image(values: np.ndarray) -> Image.Image:
    """8-bit grayscale image of a grid in [0, 1], top row at the largest y."""
    v = np.clip(np.nan_to_num(values[::-1]), 0.0, 1.0)
    return Image.fromarray(np.round(v * 255).astype(np.uint8), mode="L")


def write_pgm(path, values: np.ndarray) -> None:
    grid_image(values).save(path, format="PPM")


def render_grid_heatmap(an: ToolAnalysis, scale: Optional[float] = None) -> str:
    """Normalised manoeuvrability as an embedded image with the tool, keypoints, p* and a* on top."""
    spec = an.grid.spec
    lo = spec.origin
    hi = lo + Vec2(spec.width * spec.cell_size, spec.height * spec.cell_size)
    scale = scale or max(1.0, 600.0 / max(hi.x - lo.x, hi.y - lo.y))
    svg = Svg(lo, hi, scale)
    buf = io.BytesIO()
    grid_image(an.grid.values).save(buf, format="PNG", optimize=False)
    x, y = svg.xy((lo.x, hi.y))
    svg.add(
        "image",
        x=x,
        y=y,
        width=_f((hi.x - lo.x) * scale),
        height=_f((hi.y - lo.y) * scale),
        preserveAspectRatio="none",
        style="image-rendering:pixelated",
        href="data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii"),
    )
    svg.polyline(an.tool, stroke="#1f77b4", stroke_width="3", stroke_linecap="round")
    r = 1.5 * spec.cell_size
    for p in an.keypoints:
        svg.circle(p, r, fill="none", stroke="#2ca02c", stroke_width="1")
    for p in an.filtered:
        svg.circle(p, r, fill="#2ca02c")
    a = an.a_star
    svg.line(a.origin, a.origin + a.direction * a.magnitude, stroke="#ff7f0e", stroke_width="2")
    svg.circle(an.p_star, 2 * r, fill="#d62728", stroke="white", stroke_width="1")
    return svg.text()


def render(spec: RenderSpec, **data) -> Path:
    """Write one figure described by ``spec``; returns the path written."""
    if spec.kind == "grid_heatmap":
        text = render_grid_heatmap(data["analysis"], spec.scale)
    elif spec.kind == "trajectory_overlay":
        text = render_trajectory(data["observation"], data["log"], spec.scale)
    elif "frame" in data:
        text = render_frame(data["observation"], data["frame"], spec.scale)
    else:
        text = render_scene_frame(data["observation"], data["obj"], data["tool_poses"], data.get("ee"), spec.scale)
    spec.path.write_text(text, encoding="utf-8")
    return spec.path


# --------------------------------------------------------------------------- command line

EXIT_OK = 0
EXIT_GOAL = 1  # ran to completion but the goal was not reached
EXIT_USAGE = 2  # parse, schema, invalid parameter, underspecified task
EXIT_GEOMETRY = 3
EXIT_IO = 4
EXIT_PLAN = 5  # infeasible, unreachable or invalid plan
EXIT_BACKEND = 6
EXIT_TIMEOUT = 7

_EXIT_CODES = (
    ((E.ParseError, E.SchemaError, E.InvalidParameter, E.UnderspecifiedTask), EXIT_USAGE),
    ((E.Infeasible, E.Unreachable, E.InvalidPlan), EXIT_PLAN),
    ((E.BackendUnavailable, E.MalformedPlanText), EXIT_BACKEND),
    ((E.Timeout,), EXIT_TIMEOUT),
    (
        (
            E.DegenerateVector,
            E.DegenerateContour,
            E.AmbiguousProjection,
            E.AmbiguousInterior,
            E.NoExit,
            E.OutOfGrid,
            E.NoCandidate,
            E.AnalysisError,
            E.ToolTooShort,
            E.CannotEnter,
            E.ContactJam,
            E.AlreadyAligned,
        ),
        EXIT_GEOMETRY,
    ),
    ((OSError,), EXIT_IO),
)


def exit_code(err: BaseException) -> int:
    """Documented exit code of an error; step failures report their cause."""
    if isinstance(err, E.StepFailed):
        return exit_code(err.cause)
    for types, code in _EXIT_CODES:
        if isinstance(err, types):
            return code
    return EXIT_GEOMETRY if isinstance(err, E.TomError) else 1


@dataclass
class Context:
    config: dict
    seed: int
    strict: bool


def _context(args) -> Context:
    config = {}
    if args.config:
        config = read_json(args.config)
        check_schema(config, "scene", not args.lenient, ref="params")
    return Context(config, args.seed, not args.lenient)


def _scene(ctx: Context, path) -> tuple[Observation, str, SimParams]:
    doc = read_json(path)
    obs, instruction, _ = scene_from_doc(doc, ctx.strict)
    params = params_from_dict(merge_params(doc.get("params"), ctx.config))
    return obs, instruction, params


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_json(doc) -> None:
    sys.stdout.write(dumps(doc))


def _grid_for(tool, r_obj: float, cell: float, size: Optional[int]) -> Optional[GridSpec]:
    """Square grid of ``size`` cells on a side covering the automatic grid extent."""
    from .manoeuvrability import auto_grid

    if not size:
        return None
    if size < 8:
        raise E.InvalidParameter("--grid-size must be at least 8")
    auto = auto_grid(tool, r_obj, cell)
    side = max(auto.width, auto.height) * auto.cell_size
    c = auto.origin + Vec2(auto.width, auto.height) * (auto.cell_size / 2)
    return GridSpec(c - Vec2(side / 2, side / 2), side / size, size, size)


def cmd_analyze(args, ctx: Context) -> int:
    if (args.tool is None) == (args.stock is None):
        raise E.InvalidParameter("give exactly one of TOOL or --stock")
    if args.tool is not None:
        tool_id, shape = load_tool(args.tool, ctx.strict)
    else:
        tool_id, shape = args.stock, STOCK[args.stock]
    base = params_from_dict(ctx.config).analysis
    cell = base.cell_size if args.grid_cell is None else args.grid_cell
    if not cell > 0:
        raise E.InvalidParameter("--grid-cell must be positive")
    if not args.r_obj > 0:
        raise E.InvalidParameter("--r-obj must be positive")
    params = replace(base, cell_size=cell, grid=_grid_for(shape, args.r_obj, cell, args.grid_size))
    t0 = time.perf_counter()
    an = analyze_tool(shape, args.r_obj, tuple(args.v_target), params)
    runtime = time.perf_counter() - t0
    out = _out_dir(args.out)
    write_pgm(out / "grid.pgm", an.grid.values)
    (out / "grid.svg").write_text(render_grid_heatmap(an, args.scale), encoding="utf-8")
    doc = an.to_dict()
    doc.update(tool_id=tool_id, runtime_s=runtime)
    _print_json(doc)
    return EXIT_OK


def _instruction(args, scene_instruction: str) -> str:
    text = args.instruction if args.instruction is not None else scene_instruction
    if not text or not text.strip():
        raise E.UnderspecifiedTask("no instruction given in the scene file or with --instruction")
    return text


def _make_plan(obs: Observation, instruction: str, backend: str) -> tuple[Plan, object]:
    req = embed(instruction, obs)
    plan = plan_rule_based(req) if backend == "rules" else plan_llm(req, BackendConfig.from_env())
    report = validate_plan(plan, obs)
    if not report.ok:
        raise E.InvalidPlan("; ".join(v.message for v in report.violations), report)
    return plan, report


def cmd_plan(args, ctx: Context) -> int:
    obs, instruction, _ = _scene(ctx, args.scene)
    plan, report = _make_plan(obs, _instruction(args, instruction), args.backend)
    _print_json(plan.to_json() if args.backend == "rules" else {"plan": plan.to_json(), "report": report.to_json()})
    return EXIT_OK


def goal_reached(world: WorldState, goal_tol: float) -> bool:
    """Within goal_tol of the target, or clear of the walls when there is no target."""
    obs = world.observation
    if obs.target is not None:
        return (world.obj - obs.target).norm() <= goal_tol
    if obs.walls:
        return wall_hull(obs.walls).distance(Point(*world.obj)) >= world.r_obj
    return False


def write_run_artifacts(out: Path, obs: Observation, log_: RunLog, summary: dict, svg_every: int = 0) -> None:
    (out / "run.csv").write_text(log_.to_csv(), encoding="utf-8")
    doc = dict(metrics(log_)) if log_.frames else {}
    doc.update(summary)
    (out / "metrics.json").write_text(dumps(doc), encoding="utf-8")
    (out / "trajectory.svg").write_text(render_trajectory(obs, log_), encoding="utf-8")
    if svg_every > 0 and log_.frames:
        picked = [f for f in log_.frames if f.t % svg_every == 0]
        if picked[-1] is not log_.frames[-1]:
            picked.append(log_.frames[-1])
        for f in picked:
            (out / f"frame_{f.t:06d}.svg").write_text(render_frame(obs, f), encoding="utf-8")


def cmd_run(args, ctx: Context) -> int:
    obs, instruction, params = _scene(ctx, args.scene)
    if args.svg_every < 0:
        raise E.InvalidParameter("--svg-every must be non-negative")
    if args.plan is not None:
        plan = load_plan(args.plan, ctx.strict)
    else:
        plan, _ = _make_plan(obs, _instruction(args, instruction), args.backend)
    out = _out_dir(args.out)
    world = WorldState.initial(obs)
    err = None
    try:
        log_ = run_plan(world, plan, params)
    except E.StepFailed as e:
        err, log_ = e, e.log or RunLog()
    code = exit_code(err) if err is not None else (EXIT_OK if goal_reached(world, params.interact.goal_tol) else EXIT_GOAL)
    summary = {
        "exit_code": code,
        "goal_reached": code == EXIT_OK,
        "error": None if err is None else str(err),
        "plan": plan.to_json(),
    }
    write_run_artifacts(out, obs, log_, summary, args.svg_every)
    if err is not None:
        log.error("%s", err)
    return code


def cmd_gen(args, ctx: Context) -> int:
    if args.count < 1:
        raise E.InvalidParameter("--count must be at least 1")
    scenarios = generate_scenarios(ctx.seed, args.count)
    out = _out_dir(args.out)
    passed, cases, failures = 0, {}, []
    for i, sc in enumerate(scenarios):
        scene_path = out / f"scenario_{i:04d}.json"
        plan_path = out / f"scenario_{i:04d}.plan.json"
        save_scene(scene_path, sc.observation, sc.instruction)
        plan_path.write_text(sc.expected_plan.dumps(), encoding="utf-8")
        # check what was written, not what is in memory
        obs, _, _ = load_scene(scene_path)
        report = validate_plan(load_plan(plan_path), obs)
        if report.clean and obs == sc.observation:
            passed += 1
        else:
            failures.append({"index": i, "report": report.to_json()})
        cases[sc.case] = cases.get(sc.case, 0) + 1
    summary = {"seed": ctx.seed, "count": args.count, "pass": passed, "cases": cases, "failures": failures}
    (out / "summary.json").write_text(dumps(summary), encoding="utf-8")
    _print_json({k: summary[k] for k in ("seed", "count", "pass", "cases")})
    return EXIT_OK if passed == args.count else EXIT_GOAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tomkit", description="Tool affordance analysis, planning and simulation.")
    p.add_argument("--config", help="JSON file with a params object (interact, stepping, sim, analysis)")
    p.add_argument("--seed", type=int, default=0, help="random seed (gen)")
    p.add_argument("--verbose", "-v", action="count", default=0)
    p.add_argument("--lenient", action="store_true", help="warn about unknown keys instead of failing")
    sub = p.add_subparsers(dest="verb", required=True)

    a = sub.add_parser("analyze", help="affordances, manoeuvrability grid and p* of one tool")
    a.add_argument("tool", nargs="?", help="tool JSON file")
    a.add_argument("--stock", choices=sorted(STOCK), help="use a built-in tool instead of a file")
    a.add_argument("--r-obj", type=float, default=0.02)
    a.add_argument("--v-target", type=float, nargs=2, default=(0.0, 1.0), metavar=("X", "Y"))
    a.add_argument("--grid-cell", type=float, default=None, help="cell size in meters (default 0.002)")
    a.add_argument("--grid-size", type=int, default=None, help="square grid with this many cells per side")
    a.add_argument("--scale", type=float, default=None, help="heatmap pixels per meter")
    a.add_argument("--out", default=".")
    a.set_defaults(func=cmd_analyze)

    pl = sub.add_parser("plan", help="plan motion functions for a scene")
    pl.add_argument("scene")
    pl.add_argument("--instruction")
    pl.add_argument("--backend", choices=("rules", "llm"), default="rules")
    pl.set_defaults(func=cmd_plan)

    r = sub.add_parser("run", help="plan (or load a plan) and simulate it")
    r.add_argument("scene")
    r.add_argument("--plan", help="plan JSON file; planned from the instruction when absent")
    r.add_argument("--instruction")
    r.add_argument("--backend", choices=("rules", "llm"), default="rules")
    r.add_argument("--out", default=".")
    r.add_argument("--svg-every", type=int, default=0, help="write a frame SVG every N frames (0: none)")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gen", help="random scenarios with expected plans")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--out", default=".")
    g.set_defaults(func=cmd_gen)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args, _context(args))
    except (E.TomError, OSError) as e:
        code = exit_code(e)
        print(f"tomkit: {type(e).__name__}: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
