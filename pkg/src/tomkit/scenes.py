"""Stock scenes used by the acceptance suite, the examples and the CLI."""

from __future__ import annotations

import math

from .geometry import Pose2, Vec2
from .planner import Manipulandum, Observation, RobotSpec, ToolSpec
from .tools import HOOK, STICK, Y_HOOK

MOVE = "move the block to the target"
EXTRACT = "drag the block out of the walls"

R_OBJ = 0.02
UPRIGHT = math.pi / 2


def _tool(kind: str, home, theta: float = UPRIGHT) -> ToolSpec:
    shape = {"stick": STICK, "hook": HOOK, "yhook": Y_HOOK}[kind]
    return ToolSpec(kind, shape, Pose2(home, theta), kind=kind, hook_class=kind == "hook")


def single_arm(kind: str) -> Observation:
    """One right arm, one tool; hook and stick push right to left, the Y tool bottom to top."""
    arm = (RobotSpec("right", (0.3, 0.0), 0.55),)
    if kind == "yhook":
        return Observation(arm, (_tool("yhook", (0.15, 0.05)),), Manipulandum((0.3, 0.15), R_OBJ), (0.3, 0.45))
    return Observation(arm, (_tool(kind, (0.25, 0.05)),), Manipulandum((0.45, 0.3), R_OBJ), (0.15, 0.3))


def _dual_arms() -> tuple:
    return (RobotSpec("left", (-0.3, 0.0), 0.5), RobotSpec("right", (0.3, 0.0), 0.5))


def two_tool() -> Observation:
    """Block far right, target far left; each arm owns a tool and the block is passed between them."""
    tools = (_tool("stick", (-0.1, 0.1)), _tool("hook", (0.15, 0.1)))
    return Observation(_dual_arms(), tools, Manipulandum((0.5, 0.3), R_OBJ), (-0.5, 0.3))


def sharing() -> Observation:
    """Same task with a single stick that the arms hand over."""
    return Observation(_dual_arms(), (_tool("stick", (0.0, 0.1)),), Manipulandum((0.5, 0.3), R_OBJ), (-0.5, 0.3))


CORNER_APEX = (0.35, 0.15)
CORNER_WALL = 0.14
CORNER_DEPTH = {90: 0.07, 65: 0.08}


def corner_walls(angle_deg: float, apex=CORNER_APEX, length: float = CORNER_WALL) -> list:
    """Two walls meeting at ``apex`` with the given inner angle, opening upwards; left wall first."""
    h = math.radians(angle_deg) / 2
    c = Vec2(*apex)
    left = (c, c + Vec2(-math.sin(h), math.cos(h)) * length)
    right = (c, c + Vec2(math.sin(h), math.cos(h)) * length)
    return [left, right]


def corner(angle_deg: int, depth: float | None = None) -> Observation:
    """Block trapped in a wall corner, to be extracted with a hook held by the right arm."""
    depth = CORNER_DEPTH.get(angle_deg, 0.07) if depth is None else depth
    walls = corner_walls(angle_deg)
    obj = Vec2(*CORNER_APEX) + Vec2(0.0, depth)
    arm = (RobotSpec("right", (0.3, 0.0), 0.6),)
    return Observation(arm, (_tool("hook", (0.15, 0.05)),), Manipulandum(obj, R_OBJ), None, walls, obj)


SCENES = {
    "hook": (single_arm, ("hook",), MOVE),
    "stick": (single_arm, ("stick",), MOVE),
    "yhook": (single_arm, ("yhook",), MOVE),
    "two_tool": (two_tool, (), MOVE),
    "sharing": (sharing, (), MOVE),
    "corner90": (corner, (90,), EXTRACT),
    "corner65": (corner, (65,), EXTRACT),
}


def stock(name: str) -> tuple[Observation, str]:
    """Observation and instruction of a named stock scene."""
    fn, args, instruction = SCENES[name]
    return fn(*args), instruction
