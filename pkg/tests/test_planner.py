import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Point

from tomkit.errors import (
    BackendUnavailable,
    Infeasible,
    InvalidParameter,
    InvalidPlan,
    MalformedPlanText,
    SchemaError,
    UnderspecifiedTask,
)
from tomkit.geometry import Pose2
from tomkit.planner import (
    Approach,
    BackendConfig,
    Grasp,
    Interact,
    Manipulandum,
    Observation,
    Pass,
    Plan,
    Release,
    RobotSpec,
    Stepping,
    ToolSpec,
    build_prompt,
    embed,
    generate_scenarios,
    handover_zone,
    mirror_observation,
    mirror_plan,
    parse_plan_text,
    plan_llm,
    plan_rule_based,
    validate_plan,
)
from tomkit.tools import HOOK, STICK, Y_HOOK

LEFT = RobotSpec("left", (-0.3, 0.0), 0.5)
RIGHT = RobotSpec("right", (0.3, 0.0), 0.5)


def tool(name, shape, x, y, hook=False):
    return ToolSpec(name, shape, Pose2((x, y), math.pi / 2), kind=name, hook_class=hook)


def scene(block, target, tools, walls=(), hint=None):
    return Observation((LEFT, RIGHT), tuple(tools), Manipulandum(block, 0.02), target, walls, hint)


TWO_TOOLS = scene((0.55, 0.3), (-0.5, 0.3), [tool("stick", STICK, -0.05, 0.1), tool("hook", HOOK, 0.1, 0.1, True)])
ONE_TOOL = scene((0.55, 0.3), (-0.5, 0.3), [tool("stick", STICK, 0.0, 0.1)])
RIGHT_ONLY = scene((0.5, 0.3), (0.2, 0.35), [tool("stick", STICK, 0.35, 0.1), tool("yhook", Y_HOOK, 0.1, 0.1)])
U_WALL = [((0.35, 0.25), (0.5, 0.25)), ((0.35, 0.25), (0.35, 0.4)), ((0.5, 0.25), (0.5, 0.4))]
WALLED = scene((0.425, 0.3), None, [tool("stick", STICK, 0.2, 0.1), tool("hook", HOOK, 0.35, 0.1, True)], U_WALL, (0.425, 0.3))


def plan_for(obs, text="Move the block to the target"):
    return plan_rule_based(embed(text, obs))


def test_embed_contains_block_and_target():
    req = embed("  Push the block to the TARGET ", TWO_TOOLS)
    assert req.get("p_obj") == "0.550000,0.300000"
    assert req.get("p_target") == "-0.500000,0.300000"
    assert req.canonical == "push the block to the target"
    assert req.instruction.startswith("  Push")
    assert "tool.hook.keypoints" in dict(req.embedded)


def test_embed_empty_instruction():
    with pytest.raises(UnderspecifiedTask):
        embed("   ", TWO_TOOLS)


def test_embed_needs_target_or_walls():
    obs = scene((0.1, 0.3), None, [tool("stick", STICK, 0, 0.1)])
    with pytest.raises(UnderspecifiedTask):
        embed("move the block", obs)


def test_embed_deterministic():
    assert embed("move it", TWO_TOOLS).text.encode() == embed("move it", TWO_TOOLS).text.encode()


def test_two_tool_pass_plan():
    plan = plan_for(TWO_TOOLS)
    assert plan.to_text() == (
        "grasp(right, hook); grasp(left, stick); approach(right, hook, block); "
        "pass(right, hook, block, left); approach(left, stick, block); "
        "interact(left, stick, block, target); release(right, hook); release(left, stick)"
    )
    # the pass is followed by the left arm working on the block
    i = plan.steps.index(Pass("right", "hook", "block", "left"))
    assert plan.steps[i + 1 : i + 3] == (Approach("left", "stick"), Interact("left", "stick"))


def test_single_arm_plan_with_two_tools():
    # hand trace: right reaches block and target; stick grasp (0.35,0.1) is 0.112 from base, yhook 0.224
    assert plan_for(RIGHT_ONLY).steps == (
        Grasp("right", "stick"),
        Approach("right", "stick"),
        Interact("right", "stick"),
        Release("right", "stick"),
    )


def test_tool_sharing_plan():
    steps = plan_for(ONE_TOOL).steps
    assert [s.fn for s in steps] == ["grasp", "approach", "pass", "release", "grasp", "approach", "interact", "release"]
    assert steps[3] == Release("right", "stick") and steps[4] == Grasp("left", "stick")


def test_walled_plan_uses_stepping_with_hook():
    steps = plan_for(WALLED, "Drag the block out of the walls").steps
    assert steps == (Grasp("right", "hook"), Approach("right", "hook"), Stepping("right", "hook"), Release("right", "hook"))


def test_walled_without_hook_is_infeasible():
    obs = scene((0.425, 0.3), None, [tool("stick", STICK, 0.2, 0.1)], U_WALL, (0.425, 0.3))
    with pytest.raises(Infeasible):
        plan_for(obs, "drag the block out")


def test_unreachable_block_is_infeasible():
    obs = scene((2.0, 0.3), (0.0, 0.3), [tool("stick", STICK, 0.0, 0.1)])
    with pytest.raises(Infeasible):
        plan_for(obs)


def test_no_tools_is_infeasible():
    with pytest.raises(Infeasible):
        plan_for(scene((0.2, 0.3), (0.1, 0.3), []))


def test_unknown_verb():
    with pytest.raises(UnderspecifiedTask):
        plan_for(TWO_TOOLS, "sing a song")


def test_duplicate_ids_rejected():
    with pytest.raises(SchemaError):
        scene((0, 0.3), (0.1, 0.3), [tool("stick", STICK, 0, 0.1), tool("stick", HOOK, 0.1, 0.1)])


# ---------------------------------------------------------------- validator


def test_interact_without_grasp():
    rep = validate_plan(Plan((Interact("right", "stick"),)), RIGHT_ONLY)
    assert "tool-not-held" in rep.codes()


def test_canonical_plan_has_no_violations():
    rep = validate_plan(plan_for(RIGHT_ONLY), RIGHT_ONLY)
    assert rep.ok and rep.clean and rep.terminal_reached


def test_duplicated_pass_is_flagged():
    steps = list(plan_for(TWO_TOOLS).steps)
    i = next(k for k, s in enumerate(steps) if s.fn == "pass")
    steps.insert(i, steps[i])
    rep = validate_plan(Plan(tuple(steps)), TWO_TOOLS)
    assert "duplicate-step" in rep.codes()
    assert i in rep.redundant and i + 1 in rep.redundant


def test_missing_release_and_unknown_ids():
    rep = validate_plan(Plan((Grasp("right", "stick"), Approach("right", "stick"), Interact("right", "stick"))), RIGHT_ONLY)
    assert "tool-not-released" in rep.codes()
    rep = validate_plan(Plan((Grasp("right", "spoon"), Release("right", "spoon"))), RIGHT_ONLY)
    assert "unknown-tool" in rep.codes()


def test_stepping_needs_hook_class():
    plan = Plan((Grasp("right", "stick"), Approach("right", "stick"), Stepping("right", "stick"), Release("right", "stick")))
    assert "tool-incapable" in validate_plan(plan, WALLED).codes()


def test_handover_requires_overlap():
    far = Observation(
        (RobotSpec("left", (-1, 0), 0.5), RobotSpec("right", (1, 0), 0.5)),
        (tool("stick", STICK, 0.8, 0.1),),
        Manipulandum((1.2, 0.2), 0.02),
        (-1.2, 0.2),
    )
    plan = Plan((Grasp("right", "stick"), Approach("right", "stick"), Pass("right", "stick", "block", "left"), Release("right", "stick")))
    assert "no-handover-zone" in validate_plan(plan, far).codes()
    with pytest.raises(Infeasible):
        plan_for(far)


@pytest.mark.parametrize("obs", [TWO_TOOLS, ONE_TOOL, RIGHT_ONLY, WALLED], ids=["two", "one", "single", "walled"])
def test_rule_plans_are_minimal(obs):
    plan = plan_for(obs, "move the block out")
    assert validate_plan(plan, obs).clean
    for i in range(len(plan.steps)):
        shorter = Plan(plan.steps[:i] + plan.steps[i + 1 :])
        assert not validate_plan(shorter, obs).ok


# ---------------------------------------------------------------- handover zone


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 1.0), st.floats(0.2, 0.8), st.floats(0.2, 0.8), st.floats(-1, 1))
def test_handover_centroid_matches_polygon_oracle(d, r1, r2, ang):
    a = RobotSpec("left", (0.1, -0.2), r1)
    b = RobotSpec("right", (0.1 + d * math.cos(ang), -0.2 + d * math.sin(ang)), r2)
    z = handover_zone(a, b)
    lens = Point(*a.base).buffer(r1, 512).intersection(Point(*b.base).buffer(r2, 512))
    if lens.area < 1e-4:
        return
    assert z is not None
    assert z == pytest.approx((lens.centroid.x, lens.centroid.y), abs=2e-4)


def test_handover_symmetric_example():
    assert handover_zone(LEFT, RIGHT) == pytest.approx((0.0, 0.0))
    assert handover_zone(RobotSpec("left", (0, 0), 0.1), RobotSpec("right", (1, 0), 0.1)) is None


# ---------------------------------------------------------------- text and json


def test_text_roundtrip():
    plan = plan_for(TWO_TOOLS)
    assert parse_plan_text(plan.to_text()) == plan


def test_json_roundtrip():
    plan = plan_for(ONE_TOOL)
    doc = json.loads(plan.dumps())
    assert doc["schema_version"] == 1
    assert Plan.from_json(doc) == plan


def test_json_rejects_unknown_fn():
    with pytest.raises(SchemaError):
        Plan.from_json({"schema_version": 1, "steps": [{"fn": "fly", "arm": "left"}]})


def test_parse_ignores_prose_between_calls():
    plan = parse_plan_text("Sure! First grasp(right, hook); then approach( right , hook, block ).")
    assert plan.steps == (Grasp("right", "hook"), Approach("right", "hook"))


def test_parse_wrong_arity():
    with pytest.raises(MalformedPlanText):
        parse_plan_text("grasp(right)")


# ---------------------------------------------------------------- LLM backend


class _Echo(BaseHTTPRequestHandler):
    reply = ""
    seen = []

    def do_POST(self):
        body = self.rfile.read(int(self.headers["Content-Length"]))
        _Echo.seen.append((json.loads(body), self.headers.get("Authorization")))
        out = json.dumps({"choices": [{"text": _Echo.reply}]}).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *a):
        pass


@pytest.fixture
def backend():
    srv = HTTPServer(("127.0.0.1", 0), _Echo)
    th = threading.Thread(target=srv.serve_forever, daemon=True)
    th.start()
    yield BackendConfig(f"http://127.0.0.1:{srv.server_port}/v1/completions", api_key="k", timeout=5)
    srv.shutdown()
    srv.server_close()


SHARING_TEXT = (
    "grasp(right, stick); approach(right, stick, block); pass(right, stick, block, left); "
    "release(right, stick); grasp(left, stick); approach(left, stick, block); "
    "interact(left, stick, block, target); release(left, stick)"
)


def test_llm_parses_sharing_plan(backend):
    _Echo.reply = SHARING_TEXT
    req = embed("move the block to the target", ONE_TOOL)
    plan = plan_llm(req, backend)
    assert plan == plan_for(ONE_TOOL)
    body, auth = _Echo.seen[-1]
    assert body["prompt"] == build_prompt(req) and "p_obj: 0.550000,0.300000" in body["prompt"]
    assert auth == "Bearer k"


def test_llm_prose_is_malformed(backend):
    _Echo.reply = "I would push the block gently to the left."
    with pytest.raises(MalformedPlanText) as err:
        plan_llm(embed("move the block", ONE_TOOL), backend)
    assert err.value.raw == _Echo.reply


def test_llm_unknown_tool_is_invalid(backend):
    _Echo.reply = "grasp(right, spoon); approach(right, spoon, block); interact(right, spoon, block, target); release(right, spoon)"
    with pytest.raises(InvalidPlan) as err:
        plan_llm(embed("move the block", ONE_TOOL), backend)
    assert "unknown-tool" in err.value.report.codes()


def test_llm_unreachable_backend():
    cfg = BackendConfig("http://127.0.0.1:9/none", timeout=1)
    with pytest.raises(BackendUnavailable):
        plan_llm(embed("move the block", ONE_TOOL), cfg)


def test_backend_from_env(monkeypatch):
    monkeypatch.delenv("TOM_LLM_ENDPOINT", raising=False)
    with pytest.raises(BackendUnavailable):
        BackendConfig.from_env()
    monkeypatch.setenv("TOM_LLM_ENDPOINT", "http://x")
    monkeypatch.setenv("TOM_LLM_KEY", "secret")
    cfg = BackendConfig.from_env()
    assert cfg.api_key == "secret" and cfg.timeout == 30.0


# ---------------------------------------------------------------- scenarios


def test_generated_batch_validates():
    batch = generate_scenarios(1, 200)
    assert len(batch) == 200
    for sc in batch:
        rep = validate_plan(sc.expected_plan, sc.observation)
        assert rep.clean, (sc.expected_plan.to_text(), rep)
    assert {sc.case for sc in batch} >= {"single-arm", "two-tool", "sharing", "confined"}


def test_generation_deterministic():
    a = generate_scenarios(7, 15)
    b = generate_scenarios(7, 15)
    assert [(s.observation, s.instruction, s.expected_plan) for s in a] == [
        (s.observation, s.instruction, s.expected_plan) for s in b
    ]


def test_generation_count_zero():
    with pytest.raises(InvalidParameter):
        generate_scenarios(1, 0)


@pytest.mark.parametrize("seed", [2, 3])
def test_mirror_swaps_arms_only(seed):
    for sc in generate_scenarios(seed, 40):
        mirrored = mirror_observation(sc.observation)
        assert plan_for(mirrored, sc.instruction) == mirror_plan(sc.expected_plan)


def test_mirror_is_involution():
    obs = TWO_TOOLS
    twice = mirror_observation(mirror_observation(obs))
    assert twice.block == obs.block and [r.base for r in twice.robots] == pytest.approx([r.base for r in obs.robots])
    for t0, t2 in zip(obs.tools, twice.tools):
        for p, q in zip(t0.world_shape(), t2.world_shape()):
            assert p == pytest.approx(q)
    for t0, t1 in zip(obs.tools, mirror_observation(obs).tools):
        for p, q in zip(t0.world_shape(), t1.world_shape()):
            assert q == pytest.approx((-p[0], p[1]))


def test_mirror_plan_pass():
    assert mirror_plan(Plan((Pass("right", "hook", "block", "left"),))).steps == (Pass("left", "hook", "block", "right"),)
