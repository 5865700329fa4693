import math
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tomkit import controller as ctl
from tomkit.affordance import ExitSpec, compute_exit
from tomkit.errors import AlreadyAligned, CannotEnter, InvalidParameter, ToolTooShort, Unreachable
from tomkit.geometry import Pose2, Vec2, normalize_angle, segment
from tomkit.manoeuvrability import analyze_tool
from tomkit.scenes import corner_walls
from tomkit.tools import HOOK, STICK

R = 0.02
STICK_AN = analyze_tool(STICK, R, (0.0, 1.0))


@pytest.fixture(scope="module")
def stick():
    return STICK_AN


@pytest.fixture(scope="module")
def hook_tip():
    an = analyze_tool(HOOK, R, (0.0, 1.0), affordance=(1, "left"))
    return ctl.stepping_analysis(an)


def with_p_star(an, p):
    return replace(an, p_star=Vec2(*p))


# --------------------------------------------------------------------------- interact_poses


def test_interact_radius_is_grasp_to_p_star(stick):
    an = with_p_star(stick, (0.15, 0.0))
    plan = ctl.interact_poses(an, (0.0, 0.0), (0.3, 0.0), (-0.3, 0.0), (0.0, -0.5))
    assert plan.r == pytest.approx(0.15, abs=1e-12)
    assert plan.circle_start.radius == plan.circle_end.radius == plan.r


def test_interact_start_is_circle_point_nearest_base(stick):
    obj, goal, base = Vec2(0.3, 0.0), Vec2(-0.3, 0.0), Vec2(0.0, -0.5)
    plan = ctl.interact_poses(stick, (0.0, 0.0), obj, goal, base)
    r = Vec2(*stick.p_star).norm()
    for centre, pose in ((obj, plan.start_pose), (goal, plan.end_pose)):
        d = base - centre
        expect = centre + d * (r / d.norm())
        assert (pose.position - expect).norm() < 1e-9
        assert abs((pose.position - centre).norm() - r) < 1e-6
        # the tool frame puts p* on the circle centre
        assert (pose.apply(stick.p_star) - centre).norm() < 1e-9


def test_interact_degenerate_goal(stick):
    with pytest.raises(InvalidParameter):
        ctl.interact_poses(stick, (0.0, 0.0), (0.3, 0.0), (0.3, 0.0), (0.0, -0.5))


def test_interact_tool_too_short(stick):
    with pytest.raises(ToolTooShort):
        ctl.interact_poses(with_p_star(stick, (0.01, 0.0)), (0.0, 0.0), (0.3, 0.0), (-0.3, 0.0), (0.0, -0.5))


def test_interact_unreachable(stick):
    with pytest.raises(Unreachable):
        ctl.interact_poses(stick, (0.0, 0.0), (0.3, 0.0), (-0.3, 0.0), (0.0, -0.5), reach=0.2)


@pytest.mark.parametrize("goal", [(-0.3, 0.0), (0.3, 0.4), (0.0, -0.2)])
def test_push_mode_faces_goal(stick, goal):
    obj = Vec2(0.3, 0.0)
    plan = ctl.interact_poses(stick, (0.0, 0.0), obj, goal, (0.0, -0.5), mode="push")
    assert (plan.start_pose.apply(stick.p_star) - obj).norm() < 1e-9
    n = ctl.contact_normal(stick).rotated(plan.start_pose.theta)
    g = (Vec2(*goal) - obj).unit()
    assert n.dot(g) == pytest.approx(1.0, abs=1e-9)


# --------------------------------------------------------------------------- align_tool_pose


@pytest.mark.parametrize("anchor", [Pose2((0.0, -0.5), 0.0), Pose2((0.6, 0.0), 1.0), Pose2((0.3, 0.4), -2.0)])
def test_align_matches_rotation_sweep(stick, anchor):
    obj = Vec2(0.3, 0.0)
    pose = ctl.align_tool_pose(stick, obj, anchor)
    assert (pose.apply(stick.p_star) - obj).norm() < 1e-9
    best = ctl.alignment_cost(pose, stick, obj, anchor)
    sweep = min(
        ctl.alignment_cost(ctl.pose_placing(Vec2(*stick.p_star), obj, math.radians(d)), stick, obj, anchor)
        for d in range(360)
    )
    assert best <= sweep + 1e-12
    r = Vec2(*stick.p_star).norm()
    assert sweep - best <= r * math.radians(0.5) ** 2  # a 1 degree grid is off by at most half a step


def test_align_deterministic(stick):
    a = Pose2((0.0, -0.5), 0.3)
    assert ctl.align_tool_pose(stick, (0.3, 0.0), a) == ctl.align_tool_pose(stick, (0.3, 0.0), a)


# --------------------------------------------------------------------------- interact_step


def _plan(end: Pose2) -> ctl.InteractPlan:
    c = ctl.Circle(end.position, 0.1)
    return ctl.InteractPlan(end, end, c, c, 0.1)


def test_interact_step_full_gain():
    end = Pose2((0.2, 0.1), 0.5)
    nxt = ctl.interact_step(Pose2((0.0, 0.0), 0.0), _plan(end), 1.0)
    assert nxt.position == pytest.approx(end.position)
    assert nxt.theta == 0.0


def test_interact_step_half_gain():
    nxt = ctl.interact_step(Pose2((0.0, 0.0), 0.0), _plan(Pose2((0.2, 0.0), 0.0)), 0.5)
    assert nxt.position.x == pytest.approx(0.1, abs=1e-12)


def test_interact_step_rotates_at_end():
    end = Pose2((0.2, 0.0), 1.0)
    nxt = ctl.interact_step(Pose2((0.2, 0.0), 0.0), _plan(end), 0.5, rot_rate=math.radians(15))
    assert nxt.position == pytest.approx(end.position)
    assert nxt.theta == pytest.approx(math.radians(15))


def test_interact_step_bad_gain():
    with pytest.raises(InvalidParameter):
        ctl.interact_step(Pose2((0.0, 0.0), 0.0), _plan(Pose2((0.2, 0.0), 0.0)), 0.0)


coord = st.floats(-1.0, 1.0, allow_nan=False)


@given(coord, coord, coord, coord, st.floats(0.01, 1.0))
def test_interact_step_contraction(x, y, ex, ey, k):
    end = Pose2((ex, ey), 0.0)
    cur = Pose2((x, y), 0.0)
    nxt = ctl.interact_step(cur, _plan(end), k)
    before = (cur.position - end.position).norm()
    after = (nxt.position - end.position).norm()
    assert after == pytest.approx((1 - k) * before, abs=1e-12)


# --------------------------------------------------------------------------- step_trigger and rotation_angle


@pytest.mark.parametrize("tau,u", [(0, 1), (1, 0), (7, 0), (10, 1)])
def test_step_trigger(tau, u):
    assert ctl.step_trigger(tau) == u


@given(st.integers(0, 10**6))
def test_step_trigger_alternates(tau):
    assert ctl.step_trigger(tau) + ctl.step_trigger(tau + 1) == 1


def test_step_trigger_negative():
    with pytest.raises(InvalidParameter):
        ctl.step_trigger(-1)


@pytest.mark.parametrize(
    "phi,direction,obj,rot,expect",
    [
        (0.3, ctl.ANTICLOCKWISE, math.pi / 6, math.pi / 36, -7 * math.pi / 36),
        (0.0, ctl.CLOCKWISE, math.pi / 6, math.pi / 36, 29 * math.pi / 36),
        (1.0, ctl.ANTICLOCKWISE, 0.4, 0.0, -0.4),
    ],
)
def test_rotation_angle_examples(phi, direction, obj, rot, expect):
    assert ctl.rotation_angle(phi, direction, obj, rot) == pytest.approx(expect, abs=1e-12)


@given(st.floats(-10, 10), st.floats(0, math.pi), st.floats(0.001, 1.0), st.integers(-3, 3))
def test_rotation_angle_clockwise_periodic(phi, obj, rot, n):
    a = ctl.rotation_angle(phi, ctl.CLOCKWISE, obj, rot)
    b = ctl.rotation_angle(phi + 2 * math.pi * n, ctl.CLOCKWISE, obj, rot)
    assert abs(normalize_angle(a - b)) < 1e-9
    assert -math.pi < b <= math.pi


def test_rotation_angle_rejects_unknown_direction():
    with pytest.raises(InvalidParameter):
        ctl.rotation_angle(0.0, "sideways", 0.1, 0.1)


# --------------------------------------------------------------------------- stepping_step

EXIT_X = ExitSpec(Vec2(1.0, 0.0), 0.1, Vec2(1.0, 0.0))


def _state(stick_an, ee, obj, tau):
    return ctl.SteppingState(
        tau=tau,
        ee_pose=ee,
        obj=Vec2(*obj),
        contact=True,
        angle_obj=ctl.object_angle(stick_an, ee, obj),
        direction=ctl.CLOCKWISE,
        phi=ctl.tool_angle(ee, stick_an),
    )


def test_reposition_step(stick):
    an = with_p_star(stick, (0.1, 0.0))
    st_ = _state(an, Pose2((0.0, 0.0), 0.0), (0.12, 0.0), 0)
    nxt, new = ctl.stepping_step(st_, EXIT_X, an, ctl.SteppingParams(k=0.5))
    assert nxt.position.x == pytest.approx(0.01, abs=1e-12)
    assert nxt.position.y == pytest.approx(0.0, abs=1e-12)
    assert nxt.theta == 0.0
    assert new.tau == 1


def test_rotation_drag_step(stick):
    an = with_p_star(stick, (0.1, 0.0))
    st_ = _state(an, Pose2((0.05, 0.1), 0.0), (0.2, 0.1), 1)
    assert st_.phi == 0.0
    params = ctl.SteppingParams(w=1.0)
    nxt, new = ctl.stepping_step(st_, EXIT_X, an, params)
    assert nxt.position.x - 0.05 == pytest.approx(0.05, abs=1e-12)
    assert nxt.position.y - 0.1 == pytest.approx(0.0, abs=1e-12)
    d_phi = ctl.rotation_angle(0.0, ctl.CLOCKWISE, st_.angle_obj, params.angle_rot)
    assert normalize_angle(nxt.theta - 0.0) == pytest.approx(normalize_angle(-d_phi), abs=1e-12)
    assert new.tau == 2


def test_stepping_already_aligned(stick):
    an = with_p_star(stick, (0.1, 0.0))
    st_ = _state(an, Pose2((0.0, 0.0), 0.0), (0.12, 0.0), 0)
    up = ExitSpec(Vec2(0.0, 1.0), 0.1, Vec2(0.0, 1.0))  # the stick's a* already points up
    with pytest.raises(AlreadyAligned):
        ctl.stepping_step(st_, up, an)


@given(st.floats(-0.05, 0.05), st.floats(-0.05, 0.05), st.floats(0.1, 1.0))
def test_reposition_contracts_p_star_gap(dx, dy, k):
    an = with_p_star(STICK_AN, (0.1, 0.0))
    ee = Pose2((0.0, 0.0), 0.0)
    obj = Vec2(0.1 + dx, dy)
    nxt, _ = ctl.stepping_step(_state(an, ee, obj, 0), EXIT_X, an, ctl.SteppingParams(k=k))
    before = (ee.apply(an.p_star) - obj).norm()
    after = (nxt.apply(an.p_star) - obj).norm()
    assert after == pytest.approx((1 - k) * before, abs=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 40))
def test_alternation_from_command_sequence(tau):
    an = with_p_star(STICK_AN, (0.1, 0.0))
    ee = Pose2((0.0, 0.0), 0.0)
    st_ = _state(an, ee, (0.11, 0.01), tau)
    nxt, _ = ctl.stepping_step(st_, EXIT_X, an)
    if tau % 2 == 0:
        assert nxt.theta == ee.theta
    else:
        d_phi = ctl.rotation_angle(st_.phi, st_.direction, st_.angle_obj, math.radians(10))
        assert normalize_angle(nxt.theta - ee.theta) == pytest.approx(normalize_angle(-d_phi), abs=1e-12)


def test_stepping_params_validated():
    with pytest.raises(InvalidParameter):
        ctl.SteppingParams(k=0.0)
    with pytest.raises(InvalidParameter):
        ctl.SteppingParams(angle_rot=0.0)


# --------------------------------------------------------------------------- stepping_init


def _u_walls(width, height=0.15):
    a, b = Vec2(0.0, 0.0), Vec2(width, 0.0)
    return [segment(a, b), segment(a, Vec2(0.0, height)), segment(b, Vec2(width, height))]


def _tip_world(an, pose):
    return pose.apply(an.tool[-2]), pose.apply(an.tool[-1])


def test_init_u_wall_tip_parallel_to_bottom(hook_tip):
    walls = _u_walls(0.2)
    obj = Vec2(0.1, 0.05)
    ex = compute_exit(walls, obj, obj)
    st_ = ctl.stepping_init(hook_tip, walls, ex, obj)
    a, b = _tip_world(hook_tip, st_.ee_pose)
    tip = (b - a).unit()
    assert abs(tip.cross(Vec2(1.0, 0.0))) < 1e-9
    assert (st_.ee_pose.apply(hook_tip.p_star) - obj).norm() < 1e-9
    # the tip affordance faces into the pocket, away from the bottom wall
    assert ctl.tip_direction_world(hook_tip, st_.ee_pose).y > 0.99
    assert st_.tau == 0 and 0.0 <= st_.angle_obj <= math.pi


@pytest.mark.parametrize("angle", [90, 65])
def test_init_corner_direction_sign(hook_tip, angle):
    walls = corner_walls(angle)
    obj = Vec2(0.35, 0.22)
    ex = compute_exit(walls, obj, obj)
    st_ = ctl.stepping_init(hook_tip, walls, ex, obj)
    a, b = _tip_world(hook_tip, st_.ee_pose)
    w0 = walls[0][1] - walls[0][0]
    assert abs((b - a).unit().cross(w0.unit())) < 1e-9
    a_tip = ctl.tip_direction_world(hook_tip, st_.ee_pose)
    expect = ctl.ANTICLOCKWISE if a_tip.cross(ex.direction) > 0 else ctl.CLOCKWISE
    assert st_.direction == expect == ctl.ANTICLOCKWISE


def test_init_narrow_opening(hook_tip):
    walls = _u_walls(0.03)
    obj = Vec2(0.015, 0.05)
    ex = compute_exit(walls, obj, obj)
    with pytest.raises(CannotEnter):
        ctl.stepping_init(hook_tip, walls, ex, obj)


def test_stepping_analysis_moves_p_star_to_tip(hook_tip):
    tip = ctl.tip_affordance(hook_tip)
    assert tip.segment_index == len(HOOK) - 2
    p = Vec2(*hook_tip.p_star)
    assert abs((p - tip.origin).dot(tip.direction)) > 0
    assert (p - tip.origin).norm() <= R + 1e-12
