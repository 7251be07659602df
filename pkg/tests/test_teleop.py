import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gesturepipe.teleop import (MODE_TABLE, Command, FollowGains, GestureMap, GestureMapError, Mode, TeleopController,
                                TeleopParams, TeleopState, VehicleLimits, VehicleState, follow_control,
                                step_state_machine, vehicle_step, write_log_csv)

GMAP = GestureMap.load()
BY_CMD = {}
for g, c in GMAP.table.items():
    BY_CMD.setdefault(c, g)

# Independent statement of the intended mode graph.
EXPECTED = {
    Mode.IDLE: {"enter_teleop": Mode.TELEOP, "engage_follow": Mode.FOLLOW},
    Mode.TELEOP: {"exit_to_idle": Mode.IDLE, "engage_follow": Mode.FOLLOW},
    Mode.FOLLOW: {"disengage_follow": Mode.IDLE, "exit_to_idle": Mode.IDLE, "enter_teleop": Mode.TELEOP},
    Mode.ESTOP: {"reset": Mode.IDLE},
}


def expected_mode(mode, command):
    if command == "e_stop":
        return Mode.ESTOP
    return EXPECTED[mode].get(command, mode)


def run(gestures, state=None, params=TeleopParams()):
    state = state or TeleopState()
    cmds = []
    for g in gestures:
        state, cmd = step_state_machine(state, g, GMAP, params)
        cmds.append(cmd)
    return state, cmds


def test_default_map_valid():
    assert set(GMAP.table) == set(range(1, 19))
    assert BY_CMD["engage_follow"] != BY_CMD["disengage_follow"]


def test_map_validation(tmp_path):
    t = dict(GMAP.table)
    del t[5]
    with pytest.raises(GestureMapError):
        GestureMap(t)
    t = dict(GMAP.table)
    t[5] = "fly"
    with pytest.raises(GestureMapError):
        GestureMap(t)
    t = {g: "stop" for g in range(1, 19)}
    with pytest.raises(GestureMapError):
        GestureMap(t)
    (tmp_path / "m.json").write_text("{not json")
    with pytest.raises(GestureMapError):
        GestureMap.load(tmp_path / "m.json")
    with pytest.raises(GestureMapError):
        GestureMap.from_dict({"x": "stop"})
    assert GestureMap.from_dict(GMAP.to_dict()) == GMAP


def test_idle_engage_follow():
    s, _ = run([BY_CMD["engage_follow"]])
    assert s.mode == Mode.FOLLOW


def test_estop_absorbing():
    s, _ = run([BY_CMD["enter_teleop"], None, BY_CMD["e_stop"], None, BY_CMD["forward"]])
    assert s.mode == Mode.ESTOP and s.drive == "stop"
    for g in range(1, 19):
        if GMAP[g] != "reset":
            s2, cmd = step_state_machine(TeleopState(Mode.ESTOP), g, GMAP)
            assert s2.mode == Mode.ESTOP and cmd.v == 0 and cmd.omega == 0
    s, _ = run([BY_CMD["reset"]], TeleopState(Mode.ESTOP))
    assert s.mode == Mode.IDLE


def test_model_check_all_modes_and_inputs():
    """4 modes x 19 inputs against the independent mode graph."""
    for mode in Mode:
        for g in range(0, 19):
            for level in (1, 2, 4):
                s0 = TeleopState(mode, "forward" if mode == Mode.TELEOP else "stop", level)
                s1, cmd = step_state_machine(s0, g, GMAP)
                if g == 0:
                    assert s1.mode == mode and cmd.name == "none"
                    continue
                c = GMAP[g]
                assert cmd.name == c
                assert s1.mode == expected_mode(mode, c)
                if s1.mode != Mode.TELEOP:
                    assert (cmd.v, cmd.omega) == (0.0, 0.0)
                if c == "speed_up" and mode == Mode.TELEOP:
                    assert s1.speed_level == min(level + 1, 4)
                if c == "slow_down" and mode == Mode.TELEOP:
                    assert s1.speed_level == max(level - 1, 1)
    # table and oracle agree entry by entry
    for (mode, c), nxt in MODE_TABLE.items():
        assert EXPECTED[mode][c] == nxt
    assert sum(len(v) for v in EXPECTED.values()) == len(MODE_TABLE)


@given(st.lists(st.one_of(st.none(), st.integers(0, 18)), max_size=1000))
def test_random_streams_follow_table(stream):
    s = TeleopState()
    for g in stream:
        prev = s
        s, cmd = step_state_machine(s, g, GMAP)
        assert s.mode in set(Mode)
        if g and g != prev.last_gesture:
            assert s.mode == expected_mode(prev.mode, GMAP[g])
        else:
            assert s.mode == prev.mode
        if s.mode != Mode.TELEOP:
            assert cmd.v == 0 and cmd.omega == 0
        assert 1 <= s.speed_level <= 4


def test_edge_triggered_speed():
    s, _ = run([BY_CMD["enter_teleop"], None] + [BY_CMD["speed_up"]] * 5)
    assert s.speed_level == 3
    s, _ = run([BY_CMD["enter_teleop"]] + [BY_CMD["speed_up"], None] * 5)
    assert s.speed_level == 4
    s, _ = run([BY_CMD["enter_teleop"]] + [BY_CMD["slow_down"], None] * 5)
    assert s.speed_level == 1


def test_latched_vs_momentary():
    seq = [BY_CMD["enter_teleop"], None, BY_CMD["forward"], None, None]
    _, cmds = run(seq)
    assert cmds[-1].v == 1.0
    _, cmds = run(seq, params=TeleopParams(latched=False))
    assert cmds[2].v == 1.0 and cmds[-1].v == 0.0


def test_invalid_gesture():
    with pytest.raises(ValueError):
        step_state_machine(TeleopState(), 19, GMAP)


def test_vehicle_basics():
    v = vehicle_step(VehicleState(1, 2, 0.3), Command("stop"), 0.5)
    assert (v.x, v.y) == (1, 2)
    v = vehicle_step(VehicleState(), (1.0, 0.0), 1.0)
    assert v.x == 1.0 and v.y == 0.0
    v = vehicle_step(VehicleState(), (10.0, -5.0), 0.1)
    assert v.v == 2.0 and v.omega == -1.0
    with pytest.raises(ValueError):
        vehicle_step(VehicleState(), (1, 0), 0.0)


def test_vehicle_circle_oracle():
    v, w, dt = 1.2, 0.4, 0.01
    r = v / w
    s = VehicleState()
    for k in range(1, 101):
        s = vehicle_step(s, (v, w), dt)
        th = w * dt * k
        assert abs(s.x - r * math.sin(th)) < 1e-6 and abs(s.y - r * (1 - math.cos(th))) < 1e-6
        assert abs(math.hypot(s.x, s.y - r) - r) < 1e-6


def test_follow_control_law():
    assert follow_control(VehicleState(), (3.0, 0.0)) == (0.0, 0.0)
    v, w = follow_control(VehicleState(), (4.0, 0.0), FollowGains(k_range=0.5))
    assert v == pytest.approx(0.5) and w == 0
    v, w = follow_control(VehicleState(), (0.0, 10.0))
    assert v == 2.0 and w == 1.0
    assert follow_control(VehicleState(), (1.0, 0.0))[0] == 0.0
    with pytest.raises(ValueError):
        follow_control(VehicleState(), (np.nan, 0))
    with pytest.raises(ValueError):
        FollowGains(k_range=0)


def test_follow_closed_loop_straight_walker():
    g = FollowGains()
    s = VehicleState()
    dt = 0.1
    errs = []
    for k in range(300):
        leader = (g.standoff + 1.0 * k * dt, 0.0)
        s = vehicle_step(s, follow_control(s, leader, g), dt)
        travelled = s.x
        err = math.hypot(leader[0] - s.x, leader[1] - s.y) - g.standoff
        if travelled >= 3.0:
            errs.append(err)
    assert errs and max(abs(e) for e in errs) <= 0.5


@given(st.floats(0.1, 1.9), st.floats(-0.5, 0.5))
def test_follow_bounded_for_slower_leader(speed, heading):
    g = FollowGains()
    s = VehicleState()
    dt = 0.1
    for k in range(400):
        t = k * dt
        leader = (g.standoff + speed * t * math.cos(heading), speed * t * math.sin(heading))
        s = vehicle_step(s, follow_control(s, leader, g), dt)
    err = math.hypot(leader[0] - s.x, leader[1] - s.y) - g.standoff
    assert abs(err) < speed / g.k_range + 0.2


def test_controller_modes_and_log(tmp_path):
    ctl = TeleopController()
    script = [BY_CMD["enter_teleop"]] * 3 + [None] * 2 + [BY_CMD["forward"]] * 10 + [None] * 3
    script += [BY_CMD["engage_follow"]] * 3 + [None] * 20 + [BY_CMD["e_stop"]] * 2 + [BY_CMD["forward"]] * 5
    for k, g in enumerate(script):
        ctl.step(0.1 * k, g, leader=(ctl.vehicle.x + 5.0, ctl.vehicle.y), dt=0.1)
    modes = [r.mode for r in ctl.log]
    assert modes[0] == "teleop" and "follow" in modes and modes[-1] == "estop"
    estop_at = modes.index("estop")
    assert ctl.log[estop_at].v == 0.0
    assert all(r.x == ctl.log[estop_at].x for r in ctl.log[estop_at:])
    write_log_csv(tmp_path / "log.csv", ctl.log)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "t,mode,gesture,command,x,y,heading,v,omega" and len(lines) == len(script) + 1


def test_controller_to_world():
    ctl = TeleopController(vehicle=VehicleState(1.0, 2.0, math.pi / 2))
    assert np.allclose(ctl.to_world((1.0, 0.0)), [1.0, 3.0])


def test_limits_validation():
    with pytest.raises(ValueError):
        VehicleLimits(v_max=0)
    with pytest.raises(ValueError):
        TeleopParams(initial_level=9)
