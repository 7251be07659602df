"""Gesture-driven mode machine, proportional follower and unicycle vehicle.

Modes: Idle, Teleop (gestures drive the vehicle), Follow (the vehicle trails
the tracked operator) and EStop (absorbing until an explicit reset). The
gesture -> command table is data (``data/gesture_map.json`` by default).
Commands fire on the rising edge of a filtered gesture: holding a gesture
does not repeat it.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources

import numpy as np

N_GESTURES = 18


class Mode(str, Enum):
    IDLE = "idle"
    TELEOP = "teleop"
    FOLLOW = "follow"
    ESTOP = "estop"


COMMANDS = (
    "enter_teleop", "exit_to_idle", "forward", "reverse", "turn_left", "turn_right", "stop",
    "speed_up", "slow_down", "engage_follow", "disengage_follow", "e_stop", "reset",
)
DRIVE_COMMANDS = ("forward", "reverse", "turn_left", "turn_right", "stop")
REQUIRED_COMMANDS = ("engage_follow", "disengage_follow", "e_stop", "reset")

# (mode, command) -> next mode; pairs not listed are ignored in that mode.
MODE_TABLE = {
    (Mode.IDLE, "enter_teleop"): Mode.TELEOP,
    (Mode.IDLE, "engage_follow"): Mode.FOLLOW,
    (Mode.TELEOP, "exit_to_idle"): Mode.IDLE,
    (Mode.TELEOP, "engage_follow"): Mode.FOLLOW,
    (Mode.FOLLOW, "disengage_follow"): Mode.IDLE,
    (Mode.FOLLOW, "exit_to_idle"): Mode.IDLE,
    (Mode.FOLLOW, "enter_teleop"): Mode.TELEOP,
    (Mode.ESTOP, "reset"): Mode.IDLE,
}
# commands that act inside Teleop without leaving it
TELEOP_ACTIONS = DRIVE_COMMANDS + ("speed_up", "slow_down")


class GestureMapError(ValueError):
    pass


@dataclass(frozen=True)
class GestureMap:
    table: dict  # gesture id (1..18) -> command name

    def __post_init__(self):
        ids = set(self.table)
        if ids != set(range(1, N_GESTURES + 1)):
            raise GestureMapError(f"map must cover gesture ids 1..{N_GESTURES} exactly")
        bad = {c for c in self.table.values() if c not in COMMANDS}
        if bad:
            raise GestureMapError(f"unknown commands: {sorted(bad)}")
        used = set(self.table.values())
        missing = [c for c in REQUIRED_COMMANDS if c not in used]
        if missing:
            raise GestureMapError(f"map lacks required commands: {missing}")

    def __getitem__(self, gesture: int) -> str:
        return self.table[gesture]

    @classmethod
    def from_dict(cls, d: dict) -> "GestureMap":
        try:
            table = {int(k): str(v) for k, v in d.items()}
        except (TypeError, ValueError) as exc:
            raise GestureMapError(f"malformed gesture map: {exc}") from exc
        return cls(table)

    @classmethod
    def load(cls, path=None) -> "GestureMap":
        if path is None:
            text = resources.files("gesturepipe").joinpath("data/gesture_map.json").read_text()
        else:
            with open(path) as fh:
                text = fh.read()
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise GestureMapError(f"gesture map is not valid JSON: {exc}") from exc

    def to_dict(self) -> dict:
        return {str(k): v for k, v in sorted(self.table.items())}


@dataclass(frozen=True)
class TeleopParams:
    speeds: tuple = (0.5, 1.0, 1.5, 2.0)  # m/s per speed level
    turn_rates: tuple = (0.25, 0.5, 0.75, 1.0)  # rad/s per speed level
    initial_level: int = 2
    latched: bool = True  # drive persists until stop/mode change; False = only while the gesture is held

    def __post_init__(self):
        if len(self.speeds) != len(self.turn_rates) or not self.speeds:
            raise ValueError("speeds and turn_rates need one entry per level")
        if not 1 <= self.initial_level <= len(self.speeds):
            raise ValueError("initial_level out of range")


@dataclass(frozen=True)
class TeleopState:
    mode: Mode = Mode.IDLE
    drive: str = "stop"
    speed_level: int = 2
    last_gesture: int | None = None


@dataclass(frozen=True)
class Command:
    name: str          # command that fired this step, or "none"
    v: float = 0.0     # teleop velocity setpoint (ignored in Follow)
    omega: float = 0.0


def drive_setpoint(state: TeleopState, params: TeleopParams = TeleopParams()) -> tuple[float, float]:
    """(v, omega) that the current Teleop drive latch requests."""
    if state.mode != Mode.TELEOP:
        return 0.0, 0.0
    speed = params.speeds[state.speed_level - 1]
    turn = params.turn_rates[state.speed_level - 1]
    return {
        "forward": (speed, 0.0),
        "reverse": (-speed, 0.0),
        "turn_left": (0.0, turn),
        "turn_right": (0.0, -turn),
    }.get(state.drive, (0.0, 0.0))


def apply_command(state: TeleopState, command: str, params: TeleopParams = TeleopParams()) -> TeleopState:
    """Mode-table semantics of one command, ignoring edge detection."""
    if command == "e_stop":
        return replace(state, mode=Mode.ESTOP, drive="stop")
    nxt = MODE_TABLE.get((state.mode, command))
    if nxt is not None:
        return replace(state, mode=nxt, drive="stop")
    if state.mode == Mode.TELEOP and command in TELEOP_ACTIONS:
        if command == "speed_up":
            return replace(state, speed_level=min(state.speed_level + 1, len(params.speeds)))
        if command == "slow_down":
            return replace(state, speed_level=max(state.speed_level - 1, 1))
        return replace(state, drive=command)
    return state


def step_state_machine(state: TeleopState, gesture: int | None, gmap: GestureMap,
                       params: TeleopParams = TeleopParams()) -> tuple[TeleopState, Command]:
    """Advance on the current filtered gesture (None or 0 = no gesture)."""
    if gesture == 0:
        gesture = None
    if gesture is not None and not 1 <= gesture <= N_GESTURES:
        raise ValueError(f"gesture id {gesture} outside 1..{N_GESTURES}")
    name = "none"
    if gesture is not None and gesture != state.last_gesture:
        name = gmap[gesture]
        state = apply_command(state, name, params)
    elif gesture is None and not params.latched and state.drive != "stop":
        state = replace(state, drive="stop")
    state = replace(state, last_gesture=gesture)
    v, omega = drive_setpoint(state, params)
    return state, Command(name, v, omega)


# ---------------------------------------------------------------------------
# vehicle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VehicleLimits:
    v_max: float = 2.0
    omega_max: float = 1.0

    def __post_init__(self):
        if self.v_max <= 0 or self.omega_max <= 0:
            raise ValueError("limits must be positive")


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    v: float = 0.0
    omega: float = 0.0


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def vehicle_step(vehicle: VehicleState, command, dt: float, limits: VehicleLimits = VehicleLimits()) -> VehicleState:
    """Unicycle motion for ``dt`` seconds under a constant (v, omega).

    ``command`` is a :class:`Command` or a ``(v, omega)`` pair; both are
    clamped to the limits. Integration follows the exact arc, which equals
    the straight-line update when omega is 0.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    v, omega = (command.v, command.omega) if isinstance(command, Command) else command
    v = float(np.clip(v, -limits.v_max, limits.v_max))
    omega = float(np.clip(omega, -limits.omega_max, limits.omega_max))
    h = vehicle.heading
    if abs(omega) < 1e-12:
        x = vehicle.x + v * math.cos(h) * dt
        y = vehicle.y + v * math.sin(h) * dt
    else:
        h2 = h + omega * dt
        r = v / omega
        x = vehicle.x + r * (math.sin(h2) - math.sin(h))
        y = vehicle.y - r * (math.cos(h2) - math.cos(h))
    return VehicleState(x, y, _wrap(h + omega * dt), v, omega)


@dataclass(frozen=True)
class FollowGains:
    k_range: float = 2.5
    k_bearing: float = 2.0
    standoff: float = 3.0

    def __post_init__(self):
        if self.k_range <= 0 or self.k_bearing <= 0 or self.standoff <= 0:
            raise ValueError("gains and standoff must be positive")


def follow_control(vehicle: VehicleState, leader, gains: FollowGains = FollowGains(),
                   limits: VehicleLimits = VehicleLimits()) -> tuple[float, float]:
    """Proportional range and bearing control toward ``leader`` (world x, y)."""
    lx, ly = float(leader[0]), float(leader[1])
    if not (math.isfinite(lx) and math.isfinite(ly)):
        raise ValueError("leader position must be finite")
    dx, dy = lx - vehicle.x, ly - vehicle.y
    rng = math.hypot(dx, dy)
    bearing = _wrap(math.atan2(dy, dx) - vehicle.heading) if rng > 0 else 0.0
    v = 0.0 if rng <= gains.standoff else min(gains.k_range * (rng - gains.standoff), limits.v_max)
    omega = float(np.clip(gains.k_bearing * bearing, -limits.omega_max, limits.omega_max))
    return v, omega


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogRow:
    t: float
    mode: str
    gesture: int
    command: str
    x: float
    y: float
    heading: float
    v: float
    omega: float


LOG_HEADER = ["t", "mode", "gesture", "command", "x", "y", "heading", "v", "omega"]


class TeleopController:
    """State machine + vehicle + follower in one sequential loop."""

    def __init__(self, gmap: GestureMap | None = None, params: TeleopParams = TeleopParams(),
                 gains: FollowGains = FollowGains(), limits: VehicleLimits = VehicleLimits(),
                 vehicle: VehicleState = VehicleState()):
        self.gmap = gmap or GestureMap.load()
        self.params, self.gains, self.limits = params, gains, limits
        self.state = TeleopState(speed_level=params.initial_level)
        self.vehicle = vehicle
        self.log: list[LogRow] = []

    def step(self, t: float, gesture: int | None, leader=None, dt: float = 0.1) -> LogRow:
        """``leader`` is the operator position in the world frame (or None
        when not tracked)."""
        self.state, cmd = step_state_machine(self.state, gesture, self.gmap, self.params)
        if self.state.mode == Mode.FOLLOW:
            vo = follow_control(self.vehicle, leader, self.gains, self.limits) if leader is not None else (0.0, 0.0)
        else:
            vo = (cmd.v, cmd.omega)
        self.vehicle = vehicle_step(self.vehicle, vo, dt, self.limits)
        row = LogRow(t, self.state.mode.value, 0 if gesture is None else int(gesture), cmd.name,
                     self.vehicle.x, self.vehicle.y, self.vehicle.heading, self.vehicle.v, self.vehicle.omega)
        self.log.append(row)
        return row

    def to_world(self, point_sensor) -> np.ndarray:
        """Sensor-frame (vehicle-mounted) point -> world x, y."""
        c, s = math.cos(self.vehicle.heading), math.sin(self.vehicle.heading)
        px, py = float(point_sensor[0]), float(point_sensor[1])
        return np.array([self.vehicle.x + c * px - s * py, self.vehicle.y + s * px + c * py])


def write_log_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for r in rows:
            w.writerow([f"{r.t:.3f}", r.mode, r.gesture, r.command, repr(r.x), repr(r.y), repr(r.heading),
                        repr(r.v), repr(r.omega)])
