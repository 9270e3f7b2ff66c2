"""The patrol bot: drive-pin handling, navigation FSM, checkpoint sampling.

The bot runs one deterministic loop. In AUTO it walks a closed loop of
checkpoints, pausing ``dwell_s`` at each to sample; in MANUAL the two-track
drive collapses to 1-D progress along the same path and sampling happens only
on request. Getting stuck is a per-tick probability while moving over mud
(zone moisture above a threshold); a stuck bot freezes in place, its motors
load up to stall current, and the next drive attempt trips the motor driver
into FAULT. Both STUCK and FAULT clear only through an explicit rescue.

Virtual drive pins (held/released by the operator console)::

    0 LEFT   1 RIGHT   2 FORWARD   3 BACKWARD

with priority FORWARD > BACKWARD > LEFT > RIGHT when several are held.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field, replace

from agribot import devices
from agribot.devices import Battery, Direction, DriverFault, Level, PowerMode, SensorFault
from agribot.microclimate import ZoneState
from agribot.protocol import TeleData, TeleFrame

PIN_LEFT, PIN_RIGHT, PIN_FORWARD, PIN_BACKWARD = 0, 1, 2, 3
DRIVE_PINS = (PIN_LEFT, PIN_RIGHT, PIN_FORWARD, PIN_BACKWARD)

# held-pin priority, strongest first
_PIN_PRIORITY = (PIN_FORWARD, PIN_BACKWARD, PIN_LEFT, PIN_RIGHT)
_PIN_DRIVE = {
    PIN_FORWARD: (1, 1),
    PIN_BACKWARD: (-1, -1),
    PIN_LEFT: (-1, 1),
    PIN_RIGHT: (1, -1),
}


class Mode(enum.Enum):
    MANUAL = "manual"
    AUTO = "auto"


class Phase(enum.Enum):
    MOVING = "moving"
    SAMPLING = "sampling"
    STUCK = "stuck"
    FAULT = "fault"


@dataclass(frozen=True)
class DriveCommand:
    left: int = 0   # -1 | 0 | +1
    right: int = 0


@dataclass(frozen=True)
class PathPlan:
    checkpoints: tuple[tuple[int, int], ...]  # zone (row, col) per checkpoint
    segment_length_m: float = 5.0
    speed_mps: float = 1.0
    dwell_s: float = 2.0

    def __post_init__(self):
        if len(self.checkpoints) < 1:
            raise ValueError("need at least one checkpoint")
        if self.segment_length_m <= 0:
            raise ValueError("segment_length_m must be positive")
        if self.speed_mps <= 0:
            raise ValueError("speed_mps must be positive")
        if self.dwell_s < 0:
            raise ValueError("dwell_s must be >= 0")

    def n(self) -> int:
        return len(self.checkpoints)


@dataclass(frozen=True)
class SensorSetup:
    ar65_threshold: float = 0.3
    light_full_scale_lux: float = 50000.0


@dataclass(frozen=True)
class MudModel:
    threshold: float = 0.9     # zone moisture above this is mud
    p_stuck_per_s: float = 0.0


@dataclass(frozen=True)
class TelemetryFrame:
    seq: int
    checkpoint: int
    t: float
    temp_counts: int
    dht: tuple[int, int] | None
    light_counts: int
    moisture_level: Level
    ph_counts: int
    battery_frac: float


@dataclass(frozen=True)
class BotEvent:
    kind: str  # sample_due | stuck | fault | rescue | warn | mode | lap
    t: float
    data: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BotState:
    mode: Mode = Mode.AUTO
    phase: Phase = Phase.MOVING
    segment_index: int = 0
    progress_m: float = 0.0
    dwell_remaining_s: float = 0.0
    stuck: bool = False
    seq: int = 0
    battery: Battery = field(default_factory=Battery)
    held_pins: frozenset[int] = frozenset()
    drive: DriveCommand = DriveCommand()
    motor_load_a: float = 0.3
    nominal_load_a: float = 0.3
    stall_load_a: float = 0.9


def resolve_drive(held: frozenset[int]) -> DriveCommand:
    for pin in _PIN_PRIORITY:
        if pin in held:
            return DriveCommand(*_PIN_DRIVE[pin])
    return DriveCommand(0, 0)


def handle_vpin(pin: int, val: float, held: frozenset[int]) -> tuple[frozenset[int], DriveCommand]:
    """Apply one virtual-pin write to the held-pin set.

    Raises ValueError for pins outside the drive block; the caller answers
    the sender with a protocol error frame.
    """
    if pin not in DRIVE_PINS:
        raise ValueError(f"pin {pin} is not a drive pin (0-3)")
    held = held | {pin} if val else held - {pin}
    return held, resolve_drive(held)


def enter_stuck(bot: BotState, t: float) -> tuple[BotState, BotEvent]:
    """Freeze the bot in the mud: progress stops, motors load up to stall."""
    bot = replace(bot, phase=Phase.STUCK, stuck=True, motor_load_a=bot.stall_load_a)
    return bot, BotEvent("stuck", t, {"segment": bot.segment_index, "progress_m": bot.progress_m})


def rescue(bot: BotState, t: float) -> tuple[BotState, BotEvent]:
    """Human intervention: clear STUCK/FAULT back to MOVING at nominal load."""
    if bot.phase not in (Phase.STUCK, Phase.FAULT):
        return bot, BotEvent("warn", t, {"msg": "rescue requested but bot is not stuck"})
    bot = replace(bot, phase=Phase.MOVING, stuck=False, motor_load_a=bot.nominal_load_a)
    return bot, BotEvent("rescue", t, {"segment": bot.segment_index})


def set_mode(bot: BotState, mode: Mode, t: float) -> tuple[BotState, BotEvent]:
    """Switch manual/auto. No-op if already there; never clears STUCK/FAULT."""
    if mode is bot.mode:
        return bot, BotEvent("mode", t, {"mode": mode.value, "changed": False})
    bot = replace(bot, mode=mode)
    if mode is Mode.MANUAL:
        # manual entry zeroes the drive until the operator presses something
        bot = replace(bot, held_pins=frozenset(), drive=DriveCommand(0, 0))
        if bot.phase is Phase.SAMPLING:
            bot = replace(bot, phase=Phase.MOVING, dwell_remaining_s=0.0)
    else:
        if bot.phase is Phase.SAMPLING:
            bot = replace(bot, phase=Phase.MOVING, dwell_remaining_s=0.0)
    return bot, BotEvent("mode", t, {"mode": mode.value, "changed": True})


def _advance(bot: BotState, plan: PathPlan, dist: float, t: float,
             events: list[BotEvent]) -> BotState:
    """Move along the loop; AUTO arrival at a segment end starts sampling."""
    progress = bot.progress_m + dist
    if bot.mode is Mode.AUTO:
        if progress >= plan.segment_length_m:
            cp = (bot.segment_index + 1) % plan.n()
            events.append(BotEvent("sample_due", t, {"checkpoint": cp}))
            return replace(bot, progress_m=plan.segment_length_m,
                           phase=Phase.SAMPLING, dwell_remaining_s=plan.dwell_s)
        return replace(bot, progress_m=progress)
    # manual: wrap across segment boundaries, no automatic sampling
    seg = bot.segment_index
    while progress >= plan.segment_length_m:
        progress -= plan.segment_length_m
        seg = (seg + 1) % plan.n()
    while progress < 0.0:
        progress += plan.segment_length_m
        seg = (seg - 1) % plan.n()
    return replace(bot, progress_m=progress, segment_index=seg)


def fsm_step(bot: BotState, plan: PathPlan, zone_under_bot: ZoneState,
             rng: random.Random, dt: float,
             mud: MudModel = MudModel()) -> tuple[BotState, list[BotEvent]]:
    """One tick of the navigation state machine.

    Returns the next state plus any events (sample_due, stuck, fault, lap).
    The rng is the dedicated stuck-model stream; it is only consulted on
    moving ticks over mud, so runs without mud never touch it.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    events: list[BotEvent] = []
    t = 0.0  # events from the pure step are caller-relative; the harness restamps them

    if bot.phase is Phase.FAULT:
        bot = replace(bot, battery=devices.battery_step(bot.battery, PowerMode.IDLE, dt))
        return bot, events

    if bot.phase is Phase.STUCK:
        # wheels keep churning in the mud; an over-loaded driver trips out
        try:
            devices.hbridge_drive([Direction.FORWARD] * 4, [bot.motor_load_a] * 4)
        except DriverFault as e:
            bot = replace(bot, phase=Phase.FAULT)
            events.append(BotEvent("fault", t, {"motor": e.motor, "load_a": e.load_a}))
        bot = replace(bot, battery=devices.battery_step(bot.battery, PowerMode.STALLED, dt))
        return bot, events

    if bot.phase is Phase.SAMPLING:
        remaining = bot.dwell_remaining_s - dt
        bot = replace(bot, battery=devices.battery_step(bot.battery, PowerMode.IDLE, dt))
        if remaining <= 0.0:
            seg = (bot.segment_index + 1) % plan.n()
            if seg == 0:
                events.append(BotEvent("lap", t, {}))
            bot = replace(bot, segment_index=seg, progress_m=0.0,
                          dwell_remaining_s=0.0, phase=Phase.MOVING)
        else:
            bot = replace(bot, dwell_remaining_s=remaining)
        return bot, events

    # MOVING
    if bot.mode is Mode.AUTO:
        dist = plan.speed_mps * dt
    else:
        track_sum = bot.drive.left + bot.drive.right
        dist = plan.speed_mps * dt * (track_sum / 2.0)  # turning in place -> 0

    translating = dist != 0.0
    if translating and zone_under_bot.moisture > mud.threshold:
        if rng.random() < mud.p_stuck_per_s * dt:
            bot, ev = enter_stuck(bot, t)
            events.append(ev)
            bot = replace(bot, battery=devices.battery_step(bot.battery, PowerMode.STALLED, dt))
            return bot, events

    if translating:
        devices.hbridge_drive([Direction.FORWARD] * 4, [bot.motor_load_a] * 4)
        bot = _advance(bot, plan, dist, t, events)
        bot = replace(bot, battery=devices.battery_step(bot.battery, PowerMode.DRIVING, dt))
    else:
        bot = replace(bot, battery=devices.battery_step(bot.battery, PowerMode.IDLE, dt))
    return bot, events


def current_checkpoint(bot: BotState, plan: PathPlan) -> int:
    """Checkpoint the bot is at (sampling) or most recently left (moving)."""
    if bot.phase is Phase.SAMPLING and bot.progress_m >= plan.segment_length_m:
        return (bot.segment_index + 1) % plan.n()
    return bot.segment_index


def sample_checkpoint(bot: BotState, zone: ZoneState, sensors: SensorSetup,
                      t: float, checkpoint: int) -> tuple[BotState, TelemetryFrame]:
    """Run every sensor over the zone and emit one frame; seq always advances.

    A DHT envelope violation becomes a null field in the frame rather than a
    failure — the controller reports the gap.
    """
    try:
        dht = devices.dht11_read(zone.temp_c, zone.humidity_pct)
    except SensorFault:
        dht = None
    frame = TelemetryFrame(
        seq=bot.seq,
        checkpoint=checkpoint,
        t=t,
        temp_counts=devices.lm35_adc(zone.temp_c),
        dht=dht,
        light_counts=devices.light_adc(zone.light_lux, sensors.light_full_scale_lux),
        moisture_level=devices.ar65_read(zone.moisture, sensors.ar65_threshold),
        ph_counts=devices.ph_adc(zone.ph),
        battery_frac=bot.battery.charge_frac,
    )
    return replace(bot, seq=bot.seq + 1), frame


def to_wire(frame: TelemetryFrame) -> TeleFrame:
    return TeleFrame(
        seq=frame.seq, cp=frame.checkpoint, ts=frame.t,
        data=TeleData(tc=frame.temp_counts, dht=frame.dht, lux=frame.light_counts,
                      m=frame.moisture_level.value, ph=frame.ph_counts,
                      bat=frame.battery_frac))
