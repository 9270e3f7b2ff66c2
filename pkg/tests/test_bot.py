"""Drive pins, navigation state machine, stuck cascade, and sampling."""

import random
from dataclasses import replace

import pytest

from agribot.bot import (
    PIN_BACKWARD,
    PIN_FORWARD,
    PIN_LEFT,
    PIN_RIGHT,
    BotState,
    DriveCommand,
    Mode,
    MudModel,
    PathPlan,
    Phase,
    SensorSetup,
    current_checkpoint,
    enter_stuck,
    fsm_step,
    handle_vpin,
    rescue,
    resolve_drive,
    sample_checkpoint,
    set_mode,
    to_wire,
)
from agribot.devices import Level
from agribot.microclimate import ZoneState
from agribot.protocol import TeleFrame

DRY = ZoneState(22.0, 50.0, 0.0, 0.1, 7.0)
MUD = ZoneState(22.0, 50.0, 0.0, 0.95, 7.0)
PLAN = PathPlan(checkpoints=((0, 0), (0, 1)), segment_length_m=5.0,
                speed_mps=1.0, dwell_s=2.0)


def _rng():
    return random.Random(0)


def _run(bot, plan, zone, ticks, dt=1.0, mud=MudModel(), rng=None):
    rng = rng or _rng()
    all_events = []
    for _ in range(ticks):
        bot, events = fsm_step(bot, plan, zone, rng, dt, mud)
        all_events.extend(events)
    return bot, all_events


# -- drive pins ---------------------------------------------------------------

def test_pin_to_track_mapping():
    assert resolve_drive(frozenset({PIN_FORWARD})) == DriveCommand(1, 1)
    assert resolve_drive(frozenset({PIN_BACKWARD})) == DriveCommand(-1, -1)
    assert resolve_drive(frozenset({PIN_LEFT})) == DriveCommand(-1, 1)
    assert resolve_drive(frozenset({PIN_RIGHT})) == DriveCommand(1, -1)
    assert resolve_drive(frozenset()) == DriveCommand(0, 0)


def test_pin_priority_forward_wins():
    held = frozenset({PIN_LEFT, PIN_BACKWARD, PIN_FORWARD})
    assert resolve_drive(held) == DriveCommand(1, 1)
    assert resolve_drive(frozenset({PIN_LEFT, PIN_BACKWARD})) == DriveCommand(-1, -1)
    assert resolve_drive(frozenset({PIN_LEFT, PIN_RIGHT})) == DriveCommand(-1, 1)


def test_handle_vpin_press_and_release():
    held, drive = handle_vpin(PIN_FORWARD, 1, frozenset())
    assert held == {PIN_FORWARD} and drive == DriveCommand(1, 1)
    held, drive = handle_vpin(PIN_FORWARD, 0, held)
    assert held == frozenset() and drive == DriveCommand(0, 0)


def test_handle_vpin_rejects_non_drive_pins():
    with pytest.raises(ValueError):
        handle_vpin(7, 1, frozenset())


# -- auto patrol --------------------------------------------------------------

def test_auto_leg_then_dwell_then_next_segment():
    bot = BotState()
    bot, events = _run(bot, PLAN, DRY, 5)  # 5 m leg at 1 m/s
    assert [e.kind for e in events] == ["sample_due"]
    assert events[0].data["checkpoint"] == 1
    assert bot.phase is Phase.SAMPLING
    bot, events = _run(bot, PLAN, DRY, 2)  # dwell 2 s
    assert bot.phase is Phase.MOVING
    assert bot.segment_index == 1
    assert bot.progress_m == 0.0


def test_lap_event_on_wrap_to_zero():
    bot = BotState()
    bot, events = _run(bot, PLAN, DRY, 14)  # two full legs + dwells
    assert [e.kind for e in events] == ["sample_due", "sample_due", "lap"]
    assert [e.data.get("checkpoint") for e in events[:2]] == [1, 0]
    assert bot.segment_index == 0


def test_single_checkpoint_plan_loops_on_itself():
    plan = PathPlan(checkpoints=((0, 0),), segment_length_m=2.0,
                    speed_mps=1.0, dwell_s=1.0)
    bot, events = _run(BotState(), plan, DRY, 3)
    assert [e.kind for e in events] == ["sample_due", "lap"]
    assert events[0].data["checkpoint"] == 0


# -- manual drive -------------------------------------------------------------

def test_manual_entry_zeroes_drive_and_cancels_dwell():
    bot = BotState(phase=Phase.SAMPLING, dwell_remaining_s=1.5,
                   held_pins=frozenset({PIN_FORWARD}), drive=DriveCommand(1, 1))
    bot, ev = set_mode(bot, Mode.MANUAL, 0.0)
    assert ev.data["changed"] is True
    assert bot.phase is Phase.MOVING
    assert bot.drive == DriveCommand(0, 0)
    assert bot.held_pins == frozenset()


def test_manual_idle_without_input():
    bot, _ = set_mode(BotState(), Mode.MANUAL, 0.0)
    moved, events = _run(bot, PLAN, DRY, 10)
    assert moved.progress_m == 0.0
    assert events == []


def _press(bot, pin):
    held, drive = handle_vpin(pin, 1, bot.held_pins)
    return replace(bot, held_pins=held, drive=drive)


def test_manual_forward_crosses_segments_without_sampling():
    bot, _ = set_mode(BotState(), Mode.MANUAL, 0.0)
    bot = _press(bot, PIN_FORWARD)
    bot, events = _run(bot, PLAN, DRY, 7)
    assert events == []                      # no auto-sampling in manual
    assert bot.segment_index == 1            # crossed one 5 m boundary
    assert bot.progress_m == pytest.approx(2.0)


def test_manual_backward_wraps_around_the_loop():
    bot, _ = set_mode(BotState(), Mode.MANUAL, 0.0)
    bot = _press(bot, PIN_BACKWARD)
    bot, _ = _run(bot, PLAN, DRY, 1)
    assert bot.segment_index == 1            # wrapped backward onto the last leg
    assert bot.progress_m == pytest.approx(4.0)


def test_manual_turn_in_place_does_not_translate():
    bot, _ = set_mode(BotState(), Mode.MANUAL, 0.0)
    bot = _press(bot, PIN_LEFT)
    before = bot.battery.charge_frac
    bot, _ = _run(bot, PLAN, MUD, 5, mud=MudModel(p_stuck_per_s=1.0))
    assert bot.progress_m == 0.0
    assert bot.phase is Phase.MOVING         # not translating: mud cannot catch it
    assert bot.battery.charge_frac < before  # idles, still draws


def test_mode_switch_is_idempotent_and_keeps_fault():
    bot = BotState(phase=Phase.FAULT)
    bot, ev = set_mode(bot, Mode.AUTO, 0.0)
    assert ev.data["changed"] is False
    bot, ev = set_mode(bot, Mode.MANUAL, 0.0)
    assert bot.phase is Phase.FAULT          # mode change never clears a fault


# -- stuck cascade ------------------------------------------------------------

def test_mud_eventually_sticks_a_moving_bot():
    mud = MudModel(threshold=0.9, p_stuck_per_s=0.5)
    bot, events = _run(BotState(), PLAN, MUD, 50, mud=mud)
    kinds = [e.kind for e in events]
    assert "stuck" in kinds
    # the tick after entering STUCK trips the over-loaded driver
    assert "fault" in kinds
    assert kinds.index("stuck") < kinds.index("fault")
    assert bot.phase is Phase.FAULT


def test_dry_ground_never_consults_the_dice():
    class Loaded(random.Random):
        def random(self):
            raise AssertionError("rng touched on dry ground")
    bot, _ = _run(BotState(), PLAN, DRY, 20, mud=MudModel(p_stuck_per_s=1.0),
                  rng=Loaded())
    assert bot.phase in (Phase.MOVING, Phase.SAMPLING)


def test_stuck_loads_motors_to_stall():
    bot, ev = enter_stuck(BotState(), 3.0)
    assert ev.kind == "stuck"
    assert bot.phase is Phase.STUCK
    assert bot.motor_load_a == bot.stall_load_a


def test_stuck_drains_battery_at_stall_rate():
    stuck, _ = enter_stuck(BotState(), 0.0)
    idle = BotState(phase=Phase.FAULT)
    stuck, _ = fsm_step(stuck, PLAN, DRY, _rng(), 1.0)
    idle, _ = fsm_step(idle, PLAN, DRY, _rng(), 1.0)
    assert stuck.battery.charge_frac < idle.battery.charge_frac


def test_rescue_clears_stuck_and_fault():
    bot, _ = enter_stuck(BotState(), 0.0)
    bot, _ = fsm_step(bot, PLAN, DRY, _rng(), 1.0)   # -> FAULT
    assert bot.phase is Phase.FAULT
    bot, ev = rescue(bot, 9.0)
    assert ev.kind == "rescue"
    assert bot.phase is Phase.MOVING
    assert bot.motor_load_a == bot.nominal_load_a
    # and the bot resumes the patrol where it left off
    bot, events = _run(bot, PLAN, DRY, 5)
    assert any(e.kind == "sample_due" for e in events)


def test_rescue_when_healthy_is_a_warning():
    bot, ev = rescue(BotState(), 0.0)
    assert ev.kind == "warn"
    assert bot.phase is Phase.MOVING


def test_fault_bot_ignores_ticks():
    bot = BotState(phase=Phase.FAULT, segment_index=1, progress_m=2.0)
    after, events = _run(bot, PLAN, DRY, 10)
    assert events == []
    assert (after.segment_index, after.progress_m) == (1, 2.0)


# -- sampling -----------------------------------------------------------------

def test_sample_reads_all_sensors():
    zone = ZoneState(25.0, 60.4, 25000.0, 0.5, 7.0)
    bot, frame = sample_checkpoint(BotState(), zone, SensorSetup(), 42.0, 1)
    assert frame.seq == 0 and bot.seq == 1
    assert frame.checkpoint == 1
    assert frame.temp_counts == 51
    assert frame.dht == (25, 60)
    assert frame.moisture_level is Level.HIGH
    assert frame.ph_counts == 512
    assert frame.light_counts == 512
    assert frame.battery_frac == 1.0


def test_sample_dht_fault_becomes_null_field():
    zone = ZoneState(60.0, 50.0, 0.0, 0.5, 7.0)  # beyond the DHT envelope
    bot, frame = sample_checkpoint(BotState(), zone, SensorSetup(), 0.0, 0)
    assert frame.dht is None
    assert bot.seq == 1                          # seq advances regardless


def test_to_wire_round_trip_shape():
    zone = ZoneState(25.0, 60.0, 0.0, 0.1, 7.0)
    _, frame = sample_checkpoint(BotState(seq=9), zone, SensorSetup(), 5.0, 2)
    wf = to_wire(frame)
    assert isinstance(wf, TeleFrame)
    assert (wf.seq, wf.cp, wf.ts) == (9, 2, 5.0)
    assert wf.data.m == "L"
    assert wf.data.tc == frame.temp_counts


def test_current_checkpoint_tracks_sampling_position():
    bot = BotState()
    assert current_checkpoint(bot, PLAN) == 0
    bot, _ = _run(bot, PLAN, DRY, 5)             # arrived, sampling at cp 1
    assert bot.phase is Phase.SAMPLING
    assert current_checkpoint(bot, PLAN) == 1


def test_plan_validation():
    with pytest.raises(ValueError):
        PathPlan(checkpoints=())
    with pytest.raises(ValueError):
        PathPlan(checkpoints=((0, 0),), segment_length_m=0.0)
    with pytest.raises(ValueError):
        PathPlan(checkpoints=((0, 0),), speed_mps=-1.0)
    with pytest.raises(ValueError):
        PathPlan(checkpoints=((0, 0),), dwell_s=-0.5)


def test_fsm_rejects_bad_dt():
    with pytest.raises(ValueError):
        fsm_step(BotState(), PLAN, DRY, _rng(), 0.0)
