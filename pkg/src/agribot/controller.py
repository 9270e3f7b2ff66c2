"""Rule-driven control process: thresholds with hysteresis, relay commands,
fertilizer notifications, and the stale-telemetry stuck watchdog.

The controller owns all closed-loop logic. It consumes the ordered telemetry
stream for its token, de-quantizes raw sensor counts back to engineering
units, applies banded rules with hysteresis latches per zone, and commands
the bot's relay board through bridge frames. Nothing here talks to hardware
models directly; the wire is the only coupling.

Clocking: rule evaluation uses the frame's own sample timestamp, and the
periodic work (pump timers, silence watchdog) advances on explicit tick
bridge frames from the simulation (`{"cmd":"tick","ts":t}`), answered with
`tick_done`. Running on simulated time keeps a networked run bit-identical
to an in-process one.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace

from agribot import protocol
from agribot.protocol import (
    AuthFrame,
    BridgeFrame,
    ErrFrame,
    Frame,
    NotifyFrame,
    OkFrame,
    TeleFrame,
    VwFrame,
    encode_frame,
)

log = logging.getLogger(__name__)

ADC_VOLTS_SPAN_MV = 5000.0
ADC_MAX = 1023
LM35_MV_PER_C = 10.0

RELAY_DEVICES = ("heater", "fan", "pump", "lamp")


def counts_to_temp_c(counts: int) -> float:
    """Invert the LM35 ADC path: counts -> millivolts -> degrees."""
    return counts * ADC_VOLTS_SPAN_MV / ADC_MAX / LM35_MV_PER_C


@dataclass(frozen=True)
class WatchdogConfig:
    stall_reports: int = 5        # W: repeated frames before the stuck alert
    eps_counts: int = 1           # per-field tolerance, above quantization noise
    silence_timeout_s: float = 600.0

    def __post_init__(self):
        if self.stall_reports < 2:
            raise ValueError("watchdog stall_reports must be >= 2")
        if self.eps_counts < 0:
            raise ValueError("watchdog eps_counts must be >= 0")
        if self.silence_timeout_s <= 0:
            raise ValueError("watchdog silence_timeout_s must be positive")


@dataclass(frozen=True)
class ThresholdConfig:
    temp_lo_c: float = 18.0
    temp_hi_c: float = 24.0
    temp_hyst_c: float = 1.0
    rh_lo: float = 40.0
    rh_hi: float = 80.0
    rh_hyst: float = 3.0
    light_floor_counts: int = 150
    light_window_s: tuple[float, float] = (0.0, 43200.0)
    day_period_s: float = 86400.0
    pump_on_s: float = 120.0
    ph_lo_counts: int = 439
    ph_hi_counts: int = 585
    watchdog: WatchdogConfig = field(default_factory=WatchdogConfig)

    def __post_init__(self):
        for name, lo, hi, h in (("temp", self.temp_lo_c, self.temp_hi_c, self.temp_hyst_c),
                                ("humidity", self.rh_lo, self.rh_hi, self.rh_hyst)):
            if lo >= hi:
                raise ValueError(f"{name} band: lo must be < hi")
            if h <= 0:
                raise ValueError(f"{name} band: hysteresis must be positive")
            if lo + h >= hi - h:
                raise ValueError(f"{name} band: hysteresis overlaps the band (lo+h must be < hi-h)")
        if self.ph_lo_counts >= self.ph_hi_counts:
            raise ValueError("ph band: lo must be < hi")
        if self.light_floor_counts < 0:
            raise ValueError("light floor must be >= 0")
        w0, w1 = self.light_window_s
        if not (0 <= w0 < w1 <= self.day_period_s):
            raise ValueError("light window must satisfy 0 <= start < end <= day period")
        if self.pump_on_s <= 0:
            raise ValueError("pump_on_s must be positive")

    def in_light_window(self, now: float) -> bool:
        tau = now % self.day_period_s
        w0, w1 = self.light_window_s
        return w0 <= tau < w1


@dataclass(frozen=True)
class ZoneControl:
    """Hysteresis memory for one zone. heater and fan latches are mutually
    exclusive by construction (a thermostat never asserts both)."""
    heater_latch: bool = False
    fan_latch: bool = False    # temperature-high side
    humid_latch: bool = False  # humidity-high side, shares the fan relay
    lamp_latch: bool = False
    pump_timer_s: float = 0.0


def thermostat(value: float, lo: float, hi: float, h: float,
               prev_heat: bool, prev_cool: bool) -> tuple[bool, bool]:
    """Banded bang-bang with hysteresis deadbands just inside the band.

    heat: on below lo, off above lo+h, holds in between.
    cool: on above hi, off below hi-h, holds in between.
    """
    if value < lo:
        heat = True
    elif value > lo + h:
        heat = False
    else:
        heat = prev_heat
    if value > hi:
        cool = True
    elif value < hi - h:
        cool = False
    else:
        cool = prev_cool
    if heat and cool:  # unreachable when lo+h < hi-h; belt and braces
        return False, False
    return heat, cool


def channel_states(zc: ZoneControl) -> dict[str, bool]:
    """Desired relay-channel states for one zone.

    The fan relay is shared by the temperature-cool and dehumidify latches;
    the heater wins any conflict so heater and fan are never commanded on
    together (venting while heating wastes both).
    """
    return {
        "heater": zc.heater_latch,
        "fan": (zc.fan_latch or zc.humid_latch) and not zc.heater_latch,
        "pump": zc.pump_timer_s > 0.0,
        "lamp": zc.lamp_latch,
    }


def relay_commands(zone: tuple[int, int], before: dict[str, bool],
                   after: dict[str, bool]) -> list[BridgeFrame]:
    """One bridge frame per channel that actually changed: no dupes, no misses."""
    cmds = []
    for dev in RELAY_DEVICES:
        if before[dev] != after[dev]:
            payload = {"cmd": "relay", "zone": [zone[0], zone[1]], "dev": dev, "on": after[dev]}
            cmds.append(BridgeFrame(dst="bot", payload=payload))
    return cmds


def evaluate(tele: TeleFrame, zone: tuple[int, int], cfg: ThresholdConfig,
             zc: ZoneControl, now: float) -> tuple[ZoneControl, list[BridgeFrame], list[NotifyFrame]]:
    """Apply every rule to one telemetry frame for the zone it was sampled in."""
    notes: list[NotifyFrame] = []
    d = tele.data

    temp_c = counts_to_temp_c(d.tc)
    heat, cool = thermostat(temp_c, cfg.temp_lo_c, cfg.temp_hi_c, cfg.temp_hyst_c,
                            zc.heater_latch, zc.fan_latch)

    if d.dht is None:
        humid = zc.humid_latch  # sensor out of envelope: hold, report, move on
        notes.append(NotifyFrame("info", f"humidity sensor fault at checkpoint {tele.cp}"))
    else:
        rh = float(d.dht[1])
        _, humid = thermostat(rh, cfg.rh_lo, cfg.rh_hi, cfg.rh_hyst, False, zc.humid_latch)

    pump_timer = cfg.pump_on_s if d.m == "L" else zc.pump_timer_s

    lamp = d.lux < cfg.light_floor_counts and cfg.in_light_window(now)

    if not (cfg.ph_lo_counts <= d.ph <= cfg.ph_hi_counts):
        notes.append(NotifyFrame(
            "warn", f"fertilizer required: zone {zone[0]},{zone[1]} ph counts {d.ph}"))

    nxt = ZoneControl(heater_latch=heat, fan_latch=cool, humid_latch=humid,
                      lamp_latch=lamp, pump_timer_s=pump_timer)
    cmds = relay_commands(zone, channel_states(zc), channel_states(nxt))
    return nxt, cmds, notes


# --- stuck watchdog ---------------------------------------------------------

STUCK_MSG = "bot stuck"


@dataclass(frozen=True)
class WatchdogState:
    last_frame: TeleFrame | None = None
    repeat_count: int = 0
    last_seen_ts: float = 0.0
    alerted: bool = False


def frames_match(a: TeleFrame, b: TeleFrame, eps: int) -> bool:
    """Monitored fields within eps and checkpoint unchanged.

    seq/ts always advance and battery drains while stalled, so none of them
    is monitored; a stuck bot is one whose environment readings freeze.
    """
    if a.cp != b.cp or a.data.m != b.data.m:
        return False
    if (a.data.dht is None) != (b.data.dht is None):
        return False
    if a.data.dht is not None:
        if abs(a.data.dht[0] - b.data.dht[0]) > eps or abs(a.data.dht[1] - b.data.dht[1]) > eps:
            return False
    return (abs(a.data.tc - b.data.tc) <= eps
            and abs(a.data.lux - b.data.lux) <= eps
            and abs(a.data.ph - b.data.ph) <= eps)


def watchdog_step(wd: WatchdogState, frame: TeleFrame | None, now: float,
                  cfg: WatchdogConfig) -> tuple[WatchdogState, NotifyFrame | None]:
    """Advance the watchdog on one frame (or a frame-less time step).

    Counting: a frame matching its predecessor bumps repeat_count; any
    change resets it. The very first frame of a run counts as a repeat of
    itself, so a bot that never produces fresh data still trips the alarm.
    A frame with a new checkpoint proves the bot moved and re-arms the alert.
    """
    if frame is None:
        if not wd.alerted and now - wd.last_seen_ts > cfg.silence_timeout_s:
            return replace(wd, alerted=True), NotifyFrame("warn", STUCK_MSG)
        return wd, None

    prev = wd.last_frame
    if prev is None or frames_match(prev, frame, cfg.eps_counts):
        count = wd.repeat_count + 1
        moved = False
    else:
        count = 0
        moved = prev.cp != frame.cp
    alerted = wd.alerted and not moved
    nxt = WatchdogState(last_frame=frame, repeat_count=count, last_seen_ts=now,
                        alerted=alerted)
    if count >= cfg.stall_reports and not nxt.alerted:
        return replace(nxt, alerted=True), NotifyFrame("warn", STUCK_MSG)
    return nxt, None


# --- persistence ------------------------------------------------------------

class JsonlSink:
    """Append-only JSONL log. Each record: {"rx_ts":float,"kind":...,"body":{...}}."""

    def __init__(self, path: str):
        self.path = path
        self._fh = open(path, "a", encoding="utf-8")

    def write_record(self, obj: dict) -> None:
        self._fh.write(json.dumps(obj, separators=(",", ":")) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def persist(kind: str, frame: Frame, rx_ts: float, sink) -> NotifyFrame | None:
    """Append one record; a sink failure degrades to a warning, never a crash."""
    body = json.loads(encode_frame(frame))
    try:
        sink.write_record({"rx_ts": rx_ts, "kind": kind, "body": body})
        return None
    except Exception as e:
        log.warning("log sink failed: %s", e)
        return NotifyFrame("warn", f"log sink failure: {e}")


# --- the controller composed ------------------------------------------------

class ControllerCore:
    """Event-driven controller: feed it frames, drain its outbox.

    ``checkpoint_zones`` maps telemetry checkpoint ids to zone coordinates
    (the patrol plan, which the deployment shares with the bot). ``sink`` is
    any object with write_record(dict); None disables persistence.
    """

    def __init__(self, cfg: ThresholdConfig, checkpoint_zones: list[tuple[int, int]],
                 sink=None, node_id: str = "ctl", rx_clock=None):
        self.cfg = cfg
        self.checkpoint_zones = [tuple(z) for z in checkpoint_zones]
        self.sink = sink
        self.node_id = node_id
        self.zones: dict[tuple[int, int], ZoneControl] = {}
        self.wd = WatchdogState()
        self.now = 0.0
        self.last_tick = 0.0
        self.outbox: list[Frame] = []
        # rx_clock stamps persisted records; sim time by default so that
        # in-process runs are reproducible, wall time in live deployments
        self._rx_clock = rx_clock if rx_clock is not None else (lambda: self.now)

    def auth_frame(self, token: str) -> AuthFrame:
        return AuthFrame(node=self.node_id, token=token, pins=(), tele=True)

    def _emit(self, frame: Frame, kind: str) -> None:
        self.outbox.append(frame)
        self._persist(kind, frame)

    def _persist(self, kind: str, frame: Frame) -> None:
        if self.sink is None:
            return
        warn = persist(kind, frame, self._rx_clock(), self.sink)
        if warn is not None:
            self.sink = None  # one failure stops further attempts this run
            self.outbox.append(warn)

    def zone_control(self, zone: tuple[int, int]) -> ZoneControl:
        return self.zones.get(zone, ZoneControl())

    def on_frame(self, frame: Frame) -> None:
        """Handle one inbound frame from the broker stream."""
        if isinstance(frame, TeleFrame):
            self._on_tele(frame)
        elif isinstance(frame, BridgeFrame):
            self._on_bridge(frame)
        elif isinstance(frame, NotifyFrame):
            self._persist("notify", frame)
        elif isinstance(frame, (OkFrame, ErrFrame, VwFrame)):
            pass  # acks and drive pins are not the controller's business

    def _on_tele(self, tele: TeleFrame) -> None:
        self.now = max(self.now, tele.ts)
        self._persist("tele", tele)
        self.wd, alarm = watchdog_step(self.wd, tele, tele.ts, self.cfg.watchdog)
        if alarm is not None:
            self._emit(alarm, "notify")
        if not (0 <= tele.cp < len(self.checkpoint_zones)):
            self._emit(NotifyFrame("warn", f"telemetry for unknown checkpoint {tele.cp}"),
                       "notify")
            return
        zone = self.checkpoint_zones[tele.cp]
        zc, cmds, notes = evaluate(tele, zone, self.cfg, self.zone_control(zone), tele.ts)
        self.zones[zone] = zc
        for cmd in cmds:
            self._emit(cmd, "cmd")
        for note in notes:
            self._emit(note, "notify")

    def _on_bridge(self, frame: BridgeFrame) -> None:
        payload = frame.payload
        if payload.get("cmd") != "tick":
            return  # only the simulation clock addresses the controller
        ts = float(payload.get("ts", self.now))
        self.on_tick(ts)
        self.outbox.append(BridgeFrame(dst="bot", payload={"cmd": "tick_done", "ts": ts}))

    def on_tick(self, now: float) -> None:
        """Advance sim time: decay pump timers, run the silence watchdog."""
        # decay by tick-to-tick time, not by self.now: report stamps may
        # coincide with the tick stamp and must not eat into the duty window
        dt = now - self.last_tick
        self.last_tick = now
        self.now = max(self.now, now)
        if dt > 0:
            for zone, zc in list(self.zones.items()):
                if zc.pump_timer_s <= 0:
                    continue
                nxt = replace(zc, pump_timer_s=max(0.0, zc.pump_timer_s - dt))
                for cmd in relay_commands(zone, channel_states(zc), channel_states(nxt)):
                    self._emit(cmd, "cmd")
                self.zones[zone] = nxt
        self.wd, alarm = watchdog_step(self.wd, None, now, self.cfg.watchdog)
        if alarm is not None:
            self._emit(alarm, "notify")

    def drain(self) -> list[Frame]:
        out, self.outbox = self.outbox, []
        return out


async def run_controller(host: str, port: int, token: str, cfg: ThresholdConfig,
                         checkpoint_zones: list[tuple[int, int]], log_path: str | None,
                         ready=print) -> None:
    """Live controller process: TCP client loop against a broker."""
    import asyncio

    from agribot.broker import _read_line

    reader, writer = await asyncio.open_connection(host, port)
    sink = JsonlSink(log_path) if log_path else None
    core = ControllerCore(cfg, checkpoint_zones, sink, rx_clock=time.monotonic)
    writer.write(encode_frame(core.auth_frame(token)))
    await writer.drain()
    line, _ = await _read_line(reader)
    if line is None or not isinstance(protocol.parse_frame(line), OkFrame):
        raise RuntimeError(f"broker refused controller auth: {line!r}")
    ready("controller ready")
    try:
        while True:
            line, oversized = await _read_line(reader)
            if line is None:
                break
            if oversized:
                continue
            try:
                frame = protocol.parse_frame(line)
            except protocol.ProtocolError:
                continue
            core.on_frame(frame)
            for out in core.drain():
                writer.write(encode_frame(out))
            await writer.drain()
    finally:
        if sink is not None:
            sink.close()
        writer.close()
