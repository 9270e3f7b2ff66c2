"""Scenario runner: wires greenhouse, bot, broker, and controller together.

Two execution modes with one contract: ``inproc`` routes encoded frame bytes
through an in-memory broker core on a single thread; ``net`` spawns real
broker and controller processes and drives the bot over a TCP socket. The
run is lock-stepped on simulated time - each tick the bot sends telemetry
followed by a clock bridge frame, and waits for the controller's
``tick_done`` before advancing - so identical seed and config produce an
identical RunLog in either mode.

Determinism rules: all randomness flows from per-consumer streams seeded off
the scenario seed, all record timestamps are simulated seconds, and wall
clock never reaches the log.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import queue
import random
import shutil
import socket
import subprocess
import sys
import tempfile
import threading
from dataclasses import dataclass, field, replace

from agribot.bot import (
    BotState,
    Mode,
    Phase,
    current_checkpoint,
    enter_stuck,
    fsm_step,
    handle_vpin,
    rescue,
    sample_checkpoint,
    set_mode,
    to_wire,
)
from agribot.broker import BrokerCore
from agribot.config import ScenarioConfig, ScriptEvent, dump_config
from agribot.controller import RELAY_DEVICES, ControllerCore
from agribot.devices import RelayBank
from agribot.microclimate import GreenhouseModel, ZoneActuators, step_greenhouse
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
    parse_frame,
)

BOT_NODE = "bot"
CTL_NODE = "ctl"
DRIVE_PIN_SET = (0, 1, 2, 3)

# distinct stream tags so adding a consumer never shifts existing draws
_STUCK_STREAM = 0xA5A55A5A
_WALK_STREAM = 0x3C3CC3C3

SUBPROCESS_TIMEOUT_S = 30.0


@dataclass(frozen=True)
class LogRecord:
    tick_ts: float
    kind: str  # event | tele | cmd | notify | err
    body: dict


@dataclass
class RunLog:
    records: list[LogRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def canonicalize(log: RunLog) -> list[tuple[float, str, str]]:
    """The comparable core of a run: sim timestamp, kind, canonical body."""
    return [(r.tick_ts, r.kind, json.dumps(r.body, sort_keys=True, separators=(",", ":")))
            for r in log.records]


def _frame_body(frame: Frame) -> dict:
    return json.loads(encode_frame(frame))


class SimNode:
    """The device half of a run: greenhouse physics, relays, and the bot."""

    def __init__(self, cfg: ScenarioConfig, collect_traces: bool = False):
        self.cfg = cfg
        self.model = GreenhouseModel.uniform(cfg.rows, cfg.cols, cfg.initial,
                                             cfg.params, cfg.ambient)
        self.relays = [[RelayBank(list(RELAY_DEVICES), cfg.relay_settle_s)
                        for _ in range(cfg.cols)] for _ in range(cfg.rows)]
        self.bot = BotState(battery=cfg.battery,
                            motor_load_a=cfg.motor_nominal_a,
                            nominal_load_a=cfg.motor_nominal_a,
                            stall_load_a=cfg.motor_stall_a)
        self.stuck_rng = random.Random(cfg.seed ^ _STUCK_STREAM)
        self.walk_rng = random.Random(cfg.seed ^ _WALK_STREAM)
        self.ambient_temp_c = cfg.ambient.temp_c
        self.t = 0.0
        self.pending_sample = False
        self.script_idx = 0
        self.last_tele: TeleFrame | None = None
        self.next_repeat_t: float | None = None
        self.safety_violations = 0
        self.traces: dict | None = None
        if collect_traces:
            self.traces = {"t": [], "zones": {
                (r, c): {"temp_c": [], "moisture": [], "heater": [], "fan": [], "pump": []}
                for r in range(cfg.rows) for c in range(cfg.cols)}}

    # -- inbound ---------------------------------------------------------

    def _apply_frame(self, frame: Frame, t: float, records: list[LogRecord]) -> None:
        if isinstance(frame, VwFrame):
            try:
                held, drive = handle_vpin(frame.pin, frame.val, self.bot.held_pins)
            except ValueError:
                return  # not a drive pin; nothing listens there
            self.bot = replace(self.bot, held_pins=held, drive=drive)
        elif isinstance(frame, BridgeFrame):
            self._apply_bridge(frame, t, records)
        # ok/err/notify/tele need no device-side action

    def _apply_bridge(self, frame: BridgeFrame, t: float, records: list[LogRecord]) -> None:
        payload = frame.payload
        cmd = payload.get("cmd")
        if cmd == "relay":
            zone = payload.get("zone")
            dev = payload.get("dev")
            if (isinstance(zone, list) and len(zone) == 2
                    and 0 <= zone[0] < self.cfg.rows and 0 <= zone[1] < self.cfg.cols
                    and dev in RELAY_DEVICES):
                self.relays[zone[0]][zone[1]].set(dev, bool(payload.get("on")))
        elif cmd == "rescue":
            self.bot, ev = rescue(self.bot, t)
            records.append(LogRecord(t, "event", {"event": ev.kind, **ev.data}))
            if ev.kind == "rescue":
                self.next_repeat_t = None
        elif cmd == "mode":
            mode = Mode.MANUAL if payload.get("mode") == "manual" else Mode.AUTO
            self.bot, ev = set_mode(self.bot, mode, t)
            records.append(LogRecord(t, "event", {"event": ev.kind, **ev.data}))
        elif cmd == "sample":
            self.pending_sample = True
        # tick_done is transport-level and already consumed by the driver

    def _apply_script(self, t: float, records: list[LogRecord]) -> None:
        while (self.script_idx < len(self.cfg.script)
               and self.cfg.script[self.script_idx].at_s <= t + 1e-9):
            ev: ScriptEvent = self.cfg.script[self.script_idx]
            self.script_idx += 1
            if ev.action == "stuck":
                if self.bot.phase not in (Phase.STUCK, Phase.FAULT):
                    self.bot, bev = enter_stuck(self.bot, t)
                    records.append(LogRecord(t, "event", {"event": bev.kind, **bev.data,
                                                          "forced": True}))
            elif ev.action == "rescue":
                self.bot, bev = rescue(self.bot, t)
                records.append(LogRecord(t, "event", {"event": bev.kind, **bev.data}))
                if bev.kind == "rescue":
                    self.next_repeat_t = None
            elif ev.action == "mode":
                mode = Mode.MANUAL if ev.mode == "manual" else Mode.AUTO
                self.bot, bev = set_mode(self.bot, mode, t)
                records.append(LogRecord(t, "event", {"event": bev.kind, **bev.data}))
            elif ev.action == "sample":
                self.pending_sample = True

    # -- one tick ---------------------------------------------------------

    def step(self, t_next: float, inbox: list[Frame]) -> tuple[list[LogRecord], list[Frame]]:
        """Advance the device side by dt, returning (log records, wire frames)."""
        cfg = self.cfg
        dt = cfg.dt
        records: list[LogRecord] = []
        wire: list[Frame] = []

        for frame in inbox:
            self._apply_frame(frame, t_next, records)

        for row in self.relays:
            for bank in row:
                bank.tick(dt)
        for r in range(cfg.rows):
            for c in range(cfg.cols):
                bank = self.relays[r][c]
                if bank.actual("heater") and bank.actual("fan"):
                    self.safety_violations += 1

        if cfg.temp_walk is not None:
            w = cfg.temp_walk
            drift = self.walk_rng.gauss(0.0, w.std_per_sqrt_s * math.sqrt(dt))
            self.ambient_temp_c = min(w.hi_c, max(w.lo_c, self.ambient_temp_c + drift))
            self.model.ambient = replace(cfg.ambient, temp_c=self.ambient_temp_c)

        acts = [[ZoneActuators(heater=self.relays[r][c].actual("heater"),
                               fan=self.relays[r][c].actual("fan"),
                               pump=self.relays[r][c].actual("pump"),
                               lamp=self.relays[r][c].actual("lamp"))
                 for c in range(cfg.cols)] for r in range(cfg.rows)]
        self.model = step_greenhouse(self.model, acts, self.t, dt)

        leg_r, leg_c = cfg.plan.checkpoints[self.bot.segment_index]
        self.bot, events = fsm_step(self.bot, cfg.plan, self.model.grid[leg_r][leg_c],
                                    self.stuck_rng, dt, cfg.mud)
        sample_cps = []
        for ev in events:
            if ev.kind == "sample_due":
                sample_cps.append(ev.data["checkpoint"])
            else:
                records.append(LogRecord(t_next, "event", {"event": ev.kind, **ev.data}))

        self._apply_script(t_next, records)

        if self.pending_sample:
            self.pending_sample = False
            sample_cps.append(current_checkpoint(self.bot, cfg.plan))

        for cp in sample_cps:
            zr, zc = cfg.plan.checkpoints[cp]
            self.bot, tf = sample_checkpoint(self.bot, self.model.grid[zr][zc],
                                             cfg.sensors, t_next, cp)
            wf = to_wire(tf)
            self.last_tele = wf
            records.append(LogRecord(t_next, "tele", _frame_body(wf)))
            wire.append(wf)

        if self.bot.phase in (Phase.STUCK, Phase.FAULT):
            if cfg.stuck_emits == "repeat" and self.last_tele is not None:
                period = cfg.plan.segment_length_m / cfg.plan.speed_mps + cfg.plan.dwell_s
                if self.next_repeat_t is None:
                    self.next_repeat_t = t_next + period
                while t_next >= self.next_repeat_t - 1e-9:
                    wf = TeleFrame(seq=self.bot.seq, cp=self.last_tele.cp, ts=t_next,
                                   data=self.last_tele.data)
                    self.bot = replace(self.bot, seq=self.bot.seq + 1)
                    records.append(LogRecord(t_next, "tele", _frame_body(wf)))
                    wire.append(wf)
                    self.next_repeat_t += period
        else:
            self.next_repeat_t = None

        if self.traces is not None:
            self.traces["t"].append(t_next)
            for r in range(cfg.rows):
                for c in range(cfg.cols):
                    z = self.model.grid[r][c]
                    tr = self.traces["zones"][(r, c)]
                    tr["temp_c"].append(z.temp_c)
                    tr["moisture"].append(z.moisture)
                    tr["heater"].append(acts[r][c].heater)
                    tr["fan"].append(acts[r][c].fan)
                    tr["pump"].append(acts[r][c].pump)

        self.t = t_next
        wire.append(BridgeFrame(dst=CTL_NODE, payload={"cmd": "tick", "ts": t_next}))
        return records, wire

    def final_grid(self) -> list[list[dict]]:
        return [[{"temp_c": z.temp_c, "humidity_pct": z.humidity_pct,
                  "light_lux": z.light_lux, "moisture": z.moisture, "ph": z.ph}
                 for z in row] for row in self.model.grid]


# -- transports ---------------------------------------------------------------

class _ListSink:
    """Controller log sink that keeps records in memory (in-process runs)."""

    def __init__(self):
        self.records: list[dict] = []

    def write_record(self, obj: dict) -> None:
        self.records.append(obj)


class _InprocTransport:
    """Bot and controller wired through a BrokerCore; identical frame bytes."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.core = BrokerCore([cfg.broker.token])
        self.bot_inbox: list[bytes] = []
        self.sink = _ListSink()
        self.ctl = ControllerCore(cfg.thresholds, list(cfg.plan.checkpoints),
                                  sink=self.sink, node_id=CTL_NODE)
        self.bot_sess = self.core.connect(self.bot_inbox.append, label=BOT_NODE)
        self.ctl_sess = self.core.connect(self._ctl_rx, label=CTL_NODE)

    def _ctl_rx(self, data: bytes) -> None:
        self.ctl.on_frame(parse_frame(data))

    def start(self) -> None:
        # same join order as the process mode: controller first, then bot
        self.core.handle_line(self.ctl_sess,
                              encode_frame(self.ctl.auth_frame(self.cfg.broker.token)))
        if not self.ctl_sess.authed:
            raise RuntimeError("controller auth rejected")
        self.core.handle_line(self.bot_sess, encode_frame(
            AuthFrame(node=BOT_NODE, token=self.cfg.broker.token,
                      pins=DRIVE_PIN_SET, tele=False)))
        replies = [parse_frame(b) for b in self.bot_inbox]
        self.bot_inbox.clear()
        if replies != [OkFrame()]:
            raise RuntimeError(f"bot auth rejected: {replies}")

    def roundtrip(self, frames: list[Frame], tick_ts: float) -> list[Frame]:
        for f in frames:
            self.core.handle_line(self.bot_sess, encode_frame(f))
        for out in self.ctl.drain():
            self.core.handle_line(self.ctl_sess, encode_frame(out))
        delivered = [parse_frame(b) for b in self.bot_inbox]
        self.bot_inbox.clear()
        return _split_tick_done(delivered, tick_ts)

    def controller_records(self) -> list[dict]:
        return self.sink.records

    def close(self) -> None:
        self.core.disconnect(self.bot_sess)
        self.core.disconnect(self.ctl_sess)


def _split_tick_done(delivered: list[Frame], tick_ts: float) -> list[Frame]:
    """Validate and strip the trailing tick_done acknowledgement."""
    if not delivered:
        raise RuntimeError("no tick_done acknowledgement from controller")
    last = delivered[-1]
    if not (isinstance(last, BridgeFrame) and last.payload.get("cmd") == "tick_done"):
        raise RuntimeError(f"expected tick_done last, got {last}")
    if abs(float(last.payload.get("ts", -1.0)) - tick_ts) > 1e-9:
        raise RuntimeError(f"tick_done for {last.payload.get('ts')}, expected {tick_ts}")
    return delivered[:-1]


def _reader_thread(stream) -> "queue.Queue[str | None]":
    q: queue.Queue[str | None] = queue.Queue()

    def run() -> None:
        for line in stream:
            q.put(line.rstrip("\n"))
        q.put(None)

    threading.Thread(target=run, daemon=True).start()
    return q


def _await_line(q: "queue.Queue[str | None]", contains: str, what: str) -> str:
    try:
        while True:
            line = q.get(timeout=SUBPROCESS_TIMEOUT_S)
            if line is None:
                raise RuntimeError(f"{what} exited before printing {contains!r}")
            if contains in line:
                return line
    except queue.Empty:
        raise RuntimeError(f"timed out waiting for {what} to print {contains!r}") from None


class _NetTransport:
    """Real broker and controller subprocesses; the bot speaks TCP."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.workdir = tempfile.mkdtemp(prefix="agribot-net-")
        self.broker_proc: subprocess.Popen | None = None
        self.ctl_proc: subprocess.Popen | None = None
        self.sock: socket.socket | None = None
        self.rfile = None
        self.ctl_log_path = os.path.join(self.workdir, "controller.jsonl")
        self._ctl_records: list[dict] | None = None

    def start(self) -> None:
        cfg = self.cfg
        tokens_path = os.path.join(self.workdir, "tokens.txt")
        with open(tokens_path, "w", encoding="utf-8") as fh:
            fh.write(cfg.broker.token + "\n")
        cfg_path = os.path.join(self.workdir, "scenario.json")
        with open(cfg_path, "w", encoding="utf-8") as fh:
            json.dump(dump_config(cfg), fh)

        self.broker_proc = subprocess.Popen(
            [sys.executable, "-m", "agribot", "broker",
             "--listen", f"{cfg.broker.tcp_host}:{cfg.broker.tcp_port}",
             "--ws", f"{cfg.broker.ws_host}:{cfg.broker.ws_port}",
             "--tokens", tokens_path],
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
        bq = _reader_thread(self.broker_proc.stdout)
        line = _await_line(bq, "listening", "broker")
        fields = dict(part.split("=", 1) for part in line.split() if "=" in part)
        host, port = fields["tcp"].rsplit(":", 1)
        self.broker_addr = (host, int(port))

        self.ctl_proc = subprocess.Popen(
            [sys.executable, "-m", "agribot", "controller",
             "--broker", f"{self.broker_addr[0]}:{self.broker_addr[1]}",
             "--token", cfg.broker.token,
             "--config", cfg_path,
             "--log", self.ctl_log_path],
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
        cq = _reader_thread(self.ctl_proc.stdout)
        _await_line(cq, "controller ready", "controller")

        self.sock = socket.create_connection(self.broker_addr, timeout=SUBPROCESS_TIMEOUT_S)
        self.sock.settimeout(SUBPROCESS_TIMEOUT_S)
        self.rfile = self.sock.makefile("rb")
        self.sock.sendall(encode_frame(AuthFrame(node=BOT_NODE, token=cfg.broker.token,
                                                 pins=DRIVE_PIN_SET, tele=False)))
        reply = parse_frame(self.rfile.readline())
        if not isinstance(reply, OkFrame):
            raise RuntimeError(f"bot auth rejected: {reply}")

    def roundtrip(self, frames: list[Frame], tick_ts: float) -> list[Frame]:
        self.sock.sendall(b"".join(encode_frame(f) for f in frames))
        delivered: list[Frame] = []
        while True:
            line = self.rfile.readline()
            if not line:
                raise RuntimeError("broker connection closed mid-run")
            frame = parse_frame(line)
            if (isinstance(frame, BridgeFrame)
                    and frame.payload.get("cmd") == "tick_done"):
                delivered.append(frame)
                return _split_tick_done(delivered, tick_ts)
            delivered.append(frame)

    def controller_records(self) -> list[dict]:
        if self._ctl_records is None:
            raise RuntimeError("controller records available only after close()")
        return self._ctl_records

    def close(self) -> None:
        if self.rfile is not None:
            self.rfile.close()
        if self.sock is not None:
            self.sock.close()
        if self.ctl_proc is not None:
            self.ctl_proc.terminate()
            try:
                self.ctl_proc.wait(timeout=SUBPROCESS_TIMEOUT_S)
            except subprocess.TimeoutExpired:
                self.ctl_proc.kill()
                self.ctl_proc.wait()
        if self.broker_proc is not None:
            self.broker_proc.terminate()
            try:
                self.broker_proc.wait(timeout=SUBPROCESS_TIMEOUT_S)
            except subprocess.TimeoutExpired:
                self.broker_proc.kill()
                self.broker_proc.wait()
        records = []
        try:
            with open(self.ctl_log_path, encoding="utf-8") as fh:
                records = [json.loads(line) for line in fh if line.strip()]
        except FileNotFoundError:
            pass
        self._ctl_records = records
        shutil.rmtree(self.workdir, ignore_errors=True)


# -- the runner ----------------------------------------------------------------

def _rx_kind(frame: Frame) -> str:
    if isinstance(frame, BridgeFrame):
        return "cmd"
    if isinstance(frame, NotifyFrame):
        return "notify"
    if isinstance(frame, ErrFrame):
        return "err"
    return "rx"


def run_scenario(cfg: ScenarioConfig, mode: str = "inproc",
                 collect_traces: bool = False) -> RunLog:
    """Run one scenario to completion and return its ordered RunLog.

    ``mode`` is "inproc" or "net". Any module failure aborts with the tick
    number and module name attached.
    """
    if mode not in ("inproc", "net"):
        raise ValueError(f'mode must be "inproc" or "net", not {mode!r}')
    sim = SimNode(cfg, collect_traces=collect_traces)
    transport = _InprocTransport(cfg) if mode == "inproc" else _NetTransport(cfg)
    records: list[LogRecord] = [LogRecord(0.0, "event", {"event": "run_start"})]
    try:
        try:
            transport.start()
        except Exception as e:
            raise RuntimeError(f"tick 0, module transport: {e}") from e
        ticks = cfg.ticks()
        inbox: list[Frame] = []
        for k in range(ticks):
            t_next = (k + 1) * cfg.dt
            try:
                step_records, wire = sim.step(t_next, inbox)
            except Exception as e:
                raise RuntimeError(f"tick {k}, module simulation: {e}") from e
            records.extend(step_records)
            try:
                delivered = transport.roundtrip(wire, t_next)
            except Exception as e:
                raise RuntimeError(f"tick {k}, module transport: {e}") from e
            for frame in delivered:
                records.append(LogRecord(t_next, _rx_kind(frame), _frame_body(frame)))
            inbox = delivered
        records.append(LogRecord(sim.t, "event", {"event": "run_end", "ticks": ticks}))
    finally:
        transport.close()
    meta = {
        "mode": mode,
        "seed": cfg.seed,
        "dt": cfg.dt,
        "ticks": cfg.ticks(),
        "safety_violations": sim.safety_violations,
        "controller_log": transport.controller_records(),
        "final_grid": sim.final_grid(),
    }
    if sim.traces is not None:
        meta["traces"] = sim.traces
    return RunLog(records=records, meta=meta)


# -- export and replay ----------------------------------------------------------

CSV_HEADER = ["ts", "seq", "cp", "tc", "dht_t", "dht_rh", "lux", "m", "ph", "bat"]


def export_log(log: RunLog, format: str = "jsonl") -> bytes:
    """Serialize a RunLog: jsonl mirrors the controller's persistence format,
    csv flattens telemetry frames one row per frame."""
    if format == "jsonl":
        out = io.StringIO()
        for r in log.records:
            out.write(json.dumps({"rx_ts": r.tick_ts, "kind": r.kind, "body": r.body},
                                 separators=(",", ":")))
            out.write("\n")
        return out.getvalue().encode("utf-8")
    if format == "csv":
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in log.records:
            if r.kind != "tele":
                continue
            b = r.body
            d = b["data"]
            dht_t, dht_rh = ("", "") if d["dht"] is None else (d["dht"][0], d["dht"][1])
            writer.writerow([b["ts"], b["seq"], b["cp"], d["tc"], dht_t, dht_rh,
                             d["lux"], d["m"], d["ph"], d["bat"]])
        return out.getvalue().encode("utf-8")
    raise ValueError(f'format must be "jsonl" or "csv", not {format!r}')


def parse_exported_jsonl(data: bytes) -> RunLog:
    records = []
    for line in data.decode("utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        records.append(LogRecord(tick_ts=obj["rx_ts"], kind=obj["kind"], body=obj["body"]))
    return RunLog(records=records, meta={})


def replay_decisions(cfg: ScenarioConfig, controller_records: list[dict]) -> list[dict]:
    """Re-run the rule engine over a persisted controller log.

    Feeds the logged telemetry through a fresh controller with the same
    config and reconstructed tick clock, returning the records it would
    persist. Matching the original log (rx_ts aside) proves the decisions
    are a pure function of config + telemetry.
    """
    tele_in = [r for r in controller_records if r["kind"] == "tele"]
    replayed_sink = _ListSink()
    replayed = ControllerCore(cfg.thresholds, list(cfg.plan.checkpoints), sink=replayed_sink)
    idx = 0
    for k in range(cfg.ticks()):
        t_next = (k + 1) * cfg.dt
        while idx < len(tele_in) and tele_in[idx]["body"]["ts"] <= t_next + 1e-9:
            frame = parse_frame(json.dumps(tele_in[idx]["body"]))
            replayed.on_frame(frame)
            idx += 1
        replayed.on_tick(t_next)
        replayed.drain()
    return replayed_sink.records
