"""Scenario configuration: one JSON document validated against every module's
preconditions at load time, so a run can only fail for runtime reasons.

Every field is optional; the defaults describe a small two-zone greenhouse
with a two-checkpoint patrol. Errors name the offending field path and the
violated rule rather than raising bare exceptions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from agribot.bot import MudModel, PathPlan, SensorSetup
from agribot.controller import ThresholdConfig, WatchdogConfig
from agribot.devices import Battery
from agribot.microclimate import AmbientProfile, ModelParams, ZoneState


class ConfigError(Exception):
    """A named validation failure: which field, which rule."""

    def __init__(self, path: str, rule: str):
        self.path = path
        self.rule = rule
        super().__init__(f"{path}: {rule}")


@dataclass(frozen=True)
class TempWalk:
    """Seeded random walk on the ambient temperature, clamped to a range."""
    std_per_sqrt_s: float = 0.0
    lo_c: float = -10.0
    hi_c: float = 45.0


@dataclass(frozen=True)
class BrokerEndpoints:
    tcp_host: str = "127.0.0.1"
    tcp_port: int = 0  # 0 = ephemeral, resolved at bind time
    ws_host: str = "127.0.0.1"
    ws_port: int = 0
    token: str = "greenhouse"


@dataclass(frozen=True)
class ScriptEvent:
    at_s: float
    action: str               # stuck | rescue | mode | sample
    mode: str | None = None   # for action == mode: auto | manual


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    dt: float = 1.0
    duration_s: float = 3600.0
    rows: int = 1
    cols: int = 2
    initial: ZoneState = field(default_factory=lambda: ZoneState(22.0, 50.0, 0.0, 0.5, 7.0))
    params: ModelParams = field(default_factory=ModelParams)
    ambient: AmbientProfile = field(default_factory=AmbientProfile)
    temp_walk: TempWalk | None = None
    plan: PathPlan = field(default_factory=lambda: PathPlan(checkpoints=((0, 0), (0, 1))))
    sensors: SensorSetup = field(default_factory=SensorSetup)
    relay_settle_s: float = 0.0
    motor_nominal_a: float = 0.3
    motor_stall_a: float = 0.9
    battery: Battery = field(default_factory=Battery)
    mud: MudModel = field(default_factory=MudModel)
    stuck_emits: str = "repeat"  # repeat | silent
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    broker: BrokerEndpoints = field(default_factory=BrokerEndpoints)
    script: tuple[ScriptEvent, ...] = ()

    def ticks(self) -> int:
        return int(round(self.duration_s / self.dt))


def serpentine_checkpoints(rows: int, cols: int) -> tuple[tuple[int, int], ...]:
    """Visit every zone once: left-to-right, then back on the next row."""
    out = []
    for r in range(rows):
        cs = range(cols) if r % 2 == 0 else range(cols - 1, -1, -1)
        out.extend((r, c) for c in cs)
    return tuple(out)


# --- typed readers ----------------------------------------------------------

def _at(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _section(obj, path: str, allowed: set[str]) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(path, "must be a JSON object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(_at(path, key), "unknown field")
    return obj


def _num(obj: dict, path: str, key: str, default, lo=None, hi=None) -> float:
    v = obj.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(_at(path, key), "must be a finite number")
    if lo is not None and v < lo:
        raise ConfigError(_at(path, key), f"must be >= {lo}")
    if hi is not None and v > hi:
        raise ConfigError(_at(path, key), f"must be <= {hi}")
    return float(v)


def _int(obj: dict, path: str, key: str, default, lo=None, hi=None) -> int:
    v = obj.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(_at(path, key), "must be an integer")
    if lo is not None and v < lo:
        raise ConfigError(_at(path, key), f"must be >= {lo}")
    if hi is not None and v > hi:
        raise ConfigError(_at(path, key), f"must be <= {hi}")
    return v


def _str(obj: dict, path: str, key: str, default, choices=None) -> str:
    v = obj.get(key, default)
    if not isinstance(v, str):
        raise ConfigError(_at(path, key), "must be a string")
    if choices is not None and v not in choices:
        raise ConfigError(_at(path, key), f"must be one of {sorted(choices)}")
    return v


def _pair(obj: dict, path: str, key: str, default) -> tuple[float, float]:
    v = obj.get(key, default)
    if (not isinstance(v, (list, tuple)) or len(v) != 2
            or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v)):
        raise ConfigError(_at(path, key), "must be a pair of numbers")
    return float(v[0]), float(v[1])


def _addr(obj: dict, path: str, key: str, default: tuple[str, int]) -> tuple[str, int]:
    v = obj.get(key)
    if v is None:
        return default
    if not isinstance(v, str) or ":" not in v:
        raise ConfigError(_at(path, key), "must be a host:port string")
    host, _, port_s = v.rpartition(":")
    try:
        port = int(port_s)
    except ValueError:
        raise ConfigError(_at(path, key), "port must be an integer") from None
    if not (0 <= port <= 65535):
        raise ConfigError(_at(path, key), "port must be in 0..65535")
    return host, port


def _build(path: str, ctor, **kwargs):
    """Construct a validating dataclass, renaming its ValueError to the path."""
    try:
        return ctor(**kwargs)
    except ValueError as e:
        raise ConfigError(path, str(e)) from None


# --- section parsers ---------------------------------------------------------

def _parse_params(obj: dict) -> ModelParams:
    sec = _section(obj, "params", {
        "k_amb", "k_nbr", "heat_rate", "fan_cool_gain", "fan_cool_rate", "irr_rate",
        "dry_rate", "dry_temp_gain", "evap_h_rate", "vent_rate", "lamp_lux",
        "shade_factor", "ph_drift"})
    d = ModelParams()
    kwargs = {}
    for name in ("k_amb", "k_nbr", "heat_rate", "fan_cool_gain", "fan_cool_rate",
                 "irr_rate", "dry_rate", "dry_temp_gain", "evap_h_rate", "vent_rate",
                 "lamp_lux", "shade_factor"):
        kwargs[name] = _num(sec, "params", name, getattr(d, name))
    kwargs["ph_drift"] = _num(sec, "params", "ph_drift", d.ph_drift)
    return _build("params", ModelParams, **kwargs)


def _parse_ambient(obj: dict) -> tuple[AmbientProfile, TempWalk | None]:
    sec = _section(obj, "ambient", {
        "temp_c", "humidity_pct", "light_peak_lux", "day_length_s", "period_s", "temp_walk"})
    d = AmbientProfile()
    prof = _build(
        "ambient", AmbientProfile,
        temp_c=_num(sec, "ambient", "temp_c", d.temp_c),
        humidity_pct=_num(sec, "ambient", "humidity_pct", d.humidity_pct, 0.0, 100.0),
        light_peak_lux=_num(sec, "ambient", "light_peak_lux", d.light_peak_lux, 0.0),
        day_length_s=_num(sec, "ambient", "day_length_s", d.day_length_s),
        period_s=_num(sec, "ambient", "period_s", d.period_s))
    walk = None
    if "temp_walk" in sec:
        w = _section(sec["temp_walk"], "ambient.temp_walk", {"std_per_sqrt_s", "lo_c", "hi_c"})
        walk = TempWalk(
            std_per_sqrt_s=_num(w, "ambient.temp_walk", "std_per_sqrt_s", 0.0, 0.0),
            lo_c=_num(w, "ambient.temp_walk", "lo_c", -10.0),
            hi_c=_num(w, "ambient.temp_walk", "hi_c", 45.0))
        if walk.lo_c >= walk.hi_c:
            raise ConfigError("ambient.temp_walk", "lo_c must be < hi_c")
    return prof, walk


def _parse_plan(obj: dict, rows: int, cols: int) -> PathPlan:
    sec = _section(obj, "plan", {"checkpoints", "segment_length_m", "speed_mps", "dwell_s"})
    cps_raw = sec.get("checkpoints")
    if cps_raw is None:
        cps = serpentine_checkpoints(rows, cols)
    else:
        if not isinstance(cps_raw, list) or not cps_raw:
            raise ConfigError("plan.checkpoints", "must be a non-empty list of [row, col] pairs")
        cps = []
        for i, item in enumerate(cps_raw):
            if (not isinstance(item, (list, tuple)) or len(item) != 2
                    or any(isinstance(x, bool) or not isinstance(x, int) for x in item)):
                raise ConfigError(f"plan.checkpoints[{i}]", "must be an [int row, int col] pair")
            r, c = item
            if not (0 <= r < rows and 0 <= c < cols):
                raise ConfigError(f"plan.checkpoints[{i}]",
                                  f"zone ({r},{c}) outside the {rows}x{cols} grid")
            cps.append((r, c))
        cps = tuple(cps)
    dp = PathPlan(checkpoints=((0, 0),))
    return _build("plan", PathPlan, checkpoints=cps,
                  segment_length_m=_num(sec, "plan", "segment_length_m", dp.segment_length_m),
                  speed_mps=_num(sec, "plan", "speed_mps", dp.speed_mps),
                  dwell_s=_num(sec, "plan", "dwell_s", dp.dwell_s))


def _parse_devices(obj: dict) -> dict:
    sec = _section(obj, "devices", {
        "ar65_threshold", "light_full_scale_lux", "relay_settle_s",
        "motor_nominal_a", "motor_stall_a", "battery"})
    ds = SensorSetup()
    sensors = _build("devices", SensorSetup,
                     ar65_threshold=_num(sec, "devices", "ar65_threshold",
                                         ds.ar65_threshold, 0.0, 1.0),
                     light_full_scale_lux=_num(sec, "devices", "light_full_scale_lux",
                                               ds.light_full_scale_lux))
    if sensors.light_full_scale_lux <= 0:
        raise ConfigError("devices.light_full_scale_lux", "must be positive")
    nominal = _num(sec, "devices", "motor_nominal_a", 0.3, 0.0)
    stall = _num(sec, "devices", "motor_stall_a", 0.9, 0.0)
    if stall < nominal:
        raise ConfigError("devices.motor_stall_a", "must be >= motor_nominal_a")
    bsec = _section(sec.get("battery", {}), "devices.battery",
                    {"charge_frac", "capacity_as", "idle_draw_a", "drive_draw_a", "stall_draw_a"})
    db = Battery()
    battery = _build("devices.battery", Battery,
                     charge_frac=_num(bsec, "devices.battery", "charge_frac",
                                      db.charge_frac, 0.0, 1.0),
                     capacity_as=_num(bsec, "devices.battery", "capacity_as", db.capacity_as),
                     idle_draw_a=_num(bsec, "devices.battery", "idle_draw_a", db.idle_draw_a),
                     drive_draw_a=_num(bsec, "devices.battery", "drive_draw_a", db.drive_draw_a),
                     stall_draw_a=_num(bsec, "devices.battery", "stall_draw_a", db.stall_draw_a))
    return {"sensors": sensors,
            "relay_settle_s": _num(sec, "devices", "relay_settle_s", 0.0, 0.0),
            "motor_nominal_a": nominal, "motor_stall_a": stall, "battery": battery}


def _parse_thresholds(obj: dict) -> ThresholdConfig:
    sec = _section(obj, "thresholds", {
        "temp", "temp_hyst", "humidity", "humidity_hyst", "light",
        "pump_on_s", "ph_counts", "watchdog"})
    d = ThresholdConfig()
    t_lo, t_hi = _pair(sec, "thresholds", "temp", (d.temp_lo_c, d.temp_hi_c))
    rh_lo, rh_hi = _pair(sec, "thresholds", "humidity", (d.rh_lo, d.rh_hi))
    lsec = _section(sec.get("light", {}), "thresholds.light",
                    {"floor_counts", "window_s", "day_period_s"})
    w0, w1 = _pair(lsec, "thresholds.light", "window_s", d.light_window_s)
    ph_lo, ph_hi = _pair(sec, "thresholds", "ph_counts", (d.ph_lo_counts, d.ph_hi_counts))
    wsec = _section(sec.get("watchdog", {}), "thresholds.watchdog",
                    {"stall_reports", "eps_counts", "silence_timeout_s"})
    dw = WatchdogConfig()
    wd = _build("thresholds.watchdog", WatchdogConfig,
                stall_reports=_int(wsec, "thresholds.watchdog", "stall_reports",
                                   dw.stall_reports),
                eps_counts=_int(wsec, "thresholds.watchdog", "eps_counts", dw.eps_counts),
                silence_timeout_s=_num(wsec, "thresholds.watchdog", "silence_timeout_s",
                                       dw.silence_timeout_s))
    return _build("thresholds", ThresholdConfig,
                  temp_lo_c=t_lo, temp_hi_c=t_hi,
                  temp_hyst_c=_num(sec, "thresholds", "temp_hyst", d.temp_hyst_c),
                  rh_lo=rh_lo, rh_hi=rh_hi,
                  rh_hyst=_num(sec, "thresholds", "humidity_hyst", d.rh_hyst),
                  light_floor_counts=_int(lsec, "thresholds.light", "floor_counts",
                                          d.light_floor_counts),
                  light_window_s=(w0, w1),
                  day_period_s=_num(lsec, "thresholds.light", "day_period_s", d.day_period_s),
                  pump_on_s=_num(sec, "thresholds", "pump_on_s", d.pump_on_s),
                  ph_lo_counts=int(ph_lo), ph_hi_counts=int(ph_hi),
                  watchdog=wd)


def _parse_script(obj) -> tuple[ScriptEvent, ...]:
    if not isinstance(obj, list):
        raise ConfigError("script", "must be a list of events")
    events = []
    for i, item in enumerate(obj):
        path = f"script[{i}]"
        sec = _section(item, path, {"at_s", "action", "mode"})
        for required in ("at_s", "action"):
            if required not in sec:
                raise ConfigError(f"{path}.{required}", "is required")
        at_s = _num(sec, path, "at_s", None, 0.0)
        action = _str(sec, path, "action", None, {"stuck", "rescue", "mode", "sample"})
        mode = None
        if action == "mode":
            mode = _str(sec, path, "mode", "auto", {"auto", "manual"})
        elif "mode" in sec:
            raise ConfigError(f"{path}.mode", 'only valid with action "mode"')
        events.append(ScriptEvent(at_s=at_s, action=action, mode=mode))
    return tuple(sorted(events, key=lambda e: e.at_s))


def load_config(source) -> ScenarioConfig:
    """Parse and validate a scenario document.

    Accepts bytes, str (JSON text), or an already-decoded dict. Raises
    ConfigError naming the field path and rule for any violation.
    """
    if isinstance(source, (bytes, bytearray)):
        source = source.decode("utf-8")
    if isinstance(source, str):
        try:
            source = json.loads(source)
        except json.JSONDecodeError as e:
            raise ConfigError("<document>", f"invalid JSON: {e}") from None
    root = _section(source, "", {
        "seed", "dt", "duration_s", "grid", "initial", "params", "ambient", "plan",
        "devices", "bot", "thresholds", "broker", "script"})

    seed = _int(root, "", "seed", 0, 0, (1 << 64) - 1)
    dt = _num(root, "", "dt", 1.0)
    if dt <= 0:
        raise ConfigError("dt", "must be positive")
    duration_s = _num(root, "", "duration_s", 3600.0, 0.0)

    gsec = _section(root.get("grid", {}), "grid", {"rows", "cols"})
    rows = _int(gsec, "grid", "rows", 1, 1)
    cols = _int(gsec, "grid", "cols", 2, 1)

    isec = _section(root.get("initial", {}), "initial",
                    {"temp_c", "humidity_pct", "light_lux", "moisture", "ph"})
    di = ZoneState(22.0, 50.0, 0.0, 0.5, 7.0)
    initial = _build("initial", ZoneState,
                     temp_c=_num(isec, "initial", "temp_c", di.temp_c),
                     humidity_pct=_num(isec, "initial", "humidity_pct",
                                       di.humidity_pct, 0.0, 100.0),
                     light_lux=_num(isec, "initial", "light_lux", di.light_lux, 0.0),
                     moisture=_num(isec, "initial", "moisture", di.moisture, 0.0, 1.0),
                     ph=_num(isec, "initial", "ph", di.ph, 0.0, 14.0))

    params = _parse_params(root.get("params", {}))
    ambient, temp_walk = _parse_ambient(root.get("ambient", {}))
    plan = _parse_plan(root.get("plan", {}), rows, cols)
    dev = _parse_devices(root.get("devices", {}))

    bsec = _section(root.get("bot", {}), "bot",
                    {"mud_threshold", "p_stuck_per_s", "stuck_emits"})
    mud = MudModel(threshold=_num(bsec, "bot", "mud_threshold", 0.9, 0.0, 1.0),
                   p_stuck_per_s=_num(bsec, "bot", "p_stuck_per_s", 0.0, 0.0, 1.0))
    stuck_emits = _str(bsec, "bot", "stuck_emits", "repeat", {"repeat", "silent"})

    thresholds = _parse_thresholds(root.get("thresholds", {}))

    brsec = _section(root.get("broker", {}), "broker", {"tcp", "ws", "token"})
    db = BrokerEndpoints()
    tcp_host, tcp_port = _addr(brsec, "broker", "tcp", (db.tcp_host, db.tcp_port))
    ws_host, ws_port = _addr(brsec, "broker", "ws", (db.ws_host, db.ws_port))
    token = _str(brsec, "broker", "token", db.token)
    if not token:
        raise ConfigError("broker.token", "must be non-empty")
    broker = BrokerEndpoints(tcp_host, tcp_port, ws_host, ws_port, token)

    script = _parse_script(root.get("script", []))
    for i, ev in enumerate(script):
        if ev.at_s > duration_s:
            raise ConfigError(f"script[{i}].at_s", "beyond the end of the run")

    # cross-module: explicit-Euler stability bound ties dt to the coupling rates
    bound = params.max_stable_dt()
    if dt > bound:
        raise ConfigError("dt", f"violates the stability bound dt <= 1/(k_amb + 4*k_nbr)"
                                f" = {bound:.6g} s")

    return ScenarioConfig(
        seed=seed, dt=dt, duration_s=duration_s, rows=rows, cols=cols,
        initial=initial, params=params, ambient=ambient, temp_walk=temp_walk,
        plan=plan, sensors=dev["sensors"], relay_settle_s=dev["relay_settle_s"],
        motor_nominal_a=dev["motor_nominal_a"], motor_stall_a=dev["motor_stall_a"],
        battery=dev["battery"], mud=mud, stuck_emits=stuck_emits,
        thresholds=thresholds, broker=broker, script=script)


def dump_config(cfg: ScenarioConfig) -> dict:
    """Inverse of load_config: a JSON-ready dict that loads back equal.

    Used to hand a validated scenario to the broker/controller subprocesses.
    """
    p, a, th, w = cfg.params, cfg.ambient, cfg.thresholds, cfg.thresholds.watchdog
    doc = {
        "seed": cfg.seed,
        "dt": cfg.dt,
        "duration_s": cfg.duration_s,
        "grid": {"rows": cfg.rows, "cols": cfg.cols},
        "initial": {"temp_c": cfg.initial.temp_c, "humidity_pct": cfg.initial.humidity_pct,
                    "light_lux": cfg.initial.light_lux, "moisture": cfg.initial.moisture,
                    "ph": cfg.initial.ph},
        "params": {name: getattr(p, name) for name in (
            "k_amb", "k_nbr", "heat_rate", "fan_cool_gain", "fan_cool_rate", "irr_rate",
            "dry_rate", "dry_temp_gain", "evap_h_rate", "vent_rate", "lamp_lux",
            "shade_factor", "ph_drift")},
        "ambient": {"temp_c": a.temp_c, "humidity_pct": a.humidity_pct,
                    "light_peak_lux": a.light_peak_lux, "day_length_s": a.day_length_s,
                    "period_s": a.period_s},
        "plan": {"checkpoints": [[r, c] for r, c in cfg.plan.checkpoints],
                 "segment_length_m": cfg.plan.segment_length_m,
                 "speed_mps": cfg.plan.speed_mps, "dwell_s": cfg.plan.dwell_s},
        "devices": {"ar65_threshold": cfg.sensors.ar65_threshold,
                    "light_full_scale_lux": cfg.sensors.light_full_scale_lux,
                    "relay_settle_s": cfg.relay_settle_s,
                    "motor_nominal_a": cfg.motor_nominal_a,
                    "motor_stall_a": cfg.motor_stall_a,
                    "battery": {"charge_frac": cfg.battery.charge_frac,
                                "capacity_as": cfg.battery.capacity_as,
                                "idle_draw_a": cfg.battery.idle_draw_a,
                                "drive_draw_a": cfg.battery.drive_draw_a,
                                "stall_draw_a": cfg.battery.stall_draw_a}},
        "bot": {"mud_threshold": cfg.mud.threshold, "p_stuck_per_s": cfg.mud.p_stuck_per_s,
                "stuck_emits": cfg.stuck_emits},
        "thresholds": {"temp": [th.temp_lo_c, th.temp_hi_c], "temp_hyst": th.temp_hyst_c,
                       "humidity": [th.rh_lo, th.rh_hi], "humidity_hyst": th.rh_hyst,
                       "light": {"floor_counts": th.light_floor_counts,
                                 "window_s": list(th.light_window_s),
                                 "day_period_s": th.day_period_s},
                       "pump_on_s": th.pump_on_s,
                       "ph_counts": [th.ph_lo_counts, th.ph_hi_counts],
                       "watchdog": {"stall_reports": w.stall_reports,
                                    "eps_counts": w.eps_counts,
                                    "silence_timeout_s": w.silence_timeout_s}},
        "broker": {"tcp": f"{cfg.broker.tcp_host}:{cfg.broker.tcp_port}",
                   "ws": f"{cfg.broker.ws_host}:{cfg.broker.ws_port}",
                   "token": cfg.broker.token},
    }
    if cfg.temp_walk is not None:
        doc["ambient"]["temp_walk"] = {"std_per_sqrt_s": cfg.temp_walk.std_per_sqrt_s,
                                       "lo_c": cfg.temp_walk.lo_c, "hi_c": cfg.temp_walk.hi_c}
    if cfg.script:
        doc["script"] = [
            {"at_s": ev.at_s, "action": ev.action, **({"mode": ev.mode} if ev.mode else {})}
            for ev in cfg.script]
    return doc
