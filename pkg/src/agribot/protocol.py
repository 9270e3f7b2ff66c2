"""Wire protocol: newline-delimited JSON frames shared by every node.

One frame per line, UTF-8, with a fixed key order so that encoding is
canonical: ``parse_frame(encode_frame(f)) == f`` for every valid frame, and
two nodes building the same frame produce identical bytes.

Frame kinds::

    auth:   {"t":"auth","node":str,"token":str,"sub":{"pins":[int...],"tele":bool}}
    ok:     {"t":"ok"}
    err:    {"t":"err","code":str}
    vw:     {"t":"vw","pin":0-255,"val":number}
    tele:   {"t":"tele","seq":int,"cp":int,"ts":float,"data":{...}}
    bridge: {"t":"bridge","dst":str,"payload":object}
    notify: {"t":"notify","level":"info"|"warn","msg":str}

The tele ``data`` object carries raw sensor readings: ``tc`` (temperature ADC
counts), ``dht`` ([int deg C, int %RH] or null on sensor fault), ``lux``
(light ADC counts), ``m`` ("H"/"L" soil moisture level), ``ph`` (pH ADC
counts), ``bat`` (battery fraction 0-1).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Union

VPIN_MIN = 0
VPIN_MAX = 255

# machine-readable error codes carried by err frames
BAD_JSON = "bad_json"
UNKNOWN_KIND = "unknown_kind"
MISSING_FIELD = "missing_field"
BAD_TYPE = "bad_type"
NOT_AUTHED = "not_authed"
AUTH_FAILED = "auth_failed"
DUPLICATE_NODE = "duplicate_node"
ALREADY_AUTHED = "already_authed"
NO_ROUTE = "no_route"


class ProtocolError(Exception):
    """A line that does not parse to a valid frame. ``code`` is wire-ready."""

    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


@dataclass(frozen=True)
class AuthFrame:
    node: str
    token: str
    pins: tuple[int, ...] = ()
    tele: bool = False


@dataclass(frozen=True)
class OkFrame:
    pass


@dataclass(frozen=True)
class ErrFrame:
    code: str


@dataclass(frozen=True)
class VwFrame:
    pin: int
    val: Union[int, float]


@dataclass(frozen=True)
class TeleData:
    tc: int
    dht: tuple[int, int] | None
    lux: int
    m: str  # "H" | "L"
    ph: int
    bat: float


@dataclass(frozen=True)
class TeleFrame:
    seq: int
    cp: int
    ts: float
    data: TeleData


@dataclass(frozen=True)
class BridgeFrame:
    dst: str
    payload: dict = field(default_factory=dict)


@dataclass(frozen=True)
class NotifyFrame:
    level: str  # "info" | "warn"
    msg: str


Frame = Union[AuthFrame, OkFrame, ErrFrame, VwFrame, TeleFrame, BridgeFrame, NotifyFrame]


def _reject_constant(name: str):
    # NaN/Infinity are not JSON; surface them as bad_json
    raise ValueError(f"non-JSON constant {name}")


def _get(obj: dict, key: str, kind: str) -> Any:
    if key not in obj:
        raise ProtocolError(MISSING_FIELD, f"{kind} frame missing {key!r}")
    return obj[key]


def _as_int(v: Any, what: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ProtocolError(BAD_TYPE, f"{what} must be an integer")
    return v


def _as_number(v: Any, what: str) -> Union[int, float]:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ProtocolError(BAD_TYPE, f"{what} must be a number")
    if isinstance(v, float) and not math.isfinite(v):
        raise ProtocolError(BAD_TYPE, f"{what} must be finite")
    return v


def _as_str(v: Any, what: str) -> str:
    if not isinstance(v, str):
        raise ProtocolError(BAD_TYPE, f"{what} must be a string")
    return v


def _parse_tele_data(obj: Any) -> TeleData:
    if not isinstance(obj, dict):
        raise ProtocolError(BAD_TYPE, "tele data must be an object")
    tc = _as_int(_get(obj, "tc", "tele"), "data.tc")
    raw_dht = _get(obj, "dht", "tele")
    if raw_dht is None:
        dht = None
    elif isinstance(raw_dht, list) and len(raw_dht) == 2:
        dht = (_as_int(raw_dht[0], "data.dht[0]"), _as_int(raw_dht[1], "data.dht[1]"))
    else:
        raise ProtocolError(BAD_TYPE, "data.dht must be [int, int] or null")
    lux = _as_int(_get(obj, "lux", "tele"), "data.lux")
    m = _as_str(_get(obj, "m", "tele"), "data.m")
    if m not in ("H", "L"):
        raise ProtocolError(BAD_TYPE, 'data.m must be "H" or "L"')
    ph = _as_int(_get(obj, "ph", "tele"), "data.ph")
    bat = float(_as_number(_get(obj, "bat", "tele"), "data.bat"))
    return TeleData(tc=tc, dht=dht, lux=lux, m=m, ph=ph, bat=bat)


def parse_frame(line: bytes | str) -> Frame:
    """Parse one newline-terminated line into a frame.

    Raises :class:`ProtocolError` with a machine-readable code on any
    malformed input; never raises anything else for arbitrary bytes.
    """
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ProtocolError(BAD_JSON, "not UTF-8") from e
    try:
        obj = json.loads(line, parse_constant=_reject_constant)
    except ValueError as e:
        raise ProtocolError(BAD_JSON, str(e)) from e
    if not isinstance(obj, dict):
        raise ProtocolError(BAD_JSON, "frame must be a JSON object")
    if "t" not in obj:
        raise ProtocolError(MISSING_FIELD, "frame missing 't'")
    kind = obj["t"]
    if kind == "auth":
        node = _as_str(_get(obj, "node", "auth"), "node")
        token = _as_str(_get(obj, "token", "auth"), "token")
        pins: tuple[int, ...] = ()
        tele = False
        if "sub" in obj:
            sub = obj["sub"]
            if not isinstance(sub, dict):
                raise ProtocolError(BAD_TYPE, "sub must be an object")
            if "pins" in sub:
                raw = sub["pins"]
                if not isinstance(raw, list):
                    raise ProtocolError(BAD_TYPE, "sub.pins must be a list")
                pins = tuple(_check_pin(_as_int(p, "sub.pins[]")) for p in raw)
            if "tele" in sub:
                if not isinstance(sub["tele"], bool):
                    raise ProtocolError(BAD_TYPE, "sub.tele must be a boolean")
                tele = sub["tele"]
        return AuthFrame(node=node, token=token, pins=pins, tele=tele)
    if kind == "ok":
        return OkFrame()
    if kind == "err":
        return ErrFrame(code=_as_str(_get(obj, "code", "err"), "code"))
    if kind == "vw":
        pin = _check_pin(_as_int(_get(obj, "pin", "vw"), "pin"))
        val = _as_number(_get(obj, "val", "vw"), "val")
        return VwFrame(pin=pin, val=val)
    if kind == "tele":
        seq = _as_int(_get(obj, "seq", "tele"), "seq")
        cp = _as_int(_get(obj, "cp", "tele"), "cp")
        ts = float(_as_number(_get(obj, "ts", "tele"), "ts"))
        data = _parse_tele_data(_get(obj, "data", "tele"))
        return TeleFrame(seq=seq, cp=cp, ts=ts, data=data)
    if kind == "bridge":
        dst = _as_str(_get(obj, "dst", "bridge"), "dst")
        payload = _get(obj, "payload", "bridge")
        if not isinstance(payload, dict):
            raise ProtocolError(BAD_TYPE, "payload must be an object")
        return BridgeFrame(dst=dst, payload=payload)
    if kind == "notify":
        level = _as_str(_get(obj, "level", "notify"), "level")
        if level not in ("info", "warn"):
            raise ProtocolError(BAD_TYPE, 'level must be "info" or "warn"')
        msg = _as_str(_get(obj, "msg", "notify"), "msg")
        return NotifyFrame(level=level, msg=msg)
    raise ProtocolError(UNKNOWN_KIND, f"unknown frame kind {kind!r}")


def _check_pin(pin: int) -> int:
    if not VPIN_MIN <= pin <= VPIN_MAX:
        raise ProtocolError(BAD_TYPE, f"pin {pin} outside {VPIN_MIN}-{VPIN_MAX}")
    return pin


def encode_frame(frame: Frame) -> bytes:
    """Encode a frame to its canonical single-line form (newline-terminated)."""
    if isinstance(frame, AuthFrame):
        obj: dict[str, Any] = {
            "t": "auth",
            "node": frame.node,
            "token": frame.token,
            "sub": {"pins": list(frame.pins), "tele": frame.tele},
        }
    elif isinstance(frame, OkFrame):
        obj = {"t": "ok"}
    elif isinstance(frame, ErrFrame):
        obj = {"t": "err", "code": frame.code}
    elif isinstance(frame, VwFrame):
        obj = {"t": "vw", "pin": frame.pin, "val": frame.val}
    elif isinstance(frame, TeleFrame):
        d = frame.data
        obj = {
            "t": "tele",
            "seq": frame.seq,
            "cp": frame.cp,
            "ts": frame.ts,
            "data": {
                "tc": d.tc,
                "dht": list(d.dht) if d.dht is not None else None,
                "lux": d.lux,
                "m": d.m,
                "ph": d.ph,
                "bat": d.bat,
            },
        }
    elif isinstance(frame, BridgeFrame):
        obj = {"t": "bridge", "dst": frame.dst, "payload": frame.payload}
    elif isinstance(frame, NotifyFrame):
        obj = {"t": "notify", "level": frame.level, "msg": frame.msg}
    else:
        raise TypeError(f"not a frame: {frame!r}")
    return (json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")
