"""Device models: the boundary between simulated truth and quantized signals.

Sensors are pure transfer functions from physical values to ADC counts or
digital levels; the relay bank and battery are the only stateful pieces and
are owned by the bot's single simulation loop.

All ADCs are 10-bit over a 0-5000 mV span (0..1023 counts), matching the
hobby-microcontroller class of converter the rest of the electronics assumes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

ADC_MAX = 1023
ADC_SPAN_MV = 5000.0
LM35_MV_PER_C = 10.0

# DHT-class sensor operating envelope; readings outside it are a fault
DHT_TEMP_RANGE = (0.0, 50.0)
DHT_RH_RANGE = (20.0, 90.0)

HBRIDGE_MAX_A = 0.6  # per-motor over-current limit


class SensorFault(Exception):
    """Out-of-envelope reading; callers report a telemetry gap, not a crash."""


class DriverFault(Exception):
    """Motor driver over-current shutdown. Carries the offending motor index."""

    def __init__(self, motor: int, load_a: float):
        super().__init__(f"motor {motor} over-current: {load_a:.3f} A > {HBRIDGE_MAX_A} A")
        self.motor = motor
        self.load_a = load_a


class Level(enum.Enum):
    HIGH = "H"
    LOW = "L"


class Direction(enum.Enum):
    FORWARD = 1
    REVERSE = -1
    STOP = 0


class PowerMode(enum.Enum):
    IDLE = "idle"
    DRIVING = "driving"
    STALLED = "stalled"


def _adc(counts: float) -> int:
    return max(0, min(ADC_MAX, round(counts)))


def lm35_adc(temp_c: float) -> int:
    """Temperature to ADC counts at 10 mV/degC.

    A single-supply converter cannot read below ground, so sub-zero
    temperatures clamp to 0 counts.
    """
    mv = LM35_MV_PER_C * temp_c
    return _adc(mv / ADC_SPAN_MV * ADC_MAX)


def dht11_read(temp_c: float, humidity_pct: float) -> tuple[int, int]:
    """Integer (degC, %RH) pair, truncated the way the sensor reports.

    Raises :class:`SensorFault` outside the modeled operating envelope.
    """
    if not DHT_TEMP_RANGE[0] <= temp_c <= DHT_TEMP_RANGE[1]:
        raise SensorFault(f"temperature {temp_c:.1f} C outside envelope {DHT_TEMP_RANGE}")
    if not DHT_RH_RANGE[0] <= humidity_pct <= DHT_RH_RANGE[1]:
        raise SensorFault(f"humidity {humidity_pct:.1f} %RH outside envelope {DHT_RH_RANGE}")
    return int(temp_c), int(humidity_pct)


def ar65_read(moisture: float, threshold: float) -> Level:
    """Threshold comparator for soil moisture; ties resolve HIGH (wet).

    Resolving the tie wet-side means irrigation never oscillates on exact
    equality with the potentiometer setting.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    return Level.HIGH if moisture >= threshold else Level.LOW


def light_adc(lux: float, full_scale_lux: float) -> int:
    if full_scale_lux <= 0:
        raise ValueError("full_scale_lux must be positive")
    return _adc(min(lux, full_scale_lux) / full_scale_lux * ADC_MAX)


def ph_adc(ph: float) -> int:
    if not 0.0 <= ph <= 14.0:
        raise ValueError(f"ph {ph} outside [0, 14]")
    return _adc(ph / 14.0 * ADC_MAX)


@dataclass
class RelayChannel:
    commanded: bool = False
    actual: bool = False
    settle_remaining_s: float = 0.0


class RelayBank:
    """Settle-delayed switches isolating commands from the actuator circuit.

    ``set`` records the command immediately; the contact state follows after
    the configured settle delay has been ticked down. Last command wins.
    """

    def __init__(self, channels: list[str], settle_s: float = 0.01):
        if settle_s < 0:
            raise ValueError("settle_s must be >= 0")
        self.settle_s = settle_s
        self.channels: dict[str, RelayChannel] = {ch: RelayChannel() for ch in channels}

    def set(self, channel: str, on: bool) -> None:
        try:
            ch = self.channels[channel]
        except KeyError:
            raise KeyError(f"unknown relay channel {channel!r}") from None
        ch.commanded = on
        if self.settle_s == 0.0:
            ch.actual = on
            ch.settle_remaining_s = 0.0
        else:
            ch.settle_remaining_s = self.settle_s

    def tick(self, dt: float) -> None:
        for ch in self.channels.values():
            if ch.settle_remaining_s > 0.0:
                remaining = ch.settle_remaining_s - dt
                # sub-nanosecond residue is float noise, not contact travel
                ch.settle_remaining_s = remaining if remaining > 1e-9 else 0.0
                if ch.settle_remaining_s == 0.0:
                    ch.actual = ch.commanded

    def actual(self, channel: str) -> bool:
        return self.channels[channel].actual


def hbridge_drive(directions: list[Direction], per_motor_load_a: list[float]) -> list[int]:
    """Signed speed command per motor, or a DriverFault on over-current.

    A stopped motor draws nothing in this model. Any driven motor loaded past
    the per-channel limit trips the fault and stops all motors (the driver
    shuts down as a unit).
    """
    if len(directions) != len(per_motor_load_a):
        raise ValueError("one load per motor required")
    out = []
    for i, (d, load) in enumerate(zip(directions, per_motor_load_a)):
        if load < 0:
            raise ValueError(f"motor {i} load must be >= 0")
        if d is Direction.STOP:
            out.append(0)
            continue
        if load > HBRIDGE_MAX_A:
            raise DriverFault(i, load)
        out.append(d.value)
    return out


@dataclass(frozen=True)
class Battery:
    charge_frac: float = 1.0
    capacity_as: float = 216000.0  # ampere-seconds
    idle_draw_a: float = 0.2
    drive_draw_a: float = 1.5
    stall_draw_a: float = 3.0

    def __post_init__(self):
        if not 0.0 <= self.charge_frac <= 1.0:
            raise ValueError("charge_frac outside [0, 1]")
        if self.capacity_as <= 0:
            raise ValueError("capacity_as must be positive")
        if not 0.0 <= self.idle_draw_a < self.drive_draw_a < self.stall_draw_a:
            raise ValueError("draws must satisfy stall > drive > idle >= 0")


def battery_step(b: Battery, mode: PowerMode, dt: float) -> Battery:
    """Discharge by the mode's draw over dt; clamps at empty, never charges."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    draw = {
        PowerMode.IDLE: b.idle_draw_a,
        PowerMode.DRIVING: b.drive_draw_a,
        PowerMode.STALLED: b.stall_draw_a,
    }[mode]
    frac = max(0.0, b.charge_frac - draw * dt / b.capacity_as)
    return replace(b, charge_frac=frac)


def require_finite(**values: float) -> None:
    """Reject NaN/inf inputs by name; shared guard for the physics modules."""
    for name, v in values.items():
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")
