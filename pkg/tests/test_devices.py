"""Sensor and driver models, pinned to known-good conversion values."""

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from agribot.devices import (
    ADC_MAX,
    HBRIDGE_MAX_A,
    Battery,
    Direction,
    DriverFault,
    Level,
    PowerMode,
    RelayBank,
    SensorFault,
    ar65_read,
    battery_step,
    dht11_read,
    hbridge_drive,
    light_adc,
    lm35_adc,
    ph_adc,
    require_finite,
)

# -- golden conversions -------------------------------------------------------

def test_lm35_golden():
    assert lm35_adc(25.0) == 51


def test_lm35_endpoints():
    assert lm35_adc(0.0) == 0
    assert lm35_adc(-5.0) == 0          # single supply: clamps at ground
    assert lm35_adc(500.0) == ADC_MAX   # full span
    assert lm35_adc(1000.0) == ADC_MAX  # clamps past full scale


@given(st.floats(min_value=-50.0, max_value=600.0))
def test_lm35_monotone_and_bounded(t):
    c = lm35_adc(t)
    assert 0 <= c <= ADC_MAX
    assert lm35_adc(t + 1.0) >= c


def test_ph_golden():
    assert ph_adc(7.0) == 512
    assert ph_adc(0.0) == 0
    assert ph_adc(14.0) == ADC_MAX


def test_ph_rejects_out_of_range():
    with pytest.raises(ValueError):
        ph_adc(-0.1)
    with pytest.raises(ValueError):
        ph_adc(14.1)


def test_ar65_tie_reads_high():
    assert ar65_read(0.3, 0.3) is Level.HIGH
    assert ar65_read(0.3000001, 0.3) is Level.HIGH
    assert ar65_read(0.2999999, 0.3) is Level.LOW


def test_ar65_threshold_validated():
    with pytest.raises(ValueError):
        ar65_read(0.5, 1.5)


def test_light_adc():
    assert light_adc(0.0, 50000.0) == 0
    assert light_adc(50000.0, 50000.0) == ADC_MAX
    assert light_adc(80000.0, 50000.0) == ADC_MAX  # saturates
    assert light_adc(25000.0, 50000.0) == round(ADC_MAX / 2)
    with pytest.raises(ValueError):
        light_adc(10.0, 0.0)


# -- DHT11 --------------------------------------------------------------------

def test_dht_truncates_to_integers():
    assert dht11_read(23.9, 55.7) == (23, 55)


def test_dht_envelope():
    assert dht11_read(0.0, 20.0) == (0, 20)
    assert dht11_read(50.0, 90.0) == (50, 90)
    with pytest.raises(SensorFault):
        dht11_read(-0.1, 50.0)
    with pytest.raises(SensorFault):
        dht11_read(50.1, 50.0)
    with pytest.raises(SensorFault):
        dht11_read(25.0, 19.9)
    with pytest.raises(SensorFault):
        dht11_read(25.0, 90.1)


# -- H-bridge -----------------------------------------------------------------

def test_hbridge_fault_iff_over_limit():
    # exactly at the limit: no fault
    assert hbridge_drive([Direction.FORWARD], [HBRIDGE_MAX_A]) == [1]
    with pytest.raises(DriverFault) as exc:
        hbridge_drive([Direction.FORWARD], [math.nextafter(HBRIDGE_MAX_A, 1.0)])
    assert exc.value.motor == 0


def test_hbridge_stop_draws_nothing():
    # a stopped motor cannot over-current
    assert hbridge_drive([Direction.STOP, Direction.REVERSE], [5.0, 0.3]) == [0, -1]


def test_hbridge_signed_speeds():
    assert hbridge_drive([Direction.FORWARD, Direction.REVERSE], [0.3, 0.3]) == [1, -1]


def test_hbridge_input_validation():
    with pytest.raises(ValueError):
        hbridge_drive([Direction.FORWARD], [0.1, 0.2])
    with pytest.raises(ValueError):
        hbridge_drive([Direction.FORWARD], [-0.1])


@given(st.floats(min_value=0.0, max_value=2.0))
def test_hbridge_fault_boundary_property(load):
    caught = False
    try:
        hbridge_drive([Direction.FORWARD], [load])
    except DriverFault:
        caught = True
    assert caught == (load > HBRIDGE_MAX_A)


# -- relays -------------------------------------------------------------------

def test_relay_settle_delay():
    bank = RelayBank(["heater"], settle_s=0.05)
    bank.set("heater", True)
    assert bank.actual("heater") is False   # command recorded, contacts not yet
    bank.tick(0.02)
    assert bank.actual("heater") is False
    bank.tick(0.03)
    assert bank.actual("heater") is True
    bank.set("heater", False)
    bank.tick(0.05)
    assert bank.actual("heater") is False


def test_relay_zero_settle_is_immediate():
    bank = RelayBank(["fan"], settle_s=0.0)
    bank.set("fan", True)
    assert bank.actual("fan") is True


def test_relay_last_command_wins():
    bank = RelayBank(["pump"], settle_s=0.1)
    bank.set("pump", True)
    bank.set("pump", False)
    bank.tick(0.1)
    assert bank.actual("pump") is False


def test_relay_unknown_channel():
    bank = RelayBank(["a"], settle_s=0.0)
    with pytest.raises(KeyError):
        bank.set("b", True)
    with pytest.raises(ValueError):
        RelayBank(["a"], settle_s=-1.0)


# -- battery ------------------------------------------------------------------

def test_battery_discharge_rates_ordered():
    b = Battery(charge_frac=1.0, capacity_as=1000.0,
                idle_draw_a=0.2, drive_draw_a=1.5, stall_draw_a=3.0)
    after_idle = battery_step(b, PowerMode.IDLE, 10.0)
    after_drive = battery_step(b, PowerMode.DRIVING, 10.0)
    after_stall = battery_step(b, PowerMode.STALLED, 10.0)
    assert after_idle.charge_frac == pytest.approx(1.0 - 2.0 / 1000.0)
    assert after_stall.charge_frac < after_drive.charge_frac < after_idle.charge_frac


def test_battery_clamps_at_empty():
    b = Battery(charge_frac=0.001, capacity_as=100.0)
    assert battery_step(b, PowerMode.STALLED, 1000.0).charge_frac == 0.0


def test_battery_validation():
    with pytest.raises(ValueError):
        Battery(charge_frac=1.5)
    with pytest.raises(ValueError):
        Battery(capacity_as=0.0)
    with pytest.raises(ValueError):
        Battery(idle_draw_a=2.0, drive_draw_a=1.5, stall_draw_a=3.0)
    with pytest.raises(ValueError):
        battery_step(Battery(), PowerMode.IDLE, 0.0)


# -- shared guard -------------------------------------------------------------

def test_require_finite_names_the_culprit():
    require_finite(a=1.0, b=-2.5)
    with pytest.raises(ValueError, match="b must be finite"):
        require_finite(a=0.0, b=float("nan"))
