import math

import pytest

from overdrive.config import ConfigError, dumps, load, parse, save, to_dict
from overdrive.core import RPM
from overdrive.harness import Scenario

MINIMAL = """\
n_total = 16
chassis_mass_kg = 3.2
payload_mass_kg = 10.0
wheel_mass_kg = 0.05
track_width_m = 0.2
wheel_spacing_m = 0.08
wheel_radius_m = 0.035
mu_s = 0.01
mu_l = 0.1
k_s_s_per_m = 1000.0
g_m_s2 = 9.81
rated_voltage_V = 24.0
no_load_current_mA = 50.0
no_load_speed_rpm = 5930.0
stall_torque_mNm = 130.0
armature_resistance_ohm = 7.03
viscous_coeff_Nms = 6e-7
torque_constant_Nm_A = 0.0382
back_emf_constant_V_s_rad = 0.0384
"""


def test_minimal_config_with_datasheet_units():
    sc = parse(MINIMAL)
    m = sc.bundle.motor
    assert m.no_load_speed == pytest.approx(5930 * RPM, rel=1e-15)
    assert m.stall_torque == pytest.approx(0.130) and m.no_load_current == pytest.approx(0.05)
    assert sc.bundle.system.mass == pytest.approx(13.2)
    assert sc.v_ref == Scenario().v_ref


def test_gross_mass_key():
    sc = parse(MINIMAL.replace("payload_mass_kg = 10.0", "gross_mass_kg = 38.2"))
    assert sc.bundle.system.mass == pytest.approx(38.2)


def test_scenario_keys():
    sc = parse(MINIMAL + 'mode = "no_optimization"\ndynamics = "paper-literal"\nduration_s = 60\n'
                         "segments = [[10, 5.0, 0.0], [5, 5.0, 0.3]]\nkp_V_s_rad = 3.0\n")
    assert sc.mode == "no_optimization" and sc.literal and sc.duration == 60
    assert sc.segments == ((10.0, 5.0, 0.0), (5.0, 5.0, 0.3))
    assert sc.gains[0] == 3.0


def test_missing_key():
    with pytest.raises(ConfigError) as ei:
        parse(MINIMAL.replace("wheel_radius_m = 0.035\n", ""))
    assert ei.value.key == "wheel_radius_m" and "missing key" in str(ei.value)


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError) as ei:
        parse(MINIMAL + "wheel_colour = 3\n")
    assert ei.value.key == "wheel_colour" and ei.value.line == 20


def test_wrong_type():
    with pytest.raises(ConfigError) as ei:
        parse(MINIMAL.replace("n_total = 16", 'n_total = "sixteen"'))
    assert "wrong type" in str(ei.value) and ei.value.line == 1


def test_parse_error_has_line():
    with pytest.raises(ConfigError) as ei:
        parse(MINIMAL + "broken = = 1\n")
    assert ei.value.line == 20


@pytest.mark.parametrize("text", ["[system]\nn_total = 16\n", MINIMAL + 'dynamics = "exact"\n',
                                  MINIMAL + "no_load_speed_rad_s = 600.0\n",
                                  MINIMAL + "segments = [[1, 2]]\n"])
def test_rejected(text):
    with pytest.raises(ConfigError):
        parse(text)


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "absent.toml")


def test_file_round_trip(tmp_path):
    sc = Scenario(duration=12.5, battery=True, supply_voltage=18.0).with_gross_mass(28.2)
    save(sc, tmp_path / "c.toml")
    back = load(tmp_path / "c.toml")
    assert back == sc
    assert to_dict(back) == to_dict(sc)
    assert "payload_mass_kg" in dumps(sc)


def test_infinite_capacity_round_trip():
    from dataclasses import replace
    sc = Scenario()
    sc = replace(sc, bundle=replace(sc.bundle, battery=replace(sc.bundle.battery, capacity=math.inf)))
    assert parse(dumps(sc)) == sc
