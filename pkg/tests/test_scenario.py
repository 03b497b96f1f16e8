import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynhbf.scenario import (ConfigError, bits_to_nats, default_config, dump_config,
                             generate_comm_channels, load_config, radar_channel,
                             radar_channels, steering_vector)


def test_default_scenario_values():
    cfg = default_config()
    assert (cfg.n_tx, cfg.n_rx, cfg.n_users, cfg.n_rf, cfg.n_slots) == (32, 4, 4, 4, 8)
    assert cfg.power_budget == 1.0
    assert cfg.qos_thresholds == (5 * math.log(2),) * 4
    assert np.allclose(cfg.comm_noise_vars, 10 ** -1.5)
    assert cfg.target_rcs_var == pytest.approx(100.0)
    assert np.allclose(np.rad2deg(cfg.clutter_angles), [-50, -10, 40])
    assert np.allclose(cfg.clutter_rcs_vars, 1000.0)
    assert cfg.validate() is cfg


@given(st.floats(-np.pi / 2, np.pi / 2), st.integers(1, 64))
def test_steering_vector_unit_norm(angle, n):
    a = steering_vector(angle, n)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert a[0] == pytest.approx(1 / np.sqrt(n))


def test_steering_phase_progression():
    a = steering_vector(np.pi / 6, 4)
    ratio = a[1:] / a[:-1]
    assert np.allclose(ratio, np.exp(-2j * np.pi * 0.5))


def test_broadside_radar_channel_is_constant():
    ch = radar_channel(0.0, 4, 32)
    assert np.allclose(ch.matrix, 1 / np.sqrt(4 * 32))
    assert np.linalg.matrix_rank(ch.matrix) == 1


def test_radar_channels_order():
    cfg = default_config()
    target, clutter = radar_channels(cfg)
    assert len(clutter) == 3
    assert np.allclose(target.a_tx, steering_vector(0.0, 32))
    assert np.allclose(clutter[1].a_rx, steering_vector(np.deg2rad(-10), 4))


def test_channels_reproducible_and_shaped():
    cfg = default_config()
    a = generate_comm_channels(cfg, rng=3)
    b = generate_comm_channels(cfg, rng=3)
    assert a.h.shape == (32, 4)
    assert np.array_equal(a.h, b.h)
    assert not np.array_equal(a.h, generate_comm_channels(cfg, rng=4).h)


def test_channel_power_statistics():
    cfg = default_config(n_tx=16, n_users=4)
    h = np.concatenate([generate_comm_channels(cfg, rng=s).h for s in range(200)], axis=1)
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, rel=0.05)


def test_geometric_channel_power():
    cfg = default_config(n_tx=16)
    h = np.concatenate([generate_comm_channels(cfg, "geometric", rng=s).h for s in range(200)],
                       axis=1)
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, rel=0.1)


def test_unknown_channel_model():
    with pytest.raises(ValueError):
        generate_comm_channels(default_config(), model="ricean")


@pytest.mark.parametrize("changes, field", [
    ({"n_rf": 40}, "n_rf"),
    ({"n_users": 5, "qos_thresholds": 1.0, "comm_noise_vars": 0.1}, "n_users"),
    ({"power_budget": 0.0}, "power_budget"),
    ({"qos_thresholds": -1.0}, "qos_thresholds"),
    ({"radar_noise_var": 0.0}, "radar_noise_var"),
    ({"clutter_rcs_vars": (1.0,)}, "clutter_rcs_vars"),
])
def test_validation_names_field(changes, field):
    with pytest.raises(ConfigError) as err:
        default_config(**changes).validate()
    assert field in [f for f, _ in err.value.errors]


def test_bits_to_nats():
    assert bits_to_nats(1.0) == pytest.approx(math.log(2))
    assert np.allclose(bits_to_nats([1.0, 2.0]), [math.log(2), 2 * math.log(2)])


def test_config_file_units(tmp_path):
    path = tmp_path / "s.ini"
    path.write_text(
        "[array]\nn_tx = 16\n"
        "[comm]\npower_budget = 30 dB\nqos_thresholds = 2 bits\ncomm_noise_vars = 500 mW\n"
        "[radar]\ntarget_angle = 10\nclutter_angles = -30, 30\nclutter_rcs_vars = 20 dB, 10 dB\n"
        "[power_model]\np_rf = 0.25\n")
    cfg = load_config(path)
    assert cfg.n_tx == 16
    assert cfg.power_budget == pytest.approx(1000.0)
    assert cfg.qos_thresholds == pytest.approx((2 * math.log(2),) * 4)
    assert cfg.comm_noise_vars == pytest.approx((0.5,) * 4)
    assert cfg.target_angle == pytest.approx(np.deg2rad(10))
    assert cfg.clutter_rcs_vars == pytest.approx((100.0, 10.0))
    assert cfg.power_model.p_rf == 0.25


@pytest.mark.parametrize("text", [
    "[array]\nn_antennas = 3\n",
    "[bogus]\nx = 1\n",
    "[comm]\nqos_thresholds = 3 dB\n",
    "[radar]\ntarget_angle = 0.1 rad\n",
    "[array]\nn_rf = 64\n",
])
def test_config_file_rejections(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


def test_dump_load_round_trip(tmp_path):
    cfg = default_config(n_tx=12, target_angle=0.2, qos_thresholds=(1.0, 2.0, 3.0, 4.0))
    path = tmp_path / "c.ini"
    path.write_text(dump_config(cfg))
    back = load_config(path)
    # degrees <-> radians may move the last bit of an angle
    for name, value in vars(cfg).items():
        other = getattr(back, name)
        if isinstance(value, (tuple, float)):
            assert np.allclose(other, value, rtol=1e-12, atol=0), name
        else:
            assert other == value, name


def test_replace_broadcasts_scalars():
    cfg = default_config().replace(qos_thresholds=2.0)
    assert cfg.qos_thresholds == (2.0,) * 4


@settings(max_examples=25)
@given(st.integers(1, 6), st.integers(0, 3))
def test_config_hashable_and_frozen(n_users, extra):
    cfg = default_config(n_users=n_users, n_rf=n_users + extra, qos_thresholds=1.0,
                         comm_noise_vars=0.1)
    assert hash(cfg) == hash(cfg.replace())
    with pytest.raises(Exception):
        cfg.n_tx = 3
