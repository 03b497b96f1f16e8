import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynhbf.beamformer_updates import (AmplitudeOutOfRange, EmptySubarray, coupling_cost,
                                       dps_decompose, dps_realize, tilde_target, update_abf,
                                       update_abf_dym_dps, update_dbf, update_receivers,
                                       update_weights)
from dynhbf.metrics import ARCHITECTURES, check_architecture, fixed_mapping, sinr_all

from conftest import crandn

PHASES = np.exp(2j * np.pi * np.arange(4096) / 4096)
AMPS = np.linspace(0, 2, 64)


def exhaustive_row(t_row, f_d, unit_modulus):
    """Best (cost, chain, entry) over chain x phase grid x amplitude grid."""
    cand = PHASES[None, :] * (np.ones(1) if unit_modulus else AMPS)[:, None]
    cand = cand.ravel()
    best = (np.inf, None, None)
    for j in range(f_d.shape[0]):
        resid = t_row[None, :] - cand[:, None] * f_d[j][None, :]
        cost = np.sum(np.abs(resid) ** 2, axis=1)
        k = int(np.argmin(cost))
        if cost[k] < best[0]:
            best = (cost[k], j, cand[k])
    return best


def grid_slack(t_row, f_d, x, unit_modulus):
    """Largest cost excess of the nearest grid point to ``x`` on its chain."""
    e = np.sum(np.abs(f_d) ** 2, axis=1).max()
    dist = abs(x) * np.pi / 4096 + (0 if unit_modulus else 1 / 63)
    grad = 2 * np.linalg.norm(t_row) * np.linalg.norm(f_d, axis=1).max() + 2 * e * abs(x)
    return e * dist ** 2 + grad * dist


@pytest.mark.parametrize("arch", ["DymDPS", "DymSPS"])
def test_dynamic_rows_match_exhaustive_search(arch, rng):
    unit = arch.endswith("SPS")
    for _ in range(100):
        t_tilde = crandn(rng, 4, 2)
        f_d = crandn(rng, 2, 2)
        f_a = update_abf(arch, t_tilde, f_d)
        assert check_architecture(f_a, arch) == []
        for i in range(4):
            cost_cf = np.sum(np.abs(t_tilde[i] - f_a[i] @ f_d) ** 2)
            cost_grid, _, _ = exhaustive_row(t_tilde[i], f_d, unit)
            j = int(np.argmax(np.abs(f_a[i]) > 0)) if np.any(f_a[i]) else 0
            # closed form is exact: never worse than any grid point,
            # and no better than the grid's resolution allows
            assert cost_cf <= cost_grid + 1e-9
            assert cost_grid - cost_cf <= grid_slack(t_tilde[i], f_d, f_a[i, j], unit) + 1e-9


def test_dym_dps_alias(rng):
    t = crandn(rng, 6, 3)
    f_d = crandn(rng, 3, 3)
    assert np.array_equal(update_abf_dym_dps(t, f_d), update_abf("DymDPS", t, f_d))


def test_tie_breaks_to_lowest_chain():
    # identical digital rows make every chain equally good
    f_d = np.ones((3, 2), dtype=complex)
    t = np.ones((4, 2), dtype=complex)
    f_a = update_abf("DymSPS", t, f_d)
    assert np.all(np.abs(f_a[:, 0]) == 1) and not np.any(f_a[:, 1:])


def test_zero_correlation_entry_has_phase_zero():
    f_d = np.array([[1.0, 0.0]], dtype=complex)
    t = np.array([[0.0, 1.0]], dtype=complex)
    assert update_abf("DymSPS", t, f_d)[0, 0] == 1.0
    assert update_abf("DymDPS", t, f_d)[0, 0] == 0.0


def test_degenerate_chain_keeps_valid_entries(rng):
    f_d = crandn(rng, 3, 2)
    f_d[1] = 0
    t = crandn(rng, 8, 2)
    for arch in ("DymSPS", "DymDPS", "FixSPS", "FixDPS"):
        assert check_architecture(update_abf(arch, t, f_d), arch) == []


def test_fixed_update_keeps_support(rng):
    t = crandn(rng, 8, 2)
    f_d = crandn(rng, 2, 2)
    for arch in ("FixSPS", "FixDPS"):
        f_a = update_abf(arch, t, f_d)
        assert check_architecture(f_a, arch) == []
        support = np.abs(f_a) > 0
        assert np.array_equal(np.argmax(support, axis=1), fixed_mapping(8, 2))


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_update_never_increases_coupling_cost(arch, rng):
    for _ in range(20):
        t = crandn(rng, 8, 3)
        f_d = crandn(rng, 3, 3)
        from dynhbf.ao_driver import _initial_analog

        f0 = _initial_analog(arch, 8, 3, rng)
        f1 = update_abf(arch, t, f_d, f0)
        assert check_architecture(f1, arch) == []
        assert coupling_cost(t, f1, f_d) <= coupling_cost(t, f0, f_d) + 1e-10


def test_fc_update_is_coordinatewise_optimal(rng):
    t = crandn(rng, 6, 2)
    f_d = crandn(rng, 2, 2)
    f_a = update_abf("FC", t, f_d, np.exp(1j * rng.random((6, 2))))
    base = coupling_cost(t, f_a, f_d)
    for i in range(6):
        for j in range(2):
            for phase in np.linspace(0, 2 * np.pi, 64, endpoint=False):
                g = f_a.copy()
                g[i, j] = np.exp(1j * phase)
                assert coupling_cost(t, g, f_d) >= base - 1e-6


def test_unknown_architecture():
    with pytest.raises(ValueError):
        update_abf("PartialSPS", np.zeros((2, 1)), np.zeros((1, 1)))


@settings(max_examples=50)
@given(st.floats(0, 2), st.floats(-np.pi, np.pi))
def test_dps_decompose_reconstructs(amplitude, phase):
    p1, p2 = dps_decompose(amplitude, phase)
    assert np.exp(1j * p1) + np.exp(1j * p2) == pytest.approx(amplitude * np.exp(1j * phase),
                                                              abs=1e-9)


def test_dps_decompose_edges():
    assert dps_decompose(2.0, 0.3) == pytest.approx((0.3, 0.3))
    p1, p2 = dps_decompose(0.0, 0.0)
    assert abs(np.exp(1j * p1) + np.exp(1j * p2)) < 1e-12
    with pytest.raises(AmplitudeOutOfRange):
        dps_decompose(2.5, 0.0)
    with pytest.raises(AmplitudeOutOfRange):
        dps_decompose(-0.1, 0.0)


def test_dps_realize_matches_matrix(rng):
    t = crandn(rng, 8, 3)
    f_a = update_abf("DymDPS", t, crandn(rng, 3, 3))
    real = dps_realize(f_a)
    assert np.allclose(real.entries(), f_a, atol=1e-12)


def test_dbf_least_squares(rng):
    f_a = np.exp(1j * rng.random((8, 3)))
    t = crandn(rng, 8, 2)
    f_d = update_dbf(f_a, t)
    expected = np.linalg.lstsq(f_a, t, rcond=None)[0]
    assert np.allclose(f_d, expected)


def test_dbf_exact_when_reachable(rng):
    f_a = np.exp(1j * rng.random((8, 3)))
    f_true = crandn(rng, 3, 2)
    assert np.allclose(update_dbf(f_a, f_a @ f_true), f_true)


def test_dbf_empty_subarray():
    f_a = np.zeros((4, 2), dtype=complex)
    f_a[:, 0] = 1
    with pytest.raises(EmptySubarray) as err:
        update_dbf(f_a, np.ones((4, 1)))
    assert err.value.chains == [1]


def test_tilde_target():
    assert np.array_equal(tilde_target(np.ones(2), np.full(2, 4.0), 2.0), np.full(2, 3.0))
    with pytest.raises(ValueError):
        tilde_target(np.ones(2), np.ones(2), 0.0)


def test_receivers_and_weights(rng):
    h = crandn(rng, 6, 3)
    t = crandn(rng, 6, 3)
    noise = np.array([0.1, 0.2, 0.3])
    d = update_receivers(t, h, noise)
    w = update_weights(t, h, noise)
    assert np.allclose(w, 1 + sinr_all(h, t, noise))
    assert np.all(w >= 1)
    g = h.conj().T @ t
    for u in range(3):
        # MMSE receiver zeroes the derivative of the MSE in delta
        total = np.sum(np.abs(g[u]) ** 2) + noise[u]
        assert d[u] * total == pytest.approx(np.conj(g[u, u]))
