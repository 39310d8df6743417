import numpy as np
import pytest
from hypothesis import given, strategies as st

from optiturbo.metrics import (ThresholdNotBracketed, ber, decoding_threshold, evm_db,
                               rule_of_three, snr_eff)


def _qpsk(rng, n):
    return (rng.choice([-1, 1], n) + 1j * rng.choice([-1, 1], n)) / np.sqrt(2)


def test_snr_eff_identity_is_inf(rng):
    s = _qpsk(rng, 1000)
    assert snr_eff(s, s) == np.inf


def test_snr_eff_unit_noise_is_zero_db(rng):
    s = _qpsk(rng, 100_000)
    n = (rng.standard_normal(s.size) + 1j * rng.standard_normal(s.size)) / np.sqrt(2)
    assert abs(snr_eff(s + n, s)) < 0.2


@given(st.floats(0.1, 10), st.floats(-np.pi, np.pi))
def test_snr_eff_gain_invariant(g, phi):
    rng = np.random.default_rng(3)
    s = _qpsk(rng, 2000)
    r = s + 0.1 * (rng.standard_normal(s.size) + 1j * rng.standard_normal(s.size))
    assert snr_eff(g * np.exp(1j * phi) * r, s) == pytest.approx(snr_eff(r, s), abs=1e-9)


def test_snr_eff_validation():
    with pytest.raises(ValueError):
        snr_eff(np.ones(10), np.ones(10))
    with pytest.raises(ValueError):
        snr_eff(np.ones(200), np.ones(201))


def test_evm():
    s = np.ones(100)
    assert evm_db(s * 1.1, s) == pytest.approx(-20.0)


def test_ber_cases():
    a = np.zeros(1000, int)
    assert ber(a, a) == 0
    assert ber(a, 1 - a) == 1
    b = a.copy()
    b[[3, 500, 999]] = 1
    assert ber(a, b) == 0.003
    with pytest.raises(ValueError):
        ber(a, a[:-1])


def test_rule_of_three():
    assert rule_of_three(1_000_000) == 3e-6


def test_threshold_known_crossing():
    grid = [20.0, 20.25, 20.5, 20.75, 21.0]
    assert decoding_threshold(grid, [900, 40, 0, 0, 0]) == (20.5, 0.25)
    # an error pocket above a clean point moves the threshold up
    assert decoding_threshold(grid, [900, 0, 3, 0, 0]) == (20.75, 0.25)
    # order of the grid does not matter
    assert decoding_threshold(grid[::-1], [0, 0, 0, 40, 900]) == (20.5, 0.25)


def test_threshold_not_bracketed():
    with pytest.raises(ThresholdNotBracketed):
        decoding_threshold([1.0, 2.0], [5, 1])
