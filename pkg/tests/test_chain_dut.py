import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from impedancemetry import chain, dut
from impedancemetry.chain import BiasTee, ChainConfig


def test_bias_tee_corner():
    # 1 / (2 pi * 10 MOhm * 406 fF)
    assert BiasTee().corner == pytest.approx(39.2e3, rel=1e-3)


def test_amplification_at_165_mhz():
    # 15 dB - 10 log10(1 + (165/1800)^2) - 10 log10(1 + (165/92)^2)
    oracle = 15 - 10 * math.log10(1 + (165 / 1800) ** 2) - 10 * math.log10(1 + (165 / 92) ** 2)
    assert oracle == pytest.approx(8.714, abs=1e-3)
    assert chain.amplification_db(ChainConfig(), 165e6) == pytest.approx(oracle, abs=1e-9)


def test_highpass_passes_rf_blocks_dc():
    bt = BiasTee()
    assert abs(chain.bias_tee_highpass(bt, 190e6)) == pytest.approx(1.0, abs=1e-6)
    assert abs(chain.bias_tee_highpass(bt, bt.corner)) == pytest.approx(1 / math.sqrt(2))
    assert chain.bias_tee_highpass(bt, 0.0) == 0


def test_transfer_is_stage_gain_times_impedance():
    cfg = ChainConfig()
    f = np.linspace(185e6, 200e6, 7)
    from impedancemetry.tank import tank_impedance
    expected = chain.stage_gain(cfg, f) * tank_impedance(cfg.tank, f)
    np.testing.assert_allclose(chain.chain_transfer(cfg, f).h, expected)


def test_input_for_output_round_trip():
    cfg = ChainConfig()
    vin = chain.input_for_output(cfg, 195e6, 1.8e-3)
    assert abs(chain.chain_transfer(cfg, 195e6).h) * vin == pytest.approx(1.8e-3)


def test_amplitude_flag(caplog):
    cfg = ChainConfig()
    assert chain.check_amplitude(cfg, 1.8e-3)
    assert not chain.check_amplitude(cfg, 5e-3)
    assert "linear threshold" in caplog.text


def test_source_rejects_non_positive_frequency():
    with pytest.raises(ValueError):
        chain.source_current(chain.CurrentSource(), 1.0, 0.0)


# -- DUT -------------------------------------------------------------------------

FET = dut.default_fet()
VGS = np.linspace(-0.25, 0.25, 2001)


@pytest.mark.parametrize("vbg", [5.4, 6.0, 6.6])
def test_dcdv_matches_finite_difference(vbg):
    h = 1e-6
    fd = (dut.fet_cgg(FET, VGS + h, vbg) - dut.fet_cgg(FET, VGS - h, vbg)) / (2 * h)
    exact = dut.fet_dcgg_dv(FET, VGS, vbg)
    # central difference error h^2 C''' / 6 is far below the bound
    rel = np.max(np.abs(fd - exact)) / np.max(np.abs(exact))
    assert rel < 1e-6


@given(a=st.floats(-0.3, 0.3), b=st.floats(-0.3, 0.3), vbg=st.floats(5.0, 7.0))
@settings(max_examples=30, deadline=None)
def test_integral_of_derivative_is_capacitance_difference(a, b, vbg):
    integral, _ = quad(lambda v: float(dut.fet_dcgg_dv(FET, v, vbg)), a, b,
                       limit=200, epsabs=0, epsrel=1e-10,
                       points=[p.position_at(vbg, FET.vbg_ref) for p in FET.peaks
                               if min(a, b) < p.position_at(vbg, FET.vbg_ref) < max(a, b)] or None)
    delta = float(dut.fet_cgg(FET, b, vbg) - dut.fet_cgg(FET, a, vbg))
    scale = max(abs(delta), 1e-3 * FET.c_inv)
    assert abs(integral - delta) / scale < 1e-4


def test_peaks_move_with_backgate_slope():
    p = FET.peaks[2]
    assert p.position_at(6.86, 6.0) == pytest.approx(p.position - 0.86 / 8.6)


def test_sech2_is_overflow_safe():
    with np.errstate(over="raise"):
        assert dut.fet_cgg(FET, 1e4) == pytest.approx(FET.c_inv)


def test_fet_validation():
    with pytest.raises(ValueError):
        dut.FetCvModel(c_sub=1e-15, c_inv=1e-16)
    with pytest.raises(ValueError):
        dut.QuantumPeak(0.0, 1e-18, 0.0, 10.0)


def test_dut_bank_selection():
    bank = dut.DutBank(off_parasitic=0.1e-15)
    assert bank.select("mom1", t=1.0).dut_cap == pytest.approx(4e-15 + 3 * 0.1e-15)
    sel = bank.select("fet0", t=2.0)
    assert sel.vgs == pytest.approx(0.0)
    assert sel.dut_cap == pytest.approx(float(dut.fet_cgg(FET, 0.0, 6.0)) + 3 * 0.1e-15)
    assert bank.select(None).dut_cap == pytest.approx(4 * 0.1e-15)
    assert [e[1] for e in bank.events] == ["mom1", "fet0", None]
    with pytest.raises(KeyError):
        bank.select("mom9")


def test_source_oracles():
    cs = chain.CurrentSource()
    assert abs(chain.source_current(cs, 1e-3, 1e3)) == pytest.approx(3.4e-9)
    assert abs(chain.source_current(cs, 1e-3, cs.pole)) == pytest.approx(3.4e-9 / math.sqrt(2))
    assert chain.source_current(cs, 0.0, 1e6) == 0


def test_bias_tee_passband():
    bt = BiasTee()
    assert abs(chain.bias_tee_highpass(bt, 100 * bt.corner)) > 0.99995


def test_transfer_peaks_near_fr():
    from impedancemetry.tank import resonance
    cfg = ChainConfig()
    fr = resonance(cfg.tank).fr
    f = fr * np.linspace(0.98, 1.02, 401)
    peak = f[np.argmax(np.abs(chain.chain_transfer(cfg, f).h))]
    assert abs(peak / fr - 1) < 2e-3


def test_backgate_shift_oracles():
    assert FET.peaks[0].position_at(8.0, 6.0) == pytest.approx(FET.peaks[0].position - 0.2)
    assert FET.peaks[2].position_at(8.0, 6.0) == pytest.approx(FET.peaks[2].position - 2 / 8.6)


def test_subthreshold_floor():
    bare = dut.FetCvModel()
    assert dut.fet_cgg(bare, -1.0) == pytest.approx(bare.c_sub, rel=1e-9)


def test_derivative_at_peak_and_antisymmetry():
    lone = dut.FetCvModel(vth=5.0, peaks=(dut.QuantumPeak(0.0, 40e-18, 10e-3, 10.0),))
    sigmoid_only = dut.fet_dcgg_dv(dut.FetCvModel(vth=5.0), 0.0)
    assert dut.fet_dcgg_dv(lone, 0.0) == pytest.approx(float(sigmoid_only), abs=1e-30)
    x = np.linspace(1e-3, 0.05, 50)
    np.testing.assert_allclose(dut.fet_dcgg_dv(lone, x), -dut.fet_dcgg_dv(lone, -x), rtol=1e-6)


def test_default_bias_gives_zero_vgs():
    assert dut.DutBank().vgs == 0.0
