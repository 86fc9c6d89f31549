import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from oracles import perturbation_triple_sum
from seqpas.channel.fiber import ComplexFrame, FiberConfig, dbm_to_watt, watt_to_dbm
from seqpas.channel.perturbation import (
    kernel_from_fiber,
    perturbation_channel,
    perturbation_term,
    regular_perturbation,
)
from seqpas.channel.pulse import matched_filter, rrc_shape
from seqpas.channel.ssfm import cd_compensate, ssfm_propagate, step_boundaries
from seqpas.constellation import build_qam
from seqpas.exceptions import ConfigurationError, DomainError
from seqpas.training import SurrogateChannel

QAM = build_qam(64)


def _symbols(rng, n):
    return QAM.points[rng.integers(0, 64, n)]


def _through_span(x, cfg, power_dbm):
    frame = ssfm_propagate(rrc_shape(x, cfg, power_dbm), cfg, noise=False)
    return matched_filter(cd_compensate(frame, cfg), cfg)


@given(st.floats(-30, 30))
def test_dbm_conversion_roundtrip(p):
    assert watt_to_dbm(dbm_to_watt(p)) == pytest.approx(p, abs=1e-9)


def test_fiber_rejects_bad_parameters():
    with pytest.raises(ConfigurationError):
        FiberConfig(oversampling=2)
    with pytest.raises(ConfigurationError):
        FiberConfig(span_length_km=0)
    with pytest.raises(ConfigurationError):
        FiberConfig().replace(no_such_field=1)


def test_zero_attenuation_and_zero_gamma_allowed():
    cfg = FiberConfig(attenuation_db_per_km=0.0, gamma_per_w_km=0.0)
    assert cfg.effective_length_m == cfg.length_m
    assert cfg.span_gain == 1.0


def test_pulse_shaping_is_transparent(rng):
    cfg = FiberConfig()
    x = _symbols(rng, 512)
    frame = rrc_shape(x, cfg, 3.0)
    assert frame.mean_power_dbm == pytest.approx(3.0, abs=0.1)
    assert np.allclose(matched_filter(frame, cfg), x, atol=1e-10)


def test_lossless_noiseless_span_conserves_energy(rng):
    cfg = FiberConfig(attenuation_db_per_km=0.0)
    frame = rrc_shape(_symbols(rng, 1024), cfg, 10.0)
    out = ssfm_propagate(frame, cfg, noise=False)
    e_in, e_out = np.sum(np.abs(frame.samples) ** 2), np.sum(np.abs(out.samples) ** 2)
    assert abs(e_out - e_in) / e_in < 1e-9


def test_attenuation_matches_span_loss(rng):
    cfg = FiberConfig(gamma_per_w_km=0.0)
    frame = rrc_shape(_symbols(rng, 256), cfg, 0.0)
    out = ssfm_propagate(frame, cfg, noise=False, amplify=False)
    loss_db = 10 * np.log10(np.sum(np.abs(frame.samples) ** 2) / np.sum(np.abs(out.samples) ** 2))
    assert loss_db == pytest.approx(41.0, abs=1e-9)


def test_dispersion_compensation_evm(rng):
    cfg = FiberConfig(gamma_per_w_km=0.0)
    x = _symbols(rng, 2048)
    y = _through_span(x, cfg, 0.0)
    evm_db = 10 * np.log10(np.mean(np.abs(y - x) ** 2) / np.mean(np.abs(x) ** 2))
    assert evm_db < -60


def test_ase_noise_matches_configured_snr(rng):
    cfg = FiberConfig(gamma_per_w_km=0.0)
    x = _symbols(rng, 8192)
    frame = ssfm_propagate(rrc_shape(x, cfg, 0.0), cfg, seed=3)
    y = matched_filter(cd_compensate(frame, cfg), cfg)
    var = np.mean(np.abs(y - x) ** 2)
    assert var == pytest.approx(cfg.normalized_noise_variance(0.0), rel=0.05)


def test_step_rule_caps_nonlinear_phase():
    cfg = FiberConfig()
    peak = 0.1
    z = step_boundaries(cfg, peak)
    leff = (np.exp(-cfg.alpha * z[:-1]) - np.exp(-cfg.alpha * z[1:])) / cfg.alpha
    assert np.all(cfg.gamma * peak * leff <= cfg.max_nonlinear_phase_rad * (1 + 1e-9))
    assert z[0] == 0 and z[-1] == cfg.length_m
    with pytest.raises(DomainError):
        step_boundaries(cfg.replace(step_count=5), peak)


def test_ssfm_deterministic_for_seed(rng):
    cfg = FiberConfig()
    frame = rrc_shape(_symbols(rng, 256), cfg, 4.0)
    a = ssfm_propagate(frame, cfg, seed=9).samples
    b = ssfm_propagate(frame, cfg, seed=9).samples
    assert np.array_equal(a, b)


def test_kernel_matches_direct_triple_sum(rng):
    kernel = kernel_from_fiber(FiberConfig(), 3)
    x = _symbols(rng, 24)
    fast = perturbation_term(x, kernel, 1e-3)
    assert np.allclose(fast, perturbation_triple_sum(x, kernel.coeffs, kernel.gamma, 1e-3), rtol=1e-10, atol=1e-18)


def test_kernel_is_symmetric_and_energy_concentrated():
    kernel = kernel_from_fiber(FiberConfig(), 8)
    assert np.allclose(kernel.coeffs, kernel.coeffs.T)
    profile = kernel.energy_profile()
    assert np.all(np.diff(profile) >= -1e-12) and profile[-1] == pytest.approx(1.0)
    assert kernel.truncated(4).memory == 4


def test_regular_operator_scales_cubically(rng):
    op = regular_perturbation(FiberConfig(), 32)
    x = _symbols(rng, 256)
    a = op.first_order_term(x, 1e-3)
    b = op.first_order_term(x, 2e-3)
    assert np.allclose(b, a * 2**1.5)


def test_regular_operator_tracks_ssfm_at_low_power(rng):
    cfg = FiberConfig()
    ref = cfg.replace(step_count=1000)
    op = regular_perturbation(cfg)
    x = _symbols(rng, 1024)
    p = -9.0
    y = _through_span(x, ref, p)
    d = op.first_order_term(x, dbm_to_watt(p)) / np.sqrt(dbm_to_watt(p))
    nmse = 10 * np.log10(np.mean(np.abs(y - x - d) ** 2) / np.mean(np.abs(y - x) ** 2))
    assert nmse < -35


@pytest.mark.parametrize("surrogate", ["kernel", "regular"])
def test_torch_surrogate_matches_numpy(rng, surrogate):
    cfg = FiberConfig()
    op = kernel_from_fiber(cfg, 4) if surrogate == "kernel" else regular_perturbation(cfg, 16)
    x = _symbols(rng, 64)
    channel = SurrogateChannel(op, 6.0, 0.0, memory=4)
    torch_out = channel(torch.as_tensor(x)).numpy()
    assert np.allclose(torch_out, perturbation_channel(x, op, 6.0), atol=1e-12)


def test_derotation_removes_common_phase(rng):
    cfg = FiberConfig()
    x = torch.as_tensor(_symbols(rng, (4, 128)))
    op = regular_perturbation(cfg, 16)
    y = SurrogateChannel(op, 10.0, 0.0, derotate=True, memory=4)(x)
    corr = (torch.conj(x) * y).sum(-1)
    assert torch.allclose(corr.imag, torch.zeros(4, dtype=torch.float64), atol=1e-9)


def test_untruncated_surrogate_requires_memory():
    with pytest.raises(ConfigurationError):
        SurrogateChannel(regular_perturbation(FiberConfig(), 16), 0.0, 0.0)


def test_complex_frame_power():
    frame = ComplexFrame(np.full(16, np.sqrt(1e-3), dtype=complex), 200.0, 0.0)
    assert frame.mean_power_dbm == pytest.approx(0.0)
    assert len(frame) == 16
