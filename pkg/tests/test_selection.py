import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqpas.channel.fiber import FiberConfig
from seqpas.channel.perturbation import PerturbationKernel, kernel_from_fiber, perturbation_term
from seqpas.constellation import build_qam
from seqpas.exceptions import ConfigurationError, DomainError
from seqpas.matchers.ess import ess_build, ess_find_emax
from seqpas.selection import (
    SelectionConfig,
    amplitude_index_to_levels,
    deselect,
    levels_to_amplitude_index,
    nlin_metric,
    select_sequence,
)

QAM = build_qam(64)
LEVELS = (1, 3, 5, 7)
KERNEL = kernel_from_fiber(FiberConfig(), 4)
CODER = ess_build(32, LEVELS, ess_find_emax(32, LEVELS, 1.93))


def _brute_metric(x, coeffs):
    """Exhaustive average over all I/Q sign patterns of the zero-padded triple sum."""
    n = x.size
    k_mem = (coeffs.shape[0] - 1) // 2

    def at(v, i):
        return v[i] if 0 <= i < n else 0.0

    total = 0.0
    patterns = list(itertools.product((1, -1), repeat=2 * n))
    for signs in patterns:
        s = np.array(signs[:n]) * np.abs(x.real) + 1j * np.array(signs[n:]) * np.abs(x.imag)
        for t in range(n):
            d = sum(
                coeffs[k + k_mem, l + k_mem] * at(s, t + k) * at(s, t + l) * np.conj(at(s, t + k + l))
                for k in range(-k_mem, k_mem + 1)
                for l in range(-k_mem, k_mem + 1)
            )
            total += abs(d) ** 2
    return total / (len(patterns) * n)


def _payload(rng, cfg=SelectionConfig()):
    n_blocks = 2 * cfg.blocklength // CODER.blocklength
    return rng.integers(0, 2, n_blocks * CODER.k)


def test_metric_matches_sign_enumeration(rng):
    kernel = KERNEL.truncated(1)
    x = QAM.unsigned_points[rng.integers(0, 16, 5)]
    assert nlin_metric(x, kernel) == pytest.approx(_brute_metric(x, kernel.coeffs), rel=1e-9)


@given(st.floats(0.1, 10))
@settings(max_examples=10)
def test_metric_scales_with_sixth_power(s):
    x = QAM.unsigned_points[np.arange(16).repeat(2)[:24]]
    k = KERNEL.truncated(2)
    assert nlin_metric(s * x, k) == pytest.approx(s**6 * nlin_metric(x, k), rel=1e-9)


def test_zero_kernel_gives_zero_metric(rng):
    zero = PerturbationKernel(np.zeros((5, 5), dtype=complex), 1.0)
    assert nlin_metric(QAM.unsigned_points[rng.integers(0, 16, 20)], zero) == 0.0


def test_metric_rejects_short_block():
    with pytest.raises(DomainError):
        nlin_metric(np.ones(8, dtype=complex), KERNEL)


def test_metric_correlates_with_nlin_power(rng):
    full = kernel_from_fiber(FiberConfig(), 8)
    metric, power = [], []
    for _ in range(500):
        amp = QAM.unsigned_points[rng.integers(0, 16, 64)]
        metric.append(nlin_metric(amp, KERNEL))
        signed = amp.real * rng.choice([-1, 1], 64) + 1j * amp.imag * rng.choice([-1, 1], 64)
        power.append(np.mean(np.abs(perturbation_term(signed, full)) ** 2))
    assert np.corrcoef(metric, power)[0, 1] > 0.3


def test_constant_metric_picks_first_candidate(rng):
    cfg = SelectionConfig(candidates=2, metric="constant")
    assert select_sequence(_payload(rng, cfg), cfg, CODER, KERNEL, QAM).candidate == 0


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=10)
def test_selection_is_argmin_and_invertible(seed):
    rng = np.random.default_rng(seed)
    cfg = SelectionConfig(candidates=8)
    payload = _payload(rng, cfg)
    result = select_sequence(payload, cfg, CODER, KERNEL, QAM)
    assert np.all(result.metrics[result.candidate] <= result.metrics)
    assert result.candidate == int(np.argmin(result.metrics))
    assert np.array_equal(deselect(result.amplitudes, result.candidate, cfg, CODER, QAM), payload)


def test_selection_keeps_block_energy(rng):
    cfg = SelectionConfig()
    result = select_sequence(_payload(rng, cfg), cfg, CODER, KERNEL, QAM)
    levels = amplitude_index_to_levels(result.amplitudes, 4).reshape(-1, CODER.blocklength)
    assert np.all(np.sum(levels**2, axis=1) <= CODER.e_max)


def test_selected_metric_below_unselected(rng):
    cfg = SelectionConfig()
    chosen, others = [], []
    for _ in range(1000):
        m = select_sequence(_payload(rng, cfg), cfg, CODER, KERNEL, QAM).metrics
        best = int(np.argmin(m))
        chosen.append(m[best])
        others.append(np.delete(m, best).mean())
    margin = 1 - np.mean(chosen) / np.mean(others)
    assert margin > 0.05


def test_selection_is_deterministic(rng):
    cfg = SelectionConfig()
    payload = _payload(rng, cfg)
    a = select_sequence(payload, cfg, CODER, KERNEL, QAM)
    b = select_sequence(payload, cfg, CODER, KERNEL, QAM)
    assert a.candidate == b.candidate and np.array_equal(a.amplitudes, b.amplitudes)


def test_side_information_cost():
    assert SelectionConfig(blocklength=64, candidates=16).side_information_bits == pytest.approx(4 / 64)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SelectionConfig(candidates=3)
    with pytest.raises(ConfigurationError):
        SelectionConfig(candidates=1)
    with pytest.raises(ConfigurationError):
        SelectionConfig(metric="other")
    with pytest.raises(ConfigurationError):
        select_sequence(np.zeros(10), SelectionConfig(blocklength=20), CODER, KERNEL, QAM)


def test_level_index_roundtrip(rng):
    idx = rng.integers(0, 16, 50)
    assert np.array_equal(levels_to_amplitude_index(amplitude_index_to_levels(idx, 4), 4), idx)
