import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import entropy_bits
from seqpas.constellation import build_qam, maxwell_boltzmann, mb_fit_entropy
from seqpas.exceptions import ConfigurationError, DomainError


@pytest.mark.parametrize("order", [16, 64, 256])
def test_unit_energy_and_gray_labels(order):
    c = build_qam(order)
    assert np.isclose(np.mean(c.energies), 1.0)
    d = np.abs(c.points[:, None] - c.points[None, :])
    nearest = np.isclose(d, d[d > 0].min())
    hamming = (c.labels[:, None, :] != c.labels[None, :, :]).sum(-1)
    assert np.all(hamming[nearest] == 1)


@pytest.mark.parametrize("order", [16, 64, 256])
def test_amplitude_bits_do_not_depend_on_signs(order):
    c = build_qam(order)
    half = c.bits_per_symbol // 2
    amp_cols = [i for i in range(c.bits_per_symbol) if i not in (0, half)]
    for idx in range(order):
        mirror = np.argmin(np.abs(c.points - np.conj(-c.points[idx])))
        assert np.array_equal(c.labels[idx][amp_cols], c.labels[mirror][amp_cols])
        assert c.labels[idx][0] != c.labels[mirror][0] and c.labels[idx][half] == c.labels[mirror][half]


def test_amplitude_and_sign_layout():
    c = build_qam(64)
    assert c.levels_per_dim == 4 and c.n_amplitudes == 16
    assert np.array_equal(c.amp_levels, [1, 3, 5, 7])
    for idx in range(64):
        q, a = c.decompose(idx)
        s_i, s_q = divmod(q, 2)
        p = c.points[idx]
        assert np.sign(p.real) == 1 - 2 * s_i and np.sign(p.imag) == 1 - 2 * s_q
        assert np.isclose(abs(p.real), c.amp_alphabet[a // 4]) and np.isclose(abs(p.imag), c.amp_alphabet[a % 4])
        half = c.bits_per_symbol // 2
        assert c.labels[idx][0] == s_i and c.labels[idx][half] == s_q


def test_decompose_rejects_out_of_range():
    with pytest.raises(DomainError):
        build_qam(64).decompose(64)


def test_unsupported_order():
    with pytest.raises(ConfigurationError):
        build_qam(32)


def test_symbol_prior_and_energy_scale(rng):
    c = build_qam(64)
    pa = rng.dirichlet(np.ones(16))
    prior = c.symbol_prior(pa)
    assert np.isclose(prior.sum(), 1.0)
    assert np.isclose(np.dot(prior, c.energies) * c.energy_scale(prior) ** 2, 1.0)


@given(st.floats(0.05, 1.999))
def test_mb_fit_reaches_target(target):
    c = build_qam(64)
    mb = mb_fit_entropy(c, target)
    assert abs(entropy_bits(mb.probs) - target) <= 1e-6
    w = np.exp(-mb.nu * c.amp_alphabet**2)
    assert np.allclose(mb.probs, w / w.sum())


def test_mb_product_entropy():
    mb = mb_fit_entropy(build_qam(64), 1.93)
    assert np.isclose(entropy_bits(mb.pair_probs()), 3.86, atol=2e-6)


def test_mb_entropy_decreases_with_nu():
    amps = build_qam(64).amp_alphabet
    h = [maxwell_boltzmann(amps, nu).entropy for nu in np.linspace(0, 5, 20)]
    assert np.all(np.diff(h) < 0)


def test_mb_fit_rejects_infeasible_target():
    with pytest.raises(DomainError):
        mb_fit_entropy(build_qam(64), 2.5)


def test_to_csv(tmp_path):
    path = tmp_path / "c.csv"
    build_qam(16).to_csv(path)
    assert len(path.read_text().splitlines()) == 17
