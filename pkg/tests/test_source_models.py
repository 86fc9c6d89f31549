import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import chain_joint_entropy, entropy_bits
from seqpas.exceptions import ConfigurationError
from seqpas.source_models import (
    BlockwiseModel,
    TableModel,
    entropy_rate,
    iid_model,
    joint_entropy_bruteforce,
    load_model,
    marginal_entropy,
    rate_loss_theoretical,
    sample_sequence,
    save_model,
    sequence_probability,
    uniform_model,
)

tables = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s).dirichlet(np.ones(3) * 0.7, size=3))


@given(tables)
def test_stationary_law_is_invariant(table):
    m = TableModel(table, 1)
    pi = m.stationary.context_probs
    assert np.allclose(pi @ table, pi, atol=1e-10)
    assert np.isclose(pi.sum(), 1.0)


@given(tables)
def test_rate_loss_matches_enumeration(table):
    m = TableModel(table, 1)
    h4, pi = chain_joint_entropy(table, 4)
    h3, _ = chain_joint_entropy(table, 3)
    assert np.isclose(entropy_rate(m), h4 - h3, atol=1e-9)
    assert np.isclose(rate_loss_theoretical(m), entropy_bits(pi) - (h4 - h3), atol=1e-9)
    assert rate_loss_theoretical(m) >= -1e-12


def test_order2_entropy_rate_matches_bruteforce(rng):
    table = rng.dirichlet(np.ones(2), size=4)
    m = TableModel(table, 2)
    h = [joint_entropy_bruteforce(m, n) for n in (6, 7)]
    assert np.isclose(entropy_rate(m), h[1] - h[0], atol=1e-9)


def test_boot_prefix_gives_stationary_sequence_law(rng):
    m = TableModel(rng.dirichlet(np.ones(3), size=9), 2)
    # marginal of every position equals the stationary marginal
    probs = {s: sequence_probability(m, s) for s in itertools.product(range(3), repeat=3)}
    assert np.isclose(sum(probs.values()), 1.0)
    for pos in range(3):
        marg = np.zeros(3)
        for s, p in probs.items():
            marg[s[pos]] += p
        assert np.allclose(marg, m.stationary.marginal, atol=1e-9)


def test_sample_frequencies(rng):
    m = TableModel(rng.dirichlet(np.ones(4), size=4), 1)
    s = sample_sequence(m, 200_000, seed=3)
    freq = np.bincount(s, minlength=4) / s.size
    sigma = np.sqrt(m.stationary.marginal * (1 - m.stationary.marginal) / s.size)
    # correlated samples: allow a generous multiple of the iid standard error
    assert np.all(np.abs(freq - m.stationary.marginal) < 10 * sigma)
    pairs = np.zeros((4, 4))
    np.add.at(pairs, (s[:-1], s[1:]), 1)
    assert np.allclose(pairs / pairs.sum(1, keepdims=True), m.table, atol=0.01)


def test_iid_and_uniform():
    assert marginal_entropy(uniform_model(16)) == pytest.approx(4.0)
    assert rate_loss_theoretical(uniform_model(4, memory=2)) == pytest.approx(0.0, abs=1e-12)
    p = np.array([0.5, 0.25, 0.25])
    assert entropy_rate(iid_model(p)) == pytest.approx(1.5)


def test_blockwise_model_rates():
    joint = np.zeros((2, 2))
    joint[0, 1] = joint[1, 0] = 0.5
    m = BlockwiseModel(joint)
    assert entropy_rate(m) == pytest.approx(0.5)
    assert marginal_entropy(m) == pytest.approx(1.0)


@pytest.mark.parametrize(
    "table, memory",
    [([[0.5, 0.6]], 0), ([[0.5, 0.5], [0.5, 0.5]], 0), ([[-0.1, 1.1]], 0), ([0.5, 0.5], 0)],
)
def test_invalid_tables(table, memory):
    with pytest.raises(ConfigurationError):
        TableModel(table, memory)


def test_save_load_roundtrip(tmp_path, rng):
    m = TableModel(rng.dirichlet(np.ones(16), size=16), 1)
    path = tmp_path / "m.model"
    save_model(m, path)
    assert load_model(path) == m


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.model"
    path.write_text("not a model\n")
    with pytest.raises(ConfigurationError):
        load_model(path)
