import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from oracles import entropy_bits
from seqpas.channel.fiber import FiberConfig
from seqpas.constellation import build_qam
from seqpas.exceptions import ConfigurationError
from seqpas.source_models import TableModel, iid_model, rate_loss_theoretical
from seqpas.training import (
    GRADCHECK_CONFIG,
    DifferentiableTable,
    TorchDemapper,
    TrainConfig,
    _make_batch,
    build_channel,
    evaluate_surrogate,
    exact_expected_loss,
    gradient_check,
    gumbel_softmax_sample,
    initial_logits,
    kl_bits,
    loss_L,
    loss_Lpp,
    mb_target,
    sample_batch,
    train,
)

QAM16 = build_qam(16)
QAM64 = build_qam(64)
FAST = dict(surrogate="kernel", sequence_length=64, batch_size=16, steps=150)


def _toy():
    """Enumerable 16-QAM instance with fixed signs and noise."""
    cfg = GRADCHECK_CONFIG
    target = mb_target(QAM16, 0.95)
    logits = initial_logits(cfg, QAM16, target)
    channel = build_channel(cfg, FiberConfig())
    rng = np.random.default_rng(5)
    n = cfg.sequence_length
    quad = rng.integers(0, 4, n)
    var = channel.noise_variance
    noise = np.sqrt(var / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return cfg, target, logits, channel, quad, noise, var


def _fixed_batch(shaper, quad, noise, size, seed):
    b = sample_batch(shaper, QAM16, size, quad.size, 1.0, np.random.default_rng(seed))
    fixed = _make_batch(b.onehot, b.amp_index, np.tile(quad, (size, 1)), b.marginal, QAM16)
    fixed.log_prob, fixed.boot_log_prob = b.log_prob, b.boot_log_prob
    return fixed, np.tile(noise, (size, 1))


# ----------------------------------------------------------------------------
# Gumbel-Softmax


def test_straight_through_contract():
    logits = torch.tensor([0.3, -0.2], dtype=torch.float64, requires_grad=True)
    gumbel = np.array([0.1, 0.5])
    soft, hard = gumbel_softmax_sample(logits, 0.7, gumbel=gumbel)
    assert torch.equal(hard.detach(), torch.tensor([1.0, 0.0], dtype=torch.float64))
    weights = torch.tensor([2.0, -1.0], dtype=torch.float64)
    (g_hard,) = torch.autograd.grad((hard * weights).sum(), logits)
    logits2 = logits.detach().clone().requires_grad_(True)
    soft2, _ = gumbel_softmax_sample(logits2, 0.7, gumbel=gumbel)
    (g_soft,) = torch.autograd.grad((soft2 * weights).sum(), logits2)
    assert torch.allclose(g_hard, g_soft)


def test_low_temperature_concentrates_on_argmax():
    soft, hard = gumbel_softmax_sample([0.0, 1.0, 0.5], 1e-3, seed=4)
    assert torch.allclose(soft, hard.detach(), atol=1e-6)


def test_equal_logits_give_uniform_frequencies():
    n, a = 40_000, 4
    _, hard = gumbel_softmax_sample(np.zeros((n, a)), 1.0, seed=0)
    freq = hard.sum(0).numpy() / n
    sigma = np.sqrt(0.25 * 0.75 / n)
    assert np.all(np.abs(freq - 0.25) < 3 * sigma)


def test_gumbel_is_seeded():
    a = gumbel_softmax_sample(np.zeros(8), 0.5, seed=3)
    b = gumbel_softmax_sample(np.zeros(8), 0.5, seed=3)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])


def test_temperature_must_be_positive():
    with pytest.raises(ValueError):
        gumbel_softmax_sample(np.zeros(3), 0.0)


# ----------------------------------------------------------------------------
# Table terms


@given(st.integers(0, 2**32 - 1), st.sampled_from([0, 1]))
def test_table_terms_match_numpy_model(seed, memory):
    logits = np.random.default_rng(seed).normal(size=(16**memory, 16))
    shaper = DifferentiableTable(logits, memory)
    _, _, marginal, r_loss = shaper.terms()
    model = shaper.to_model()
    assert np.allclose(marginal.detach().numpy(), model.stationary.marginal, atol=1e-9)
    assert float(r_loss.detach()) == pytest.approx(rate_loss_theoretical(model), abs=1e-9)
    assert float(r_loss.detach()) >= -1e-12


def test_kl_of_identical_laws_is_zero():
    p = torch.as_tensor(mb_target(QAM64, 1.93))
    assert float(kl_bits(p, p)) == 0.0


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(objective="other")
    with pytest.raises(ConfigurationError):
        TrainConfig(temperature_end=0.0)
    with pytest.raises(ConfigurationError):
        TrainConfig(kl_weight=float("inf"))
    with pytest.raises(ConfigurationError):
        TrainConfig(memory=4)
    with pytest.raises(ConfigurationError):
        TrainConfig().replace(unknown=1)


def test_temperature_schedule_is_geometric():
    cfg = TrainConfig(steps=11)
    temps = [cfg.temperature(s) for s in range(11)]
    assert temps[0] == 1.0 and temps[-1] == pytest.approx(0.3)
    assert np.allclose(np.diff(np.log(temps)), np.log(0.3) / 10)


# ----------------------------------------------------------------------------
# Objectives


def test_transparent_channel_loss_is_minus_label_entropy():
    cfg = TrainConfig(order=16, surrogate="kernel", gamma_scale=0.0, noise_variance=0.0, kernel_memory=1, sequence_length=16)
    shaper = DifferentiableTable(np.zeros((1, 4)), 0)
    batch = sample_batch(shaper, QAM16, 8, 16, 1.0, np.random.default_rng(0))
    loss, _ = loss_L(batch, shaper, build_channel(cfg), TorchDemapper(QAM16), noise_var=1e-6)
    assert float(loss.detach()) == pytest.approx(-4.0, abs=1e-9)


def test_loss_value_independent_of_gradient_tracking():
    cfg, target, logits, channel, quad, noise, var = _toy()
    shaper = DifferentiableTable(logits, 1)
    batch, nz = _fixed_batch(shaper, quad, noise, 64, 0)
    tracked, _ = loss_L(batch, shaper, channel, TorchDemapper(QAM16), noise=nz, noise_var=var)
    with torch.no_grad():
        plain, _ = loss_L(batch, shaper, channel, TorchDemapper(QAM16), noise=nz, noise_var=var)
    assert float(tracked.detach()) == float(plain)


def test_monte_carlo_loss_matches_enumeration():
    cfg, target, logits, channel, quad, noise, var = _toy()
    shaper = DifferentiableTable(logits, 1)
    demapper = TorchDemapper(QAM16)
    exact, r_loss, _ = exact_expected_loss(shaper.logits, shaper, QAM16, channel, demapper, quad, noise, var, 0.0, target)
    vals = []
    for seed in range(128):
        batch, nz = _fixed_batch(shaper, quad, noise, 4096, seed)
        with torch.no_grad():
            vals.append(float(loss_L(batch, shaper, channel, demapper, noise=nz, noise_var=var)[0]))
    assert abs(np.mean(vals) - float((exact - r_loss).detach())) < 1e-3


def test_score_gradient_is_unbiased():
    cfg, target, logits, channel, quad, noise, var = _toy()
    demapper = TorchDemapper(QAM16)
    x = torch.as_tensor(logits).clone().requires_grad_(True)
    shaper = DifferentiableTable(logits, 1)
    exact, r_loss, _ = exact_expected_loss(x, shaper, QAM16, channel, demapper, quad, noise, var, 0.0, target)
    (g_exact,) = torch.autograd.grad(exact - r_loss, x)
    grads = []
    for seed in range(40):
        shaper = DifferentiableTable(logits, 1)
        batch, nz = _fixed_batch(shaper, quad, noise, 4096, seed)
        loss_L(batch, shaper, channel, demapper, noise=nz, noise_var=var)[0].backward()
        grads.append(shaper.logits.grad.numpy())
    g, ge = np.mean(grads, 0), g_exact.numpy()
    assert (g * ge).sum() / np.linalg.norm(g) / np.linalg.norm(ge) > 0.99


def test_lpp_terms_match_oracle(rng):
    table = rng.dirichlet(np.ones(16), size=16)
    model = TableModel(table, 1)
    shaper = DifferentiableTable.from_model(model)
    target = mb_target(QAM64, 1.93)
    cfg = TrainConfig(surrogate="kernel", sequence_length=32)
    channel = build_channel(cfg)
    batch = sample_batch(shaper, QAM64, 4, 32, 1.0, rng)
    total, info = loss_Lpp(batch, shaper, channel, TorchDemapper(QAM64), 0.7, target, rng=np.random.default_rng(1))
    marg = model.stationary.marginal
    h_rate = float(np.dot(model.stationary.context_probs, [entropy_bits(row) for row in table]))
    oracle_rl = entropy_bits(marg) - h_rate
    oracle_kl = float(np.sum(marg * np.log2(marg / target)))
    assert float(total.detach()) - info["L"] == pytest.approx(oracle_rl + 0.7 * oracle_kl, abs=1e-9)


def test_lpp_degenerates_to_l_for_iid_model(rng):
    shaper = DifferentiableTable(rng.normal(size=(1, 16)), 0)
    target = mb_target(QAM64, 1.93)
    channel = build_channel(TrainConfig(surrogate="kernel", sequence_length=32))
    batch = sample_batch(shaper, QAM64, 4, 32, 1.0, rng)
    total, info = loss_Lpp(batch, shaper, channel, TorchDemapper(QAM64), 0.0, target, rng=np.random.default_rng(2))
    assert float(total.detach()) == pytest.approx(info["L"], abs=1e-12)


def test_kl_vanishes_at_mb_target(rng):
    target = mb_target(QAM64, 1.93)
    shaper = DifferentiableTable.from_model(iid_model(target))
    _, _, marginal, _ = shaper.terms()
    assert float(kl_bits(marginal, torch.as_tensor(target)).detach()) == pytest.approx(0.0, abs=1e-12)


# ----------------------------------------------------------------------------
# Gradient check and training


def test_gradient_check_passes():
    result = gradient_check()
    assert result.passed
    assert result.max_rel_error < 1e-4
    assert result.rate_loss_error < 1e-6 and result.kl_error < 1e-6


def test_training_is_deterministic():
    cfg = TrainConfig(**{**FAST, "steps": 5})
    m1, t1 = train(cfg)
    m2, t2 = train(cfg)
    assert np.array_equal(m1.table, m2.table)
    assert t1.records == t2.records
    assert np.all(t1.column("R_loss") >= -1e-12)


def test_linear_channel_large_kl_weight_reaches_mb():
    cfg = TrainConfig(**FAST, gamma_scale=0.0, derotate=False, memory=0, kl_weight=20.0)
    model, _ = train(cfg)
    target = mb_target(QAM64, 1.93)
    assert 0.5 * np.abs(model.stationary.marginal - target).sum() < 0.02


def test_linear_channel_objectives_agree():
    base = dict(**FAST, gamma_scale=0.0, derotate=False, memory=1)
    m_l, _ = train(TrainConfig(**base, objective="L"))
    m_pp, _ = train(TrainConfig(**base, objective="Lpp"))
    assert 0.5 * np.abs(m_l.stationary.marginal - m_pp.stationary.marginal).sum() < 0.05


def test_surrogate_evaluation_of_mb(rng):
    model = iid_model(mb_target(QAM64, 1.93))
    report = evaluate_surrogate(model, TrainConfig(surrogate="kernel", sequence_length=256), n_sequences=48)
    assert report.R_loss == pytest.approx(0.0, abs=1e-12)
    assert 4.0 < report.R_bmd < report.marginal_entropy_bits_per_2d
