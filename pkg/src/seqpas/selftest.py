"""Fast structural invariant checks run by ``seqpas selftest``.

Each check returns ``True`` on success; an exception counts as a failure and
is logged with its module and invariant name.
"""

import logging

import numpy as np

log = logging.getLogger(__name__)

_CHECKS = []


def check(module, invariant):
    def register(fn):
        _CHECKS.append((module, invariant, fn))
        return fn

    return register


# ----------------------------------------------------------------------------
# constellation


@check("constellation", "16-QAM has 4 points per quadrant and 2 levels per dimension")
def _qam16(seed):
    from .constellation import build_qam

    c = build_qam(16)
    return c.n_amplitudes == 4 and len(c.amp_alphabet) == 2


@check("constellation", "64-QAM has 4 amplitude levels per dimension")
def _qam64(seed):
    from .constellation import build_qam

    return len(build_qam(64).amp_alphabet) == 4


@check("constellation", "decompose and recompose are inverse on all 64 indices")
def _bijection(seed):
    from .constellation import build_qam

    c = build_qam(64)
    q, a = c.decompose(np.arange(64))
    return np.array_equal(c.recompose(q, a), np.arange(64))


@check("constellation", "first-quadrant points carry both positive signs")
def _signs(seed):
    from .constellation import build_qam

    c = build_qam(64)
    up = c.unsigned_points
    sign_bits = c.labels[: c.n_amplitudes][:, [0, c.bits_per_symbol // 2]]
    return bool(np.all(up.real > 0) and np.all(up.imag > 0) and not sign_bits.any())


@check("constellation", "maximum-entropy target gives nu = 0 and uniform probabilities")
def _mb_uniform(seed):
    from .constellation import build_qam, mb_fit_entropy

    mb = mb_fit_entropy(build_qam(64), 2.0)
    return mb.nu == 0 and np.allclose(mb.probs, 0.25)


@check("constellation", "vanishing target concentrates on the smallest amplitude")
def _mb_limit(seed):
    from .constellation import build_qam, mb_fit_entropy

    return mb_fit_entropy(build_qam(64), 1e-3).probs[0] > 0.999


# ----------------------------------------------------------------------------
# source models


@check("source_models", "memoryless model returns its marginal")
def _iid_probs(seed):
    from .source_models import iid_model

    p = np.random.default_rng(seed).dirichlet(np.ones(16))
    m = iid_model(p)
    return np.allclose(m.probs(m.initial_state()), p)


@check("source_models", "constant logits give the uniform conditional")
def _uniform_logits(seed):
    from .source_models import TableModel

    m = TableModel.from_logits(np.full((16, 16), 0.7), 1)
    return np.allclose(m.next_distribution([5]), 1 / 16)


@check("source_models", "order-1 table lookup returns the table row")
def _table_lookup(seed):
    from .source_models import TableModel

    table = np.random.default_rng(seed).dirichlet(np.ones(4), size=4)
    m = TableModel(table, 1)
    return all(np.array_equal(m.next_distribution([i]), table[i]) for i in range(4))


@check("source_models", "memoryless stationary marginal equals the model marginal")
def _iid_stationary(seed):
    from .source_models import iid_model

    p = np.random.default_rng(seed).dirichlet(np.ones(16))
    return np.allclose(iid_model(p).stationary.marginal, p)


@check("source_models", "symmetric binary chain is stationary at (1/2, 1/2)")
def _symmetric_chain(seed):
    from .source_models import TableModel

    q = 0.3
    return np.allclose(TableModel([[1 - q, q], [q, 1 - q]], 1).stationary.marginal, 0.5)


@check("source_models", "uniform 16-ary model has marginal entropy 4 bits")
def _uniform_entropy(seed):
    from .source_models import marginal_entropy, uniform_model

    return abs(marginal_entropy(uniform_model(16)) - 4.0) < 1e-12


@check("source_models", "memoryless models have zero rate loss")
def _iid_rate_loss(seed):
    from .source_models import iid_model, rate_loss_theoretical

    p = np.random.default_rng(seed).dirichlet(np.ones(16))
    return abs(rate_loss_theoretical(iid_model(p))) < 1e-12


@check("source_models", "deterministic model yields a fully determined sequence")
def _deterministic(seed):
    from .source_models import TableModel, sample_sequence

    succ = np.roll(np.arange(5), -1)
    m = TableModel(np.eye(5)[succ], 1)
    s = sample_sequence(m, 50, seed=seed)
    return bool(np.all(s[1:] == succ[s[:-1]]))


@check("source_models", "fixed seed reproduces the sequence")
def _sample_seed(seed):
    from .source_models import TableModel, sample_sequence

    m = TableModel(np.random.default_rng(seed).dirichlet(np.ones(4), size=4), 1)
    return np.array_equal(sample_sequence(m, 200, seed=seed), sample_sequence(m, 200, seed=seed))


# ----------------------------------------------------------------------------
# matchers


@check("matchers", "binary uniform ADM is the identity")
def _adm_identity(seed):
    from .matchers.adm import AdmCoder, adm_encode
    from .source_models import uniform_model

    bits = np.random.default_rng(seed).integers(0, 2, 256)
    out = adm_encode(AdmCoder(uniform_model(2)), bits)
    return np.array_equal(out, bits)


@check("matchers", "ADM round trips at n = 64 and 2048")
def _adm_roundtrip(seed):
    from .matchers.adm import AdmCoder, adm_decode, adm_encode
    from .source_models import TableModel

    rng = np.random.default_rng(seed)
    coder = AdmCoder(TableModel(rng.dirichlet(np.ones(16), size=16), 1))
    for n, trials in ((64, 100), (2048, 10)):
        for _ in range(trials):
            bits = rng.integers(0, 2, n)
            if not np.array_equal(adm_decode(coder, adm_encode(coder, bits), n), bits):
                return False
    return True


@check("matchers", "single-bit payload round trips")
def _adm_single(seed):
    from .constellation import build_qam, mb_fit_entropy
    from .matchers.adm import AdmCoder, adm_decode, adm_encode
    from .source_models import iid_model

    coder = AdmCoder(iid_model(mb_fit_entropy(build_qam(64), 1.93).pair_probs()))
    return all(adm_decode(coder, adm_encode(coder, [b]), 1)[0] == b for b in (0, 1))


@check("matchers", "binary uniform ADM has zero rate loss")
def _adm_zero_loss(seed):
    from .matchers.adm import AdmCoder, measure_rate_loss_adm
    from .source_models import uniform_model

    loss, l_bar = measure_rate_loss_adm(AdmCoder(uniform_model(2)), 128, 100, seed=seed)
    return loss == 0.0 and l_bar == 128


@check("matchers", "unconstrained ESS sphere contains every sequence")
def _ess_full(seed):
    from .matchers.ess import ess_build

    return ess_build(8, (1, 3, 5, 7), 8 * 49).n_sequences == 4**8


@check("matchers", "ESS index 0 is the all-minimum-amplitude block")
def _ess_zero(seed):
    from .matchers.ess import ess_build

    return bool(np.all(ess_build(16, (1, 3, 5, 7), 200).encode_index(0) == 1))


# ----------------------------------------------------------------------------
# channel


@check("channel", "impulse peak equals the RRC peak amplitude")
def _rrc_peak(seed):
    from .channel.fiber import FiberConfig, dbm_to_watt
    from .channel.pulse import rrc_shape, rrc_taps

    cfg = FiberConfig()
    sps = cfg.oversampling
    x = np.zeros(256, dtype=complex)
    x[0] = 1.0
    wave = rrc_shape(x, cfg, 0.0).samples / np.sqrt(dbm_to_watt(0.0) * sps)
    peak = rrc_taps(sps, cfg.rrc_rolloff, 128)[128 * sps]
    return abs(abs(wave[0]) - peak) < 1e-3 * peak


@check("channel", "spectrum confined to (1 + rolloff) times the symbol rate")
def _rrc_band(seed):
    from .channel.fiber import FiberConfig
    from .channel.pulse import rrc_shape

    cfg = FiberConfig()
    x = np.exp(2j * np.pi * np.random.default_rng(seed).random(512))
    frame = rrc_shape(x, cfg, 0.0)
    f = np.fft.fftfreq(frame.samples.size, d=1.0 / cfg.sample_rate)
    spectrum = np.abs(np.fft.fft(frame.samples)) ** 2
    outside = spectrum[np.abs(f) > (1 + cfg.rrc_rolloff) * cfg.symbol_rate / 2 * (1 + 1e-9)].sum()
    return outside < 1e-20 * spectrum.sum()


@check("channel", "linear lossless fiber is all-pass and conserves energy")
def _lossless(seed):
    from .channel.fiber import FiberConfig
    from .channel.pulse import rrc_shape
    from .channel.ssfm import ssfm_propagate

    cfg = FiberConfig(gamma_per_w_km=0.0, attenuation_db_per_km=0.0)
    x = np.exp(2j * np.pi * np.random.default_rng(seed).random(512))
    frame = rrc_shape(x, cfg, 0.0)
    out = ssfm_propagate(frame, cfg, noise=False, amplify=False)
    e_in, e_out = np.sum(np.abs(frame.samples) ** 2), np.sum(np.abs(out.samples) ** 2)
    same_mag = np.allclose(np.abs(np.fft.fft(out.samples)), np.abs(np.fft.fft(frame.samples)), rtol=1e-9, atol=1e-12)
    return abs(e_out - e_in) < 1e-9 * e_in and same_mag


@check("channel", "zero nonlinearity gives a pure AWGN surrogate")
def _awgn(seed):
    from .channel.fiber import FiberConfig
    from .channel.perturbation import kernel_from_fiber, perturbation_channel

    k = kernel_from_fiber(FiberConfig(), 2).with_gamma(0.0)
    x = np.exp(2j * np.pi * np.random.default_rng(seed).random(64))
    y = perturbation_channel(x, k, 0.0, 0.1, seed=seed)
    rng = np.random.default_rng(seed)
    noise = np.sqrt(0.05) * (rng.standard_normal(64) + 1j * rng.standard_normal(64))
    return np.allclose(y, x + noise)


@check("channel", "doubling launch power scales the distortion by 2^(3/2)")
def _homogeneity(seed):
    from .channel.fiber import FiberConfig
    from .channel.perturbation import kernel_from_fiber, perturbation_term

    k = kernel_from_fiber(FiberConfig(), 2)
    x = np.exp(2j * np.pi * np.random.default_rng(seed).random(64))
    return np.allclose(perturbation_term(x, k, 2e-3), 2**1.5 * perturbation_term(x, k, 1e-3), rtol=1e-12)


@check("channel", "zero dispersion is the identity operator")
def _zero_dispersion(seed):
    from .channel.fiber import FiberConfig
    from .channel.ssfm import dispersion_transfer

    cfg = FiberConfig(dispersion_ps_per_nm_km=0.0)
    return np.allclose(dispersion_transfer(256, cfg.sample_rate, cfg), 1.0)


@check("channel", "dispersion applied twice is not the identity")
def _dispersion_twice(seed):
    from .channel.fiber import FiberConfig
    from .channel.ssfm import dispersion_transfer

    cfg = FiberConfig()
    h = dispersion_transfer(256, cfg.sample_rate, cfg)
    return not np.allclose(h * h, 1.0) and not np.allclose(h * h, h)


@check("channel", "perturbation kernel is symmetric")
def _kernel_symmetry(seed):
    from .channel.fiber import FiberConfig
    from .channel.perturbation import kernel_from_fiber

    c = kernel_from_fiber(FiberConfig(), 4).coeffs
    return np.allclose(c, c.T)


# ----------------------------------------------------------------------------
# metrics


@check("metrics", "two-point LLR matches 4 Re(y c*) / noise_var")
def _bpsk(seed):
    from .metrics import llr_from_points

    y = np.random.default_rng(seed).standard_normal(100) * 0.5 + 0j
    llr, _ = llr_from_points(y, np.array([1.0, -1.0]), np.array([[0], [1]]), np.full(2, 0.5), 0.7)
    return np.allclose(llr[:, 0], 4 * y.real / 0.7)


@check("metrics", "LLR signs reproduce the label of the received point")
def _llr_signs(seed):
    from .constellation import build_qam
    from .metrics import llr_from_points

    c = build_qam(64)
    llr, _ = llr_from_points(c.points, c.points, c.labels, np.full(64, 1 / 64), 1e-4)
    return np.array_equal((llr < 0).astype(np.uint8), c.labels)


@check("metrics", "noiseless channel gives R_bmd = H(b)")
def _noiseless_air(seed):
    from .constellation import build_qam
    from .metrics import estimate_air, gaussian_demap
    from .source_models import uniform_model

    c = build_qam(64)
    idx = np.random.default_rng(seed).integers(0, 64, 4096)
    prior = np.full(64, 1 / 64)
    frame = gaussian_demap(c.points[idx], c, prior, 1e-4, idx)
    rep = estimate_air([frame], uniform_model(16), n_bootstrap=20, min_symbols=0)
    return abs(rep.R_bmd - 6.0) < 1e-9 and abs(rep.net_air - 6.0) < 1e-9


@check("metrics", "R_bmd vanishes at -20 dB SNR")
def _low_snr(seed):
    from .constellation import build_qam
    from .metrics import estimate_air, gaussian_demap

    c = build_qam(64)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, 64, 20000)
    nv = 100.0
    y = c.points[idx] + np.sqrt(nv / 2) * (rng.standard_normal(idx.size) + 1j * rng.standard_normal(idx.size))
    rep = estimate_air([gaussian_demap(y, c, np.full(64, 1 / 64), nv, idx)], entropy_bits_per_2d=6.0, rate_loss=0.0)
    return abs(rep.R_bmd) <= max(rep.confidence_halfwidth, 0.05)


# ----------------------------------------------------------------------------
# training


@check("training", "low temperature concentrates the soft sample on the hard argmax")
def _gumbel_limit(seed):
    import torch

    from .training import gumbel_softmax_sample

    logits = torch.log(torch.tensor([0.1, 0.2, 0.3, 0.4], dtype=torch.float64))
    soft, hard = gumbel_softmax_sample(logits, 1e-4, seed=seed)
    return torch.allclose(soft, hard, atol=1e-6) and float(hard.sum()) == 1.0


@check("training", "fixed seed reproduces the Gumbel-Softmax sample")
def _gumbel_seed(seed):
    import torch

    from .training import gumbel_softmax_sample

    logits = torch.zeros(16, dtype=torch.float64)
    a, b = gumbel_softmax_sample(logits, 0.5, seed=seed), gumbel_softmax_sample(logits, 0.5, seed=seed)
    return torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])


def _transparent_setup(seed, estimator="score"):
    from .channel.fiber import FiberConfig
    from .channel.perturbation import kernel_from_fiber
    from .constellation import build_qam
    from .training import DifferentiableTable, SurrogateChannel, TorchDemapper, sample_batch

    c = build_qam(64)
    shaper = DifferentiableTable(np.zeros((16, 16)), 1)
    channel = SurrogateChannel(kernel_from_fiber(FiberConfig(), 1), 0.0, 0.0, gamma_scale=0.0)
    rng = np.random.default_rng(seed)
    batch = sample_batch(shaper, c, 4, 64, 0.5, rng, estimator)
    return shaper, channel, TorchDemapper(c), batch


@check("training", "transparent channel with the uniform model gives L = -m")
def _transparent(seed):
    from .training import loss_L

    shaper, channel, demapper, batch = _transparent_setup(seed)
    loss, _ = loss_L(batch, shaper, channel, demapper, noise_var=1e-4)
    return abs(float(loss.detach()) + 6.0) < 1e-9


@check("training", "loss value is the same with and without gradient tracking")
def _detached(seed):
    import torch

    from .training import loss_L

    shaper, channel, demapper, batch = _transparent_setup(seed)
    tracked, _ = loss_L(batch, shaper, channel, demapper, noise_var=0.3)
    with torch.no_grad():
        plain, _ = loss_L(batch, shaper, channel, demapper, noise_var=0.3)
    return float(tracked.detach()) == float(plain)


@check("training", "memoryless model with zero KL weight has L++ = L")
def _lpp_degenerate(seed):
    from .channel.fiber import FiberConfig
    from .channel.perturbation import kernel_from_fiber
    from .constellation import build_qam
    from .training import (
        DifferentiableTable,
        SurrogateChannel,
        TorchDemapper,
        loss_L,
        loss_Lpp,
        mb_target,
        sample_batch,
    )

    c = build_qam(64)
    target = mb_target(c, 1.93)
    shaper = DifferentiableTable(np.log(target)[None, :], 0)
    channel = SurrogateChannel(kernel_from_fiber(FiberConfig(), 1), 0.0, 0.0, gamma_scale=0.0)
    batch = sample_batch(shaper, c, 4, 64, 0.5, np.random.default_rng(seed))
    plain, _ = loss_L(batch, shaper, channel, TorchDemapper(c), noise_var=0.1)
    full, _ = loss_Lpp(batch, shaper, channel, TorchDemapper(c), 0.0, target, noise_var=0.1)
    return abs(float(full.detach()) - float(plain.detach())) < 1e-12


@check("training", "Maxwell-Boltzmann model has zero KL to the target")
def _kl_zero(seed):
    import torch

    from .constellation import build_qam
    from .training import kl_bits, mb_target

    t = torch.as_tensor(mb_target(build_qam(64), 1.93))
    return abs(float(kl_bits(t, t))) < 1e-15


@check("training", "two runs with the same seed give identical traces")
def _train_determinism(seed):
    from .training import TrainConfig, train

    cfg = TrainConfig(steps=3, batch_size=2, sequence_length=64, kernel_memory=2, surrogate="kernel", seed=seed)
    (m1, t1), (m2, t2) = train(cfg), train(cfg)
    return t1.records == t2.records and m1 == m2


# ----------------------------------------------------------------------------
# selection


def _selection_setup(candidates=4, metric="kernel-proxy"):
    from .channel.fiber import FiberConfig
    from .channel.perturbation import kernel_from_fiber
    from .constellation import build_qam
    from .matchers.ess import ess_build, ess_find_emax
    from .selection import SelectionConfig

    coder = ess_build(32, (1, 3, 5, 7), ess_find_emax(32, (1, 3, 5, 7), 1.93))
    cfg = SelectionConfig(blocklength=32, candidates=candidates, metric=metric, kernel_memory=2)
    return cfg, coder, kernel_from_fiber(FiberConfig(), 2), build_qam(64)


@check("selection", "constant metric always selects candidate 0")
def _tie_break(seed):
    from .selection import select_sequence

    cfg, coder, kernel, c = _selection_setup(2, "constant")
    bits = np.random.default_rng(seed).integers(0, 2, 2 * coder.k)
    return select_sequence(bits, cfg, coder, kernel, c).candidate == 0


@check("selection", "selected metric is the minimum over candidates")
def _argmin(seed):
    from .selection import select_sequence

    cfg, coder, kernel, c = _selection_setup()
    rng = np.random.default_rng(seed)
    for _ in range(5):
        res = select_sequence(rng.integers(0, 2, 2 * coder.k), cfg, coder, kernel, c)
        if res.metrics[res.candidate] > res.metrics.min():
            return False
    return True


@check("selection", "all-zero kernel gives metric 0")
def _zero_kernel(seed):
    from .channel.perturbation import PerturbationKernel
    from .selection import nlin_metric

    x = np.exp(2j * np.pi * np.random.default_rng(seed).random(32))
    return nlin_metric(x, PerturbationKernel(np.zeros((5, 5), complex), 1.0)) == 0.0


@check("selection", "metric scales as s^6")
def _scaling(seed):
    from .selection import nlin_metric

    _, _, kernel, _ = _selection_setup()
    x = np.random.default_rng(seed).random(32) + 1j * np.random.default_rng(seed + 1).random(32)
    a, b = nlin_metric(x, kernel), nlin_metric(2 * x, kernel)
    return abs(b - 64 * a) <= 1e-9 * abs(64 * a)


# ----------------------------------------------------------------------------
# experiments


@check("experiments", "uniform model has zero ADM rate loss on the payload grid")
def _uniform_grid(seed):
    from .config import ExperimentConfig
    from .experiments import run_rateloss

    cfg = ExperimentConfig().replace_section("rateloss", model="uniform", payload_bits=(128, 256), trials=100)
    return all(abs(row[2]) < 1e-9 for row in run_rateloss(cfg, seed))


@check("experiments", "same seed gives identical CSV bytes")
def _csv_bytes(seed):
    import os
    import tempfile

    from .config import ExperimentConfig
    from .experiments import RATELOSS_HEADER, run_rateloss, write_csv

    cfg = ExperimentConfig().replace_section("rateloss", payload_bits=(128,), trials=100)
    with tempfile.TemporaryDirectory() as tmp:
        blobs = []
        for i in range(2):
            path = os.path.join(tmp, f"r{i}.csv")
            write_csv(path, RATELOSS_HEADER, run_rateloss(cfg, seed))
            with open(path, "rb") as fh:
                blobs.append(fh.read())
    return blobs[0] == blobs[1]


@check("experiments", "uniform AIR rises with power in the linear regime")
def _linear_regime(seed):
    from .config import ExperimentConfig
    from .experiments import build_source, simulate_point

    cfg = ExperimentConfig().replace_section(
        "airsweep", schemes=("uniform",), launch_powers_dbm=(-10.0, -6.0), symbols_per_frame=2048, frames=1, n_bootstrap=20
    )
    src = build_source(cfg, "uniform", {}, seed)
    low, high = (simulate_point(cfg, "uniform", p, src, seed)["net_air"] for p in (0, 1))
    return high > low


def run_selftest(seed=0):
    """Run every registered check; returns ``[(module, invariant, passed)]``."""
    results = []
    for module, invariant, fn in _CHECKS:
        try:
            passed = bool(fn(seed))
        except Exception:
            log.exception("%s: %s raised", module, invariant)
            passed = False
        results.append((module, invariant, passed))
    return results


def n_checks():
    return len(_CHECKS)


__all__ = ["check", "n_checks", "run_selftest"]
