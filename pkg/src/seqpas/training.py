"""Training of table source models through the differentiable perturbation surrogate.

Symbols are drawn autoregressively by the Gumbel-max trick, sent through the
first-order perturbation channel and demapped by a Gaussian demapper; the
loss is the adjusted binary cross entropy, optionally augmented by the exact
rate loss of the table model and a KL penalty pulling the stationary marginal
towards a Maxwell-Boltzmann target.

Gradients through the sampler come from a score-function term with a local
credit window (the default) or from the Gumbel-Softmax straight-through
estimator. The straight-through gradient is biased here: the labels follow
the hard sample, so the relaxed path linearises a loss it never evaluates.
The rate-loss and KL terms are exact functions of the logits. All arithmetic
is float64.
"""

import csv
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch

from .channel.fiber import FiberConfig, dbm_to_watt
from .channel.perturbation import RegularPerturbation, kernel_from_fiber, regular_perturbation
from .constellation import build_qam, mb_fit_entropy
from .exceptions import ConfigurationError, NumericalError
from .metrics import estimate_air, gaussian_demap
from .source_models import TableModel, sample_sequence

LN2 = math.log(2.0)
OBJECTIVES = ("L", "Lpp")
ESTIMATORS = ("score", "straight-through")
SURROGATES = ("regular", "kernel")
TRACE_COLUMNS = ("step", "temperature", "loss", "R_bmd", "R_loss", "kl_mb", "grad_norm", "n_clamped")


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of one training run.

    The temperature decays geometrically from ``temperature_start`` to
    ``temperature_end`` over ``steps`` steps. ``noise_variance=None`` uses the
    ASE variance of the link at ``launch_power_dbm``. ``surrogate`` selects the
    untruncated first-order operator (``regular``, with ``quadrature_nodes``
    distance nodes) or the triplet kernel of memory ``kernel_memory``.
    ``derotate`` removes the common phase and gain per sequence, as the
    receiver does.
    """

    objective: str = "Lpp"
    kl_weight: float = 1.0
    temperature_start: float = 1.0
    temperature_end: float = 0.3
    batch_size: int = 16
    sequence_length: int = 512
    learning_rate: float = 0.05
    momentum: float = 0.9
    steps: int = 300
    seed: int = 0
    launch_power_dbm: float = 9.0
    memory: int = 1
    kernel_memory: int = 8
    gamma_scale: float = 1.0
    noise_variance: float | None = None
    order: int = 64
    mb_entropy_bits_per_1d: float = 1.93
    init_scale: float = 0.1
    estimator: str = "score"
    credit_horizon: int = 4
    surrogate: str = "regular"
    quadrature_nodes: int = 64
    derotate: bool = True

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not (self.temperature_start > 0 and self.temperature_end > 0):
            raise ConfigurationError("temperatures must be positive")
        if not (math.isfinite(self.kl_weight) and self.kl_weight >= 0):
            raise ConfigurationError("kl_weight must be finite and nonnegative")
        for name in ("batch_size", "steps", "sequence_length"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not 0 <= self.memory <= 3:
            raise ConfigurationError("memory must lie in [0, 3] for exact rate-loss training")
        if self.estimator not in ESTIMATORS:
            raise ConfigurationError(f"estimator must be one of {ESTIMATORS}")
        if self.credit_horizon < 0:
            raise ConfigurationError("credit_horizon must be >= 0")
        if self.surrogate not in SURROGATES:
            raise ConfigurationError(f"surrogate must be one of {SURROGATES}")
        if self.quadrature_nodes < 4 or self.quadrature_nodes % 4:
            raise ConfigurationError("quadrature_nodes must be a positive multiple of 4")
        if self.surrogate == "kernel" and self.sequence_length <= 2 * self.kernel_memory:
            raise ConfigurationError("sequence_length must exceed 2 * kernel_memory")

    def temperature(self, step):
        if self.steps == 1:
            return self.temperature_start
        ratio = self.temperature_end / self.temperature_start
        return self.temperature_start * ratio ** (step / (self.steps - 1))

    def replace(self, **changes):
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigurationError(f"unknown training parameters: {sorted(unknown)}")
        values = asdict(self)
        values.update(changes)
        return TrainConfig(**values)


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)

    def append(self, **row):
        self.records.append(row)

    def column(self, name):
        return np.array([r[name] for r in self.records])

    def __len__(self):
        return len(self.records)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            for r in self.records:
                writer.writerow([r["step"], *(repr(float(r[k])) for k in TRACE_COLUMNS[1:-1]), r["n_clamped"]])


class TrainingDiverged(NumericalError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


# ----------------------------------------------------------------------------
# Gumbel-Softmax with straight-through gradients


class _StraightThrough(torch.autograd.Function):
    """Forward: exact one-hot; backward: the soft sample's gradient."""

    @staticmethod
    def forward(ctx, soft, hard):
        return hard.clone()

    @staticmethod
    def backward(ctx, grad):
        return grad, None


def gumbel_softmax_sample(logits, temperature, seed=None, gumbel=None):
    """Draw a relaxed categorical sample.

    Parameters
    ----------
    logits : array_like or Tensor, shape (..., A)
    temperature : float
        Softmax temperature, must be positive.
    seed : int or numpy Generator, optional
        Source of the Gumbel noise (ignored when ``gumbel`` is given).

    Returns
    -------
    soft : Tensor
        ``softmax((logits + g) / temperature)``.
    hard : Tensor
        One-hot of the arg-max in the forward pass; its gradient is that of ``soft``.
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    logits = torch.as_tensor(logits, dtype=torch.float64)
    if gumbel is None:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        gumbel = rng.gumbel(size=tuple(logits.shape))
    z = logits + torch.as_tensor(gumbel, dtype=torch.float64)
    soft = torch.softmax(z / temperature, dim=-1)
    idx = torch.argmax(z.detach(), dim=-1)
    hard = torch.nn.functional.one_hot(idx, logits.shape[-1]).to(torch.float64)
    return soft, _StraightThrough.apply(soft, hard)


# ----------------------------------------------------------------------------
# Differentiable table model


def _entropy_bits(p, dim=-1):
    return -(p * torch.log(p)).sum(dim=dim) / LN2


class DifferentiableTable:
    """Torch view of an order-``memory`` table model parameterised by logits."""

    def __init__(self, logits, memory):
        self.logits = torch.as_tensor(np.asarray(logits), dtype=torch.float64).clone().requires_grad_(True)
        self.memory = int(memory)
        self.n_contexts, self.alphabet_size = self.logits.shape
        a, c = self.alphabet_size, self.n_contexts
        if c != a**self.memory:
            raise ConfigurationError(f"logits have {c} rows, expected {a}**{self.memory}")
        ctx = np.repeat(np.arange(c), a)
        sym = np.tile(np.arange(a), c)
        self._rows = torch.as_tensor(ctx)
        self._cols = torch.as_tensor((ctx * a + sym) % c)

    @classmethod
    def from_model(cls, model):
        with np.errstate(divide="ignore"):
            return cls(np.log(np.maximum(model.table, 1e-300)), model.memory)

    def table(self, logits=None):
        return torch.softmax(self.logits if logits is None else logits, dim=-1)

    def stationary(self, table):
        """Stationary context law by a linear solve (differentiable)."""
        c = self.n_contexts
        if self.memory == 0:
            return torch.ones(1, dtype=torch.float64)
        p = torch.zeros((c, c), dtype=torch.float64).index_put(
            (self._rows, self._cols), table.reshape(-1), accumulate=True
        )
        m = p.T - torch.eye(c, dtype=torch.float64)
        m = torch.cat([m[:-1], torch.ones((1, c), dtype=torch.float64)])
        rhs = torch.zeros(c, dtype=torch.float64)
        rhs[-1] = 1.0
        return torch.linalg.solve(m, rhs)

    def terms(self, logits=None):
        """``(table, context law, marginal, rate loss)`` as tensors."""
        table = self.table(logits)
        pi = self.stationary(table)
        marginal = pi @ table
        rate = (pi * _entropy_bits(table)).sum()
        return table, pi, marginal, _entropy_bits(marginal) - rate

    def to_model(self):
        return TableModel.from_logits(self.logits.detach().numpy(), self.memory)


def kl_bits(p, q):
    return (p * (torch.log(p) - torch.log(q))).sum() / LN2


# ----------------------------------------------------------------------------
# Sampling, channel, demapper


@dataclass
class Batch:
    """Sampled training batch.

    ``onehot`` carries straight-through gradients when sampled with that
    estimator; ``log_prob`` holds ``log p(a_t | context)`` of every sampled
    symbol for the score-function estimator.
    """

    onehot: torch.Tensor
    amp_index: np.ndarray
    quadrant: np.ndarray
    symbols: torch.Tensor
    marginal: torch.Tensor
    log_prob: torch.Tensor | None = None
    boot_log_prob: torch.Tensor | None = None



def sample_batch(shaper, constellation, batch_size, length, temperature, rng, estimator="score"):
    """Autoregressive Gumbel-max rollout of ``batch_size`` stationary sequences.

    With ``estimator="straight-through"`` the one-hot symbols carry the soft
    Gumbel-Softmax gradient; with ``"score"`` they are constants and the
    per-symbol log-probabilities are returned instead.
    """
    if estimator not in ESTIMATORS:
        raise ConfigurationError(f"estimator must be one of {ESTIMATORS}")
    table, pi, marginal, _ = shaper.terms()
    a, c = shaper.alphabet_size, shaper.n_contexts
    pi_np = np.clip(pi.detach().numpy(), 0.0, None)
    ctx = rng.choice(c, size=batch_size, p=pi_np / pi_np.sum())
    boot = ctx.copy()
    gumbel = rng.gumbel(size=(length, batch_size, a))
    logits = torch.log(table)
    logits_np = logits.detach().numpy()
    idx = np.empty((batch_size, length), dtype=np.int64)
    contexts = np.empty((batch_size, length), dtype=np.int64)
    steps = []
    for t in range(length):
        contexts[:, t] = ctx
        idx[:, t] = np.argmax(gumbel[t] + logits_np[ctx], axis=1)
        if estimator == "straight-through":
            _, hard = gumbel_softmax_sample(logits[torch.as_tensor(ctx)], temperature, gumbel=gumbel[t])
            steps.append(hard)
        ctx = (ctx * a + idx[:, t]) % c
    quadrant = rng.integers(0, 4, size=(batch_size, length))
    if estimator == "straight-through":
        return _make_batch(torch.stack(steps, dim=1), idx, quadrant, marginal, constellation)
    onehot = torch.nn.functional.one_hot(torch.as_tensor(idx), a).to(torch.float64)
    batch = _make_batch(onehot, idx, quadrant, marginal, constellation)
    batch.log_prob = logits[torch.as_tensor(contexts), torch.as_tensor(idx)]
    if shaper.memory:
        batch.boot_log_prob = torch.log(pi[torch.as_tensor(boot)])
    return batch


def _make_batch(onehot, idx, quadrant, marginal, constellation):
    a = constellation.n_amplitudes
    pts = torch.tensor(constellation.points.reshape(4, a))
    energies = torch.as_tensor(np.abs(constellation.unsigned_points) ** 2)
    scale = torch.rsqrt((marginal * energies).sum())
    x = (onehot.to(torch.complex128) * pts[torch.as_tensor(quadrant)]).sum(-1) * scale
    return Batch(onehot, idx, quadrant, x, marginal)


class SurrogateChannel:
    """Torch first-order perturbation channel on normalised symbols (periodic per sequence).

    ``operator`` is a :class:`~seqpas.channel.perturbation.PerturbationKernel`
    or a :class:`~seqpas.channel.perturbation.RegularPerturbation`. ``memory``
    is the one-sided symbol memory used for credit assignment; it defaults to
    the kernel memory and must be given for the untruncated operator.
    """

    def __init__(self, operator, launch_power_dbm, noise_variance, gamma_scale=1.0, derotate=False, memory=None):
        self.operator = operator
        if memory is None:
            if isinstance(operator, RegularPerturbation):
                raise ConfigurationError("memory is required with the untruncated operator")
            memory = operator.memory
        self.memory = int(memory)
        self.power_w = float(dbm_to_watt(launch_power_dbm))
        self.noise_variance = float(noise_variance)
        self.gamma_scale = float(gamma_scale)
        self.derotate = derotate
        self._cache = {}

    def _kernel_distortion(self, x):
        n = x.shape[-1]
        if n not in self._cache:
            self._cache[n] = torch.as_tensor(self.operator.filters(n))
        k_mem = self.operator.memory
        shifted = torch.stack([torch.roll(x, -k, dims=-1) for k in range(-k_mem, k_mem + 1)])
        r = x.unsqueeze(0) * torch.conj(shifted)
        filt = self._cache[n].unsqueeze(1) if x.dim() == 2 else self._cache[n]
        inner = torch.fft.ifft(torch.fft.fft(r, dim=-1) * filt, dim=-1)
        return (shifted * inner).sum(0)

    def _regular_distortion(self, x):
        n = x.shape[-1]
        if n not in self._cache:
            h, d = self.operator.transfer(n)
            w = torch.as_tensor(self.operator.weights)
            self._cache[n] = (torch.as_tensor(h), torch.as_tensor(d), w)
        h, d, w = self._cache[n]
        sps = int(self.operator.fiber.oversampling)
        up = torch.zeros(x.shape[:-1] + (n * sps,), dtype=torch.complex128)
        up[..., ::sps] = x
        spectrum = (torch.fft.fft(up) * h).unsqueeze(-2)
        u = torch.fft.ifft(spectrum * d) * math.sqrt(sps)
        acc = (torch.fft.fft(u.abs() ** 2 * u) * torch.conj(d) * w.unsqueeze(-1)).sum(-2)
        return torch.fft.ifft(acc * h)[..., ::sps] / math.sqrt(sps)

    def distortion(self, x):
        if isinstance(self.operator, RegularPerturbation):
            total = self._regular_distortion(x)
        else:
            total = self._kernel_distortion(x)
        return 1j * self.gamma_scale * self.operator.gamma * self.power_w * total

    def __call__(self, x, rng=None, noise=None):
        y = x + self.distortion(x) if self.gamma_scale else x
        if noise is None and self.noise_variance > 0:
            shape = tuple(x.shape)
            noise = np.sqrt(self.noise_variance / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        if noise is not None:
            y = y + torch.as_tensor(noise)
        if self.derotate:
            y = y * ((x.abs() ** 2).sum(-1, keepdim=True) / (torch.conj(x) * y).sum(-1, keepdim=True))
        return y


def build_channel(config, fiber=None, operator=None):
    """Surrogate channel of a training configuration."""
    fiber = FiberConfig() if fiber is None else fiber
    if operator is None:
        if config.surrogate == "regular":
            operator = regular_perturbation(fiber, config.quadrature_nodes)
        else:
            operator = kernel_from_fiber(fiber, config.kernel_memory)
    noise_var = default_noise_variance(config, fiber) if config.noise_variance is None else config.noise_variance
    return SurrogateChannel(
        operator, config.launch_power_dbm, noise_var, config.gamma_scale, config.derotate, memory=config.kernel_memory
    )


class TorchDemapper:
    """Differentiable Gaussian demapper matching :func:`seqpas.metrics.gaussian_demap`."""

    def __init__(self, constellation, min_variance=1e-9):
        self.constellation = constellation
        self.min_variance = min_variance
        self._points = torch.tensor(constellation.points)
        self._bits = torch.tensor(constellation.labels.astype(bool))
        self._energies = torch.tensor(constellation.energies)

    def prior(self, marginal):
        return marginal.repeat(4) / 4.0

    def cross_entropy(self, y, labels, marginal, noise_var):
        """Per-symbol ``sum_i log2(1 + exp(-(1 - 2 b_i) LLR_i))`` and the non-finite count."""
        prior = self.prior(marginal)
        pts = self._points * torch.rsqrt((prior * self._energies).sum())
        var = max(float(noise_var), self.min_variance)
        metric = -(torch.abs(y.unsqueeze(-1) - pts) ** 2) / var + torch.log(prior)
        neg = torch.tensor(-torch.inf, dtype=torch.float64)
        llrs = []
        for i in range(self._bits.shape[1]):
            b = self._bits[:, i]
            zero = torch.logsumexp(torch.where(~b, metric, neg), dim=-1)
            one = torch.logsumexp(torch.where(b, metric, neg), dim=-1)
            llrs.append(zero - one)
        llr = torch.stack(llrs, dim=-1)
        bad = ~torch.isfinite(llr)
        n_bad = int(bad.sum())
        if n_bad:
            llr = torch.where(bad, torch.zeros_like(llr), llr)
        signed = (1.0 - 2.0 * labels) * llr
        return torch.nn.functional.softplus(-signed).sum(-1) / LN2, n_bad


def _labels(constellation, batch):
    index = batch.quadrant * constellation.n_amplitudes + batch.amp_index
    return torch.as_tensor(constellation.labels[index].astype(np.float64))


def data_aided_variance(y, x):
    return float(torch.mean(torch.abs(y.detach() - x.detach()) ** 2))


# ----------------------------------------------------------------------------
# Objectives


def _windowed_sum(values, before, after):
    # circular sum of values[t] over t in [s - before, s + after], for every s
    if before + after + 1 >= values.shape[-1]:
        return values.sum(-1, keepdim=True).expand_as(values)
    return sum(torch.roll(values, -d, dims=-1) for d in range(-before, after + 1))


def loss_L(batch, shaper, channel, demapper, rng=None, noise=None, noise_var=None, credit_horizon=4):
    """Adjusted binary cross entropy ``E[sum_i BCE_i] - H(b)`` in bits per 2-D symbol.

    When the batch carries log-probabilities, a zero-valued score-function
    term is added whose gradient accounts for the sampling law: symbol ``s``
    is credited with the cross entropy of every symbol it can reach through
    the channel memory, ``[s - 2K, s + 2K + credit_horizon]``, minus the batch
    mean. The returned value is always the plain loss.

    Returns the loss tensor and a dict with the bit-metric rate estimate and
    the number of non-finite LLRs replaced by zero.
    """
    y = channel(batch.symbols, rng, noise=noise)
    var = data_aided_variance(y, batch.symbols) if noise_var is None else noise_var
    bce, n_bad = demapper.cross_entropy(y, _labels(demapper.constellation, batch), batch.marginal, var)
    h_b = 2.0 + _entropy_bits(batch.marginal)
    loss = bce.mean() - h_b
    if batch.log_prob is not None:
        reach = 2 * channel.memory if channel.gamma_scale else 0
        credit = _windowed_sum(bce.detach(), reach, reach + credit_horizon)
        advantage = credit - credit.mean()
        score = (advantage * batch.log_prob).mean()
        if batch.boot_log_prob is not None:
            # the boot context reaches the first symbols through the chain
            head = credit[:, 0] - credit[:, 0].mean()
            score = score + (head * batch.boot_log_prob).sum() / bce.numel()
        loss = loss + (score - score.detach())
    return loss, {"R_bmd": float(-loss.detach()), "n_clamped": n_bad}


def loss_Lpp(
    batch, shaper, channel, demapper, kl_weight, mb_target, rng=None, noise=None, noise_var=None, credit_horizon=4
):
    """``L + R_loss + kl_weight * KL(marginal || mb_target)``, terms reported separately."""
    loss, info = loss_L(batch, shaper, channel, demapper, rng, noise, noise_var, credit_horizon)
    _, _, marginal, r_loss = shaper.terms()
    kl = kl_bits(marginal, torch.as_tensor(mb_target, dtype=torch.float64))
    info.update(L=float(loss.detach()), R_loss=float(r_loss.detach()), kl_mb=float(kl.detach()))
    return loss + r_loss + kl_weight * kl, info


# ----------------------------------------------------------------------------
# Training loop


def default_noise_variance(config, fiber):
    return float(fiber.normalized_noise_variance(config.launch_power_dbm))


def mb_target(constellation, bits_per_1d):
    return mb_fit_entropy(constellation, bits_per_1d).pair_probs()


def initial_logits(config, constellation, target):
    rng = np.random.default_rng([config.seed, 0x1A17])
    a = constellation.n_amplitudes
    base = np.tile(np.log(target), (a**config.memory, 1))
    return base + config.init_scale * rng.standard_normal(base.shape)


def train(config, model=None, fiber=None, kernel=None):
    """Train a table model; returns ``(TableModel, TrainTrace)``.

    Parameters
    ----------
    config : TrainConfig
    model : TableModel, optional
        Initial model; by default the Maxwell-Boltzmann target tiled over all
        contexts plus ``init_scale`` Gaussian logit noise.
    fiber : FiberConfig, optional
    kernel : PerturbationKernel or RegularPerturbation, optional
        Precomputed first-order operator; by default built from ``config``.

    Raises
    ------
    TrainingDiverged
        If the loss or the gradient become non-finite; carries the trace.
    """
    fiber = FiberConfig() if fiber is None else fiber
    c = build_qam(config.order)
    target = mb_target(c, config.mb_entropy_bits_per_1d)
    if model is None:
        shaper = DifferentiableTable(initial_logits(config, c, target), config.memory)
    else:
        if model.alphabet_size != c.n_amplitudes:
            raise ConfigurationError("model alphabet does not match the constellation")
        shaper = DifferentiableTable.from_model(model)
    channel = build_channel(config, fiber, kernel)
    demapper = TorchDemapper(c)
    rng = np.random.default_rng([config.seed, 0x7EA1])
    opt = torch.optim.SGD([shaper.logits], lr=config.learning_rate, momentum=config.momentum)
    trace = TrainTrace()

    for step in range(config.steps):
        tau = config.temperature(step)
        opt.zero_grad()
        batch = sample_batch(shaper, c, config.batch_size, config.sequence_length, tau, rng, config.estimator)
        if config.objective == "Lpp":
            objective, info = loss_Lpp(
                batch, shaper, channel, demapper, config.kl_weight, target, rng, credit_horizon=config.credit_horizon
            )
        else:
            objective, info = loss_L(batch, shaper, channel, demapper, rng, credit_horizon=config.credit_horizon)
            info.update(_extra_terms(shaper, target))
        objective.backward()
        grad_norm = float(torch.linalg.vector_norm(shaper.logits.grad))
        row = dict(
            step=step,
            temperature=tau,
            loss=float(objective.detach()),
            R_bmd=info["R_bmd"],
            R_loss=info["R_loss"],
            kl_mb=info["kl_mb"],
            grad_norm=grad_norm,
            n_clamped=info["n_clamped"],
        )
        trace.append(**row)
        if not all(math.isfinite(row[k]) for k in ("loss", "grad_norm", "R_loss", "kl_mb")):
            raise TrainingDiverged(f"non-finite training state at step {step}", trace)
        opt.step()
    return shaper.to_model(), trace


def _extra_terms(shaper, target):
    with torch.no_grad():
        _, _, marginal, r_loss = shaper.terms()
        kl = kl_bits(marginal, torch.as_tensor(target))
    return {"R_loss": float(r_loss), "kl_mb": float(kl)}


def evaluate_surrogate(model, config, fiber=None, operator=None, n_sequences=64, seed=0, n_bootstrap=200):
    """Net AIR of ``model`` on the training surrogate, with a bootstrap confidence interval.

    Sequences of ``config.sequence_length`` symbols are sampled from the model
    with uniform quadrants, sent through the channel of :func:`build_channel`
    and demapped with the data-aided noise variance. The rate loss is the
    model's ideal rate loss.

    Returns
    -------
    AirReport
    """
    c = build_qam(config.order)
    if model.alphabet_size != c.n_amplitudes:
        raise ConfigurationError("model alphabet does not match the constellation")
    channel = build_channel(config, fiber, operator)
    rng = np.random.default_rng([seed, 0xE7A1])
    length = config.sequence_length
    amp = np.stack([sample_sequence(model, length, seed=rng.integers(2**63)) for _ in range(n_sequences)])
    quadrant = rng.integers(0, 4, size=amp.shape)
    prior = c.symbol_prior(model.stationary.marginal)
    index = quadrant * c.n_amplitudes + amp
    x = c.points[index] * c.energy_scale(prior)
    with torch.no_grad():
        y = channel(torch.as_tensor(x), rng).numpy()
    var = float(np.mean(np.abs(y - x) ** 2))
    frame = gaussian_demap(y.ravel(), c, prior, var, index.ravel())
    return estimate_air(frame, model, n_bootstrap=n_bootstrap, seed=seed)


# ----------------------------------------------------------------------------
# Gradient check on an exactly enumerable instance


@dataclass
class GradCheckResult:
    """Relative errors ``max|g - g_fd| / max|g_fd|`` of analytic against central-difference gradients."""

    max_rel_error: float
    rate_loss_error: float
    kl_error: float
    worst_coordinate: tuple
    tolerance: float = 1e-4
    term_tolerance: float = 1e-6

    @property
    def passed(self):
        return (
            self.max_rel_error < self.tolerance
            and self.rate_loss_error < self.term_tolerance
            and self.kl_error < self.term_tolerance
        )


def _sequence_probabilities(shaper, table, pi, sequences):
    a, c = shaper.alphabet_size, shaper.n_contexts
    total = torch.zeros(sequences.shape[0], dtype=torch.float64)
    for start in range(c):
        ctx = np.full(sequences.shape[0], start)
        prob = pi[start].expand(sequences.shape[0])
        for t in range(sequences.shape[1]):
            prob = prob * table[torch.as_tensor(ctx), torch.as_tensor(sequences[:, t])]
            ctx = (ctx * a + sequences[:, t]) % c
        total = total + prob
    return total


def exact_expected_loss(logits, shaper, constellation, channel, demapper, quadrants, noise, noise_var, kl_weight, target):
    """Sampling-free ``L++``: the Gumbel expectation replaced by the exact sum over all sequences.

    Returns ``(total, rate_loss, kl)`` tensors.
    """
    a, n = shaper.alphabet_size, quadrants.size
    table, pi, marginal, r_loss = shaper.terms(logits)
    sequences = np.array(list(np.ndindex(*(a,) * n)), dtype=np.int64)
    onehot = torch.nn.functional.one_hot(torch.as_tensor(sequences), a).to(torch.float64)
    batch = _make_batch(onehot, sequences, np.tile(quadrants, (len(sequences), 1)), marginal, constellation)
    y = channel(batch.symbols, noise=np.tile(noise, (len(sequences), 1)))
    bce, _ = demapper.cross_entropy(y, _labels(constellation, batch), marginal, noise_var)
    probs = _sequence_probabilities(shaper, table, pi, sequences)
    loss_l = (probs * bce.mean(-1)).sum() - (2.0 + _entropy_bits(marginal))
    kl = kl_bits(marginal, torch.as_tensor(target, dtype=torch.float64))
    return loss_l + r_loss + kl_weight * kl, r_loss, kl


def _finite_difference(fn, x, h):
    g = np.zeros(x.shape)
    with torch.no_grad():
        for i in np.ndindex(*x.shape):
            xp, xm = x.clone(), x.clone()
            xp[i] += h
            xm[i] -= h
            g[i] = (float(fn(xp)) - float(fn(xm))) / (2 * h)
    return g


def _rel_error(analytic, numeric):
    scale = max(np.max(np.abs(numeric)), 1e-12)
    err = np.abs(analytic - numeric)
    return float(err.max() / scale), tuple(int(v) for v in np.unravel_index(np.argmax(err), err.shape))


GRADCHECK_CONFIG = TrainConfig(
    order=16,
    memory=1,
    kernel_memory=1,
    sequence_length=4,
    launch_power_dbm=8.0,
    kl_weight=0.5,
    init_scale=0.5,
    surrogate="kernel",
    derotate=False,
)


def gradient_check(model=None, config=None, fiber=None, step=1e-5):
    """Compare autograd gradients of ``L++`` with central differences.

    The instance must be exactly enumerable: ``A <= 4``, ``memory <= 1`` and a
    short sequence (``config.sequence_length``), with signs and noise fixed
    by the seed.
    """
    config = GRADCHECK_CONFIG if config is None else config
    fiber = FiberConfig() if fiber is None else fiber
    c = build_qam(config.order)
    if c.n_amplitudes > 4 or config.memory > 1 or config.sequence_length > 6:
        raise ConfigurationError("gradient_check needs A <= 4, memory <= 1 and sequence_length <= 6")
    target = mb_target(c, min(config.mb_entropy_bits_per_1d, 0.95))
    shaper = (
        DifferentiableTable(initial_logits(config, c, target), config.memory)
        if model is None
        else DifferentiableTable.from_model(model)
    )
    channel = build_channel(config, fiber)
    noise_var = channel.noise_variance
    demapper = TorchDemapper(c)
    rng = np.random.default_rng([config.seed, 0x6C4E])
    n = config.sequence_length
    quadrants = rng.integers(0, 4, n)
    noise = np.sqrt(noise_var / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))

    def parts(x):
        return exact_expected_loss(x, shaper, c, channel, demapper, quadrants, noise, noise_var, config.kl_weight, target)

    errors = []
    for pick in range(3):
        x = shaper.logits.detach().clone().requires_grad_(True)
        (g,) = torch.autograd.grad(parts(x)[pick], x)
        errors.append(_rel_error(g.numpy(), _finite_difference(lambda v: parts(v)[pick], x.detach(), step)))
    return GradCheckResult(
        max_rel_error=errors[0][0],
        rate_loss_error=errors[1][0],
        kl_error=errors[2][0],
        worst_coordinate=errors[0][1],
    )
