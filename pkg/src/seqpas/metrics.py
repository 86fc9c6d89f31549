"""Mismatched Gaussian demapping and bit-metric AIR estimation.

LLR sign convention: positive values favour bit 0.
"""

import csv
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._info import entropy_bits
from ._validation import check_complex, check_probability_vector
from .exceptions import InvariantError
from .source_models import marginal_entropy, rate_loss_theoretical

LLR_CLAMP = 60.0


@dataclass
class LlrFrame:
    llrs: np.ndarray
    tx_labels: np.ndarray
    noise_variance_estimate: float
    n_clamped: int = 0

    def __post_init__(self):
        if self.llrs.shape != self.tx_labels.shape:
            raise ValueError(f"llrs {self.llrs.shape} and labels {self.tx_labels.shape} differ in shape")

    def __len__(self):
        return self.llrs.shape[0]


def llr_from_points(received, points, labels, prior, noise_var, chunk=16384):
    """Max-log-free bitwise LLRs of a Gaussian demapper over an arbitrary point set.

    Returns
    -------
    llrs : ndarray, shape (n, m)
    n_clamped : int
        Number of LLRs clipped to ``+-LLR_CLAMP`` (degenerate prior or extreme SNR).
    """
    y = np.asarray(received, dtype=np.complex128)
    labels = np.asarray(labels).astype(bool)
    with np.errstate(divide="ignore"):
        log_prior = np.log(np.asarray(prior, dtype=np.float64))
    m = labels.shape[1]
    out = np.empty((y.size, m))
    for start in range(0, y.size, chunk):
        yc = y[start : start + chunk]
        metric = -np.abs(yc[:, None] - points[None, :]) ** 2 / noise_var + log_prior[None, :]
        for i in range(m):
            zero = logsumexp(metric[:, ~labels[:, i]], axis=1)
            one = logsumexp(metric[:, labels[:, i]], axis=1)
            with np.errstate(invalid="ignore"):
                out[start : start + chunk, i] = zero - one
    bad = ~np.isfinite(out) | (np.abs(out) > LLR_CLAMP)
    n_clamped = int(bad.sum())
    if n_clamped:
        out = np.where(np.isnan(out), 0.0, out)
        out = np.clip(out, -LLR_CLAMP, LLR_CLAMP)
    return out, n_clamped


def estimate_noise_variance(received, points, prior=None, em_iterations=500, tol=1e-6):
    """Pilot-free noise variance: nearest-point MSE refined by EM.

    Iterates until the relative change falls below ``tol`` or after
    ``em_iterations`` steps; convergence is slow below about 15 dB SNR.
    """
    y = np.asarray(received, dtype=np.complex128)
    d2 = np.abs(y[:, None] - points[None, :]) ** 2
    var = float(np.mean(d2.min(axis=1)))
    log_prior = np.zeros(points.size) if prior is None else np.log(np.maximum(prior, 1e-300))
    for _ in range(em_iterations):
        logw = -d2 / var + log_prior
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        w /= w.sum(axis=1, keepdims=True)
        new = float(np.mean(np.sum(w * d2, axis=1)))
        done = abs(new - var) <= tol * var
        var = new
        if done:
            break
    return max(var, 1e-12)


def gaussian_demap(received, c, prior, noise_var, tx_indices=None):
    """Bitwise LLRs of the mismatched Gaussian demapper on constellation ``c``.

    The constellation is rescaled to unit energy under ``prior`` (the
    transmitter's normalisation). ``tx_indices`` attaches ground-truth labels.
    """
    y = check_complex(received, "received")
    prior = check_probability_vector(prior, c.order, "prior")
    if not noise_var > 0:
        raise ValueError("noise_var must be positive")
    points = c.points * c.energy_scale(prior)
    llrs, n_clamped = llr_from_points(y, points, c.labels, prior, noise_var)
    labels = c.labels[np.asarray(tx_indices)] if tx_indices is not None else np.zeros_like(llrs, dtype=np.uint8)
    if n_clamped and tx_indices is not None:
        # clamping a correct-sign LLR changes the cross entropy by < exp(-LLR_CLAMP); only wrong-sign ones matter
        wrong = int(np.sum((np.abs(llrs) >= LLR_CLAMP) & ((llrs < 0) != labels.astype(bool))))
        if wrong:
            warnings.warn(f"{wrong} wrong-sign LLRs clamped to +-{LLR_CLAMP}", RuntimeWarning, stacklevel=2)
    return LlrFrame(llrs, labels, float(noise_var), n_clamped)


class GaussianDemapper(TransformerMixin, BaseEstimator):
    """Gaussian demapper estimator.

    ``fit`` estimates the noise variance from received samples unless
    ``noise_var`` is given; ``transform`` returns the ``(n, m)`` LLR matrix.
    """

    def __init__(self, constellation=None, prior=None, noise_var=None, em_iterations=500):
        self.constellation = constellation
        self.prior = prior
        self.noise_var = noise_var
        self.em_iterations = em_iterations

    def _prior(self):
        c = self.constellation
        return np.full(c.order, 1.0 / c.order) if self.prior is None else np.asarray(self.prior)

    def fit(self, X, y=None):
        rx = check_complex(np.ravel(X), "received")
        prior = self._prior()
        if self.noise_var is None:
            points = self.constellation.points * self.constellation.energy_scale(prior)
            self.noise_var_ = estimate_noise_variance(rx, points, prior, self.em_iterations)
        else:
            self.noise_var_ = float(self.noise_var)
        return self

    def transform(self, X):
        check_is_fitted(self, "noise_var_")
        return gaussian_demap(np.ravel(X), self.constellation, self._prior(), self.noise_var_).llrs

    def demap(self, X, tx_indices):
        check_is_fitted(self, "noise_var_")
        return gaussian_demap(np.ravel(X), self.constellation, self._prior(), self.noise_var_, tx_indices)


@dataclass
class AirReport:
    """Bit-metric AIR in bits per 2-D symbol."""

    marginal_entropy_bits_per_2d: float
    conditional_entropy_sum: float
    R_bmd: float
    R_loss: float
    net_air: float
    confidence_halfwidth: float
    rate_loss_source: str = "theoretical"
    n_symbols: int = 0
    extra: dict = field(default_factory=dict)

    def check(self):
        if self.R_bmd > self.marginal_entropy_bits_per_2d + 1e-12:
            raise InvariantError("R_bmd exceeds the marginal entropy")
        if self.net_air > self.marginal_entropy_bits_per_2d - self.R_loss + 1e-12:
            raise InvariantError("net AIR exceeds marginal entropy minus rate loss")
        return self


def bit_cross_entropy(llrs, labels):
    """Per-symbol sum over bit levels of ``log2(1 + exp(-(1 - 2 b) LLR))``."""
    signed = (1.0 - 2.0 * np.asarray(labels, dtype=np.float64)) * llrs
    return np.sum(np.logaddexp(0.0, -signed), axis=1) / np.log(2.0)


def estimate_air(
    frames,
    model=None,
    *,
    entropy_bits_per_2d=None,
    rate_loss=None,
    rate_loss_source=None,
    signed_bits=2,
    n_bootstrap=200,
    seed=0,
    min_symbols=10_000,
):
    """Monte Carlo bit-metric rate minus rate loss.

    ``R_bmd = H(b) - sum_i E[log2(1 + exp(-(1 - 2 b_i) LLR_i))]``.

    Parameters
    ----------
    frames : LlrFrame or sequence of LlrFrame
    model : ConditionalModel, optional
        Source of the marginal entropy (plus ``signed_bits`` uniform sign bits)
        and, unless ``rate_loss`` is given, of the ideal rate loss.
    entropy_bits_per_2d : float, optional
        Label entropy ``H(b)``; overrides the model. Without either, the
        empirical label entropy of the frames is used.
    rate_loss : float, optional
        Rate loss to deduct, bits per 2-D symbol (e.g. a measured matcher loss).
    rate_loss_source : str, optional
        Label recorded in the report, e.g. ``"theoretical"`` or ``"empirical"``.
    """
    if isinstance(frames, LlrFrame):
        frames = [frames]
    llrs = np.concatenate([f.llrs for f in frames])
    labels = np.concatenate([f.tx_labels for f in frames])
    n = llrs.shape[0]
    if n < min_symbols:
        warnings.warn(f"only {n} symbols; confidence interval will be wide", RuntimeWarning, stacklevel=2)

    if entropy_bits_per_2d is not None:
        h_b = float(entropy_bits_per_2d)
    elif model is not None:
        h_b = signed_bits + marginal_entropy(model)
    else:
        weights = 1 << np.arange(labels.shape[1])[::-1]
        words = labels.astype(np.int64) @ weights
        h_b = float(entropy_bits(np.bincount(words) / n))

    if rate_loss is None:
        if model is not None:
            r_loss = rate_loss_theoretical(model)
            source = rate_loss_source or "theoretical"
        else:
            r_loss, source = 0.0, rate_loss_source or "none"
    else:
        r_loss, source = float(rate_loss), rate_loss_source or "given"

    bce = bit_cross_entropy(llrs, labels)
    cond = float(bce.mean())
    r_bmd = h_b - cond
    rng = np.random.default_rng(seed)
    boots = np.array([bce[rng.integers(0, n, n)].mean() for _ in range(n_bootstrap)])
    halfwidth = 1.96 * float(boots.std(ddof=1)) if n_bootstrap > 1 else float("nan")
    report = AirReport(
        marginal_entropy_bits_per_2d=h_b,
        conditional_entropy_sum=cond,
        R_bmd=r_bmd,
        R_loss=r_loss,
        net_air=r_bmd - r_loss,
        confidence_halfwidth=halfwidth,
        rate_loss_source=source,
        n_symbols=n,
    )
    return report.check()


def merge_reports(reports):
    """Symbol-count weighted average of reports computed with the same rate-loss term."""
    w = np.array([r.n_symbols for r in reports], dtype=np.float64)
    w /= w.sum()

    def avg(name):
        return float(np.dot(w, [getattr(r, name) for r in reports]))

    halfwidth = float(np.sqrt(np.dot(w**2, [r.confidence_halfwidth**2 for r in reports])))
    return AirReport(
        marginal_entropy_bits_per_2d=avg("marginal_entropy_bits_per_2d"),
        conditional_entropy_sum=avg("conditional_entropy_sum"),
        R_bmd=avg("R_bmd"),
        R_loss=avg("R_loss"),
        net_air=avg("net_air"),
        confidence_halfwidth=halfwidth,
        rate_loss_source=reports[0].rate_loss_source,
        n_symbols=int(sum(r.n_symbols for r in reports)),
    ).check()


AIR_CSV_COLUMNS = (
    "scheme",
    "launch_power_dbm",
    "R_bmd",
    "R_loss",
    "net_air",
    "ci",
    "seed",
    "rate_loss_source",
    "candidates",
    "selection_blocklength",
)


def append_air_rows(path, rows):
    """Append result rows (dicts keyed by ``AIR_CSV_COLUMNS``) to a results CSV."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=AIR_CSV_COLUMNS, lineterminator="\n")
        if new:
            writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in AIR_CSV_COLUMNS})


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def report_row(scheme, power_dbm, report, seed, **extra):
    row = {
        "scheme": scheme,
        "launch_power_dbm": float(power_dbm),
        "R_bmd": report.R_bmd,
        "R_loss": report.R_loss,
        "net_air": report.net_air,
        "ci": report.confidence_halfwidth,
        "seed": seed,
        "rate_loss_source": report.rate_loss_source,
    }
    row.update(extra)
    return row


__all__ = [
    "AirReport",
    "GaussianDemapper",
    "LlrFrame",
    "append_air_rows",
    "bit_cross_entropy",
    "estimate_air",
    "estimate_noise_variance",
    "gaussian_demap",
    "llr_from_points",
    "merge_reports",
    "report_row",
]
