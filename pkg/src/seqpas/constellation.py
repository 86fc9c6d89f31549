"""Square QAM constellations in amplitude/sign form and Maxwell-Boltzmann marginals.

Symbol indices are laid out as ``index = quadrant * A + amplitude_index`` where
``A`` is the number of unsigned amplitude pairs. The quadrant is
``2 * sign_bit_I + sign_bit_Q`` with sign bit 0 meaning a positive coordinate,
and ``amplitude_index = amp_I * (L // 2) + amp_Q`` for an ``L``-ary PAM per
dimension. Each dimension carries the label ``[sign bit, Gray(amplitude)]``; the
2-D label is the I label followed by the Q label.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from ._info import entropy_bits
from .exceptions import ConfigurationError, DomainError

SUPPORTED_ORDERS = (16, 64, 256)


def _gray(k):
    return k ^ (k >> 1)


def _int_to_bits(value, width):
    return [(value >> (width - 1 - b)) & 1 for b in range(width)]


@dataclass(frozen=True)
class Constellation:
    """Square M-QAM with Gray labels and a PAS amplitude/sign factorisation.

    Attributes
    ----------
    order : int
        Number of points ``M``.
    points : ndarray of complex, shape (M,)
        Points scaled to unit average energy under uniform input.
    labels : ndarray of uint8, shape (M, m)
        Binary label of each point, ``m = log2(M)``.
    amp_alphabet : ndarray of float
        Positive amplitude levels per dimension, same scale as ``points``.
    amp_levels : ndarray of int
        The unscaled odd-integer levels ``1, 3, ..., L - 1``.
    """

    order: int
    points: np.ndarray
    labels: np.ndarray
    amp_alphabet: np.ndarray
    amp_levels: np.ndarray
    scale: float
    bits_per_symbol: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "bits_per_symbol", int(np.log2(self.order)))
        for name in ("points", "labels", "amp_alphabet", "amp_levels"):
            getattr(self, name).setflags(write=False)

    @property
    def levels_per_dim(self):
        """Number of amplitude levels per real dimension (``L / 2``)."""
        return len(self.amp_levels)

    @property
    def n_amplitudes(self):
        """Size ``A`` of the unsigned-symbol alphabet (amplitude pairs)."""
        return self.levels_per_dim**2

    @property
    def amplitude_pairs(self):
        """``(A, 2)`` array of per-dimension amplitude indices ``(amp_I, amp_Q)``."""
        a = np.arange(self.n_amplitudes)
        return np.stack(np.divmod(a, self.levels_per_dim), axis=1)

    @property
    def unsigned_points(self):
        """First-quadrant points, indexed by amplitude index."""
        return self.points[: self.n_amplitudes]

    @property
    def energies(self):
        return np.abs(self.points) ** 2

    def decompose(self, index):
        """Split a symbol index into ``(sign_quadrant, amplitude_index)``."""
        index = np.asarray(index)
        if np.any((index < 0) | (index >= self.order)):
            raise DomainError(f"symbol index out of range [0, {self.order})")
        q, a = np.divmod(index, self.n_amplitudes)
        if q.ndim == 0:
            return int(q), int(a)
        return q, a

    def recompose(self, quadrant, amplitude_index):
        """Inverse of :meth:`decompose`."""
        return np.asarray(quadrant) * self.n_amplitudes + np.asarray(amplitude_index)

    def symbol_prior(self, amplitude_probs):
        """Full M-point prior for an amplitude-pair law with uniform independent signs."""
        amplitude_probs = np.asarray(amplitude_probs, dtype=np.float64)
        if amplitude_probs.shape != (self.n_amplitudes,):
            raise ValueError(
                f"expected {self.n_amplitudes} amplitude probabilities, got {amplitude_probs.shape}"
            )
        return np.tile(amplitude_probs, 4) / 4.0

    def energy_scale(self, prior=None):
        """Factor that rescales the points to unit average energy under ``prior``."""
        if prior is None:
            return 1.0
        return 1.0 / np.sqrt(np.dot(prior, self.energies))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "re", "im", "label"])
            for i, (pt, lab) in enumerate(zip(self.points, self.labels)):
                writer.writerow([i, repr(float(pt.real)), repr(float(pt.imag)), "".join(map(str, lab))])


def build_qam(order=64):
    """Build a unit-energy square QAM with Gray labelling.

    Raises
    ------
    ConfigurationError
        If ``order`` is not one of 16, 64, 256.
    """
    if order not in SUPPORTED_ORDERS:
        raise ConfigurationError(f"unsupported QAM order {order}; choose from {SUPPORTED_ORDERS}")
    pam = int(round(np.sqrt(order)))
    half = pam // 2
    amp_bits = int(np.log2(half))
    levels = np.arange(1, pam, 2)
    # mean energy of a uniform square QAM with odd-integer levels: 2 (L^2 - 1) / 3
    scale = 1.0 / np.sqrt(2.0 * (pam**2 - 1) / 3.0)

    n_amp = half * half
    points = np.empty(order, dtype=np.complex128)
    labels = np.empty((order, 2 + 2 * amp_bits), dtype=np.uint8)
    for q in range(4):
        s_i, s_q = divmod(q, 2)
        for a in range(n_amp):
            a_i, a_q = divmod(a, half)
            idx = q * n_amp + a
            points[idx] = complex((1 - 2 * s_i) * levels[a_i], (1 - 2 * s_q) * levels[a_q]) * scale
            labels[idx] = (
                [s_i] + _int_to_bits(_gray(a_i), amp_bits) + [s_q] + _int_to_bits(_gray(a_q), amp_bits)
            )
    return Constellation(
        order=order,
        points=points,
        labels=labels,
        amp_alphabet=levels * scale,
        amp_levels=levels,
        scale=scale,
    )


@dataclass(frozen=True)
class MbDistribution:
    """Maxwell-Boltzmann law over the per-dimension amplitude levels."""

    nu: float
    probs: np.ndarray
    amplitudes: np.ndarray

    @property
    def entropy(self):
        """Entropy in bits per 1-D amplitude."""
        return float(entropy_bits(self.probs))

    def pair_probs(self):
        """Product law over amplitude pairs, in amplitude-index order."""
        return np.outer(self.probs, self.probs).ravel()


def maxwell_boltzmann(amplitudes, nu):
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    logits = -nu * amplitudes**2
    logits -= logits.max()
    w = np.exp(logits)
    return MbDistribution(nu=float(nu), probs=w / w.sum(), amplitudes=amplitudes)


def mb_fit_entropy(c, target_entropy_bits_per_1d, tol=1e-9, nu_max=50.0, max_iter=200):
    """Find the Maxwell-Boltzmann law over ``c.amp_alphabet`` with the given entropy.

    Bisection on the shaping exponent ``nu``; entropy is strictly decreasing in
    ``nu``. The upper bracket is doubled if ``nu_max`` is not yet enough for a
    very small target.
    """
    amps = c.amp_alphabet
    h_max = np.log2(len(amps))
    target = float(target_entropy_bits_per_1d)
    if not 0 < target <= h_max + 1e-15:
        raise DomainError(f"target entropy {target} outside (0, {h_max}]")
    if target >= h_max - tol:
        return maxwell_boltzmann(amps, 0.0)

    lo, hi = 0.0, float(nu_max)
    while maxwell_boltzmann(amps, hi).entropy > target:
        hi *= 2.0
        if hi > 1e6:
            raise DomainError(f"target entropy {target} not reachable")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        h = maxwell_boltzmann(amps, mid).entropy
        if abs(h - target) <= tol:
            return maxwell_boltzmann(amps, mid)
        if h > target:
            lo = mid
        else:
            hi = mid
    return maxwell_boltzmann(amps, 0.5 * (lo + hi))
