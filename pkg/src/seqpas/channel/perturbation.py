"""First-order regular-perturbation surrogates of the single-span channel.

Two operators give the first-order distortion on unit-energy symbols:

* :class:`PerturbationKernel`, the triplet form
  ``j gamma P sum_{k,l} C[k,l] x_{t+k} x_{t+l} conj(x_{t+k+l})`` whose
  coefficients ``C`` (metres) use a Gaussian approximation of the RRC pulse.
  It is compact and drives the selection metric, but dropping the triplets
  with ``m != k + l`` leaves a model error of about -16 dB relative to the
  distortion at any power.
* :class:`RegularPerturbation`, the untruncated first-order term evaluated on
  the RRC waveform by quadrature over distance. Its error against the
  split-step reference is second order, falling 6 dB per 3 dB of launch power.

Sequences are treated as periodic.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import roots_legendre

from .._validation import check_complex
from ..exceptions import DomainError
from .fiber import FiberConfig, dbm_to_watt
from .pulse import rrc_frequency_response, rrc_taps


@lru_cache(maxsize=8)
def gaussian_width_for_rrc(rolloff, sps=32, span=32):
    """RMS width ``tau`` (in symbol periods) of the unit-energy Gaussian closest to the RRC pulse."""
    h = rrc_taps(sps, rolloff, span) * np.sqrt(sps)
    t = np.arange(-span * sps, span * sps + 1) / sps
    dt = 1.0 / sps

    def distance(tau):
        g = np.exp(-(t**2) / (2 * tau**2))
        g /= np.sqrt(np.sum(g**2) * dt)
        return np.sum((g - h) ** 2) * dt

    res = minimize_scalar(distance, bounds=(0.05, 2.0), method="bounded", options={"xatol": 1e-10})
    return float(res.x)


@dataclass(frozen=True)
class PerturbationKernel:
    """Coefficient table ``coeffs[k + K, l + K]`` for ``|k|, |l| <= K``.

    ``gamma`` is in 1/(W m) and ``coeffs`` in metres, so ``gamma * P * C`` is
    dimensionless for launch power ``P`` in watts.
    """

    coeffs: np.ndarray
    gamma: float

    @property
    def memory(self):
        return (self.coeffs.shape[0] - 1) // 2

    def coefficient(self, k, l):
        k_mem = self.memory
        return self.coeffs[k + k_mem, l + k_mem]

    def with_gamma(self, gamma):
        return PerturbationKernel(self.coeffs, float(gamma))

    def truncated(self, k_mem):
        if k_mem > self.memory:
            raise DomainError(f"cannot extend kernel memory {self.memory} to {k_mem}")
        off = self.memory - k_mem
        return PerturbationKernel(self.coeffs[off : off + 2 * k_mem + 1, off : off + 2 * k_mem + 1], self.gamma)

    def energy_profile(self):
        """Fraction of total ``|C|^2`` inside ``|k|, |l| <= K`` for K = 0..memory."""
        e = np.abs(self.coeffs) ** 2
        k_mem = self.memory
        total = e.sum()
        return np.array([e[k_mem - k : k_mem + k + 1, k_mem - k : k_mem + k + 1].sum() / total for k in range(k_mem + 1)])

    def effective_memory(self, fraction=0.99):
        """Smallest K holding ``fraction`` of the kernel energy."""
        return int(np.argmax(self.energy_profile() >= fraction - 1e-15))

    def filters(self, n):
        """Per-k circular correlation filters in the frequency domain, shape (2K+1, n)."""
        k_mem = self.memory
        if n <= 2 * k_mem:
            raise DomainError(f"sequence length {n} must exceed 2 * K_mem = {2 * k_mem}")
        g = np.zeros((2 * k_mem + 1, n), dtype=np.complex128)
        lags = np.arange(-k_mem, k_mem + 1)
        g[:, (-lags) % n] = self.coeffs
        return np.fft.fft(g, axis=1)


def kernel_from_fiber(cfg, k_mem, pulse_width=None, n_quad=4096):
    """Gaussian-pulse first-order coefficients for one span.

    ``pulse_width`` is the Gaussian RMS width in symbol periods; by default the
    least-squares fit to the configured RRC pulse.
    """
    if k_mem < 1:
        raise DomainError("K_mem must be >= 1")
    T = cfg.symbol_period
    tau = (gaussian_width_for_rrc(cfg.rrc_rolloff) if pulse_width is None else pulse_width) * T
    length, alpha, beta2 = cfg.length_m, cfg.alpha, cfg.beta2

    # graded panels: dense near the input where power and pulse evolution are largest
    edges = np.unique(np.concatenate([[0.0], np.geomspace(1.0, length, 256)]))
    nodes, weights = roots_legendre(16)
    za, zb = edges[:-1, None], edges[1:, None]
    z = (0.5 * (zb - za) * nodes + 0.5 * (zb + za)).ravel()
    wz = (0.5 * (zb - za) * weights).ravel()

    ks = np.arange(-k_mem, k_mem + 1)
    kk, ll = np.meshgrid(ks, ks, indexing="ij")
    mm = kk + ll
    coeffs = np.zeros(kk.shape, dtype=np.complex128)
    for start in range(0, z.size, 256):
        zc, wc = z[start : start + 256], wz[start : start + 256]
        zeta = (tau**2 - 1j * beta2 * zc)[:, None, None]
        a = 2 * tau**2 / np.abs(zeta) ** 2
        expo = (mm * T) ** 2 * a / 4 - (kk**2 + ll**2) * T**2 / (2 * zeta) - (mm * T) ** 2 / (2 * np.conj(zeta))
        pref = (T / (tau**2 * np.pi)) * (tau**4 / np.abs(zeta) ** 2) * np.sqrt(np.pi / a)
        integrand = pref * np.exp(expo) * np.exp(-alpha * zc)[:, None, None]
        coeffs += np.tensordot(wc, integrand, axes=(0, 0))
    coeffs = 0.5 * (coeffs + coeffs.T)
    return PerturbationKernel(coeffs, cfg.gamma)


def perturbation_term(symbols, kernel, power_w=1.0):
    """Field-domain first-order distortion ``j gamma P^{3/2} sum C x x conj(x)``.

    ``symbols`` are unit-energy; the result is in sqrt(W) for launch power
    ``power_w``. Dividing by ``sqrt(power_w)`` gives the distortion on the
    normalised symbols.
    """
    x = check_complex(symbols, "symbols")
    n = x.size
    k_mem = kernel.memory
    if n <= 2 * k_mem:
        raise DomainError(f"sequence length {n} must exceed 2 * K_mem = {2 * k_mem}")
    lags = np.arange(-k_mem, k_mem + 1)
    idx = (np.arange(n)[None, :] + lags[:, None]) % n
    shifted = x[idx]  # shifted[k, t] = x_{t+k}
    r = x[None, :] * np.conj(shifted)  # r_k(s) = x_s conj(x_{s+k})
    inner = np.fft.ifft(np.fft.fft(r, axis=1) * kernel.filters(n), axis=1)
    total = np.sum(shifted * inner, axis=0)
    return 1j * kernel.gamma * power_w**1.5 * total


def distance_quadrature(length_m, n_nodes=128, order=4, first_edge_m=100.0):
    """Gauss-Legendre nodes on log-spaced panels, dense near the span input."""
    if n_nodes % order:
        raise DomainError(f"n_nodes must be a multiple of {order}")
    panels = n_nodes // order
    edges = np.concatenate([[0.0], np.geomspace(first_edge_m, length_m, panels)])
    nodes, weights = roots_legendre(order)
    za, zb = edges[:-1, None], edges[1:, None]
    return (0.5 * (zb - za) * nodes + 0.5 * (zb + za)).ravel(), (0.5 * (zb - za) * weights).ravel()


@dataclass(frozen=True)
class RegularPerturbation:
    """Untruncated first-order perturbation of one span on the RRC waveform.

    ``weights`` already include the power profile ``exp(-alpha z)``.
    """

    fiber: FiberConfig
    z: np.ndarray
    weights: np.ndarray
    gamma: float

    def with_gamma(self, gamma):
        return RegularPerturbation(self.fiber, self.z, self.weights, float(gamma))

    def transfer(self, n_symbols):
        """RRC response ``(N,)`` and per-node dispersion ``(n_nodes, N)`` for ``N = n_symbols * sps``."""
        cfg = self.fiber
        sps = int(cfg.oversampling)
        n = n_symbols * sps
        h = rrc_frequency_response(n, sps, cfg.rrc_rolloff)
        omega = 2 * np.pi * np.fft.fftfreq(n, d=1.0 / cfg.sample_rate)
        d = np.exp(0.5j * cfg.beta2 * omega[None, :] ** 2 * self.z[:, None])
        return h, d

    def first_order_term(self, symbols, power_w=1.0):
        """Distortion in sqrt(W) at launch power ``power_w``, as :func:`perturbation_term`."""
        x = check_complex(symbols, "symbols")
        sps = int(self.fiber.oversampling)
        h, d = self.transfer(x.size)
        up = np.zeros(x.size * sps, dtype=np.complex128)
        up[::sps] = x
        spectrum = np.fft.fft(up) * h
        acc = np.zeros(up.size, dtype=np.complex128)
        for dz, w in zip(d, self.weights):
            u = np.fft.ifft(spectrum * dz) * np.sqrt(sps)
            acc += w * np.fft.fft(np.abs(u) ** 2 * u) * np.conj(dz)
        out = np.fft.ifft(acc * h)[::sps] / np.sqrt(sps)
        return 1j * self.gamma * power_w**1.5 * out


def regular_perturbation(cfg, n_nodes=128):
    """First-order operator with ``n_nodes`` distance quadrature points."""
    z, w = distance_quadrature(cfg.length_m, n_nodes)
    return RegularPerturbation(cfg, z, w * np.exp(-cfg.alpha * z), cfg.gamma)


def first_order_term(symbols, operator, power_w=1.0):
    """Dispatch to the triplet kernel or the untruncated operator."""
    if isinstance(operator, RegularPerturbation):
        return operator.first_order_term(symbols, power_w)
    return perturbation_term(symbols, operator, power_w)


def perturbation_channel(symbols, kernel, power_dbm, noise_variance=0.0, seed=None):
    """Normalised received symbols of the first-order surrogate channel.

    ``kernel`` is a :class:`PerturbationKernel` or a :class:`RegularPerturbation`.
    """
    x = check_complex(symbols, "symbols")
    p = float(dbm_to_watt(power_dbm))
    y = x + first_order_term(x, kernel, p) / np.sqrt(p)
    if noise_variance > 0:
        rng = np.random.default_rng(seed)
        y = y + np.sqrt(noise_variance / 2) * (rng.standard_normal(x.size) + 1j * rng.standard_normal(x.size))
    return y
