"""Symmetric split-step Fourier propagation over one amplified span."""

import numpy as np

from ..exceptions import DomainError
from .fiber import ComplexFrame


def _angular_frequency(n, sample_rate):
    return 2 * np.pi * np.fft.fftfreq(n, d=1.0 / sample_rate)


def step_boundaries(cfg, peak_power_w):
    """Logarithmic step boundaries with equal nonlinear phase per step.

    Each step covers the same effective length, so with the automatic rule the
    per-step nonlinear phase ``gamma * P_peak * L_eff / K`` stays below
    ``cfg.max_nonlinear_phase_rad``; at low power ``cfg.min_step_count`` keeps
    the splitting error small relative to the nonlinear term itself.

    Raises
    ------
    DomainError
        If a fixed ``cfg.step_count`` would exceed the per-step phase cap.
    """
    total_phase = cfg.gamma * peak_power_w * cfg.effective_length_m
    if cfg.step_count:
        n_steps = int(cfg.step_count)
        per_step = total_phase / n_steps
        if per_step > cfg.max_nonlinear_phase_rad * (1 + 1e-12):
            raise DomainError(
                f"{n_steps} steps give {per_step * 1e3:.3f} mrad nonlinear phase per step, "
                f"cap is {cfg.max_nonlinear_phase_rad * 1e3:.3f} mrad; use at least "
                f"{int(np.ceil(total_phase / cfg.max_nonlinear_phase_rad))} steps"
            )
    else:
        n_steps = max(cfg.min_step_count, int(np.ceil(total_phase / cfg.max_nonlinear_phase_rad)))
    length, alpha = cfg.length_m, cfg.alpha
    frac = np.arange(n_steps + 1) / n_steps
    if alpha == 0:
        return frac * length
    z = -np.log1p(-frac * (1.0 - np.exp(-alpha * length))) / alpha
    z[-1] = length
    return z


def ssfm_propagate(frame, cfg, seed=None, noise=True, amplify=True):
    """Propagate a frame through the span and the amplifier.

    Linear half step (loss and dispersion in the frequency domain), full
    nonlinear phase rotation, linear half step. The amplifier restores the span
    loss and adds ASE of the configured noise figure over the simulation
    bandwidth.
    """
    x = np.asarray(frame.samples, dtype=np.complex128).copy()
    n = x.size
    sample_rate = frame.sample_rate_ghz * 1e9
    omega = _angular_frequency(n, sample_rate)
    alpha, beta2, gamma = cfg.alpha, cfg.beta2, cfg.gamma
    z = step_boundaries(cfg, float(np.max(np.abs(x) ** 2)))

    for dz in np.diff(z):
        half = np.exp((-alpha / 2 + 1j * beta2 * omega**2 / 2) * (dz / 2))
        x = np.fft.ifft(np.fft.fft(x) * half)
        if gamma:
            leff = dz if alpha == 0 else 2.0 * np.sinh(alpha * dz / 2.0) / alpha
            x *= np.exp(1j * gamma * leff * np.abs(x) ** 2)
        x = np.fft.ifft(np.fft.fft(x) * half)

    if amplify:
        x *= np.sqrt(cfg.span_gain)
    if noise:
        rng = np.random.default_rng(seed)
        var = cfg.ase_psd * sample_rate
        x += np.sqrt(var / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return ComplexFrame(x, frame.sample_rate_ghz, frame.launch_power_dbm)


def dispersion_transfer(n, sample_rate, cfg, length_m=None):
    length = cfg.length_m if length_m is None else length_m
    omega = _angular_frequency(n, sample_rate)
    return np.exp(1j * cfg.beta2 * omega**2 / 2 * length)


def cd_compensate(frame, cfg):
    """Apply the exact inverse of the span's dispersion transfer function."""
    sample_rate = frame.sample_rate_ghz * 1e9
    h = dispersion_transfer(frame.samples.size, sample_rate, cfg)
    y = np.fft.ifft(np.fft.fft(frame.samples) * np.conj(h))
    return ComplexFrame(y, frame.sample_rate_ghz, frame.launch_power_dbm)
