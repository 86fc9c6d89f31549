"""Root-raised-cosine pulse shaping, applied in the frequency domain over the whole frame."""

import numpy as np

from .._validation import check_complex
from .fiber import ComplexFrame, dbm_to_watt


def raised_cosine_spectrum(f, symbol_rate, rolloff):
    """Raised-cosine spectrum normalised to 1 in the passband."""
    af = np.abs(np.asarray(f, dtype=np.float64)) / symbol_rate
    lo = (1.0 - rolloff) / 2.0
    hi = (1.0 + rolloff) / 2.0
    out = np.zeros_like(af)
    out[af <= lo] = 1.0
    if rolloff > 0:
        band = (af > lo) & (af <= hi)
        out[band] = 0.5 * (1.0 + np.cos(np.pi / rolloff * (af[band] - lo)))
    return out


def rrc_frequency_response(n_samples, sps, rolloff):
    """Discrete RRC response with unit-energy impulse response."""
    f = np.fft.fftfreq(n_samples, d=1.0 / sps)  # in units of the symbol rate
    return np.sqrt(sps * raised_cosine_spectrum(f, 1.0, rolloff))


def rrc_taps(sps, rolloff, span_symbols):
    """Closed-form unit-energy RRC taps over ``[-span, span]`` symbols."""
    t = np.arange(-span_symbols * sps, span_symbols * sps + 1) / sps
    b = rolloff
    h = np.empty_like(t)
    for i, ti in enumerate(t):
        if ti == 0:
            h[i] = 1.0 - b + 4.0 * b / np.pi
        elif b > 0 and np.isclose(abs(ti), 1.0 / (4.0 * b)):
            h[i] = (b / np.sqrt(2)) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
            )
        else:
            num = np.sin(np.pi * ti * (1 - b)) + 4 * b * ti * np.cos(np.pi * ti * (1 + b))
            den = np.pi * ti * (1 - (4 * b * ti) ** 2)
            h[i] = num / den
    return h / np.sqrt(sps)


def rrc_shape(symbols, cfg, launch_power_dbm):
    """Upsample and RRC-filter unit-energy symbols into a frame of mean power ``launch_power_dbm``.

    The frame is treated as periodic, so there are no filter edge transients.
    """
    symbols = check_complex(symbols, "symbols")
    sps = int(cfg.oversampling)
    up = np.zeros(symbols.size * sps, dtype=np.complex128)
    up[::sps] = symbols
    h = rrc_frequency_response(up.size, sps, cfg.rrc_rolloff)
    wave = np.fft.ifft(np.fft.fft(up) * h)
    wave *= np.sqrt(dbm_to_watt(launch_power_dbm) * sps)
    return ComplexFrame(wave, cfg.sample_rate / 1e9, float(launch_power_dbm))


def matched_filter(frame, cfg):
    """Matched RRC filter and symbol-rate sampling; inverse of :func:`rrc_shape` on a transparent channel."""
    sps = int(cfg.oversampling)
    x = frame.samples
    h = rrc_frequency_response(x.size, sps, cfg.rrc_rolloff)
    y = np.fft.ifft(np.fft.fft(x) * h)[::sps]
    return y / np.sqrt(dbm_to_watt(frame.launch_power_dbm) * sps)
