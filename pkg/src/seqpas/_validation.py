"""Input validation helpers shared by the estimators and functional APIs."""

import numbers

import numpy as np

from .exceptions import ConfigurationError


def check_bits(bits, name="bits"):
    """Return ``bits`` as a 1-D ``uint8`` array of zeros and ones."""
    arr = np.asarray(bits)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr.astype(np.uint8)


def check_symbols(symbols, alphabet_size, name="symbols"):
    """Return ``symbols`` as a 1-D ``int64`` array with values in ``[0, alphabet_size)``."""
    arr = np.asarray(symbols)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise ValueError(f"{name} must be integer valued")
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= alphabet_size):
        raise ValueError(f"{name} out of range [0, {alphabet_size})")
    return arr


def check_complex(x, name="samples", min_length=1):
    """Return ``x`` as a finite 1-D ``complex128`` array.

    ``sklearn.utils.check_array`` rejects complex input, hence this helper.
    """
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size < min_length:
        raise ValueError(f"{name} needs at least {min_length} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_probability_vector(p, size=None, name="probabilities", atol=1e-10):
    """Validate a probability vector: nonnegative, finite, summing to one."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if size is not None and arr.size != size:
        raise ValueError(f"{name} must have length {size}, got {arr.size}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError(f"{name} must be finite and nonnegative")
    if abs(arr.sum() - 1.0) > atol:
        raise ValueError(f"{name} must sum to 1 (sum={arr.sum():.3e})")
    return arr


def check_positive(value, name, allow_zero=False):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ConfigurationError(f"{name} must be a finite real number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigurationError(f"{name} must be positive, got {value!r}")
    return float(value)
