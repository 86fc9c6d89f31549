"""Sequence selection over ESS candidates with a kernel-based nonlinearity proxy.

Candidates are seeded position scramblings of the ESS blocks that make up one
selection block (candidate 0 is the unscrambled block), so every candidate
keeps the composition and energy of each ESS block. The metric is the mean
squared magnitude of the first-order perturbation term, with the uniform
signs of PAS averaged out exactly; it is a proxy, not the published
additive-multiplicative metric.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import ConfigurationError, DomainError
from .matchers.ess import ess_decode, ess_encode

METRIC_ID = "kernel-proxy"


@dataclass(frozen=True)
class SelectionConfig:
    """Selection blocklength in 2-D symbols, candidate count and metric settings."""

    blocklength: int = 64
    candidates: int = 16
    metric: str = METRIC_ID
    kernel_memory: int = 4
    seed: int = 0

    def __post_init__(self):
        c = self.candidates
        if c < 2 or c > 64 or c & (c - 1):
            raise ConfigurationError("candidates must be a power of 2 in [2, 64]")
        if self.metric not in (METRIC_ID, "constant"):
            raise ConfigurationError(f"unknown metric {self.metric!r}")
        if self.blocklength <= 2 * self.kernel_memory:
            raise ConfigurationError("blocklength must exceed 2 * kernel_memory")

    @property
    def side_information_bits(self):
        """Candidate-index rate cost in bits per 2-D symbol."""
        return np.log2(self.candidates) / self.blocklength


@dataclass
class SelectionResult:
    amplitudes: np.ndarray
    candidate: int
    metrics: np.ndarray


# ----------------------------------------------------------------------------
# metric


@lru_cache(maxsize=16)
def _term_structure(k_mem):
    """Group the sign-expanded kernel terms by their sign monomial.

    Each factor ``x = a s + j b r`` of ``x_{t+k} x_{t+l} conj(x_{t+k+l})``
    contributes its in-phase or quadrature part; the product of the chosen
    sign variables is a monomial whose odd-multiplicity set (relative time,
    component) determines which terms are correlated.
    """
    rows = []
    keys = {}
    for k in range(-k_mem, k_mem + 1):
        for l in range(-k_mem, k_mem + 1):
            m = k + l
            for ck in (0, 1):
                for cl in (0, 1):
                    for cm in (0, 1):
                        phase = (1j if ck else 1) * (1j if cl else 1) * (-1j if cm else 1)
                        odd = set()
                        for item in ((k, ck), (l, cl), (m, cm)):
                            odd ^= {item}
                        key = keys.setdefault(frozenset(odd), len(keys))
                        rows.append((k, l, m, ck, cl, cm, phase, key))
    arr = np.array([r[:6] for r in rows], dtype=np.int64)
    phases = np.array([r[6] for r in rows], dtype=np.complex128)
    groups = np.array([r[7] for r in rows], dtype=np.int64)
    return arr, phases, groups, len(keys)


def nlin_metric(sequence, kernel):
    """Sign-averaged mean ``|Delta_t|^2`` of the first-order term over a block.

    Parameters
    ----------
    sequence : array_like of complex, shape (n,) or (n_candidates, n)
        Unsigned (or signed; only ``|Re|`` and ``|Im|`` matter) unit-energy
        symbols; zero outside the block.
    kernel : PerturbationKernel

    Returns
    -------
    float or ndarray
        ``(1/n) sum_t E_signs |sum_{k,l} C_kl x_{t+k} x_{t+l} conj(x_{t+k+l})|^2``.
    """
    x = np.asarray(sequence, dtype=np.complex128)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    n = x.shape[1]
    k_mem = kernel.memory
    if n <= 2 * k_mem:
        raise DomainError(f"block length {n} must exceed 2 * K_mem = {2 * k_mem}")
    terms, phases, groups, n_groups = _term_structure(k_mem)
    pad = 2 * k_mem
    comp = np.zeros((x.shape[0], 2, n + 2 * pad))
    comp[:, 0, pad : pad + n] = np.abs(x.real)
    comp[:, 1, pad : pad + n] = np.abs(x.imag)
    t = np.arange(n) + pad
    weights = kernel.coeffs[terms[:, 0] + k_mem, terms[:, 1] + k_mem] * phases
    k, l, m, ck, cl, cm = terms.T
    vals = (
        comp[:, ck[:, None], k[:, None] + t]
        * comp[:, cl[:, None], l[:, None] + t]
        * comp[:, cm[:, None], m[:, None] + t]
    ) * weights[None, :, None]
    grouped = np.zeros((x.shape[0], n_groups, n), dtype=np.complex128)
    np.add.at(grouped, (slice(None), groups), vals)
    out = np.sum(np.abs(grouped) ** 2, axis=(1, 2)) / n
    return float(out[0]) if single else out


# ----------------------------------------------------------------------------
# candidates


def _check_geometry(cfg, coder):
    if (2 * cfg.blocklength) % coder.blocklength:
        raise ConfigurationError(
            f"selection block of {cfg.blocklength} 2-D symbols is not a whole number of "
            f"ESS blocks of {coder.blocklength} amplitudes"
        )
    return 2 * cfg.blocklength // coder.blocklength


def candidate_permutations(cfg, ess_blocklength, n_blocks):
    """``(C, n_blocks, N)`` position permutations; candidate 0 is the identity."""
    perms = np.empty((cfg.candidates, n_blocks, ess_blocklength), dtype=np.int64)
    perms[0] = np.arange(ess_blocklength)
    for i in range(1, cfg.candidates):
        for j in range(n_blocks):
            perms[i, j] = np.random.default_rng([cfg.seed, i, j]).permutation(ess_blocklength)
    return perms


def levels_to_amplitude_index(levels, levels_per_dim):
    """Pair consecutive 1-D levels ``1, 3, ...`` into 2-D amplitude indices ``(I, Q)``."""
    idx = (np.asarray(levels).reshape(-1, 2) - 1) // 2
    if np.any(idx < 0) or np.any(idx >= levels_per_dim):
        raise DomainError("amplitude level outside the constellation")
    return idx[:, 0] * levels_per_dim + idx[:, 1]


def amplitude_index_to_levels(amp_index, levels_per_dim):
    i, q = np.divmod(np.asarray(amp_index), levels_per_dim)
    return np.stack([2 * i + 1, 2 * q + 1], axis=1).ravel()


def _candidate_levels(payload, cfg, coder):
    n_blocks = _check_geometry(cfg, coder)
    bits = np.asarray(payload, dtype=np.uint8)
    if bits.size != n_blocks * coder.k:
        raise DomainError(f"selection block needs {n_blocks * coder.k} payload bits, got {bits.size}")
    base = np.stack([ess_encode(coder, b) for b in bits.reshape(n_blocks, coder.k)])
    perms = candidate_permutations(cfg, coder.blocklength, n_blocks)
    return np.take_along_axis(base[None, :, :], perms, axis=2).reshape(cfg.candidates, -1)


def select_sequence(payload, cfg, coder, kernel, constellation, seed=None):
    """Encode one selection block and keep the lowest-metric candidate.

    Parameters
    ----------
    payload : array_like of {0, 1}
        ``n_blocks * coder.k`` bits, with ``n_blocks = 2 * blocklength / N``.
    cfg : SelectionConfig
    coder : EssCoder
    kernel : PerturbationKernel
        Truncated internally to ``cfg.kernel_memory``.
    constellation : Constellation
        Provides the amplitude scale of the metric.
    seed : int, optional
        Overrides ``cfg.seed`` for the scrambling permutations.

    Returns
    -------
    SelectionResult
        Amplitude indices (``blocklength`` 2-D symbols), the chosen candidate
        (lowest metric, ties to the lowest index) and all candidate metrics.
    """
    if seed is not None and seed != cfg.seed:
        cfg = SelectionConfig(cfg.blocklength, cfg.candidates, cfg.metric, cfg.kernel_memory, seed)
    levels = _candidate_levels(payload, cfg, coder)
    lpd = constellation.levels_per_dim
    amp_idx = np.stack([levels_to_amplitude_index(c, lpd) for c in levels])
    if cfg.metric == "constant":
        metrics = np.zeros(cfg.candidates)
    else:
        k = kernel.truncated(min(cfg.kernel_memory, kernel.memory))
        metrics = nlin_metric(constellation.unsigned_points[amp_idx], k)
    best = int(np.argmin(metrics))
    return SelectionResult(amp_idx[best], best, metrics)


def deselect(amp_index, candidate, cfg, coder, constellation):
    """Receiver side: undo the scrambling of ``candidate`` and recover the payload bits."""
    n_blocks = _check_geometry(cfg, coder)
    levels = amplitude_index_to_levels(amp_index, constellation.levels_per_dim).reshape(n_blocks, -1)
    perms = candidate_permutations(cfg, coder.blocklength, n_blocks)[candidate]
    original = np.empty_like(levels)
    np.put_along_axis(original, perms, levels, axis=1)
    return np.concatenate([ess_decode(coder, b) for b in original])


__all__ = [
    "METRIC_ID",
    "SelectionConfig",
    "SelectionResult",
    "amplitude_index_to_levels",
    "candidate_permutations",
    "deselect",
    "levels_to_amplitude_index",
    "nlin_metric",
    "select_sequence",
]
