"""Enumerative sphere shaping over odd-integer amplitude levels.

``T[n][e]`` counts amplitude sequences of length ``n`` whose energy
``sum(a_i ** 2)`` is at most ``e``. Indices ``0 .. 2**k - 1`` map to the
admissible sequences in lexicographic order (smaller amplitude first), with
``k = floor(log2 T[N][E_max])``.
"""

import numpy as np

from .._info import entropy_bits
from .._validation import check_bits
from ..exceptions import ConfigurationError, DomainError


def _count_trellis(blocklength, energies, e_max):
    trellis = [[1] * (e_max + 1)]
    for _ in range(blocklength):
        prev = trellis[-1]
        row = [0] * (e_max + 1)
        for en in energies:
            for e in range(en, e_max + 1):
                row[e] += prev[e - en]
        trellis.append(row)
    return trellis


class EssCoder:
    """Bounded-energy trellis and lexicographic index map for one ``(N, levels, E_max)``."""

    def __init__(self, blocklength, amp_levels, e_max):
        levels = np.asarray(amp_levels)
        if blocklength < 1:
            raise ConfigurationError("blocklength must be >= 1")
        if levels.size == 0 or np.any(levels <= 0) or np.any(np.mod(levels, 1) != 0):
            raise ConfigurationError("ESS amplitude levels must be positive integers")
        levels = np.sort(levels.astype(np.int64))
        if e_max != int(e_max):
            raise ConfigurationError("e_max must be an integer energy")
        e_max = int(e_max)
        if e_max < blocklength * int(levels[0]) ** 2:
            raise DomainError(
                f"E_max={e_max} below the minimum sequence energy {blocklength * int(levels[0]) ** 2}"
            )
        self.blocklength = int(blocklength)
        self.amp_levels = tuple(int(v) for v in levels)
        self.energies = tuple(v * v for v in self.amp_levels)
        self.e_max = e_max
        self.trellis = _count_trellis(self.blocklength, self.energies, e_max)
        self.n_sequences = self.trellis[-1][e_max]
        self.k = self.n_sequences.bit_length() - 1

    @property
    def rate(self):
        """Shaping rate ``k / N`` in bits per amplitude."""
        return self.k / self.blocklength

    def count(self, n, e):
        return self.trellis[n][e] if 0 <= e else 0

    def encode_index(self, index):
        if not 0 <= index < self.n_sequences:
            raise DomainError(f"index {index} outside [0, {self.n_sequences})")
        out = []
        budget = self.e_max
        for j in range(self.blocklength):
            rem = self.blocklength - j - 1
            for level, en in zip(self.amp_levels, self.energies):
                if en > budget:
                    raise DomainError("index walk left the trellis")
                cnt = self.trellis[rem][budget - en]
                if index < cnt:
                    out.append(level)
                    budget -= en
                    break
                index -= cnt
        return np.array(out, dtype=np.int64)

    def decode_index(self, amplitudes):
        amplitudes = [int(a) for a in amplitudes]
        if len(amplitudes) != self.blocklength:
            raise DomainError(f"expected {self.blocklength} amplitudes, got {len(amplitudes)}")
        index = 0
        budget = self.e_max
        for j, a in enumerate(amplitudes):
            rem = self.blocklength - j - 1
            if a not in self.amp_levels:
                raise DomainError(f"amplitude {a} not in {self.amp_levels}")
            for level, en in zip(self.amp_levels, self.energies):
                if level == a:
                    break
                if en <= budget:
                    index += self.trellis[rem][budget - en]
            budget -= a * a
            if budget < 0:
                raise DomainError("sequence violates the energy bound")
        return index

    def level_marginal(self):
        """Exact amplitude marginal for uniform indices in ``[0, 2**k)``."""
        n_lev = len(self.amp_levels)
        e_max = self.e_max
        tf = np.array(self.trellis, dtype=np.float64)
        # occ[n, e, l]: occurrences of level l over all sequences counted in T[n][e]
        occ = np.zeros((self.blocklength + 1, e_max + 1, n_lev))
        for n in range(1, self.blocklength + 1):
            for li, en in enumerate(self.energies):
                if en > e_max:
                    continue
                occ[n, en:] += occ[n - 1, : e_max + 1 - en]
                occ[n, en:, li] += tf[n - 1, : e_max + 1 - en]

        target = 1 << self.k
        counts = np.zeros(n_lev)
        prefix = np.zeros(n_lev)
        budget = e_max
        remaining = target
        for j in range(self.blocklength):
            rem = self.blocklength - j - 1
            for li, en in enumerate(self.energies):
                if en > budget:
                    break
                size = self.trellis[rem][budget - en]
                if remaining >= size:
                    # whole subtree below this sibling is inside [0, 2**k)
                    counts += float(size) * prefix
                    counts[li] += float(size)
                    counts += occ[rem, budget - en]
                    remaining -= size
                    if remaining == 0:
                        break
                else:
                    prefix[li] += 1
                    budget -= en
                    break
            if remaining == 0:
                break
        return counts / counts.sum()

    def rate_loss(self):
        """``H(level marginal) - k / N`` in bits per amplitude."""
        return float(entropy_bits(self.level_marginal())) - self.rate


def ess_build(blocklength, amp_levels, e_max):
    return EssCoder(blocklength, amp_levels, e_max)


def ess_find_emax(blocklength, amp_levels, target_rate):
    """Smallest ``E_max`` whose shaping rate ``k / N`` is closest to ``target_rate``."""
    levels = sorted(int(v) for v in amp_levels)
    energies = [v * v for v in levels]
    e_hi = blocklength * energies[-1]
    e_lo = blocklength * energies[0]
    counts = _count_trellis(blocklength, energies, e_hi)[-1]
    best, best_err = None, np.inf
    for e in range(e_lo, e_hi + 1):
        k = counts[e].bit_length() - 1
        err = abs(k / blocklength - target_rate)
        if err < best_err - 1e-15:
            best, best_err = e, err
    return best


def ess_encode(coder, index_bits):
    """Map ``k`` index bits (MSB first) to an amplitude block."""
    bits = check_bits(index_bits, "index_bits")
    if bits.size != coder.k:
        raise DomainError(f"ESS index needs exactly {coder.k} bits, got {bits.size}")
    index = int("".join(map(str, bits.tolist())) or "0", 2)
    return coder.encode_index(index)


def ess_decode(coder, amplitudes):
    index = coder.decode_index(amplitudes)
    if index >= 1 << coder.k:
        raise DomainError(f"sequence rank {index} is not a valid {coder.k}-bit index")
    return np.array([(index >> (coder.k - 1 - b)) & 1 for b in range(coder.k)], dtype=np.uint8)
