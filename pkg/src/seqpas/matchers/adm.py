"""Arithmetic distribution matching driven by a :class:`ConditionalModel`.

The payload bits ``b_1..b_n`` are read as the binary fraction at the centre of
their dyadic cell, ``u = 0.b_1...b_n 1``. The matcher runs an arithmetic
*decoder* on ``u``: it repeatedly splits the current interval according to the
model's quantised conditionals and emits the symbol whose sub-interval contains
``u``. It stops as soon as the symbol interval lies inside the payload cell
``[0.b, 0.b + 2**-n)``, so the dematcher (an arithmetic *encoder*) recovers the
payload from the symbol interval alone. Output length is variable.

Intervals are ``[low, low + rng) / 2**T`` with ``rng`` kept in
``[2**(precision - 1), 2**precision)`` by renormalisation. Sub-intervals are
computed with integer arithmetic only, so both directions are bit-exact.
"""

import bisect

import numpy as np

from .._validation import check_bits, check_symbols
from ..exceptions import CoderError, DecodeError
from ..source_models import marginal_entropy


class AdmCoder:
    """Fixed-precision arithmetic matcher/dematcher state for one model.

    Parameters
    ----------
    model : ConditionalModel
        Source of next-symbol conditionals.
    precision : int
        Register width of the interval size, in bits.
    prob_bits : int
        Conditionals are quantised to integers summing to ``2**prob_bits``.
    prob_floor : float
        Minimum probability assigned to any symbol before quantisation, so no
        sub-interval can collapse to zero width.
    """

    def __init__(self, model, precision=63, prob_bits=32, prob_floor=2.0**-20):
        if prob_floor * model.alphabet_size >= 1:
            raise ValueError("prob_floor too large for the alphabet")
        if precision < prob_bits + 2:
            raise ValueError("precision must exceed prob_bits + 1")
        if prob_floor * 2.0**prob_bits < 1:
            raise ValueError("prob_floor is below the quantisation step")
        self.model = model
        self.precision = int(precision)
        self.prob_bits = int(prob_bits)
        self.prob_floor = float(prob_floor)
        self._cdf_cache = {}

    def quantized_cdf(self, state):
        """Integer cumulative frequencies ``[0, ..., 2**prob_bits]`` for ``state``."""
        cdf = self._cdf_cache.get(state)
        if cdf is None:
            cdf = quantize_cdf(self.model.probs(state), self.prob_bits, self.prob_floor)
            self._cdf_cache[state] = cdf
        return cdf

    def quantized_probs(self, state):
        cdf = np.array(self.quantized_cdf(state), dtype=np.float64)
        return np.diff(cdf) / 2.0**self.prob_bits


def quantize_cdf(probs, prob_bits=32, prob_floor=2.0**-20):
    p = np.maximum(np.asarray(probs, dtype=np.float64), prob_floor)
    p /= p.sum()
    total = 1 << prob_bits
    freq = np.floor(p * total).astype(np.int64)
    freq[np.argmax(freq)] += total - int(freq.sum())
    if np.any(freq <= 0):
        raise CoderError("quantised probability collapsed to zero")
    return [0] + np.cumsum(freq).tolist()


def _payload_string(bits):
    return (bits + 48).tobytes().decode("ascii") + "1"


def adm_encode(coder, payload, state=None, return_state=False):
    """Map payload bits to a shaped symbol sequence.

    Parameters
    ----------
    coder : AdmCoder
    payload : array-like of {0, 1}
        Nonempty bit sequence.
    state : optional
        Model state to start from (e.g. the final state of a previous frame);
        defaults to ``model.initial_state()``.
    return_state : bool
        Also return the model state after the last emitted symbol.
    """
    bits = check_bits(payload, "payload")
    n = bits.size
    if n == 0:
        raise ValueError("payload must be nonempty")
    model = coder.model
    prec, pb = coder.precision, coder.prob_bits
    last = model.alphabet_size - 1
    u = _payload_string(bits)
    ulen = n + 1

    if state is None:
        state = model.initial_state()
    rng = 1 << prec
    t = prec
    w = int(u[:t].ljust(t, "0"), 2)
    out = []
    while True:
        cdf = coder.quantized_cdf(state)
        a = min(bisect.bisect_right(cdf, (((w + 1) << pb) - 1) // rng) - 1, last)
        lo = (rng * cdf[a]) >> pb
        hi = (rng * cdf[a + 1]) >> pb
        w -= lo
        rng = hi - lo
        if rng <= 0 or not 0 <= w < rng:
            raise CoderError("interval underflow", position=len(out))
        out.append(a)
        state = model.advance(state, a)
        s = prec - rng.bit_length()
        if s > 0:
            chunk = u[t : t + s] if t < ulen else ""
            nxt = int(chunk.ljust(s, "0"), 2)
            w = (w << s) | nxt
            rng <<= s
            t += s
        if t > n:
            half_cell = 1 << (t - n - 1)
            if w <= half_cell and rng - w <= half_cell:
                break
    symbols = np.array(out, dtype=np.int64)
    if return_state:
        return symbols, state
    return symbols


def adm_decode(coder, symbols, payload_length, state=None, strict=False):
    """Recover the payload from a symbol sequence produced by :func:`adm_encode`.

    Raises
    ------
    DecodeError
        If the symbol interval does not fit inside a single payload cell
        (``position`` is the number of payload bits the stream determines), or,
        with ``strict=True``, if re-matching the decoded payload does not
        reproduce ``symbols`` (``position`` is the first mismatching symbol).
    """
    model = coder.model
    symbols = check_symbols(symbols, model.alphabet_size)
    n = int(payload_length)
    if n < 1:
        raise ValueError("payload_length must be >= 1")
    prec, pb = coder.precision, coder.prob_bits
    start_state = model.initial_state() if state is None else state
    st = start_state
    low = 0
    rng = 1 << prec
    t = prec
    for s_ in symbols.tolist():
        cdf = coder.quantized_cdf(st)
        lo = (rng * cdf[s_]) >> pb
        hi = (rng * cdf[s_ + 1]) >> pb
        low += lo
        rng = hi - lo
        st = model.advance(st, s_)
        s = prec - rng.bit_length()
        if s > 0:
            low <<= s
            rng <<= s
            t += s
    top = low + rng - 1
    if t < n or (low >> (t - n)) != (top >> (t - n)):
        determined = t - (low ^ top).bit_length()
        raise DecodeError(
            f"symbol stream determines only {max(determined, 0)} of {n} payload bits",
            position=max(determined, 0),
        )
    value = low >> (t - n)
    bits = np.frombuffer(format(value, f"0{n}b").encode("ascii"), dtype=np.uint8) - 48
    if strict:
        again = adm_encode(coder, bits, state=start_state)
        if len(again) != len(symbols) or np.any(again != symbols):
            m = min(len(again), len(symbols))
            diff = np.flatnonzero(again[:m] != symbols[:m])
            pos = int(diff[0]) if diff.size else m
            raise DecodeError(f"symbol stream inconsistent at symbol {pos}", position=pos)
    return bits.astype(np.uint8)


def adm_output_lengths(coder, n, trials, seed=None):
    """Output lengths of ``trials`` independent uniform random ``n``-bit payloads."""
    rng = np.random.default_rng(seed)
    lengths = np.empty(trials, dtype=np.int64)
    for i in range(trials):
        payload = rng.integers(0, 2, n, dtype=np.uint8)
        lengths[i] = len(adm_encode(coder, payload))
    return lengths


def measure_rate_loss_adm(coder, n, trials, seed=None):
    """Empirical matcher rate loss ``H(marginal) - n / L_bar`` in bits per symbol.

    Returns
    -------
    r_loss_adm : float
    l_bar : float
        Mean output length over the random payloads.
    """
    if trials < 100:
        raise ValueError("trials must be >= 100")
    lengths = adm_output_lengths(coder, n, trials, seed)
    l_bar = float(lengths.mean())
    return marginal_entropy(coder.model) - n / l_bar, l_bar
