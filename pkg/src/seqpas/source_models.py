"""Finite-memory autoregressive sources over the unsigned-symbol alphabet.

Every model exposes the same small state machine (``initial_state``,
``probs``, ``advance``) so that arithmetic matching, sampling and the entropy
oracles share one abstraction. For table models the context index encodes the
last ``memory`` symbols in base ``A`` with the oldest symbol most significant.
"""

import bisect
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np

from ._info import entropy_bits
from ._validation import check_probability_vector, check_symbols
from .exceptions import ConfigurationError, NumericalError

MODEL_MAGIC = "SEQPAS-MODEL"
MODEL_VERSION = 1


class ConditionalModel(ABC):
    """Next-symbol probability source with finite context."""

    alphabet_size: int

    @abstractmethod
    def initial_state(self):
        """State before the first symbol is generated."""

    @abstractmethod
    def probs(self, state):
        """Probability vector of the next symbol in ``state``."""

    @abstractmethod
    def advance(self, state, symbol):
        """State after emitting ``symbol``."""

    @property
    def model_id(self):
        return type(self).__name__


@dataclass(frozen=True)
class StationaryLaw:
    """Stationary distribution of the context chain and its symbol marginal."""

    context_probs: np.ndarray
    marginal: np.ndarray
    iterations: int = 0


class TableModel(ConditionalModel):
    """Order-``memory`` model given by a full ``(A**memory, A)`` probability table.

    The first ``memory`` symbols are drawn from the stationary context law so
    that the generated process is stationary from the first symbol on.
    """

    def __init__(self, table, memory):
        table = np.array(table, dtype=np.float64)
        if memory < 0:
            raise ConfigurationError("memory must be >= 0")
        if table.ndim != 2:
            raise ConfigurationError("table must be 2-D (contexts x symbols)")
        n_ctx, a = table.shape
        if n_ctx != a**memory:
            raise ConfigurationError(f"table has {n_ctx} rows, expected {a}**{memory}")
        if np.any(table < 0) or not np.all(np.isfinite(table)):
            raise ConfigurationError("probabilities must be finite and nonnegative")
        if np.max(np.abs(table.sum(axis=1) - 1.0)) > 1e-10:
            raise ConfigurationError("each table row must sum to 1")
        table.setflags(write=False)
        self.table = table
        self.memory = int(memory)
        self.alphabet_size = int(a)
        self._boot_cache = {}

    @classmethod
    def from_logits(cls, logits, memory):
        logits = np.asarray(logits, dtype=np.float64)
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z)
        return cls(p / p.sum(axis=1, keepdims=True), memory)

    @property
    def n_contexts(self):
        return self.table.shape[0]

    def context_index(self, context):
        context = check_symbols(context, self.alphabet_size, "context")
        if len(context) != self.memory:
            raise ValueError(f"context must have length {self.memory}, got {len(context)}")
        idx = 0
        for s in context:
            idx = idx * self.alphabet_size + int(s)
        return idx

    def next_distribution(self, context):
        """``p(a_t | previous memory symbols)``."""
        return self.table[self.context_index(context)]

    def initial_state(self):
        return () if self.memory > 0 else 0

    def probs(self, state):
        if isinstance(state, tuple):
            return self._boot_distribution(state)
        return self.table[state]

    def advance(self, state, symbol):
        if isinstance(state, tuple):
            prefix = state + (int(symbol),)
            if len(prefix) < self.memory:
                return prefix
            idx = 0
            for s in prefix:
                idx = idx * self.alphabet_size + s
            return idx
        if self.memory == 0:
            return 0
        return (state * self.alphabet_size + int(symbol)) % self.n_contexts

    def _boot_distribution(self, prefix):
        cached = self._boot_cache.get(prefix)
        if cached is not None:
            return cached
        a, mu = self.alphabet_size, self.memory
        joint = self.stationary.context_probs.reshape((a,) * mu)
        j = len(prefix)
        head = joint.sum(axis=tuple(range(j + 1, mu))) if j + 1 < mu else joint
        row = np.array(head[prefix], dtype=np.float64)
        total = row.sum()
        row = row / total if total > 0 else np.full(a, 1.0 / a)
        self._boot_cache[prefix] = row
        return row

    @cached_property
    def stationary(self):
        return stationary_law(self)

    @property
    def model_id(self):
        return f"table-A{self.alphabet_size}-mu{self.memory}"

    def __eq__(self, other):
        return (
            isinstance(other, TableModel)
            and other.memory == self.memory
            and np.array_equal(other.table, self.table)
        )

    def __hash__(self):
        return hash((self.memory, self.table.tobytes()))

    def __repr__(self):
        return f"TableModel(alphabet_size={self.alphabet_size}, memory={self.memory})"


def iid_model(marginal):
    """Memoryless model with the given marginal."""
    marginal = check_probability_vector(marginal, name="marginal")
    return TableModel(marginal[None, :], memory=0)


def uniform_model(alphabet_size, memory=0):
    return TableModel(np.full((alphabet_size**memory, alphabet_size), 1.0 / alphabet_size), memory)


class BlockwiseModel(ConditionalModel):
    """Blockwise source: independent blocks drawn from a joint law, reset at boundaries.

    Models the position-dependent context of block-based shapers so that their
    rate loss can be compared with the stationary sequential models.
    """

    def __init__(self, joint):
        joint = np.array(joint, dtype=np.float64)
        if joint.ndim < 1 or len(set(joint.shape)) != 1:
            raise ConfigurationError("joint must have shape (A,) * blocklength")
        if abs(joint.sum() - 1.0) > 1e-10 or np.any(joint < 0):
            raise ConfigurationError("joint must be a probability table")
        self.joint = joint
        self.blocklength = joint.ndim
        self.alphabet_size = joint.shape[0]
        self._cache = {}

    def initial_state(self):
        return ()

    def probs(self, state):
        row = self._cache.get(state)
        if row is None:
            j = len(state)
            head = self.joint.sum(axis=tuple(range(j + 1, self.blocklength)))
            row = np.array(head[state], dtype=np.float64)
            total = row.sum()
            row = row / total if total > 0 else np.full(self.alphabet_size, 1.0 / self.alphabet_size)
            self._cache[state] = row
        return row

    def advance(self, state, symbol):
        nxt = state + (int(symbol),)
        return () if len(nxt) == self.blocklength else nxt

    @property
    def model_id(self):
        return f"block-A{self.alphabet_size}-N{self.blocklength}"


def _context_step(pi, table, a):
    # pushes a context distribution one symbol forward
    joint = pi[:, None] * table
    n_ctx = table.shape[0]
    return joint.reshape(a, n_ctx // a, a).sum(axis=0).ravel()


def stationary_law(model, tol=1e-12, max_iter=200_000):
    """Stationary context distribution by power iteration.

    Raises
    ------
    NumericalError
        If the total-variation change does not drop below ``tol`` within
        ``max_iter`` iterations (e.g. periodic or reducible context chains).
    """
    if not isinstance(model, TableModel):
        raise TypeError("stationary_law requires a TableModel")
    table, a = model.table, model.alphabet_size
    if model.memory == 0:
        return StationaryLaw(np.ones(1), table[0].copy(), 0)
    pi = np.full(model.n_contexts, 1.0 / model.n_contexts)
    residual = np.inf
    for it in range(1, max_iter + 1):
        nxt = _context_step(pi, table, a)
        nxt /= nxt.sum()
        residual = 0.5 * np.abs(nxt - pi).sum()
        pi = nxt
        if residual < tol:
            break
    else:
        raise NumericalError(
            f"stationary law did not converge in {max_iter} iterations (residual {residual:.3e})",
            residual=residual,
        )
    marginal = pi.reshape(-1, a).sum(axis=0)
    return StationaryLaw(pi, marginal, it)


def marginal_entropy(model):
    if isinstance(model, BlockwiseModel):
        return float(np.mean(_block_position_entropies(model)))
    return float(entropy_bits(model.stationary.marginal))


def entropy_rate(model):
    """Entropy rate in bits per symbol.

    For a :class:`BlockwiseModel` this is the block entropy divided by the
    blocklength, i.e. the rate of the block-reset process.
    """
    if isinstance(model, BlockwiseModel):
        return _block_entropy(model) / model.blocklength
    if model.memory == 0:
        return float(entropy_bits(model.table[0]))
    pi = model.stationary.context_probs
    return float(np.dot(pi, entropy_bits(model.table, axis=1)))


def rate_loss_theoretical(model):
    """Gap between marginal entropy and entropy rate, bits per unsigned symbol.

    With uniform independent sign bits this equals the rate loss measured over
    full bit labels, since the signs add the same entropy to both terms.
    """
    return marginal_entropy(model) - entropy_rate(model)


def _block_walk(model):
    # yields (prefix, probability) for every prefix of length < blocklength
    stack = [((), 1.0)]
    while stack:
        prefix, p = stack.pop()
        yield prefix, p
        if len(prefix) + 1 < model.blocklength:
            row = model.probs(prefix)
            for s in range(model.alphabet_size):
                if row[s] > 0:
                    stack.append((prefix + (s,), p * row[s]))


def _block_entropy(model):
    # chain rule: H(block) = sum_t E[H(a_t | a_<t)]
    return float(sum(p * entropy_bits(model.probs(prefix)) for prefix, p in _block_walk(model)))


def _block_position_entropies(model):
    marg = np.zeros((model.blocklength, model.alphabet_size))
    for prefix, p in _block_walk(model):
        marg[len(prefix)] += p * model.probs(prefix)
    return entropy_bits(marg, axis=1)


def sample_sequence(model, length, seed=None, boot_context=None):
    """Ancestral sampling of ``length`` symbols.

    ``boot_context`` optionally fixes the previous ``memory`` symbols; by
    default the first symbols follow the stationary context law.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    u = rng.random(length)
    state = model.initial_state()
    if boot_context is not None:
        for s in check_symbols(boot_context, model.alphabet_size, "boot_context"):
            state = model.advance(state, s)
    cdfs = {}
    out = np.empty(length, dtype=np.int64)
    last = model.alphabet_size - 1
    for t in range(length):
        cdf = cdfs.get(state)
        if cdf is None:
            cdf = np.cumsum(model.probs(state)).tolist()
            cdfs[state] = cdf
        s = min(bisect.bisect_right(cdf, u[t]), last)
        out[t] = s
        state = model.advance(state, s)
    return out


def joint_entropy_bruteforce(model, n):
    """Exact ``H(a_1..a_n)`` by enumerating all ``A**n`` sequences (oracle, small n only)."""
    total = 0.0
    for seq in product(range(model.alphabet_size), repeat=n):
        p = sequence_probability(model, seq)
        if p > 0:
            total -= p * np.log2(p)
    return total


def sequence_probability(model, seq):
    state = model.initial_state()
    p = 1.0
    for s in seq:
        p *= model.probs(state)[s]
        if p == 0:
            return 0.0
        state = model.advance(state, s)
    return p


def save_model(model, path):
    """Write a table model as versioned text: magic, header, row-major table."""
    lines = [
        f"{MODEL_MAGIC} v{MODEL_VERSION}",
        f"alphabet_size {model.alphabet_size}",
        f"memory {model.memory}",
    ]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in model.table)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith(MODEL_MAGIC):
        raise ConfigurationError(f"{path}: not a model file")
    version = int(lines[0].split("v")[-1])
    if version != MODEL_VERSION:
        raise ConfigurationError(f"{path}: unsupported model format version {version}")
    header = dict(ln.split() for ln in lines[1:3])
    a, mu = int(header["alphabet_size"]), int(header["memory"])
    table = np.array([[float(v) for v in ln.split()] for ln in lines[3:]])
    if table.shape != (a**mu, a):
        raise ConfigurationError(f"{path}: table shape {table.shape} does not match header")
    return TableModel(table, mu)
