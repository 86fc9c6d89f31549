"""Independent reference computations used by the tests.

Nothing here imports the package's demapper, entropy or channel code; each
oracle is written from the defining formula.
"""

import itertools

import numpy as np
from scipy.special import logsumexp, roots_hermite


def entropy_bits(p):
    p = np.asarray(p, dtype=np.float64)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def bitwise_llrs(y, points, labels, prior, noise_var):
    """Direct evaluation of log(sum_{b=0} p(y|x)P(x) / sum_{b=1} p(y|x)P(x))."""
    log_like = -np.abs(np.asarray(y)[:, None] - points[None, :]) ** 2 / noise_var + np.log(prior)[None, :]
    out = np.empty((len(y), labels.shape[1]))
    for i in range(labels.shape[1]):
        out[:, i] = logsumexp(log_like[:, labels[:, i] == 0], axis=1) - logsumexp(log_like[:, labels[:, i] == 1], axis=1)
    return out


def gmi_quadrature(points, labels, snr_db, n_nodes=48):
    """BMD rate of uniform signalling on AWGN by Gauss-Hermite quadrature over the noise.

    ``R = m - sum_i E[log2(1 + exp(-(1 - 2 b_i) LLR_i))]`` with the expectation
    over the transmitted point and a 2-D product Gauss-Hermite rule.
    """
    noise_var = 10 ** (-snr_db / 10)
    t, w = roots_hermite(n_nodes)
    scale = np.sqrt(noise_var)  # per-dimension std is sqrt(noise_var / 2); z = sqrt(2) std t
    nr, ni = np.meshgrid(t * scale, t * scale, indexing="ij")
    ww = np.outer(w, w).ravel() / np.pi
    noise = (nr + 1j * ni).ravel()
    m = labels.shape[1]
    prior = np.full(len(points), 1 / len(points))
    total = 0.0
    for x, lab in zip(points, labels):
        llr = bitwise_llrs(x + noise, points, labels, prior, noise_var)
        signed = (1.0 - 2.0 * lab)[None, :] * llr
        total += np.sum(ww[:, None] * np.logaddexp(0, -signed)) / np.log(2)
    return m - total / len(points)


def perturbation_triple_sum(x, coeffs, gamma, power_w):
    """Direct periodic triple sum ``j gamma P^{3/2} sum C[k,l] x_{t+k} x_{t+l} conj(x_{t+k+l})``."""
    n = len(x)
    k_mem = (coeffs.shape[0] - 1) // 2
    out = np.zeros(n, dtype=complex)
    for t in range(n):
        for k in range(-k_mem, k_mem + 1):
            for l in range(-k_mem, k_mem + 1):
                out[t] += coeffs[k + k_mem, l + k_mem] * x[(t + k) % n] * x[(t + l) % n] * np.conj(x[(t + k + l) % n])
    return 1j * gamma * power_w**1.5 * out


def ess_enumerate(n, levels, e_max):
    """All amplitude blocks of length ``n`` with energy <= e_max, in lexicographic order."""
    return [s for s in itertools.product(sorted(levels), repeat=n) if sum(v * v for v in s) <= e_max]


def chain_joint_entropy(table, n):
    """``H(a_1..a_n)`` of a stationary order-1 chain by explicit enumeration."""
    a = table.shape[0]
    vals, vecs = np.linalg.eig(table.T)
    pi = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
    pi = pi / pi.sum()
    h = 0.0
    for seq in itertools.product(range(a), repeat=n):
        p = pi[seq[0]]
        for u, v in zip(seq, seq[1:]):
            p *= table[u, v]
        if p > 0:
            h -= p * np.log2(p)
    return h, pi
