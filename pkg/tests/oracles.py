"""Independent brute-force oracles used to cross-check the library.

Everything here is deliberately naive: exhaustive enumeration of supports,
direct evaluation of defining sums, dense matrix materialization.  None of
it shares code with the implementation under test.
"""

from itertools import combinations, product

import numpy as np


def captured_energy_enumerated(w, s, sigma):
    """Max captured squared energy over ALL (s, sigma)-sparse supports.

    Full cartesian enumeration: every choice of s blocks and every choice of
    sigma entries within each chosen block.  Only usable for tiny shapes.
    """
    w = np.asarray(w, dtype=float)
    mu, n = w.shape
    s = min(s, mu)
    sigma = min(sigma, n)
    sq = w * w
    best = -np.inf
    for blocks in combinations(range(mu), s):
        for entry_sets in product(combinations(range(n), sigma), repeat=s):
            energy = sum(sq[k, list(es)].sum() for k, es in zip(blocks, entry_sets))
            if energy > best:
                best = energy
    return best


def captured_energy_factored(w, s, sigma):
    """Same maximum as :func:`captured_energy_enumerated`, computed by
    enumerating entry subsets per block and then block subsets."""
    w = np.asarray(w, dtype=float)
    mu, n = w.shape
    s = min(s, mu)
    sigma = min(sigma, n)
    sq = w * w
    per_block = np.array(
        [
            max(sq[k, list(es)].sum() for es in combinations(range(n), sigma))
            for k in range(mu)
        ]
    )
    return max(per_block[list(blocks)].sum() for blocks in combinations(range(mu), s))


def captured_energy_three_level(w, S, s, sigma):
    """Max captured squared energy over all (S, s, sigma)-sparse supports."""
    w = np.asarray(w, dtype=float)
    N = w.shape[0]
    S = min(S, N)
    per_user = np.array([captured_energy_factored(w[u], s, sigma) for u in range(N)])
    return max(per_user[list(users)].sum() for users in combinations(range(N), S))


def min_sq_distance(w, s, sigma):
    """Minimum squared distance from w to the (s, sigma)-sparse set."""
    w = np.asarray(w, dtype=float)
    return float((w * w).sum() - captured_energy_enumerated(w, s, sigma))


def circular_convolve_reference(h, x):
    """Direct evaluation of the defining sum y_i = sum_k h_k x_{(i-k) mod mu}."""
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    mu = len(h)
    y = np.zeros(mu)
    for i in range(mu):
        for k in range(mu):
            y[i] += h[k] * x[(i - k) % mu]
    return y


def densify_operator(op, domain_shape):
    """Materialize a linear operator as a dense (out_size, in_size) matrix by
    applying it to every canonical basis vector of the domain."""
    e = np.zeros(domain_shape)
    cols = []
    for idx in np.ndindex(*domain_shape):
        e[idx] = 1.0
        cols.append(np.asarray(op.apply(e)).ravel().copy())
        e[idx] = 0.0
    return np.stack(cols, axis=1)
