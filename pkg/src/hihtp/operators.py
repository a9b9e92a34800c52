"""Circular convolution and the lifted measurement operators.

The bilinear map (h, b) -> h * (Q b) lifts to a linear operator on block
vectors w of shape (mu, n): apply(w) = sum_k shift_k(Q w_k), where w_k is
the k-th block and shift_k rolls a length-mu vector by k positions.  When
w = h (x) b this reproduces the circular convolution of h with the encoded
message Q b.  The multi-user operator mixes N such convolutions through an
M x N matrix D, mapping (N, mu, n) block vectors to (M, mu) measurements.

Applies and adjoints exploit zero blocks, so hierarchically sparse inputs
cost only a few matrix-vector products.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .hier_sparse import HiSparseVector, HiSupport, cached_mask

__all__ = [
    "IdentityCodebook",
    "MatrixCodebook",
    "BlindConvOp",
    "DemixOp",
    "circular_convolve",
    "circular_convolve_direct",
    "circular_convolve_fft",
    "conv_apply",
    "conv_adjoint",
    "conv_apply_factored",
    "demix_apply",
    "demix_adjoint",
    "rank_one_factor",
    "RankOneFactors",
    "save_operator",
    "load_operator",
]

_FFT_CUTOFF = 32  # direct summation wins below this length


# --- circular convolution ----------------------------------------------------


def circular_convolve_direct(h, x) -> np.ndarray:
    """Defining sum y_i = sum_k h_k x_{(i-k) mod mu}, evaluated in O(mu^2)."""
    h = np.asarray(h, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if h.ndim != 1 or x.ndim != 1 or h.shape != x.shape:
        raise ValueError(f"expected equal-length vectors, got {h.shape} and {x.shape}")
    mu = h.shape[0]
    i = np.arange(mu)
    # row k holds x shifted by k, so y = h @ rows
    return h @ x[(i[None, :] - i[:, None]) % mu]


def circular_convolve_fft(h, x) -> np.ndarray:
    """Fast-transform path: multiply spectra, O(mu log mu)."""
    h = np.asarray(h, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if h.ndim != 1 or x.ndim != 1 or h.shape != x.shape:
        raise ValueError(f"expected equal-length vectors, got {h.shape} and {x.shape}")
    mu = h.shape[0]
    return np.fft.irfft(np.fft.rfft(h) * np.fft.rfft(x), n=mu)


def circular_convolve(h, x, method: str = "auto") -> np.ndarray:
    """Circular convolution of two equal-length real vectors.

    ``method`` selects the backend: "direct" is the O(mu^2) reference,
    "fft" the fast-transform path, "auto" picks by length.
    """
    if method == "auto":
        method = "fft" if len(np.asarray(h)) >= _FFT_CUTOFF else "direct"
    if method == "direct":
        return circular_convolve_direct(h, x)
    if method == "fft":
        return circular_convolve_fft(h, x)
    raise ValueError(f"unknown method {method!r}")


# --- codebooks ---------------------------------------------------------------


class IdentityCodebook:
    """Trivial codebook A = I; messages are transmitted unencoded (m = n)."""

    name = "identity"

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("codebook dimension must be positive")
        self.n = n
        self.m = n

    def apply(self, b):
        return np.asarray(b, dtype=np.float64)

    def adjoint(self, v):
        return np.asarray(v, dtype=np.float64)

    def apply_rows(self, B):
        return np.asarray(B, dtype=np.float64)

    def adjoint_rows(self, V):
        return np.asarray(V, dtype=np.float64)


class MatrixCodebook:
    """Codebook backed by an explicit m x n matrix."""

    name = "matrix"

    def __init__(self, A):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2:
            raise ValueError("codebook matrix must be 2-d")
        self.A = A
        self.m, self.n = A.shape

    def apply(self, b):
        return self.A @ np.asarray(b, dtype=np.float64)

    def adjoint(self, v):
        return self.A.T @ np.asarray(v, dtype=np.float64)

    def apply_rows(self, B):
        return np.asarray(B, dtype=np.float64) @ self.A.T

    def adjoint_rows(self, V):
        return np.asarray(V, dtype=np.float64) @ self.A


# --- lifted blind-deconvolution operator -------------------------------------


class BlindConvOp:
    """Lifted operator w -> sum_k shift_k(U A w_k) on (mu, n) block vectors.

    U is the mu x m spreading matrix; the codebook A maps length-n messages
    to length-m codewords (identity by default, then m = n).
    """

    def __init__(self, U, codebook=None):
        U = np.asarray(U, dtype=np.float64)
        if U.ndim != 2:
            raise ValueError("U must be a 2-d matrix")
        self.U = U
        self.mu, self.m = U.shape
        self.codebook = codebook if codebook is not None else IdentityCodebook(self.m)
        if self.codebook.m != self.m:
            raise ValueError(
                f"codebook output length {self.codebook.m} does not match U columns {self.m}"
            )
        self.n = self.codebook.n

    @property
    def domain_shape(self) -> tuple[int, int]:
        return (self.mu, self.n)

    @property
    def codomain_shape(self) -> tuple[int]:
        return (self.mu,)

    def encode(self, b) -> np.ndarray:
        """Spread sequence U A b of a length-n message."""
        return self.U @ self.codebook.apply(b)

    def apply(self, w) -> np.ndarray:
        return conv_apply(self, w)

    def adjoint(self, y, support: HiSupport | None = None) -> np.ndarray:
        return conv_adjoint(self, y, support=support)

    def apply_factored(self, h, b) -> np.ndarray:
        return conv_apply_factored(self, h, b)


def _active_blocks(w: np.ndarray, support: HiSupport | None) -> np.ndarray:
    if support is not None:
        return np.asarray(support.block_indices(), dtype=np.intp)
    return np.flatnonzero(np.any(w != 0, axis=1))


def conv_apply(op: BlindConvOp, w) -> np.ndarray:
    """Apply the lifted operator to a (mu, n) block vector.

    Zero blocks contribute nothing, so only the active blocks are encoded
    and shift-accumulated.
    """
    support = w.support if isinstance(w, HiSparseVector) else None
    w = np.asarray(w, dtype=np.float64)
    if w.shape != op.domain_shape:
        raise ValueError(f"expected block vector of shape {op.domain_shape}, got {w.shape}")
    return _conv_apply(op, w, support)


def _conv_apply(op: BlindConvOp, w: np.ndarray, support: HiSupport | None) -> np.ndarray:
    mu = op.mu
    rows = _active_blocks(w, support)
    y = np.zeros(mu)
    if rows.size == 0:
        return y
    if rows.size * 8 <= mu:
        Q = op.codebook.apply_rows(w[rows]) @ op.U.T  # (active, mu)
        for k, q in zip(rows, Q):
            y[k:] += q[: mu - k]
            y[:k] += q[mu - k :]
        return y
    P = op.codebook.apply_rows(w) @ op.U.T
    i = np.arange(mu)
    return P[i[:, None], (i[None, :] - i[:, None]) % mu].sum(axis=0)


def conv_apply_factored(op: BlindConvOp, h, b) -> np.ndarray:
    """Measurement of a factored pair: h * (U A b)."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (op.mu,):
        raise ValueError(f"filter must have length {op.mu}, got shape {h.shape}")
    return circular_convolve(h, op.encode(b))


def conv_adjoint(op: BlindConvOp, y, support: HiSupport | None = None) -> np.ndarray:
    """Adjoint of the lifted operator: block k is (UA)^T shift_{-k}(y).

    With ``support`` given, only the supported blocks are formed and the
    result is masked to the supported entries; this equals the restriction
    of the full adjoint entry for entry.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (op.mu,):
        raise ValueError(f"expected measurement of length {op.mu}, got shape {y.shape}")
    mu = op.mu
    out = np.zeros((mu, op.n))
    if support is not None:
        rows = np.asarray(support.block_indices(), dtype=np.intp)
        if rows.size == 0:
            return out
        shifted = y[(np.arange(mu)[None, :] + rows[:, None]) % mu]
        blocks = op.codebook.adjoint_rows(shifted @ op.U)
        out[rows] = blocks * cached_mask(support, (mu, op.n))[rows]
        return out
    i = np.arange(mu)
    shifted = y[(i[None, :] + i[:, None]) % mu]
    return op.codebook.adjoint_rows(shifted @ op.U)


# --- multi-user demixing operator --------------------------------------------


class DemixOp:
    """Mixing of N per-user lifted convolutions through an M x N matrix D.

    Maps (N, mu, n) block vectors to (M, mu) measurement matrices; row j is
    sum_i D[j, i] * users[i].apply(W_i).
    """

    def __init__(self, D, users):
        D = np.asarray(D, dtype=np.float64)
        if D.ndim != 2:
            raise ValueError("D must be a 2-d matrix")
        self.D = D
        self.M, self.N = D.shape
        users = list(users)
        if len(users) != self.N:
            raise ValueError(f"expected {self.N} user operators, got {len(users)}")
        shapes = {u.domain_shape for u in users}
        if len(shapes) != 1:
            raise ValueError(f"user operators must share one block shape, got {shapes}")
        self.users = users
        self.mu, self.n = users[0].domain_shape

    @property
    def domain_shape(self) -> tuple[int, int, int]:
        return (self.N, self.mu, self.n)

    @property
    def codomain_shape(self) -> tuple[int, int]:
        return (self.M, self.mu)

    def apply(self, W) -> np.ndarray:
        return demix_apply(self, W)

    def adjoint(self, Y, support: HiSupport | None = None) -> np.ndarray:
        return demix_adjoint(self, Y, support=support)


def demix_apply(op: DemixOp, W) -> np.ndarray:
    """Apply the demixing operator to a (N, mu, n) block vector."""
    support = W.support if isinstance(W, HiSparseVector) else None
    W = np.asarray(W, dtype=np.float64)
    if W.shape != op.domain_shape:
        raise ValueError(f"expected block vector of shape {op.domain_shape}, got {W.shape}")
    C = np.zeros((op.N, op.mu))
    if support is not None:
        for u, sub in support.users:
            C[u] = _conv_apply(op.users[u], W[u], sub)
    else:
        for u in np.flatnonzero(np.any(W != 0, axis=(1, 2))):
            C[u] = _conv_apply(op.users[u], W[u], None)
    return op.D @ C


def demix_adjoint(op: DemixOp, Y, support: HiSupport | None = None) -> np.ndarray:
    """Adjoint of the demixing operator: user block i is the per-user adjoint
    of sum_j D[j, i] Y_j."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape != op.codomain_shape:
        raise ValueError(f"expected measurements of shape {op.codomain_shape}, got {Y.shape}")
    V = op.D.T @ Y  # (N, mu)
    out = np.zeros(op.domain_shape)
    if support is not None:
        for u, sub in support.users:
            out[u] = conv_adjoint(op.users[u], V[u], support=sub)
        return out
    for u in range(op.N):
        out[u] = conv_adjoint(op.users[u], V[u])
    return out


# --- rank-one factor extraction ----------------------------------------------


class RankOneFactors(NamedTuple):
    h: np.ndarray
    b: np.ndarray
    ambiguous: bool


_POWER_TOL = 1e-10
_POWER_MAX_ITERS = 1000
_TIE_REL_GAP = 1e-8


def _power_top_pair(W: np.ndarray, v0: np.ndarray, tol: float, max_iters: int):
    """Leading singular triple of W by power iteration on W^T W."""
    v = v0 / np.linalg.norm(v0)
    converged = False
    for _ in range(max_iters):
        u = W @ v
        v_new = W.T @ u
        nrm = np.linalg.norm(v_new)
        if nrm == 0:
            break
        v_new /= nrm
        if np.linalg.norm(v_new - v) <= tol:
            v = v_new
            converged = True
            break
        v = v_new
    u = W @ v
    sigma = np.linalg.norm(u)
    u = u / sigma if sigma > 0 else u
    return sigma, u, v, converged


def rank_one_factor(w) -> RankOneFactors:
    """Best rank-one factorization of a lifted (mu, n) block vector.

    Returns (h, b) with ||b|| = 1, the sign fixed so the largest-magnitude
    entry of b is positive, and h (x) b the closest rank-one matrix to the
    matricization of w.  ``ambiguous`` flags a (near-)tied leading singular
    pair, where the factorization is not unique.
    """
    if isinstance(w, HiSparseVector):
        w = w.data
    W = np.asarray(w, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError(f"expected a (mu, n) block vector, got ndim={W.ndim}")
    if not np.any(W):
        raise ValueError("cannot factor the zero vector")

    rng = np.random.Generator(np.random.Philox(0x1F0C5EED))
    sigma, u, v, converged = _power_top_pair(
        W, rng.standard_normal(W.shape[1]), _POWER_TOL, _POWER_MAX_ITERS
    )
    # second singular value from one deflation step, to detect ties
    deflated = W - sigma * np.outer(u, v)
    sigma2 = 0.0
    if np.any(deflated):
        sigma2, _, _, _ = _power_top_pair(
            deflated, rng.standard_normal(W.shape[1]), 1e-6, 100
        )
    ambiguous = (not converged) or sigma2 >= sigma * (1.0 - _TIE_REL_GAP)

    b = v
    h = sigma * u
    j = int(np.argmax(np.abs(b)))
    if b[j] < 0:
        b = -b
        h = -h
    return RankOneFactors(h=h, b=b, ambiguous=bool(ambiguous))


# --- serialization ------------------------------------------------------------


def save_operator(op, path) -> None:
    """Write an operator to a self-describing .npz container."""
    if isinstance(op, BlindConvOp):
        payload = {"kind": "blind", "U": op.U, "codebook": op.codebook.name}
        if isinstance(op.codebook, MatrixCodebook):
            payload["A"] = op.codebook.A
        np.savez(path, **payload)
        return
    if isinstance(op, DemixOp):
        payload = {"kind": "demix", "D": op.D}
        for i, user in enumerate(op.users):
            payload[f"U{i}"] = user.U
            payload[f"codebook{i}"] = user.codebook.name
            if isinstance(user.codebook, MatrixCodebook):
                payload[f"A{i}"] = user.codebook.A
        np.savez(path, **payload)
        return
    raise TypeError(f"cannot serialize operator of type {type(op).__name__}")


def _load_codebook(data, key_name: str, key_matrix: str):
    name = str(data[key_name])
    if name == "identity":
        return None
    if name == "matrix":
        return MatrixCodebook(data[key_matrix])
    raise ValueError(f"unknown codebook identifier {name!r}")


def load_operator(path):
    """Read an operator written by :func:`save_operator`."""
    with np.load(path) as data:
        kind = str(data["kind"])
        if kind == "blind":
            return BlindConvOp(data["U"], _load_codebook(data, "codebook", "A"))
        if kind == "demix":
            users = []
            i = 0
            while f"U{i}" in data:
                users.append(
                    BlindConvOp(data[f"U{i}"], _load_codebook(data, f"codebook{i}", f"A{i}"))
                )
                i += 1
            return DemixOp(data["D"], users)
    raise ValueError(f"unknown operator kind {kind!r}")
