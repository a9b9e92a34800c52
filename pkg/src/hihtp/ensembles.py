"""Seeded random ensembles and a Monte-Carlo probe of restricted isometry.

All generators are pure functions of (dimensions, seed).  Randomness comes
from counter-based Philox streams keyed by the seed plus a per-purpose tag
(and, where relevant, a user or trial index), so draws for different
purposes never share a stream and trials can run in any order or in
parallel without changing the results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hier_sparse import HiSparseVector, HiSupport, SparsityLevels
from .operators import BlindConvOp, DemixOp, conv_apply, demix_apply

__all__ = [
    "EnsembleSpec",
    "RipEstimate",
    "make_rng",
    "gen_U",
    "gen_message",
    "gen_filter",
    "gen_mixing",
    "gen_hisparse_unit",
    "gen_blind_instance",
    "gen_demix_instance",
    "estimate_hirip",
]

# stream tags; never reuse a value
_TAG_U = 1
_TAG_FILTER = 2
_TAG_MESSAGE = 3
_TAG_MIXING = 4
_TAG_ACTIVE = 5
_TAG_RIP = 6
_TAG_SPARSE = 7

_MASK64 = (1 << 64) - 1


def _entropy(seed) -> tuple[int, ...]:
    if isinstance(seed, (tuple, list)):
        out = []
        for part in seed:
            out.extend(_entropy(part))
        return tuple(out)
    return (int(seed) & _MASK64,)


def make_rng(seed, *key: int) -> np.random.Generator:
    """Philox generator keyed by (seed, *key); distinct keys are independent
    streams and the same key always reproduces the same stream."""
    entropy = _entropy(seed) + tuple(int(k) & _MASK64 for k in key)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class EnsembleSpec:
    """Dimensions, sparsity levels and seed of one random problem family."""

    mu: int
    n: int
    s: int
    sigma: int
    seed: int = 0
    m: int | None = None
    N: int = 1
    M: int = 1
    S: int | None = None
    codebook: str = "identity"

    def __post_init__(self):
        m = self.m if self.m is not None else self.n
        object.__setattr__(self, "m", m)
        for name, val in (("mu", self.mu), ("n", self.n), ("m", m), ("N", self.N), ("M", self.M)):
            if val < 1:
                raise ValueError(f"{name} must be positive, got {val}")
        if self.codebook not in ("identity", "custom"):
            raise ValueError(f"codebook must be 'identity' or 'custom', got {self.codebook!r}")
        if self.codebook == "identity" and m != self.n:
            raise ValueError("the identity codebook requires m = n")
        SparsityLevels(self.s, self.sigma, self.S).check_shape(
            (self.N, self.mu, self.n) if self.S is not None else (self.mu, self.n)
        )

    @property
    def levels(self) -> SparsityLevels:
        return SparsityLevels(self.s, self.sigma, self.S)

    def to_mapping(self) -> dict:
        out = {
            "mu": self.mu,
            "n": self.n,
            "s": self.s,
            "sigma": self.sigma,
            "seed": self.seed,
            "m": self.m,
            "N": self.N,
            "M": self.M,
            "codebook": self.codebook,
        }
        if self.S is not None:
            out["S"] = self.S
        return out

    @classmethod
    def from_mapping(cls, mapping: dict) -> "EnsembleSpec":
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in mapping.items() if k in known}
        return cls(**kwargs)


@dataclass
class RipEstimate:
    """Empirical lower bound on a hierarchical restricted-isometry constant."""

    delta_lower: float
    trials: int
    max_witness: np.ndarray


def gen_U(mu: int, m: int, seed) -> np.ndarray:
    """mu x m matrix with i.i.d. Gaussian entries of variance 1/mu."""
    if mu < 1 or m < 1:
        raise ValueError("dimensions must be positive")
    rng = make_rng(seed, _TAG_U)
    return rng.standard_normal((mu, m)) / np.sqrt(mu)


def gen_message(n: int, sigma: int, seed) -> np.ndarray:
    """Length-n vector with a uniformly random sigma-sparse support filled
    with +/-1 coin flips."""
    if sigma > n:
        raise ValueError(f"sigma={sigma} exceeds n={n}")
    rng = make_rng(seed, _TAG_MESSAGE)
    support = rng.choice(n, size=sigma, replace=False)
    b = np.zeros(n)
    b[support] = 2.0 * rng.integers(0, 2, size=sigma) - 1.0
    return b


def gen_filter(mu: int, s: int, seed) -> np.ndarray:
    """Length-mu vector with a uniformly random s-sparse support filled with
    standard Gaussian values."""
    if s > mu:
        raise ValueError(f"s={s} exceeds mu={mu}")
    rng = make_rng(seed, _TAG_FILTER)
    support = rng.choice(mu, size=s, replace=False)
    h = np.zeros(mu)
    h[support] = rng.standard_normal(s)
    return h


def gen_mixing(M: int, N: int, S: int, seed):
    """Mixing matrix with i.i.d. N(0, 1/M) entries plus a uniformly random
    set of S active users.

    The 1/M normalization is the standard restricted-isometry ensemble.  The
    active set comes from its own stream, so it is the same whether or not
    the matrix draw is used.
    """
    if S > N:
        raise ValueError(f"S={S} exceeds N={N}")
    D = make_rng(seed, _TAG_MIXING).standard_normal((M, N)) / np.sqrt(M)
    active = make_rng(seed, _TAG_ACTIVE).choice(N, size=S, replace=False)
    return D, tuple(int(u) for u in np.sort(active))


def _draw_two_level_unit(mu, n, levels, rng):
    blocks = np.sort(rng.choice(mu, size=levels.s, replace=False))
    w = np.zeros((mu, n))
    support = []
    for k in blocks:
        entries = np.sort(rng.choice(n, size=levels.sigma, replace=False))
        w[k, entries] = rng.standard_normal(levels.sigma)
        support.append((int(k), tuple(int(i) for i in entries)))
    return w, HiSupport(blocks=tuple(support))


def gen_hisparse_unit(shape: tuple[int, ...], levels: SparsityLevels, seed) -> HiSparseVector:
    """Random unit-norm hierarchically sparse vector: uniform support,
    Gaussian values, normalized."""
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, _TAG_SPARSE)
    levels.check_shape(shape)
    if levels.S is None:
        w, support = _draw_two_level_unit(shape[0], shape[1], levels, rng)
    else:
        N, mu, n = shape
        users = np.sort(rng.choice(N, size=levels.S, replace=False))
        w = np.zeros(shape)
        subs = []
        inner = SparsityLevels(levels.s, levels.sigma)
        for u in users:
            w[u], sub = _draw_two_level_unit(mu, n, inner, rng)
            subs.append((int(u), sub))
        support = HiSupport(users=tuple(subs))
    w /= np.linalg.norm(w)
    return HiSparseVector(w, support)


def gen_blind_instance(n: int, mu: int, s: int, sigma: int, seed, m: int | None = None,
                       codebook=None, user: int = 0):
    """One noiseless deconvolution problem: operator, ground-truth factors,
    lifted truth and its measurement.

    Per-user streams are keyed by ``user`` so multi-user instances can share
    a trial seed; the single-user case is user 0 of that scheme.
    """
    if m is None:
        m = n if codebook is None else codebook.m
    U = gen_U(mu, m, (seed, user))
    op = BlindConvOp(U, codebook)
    h = gen_filter(mu, s, (seed, user))
    b = gen_message(n, sigma, (seed, user))
    w = np.outer(h, b)
    y = conv_apply(op, w)
    return op, h, b, w, y


def gen_demix_instance(n: int, mu: int, s: int, sigma: int, N: int, M: int, S: int, seed,
                       identity_mixing: bool = False):
    """One noiseless demixing problem: operator, per-user truths, lifted
    three-level truth and its measurement.

    With ``identity_mixing`` the mixing matrix is the identity (requires
    M = N) instead of a Gaussian draw; active users are drawn the same way
    either way.
    """
    D, active = gen_mixing(M, N, S, seed)
    if identity_mixing:
        if M != N:
            raise ValueError("identity mixing requires M = N")
        D = np.eye(N)
    users = [BlindConvOp(gen_U(mu, n, (seed, u))) for u in range(N)]
    op = DemixOp(D, users)
    W = np.zeros((N, mu, n))
    factors = {}
    for u in active:
        h = gen_filter(mu, s, (seed, u))
        b = gen_message(n, sigma, (seed, u))
        W[u] = np.outer(h, b)
        factors[u] = (h, b)
    Y = demix_apply(op, W)
    return op, factors, W, Y


def estimate_hirip(op, levels: SparsityLevels, trials: int, seed) -> RipEstimate:
    """Monte-Carlo lower bound on the restricted-isometry constant.

    Samples random unit-norm hierarchically sparse vectors u and returns the
    largest observed | ||A(u)||^2 - 1 |.  A sampled maximum never exceeds the
    true supremum, so this is a lower bound, and it is non-decreasing in the
    trial count for a fixed seed.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    shape = op.domain_shape
    best = -1.0
    witness = None
    for t in range(trials):
        u = gen_hisparse_unit(shape, levels, make_rng(seed, _TAG_RIP, t))
        y = np.asarray(op.apply(u), dtype=np.float64)
        dev = abs(float(np.vdot(y, y)) - 1.0)
        if dev > best:
            best = dev
            witness = u.data
    return RipEstimate(delta_lower=best, trials=trials, max_witness=witness)
