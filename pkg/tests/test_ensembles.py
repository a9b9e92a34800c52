import numpy as np
import pytest

from hihtp.ensembles import (
    EnsembleSpec,
    estimate_hirip,
    gen_blind_instance,
    gen_demix_instance,
    gen_filter,
    gen_hisparse_unit,
    gen_message,
    gen_mixing,
    gen_U,
    make_rng,
)
from hihtp.hier_sparse import SparsityLevels
from hihtp.operators import BlindConvOp


class OrthogonalOp:
    """Exact isometry on flattened block vectors, for estimator sanity checks."""

    def __init__(self, mu, n, seed=0):
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.normal(size=(mu * n, mu * n)))
        self.Q = q
        self.domain_shape = (mu, n)

    def apply(self, w):
        return self.Q @ np.asarray(w, dtype=float).ravel()

    def adjoint(self, y):
        return (self.Q.T @ np.asarray(y, dtype=float)).reshape(self.domain_shape)


def test_make_rng_streams_are_keyed():
    a = make_rng(1, 2).standard_normal(4)
    b = make_rng(1, 2).standard_normal(4)
    c = make_rng(1, 3).standard_normal(4)
    d = make_rng(2, 2).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_gen_u_deterministic_and_scaled():
    U1 = gen_U(256, 256, seed=5)
    U2 = gen_U(256, 256, seed=5)
    U3 = gen_U(256, 256, seed=6)
    assert np.array_equal(U1, U2)
    assert np.any(U1 != U3)
    assert abs(U1.var() - 1 / 256) <= 0.1 / 256
    with pytest.raises(ValueError):
        gen_U(0, 4, seed=1)


def test_gen_message_rademacher():
    for seed in range(50):
        b = gen_message(12, 4, seed=seed)
        nz = b[b != 0]
        assert len(nz) == 4
        assert set(np.abs(nz)) == {1.0}
        assert b @ b == 4.0
    dense = gen_message(6, 6, seed=1)
    assert np.all(np.abs(dense) == 1.0)
    with pytest.raises(ValueError):
        gen_message(4, 5, seed=0)


def test_gen_message_support_uniform():
    n, sigma, draws = 10, 3, 10_000
    counts = np.zeros(n)
    for t in range(draws):
        counts += gen_message(n, sigma, seed=t) != 0
    freq = counts / draws
    assert np.all(np.abs(freq - sigma / n) <= 0.02)


def test_gen_filter_support_and_values():
    for seed in range(50):
        h = gen_filter(9, 3, seed=seed)
        assert np.count_nonzero(h) == 3
    dense = gen_filter(7, 7, seed=3)
    assert np.count_nonzero(dense) == 7
    values = np.concatenate([gen_filter(10, 3, seed=t)[gen_filter(10, 3, seed=t) != 0] for t in range(10_000)])
    assert abs(values.var() - 1.0) <= 0.05
    with pytest.raises(ValueError):
        gen_filter(3, 4, seed=0)


def test_gen_mixing():
    D1, active1 = gen_mixing(64, 8, 3, seed=11)
    D2, active2 = gen_mixing(64, 8, 3, seed=11)
    assert np.array_equal(D1, D2) and active1 == active2
    assert len(active1) == 3
    assert all(0 <= u < 8 for u in active1)
    with pytest.raises(ValueError):
        gen_mixing(4, 3, 5, seed=0)


def test_gen_mixing_column_norm_concentration():
    # chi-square concentration: the 50% band holds for every column once M
    # is large enough (at M = 64 a few excursions per 800 columns are
    # expected, so only the bulk is asserted there)
    norms_256 = np.concatenate(
        [(lambda D: (D * D).sum(axis=0))(gen_mixing(256, 8, 3, seed=1000 + d)[0]) for d in range(100)]
    )
    assert np.all(np.abs(norms_256 - 1.0) <= 0.5)
    norms_64 = np.concatenate(
        [(lambda D: (D * D).sum(axis=0))(gen_mixing(64, 8, 3, seed=2000 + d)[0]) for d in range(100)]
    )
    assert np.mean(np.abs(norms_64 - 1.0) <= 0.5) >= 0.98
    assert abs(norms_64.mean() - 1.0) <= 0.05


def test_gen_mixing_active_set_independent_of_matrix_use():
    # identity-mixing instances reuse the active set but not the matrix
    _, active = gen_mixing(4, 4, 2, seed=77)
    op, factors, W, _ = gen_demix_instance(6, 12, 1, 2, N=4, M=4, S=2, seed=77, identity_mixing=True)
    assert tuple(sorted(factors)) == active
    assert np.array_equal(op.D, np.eye(4))


def test_gen_hisparse_unit():
    levels = SparsityLevels(2, 3)
    u = gen_hisparse_unit((8, 6), levels, seed=13)
    assert abs(np.linalg.norm(u.data) - 1.0) <= 1e-12
    assert u.support.fits(levels)
    assert u.support.total == 6
    three = gen_hisparse_unit((4, 8, 6), SparsityLevels(2, 3, S=2), seed=14)
    assert abs(np.linalg.norm(three.data) - 1.0) <= 1e-12
    assert len(three.support.users) == 2


def test_instance_builders_share_user_zero_stream():
    op_s, h_s, b_s, w_s, y_s = gen_blind_instance(10, 24, 2, 3, seed=99)
    op_d, factors, W, Y = gen_demix_instance(10, 24, 2, 3, N=1, M=1, S=1, seed=99, identity_mixing=True)
    assert np.array_equal(op_d.users[0].U, op_s.U)
    h_d, b_d = factors[0]
    assert np.array_equal(h_d, h_s) and np.array_equal(b_d, b_s)
    assert np.array_equal(W[0], w_s)
    assert np.array_equal(Y[0], y_s)


def test_estimate_hirip_zero_on_isometry():
    op = OrthogonalOp(4, 3, seed=2)
    est = estimate_hirip(op, SparsityLevels(2, 2), trials=50, seed=3)
    assert 0.0 <= est.delta_lower <= 1e-12


def test_estimate_hirip_monotone_in_trials():
    op = BlindConvOp(gen_U(24, 12, seed=21))
    levels = SparsityLevels(2, 2)
    estimates = [estimate_hirip(op, levels, trials=t, seed=5).delta_lower for t in (1, 10, 50, 200)]
    assert all(a <= b for a, b in zip(estimates, estimates[1:]))
    assert estimates[0] >= 0.0


def test_estimate_hirip_witness_reproduces_maximum():
    op = BlindConvOp(gen_U(24, 12, seed=22))
    est = estimate_hirip(op, SparsityLevels(2, 2), trials=100, seed=6)
    y = op.apply(est.max_witness)
    assert abs(abs(y @ y - 1.0) - est.delta_lower) <= 1e-12
    with pytest.raises(ValueError):
        estimate_hirip(op, SparsityLevels(2, 2), trials=0, seed=1)


def test_ensemble_spec_validation():
    spec = EnsembleSpec(mu=16, n=8, s=2, sigma=3, seed=42)
    assert spec.levels == SparsityLevels(2, 3)
    with pytest.raises(ValueError):
        EnsembleSpec(mu=4, n=8, s=5, sigma=3)
    with pytest.raises(ValueError):
        EnsembleSpec(mu=16, n=8, s=2, sigma=3, m=10)  # identity needs m = n
    with pytest.raises(ValueError):
        EnsembleSpec(mu=16, n=8, s=2, sigma=3, codebook="bogus")
    three = EnsembleSpec(mu=16, n=8, s=2, sigma=3, N=4, M=2, S=2)
    assert three.levels.S == 2
