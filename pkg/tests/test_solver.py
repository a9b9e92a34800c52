import numpy as np
import pytest

from hihtp.ensembles import gen_blind_instance, gen_demix_instance, gen_hisparse_unit
from hihtp.hier_sparse import HiSupport, SparsityLevels
from hihtp.operators import BlindConvOp, DemixOp, conv_apply
from hihtp.solver import (
    SolverConfig,
    StopReason,
    hihtp_solve,
    relative_error,
    restricted_least_squares,
)

from oracles import densify_operator


class IdentityOp:
    """Trivial isometric measurement: y = w."""

    def __init__(self, mu, n):
        self.domain_shape = (mu, n)
        self.codomain_shape = (mu, n)

    def apply(self, w):
        return np.asarray(w, dtype=float).copy()

    def adjoint(self, y):
        return np.asarray(y, dtype=float).copy()


class HalfRangeOp:
    """Keeps only the first half of the rows; y outside the range stalls the
    pursuit with a nonzero residual."""

    def __init__(self, mu, n):
        self.domain_shape = (mu, n)
        self.codomain_shape = (mu, n)
        self.keep = mu // 2

    def apply(self, w):
        out = np.asarray(w, dtype=float).copy()
        out[self.keep :] = 0.0
        return out

    adjoint = apply


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(step_size=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iters=0)
    with pytest.raises(ValueError):
        SolverConfig(ls_tol=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(rel_err_target=0.0)
    cfg = SolverConfig()
    assert cfg.step_size == 1.0 and cfg.max_iters == 10


def test_zero_measurement_stops_immediately():
    op = IdentityOp(4, 3)
    report = hihtp_solve(np.zeros((4, 3)), op, SparsityLevels(2, 2))
    assert report.iterations == 1
    assert report.stop_reason is StopReason.RESIDUAL_TARGET
    assert np.array_equal(report.estimate.data, np.zeros((4, 3)))


def test_identity_operator_recovers_in_one_iteration():
    for seed in range(20):
        w = gen_hisparse_unit((6, 5), SparsityLevels(2, 3), seed=seed)
        op = IdentityOp(6, 5)
        report = hihtp_solve(w.data, op, SparsityLevels(2, 3))
        assert report.iterations == 1
        assert report.stop_reason is StopReason.RESIDUAL_TARGET
        assert np.array_equal(report.estimate.data, w.data)


def test_noiseless_blind_deconvolution_recovery():
    op, _, _, w_true, y = gen_blind_instance(50, 120, 2, 5, seed=7)
    report = hihtp_solve(y, op, SparsityLevels(2, 5))
    assert relative_error(report.estimate, w_true) <= 1e-6
    assert report.iterations <= 10


def test_iterates_stay_on_budget():
    op, _, _, _, y = gen_blind_instance(20, 40, 2, 4, seed=11)
    levels = SparsityLevels(2, 4)
    report = hihtp_solve(y, op, levels)
    for sup in report.support_history:
        assert sup.fits(levels)
    assert report.estimate.support.fits(levels)


def test_support_stall_stops_and_freezes_iterate():
    op = HalfRangeOp(8, 4)
    rng = np.random.default_rng(3)
    y = rng.normal(size=(8, 4))  # inconsistent: nothing can match the zeroed half
    stall = hihtp_solve(y, op, SparsityLevels(2, 2))
    assert stall.stop_reason is StopReason.SUPPORT_STALLED
    assert stall.iterations < 10
    assert stall.residual_norms[-1] > 0
    free = hihtp_solve(y, op, SparsityLevels(2, 2), SolverConfig(support_stall_stop=False))
    assert free.stop_reason is StopReason.MAX_ITERS
    assert free.iterations == 10
    # once the support stalls the iterate never changes again
    assert np.array_equal(free.estimate.data, stall.estimate.data)
    k = stall.iterations
    assert all(r == free.residual_norms[k - 1] for r in free.residual_norms[k:])


def test_residual_target_stop():
    op, _, _, _, y = gen_blind_instance(30, 90, 2, 3, seed=13)
    report = hihtp_solve(y, op, SparsityLevels(2, 3), SolverConfig(rel_err_target=1e-8))
    assert report.stop_reason is StopReason.RESIDUAL_TARGET
    assert report.residual_norms[-1] <= 1e-8 * np.linalg.norm(y)


def test_solver_deterministic():
    op, _, _, _, y = gen_blind_instance(25, 60, 2, 4, seed=17)
    a = hihtp_solve(y, op, SparsityLevels(2, 4))
    b = hihtp_solve(y, op, SparsityLevels(2, 4))
    assert np.array_equal(a.estimate.data, b.estimate.data)
    assert a.residual_norms == b.residual_norms
    assert a.support_history == b.support_history
    assert a.stop_reason == b.stop_reason


def test_three_level_demix_recovery():
    op, _, W_true, Y = gen_demix_instance(12, 36, 2, 3, N=4, M=4, S=1, seed=19)
    report = hihtp_solve(Y, op, SparsityLevels(2, 3, S=1))
    assert relative_error(report.estimate, W_true) <= 1e-6


def test_demix_reduction_bit_for_bit():
    # a one-user, one-antenna demix solve is the single-user solve verbatim
    op1, _, _, w_true, y = gen_blind_instance(10, 30, 2, 3, seed=23)
    demix = DemixOp(np.array([[1.0]]), [op1])
    single = hihtp_solve(y, op1, SparsityLevels(2, 3))
    mixed = hihtp_solve(y[None, :], demix, SparsityLevels(2, 3, S=1))
    assert np.array_equal(mixed.estimate.data[0], single.estimate.data)
    assert mixed.residual_norms == single.residual_norms
    assert mixed.iterations == single.iterations


def test_solve_report_to_dict_is_jsonable():
    import json

    op, _, _, _, y = gen_blind_instance(10, 20, 1, 2, seed=29)
    report = hihtp_solve(y, op, SparsityLevels(1, 2))
    payload = json.dumps(report.to_dict())
    decoded = json.loads(payload)
    assert decoded["iterations"] == report.iterations
    assert decoded["stop_reason"] in {r.value for r in StopReason}


def test_measurement_shape_checked():
    op, _, _, _, y = gen_blind_instance(10, 20, 1, 2, seed=31)
    with pytest.raises(ValueError):
        hihtp_solve(y[:-1], op, SparsityLevels(1, 2))
    with pytest.raises(ValueError):
        hihtp_solve(y, op, SparsityLevels(1, 2, S=1))  # levels do not match domain


# --- restricted least squares ----------------------------------------------------


def test_restricted_lstsq_matches_dense_solve():
    rng = np.random.default_rng(37)
    for seed in (1, 2, 3):
        op, _, _, w_true, y = gen_blind_instance(8, 24, 2, 3, seed=seed)
        sup = HiSupport.from_nonzeros(w_true)
        res = restricted_least_squares(y, op, sup, SolverConfig())
        assert res.converged
        # oracle: dense least squares on the materialized restricted columns
        C = densify_operator(op, op.domain_shape)
        mask = sup.mask(op.domain_shape).ravel()
        coeffs, *_ = np.linalg.lstsq(C[:, mask], y, rcond=None)
        x_ref = np.zeros(op.domain_shape).ravel()
        x_ref[mask] = coeffs
        x_ref = x_ref.reshape(op.domain_shape)
        err = np.linalg.norm(res.vector.data - x_ref) / np.linalg.norm(x_ref)
        assert err <= 1e-8
        # and the true signal is recovered since the support is exact
        assert np.allclose(res.vector.data, w_true, rtol=1e-8, atol=1e-10)
    del rng


def test_restricted_lstsq_zero_rhs():
    op, *_ = gen_blind_instance(6, 12, 1, 2, seed=41)
    sup = HiSupport(blocks=((1, (0, 3)),))
    res = restricted_least_squares(np.zeros(12), op, sup)
    assert res.converged
    assert np.array_equal(res.vector.data, np.zeros((12, 6)))


def test_restricted_lstsq_single_column_closed_form():
    op, *_ = gen_blind_instance(6, 12, 1, 2, seed=43)
    sup = HiSupport(blocks=((2, (4,)),))
    rng = np.random.default_rng(47)
    y = rng.normal(size=12)
    e = np.zeros((12, 6))
    e[2, 4] = 1.0
    c = conv_apply(op, e)
    res = restricted_least_squares(y, op, sup)
    expected = float(c @ y) / float(c @ c)
    assert res.vector.data[2, 4] == pytest.approx(expected, rel=1e-12)
    assert np.count_nonzero(res.vector.data) == 1


def test_restricted_lstsq_residual_monotone():
    op, _, _, _, y = gen_blind_instance(16, 32, 3, 4, seed=53)
    sup = HiSupport(blocks=((0, (0, 1, 2, 3)), (5, (2, 5, 8, 11)), (20, (4, 9, 13, 15))))
    res = restricted_least_squares(y, op, sup)
    norms = res.residual_norms
    assert len(norms) >= 2
    assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))


def test_restricted_lstsq_nonconvergence_flagged():
    op, _, _, _, y = gen_blind_instance(16, 20, 3, 4, seed=59)
    sup = HiSupport(blocks=((0, (0, 1, 2, 3)), (5, (2, 5, 8, 11)), (13, (4, 9, 13, 15))))
    res = restricted_least_squares(y, op, sup, SolverConfig(ls_max_iters=1))
    assert not res.converged
    assert res.iterations == 1


def test_restricted_lstsq_empty_support_rejected():
    op, *_ = gen_blind_instance(6, 12, 1, 2, seed=61)
    with pytest.raises(ValueError):
        restricted_least_squares(np.zeros(12), op, HiSupport())


def test_restricted_lstsq_output_on_support_exactly():
    op, _, _, _, y = gen_blind_instance(10, 20, 2, 3, seed=67)
    sup = HiSupport(blocks=((3, (1, 5, 9)), (7, (0, 2, 4))))
    res = restricted_least_squares(y, op, sup)
    mask = sup.mask(op.domain_shape)
    assert np.all(res.vector.data[~mask] == 0.0)


# --- relative error ----------------------------------------------------------------


def test_relative_error_values():
    t = np.ones((2, 3))
    assert relative_error(t, t) == 0.0
    assert relative_error(np.zeros((2, 3)), t) == 1.0
    assert relative_error(1.0001 * t, t) == pytest.approx(1e-4, rel=1e-10)


def test_relative_error_errors():
    with pytest.raises(ValueError):
        relative_error(np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        relative_error(np.ones((2, 2)), np.ones((2, 3)))
