import numpy as np
import pytest
from scipy.special import ndtr
from sklearn.base import clone

from commonnoise.coefficients import CoefficientSpec, GammaSpec, InitialLaw, RankFunction
from commonnoise.exceptions import DomainError, NonConvergenceError, TruncationOverflowError
from commonnoise.io import read_csv
from commonnoise.limit import (CommonNoiseLimit, FixedPointConfig, LimitPath, closed_form_limit, fixed_point_solve,
                               phi_map, refinement_study, shifted_rows, spde_weak_defects, spde_weak_residual,
                               sup_w1)
from commonnoise.noise import brownian_path, common_increments
from commonnoise.pme import PmeGrid, PmeSolution, solve_pme
from commonnoise.testfns import bump_family

T, DT = 0.5, 0.005


def coef(gamma):
    return CoefficientSpec(RankFunction.constant(1.0), RankFunction.constant(1.0), gamma)


@pytest.fixture(scope="module")
def pde():
    law = InitialLaw.gaussian()
    return solve_pme(law.grid_cdf(-10, 11, 1051), coef(GammaSpec.zero()), PmeGrid(-10, 11, 1051, T, snapshot_dt=DT))


def test_zero_gamma_is_fixed_immediately(pde):
    dW = common_increments(0, 100, DT)
    path = fixed_point_solve(pde, GammaSpec.zero(), dW)
    assert path.log == (0.0,)
    assert np.array_equal(path.values, pde.values)


def test_constant_gamma_shift_is_scaled_brownian_path(pde):
    dW = common_increments(1, 100, DT)
    path = fixed_point_solve(pde, GammaSpec.constant(0.5), dW)
    assert path.iterations == 2 and path.log[-1] == 0.0
    assert np.allclose(path.gamma_integral, 0.5 * brownian_path(dW), atol=1e-14)
    exact = closed_form_limit(coef(GammaSpec.constant(0.5)), InitialLaw.gaussian())
    W = brownian_path(dW)
    err = max(np.max(np.abs(path.values[j] - exact(t, path.x, W[j]))) for j, t in enumerate(path.times))
    assert err < 5e-3


def test_phi_map_is_contraction_for_small_lipschitz(pde):
    gamma = GammaSpec.mean_functional("tanh", 0.5)
    dW = common_increments(2, 100, DT)
    a = phi_map(LimitPath(pde.times, pde.x_min, pde.x_max, pde.values), pde, gamma, dW)
    b = phi_map(a, pde, gamma, dW)
    c = phi_map(b, pde, gamma, dW)
    assert sup_w1(c, b) < sup_w1(b, a)


def test_mean_functional_fixed_point(pde):
    gamma = GammaSpec.mean_functional("tanh", 0.5)
    dW = common_increments(3, 100, DT)
    path = fixed_point_solve(pde, gamma, dW)
    assert path.log[-1] < 1e-8 and path.decay_ratio() < 1
    # self-consistency: the path reproduces its own shift
    again = phi_map(path, pde, gamma, dW)
    assert sup_w1(again, path) < 1e-8
    est = CommonNoiseLimit(gamma=gamma).fit(pde, dW)
    assert est.n_iter_ == path.iterations
    x = [[0.25, 0.0], [0.5, 1.0]]
    assert np.allclose(est.predict(x), [path.evaluate(0.25, 0.0), path.evaluate(0.5, 1.0)])
    assert clone(est).get_params()["tol"] == 1e-8


def test_nonconvergence_carries_log(pde):
    dW = common_increments(4, 100, DT)
    with pytest.raises(NonConvergenceError) as err:
        fixed_point_solve(pde, GammaSpec.mean_functional("tanh", 0.5), dW, FixedPointConfig(tol=1e-14, max_iter=2))
    assert len(err.value.log) == 2


def test_overflow_when_shift_leaves_domain(pde):
    with pytest.raises(TruncationOverflowError):
        shifted_rows(pde.values[:2], pde.x_min, pde.x_max, np.array([0.0, 8.0]))


def test_noise_length_checked(pde):
    with pytest.raises(DomainError):
        phi_map(LimitPath(pde.times, pde.x_min, pde.x_max, pde.values), pde, GammaSpec.constant(1), np.zeros(5))


def test_export(pde, tmp_path):
    dW = common_increments(5, 100, DT)
    path = fixed_point_solve(pde, GammaSpec.constant(0.2), dW)
    path.export(tmp_path, [0.0, 0.5])
    assert np.array_equal(read_csv(tmp_path / "limit_gamma.csv")["gamma_integral"], path.gamma_integral)
    assert read_csv(tmp_path / "iteration_log.csv")["iter"].tolist() == [1.0, 2.0]
    assert (tmp_path / "limit_slice_001.csv").exists()


def test_weak_defect_of_closed_form_is_small():
    c = coef(GammaSpec.constant(0.5))
    law = InitialLaw.gaussian()
    dW = common_increments(6, 400, 0.0025)
    W = brownian_path(dW)
    times = np.linspace(0, 1, 401)
    cdf = closed_form_limit(c, law)
    path = LimitPath.from_function(lambda t, x: cdf(t, x, W[int(round(t / 0.0025))]), times, -8, 10, 1201, 0.5 * W)
    fns = bump_family(5, -3, 4)
    mil = spde_weak_residual(path, c, c.gamma, dW, fns, scheme="milstein")
    ito = spde_weak_residual(path, c, c.gamma, dW, fns, scheme="ito")
    assert mil < 5e-4 and mil < ito
    assert spde_weak_defects(path, c, c.gamma, dW, fns).shape == (5,)
    with pytest.raises(DomainError):
        spde_weak_residual(path, c, c.gamma, dW, fns, scheme="stratonovich")


def test_closed_form_needs_constant_coefficients():
    spec = CoefficientSpec(RankFunction.affine(1, 1), RankFunction.constant(1), GammaSpec.zero())
    with pytest.raises(DomainError):
        closed_form_limit(spec, InitialLaw.gaussian())


def test_refinement_study_numeric_source():
    c = coef(GammaSpec.constant(0.5))
    rows = refinement_study(c, InitialLaw.gaussian(), common_increments(0, 50, 0.01), 0.5, -8, 10, 301,
                            levels=2, source="numeric")
    assert [r["m"] for r in rows] == [301, 601]
    assert rows[1]["dt"] == pytest.approx(0.005)
    assert rows[1]["residual"] < rows[0]["residual"]


def test_from_function_path():
    p = PmeSolution.from_function(lambda t, x: ndtr(x - t), np.linspace(0, 1, 3), -8, 9, 101)
    assert p.values.shape == (3, 101) and p.C_star == pytest.approx(1 / np.sqrt(2 * np.pi), rel=2e-2)
