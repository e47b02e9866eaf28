import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from commonnoise.coefficients import (CoefficientSpec, GammaSpec, InitialLaw, RankFunction, antiderivative_B,
                                      antiderivative_Sigma, gamma_eval, lipschitz_probe)
from commonnoise.exceptions import ContractViolation, DomainError, LipschitzViolation, SpecError
from commonnoise.measures import EmpiricalMeasure, GridCdf

unit = st.floats(0, 1, allow_nan=False)


def test_rank_function_kinds():
    r = np.array([0.0, 0.25, 1.0])
    assert np.array_equal(RankFunction.constant(2)(r), [2, 2, 2])
    assert np.allclose(RankFunction.affine(1, 2)(r), [1, 1.5, 3])
    assert np.allclose(RankFunction.table([1, 3, 2])(r), [1, 2, 2])
    assert RankFunction.registry("sine").min_on_mesh() > 0
    with pytest.raises(SpecError):
        RankFunction.registry("nope")
    with pytest.raises(SpecError):
        RankFunction("quadratic")


@given(unit)
def test_closed_form_antiderivatives(r):
    spec = RankFunction.affine(0.5, 2.0)
    assert antiderivative_B(spec, r) == pytest.approx(0.5 * r + r * r, abs=1e-12)
    assert antiderivative_Sigma(spec, r) == pytest.approx(quad(lambda s: 0.5 * (0.5 + 2 * s) ** 2, 0, r)[0], abs=1e-12)


@given(unit)
def test_quadrature_antiderivatives(r):
    spec = RankFunction.registry("sine")
    oracle = quad(lambda s: float(spec(s)), 0, r, epsabs=1e-13)[0]
    assert antiderivative_B(spec, r) == pytest.approx(oracle, abs=1e-9)


def test_tabulated_antiderivative_matches_pointwise():
    spec = CoefficientSpec(RankFunction.table([1.0, 3.0, 0.5, 2.0]), RankFunction.registry("exp"), GammaSpec.zero())
    r = np.linspace(0, 1, 257)
    assert np.max(np.abs(spec.B(r) - [antiderivative_B(spec.b, x) for x in r])) < 1e-9
    assert np.max(np.abs(spec.Sigma(r) - [antiderivative_Sigma(spec.sigma, x) for x in r])) < 1e-9


def test_antiderivative_domain():
    with pytest.raises(DomainError):
        antiderivative_B(RankFunction.constant(1), 1.5)


def test_validate_reports_positivity_and_degeneracy():
    bad = CoefficientSpec(RankFunction.table([1.0, -0.5, 2.0]), RankFunction.constant(0.0), GammaSpec.zero())
    errors = bad.validate()
    assert any("positivity" in e and "-0.5" in e for e in errors)
    assert any("sigma" in e for e in errors)
    degenerate = CoefficientSpec(RankFunction.constant(1), RankFunction.constant(0.0), GammaSpec.zero())
    assert degenerate.validate(allow_degenerate=True) == []


def test_gamma_constant_and_zero():
    assert gamma_eval(GammaSpec.zero(), 0.3, None) == 0.0
    assert gamma_eval(GammaSpec.constant(-0.4), 0.3, None) == -0.4
    assert GammaSpec.constant(-0.4).bound == 0.4


def test_gamma_time_function():
    g = GammaSpec.time_function("sin", amplitude=0.5, frequency=2.0)
    assert g(0.125, None) == pytest.approx(0.5)
    assert g.bound == 0.5 and not g.depends_on_measure
    with pytest.raises(SpecError):
        GammaSpec.time_function("sin", scale=1.0)


def test_mean_functional_on_samples_is_sample_mean():
    g = GammaSpec.mean_functional("tanh", scale=0.5, offset=0.1)
    pts = np.array([-1.0, 0.2, 3.0])
    assert g(0.0, EmpiricalMeasure(pts)) == pytest.approx(0.5 * np.mean(np.tanh(pts)) + 0.1, abs=1e-15)
    assert g.lipschitz == 0.5 and g.bound == pytest.approx(0.6)


def test_mean_functional_on_grid_matches_expectation():
    g = GammaSpec.mean_functional("tanh", scale=0.5)
    G = GridCdf.from_function(lambda x: norm.cdf(x, 0.8, 1.2), -10, 12, 4001)
    oracle = 0.5 * quad(lambda x: np.tanh(x) * norm.pdf(x, 0.8, 1.2), -np.inf, np.inf)[0]
    assert g(0.0, G) == pytest.approx(oracle, abs=1e-6)
    rows = np.vstack([G.values, G.values])
    assert np.allclose(g.eval_rows(np.array([0.0, 1.0]), rows, -10, 12), oracle, atol=1e-6)


def test_lipschitz_probe():
    g = GammaSpec.mean_functional("tanh", scale=0.5)
    assert 0 < lipschitz_probe(g) <= 0.5
    with pytest.raises(LipschitzViolation) as err:
        lipschitz_probe(GammaSpec.mean_functional("tanh", scale=0.5, lipschitz=0.05))
    assert err.value.ratio > 0.05 and err.value.witness is not None


def test_declared_bound_enforced():
    g = GammaSpec.mean_functional("arctan", scale=1.0, bound=0.1)
    with pytest.raises(ContractViolation):
        g(0.0, EmpiricalMeasure([5.0]))


def test_initial_law_gaussian():
    law = InitialLaw.gaussian(1.0, 2.0)
    x = np.linspace(-5, 7, 13)
    assert np.allclose(law.cdf(x), norm.cdf(x, 1, 2), atol=1e-15)
    assert law.quantile(0.5) == pytest.approx(1.0)
    assert law.is_smooth(-9, 11)


def test_initial_law_dirac_and_table():
    d = InitialLaw.dirac(0.5)
    assert d.cdf(0.5) == 1.0 and d.cdf(0.4999) == 0.0
    assert d.quantile(0.3) == 0.5
    assert not d.is_smooth(-2, 3)
    t = InitialLaw.table([0, 1, 2], [0, 0.25, 1])
    assert t.cdf(0.5) == pytest.approx(0.125)
    assert t.quantile(0.625) == pytest.approx(1.5)
    with pytest.raises(SpecError):
        InitialLaw.table([0, 1], [0.2, 1])
    with pytest.raises(SpecError):
        InitialLaw.gaussian(p=1.0)


def test_spec_bounds():
    spec = CoefficientSpec(RankFunction.affine(1, 1), RankFunction.table([1, 2]), GammaSpec.zero())
    assert spec.max_b == pytest.approx(2.0)
    assert spec.max_diffusivity == pytest.approx(2.0)
