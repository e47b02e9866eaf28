import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from commonnoise.coefficients import CoefficientSpec, GammaSpec, InitialLaw, RankFunction
from commonnoise.exceptions import DomainError, NumericalBlowupError
from commonnoise.noise import NoiseBundle
from commonnoise.particles import (SimConfig, decompose_y, em_step, load_positions, moment_check, rank_fractions,
                                   sample_initial, simulate)


def coef(b=1.0, s=1.0, gamma=None):
    return CoefficientSpec(RankFunction.constant(b), RankFunction.constant(s), gamma or GammaSpec.zero())


def test_rank_fractions_share_ties():
    assert np.array_equal(rank_fractions([3.0, 1.0, 3.0, 2.0]), [1.0, 0.25, 1.0, 0.5])


@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=40))
def test_rank_fractions_are_cdf_values(x):
    from commonnoise.measures import EmpiricalMeasure
    assert np.array_equal(rank_fractions(x), EmpiricalMeasure(x).cdf(x))


def test_em_step_formula():
    spec = CoefficientSpec(RankFunction.affine(1.0, 1.0), RankFunction.affine(1.0, 2.0), GammaSpec.constant(0.5))
    x = np.array([0.3, -1.0, 2.0])
    dB = np.array([0.1, -0.2, 0.05])
    r = np.array([2, 1, 3]) / 3
    want = x + (1 + r) * 0.01 + (1 + 2 * r) * dB + 0.5 * 0.2
    assert np.allclose(em_step(x, 0.0, 0.2, dB, spec, 0.01), want, atol=1e-15)


def test_em_step_blowup():
    with pytest.raises(NumericalBlowupError) as err:
        em_step(np.array([np.inf, 0.0]), 0.0, 0.0, 0.0, coef(), 0.01, step=7)
    assert err.value.step == 7


def test_simulate_is_bitwise_deterministic():
    cfg = SimConfig(n=50, coefficients=coef(gamma=GammaSpec.mean_functional("tanh", 0.5)), T=0.1, dt=0.01, seed=3)
    a, b = simulate(cfg), simulate(cfg)
    assert np.array_equal(a.positions(), b.positions())
    assert np.array_equal(a.gamma_integral, b.gamma_integral) and np.array_equal(a.quantiles, b.quantiles)


def test_single_particle_is_plain_euler():
    cfg = SimConfig(n=1, coefficients=coef(2.0, 0.5, GammaSpec.constant(0.3)), T=0.05, dt=0.01, seed=1)
    noise = NoiseBundle.generate(1, 1, 5, 0.01)
    traj = simulate(cfg, noise)
    x0 = sample_initial(cfg)[0]
    want = x0 + 2.0 * 0.05 + 0.5 * noise.idio[0].sum() + 0.3 * noise.common.sum()
    assert traj.positions()[-1, 0] == pytest.approx(want, abs=1e-13)


def test_gamma_integral_is_left_point_sum():
    g = GammaSpec.mean_functional("tanh", 0.5)
    cfg = SimConfig(n=30, coefficients=coef(gamma=g), T=0.1, dt=0.01, seed=2)
    noise = NoiseBundle.generate(2, 30, 10, 0.01)
    traj = simulate(cfg, noise)
    X = traj.positions()
    expect = np.concatenate([[0.0], np.cumsum([g(0.0, traj.state(j)) * noise.common[j] for j in range(10)])])
    assert np.allclose(traj.gamma_integral, expect, atol=1e-15)
    assert np.allclose(traj.gamma_values, 0.5 * np.tanh(X[:-1]).mean(axis=1), atol=1e-15)


def test_y_frame_matches_direct_stepping():
    g = GammaSpec.mean_functional("arctan", 0.4)
    spec = CoefficientSpec(RankFunction.affine(1.0, 1.0), RankFunction.constant(1.0), g)
    cfg = SimConfig(n=40, coefficients=spec, T=0.2, dt=0.01, seed=5)
    noise = NoiseBundle.generate(5, 40, 20, 0.01)
    traj = simulate(cfg, noise)
    x = sample_initial(cfg)
    for j in range(20):
        x = em_step(x, j * 0.01, noise.common[j], noise.idio[:, j], spec, 0.01, j)
    assert np.allclose(traj.positions()[-1], x, atol=1e-12)


def test_decompose_y_gives_gamma_free_system():
    base = dict(n=60, T=0.1, dt=0.01, seed=9)
    zero = simulate(SimConfig(coefficients=coef(), **base))
    const = simulate(SimConfig(coefficients=coef(gamma=GammaSpec.constant(0.8)), **base))
    y = decompose_y(const)
    assert np.array_equal(y.positions(), zero.positions())
    assert np.array_equal(y.quantiles, zero.quantiles)


def test_quantile_columns():
    traj = simulate(SimConfig(n=20, coefficients=coef(), T=0.02, dt=0.01, seed=0))
    X = np.sort(traj.positions(), axis=1)
    assert np.array_equal(traj.quantiles[:, 2], X[:, 9])  # 0.5 * 20 = 10th order statistic
    assert np.array_equal(traj.quantiles[:, 0], X[:, 0])


def test_horizon_rounded_to_step_with_note():
    cfg = SimConfig(n=2, coefficients=coef(), T=0.105, dt=0.01)
    assert cfg.steps == 10 and cfg.T == pytest.approx(0.1) and cfg.notes


def test_bad_config():
    with pytest.raises(DomainError):
        SimConfig(n=0, coefficients=coef())
    with pytest.raises(DomainError):
        simulate(SimConfig(n=3, coefficients=coef(), T=0.1, dt=0.01), NoiseBundle.generate(0, 4, 10, 0.01))


def test_second_moment_envelope():
    traj = simulate(SimConfig(n=2000, coefficients=coef(0.0, 1.0), T=1.0, dt=0.01, seed=4))
    assert moment_check(traj, 2) == pytest.approx(2.0, rel=0.1)


def test_positions_dump_round_trip(tmp_path):
    traj = simulate(SimConfig(n=7, coefficients=coef(gamma=GammaSpec.constant(0.2)), T=0.03, dt=0.01, seed=0))
    traj.dump_positions(tmp_path / "p.bin")
    assert np.array_equal(load_positions(tmp_path / "p.bin"), traj.positions())


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32), st.floats(-2, 2))
def test_y_path_independent_of_constant_gamma(seed, c):
    base = dict(n=25, T=0.05, dt=0.01, seed=seed)
    a = simulate(SimConfig(coefficients=coef(gamma=GammaSpec.constant(c)), **base))
    b = simulate(SimConfig(coefficients=coef(), **base))
    assert np.array_equal(a.rank_state, b.rank_state)
    assert np.all(b.gamma_integral == 0.0)
