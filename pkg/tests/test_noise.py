import numpy as np

from commonnoise.noise import (NoiseBundle, brownian_path, common_increments, generator, open_uniform,
                               particle_increments, particle_uniforms, refine_increments, replica_seed)


def test_streams_are_deterministic():
    a = NoiseBundle.generate(5, 4, 10, 0.01)
    b = NoiseBundle.generate(5, 4, 10, 0.01)
    assert np.array_equal(a.common, b.common) and np.array_equal(a.idio, b.idio)


def test_particle_stream_independent_of_system_size():
    small = particle_increments(3, 5, 20, 0.01)
    large = particle_increments(3, 50, 20, 0.01)
    assert np.array_equal(small, large[:5])
    assert np.array_equal(particle_uniforms(3, 5), particle_uniforms(3, 9)[:5])


def test_common_stream_depends_on_seed_only():
    assert np.array_equal(common_increments(8, 30, 0.1)[:10], common_increments(8, 10, 0.1) * 1.0)
    assert not np.array_equal(common_increments(8, 10, 0.1), common_increments(9, 10, 0.1))


def test_tags_give_distinct_streams():
    a = generator(1, "common").standard_normal(5)
    b = generator(1, "idio", 0).standard_normal(5)
    assert not np.array_equal(a, b)
    assert replica_seed(1, 0) != replica_seed(1, 1)


def test_open_uniform_in_open_interval():
    u = open_uniform(generator(0, "init", 0), size=100_000)
    assert u.min() > 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.01


def test_increment_variance():
    dW = common_increments(0, 200_000, 0.01)
    assert abs(dW.var() / 0.01 - 1) < 0.02


def test_bridge_refinement_keeps_coarse_path():
    dW = common_increments(4, 100, 0.04)
    fine = refine_increments(dW, 0.04, 4, 1)
    assert np.allclose(fine[0::2] + fine[1::2], dW, atol=1e-15, rtol=0)
    W, Wf = brownian_path(dW), brownian_path(fine)
    assert np.allclose(Wf[0::2], W, atol=1e-13)
    assert np.array_equal(fine, refine_increments(dW, 0.04, 4, 1))


def test_bridge_refinement_statistics():
    dW = common_increments(1, 100_000, 0.02)
    fine = refine_increments(dW, 0.02, 1, 1)
    assert abs(fine.var() / 0.01 - 1) < 0.02
    # the two halves of a coarse step are independent
    assert abs(np.corrcoef(fine[0::2], fine[1::2])[0, 1]) < 0.02


def test_lineage_is_serializable():
    import json
    json.dumps(NoiseBundle.generate(1, 2, 3, 0.1).lineage)
