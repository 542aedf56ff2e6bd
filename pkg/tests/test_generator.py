from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from genguide.errors import IndexOutOfRange, ShapeMismatch
from genguide.generator import (
    Generator,
    GeneratorConfig,
    Latent,
    MixturePrior,
    NoiseSchedule,
    mixture_from_structures,
)
from genguide.structure import Structure
from genguide.toy import two_state_generator

import oracles


def single_component(mean, sigma, **kw) -> Generator:
    prior = MixturePrior(np.asarray(mean, dtype=float)[None], [1.0], sigma)
    return Generator(GeneratorConfig(NoiseSchedule(), prior, **kw))


# -- schedule ---------------------------------------------------------------------


def test_schedule_endpoints_and_positivity():
    sch = NoiseSchedule()
    assert abs(float(sch.alpha_bar(0.0)) - 1.0) < 1e-9
    assert float(sch.alpha_bar(1.0)) <= 1e-3
    ts = np.linspace(1e-4, 1 - 1e-4, 500)
    assert np.all(sch.beta(ts) > 0)
    assert np.all(np.diff(sch.alpha_bar(ts)) < 0)


def test_beta_is_log_derivative_of_alpha_bar():
    sch = NoiseSchedule()
    for t in (0.1, 0.5, 0.9):
        h = 1e-6
        d = (math.log(sch.alpha_bar(t + h)) - math.log(sch.alpha_bar(t - h))) / (2 * h)
        assert -d == pytest.approx(float(sch.beta(t)), rel=1e-6)


@pytest.mark.parametrize("index,t", [(0, 1.0), (50, 0.0), (25, 0.5), (40, 0.2)])
def test_index_to_time(index, t):
    assert NoiseSchedule().index_to_time(index) == pytest.approx(t, abs=1e-15)


@pytest.mark.parametrize("bad", [-1, 51])
def test_index_out_of_range(bad):
    with pytest.raises(IndexOutOfRange):
        NoiseSchedule().index_to_time(bad)


# -- prior validation ------------------------------------------------------------


def test_prior_rejects_bad_weights_and_shapes():
    m = np.zeros((2, 4, 3))
    with pytest.raises(ValueError):
        MixturePrior(m, [0.6, 0.6], 0.1)
    with pytest.raises(ValueError):
        MixturePrior(m, [1.0, 0.0], 0.1)
    with pytest.raises(ShapeMismatch):
        MixturePrior(m, [1.0], 0.1)


def test_latent_rejects_non_finite():
    with pytest.raises(Exception):
        Latent(np.array([[np.nan, 0, 0]]), 0.5)


# -- score -------------------------------------------------------------------------


def test_single_gaussian_score_identity():
    rng = np.random.default_rng(3)
    mean = rng.normal(size=(5, 3))
    gen = single_component(mean, 1.0)
    z = rng.normal(size=(5, 3))
    np.testing.assert_allclose(gen.score(z, 0.0), mean - z, atol=1e-12)


def test_score_matches_finite_differences_of_oracle_density(toy):
    gen, _, _ = toy
    rng = np.random.default_rng(11)
    means = [m.reshape(-1).tolist() for m in gen.prior.means]
    weights = gen.prior.weights.tolist()
    sigma = float(gen.prior.sigma[0])
    h = 1e-5
    for _ in range(20):
        t = float(rng.uniform(0.02, 1.0))
        ab = float(gen.schedule.alpha_bar(t))
        k = rng.integers(0, 2)
        z = math.sqrt(ab) * gen.prior.means[k] + rng.normal(scale=0.5, size=gen.prior.shape)
        flat = z.reshape(-1)
        fd = np.empty_like(flat)
        for i in range(flat.size):
            up, dn = flat.copy(), flat.copy()
            up[i] += h
            dn[i] -= h
            fd[i] = (oracles.mixture_log_density(up, ab, means, weights, sigma)
                     - oracles.mixture_log_density(dn, ab, means, weights, sigma)) / (2 * h)
        s = gen.score(z, t).reshape(-1)
        assert np.linalg.norm(s - fd) / np.linalg.norm(fd) < 1e-5
        assert float(gen.log_density(z, t)) == pytest.approx(
            oracles.mixture_log_density(flat.tolist(), ab, means, weights, sigma), rel=1e-12)


def test_symmetric_midpoint_score_points_to_barycenter():
    m = np.zeros((2, 1, 3))
    m[0, 0, 0], m[1, 0, 0] = 1.0, -1.0
    gen = Generator(GeneratorConfig(NoiseSchedule(), MixturePrior(m, [0.5, 0.5], 0.3)))
    t = 0.4
    z = math.sqrt(float(gen.schedule.alpha_bar(t))) * m[0] + np.array([[0.0, 0.2, 0.0]])
    s = gen.score(z, t)
    assert s[0, 0] < 0  # pulled toward the barycenter along the separating axis
    assert s[0, 1] < 0


def test_responsibilities_dominance_limit(toy):
    gen, a, _ = toy
    z = gen.whiten(a) * 5.0
    r = gen.responsibilities(z, 0.0)
    assert abs(r[0] - 1.0) < 1e-12 and r[1] < 1e-12


def test_score_is_batched(toy):
    gen, _, _ = toy
    z = np.random.default_rng(0).normal(size=(4, 16, 3))
    batched = gen.score(z, 0.3)
    for i in range(4):
        np.testing.assert_allclose(batched[i], gen.score(z[i], 0.3), rtol=1e-13, atol=1e-13)


# -- decode / invert -----------------------------------------------------------------


def test_single_component_decode_contracts_to_mean():
    rng = np.random.default_rng(5)
    mean = rng.normal(size=(8, 3))
    gen = single_component(mean, 0.005)
    x = gen.decode(Latent(rng.normal(size=(8, 3)), 1.0))
    rmsd = math.sqrt(np.mean(np.sum((x.ca_trace() - 10.0 * mean) ** 2, axis=1)))
    assert rmsd < 0.1


def test_decode_from_zero_is_dewhitening(toy):
    gen, a, _ = toy
    z0 = gen.whiten(a)
    np.testing.assert_array_equal(gen.decode_array(z0, 0.0), z0)
    np.testing.assert_allclose(gen.to_structure(z0).ca_trace(), a.ca_trace(), atol=1e-12)


def test_invert_to_zero_is_identity(toy):
    gen, a, _ = toy
    np.testing.assert_array_equal(gen.invert(a, 0.0).values, gen.whiten(a))


def test_doubling_steps_changes_decode_below_1e3_angstrom():
    g1, _, _ = two_state_generator(16, ode_steps_per_index=6)
    g2, _, _ = two_state_generator(16, ode_steps_per_index=12)
    z = np.random.default_rng(8).normal(size=(20, 16, 3))
    d = np.abs(g1.decode_array(z, 1.0) - g2.decode_array(z, 1.0)) * 10.0
    assert d.max() < 1e-3


def test_round_trip_batch_of_twenty(toy):
    gen, a, b = toy
    rng = np.random.default_rng(2)
    base = np.stack([gen.whiten(a if i % 2 else b) for i in range(20)])
    z0 = base + rng.normal(scale=0.1, size=base.shape)
    for t in (0.2, 0.5, 0.8):
        back = gen.decode_array(gen.invert_array(z0, t), t)
        assert np.abs(back - z0).max() * gen.config.decode_scale < 1e-2


def test_invert_is_injective_on_samples(toy):
    gen, a, b = toy
    assert not np.allclose(gen.invert(a, 0.5).values, gen.invert(b, 0.5).values)


def test_decode_is_deterministic(toy):
    gen, _, _ = toy
    z = np.random.default_rng(1).normal(size=(16, 3))
    first = gen.decode_array(z, 0.7)
    again = two_state_generator(16)[0].decode_array(z, 0.7)
    assert first.tobytes() == again.tobytes()


def test_shape_mismatch_on_wrong_residue_count(toy):
    gen, _, _ = toy
    with pytest.raises(ShapeMismatch):
        gen.whiten(Structure.from_ca_trace(np.zeros((3, 3)) + np.arange(3)[:, None]))


def test_ode_marginal_matches_weights_chi_square():
    gen, _, _ = two_state_generator(16, weights=(0.7, 0.3))
    z = gen.sample_prior_noise(np.random.default_rng(21), 1000)
    x0 = gen.decode_array(z, 1.0)
    labels = [gen.nearest_component(x) for x in x0]
    counts = np.bincount(labels, minlength=2)
    assert stats.chisquare(counts, [700, 300]).pvalue > 0.01


# -- resample -------------------------------------------------------------------------


def test_forward_resample_limits_and_determinism(toy):
    gen, a, _ = toy
    z0 = gen.whiten(a)
    gaps = [np.abs(gen.resample_at(a, t, np.random.default_rng(0)).values - z0).max()
            for t in (1e-3, 1e-5, 1e-7)]
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-3
    assert np.array_equal(gen.resample_at(a, 0.0, np.random.default_rng(0)).values, z0)
    r1 = gen.resample_at(a, 0.5, np.random.default_rng(42)).values
    r2 = gen.resample_at(a, 0.5, np.random.default_rng(42)).values
    assert r1.tobytes() == r2.tobytes()


def test_forward_resample_at_one_is_standard_normal(toy):
    gen, a, _ = toy
    rng = np.random.default_rng(7)
    z0 = gen.whiten(a)
    draws = np.array([gen.resample_array(z0, 1.0, rng)[3, 0] for _ in range(10_000)])
    assert stats.kstest(draws, "norm").pvalue > 0.01


def test_reverse_sde_resample_mode_ignores_structure():
    gen, a, b = two_state_generator(16, resample_mode="reverse_sde", sde_steps=200)
    za = gen.resample_at(a, 0.5, np.random.default_rng(3)).values
    zb = gen.resample_at(b, 0.5, np.random.default_rng(3)).values
    np.testing.assert_array_equal(za, zb)


# -- reverse SDE -----------------------------------------------------------------------


def test_reverse_sde_single_component_spread():
    mean = np.random.default_rng(0).normal(size=(4, 3))
    gen = single_component(mean, 0.15)
    rng = np.random.default_rng(9)
    z1 = rng.standard_normal((1000, 4, 3))
    x = gen.reverse_sde_array(z1, rng) * 10.0
    std = np.std(x - 10.0 * mean, axis=0).mean()
    assert abs(std - 1.5) < 0.15


def test_reverse_sde_zero_noise_matches_decode(toy):
    gen, _, _ = toy
    z = np.random.default_rng(4).normal(size=(8, 16, 3))
    sde = gen.reverse_sde_array(z, np.random.default_rng(0), noise_scale=0.0)
    ode = gen.decode_array(z, 1.0)
    assert np.abs(sde - ode).max() * 10.0 < 0.1


def test_sample_reverse_sde_requires_t_one(toy):
    gen, _, _ = toy
    with pytest.raises(ValueError):
        gen.sample_reverse_sde(Latent(np.zeros((16, 3)), 0.5), np.random.default_rng(0))


def test_mixture_from_structures_shared_center(toy):
    _, a, b = toy
    prior, center = mixture_from_structures([a, b])
    all_ca = np.concatenate([a.ca_trace(), b.ca_trace()])
    np.testing.assert_allclose(center, all_ca.mean(axis=0))
    np.testing.assert_allclose(prior.means[0] * 10.0 + center, a.ca_trace(), atol=1e-12)
