import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from microflake.phase import (MAX_RESAMPLE, ConfigurationError, PhaseWeights, phase_combined_eval,
                              phase_diffuse_estimate, phase_diffuse_eval, phase_specular_eval,
                              sample_phase_direction, sample_phase_with_retry)
from microflake.sggx import MicroflakeParams, build_sggx

import oracles

Z = np.array([0.0, 0.0, 1.0])


def sggx(w, tau):
    return build_sggx(MicroflakeParams(np.asarray(w, dtype=float), tau))


def random_case(rng, tau_range=(0.05, 1.0)):
    return sggx(oracles.random_unit(rng), rng.uniform(*tau_range)), oracles.random_unit(rng)


# -- specular -------------------------------------------------------------------------

def test_specular_isotropic_backscatter():
    assert phase_specular_eval(sggx(Z, 1.0), Z, Z) == pytest.approx(1.0 / (4.0 * np.pi), rel=1e-12)


def test_specular_degenerate_half_vector_is_zero(rng):
    S, wi = random_case(rng)
    assert phase_specular_eval(S, wi, -wi) == 0.0


def test_specular_normalizes(rng):
    nodes, dw = oracles.fib_nodes(20000)
    for _ in range(8):
        S, wi = random_case(rng, (0.2, 1.0))
        total = dw * np.sum(phase_specular_eval(S, np.broadcast_to(wi, nodes.shape), nodes))
        assert total == pytest.approx(1.0, abs=0.01)


def test_specular_normalizes_down_to_narrow_lobes(rng):
    for tau in (0.05, 0.08, 0.5):
        w, wi = oracles.random_unit(rng), oracles.random_unit(rng)
        S = sggx(w, tau)
        total = oracles.specular_phase_integral(
            lambda wl: phase_specular_eval(S, np.broadcast_to(wi, wl.shape), wl), w, tau, wi)
        assert total == pytest.approx(1.0, abs=1e-3)


def test_half_vector_rule_agrees_with_uniform_nodes(rng):
    nodes, dw = oracles.fib_nodes(200000)
    w, wi = oracles.random_unit(rng), oracles.random_unit(rng)
    S = sggx(w, 0.4)

    def f(wl):
        return phase_specular_eval(S, np.broadcast_to(wi, wl.shape), wl)

    assert oracles.specular_phase_integral(f, w, 0.4, wi) == pytest.approx(dw * np.sum(f(nodes)), abs=1e-4)


def test_specular_matches_half_vector_formula(rng):
    S, wi = random_case(rng)
    wl = oracles.random_unit(rng)
    h = (wi + wl) / np.linalg.norm(wi + wl)
    ref = oracles.ndf_ref(S.s, h) / (4.0 * np.sqrt(wi @ S.s @ wi))
    assert phase_specular_eval(S, wi, wl) == pytest.approx(ref, rel=1e-9)


# -- diffuse --------------------------------------------------------------------------

def test_diffuse_isotropic_backscatter():
    assert phase_diffuse_eval(sggx(Z, 1.0), Z, Z, nodes=20000) == pytest.approx(2.0 / (3.0 * np.pi), rel=1e-3)


def test_diffuse_rejects_tiny_quadrature():
    with pytest.raises(ConfigurationError):
        phase_diffuse_eval(sggx(Z, 1.0), Z, Z, nodes=15)


def test_diffuse_isotropic_depends_only_on_angle(rng):
    from scipy.spatial.transform import Rotation
    S = sggx(Z, 1.0)
    wi, wl = oracles.random_unit(rng), oracles.random_unit(rng)
    R = Rotation.from_rotvec(oracles.random_unit(rng) * 1.3).as_matrix()
    a = phase_diffuse_eval(S, wi, wl, nodes=20000)
    b = phase_diffuse_eval(S, R @ wi, R @ wl, nodes=20000)
    assert a == pytest.approx(b, abs=2e-4)


def test_diffuse_quadrature_self_converges(rng):
    for _ in range(5):
        S, wi = random_case(rng, (0.2, 1.0))
        wl = oracles.random_unit(rng)
        assert phase_diffuse_eval(S, wi, wl, 5000) == pytest.approx(
            phase_diffuse_eval(S, wi, wl, 20000), abs=1e-3)


def test_diffuse_energy_bounded(rng):
    nodes, dw = oracles.fib_nodes(4000)
    for _ in range(4):
        S, wi = random_case(rng, (0.2, 1.0))
        total = dw * np.sum(phase_diffuse_eval(S, wi, nodes, 5000))
        assert total <= 1.0 + 1e-2


def test_diffuse_estimator_is_unbiased(rng):
    S, wi = random_case(rng, (0.2, 1.0))
    wl = oracles.random_unit(rng)
    if wl @ wi < 0:
        wl = -wl
    est = phase_diffuse_estimate(S, np.broadcast_to(wi, (10 ** 6, 3)), wl, rng.uniform(size=(10 ** 6, 2)))
    assert np.all((est >= 0.0) & (est <= 1.0 / np.pi))
    assert est.mean() == pytest.approx(phase_diffuse_eval(S, wi, wl, 20000), rel=0.01)


def test_diffuse_estimator_isotropic_backscatter(rng):
    S = sggx(Z, 1.0)
    est = phase_diffuse_estimate(S, np.broadcast_to(Z, (10 ** 6, 3)), Z, rng.uniform(size=(10 ** 6, 2)))
    assert est.mean() == pytest.approx(2.0 / (3.0 * np.pi), rel=0.01)


# -- combination ----------------------------------------------------------------------

def test_combined_weights_select_lobes(rng):
    S, wi = random_case(rng)
    wl = oracles.random_unit(rng)
    d = phase_diffuse_eval(S, wi, wl)
    s = phase_specular_eval(S, wi, wl)
    assert phase_combined_eval(S, wi, wl, PhaseWeights(1.0, 0.0)) == d
    assert phase_combined_eval(S, wi, wl, PhaseWeights(0.0, 1.0)) == s


def test_combined_isotropic_backscatter():
    val = phase_combined_eval(sggx(Z, 1.0), Z, Z, PhaseWeights(1.0, 1.0), nodes=20000)
    assert val == pytest.approx(2.0 / (3.0 * np.pi) + 1.0 / (4.0 * np.pi), rel=1e-3)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_combined_is_linear_in_weights(a, b, c, d):
    S = sggx(np.array([0.6, 0.0, 0.8]), 0.4)
    wi, wl = np.array([0.0, 0.6, 0.8]), np.array([0.8, 0.0, 0.6])
    fd, fs = phase_diffuse_eval(S, wi, wl, 500), phase_specular_eval(S, wi, wl)
    got = phase_combined_eval(S, wi, wl, PhaseWeights(a + c, b + d), 500)
    assert got == pytest.approx((a + c) * fd + (b + d) * fs, rel=1e-12, abs=1e-15)


def test_phase_weights_validation():
    with pytest.raises(ConfigurationError):
        PhaseWeights(-0.1, 1.0)
    with pytest.raises(ConfigurationError):
        PhaseWeights(1.0, np.inf)


# -- sampling -------------------------------------------------------------------------

def test_specular_samples_are_unit_with_positive_pdf(rng):
    S, wi = random_case(rng)
    wl, pdf, valid = sample_phase_direction(S, np.broadcast_to(wi, (5000, 3)), "specular",
                                            rng.uniform(size=(5000, 3)))
    np.testing.assert_allclose(np.linalg.norm(wl, axis=1), 1.0, atol=1e-9)
    assert np.all(pdf[valid] > 0.0)


def test_specular_importance_sampling_is_consistent(rng):
    S = sggx(oracles.random_unit(rng), 0.4)
    wi = oracles.random_unit(rng)

    def f(d):
        return np.exp(2.0 * (d @ np.array([0.3, -0.5, 0.8]))) * phase_specular_eval(S, wi, d)

    n = 10 ** 5
    wl, pdf, valid = sample_phase_direction(S, np.broadcast_to(wi, (n, 3)), "specular", rng.uniform(size=(n, 3)))
    est = np.where(valid, f(wl) / np.where(valid, pdf, 1.0), 0.0).mean()
    nodes, dw = oracles.fib_nodes(200000)
    ref = dw * np.sum(f(nodes))
    assert est == pytest.approx(ref, rel=0.02)


def test_specular_sampling_pdf_matches_histogram(rng):
    S = sggx(np.array([0.0, 0.6, 0.8]), 0.5)
    wi = np.array([0.6, 0.0, 0.8])
    n = 50000
    wl, _, valid = sample_phase_direction(S, np.broadcast_to(wi, (n, 3)), "specular", rng.uniform(size=(n, 3)))
    # bin over the full sphere by hemispheres around +/- pole
    mu_e, phi_e = oracles.hemisphere_bins(6, 8)
    pole = np.array([0.0, 0.0, 1.0])
    up = wl[valid] @ pole >= 0
    obs_up = np.bincount(oracles.bin_index(wl[valid][up], pole, mu_e, phi_e)[0], minlength=48)
    obs_dn = np.bincount(oracles.bin_index(wl[valid][~up], -pole, mu_e, phi_e)[0], minlength=48)

    def pdf(d):
        return phase_specular_eval(S, np.broadcast_to(wi, d.shape), d)

    p_up = oracles.bin_probabilities(pdf, pole, mu_e, phi_e)
    p_dn = oracles.bin_probabilities(pdf, -pole, mu_e, phi_e)
    obs = np.concatenate([obs_up, obs_dn]).astype(float)
    exp = np.concatenate([p_up, p_dn]) * n
    assert oracles.chi_square_pvalue(obs, exp) > 0.01


def test_isotropic_specular_samples_are_axially_symmetric(rng):
    S = sggx(Z, 1.0)
    n = 20000
    wl, _, valid = sample_phase_direction(S, np.broadcast_to(Z, (n, 3)), "specular", rng.uniform(size=(n, 3)))
    phi = np.arctan2(wl[valid, 1], wl[valid, 0])
    # mean resultant length of a uniform angle is O(1/sqrt(n))
    r = np.hypot(np.cos(phi).mean(), np.sin(phi).mean())
    assert r < 4.0 / np.sqrt(valid.sum())


def test_diffuse_sampling_is_consistent(rng):
    S = sggx(oracles.random_unit(rng), 0.5)
    wi = oracles.random_unit(rng)
    n = 4000
    wl, pdf, valid = sample_phase_direction(S, np.broadcast_to(wi, (n, 3)), "diffuse",
                                            rng.uniform(size=(n, 4)), nodes=2000)
    np.testing.assert_allclose(np.linalg.norm(wl, axis=1), 1.0, atol=1e-9)
    assert np.all(pdf[valid] > 0.0)
    # the returned pdf is the diffuse phase, which integrates to the sampled mass
    g = np.exp(wl @ np.array([0.0, 0.0, 1.0]))
    est = np.mean(np.where(valid, g, 0.0))
    nodes, dw = oracles.fib_nodes(4000)
    ref = dw * np.sum(np.exp(nodes[:, 2]) * phase_diffuse_eval(S, wi, nodes, 2000))
    norm = dw * np.sum(phase_diffuse_eval(S, wi, nodes, 2000))
    assert est == pytest.approx(ref / norm, rel=0.03)


def test_diffuse_sampling_needs_four_uniforms():
    with pytest.raises(ConfigurationError):
        sample_phase_direction(sggx(Z, 0.5), Z, "diffuse", np.array([0.1, 0.2, 0.3]))


def test_unknown_kind_is_rejected():
    with pytest.raises(ConfigurationError):
        sample_phase_direction(sggx(Z, 0.5), Z, "glossy", np.array([0.1, 0.2, 0.3]))


def test_retry_gives_up_after_the_cap(monkeypatch):
    import microflake.phase as phase
    calls = []

    def degenerate(S, wi, kind, u, nodes):
        calls.append(u)
        return Z, 0.0, False

    monkeypatch.setattr(phase, "sample_phase_direction", degenerate)
    us = np.full((MAX_RESAMPLE + 3, 3), 0.5)
    assert sample_phase_with_retry(sggx(Z, 0.5), Z, "specular", us) is None
    assert len(calls) == MAX_RESAMPLE


def test_retry_returns_first_valid_draw(rng):
    us = rng.uniform(size=(MAX_RESAMPLE, 3))
    out = sample_phase_with_retry(sggx(Z, 0.5), Z, "specular", us)
    assert out is not None
    assert np.linalg.norm(out[0]) == pytest.approx(1.0)
