import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddvbi.arrays import AngularGrid, ArrayShape
from ddvbi.channel import render_channel
from ddvbi.errors import ConfigurationError
from ddvbi.pilots import (PilotSchedule, assemble_F, design_training_vector, dft_basis,
                          minimal_energy_set, noise_variance, random_combiners,
                          synthesize_observation)

from _helpers import cn, random_phi, random_truth

GRID = AngularGrid.uniform(16, 16)


def test_dft_basis_small():
    np.testing.assert_allclose(dft_basis(1), [[1]])
    np.testing.assert_allclose(dft_basis(2), np.array([[1, 1], [1, -1]]) / np.sqrt(2), atol=1e-15)


def test_dft_basis_unitary():
    b = dft_basis(8)
    np.testing.assert_allclose(b.conj().T @ b, np.eye(8), atol=1e-12)


def test_schedule_indices():
    s = PilotSchedule(4, 12500)
    assert list(s.indices) == [0, 3125, 6250, 9375]
    with pytest.raises(ConfigurationError):
        PilotSchedule(0, 10)


def _smallest_subset(e, mu):
    for k in range(1, len(e) + 1):
        best = max(itertools.combinations(range(len(e)), k), key=lambda c: sum(e[j] for j in c))
        if sum(e[j] for j in best) >= mu * sum(e):
            return set(best)


def test_minimal_set_known_energies():
    e = [0.5, 0.3, 0.15, 0.05]
    assert set(minimal_energy_set(e, 0.9)) == {0, 1, 2} == _smallest_subset(e, 0.9)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=8), st.floats(0.05, 1.0))
def test_minimal_set_matches_exhaustive_size(e, mu):
    got = minimal_energy_set(e, mu)
    ref = _smallest_subset(e, mu * (1 - 1e-12))
    assert len(got) == len(ref)
    assert sum(e[j] for j in got) >= mu * sum(e) * (1 - 1e-9)


def test_design_single_direction():
    b = dft_basis(8)
    d = design_training_vector(b[:, 1].conj()[None, :], b, 0.9, 0.5, 0)
    assert d.n_s == 1 and d.m_star[0] == 1
    assert abs(np.linalg.norm(d.v) - 1) < 1e-12
    # half the power on the promising direction
    assert abs(abs(np.vdot(b[:, 1], d.v)) ** 2 - 0.5) < 1e-12


def test_design_full_set_renormalises():
    b = dft_basis(4)
    h = np.ones((1, 4)) @ b.conj().T  # equal energy on every basis vector
    d = design_training_vector(h, b, 1.0, 0.5, 1)
    assert d.n_s == 4
    assert abs(np.linalg.norm(d.v) - 1) < 1e-12
    np.testing.assert_allclose(np.abs(b.conj().T @ d.v) ** 2, 0.25, atol=1e-12)


def test_design_empty_channel_explores():
    b = dft_basis(4)
    d = design_training_vector(np.zeros((1, 4)), b, 0.9, 0.5, 2)
    assert d.exploration_only and d.n_s == 0
    assert abs(np.linalg.norm(d.v) - 1) < 1e-12


def test_noiseless_single_pilot():
    rng = np.random.default_rng(0)
    truth = random_truth(rng, GRID, 3)
    shape = ArrayShape(8, 6)
    v = cn(rng, 8)
    s = PilotSchedule(1, 100)
    obs = synthesize_observation(truth, GRID, shape, s, v)
    np.testing.assert_array_equal(obs.y, render_channel(truth, GRID, shape, 0) @ v)


def test_noise_calibration():
    rng = np.random.default_rng(1)
    truth = random_truth(rng, GRID, 2)
    shape = ArrayShape(8, 32)
    s = PilotSchedule(313, 12500)
    obs = synthesize_observation(truth, GRID, shape, s, np.zeros(8), noise_var=0.7, rng=rng)
    assert obs.y.size >= 10_000
    assert abs(np.mean(np.abs(obs.y) ** 2) / 0.7 - 1) < 0.05


def test_orthonormal_combining_keeps_noise_white():
    rng = np.random.default_rng(2)
    truth = random_truth(rng, GRID, 2)
    shape = ArrayShape(8, 8, n_b=3)
    s = PilotSchedule(1, 10)
    comb = random_combiners(8, 3, 1, rng)
    draws = np.array([synthesize_observation(truth, GRID, shape, s, np.zeros(8), comb,
                                             noise_var=2.0, rng=rng).y for _ in range(20_000)])
    cov = draws.T @ draws.conj() / draws.shape[0]
    np.testing.assert_allclose(cov, 2.0 * np.eye(3), atol=0.1)


def test_snr_definition():
    rng = np.random.default_rng(3)
    truth = random_truth(rng, GRID, 3)
    shape = ArrayShape(8, 6)
    h0 = render_channel(truth, GRID, shape, 0)
    assert abs(noise_variance(truth, GRID, shape, 10.0)
               - np.linalg.norm(h0) ** 2 / (48 * 10.0)) < 1e-12


def test_F_single_pilot_is_A_R():
    from ddvbi.arrays import assemble_A_R
    rng = np.random.default_rng(4)
    phi = random_phi(rng, GRID)
    s = PilotSchedule(1, 50)
    F = assemble_F(GRID, phi, s, None, ArrayShape(4, 6))
    np.testing.assert_array_equal(F, assemble_A_R(GRID, phi, 0, 6))


def test_F_blocks_identical_without_doppler():
    rng = np.random.default_rng(5)
    phi = random_phi(rng, GRID).replace(f_d=0.0)
    F = assemble_F(GRID, phi, PilotSchedule(5, 500), None, ArrayShape(4, 6)).reshape(5, 6, 16)
    for k in range(1, 5):
        np.testing.assert_array_equal(F[k], F[0])


@pytest.mark.parametrize("n_b", [None, 3])
def test_noiseless_model_consistency(n_b):
    rng = np.random.default_rng(6)
    shape = ArrayShape(8, 8, n_b=n_b)
    s = PilotSchedule(6, 12500)
    for _ in range(20):
        truth = random_truth(rng, GRID, 4)
        v = cn(rng, 8)
        tv = truth.with_training(GRID, v)
        comb = random_combiners(8, 3, 6, rng) if n_b else None
        obs = synthesize_observation(tv, GRID, shape, s, v, comb)
        F = assemble_F(GRID, tv.phi(), s, comb, shape)
        assert np.linalg.norm(obs.y - F @ tv.x_true) <= 1e-9 * max(1, np.linalg.norm(obs.y))


def test_bad_combiner_shape():
    with pytest.raises(ConfigurationError):
        assemble_F(GRID, random_phi(np.random.default_rng(0), GRID), PilotSchedule(2, 10),
                   np.zeros((3, 8, 2)), ArrayShape(8, 8, n_b=2))
