import numpy as np
import pytest
from hypothesis import given, strategies as st

from quietsplice.errors import InvalidDimension
from quietsplice.sbl import (
    SblConfig,
    build_dictionary,
    gamma_change,
    initial_state,
    sbl_iterate,
    sbl_solve,
    sbl_solve_batch,
    weighted_gram,
)


def one_sparse_oracle(x, atoms):
    """Best single atom by exhaustive least squares (atoms are unit norm)."""
    return int(np.argmax(np.abs(atoms.T @ x)))


class TestDictionary:
    def test_identity(self):
        assert np.array_equal(build_dictionary(4, kind="identity").atoms, np.eye(4))

    def test_overcomplete_shape_and_norms(self):
        d = build_dictionary(8, 2.0)
        assert d.atoms.shape == (8, 16)
        np.testing.assert_allclose(np.linalg.norm(d.atoms, axis=0), 1.0, atol=1e-9)

    @pytest.mark.parametrize("kind", ["identity", "overcomplete_dct"])
    def test_gram_diagonal_is_one(self, kind):
        d = build_dictionary(6, 2.0, kind)
        np.testing.assert_allclose(np.diag(d.atoms.T @ d.atoms), 1.0, atol=1e-12)

    def test_oversampling_one_is_orthonormal(self):
        d = build_dictionary(16, 1.0)
        np.testing.assert_allclose(d.atoms.T @ d.atoms, np.eye(16), atol=1e-12)

    def test_custom_normalised(self):
        d = build_dictionary(2, kind="custom", atoms=[[3.0, 0.0], [4.0, 2.0]])
        np.testing.assert_allclose(d.atoms[:, 0], [0.6, 0.8])

    @pytest.mark.parametrize("args", [(0, 2.0, "identity"), (4, 0.5, "overcomplete_dct"),
                                      (4, 2.0, "custom"), (4, 2.0, "wavelet")])
    def test_invalid(self, args):
        with pytest.raises(InvalidDimension):
            build_dictionary(*args)

    def test_fast_gram_matches_dense(self, rng):
        d = build_dictionary(16, 2.0)
        g = rng.uniform(0.1, 3.0, (3, 32))
        dense = np.einsum("ik,fk,jk->fij", d.atoms, g, d.atoms)
        np.testing.assert_allclose(weighted_gram(d, g), dense, atol=1e-12)


class TestIterate:
    def test_scalar_hand_case(self):
        d = build_dictionary(1, kind="identity")
        cfg = SblConfig(lam=1.0)
        state = initial_state(d, [2.0])
        state = type(state)(np.ones(1), np.array([1.0]), state.sigma)
        nxt = sbl_iterate(state, d, [2.0], cfg)
        assert nxt.sigma[0, 0] == pytest.approx(0.5, abs=1e-15)
        assert nxt.mu[0] == pytest.approx(1.0, abs=1e-15)
        assert nxt.gamma[0] == pytest.approx(1 / (1 + cfg.epsilon), abs=1e-15)

    def test_zero_signal_gives_zero_mean(self, rng):
        d = build_dictionary(8, 2.0)
        state = initial_state(d, rng.standard_normal(8))
        assert not sbl_iterate(state, d, np.zeros(8), SblConfig()).mu.any()

    def test_zero_mean_gives_inverse_epsilon(self):
        d = build_dictionary(4, kind="identity")
        state = initial_state(d, np.zeros(4))
        nxt = sbl_iterate(state, d, np.ones(4), SblConfig(epsilon=1e-6))
        np.testing.assert_allclose(nxt.gamma, 1e6)

    def test_dimension_mismatch(self):
        d = build_dictionary(4, kind="identity")
        with pytest.raises(InvalidDimension):
            sbl_iterate(initial_state(d, np.zeros(4)), d, np.zeros(5), SblConfig())

    @given(st.integers(0, 10 ** 6))
    def test_update_identities_every_iteration(self, seed):
        r = np.random.default_rng(seed)
        d = build_dictionary(8, 2.0)
        x = r.standard_normal(8)
        cfg = SblConfig()
        state = initial_state(d, x)
        for _ in range(15):
            nxt = sbl_iterate(state, d, x, cfg)
            np.testing.assert_allclose(nxt.gamma * (np.abs(state.mu) + cfg.epsilon), 1.0,
                                       rtol=0, atol=1e-12)
            system = d.atoms.T @ d.atoms / cfg.lam + np.diag(1 / state.gamma)
            rhs = d.atoms.T @ x / cfg.lam
            assert (np.linalg.norm(system @ nxt.mu - rhs)
                    <= 1e-8 * max(np.linalg.norm(rhs), 1e-300))
            state = nxt

    def test_shrinkage_direction(self, rng):
        d = build_dictionary(8, 2.0)
        x = rng.standard_normal(8)
        cfg = SblConfig()
        s0 = initial_state(d, x)
        s1 = sbl_iterate(s0, d, x, cfg)
        s2 = sbl_iterate(s1, d, x, cfg)
        shrank = np.abs(s1.mu) < np.abs(s0.mu)
        assert np.all(1 / s2.gamma[shrank] < 1 / s1.gamma[shrank])


class TestSolve:
    def test_identity_recovery(self):
        x = np.zeros(8)
        x[2] = 3.0
        mu, _, _ = sbl_solve(x, build_dictionary(8, kind="identity"), SblConfig(lam=1e-4))
        assert np.max(np.abs(mu - x)) < 1e-2

    def test_zero_converges_fast(self):
        mu, iters, conv = sbl_solve(np.zeros(8), build_dictionary(8, 2.0), SblConfig())
        assert conv and iters <= 2 and not mu.any()

    @pytest.mark.parametrize("j", range(16))
    def test_single_atom_identified(self, j):
        d = build_dictionary(8, 2.0)
        x = 1.7 * d.atoms[:, j]
        mu, _, _ = sbl_solve(x, d, SblConfig())
        assert int(np.argmax(np.abs(mu))) == j == one_sparse_oracle(x, d.atoms)

    def test_batch_matches_iterate(self, rng):
        d = build_dictionary(8, 2.0)
        X = rng.standard_normal((4, 8))
        cfg = SblConfig(max_iterations=7)
        mu, iters, _ = sbl_solve_batch(X, d, cfg)
        for row, x in enumerate(X):
            state = initial_state(d, x)
            for _ in range(iters[row]):
                state = sbl_iterate(state, d, x, cfg)
            np.testing.assert_allclose(mu[row], state.mu, rtol=1e-8, atol=1e-10)

    def test_iteration_cap_respected(self, rng):
        _, iters, _ = sbl_solve(rng.standard_normal(8), build_dictionary(8, 2.0),
                                SblConfig(max_iterations=5))
        assert iters <= 5

    def test_gamma_change_is_relative_max_norm(self):
        assert gamma_change(np.array([2.0, 1.0]), np.array([1.0, 1.0])) == 1.0

    @pytest.mark.parametrize("kwargs", [{"lam": 0}, {"epsilon": -1}, {"max_iterations": 0},
                                        {"dictionary_kind": "x"}, {"oversampling": 0.5}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            SblConfig(**kwargs)
