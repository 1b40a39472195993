import numpy as np
import pytest
import scipy.linalg
import torch
from hypothesis import given, settings, strategies as st

import koopflow as kf
from koopflow.errors import ConfigError


class TestAssembly:
    def test_pure_rotation_block(self):
        gen = kf.BlockDiagGenerator(2, gamma=[0.0], omega=[2.0])
        assert np.allclose(kf.assemble(gen), [[0.0, -2.0], [2.0, 0.0]])

    def test_decay_block_via_softplus_inverse(self):
        gen = kf.BlockDiagGenerator(2, gamma=[1.0], omega=[0.0])
        assert np.allclose(kf.assemble(gen), [[-1.0, 0.0], [0.0, -1.0]],
                           atol=1e-12)

    def test_zero_dense_generator(self):
        gen = kf.DenseStableGenerator(3)
        assert np.array_equal(kf.assemble(gen), np.zeros((3, 3)))

    def test_odd_dimension_rejected(self):
        with pytest.raises(ConfigError):
            kf.BlockDiagGenerator(5)

    def test_dense_symmetric_part_nonpositive(self):
        rng = np.random.default_rng(3)
        gen = kf.DenseStableGenerator(12, tri=rng.standard_normal((12, 12)),
                                      skew=rng.standard_normal((12, 12)))
        A = kf.assemble(gen)
        S = 0.5 * (A + A.T)
        assert np.linalg.eigvalsh(S).max() <= 1e-10

    def test_softplus_inverse_round_trip(self):
        vals = np.array([1e-3, 0.1, 1.0, 7.5])
        raw = kf.softplus_inv(vals)
        assert np.allclose(np.logaddexp(0.0, raw), vals, rtol=1e-12)


class TestEvolve:
    def test_tau_zero_is_identity(self):
        rng = np.random.default_rng(0)
        g0 = rng.standard_normal(6)
        for gen in (kf.BlockDiagGenerator(6, gamma=[0.3, 1, 2], omega=[1, 2, 3]),
                    kf.DenseStableGenerator(6, tri=rng.standard_normal((6, 6)))):
            assert np.array_equal(kf.evolve(gen, g0, 0.0), g0)

    def test_quarter_turn(self):
        gen = kf.BlockDiagGenerator(2, gamma=[0.0], omega=[np.pi / 2])
        out = kf.evolve(gen, [1.0, 0.0], 1.0)
        assert np.allclose(out, [0.0, 1.0], atol=1e-12)

    def test_half_decay(self):
        gen = kf.BlockDiagGenerator(2, gamma=[np.log(2.0)], omega=[0.0])
        g0 = np.array([0.8, -0.6])
        assert np.allclose(kf.evolve(gen, g0, 1.0), g0 / 2, atol=1e-12)

    def test_negative_tau_rejected(self):
        gen = kf.BlockDiagGenerator(2)
        with pytest.raises(ValueError, match="forward"):
            kf.evolve(gen, [1.0, 0.0], -0.1)

    def test_non_finite_state_rejected(self):
        gen = kf.BlockDiagGenerator(2)
        with pytest.raises(ValueError, match="finite"):
            kf.evolve(gen, [np.nan, 0.0], 0.5)

    def test_closed_form_matches_dense_exponential(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            n = int(rng.integers(1, 9))
            gen = kf.BlockDiagGenerator(2 * n, gamma=rng.uniform(0, 3, n),
                                        omega=rng.uniform(-8, 8, n))
            tau = float(rng.uniform(0, 2))
            g0 = rng.standard_normal(2 * n)
            direct = scipy.linalg.expm(kf.assemble(gen) * tau) @ g0
            assert np.max(np.abs(kf.evolve(gen, g0, tau) - direct)) < 1e-12

    def test_semigroup_identity(self):
        rng = np.random.default_rng(5)
        gen = kf.DenseStableGenerator(8, tri=rng.standard_normal((8, 8)),
                                      skew=rng.standard_normal((8, 8)))
        g0 = rng.standard_normal(8)
        for t1, t2 in [(0.3, 0.7), (1.0, 2.5), (0.05, 0.05)]:
            one = kf.evolve(gen, g0, t1 + t2)
            two = kf.evolve(gen, kf.evolve(gen, g0, t1), t2)
            assert np.max(np.abs(one - two)) < 1e-10

    def test_recursive_matches_direct(self):
        gen = kf.BlockDiagGenerator(4, gamma=[0.2, 0.9], omega=[1.0, 3.0])
        g0 = np.array([1.0, -0.5, 0.3, 2.0])
        states = kf.evolve_recursive(gen, g0, 0.1, 12)
        assert states.shape == (12, 4)
        assert np.max(np.abs(states[-1] - kf.evolve(gen, g0, 1.2))) < 1e-10

    def test_recursive_single_step(self):
        gen = kf.BlockDiagGenerator(2, gamma=[0.5], omega=[1.0])
        g0 = np.array([1.0, 1.0])
        states = kf.evolve_recursive(gen, g0, 0.3, 1)
        assert np.array_equal(states[0], kf.evolve(gen, g0, 0.3))

    def test_rotation_preserves_norm(self):
        gen = kf.BlockDiagGenerator(6, gamma=[0.0, 0.0, 0.0], omega=[1, 2.5, -4])
        g0 = np.random.default_rng(1).standard_normal(6)
        for state in kf.evolve_recursive(gen, g0, 0.7, 10):
            assert abs(np.linalg.norm(state) - np.linalg.norm(g0)) < 1e-10

    def test_energy_dissipation_rate(self):
        # d/dt ||z||^2 = 2 z^T A z = 2 z^T S z; the skew part contributes zero
        rng = np.random.default_rng(9)
        tri = rng.standard_normal((10, 10))
        skew = rng.standard_normal((10, 10))
        gen = kf.DenseStableGenerator(10, tri=tri, skew=skew)
        A = kf.assemble(gen)
        S = -(np.tril(tri) @ np.tril(tri).T)
        for _ in range(20):
            z = rng.standard_normal(10)
            assert abs(2 * z @ A @ z - 2 * z @ S @ z) < 1e-10


class TestMatrixExponential:
    def test_against_scipy(self):
        rng = np.random.default_rng(17)
        for scale in (0.01, 1.0, 10.0):
            A = rng.standard_normal((20, 20)) * scale
            ours = kf.expm(torch.as_tensor(A)).numpy()
            ref = scipy.linalg.expm(A)
            assert np.max(np.abs(ours - ref)) <= 1e-12 * max(np.max(np.abs(ref)), 1.0)

    def test_zero_matrix(self):
        out = kf.expm(torch.zeros(4, 4, dtype=torch.float64)).numpy()
        assert np.max(np.abs(out - np.eye(4))) < 1e-15

    def test_differentiable(self):
        A = torch.eye(3, dtype=torch.float64, requires_grad=True)
        loss = kf.expm(A * 0.5).sum()
        loss.backward()
        assert torch.isfinite(A.grad).all()

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            kf.expm(torch.zeros(2, 3, dtype=torch.float64))


class TestSpectralNorm:
    def test_single_block_norm(self):
        gen = kf.BlockDiagGenerator(2, gamma=[1.0], omega=[5.0])
        assert kf.spectral_norm_expm(gen, 1.0) == pytest.approx(np.exp(-1.0),
                                                                rel=1e-9)

    def test_identity_at_t_zero(self):
        gen = kf.BlockDiagGenerator(4, gamma=[0.2, 2.0], omega=[1.0, -1.0])
        assert kf.spectral_norm_expm(gen, 0.0) == pytest.approx(1.0, abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_contraction_property(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 7))
        block = kf.BlockDiagGenerator(2 * n, gamma=rng.uniform(0, 5, n),
                                      omega=rng.uniform(-20, 20, n))
        d = int(rng.integers(2, 13))
        dense = kf.DenseStableGenerator(
            d, tri=rng.standard_normal((d, d)) * rng.uniform(0.1, 2),
            skew=rng.standard_normal((d, d)) * rng.uniform(0.1, 4))
        for gen in (block, dense):
            for t in (0.1, 1.0, 10.0):
                assert kf.spectral_norm_expm(gen, t) <= 1.0 + 1e-9


class TestSpectrum:
    def test_block_eigenvalues_exact(self):
        gen = kf.BlockDiagGenerator(2, gamma=[1.0], omega=[2.0])
        lam = set(np.round(kf.spectrum(gen), 12))
        assert lam == {-1.0 + 2.0j, -1.0 - 2.0j}

    def test_dense_spectrum_in_left_half_plane(self):
        rng = np.random.default_rng(23)
        gen = kf.DenseStableGenerator(14, tri=rng.standard_normal((14, 14)),
                                      skew=3 * rng.standard_normal((14, 14)))
        assert kf.spectrum(gen).real.max() <= 1e-10

    def test_zero_generator_spectrum(self):
        assert np.array_equal(kf.spectrum(kf.DenseStableGenerator(5)),
                              np.zeros(5, dtype=complex))


class TestForcing:
    def _setup(self):
        gen = kf.BlockDiagGenerator(4, gamma=[0.5, 1.0], omega=[2.0, 6.0])
        head = kf.ForcingHead(4, freq=2.5)
        g0 = np.array([1.0, -1.0, 0.5, 0.25])
        return gen, head, g0

    def test_zero_head_degenerates_to_evolve(self):
        gen, head, g0 = self._setup()  # last layer starts at zero
        out = kf.forced_evolve(gen, head, g0, 0.0, 0.8)
        assert np.allclose(out, kf.evolve(gen, g0, 0.8), atol=1e-14)

    def test_at_anchor_time(self):
        gen, head, g0 = self._setup()
        torch.manual_seed(0)
        torch.nn.init.normal_(head.net[-1].weight)
        with torch.no_grad():
            drive = head(0.3).numpy()
        out = kf.forced_evolve(gen, head, g0, 0.3, 0.3)
        assert np.allclose(out, g0 + drive, atol=1e-14)

    def test_forced_term_periodic(self):
        gen, head, g0 = self._setup()
        torch.manual_seed(1)
        torch.nn.init.normal_(head.net[-1].weight)
        t = 0.37
        a = kf.forced_evolve(gen, head, g0, 0.0, t) - kf.evolve(gen, g0, t)
        tb = t + 1.0 / head.freq
        b = kf.forced_evolve(gen, head, g0, 0.0, tb) - kf.evolve(gen, g0, tb)
        assert np.max(np.abs(a - b)) < 1e-12

    def test_output_dimension(self):
        head = kf.ForcingHead(10, freq=1.0)
        assert head(0.2).shape == (10,)


class TestEdmdFit:
    def _pairs(self, A, M, dt, rng, sigma=0.0):
        K = scipy.linalg.expm(dt * A)
        G = rng.standard_normal((M, A.shape[0]))
        Gp = G @ K.T
        if sigma:
            G = G + sigma * rng.standard_normal(G.shape)
            Gp = Gp + sigma * rng.standard_normal(Gp.shape)
        return G, Gp

    def test_noiseless_recovery(self):
        rng = np.random.default_rng(31)
        tri = np.tril(rng.standard_normal((4, 4)))
        A = -(tri @ tri.T) * 0.4 + 0.3 * (lambda m: m - m.T)(rng.standard_normal((4, 4)))
        G, Gp = self._pairs(A, 50, 0.1, rng)
        assert np.linalg.norm(kf.edmd_fit((G, Gp), 0.1) - A, "fro") < 1e-6

    def test_accepts_pair_list(self):
        rng = np.random.default_rng(8)
        A = -np.eye(3) * 0.5
        G, Gp = self._pairs(A, 30, 0.05, rng)
        pairs = list(zip(G, Gp))
        assert np.linalg.norm(kf.edmd_fit(pairs, 0.05) - A, "fro") < 1e-8

    def test_identity_dynamics_gives_zero(self):
        rng = np.random.default_rng(4)
        G = rng.standard_normal((40, 5))
        A = kf.edmd_fit((G, G), 0.1)
        assert np.linalg.norm(A, "fro") < 1e-10

    def test_rank_deficient_recommends_ridge(self):
        G = np.zeros((10, 4))
        G[:, 0] = np.arange(10)
        with pytest.raises(ValueError, match="ridge"):
            kf.edmd_fit((G, G), 0.1)
        kf.edmd_fit((G, G), 0.1, ridge=1e-6)  # regularized fit succeeds

    def test_small_dt_mode_bias_shrinks_with_dt(self):
        # (exp(dt A) - I)/dt = A + O(dt), so halving dt roughly halves the bias
        rng = np.random.default_rng(12)
        tri = np.tril(rng.standard_normal((4, 4)))
        A = -(tri @ tri.T)
        errs = []
        for dt in (0.2, 0.1, 0.05):
            G, Gp = self._pairs(A, 60, dt, rng)
            err = np.linalg.norm(kf.edmd_fit((G, Gp), dt, mode="smalldt") - A, "fro")
            errs.append(err)
        assert errs[2] < errs[1] < errs[0]
        assert errs[0] / errs[2] == pytest.approx(4.0, rel=0.35)
