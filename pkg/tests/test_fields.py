import numpy as np
import pytest

import koopflow as kf
from koopflow.errors import ConfigError
from koopflow.fields import Example, cell_centers, forcing_factor


class TestMakeDomain:
    def test_sd_mask_split(self):
        dom = kf.make_domain("sd", 96, 96)
        rows_free = int(dom.mask[:, 0].sum())
        assert rows_free == 48
        assert int((1 - dom.mask[:, 0]).sum()) == 48

    def test_nsd_small_grid(self):
        dom = kf.make_domain("nsd", 4, 4)
        # free flow occupies the bottom quarter of the y extent
        assert int(dom.mask[:, 0].sum()) == 1
        assert dom.mask[0, 0] == 1.0 and dom.mask[1, 0] == 0.0

    def test_mask_complementarity(self):
        for ex, h, w in [("sd", 17, 31), ("nsd", 23, 8), ("forced", 12, 12)]:
            dom = kf.make_domain(ex, h, w)
            free = int((dom.mask > 0.5).sum())
            porous = int((dom.mask < 0.5).sum())
            assert free + porous == h * w

    def test_degenerate_grid(self):
        with pytest.raises(ConfigError):
            kf.make_domain("sd", 0, 96)

    def test_unknown_example(self):
        with pytest.raises(ConfigError):
            kf.make_domain("taylor_green", 8, 8)

    def test_geometry_ranges(self):
        sd = kf.make_domain("sd", 8, 8)
        assert sd.x_range == (0.0, np.pi) and sd.y_range == (-1.0, 1.0)
        nsd = kf.make_domain("nsd", 8, 8)
        assert nsd.x_range == (0.0, 1.0) and nsd.y_range == (-0.25, 0.75)
        assert nsd.interface_y == 0.0


class TestExactSolutions:
    # expected values frozen from symbolic evaluation of the closed forms
    def test_sd_head_point(self):
        assert kf.eval_exact_sd(np.pi / 2, 0.5, 0.0).phi == pytest.approx(
            1.0421906109874947, rel=1e-12)

    def test_sd_u1_point(self):
        assert kf.eval_exact_sd(0.0, -0.25, 0.0).u1 == pytest.approx(
            -0.31830988618379067, rel=1e-12)

    def test_sd_u2_point(self):
        assert kf.eval_exact_sd(np.pi / 2, -0.5, 0.0).u2 == pytest.approx(
            -1.8986788163576622, rel=1e-12)

    def test_sd_head_vanishes_on_interface(self):
        for x in (0.3, 1.0, 2.5):
            for t in (0.0, 0.7, 3.0):
                assert kf.eval_exact_sd(x, 0.0, t).phi == 0.0

    def test_side_restriction(self):
        above = kf.eval_exact_sd(1.0, 0.5, 0.2)
        assert above.u1 == above.u2 == above.p == 0.0 and above.phi != 0.0
        below = kf.eval_exact_sd(1.0, -0.5, 0.2)
        assert below.phi == 0.0 and below.u1 != 0.0

    def test_sd_rejects_bad_k_and_domain(self):
        with pytest.raises(ConfigError):
            kf.eval_exact_sd(1.0, 0.5, 0.0, k=0.0)
        with pytest.raises(ConfigError):
            kf.eval_exact_sd(4.0, 0.5, 0.0)  # x > pi

    def test_nsd_head_point(self):
        assert kf.eval_exact_nsd(0.5, 0.5, 0.0).phi == pytest.approx(
            0.5707963267948966, rel=1e-12)

    def test_nsd_u1_point(self):
        assert kf.eval_exact_nsd(1.0, -0.25, 0.0).u1 == pytest.approx(
            1.3465254166877415, rel=1e-12)

    def test_nsd_quarter_period_zero(self):
        s = kf.eval_exact_nsd(0.37, 0.21, 0.25)
        for v in (s.u1, s.u2, s.p, s.phi):
            assert v == pytest.approx(0.0, abs=1e-15)

    def test_forced_zero_at_start(self):
        s = kf.eval_forced_field(0.5, -0.1, 0.0, f=2.5, ramp_T=0.4)
        assert s.u1 == s.u2 == s.p == s.phi == 0.0

    def test_forced_factor_after_ramp(self):
        f, ramp_T = 2.5, 0.4
        expect = 1.0 + 0.4 * np.sin(2 * np.pi * f * ramp_T)
        assert forcing_factor(ramp_T, f, ramp_T) == pytest.approx(expect, rel=1e-12)

    def test_forced_factor_periodic_past_ramp(self):
        f, ramp_T = 2.5, 0.4
        for t in (0.5, 0.91, 1.7):
            assert forcing_factor(t, f, ramp_T) == pytest.approx(
                forcing_factor(t + 1.0 / f, f, ramp_T), abs=1e-12)


class TestTemporalFactorization:
    def test_sd_decay_structure(self):
        dom = kf.make_domain("sd", 24, 24)
        base = kf.fields.eval_grid(dom, 0.0)
        for t in (0.3, 1.0, 2.7):
            now = kf.fields.eval_grid(dom, t)
            assert np.max(np.abs(now - base * np.exp(-t))) < 1e-14

    def test_nsd_periodic_structure(self):
        dom = kf.make_domain("nsd", 24, 24)
        base = kf.fields.eval_grid(dom, 0.0)
        for t in (0.15, 0.6, 1.8):
            now = kf.fields.eval_grid(dom, t)
            assert np.max(np.abs(now - base * np.cos(2 * np.pi * t))) < 1e-14


class TestGenerateDataset:
    def test_snapshot_counts(self):
        dom = kf.make_domain("sd", 16, 16)
        ds = kf.generate_dataset(dom, 0.0, 2.0, 0.1, 1.0)
        assert len(ds) == 21 and ds.n_train == 11

    def test_five_step_training_window(self):
        dom = kf.make_domain("sd", 16, 16)
        ds = kf.generate_dataset(dom, 0.0, 1.0, 0.2, 1.0)
        assert len(ds) == 6

    def test_zero_dt_rejected(self):
        dom = kf.make_domain("sd", 16, 16)
        with pytest.raises(ConfigError):
            kf.generate_dataset(dom, 0.0, 1.0, 0.0, 1.0)

    def test_non_divisible_horizon_warns(self):
        dom = kf.make_domain("sd", 16, 16)
        with pytest.warns(UserWarning, match="not a multiple"):
            ds = kf.generate_dataset(dom, 0.0, 1.05, 0.2, 1.0)
        assert len(ds) == 6  # rounds down

    def test_uniform_strictly_increasing_times(self):
        dom = kf.make_domain("nsd", 16, 16)
        ds = kf.generate_dataset(dom, 0.0, 2.0, 0.05, 1.0)
        steps = np.diff(ds.times)
        assert np.all(steps > 0)
        assert np.allclose(steps, 0.05, atol=1e-12)

    def test_grid_matches_point_evaluator(self):
        dom = kf.make_domain("nsd", 12, 12)
        ds = kf.generate_dataset(dom, 0.0, 0.4, 0.2, 0.4)
        x, y = cell_centers(dom)
        i, j = 3, 7  # porous row
        s = kf.eval_exact_nsd(x[j], y[i], 0.2)
        assert ds.data[1, 3, i, j] == pytest.approx(s.phi, rel=1e-12)


class TestNormalize:
    def _ds(self, example="sd"):
        dom = kf.make_domain(example, 16, 16)
        return kf.generate_dataset(dom, 0.0, 2.0, 0.1, 1.0)

    def test_unit_max_on_training_window(self):
        ds = kf.normalize(self._ds())
        amp = np.max(np.abs(ds.data[: ds.n_train]), axis=(0, 2, 3))
        assert np.allclose(amp[[0, 1, 3]], 1.0, atol=1e-12)

    def test_pressure_channel_flagged_zero(self):
        ds = kf.normalize(self._ds("sd"))
        assert ds.zero_channels[2]
        assert ds.norm_scale[2] == 1.0

    def test_nsd_has_no_zero_channels(self):
        ds = kf.normalize(self._ds("nsd"))
        assert not ds.zero_channels.any()

    def test_idempotent(self):
        once = kf.normalize(self._ds())
        twice = kf.normalize(once)
        assert np.array_equal(once.data, twice.data)
        assert np.array_equal(once.norm_scale, twice.norm_scale)

    def test_empty_training_window_rejected(self):
        dom = kf.make_domain("sd", 8, 8)
        ds = kf.generate_dataset(dom, 0.0, 1.0, 0.1, 1.0)
        ds.times = ds.times + 5.0  # push every snapshot past the horizon
        with pytest.raises(ConfigError):
            kf.normalize(ds)

    def test_scales_recover_raw_data(self):
        raw = self._ds("nsd")
        norm = kf.normalize(raw)
        rebuilt = norm.data * norm.norm_scale[:, None, None]
        assert np.max(np.abs(rebuilt - raw.data)) < 1e-12


class TestInterfaceResiduals:
    @pytest.mark.parametrize("example,t", [("sd", 0.3), ("nsd", 0.0),
                                           ("sd", 1.7), ("nsd", 0.42)])
    def test_residuals_vanish(self, example, t):
        rep = kf.interface_residuals(example, t, 100)
        assert rep.flux_max <= 1e-12
        assert rep.stress_max <= 1e-12

    def test_random_sampling(self):
        rep = kf.interface_residuals("sd", 0.9, 250, seed=11)
        assert rep.n_points == 250
        assert rep.flux_max <= 1e-12 and rep.stress_max <= 1e-12

    def test_zero_at_left_edge(self):
        # every field carries a sin(x) factor, so x = 0 is exactly quiescent
        rep = kf.interface_residuals("sd", 0.5, 1, xs=[0.0])
        assert rep.flux_max == 0.0 and rep.stress_max == 0.0

    def test_forced_has_no_interface_contract(self):
        with pytest.raises(ConfigError):
            kf.interface_residuals("forced", 0.1, 10)
