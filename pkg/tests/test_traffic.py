import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pusense import seeding
from pusense.traffic import (BUSY, IDLE, TABLE_MATCH_TOL, TABLE_ROWS, ActivityTrace, ChannelProfile,
                             GpParams, PlanError, SpectrumPlan, build_channel_plan,
                             duty_cycle_of, generate_trace, gp_moments, sample_gp,
                             sample_occupancy, solve_scale_for_dc)

from oracles import gp_cdf_direct, gp_quantile_by_root

DC50 = GpParams(0.5, 0.5, 0.01)
DEFAULT_GROUPS = [(0.01, 59), (0.05, 30), (0.1, 21), (0.3, 9), (0.5, 4), (0.7, 3), (0.9, 2)]


class TestGpParams:
    @pytest.mark.parametrize("args", [(0.0, 1.0, 0.1), (0.5, 0.0, 0.1), (0.5, 1.0, 0.5),
                                      (-1.0, 1.0, 0.0)])
    def test_invalid_rejected(self, args):
        with pytest.raises(ValueError):
            GpParams(*args)

    def test_bounded_support(self):
        p = GpParams(0.5, 1.0, -0.25)
        assert p.upper == pytest.approx(4.5)
        assert sample_gp(p, 1 - 1e-15) <= p.upper


class TestSampleGp:
    def test_zero_gives_location(self):
        assert sample_gp(DC50, 0.0) == 0.5

    def test_median(self):
        # oracle: root of the CDF, 0.8477775028...
        assert sample_gp(DC50, 0.5) == pytest.approx(0.8477775028359394, abs=1e-12)

    def test_exponential_limit(self):
        p = GpParams(0.5, 0.5, 0.0)
        assert sample_gp(p, 0.5) == pytest.approx(0.5 + 0.5 * math.log(2), abs=1e-15)

    @pytest.mark.parametrize("shape", [1e-9, -1e-9])
    def test_small_shape_continuity(self, shape):
        u = np.linspace(0.01, 0.99, 99)
        ref = 0.5 - 0.5 * np.log1p(-u)
        got = sample_gp(GpParams(0.5, 0.5, shape), u)
        assert np.max(np.abs(got - ref) / ref) < 1e-6

    @settings(max_examples=200, deadline=None)
    @given(mu=st.floats(0.01, 5), lam=st.floats(0.01, 5),
           a=st.floats(-0.9, 0.49).filter(lambda x: abs(x) > 1e-6),
           u=st.floats(1e-6, 1 - 1e-6))
    def test_inverse_cdf_roundtrip(self, mu, lam, a, u):
        t = sample_gp(GpParams(mu, lam, a), u)
        assert gp_cdf_direct(t, mu, lam, a) == pytest.approx(u, abs=1e-10)

    def test_matches_root_finder(self):
        for u in (0.1, 0.37, 0.9, 0.999):
            assert sample_gp(DC50, u) == pytest.approx(
                gp_quantile_by_root(u, 0.5, 0.5, 0.01), rel=1e-12)

    def test_moment_convergence(self):
        rng = np.random.default_rng(7)
        x = sample_gp(DC50, rng.random(1_000_000))
        mean, _ = gp_moments(DC50)
        se = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean() - mean) < 3 * se


class TestMoments:
    def test_dc50_row(self):
        mean, var = gp_moments(DC50)
        assert mean == pytest.approx(1.005050505050505, abs=1e-12)
        assert var == pytest.approx(0.26028164556303085, abs=1e-12)

    def test_dc29_busy_row(self):
        mean, _ = gp_moments(GpParams(0.5, 0.35, 0.0094))
        assert mean == pytest.approx(0.8533212194629517, abs=1e-12)

    def test_zero_scale_boundary(self):
        # zero scale cannot be constructed, so check the limit numerically
        mean, var = gp_moments(GpParams(0.5, 1e-300, 0.01))
        assert mean == pytest.approx(0.5)
        assert var == pytest.approx(0.0)


class TestDutyCycle:
    def test_symmetric_row(self):
        assert duty_cycle_of(*TABLE_ROWS[0.5]) == 0.5

    @pytest.mark.parametrize("row,expected", [(0.29, 0.29179626771105033),
                                              (0.71, 0.7130069397275755)])
    def test_tabled_rows(self, row, expected):
        assert duty_cycle_of(*TABLE_ROWS[row]) == pytest.approx(expected, abs=1e-12)
        assert duty_cycle_of(*TABLE_ROWS[row]) == pytest.approx(row, abs=5e-3)


class TestSolveScale:
    def test_matches_dc50_row(self):
        busy, idle = solve_scale_for_dc(0.5, 0.5, 0.01, 2.0101)
        assert busy.scale == pytest.approx(0.5, abs=1e-5)
        assert idle.scale == pytest.approx(0.5, abs=1e-5)

    def test_asymmetric(self):
        busy, idle = solve_scale_for_dc(0.9, 0.5, 0.01, 6.0)
        assert busy.scale == pytest.approx(4.851, abs=1e-12)
        assert idle.scale == pytest.approx(0.099, abs=1e-12)

    def test_infeasible(self):
        with pytest.raises(PlanError, match="busy mean"):
            solve_scale_for_dc(0.05, 0.5, 0.01, 1.9)

    @settings(max_examples=200, deadline=None)
    @given(psi=st.floats(0.01, 0.99), a=st.floats(-0.4, 0.45))
    def test_exact_inversion(self, psi, a):
        cycle = 1.2 / min(psi, 1 - psi)
        busy, idle = solve_scale_for_dc(psi, 0.5, a, cycle)
        assert duty_cycle_of(busy, idle) == pytest.approx(psi, abs=1e-12)


class TestPlan:
    def test_default_allocation(self):
        plan = build_channel_plan(128, DEFAULT_GROUPS, 0.1)
        assert sum(plan.group_counts) == 128
        assert len(plan.profiles) == 128
        assert abs(plan.mean_duty_cycle - 0.1) < 0.005
        # tabled rows used verbatim for the 0.3 / 0.5 / 0.7 groups
        by_group = {p.psi_group: p for p in plan.profiles}
        assert (by_group[0.3].busy, by_group[0.3].idle) == TABLE_ROWS[0.29]
        assert (by_group[0.7].busy, by_group[0.7].idle) == TABLE_ROWS[0.71]
        for p in plan.profiles:
            assert p.duty_cycle == pytest.approx(p.psi_group, abs=TABLE_MATCH_TOL + 1e-3)

    def test_two_identical_channels(self):
        plan = build_channel_plan(2, [(0.5, 2)], 0.5)
        assert plan.profiles[0].busy == plan.profiles[1].busy == DC50
        assert plan.profiles[0].idle == DC50

    def test_mean_violation_reports_achieved(self):
        with pytest.raises(PlanError, match="0.9000"):
            build_channel_plan(128, [(0.9, 128)], 0.1)

    def test_count_mismatch(self):
        with pytest.raises(PlanError):
            build_channel_plan(10, [(0.5, 4)], 0.5)

    def test_dict_roundtrip(self):
        plan = build_channel_plan(128, DEFAULT_GROUPS, 0.1)
        again = SpectrumPlan.from_dict(plan.to_dict())
        assert again.profiles == plan.profiles
        assert again.group_counts == plan.group_counts


def _profile(row=0.5, cid=0):
    return ChannelProfile(cid, row, *TABLE_ROWS[row])


class TestTrace:
    def test_short_span_single_period(self):
        tr = generate_trace(_profile(), 1e-3, np.random.default_rng(0))
        assert len(tr.durations) == 1

    @pytest.mark.parametrize("row", [0.29, 0.5, 0.71])
    def test_invariants(self, row):
        prof = _profile(row)
        tr = generate_trace(prof, 5000.0, np.random.default_rng(1))
        s = tr.states
        assert np.all(s[1:] != s[:-1])
        mus = np.where(s == BUSY, prof.busy.location, prof.idle.location)
        assert np.all(tr.durations >= mus)
        assert tr.durations.sum() >= tr.total_span
        assert tr.durations[:-1].sum() < tr.total_span

    @pytest.mark.parametrize("row,target,tol", [(0.5, 0.5, 0.01),
                                               (0.29, 0.29179626771105033, 0.015)])
    def test_busy_fraction(self, row, target, tol):
        fracs = []
        for seed in range(10):
            tr = generate_trace(_profile(row), 86400.0, seeding.stream(seed, "t", 0))
            d = tr.durations.copy()
            d[-1] -= d.sum() - tr.total_span   # clip overhang
            fracs.append(d[tr.states == BUSY].sum() / tr.total_span)
        assert abs(np.mean(fracs) - target) < tol

    def test_longer_span_extends_shorter(self):
        a = generate_trace(_profile(), 3000.0, seeding.stream(3, "t", 0))
        b = generate_trace(_profile(), 9000.0, seeding.stream(3, "t", 0))
        assert a.start_state == b.start_state
        np.testing.assert_array_equal(a.durations, b.durations[:len(a.durations)])

    def test_csv_export(self):
        tr = ActivityTrace.from_periods(4, [("idle", 1.0), ("busy", 0.75)])
        buf = io.StringIO()
        tr.write_csv(buf)
        assert buf.getvalue().splitlines() == ["4,idle,1.0", "4,busy,0.75"]

    def test_non_alternating_rejected(self):
        with pytest.raises(ValueError):
            ActivityTrace.from_periods(0, [("idle", 1.0), ("idle", 1.0)])


class TestSampleOccupancy:
    def test_boundary_is_left_closed(self):
        tr = ActivityTrace.from_periods(0, [("idle", 1.0), ("busy", 1.0)])
        np.testing.assert_array_equal(sample_occupancy(tr, 0.5, 4), [0, 0, 1, 1])

    def test_single_busy(self):
        tr = ActivityTrace.from_periods(0, [("busy", 10.0)])
        np.testing.assert_array_equal(sample_occupancy(tr, 1.0, 3), [1, 1, 1])

    def test_short_busy_one_sample(self):
        tr = ActivityTrace.from_periods(0, [("idle", 0.6), ("busy", 0.6), ("idle", 5.0)])
        np.testing.assert_array_equal(sample_occupancy(tr, 0.5, 4), [0, 0, 1, 0])

    def test_out_of_range(self):
        tr = ActivityTrace.from_periods(0, [("busy", 1.0)])
        with pytest.raises(ValueError):
            sample_occupancy(tr, 0.5, 3)

    def test_matches_loop(self):
        tr = generate_trace(_profile(0.29), 200.0, np.random.default_rng(5))
        ends = np.cumsum(tr.durations)
        got = sample_occupancy(tr, 0.3, 600)
        for v in range(600):
            k = int(np.sum(ends <= v * 0.3))
            assert got[v] == tr.states[k]
        assert set(np.unique(got)) <= {IDLE, BUSY}
