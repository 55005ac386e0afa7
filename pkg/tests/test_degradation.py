import numpy as np
import pytest

from fdbridge.degradation import (
    ProcessConfig,
    averaging_corrupt,
    corrupt,
    export_trajectory,
    per_step_count,
    radius_threshold,
    sample_trajectory,
    step_counts,
)
from fdbridge.errors import ConfigError, TrajectoryError
from fdbridge.fileio import read_json, read_kmsk
from fdbridge.grid import dft2, radius_map
from fdbridge.phantoms import PhantomSpec, make_phantom
from fdbridge.rng import substream

from conftest import rand_image


class TestRadiusThreshold:
    def test_start_is_r_max(self):
        assert radius_threshold(0, 64, 4.0, 10.0) == pytest.approx(10.0)

    def test_endpoint_r_prime_4(self):
        # R'^(-1/2) = 1/2 at the training horizon
        assert radius_threshold(64, 64, 4.0, 10.0) == pytest.approx(5.0)

    def test_linear_midpoint(self):
        assert radius_threshold(32, 64, 4.0, 10.0) == pytest.approx(7.5)

    def test_extrapolates_and_clamps(self):
        assert radius_threshold(96, 64, 4.0, 10.0) == pytest.approx(2.5)
        assert radius_threshold(10_000, 64, 4.0, 10.0) == 0.0

    def test_rejects_bad_r_prime(self):
        with pytest.raises(ConfigError):
            radius_threshold(1, 64, 1.0, 10.0)


class TestPerStepCount:
    @pytest.mark.parametrize(
        "n_k,r_prime,t_f,expected",
        [(65536, 2.0, 1000, 32), (4096, 2.0, 64, 32), (4096, 4.0, 48, 64)],
    )
    def test_floor_expression(self, n_k, r_prime, t_f, expected):
        assert per_step_count(n_k, r_prime, t_f) == expected

    def test_zero_count_is_config_error(self):
        with pytest.raises(ConfigError, match="smaller T_f"):
            per_step_count(64, 2.0, 1000)


class TestStepCounts:
    def test_constant_with_final_adjustment(self):
        # N=100, R'=2 -> target 50, n = floor(50/7) = 7; last step absorbs the rest
        cfg = ProcessConfig(r_prime=2.0, t_f=7, seed=0)
        counts = step_counts(100, cfg, 7)
        assert counts[:-1].tolist() == [7] * 6
        assert counts.sum() == 50

    def test_log_schedule_hits_target(self):
        cfg = ProcessConfig(r_prime=2.0, t_f=16, step_count_schedule="log", seed=0)
        counts = step_counts(4096, cfg, 16)
        assert counts.sum() == 2048
        assert np.all(counts >= 1)
        assert counts[0] < counts[-1]  # log weights grow with t

    def test_extension_uses_constant_n(self):
        cfg = ProcessConfig(r_prime=2.0, t_f=8, seed=0)
        counts = step_counts(1024, cfg, 12)
        assert counts[8:].tolist() == [64] * 4


class TestSampleTrajectory:
    def test_keep_fraction_at_t_f(self):
        # R'=2 with n * T_f = N/2 exactly
        grid = radius_map(64, 64)
        cfg = ProcessConfig(r_prime=2.0, t_f=64, seed=9)
        traj = sample_trajectory(grid, cfg)
        assert traj.keep_count(64) == 2048
        assert traj.keep_count(64) / grid.n_components == pytest.approx(0.5)

    def test_determinism(self):
        grid = radius_map(32, 32)
        cfg = ProcessConfig(r_prime=2.0, t_f=16, seed=77)
        a = sample_trajectory(grid, cfg)
        b = sample_trajectory(grid, cfg)
        assert all(np.array_equal(x, y) for x, y in zip(a.sets, b.sets))
        assert all(np.array_equal(x, y) for x, y in zip(a.cumulative, b.cumulative))

    def test_scripted_draw_oracle_8x8(self):
        # independent re-enactment of the point process: n=1, four steps
        grid = radius_map(8, 8)
        cfg = ProcessConfig(r_prime=2.0, t_f=32, seed=5)
        traj = sample_trajectory(grid, cfg, t_total=4)
        assert traj.n == 1

        radius = grid.radius.ravel()
        removed = np.zeros(64, dtype=bool)
        removed[grid.dc_index] = True
        expected_sets = []
        for t in range(1, 5):
            rbar = radius_threshold(t, 32, 2.0, grid.r_max)
            eligible = np.flatnonzero(~removed & (radius > rbar))
            if eligible.size < 1:
                remaining = np.flatnonzero(~removed)
                cutoff = np.partition(radius[remaining], remaining.size - 1)[remaining.size - 1]
                eligible = remaining[radius[remaining] >= cutoff]
            pick = np.sort(substream(5, "degradation", t).choice(eligible, size=1, replace=False))
            removed[pick] = True
            expected_sets.append(pick)

        assert all(np.array_equal(a, b) for a, b in zip(traj.sets, expected_sets))
        flat = np.concatenate(traj.sets)
        assert len(flat) == len(set(flat.tolist()))  # disjoint singletons
        assert traj.keep_count(4) == 60

    def test_disjoint_and_monotone(self):
        grid = radius_map(32, 32)
        cfg = ProcessConfig(r_prime=4.0, t_f=12, seed=3)
        traj = sample_trajectory(grid, cfg)
        seen = set()
        for t, s in enumerate(traj.sets, start=1):
            assert not (seen & set(s.tolist()))
            seen.update(s.tolist())
            prev = traj.cumulative[t - 1]
            cur = traj.cumulative[t]
            assert np.all(cur <= prev)
            assert prev.sum() - cur.sum() == len(s)

    def test_radius_discipline_on_unrelaxed_steps(self):
        grid = radius_map(48, 48)
        cfg = ProcessConfig(r_prime=8.0, t_f=12, seed=21)
        traj = sample_trajectory(grid, cfg)
        radius = grid.radius.ravel()
        for t, (s, relaxed) in enumerate(zip(traj.sets, traj.relaxed), start=1):
            if not relaxed:
                assert np.all(radius[s] > traj.thresholds[t - 1])

    def test_dc_never_removed(self):
        grid = radius_map(16, 16)
        cfg = ProcessConfig(r_prime=2.0, t_f=4, density="uniform", seed=1)
        traj = sample_trajectory(grid, cfg)
        assert grid.dc_index not in np.concatenate(traj.sets)
        assert traj.cumulative[-1].ravel()[grid.dc_index]

    def test_infeasible_budget_rejected(self):
        grid = radius_map(8, 8)
        with pytest.raises(TrajectoryError):
            # would need to remove 32 * 4 = 128 > 63 components
            sample_trajectory(grid, ProcessConfig(r_prime=2.0, t_f=1, seed=0), t_total=4)

    def test_energy_decomposition(self):
        grid = radius_map(32, 32)
        cfg = ProcessConfig(r_prime=2.0, t_f=8, seed=13)
        traj = sample_trajectory(grid, cfg)
        x0 = rand_image(32, 32, seed=8)
        spec = dft2(x0)
        total = np.sum(np.abs(spec) ** 2)
        for t in (1, 4, 8):
            keep = traj.cumulative[t]
            kept = np.sum(np.abs(spec[keep]) ** 2)
            dropped = np.sum(np.abs(spec[~keep]) ** 2)
            assert abs(total - (kept + dropped)) <= 1e-10 * total

    def test_operator_norm_bound(self):
        grid = radius_map(16, 16)
        traj = sample_trajectory(grid, ProcessConfig(r_prime=2.0, t_f=4, seed=2))
        for i in range(100):
            x = rand_image(16, 16, seed=i)
            t = 1 + i % 4
            assert np.linalg.norm(corrupt(x, traj, t)) <= np.linalg.norm(x) * (1 + 1e-12)


class TestCorrupt:
    def test_t_zero_is_identity(self):
        grid = radius_map(32, 32)
        traj = sample_trajectory(grid, ProcessConfig(r_prime=2.0, t_f=8, seed=0))
        x0 = make_phantom(PhantomSpec(32, 32, seed=4))
        out = corrupt(x0, traj, 0)
        assert np.linalg.norm(out - x0) <= 1e-12 * np.linalg.norm(x0)

    def test_idempotence(self):
        grid = radius_map(32, 32)
        traj = sample_trajectory(grid, ProcessConfig(r_prime=2.0, t_f=8, seed=0))
        x0 = rand_image(32, 32, seed=5)
        once = corrupt(x0, traj, 5)
        twice = corrupt(once, traj, 5)
        assert np.linalg.norm(twice - once) <= 1e-12 * np.linalg.norm(once)

    def test_t_out_of_range(self):
        grid = radius_map(32, 32)
        traj = sample_trajectory(grid, ProcessConfig(r_prime=2.0, t_f=8, seed=0))
        with pytest.raises(ValueError):
            corrupt(rand_image(32, 32, 0), traj, 9)


class TestAveragingCorrupt:
    def test_endpoints_and_midpoint(self):
        x0 = rand_image(8, 8, seed=1)
        xs = rand_image(8, 8, seed=2)
        assert np.array_equal(averaging_corrupt(x0, xs, 0, 10), x0)
        assert np.array_equal(averaging_corrupt(x0, xs, 10, 10), xs)
        mid = averaging_corrupt(x0, xs, 5, 10)
        assert np.allclose(mid, 0.5 * x0 + 0.5 * xs)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            averaging_corrupt(rand_image(8, 8, 1), rand_image(8, 9, 2), 1, 4)


def test_export_trajectory(tmp_path):
    grid = radius_map(16, 16)
    cfg = ProcessConfig(r_prime=2.0, t_f=4, seed=10)
    traj = sample_trajectory(grid, cfg)
    manifest = export_trajectory(traj, cfg, tmp_path, steps=[0, 2, 4])
    stored = read_json(tmp_path / "trajectory.json")
    assert stored["R_prime"] == 2.0
    assert stored["T_f"] == 4 and stored["T_total"] == 4
    assert stored["n"] == traj.n
    assert stored["step_counts"] == [int(c) for c in traj.counts]
    for t in (0, 2, 4):
        mask = read_kmsk(tmp_path / manifest["mask_files"][str(t)])
        assert np.array_equal(mask, traj.cumulative[t])
