import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcsloc.errors import ConfigError, DomainError, FormatError, ValidationError
from mcsloc.locmap import (LinkAdaptation, McsMap, RadioEnvironment, build_map, coarsen_index,
                           draw_trial_conditions, locate, map_svg, merge_tiles, score_localization,
                           simulate_environment, sinr_to_mcs)


def brute_locate(counts, obs, alpha):
    """Loop over every tile in row-major order and keep the first strict maximum."""
    rows, cols, k = counts.shape
    best, best_rc = -math.inf, (0, 0)
    for r in range(rows):
        for c in range(cols):
            total = counts[r, c].sum()
            s = 0.0
            for o in obs:
                p = (counts[r, c, o - 8] + alpha) / (total + k * alpha)
                s += math.log(p) if p > 0 else -math.inf
            if s > best:
                best, best_rc = s, (r, c)
    return best_rc


def random_map(rng, rows=6, cols=9, high=20):
    counts = rng.integers(0, high, (rows, cols, 9))
    counts[..., 0] += (counts.sum(axis=2) == 0)
    return McsMap(counts)


class TestLinkAdaptation:
    def test_examples(self):
        assert sinr_to_mcs(-10) == 8
        assert sinr_to_mcs(100) == 16
        assert sinr_to_mcs(2 + 4.5 * 2) == 12

    def test_vectorized(self):
        np.testing.assert_array_equal(sinr_to_mcs(np.array([1.9, 2.0, 3.99, 4.0])), [8, 8, 8, 9])

    @given(st.floats(-50, 80), st.floats(-50, 80))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert sinr_to_mcs(lo) <= sinr_to_mcs(hi)

    def test_invalid(self):
        with pytest.raises(ConfigError):
            LinkAdaptation(step_db=0)


class TestBuildMap:
    def test_examples(self):
        m = build_map(1, 2, [[[10, 12], [8, 8, 16]]])
        assert m.tile(0, 0).mean_mcs == 11.0
        assert m.tile(0, 1).mean_mcs == pytest.approx(10.667, abs=1e-3)
        assert m.tile(0, 1).mean_mcs == pytest.approx(32 / 3, abs=1e-9)
        const = build_map(6, 9, [[[9] * 3 for _ in range(9)] for _ in range(6)])
        assert np.all(const.mean_grid() == 9.0)

    def test_empty_tile_named(self):
        obs = [[[9] for _ in range(3)] for _ in range(2)]
        obs[1][2] = []
        with pytest.raises(ValidationError, match=r"\(1, 2\)"):
            build_map(2, 3, obs)

    def test_out_of_class(self):
        with pytest.raises(DomainError):
            build_map(1, 1, [[[7]]])

    def test_tiles_positions(self):
        m = random_map(np.random.default_rng(0))
        assert all((t.row, t.col) == divmod(i, 9) for i, t in enumerate(m.tiles()))
        assert m.n_tiles == 54

    def test_immutable(self):
        m = random_map(np.random.default_rng(0))
        with pytest.raises(ValueError):
            m.counts[0, 0, 0] = 5

    def test_negative_counts(self):
        c = np.zeros((1, 1, 9), int)
        c[0, 0, 3] = -1
        with pytest.raises(ValidationError):
            McsMap(c)

    def test_json_round_trip(self, tmp_path):
        m = random_map(np.random.default_rng(1))
        m.save(tmp_path / "m.json")
        assert McsMap.load(tmp_path / "m.json") == m
        d = m.to_dict()
        assert set(d) == {"rows", "cols", "tile_size_m", "tiles"}
        assert set(d["tiles"][0]) == {"row", "col", "histogram", "mean_mcs"}
        (tmp_path / "bad.json").write_text("{\"rows\": 1}")
        with pytest.raises(FormatError):
            McsMap.load(tmp_path / "bad.json")

    def test_svg_has_one_rect_per_tile(self):
        svg = map_svg(random_map(np.random.default_rng(2)))
        assert svg.count('<rect class="tile"') == 54


class TestLocate:
    def test_unique_tile(self):
        counts = np.zeros((6, 9, 9), int)
        counts[..., 0] = 5
        counts[3, 4, 13 - 8] = 1
        assert locate(McsMap(counts), [13])[:2] == (3, 4)

    def test_uniform_tie(self):
        counts = np.tile(np.arange(1, 10), (6, 9, 1))
        for obs in ([8], [16, 12], [9, 9, 9]):
            assert locate(McsMap(counts), obs)[:2] == (0, 0)

    def test_empty_obs(self):
        with pytest.raises(DomainError):
            locate(random_map(np.random.default_rng(0)), [])

    def test_bad_obs(self):
        with pytest.raises(DomainError):
            locate(random_map(np.random.default_rng(0)), [17])

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(2024)
        mismatches = 0
        for _ in range(300):
            m = random_map(rng)
            obs = rng.integers(8, 17, 5).tolist()
            mismatches += locate(m, obs)[:2] != brute_locate(m.counts, obs, 1.0)
        assert mismatches == 0

    def test_score_value(self):
        m = build_map(1, 2, [[[8, 8, 9], [9]]])
        _, _, s = locate(m, [8, 9], alpha=1.0)
        assert s == pytest.approx(math.log(3 / 12) + math.log(2 / 12))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 7))
    def test_scaling_invariance_alpha0(self, seed, factor):
        rng = np.random.default_rng(seed)
        counts = rng.integers(1, 6, (6, 9, 9))
        obs = rng.integers(8, 17, 4).tolist()
        a = locate(McsMap(counts), obs, alpha=0.0)[:2]
        b = locate(McsMap(counts * factor), obs, alpha=0.0)[:2]
        assert a == b


class TestMerge:
    def test_shapes(self):
        m = random_map(np.random.default_rng(0))
        assert merge_tiles(m, 2).shape == (3, 5)
        assert merge_tiles(m, 1) == m
        assert merge_tiles(m, 4).shape == (2, 3)

    def test_remainder_absorbed(self):
        counts = np.zeros((5, 5, 9), int)
        counts[..., 0] = 1
        merged = merge_tiles(McsMap(counts), 2)
        assert merged.shape == (3, 3)
        assert merged.counts[2, 2, 0] == 1 and merged.counts[0, 0, 0] == 4

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 9), st.integers(1, 11), st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_conservation(self, rows, cols, factor, seed):
        m = random_map(np.random.default_rng(seed), rows, cols)
        merged = merge_tiles(m, factor)
        assert merged.counts.sum() == m.counts.sum()
        assert (merged.totals() > 0).all()
        np.testing.assert_array_equal(merged.counts.sum(axis=(0, 1)), m.counts.sum(axis=(0, 1)))

    def test_merged_mean(self):
        m = build_map(2, 2, [[[8], [10]], [[12], [16]]])
        assert merge_tiles(m, 2).tile(0, 0).mean_mcs == 11.5

    def test_bad_factor(self):
        with pytest.raises(DomainError):
            merge_tiles(random_map(np.random.default_rng(0)), 0)


class TestCoarsen:
    def test_examples(self):
        assert coarsen_index(5, 8, 2, (6, 9)) == (2, 4)
        assert coarsen_index(3, 7, 1, (6, 9)) == (3, 7)
        assert coarsen_index(0, 0, 3, (6, 9)) == (0, 0)

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            coarsen_index(6, 0, 2, (6, 9))

    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 8), st.integers(0, 5), st.integers(0, 8)),
                    min_size=1, max_size=60), st.integers(1, 5))
    def test_accuracy_monotone(self, pairs, factor):
        true = [(a, b) for a, b, _, _ in pairs]
        pred = [(c, d) for _, _, c, d in pairs]
        before = score_localization(true, pred).exact
        after = score_localization([coarsen_index(*t, factor) for t in true],
                                   [coarsen_index(*p, factor) for p in pred]).exact
        assert after >= before


class TestEnvironment:
    def test_deterministic(self):
        env = RadioEnvironment(seed=3)
        assert simulate_environment(env, 6, 9, 20) == simulate_environment(env, 6, 9, 20)
        assert simulate_environment(env, 6, 9, 20) != simulate_environment(RadioEnvironment(seed=4), 6, 9, 20)

    def test_base_station_tile(self):
        env = RadioEnvironment(bs_position=(4.5, 2.5), sinr_ref_db=40, shadowing_sigma_db=0)
        m = simulate_environment(env, 6, 9, 5)
        assert m.tile(2, 4).mean_mcs == 16

    @pytest.mark.parametrize("bs", [(4.5, 2.5), (-1.5, -0.5), (0.2, 5.9), (10.0, 3.0)])
    def test_monotone_in_distance(self, bs):
        env = RadioEnvironment(bs_position=bs, sinr_ref_db=30, path_loss_exponent=2.5, shadowing_sigma_db=0)
        m = simulate_environment(env, 6, 9, 3)
        d = env.distance_grid(6, 9).ravel()
        means = m.mean_grid().ravel()
        order = np.argsort(d, kind="stable")
        assert all(b <= a for a, b in zip(means[order], means[order][1:]))

    def test_coordinates(self):
        env = RadioEnvironment(bs_position=(0.0, 0.0))
        d = env.distance_grid(6, 9)
        assert d[0, 0] == pytest.approx(math.hypot(0.5, 0.5))
        assert d[5, 8] == pytest.approx(math.hypot(8.5, 5.5))

    def test_trial_stream_independent(self):
        env = RadioEnvironment(seed=1)
        survey = env.sample_sinr(6, 9, 10, 0x4D4150)
        sinr, mcs = draw_trial_conditions(env, 6, 9, 10)
        assert not np.array_equal(survey, sinr)
        assert mcs.shape == (6, 9, 10) and mcs.min() >= 8 and mcs.max() <= 16

    @pytest.mark.parametrize("kw", [{"path_loss_exponent": 0}, {"shadowing_sigma_db": -1},
                                    {"bs_position": (1.0,)}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            RadioEnvironment(**kw)

    def test_obs_per_tile(self):
        with pytest.raises(DomainError):
            simulate_environment(RadioEnvironment(), 6, 9, 0)


def test_score_localization():
    s = score_localization([(0, 0), (2, 2), (5, 8)], [(0, 0), (3, 3), (3, 8)])
    assert s.exact == pytest.approx(1 / 3) and s.within_one == pytest.approx(2 / 3) and s.n == 3
