import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biasaudit.calibration import KNOBS, Knob, calibrate
from biasaudit.errors import InvalidSpec
from biasaudit.metrics import BinaryLabel, partition
from biasaudit.scenarios import (
    CELLS,
    PRESET_PARAMS,
    SUBGROUP_TAG,
    ComponentDist,
    ScenarioId,
    ScenarioSpec,
    preset,
    sample_cells,
    sample_scenario,
    scenario_metrics,
    spec_metrics,
)


def small_spec(**counts):
    base = dict(n_bg_neg=10, n_bg_pos=10, n_sg_neg=5, n_sg_pos=5)
    base.update(counts)
    return ScenarioSpec(
        ComponentDist(0.3, 0.1), ComponentDist(0.7, 0.1), ComponentDist(0.4, 0.1), ComponentDist(0.8, 0.1), **base
    )


class TestPresets:
    def test_c_shares_b_distributions(self):
        b, c = preset("B"), preset("C")
        assert all(getattr(b, cell) == getattr(c, cell) for cell in CELLS)
        assert c.n_sg_pos == 4 * c.n_sg_neg

    def test_f_keeps_background_means(self):
        f = preset("F")
        assert f.sg_neg.mean == f.bg_neg.mean and f.sg_pos.mean == f.bg_pos.mean
        assert f.sg_neg.stddev > f.bg_neg.stddev

    def test_small_shift_below_large_shift(self):
        a, b = preset("A"), preset("B")
        assert a.sg_neg.mean - a.bg_neg.mean < b.sg_neg.mean - b.bg_neg.mean

    def test_d_mirrors_b(self):
        assert preset("D") == preset("B").mirrored()
        back = preset("D").mirrored()
        for cell in CELLS:
            a, b = getattr(back, cell), getattr(preset("B"), cell)
            assert a.mean == pytest.approx(b.mean) and a.upper == pytest.approx(b.upper)

    @pytest.mark.parametrize("sid", list(ScenarioId))
    def test_presets_validate(self, sid):
        preset(sid).validate()
        assert sid.description


class TestSampling:
    def test_counts_and_tags(self):
        data = sample_scenario(small_spec(), seed=3)
        assert len(data) == 30
        assert sum(SUBGROUP_TAG in e.subgroups for e in data) == 10
        assert sum(e.label is BinaryLabel.POSITIVE for e in data) == 15
        assert len({e.id for e in data}) == 30

    def test_deterministic(self):
        a = sample_scenario(small_spec(), seed=7)
        b = sample_scenario(small_spec(), seed=7)
        assert [(e.id, e.score) for e in a] == [(e.id, e.score) for e in b]
        c = sample_scenario(small_spec(), seed=8)
        assert [e.score for e in a] != [e.score for e in c]

    def test_cells_are_independent_streams(self):
        a = sample_cells(small_spec(), 5)
        b = sample_cells(small_spec(n_sg_neg=50), 5)
        assert np.array_equal(a["bg_neg"], b["bg_neg"])
        assert np.array_equal(a["sg_neg"], b["sg_neg"][:5])

    @given(
        st.floats(-1, 2),
        st.floats(0.01, 1),
        st.floats(0, 0.9),
        st.floats(0.01, 0.5),
    )
    @settings(max_examples=60)
    def test_scores_within_bounds(self, mean, sd, lower, width):
        dist = ComponentDist(mean, sd, lower, lower + width)
        spec = ScenarioSpec(dist, dist, dist, dist, 50, 50, 50, 50)
        for scores in sample_cells(spec, 1).values():
            assert np.all((scores >= dist.lower) & (scores <= dist.upper))
            assert np.all(np.isfinite(scores))

    def test_far_tail_truncation_is_finite(self):
        # support 20 standard deviations right of the mean
        dist = ComponentDist(0.0, 0.01, 0.2, 0.3)
        scores = sample_cells(ScenarioSpec(dist, dist, dist, dist, 100, 100, 100, 100), 0)["bg_neg"]
        assert np.all((scores >= 0.2) & (scores <= 0.3))

    def test_truncated_mean_matches_scipy(self):
        from scipy.stats import truncnorm

        dist = ComponentDist(0.25, 0.2, 0.0, 1.0)
        draws = sample_cells(ScenarioSpec(dist, dist, dist, dist, 200_000, 1, 1, 1), 11)["bg_neg"]
        a, b = (dist.lower - dist.mean) / dist.stddev, (dist.upper - dist.mean) / dist.stddev
        assert abs(draws.mean() - truncnorm.mean(a, b, loc=dist.mean, scale=dist.stddev)) < 2e-3

    @pytest.mark.parametrize(
        "bad",
        [
            dict(stddev=0.0),
            dict(stddev=-1.0),
            dict(lower=0.5, upper=0.5),
            dict(mean=float("nan")),
        ],
    )
    def test_invalid_component(self, bad):
        dist = replace(ComponentDist(0.5, 0.1), **bad)
        with pytest.raises(InvalidSpec):
            sample_scenario(ScenarioSpec(dist, dist, dist, dist), 0)

    @pytest.mark.parametrize("n", [0, -3, 1.5, True])
    def test_invalid_count(self, n):
        with pytest.raises(InvalidSpec):
            sample_scenario(small_spec(n_sg_pos=n), 0)

    @pytest.mark.parametrize("seed", [-1, 2**64, 1.0])
    def test_invalid_seed(self, seed):
        with pytest.raises(InvalidSpec):
            sample_scenario(small_spec(), seed)

    def test_invalid_scale(self):
        with pytest.raises(InvalidSpec):
            small_spec().scaled(0)


class TestSerialization:
    def test_json_roundtrip(self, tmp_path):
        spec = preset("C").scaled(3)
        path = tmp_path / "c.json"
        path.write_text(spec.to_json())
        assert ScenarioSpec.load(path) == spec

    def test_field_names(self):
        d = json.loads(preset("A").to_json())
        assert set(d) == {*CELLS, *(f"n_{c}" for c in CELLS)}
        assert set(d["bg_neg"]) == {"mean", "stddev", "lower", "upper"}

    def test_defaults_and_errors(self):
        d = preset("A").to_dict()
        for c in CELLS:
            del d[f"n_{c}"]
        assert ScenarioSpec.from_dict(d).counts() == (1, 1, 1, 1)
        with pytest.raises(InvalidSpec):
            ScenarioSpec.from_dict({"bg_neg": {}})
        with pytest.raises(InvalidSpec):
            ScenarioSpec.from_json(json.dumps({**preset("A").to_dict(), "n_bg_neg": 0}))


class TestMetrics:
    def test_b_disjoint_supports_give_exact_aeg(self):
        row = scenario_metrics("B", seed=4, scale=10_000)
        assert row.negative_aeg == 0.5 and row.positive_aeg == 0.5
        assert row.subgroup_auc == 1.0 and row.bnsp_auc == 1.0

    def test_d_disjoint_supports_give_exact_negative_aeg(self):
        row = scenario_metrics("D", seed=4, scale=10_000)
        assert row.negative_aeg == -0.5 and row.positive_aeg == -0.5

    def test_sampled_dataset_matches_direct_metrics(self):
        spec = preset("E").scaled(200)
        direct = spec_metrics(spec, 9)
        from biasaudit.metrics import bias_suite

        via_examples = bias_suite(partition(sample_scenario(spec, 9), SUBGROUP_TAG))
        assert via_examples == direct

    def test_identical_subgroup_is_unbiased(self):
        d = ComponentDist(0.3, 0.1)
        p = ComponentDist(0.7, 0.1)
        row = spec_metrics(ScenarioSpec(d, p, d, p, 50_000, 50_000, 50_000, 50_000), 2)
        assert abs(row.negative_aeg) < 0.01 and abs(row.positive_aeg) < 0.01
        assert abs(row.bpsn_auc - row.subgroup_auc) < 0.01


def narrowed(knob: Knob, frozen: float, steps: int = 5) -> Knob:
    step = knob.grid[1] - knob.grid[0]
    return replace(knob, grid=frozen + step * np.arange(-steps, steps + 1))


@pytest.mark.slow
def test_calibration_reproduces_frozen_parameters():
    knobs = [narrowed(k, PRESET_PARAMS[k.param]) for k in KNOBS]
    for result in calibrate(seed=0, scale=100_000, knobs=knobs):
        assert result.value == pytest.approx(result.frozen, abs=1e-9), result
        assert abs(result.achieved - result.target) < 0.01
