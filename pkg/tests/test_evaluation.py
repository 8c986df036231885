import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import rank_quantile
from spectracc import colorimetry, dataset, kan
from spectracc import evaluation as E
from spectracc import train as T
from spectracc.errors import ConfigError, DataError


class TestStats:
    def test_constant(self):
        s = E.aggregate_stats([2.5] * 7)
        assert all(getattr(s, f) == 2.5 for f in E.STAT_FIELDS) and s.n == 7

    def test_one_to_five(self):
        s = E.aggregate_stats([3, 1, 5, 2, 4])
        assert (s.median, s.trimean, s.best25_mean, s.worst25_mean, s.max, s.mean) == (3, 3, 1.5, 4.5, 5, 3)
        v = np.arange(1.0, 6.0)
        assert E.quantile(v, 0.25) == 2 and E.quantile(v, 0.75) == 4

    def test_one_to_hundred(self):
        s = E.aggregate_stats(range(1, 101))
        assert s.p95 == pytest.approx(95.05, abs=1e-12) and s.p99 == pytest.approx(99.01, abs=1e-12)
        # rank arithmetic: r = 1 + 99 q
        assert rank_quantile(range(1, 101), 0.95) == pytest.approx(95.05)

    def test_single(self):
        s = E.aggregate_stats([4.0])
        assert all(getattr(s, f) == 4.0 for f in E.STAT_FIELDS)

    def test_errors(self):
        with pytest.raises(DataError):
            E.aggregate_stats([])
        with pytest.raises(DataError):
            E.aggregate_stats([1.0, math.nan])
        with pytest.raises(ConfigError):
            E.quantile(np.arange(3.0), 1.5)

    @settings(max_examples=300)
    @given(st.lists(st.floats(0, 1e4, allow_subnormal=False), min_size=1, max_size=60), st.randoms())
    def test_invariants(self, values, rnd):
        s = E.aggregate_stats(values)
        shuffled = list(values)
        rnd.shuffle(shuffled)
        assert E.aggregate_stats(shuffled) == s
        assert s.best25_mean <= s.mean <= s.worst25_mean
        assert s.median <= s.p95 <= s.p99 <= s.max
        for q, got in ((0.5, s.median), (0.95, s.p95), (0.99, s.p99)):
            assert got == pytest.approx(rank_quantile(values, q), rel=1e-12, abs=1e-12)
        k = math.ceil(len(values) / 4)
        assert s.best25_mean == pytest.approx(sum(sorted(values)[:k]) / k, rel=1e-12, abs=1e-12)


@pytest.fixture(scope="module")
def kan_params(small_dataset):
    return T.train_on_dataset(small_dataset, T.TrainConfig(lr=1e-2, max_epochs=3, pixels_per_image=128)).params


class TestEvaluate:
    def test_gt_against_itself(self, small_dataset):
        vals = [colorimetry.image_metric_mean(t.gt, t.gt, "de00", sequential=True)[0]
                for t in small_dataset.partition("test")]
        s = E.aggregate_stats(vals)
        assert all(getattr(s, f) == 0 for f in E.STAT_FIELDS)

    def test_oracle_not_worse_than_gw(self, small_dataset):
        gw = E.evaluate_method(small_dataset, E.Method.traditional("gw"))
        oracle = E.evaluate_method(small_dataset, E.Method.oracle())
        assert oracle.stats["de00"].mean <= gw.stats["de00"].mean

    def test_report_consistent(self, small_dataset):
        rep = E.evaluate_method(small_dataset, E.Method.traditional("wp"))
        assert rep.recomputed() == rep.stats
        n_test = len(small_dataset.partition("test"))
        assert len(rep.image_ids) == n_test and len(rep.per_image["de00"]) == n_test
        assert rep.meta["conventions"] == E.CONVENTIONS and rep.method == "traditional-wp"

    def test_reproducible_bytes(self, small_dataset):
        a = E.evaluate_method(small_dataset, E.Method.traditional("gw"))
        b = E.evaluate_method(small_dataset, E.Method.traditional("gw"), threads=3)
        assert a.fingerprint == b.fingerprint and a.to_json() == b.to_json()
        c = E.evaluate_method(small_dataset, E.Method.traditional("gw", p=2))
        assert c.fingerprint != a.fingerprint
        json.loads(a.to_json())

    def test_kan_method(self, small_dataset, kan_params):
        rep = E.evaluate_method(small_dataset, E.Method.kan(kan_params))
        assert np.isfinite(rep.stats["de00"].mean) and len(rep.meta["method"]["params_sha256"]) == 16

    def test_table(self, small_dataset):
        reps = [E.evaluate_method(small_dataset, m) for m in (E.Method.oracle(), E.Method.traditional("gw"))]
        table = E.format_table(reps)
        lines = table.splitlines()
        assert all(h in lines[1] for h in E.TABLE_HEADERS) and lines[1].count("Mean") == 2
        assert lines[3].startswith("oracle") and len(lines[3].split("|")[1].split()) == 8

    def test_method_validation(self):
        with pytest.raises(ConfigError):
            E.Method("nope")
        with pytest.raises(ConfigError):
            E.Method("kan")
        with pytest.raises(ConfigError):
            E.Method("traditional")

    def test_empty_partition(self, small_dataset):
        ds = dataset.Dataset([], small_dataset.splits, small_dataset.camera)
        with pytest.raises(DataError):
            E.evaluate_method(ds, E.Method.oracle())


class TestAblations:
    def test_exposure_traditional_flat(self, small_dataset, kan_params):
        res = E.run_exposure_ablation(small_dataset, [E.Method.traditional("gw"), E.Method.kan(kan_params)])
        row = res["table"]["traditional-gw"]
        vals = [row[repr(a)] for a in (1.0, 0.75, 0.5)]
        assert max(vals) - min(vals) < 1e-9
        assert all(np.isfinite(res["table"]["kan"][repr(a)]) for a in (1.0, 0.75, 0.5))
        text = E.format_ablation_table(res)
        assert "a=0.75" in text and "kan" in text

    def test_alpha_validation(self):
        with pytest.raises(ConfigError):
            E.AblationConfig(exposure_alphas=(1.0, 0.0))

    def test_identity_misalignment(self, small_dataset, kan_params):
        same = dataset.misalign_dataset(small_dataset, dataset.HomographyParams(0, 0, 0, 0))
        out = E.run_misalignment_experiment(small_dataset, same, kan_params,
                                            T.TrainConfig(lr=1e-2, max_epochs=2, pixels_per_image=64))
        aligned = E.evaluate_method(small_dataset, E.Method.kan(kan_params, "kan-aligned"))
        assert out["unadapted"].per_image == aligned.per_image
        assert set(out["changed_groups"]) <= {"ms_encoder"}
        for g in T.ENCODER_ONLY:
            assert np.array_equal(out["finetuned_params"].groups()[g], kan_params.groups()[g])

    def test_scene_mismatch(self, small_dataset, kan_params):
        other = dataset.Dataset(small_dataset.triplets[:-1], small_dataset.splits, small_dataset.camera)
        with pytest.raises(DataError):
            E.run_misalignment_experiment(small_dataset, other, kan_params)

    def test_digest_stable(self):
        p = kan.init_params(15, 6, seed=2)
        assert E.params_digest(p) == E.params_digest(p.copy())
