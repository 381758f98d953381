"""Experiment harness tests on miniature datasets."""

import numpy as np
import pytest

from vqalab import harness
from vqalab.config import Config, apply_overrides, config_hash
from vqalab.harness import MetricsRecord, RunContext, compute_metrics, necessity_auc, prepare_split
from vqalab.scene import build_dataset


def tiny_config(**extra):
    overrides = [
        "dataset.train_size=40",
        "dataset.val_size=20",
        "dataset.test_size=10",
        "updn.epochs=2",
        "updn.warmup_epochs=1",
        "updn.decay_epochs=[2,3]",
        "grounding.epochs=1",
        "grounding.n_intra=1",
        "grounding.n_cross=1",
        "grounding.d_model=16",
        "grounding.d_ff=24",
        "harness.n_seeds=1",
        "harness.sweep_seeds=1",
    ] + [f"{k}={v}" for k, v in extra.items()]
    return apply_overrides(Config(), overrides)


@pytest.fixture(scope="module")
def cfg():
    return tiny_config()


@pytest.fixture(scope="module")
def ds(cfg):
    return build_dataset(cfg.dataset, 0)


class TestComputeMetrics:
    def _items(self, cats, answers):
        return [
            {"category": c, "answer": a, "vectors": np.zeros((2, 4))}
            for c, a in zip(cats, answers)
        ]

    def test_all_correct(self):
        items = self._items(["binary", "open"], [0, 3])
        m = compute_metrics([0, 3], items)
        assert m.accuracy == 1.0
        assert m.binary_accuracy == 1.0
        assert m.open_accuracy == 1.0

    def test_hand_counted_mixture(self):
        items = self._items(["binary", "binary", "open", "open"], [0, 1, 2, 3])
        m = compute_metrics([0, 1, 2, 9], items)
        assert m.accuracy == 0.75
        assert m.binary_accuracy == 1.0
        assert m.open_accuracy == 0.5

    def test_weighted_combination_invariant(self):
        items = self._items(["binary"] * 3 + ["open"] * 5, list(range(8)))
        preds = [0, 9, 2, 3, 9, 5, 9, 7]
        m = compute_metrics(preds, items)
        n_b, n_o = 3, 5
        assert m.accuracy == pytest.approx((m.binary_accuracy * n_b + m.open_accuracy * n_o) / 8)

    def test_binary_only_split(self):
        items = self._items(["binary", "binary"], [0, 1])
        m = compute_metrics([0, 0], items)
        assert m.open_accuracy is None
        assert m.accuracy == m.binary_accuracy

    def test_missing_prediction_rejected(self):
        with pytest.raises(ValueError):
            compute_metrics([0], self._items(["binary", "open"], [0, 1]))


class TestNecessityAuc:
    def test_perfect_separation(self):
        items = [{"necessity": np.array([1, 0, 0])}]
        probs = [np.array([0.9, 0.1, 0.2])]
        assert necessity_auc(probs, items) == 1.0

    def test_chance_level_for_constant_scores(self):
        items = [{"necessity": np.array([1, 0])}]
        probs = [np.array([0.5, 0.5])]
        assert necessity_auc(probs, items) == 0.5

    def test_degenerate_returns_none(self):
        items = [{"necessity": np.array([1, 1])}]
        assert necessity_auc([np.array([0.5, 0.5])], items) is None


class TestPrepareSplit:
    def test_modes_produce_items(self, cfg, ds):
        ctx = RunContext(cfg, ds, 0)
        for mode in harness.QUALITY_MODES:
            items = prepare_split(ctx, "val", mode)
            assert len(items) == 20
            for item in items:
                assert item["vectors"].shape[1] == cfg.updn.input_dim
                assert len(item["necessity"]) == item["vectors"].shape[0]

    def test_baseline_respects_budget(self, cfg, ds):
        ctx = RunContext(cfg, ds, 0)
        for item in prepare_split(ctx, "val", "baseline", k=3):
            assert 1 <= item["vectors"].shape[0] <= 3

    def test_oracle_gt_box_matches_necessary_set(self, cfg, ds):
        ctx = RunContext(cfg, ds, 0)
        for item, qa in zip(prepare_split(ctx, "val", "gt-box"), ds.splits["val"]):
            assert item["vectors"].shape[0] == len(qa.necessary)

    def test_deterministic_per_seed(self, cfg, ds):
        a = prepare_split(RunContext(cfg, ds, 3), "val", "baseline")
        b = prepare_split(RunContext(cfg, ds, 3), "val", "baseline")
        for x, y in zip(a, b):
            assert np.array_equal(x["vectors"], y["vectors"])

    def test_perturbed_features_match_gt_box(self, cfg, ds):
        ctx = RunContext(cfg, ds, 0)
        gt = prepare_split(ctx, "val", "gt-box")
        moved = prepare_split(ctx, "val", "gt-box-perturbed")
        d_f = cfg.detector.d_f
        for a, b in zip(gt, moved):
            assert np.array_equal(a["vectors"][:, :d_f], b["vectors"][:, :d_f])


class TestStudies:
    def test_updn_run_reproducible(self, cfg, ds):
        ctx = RunContext(cfg, ds, 0)
        tr = prepare_split(ctx, "train", "baseline")
        ev = prepare_split(ctx, "val", "baseline")
        r1 = harness.updn_run(ctx, tr, ev, 0)
        r2 = harness.updn_run(ctx, tr, ev, 0)
        assert r1.metrics == r2.metrics
        assert np.array_equal(r1.predictions, r2.predictions)

    def test_quality_ablation_shape(self, cfg, ds):
        table = harness.run_quality_ablation(cfg, ds, seeds=[0])
        assert [row["mode"] for row in table] == list(harness.QUALITY_MODES)
        for row in table:
            assert 0.0 <= row["accuracy_mean"] <= 1.0
            assert len(row["per_seed"]) == 1

    def test_quantity_sweep_shape(self, cfg, ds):
        table = harness.run_quantity_sweep(cfg, ds, ks=[1, 4], seeds=[0, 1])
        assert [row["k"] for row in table] == [1, 4]
        for row in table:
            assert row["accuracy_std"] >= 0.0
            assert len(row["per_seed"]) == 2

    def test_aux_pairing_off_run_matches_plain(self, cfg, ds):
        result = harness.run_aux_supervision(cfg, ds, seeds=[0])
        row = result["per_seed"][0]
        ctx = RunContext(cfg, ds, 0)
        tr = prepare_split(ctx, "train", "baseline")
        ev = prepare_split(ctx, "val", "baseline")
        plain = harness.updn_run(ctx, tr, ev, 0, aux=False)
        assert row["accuracy_off"] == plain.metrics.accuracy
        assert row["order_hashes"] == [h.order_hash for h in plain.history]
        assert "delta" in row and "necessity_auc" in row

    def test_lg_comparison_schema(self, cfg, ds):
        table = harness.run_lg_comparison(cfg, ds, seeds=[0])
        for arm in ("baseline_small", "baseline_matched", "baseline_default", "lg", "union"):
            assert "accuracy_mean" in table[arm]
            assert table[arm]["objects_mean"] > 0
        # the union arm contains at least the baseline-budget objects
        assert table["union"]["objects_mean"] >= table["baseline_default"]["objects_mean"] - 1e-9
        assert 0.0 <= table["lg_recall_mean"] <= 1.0
        assert table["matched_k"] == [max(1, round(table["lg"]["objects_mean"]))]
