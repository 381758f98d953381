"""Experiment harness: the quantity, quality, supervision and grounding studies.

Every run is deterministic given (config, seed): detector noise, parameter
init and batch shuffling all derive their streams from the run seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import grounding as gr
from . import updn
from .config import Config, config_hash
from .detector import (
    ObjectSet,
    PrototypeBank,
    baseline_select,
    necessary_recall,
    oracle_objects,
    propose_regions,
)
from .geometry import Box, match_gt
from .scene import Dataset, QAInstance, execute_program

QUALITY_MODES = ("baseline", "gt-box", "gt-box+onehot", "gt-box-perturbed", "gt-box-perturbed+refeature")


@dataclass
class MetricsRecord:
    accuracy: float
    binary_accuracy: float | None
    open_accuracy: float | None
    mean_objects: float
    seed: int
    config_hash: str

    def row(self) -> dict:
        return asdict(self)


def compute_metrics(predictions, instances: list[dict], seed: int = 0, cfg_hash: str = "") -> MetricsRecord:
    """Exact-match accuracy overall and per category, plus mean object count."""
    if len(predictions) != len(instances):
        raise ValueError(f"{len(predictions)} predictions for {len(instances)} instances")
    correct = {"binary": 0, "open": 0}
    total = {"binary": 0, "open": 0}
    n_objects = []
    for pred, inst in zip(predictions, instances):
        cat = inst["category"]
        total[cat] += 1
        if pred == inst["answer"]:
            correct[cat] += 1
        n_objects.append(inst["vectors"].shape[0])
    n = total["binary"] + total["open"]
    acc = (correct["binary"] + correct["open"]) / n
    binary = correct["binary"] / total["binary"] if total["binary"] else None
    open_ = correct["open"] / total["open"] if total["open"] else None
    return MetricsRecord(
        accuracy=acc,
        binary_accuracy=binary,
        open_accuracy=open_,
        mean_objects=float(np.mean(n_objects)),
        seed=seed,
        config_hash=cfg_hash,
    )


# -- per-run context ---------------------------------------------------------


class RunContext:
    """Caches detector outputs for one (config, dataset, seed) triple."""

    def __init__(self, cfg: Config, ds: Dataset, seed: int):
        self.cfg = cfg
        self.ds = ds
        self.seed = seed
        self.bank = PrototypeBank(cfg.detector)
        self.hash = config_hash(cfg)
        self._proposals: dict[int, list] = {}
        self._survivors: dict[int, list] = {}
        self._selections: dict = {}

    def proposals(self, scene_id: int) -> list:
        if scene_id not in self._proposals:
            scene = self.ds.scenes[scene_id]
            rng = np.random.default_rng([self.seed, scene_id])
            self._proposals[scene_id] = propose_regions(scene, self.cfg.detector, self.bank, rng)
        return self._proposals[scene_id]

    def survivors(self, scene_id: int) -> list:
        """Proposals after the objectness NMS stage."""
        if scene_id not in self._survivors:
            self._survivors[scene_id] = gr.apply_nms1(self.proposals(scene_id), self.cfg.grounding.theta_nms1)
        return self._survivors[scene_id]

    def gt_boxes(self, qa: QAInstance) -> list[Box]:
        scene = self.ds.scenes[qa.scene_id]
        return [scene.object(oid).box for oid in qa.necessary]

    def selection(self, selector, qa: QAInstance) -> gr.SelectionResult:
        """Selector output for one instance, cached per (selector, instance)."""
        key = (id(selector), qa.scene_id, tuple(qa.tokens))
        if key not in self._selections:
            self._selections[key] = gr.select(
                selector, self.cfg.grounding, self.proposals(qa.scene_id), qa.tokens
            )
        return self._selections[key]


def _to_item(ctx: RunContext, qa: QAInstance, objset: ObjectSet) -> dict:
    gt = ctx.gt_boxes(qa)
    boxes = [Box(*b) for b in objset.boxes]
    nec = match_gt(boxes, gt, ctx.cfg.harness.theta_match) if len(objset) else np.zeros(0)
    return {
        "tokens": qa.tokens,
        "vectors": objset.vectors(),
        "answer": qa.answer,
        "necessity": nec,
        "category": qa.category,
        "boxes": boxes,
        "qa": qa,
    }


def prepare_split(ctx: RunContext, split: str, mode: str, k: int | None = None, selector=None) -> list[dict]:
    """Materialize the visual input for every instance of a split.

    mode: one of QUALITY_MODES, or "lg" (requires selector params),
    or "union" (baseline top-k plus selector-scored extras).
    """
    h = ctx.cfg.harness
    k = h.k_default if k is None else k
    items = []
    for idx, qa in enumerate(ctx.ds.splits[split]):
        scene = ctx.ds.scenes[qa.scene_id]
        if mode == "baseline":
            objset = baseline_select(ctx.proposals(qa.scene_id), h.theta_c, k)
        elif mode in ("lg", "union"):
            res = ctx.selection(selector, qa)
            if mode == "lg":
                objset = res.selected
            else:
                base = baseline_select(ctx.proposals(qa.scene_id), h.theta_c, k)
                objset = gr.union_augment(
                    base,
                    ctx.survivors(qa.scene_id),
                    res.scores,
                    ctx.cfg.grounding.theta_s,
                    ctx.cfg.grounding.theta_iou,
                )
        else:
            objset = oracle_objects(scene, qa, mode, ctx.cfg.detector, ctx.bank, [ctx.seed, qa.scene_id, idx])
        items.append(_to_item(ctx, qa, objset))
    return items


def selector_items(ctx: RunContext, split: str) -> list[dict]:
    """Training items for the grounding selector: post-NMS1 proposals + labels."""
    items = []
    for qa in ctx.ds.splits[split]:
        surv = ctx.survivors(qa.scene_id)
        labels = match_gt([p.box for p in surv], ctx.gt_boxes(qa), ctx.cfg.grounding.theta_iou)
        vecs = np.stack([gr.proposal_vector(p) for p in surv])
        items.append({"vectors": vecs, "tokens": qa.tokens, "labels": labels, "qa": qa})
    return items


# -- single runs -------------------------------------------------------------


@dataclass
class RunResult:
    metrics: MetricsRecord
    params: dict
    history: list
    predictions: np.ndarray
    necessity_auc: float | None = None


def necessity_auc(probs: list[np.ndarray], items: list[dict]) -> float | None:
    """Rank AUC of necessity scores against GT-match labels on a split."""
    pos, neg = [], []
    for p, item in zip(probs, items):
        lab = item["necessity"]
        for v, y in zip(p[: len(lab)], lab):
            (pos if y > 0.5 else neg).append(v)
    if not pos or not neg:
        return None
    pos, neg = np.array(pos), np.array(neg)
    # Mann-Whitney U statistic
    wins = 0.0
    order = np.sort(neg)
    idx = np.searchsorted(order, pos, side="left")
    idx_r = np.searchsorted(order, pos, side="right")
    wins = idx.sum() + 0.5 * (idx_r - idx).sum()
    return float(wins / (len(pos) * len(neg)))


def updn_run(
    ctx: RunContext,
    train_items: list[dict],
    eval_items: list[dict],
    seed: int,
    aux: bool = False,
) -> RunResult:
    ucfg = updn.UpDnConfig(**{**asdict(ctx.cfg.updn), "aux_head": aux})
    params = updn.init_params(ucfg, seed * 1000 + 17)
    history = updn.train(params, ucfg, train_items, seed * 1000 + 29)
    preds, nec_probs = updn.predict(params, ucfg, eval_items)
    metrics = compute_metrics(preds, eval_items, seed=seed, cfg_hash=ctx.hash)
    auc = necessity_auc(nec_probs, eval_items) if aux else None
    return RunResult(metrics=metrics, params=params, history=history, predictions=preds, necessity_auc=auc)


def train_selector_for_seed(ctx: RunContext, seed: int):
    items = selector_items(ctx, "train")
    params = gr.init_params(ctx.cfg.grounding, seed * 1000 + 41)
    history = gr.train_selector(params, ctx.cfg.grounding, items, seed * 1000 + 43)
    return params, history


# -- studies -----------------------------------------------------------------


def _aggregate(rows: list[MetricsRecord]) -> dict:
    accs = [r.accuracy for r in rows]
    return {
        "accuracy_mean": float(np.mean(accs)),
        "accuracy_std": float(np.std(accs)),
        "binary_mean": float(np.mean([r.binary_accuracy for r in rows if r.binary_accuracy is not None])),
        "open_mean": float(np.mean([r.open_accuracy for r in rows if r.open_accuracy is not None])),
        "objects_mean": float(np.mean([r.mean_objects for r in rows])),
        "per_seed": [r.row() for r in rows],
    }


def run_quality_ablation(cfg: Config, ds: Dataset, modes=QUALITY_MODES, seeds=None) -> list[dict]:
    seeds = list(range(cfg.harness.n_seeds)) if seeds is None else list(seeds)
    ctxs = {seed: RunContext(cfg, ds, seed) for seed in seeds}
    table = []
    for mode in modes:
        rows = []
        for seed in seeds:
            ctx = ctxs[seed]
            tr = prepare_split(ctx, "train", mode)
            ev = prepare_split(ctx, cfg.harness.eval_split, mode)
            rows.append(updn_run(ctx, tr, ev, seed).metrics)
        table.append({"mode": mode, **_aggregate(rows)})
    return table


def run_quantity_sweep(cfg: Config, ds: Dataset, ks=None, seeds=None) -> list[dict]:
    ks = list(cfg.harness.sweep_ks) if ks is None else list(ks)
    seeds = list(range(cfg.harness.sweep_seeds)) if seeds is None else list(seeds)
    # one context per seed so detector proposals are shared across budgets
    ctxs = {seed: RunContext(cfg, ds, seed) for seed in seeds}
    result = []
    for k in sorted(ks):
        rows = []
        for seed in seeds:
            ctx = ctxs[seed]
            tr = prepare_split(ctx, "train", "baseline", k=k)
            ev = prepare_split(ctx, cfg.harness.eval_split, "baseline", k=k)
            rows.append(updn_run(ctx, tr, ev, seed).metrics)
        result.append({"k": k, **_aggregate(rows)})
    return result


def run_aux_supervision(cfg: Config, ds: Dataset, seeds=None) -> dict:
    seeds = list(range(cfg.harness.n_seeds)) if seeds is None else list(seeds)
    per_seed = []
    for seed in seeds:
        ctx = RunContext(cfg, ds, seed)
        tr = prepare_split(ctx, "train", "baseline")
        ev = prepare_split(ctx, cfg.harness.eval_split, "baseline")
        off = updn_run(ctx, tr, ev, seed, aux=False)
        on = updn_run(ctx, tr, ev, seed, aux=True)
        if [h.order_hash for h in off.history] != [h.order_hash for h in on.history]:
            raise RuntimeError("paired runs diverged in data order")
        per_seed.append(
            {
                "seed": seed,
                "accuracy_off": off.metrics.accuracy,
                "accuracy_on": on.metrics.accuracy,
                "delta": on.metrics.accuracy - off.metrics.accuracy,
                "necessity_auc": on.necessity_auc,
                "order_hashes": [h.order_hash for h in on.history],
            }
        )
    return {
        "per_seed": per_seed,
        "mean_off": float(np.mean([r["accuracy_off"] for r in per_seed])),
        "mean_on": float(np.mean([r["accuracy_on"] for r in per_seed])),
        "mean_delta": float(np.mean([r["delta"] for r in per_seed])),
        "mean_auc": float(np.mean([r["necessity_auc"] for r in per_seed])),
    }


def _recall_stats(ctx: RunContext, items: list[dict]) -> float:
    recs = []
    for item in items:
        gt = ctx.gt_boxes(item["qa"])
        if not gt:
            continue
        recs.append(necessary_recall(item["boxes"], gt, ctx.cfg.harness.theta_match))
    return float(np.mean(recs))


def _indirect_recall(ctx: RunContext, items: list[dict]) -> float | None:
    """Recall of the answer object on relational-query (indirect mention) items."""
    recs = []
    for item in items:
        qa: QAInstance = item["qa"]
        if not any(step.get("op") == "relate" for step in qa.program):
            continue
        scene = ctx.ds.scenes[qa.scene_id]
        _, touched = execute_program(scene, qa.program, ctx.cfg.dataset.world.relation_margin)
        answer_box = scene.object(touched[-1]).box
        recs.append(necessary_recall(item["boxes"], [answer_box], ctx.cfg.harness.theta_match))
    return float(np.mean(recs)) if recs else None


def run_lg_comparison(cfg: Config, ds: Dataset, seeds=None) -> dict:
    """Baseline budgets vs language-grounded selection vs union augmentation."""
    seeds = list(range(cfg.harness.n_seeds)) if seeds is None else list(seeds)
    h = cfg.harness
    eval_split = h.eval_split
    arm_rows: dict[str, list[MetricsRecord]] = {}
    extra: dict[str, list] = {"lg_recall": [], "matched_recall": [], "lg_indirect": [], "matched_indirect": []}
    matched_ks = []
    for seed in seeds:
        ctx = RunContext(cfg, ds, seed)
        selector, _ = train_selector_for_seed(ctx, seed)

        lg_train = prepare_split(ctx, "train", "lg", selector=selector)
        lg_eval = prepare_split(ctx, eval_split, "lg", selector=selector)
        k_matched = max(1, round(float(np.mean([it["vectors"].shape[0] for it in lg_eval]))))
        matched_ks.append(k_matched)

        arms = {
            "baseline_small": ("baseline", h.k_small),
            "baseline_matched": ("baseline", k_matched),
            "baseline_default": ("baseline", h.k_default),
        }
        prepared = {}
        for name, (mode, k) in arms.items():
            tr = prepare_split(ctx, "train", mode, k=k)
            ev = prepare_split(ctx, eval_split, mode, k=k)
            prepared[name] = (tr, ev)
        prepared["lg"] = (lg_train, lg_eval)
        prepared["union"] = (
            prepare_split(ctx, "train", "union", k=h.k_default, selector=selector),
            prepare_split(ctx, eval_split, "union", k=h.k_default, selector=selector),
        )

        for name, (tr, ev) in prepared.items():
            arm_rows.setdefault(name, []).append(updn_run(ctx, tr, ev, seed).metrics)

        extra["lg_recall"].append(_recall_stats(ctx, lg_eval))
        extra["matched_recall"].append(_recall_stats(ctx, prepared["baseline_matched"][1]))
        extra["lg_indirect"].append(_indirect_recall(ctx, lg_eval))
        extra["matched_indirect"].append(_indirect_recall(ctx, prepared["baseline_matched"][1]))

    table = {name: _aggregate(rows) for name, rows in arm_rows.items()}
    table["matched_k"] = matched_ks
    table["lg_recall_mean"] = float(np.mean(extra["lg_recall"]))
    table["matched_recall_mean"] = float(np.mean(extra["matched_recall"]))
    table["lg_indirect_recall_mean"] = float(np.mean([v for v in extra["lg_indirect"] if v is not None]))
    table["matched_indirect_recall_mean"] = float(np.mean([v for v in extra["matched_indirect"] if v is not None]))
    return table
