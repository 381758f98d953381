"""Language-grounded object selection.

Region proposals run through a stack of intra-modality self-attention
blocks, then cross-modality quadruplets against the encoded question, and a
per-proposal sigmoid score decides selection. The full pipeline applies an
objectness NMS before scoring and a stricter score NMS after thresholding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .detector import ObjectSet, RegionProposal
from .geometry import Box, iou, nms
from .optim import SGD, Schedule
from .scene import MAX_QUESTION_LEN, WORDS

N_WORDS = len(WORDS)


@dataclass
class GroundingConfig:
    d_model: int = 48
    d_ff: int = 96
    n_intra: int = 3  # self-attention blocks on proposals
    n_cross: int = 3  # cross-modality quadruplets
    input_dim: int = 69  # feature + box + class confidences + objectness
    theta_nms1: float = 0.7
    theta_nms2: float = 0.4
    theta_s: float = 0.5
    theta_iou: float = 0.5
    w_pos: float = 12.0  # calibrated to the ~8%-positive label balance here
    w_neg: float = 1.0
    epochs: int = 14
    batch_size: int = 32
    base_lr: float = 5e-3
    decay_every: int = 7
    decay_factor: float = 0.1
    init_scale: float = 0.08


def _block_params(rng, d_model: int, d_ff: int, s: float) -> dict[str, Node]:
    p = lambda *shape: Node(rng.normal(0.0, s, size=shape))
    zeros = lambda *shape: Node(np.zeros(shape))
    ones = lambda *shape: Node(np.ones(shape))
    return {
        "Wq": p(d_model, d_model), "Wk": p(d_model, d_model), "Wv": p(d_model, d_model),
        "g1": ones(d_model), "c1": zeros(d_model),
        "F1": p(d_model, d_ff), "f1": zeros(d_ff),
        "F2": p(d_ff, d_model), "f2": zeros(d_model),
        "g2": ones(d_model), "c2": zeros(d_model),
    }


def init_params(cfg: GroundingConfig, seed: int) -> dict[str, Node]:
    rng = np.random.default_rng(seed)
    s = cfg.init_scale
    params: dict[str, Node] = {
        "W_in": Node(rng.normal(0.0, s, size=(cfg.input_dim, cfg.d_model))),
        "b_in": Node(np.zeros(cfg.d_model)),
        "tok_emb": Node(rng.normal(0.0, s, size=(N_WORDS, cfg.d_model))),
        "pos_emb": Node(rng.normal(0.0, s, size=(MAX_QUESTION_LEN, cfg.d_model))),
        "W_s": Node(rng.normal(0.0, s, size=(cfg.d_model, 1))),
        "b_s": Node(np.zeros(1)),
    }
    for i in range(cfg.n_intra):
        for k, v in _block_params(rng, cfg.d_model, cfg.d_ff, s).items():
            params[f"intra{i}.{k}"] = v
    for i in range(cfg.n_cross):
        for sub in ("r_from_q", "q_from_r", "r_self", "q_self"):
            for k, v in _block_params(rng, cfg.d_model, cfg.d_ff, s).items():
                params[f"cross{i}.{sub}.{k}"] = v
    return params


def _sub(params: dict[str, Node], prefix: str) -> dict[str, Node]:
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def _attend(blk: dict[str, Node], x: Node, y: Node, y_mask: np.ndarray):
    """Scaled dot-product attention block: queries from x, keys/values from y.

    Residual + layer norm + position-wise feed-forward, single head.
    Returns (output, attention coefficients [B, n_x, n_y]).
    """
    d = blk["Wq"].value.shape[1]
    q = x @ blk["Wq"]
    k = y @ blk["Wk"]
    v = y @ blk["Wv"]
    scores = (q @ ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d))  # [B, n_x, n_y]
    mask = np.broadcast_to(y_mask[:, None, :], scores.value.shape)
    alpha = ad.softmax(scores, mask=mask, axis=-1)
    attended = alpha @ v
    h = ad.layer_norm(x + attended, blk["g1"], blk["c1"])
    ff = ad.relu(h @ blk["F1"] + blk["f1"]) @ blk["F2"] + blk["f2"]
    out = ad.layer_norm(h + ff, blk["g2"], blk["c2"])
    return out, alpha


def intra_attend(blk: dict[str, Node], x: Node, mask: np.ndarray):
    return _attend(blk, x, x, mask)


def cross_attend(params: dict[str, Node], layer: int, r: Node, q: Node, r_mask, q_mask):
    """One quadruplet: cross both ways, then self-attention on each result."""
    r1, alpha_rq = _attend(_sub(params, f"cross{layer}.r_from_q"), r, q, q_mask)
    q1, _ = _attend(_sub(params, f"cross{layer}.q_from_r"), q, r, r_mask)
    r2, _ = intra_attend(_sub(params, f"cross{layer}.r_self"), r1, r_mask)
    q2, _ = intra_attend(_sub(params, f"cross{layer}.q_self"), q1, q_mask)
    return r2, q2, alpha_rq


def score_proposals(
    params: dict[str, Node],
    cfg: GroundingConfig,
    prop_vecs: np.ndarray,
    prop_mask: np.ndarray,
    tokens: np.ndarray,
    token_mask: np.ndarray,
):
    """Sigmoid selection scores for padded proposal batches.

    prop_vecs: [B, N, input_dim]; tokens: [B, T] word indices. Returns
    (scores Node [B, N], cross-attention record list of [B, N, T] arrays).
    """
    t = tokens.shape[1]
    if t > MAX_QUESTION_LEN:
        raise ad.AutodiffError(f"question length {t} exceeds maximum {MAX_QUESTION_LEN}")
    r = Node(prop_vecs) @ params["W_in"] + params["b_in"]
    q = ad.embedding(params["tok_emb"], tokens) + ad.embedding(params["pos_emb"], np.arange(t))
    for i in range(cfg.n_intra):
        r, _ = intra_attend(_sub(params, f"intra{i}"), r, prop_mask)
    record = []
    for i in range(cfg.n_cross):
        r, q, alpha = cross_attend(params, i, r, q, prop_mask, token_mask)
        record.append(alpha.value)
    b, n = prop_vecs.shape[:2]
    scores = ad.sigmoid(ad.reshape(r @ params["W_s"] + params["b_s"], (b, n)))
    return scores, record


@dataclass
class SelectionResult:
    scores: np.ndarray  # [N] over post-NMS1 proposals
    kept_indices: list[int]  # into the post-NMS1 proposal list
    selected: ObjectSet
    attention: np.ndarray  # [N, T] final cross-layer object->token coefficients
    fallback: bool


def proposal_vector(p: RegionProposal) -> np.ndarray:
    """Everything the detector reports about a proposal, flattened:
    feature ++ box ++ class confidences ++ objectness."""
    return np.concatenate([p.feature, p.box.as_tuple(), p.class_conf, [p.objectness]])


def _single_forward(params, cfg, proposals: list[RegionProposal], token_ids: list[int]):
    vecs = np.stack([proposal_vector(p) for p in proposals])[None]
    mask = np.ones((1, len(proposals)), dtype=bool)
    toks = np.asarray(token_ids, dtype=np.int64)[None]
    tmask = np.ones_like(toks, dtype=bool)
    scores, record = score_proposals(params, cfg, vecs, mask, toks, tmask)
    return scores.value[0], record[-1][0]


def apply_nms1(proposals: list[RegionProposal], theta_nms1: float) -> list[RegionProposal]:
    """Objectness NMS, the first pipeline stage."""
    boxes = [p.box for p in proposals]
    keep = nms(boxes, [p.objectness for p in proposals], theta_nms1)
    return [proposals[i] for i in sorted(keep)]


def select(
    params: dict[str, Node],
    cfg: GroundingConfig,
    proposals: list[RegionProposal],
    token_ids: list[int],
) -> SelectionResult:
    """Full pipeline: NMS1 -> score -> threshold -> score NMS2 (with fallback)."""
    survivors = apply_nms1(proposals, cfg.theta_nms1)
    scores, attention = _single_forward(params, cfg, survivors, token_ids)
    above = [i for i, s in enumerate(scores) if s >= cfg.theta_s]
    fallback = not above
    if fallback:
        kept = [int(np.argmax(scores))]
    else:
        sub_boxes = [survivors[i].box for i in above]
        sub_scores = [scores[i] for i in above]
        kept = [above[j] for j in nms(sub_boxes, sub_scores, cfg.theta_nms2)]
    selected = ObjectSet.from_proposals([survivors[i] for i in kept])
    return SelectionResult(
        scores=scores, kept_indices=kept, selected=selected, attention=attention, fallback=fallback
    )


def union_augment(
    baseline: ObjectSet,
    proposals: list[RegionProposal],
    scores: np.ndarray,
    theta_s: float,
    theta_iou: float,
) -> ObjectSet:
    """Baseline set plus high-scoring proposals disjoint from every baseline box."""
    base_boxes = [Box(*b) for b in baseline.boxes]
    extra_feats, extra_boxes = [], []
    for p, s in zip(proposals, scores):
        if s < theta_s:
            continue
        if base_boxes and max(iou(p.box, b) for b in base_boxes) >= theta_iou:
            continue
        extra_feats.append(p.feature)
        extra_boxes.append(p.box.as_tuple())
    if not extra_feats:
        return ObjectSet(baseline.features.copy(), baseline.boxes.copy())
    return ObjectSet(
        np.concatenate([baseline.features, np.stack(extra_feats)]),
        np.concatenate([baseline.boxes, np.array(extra_boxes)]),
    )


# -- training ----------------------------------------------------------------


@dataclass
class SelectorEpochRecord:
    epoch: int
    lr: float
    train_loss: float
    precision: float
    recall: float


def _pad_selector_batch(items: list[dict], input_dim: int):
    b = len(items)
    n = max(it["vectors"].shape[0] for it in items)
    t = max(len(it["tokens"]) for it in items)
    vecs = np.zeros((b, n, input_dim))
    vmask = np.zeros((b, n), dtype=bool)
    toks = np.zeros((b, t), dtype=np.int64)
    tmask = np.zeros((b, t), dtype=bool)
    labels = np.zeros((b, n))
    for i, it in enumerate(items):
        kk = it["vectors"].shape[0]
        vecs[i, :kk] = it["vectors"]
        vmask[i, :kk] = True
        labels[i, :kk] = it["labels"]
        toks[i, : len(it["tokens"])] = it["tokens"]
        tmask[i, : len(it["tokens"])] = True
    return vecs, vmask, toks, tmask, labels


def train_selector(
    params: dict[str, Node],
    cfg: GroundingConfig,
    items: list[dict],
    seed: int,
) -> list[SelectorEpochRecord]:
    """Weighted-BCE training of the selection scores; deterministic per seed.

    Each item: vectors [N, input_dim] (post-NMS1 proposals), tokens, labels
    (binary necessity from GT matching).
    """
    sched = Schedule(
        base_lr=cfg.base_lr,
        decay_epochs=tuple(range(cfg.decay_every, cfg.epochs, cfg.decay_every)),
        decay_factor=cfg.decay_factor,
    )
    plist = [params[k] for k in sorted(params)]
    opt = SGD(plist, sched)
    rng = np.random.default_rng(seed)
    history = []
    n = len(items)
    for epoch in range(cfg.epochs):
        opt.epoch = epoch
        order = rng.permutation(n)
        losses = []
        tp = fp = fn = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            vecs, vmask, toks, tmask, labels = _pad_selector_batch([items[i] for i in idx], cfg.input_dim)
            ad.zero_grads(plist)
            scores, _ = score_proposals(params, cfg, vecs, vmask, toks, tmask)
            step_loss = ad.weighted_bce(scores, labels, cfg.w_pos, cfg.w_neg, mask=vmask) * (1.0 / len(idx))
            step_loss.backward()
            opt.step()
            losses.append(float(step_loss.value))
            pred = (scores.value >= cfg.theta_s) & vmask
            pos = (labels > 0.5) & vmask
            tp += int((pred & pos).sum())
            fp += int((pred & ~pos).sum())
            fn += int((~pred & pos).sum())
        history.append(
            SelectorEpochRecord(
                epoch=epoch,
                lr=opt.lr,
                train_loss=float(np.mean(losses)),
                precision=tp / max(tp + fp, 1),
                recall=tp / max(tp + fn, 1),
            )
        )
    return history


# -- attention export --------------------------------------------------------


def export_attention(result: SelectionResult, token_strings: list[str]) -> tuple[np.ndarray, list[dict]]:
    """Final-layer object->token coefficients for the selected objects.

    Returns (matrix [|selected| x N_w], per-row annotations).
    """
    mat = result.attention[result.kept_indices, : len(token_strings)]
    annotations = [
        {"row": r, "proposal_index": i, "box": [float(v) for v in result.selected.boxes[r]]}
        for r, i in enumerate(result.kept_indices)
    ]
    return mat, annotations
