"""Bottom-up-top-down VQA reasoner with optional necessity head.

Question encoding is a GRU over learned word embeddings; a question-
conditioned two-layer scorer produces attention over the object set, the
weighted visual sum is fused with the question by element-wise product, and
linear layers give the answer distribution. The necessity head scores each
object's joint hidden state with a sigmoid.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .optim import Adam, Schedule
from .scene import ANSWERS, WORDS

N_WORDS = len(WORDS)
N_ANSWERS = len(ANSWERS)


@dataclass
class UpDnConfig:
    d_word: int = 32
    d_q: int = 64
    d_hidden: int = 96
    input_dim: int = 44  # detector d_f + 4 box coordinates
    aux_head: bool = False
    aux_scale: float = 0.75  # initial weight of the auxiliary term, annealed to 0
    epochs: int = 15
    batch_size: int = 64
    base_lr: float = 2e-3
    warmup_start: float = 2e-4
    warmup_epochs: int = 3
    decay_epochs: tuple = (10, 12)
    decay_factor: float = 0.2
    init_scale: float = 0.08


def init_params(cfg: UpDnConfig, seed: int) -> dict[str, Node]:
    rng = np.random.default_rng(seed)
    s = cfg.init_scale

    def p(*shape):
        return Node(rng.normal(0.0, s, size=shape))

    def zeros(*shape):
        return Node(np.zeros(shape))

    d_w, d_q, d_h, d_in = cfg.d_word, cfg.d_q, cfg.d_hidden, cfg.input_dim
    params = {
        "word_emb": p(N_WORDS, d_w),
        # GRU gates
        "Wz": p(d_w, d_q), "Uz": p(d_q, d_q), "bz": zeros(d_q),
        "Wr": p(d_w, d_q), "Ur": p(d_q, d_q), "br": zeros(d_q),
        "Wn": p(d_w, d_q), "Un": p(d_q, d_q), "bn": zeros(d_q),
        # top-down attention scorer over (q ++ object)
        "W_att1": p(d_q + d_in, d_h), "b_att1": zeros(d_h),
        "w_att2": p(d_h, 1), "b_att2": zeros(1),
        # visual projection and answer head
        "W_v": p(d_in, d_q), "b_v": zeros(d_q),
        "W_f": p(d_q, d_h), "b_f": zeros(d_h),
        "W_out": p(d_h, N_ANSWERS), "b_out": zeros(N_ANSWERS),
    }
    if cfg.aux_head:
        params["w_nec"] = p(d_h, 1)
        # start at the base-rate logit (~1-in-10 positives) so the first
        # BCE steps spend their budget on discrimination, not calibration
        params["b_nec"] = Node(np.full(1, -2.0))
    return params


def encode_question(params: dict[str, Node], tokens: np.ndarray, token_mask: np.ndarray) -> Node:
    """Final GRU hidden state over a padded [B, T] token batch."""
    b, t = tokens.shape
    d_q = params["Uz"].value.shape[0]
    h = Node(np.zeros((b, d_q)))
    for step in range(t):
        x = ad.embedding(params["word_emb"], tokens[:, step])  # [B, d_w]
        z = ad.sigmoid(x @ params["Wz"] + h @ params["Uz"] + params["bz"])
        r = ad.sigmoid(x @ params["Wr"] + h @ params["Ur"] + params["br"])
        n = ad.tanh(x @ params["Wn"] + (r * h) @ params["Un"] + params["bn"])
        h_new = (1.0 - z) * n + z * h
        m = token_mask[:, step : step + 1].astype(np.float64)
        h = Node(m) * h_new + Node(1.0 - m) * h
    return h


@dataclass
class UpDnOutput:
    answer_logits: Node  # [B, A]
    attention: Node  # [B, K]
    necessity: Node | None  # [B, K] sigmoid probabilities


def forward(
    params: dict[str, Node],
    cfg: UpDnConfig,
    tokens: np.ndarray,
    token_mask: np.ndarray,
    obj_feats: np.ndarray,
    obj_mask: np.ndarray,
) -> UpDnOutput:
    """Batched forward pass.

    obj_feats is [B, K, input_dim] padded; obj_mask [B, K] boolean, at least
    one True per row.
    """
    b, k, _ = obj_feats.shape
    if k == 0:
        raise ad.AutodiffError("empty object set reached the reasoner")
    q = encode_question(params, tokens, token_mask)  # [B, d_q]
    v = Node(obj_feats)

    q_tiled = ad.reshape(q, (b, 1, -1)) + Node(np.zeros((b, k, 1)))  # broadcast copy
    joint = ad.concat([q_tiled, v], axis=-1)  # [B, K, d_q + d_in]
    hidden = ad.tanh(joint @ params["W_att1"] + params["b_att1"])  # [B, K, H]
    logits = ad.reshape(hidden @ params["w_att2"] + params["b_att2"], (b, k))
    att = ad.softmax(logits, mask=obj_mask, axis=-1)  # [B, K]

    v_proj = ad.tanh(v @ params["W_v"] + params["b_v"])  # [B, K, d_q]
    weighted = ad.nsum(ad.reshape(att, (b, k, 1)) * v_proj, axis=1)  # [B, d_q]
    fused = q * weighted
    a_hidden = ad.tanh(fused @ params["W_f"] + params["b_f"])
    answer_logits = a_hidden @ params["W_out"] + params["b_out"]

    necessity = None
    if "w_nec" in params:
        necessity = ad.sigmoid(ad.reshape(hidden @ params["w_nec"] + params["b_nec"], (b, k)))
    return UpDnOutput(answer_logits=answer_logits, attention=att, necessity=necessity)


def loss(
    out: UpDnOutput,
    answer_labels: np.ndarray,
    necessity_labels: np.ndarray | None = None,
    obj_mask: np.ndarray | None = None,
    aux_scale: float = 1.0,
) -> Node:
    """Mean over the batch of answer CE plus (when enabled) scaled per-object BCE."""
    b = out.answer_logits.value.shape[0]
    total = ad.cross_entropy_batch(out.answer_logits, answer_labels, reduction="sum")
    if out.necessity is not None and necessity_labels is not None:
        bce = ad.weighted_bce(out.necessity, necessity_labels, 1.0, 1.0, mask=obj_mask)
        total = total + bce * aux_scale
    return total * (1.0 / b)


# -- batching ---------------------------------------------------------------


@dataclass
class Batch:
    tokens: np.ndarray
    token_mask: np.ndarray
    obj_feats: np.ndarray
    obj_mask: np.ndarray
    answers: np.ndarray
    necessity: np.ndarray
    categories: list[str]


def make_batch(instances: list[dict], input_dim: int) -> Batch:
    """Pad a list of prepared instances into dense arrays.

    Each instance dict needs: tokens (list[int]), vectors ([k, input_dim]),
    answer (int), necessity (array [k]), category (str). Empty object sets
    get a single all-zero null object labelled unnecessary.
    """
    b = len(instances)
    t = max(len(inst["tokens"]) for inst in instances)
    k = max(max(inst["vectors"].shape[0], 1) for inst in instances)
    tokens = np.zeros((b, t), dtype=np.int64)
    token_mask = np.zeros((b, t), dtype=bool)
    feats = np.zeros((b, k, input_dim))
    obj_mask = np.zeros((b, k), dtype=bool)
    answers = np.zeros(b, dtype=np.int64)
    necessity = np.zeros((b, k))
    for i, inst in enumerate(instances):
        toks = inst["tokens"]
        tokens[i, : len(toks)] = toks
        token_mask[i, : len(toks)] = True
        vec = inst["vectors"]
        if vec.shape[0] == 0:
            obj_mask[i, 0] = True  # null object: zero vector, not necessary
        else:
            feats[i, : vec.shape[0]] = vec
            obj_mask[i, : vec.shape[0]] = True
            necessity[i, : vec.shape[0]] = inst["necessity"]
        answers[i] = inst["answer"]
    return Batch(tokens, token_mask, feats, obj_mask, answers, necessity, [i["category"] for i in instances])


# -- training ----------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    order_hash: str = ""  # digest of the shuffled batch order, for pairing checks


class DivergenceError(RuntimeError):
    pass


def train(
    params: dict[str, Node],
    cfg: UpDnConfig,
    train_instances: list[dict],
    seed: int,
) -> list[EpochRecord]:
    """Adam training over shuffled minibatches; deterministic per seed."""
    sched = Schedule(
        base_lr=cfg.base_lr,
        warmup_start=cfg.warmup_start,
        warmup_epochs=cfg.warmup_epochs,
        decay_epochs=tuple(cfg.decay_epochs),
        decay_factor=cfg.decay_factor,
    )
    plist = [params[k] for k in sorted(params)]
    opt = Adam(plist, sched)
    rng = np.random.default_rng(seed)
    history: list[EpochRecord] = []
    n = len(train_instances)
    for epoch in range(cfg.epochs):
        opt.epoch = epoch
        order = rng.permutation(n)
        order_hash = hashlib.sha256(order.tobytes()).hexdigest()[:16]
        # the auxiliary term steers the shared representation early and
        # fades out so the final epochs optimize the answer loss alone
        aux_scale = cfg.aux_scale * (1.0 - epoch / cfg.epochs)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = make_batch([train_instances[i] for i in idx], cfg.input_dim)
            ad.zero_grads(plist)
            out = forward(params, cfg, batch.tokens, batch.token_mask, batch.obj_feats, batch.obj_mask)
            try:
                step_loss = loss(
                    out,
                    batch.answers,
                    batch.necessity if cfg.aux_head else None,
                    batch.obj_mask,
                    aux_scale=aux_scale,
                )
                step_loss.backward()
            except ad.AutodiffError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}") from exc
            opt.step()
            losses.append(float(step_loss.value))
        history.append(
            EpochRecord(epoch=epoch, lr=opt.lr, train_loss=float(np.mean(losses)), order_hash=order_hash)
        )
    return history


def predict(params: dict[str, Node], cfg: UpDnConfig, instances: list[dict], batch_size: int = 256):
    """Answer argmax and necessity probabilities for a prepared split."""
    answers = np.zeros(len(instances), dtype=np.int64)
    nec_probs: list[np.ndarray] = []
    for start in range(0, len(instances), batch_size):
        chunk = instances[start : start + batch_size]
        batch = make_batch(chunk, cfg.input_dim)
        out = forward(params, cfg, batch.tokens, batch.token_mask, batch.obj_feats, batch.obj_mask)
        answers[start : start + len(chunk)] = out.answer_logits.value.argmax(axis=1)
        if out.necessity is not None:
            for i, inst in enumerate(chunk):
                kk = max(inst["vectors"].shape[0], 1)
                nec_probs.append(out.necessity.value[i, :kk])
        else:
            nec_probs.extend(np.zeros(max(inst["vectors"].shape[0], 1)) for inst in chunk)
    return answers, nec_probs
