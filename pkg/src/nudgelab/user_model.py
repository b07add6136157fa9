"""Trainable model of user position decisions under emphasized explanations.

Given the per-day context (episode day, asset change, forecast vector,
previous position) and the day's explanation texts with their emphasis
flags, the model outputs a probability distribution over the six legal
positions. Architecture: learned embedding tables for discrete inputs,
linear maps for continuous ones, an explanation term built from
element-wise products of text embedding x emphasis embedding x class
embedding summed over classes, one single-head scaled dot-product
attention block over the episode history (current day as query) with a
residual connection, and a linear map to position logits.

Everything is plain numpy in float64 with hand-written gradients, so the
analytic/finite-difference agreement is testable per parameter group and
parameters serialize to JSON as nested lists.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .constants import EPISODE_DAYS, POSITIONS
from .errors import DivergenceError, ValidationError
from .explanations import EmphasisPattern, ExplanationSet, HashingEmbedder
from .predictor import ClassProbabilities
from .seeding import rng_for

CLIP_NORM = 5.0  # global gradient-norm clip; fixed for reproducible curves

PARAM_GROUPS = (
    "day_table", "pos_table", "class_table", "emph_table",
    "w_delta", "b_delta", "w_p", "b_p",
    "w_query", "w_key", "w_value", "w_out", "b_out",
)

_POSITION_INDEX = {d: i for i, d in enumerate(POSITIONS)}


@dataclass(frozen=True)
class DecisionDistribution:
    """Probabilities over the six legal positions {0, 100, ..., 500}."""

    probs: tuple

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        if len(probs) != len(POSITIONS):
            raise ValidationError(f"expected {len(POSITIONS)} probabilities, got {len(probs)}")
        arr = np.array(probs)
        if not np.all(np.isfinite(arr)) or np.any(arr < -1e-12):
            raise ValidationError("probabilities must be finite and nonnegative")
        if abs(float(arr.sum()) - 1.0) > 1e-9:
            raise ValidationError(f"probabilities sum to {arr.sum()!r}, not 1")
        object.__setattr__(self, "probs", probs)

    def as_array(self) -> np.ndarray:
        return np.array(self.probs, dtype=float)

    @classmethod
    def from_array(cls, arr) -> "DecisionDistribution":
        return cls(tuple(float(v) for v in np.asarray(arr, dtype=float)))

    @classmethod
    def point_mass(cls, position: int) -> "DecisionDistribution":
        if position not in _POSITION_INDEX:
            raise ValidationError(f"position {position} not in {POSITIONS}")
        probs = [0.0] * len(POSITIONS)
        probs[_POSITION_INDEX[position]] = 1.0
        return cls(tuple(probs))

    def prob_of(self, position: int) -> float:
        return self.probs[_POSITION_INDEX[position]]

    def expected_position(self) -> float:
        return float(np.dot(self.as_array(), np.array(POSITIONS, dtype=float)))


@dataclass(frozen=True)
class DayContext:
    """One day of model input: context tuple plus the day's explanations."""

    t: int                      # day within the episode, 0-based
    delta_pct: float            # percent change of total assets vs previous day
    p: ClassProbabilities
    d_prev: int                 # position before today's order, element of POSITIONS
    texts: ExplanationSet
    pattern: EmphasisPattern

    def __post_init__(self):
        if self.d_prev not in _POSITION_INDEX:
            raise ValidationError(f"d_prev {self.d_prev} not in {POSITIONS}")
        if not math.isfinite(self.delta_pct):
            raise ValidationError("delta_pct must be finite")


@dataclass
class UserModelParams:
    """All trainable arrays. Dimensions follow embed_dim E and episode_len L."""

    embed_dim: int
    episode_len: int
    day_table: np.ndarray      # (L, E)
    pos_table: np.ndarray      # (6, E)
    class_table: np.ndarray    # (3, E)
    emph_table: np.ndarray     # (2, E)
    w_delta: np.ndarray        # (E,)
    b_delta: np.ndarray        # (E,)
    w_p: np.ndarray            # (3, E)
    b_p: np.ndarray            # (E,)
    w_query: np.ndarray        # (E, E)
    w_key: np.ndarray          # (E, E)
    w_value: np.ndarray        # (E, E)
    w_out: np.ndarray          # (E, 6)
    b_out: np.ndarray          # (6,)

    @classmethod
    def init(cls, embed_dim: int, episode_len: int, seed: int) -> "UserModelParams":
        rng = rng_for(seed, "usermodel-init")
        e = embed_dim
        scale = 1.0 / math.sqrt(e)
        return cls(
            embed_dim=e,
            episode_len=episode_len,
            day_table=0.1 * rng.standard_normal((episode_len, e)),
            pos_table=0.1 * rng.standard_normal((len(POSITIONS), e)),
            # product-form tables start near ones so the explanation term
            # begins as a plain sum of text embeddings
            class_table=1.0 + 0.1 * rng.standard_normal((3, e)),
            emph_table=1.0 + 0.1 * rng.standard_normal((2, e)),
            w_delta=0.1 * rng.standard_normal(e),
            b_delta=np.zeros(e),
            w_p=0.1 * rng.standard_normal((3, e)),
            b_p=np.zeros(e),
            w_query=scale * rng.standard_normal((e, e)),
            w_key=scale * rng.standard_normal((e, e)),
            w_value=scale * rng.standard_normal((e, e)),
            w_out=0.1 * rng.standard_normal((e, len(POSITIONS))),
            b_out=np.zeros(len(POSITIONS)),
        )

    def groups(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_GROUPS}

    def copy(self) -> "UserModelParams":
        return UserModelParams(
            embed_dim=self.embed_dim, episode_len=self.episode_len,
            **{name: getattr(self, name).copy() for name in PARAM_GROUPS},
        )

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(getattr(self, name)) for name in PARAM_GROUPS}

    def to_json(self) -> dict:
        doc = {"embed_dim": self.embed_dim, "episode_len": self.episode_len}
        doc.update({name: getattr(self, name).tolist() for name in PARAM_GROUPS})
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "UserModelParams":
        return cls(
            embed_dim=int(doc["embed_dim"]), episode_len=int(doc["episode_len"]),
            **{name: np.array(doc[name], dtype=float) for name in PARAM_GROUPS},
        )


def combine_explanations(texts: ExplanationSet, pattern: EmphasisPattern,
                         params: UserModelParams, embedder) -> np.ndarray:
    """Explanation-set embedding: sum over classes of
    text_embedding (*) emphasis_embedding (*) class_embedding, element-wise."""
    if embedder.dim != params.embed_dim:
        raise ValidationError(f"embedder dim {embedder.dim} != model dim {params.embed_dim}")
    flags = pattern.as_tuple()
    total = np.zeros(params.embed_dim)
    for i, text in enumerate(texts.as_tuple()):
        total += embedder.embed(text) * params.emph_table[int(flags[i])] * params.class_table[i]
    return total


def encode_day(t: int, delta_pct: float, p: ClassProbabilities, d_prev: int,
               x_embedding: np.ndarray, params: UserModelParams) -> np.ndarray:
    """Sum of day embedding, position embedding, linear(delta), linear(p), and
    the explanation embedding."""
    if not 0 <= t < params.episode_len:
        raise ValidationError(f"episode day {t} outside table range 0..{params.episode_len - 1}")
    if d_prev not in _POSITION_INDEX:
        raise ValidationError(f"d_prev {d_prev} not in {POSITIONS}")
    return (
        params.day_table[t]
        + params.pos_table[_POSITION_INDEX[d_prev]]
        + delta_pct * params.w_delta + params.b_delta
        + p.as_array() @ params.w_p + params.b_p
        + x_embedding
    )


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def predict_distribution(history, params: UserModelParams) -> DecisionDistribution:
    """Decision distribution for the last day of ``history`` (encoded vectors).

    Single-head scaled dot-product attention with the current (last) day as
    query over all days, residual add, output map, softmax.
    """
    h = np.asarray(history, dtype=float)
    if h.ndim == 1:
        h = h[None, :]
    if h.shape[0] == 0:
        raise ValidationError("history must contain at least one encoded day")
    if h.shape[1] != params.embed_dim:
        raise ValidationError(f"encoded dim {h.shape[1]} != model dim {params.embed_dim}")
    q = h[-1] @ params.w_query
    k = h @ params.w_key
    v = h @ params.w_value
    weights = _softmax_rows((k @ q) / math.sqrt(params.embed_dim))
    z = h[-1] + weights @ v
    return DecisionDistribution.from_array(_softmax_rows(z @ params.w_out + params.b_out))


# ---------------------------------------------------------------------------
# Vectorized sequence computation used for training and batched queries.
# ---------------------------------------------------------------------------


@dataclass
class SequenceInputs:
    """Arrays for one episode sequence of T days."""

    t_idx: np.ndarray       # (T,) int
    d_prev_idx: np.ndarray  # (T,) int
    delta: np.ndarray       # (T,)
    p: np.ndarray           # (T, 3)
    text_embs: np.ndarray   # (T, 3, E)
    emph_idx: np.ndarray    # (T, 3) int
    labels: np.ndarray | None = None  # (T,) int position indices

    @property
    def length(self) -> int:
        return self.t_idx.shape[0]


def build_inputs(sequence, params: UserModelParams, embedder,
                 labels=None) -> SequenceInputs:
    """Convert a list of DayContext (plus optional observed positions) to arrays."""
    if not sequence:
        raise ValidationError("empty sequence")
    t_idx, d_prev_idx, delta, p, text_embs, emph_idx = [], [], [], [], [], []
    for ctx in sequence:
        if not 0 <= ctx.t < params.episode_len:
            raise ValidationError(f"episode day {ctx.t} outside table range 0..{params.episode_len - 1}")
        t_idx.append(ctx.t)
        d_prev_idx.append(_POSITION_INDEX[ctx.d_prev])
        delta.append(ctx.delta_pct)
        p.append(ctx.p.as_array())
        text_embs.append([embedder.embed(text) for text in ctx.texts.as_tuple()])
        emph_idx.append([int(flag) for flag in ctx.pattern.as_tuple()])
    label_arr = None
    if labels is not None:
        label_arr = np.array([_POSITION_INDEX[d] for d in labels], dtype=int)
        if label_arr.shape[0] != len(sequence):
            raise ValidationError("labels and sequence lengths differ")
    return SequenceInputs(
        t_idx=np.array(t_idx, dtype=int),
        d_prev_idx=np.array(d_prev_idx, dtype=int),
        delta=np.array(delta, dtype=float),
        p=np.stack(p),
        text_embs=np.array(text_embs, dtype=float),
        emph_idx=np.array(emph_idx, dtype=int),
        labels=label_arr,
    )


def _encode_sequence(inputs: SequenceInputs, params: UserModelParams):
    emph_rows = params.emph_table[inputs.emph_idx]            # (T, 3, E)
    x_emb = (inputs.text_embs * emph_rows * params.class_table[None, :, :]).sum(axis=1)
    h = (
        params.day_table[inputs.t_idx]
        + params.pos_table[inputs.d_prev_idx]
        + inputs.delta[:, None] * params.w_delta[None, :] + params.b_delta
        + inputs.p @ params.w_p + params.b_p
        + x_emb
    )
    return h, emph_rows


def _forward_sequence(inputs: SequenceInputs, params: UserModelParams):
    """Causally masked attention over the episode: row t attends to days <= t."""
    h, emph_rows = _encode_sequence(inputs, params)
    T = h.shape[0]
    q = h @ params.w_query
    k = h @ params.w_key
    v = h @ params.w_value
    scores = (q @ k.T) / math.sqrt(params.embed_dim)
    mask = np.tril(np.ones((T, T), dtype=bool))
    scores = np.where(mask, scores, -np.inf)
    attn = _softmax_rows(scores)
    z = h + attn @ v
    logits = z @ params.w_out + params.b_out
    probs = _softmax_rows(logits)
    cache = {"h": h, "q": q, "k": k, "v": v, "attn": attn, "z": z,
             "probs": probs, "emph_rows": emph_rows}
    return probs, cache


def _backward_sequence(inputs: SequenceInputs, params: UserModelParams, cache,
                       dlogits: np.ndarray, grads: dict[str, np.ndarray]) -> None:
    h, q, k, v, attn, z = (cache[name] for name in ("h", "q", "k", "v", "attn", "z"))
    grads["w_out"] += z.T @ dlogits
    grads["b_out"] += dlogits.sum(axis=0)
    dz = dlogits @ params.w_out.T

    dh = dz.copy()
    dattn = dz @ v.T
    dv = attn.T @ dz
    dscores = attn * (dattn - (dattn * attn).sum(axis=1, keepdims=True))
    dscores /= math.sqrt(params.embed_dim)
    dq = dscores @ k
    dk = dscores.T @ q
    grads["w_query"] += h.T @ dq
    grads["w_key"] += h.T @ dk
    grads["w_value"] += h.T @ dv
    dh += dq @ params.w_query.T + dk @ params.w_key.T + dv @ params.w_value.T

    np.add.at(grads["day_table"], inputs.t_idx, dh)
    np.add.at(grads["pos_table"], inputs.d_prev_idx, dh)
    grads["w_delta"] += (dh * inputs.delta[:, None]).sum(axis=0)
    grads["b_delta"] += dh.sum(axis=0)
    grads["w_p"] += inputs.p.T @ dh
    grads["b_p"] += dh.sum(axis=0)

    dx3 = dh[:, None, :] * inputs.text_embs                    # (T, 3, E)
    demph = dx3 * params.class_table[None, :, :]
    np.add.at(grads["emph_table"], inputs.emph_idx.reshape(-1),
              demph.reshape(-1, params.embed_dim))
    grads["class_table"] += (dx3 * cache["emph_rows"]).sum(axis=0)


def loss_and_grads(batch: list[SequenceInputs], params: UserModelParams):
    """Mean cross-entropy over every labeled day in the batch, with gradients."""
    total_days = sum(seq.length for seq in batch)
    if total_days == 0:
        raise ValidationError("empty batch")
    grads = params.zeros_like()
    loss = 0.0
    for seq in batch:
        if seq.labels is None:
            raise ValidationError("training sequences need labels")
        probs, cache = _forward_sequence(seq, params)
        rows = np.arange(seq.length)
        picked = probs[rows, seq.labels]
        loss += -np.sum(np.log(picked + 1e-300))
        dlogits = probs.copy()
        dlogits[rows, seq.labels] -= 1.0
        dlogits /= total_days
        _backward_sequence(seq, params, cache, dlogits, grads)
    return loss / total_days, grads


def sequence_log_loss(batch: list[SequenceInputs], params: UserModelParams) -> float:
    total_days = sum(seq.length for seq in batch)
    loss = 0.0
    for seq in batch:
        probs, _ = _forward_sequence(seq, params)
        picked = probs[np.arange(seq.length), seq.labels]
        loss += -np.sum(np.log(picked + 1e-300))
    return loss / total_days


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float = CLIP_NORM) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def counterfactual_query(history, current: DayContext, pattern: EmphasisPattern,
                         params: UserModelParams, embedder) -> DecisionDistribution:
    """Distribution for the current day with its emphasis pattern replaced by
    ``pattern``; history days keep their realized patterns."""
    if pattern.count == 3:
        raise ValidationError("all-emphasized pattern is outside the search space")
    return DecisionDistribution.from_array(
        counterfactual_batch(history, current, [pattern], params, embedder)[0]
    )


def counterfactual_batch(history, current: DayContext, patterns,
                         params: UserModelParams, embedder) -> np.ndarray:
    """Distributions for the current day under several candidate patterns.

    Equivalent to stacking ``counterfactual_query`` results; batched so the
    selector's seven queries share the history encoding.
    """
    base = encode_day(current.t, current.delta_pct, current.p, current.d_prev,
                      np.zeros(params.embed_dim), params)
    variants = np.stack([
        base + combine_explanations(current.texts, pat, params, embedder)
        for pat in patterns
    ])
    if history:
        hist_inputs = build_inputs(list(history), params, embedder)
        h_hist, _ = _encode_sequence(hist_inputs, params)
        k_hist = h_hist @ params.w_key
        v_hist = h_hist @ params.w_value
    else:
        k_hist = v_hist = np.zeros((0, params.embed_dim))

    q = variants @ params.w_query
    k_self = variants @ params.w_key
    v_self = variants @ params.w_value
    scores = np.concatenate(
        [q @ k_hist.T, (q * k_self).sum(axis=1, keepdims=True)], axis=1
    ) / math.sqrt(params.embed_dim)
    attn = _softmax_rows(scores)
    att = attn[:, :-1] @ v_hist + attn[:, -1:] * v_self
    z = variants + att
    return _softmax_rows(z @ params.w_out + params.b_out)


@dataclass
class TrainResult:
    params: UserModelParams
    loss_curve: list = field(default_factory=list)


def train(sequences, label_seqs, embed_dim=32, episode_len=EPISODE_DAYS,
          learning_rate=0.08, epochs=200, batch_size=8, seed=0,
          embedder=None) -> TrainResult:
    """Mini-batch gradient descent on the sequence cross-entropy.

    Deterministic for a fixed seed: fixed-seed shuffling, plain GD updates,
    global gradient clipping at norm 5.0.
    """
    if not sequences:
        raise ValidationError("empty dataset")
    if len(sequences) != len(label_seqs):
        raise ValidationError("sequences and labels differ in length")
    embedder = embedder or HashingEmbedder(embed_dim)
    params = UserModelParams.init(embed_dim, episode_len, seed)
    prepared = [
        build_inputs(seq, params, embedder, labels=labels)
        for seq, labels in zip(sequences, label_seqs)
    ]
    rng = rng_for(seed, "usermodel-train")
    curve = [sequence_log_loss(prepared, params)]
    for epoch in range(epochs):
        order = rng.permutation(len(prepared))
        epoch_loss, weight = 0.0, 0
        for start in range(0, len(prepared), batch_size):
            batch = [prepared[i] for i in order[start : start + batch_size]]
            loss, grads = loss_and_grads(batch, params)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            clip_gradients(grads)
            for name, grad in grads.items():
                arr = getattr(params, name)
                arr -= learning_rate * grad
            days = sum(seq.length for seq in batch)
            epoch_loss += loss * days
            weight += days
        curve.append(epoch_loss / weight)
    return TrainResult(params=params, loss_curve=curve)


class UserModel(BaseEstimator):
    """Estimator wrapper: ``fit`` on logged episode sequences, probabilistic
    prediction and counterfactual queries for the selector."""

    def __init__(self, embed_dim=32, episode_len=EPISODE_DAYS, learning_rate=0.08,
                 epochs=200, batch_size=8, seed=0):
        self.embed_dim = embed_dim
        self.episode_len = episode_len
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    @property
    def embedder(self) -> HashingEmbedder:
        return HashingEmbedder(self.embed_dim)

    def fit(self, sequences, label_seqs=None):
        """Train on a list of episode sequences.

        ``sequences`` may be lists of DayContext with ``label_seqs`` giving the
        observed positions, or lists of trajectory records (anything with
        p/texts/pattern/d_u/delta_pct attributes), from which both are derived.
        """
        if sequences and label_seqs is None:
            converted = [contexts_from_records(seq) for seq in sequences]
            sequences = [ctxs for ctxs, _ in converted]
            label_seqs = [labels for _, labels in converted]
        result = train(
            sequences, label_seqs, embed_dim=self.embed_dim, episode_len=self.episode_len,
            learning_rate=self.learning_rate, epochs=self.epochs,
            batch_size=self.batch_size, seed=self.seed, embedder=self.embedder,
        )
        self.params_ = result.params
        self.loss_curve_ = result.loss_curve
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise ValidationError("model is not fitted")

    def predict_proba(self, sequence) -> DecisionDistribution:
        """Distribution for the last day of a DayContext sequence."""
        self._check_fitted()
        inputs = build_inputs(list(sequence), self.params_, self.embedder)
        h, _ = _encode_sequence(inputs, self.params_)
        return predict_distribution(h, self.params_)

    def counterfactual(self, history, current: DayContext,
                       pattern: EmphasisPattern) -> DecisionDistribution:
        self._check_fitted()
        return counterfactual_query(history, current, pattern, self.params_, self.embedder)

    def evaluate(self, sequences, label_seqs=None) -> float:
        """Mean cross-entropy (nats per decision) on held-out sequences."""
        self._check_fitted()
        if sequences and label_seqs is None:
            converted = [contexts_from_records(seq) for seq in sequences]
            sequences = [ctxs for ctxs, _ in converted]
            label_seqs = [labels for _, labels in converted]
        prepared = [
            build_inputs(seq, self.params_, self.embedder, labels=labels)
            for seq, labels in zip(sequences, label_seqs)
        ]
        return sequence_log_loss(prepared, self.params_)

    def save(self, path) -> None:
        self._check_fitted()
        doc = {
            "config": {
                "embed_dim": self.embed_dim, "episode_len": self.episode_len,
                "learning_rate": self.learning_rate, "epochs": self.epochs,
                "batch_size": self.batch_size, "seed": self.seed,
            },
            "params": self.params_.to_json(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "UserModel":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        model = cls(**doc["config"])
        model.params_ = UserModelParams.from_json(doc["params"])
        model.loss_curve_ = []
        return model


def contexts_from_records(records) -> tuple[list[DayContext], list[int]]:
    """Reconstruct model inputs and labels from one episode's trajectory records."""
    contexts, labels = [], []
    d_prev = 0
    for i, rec in enumerate(records):
        contexts.append(DayContext(
            t=i, delta_pct=rec.delta_pct, p=rec.p, d_prev=d_prev,
            texts=rec.texts, pattern=rec.pattern,
        ))
        labels.append(rec.d_u)
        d_prev = rec.d_u
    return contexts, labels
