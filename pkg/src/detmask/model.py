"""A small masked language model with hand-derived gradients.

Architecture: token plus position embeddings, one single-head self-attention
block with a residual connection, one ReLU feed-forward block with a residual
connection, and an LM head tied to the token embedding matrix.  A separate
d-by-3 matrix classifies contextual embeddings into the three masked-input
variants.  Everything runs in float64 numpy on sequences of at most max_len
tokens; pad tokens are excluded from attention as keys.

Three losses over a (keep, drop, random) item:

* L_mlm   mean cross-entropy at the object positions of the keep input,
* L_con   mean truth probability at those positions under the drop input
          minus the same under the keep input (lower means the clues help),
* L_cls   mean cross-entropy of the 3-way variant classifier over the object
          position embeddings of all three inputs.

Total = L_mlm + lambda_con * L_con + lambda_cls * L_cls.  Gradients are exact
and checked against central finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import EmptyMaskSet, NoMask, NonFiniteLoss, SequenceTooLong
from .masking import MASK_ID, PAD_ID, UNK_ID, MaskedSample, Vocabulary

_NEG_INF = -1e30

TrainItem = Union[
    MaskedSample,
    tuple[MaskedSample, MaskedSample],
    tuple[MaskedSample, MaskedSample, MaskedSample],
]


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d: int = 16
    max_len: int = 128
    seed: int = 0
    lambda_con: float = 1.0
    lambda_cls: float = 1.0

    def __post_init__(self) -> None:
        if self.d < 2:
            raise ValueError("embedding dimension must be at least 2")
        if self.vocab_size < 4:
            raise ValueError("vocabulary needs pad, mask, unknown and a content token")


@dataclass
class ModelState:
    tok_emb: np.ndarray
    pos_emb: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    lm_bias: np.ndarray
    w_cls: np.ndarray

    def params(self) -> dict[str, np.ndarray]:
        return {
            "tok_emb": self.tok_emb,
            "pos_emb": self.pos_emb,
            "wq": self.wq,
            "wk": self.wk,
            "wv": self.wv,
            "wo": self.wo,
            "w1": self.w1,
            "b1": self.b1,
            "w2": self.w2,
            "b2": self.b2,
            "lm_bias": self.lm_bias,
            "w_cls": self.w_cls,
        }


@dataclass(frozen=True)
class ForwardOutput:
    embeddings: np.ndarray  # (n, d) contextual vectors
    probs: np.ndarray  # (n, vocab) rows summing to 1


@dataclass(frozen=True)
class LogEntry:
    step: int
    l_mlm: float
    l_con: float
    l_cls: float
    l_total: float


def init(config: ModelConfig) -> ModelState:
    """Fresh parameters: zero-mean normals at scale 0.02, zero biases."""
    rng = np.random.default_rng(config.seed)
    d, v, h = config.d, config.vocab_size, 4 * config.d

    def normal(*shape: int) -> np.ndarray:
        return rng.normal(0.0, 0.02, size=shape)

    return ModelState(
        tok_emb=normal(v, d),
        pos_emb=normal(config.max_len, d),
        wq=normal(d, d),
        wk=normal(d, d),
        wv=normal(d, d),
        wo=normal(d, d),
        w1=normal(d, h),
        b1=np.zeros(h),
        w2=normal(h, d),
        b2=np.zeros(d),
        lm_bias=np.zeros(v),
        w_cls=normal(d, 3),
    )


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_full(state: ModelState, tokens: Sequence[int], max_len: int) -> dict:
    n = len(tokens)
    if n > max_len:
        raise SequenceTooLong(f"sequence of {n} tokens exceeds max_len {max_len}")
    toks = np.asarray(tokens, dtype=np.int64)
    d = state.tok_emb.shape[1]
    x = state.tok_emb[toks] + state.pos_emb[:n]
    key_mask = toks == PAD_ID
    q = x @ state.wq
    k = x @ state.wk
    v = x @ state.wv
    scores = (q @ k.T) / math.sqrt(d)
    if key_mask.any():
        scores = scores.copy()
        scores[:, key_mask] = _NEG_INF
    attn = _softmax(scores)
    ctx = attn @ v
    h1 = x + ctx @ state.wo
    pre = h1 @ state.w1 + state.b1
    f = np.maximum(pre, 0.0)
    h2 = h1 + f @ state.w2 + state.b2
    logits = h2 @ state.tok_emb.T + state.lm_bias
    probs = _softmax(logits)
    return {
        "toks": toks,
        "key_mask": key_mask,
        "x": x,
        "q": q,
        "k": k,
        "v": v,
        "attn": attn,
        "ctx": ctx,
        "h1": h1,
        "pre": pre,
        "f": f,
        "h2": h2,
        "probs": probs,
    }


def forward(state: ModelState, input_tokens: Sequence[int],
            max_len: Optional[int] = None) -> ForwardOutput:
    """Contextual embeddings and per-position vocabulary distributions."""
    limit = state.pos_emb.shape[0] if max_len is None else max_len
    cache = _forward_full(state, input_tokens, limit)
    return ForwardOutput(embeddings=cache["h2"], probs=cache["probs"])


def avg_truth_prob(output: ForwardOutput, mask_positions: Sequence[int],
                   targets: Sequence[int]) -> float:
    """Arithmetic mean of the probability given to each target at its position."""
    if len(mask_positions) == 0:
        raise EmptyMaskSet("no mask positions to average over")
    pos = np.asarray(mask_positions, dtype=np.int64)
    tgt = np.asarray(targets, dtype=np.int64)
    return float(output.probs[pos, tgt].mean())


def _zero_grads(state: ModelState) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in state.params().items()}


def _backward(state: ModelState, cache: dict, dlogits: np.ndarray,
              dh2_extra: np.ndarray, grads: dict[str, np.ndarray]) -> None:
    d = state.tok_emb.shape[1]
    dh2 = dlogits @ state.tok_emb + dh2_extra
    grads["tok_emb"] += dlogits.T @ cache["h2"]
    grads["lm_bias"] += dlogits.sum(axis=0)
    grads["b2"] += dh2.sum(axis=0)
    df = dh2 @ state.w2.T
    grads["w2"] += cache["f"].T @ dh2
    dpre = df * (cache["pre"] > 0)
    grads["w1"] += cache["h1"].T @ dpre
    grads["b1"] += dpre.sum(axis=0)
    dh1 = dh2 + dpre @ state.w1.T
    dctx = dh1 @ state.wo.T
    grads["wo"] += cache["ctx"].T @ dh1
    dx = dh1.copy()
    dattn = dctx @ cache["v"].T
    dv = cache["attn"].T @ dctx
    grads["wv"] += cache["x"].T @ dv
    dx += dv @ state.wv.T
    row_dot = (dattn * cache["attn"]).sum(axis=1, keepdims=True)
    dscores = cache["attn"] * (dattn - row_dot)
    if cache["key_mask"].any():
        dscores[:, cache["key_mask"]] = 0.0
    scale = 1.0 / math.sqrt(d)
    dq = dscores @ cache["k"] * scale
    dk = dscores.T @ cache["q"] * scale
    grads["wq"] += cache["x"].T @ dq
    grads["wk"] += cache["x"].T @ dk
    dx += dq @ state.wq.T + dk @ state.wk.T
    np.add.at(grads["tok_emb"], cache["toks"], dx)
    grads["pos_emb"][: len(cache["toks"])] += dx


def _unpack(item: TrainItem) -> tuple[MaskedSample, Optional[MaskedSample], Optional[MaskedSample]]:
    if isinstance(item, MaskedSample):
        return item, None, None
    if len(item) == 2:
        return item[0], item[1], None
    return item[0], item[1], item[2]


def loss_and_grad(
    state: ModelState,
    item: TrainItem,
    coeffs: tuple[float, float, float],
    max_len: int,
    want_grad: bool = True,
) -> tuple[tuple[float, float, float, float], Optional[dict[str, np.ndarray]]]:
    """Losses and exact parameter gradients of the weighted total.

    ``coeffs`` weights (mlm, con, cls) in the total; a zero weight skips that
    component's gradient so each can be checked in isolation.
    """
    w_mlm, w_con, w_cls = coeffs
    keep, drop, randv = _unpack(item)
    if len(keep.mask_positions) == 0:
        raise EmptyMaskSet("keep input has no mask positions")
    pos = np.asarray(keep.mask_positions, dtype=np.int64)
    tgt = np.asarray(keep.targets, dtype=np.int64)
    n_obj = len(pos)

    passes: dict[str, dict] = {"keep": _forward_full(state, keep.input_tokens, max_len)}
    if drop is not None:
        passes["drop"] = _forward_full(state, drop.input_tokens, max_len)
    if randv is not None:
        passes["rand"] = _forward_full(state, randv.input_tokens, max_len)

    grads = _zero_grads(state) if want_grad else None
    dlogits = {name: np.zeros_like(c["probs"]) for name, c in passes.items()}
    dh2 = {name: np.zeros_like(c["h2"]) for name, c in passes.items()}

    p_keep = passes["keep"]["probs"][pos, tgt]
    l_mlm = float(-np.log(p_keep).mean())
    if want_grad and w_mlm:
        g = passes["keep"]["probs"][pos].copy()
        g[np.arange(n_obj), tgt] -= 1.0
        dlogits["keep"][pos] += (w_mlm / n_obj) * g

    l_con = 0.0
    if drop is not None:
        p_drop = passes["drop"]["probs"][pos, tgt]
        l_con = float(p_drop.mean() - p_keep.mean())
        if want_grad and w_con:
            for name, sign, pvals in (("drop", 1.0, p_drop), ("keep", -1.0, p_keep)):
                probs = passes[name]["probs"][pos]
                jac = -probs * pvals[:, None]
                jac[np.arange(n_obj), tgt] += pvals
                dlogits[name][pos] += (sign * w_con / n_obj) * jac

    l_cls = 0.0
    if randv is not None:
        total = 3 * n_obj
        acc = 0.0
        for label, name in enumerate(("keep", "drop", "rand")):
            e = passes[name]["h2"][pos]
            y = _softmax(e @ state.w_cls)
            acc += float(-np.log(y[:, label]).sum())
            if want_grad and w_cls:
                ds = y.copy()
                ds[:, label] -= 1.0
                ds *= w_cls / total
                grads["w_cls"] += e.T @ ds
                dh2[name][pos] += ds @ state.w_cls.T
        l_cls = acc / total

    l_total = w_mlm * l_mlm + w_con * l_con + w_cls * l_cls
    if not math.isfinite(l_total):
        raise NonFiniteLoss(-1, l_total)
    if want_grad:
        for name, cache in passes.items():
            _backward(state, cache, dlogits[name], dh2[name], grads)
    return (l_mlm, l_con, l_cls, l_total), grads


def grad(state: ModelState, item: TrainItem, config: ModelConfig) -> dict[str, np.ndarray]:
    """d L_total / d theta at the configured loss weights."""
    _losses, grads = loss_and_grad(
        state, item, (1.0, config.lambda_con, config.lambda_cls), config.max_len
    )
    return grads


def finite_diff_check(
    state: ModelState,
    item: TrainItem,
    eps: float = 1e-5,
    coeffs: tuple[float, float, float] = (1.0, 1.0, 1.0),
    max_len: int = 128,
    min_coords: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error of analytic gradients against central differences.

    Samples at least ``min_coords`` coordinates spread over every parameter
    group in proportion to its size (small groups are checked exhaustively).
    """
    if not 0 < eps <= 1e-3:
        raise ValueError("eps must be in (0, 1e-3]")
    _losses, grads = loss_and_grad(state, item, coeffs, max_len)
    params = state.params()
    total = sum(arr.size for arr in params.values())
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, arr in params.items():
        share = max(8, math.ceil(min_coords * arr.size / total))
        if arr.size <= share:
            picks = np.arange(arr.size)
        else:
            picks = rng.choice(arr.size, size=share, replace=False)
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        for idx in picks:
            idx = int(idx)
            original = flat[idx]
            flat[idx] = original + eps
            (_, _, _, up), _ = loss_and_grad(state, item, coeffs, max_len, want_grad=False)
            flat[idx] = original - eps
            (_, _, _, down), _ = loss_and_grad(state, item, coeffs, max_len, want_grad=False)
            flat[idx] = original
            numeric = (up - down) / (2.0 * eps)
            analytic = gflat[idx]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst


def train(
    config: ModelConfig,
    items: Iterable[TrainItem],
    steps: int,
    lr: float,
) -> tuple[ModelState, list[LogEntry]]:
    """Plain gradient descent cycling through the items one at a time.

    Deterministic given the config seed and item order.  Raises NonFiniteLoss
    with the offending step index if any loss leaves the reals.
    """
    data = list(items)
    if not data:
        raise EmptyMaskSet("no training items")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    state = init(config)
    coeffs = (1.0, config.lambda_con, config.lambda_cls)
    log: list[LogEntry] = []
    for step in range(steps):
        item = data[step % len(data)]
        try:
            (l_mlm, l_con, l_cls, l_total), grads = loss_and_grad(
                state, item, coeffs, config.max_len
            )
        except NonFiniteLoss as exc:
            raise NonFiniteLoss(step, exc.value) from None
        log.append(LogEntry(step, l_mlm, l_con, l_cls, l_total))
        if lr:
            params = state.params()
            for name, g in grads.items():
                params[name] -= lr * g
    return state, log


def predict_fill(state: ModelState, tokens: Sequence[int],
                 max_len: Optional[int] = None) -> list[int]:
    """Independent argmax at every mask position, skipping sentinel ids.

    Ties resolve to the lowest token id.
    """
    mask_positions = [i for i, t in enumerate(tokens) if t == MASK_ID]
    if not mask_positions:
        raise NoMask("input has no mask positions")
    output = forward(state, tokens, max_len)
    probs = output.probs.copy()
    probs[:, [PAD_ID, MASK_ID, UNK_ID]] = -1.0
    return [int(np.argmax(probs[p])) for p in mask_positions]


CHECKPOINT_FORMAT = "detmask-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, state: ModelState, config: ModelConfig,
                    vocab: Optional[Vocabulary] = None) -> None:
    """Write a checkpoint: one JSON header line, then raw little-endian float64.

    Tensor offsets are byte positions within the binary section, in the order
    listed in the header.
    """
    entries = []
    blobs = []
    offset = 0
    for name, arr in state.params().items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "dtype": "<f8",
        "vocab": list(vocab.id_to_token) if vocab is not None else None,
        "tensors": entries,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, ensure_ascii=False).encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[ModelState, ModelConfig, Optional[Vocabulary]]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
        body = fh.read()
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=start)
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float64)
    config = ModelConfig(**header["config"])
    vocab = None
    if header.get("vocab") is not None:
        toks = tuple(header["vocab"])
        vocab = Vocabulary(toks, {t: i for i, t in enumerate(toks)})
    state = ModelState(**tensors)
    return state, config, vocab
