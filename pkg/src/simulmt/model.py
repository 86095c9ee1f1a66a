"""Miniature encoder/decoder Transformer with prefix-restricted attention.

Everything is plain float64 numpy with hand-written backward passes, which
keeps training bit-reproducible and makes the finite-difference gradient
check meaningful.

The encoder supports two masking modes:

* ``prefix_bidirectional`` -- for a read count g, positions 1..g attend to
  each other and nothing else.  Feeding the whole sentence through this
  mask reproduces, to rounding, a from-scratch encoding of the truncated
  prefix, so one batched pass can serve every prefix length at once.
* ``unidirectional`` -- every position attends to itself and its
  predecessors, so a single pass yields states reusable for all prefixes.

The decoder scores target step t by re-running its stack over the current
target prefix with *all* cross-attention restricted to the g(t) encoded
source positions, i.e. the step-t distribution is a function of exactly
(source prefix of length g(t), target prefix).  Teacher-forced training
batches those re-runs along an extra axis.

Masked-out attention entries are excluded from the softmax normalisation
(not approximated by a large negative constant) and masked-out value rows
are zeroed, so tokens beyond the read prefix cannot leak into any output
even at the bit level.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import BOS, Vocab
from .errors import DataError, PolicyError
from .policy import PolicyKind, PolicySchedule

ENCODER_MODES = ("prefix_bidirectional", "unidirectional")


@dataclass(frozen=True)
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 64
    max_len: int = 64
    encoder_mode: str = "prefix_bidirectional"

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.encoder_mode not in ENCODER_MODES:
            raise ValueError(f"unknown encoder_mode {self.encoder_mode!r}")
        for name, v in (("src_vocab_size", self.src_vocab_size),
                        ("tgt_vocab_size", self.tgt_vocab_size),
                        ("d_model", self.d_model), ("n_heads", self.n_heads),
                        ("n_layers", self.n_layers), ("d_ff", self.d_ff),
                        ("max_len", self.max_len)):
            if v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def _attn_names(prefix: str) -> list[str]:
    return [f"{prefix}.{w}" for w in ("wq", "wk", "wv", "wo")]


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Tensor layout; the fixed insertion order doubles as checkpoint order."""
    d, ff = config.d_model, config.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "src_embed": (config.src_vocab_size, d),
        "tgt_embed": (config.tgt_vocab_size, d),
    }

    def block(prefix: str, ln_count: int, attn_prefixes: Sequence[str]) -> None:
        for ap in attn_prefixes:
            for name in _attn_names(f"{prefix}.{ap}"):
                shapes[name] = (d, d)
        shapes[f"{prefix}.ffn.w1"] = (d, ff)
        shapes[f"{prefix}.ffn.b1"] = (ff,)
        shapes[f"{prefix}.ffn.w2"] = (ff, d)
        shapes[f"{prefix}.ffn.b2"] = (d,)
        for i in range(1, ln_count + 1):
            shapes[f"{prefix}.ln{i}.g"] = (d,)
            shapes[f"{prefix}.ln{i}.b"] = (d,)

    for i in range(config.n_layers):
        block(f"enc{i}", 2, ["attn"])
    for i in range(config.n_layers):
        block(f"dec{i}", 3, ["self", "cross"])
    shapes["out_w"] = (d, config.tgt_vocab_size)
    shapes["out_b"] = (config.tgt_vocab_size,)
    return shapes


class ModelParams:
    """Named float64 tensors plus the architecture they belong to."""

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        expected = param_shapes(config)
        if set(tensors) != set(expected):
            missing = set(expected) - set(tensors)
            extra = set(tensors) - set(expected)
            raise ValueError(f"tensor set mismatch: missing={sorted(missing)}, extra={sorted(extra)}")
        self.config = config
        self.tensors = {name: np.asarray(tensors[name], dtype=np.float64) for name in expected}
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name} has shape {self.tensors[name].shape}, expected {shape}")
        self.positions = sinusoidal_positions(config.max_len, config.d_model)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def n_params(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Uniform [-0.1, 0.1] weights; layer-norm scales start at 1, shifts at 0."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".g"):
            tensors[name] = np.ones(shape)
        elif name.endswith(".b") and ".ln" in name:
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.uniform(-0.1, 0.1, size=shape)
    return ModelParams(config, tensors)


def sinusoidal_positions(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, i / d_model)
    table = np.zeros((max_len, d_model))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : d_model - d_model // 2])
    return table


# ---------------------------------------------------------------------------
# attention masks


class MaskMode(Enum):
    PREFIX_BIDIRECTIONAL = "prefix-bidirectional"
    UNIDIRECTIONAL = "unidirectional"
    CAUSAL_DECODER = "causal-decoder"
    CROSS_PREFIX = "cross-prefix"
    FULL = "full"


@dataclass(frozen=True)
class AttentionMaskSpec:
    """Which (query, key) pairs an attention layer may use."""

    mode: MaskMode
    g: Optional[int] = None

    def build(self, n_q: int, n_kv: int) -> np.ndarray:
        if self.mode in (MaskMode.PREFIX_BIDIRECTIONAL, MaskMode.CROSS_PREFIX):
            if self.g is None or not 1 <= self.g <= n_kv:
                raise ValueError(f"{self.mode.value} mask needs g in [1, {n_kv}], got {self.g}")
        i = np.arange(n_q)[:, None]
        j = np.arange(n_kv)[None, :]
        if self.mode is MaskMode.PREFIX_BIDIRECTIONAL:
            return (i < self.g) & (j < self.g)
        if self.mode is MaskMode.UNIDIRECTIONAL or self.mode is MaskMode.CAUSAL_DECODER:
            return j <= i
        if self.mode is MaskMode.CROSS_PREFIX:
            return np.broadcast_to(j < self.g, (n_q, n_kv)).copy()
        return np.ones((n_q, n_kv), dtype=bool)


def masked_softmax(scores: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Row softmax over allowed entries only; fully-masked rows come back zero."""
    masked = np.where(allowed, scores, -np.inf)
    rowmax = np.max(masked, axis=-1, keepdims=True)
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.exp(masked - rowmax)
    denom = np.sum(e, axis=-1, keepdims=True)
    return e / np.where(denom == 0.0, 1.0, denom)


def _masked_softmax_backward(w: np.ndarray, dw: np.ndarray) -> np.ndarray:
    return w * (dw - np.sum(dw * w, axis=-1, keepdims=True))


def attention(
    queries: np.ndarray, keys: np.ndarray, values: np.ndarray, allowed: np.ndarray
) -> np.ndarray:
    """Scaled dot-product attention over an explicit support mask.

    Scores are q_i . k_j / sqrt(d) over allowed (i, j) pairs; each output
    row is the resulting convex combination of value rows.  Disallowed
    positions get weight exactly 0.
    """
    queries = np.asarray(queries, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    allowed = np.asarray(allowed, dtype=bool)
    if queries.ndim != 2 or keys.ndim != 2 or values.ndim != 2:
        raise ValueError("attention expects 2-D queries/keys/values")
    if queries.shape[1] != keys.shape[1]:
        raise ValueError(f"query width {queries.shape[1]} != key width {keys.shape[1]}")
    if keys.shape[0] != values.shape[0]:
        raise ValueError(f"{keys.shape[0]} keys but {values.shape[0]} value rows")
    if allowed.shape != (queries.shape[0], keys.shape[0]):
        raise ValueError(f"mask shape {allowed.shape} mismatches ({queries.shape[0]}, {keys.shape[0]})")
    if not allowed.any(axis=1).all():
        raise ValueError("empty attention support: some query row allows no position")
    scores = queries @ keys.T / np.sqrt(queries.shape[1])
    weights = masked_softmax(scores, allowed)
    return weights @ np.where(allowed.any(axis=0)[:, None], values, 0.0)


# ---------------------------------------------------------------------------
# sub-layer forward/backward


def _mha_forward(p, prefix, x_q, x_kv, allowed, n_heads):
    """allowed: bool, broadcastable to (B, n_q, n_kv)."""
    wq, wk, wv, wo = (p[n] for n in _attn_names(prefix))
    B, n_q, d = x_q.shape
    n_kv = x_kv.shape[1]
    dh = d // n_heads
    q = x_q @ wq
    k = x_kv @ wk
    v_raw = x_kv @ wv
    col_alive = allowed.any(axis=-2)  # (B or 1, n_kv)
    v = v_raw * col_alive[..., None]

    def split(a, n):
        return a.reshape(a.shape[0], n, n_heads, dh).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q, n_q), split(k, n_kv), split(v, n_kv)
    scores = qh @ kh.transpose(0, 1, 3, 2) / np.sqrt(dh)
    w = masked_softmax(scores, allowed[:, None])  # broadcast over heads
    ctx = w @ vh
    merged = ctx.transpose(0, 2, 1, 3).reshape(B, n_q, d)
    out = merged @ wo
    cache = (prefix, x_q, x_kv, qh, kh, vh, w, col_alive, merged, n_heads)
    return out, cache


def _mha_backward(p, cache, dout, grads):
    prefix, x_q, x_kv, qh, kh, vh, w, col_alive, merged, n_heads = cache
    wq, wk, wv, wo = (p[n] for n in _attn_names(prefix))
    B, n_q, d = x_q.shape
    n_kv = x_kv.shape[1]
    dh = d // n_heads

    grads[f"{prefix}.wo"] += merged.reshape(-1, d).T @ dout.reshape(-1, d)
    d_merged = dout @ wo.T
    d_ctx = d_merged.reshape(B, n_q, n_heads, dh).transpose(0, 2, 1, 3)
    d_w = d_ctx @ vh.transpose(0, 1, 3, 2)
    d_vh = w.transpose(0, 1, 3, 2) @ d_ctx
    d_scores = _masked_softmax_backward(w, d_w) / np.sqrt(dh)
    d_qh = d_scores @ kh
    d_kh = d_scores.transpose(0, 1, 3, 2) @ qh

    def merge(a, n):
        return a.transpose(0, 2, 1, 3).reshape(B, n, d)

    d_q, d_k, d_v = merge(d_qh, n_q), merge(d_kh, n_kv), merge(d_vh, n_kv)
    d_v_raw = d_v * col_alive[..., None]
    grads[f"{prefix}.wq"] += x_q.reshape(-1, d).T @ d_q.reshape(-1, d)
    grads[f"{prefix}.wk"] += x_kv.reshape(-1, d).T @ d_k.reshape(-1, d)
    grads[f"{prefix}.wv"] += x_kv.reshape(-1, d).T @ d_v_raw.reshape(-1, d)
    d_x_q = d_q @ wq.T
    d_x_kv = d_k @ wk.T + d_v_raw @ wv.T
    return d_x_q, d_x_kv


_LN_EPS = 1e-6


def _ln_forward(p, prefix, x):
    g, b = p[f"{prefix}.g"], p[f"{prefix}.b"]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (prefix, xhat, inv)


def _ln_backward(p, cache, dout, grads):
    prefix, xhat, inv = cache
    g = p[f"{prefix}.g"]
    axes = tuple(range(dout.ndim - 1))
    grads[f"{prefix}.g"] += np.sum(dout * xhat, axis=axes)
    grads[f"{prefix}.b"] += np.sum(dout, axis=axes)
    dxhat = dout * g
    return inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    )


def _ffn_forward(p, prefix, x):
    h = x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]
    a = np.maximum(h, 0.0)
    out = a @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]
    return out, (prefix, x, h, a)


def _ffn_backward(p, cache, dout, grads):
    prefix, x, h, a = cache
    d, ff = x.shape[-1], a.shape[-1]
    axes = tuple(range(dout.ndim - 1))
    grads[f"{prefix}.w2"] += a.reshape(-1, ff).T @ dout.reshape(-1, d)
    grads[f"{prefix}.b2"] += dout.sum(axis=axes)
    d_a = dout @ p[f"{prefix}.w2"].T
    d_h = d_a * (h > 0.0)
    grads[f"{prefix}.w1"] += x.reshape(-1, d).T @ d_h.reshape(-1, ff)
    grads[f"{prefix}.b1"] += d_h.sum(axis=axes)
    return d_h @ p[f"{prefix}.w1"].T


def _embed_forward(p, table_name, ids):
    d = p.config.d_model
    n = ids.shape[-1]
    if n > p.config.max_len:
        raise ValueError(f"sequence length {n} exceeds max_len {p.config.max_len}")
    x = p[table_name][ids] * np.sqrt(d) + p.positions[:n]
    return x, (table_name, ids)


def _embed_backward(p, cache, dx, grads):
    table_name, ids = cache
    d = p.config.d_model
    np.add.at(grads[table_name], ids.reshape(-1), dx.reshape(-1, d) * np.sqrt(d))


# ---------------------------------------------------------------------------
# encoder / decoder stacks


def encoder_forward(p: ModelParams, src_ids: np.ndarray, allowed: np.ndarray):
    """src_ids (B, n) int; allowed broadcastable to (B, n, n)."""
    x, emb_cache = _embed_forward(p, "src_embed", src_ids)
    layer_caches = []
    for i in range(p.config.n_layers):
        a, attn_cache = _mha_forward(p, f"enc{i}.attn", x, x, allowed, p.config.n_heads)
        x1, ln1_cache = _ln_forward(p, f"enc{i}.ln1", x + a)
        f, ffn_cache = _ffn_forward(p, f"enc{i}.ffn", x1)
        x, ln2_cache = _ln_forward(p, f"enc{i}.ln2", x1 + f)
        layer_caches.append((attn_cache, ln1_cache, ffn_cache, ln2_cache))
    return x, (emb_cache, layer_caches)


def encoder_backward(p: ModelParams, cache, d_states: np.ndarray, grads) -> None:
    emb_cache, layer_caches = cache
    dx = d_states
    for attn_cache, ln1_cache, ffn_cache, ln2_cache in reversed(layer_caches):
        dr2 = _ln_backward(p, ln2_cache, dx, grads)
        dx1 = dr2 + _ffn_backward(p, ffn_cache, dr2, grads)
        dr1 = _ln_backward(p, ln1_cache, dx1, grads)
        d_q, d_kv = _mha_backward(p, attn_cache, dr1, grads)
        dx = dr1 + d_q + d_kv
    _embed_backward(p, emb_cache, dx, grads)


def decoder_forward(p: ModelParams, tgt_ids: np.ndarray, enc: np.ndarray, cross_allowed: np.ndarray):
    """tgt_ids (B, m) int; enc (B, n, d); cross_allowed broadcastable to (B, m, n)."""
    m = tgt_ids.shape[-1]
    causal = AttentionMaskSpec(MaskMode.CAUSAL_DECODER).build(m, m)[None]
    y, emb_cache = _embed_forward(p, "tgt_embed", tgt_ids)
    layer_caches = []
    for i in range(p.config.n_layers):
        a, self_cache = _mha_forward(p, f"dec{i}.self", y, y, causal, p.config.n_heads)
        y1, ln1_cache = _ln_forward(p, f"dec{i}.ln1", y + a)
        c, cross_cache = _mha_forward(p, f"dec{i}.cross", y1, enc, cross_allowed, p.config.n_heads)
        y2, ln2_cache = _ln_forward(p, f"dec{i}.ln2", y1 + c)
        f, ffn_cache = _ffn_forward(p, f"dec{i}.ffn", y2)
        y, ln3_cache = _ln_forward(p, f"dec{i}.ln3", y2 + f)
        layer_caches.append((self_cache, ln1_cache, cross_cache, ln2_cache, ffn_cache, ln3_cache))
    return y, (emb_cache, layer_caches)


def decoder_backward(p: ModelParams, cache, d_hidden: np.ndarray, grads):
    emb_cache, layer_caches = cache
    dy = d_hidden
    d_enc_total = None
    for self_cache, ln1_cache, cross_cache, ln2_cache, ffn_cache, ln3_cache in reversed(layer_caches):
        dr3 = _ln_backward(p, ln3_cache, dy, grads)
        dy2 = dr3 + _ffn_backward(p, ffn_cache, dr3, grads)
        dr2 = _ln_backward(p, ln2_cache, dy2, grads)
        d_q, d_enc = _mha_backward(p, cross_cache, dr2, grads)
        d_enc_total = d_enc if d_enc_total is None else d_enc_total + d_enc
        dy1 = dr2 + d_q
        dr1 = _ln_backward(p, ln1_cache, dy1, grads)
        d_qs, d_kvs = _mha_backward(p, self_cache, dr1, grads)
        dy = dr1 + d_qs + d_kvs
    _embed_backward(p, emb_cache, dy, grads)
    return d_enc_total


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# prefix-to-prefix scoring (shared by training and the public ops)


@dataclass
class StepPlan:
    """Per-emission read counts and the distinct prefix lengths they use."""

    g_list: list[int]
    variants: list[int]            # sorted distinct prefix lengths (> 0)
    step_var: np.ndarray           # (T,) variant index per step, -1 where g = 0
    zero_source: bool


def plan_steps(schedule: PolicySchedule, src_len: int, n_steps: int) -> StepPlan:
    g_list = schedule.g_values(src_len, n_steps)
    zero = schedule.kind is PolicyKind.ZERO_SOURCE
    if not zero and any(g == 0 for g in g_list):
        raise PolicyError(
            "schedule would emit with zero source read; use the zero-source oracle explicitly"
        )
    variants = sorted({g for g in g_list if g > 0})
    index = {g: i for i, g in enumerate(variants)}
    step_var = np.array([index.get(g, -1) for g in g_list], dtype=np.int64)
    return StepPlan(g_list, variants, step_var, zero)


def _encoder_prefix_batch(p: ModelParams, src_ids: np.ndarray, plan: StepPlan):
    """Encode every needed prefix length; returns states (S, B, n, d) + cache."""
    S, n = src_ids.shape
    if plan.zero_source or not plan.variants:
        return None, None
    if p.config.encoder_mode == "unidirectional":
        allowed = AttentionMaskSpec(MaskMode.UNIDIRECTIONAL).build(n, n)[None]
        states, cache = encoder_forward(p, src_ids, allowed)
        return states[:, None], cache  # one shared variant
    B = len(plan.variants)
    masks = np.stack(
        [AttentionMaskSpec(MaskMode.PREFIX_BIDIRECTIONAL, g).build(n, n) for g in plan.variants]
    )
    ids_tiled = np.repeat(src_ids, B, axis=0)
    allowed = np.broadcast_to(masks[None], (S, B, n, n)).reshape(S * B, n, n)
    states, cache = encoder_forward(p, ids_tiled, allowed)
    return states.reshape(S, B, n, p.config.d_model), cache


def _rerun_tensors(p, enc_states, plan: StepPlan, rerun_steps: np.ndarray, S: int, n: int):
    """Per-step encoder tensors and cross masks for the re-run steps."""
    R = len(rerun_steps)
    d = p.config.d_model
    dtype = p["out_w"].dtype
    if enc_states is None:  # zero-source oracle: cross-attention disabled
        return np.zeros((S * R, 1, d), dtype=dtype), np.zeros((S * R, 1, 1), dtype=bool)
    if p.config.encoder_mode == "unidirectional":
        sel = np.broadcast_to(enc_states[:, 0][:, None], (S, R, n, d))
    else:
        sel = enc_states[:, np.maximum(plan.step_var[rerun_steps], 0)]
    enc_sel = np.ascontiguousarray(sel).reshape(S * R, n, d)
    g_arr = np.array(plan.g_list)[rerun_steps]
    base = np.arange(n)[None, :] < g_arr[:, None]  # (R, n)
    cross = np.broadcast_to(base[None], (S, R, n)).reshape(S * R, 1, n)
    return enc_sel, np.ascontiguousarray(cross)


def prefix_to_prefix_forward(
    p: ModelParams,
    src_ids: np.ndarray,
    tgt_in: np.ndarray,
    tgt_out: np.ndarray,
    schedule: PolicySchedule,
):
    """Sum of per-step negative log-likelihoods under the schedule.

    src_ids (S, n); tgt_in (S, T) starts with <bos>; tgt_out (S, T) ends
    with <eos>.  Step t's logits come from re-running the decoder over
    tgt_in[:, :t] with cross-attention restricted to the first g(t)
    encoded source positions.  Steps with g(t) = n all condition on the
    same full source, so one parallel causal pass serves them; only the
    strictly-prefix steps are re-run individually.
    """
    S, n = src_ids.shape
    T = tgt_in.shape[1]
    d = p.config.d_model
    plan = plan_steps(schedule, n, T)
    enc_states, enc_cache = _encoder_prefix_batch(p, src_ids, plan)

    g_arr = np.array(plan.g_list)
    full_steps = np.where(g_arr == n)[0]  # 0-based step indices
    rerun_steps = np.where(g_arr != n)[0]
    h_sel = np.zeros((S, T, d), dtype=p["out_w"].dtype)

    full_cache = None
    if full_steps.size:
        var_n = plan.variants.index(n) if p.config.encoder_mode != "unidirectional" else 0
        enc_full = np.ascontiguousarray(enc_states[:, var_n])
        cross_full = np.ones((S, 1, n), dtype=bool)
        hidden_f, full_cache = decoder_forward(p, tgt_in, enc_full, cross_full)
        h_sel[:, full_steps] = hidden_f[:, full_steps]

    rerun_cache = None
    W = 0
    if rerun_steps.size:
        W = int(rerun_steps.max()) + 1  # step s0 reads decoder row s0
        ids_tiled = np.repeat(tgt_in[:, :W], len(rerun_steps), axis=0)  # (S*R, W)
        enc_sel, cross = _rerun_tensors(p, enc_states, plan, rerun_steps, S, n)
        hidden_r, rerun_cache = decoder_forward(p, ids_tiled, enc_sel, cross)
        h4 = hidden_r.reshape(S, len(rerun_steps), W, d)
        h_sel[:, rerun_steps] = h4[:, np.arange(len(rerun_steps)), rerun_steps]

    logits = h_sel @ p["out_w"] + p["out_b"]
    logp = _log_softmax(logits)
    nll = -np.take_along_axis(logp, tgt_out[..., None], axis=-1)[..., 0]
    loss_sum = nll.sum()  # native scalar so wide-dtype callers keep their precision
    cache = (
        plan, enc_states, enc_cache, full_cache, rerun_cache,
        full_steps, rerun_steps, W, h_sel, logp, tgt_out, S, n, T,
    )
    return loss_sum, cache


def prefix_to_prefix_backward(p: ModelParams, cache, grads, scale: float = 1.0) -> None:
    """Accumulate d(scale * loss_sum)/d(params) into ``grads``."""
    (
        plan, enc_states, enc_cache, full_cache, rerun_cache,
        full_steps, rerun_steps, W, h_sel, logp, tgt_out, S, n, T,
    ) = cache
    d = p.config.d_model
    probs = np.exp(logp)
    d_logits = probs.copy()
    np.subtract.at(d_logits, (np.arange(S)[:, None], np.arange(T)[None, :], tgt_out), 1.0)
    d_logits *= scale

    grads["out_w"] += h_sel.reshape(-1, d).T @ d_logits.reshape(-1, d_logits.shape[-1])
    grads["out_b"] += d_logits.sum(axis=(0, 1))
    d_h_sel = d_logits @ p["out_w"].T

    uni = p.config.encoder_mode == "unidirectional"
    B = 1 if (enc_states is None or uni) else len(plan.variants)
    d_enc = None if enc_states is None else np.zeros((S, B, n, d), dtype=d_h_sel.dtype)

    if full_steps.size:
        d_hidden_f = np.zeros((S, T, d), dtype=d_h_sel.dtype)
        d_hidden_f[:, full_steps] = d_h_sel[:, full_steps]
        d_enc_f = decoder_backward(p, full_cache, d_hidden_f, grads)
        if d_enc is not None:
            var_n = plan.variants.index(n) if not uni else 0
            d_enc[:, var_n] += d_enc_f

    if rerun_steps.size:
        R = len(rerun_steps)
        d_hidden_r = np.zeros((S, R, W, d), dtype=d_h_sel.dtype)
        d_hidden_r[:, np.arange(R), rerun_steps] = d_h_sel[:, rerun_steps]
        d_enc_r = decoder_backward(p, rerun_cache, d_hidden_r.reshape(S * R, W, d), grads)
        if d_enc is not None:
            d_enc_steps = d_enc_r.reshape(S, R, n, d)
            if uni:
                d_enc[:, 0] += d_enc_steps.sum(axis=1)
            else:
                for b in range(B):
                    sel = plan.step_var[rerun_steps] == b
                    if sel.any():
                        d_enc[:, b] += d_enc_steps[:, sel].sum(axis=1)

    if d_enc is not None:
        encoder_backward(p, enc_cache, d_enc.reshape(S * B, n, d), grads)


# ---------------------------------------------------------------------------
# public single-sentence operations


def encode_prefix(
    p: ModelParams, src_ids: Sequence[int], g_t: int, mode: Optional[str] = None
) -> np.ndarray:
    """Hidden states for source positions 1..g_t under the masked encoder.

    The whole sentence is fed through the encoder with attention restricted
    per ``mode`` (defaulting to the model's configured mode); only the
    first g_t rows are returned.
    """
    ids = np.asarray(src_ids, dtype=np.int64)
    n = ids.shape[0]
    if not 1 <= g_t <= n:
        raise ValueError(f"g_t={g_t} out of range for source length {n}")
    mode = mode or p.config.encoder_mode
    if mode == "prefix_bidirectional":
        allowed = AttentionMaskSpec(MaskMode.PREFIX_BIDIRECTIONAL, g_t).build(n, n)
    elif mode == "unidirectional":
        allowed = AttentionMaskSpec(MaskMode.UNIDIRECTIONAL).build(n, n)
    else:
        raise ValueError(f"unknown encoder mode {mode!r}")
    states, _ = encoder_forward(p, ids[None], allowed[None])
    return states[0, :g_t]


def encode_source(p: ModelParams, src_ids: Sequence[int]) -> np.ndarray:
    """From-scratch encoding of exactly these tokens, per the model's mode.

    For ``prefix_bidirectional`` this is the standard full-context encoder;
    for ``unidirectional`` each position sees only its predecessors.
    """
    ids = np.asarray(src_ids, dtype=np.int64)
    n = ids.shape[0]
    if p.config.encoder_mode == "unidirectional":
        allowed = AttentionMaskSpec(MaskMode.UNIDIRECTIONAL).build(n, n)
    else:
        allowed = AttentionMaskSpec(MaskMode.FULL).build(n, n)
    states, _ = encoder_forward(p, ids[None], allowed[None])
    return states[0]


def decoder_step(
    p: ModelParams, src_states: Optional[np.ndarray], tgt_prefix: Sequence[int]
) -> np.ndarray:
    """Next-token distribution given encoded source prefix and target prefix.

    ``src_states`` holds the g(t) encoded source positions; ``None`` (or an
    empty array) invokes the zero-source oracle, which ignores the source
    entirely.  ``tgt_prefix`` must start with <bos>.
    """
    ids = np.asarray(tgt_prefix, dtype=np.int64)
    if ids.ndim != 1 or ids.shape[0] < 1 or ids[0] != BOS:
        raise ValueError("tgt_prefix must be a 1-D id sequence starting with <bos>")
    if src_states is None or src_states.shape[0] == 0:
        enc = np.zeros((1, 1, p.config.d_model))
        cross = np.zeros((1, 1, 1), dtype=bool)
    else:
        src_states = np.asarray(src_states, dtype=np.float64)
        if src_states.ndim != 2 or src_states.shape[1] != p.config.d_model:
            raise ValueError(
                f"src_states must be (g, {p.config.d_model}), got {src_states.shape}"
            )
        enc = src_states[None]
        cross = np.ones((1, 1, src_states.shape[0]), dtype=bool)
    hidden, _ = decoder_forward(p, ids[None], enc, cross)
    logits = hidden[0, -1] @ p["out_w"] + p["out_b"]
    logp = _log_softmax(logits)
    return np.exp(logp)


def sequence_log_prob(
    p: ModelParams,
    src_ids: Sequence[int],
    tgt_ids: Sequence[int],
    schedule: PolicySchedule,
) -> float:
    """log p(target, <eos> | source) under the schedule's prefix conditioning."""
    src = np.asarray(src_ids, dtype=np.int64)[None]
    tgt = np.asarray(tgt_ids, dtype=np.int64)
    from .data import EOS  # local import to keep module load order simple

    tgt_in = np.concatenate(([BOS], tgt))[None]
    tgt_out = np.concatenate((tgt, [EOS]))[None]
    loss_sum, _ = prefix_to_prefix_forward(p, src, tgt_in, tgt_out, schedule)
    return float(-loss_sum)


# ---------------------------------------------------------------------------
# checkpoint format

_MAGIC = b"SMTCKP01"
_SCHEMA_VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    src_vocab: Optional[Vocab] = None
    tgt_vocab: Optional[Vocab] = None
    meta: dict = field(default_factory=dict)


def save_checkpoint(
    path,
    params: ModelParams,
    src_vocab: Optional[Vocab] = None,
    tgt_vocab: Optional[Vocab] = None,
    meta: Optional[dict] = None,
) -> None:
    """Self-describing binary checkpoint; byte layout is fixed little-endian."""
    header = {
        "schema_version": _SCHEMA_VERSION,
        "config": asdict(params.config),
        "src_vocab": src_vocab.tokens if src_vocab is not None else None,
        "tgt_vocab": tgt_vocab.tokens if tgt_vocab is not None else None,
        "meta": meta or {},
        "tensors": [
            {"name": name, "shape": list(t.shape)} for name, t in params.tensors.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for t in params.tensors.values():
            f.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DataError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (blob_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(blob_len).decode("utf-8"))
        if header.get("schema_version") != _SCHEMA_VERSION:
            raise DataError(f"{path}: unsupported schema version {header.get('schema_version')}")
        config = ModelConfig(**header["config"])
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise DataError(f"{path}: truncated tensor {entry['name']}")
            tensors[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(
                np.float64
            )
    params = ModelParams(config, tensors)
    src_vocab = Vocab(header["src_vocab"]) if header.get("src_vocab") is not None else None
    tgt_vocab = Vocab(header["tgt_vocab"]) if header.get("tgt_vocab") is not None else None
    return Checkpoint(params, src_vocab, tgt_vocab, header.get("meta") or {})
