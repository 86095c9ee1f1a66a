"""Training loop for the prefix-to-prefix objective.

The loss is the corpus negative log-likelihood of target sentences (with
their end-of-sentence token) under the schedule's prefix conditioning;
with a full-sentence schedule this reduces to the standard seq2seq
objective.  The default optimizer is plain gradient descent with global
gradient-norm clipping; Adam is available behind the same interface.

Sentences are bucketed by exact (source length, target length) so batches
need no padding.  All shuffling flows from the single config seed, and the
update loop is sequential, so a (seed, corpus, config) triple reproduces
its checkpoint bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import BOS, EOS
from .errors import NumericalError
from .model import (
    ModelConfig,
    ModelParams,
    init_params,
    prefix_to_prefix_backward,
    prefix_to_prefix_forward,
)
from .policy import PolicySchedule

Pair = tuple[Sequence[int], Sequence[int]]


@dataclass(frozen=True)
class TrainConfig:
    schedule: PolicySchedule
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.5
    seed: int = 0
    clip: float = 1.0
    optimizer: str = "sgd"  # or "adam"

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr < 0 or self.clip <= 0:
            raise ValueError("lr must be >= 0 and clip > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class _Sgd:
    def __init__(self, params: ModelParams, lr: float):
        self.lr = lr

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            params.tensors[name] -= self.lr * g


class _Adam:
    def __init__(self, params: ModelParams, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = params.zero_grads()
        self.v = params.zero_grads()

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            params.tensors[name] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _make_optimizer(config: TrainConfig, params: ModelParams):
    return _Adam(params, config.lr) if config.optimizer == "adam" else _Sgd(params, config.lr)


def clip_gradients(grads: dict[str, np.ndarray], threshold: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``threshold``."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = math.sqrt(total)
    if norm > threshold:
        scale = threshold / norm
        for g in grads.values():
            g *= scale
    return norm


def _bucketed_batches(
    corpus: Sequence[Pair], batch_size: int, rng: np.random.Generator
) -> list[np.ndarray]:
    buckets: dict[tuple[int, int], list[int]] = {}
    for idx, (src, tgt) in enumerate(corpus):
        buckets.setdefault((len(src), len(tgt)), []).append(idx)
    batches: list[np.ndarray] = []
    for key in sorted(buckets):
        ids = np.array(buckets[key], dtype=np.int64)
        rng.shuffle(ids)
        for start in range(0, len(ids), batch_size):
            batches.append(ids[start : start + batch_size])
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def _batch_arrays(corpus: Sequence[Pair], indices: np.ndarray):
    src = np.array([corpus[i][0] for i in indices], dtype=np.int64)
    tgt = np.array([corpus[i][1] for i in indices], dtype=np.int64)
    bos_col = np.full((len(indices), 1), BOS, dtype=np.int64)
    eos_col = np.full((len(indices), 1), EOS, dtype=np.int64)
    tgt_in = np.concatenate([bos_col, tgt], axis=1)
    tgt_out = np.concatenate([tgt, eos_col], axis=1)
    return src, tgt_in, tgt_out


def batch_loss_and_grads(
    params: ModelParams, corpus: Sequence[Pair], indices: np.ndarray, schedule: PolicySchedule
):
    """Mean per-token NLL over the batch and the matching gradients."""
    src, tgt_in, tgt_out = _batch_arrays(corpus, indices)
    n_tokens = tgt_out.size
    loss_sum, cache = prefix_to_prefix_forward(params, src, tgt_in, tgt_out, schedule)
    grads = params.zero_grads()
    prefix_to_prefix_backward(params, cache, grads, scale=1.0 / n_tokens)
    return float(loss_sum) / n_tokens, n_tokens, grads


def train(
    corpus: Sequence[Pair],
    config: TrainConfig,
    model_config: Optional[ModelConfig] = None,
    init: Optional[ModelParams] = None,
) -> tuple[ModelParams, list[float]]:
    """Optimize and return parameters plus the per-epoch mean token NLL."""
    if not corpus:
        raise ValueError("training corpus is empty")
    if init is None:
        if model_config is None:
            raise ValueError("provide either initial parameters or a model config")
        params = init_params(model_config, config.seed)
    else:
        params = init.copy()
    _check_vocab_bounds(corpus, params)
    rng = np.random.default_rng(config.seed)
    opt = _make_optimizer(config, params)
    history: list[float] = []
    for epoch in range(config.epochs):
        epoch_nll = 0.0
        epoch_tokens = 0
        for batch_no, indices in enumerate(_bucketed_batches(corpus, config.batch_size, rng)):
            loss, n_tokens, grads = batch_loss_and_grads(params, corpus, indices, config.schedule)
            if not math.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}, "
                    f"sentence ids {indices.tolist()}"
                )
            clip_gradients(grads, config.clip)
            opt.step(params, grads)
            epoch_nll += loss * n_tokens
            epoch_tokens += n_tokens
        history.append(epoch_nll / epoch_tokens)
    return params, history


def _check_vocab_bounds(corpus: Sequence[Pair], params: ModelParams) -> None:
    cfg = params.config
    for src, tgt in corpus:
        if any(i < 0 or i >= cfg.src_vocab_size for i in src):
            raise ValueError("source token id outside the model's vocabulary")
        if any(i < 0 or i >= cfg.tgt_vocab_size for i in tgt):
            raise ValueError("target token id outside the model's vocabulary")


def pair_loss(params: ModelParams, pair: Pair, schedule: PolicySchedule) -> float:
    """Sentence-level NLL (sum over steps, <eos> included)."""
    indices = np.array([0], dtype=np.int64)
    src, tgt_in, tgt_out = _batch_arrays([pair], indices)
    loss_sum, _ = prefix_to_prefix_forward(params, src, tgt_in, tgt_out, schedule)
    return float(loss_sum)


class _CastParams:
    """Duck-typed parameter view in a wider dtype, for finite differences.

    Central differences divide an O(eps * |loss|) evaluation error by 2h;
    in float64 that noise floor sits near the relative-error denominator
    for parameters with tiny gradients, so the check runs in extended
    precision instead.
    """

    def __init__(self, params: ModelParams, dtype):
        self.config = params.config
        self.tensors = {k: v.astype(dtype) for k, v in params.tensors.items()}
        self.positions = params.positions.astype(dtype)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}


def gradient_check(
    params: ModelParams,
    pair: Pair,
    schedule: PolicySchedule,
    step: float = 1e-5,
) -> float:
    """Max over parameters of |analytic - central difference| / (|analytic| + 1e-8).

    Exhaustive over every parameter element, so keep the model tiny
    (a couple of thousand parameters at most).
    """
    indices = np.array([0], dtype=np.int64)
    src, tgt_in, tgt_out = _batch_arrays([pair], indices)
    wide = _CastParams(params, np.longdouble)
    _, cache = prefix_to_prefix_forward(wide, src, tgt_in, tgt_out, schedule)
    grads = wide.zero_grads()
    prefix_to_prefix_backward(wide, cache, grads, scale=1.0)

    worst = 0.0
    for name, tensor in wide.tensors.items():
        flat = tensor.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            up, _ = prefix_to_prefix_forward(wide, src, tgt_in, tgt_out, schedule)
            flat[i] = saved - step
            down, _ = prefix_to_prefix_forward(wide, src, tgt_in, tgt_out, schedule)
            flat[i] = saved
            numeric = (up - down) / (2 * step)
            rel = float(abs(gflat[i] - numeric) / (abs(gflat[i]) + 1e-8))
            worst = max(worst, rel)
    return worst
