import numpy as np

from simulmt.model import ModelConfig, init_params, prefix_to_prefix_forward, prefix_to_prefix_backward
from simulmt.policy import PolicySchedule
from simulmt.data import BOS, EOS

cfg = ModelConfig(src_vocab_size=10, tgt_vocab_size=10, d_model=8, n_heads=2, n_layers=1, d_ff=16)
params = init_params(cfg, 0)
rng = np.random.default_rng(0)
src = np.array([[4, 5, 6, 7, 8]])
tgt = np.array([[5, 6, 7, 8, 9]])
tgt_in = np.concatenate([[[BOS]], tgt], axis=1)
tgt_out = np.concatenate([tgt, [[EOS]]], axis=1)

sched = PolicySchedule.wait_k(1)

_, cache = prefix_to_prefix_forward(params, src, tgt_in, tgt_out, sched)
grads = params.zero_grads()
prefix_to_prefix_backward(params, cache, grads, scale=1.0)

step = 1e-6
for name, tensor in params.tensors.items():
    flat = tensor.reshape(-1)
    gflat = grads[name].reshape(-1)
    worst = 0.0
    worst_i = -1
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        up, _ = prefix_to_prefix_forward(params, src, tgt_in, tgt_out, sched)
        flat[i] = saved - step
        down, _ = prefix_to_prefix_forward(params, src, tgt_in, tgt_out, sched)
        flat[i] = saved
        numeric = (up - down) / (2 * step)
        rel = abs(gflat[i] - numeric) / (abs(gflat[i]) + 1e-8)
        if rel > worst:
            worst, worst_i = rel, i
    print(f"{name:20s} max rel {worst:.3e} at {worst_i}")
