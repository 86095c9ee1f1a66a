import numpy as np

from simulmt.model import ModelConfig, init_params, _mha_forward, _mha_backward, masked_softmax

cfg = ModelConfig(src_vocab_size=10, tgt_vocab_size=10, d_model=8, n_heads=2, n_layers=1, d_ff=16)
params = init_params(cfg, 0)
rng = np.random.default_rng(1)

B, nq, nk, d = 2, 4, 5, 8
x_q = rng.normal(size=(B, nq, d))
x_kv = rng.normal(size=(B, nk, d))
allowed = rng.random((B, nq, nk)) < 0.7
allowed[:, :, 0] = True  # no empty rows
R = rng.normal(size=(B, nq, d))

prefix = "enc0.attn"


def loss_of():
    out, _ = _mha_forward(params, prefix, x_q, x_kv, allowed, cfg.n_heads)
    return float(np.sum(out * R))


out, cache = _mha_forward(params, prefix, x_q, x_kv, allowed, cfg.n_heads)
grads = params.zero_grads()
d_x_q, d_x_kv = _mha_backward(params, cache, R, grads)

step = 1e-6
for name in [f"{prefix}.wq", f"{prefix}.wk", f"{prefix}.wv", f"{prefix}.wo"]:
    tensor = params.tensors[name]
    flat = tensor.reshape(-1)
    gflat = grads[name].reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        up = loss_of()
        flat[i] = saved - step
        down = loss_of()
        flat[i] = saved
        numeric = (up - down) / (2 * step)
        rel = abs(gflat[i] - numeric) / (abs(gflat[i]) + 1e-8)
        worst = max(worst, rel)
    print(name, f"{worst:.3e}")

# input grads
for label, x, dx in [("x_q", x_q, d_x_q), ("x_kv", x_kv, d_x_kv)]:
    flat = x.reshape(-1)
    gflat = dx.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        up = loss_of()
        flat[i] = saved - step
        down = loss_of()
        flat[i] = saved
        numeric = (up - down) / (2 * step)
        rel = abs(gflat[i] - numeric) / (abs(gflat[i]) + 1e-8)
        worst = max(worst, rel)
    print(label, f"{worst:.3e}")
