import numpy as np

from simulmt.model import (
    AttentionMaskSpec,
    MaskMode,
    ModelConfig,
    init_params,
    encoder_forward,
    encoder_backward,
    decoder_forward,
    decoder_backward,
)

cfg = ModelConfig(src_vocab_size=10, tgt_vocab_size=10, d_model=8, n_heads=2, n_layers=1, d_ff=16)
params = init_params(cfg, 0)
rng = np.random.default_rng(1)

n = 5
ids = np.array([[4, 5, 6, 7, 8], [4, 5, 6, 7, 8]])
masks = np.stack([
    AttentionMaskSpec(MaskMode.PREFIX_BIDIRECTIONAL, 3).build(n, n),
    AttentionMaskSpec(MaskMode.PREFIX_BIDIRECTIONAL, 5).build(n, n),
])
R = rng.normal(size=(2, n, 8))
R[0, 3:] = 0.0  # only live rows contribute


def enc_loss():
    states, _ = encoder_forward(params, ids, masks)
    return float(np.sum(states * R))


states, cache = encoder_forward(params, ids, masks)
grads = params.zero_grads()
encoder_backward(params, cache, R, grads)

step = 1e-6
worst_name, worst = None, 0.0
for name, tensor in params.tensors.items():
    if not (name.startswith("enc0") or name == "src_embed"):
        continue
    flat = tensor.reshape(-1)
    gflat = grads[name].reshape(-1)
    w = 0.0
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        up = enc_loss()
        flat[i] = saved - step
        down = enc_loss()
        flat[i] = saved
        numeric = (up - down) / (2 * step)
        rel = abs(gflat[i] - numeric) / (abs(gflat[i]) + 1e-8)
        w = max(w, rel)
    print(f"enc unit {name:16s} {w:.3e}")
    if w > worst:
        worst, worst_name = w, name
print("worst:", worst_name, worst)

# decoder unit
m = 4
tids = np.array([[1, 5, 6, 7], [1, 5, 6, 7]])
enc = rng.normal(size=(2, n, 8))
cross = np.ones((2, 1, n), dtype=bool)
cross[0, 0, 3:] = False
Rd = rng.normal(size=(2, m, 8))


def dec_loss():
    hidden, _ = decoder_forward(params, tids, enc, cross)
    return float(np.sum(hidden * Rd))


hidden, dcache = decoder_forward(params, tids, enc, cross)
grads = params.zero_grads()
d_enc = decoder_backward(params, dcache, Rd, grads)

for name, tensor in params.tensors.items():
    if not (name.startswith("dec0") or name == "tgt_embed"):
        continue
    flat = tensor.reshape(-1)
    gflat = grads[name].reshape(-1)
    w = 0.0
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        up = dec_loss()
        flat[i] = saved - step
        down = dec_loss()
        flat[i] = saved
        numeric = (up - down) / (2 * step)
        rel = abs(gflat[i] - numeric) / (abs(gflat[i]) + 1e-8)
        w = max(w, rel)
    print(f"dec unit {name:16s} {w:.3e}")

# d_enc check
flat = enc.reshape(-1)
gflat = d_enc.reshape(-1)
w = 0.0
for i in range(flat.size):
    saved = flat[i]
    flat[i] = saved + step
    up = dec_loss()
    flat[i] = saved - step
    down = dec_loss()
    flat[i] = saved
    numeric = (up - down) / (2 * step)
    rel = abs(gflat[i] - numeric) / (abs(gflat[i]) + 1e-8)
    w = max(w, rel)
print("dec unit d_enc", f"{w:.3e}")
