import numpy as np

from simulmt.model import AttentionMaskSpec, MaskMode, ModelConfig, init_params, encoder_forward, encoder_backward

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
R[0, 3:] = 0.0


def enc_loss():
    states, _ = encoder_forward(params, ids, masks)
    return float(np.sum(states * R))


states, cache = encoder_forward(params, ids, masks)
grads = params.zero_grads()
encoder_backward(params, cache, R, grads)

name = "enc0.attn.wq"
tensor = params.tensors[name]
flat = tensor.reshape(-1)
gflat = grads[name].reshape(-1)

# find the worst entry at h=1e-6 then examine it across h
def fd(i, h):
    saved = flat[i]
    flat[i] = saved + h
    up = enc_loss()
    flat[i] = saved - h
    down = enc_loss()
    flat[i] = saved
    return (up - down) / (2 * h)

worst_i, worst = 0, 0.0
for i in range(flat.size):
    numeric = fd(i, 1e-6)
    rel = abs(gflat[i] - numeric) / (abs(gflat[i]) + 1e-8)
    if rel > worst:
        worst, worst_i = rel, i

print(f"worst entry {worst_i}: analytic {gflat[worst_i]:.10e}")
for h in (1e-3, 1e-4, 1e-5, 1e-6, 1e-7):
    numeric = fd(worst_i, h)
    print(f"  h={h:.0e}: numeric {numeric:.10e}  absdiff {abs(numeric-gflat[worst_i]):.3e}  rel {abs(numeric-gflat[worst_i])/(abs(gflat[worst_i])+1e-8):.3e}")
