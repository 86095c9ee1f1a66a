import time

import numpy as np

from simulmt.model import ModelConfig, init_params, sequence_log_prob
from simulmt.policy import PolicySchedule
from simulmt.training import gradient_check, pair_loss

cfg = ModelConfig(src_vocab_size=10, tgt_vocab_size=10, d_model=8, n_heads=2, n_layers=1, d_ff=16)
params = init_params(cfg, 0)
print("n_params:", params.n_params())
rng = np.random.default_rng(0)
src = [int(x) for x in rng.integers(4, 10, size=5)]
tgt = [int(x) for x in rng.integers(4, 10, size=5)]
pair = (src, tgt)

for sched_name, sched in [
    ("wait-1", PolicySchedule.wait_k(1)),
    ("wait-2", PolicySchedule.wait_k(2)),
    ("full", PolicySchedule.full_sentence()),
    ("zero", PolicySchedule.zero_source()),
    ("catchup", PolicySchedule.wait_k_catchup(1, "1/4")),
]:
    t0 = time.perf_counter()
    err = gradient_check(params, pair, sched)
    print(f"{sched_name}: max rel err {err:.3e}  ({time.perf_counter()-t0:.1f}s)  loss {pair_loss(params, pair, sched):.6f}")

# full-sentence == wait-k with k >= |src|
l_full = pair_loss(params, pair, PolicySchedule.full_sentence())
l_big = pair_loss(params, pair, PolicySchedule.wait_k(99))
print("full vs wait-99 loss:", l_full, l_big, "equal:", l_full == l_big)

# sequence_log_prob sanity
print("seq logprob wait-1:", sequence_log_prob(params, src, tgt, PolicySchedule.wait_k(1)))
