import time

import numpy as np

from simulmt.data import build_vocab, generate_corpus
from simulmt.decoding import DecodeConfig, decode, decode_corpus
from simulmt.experiments import default_grammar
from simulmt.model import ModelConfig
from simulmt.policy import PolicySchedule
from simulmt.training import TrainConfig, train

grammar = default_grammar()
pairs = generate_corpus(grammar, 9000)
train_pairs, dev_pairs = pairs[:8000], pairs[8000:]
src_vocab = build_vocab([p.src for p in train_pairs])
tgt_vocab = build_vocab([p.tgt for p in train_pairs])
corpus = [(src_vocab.encode(p.src), tgt_vocab.encode(p.tgt)) for p in train_pairs]
cfg = ModelConfig(src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab))

for bs, lr in ((128, 2e-3), (256, 3e-3)):
    t0 = time.perf_counter()
    params, hist = train(
        corpus,
        TrainConfig(schedule=PolicySchedule.wait_k(1), epochs=3, batch_size=bs, lr=lr,
                    seed=11, clip=1.0, optimizer="adam"),
        model_config=cfg,
    )
    dt = time.perf_counter() - t0
    print(f"bs={bs} lr={lr}: {dt/3:.1f}s/epoch, loss: {[f'{h:.3f}' for h in hist]}")

# batched decode speed + agreement with per-sentence decode
dev_src = [src_vocab.encode(p.src) for p in dev_pairs]
t0 = time.perf_counter()
fast = decode_corpus(params, dev_src, DecodeConfig(schedule=PolicySchedule.wait_k(1)), batch_size=128)
dt = time.perf_counter() - t0
print(f"batched decode 1000: {dt:.1f}s ({dt:.3f} ms/sent: {dt/1000*1000:.2f})")

slow = [decode(params, s, DecodeConfig(schedule=PolicySchedule.wait_k(1))) for s in dev_src[:100]]
agree = sum(fast[i].tokens == slow[i].tokens and fast[i].trace == slow[i].trace for i in range(100))
print("batched vs per-sentence agreement:", agree, "/100")

hits = 0
for p, r in zip(dev_pairs, fast):
    hyp = tgt_vocab.decode(r.tokens)
    if len(hyp) >= 2 and hyp[1] == p.tgt[1]:
        hits += 1
print("verb acc (3 epochs, bs 256):", hits / len(dev_pairs))
