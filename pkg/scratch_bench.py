import time

from simulmt.data import build_vocab, generate_corpus
from simulmt.decoding import DecodeConfig, decode_corpus
from simulmt.experiments import default_grammar
from simulmt.model import ModelConfig
from simulmt.policy import PolicySchedule
from simulmt.training import TrainConfig, train

grammar = default_grammar()
pairs = generate_corpus(grammar, 9000)
train_pairs, dev_pairs = pairs[:8000], pairs[8000:]
src_vocab = build_vocab([p.src for p in train_pairs])
tgt_vocab = build_vocab([p.tgt for p in train_pairs])
print("vocab sizes:", len(src_vocab), len(tgt_vocab))
corpus = [(src_vocab.encode(p.src), tgt_vocab.encode(p.tgt)) for p in train_pairs]

cfg = ModelConfig(src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab))

t0 = time.perf_counter()
params, hist = train(
    corpus,
    TrainConfig(schedule=PolicySchedule.wait_k(1), epochs=2, batch_size=64, lr=2e-3,
                seed=11, clip=1.0, optimizer="adam"),
    model_config=cfg,
)
dt = time.perf_counter() - t0
print(f"wait-1 2 epochs: {dt:.1f}s ({dt/2:.1f}s/epoch), loss: {hist}")

t0 = time.perf_counter()
dev_src = [src_vocab.encode(p.src) for p in dev_pairs[:200]]
results = decode_corpus(params, dev_src, DecodeConfig(schedule=PolicySchedule.wait_k(1)))
dt = time.perf_counter() - t0
print(f"decode 200 dev: {dt:.1f}s ({dt/200*1000:.1f} ms/sentence)")

# verb accuracy after 2 epochs
hits = 0
for p, r in zip(dev_pairs[:200], results):
    hyp = tgt_vocab.decode(r.tokens)
    if len(hyp) >= 2 and len(p.tgt) >= 2 and hyp[1] == p.tgt[1]:
        hits += 1
print("verb acc after 2 epochs:", hits / 200)
