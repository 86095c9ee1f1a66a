import cProfile
import pstats

from simulmt.data import build_vocab, generate_corpus
from simulmt.experiments import default_grammar
from simulmt.model import ModelConfig
from simulmt.policy import PolicySchedule
from simulmt.training import TrainConfig, train

grammar = default_grammar()
pairs = generate_corpus(grammar, 2000)
src_vocab = build_vocab([p.src for p in pairs])
tgt_vocab = build_vocab([p.tgt for p in pairs])
corpus = [(src_vocab.encode(p.src), tgt_vocab.encode(p.tgt)) for p in pairs]
cfg = ModelConfig(src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab))


def run():
    train(
        corpus,
        TrainConfig(schedule=PolicySchedule.wait_k(1), epochs=1, batch_size=64, lr=2e-3,
                    seed=11, clip=1.0, optimizer="adam"),
        model_config=cfg,
    )


cProfile.run("run()", "prof.out")
stats = pstats.Stats("prof.out")
stats.sort_stats("cumulative").print_stats(25)
