"""Desk-scale simultaneous translation.

Read/write schedules (wait-k and friends), exact latency metrics (CW, AP,
AL), a miniature numpy Transformer with prefix-restricted attention,
prefix-to-prefix training, simultaneous decoding with tail beam search,
synthetic reordering grammars, and BLEU/anticipation evaluation.
"""

from .decoding import DecodeConfig, DecodeResult, Hypothesis, decode, decode_corpus, decode_matrix
from .errors import DataError, NumericalError, PolicyError, SimulmtError
from .evaluation import (
    AnticipationReport,
    SweepResult,
    SweepRow,
    anticipation_report,
    corpus_bleu,
    role_accuracy,
    sentence_bleu,
)
from .latency import (
    DecodingTrace,
    LatencyReport,
    RMode,
    average_lagging,
    average_proportion,
    consecutive_wait,
    corpus_latency,
    latency_report,
)
from .model import (
    AttentionMaskSpec,
    MaskMode,
    ModelConfig,
    ModelParams,
    attention,
    decoder_step,
    encode_prefix,
    encode_source,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sequence_log_prob,
)
from .policy import (
    PolicyKind,
    PolicySchedule,
    cutoff_step,
    schedule_to_actions,
    wait_k_catchup_g,
    wait_k_g,
)
from .data import (
    ParallelPair,
    SyntheticGrammar,
    Vocab,
    build_vocab,
    generate_corpus,
)
from .training import TrainConfig, gradient_check, train

__version__ = "0.1.0"
