"""ipsdm: a from-scratch phishing/spam/ham email classification pipeline.

Corpus preparation, adaptive minority oversampling, byte-pair tokenization,
a numpy transformer encoder with handwritten backpropagation, AdamW
fine-tuning, and evaluation reporting — desk-scale and fully deterministic.
"""

__version__ = "0.1.0"

from .corpus import Corpus, Label, LabeledEmail, SplitSpec, load_csv, merge, split
from .tokenizer import Vocabulary, decode, encode, train_vocab
from .balance import AdasynPlan, balance_corpus, plan_adasyn, synthesize, vectorize
from .model import ModelConfig, ModelParameters, backward, forward, init, predict
from .optim import OptimizerHyperparams, OptimizerState, adamw_step, init_state, lr_at
from .metrics import ConfusionMatrix, Scores, confusion, cross_entropy, score, softmax
from .trainer import (
    Checkpoint,
    EarlyStopping,
    EpochRecord,
    TrainingConfig,
    evaluate,
    load_checkpoint,
    make_batches,
    overfit_gap,
    save_checkpoint,
    train,
)

__all__ = [
    "__version__",
    "Corpus", "Label", "LabeledEmail", "SplitSpec", "load_csv", "merge", "split",
    "Vocabulary", "decode", "encode", "train_vocab",
    "AdasynPlan", "balance_corpus", "plan_adasyn", "synthesize", "vectorize",
    "ModelConfig", "ModelParameters", "backward", "forward", "init", "predict",
    "OptimizerHyperparams", "OptimizerState", "adamw_step", "init_state", "lr_at",
    "ConfusionMatrix", "Scores", "confusion", "cross_entropy", "score", "softmax",
    "Checkpoint", "EarlyStopping", "EpochRecord", "TrainingConfig",
    "evaluate", "load_checkpoint", "make_batches", "overfit_gap",
    "save_checkpoint", "train",
]
