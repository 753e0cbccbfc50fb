#!/usr/bin/env python3
"""
Train the classifier end to end through the library API (no CLI): build a
keyword-separable corpus, split it, learn a vocabulary, fine-tune, checkpoint,
reload, and score the held-out split.
"""

import tempfile
from pathlib import Path

import numpy as np

from ipsdm.corpus import Corpus, Label, LabeledEmail, SplitSpec, split
from ipsdm.metrics import score
from ipsdm.model import ModelConfig, predict
from ipsdm.optim import OptimizerHyperparams
from ipsdm.tokenizer import train_vocab
from ipsdm.trainer import TrainingConfig, evaluate, load_checkpoint, save_checkpoint, train

HAM = ["meeting agenda attached", "lunch at noon friday", "printer is jammed again",
       "quarterly numbers attached", "see notes from standup", "dentist reminder tomorrow"]
SPAM = ["win a free prize now", "free cash claim today", "cheap meds limited offer",
        "you won a gift card", "free cruise act now", "claim your free bonus"]
PHISHING = ["verify your account now", "password expires click reset",
            "confirm your bank details", "unusual sign in detected",
            "update billing to avoid suspension", "security alert confirm identity"]


def build_corpus() -> Corpus:
    rng = np.random.default_rng(0)
    samples = []
    row = 0
    for label, pool in ((Label.ham, HAM), (Label.spam, SPAM), (Label.phishing, PHISHING)):
        for _ in range(10):
            base = pool[int(rng.integers(len(pool)))]
            extra = pool[int(rng.integers(len(pool)))].split()[0]
            samples.append(LabeledEmail(f"{base} {extra}", label, "demo", row))
            row += 1
    return Corpus.from_samples(samples)


def main():
    corpus = build_corpus()
    print(f"corpus: {len(corpus)} samples, counts "
          f"{{ {', '.join(f'{l.name}: {n}' for l, n in corpus.class_counts.items())} }}")

    train_split, val_split, test_split = split(corpus, SplitSpec(seed=0))
    print(f"split sizes: train {len(train_split)} / val {len(val_split)} / test {len(test_split)}")

    vocab = train_vocab(train_split, vocab_size=300)
    print(f"vocabulary: {vocab.size} tokens")

    config = TrainingConfig(
        model=ModelConfig(
            num_layers=2, num_heads=4, d_model=64, d_ff=128, max_len=32,
            vocab_size=vocab.size, dropout_rate=0.1,
        ),
        optimizer=OptimizerHyperparams(learning_rate=1e-3, variant="decoupled"),
        train_batch_size=4,
        num_epochs=8,
        seed=0,
    )
    checkpoint, history = train(config, train_split, val_split, vocab)
    for record in history:
        print(f"  epoch {record.epoch}: train_loss={record.train_loss:.4f} "
              f"val_accuracy={record.val_accuracy:.3f}")
    print(f"best epoch: {checkpoint.best_epoch} (val accuracy {checkpoint.best_metric:.3f})")

    # the checkpoint survives a disk round trip bit for bit
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.ckpt"
        save_checkpoint(checkpoint, path)
        print(f"checkpoint: {path.stat().st_size} bytes on disk")
        reloaded = load_checkpoint(path)
    assert all(
        np.array_equal(reloaded.tensors[name], checkpoint.tensors[name])
        for name in checkpoint.tensors
    )

    scores = evaluate(reloaded, test_split, vocab, split_name="test")
    print(f"test accuracy: {scores.scores.accuracy:.3f}")
    print(f"macro F1: {scores.scores.macro_f1:.3f}")

    params = reloaded.model_parameters()
    for text in ("free prize inside act now", "agenda attached for monday",
                 "verify your account details"):
        label, probs = predict(params, vocab, text)
        top = float(probs.max())
        print(f"  {text!r} -> {label.name} (p={top:.2f})")


if __name__ == "__main__":
    main()
