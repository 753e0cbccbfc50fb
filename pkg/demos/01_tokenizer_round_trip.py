#!/usr/bin/env python3
"""
Learn a byte-pair vocabulary from a handful of messages and walk through
what it does to a new text: the merge list, the token ids, and the exact
round trip back to the original bytes.
"""

from ipsdm.corpus import Corpus, Label, LabeledEmail
from ipsdm.tokenizer import decode, encode, train_vocab

MESSAGES = [
    "free cash prize claim now",
    "free cruise winner claim today",
    "meeting moved to thursday",
    "thursday lunch order closes soon",
    "verify your account now",
    "verify your password today",
]


def main():
    samples = [
        LabeledEmail(text, Label.ham, "demo", i) for i, text in enumerate(MESSAGES)
    ]
    corpus = Corpus.from_samples(samples)

    vocab = train_vocab(corpus, vocab_size=280)
    print(f"vocabulary: {vocab.size} tokens, {len(vocab.merges)} learned merges")
    print("first merges (most frequent adjacent byte pairs first):")
    for left, right in vocab.merges[:8]:
        print(f"  {left!r} + {right!r} -> {(left + right)!r}")

    text = "claim your free prize now"
    sequence = encode(vocab, text, max_len=32)
    print(f"\nencoding {text!r}")
    print(f"  ids ({sequence.true_length} real, rest padding): {list(sequence.ids[:sequence.true_length])}")
    pieces = [decode(vocab, [i]) for i in sequence.content_ids]
    print(f"  pieces: {pieces}")

    decoded = decode(vocab, sequence.content_ids)
    print(f"  decoded: {decoded!r}")
    assert decoded == text, "round trip must reproduce the input exactly"
    print("round trip is byte-for-byte exact")

    # multibyte input works the same way: unknown scripts fall back to raw bytes
    for exotic in ("héllo wörld", "数据 安全", "🙂"):
        seq = encode(vocab, exotic, max_len=32)
        assert decode(vocab, seq.content_ids) == exotic
        print(f"  {exotic!r}: {seq.true_length - 2} content tokens, round trip ok")


if __name__ == "__main__":
    main()
