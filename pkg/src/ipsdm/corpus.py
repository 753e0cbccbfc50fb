"""Load, merge, label, and deterministically split the email datasets.

Input files are RFC-4180 CSV (UTF-8, header row required). Column names are
configurable and default to "Email" / "Category". Splits can be persisted
back to CSV with an added "split" column.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import DegenerateSplit, MalformedCsv, MissingColumn

logger = logging.getLogger(__name__)

FRACTION_TOLERANCE = 1e-9


class Label(IntEnum):
    ham = 0
    spam = 1
    phishing = 2


LABEL_NAMES = [label.name for label in Label]

# Default label map: the three class names map to themselves,
# compared case-insensitively after trimming.
DEFAULT_LABEL_MAP = {name: Label[name] for name in LABEL_NAMES}


@dataclass(frozen=True)
class LabeledEmail:
    """One text sample with a class label.

    text is non-empty after whitespace trimming; (source_id, row_index)
    identifies the sample across merge/split operations.
    """

    text: str
    label: Label
    source_id: str
    row_index: int


@dataclass
class Corpus:
    samples: list[LabeledEmail]
    class_counts: dict[Label, int]

    def __len__(self) -> int:
        return len(self.samples)

    @classmethod
    def from_samples(cls, samples: list[LabeledEmail]) -> "Corpus":
        counts = {label: 0 for label in Label}
        for sample in samples:
            counts[sample.label] += 1
        return cls(samples=list(samples), class_counts=counts)


@dataclass(frozen=True)
class SplitSpec:
    """Fractions for the train/val/test partition; must sum to 1.

    Sizes follow the floor rule: test = floor(test_fraction*N),
    val = floor(val_fraction*N), train = N - val - test. In stratified mode
    the same rule is applied per class and remainders go to train.
    """

    train_fraction: float = 0.6
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    seed: int = 0
    stratified: bool = True

    def validate(self) -> None:
        for name, value in (
            ("train_fraction", self.train_fraction),
            ("val_fraction", self.val_fraction),
            ("test_fraction", self.test_fraction),
        ):
            if not 0.0 < value < 1.0:
                raise DegenerateSplit(f"{name} must lie in (0, 1), got {value}")
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if abs(total - 1.0) > FRACTION_TOLERANCE:
            raise DegenerateSplit(f"fractions sum to {total!r}, expected 1.0")


@dataclass
class LoadStats:
    """Per-file row accounting for rows that were rejected, not loaded."""

    loaded: int = 0
    unknown_label: int = 0
    empty_text: int = 0
    unknown_label_rows: list[tuple[int, str]] = field(default_factory=list)


def _normalize_label_map(label_map: dict) -> dict[str, Label]:
    normalized = {}
    for key, value in label_map.items():
        if isinstance(value, Label):
            label = value
        elif isinstance(value, int):
            label = Label(value)
        else:
            label = Label[str(value).strip().lower()]
        normalized[str(key).strip().lower()] = label
    return normalized


def _check_quote_balance(path: Path) -> None:
    # RFC-4180: a file that ends inside a quoted field is malformed.
    in_quotes = False
    with open(path, encoding="utf-8", newline="") as handle:
        while True:
            chunk = handle.read(65536)
            if not chunk:
                break
            for char in chunk:
                if char == '"':
                    in_quotes = not in_quotes
    if in_quotes:
        raise MalformedCsv(f"unbalanced quotes in {path}")


def load_csv(
    path,
    text_column: str = "Email",
    label_column: str = "Category",
    label_map: dict | None = None,
    source_id: str | None = None,
) -> tuple[Corpus, LoadStats]:
    """Read one labeled CSV into a Corpus.

    Rows whose label is absent from label_map (case-insensitive, trimmed) or
    whose text is empty after trimming are skipped and counted in LoadStats.
    Raises MissingColumn / MalformedCsv for malformed files.
    """
    path = Path(path)
    mapping = _normalize_label_map(label_map or DEFAULT_LABEL_MAP)
    _check_quote_balance(path)
    if source_id is None:
        source_id = path.stem

    samples: list[LabeledEmail] = []
    stats = LoadStats()
    with open(path, encoding="utf-8", newline="") as handle:
        try:
            reader = csv.DictReader(handle)
            header = reader.fieldnames
            if header is None:
                raise MissingColumn(f"{path} has no header row")
            for column in (text_column, label_column):
                if column not in header:
                    raise MissingColumn(f"{path} header lacks column {column!r}")
            for row_index, row in enumerate(reader):
                raw_label = (row.get(label_column) or "").strip().lower()
                text = (row.get(text_column) or "").strip()
                if raw_label not in mapping:
                    stats.unknown_label += 1
                    stats.unknown_label_rows.append((row_index, raw_label))
                    continue
                if not text:
                    stats.empty_text += 1
                    continue
                samples.append(
                    LabeledEmail(
                        text=text,
                        label=mapping[raw_label],
                        source_id=source_id,
                        row_index=row_index,
                    )
                )
                stats.loaded += 1
        except csv.Error as exc:
            raise MalformedCsv(f"{path}: {exc}") from exc

    if stats.unknown_label:
        logger.warning(
            "%s: skipped %d rows with unmapped labels (first: %s)",
            path,
            stats.unknown_label,
            stats.unknown_label_rows[:5],
        )
    if stats.empty_text:
        logger.warning("%s: skipped %d rows with empty text", path, stats.empty_text)
    return Corpus.from_samples(samples), stats


def merge(corpora: list[Corpus]) -> Corpus:
    """Concatenate corpora preserving per-source sample order."""
    if not corpora:
        raise ValueError("merge requires at least one corpus")
    samples: list[LabeledEmail] = []
    for corpus in corpora:
        samples.extend(corpus.samples)
    return Corpus.from_samples(samples)


def _fisher_yates(n: int, rng: np.random.Generator) -> np.ndarray:
    order = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return order


def _floor_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    test_n = math.floor(spec.test_fraction * n)
    val_n = math.floor(spec.val_fraction * n)
    return n - val_n - test_n, val_n, test_n


def split(corpus: Corpus, spec: SplitSpec) -> tuple[Corpus, Corpus, Corpus]:
    """Partition a corpus into (train, val, test).

    Membership is chosen by a seeded Fisher-Yates shuffle; each output keeps
    its members in original corpus order, so identical inputs produce
    byte-identical splits.
    """
    spec.validate()
    n = len(corpus)
    if n == 0:
        raise DegenerateSplit("cannot split an empty corpus")

    rng = np.random.default_rng(spec.seed)
    train_idx: list[int] = []
    val_idx: list[int] = []
    test_idx: list[int] = []

    if spec.stratified:
        # Per-class floor rule; per-class remainders go to train. Shuffles
        # consume one RNG stream in label order to stay deterministic.
        for label in Label:
            class_positions = [
                i for i, s in enumerate(corpus.samples) if s.label == label
            ]
            if not class_positions:
                continue
            order = _fisher_yates(len(class_positions), rng)
            shuffled = [class_positions[i] for i in order]
            train_c, val_c, test_c = _floor_sizes(len(shuffled), spec)
            train_idx.extend(shuffled[:train_c])
            val_idx.extend(shuffled[train_c : train_c + val_c])
            test_idx.extend(shuffled[train_c + val_c :])
            assert len(shuffled[train_c + val_c :]) == test_c
    else:
        order = _fisher_yates(n, rng)
        train_n, val_n, _ = _floor_sizes(n, spec)
        train_idx = list(order[:train_n])
        val_idx = list(order[train_n : train_n + val_n])
        test_idx = list(order[train_n + val_n :])

    if min(len(train_idx), len(val_idx), len(test_idx)) == 0:
        raise DegenerateSplit(
            f"split of {n} samples would leave an empty part "
            f"(train={len(train_idx)}, val={len(val_idx)}, test={len(test_idx)})"
        )

    parts = []
    for indices in (train_idx, val_idx, test_idx):
        members = [corpus.samples[i] for i in sorted(indices)]
        parts.append(Corpus.from_samples(members))
    return parts[0], parts[1], parts[2]


SPLIT_CSV_COLUMNS = ["text", "label", "source_id", "row_index", "split"]


def save_split_csv(corpus: Corpus, path, split_name: str) -> None:
    """Persist a split as CSV with the added "split" column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(SPLIT_CSV_COLUMNS)
        for sample in corpus.samples:
            writer.writerow(
                [sample.text, sample.label.name, sample.source_id, sample.row_index, split_name]
            )


def read_split_csv(path) -> Corpus:
    """Read back a CSV written by save_split_csv, restoring sample identity."""
    path = Path(path)
    _check_quote_balance(path)
    samples: list[LabeledEmail] = []
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        for column in ("text", "label", "source_id", "row_index"):
            if column not in header:
                raise MissingColumn(f"{path} header lacks column {column!r}")
        for row in reader:
            samples.append(
                LabeledEmail(
                    text=row["text"],
                    label=Label[row["label"].strip().lower()],
                    source_id=row["source_id"],
                    row_index=int(row["row_index"]),
                )
            )
    return Corpus.from_samples(samples)
