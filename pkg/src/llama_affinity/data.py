"""Vocabulary, JSONL ingestion, stratified folds, batching and synthetic data."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .tensor import make_rng

# ProtBERT vocab.txt order.
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
RESIDUE_TOKENS = tuple("LAGVESIKRDTPNQFYMHCWXUBZO")
STANDARD_RESIDUES = "ACDEFGHIKLMNPQRSTVWY"

PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
DEFAULT_MAX_LEN = 256


class DataError(ValueError):
    """Base class for dataset problems."""


class ParseError(DataError):
    pass


class VocabularyError(DataError):
    pass


class LabelError(DataError):
    pass


class StratificationError(DataError):
    pass


class InputError(DataError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self):
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    @property
    def pad_id(self):
        return PAD_ID

    @property
    def unk_id(self):
        return UNK_ID

    @property
    def cls_id(self):
        return CLS_ID

    @property
    def sep_id(self):
        return SEP_ID

    @property
    def mask_id(self):
        return MASK_ID


def build_vocabulary() -> Vocabulary:
    return Vocabulary(SPECIAL_TOKENS + RESIDUE_TOKENS)


VOCAB = build_vocabulary()


@dataclass(frozen=True)
class TokenizedSample:
    input_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    label: int | None = None

    def __len__(self):
        return len(self.input_ids)


@dataclass(frozen=True)
class Dataset:
    samples: tuple[TokenizedSample, ...]
    provenance: str = ""

    def __post_init__(self):
        if not self.samples:
            raise DataError("dataset is empty")

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def __iter__(self):
        return iter(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def subset(self, indices, note=None) -> "Dataset":
        return Dataset(tuple(self.samples[i] for i in indices), note or self.provenance)


def tokenize(sequence: str, vocab: Vocabulary = VOCAB, max_len: int = DEFAULT_MAX_LEN,
             label: int | None = None) -> TokenizedSample:
    """``[CLS] residues [SEP]`` truncated and padded to ``max_len``."""
    if max_len < 3:
        raise InputError(f"max_len must be >= 3, got {max_len}")
    if not sequence:
        raise InputError("cannot tokenize an empty sequence")
    body = [vocab.id(c) for c in sequence[: max_len - 2]]
    ids = [CLS_ID, *body, SEP_ID]
    mask = [1] * len(ids) + [0] * (max_len - len(ids))
    ids += [PAD_ID] * (max_len - len(ids))
    return TokenizedSample(tuple(ids), tuple(mask), label)


def detokenize(sample: TokenizedSample, vocab: Vocabulary = VOCAB) -> str:
    """Residue string between CLS and SEP (special tokens dropped)."""
    return "".join(vocab.token(i) for i, m in zip(sample.input_ids, sample.attention_mask)
                   if m and i >= len(SPECIAL_TOKENS))


def _validate(ids, mask, label, where, vocab_size):
    if len(ids) != len(mask):
        raise ParseError(f"{where}: input_ids and attention_mask lengths differ ({len(ids)} vs {len(mask)})")
    if not ids:
        raise ParseError(f"{where}: empty input_ids")
    bad = [i for i in ids if not isinstance(i, int) or i < 0 or i >= vocab_size]
    if bad:
        raise VocabularyError(f"{where}: token id {bad[0]} outside vocabulary of size {vocab_size}")
    if any(m not in (0, 1) for m in mask):
        raise ParseError(f"{where}: attention_mask must contain only 0/1")
    if 1 not in mask:
        raise ParseError(f"{where}: attention_mask has no real tokens")
    if isinstance(label, bool) or not isinstance(label, int) or label not in (0, 1):
        raise LabelError(f"{where}: label must be 0 or 1, got {label!r}")


def parse_record(line: str, lineno: int = 1, vocab_size: int = len(VOCAB),
                 require_label: bool = True) -> TokenizedSample:
    where = f"line {lineno}"
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{where}: invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise ParseError(f"{where}: expected a JSON object")
    fields = ("input_ids", "attention_mask", "label") if require_label else ("input_ids", "attention_mask")
    for f in fields:
        if f not in rec:
            raise ParseError(f"{where}: missing field {f!r}")
    ids, mask = rec["input_ids"], rec["attention_mask"]
    if not isinstance(ids, list) or not isinstance(mask, list):
        raise ParseError(f"{where}: input_ids and attention_mask must be arrays")
    label = rec.get("label")
    _validate(ids, mask, label if require_label else 0, where, vocab_size)
    if not require_label and label is not None and label not in (0, 1):
        raise LabelError(f"{where}: label must be 0 or 1, got {label!r}")
    # token_type_ids is accepted and dropped: the backbone has no segment embedding
    return TokenizedSample(tuple(ids), tuple(mask), label)


def load_jsonl(path, require_label: bool = True) -> Dataset:
    path = Path(path)
    samples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            samples.append(parse_record(line, lineno, require_label=require_label))
    if not samples:
        raise DataError(f"{path}: no records")
    return Dataset(tuple(samples), str(path))


def sample_to_record(sample: TokenizedSample) -> dict:
    rec = {"input_ids": list(sample.input_ids), "attention_mask": list(sample.attention_mask)}
    if sample.label is not None:
        rec["label"] = int(sample.label)
    return rec


def write_jsonl(ds: Dataset, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in ds:
            fh.write(json.dumps(sample_to_record(s), separators=(",", ":")) + "\n")


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    seed: int
    assignment: tuple[int, ...]

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.assignment) == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.assignment) != fold)

    def to_json(self) -> dict:
        return {"seed": self.seed, "k": self.k, "assignment": list(self.assignment)}

    @classmethod
    def from_json(cls, obj: dict) -> "FoldAssignment":
        return cls(int(obj["k"]), int(obj["seed"]), tuple(int(a) for a in obj["assignment"]))


def stratified_kfold(labels: Sequence[int], k: int, seed: int) -> FoldAssignment:
    """Shuffle each class, then deal its members round-robin onto folds.

    The round-robin offset carries over from one class to the next so fold
    sizes stay within one of each other as well.
    """
    if k < 2:
        raise StratificationError(f"k must be >= 2, got {k}")
    labels = np.asarray(labels)
    rng = make_rng(seed)
    assignment = np.full(len(labels), -1, dtype=np.int64)
    offset = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if len(members) < k:
            raise StratificationError(f"class {cls} has {len(members)} members, fewer than k={k}")
        members = members[rng.permutation(len(members))]
        assignment[members] = (np.arange(len(members)) + offset) % k
        offset = (offset + len(members)) % k
    return FoldAssignment(k, seed, tuple(int(a) for a in assignment))


@dataclass
class Batch:
    input_ids: np.ndarray
    attention_mask: np.ndarray
    labels: np.ndarray | None
    indices: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.input_ids)


def pad_batch(samples: Sequence[TokenizedSample], indices=None) -> Batch:
    width = max(len(s) for s in samples)
    ids = np.full((len(samples), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(samples), width), dtype=np.int64)
    for r, s in enumerate(samples):
        ids[r, : len(s)] = s.input_ids
        mask[r, : len(s)] = s.attention_mask
    labels = None
    if all(s.label is not None for s in samples):
        labels = np.array([s.label for s in samples], dtype=np.int64)
    return Batch(ids, mask, labels, None if indices is None else np.asarray(indices))


def make_batches(ds: Dataset, batch_size: int, rng: np.random.Generator | None = None,
                 shuffle: bool = False) -> Iterator[Batch]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(len(ds)) if shuffle else np.arange(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = order[start : start + batch_size]
        yield pad_batch([ds[i] for i in idx], idx)


def contains_motif(sample: TokenizedSample, motif: str) -> bool:
    return motif in detokenize(sample)


BACKGROUNDS = ("exclusive", "uniform")


def synth_generate(n: int, motif: str, seq_len: int, noise: float, rng: np.random.Generator,
                   background: str = "exclusive") -> Dataset:
    """Balanced motif-presence dataset, tokenized to ``seq_len + 2``.

    Label-1 sequences carry ``motif`` at a uniform position; label-0
    sequences never contain it.  Background residues are drawn uniformly from
    the 20 standard amino acids, minus the motif's own residues when
    ``background="exclusive"``.  With ``"uniform"`` the full alphabet is used
    and label-0 sequences are resampled until motif-free; the classes then
    differ only in residue order, which a small model does not pick up within
    a few hundred optimizer steps.  Labels are finally flipped with
    probability ``noise``.
    """
    if not motif or any(c not in RESIDUE_TOKENS for c in motif):
        raise InputError(f"motif {motif!r} must be non-empty and use residue symbols only")
    if len(motif) >= seq_len:
        raise InputError("motif must be shorter than seq_len")
    if not 0 <= noise < 0.5:
        raise InputError(f"noise must be in [0, 0.5), got {noise}")
    if n < 1:
        raise InputError("n must be >= 1")
    if background not in BACKGROUNDS:
        raise InputError(f"background must be one of {BACKGROUNDS}, got {background!r}")
    alphabet = STANDARD_RESIDUES
    if background == "exclusive":
        alphabet = "".join(c for c in STANDARD_RESIDUES if c not in motif)
        if not alphabet:
            raise InputError("motif uses every standard residue; no exclusive background left")
    letters = np.array(list(alphabet))
    labels = np.array([i % 2 for i in range(n)])
    labels = labels[rng.permutation(n)]
    samples = []
    for y in labels:
        while True:
            seq = "".join(letters[rng.integers(0, len(letters), seq_len)])
            if y == 1:
                pos = int(rng.integers(0, seq_len - len(motif) + 1))
                seq = seq[:pos] + motif + seq[pos + len(motif):]
                break
            if motif not in seq:
                break
        observed = int(y)
        if noise > 0 and rng.random() < noise:
            observed = 1 - observed
        samples.append(tokenize(seq, VOCAB, seq_len + 2, observed))
    note = f"synth(n={n}, motif={motif}, seq_len={seq_len}, noise={noise}, background={background})"
    return Dataset(tuple(samples), note)
