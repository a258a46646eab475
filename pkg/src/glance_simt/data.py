"""Parallel data: synthetic tasks with gold alignments, plain-text corpora, batching."""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<s>", "</s>", "<unk>")


class Vocab:
    """Token <-> id map with fixed special ids (pad=0, bos=1, eos=2, unk=3)."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, tokens: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.stoi.get(t, UNK) for t in tokens)

    def decode(self, ids: Sequence[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.itos[i] if 0 <= i < len(self.itos) else SPECIALS[UNK])
        return out

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError(f"{path}: vocabulary must start with {SPECIALS}")
        return cls(tokens[len(SPECIALS) :])

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], min_freq: int = 1) -> "Vocab":
        """Tokens seen fewer than ``min_freq`` times are left out (they map to unk)."""
        counts = Counter(t for s in sentences for t in s)
        kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
        return cls(kept)


@dataclass(frozen=True)
class ParallelPair:
    src: tuple[int, ...]
    tgt: tuple[int, ...]
    # per target token: 1-indexed source position it depends on, 0 if unaligned
    alignment: Optional[tuple[int, ...]] = None


@dataclass
class Corpus:
    pairs: list[ParallelPair]
    src_vocab: Vocab
    tgt_vocab: Vocab

    def __len__(self) -> int:
        return len(self.pairs)

    def subset(self, indices: Sequence[int]) -> "Corpus":
        return Corpus([self.pairs[i] for i in indices], self.src_vocab, self.tgt_vocab)


@dataclass
class TaskSpec:
    kind: str = "shifted_copy"  # copy | shifted_copy | reversal_window
    delta: int = 2
    window: int = 3
    vocab_size: int = 50
    min_len: int = 6
    max_len: int = 14
    seed: int = 0
    size: int = 1000
    # "uniform": i.i.d. tokens; "markov": first-order chain with `branching`
    # successors per token, so upcoming source tokens are partly predictable.
    source: str = "uniform"
    branching: int = 3

    def validate(self) -> None:
        if self.kind not in ("copy", "shifted_copy", "reversal_window"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ValueError(f"bad length range [{self.min_len}, {self.max_len}]")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.kind == "shifted_copy" and self.delta >= self.min_len:
            raise ValueError(f"delta={self.delta} must be smaller than min_len={self.min_len}")
        if self.kind == "reversal_window" and self.window < 1:
            raise ValueError("window must be >= 1")
        if self.vocab_size < 1 or self.size < 0:
            raise ValueError("vocab_size must be >= 1 and size >= 0")
        if self.source not in ("uniform", "markov"):
            raise ValueError(f"unknown source model {self.source!r}")
        if self.source == "markov" and not 1 <= self.branching <= self.vocab_size:
            raise ValueError("branching must lie in 1..vocab_size")


def synthetic_vocab(vocab_size: int) -> Vocab:
    return Vocab(f"t{n}" for n in range(vocab_size))


def _transitions(spec: TaskSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    succ = np.stack([rng.choice(spec.vocab_size, size=spec.branching, replace=False) for _ in range(spec.vocab_size)])
    probs = rng.dirichlet(np.ones(spec.branching), size=spec.vocab_size)
    return succ, probs


def _sample_source(spec: TaskSpec, rng: np.random.Generator, length: int, chain) -> np.ndarray:
    if chain is None:
        return rng.integers(spec.vocab_size, size=length)
    succ, probs = chain
    x = np.empty(length, dtype=np.int64)
    x[0] = rng.integers(spec.vocab_size)
    for j in range(1, length):
        prev = x[j - 1]
        x[j] = succ[prev, rng.choice(spec.branching, p=probs[prev])]
    return x


def transform(kind: str, src: Sequence[int], delta: int = 0, window: int = 1) -> tuple[list[int], list[int]]:
    """Target tokens and 1-indexed gold alignment for a source sequence."""
    J = len(src)
    if kind == "copy":
        align = list(range(1, J + 1))
    elif kind == "shifted_copy":
        if delta >= J:
            raise ValueError(f"delta={delta} leaves no target for J={J}")
        align = list(range(1 + delta, J + 1))
    elif kind == "reversal_window":
        align = []
        for start in range(0, J, window):
            stop = min(start + window, J)
            align.extend(range(stop, start, -1))
    else:
        raise ValueError(f"unknown task kind {kind!r}")
    return [src[a - 1] for a in align], align


def generate(spec: TaskSpec) -> Corpus:
    """Sample ``spec.size`` pairs. Same spec (seed included) gives the same corpus."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    chain = _transitions(spec, rng) if spec.source == "markov" else None
    vocab = synthetic_vocab(spec.vocab_size)
    offset = len(SPECIALS)
    lengths = rng.integers(spec.min_len, spec.max_len + 1, size=spec.size)
    pairs = []
    for J in lengths:
        x = (_sample_source(spec, rng, int(J), chain) + offset).tolist()
        y, align = transform(spec.kind, x, spec.delta, spec.window)
        pairs.append(ParallelPair(tuple(x), tuple(y), tuple(align)))
    return Corpus(pairs, vocab, vocab)


def split(corpus: Corpus, n_test: int) -> tuple[Corpus, Corpus]:
    """Last ``n_test`` pairs become the held-out part."""
    if not 0 <= n_test <= len(corpus):
        raise ValueError(f"cannot hold out {n_test} of {len(corpus)} pairs")
    cut = len(corpus) - n_test
    return corpus.subset(range(cut)), corpus.subset(range(cut, len(corpus)))


# -- text files ---------------------------------------------------------------


def _read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def parse_alignment(line: str, src_len: int, tgt_len: int) -> tuple[int, ...]:
    """Pharaoh ``src-tgt`` pairs (0-indexed) -> 1-indexed source position per target token.

    A target token linked to several source tokens keeps the rightmost one;
    unlinked target tokens get 0.
    """
    out = [0] * tgt_len
    for item in line.split():
        try:
            s, t = item.split("-")
            s, t = int(s), int(t)
        except ValueError:
            raise ValueError(f"malformed alignment entry {item!r}") from None
        if not (0 <= s < src_len and 0 <= t < tgt_len):
            raise ValueError(f"alignment entry {item!r} out of range for lengths ({src_len}, {tgt_len})")
        out[t] = max(out[t], s + 1)
    return tuple(out)


def format_alignment(alignment: Sequence[int]) -> str:
    return " ".join(f"{a - 1}-{t}" for t, a in enumerate(alignment) if a > 0)


def load_corpus(
    src_path,
    tgt_path,
    align_path=None,
    min_freq: int = 5,
    vocabs: Optional[tuple[Vocab, Vocab]] = None,
) -> Corpus:
    """Read whitespace-tokenized parallel text.

    Without ``vocabs``, source and target vocabularies are built from the files
    and tokens rarer than ``min_freq`` become unk.
    """
    src_lines = [line.split() for line in _read_lines(src_path)]
    tgt_lines = [line.split() for line in _read_lines(tgt_path)]
    if len(src_lines) != len(tgt_lines):
        raise ValueError(f"line-count mismatch: {src_path} has {len(src_lines)}, {tgt_path} has {len(tgt_lines)}")
    align_lines = None
    if align_path is not None:
        align_lines = _read_lines(align_path)
        if len(align_lines) != len(src_lines):
            raise ValueError(f"line-count mismatch: {align_path} has {len(align_lines)}, expected {len(src_lines)}")
    if vocabs is None:
        vocabs = (Vocab.build(src_lines, min_freq), Vocab.build(tgt_lines, min_freq))
    sv, tv = vocabs
    pairs = []
    for n, (s, t) in enumerate(zip(src_lines, tgt_lines)):
        align = None
        if align_lines is not None:
            try:
                align = parse_alignment(align_lines[n], len(s), len(t))
            except ValueError as exc:
                raise ValueError(f"line {n + 1}: {exc}") from None
        pairs.append(ParallelPair(sv.encode(s), tv.encode(t), align))
    return Corpus(pairs, sv, tv)


def write_corpus(corpus: Corpus, out_dir, prefix: str = "data") -> dict[str, Path]:
    """Write ``<prefix>.src``, ``<prefix>.tgt`` and (if aligned) ``<prefix>.align``."""
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    paths = {"src": out_dir / f"{prefix}.src", "tgt": out_dir / f"{prefix}.tgt"}
    with open(paths["src"], "w", encoding="utf-8", newline="\n") as fs, open(
        paths["tgt"], "w", encoding="utf-8", newline="\n"
    ) as ft:
        for p in corpus.pairs:
            fs.write(" ".join(corpus.src_vocab.decode(p.src)) + "\n")
            ft.write(" ".join(corpus.tgt_vocab.decode(p.tgt)) + "\n")
    if corpus.pairs and all(p.alignment is not None for p in corpus.pairs):
        paths["align"] = out_dir / f"{prefix}.align"
        with open(paths["align"], "w", encoding="utf-8", newline="\n") as fa:
            for p in corpus.pairs:
                fa.write(format_alignment(p.alignment) + "\n")
    return paths


# -- batching -----------------------------------------------------------------


@dataclass
class Batch:
    src: np.ndarray  # (B, J_pad)
    tgt_in: np.ndarray  # (B, I_pad) bos + target
    tgt_out: np.ndarray  # (B, I_pad) target + eos
    src_len: np.ndarray  # (B,)
    tgt_len: np.ndarray  # (B,) decoder steps, = len(target) + 1
    indices: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return self.src.shape[0]


def collate(pairs: Sequence[ParallelPair], pad_id: int = PAD, indices: Sequence[int] = ()) -> Batch:
    if not pairs:
        raise ValueError("cannot collate an empty batch")
    B = len(pairs)
    J_pad = max(len(p.src) for p in pairs)
    I_pad = max(len(p.tgt) for p in pairs) + 1
    src = np.full((B, J_pad), pad_id, dtype=np.int64)
    tgt_in = np.full((B, I_pad), pad_id, dtype=np.int64)
    tgt_out = np.full((B, I_pad), pad_id, dtype=np.int64)
    for b, p in enumerate(pairs):
        src[b, : len(p.src)] = p.src
        tgt_in[b, 0] = BOS
        tgt_in[b, 1 : len(p.tgt) + 1] = p.tgt
        tgt_out[b, : len(p.tgt)] = p.tgt
        tgt_out[b, len(p.tgt)] = EOS
    return Batch(
        src,
        tgt_in,
        tgt_out,
        np.array([len(p.src) for p in pairs]),
        np.array([len(p.tgt) + 1 for p in pairs]),
        list(indices) or list(range(B)),
    )


def make_batches(pairs: Sequence[ParallelPair], max_tokens: int, pad_id: int = PAD, seed: int = 0) -> list[Batch]:
    """Length-bucketed, padded batches in a seed-shuffled order.

    A batch costs ``B * max(J_pad, I_pad)`` tokens, which must stay within
    ``max_tokens``. Every pair lands in exactly one batch.
    """
    if not pairs:
        raise ValueError("cannot batch an empty corpus")
    for n, p in enumerate(pairs):
        if max(len(p.src), len(p.tgt) + 1) > max_tokens:
            raise ValueError(f"pair {n} (src {len(p.src)}, tgt {len(p.tgt)} tokens) exceeds max_tokens={max_tokens}")
    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(len(pairs))
    order = sorted(range(len(pairs)), key=lambda n: (len(pairs[n].src), len(pairs[n].tgt), tiebreak[n]))

    groups, cur, width = [], [], 0
    for n in order:
        w = max(width, len(pairs[n].src), len(pairs[n].tgt) + 1)
        if cur and (len(cur) + 1) * w > max_tokens:
            groups.append(cur)
            cur, w = [], max(len(pairs[n].src), len(pairs[n].tgt) + 1)
        cur.append(n)
        width = w
    groups.append(cur)

    batches = [collate([pairs[n] for n in g], pad_id, g) for g in groups]
    return [batches[n] for n in rng.permutation(len(batches))]
