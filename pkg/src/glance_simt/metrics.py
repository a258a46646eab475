"""Quality, latency and hallucination metrics for streaming translation."""

from __future__ import annotations

import io
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = ("bleu", "al", "hr", "sentences", "tokens", "config_hash", "seed")


@dataclass
class EvalReport:
    bleu: float
    al: float
    hr: float
    sentences: int
    tokens: int
    config_hash: str = ""
    seed: int = 0
    accuracy: float = 0.0
    ref_tokens: int = 0

    def __post_init__(self):
        if not 0.0 <= self.bleu <= 100.0:
            raise ValueError(f"BLEU {self.bleu} outside [0, 100]")
        if not 0.0 <= self.hr <= 1.0:
            raise ValueError(f"HR {self.hr} outside [0, 1]")

    def csv_values(self) -> list[str]:
        return [
            f"{self.bleu:.4f}",
            f"{self.al:.4f}",
            f"{self.hr:.6f}",
            str(self.sentences),
            str(self.tokens),
            self.config_hash,
            str(self.seed),
        ]

    def to_csv(self) -> str:
        return ",".join(CSV_COLUMNS) + "\n" + ",".join(self.csv_values()) + "\n"

    def to_text(self) -> str:
        buf = io.StringIO()
        for k, v in asdict(self).items():
            buf.write(f"{k:>12}: {v}\n")
        return buf.getvalue()


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]], max_n: int = 4):
    """Clipped n-gram matches and totals summed over the corpus, plus lengths."""
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def corpus_bleu(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]], max_n: int = 4) -> float:
    """Corpus BLEU in percent (single reference, whitespace tokens).

    A zero precision for n >= 2 is add-one smoothed; a zero unigram precision
    gives 0.
    """
    if len(hypotheses) == 0:
        raise ValueError("BLEU of an empty corpus is undefined")
    matches, totals, hyp_len, ref_len = bleu_stats(hypotheses, references, max_n)
    if hyp_len == 0 or matches[0] == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_n):
        m, t = matches[n], totals[n]
        if n > 0 and m == 0:
            m, t = m + 1, t + 1
        log_p += math.log(m / t) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return min(100.0, 100.0 * bp * math.exp(log_p))


def average_lagging(reads: Sequence[int], J: int, I: Optional[int] = None) -> float:  # noqa: E741
    """Average Lagging over per-token read counts ``reads`` (one per emitted token).

    AL = (1/tau) * sum_{i<=tau} (g_i - (i-1) * J / I), where tau is the first
    step that has read the full source (or I if none does).
    """
    if len(reads) == 0:
        raise ValueError("AL of an empty trace is undefined")
    I = len(reads) if I is None else I  # noqa: E741
    gamma = I / J
    tau = next((i for i, g in enumerate(reads, start=1) if g >= J), len(reads))
    return sum(reads[i - 1] - (i - 1) / gamma for i in range(1, tau + 1)) / tau


def hallucination_flags(
    hypothesis: Sequence[int],
    reads: Sequence[int],
    reference: Sequence[int],
    alignment: Sequence[int],
) -> list[bool]:
    """Per hypothesis token: produced without its aligned source token and wrong.

    Step i is judged against reference token i and its aligned source position.
    Tokens past the end of the reference are always flagged.
    """
    if len(alignment) != len(reference):
        raise ValueError(f"alignment covers {len(alignment)} tokens, reference has {len(reference)}")
    flags = []
    for i, tok in enumerate(hypothesis):
        if i >= len(reference):
            flags.append(True)
            continue
        flags.append(alignment[i] > reads[i] and tok != reference[i])
    return flags


def hallucination_rate(
    reads: Sequence[Sequence[int]],
    hypotheses: Sequence[Sequence[int]],
    alignments: Sequence[Optional[Sequence[int]]],
    references: Sequence[Sequence[int]],
) -> float:
    """Hallucinated tokens over all hypothesis tokens, pooled over the corpus."""
    hall = total = 0
    for n, (r, h, a, ref) in enumerate(zip(reads, hypotheses, alignments, references)):
        if a is None:
            raise ValueError(f"sentence {n} has no alignment")
        if len(r) < len(h):
            raise ValueError(f"sentence {n}: {len(h)} tokens but only {len(r)} read counts")
        hall += sum(hallucination_flags(h, r, ref, a))
        total += len(h)
    return hall / total if total else 0.0


def token_accuracy(hypotheses: Sequence[Sequence[int]], references: Sequence[Sequence[int]]) -> float:
    """Position-wise matches over reference tokens."""
    hit = total = 0
    for h, r in zip(hypotheses, references):
        hit += sum(1 for a, b in zip(h, r) if a == b)
        total += len(r)
    return hit / total if total else 0.0
