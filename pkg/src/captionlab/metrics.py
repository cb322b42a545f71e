"""Caption evaluation: corpus BLEU-1..4, METEOR (exact + stem stages), and
unigram precision/recall/F1 against the best-matching reference.

METEOR is the exact+stem variant: F = PR / (0.9 P + 0.1 R), fragmentation
penalty 0.5 * (chunks / matches)^3, max over references. No WordNet stage.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

Tokens = list[str]

METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5


# ---------------------------------------------------------------------------
# BLEU

def _ngram_counts(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _best_match_length(cand_len: int, references: list[Tokens]) -> int:
    # closest reference length; ties go to the shorter one
    return min((abs(len(r) - cand_len), len(r)) for r in references)[1]


def bleu_n(
    candidates: list[Tokens],
    references: list[list[Tokens]],
    n_max: int = 4,
) -> list[float]:
    """Corpus-level BLEU-1..n_max with clipped n-gram precision and the
    brevity penalty min(1, e^(1 - r/c)). BLEU-n is 0 if any p_i (i <= n) is 0."""
    if not candidates:
        raise ValueError("bleu_n: empty candidate set")
    if len(candidates) != len(references):
        raise ValueError("bleu_n: candidates and references must pair up")
    clipped = [0] * (n_max + 1)
    totals = [0] * (n_max + 1)
    cand_len_sum = 0
    ref_len_sum = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValueError("bleu_n: candidate without references")
        cand_len_sum += len(cand)
        ref_len_sum += _best_match_length(len(cand), refs)
        for n in range(1, n_max + 1):
            counts = _ngram_counts(cand, n)
            max_ref: Counter = Counter()
            for ref in refs:
                for gram, c in _ngram_counts(ref, n).items():
                    if c > max_ref[gram]:
                        max_ref[gram] = c
            totals[n] += sum(counts.values())
            clipped[n] += sum(min(c, max_ref[gram]) for gram, c in counts.items())

    if cand_len_sum == 0:
        return [0.0] * n_max
    bp = 1.0 if cand_len_sum >= ref_len_sum else math.exp(1.0 - ref_len_sum / cand_len_sum)
    precisions = [
        (clipped[n] / totals[n]) if totals[n] > 0 else 0.0 for n in range(1, n_max + 1)
    ]
    scores = []
    for n in range(1, n_max + 1):
        if any(precisions[i] == 0.0 for i in range(n)):
            scores.append(0.0)
            continue
        log_mean = sum(math.log(precisions[i]) for i in range(n)) / n
        scores.append(bp * math.exp(log_mean))
    return scores


# ---------------------------------------------------------------------------
# METEOR (exact + stem alignment)

_SUFFIXES = ("ing", "ed", "es", "s")


def stem(token: str) -> str:
    """Crude suffix-stripping stemmer; enough to align inflected forms."""
    for suf in _SUFFIXES:
        if token.endswith(suf) and len(token) - len(suf) >= 3:
            return token[: -len(suf)]
    return token


def _align(candidate: Tokens, reference: Tokens) -> list[tuple[int, int]]:
    """Greedy maximal unigram alignment: exact-match stage first, then a
    stem-match stage over the leftovers. Returns (cand_idx, ref_idx) pairs."""
    pairs: list[tuple[int, int]] = []
    used_c = [False] * len(candidate)
    used_r = [False] * len(reference)
    for key_fn in (lambda t: t, stem):
        ref_keys = [key_fn(t) for t in reference]
        for ci, ct in enumerate(candidate):
            if used_c[ci]:
                continue
            key = key_fn(ct)
            for ri, rk in enumerate(ref_keys):
                if not used_r[ri] and rk == key:
                    pairs.append((ci, ri))
                    used_c[ci] = True
                    used_r[ri] = True
                    break
    pairs.sort()
    return pairs


def _chunks(pairs: list[tuple[int, int]]) -> int:
    count = 0
    prev = None
    for ci, ri in pairs:
        if prev is None or ci != prev[0] + 1 or ri != prev[1] + 1:
            count += 1
        prev = (ci, ri)
    return count


def meteor(candidate: Tokens, references: list[Tokens]) -> float:
    """Max over references of F * (1 - penalty)."""
    if not references:
        raise ValueError("meteor: at least one reference required")
    best = 0.0
    for ref in references:
        if not candidate or not ref:
            continue
        pairs = _align(candidate, ref)
        m = len(pairs)
        if m == 0:
            continue
        p = m / len(candidate)
        r = m / len(ref)
        f = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r)
        penalty = METEOR_GAMMA * (_chunks(pairs) / m) ** METEOR_BETA
        best = max(best, f * (1.0 - penalty))
    return best


# ---------------------------------------------------------------------------
# token precision / recall / F1

def token_prf(candidate: Tokens, references: list[Tokens]) -> tuple[float, float, float]:
    """Unigram-multiset overlap against the best-matching (highest F1)
    reference. Empty candidate scores (0, 0, 0)."""
    if not references:
        raise ValueError("token_prf: at least one reference required")
    best = (0.0, 0.0, 0.0)
    cand_counts = Counter(candidate)
    for ref in references:
        overlap = sum((cand_counts & Counter(ref)).values())
        p = overlap / len(candidate) if candidate else 0.0
        r = overlap / len(ref) if ref else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        if f1 > best[2]:
            best = (p, r, f1)
    return best


# ---------------------------------------------------------------------------
# corpus evaluation

@dataclass
class ExampleRow:
    example_id: str
    bleu: list[float]   # sentence-level BLEU-1..4, for the per-example report rows
    meteor: float
    precision: float
    recall: float
    f1: float
    caption: str = ""


@dataclass
class EvalReport:
    corpus_bleu: list[float]
    mean_meteor: float
    mean_precision: float
    mean_recall: float
    mean_f1: float
    rows: list[ExampleRow] = field(default_factory=list)

    def csv_lines(self) -> list[str]:
        lines = ["example_id,bleu1,bleu2,bleu3,bleu4,meteor,precision,recall,f1"]
        for row in self.rows:
            b = ",".join(f"{x:.6f}" for x in row.bleu)
            lines.append(
                f"{row.example_id},{b},{row.meteor:.6f},{row.precision:.6f},"
                f"{row.recall:.6f},{row.f1:.6f}"
            )
        b = ",".join(f"{x:.6f}" for x in self.corpus_bleu)
        lines.append(
            f"CORPUS,{b},{self.mean_meteor:.6f},{self.mean_precision:.6f},"
            f"{self.mean_recall:.6f},{self.mean_f1:.6f}"
        )
        return lines

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.csv_lines()) + "\n", encoding="utf-8")


def score_corpus(
    candidates: list[Tokens], references: list[list[Tokens]], ids: list[str] | None = None
) -> EvalReport:
    """Aggregate all metrics over already-generated captions."""
    if ids is None:
        ids = [str(i) for i in range(len(candidates))]
    rows = []
    for ex_id, cand, refs in zip(ids, candidates, references):
        p, r, f1 = token_prf(cand, refs)
        rows.append(
            ExampleRow(
                example_id=ex_id,
                bleu=bleu_n([cand], [refs]),
                meteor=meteor(cand, refs),
                precision=p,
                recall=r,
                f1=f1,
                caption=" ".join(cand),
            )
        )
    return EvalReport(
        corpus_bleu=bleu_n(candidates, references),
        mean_meteor=float(sum(r.meteor for r in rows) / len(rows)),
        mean_precision=float(sum(r.precision for r in rows) / len(rows)),
        mean_recall=float(sum(r.recall for r in rows) / len(rows)),
        mean_f1=float(sum(r.f1 for r in rows) / len(rows)),
        rows=rows,
    )


def evaluate_corpus(model, examples, vocab, beam_config) -> EvalReport:
    """Generate one beam top-1 caption per example and score the corpus."""
    from .beam import beam_search
    from .features import to_vector

    if not examples:
        raise ValueError("evaluate_corpus: empty dataset")
    candidates = []
    references = []
    for ex in examples:
        feats = ex.features if model.config.architecture == "focalis" else to_vector(ex.features)
        best = beam_search(model, feats, beam_config)[0]
        candidates.append(vocab.decode(best.tokens))
        references.append([vocab.decode(ref) for ref in ex.references])
    return score_corpus(candidates, references)
