"""BLEU-1..4, ROUGE-L and CIDEr-D over tokenised captions.

Inputs are parallel lists: ``candidates[i]`` is one string (or token list)
and ``references[i]`` the list of reference strings for the same image.
Strings go through :func:`gradcap.corpus.tokenize`.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence, Union

from .corpus import tokenize

Text = Union[str, Sequence[str]]

ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0
CIDER_N = 4


def _toks(x: Text) -> list[str]:
    return tokenize(x) if isinstance(x, str) else list(x)


def _prepare(candidates, references):
    if not candidates:
        raise ValueError("empty candidate set")
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    cands = [_toks(c) for c in candidates]
    refs = []
    for i, r in enumerate(references):
        if not r:
            raise ValueError(f"candidate {i} has no reference")
        refs.append([_toks(x) for x in r])
    return cands, refs


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_length(c_len: int, ref_lens: Sequence[int]) -> int:
    return min(ref_lens, key=lambda r: (abs(r - c_len), r))


def bleu_stats(candidates, references, max_n: int = 4):
    """Corpus totals: clipped matches and candidate n-gram counts per order, c and r lengths."""
    cands, refs = _prepare(candidates, references)
    matches, totals = [0] * max_n, [0] * max_n
    c_len = r_len = 0
    for cand, rs in zip(cands, refs):
        c_len += len(cand)
        r_len += _closest_ref_length(len(cand), [len(r) for r in rs])
        for n in range(1, max_n + 1):
            cn = ngrams(cand, n)
            max_ref: Counter = Counter()
            for r in rs:
                max_ref |= ngrams(r, n)
            matches[n - 1] += sum(min(c, max_ref[g]) for g, c in cn.items())
            totals[n - 1] += sum(cn.values())
    return matches, totals, c_len, r_len


def bleu_n(candidates, references, n: int) -> float:
    """Corpus BLEU-n, no smoothing: any zero precision up to order n gives 0."""
    if n not in (1, 2, 3, 4):
        raise ValueError("n must be in 1..4")
    matches, totals, c, r = bleu_stats(candidates, references, n)
    return _bleu_from_stats(matches, totals, c, r, n)


def _bleu_from_stats(matches, totals, c, r, n) -> float:
    if c == 0 or any(m == 0 for m in matches[:n]):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches[:n], totals[:n])) / n
    bp = min(0.0, 1.0 - r / c)
    return math.exp(log_p + bp)


def bleu_all(candidates, references) -> list[float]:
    matches, totals, c, r = bleu_stats(candidates, references, 4)
    return [_bleu_from_stats(matches, totals, c, r, n) for n in range(1, 5)]


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_single(cand: Sequence[str], refs: Sequence[Sequence[str]], beta: float = ROUGE_BETA) -> float:
    best = 0.0
    for ref in refs:
        lcs = lcs_length(cand, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(cand), lcs / len(ref)
        best = max(best, (1 + beta**2) * p * r / (r + beta**2 * p))
    return best


def rouge_l(candidates, references, beta: float = ROUGE_BETA, per_image: bool = False):
    cands, refs = _prepare(candidates, references)
    scores = [rouge_l_single(c, r, beta) for c, r in zip(cands, refs)]
    mean = sum(scores) / len(scores)
    return (mean, scores) if per_image else mean


def _cider_vec(counts: Counter, df: Counter, log_n: float):
    vec = [dict() for _ in range(CIDER_N)]
    norm = [0.0] * CIDER_N
    for g, tf in counts.items():
        n = len(g) - 1
        v = tf * (log_n - math.log(max(1.0, df[g])))
        vec[n][g] = v
        norm[n] += v * v
    return vec, [math.sqrt(x) for x in norm]


def cider(candidates, references, sigma: float = CIDER_SIGMA, per_image: bool = False):
    """CIDEr-D: clipped tf-idf cosine for n = 1..4 with a Gaussian length penalty, x10.

    Document frequencies come from the references (one document per image).
    """
    cands, refs = _prepare(candidates, references)
    if len(cands) < 2:
        raise ValueError("degenerate idf: CIDEr needs at least two images")

    def all_ngrams(t):
        c = Counter()
        for n in range(1, CIDER_N + 1):
            c.update(ngrams(t, n))
        return c

    ref_counts = [[all_ngrams(r) for r in rs] for rs in refs]
    df: Counter = Counter()
    for rcs in ref_counts:
        df.update(set().union(*[set(c) for c in rcs]))
    log_n = math.log(float(len(cands)))

    scores = []
    for cand, rs, rcs in zip(cands, refs, ref_counts):
        vc, nc = _cider_vec(all_ngrams(cand), df, log_n)
        acc = [0.0] * CIDER_N
        for ref, rc in zip(rs, rcs):
            vr, nr = _cider_vec(rc, df, log_n)
            delta = len(cand) - len(ref)
            for n in range(CIDER_N):
                val = sum(min(v, vr[n].get(g, 0.0)) * vr[n].get(g, 0.0) for g, v in vc[n].items())
                if nc[n] != 0 and nr[n] != 0:
                    val /= nc[n] * nr[n]
                acc[n] += val * math.exp(-(delta**2) / (2 * sigma**2))
        scores.append(10.0 * sum(acc) / CIDER_N / len(rs))
    mean = sum(scores) / len(scores)
    return (mean, scores) if per_image else mean


@dataclass
class EvalReport:
    bleu: list[float]
    rouge_l: float
    cider: float | None
    per_image: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "BLEU-1": self.bleu[0], "BLEU-2": self.bleu[1], "BLEU-3": self.bleu[2], "BLEU-4": self.bleu[3],
            "METEOR": "not computed", "CIDEr": self.cider, "SPICE": "not computed", "ROUGE-L": self.rouge_l,
            "per_image": self.per_image,
        }

    def table(self) -> str:
        cols = ["BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "CIDEr", "SPICE", "ROUGE-L"]
        d = self.to_dict()
        fmt = lambda v: "n/a" if v is None or isinstance(v, str) else f"{100 * v:.1f}"
        head = " | ".join(f"{c:>7}" for c in cols)
        row = " | ".join(f"{fmt(d[c]):>7}" for c in cols)
        return f"{head}\n{row}"


def score_corpus(image_ids: Sequence[int], candidates: Sequence[str], references: Sequence[Sequence[str]]) -> EvalReport:
    bleu = bleu_all(candidates, references)
    rl, rl_each = rouge_l(candidates, references, per_image=True)
    if len(candidates) >= 2:
        cd, cd_each = cider(candidates, references, per_image=True)
    else:
        cd, cd_each = None, [None] * len(candidates)
    per_image = [
        {"image_id": int(i), "caption": c, "bleu4": bleu_n([c], [r], 4), "rouge_l": rl_i, "cider": cd_i}
        for i, c, r, rl_i, cd_i in zip(image_ids, candidates, references, rl_each, cd_each)
    ]
    return EvalReport(bleu, rl, cd, per_image)
