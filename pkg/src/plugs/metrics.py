"""Caption metrics and side-by-side rating arithmetic.

BLEU-4 is corpus-level and unsmoothed, with one reference per candidate.
CIDEr is the base (non "-D") variant.  Rating statistics follow the
three-rater majority rule: an item counts for a side only when at least two
of its three raters agree.
"""
from __future__ import annotations

import csv
import io
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


class RatingDataError(ValueError):
    pass


def _ngrams(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def bleu4(candidates: Sequence[str], references: Sequence[str]) -> float:
    if len(candidates) != len(references):
        raise MetricError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise MetricError("need at least one candidate/reference pair")
    matched = [0] * 4
    total = [0] * 4
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c, r = cand.split(), ref.split()
        c_len += len(c)
        r_len += len(r)
        for n in range(1, 5):
            cn, rn = _ngrams(c, n), _ngrams(r, n)
            matched[n - 1] += sum(min(k, rn[g]) for g, k in cn.items())
            total[n - 1] += max(len(c) - n + 1, 0)
    if c_len == 0 or min(matched) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, total)) / 4
    bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    return 100.0 * bp * math.exp(log_p)


def cider(candidates: Sequence[str], references: Sequence[Sequence[str]],
          corpus: Sequence[Sequence[str]] | None = None, n_max: int = 4) -> float:
    """Mean CIDEr over items; document frequencies come from ``corpus``.

    ``corpus`` defaults to ``references``.  Cosine similarity is taken as 0
    when either tf-idf vector is zero.
    """
    if len(candidates) != len(references):
        raise MetricError("candidates and references differ in length")
    corpus = references if corpus is None else corpus
    if not corpus:
        raise MetricError("empty corpus")
    if len({tuple(sorted(r)) for r in corpus}) < 2:
        raise MetricError("document frequencies need at least two distinct items")
    df: list[Counter] = [Counter() for _ in range(n_max)]
    for refs in corpus:
        for n in range(1, n_max + 1):
            seen = set()
            for r in refs:
                seen.update(_ngrams(r.split(), n))
            df[n - 1].update(seen)
    log_n = math.log(len(corpus))

    def vec(text, n):
        counts = _ngrams(text.split(), n)
        total = sum(counts.values()) or 1
        return {g: (k / total) * (log_n - math.log(max(1.0, df[n - 1][g]))) for g, k in counts.items()}

    def cos(a, b):
        na = math.sqrt(sum(v * v for v in a.values()))
        nb = math.sqrt(sum(v * v for v in b.values()))
        if na == 0 or nb == 0:
            return 0.0
        return sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)

    scores = []
    for cand, refs in zip(candidates, references):
        if not refs:
            raise MetricError("item without references")
        per_n = []
        for n in range(1, n_max + 1):
            vc = vec(cand, n)
            per_n.append(sum(cos(vc, vec(r, n)) for r in refs) / len(refs))
        scores.append(10.0 * sum(per_n) / n_max)
    return float(np.mean(scores))


# -- ratings -------------------------------------------------------------------

RATING_NAMES = {4: "Excellent", 3: "Good", 2: "Acceptable", 1: "Poor"}
ACCEPTABLE = 2


@dataclass(frozen=True)
class RatingRecord:
    item_id: str
    rater_id: str
    left_model: str       # which system was shown on the left: "A" or "B"
    sxs_choice: str       # "L", "S" or "R"
    abs_left: int
    abs_right: int

    def __post_init__(self):
        if self.left_model not in ("A", "B"):
            raise RatingDataError(f"item {self.item_id}: left_model must be A or B")
        if self.sxs_choice not in ("L", "S", "R"):
            raise RatingDataError(f"item {self.item_id}: sxs_choice must be L, S or R")
        for r in (self.abs_left, self.abs_right):
            if r not in RATING_NAMES:
                raise RatingDataError(f"item {self.item_id}: rating {r} outside 1..4")

    def outcome(self) -> str:
        """Derandomized preference: "A", "B" or "Same"."""
        if self.sxs_choice == "S":
            return "Same"
        left_won = self.sxs_choice == "L"
        if self.left_model == "A":
            return "A" if left_won else "B"
        return "B" if left_won else "A"

    def abs_of(self, side: str) -> int:
        return self.abs_left if (self.left_model == side) else self.abs_right


def read_ratings(path) -> list[RatingRecord]:
    return parse_ratings(Path(path).read_text(encoding="utf-8"))


def parse_ratings(text: str) -> list[RatingRecord]:
    """Parse the CSV rating format (header line first)."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return []
    out = []
    for row in rows[1:]:
        if not row:
            continue
        if len(row) != 6:
            raise RatingDataError(f"record {row[0] if row else '?'}: expected 6 fields")
        try:
            out.append(RatingRecord(row[0], row[1], row[2], row[3], int(row[4]), int(row[5])))
        except ValueError as e:
            if isinstance(e, RatingDataError):
                raise
            raise RatingDataError(f"record {row[0]}: {e}") from None
    return out


def write_ratings(path, records: Iterable[RatingRecord]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["item_id", "rater_id", "left_model", "sxs_choice", "abs_left", "abs_right"])
    for r in records:
        w.writerow([r.item_id, r.rater_id, r.left_model, r.sxs_choice, r.abs_left, r.abs_right])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def group_items(records: Iterable[RatingRecord]) -> dict[str, list[RatingRecord]]:
    items: dict[str, list[RatingRecord]] = defaultdict(list)
    for r in records:
        items[r.item_id].append(r)
    bad = sorted(i for i, rs in items.items() if len(rs) != 3)
    if bad:
        raise RatingDataError(f"items without exactly 3 raters: {', '.join(bad)}")
    if not items:
        raise RatingDataError("no ratings")
    return dict(items)


def _majority(values) -> object:
    value, count = Counter(values).most_common(1)[0]
    return value if count >= 2 else None


@dataclass(frozen=True)
class SxsReport:
    wins: float
    losses: float
    gain_sxs: float
    a_ok: float
    b_ok: float
    gain_ok: float
    n_items: int
    sxs_agreement: float
    abs_sxs_consistency: float
    abs_agreement: float


def _pct(k: int, n: int) -> float:
    return 100.0 * k / n


def ok_rate(records: Iterable[RatingRecord], side: str) -> float:
    """Percent of items where at least two raters rate ``side`` Acceptable or better."""
    items = group_items(records)
    ok = sum(sum(r.abs_of(side) >= ACCEPTABLE for r in rs) >= 2 for rs in items.values())
    return _pct(ok, len(items))


def agreement(records: Iterable[RatingRecord]) -> tuple[float, float, float]:
    """(items with a 2-of-3 side-by-side majority,
        items whose absolute-rating outcome equals the side-by-side outcome,
        absolute rating triples with a 2-of-3 majority), all in percent."""
    items = group_items(records)
    sxs_major = abs_match = 0
    abs_major = 0
    for rs in items.values():
        sxs = _majority(r.outcome() for r in rs)
        sxs_major += sxs is not None

        def from_abs(r):
            d = r.abs_of("B") - r.abs_of("A")
            return "B" if d > 0 else "A" if d < 0 else "Same"

        abs_match += _majority(from_abs(r) for r in rs) == sxs
        for side in ("A", "B"):
            abs_major += _majority(r.abs_of(side) for r in rs) is not None
    n = len(items)
    return _pct(sxs_major, n), _pct(abs_match, n), _pct(abs_major, 2 * n)


def aggregate_sxs(records: Iterable[RatingRecord]) -> SxsReport:
    """Wins/Losses of B over A and the OK-rates of both sides."""
    records = list(records)
    items = group_items(records)
    wins = losses = 0
    for rs in items.values():
        m = _majority(r.outcome() for r in rs)
        wins += m == "B"
        losses += m == "A"
    n = len(items)
    w, l = _pct(wins, n), _pct(losses, n)
    a_ok, b_ok = ok_rate(records, "A"), ok_rate(records, "B")
    agree = agreement(records)
    return SxsReport(w, l, w - l, a_ok, b_ok, b_ok - a_ok, n, *agree)


def median_ratings(records: Iterable[RatingRecord], side: str) -> dict[str, float]:
    return {i: float(np.median([r.abs_of(side) for r in rs])) for i, rs in group_items(records).items()}


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError("spearman needs two equal-length vectors")
    if len(x) < 3:
        raise MetricError("spearman needs at least 3 observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise MetricError("correlation undefined for a constant vector")
    rx, ry = rankdata(x) - (len(x) + 1) / 2, rankdata(y) - (len(y) + 1) / 2
    return float(np.dot(rx, ry) / math.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))


def craft_ratings(n_items: int, wins: int, losses: int, a_ok: int, b_ok: int,
                  seed: int = 0) -> list[RatingRecord]:
    """A complete rating file with exactly the requested majority counts.

    Items ``[0, wins)`` get a B majority, the next ``losses`` an A majority,
    the rest a Same majority; OK counts are assigned the same way.  Left/right
    placement is randomized per rater, so the file exercises derandomization.
    """
    if wins + losses > n_items or a_ok > n_items or b_ok > n_items:
        raise ValueError("requested counts exceed the number of items")
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_items):
        pref = "B" if k < wins else "A" if k < wins + losses else "Same"
        # two raters carry the majority, the third dissents
        votes = [pref, pref, {"B": "Same", "A": "Same", "Same": "B"}[pref]]
        a_good = k < a_ok
        b_good = (n_items - 1 - k) < b_ok
        for j, v in enumerate(votes):
            a_rating = (3 if a_good else 1) if j < 2 else (1 if a_good else 3)
            b_rating = (3 if b_good else 1) if j < 2 else (1 if b_good else 3)
            left = "A" if rng.random() < 0.5 else "B"
            if v == "Same":
                choice = "S"
            else:
                choice = "L" if v == left else "R"
            al, ar = (a_rating, b_rating) if left == "A" else (b_rating, a_rating)
            out.append(RatingRecord(f"item{k:05d}", f"r{j}", left, choice, al, ar))
    return out
