"""Quantitative cross-checks over attribution maps.

Two studies: how close masking scores come to summing to the full-complex
score (additivity), and how strongly different methods agree per atom
(pairwise correlation, histogrammed across complexes).  Correlations on
constant score vectors are undefined and flagged rather than invented.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attribution import AtomScoreMap


@dataclass(frozen=True)
class AdditivityRecord:
    complex_id: str
    head: str
    mode: str  # masking mode the map came from
    score_sum: float
    total_score: float
    empty_score: float  # head output on an atom-free grid

    @property
    def total_minus_empty(self) -> float:
        return self.total_score - self.empty_score


@dataclass(frozen=True)
class CorrelationRecord:
    complex_id: str
    head: str
    method_a: str
    method_b: str
    pearson_r: float | None  # None when undefined (constant inputs)


def pearson(xs, ys) -> float | None:
    """Pearson correlation, or None when either side has zero variance."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("inputs must have the same length")
    if x.size < 2:
        return None
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt((xc * xc).sum()))
    sy = float(np.sqrt((yc * yc).sum()))
    if sx == 0.0 or sy == 0.0:
        return None
    r = float((xc * yc).sum() / (sx * sy))
    return max(-1.0, min(1.0, r))


def additivity(
    maps: list[AtomScoreMap],
    totals: list[float],
    empty_scores: list[float],
    complex_ids: list[str],
) -> tuple[list[AdditivityRecord], float | None]:
    """Per-complex score sums against full-complex scores, plus the overall
    correlation between the two across complexes."""
    if not (len(maps) == len(totals) == len(empty_scores) == len(complex_ids)):
        raise ValueError("maps, totals, empty_scores, complex_ids must align")
    records = [
        AdditivityRecord(
            complex_id=cid,
            head=m.head,
            mode=m.method,
            score_sum=float(m.scores.sum()),
            total_score=t,
            empty_score=e,
        )
        for m, t, e, cid in zip(maps, totals, empty_scores, complex_ids)
    ]
    r = pearson([rec.score_sum for rec in records], [rec.total_score for rec in records])
    return records, r


HISTOGRAM_BIN_WIDTH = 0.1


def correlation_histogram(rs: list[float]) -> list[tuple[float, float, int]]:
    """Fixed-width bins over [-1, 1], left edge inclusive, last bin closed."""
    nbins = int(round(2.0 / HISTOGRAM_BIN_WIDTH))
    edges = -1.0 + HISTOGRAM_BIN_WIDTH * np.arange(nbins + 1)
    counts = [0] * nbins
    for r in rs:
        # the epsilon keeps edge values (e.g. -0.9) in their left-inclusive bin
        idx = int(np.floor((r + 1.0) / HISTOGRAM_BIN_WIDTH + 1e-9))
        idx = min(max(idx, 0), nbins - 1)
        counts[idx] += 1
    return [(float(edges[i]), float(edges[i + 1]), counts[i]) for i in range(nbins)]


def method_correlation(
    per_complex: list[tuple[str, str, dict[str, AtomScoreMap]]],
) -> tuple[list[CorrelationRecord], list[tuple[float, float, int]]]:
    """Pairwise per-atom correlations for each complex.

    per_complex holds (complex_id, head, {method_name: map}) triples.  The
    correlation uses atoms present in both maps; gradient maps contribute
    their (unsigned) magnitudes, which is what their scores field stores.
    Undefined correlations are flagged with None and left out of the
    histogram.
    """
    records: list[CorrelationRecord] = []
    defined: list[float] = []
    for complex_id, head, by_method in per_complex:
        names = sorted(by_method)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                map_a, map_b = by_method[a], by_method[b]
                da, db = map_a.as_dict(), map_b.as_dict()
                shared = sorted(set(da) & set(db))
                r = pearson([da[k] for k in shared], [db[k] for k in shared]) if shared else None
                records.append(CorrelationRecord(complex_id, head, a, b, r))
                if r is not None:
                    defined.append(r)
    return records, correlation_histogram(defined)


def write_additivity_csv(
    path: str,
    records: list[AdditivityRecord],
    overall_r: float | None,
    comments: list[str] | None = None,
):
    lines = [f"# {c}\n" for c in (comments or [])]
    lines.append(f"# overall_pearson_r: {'undefined' if overall_r is None else f'{overall_r:.10f}'}\n")
    lines.append("complex_id,head,mode,score_sum,total_score,total_minus_empty\n")
    for rec in records:
        lines.append(
            f"{rec.complex_id},{rec.head},{rec.mode},"
            f"{rec.score_sum:.10f},{rec.total_score:.10f},{rec.total_minus_empty:.10f}\n"
        )
    with open(path, "w") as fh:
        fh.write("".join(lines))


def write_correlation_csv(
    path: str,
    records: list[CorrelationRecord],
    comments: list[str] | None = None,
):
    lines = [f"# {c}\n" for c in (comments or [])]
    lines.append("complex_id,head,method_a,method_b,pearson_r,defined\n")
    for rec in records:
        r = "" if rec.pearson_r is None else f"{rec.pearson_r:.10f}"
        lines.append(
            f"{rec.complex_id},{rec.head},{rec.method_a},{rec.method_b},{r},{int(rec.pearson_r is not None)}\n"
        )
    with open(path, "w") as fh:
        fh.write("".join(lines))


def write_histogram_csv(
    path: str,
    bins: list[tuple[float, float, int]],
    comments: list[str] | None = None,
):
    lines = [f"# {c}\n" for c in (comments or [])]
    lines.append("bin_left,bin_right,count\n")
    for left, right, count in bins:
        lines.append(f"{left:.1f},{right:.1f},{count}\n")
    with open(path, "w") as fh:
        fh.write("".join(lines))
