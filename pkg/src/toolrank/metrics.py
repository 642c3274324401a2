"""Per-query retrieval metrics and subset-level aggregation.

All relevance is binary.  Recall is set recall ``|top-k & relevant| / |relevant|``;
for single-label tasks it coincides with the hit-rate reading ("did the
correct tool appear in the top k").
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .corpus import SUBSET_ORDER, Category, Task

METRICS = ("ndcg", "precision", "recall", "completeness")
SHORT = {"ndcg": "N", "precision": "P", "recall": "R", "completeness": "C", "success": "P"}
CSV_HEADER = ("subset", "metric", "k", "value", "n_tasks", "fallback_rate")
AVG = "Avg."


def _top(ranking: Sequence[str], k: int) -> Sequence[str]:
    return ranking[:k]


def _hits(ranking: Sequence[str], relevant: Iterable[str], k: int) -> int:
    rel = relevant if isinstance(relevant, (set, frozenset)) else set(relevant)
    return sum(1 for t in _top(ranking, k) if t in rel)


def precision_at_k(ranking: Sequence[str], relevant: Iterable[str], k: int) -> float:
    """Hits in the top k divided by k, even when fewer than k items were ranked."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return _hits(ranking, relevant, k) / k


def recall_at_k(ranking: Sequence[str], relevant: Iterable[str], k: int) -> float:
    rel = set(relevant)
    if not rel:
        raise ValueError("relevant set must be non-empty")
    return _hits(ranking, rel, k) / len(rel)


def completeness_at_k(ranking: Sequence[str], relevant: Iterable[str], k: int) -> int:
    rel = set(relevant)
    if not rel:
        raise ValueError("relevant set must be non-empty")
    return int(rel.issubset(_top(ranking, k)))


def ndcg_at_k(ranking: Sequence[str], relevant: Iterable[str], k: int) -> float:
    rel = set(relevant)
    if not rel:
        raise ValueError("relevant set must be non-empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    dcg = math.fsum(1.0 / math.log2(i + 2) for i, t in enumerate(_top(ranking, k)) if t in rel)
    idcg = math.fsum(1.0 / math.log2(i + 2) for i in range(min(len(rel), k)))
    return dcg / idcg


def success_at_1(ranking: Sequence[str], relevant: Iterable[str]) -> int:
    if not ranking:
        return 0
    return int(ranking[0] in set(relevant))


@dataclass(frozen=True)
class QueryMetrics:
    task_id: str
    p_at: dict[int, float]
    r_at: dict[int, float]
    c_at: dict[int, int]
    ndcg_at: dict[int, float]
    success_at_1: int
    fallback: bool = False

    def value(self, metric: str, k: int) -> float:
        if metric == "success":
            return float(self.success_at_1)
        return float({"ndcg": self.ndcg_at, "precision": self.p_at, "recall": self.r_at, "completeness": self.c_at}[metric][k])


def score_query(task_id: str, ranking: Sequence[str], relevant: Iterable[str], cutoffs: Sequence[int], fallback: bool = False) -> QueryMetrics:
    rel = frozenset(relevant)
    return QueryMetrics(
        task_id=task_id,
        p_at={k: precision_at_k(ranking, rel, k) for k in cutoffs},
        r_at={k: recall_at_k(ranking, rel, k) for k in cutoffs},
        c_at={k: completeness_at_k(ranking, rel, k) for k in cutoffs},
        ndcg_at={k: ndcg_at_k(ranking, rel, k) for k in cutoffs},
        success_at_1=success_at_1(ranking, rel),
        fallback=fallback,
    )


@dataclass(frozen=True)
class SubsetSummary:
    """Means on a 0-100 scale keyed by ``(metric, k)``; empty when ``n_tasks == 0``."""

    means: dict[tuple[str, int], float]
    n_tasks: int
    fallback_rate: float | None
    n_excluded: int = 0

    def get(self, metric: str, k: int) -> float | None:
        return self.means.get((metric, k))


@dataclass(frozen=True)
class MetricReport:
    per_subset: dict[str, SubsetSummary]
    overall: SubsetSummary
    cutoffs: tuple[int, ...]
    weighting: str = "subset"

    def metric_values(self) -> dict:
        """Every metric mean, without counts or fallback rates."""
        out = {s: dict(v.means) for s, v in self.per_subset.items()}
        out[AVG] = dict(self.overall.means)
        return out


def _metric_keys(cutoffs: Sequence[int]) -> list[tuple[str, int]]:
    keys = [(m, k) for k in cutoffs for m in METRICS]
    keys.append(("success", 1))
    return keys


def aggregate(
    per_query: Iterable[QueryMetrics],
    tasks: Iterable[Task] | Mapping[str, Task],
    cutoffs: Sequence[int],
    excluded: Iterable[str] = (),
    weighting: str = "subset",
) -> MetricReport:
    """Average per-query metrics within each subset, then across subsets.

    With ``weighting="subset"`` the overall row is the unweighted mean of the
    non-empty subset means; ``"task"`` weights every task equally instead.
    Excluded task ids are counted per subset but contribute no values.
    """
    if weighting not in ("subset", "task"):
        raise ValueError(f"unknown weighting {weighting!r}")
    by_id = tasks if isinstance(tasks, Mapping) else {t.task_id: t for t in tasks}
    cutoffs = tuple(sorted(set(cutoffs)))
    keys = _metric_keys(cutoffs)

    groups: dict[str, list[QueryMetrics]] = {c.value: [] for c in SUBSET_ORDER}
    for q in per_query:
        groups[by_id[q.task_id].subset.value].append(q)
    n_excl = {c.value: 0 for c in SUBSET_ORDER}
    for tid in set(excluded):
        n_excl[by_id[tid].subset.value] += 1

    per_subset: dict[str, SubsetSummary] = {}
    for name, qs in groups.items():
        if not qs:
            per_subset[name] = SubsetSummary({}, 0, None, n_excl[name])
            continue
        means = {key: 100.0 * math.fsum(q.value(*key) for q in qs) / len(qs) for key in keys}
        fb = math.fsum(1.0 for q in qs if q.fallback) / len(qs)
        per_subset[name] = SubsetSummary(means, len(qs), fb, n_excl[name])

    filled = [s for s in per_subset.values() if s.n_tasks]
    total = sum(s.n_tasks for s in filled)
    if not filled:
        overall = SubsetSummary({}, 0, None, sum(n_excl.values()))
    elif weighting == "subset":
        overall = SubsetSummary(
            {key: math.fsum(s.means[key] for s in filled) / len(filled) for key in keys},
            total,
            math.fsum(s.fallback_rate for s in filled) / len(filled),
            sum(n_excl.values()),
        )
    else:
        overall = SubsetSummary(
            {key: math.fsum(s.means[key] * s.n_tasks for s in filled) / total for key in keys},
            total,
            math.fsum(s.fallback_rate * s.n_tasks for s in filled) / total,
            sum(n_excl.values()),
        )
    return MetricReport(per_subset=per_subset, overall=overall, cutoffs=cutoffs, weighting=weighting)


def _label(metric: str, k: int) -> str:
    return f"{SHORT[metric]}@{k}"


def _columns(subset_names: Sequence[str], k: int) -> list[tuple[str, str, int]]:
    cols = [(s, m, k) for s in subset_names for m in METRICS]
    cols += [(AVG, "ndcg", k), (AVG, "completeness", k)]
    return cols


def _table_subsets(reports: Sequence[MetricReport]) -> list[str]:
    names = [Category.WEB.value, Category.CODE.value, Category.CUSTOM.value]
    if any(r.per_subset.get(Category.OTHER.value) and r.per_subset[Category.OTHER.value].n_tasks for r in reports):
        names.append(Category.OTHER.value)
    return names


def render_table(rows: Sequence[tuple[str, MetricReport]], k: int | None = None) -> str:
    """Fixed-width table, one row per labelled report, grouped by subset at cutoff ``k``."""
    reports = [r for _, r in rows]
    if k is None:
        k = max((max(r.cutoffs) for r in reports if r.cutoffs), default=10)
    subsets = _table_subsets(reports)
    cols = _columns(subsets, k)
    label_w = max([len("Run")] + [len(label) for label, _ in rows])
    group_line = " " * label_w
    for s in subsets:
        group_line += " | " + s.center(4 * 7 - 1)
    group_line += " | " + AVG.center(2 * 7 - 1)
    head = "Run".ljust(label_w)
    prev = None
    for s, m, kk in cols:
        head += (" | " if s != prev else " ") + _label(m, kk).rjust(6)
        prev = s
    lines = [group_line.rstrip(), head, "-" * len(head)]
    for label, rep in rows:
        if rep.overall.n_tasks == 0:
            continue
        line = label.ljust(label_w)
        prev = None
        for s, m, kk in cols:
            summ = rep.overall if s == AVG else rep.per_subset.get(s)
            v = summ.get(m, kk) if summ is not None else None
            cell = f"{v:.2f}" if v is not None else "-"
            line += (" | " if s != prev else " ") + cell.rjust(6)
            prev = s
        lines.append(line)
    return "\n".join(lines) + "\n"


def csv_rows(report: MetricReport) -> list[tuple]:
    keys = _metric_keys(report.cutoffs)
    rows = []
    items = [(s.value, report.per_subset.get(s.value)) for s in SUBSET_ORDER] + [(AVG, report.overall)]
    for name, summ in items:
        if summ is None or summ.n_tasks == 0:
            continue
        fb = f"{summ.fallback_rate:.2f}" if summ.fallback_rate is not None else ""
        for metric, k in keys:
            rows.append((name, metric, k, f"{summ.means[(metric, k)]:.2f}", summ.n_tasks, fb))
    return rows


def render(report: MetricReport, format: str = "table", label: str = "run") -> str:
    if format == "table":
        return render_table([(label, report)])
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(csv_rows(report))
        return buf.getvalue()
    raise ValueError(f"unknown format {format!r}")


def parse_csv(text: str) -> dict[tuple[str, str, int], float]:
    """Inverse of the csv rendering, keyed by ``(subset, metric, k)``."""
    reader = csv.DictReader(io.StringIO(text))
    return {(r["subset"], r["metric"], int(r["k"])): float(r["value"]) for r in reader}
