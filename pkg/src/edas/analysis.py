"""Dialogue-act analytics over an annotated corpus: DA x emotion co-occurrence,
per-DA distribution, case extraction, and CSV / SVG rendering."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .annotators import POOL_ORDER
from .corpus import SENTIMENTS
from .ensemble import AnnotatedCorpus, AnnotatedUtterance, DecisionCategory
from .errors import DataError, SchemeError

PAD_MARKER = "<pad>"
AXES = ("emotion", "sentiment")


@dataclass(frozen=True, eq=False)
class CooccurrenceMatrix:
    rows: tuple[str, ...]
    columns: tuple[str, ...]
    counts: np.ndarray

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def normalized(self) -> np.ndarray:
        """Row-stochastic where the row has counts; all-zero rows stay zero."""
        totals = self.row_totals.astype(np.float64)
        out = np.zeros(self.counts.shape, dtype=np.float64)
        nz = totals > 0
        out[nz] = self.counts[nz] / totals[nz, None]
        return out

    @property
    def zero_rows(self) -> tuple[str, ...]:
        return tuple(r for r, t in zip(self.rows, self.row_totals) if t == 0)

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, CooccurrenceMatrix) and self.rows == other.rows
                and self.columns == other.columns and np.array_equal(self.counts, other.counts))


@dataclass(frozen=True)
class DADistribution:
    codes: tuple[str, ...]
    counts: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def percentages(self) -> tuple[float, ...]:
        total = self.total
        return tuple(100.0 * c / total if total else 0.0 for c in self.counts)


@dataclass(frozen=True)
class CaseRow:
    dialogue_id: str
    turn_index: int
    text: str
    emotion: str | None
    sentiment: str | None
    annotators: tuple[str, ...]
    eda: str
    category: str
    previous_da: str


def _axis_value(item: AnnotatedUtterance, axis: str) -> str | None:
    return item.utterance.emotion if axis == "emotion" else item.utterance.sentiment


def cooccurrence(annotated: AnnotatedCorpus, axis: str = "emotion") -> CooccurrenceMatrix:
    if axis not in AXES:
        raise DataError(f"axis must be one of {AXES}")
    if axis == "emotion":
        if annotated.schemes.emotion is None:
            raise SchemeError("corpus declares no emotion scheme")
        columns = annotated.schemes.emotion_labels
    else:
        if not annotated.schemes.sentiment:
            raise SchemeError("corpus declares no sentiment labels")
        columns = SENTIMENTS
    rows = annotated.inventory.codes
    r_index = {c: i for i, c in enumerate(rows)}
    c_index = {c: i for i, c in enumerate(columns)}
    counts = np.zeros((len(rows), len(columns)), dtype=np.int64)
    for item in annotated.items:
        value = _axis_value(item, axis)
        if value is not None:
            counts[r_index[item.decision.label], c_index[value]] += 1
    return CooccurrenceMatrix(rows, tuple(columns), counts)


def da_distribution(annotated: AnnotatedCorpus) -> DADistribution:
    if len(annotated) == 0:
        raise DataError("cannot compute a distribution over an empty corpus")
    codes = annotated.inventory.codes
    tally = dict.fromkeys(codes, 0)
    for item in annotated.items:
        tally[item.decision.label] += 1
    return DADistribution(codes, tuple(tally[c] for c in codes))


def _case_filter(spec: str, annotated: AnnotatedCorpus):
    if spec in DecisionCategory.__members__:
        return lambda a: a.decision.category.value == spec
    if spec == "disagree":
        return lambda a: a.decision.category is not DecisionCategory.AM
    key, sep, arg = spec.partition("=")
    if sep and key == "label":
        if arg not in annotated.inventory:
            raise DataError(f"unknown dialogue-act tag {arg!r} in filter")
        return lambda a: a.decision.label == arg
    if sep and key == "pattern":
        pattern = arg.split(",")
        if len(pattern) != len(POOL_ORDER):
            raise DataError("pattern filter needs five comma-separated labels (use * as wildcard)")
        return lambda a: all(p in ("*", a.votes[k].label) for p, k in zip(pattern, POOL_ORDER))
    raise DataError(f"unknown case filter {spec!r}; expected AM|CM|BM|NM|disagree|label=<code>|pattern=<l1,...,l5>")


def extract_cases(annotated: AnnotatedCorpus, filter: str) -> list[CaseRow]:
    """Rows matching ``filter`` with the fused label of the previous turn."""
    keep = _case_filter(filter, annotated)
    by_turn = {(a.utterance.dialogue_id, a.utterance.turn_index): a for a in annotated.items}
    rows = []
    for a in annotated.items:
        if not keep(a):
            continue
        u = a.utterance
        prev = by_turn.get((u.dialogue_id, u.turn_index - 1))
        rows.append(CaseRow(
            u.dialogue_id, u.turn_index, u.text, u.emotion, u.sentiment,
            tuple(a.votes[k].label for k in POOL_ORDER), a.decision.label, a.decision.category.value,
            prev.decision.label if prev is not None else PAD_MARKER,
        ))
    return rows


# --- CSV ------------------------------------------------------------------------------------

def _csv(header: list[str], rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode("utf-8")


def cooccurrence_csv(m: CooccurrenceMatrix) -> bytes:
    norm = m.normalized
    return _csv(["da", "emotion", "count", "normalized"],
                ([r, c, int(m.counts[i, j]), repr(float(norm[i, j]))]
                 for i, r in enumerate(m.rows) for j, c in enumerate(m.columns)))


def distribution_csv(d: DADistribution) -> bytes:
    return _csv(["da", "count", "percent"],
                ([c, n, repr(p)] for c, n, p in zip(d.codes, d.counts, d.percentages)))


def cases_csv(rows: list[CaseRow]) -> bytes:
    header = ["dialogue_id", "turn_index", "text", "emotion", "sentiment",
              *[k.value for k in POOL_ORDER], "eda", "category", "previous_da"]
    return _csv(header, ([r.dialogue_id, r.turn_index, r.text, r.emotion or "", r.sentiment or "",
                          *r.annotators, r.eda, r.category, r.previous_da] for r in rows))


def parse_cooccurrence_csv(data: bytes | str) -> CooccurrenceMatrix:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    records = list(csv.DictReader(io.StringIO(text, newline="")))
    rows = tuple(dict.fromkeys(r["da"] for r in records))
    cols = tuple(dict.fromkeys(r["emotion"] for r in records))
    counts = np.zeros((len(rows), len(cols)), dtype=np.int64)
    ri = {c: i for i, c in enumerate(rows)}
    ci = {c: i for i, c in enumerate(cols)}
    for r in records:
        counts[ri[r["da"]], ci[r["emotion"]]] = int(r["count"])
    return CooccurrenceMatrix(rows, cols, counts)


def parse_distribution_csv(data: bytes | str) -> DADistribution:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    records = list(csv.DictReader(io.StringIO(text, newline="")))
    return DADistribution(tuple(r["da"] for r in records), tuple(int(r["count"]) for r in records))


# --- SVG ------------------------------------------------------------------------------------

SVG_LAYOUT = {
    "bar_width": 10,
    "group_gap": 18,
    "plot_height": 220,
    "margin_left": 50,
    "margin_top": 30,
    "margin_bottom": 50,
    "legend_width": 130,
    "legend_row": 16,
    "font_size": 11,
}
PALETTE = ("#d62728", "#8c564b", "#9467bd", "#2ca02c", "#7f7f7f", "#1f77b4",
           "#ff7f0e", "#e377c2", "#bcbd22", "#17becf")


def _bar_chart(title: str, groups: list[str], series: list[str], values: np.ndarray) -> bytes:
    """Grouped bars: one group per entry of ``groups``, one bar per series,
    ``values`` in [0, 1] with shape (groups, series)."""
    L = SVG_LAYOUT
    group_w = max(1, len(series)) * L["bar_width"] + L["group_gap"]
    plot_w = max(1, len(groups)) * group_w
    width = L["margin_left"] + plot_w + L["legend_width"]
    height = L["margin_top"] + L["plot_height"] + L["margin_bottom"]
    base_y = L["margin_top"] + L["plot_height"]
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="{L["font_size"]}">',
        f'<title>{escape(title)}</title>',
        f'<text x="{L["margin_left"]}" y="{L["margin_top"] - 12}">{escape(title)}</text>',
        f'<line x1="{L["margin_left"]}" y1="{base_y}" x2="{L["margin_left"] + plot_w}" y2="{base_y}" stroke="black"/>',
        f'<line x1="{L["margin_left"]}" y1="{L["margin_top"]}" x2="{L["margin_left"]}" y2="{base_y}" stroke="black"/>',
    ]
    for tick in (0.0, 0.5, 1.0):
        y = base_y - tick * L["plot_height"]
        out.append(f'<text x="{L["margin_left"] - 6}" y="{y + 4:.2f}" text-anchor="end">{tick:.1f}</text>')
    for gi, group in enumerate(groups):
        x0 = L["margin_left"] + gi * group_w + L["group_gap"] / 2
        out.append(f'<g class="group" data-da={quoteattr(group)}>')
        for si, name in enumerate(series):
            h = float(values[gi, si]) * L["plot_height"]
            out.append(f'<rect class="bar" x="{x0 + si * L["bar_width"]:.2f}" y="{base_y - h:.2f}" '
                       f'width="{L["bar_width"]}" height="{h:.2f}" fill="{PALETTE[si % len(PALETTE)]}">'
                       f'<title>{escape(f"{group} / {name}: {values[gi, si]:.4f}")}</title></rect>')
        label_x = x0 + len(series) * L["bar_width"] / 2
        out.append(f'<text x="{label_x:.2f}" y="{base_y + 16}" text-anchor="middle">{escape(group)}</text>')
        out.append('</g>')
    lx = L["margin_left"] + plot_w + 14
    for si, name in enumerate(series):
        y = L["margin_top"] + si * L["legend_row"]
        out.append(f'<rect x="{lx}" y="{y}" width="10" height="10" fill="{PALETTE[si % len(PALETTE)]}"/>')
        out.append(f'<text x="{lx + 14}" y="{y + 9}">{escape(name)}</text>')
    out.append('</svg>')
    return ("\n".join(out) + "\n").encode("utf-8")


def cooccurrence_svg(m: CooccurrenceMatrix, top_k: int | None = None, title: str = "DA co-occurrence") -> bytes:
    """Groups are DAs with counts, largest first, optionally cut to ``top_k``."""
    totals = m.row_totals
    order = sorted((i for i in range(len(m.rows)) if totals[i] > 0), key=lambda i: (-totals[i], i))
    if top_k is not None:
        order = order[:top_k]
    norm = m.normalized
    return _bar_chart(title, [m.rows[i] for i in order], list(m.columns),
                      norm[order] if order else np.zeros((0, len(m.columns))))


def distribution_svg(d: DADistribution, top_k: int | None = None, title: str = "DA distribution") -> bytes:
    order = sorted((i for i in range(len(d.codes)) if d.counts[i] > 0), key=lambda i: (-d.counts[i], i))
    if top_k is not None:
        order = order[:top_k]
    pct = d.percentages
    values = np.array([[pct[i] / 100.0] for i in order]).reshape(len(order), 1)
    return _bar_chart(title, [d.codes[i] for i in order], ["share"], values)


def emit(obj, format: str = "csv", top_k: int | None = None) -> bytes:
    if format not in ("csv", "svg"):
        raise ValueError(f"unknown format {format!r}")
    if isinstance(obj, CooccurrenceMatrix):
        return cooccurrence_csv(obj) if format == "csv" else cooccurrence_svg(obj, top_k)
    if isinstance(obj, DADistribution):
        return distribution_csv(obj) if format == "csv" else distribution_svg(obj, top_k)
    if isinstance(obj, list) and format == "csv":
        return cases_csv(obj)
    raise TypeError(f"cannot emit {type(obj).__name__} as {format}")
