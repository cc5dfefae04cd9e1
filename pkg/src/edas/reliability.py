"""Agreement between annotators: Krippendorff's alpha and Fleiss' kappa at the
nominal level, and Spearman's rank correlation over inventory-coded labels."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .annotators import AnnotatorKind, CONTEXT_KINDS, POOL_ORDER
from .corpus import TagInventory
from .errors import DataError


class Agreement(NamedTuple):
    value: float
    degenerate: bool = False


def label_matrix(sequences: Sequence[Sequence[str]], inventory: TagInventory) -> np.ndarray:
    """Items x raters matrix of inventory indices from one label sequence per rater."""
    if len(sequences) < 2:
        raise DataError("need at least two raters")
    n = len(sequences[0])
    if any(len(s) != n for s in sequences):
        raise DataError("rater sequences must be aligned (equal length)")
    return np.array([[inventory.index(c) for c in seq] for seq in sequences], dtype=np.int64).T.reshape(n, len(sequences))


def _category_counts(matrix: np.ndarray) -> np.ndarray:
    """Items x categories count table (categories = distinct values present)."""
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 2:
        raise DataError("expected an items x raters matrix with >= 1 item and >= 2 raters")
    _, inverse = np.unique(m, return_inverse=True)
    inverse = inverse.reshape(m.shape)
    counts = np.zeros((m.shape[0], int(inverse.max()) + 1), dtype=np.float64)
    rows = np.repeat(np.arange(m.shape[0]), m.shape[1])
    np.add.at(counts, (rows, inverse.ravel()), 1.0)
    return counts


def coincidence_matrix(matrix: np.ndarray) -> np.ndarray:
    """Nominal coincidences o_ck: each item's ordered value pairs weighted 1/(m_u - 1)."""
    counts = _category_counts(matrix)
    m_u = counts.sum(axis=1)
    weighted = counts / (m_u - 1.0)[:, None]
    o = weighted.T @ counts
    o[np.diag_indices_from(o)] -= weighted.sum(axis=0)
    return o


def krippendorff_alpha(matrix: np.ndarray) -> Agreement:
    """alpha = 1 - D_o / D_e over the coincidence matrix.

    With a single value in the whole matrix D_e is zero; the result is then 1
    and flagged degenerate.
    """
    o = coincidence_matrix(matrix)
    n_c = o.sum(axis=1)
    n = n_c.sum()
    off = ~np.eye(len(o), dtype=bool)
    d_o = o[off].sum() / n
    d_e = (np.outer(n_c, n_c)[off].sum()) / (n * (n - 1.0))
    if d_e == 0.0:
        return Agreement(1.0, True)
    return Agreement(float(1.0 - d_o / d_e))


def fleiss_kappa(matrix: np.ndarray) -> Agreement:
    """kappa = (P - P_e) / (1 - P_e); degenerate (1.0, flagged) when P_e = 1."""
    counts = _category_counts(matrix)
    n_items, n = counts.shape[0], counts[0].sum()
    p_i = ((counts ** 2).sum(axis=1) - n) / (n * (n - 1.0))
    p_bar = p_i.mean()
    p_j = counts.sum(axis=0) / (n_items * n)
    p_e = float((p_j ** 2).sum())
    if p_e == 1.0:
        return Agreement(1.0, True)
    return Agreement(float((p_bar - p_e) / (1.0 - p_e)))


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(values, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(seq_a: Sequence, seq_b: Sequence, inventory: TagInventory | None = None) -> Agreement:
    """Pearson correlation of average ranks. String labels are coded by their
    canonical inventory index first, so the value depends on inventory order.
    Zero rank variance on either side gives ``(nan, True)``."""
    if len(seq_a) != len(seq_b) or len(seq_a) == 0:
        raise DataError("spearman needs two nonempty sequences of equal length")
    if inventory is not None:
        seq_a = [inventory.index(c) for c in seq_a]
        seq_b = [inventory.index(c) for c in seq_b]
    ra, rb = average_ranks(seq_a), average_ranks(seq_b)
    da, db = ra - ra.mean(), rb - rb.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return Agreement(float("nan"), True)
    return Agreement(float(np.clip(da @ db / denom, -1.0, 1.0)))


def pairwise_spearman(sequences: Mapping[AnnotatorKind, Sequence[str]], inventory: TagInventory,
                      kinds: Sequence[AnnotatorKind] | None = None) -> dict[tuple[AnnotatorKind, AnnotatorKind], Agreement]:
    kinds = kinds or [k for k in POOL_ORDER if k in CONTEXT_KINDS]
    return {(a, b): spearman(sequences[a], sequences[b], inventory) for a, b in itertools.combinations(kinds, 2)}


@dataclass(frozen=True)
class ReliabilityReport:
    alpha: Agreement
    kappa: Agreement
    spearman_context: Agreement

    def rows(self) -> list[tuple[str, Agreement]]:
        return [("alpha", self.alpha), ("kappa", self.kappa), ("scc", self.spearman_context)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value", "degenerate_flag"])
        for name, a in self.rows():
            w.writerow([name, repr(a.value), int(a.degenerate)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> ReliabilityReport:
        rows = list(csv.DictReader(io.StringIO(text)))
        values = {r["metric"]: Agreement(float(r["value"]), bool(int(r["degenerate_flag"]))) for r in rows}
        try:
            return cls(values["alpha"], values["kappa"], values["scc"])
        except KeyError as exc:
            raise DataError(f"reliability CSV lacks metric {exc}") from None


def reliability_report(sequences: Mapping[AnnotatorKind | str, Sequence[str]],
                       inventory: TagInventory) -> ReliabilityReport:
    """alpha and kappa over all five annotators, Spearman between Context1 and Context2."""
    seqs = {AnnotatorKind(k): v for k, v in sequences.items()}
    if set(seqs) != set(POOL_ORDER):
        raise DataError("reliability report needs one label sequence per annotator kind")
    matrix = label_matrix([seqs[k] for k in POOL_ORDER], inventory)
    return ReliabilityReport(
        alpha=krippendorff_alpha(matrix),
        kappa=fleiss_kappa(matrix),
        spearman_context=spearman(seqs[AnnotatorKind.CONTEXT_1], seqs[AnnotatorKind.CONTEXT_2], inventory),
    )
