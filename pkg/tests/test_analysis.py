import csv
import io
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edas.analysis import (
    PAD_MARKER,
    CooccurrenceMatrix,
    DADistribution,
    cases_csv,
    cooccurrence,
    da_distribution,
    emit,
    extract_cases,
    parse_cooccurrence_csv,
    parse_distribution_csv,
)
from edas.annotators import POOL_ORDER
from edas.corpus import EMOTION_SCHEMES, SENTIMENTS, Schemes, SynthConfig, Utterance, generate_synthetic
from edas.ensemble import AnnotatedCorpus, AnnotatedUtterance, DecisionCategory, Vote, fuse, make_bundle
from edas.errors import DataError, SchemeError

SVG_NS = "{http://www.w3.org/2000/svg}"


def annotate(utterances, label_sets, inventory, schemes):
    items = []
    for u, labels in zip(utterances, label_sets):
        votes = make_bundle({k: Vote(lab, 0.5) for k, lab in zip(POOL_ORDER, labels)})
        items.append(AnnotatedUtterance(u, votes, fuse(votes)))
    return AnnotatedCorpus(tuple(items), inventory, schemes)


def unanimous(utterances, labels, inventory, schemes=Schemes("meld", True)):
    return annotate(utterances, [[lab] * 5 for lab in labels], inventory, schemes)


@pytest.fixture(scope="module")
def synthetic():
    """A synthetic corpus annotated with noisy votes (mixed categories)."""
    corpus = generate_synthetic(SynthConfig(n_classes=5, n_dialogues=15, context_rule=True, seed=4))
    codes = list(corpus.inventory.trainable)
    rng = np.random.default_rng(3)
    label_sets = [[u.gold_da if rng.random() < 0.6 else codes[int(rng.integers(len(codes)))] for _ in POOL_ORDER]
                  for u in corpus.utterances()]
    return annotate(corpus.utterances(), label_sets, corpus.inventory, corpus.schemes)


# --- co-occurrence -------------------------------------------------------------------

def test_single_utterance(inventory):
    u = Utterance("d", 0, "A", "Fine.", "sd", "joy", "positive")
    m = cooccurrence(unanimous([u], ["sd"], inventory))
    assert m.rows == inventory.codes and m.columns == EMOTION_SCHEMES["meld"]
    i, j = m.rows.index("sd"), m.columns.index("joy")
    assert m.counts[i, j] == 1 and m.counts.sum() == 1
    assert m.normalized[i, j] == 1.0 and m.normalized.sum() == 1.0
    assert "sd" not in m.zero_rows and "qy" in m.zero_rows
    assert not np.isnan(m.normalized).any()


def test_sentiment_axis(inventory):
    us = [Utterance("d", i, "A", "x", "sd", "joy", s) for i, s in enumerate(["positive", "negative", "positive"])]
    m = cooccurrence(unanimous(us, ["sd"] * 3, inventory), "sentiment")
    assert m.columns == SENTIMENTS
    row = m.normalized[m.rows.index("sd")]
    assert row[m.columns.index("positive")] == pytest.approx(2 / 3)


def test_missing_axis_raises(inventory):
    u = Utterance("d", 0, "A", "x", "sd")
    with pytest.raises(SchemeError):
        cooccurrence(unanimous([u], ["sd"], inventory, Schemes()), "emotion")
    with pytest.raises(SchemeError):
        cooccurrence(unanimous([u], ["sd"], inventory, Schemes("iemocap")), "sentiment")
    with pytest.raises(DataError):
        cooccurrence(unanimous([u], ["sd"], inventory), "valence")


def test_conservation_and_row_stochastic(synthetic):
    m = cooccurrence(synthetic)
    labelled = sum(a.utterance.emotion is not None for a in synthetic.items)
    assert m.counts.sum() == labelled
    norm = m.normalized
    for i, total in enumerate(m.row_totals):
        if total:
            assert abs(norm[i].sum() - 1.0) <= 1e-9
        else:
            assert not norm[i].any()
    # xx row collects NM decisions
    n_nm = synthetic.stats().counts[DecisionCategory.NM]
    assert m.row_totals[m.rows.index("xx")] == n_nm


def test_cooccurrence_csv_round_trip(synthetic):
    m = cooccurrence(synthetic)
    data = emit(m)
    assert data.startswith(b"da,emotion,count,normalized\r\n")
    assert parse_cooccurrence_csv(data) == m
    records = list(csv.DictReader(io.StringIO(data.decode(), newline="")))
    assert len(records) == len(m.rows) * len(m.columns)
    norm = m.normalized
    for r in records:
        assert float(r["normalized"]) == norm[m.rows.index(r["da"]), m.columns.index(r["emotion"])]


def test_empty_matrix_csv_is_header_only():
    empty = CooccurrenceMatrix((), (), np.zeros((0, 0), dtype=np.int64))
    assert emit(empty) == b"da,emotion,count,normalized\r\n"
    assert parse_cooccurrence_csv(emit(empty)) == empty


# --- distribution ----------------------------------------------------------------------

def test_distribution_half_half(inventory):
    us = [Utterance("d", 0, "A", "x", "sd"), Utterance("d", 1, "B", "y", "qy")]
    d = da_distribution(unanimous(us, ["sd", "qy"], inventory))
    pct = dict(zip(d.codes, d.percentages))
    assert pct["sd"] == 50.0 and pct["qy"] == 50.0
    assert sum(pct.values()) == 100.0


def test_distribution_recovers_injected_proportions(inventory):
    plan = {"sd": 50, "b": 30, "qy": 15, "fc": 5}
    labels = [code for code, n in plan.items() for _ in range(n)]
    us = [Utterance("d", i, "A", "x", lab) for i, lab in enumerate(labels)]
    d = da_distribution(unanimous(us, labels, inventory))
    pct = dict(zip(d.codes, d.percentages))
    assert {c: pct[c] for c in plan} == {c: float(n) for c, n in plan.items()}
    assert sum(pct.values()) == 100.0


def test_distribution_includes_xx_and_sums_to_100(synthetic):
    d = da_distribution(synthetic)
    assert "xx" in d.codes
    assert d.total == len(synthetic)
    assert abs(sum(d.percentages) - 100.0) <= 0.01


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["sd", "b", "qy", "fc", "aa"]), min_size=1, max_size=60), st.randoms())
def test_distribution_order_invariant(labels, rnd):
    from edas.corpus import default_inventory
    inventory = default_inventory()
    us = [Utterance(f"d{i}", 0, "A", "x", lab) for i, lab in enumerate(labels)]
    d = da_distribution(unanimous(us, labels, inventory))
    pairs = list(zip(us, labels))
    rnd.shuffle(pairs)
    e = da_distribution(unanimous([p[0] for p in pairs], [p[1] for p in pairs], inventory))
    assert d == e
    assert abs(sum(d.percentages) - 100.0) <= 0.01


def test_distribution_errors_and_round_trip(synthetic, inventory):
    with pytest.raises(DataError):
        da_distribution(AnnotatedCorpus((), inventory, Schemes()))
    d = da_distribution(synthetic)
    data = emit(d)
    assert data.startswith(b"da,count,percent\r\n")
    assert parse_distribution_csv(data) == d


# --- cases -------------------------------------------------------------------------------

def test_cases_filters(synthetic):
    for spec, pred in [
        ("AM", lambda r: r.category == "AM"),
        ("NM", lambda r: r.category == "NM" and r.eda == "xx"),
        ("disagree", lambda r: r.category != "AM"),
        ("label=xx", lambda r: r.eda == "xx"),
    ]:
        rows = extract_cases(synthetic, spec)
        assert rows and all(pred(r) for r in rows), spec
    first = synthetic.items[0].votes
    pattern = ",".join([first[POOL_ORDER[0]].label, "*", "*", "*", "*"])
    rows = extract_cases(synthetic, f"pattern={pattern}")
    assert rows and all(r.annotators[0] == first[POOL_ORDER[0]].label for r in rows)


def test_cases_nm_on_all_am_is_empty(inventory):
    us = [Utterance("d", i, "A", "x", "sd") for i in range(3)]
    assert extract_cases(unanimous(us, ["sd"] * 3, inventory), "NM") == []


def test_cases_previous_da(synthetic):
    rows = extract_cases(synthetic, "disagree") + extract_cases(synthetic, "AM")
    fused = {(a.utterance.dialogue_id, a.utterance.turn_index): a.decision.label for a in synthetic.items}
    assert any(r.turn_index == 0 for r in rows)
    for r in rows:
        if r.turn_index == 0:
            assert r.previous_da == PAD_MARKER
        else:
            assert r.previous_da == fused[(r.dialogue_id, r.turn_index - 1)]


def test_cases_bad_filters(synthetic):
    for spec in ("XM", "label=nope", "pattern=a,b", "regex=.*"):
        with pytest.raises(DataError):
            extract_cases(synthetic, spec)


def test_cases_csv(synthetic):
    rows = extract_cases(synthetic, "NM")
    data = cases_csv(rows)
    records = list(csv.DictReader(io.StringIO(data.decode(), newline="")))
    assert len(records) == len(rows)
    assert list(records[0])[-3:] == ["eda", "category", "previous_da"]
    assert [r["text"] for r in records] == [r.text for r in rows]
    assert emit(rows) == data


# --- SVG -----------------------------------------------------------------------------------

def bars(svg: bytes):
    root = ET.fromstring(svg)
    assert root.tag == SVG_NS + "svg"
    return root, [e for e in root.iter(SVG_NS + "rect") if e.get("class") == "bar"]


def test_cooccurrence_svg_well_formed(synthetic):
    m = cooccurrence(synthetic)
    root, rects = bars(emit(m, "svg"))
    groups = [r for r, t in zip(m.rows, m.row_totals) if t > 0]
    assert len(rects) == len(groups) * len(m.columns)
    _, top = bars(emit(m, "svg", top_k=2))
    assert len(top) == 2 * len(m.columns)


def test_distribution_svg_and_empty(synthetic):
    d = da_distribution(synthetic)
    _, rects = bars(emit(d, "svg"))
    assert len(rects) == sum(1 for c in d.counts if c)
    empty = CooccurrenceMatrix((), (), np.zeros((0, 0), dtype=np.int64))
    _, none = bars(emit(empty, "svg"))
    assert none == []


def test_emit_rejects_unknown():
    with pytest.raises(ValueError):
        emit(DADistribution(("sd",), (1,)), "png")
    with pytest.raises(TypeError):
        emit({"a": 1})
