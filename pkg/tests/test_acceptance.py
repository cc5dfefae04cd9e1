"""End-to-end acceptance criteria.

Each test prints a single ``[ACCEPTANCE n] PASS|FAIL`` line with its
measurements, whether or not output capture is on.
"""

import io
import itertools
import time

import numpy as np
import pytest

from conftest import GOLDEN_EPOCHS
from edas.analysis import (
    cooccurrence,
    da_distribution,
    emit,
    parse_cooccurrence_csv,
    parse_distribution_csv,
)
from edas.annotators import (
    POOL_ORDER,
    build_model,
    evaluate,
    gradient_check,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from edas.cli import main
from edas.corpus import SynthConfig, generate_synthetic, parse_corpus, serialize_corpus
from edas.encoder import PseudoEmbeddings, attention, init_attention, softmax
from edas.ensemble import (
    DecisionCategory,
    Vote,
    annotate_corpus,
    ensemble_accuracy,
    fuse,
    parse_annotated,
    serialize_annotated,
)
from edas.reliability import ReliabilityReport, fleiss_kappa, krippendorff_alpha, reliability_report
from oracles import reference_fuse

U1, U2, C1, C2, C3 = POOL_ORDER


@pytest.fixture
def report(capsys):
    def emit_line(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[ACCEPTANCE {n}] {'PASS' if ok else 'FAIL'} {detail}")
    return emit_line


def votes(labels, confidences):
    return {k: Vote(lab, c) for k, lab, c in zip(POOL_ORDER, labels, confidences)}


def test_1_fusion_oracle_equivalence(report):
    start = time.perf_counter()
    total = agree = 0
    categories = {c: 0 for c in DecisionCategory}
    for labels in itertools.product("abc", repeat=5):
        for perm in itertools.permutations((0.1, 0.3, 0.5, 0.7, 0.9)):
            d = fuse(votes(labels, perm))
            categories[d.category] += 1
            agree += (d.label, d.category.value) == reference_fuse(labels, perm)
            total += 1
    elapsed = time.perf_counter() - start
    ok = total == 3 ** 5 * 120 and agree == total and sum(categories.values()) == total and elapsed < 10.0
    report(1, ok, f"{agree}/{total} cases match, {dict((c.value, n) for c, n in categories.items())}, {elapsed:.2f}s")
    assert ok


def test_2_worked_fusion_cases(report):
    cases = [
        (("ba", "sd", "fc", "fc", "fc"), (0.5, 0.5, 0.5, 0.5, 0.5), ("fc", "CM")),
        (("sd", "fa", "^q", "sd", "sd"), (0.5, 0.5, 0.5, 0.5, 0.5), ("sd", "CM")),
        (("b", "b", "ba", "fc", "b"), (0.3, 0.2, 0.9, 0.8, 0.7), ("xx", "NM")),
    ]
    got = [(d.label, d.category.value) for d in (fuse(votes(l, c)) for l, c, _ in cases)]
    want = [w for _, _, w in cases]
    ok = got == want
    report(2, ok, f"fused {got}")
    assert ok


def test_3_gradient_checks(report):
    start = time.perf_counter()
    corpus = generate_synthetic(SynthConfig(n_classes=3, n_dialogues=2, min_turns=4, max_turns=4,
                                            context_rule=True, seed=0))
    rng = np.random.default_rng(0)
    errors = {}
    for kind in POOL_ORDER:
        m = build_model(kind, corpus.inventory, PseudoEmbeddings(8, 0), hidden=4, seed=0)
        for name in m.params:
            m.params[name] = rng.uniform(-0.5, 0.5, m.params[name].shape)
        d = corpus.dialogues[0]
        errors[kind.value] = max(gradient_check(m, d, i).max_error for i in range(len(d)))
    elapsed = time.perf_counter() - start
    ok = all(e < 1e-4 for e in errors.values()) and elapsed < 30.0
    report(3, ok, " ".join(f"{k}={e:.2e}" for k, e in errors.items()) + f" {elapsed:.1f}s")
    assert ok


def test_4_context_models_and_ensemble_on_held_out(context_pool, report):
    pool = context_pool
    start = time.perf_counter()
    acc = {k: evaluate(pool.models[k], pool.test) for k in POOL_ORDER}
    annotated, _ = annotate_corpus(pool.models, pool.test)
    ens = ensemble_accuracy(annotated).accuracy
    elapsed = pool.train_seconds + time.perf_counter() - start
    best = max(acc.values())
    ok = (len(pool.corpus) <= 2000 and GOLDEN_EPOCHS <= 50
          and acc[C1] >= acc[U1] and acc[C2] >= acc[U2] and ens >= best - 0.02 and elapsed < 300.0)
    detail = " ".join(f"{k.value}={v:.3f}" for k, v in acc.items())
    report(4, ok, f"{detail} Ensemble={ens:.3f} (utterances={len(pool.corpus)}, test={len(pool.test)}) {elapsed:.1f}s")
    assert ok


def test_5_separable_training_accuracy(separable_pool, report):
    pool = separable_pool
    start = time.perf_counter()
    acc = {k: evaluate(pool.models[k], pool.train) for k in POOL_ORDER}
    elapsed = pool.train_seconds + time.perf_counter() - start
    ok = all(v >= 0.90 for v in acc.values()) and elapsed < 180.0
    report(5, ok, " ".join(f"{k.value}={v:.3f}" for k, v in acc.items()) + f" {elapsed:.1f}s")
    assert ok


def test_6_metric_golden_values(report):
    perfect = np.array([[0, 0, 0, 0, 0], [2, 2, 2, 2, 2], [1, 1, 1, 1, 1]])
    checks = {
        "alpha_perfect": krippendorff_alpha(perfect).value == 1.0,
        "kappa_perfect": fleiss_kappa(perfect).value == 1.0,
        "alpha_2x2": abs(krippendorff_alpha(np.array([[0, 1], [1, 0]])).value - (-0.5)) <= 1e-12,
        "kappa_hand": abs(fleiss_kappa(np.array([[0, 0], [0, 1]])).value - (-1.0 / 3.0)) <= 1e-12,
    }
    rand = []
    for seed in range(5):
        m = np.random.default_rng(seed).integers(0, 4, (200, 5))
        rand.append((krippendorff_alpha(m).value, fleiss_kappa(m).value))
    checks["random_near_zero"] = all(abs(a) <= 0.05 and abs(k) <= 0.05 for a, k in rand)
    ok = all(checks.values())
    worst = max(max(abs(a), abs(k)) for a, k in rand)
    report(6, ok, f"{checks} max|random|={worst:.4f}")
    assert ok


def _pipeline(root):
    corpus = root / "corpus.jsonl"
    steps = [
        ["synth", "--out", str(corpus), "--dialogues", "12", "--context-rule", "--seed", "7"],
        ["train", "--corpus", str(corpus), "--out", str(root / "ckpt"), "--seed", "7",
         "--epochs", "4", "--hidden", "6", "--dim", "8"],
        ["annotate", "--checkpoints", str(root / "ckpt"), "--corpus", str(corpus), "--out", str(root / "ann")],
        ["analyze", "--annotated", str(root / "ann" / "annotated.jsonl"), "--out", str(root / "an")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    files = [f"ckpt/{k.value}.ckpt" for k in POOL_ORDER] + [
        "corpus.jsonl", "ann/annotated.jsonl", "ann/stats.csv", "an/chart.svg",
        "an/cooccurrence.csv", "an/distribution.csv"]
    return {f: (root / f).read_bytes() for f in files}


def test_7_determinism(tmp_path, report, capsys):
    start = time.perf_counter()
    a = _pipeline(tmp_path / "run1")
    b = _pipeline(tmp_path / "run2")
    capsys.readouterr()
    same = [f for f in a if a[f] == b[f]]
    ok = len(same) == len(a)
    report(7, ok, f"{len(same)}/{len(a)} artifacts byte-identical {time.perf_counter() - start:.1f}s")
    assert ok


def test_8_normalization_invariants(context_pool, report):
    rng = np.random.default_rng(8)
    worst = 0.0
    for trial in range(10_000):
        n = int(rng.integers(1, 40))
        scale = 10.0 ** rng.uniform(-3, 3)
        if trial % 2 == 0:
            p = softmax(rng.normal(0.0, scale, n))
        else:
            hidden = int(rng.integers(1, 9))
            params = init_attention(rng, hidden)
            for key in params:
                params[key] = params[key] * scale
            _, p = attention(params, rng.normal(0.0, 1.0, (n, hidden)))
        assert np.all(p >= 0.0)
        worst = max(worst, abs(float(p.sum()) - 1.0))
    annotated, stats = annotate_corpus(context_pool.models, context_pool.corpus)
    m = cooccurrence(annotated)
    norm = m.normalized
    rows_ok = all(abs(norm[i].sum() - 1.0) <= 1e-9 if t else not norm[i].any()
                  for i, t in enumerate(m.row_totals))
    pct_sum = sum(stats.percentages.values())
    ok = worst <= 1e-9 and rows_ok and abs(pct_sum - 100.0) <= 0.01
    report(8, ok, f"max|sum-1|={worst:.2e} over 10000 trials, rows_stochastic={rows_ok}, stats_sum={pct_sum:.6f}")
    assert ok


def test_9_round_trips(context_pool, tmp_path, report):
    corpus = context_pool.corpus
    blob = serialize_corpus(corpus)
    back = parse_corpus(io.BytesIO(blob), corpus.schemes, corpus.inventory)
    corpus_ok = back == corpus and serialize_corpus(back) == blob

    rng = np.random.default_rng(9)
    samples = list(corpus.samples())
    picks = [samples[i] for i in rng.choice(len(samples), 100, replace=False)]
    ckpt_ok = True
    for kind in POOL_ORDER:
        path = tmp_path / f"{kind.value}.ckpt"
        save_checkpoint(context_pool.models[kind], path)
        loaded = load_checkpoint(path, kind)
        ckpt_ok &= all(np.array_equal(predict(context_pool.models[kind], d, i).distribution,
                                      predict(loaded, d, i).distribution) for d, i in picks)

    annotated, _ = annotate_corpus(context_pool.models, context_pool.test)
    ann_blob = serialize_annotated(annotated)
    ann_ok = parse_annotated(io.BytesIO(ann_blob), corpus.inventory, corpus.schemes) == annotated
    m, dist = cooccurrence(annotated), da_distribution(annotated)
    csv_ok = parse_cooccurrence_csv(emit(m)) == m and parse_distribution_csv(emit(dist)) == dist
    rel = reliability_report(annotated.label_sequences(), corpus.inventory)
    csv_ok &= ReliabilityReport.from_csv(rel.to_csv()) == rel

    ok = corpus_ok and ckpt_ok and ann_ok and csv_ok
    report(9, ok, f"corpus={corpus_ok} checkpoints(100 utterances x 5)={ckpt_ok} annotated={ann_ok} csv={csv_ok}")
    assert ok
