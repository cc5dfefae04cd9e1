"""Command-line entry point: ``edas <synth|train|annotate|metrics|analyze|gradcheck>``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import cooccurrence, da_distribution, emit, extract_cases
from .annotators import (
    POOL_ORDER,
    AnnotatorKind,
    TrainingConfig,
    build_model,
    gradient_check,
    load_checkpoint,
    predict_corpus,
    save_checkpoint,
    train,
)
from .corpus import (
    Corpus,
    Schemes,
    SynthConfig,
    default_inventory,
    dumps_record,
    generate_synthetic,
    header_path,
    load_inventory,
    read_corpus,
    read_header,
    write_corpus,
)
from .encoder import FileEmbeddings, PseudoEmbeddings
from .ensemble import accuracy_report, annotate_corpus, read_annotated, serialize_annotated
from .errors import DataError, NumericError
from .reliability import reliability_report, spearman

log = logging.getLogger("edas")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def derive_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


class Manifest:
    def __init__(self, command: str, args: argparse.Namespace):
        self.data = {
            "tool": "edas",
            "version": __version__,
            "command": command,
            "seed": getattr(args, "seed", None),
            "args": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
                     if k not in ("func",)},
            "outputs": [],
            "timings": {},
        }

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        yield
        self.data["timings"][name] = round(time.perf_counter() - t0, 6)

    def output(self, path: Path) -> Path:
        self.data["outputs"].append(str(path))
        return path

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.data, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# --- shared loaders -----------------------------------------------------------------------

def _schemes_arg(value: str | None) -> Schemes | None:
    if value is None:
        return None
    if value == "none":
        return Schemes()
    emotion, _, extra = value.partition("+")
    if extra not in ("", "sentiment"):
        raise UsageError(f"bad --scheme {value!r}; expected iemocap|meld|meld+sentiment|none")
    return Schemes(emotion or None, extra == "sentiment")


def _load_corpus(args) -> Corpus:
    inventory = load_inventory(args.inventory) if args.inventory else None
    return read_corpus(args.corpus, _schemes_arg(args.scheme), inventory)


def _provider(args):
    if getattr(args, "embeddings", None):
        return FileEmbeddings(args.embeddings)
    return PseudoEmbeddings(args.dim, derive_seed(args.seed, 99))


def _kinds(value: str) -> list[AnnotatorKind]:
    if value == "all":
        return list(POOL_ORDER)
    try:
        return [AnnotatorKind(value)]
    except ValueError:
        raise UsageError(f"unknown annotator kind {value!r}") from None


# --- synth ------------------------------------------------------------------------------------

def cmd_synth(args) -> int:
    fields = {}
    if args.config:
        try:
            fields = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.config}: not valid JSON ({exc})") from None
        if "fillers_per_utterance" in fields:
            fields["fillers_per_utterance"] = tuple(fields["fillers_per_utterance"])
    for flag, key in (("classes", "n_classes"), ("dialogues", "n_dialogues")):
        if getattr(args, flag) is not None:
            fields[key] = getattr(args, flag)
    if args.context_rule:
        fields["context_rule"] = True
    if args.emotion_scheme is not None:
        fields["emotion_scheme"] = None if args.emotion_scheme == "none" else args.emotion_scheme
    fields["seed"] = args.seed
    try:
        config = SynthConfig(**fields)
    except TypeError as exc:
        raise DataError(f"bad synth config: {exc}") from None
    manifest = Manifest("synth", args)
    manifest.data["config"] = asdict(config)
    base = load_inventory(args.inventory) if args.inventory else default_inventory()
    with manifest.stage("generate"):
        corpus = generate_synthetic(config, base)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus, manifest.output(out))
    manifest.output(header_path(out))
    manifest.write(out.with_suffix(".run.json"))
    print(f"wrote {len(corpus)} utterances in {len(corpus.dialogues)} dialogues to {out}")
    return EXIT_OK


# --- train ------------------------------------------------------------------------------------

def _train_one(job):
    kind, corpus, provider, hidden, init_seed, config, out_dir = job
    model = build_model(kind, corpus.inventory, provider, hidden=hidden, seed=init_seed,
                        learning_rate=config.learning_rate)
    trained, history = train(model, corpus, config)
    path = Path(out_dir) / f"{kind.value}.ckpt"
    save_checkpoint(trained, path)
    return kind, str(path), history


def _table1(models: dict, corpus: Corpus, count_xx_as_error: bool) -> list[tuple[str, float, float]]:
    golds = [u.gold_da for u in corpus.utterances()]
    rows = []
    for kind, model in models.items():
        labels = [p.label for p in predict_corpus(model, corpus)]
        acc = sum(a == b for a, b in zip(labels, golds)) / len(golds)
        rows.append((kind.value, acc, spearman(labels, golds, corpus.inventory).value))
    if len(models) == len(POOL_ORDER):
        annotated, _ = annotate_corpus(models, corpus)
        fused = [a.decision.label for a in annotated.items]
        acc = accuracy_report(annotated, count_xx_as_error)["Ensemble"]
        rows.append(("Ensemble", acc, spearman(fused, golds, corpus.inventory).value))
    return rows


def cmd_train(args) -> int:
    corpus = _load_corpus(args)
    if len(corpus) == 0 or any(u.gold_da is None for u in corpus.utterances()):
        raise DataError("training needs a nonempty corpus with a gold dialogue act on every utterance")
    kinds = _kinds(args.kind)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    provider = _provider(args)
    manifest = Manifest("train", args)
    jobs = []
    for kind in kinds:
        i = POOL_ORDER.index(kind)
        config = TrainingConfig(epochs=args.epochs, learning_rate=args.lr, seed=derive_seed(args.seed, i, 1))
        jobs.append((kind, corpus, provider, args.hidden, derive_seed(args.seed, i, 0), config, out_dir))
    with manifest.stage("train"):
        workers = min(len(jobs), args.workers or os.cpu_count() or 1)
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_train_one, jobs))
        else:
            results = [_train_one(j) for j in jobs]
    manifest.data["loss_history"] = {}
    for kind, path, history in results:
        manifest.output(Path(path))
        manifest.data["loss_history"][kind.value] = history
        log.info("%s final loss %.5f", kind.value, history[-1])

    eval_corpus = read_corpus(args.eval_corpus, corpus.schemes, corpus.inventory) if args.eval_corpus else corpus
    with manifest.stage("evaluate"):
        models = {kind: load_checkpoint(path, kind, provider) for kind, path, _ in results}
        rows = _table1(models, eval_corpus, args.count_xx_as_error)
    manifest.data["report"] = [{"model": m, "accuracy": a, "sc": s} for m, a, s in rows]
    print(f"{'Models':<12} {'Accuracy':>9} {'SC':>7}")
    for name, acc, sc in rows:
        print(f"{name:<12} {acc:>9.3f} {sc:>7.3f}")
    manifest.write(out_dir / "run.json")
    return EXIT_OK


# --- annotate -------------------------------------------------------------------------------

def cmd_annotate(args) -> int:
    corpus = _load_corpus(args)
    ckpt_dir = Path(args.checkpoints)
    models = {}
    for kind in POOL_ORDER:
        path = ckpt_dir / f"{kind.value}.ckpt"
        if not path.exists():
            raise DataError(f"missing checkpoint for {kind.value}: {path}")
        provider = FileEmbeddings(args.embeddings) if args.embeddings else None
        models[kind] = load_checkpoint(path, kind, provider)
    manifest = Manifest("annotate", args)
    with manifest.stage("annotate"):
        annotated, stats = annotate_corpus(models, corpus)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jsonl = manifest.output(out_dir / "annotated.jsonl")
    jsonl.write_bytes(serialize_annotated(annotated))
    header = {"emotion_scheme": corpus.schemes.emotion, "sentiment": corpus.schemes.sentiment,
              "inventory": corpus.inventory.to_json()}
    manifest.output(header_path(jsonl)).write_text(json.dumps(header, indent=1) + "\n", encoding="utf-8")
    manifest.output(out_dir / "stats.csv").write_text(stats.to_csv(), encoding="utf-8")
    pred_dir = out_dir / "predictions"
    pred_dir.mkdir(exist_ok=True)
    for kind in POOL_ORDER:
        lines = [dumps_record({"dialogue_id": a.utterance.dialogue_id, "turn_index": a.utterance.turn_index,
                               "label": a.votes[kind].label, "confidence": a.votes[kind].confidence})
                 for a in annotated.items]
        manifest.output(pred_dir / f"{kind.value}.jsonl").write_text(
            "".join(line + "\n" for line in lines), encoding="utf-8")
    pct = stats.percentages
    print("Stats   " + "  ".join(f"{c.value}={pct[c]:.2f}%" for c in pct))
    if len(corpus) and all(u.gold_da is not None for u in corpus.utterances()):
        report = accuracy_report(annotated, args.count_xx_as_error)
        manifest.data["accuracy"] = report
        print("Accuracy " + "  ".join(f"{k}={v:.3f}" for k, v in report.items()))
    manifest.write(out_dir / "run.json")
    return EXIT_OK


# --- metrics ----------------------------------------------------------------------------------

def _read_prediction_file(path: str) -> list[str]:
    labels = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                labels.append(json.loads(line)["label"])
            except (json.JSONDecodeError, KeyError, TypeError):
                raise DataError(f"{path}:{n}: expected a JSON object with a 'label' field") from None
    return labels


def cmd_metrics(args) -> int:
    if bool(args.annotated) == bool(args.predictions):
        raise UsageError("give exactly one of --annotated or --predictions")
    if args.annotated:
        schemes, inventory = read_header(args.annotated)
        if args.inventory:
            inventory = load_inventory(args.inventory)
        annotated = read_annotated(args.annotated, inventory or default_inventory(), schemes or Schemes())
        sequences = annotated.label_sequences()
        inventory = annotated.inventory
    else:
        if len(args.predictions) != len(POOL_ORDER):
            raise UsageError("--predictions takes five files, ordered " + ", ".join(k.value for k in POOL_ORDER))
        inventory = load_inventory(args.inventory) if args.inventory else default_inventory()
        sequences = {k: _read_prediction_file(p) for k, p in zip(POOL_ORDER, args.predictions)}
    manifest = Manifest("metrics", args)
    with manifest.stage("metrics"):
        report = reliability_report(sequences, inventory)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest.output(out).write_text(report.to_csv(), encoding="utf-8")
    manifest.write(out.with_suffix(".run.json"))
    print(f"{'Metrics':<8} {'alpha':>7} {'k':>7} {'SCC':>7}")
    print(f"{'':<8} {report.alpha.value:>7.3f} {report.kappa.value:>7.3f} {report.spearman_context.value:>7.3f}")
    return EXIT_OK


# --- analyze ----------------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    schemes, inventory = read_header(args.annotated)
    if args.inventory:
        inventory = load_inventory(args.inventory)
    schemes = _schemes_arg(args.scheme) or schemes or Schemes()
    annotated = read_annotated(args.annotated, inventory or default_inventory(), schemes)
    manifest = Manifest("analyze", args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with manifest.stage("analyze"):
        matrix = cooccurrence(annotated, args.axis)
        dist = da_distribution(annotated)
    manifest.output(out_dir / "cooccurrence.csv").write_bytes(emit(matrix, "csv"))
    manifest.output(out_dir / "distribution.csv").write_bytes(emit(dist, "csv"))
    manifest.output(out_dir / "chart.svg").write_bytes(emit(matrix, "svg", top_k=args.top_k))
    if args.cases:
        manifest.output(out_dir / "cases.csv").write_bytes(emit(extract_cases(annotated, args.cases), "csv"))
    manifest.write(out_dir / "run.json")
    print(f"wrote analytics for {len(annotated)} utterances to {out_dir}")
    return EXIT_OK


# --- gradcheck ------------------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    config = SynthConfig(n_classes=args.classes, n_dialogues=2, min_turns=4, max_turns=4,
                         context_rule=True, ambiguous_rate=0.5, seed=args.seed)
    corpus = generate_synthetic(config)
    dialogue = corpus.dialogues[0]
    index = len(dialogue) - 1
    provider = PseudoEmbeddings(args.dim, derive_seed(args.seed, 99))
    failed = False
    for kind in _kinds(args.kind):
        model = build_model(kind, corpus.inventory, provider, hidden=args.hidden,
                            seed=derive_seed(args.seed, POOL_ORDER.index(kind)))
        rng = np.random.default_rng(derive_seed(args.seed, POOL_ORDER.index(kind), 7))
        for name in model.params:
            model.params[name] = rng.uniform(-args.scale, args.scale, model.params[name].shape)
        report = gradient_check(model, dialogue, index, epsilon=args.epsilon)
        ok = report.passed(args.threshold)
        failed |= not ok
        print(f"{kind.value:<10} {'PASS' if ok else 'FAIL'} max_rel_err={report.max_error:.3e}")
        for name, err in report.errors.items():
            print(f"  {name:<14} {err:.3e}")
    return EXIT_NUMERIC if failed else EXIT_OK


# --- parser -------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="edas", description="Ensemble dialogue-act annotation toolkit")
    p.add_argument("--version", action="version", version=f"edas {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def corpus_flags(sp, required=True):
        sp.add_argument("--corpus", required=required, help="corpus JSONL")
        sp.add_argument("--inventory", help="tag inventory JSON (default: header or built-in 24+xx)")
        sp.add_argument("--scheme", help="iemocap | meld | meld+sentiment | none (default: header)")

    sp = sub.add_parser("synth", help="generate a synthetic corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", help="JSON object of SynthConfig fields")
    sp.add_argument("--classes", type=int)
    sp.add_argument("--dialogues", type=int)
    sp.add_argument("--context-rule", action="store_true")
    sp.add_argument("--emotion-scheme", choices=["meld", "iemocap", "none"])
    sp.add_argument("--inventory")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train annotators and write checkpoints")
    corpus_flags(sp)
    sp.add_argument("--kind", default="all", help="all or one of " + ", ".join(k.value for k in POOL_ORDER))
    sp.add_argument("--out", required=True, help="checkpoint directory")
    sp.add_argument("--epochs", type=int, default=50)
    sp.add_argument("--lr", type=float, default=0.1)
    sp.add_argument("--hidden", type=int, default=16)
    sp.add_argument("--dim", type=int, default=32)
    sp.add_argument("--embeddings", help="file-backed embeddings instead of pseudo-embeddings")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, help="parallel training processes (default: CPU count)")
    sp.add_argument("--eval-corpus", help="corpus for the accuracy report (default: training corpus)")
    sp.add_argument("--count-xx-as-error", action=argparse.BooleanOptionalAction, default=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("annotate", help="fuse the five annotators over a corpus")
    corpus_flags(sp)
    sp.add_argument("--checkpoints", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--embeddings")
    sp.add_argument("--count-xx-as-error", action=argparse.BooleanOptionalAction, default=True)
    sp.set_defaults(func=cmd_annotate)

    sp = sub.add_parser("metrics", help="inter-annotator reliability")
    sp.add_argument("--annotated")
    sp.add_argument("--predictions", nargs="+")
    sp.add_argument("--inventory")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("analyze", help="co-occurrence and distribution analytics")
    sp.add_argument("--annotated", required=True)
    sp.add_argument("--axis", choices=["emotion", "sentiment"], default="emotion")
    sp.add_argument("--out", required=True)
    sp.add_argument("--top-k", type=int)
    sp.add_argument("--cases", help="also write cases.csv for this filter (AM|CM|BM|NM|disagree|label=..|pattern=..)")
    sp.add_argument("--inventory")
    sp.add_argument("--scheme")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("gradcheck", help="compare backprop with central differences")
    sp.add_argument("--kind", default="all")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threshold", type=float, default=1e-4)
    sp.add_argument("--epsilon", type=float, default=1e-5)
    sp.add_argument("--hidden", type=int, default=4)
    sp.add_argument("--dim", type=int, default=8)
    sp.add_argument("--classes", type=int, default=3)
    sp.add_argument("--scale", type=float, default=0.5, help="half-width of the random parameter draw")
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("EDA_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"edas: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"edas: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"edas: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
