"""The pool of five dialogue-act annotators: forward passes, hand-written
backpropagation, SGD training, evaluation, gradient checking and checkpoints.

Kinds and their input paths:

* ``UttLevel1``: words -> recurrent encoder -> attention -> softmax
* ``UttLevel2``: mean of word vectors -> affine -> softmax
* ``Context1``: each of the three window slots is encoded like ``UttLevel1``
  (shared weights); the three encodings go through a second recurrent layer,
  attention and softmax
* ``Context2``: mean word vector per slot -> recurrent layer -> final state -> softmax
* ``Context3``: per slot, the ``Context1`` encoding concatenated with the mean
  word vector -> recurrent layer -> attention -> softmax

Padding slots and token-less utterances encode to zero vectors.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import encoder as enc
from .corpus import Corpus, Dialogue, TagInventory, UNDETERMINED, context_window
from .errors import CheckpointError, DataError, InventoryMismatchError, NumericError

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "DANA1"
CONTEXT_WIDTH = 2


class AnnotatorKind(str, Enum):
    UTT_LEVEL_1 = "UttLevel1"
    UTT_LEVEL_2 = "UttLevel2"
    CONTEXT_1 = "Context1"
    CONTEXT_2 = "Context2"
    CONTEXT_3 = "Context3"

    @property
    def uses_context(self) -> bool:
        return self in CONTEXT_KINDS


# Column order used in reports and annotated output.
POOL_ORDER = (
    AnnotatorKind.UTT_LEVEL_1,
    AnnotatorKind.UTT_LEVEL_2,
    AnnotatorKind.CONTEXT_1,
    AnnotatorKind.CONTEXT_2,
    AnnotatorKind.CONTEXT_3,
)
CONTEXT_KINDS = frozenset({AnnotatorKind.CONTEXT_1, AnnotatorKind.CONTEXT_2, AnnotatorKind.CONTEXT_3})
NON_CONTEXT_KINDS = frozenset({AnnotatorKind.UTT_LEVEL_1, AnnotatorKind.UTT_LEVEL_2})


@dataclass
class AnnotatorModel:
    kind: AnnotatorKind
    params: dict[str, np.ndarray]
    inventory: TagInventory
    provider: enc.EmbeddingProvider
    hidden: int
    learning_rate: float = 0.1

    @property
    def codes(self) -> tuple[str, ...]:
        return self.inventory.trainable

    def block(self, prefix: str) -> enc.Params:
        """View of the tensors named ``prefix.*`` keyed by their short names."""
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.params.items() if k.startswith(prefix + ".")}


@dataclass(frozen=True, eq=False)
class Prediction:
    distribution: np.ndarray
    codes: tuple[str, ...]
    label: str = field(init=False)
    confidence: float = field(init=False)

    def __post_init__(self):
        i = int(np.argmax(self.distribution))
        object.__setattr__(self, "label", self.codes[i])
        object.__setattr__(self, "confidence", float(self.distribution[i]))


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 20
    learning_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be > 0")


@dataclass(frozen=True)
class GradientCheckReport:
    errors: dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, threshold: float = 1e-4) -> bool:
        return self.max_error < threshold


def build_model(kind: AnnotatorKind | str, inventory: TagInventory, provider: enc.EmbeddingProvider,
                hidden: int = 16, seed: int = 0, learning_rate: float = 0.1) -> AnnotatorModel:
    kind = AnnotatorKind(kind)
    rng = np.random.default_rng(seed)
    d, k = provider.dim, len(inventory.trainable)
    params: dict[str, np.ndarray] = {}

    def add(prefix: str, block: enc.Params) -> None:
        params.update({f"{prefix}.{name}": t for name, t in block.items()})

    if kind in (AnnotatorKind.UTT_LEVEL_1, AnnotatorKind.CONTEXT_1, AnnotatorKind.CONTEXT_3):
        add("word_rnn", enc.init_rnn(rng, d, hidden))
        add("word_att", enc.init_attention(rng, hidden))
    if kind is AnnotatorKind.CONTEXT_1:
        add("utt_rnn", enc.init_rnn(rng, hidden, hidden))
    elif kind is AnnotatorKind.CONTEXT_2:
        add("utt_rnn", enc.init_rnn(rng, d, hidden))
    elif kind is AnnotatorKind.CONTEXT_3:
        add("utt_rnn", enc.init_rnn(rng, hidden + d, hidden))
    if kind in (AnnotatorKind.CONTEXT_1, AnnotatorKind.CONTEXT_3):
        add("utt_att", enc.init_attention(rng, hidden))
    head_in = d if kind is AnnotatorKind.UTT_LEVEL_2 else hidden
    add("out", {"W": rng.uniform(-enc.INIT_SCALE, enc.INIT_SCALE, (k, head_in)),
                "b": rng.uniform(-enc.INIT_SCALE, enc.INIT_SCALE, k)})
    return AnnotatorModel(kind, params, inventory, provider, hidden, learning_rate)


# --- forward / backward ------------------------------------------------------------

def model_inputs(model: AnnotatorModel, dialogue: Dialogue, index: int) -> list[np.ndarray | None]:
    """Token-vector matrices the model consumes; ``None`` marks a padding slot."""
    if model.kind.uses_context:
        window = context_window(dialogue, index, CONTEXT_WIDTH)
    else:
        if not 0 <= index < len(dialogue):
            raise IndexError(f"utterance index {index} out of range for dialogue of length {len(dialogue)}")
        window = [dialogue[index]]
    return [None if u.is_padding else enc.embed_tokens(model.provider, u.tokens) for u in window]


def _encode_words(model, X):
    if X is None or len(X) == 0:
        return np.zeros(model.hidden), None
    H, rnn_cache = enc.rnn_forward(model.block("word_rnn"), X)
    ctx, _, att_cache = enc.attention_forward(model.block("word_att"), H)
    return ctx, (rnn_cache, att_cache)


def _encode_words_backward(model, cache, dctx, grads):
    if cache is None:
        return
    rnn_cache, att_cache = cache
    g_att, dH = enc.attention_backward(model.block("word_att"), att_cache, dctx)
    g_rnn, _ = enc.rnn_backward(model.block("word_rnn"), rnn_cache, dH)
    _accumulate(grads, "word_att", g_att)
    _accumulate(grads, "word_rnn", g_rnn)


def _mean(model, X):
    if X is None or len(X) == 0:
        return np.zeros(model.provider.dim)
    return enc.mean_pool(X)


def _accumulate(grads, prefix, block):
    for name, g in block.items():
        key = f"{prefix}.{name}"
        if key in grads:
            grads[key] += g
        else:
            grads[key] = g.copy()


def forward(model: AnnotatorModel, inputs: Sequence[np.ndarray | None]) -> tuple[np.ndarray, tuple]:
    kind = model.kind
    if kind is AnnotatorKind.UTT_LEVEL_1:
        feat, wc = _encode_words(model, inputs[-1])
        cache = (feat, wc)
    elif kind is AnnotatorKind.UTT_LEVEL_2:
        feat = _mean(model, inputs[-1])
        cache = (feat,)
    else:
        slot_caches = []
        rows = []
        for X in inputs:
            if kind is AnnotatorKind.CONTEXT_1:
                u, wc = _encode_words(model, X)
            elif kind is AnnotatorKind.CONTEXT_2:
                u, wc = _mean(model, X), None
            else:
                e, wc = _encode_words(model, X)
                u = np.concatenate([e, _mean(model, X)])
            rows.append(u)
            slot_caches.append(wc)
        Hu, rnn_cache = enc.rnn_forward(model.block("utt_rnn"), np.stack(rows))
        if kind is AnnotatorKind.CONTEXT_2:
            feat, att_cache = Hu[-1], None
        else:
            feat, _, att_cache = enc.attention_forward(model.block("utt_att"), Hu)
        cache = (feat, slot_caches, rnn_cache, att_cache)
    logits = model.params["out.W"] @ feat + model.params["out.b"]
    return logits, cache


def backward(model: AnnotatorModel, cache: tuple, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    kind = model.kind
    feat = cache[0]
    grads: dict[str, np.ndarray] = {"out.W": np.outer(dlogits, feat), "out.b": dlogits.copy()}
    dfeat = model.params["out.W"].T @ dlogits
    if kind is AnnotatorKind.UTT_LEVEL_1:
        _encode_words_backward(model, cache[1], dfeat, grads)
    elif kind in CONTEXT_KINDS:
        _, slot_caches, rnn_cache, att_cache = cache
        if kind is AnnotatorKind.CONTEXT_2:
            dHu = np.zeros_like(rnn_cache[1])
            dHu[-1] = dfeat
        else:
            g_att, dHu = enc.attention_backward(model.block("utt_att"), att_cache, dfeat)
            _accumulate(grads, "utt_att", g_att)
        g_rnn, drows = enc.rnn_backward(model.block("utt_rnn"), rnn_cache, dHu)
        _accumulate(grads, "utt_rnn", g_rnn)
        if kind is not AnnotatorKind.CONTEXT_2:
            for wc, drow in zip(slot_caches, drows):
                _encode_words_backward(model, wc, drow[: model.hidden], grads)
    # tensors untouched by this sample (e.g. word encoder with all-padding input)
    for name, t in model.params.items():
        if name not in grads:
            grads[name] = np.zeros_like(t)
    return grads


def loss_and_grads(model: AnnotatorModel, inputs, target: int) -> tuple[float, dict[str, np.ndarray]]:
    """Cross-entropy of the gold class index and its gradient for every tensor."""
    logits, cache = forward(model, inputs)
    logp = enc.log_softmax(logits)
    dlogits = np.exp(logp)
    dlogits[target] -= 1.0
    return float(-logp[target]), backward(model, cache, dlogits)


def loss(model: AnnotatorModel, inputs, target: int) -> float:
    logits, _ = forward(model, inputs)
    return float(-enc.log_softmax(logits)[target])


# --- inference ---------------------------------------------------------------------------

def _check_inventory(model: AnnotatorModel, corpus_inventory: TagInventory) -> None:
    if model.inventory.digest() != corpus_inventory.digest():
        raise InventoryMismatchError(
            f"{model.kind.value} was built for inventory {model.inventory.codes}, "
            f"corpus uses {corpus_inventory.codes}")


def predict(model: AnnotatorModel, dialogue: Dialogue, index: int) -> Prediction:
    logits, _ = forward(model, model_inputs(model, dialogue, index))
    return Prediction(enc.softmax(logits), model.codes)


def predict_corpus(model: AnnotatorModel, corpus: Corpus) -> list[Prediction]:
    _check_inventory(model, corpus.inventory)
    return [predict(model, d, i) for d, i in corpus.samples()]


def evaluate(model: AnnotatorModel, corpus: Corpus) -> float:
    """Exact-match accuracy of argmax labels against gold labels."""
    if len(corpus) == 0:
        raise DataError("cannot evaluate on an empty corpus")
    golds = [u.gold_da for u in corpus.utterances()]
    if any(g is None for g in golds):
        raise DataError("evaluation needs a gold label on every utterance")
    preds = predict_corpus(model, corpus)
    return sum(p.label == g for p, g in zip(preds, golds)) / len(golds)


# --- training ----------------------------------------------------------------------------

def _training_samples(model: AnnotatorModel, corpus: Corpus):
    target_of = {c: i for i, c in enumerate(model.codes)}
    samples = []
    for d, i in corpus.samples():
        gold = d[i].gold_da
        if gold is None:
            raise DataError(f"utterance {d.dialogue_id}/{i} has no gold dialogue act")
        if gold == UNDETERMINED:
            raise DataError(f"utterance {d.dialogue_id}/{i}: {UNDETERMINED!r} is not a training target")
        samples.append((model_inputs(model, d, i), target_of[gold]))
    return samples


def train(model: AnnotatorModel, corpus: Corpus, config: TrainingConfig) -> tuple[AnnotatorModel, list[float]]:
    """Per-utterance SGD on cross-entropy. Returns a new model and the mean loss per epoch."""
    _check_inventory(model, corpus.inventory)
    if len(corpus) == 0:
        raise DataError("cannot train on an empty corpus")
    samples = _training_samples(model, corpus)
    trained = copy.deepcopy(model)
    trained.learning_rate = config.learning_rate
    params = trained.params
    rng = np.random.default_rng(config.seed)
    history: list[float] = []
    for epoch in range(config.epochs):
        total = 0.0
        for j in rng.permutation(len(samples)):
            inputs, target = samples[j]
            value, grads = loss_and_grads(trained, inputs, target)
            if not np.isfinite(value):
                raise NumericError(f"{model.kind.value}: non-finite loss at epoch {epoch + 1}")
            total += value
            for name, g in grads.items():
                params[name] -= config.learning_rate * g
        history.append(total / len(samples))
        log.debug("%s epoch %d loss %.5f", model.kind.value, epoch + 1, history[-1])
    if not all(np.isfinite(t).all() for t in params.values()):
        raise NumericError(f"{model.kind.value}: parameters became non-finite")
    return trained, history


# --- gradient check ------------------------------------------------------------------

def gradient_check(model: AnnotatorModel, dialogue: Dialogue, index: int,
                   target: str | None = None, epsilon: float = 1e-5,
                   floor: float = 1e-6) -> GradientCheckReport:
    """Max elementwise relative error per tensor between backprop and central
    differences: ``|a - n| / max(|a| + |n|, floor)``.

    The floor keeps entries whose gradient is tiny (where central differences
    carry round-off of order ``1e-16 / epsilon``) from dominating the report.
    """
    code = target if target is not None else dialogue[index].gold_da
    if code is None:
        raise DataError("gradient check needs a labelled sample or an explicit target")
    y = model.codes.index(code)
    inputs = model_inputs(model, dialogue, index)
    _, analytic = loss_and_grads(model, inputs, y)
    errors: dict[str, float] = {}
    for name, tensor in model.params.items():
        numeric = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss(model, inputs, y)
            flat[i] = orig - epsilon
            down = loss(model, inputs, y)
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2.0 * epsilon)
        a = analytic[name]
        rel = np.abs(a - numeric) / np.maximum(np.abs(a) + np.abs(numeric), floor)
        errors[name] = float(rel.max()) if rel.size else 0.0
    return GradientCheckReport(errors)


# --- checkpoints ---------------------------------------------------------------------

def save_checkpoint(model: AnnotatorModel, path: str | Path) -> None:
    body = {
        "kind": model.kind.value,
        "hidden": model.hidden,
        "learning_rate": model.learning_rate,
        "inventory": model.inventory.to_json(),
        "inventory_hash": model.inventory.digest(),
        "embedding": model.provider.spec(),
        "tensors": {name: {"shape": list(t.shape), "data": t.reshape(-1).tolist()}
                    for name, t in sorted(model.params.items())},
    }
    text = CHECKPOINT_MAGIC + "\n" + json.dumps(body, sort_keys=True) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def load_checkpoint(path: str | Path, expected_kind: AnnotatorKind | str | None = None,
                    provider: enc.EmbeddingProvider | None = None) -> AnnotatorModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise CheckpointError(f"{path}: not a text checkpoint") from None
    magic, _, rest = text.partition("\n")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: unsupported checkpoint version {magic[:16]!r}, expected {CHECKPOINT_MAGIC!r}")
    try:
        body = json.loads(rest)
        kind = AnnotatorKind(body["kind"])
        inventory = TagInventory.from_json(body["inventory"])
        if inventory.digest() != body["inventory_hash"]:
            raise CheckpointError(f"{path}: inventory hash mismatch")
        provider = provider or enc.provider_from_spec(body["embedding"])
        model = build_model(kind, inventory, provider, hidden=int(body["hidden"]),
                            learning_rate=float(body["learning_rate"]))
        tensors = body["tensors"]
        if set(tensors) != set(model.params):
            raise CheckpointError(f"{path}: tensor set does not match kind {kind.value}")
        for name, spec in tensors.items():
            arr = np.array(spec["data"], dtype=np.float64).reshape(spec["shape"])
            if arr.shape != model.params[name].shape:
                raise CheckpointError(f"{path}: tensor {name} has shape {arr.shape}, expected {model.params[name].shape}")
            model.params[name] = arr
    except CheckpointError:
        raise
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    if expected_kind is not None and kind is not AnnotatorKind(expected_kind):
        raise CheckpointError(f"{path}: holds a {kind.value} model, expected {AnnotatorKind(expected_kind).value}")
    return model
