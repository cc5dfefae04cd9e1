"""Conversational data model: tag inventories, utterances, corpora, JSONL I/O
and a deterministic synthetic corpus generator."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import IO, Iterable, Iterator

import numpy as np

from .errors import (
    CorpusParseError,
    DataError,
    SchemeError,
    SequenceError,
    UnknownTagError,
)

UNDETERMINED = "xx"

EMOTION_SCHEMES: dict[str, tuple[str, ...]] = {
    "iemocap": (
        "anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise",
        "frustration", "excited",
    ),
    "meld": ("anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise"),
}
SENTIMENTS: tuple[str, ...] = ("positive", "negative", "neutral")


@dataclass(frozen=True)
class DialogueActTag:
    code: str
    name: str


@dataclass(frozen=True)
class TagInventory:
    """Ordered tag set; the position of a tag is its canonical index."""

    tags: tuple[DialogueActTag, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index: dict[str, int] = {}
        for i, tag in enumerate(self.tags):
            if not tag.code:
                raise DataError("tag code must be non-empty")
            if tag.code in index:
                raise DataError(f"duplicate tag code {tag.code!r}")
            index[tag.code] = i
        if UNDETERMINED not in index:
            raise DataError(f"inventory must contain the reserved code {UNDETERMINED!r}")
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.tags)

    def __contains__(self, code: object) -> bool:
        return code in self._index

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(t.code for t in self.tags)

    @property
    def trainable(self) -> tuple[str, ...]:
        """Codes a model may predict, in canonical order (everything but ``xx``)."""
        return tuple(t.code for t in self.tags if t.code != UNDETERMINED)

    def index(self, code: str) -> int:
        try:
            return self._index[code]
        except KeyError:
            raise UnknownTagError(code) from None

    def subset(self, n: int) -> TagInventory:
        """The first ``n`` trainable tags plus ``xx``."""
        if not 1 <= n <= len(self.trainable):
            raise DataError(f"cannot take {n} classes from an inventory of {len(self.trainable)}")
        keep = [t for t in self.tags if t.code != UNDETERMINED][:n]
        return TagInventory(tuple(keep) + (self.tags[self._index[UNDETERMINED]],))

    def to_json(self) -> list[dict[str, str]]:
        return [{"code": t.code, "name": t.name} for t in self.tags]

    @classmethod
    def from_json(cls, entries: Iterable[dict]) -> TagInventory:
        try:
            return cls(tuple(DialogueActTag(str(e["code"]), str(e.get("name", e["code"]))) for e in entries))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed inventory entry: {exc}") from None

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.codes).encode("utf-8")).hexdigest()


def default_inventory() -> TagInventory:
    """The 24 emotional-dialogue-act codes plus ``xx``."""
    text = resources.files("edas").joinpath("data/swda_eda.json").read_text(encoding="utf-8")
    return TagInventory.from_json(json.loads(text))


def load_inventory(path: str | Path) -> TagInventory:
    with open(path, encoding="utf-8") as fh:
        try:
            return TagInventory.from_json(json.load(fh))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not valid JSON ({exc})") from None


_TOKEN_RE = re.compile(r"\w+(?:'\w+)*|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase; punctuation marks become their own tokens; intra-word
    apostrophes stay attached (``"I'm"`` -> ``"i'm"``)."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Utterance:
    dialogue_id: str
    turn_index: int
    speaker: str
    text: str
    gold_da: str | None = None
    emotion: str | None = None
    sentiment: str | None = None
    tokens: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(tokenize(self.text)))

    @property
    def is_padding(self) -> bool:
        return self.turn_index < 0


# Stands in for turns before the start of a dialogue; encodes to all zeros.
PAD = Utterance(dialogue_id="", turn_index=-1, speaker="", text="")


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    utterances: tuple[Utterance, ...]

    def __len__(self) -> int:
        return len(self.utterances)

    def __getitem__(self, i: int) -> Utterance:
        return self.utterances[i]

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)


@dataclass(frozen=True)
class Schemes:
    """Label schemes a corpus declares; ``emotion`` names a key of ``EMOTION_SCHEMES``."""

    emotion: str | None = None
    sentiment: bool = False

    def __post_init__(self):
        if self.emotion is not None and self.emotion not in EMOTION_SCHEMES:
            raise SchemeError(f"unknown emotion scheme {self.emotion!r}")

    @property
    def emotion_labels(self) -> tuple[str, ...]:
        return EMOTION_SCHEMES[self.emotion] if self.emotion else ()


@dataclass(frozen=True)
class Corpus:
    dialogues: tuple[Dialogue, ...]
    inventory: TagInventory
    schemes: Schemes = Schemes()

    def utterances(self) -> Iterator[Utterance]:
        for d in self.dialogues:
            yield from d.utterances

    def __len__(self) -> int:
        return sum(len(d) for d in self.dialogues)

    def samples(self) -> Iterator[tuple[Dialogue, int]]:
        """``(dialogue, index)`` pairs in corpus order."""
        for d in self.dialogues:
            for i in range(len(d)):
                yield d, i


def context_window(dialogue: Dialogue, index: int, width: int = 2) -> list[Utterance]:
    """``width`` preceding utterances plus the target, oldest first, padded with ``PAD``."""
    if not 0 <= index < len(dialogue):
        raise IndexError(f"utterance index {index} out of range for dialogue of length {len(dialogue)}")
    window = [dialogue[j] if j >= 0 else PAD for j in range(index - width, index + 1)]
    return window


# --- JSONL --------------------------------------------------------------------

def utterance_record(u: Utterance) -> dict:
    rec: dict = {"dialogue_id": u.dialogue_id, "turn_index": u.turn_index,
                 "speaker": u.speaker, "text": u.text}
    if u.gold_da is not None:
        rec["da"] = u.gold_da
    if u.emotion is not None:
        rec["emotion"] = u.emotion
    if u.sentiment is not None:
        rec["sentiment"] = u.sentiment
    return rec


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, ensure_ascii=False, separators=(",", ":"))


def serialize_corpus(corpus: Corpus) -> bytes:
    lines = [dumps_record(utterance_record(u)) for u in corpus.utterances()]
    return "".join(line + "\n" for line in lines).encode("utf-8")


def utterance_from_record(rec: dict, line_no: int, inventory: TagInventory, schemes: Schemes) -> Utterance:
    if not isinstance(rec, dict):
        raise CorpusParseError(line_no, "expected a JSON object")
    for key, typ in (("dialogue_id", str), ("turn_index", int), ("speaker", str), ("text", str)):
        if key not in rec:
            raise CorpusParseError(line_no, f"missing field {key!r}")
        if not isinstance(rec[key], typ) or isinstance(rec[key], bool):
            raise CorpusParseError(line_no, f"field {key!r} must be {typ.__name__}")
    for key in ("da", "emotion", "sentiment"):
        if rec.get(key) is not None and not isinstance(rec[key], str):
            raise CorpusParseError(line_no, f"field {key!r} must be a string")
    da = rec.get("da")
    if da is not None and da not in inventory:
        raise UnknownTagError(da, line_no)
    emotion = rec.get("emotion")
    if emotion is not None and emotion not in schemes.emotion_labels:
        raise SchemeError(f"line {line_no}: emotion {emotion!r} not in declared scheme {schemes.emotion!r}")
    sentiment = rec.get("sentiment")
    if sentiment is not None and (not schemes.sentiment or sentiment not in SENTIMENTS):
        raise SchemeError(f"line {line_no}: sentiment {sentiment!r} not allowed by declared scheme")
    return Utterance(rec["dialogue_id"], rec["turn_index"], rec["speaker"], rec["text"],
                     gold_da=da, emotion=emotion, sentiment=sentiment)


def iter_records(stream: IO[bytes] | IO[str]) -> Iterator[tuple[int, dict]]:
    for line_no, raw in enumerate(stream, start=1):
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        if not line.strip():
            continue
        try:
            yield line_no, json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusParseError(line_no, f"malformed JSON ({exc.msg})") from None


def group_dialogues(items: Iterable[tuple[int, Utterance]]) -> tuple[Dialogue, ...]:
    """Group utterances by dialogue (first-appearance order) and check sequencing."""
    by_id: dict[str, dict[int, Utterance]] = {}
    for line_no, u in items:
        turns = by_id.setdefault(u.dialogue_id, {})
        if u.turn_index in turns:
            raise SequenceError(f"line {line_no}: duplicate turn {u.turn_index} in dialogue {u.dialogue_id!r}")
        turns[u.turn_index] = u
    dialogues = []
    for did, turns in by_id.items():
        order = sorted(turns)
        if order != list(range(len(order))):
            raise SequenceError(f"dialogue {did!r}: turn indices {order} are not consecutive from 0")
        dialogues.append(Dialogue(did, tuple(turns[i] for i in order)))
    return tuple(dialogues)


def parse_corpus(stream: IO[bytes] | IO[str], schemes: Schemes = Schemes(),
                 inventory: TagInventory | None = None) -> Corpus:
    inventory = inventory or default_inventory()
    items = ((n, utterance_from_record(rec, n, inventory, schemes)) for n, rec in iter_records(stream))
    return Corpus(group_dialogues(items), inventory, schemes)


# Sidecar header: ``foo.jsonl`` -> ``foo.header.json`` holding schemes and,
# optionally, the tag inventory the corpus was written against.

def header_path(corpus_path: str | Path) -> Path:
    return Path(corpus_path).with_suffix(".header.json")


def write_corpus(corpus: Corpus, path: str | Path, with_inventory: bool = True) -> None:
    path = Path(path)
    path.write_bytes(serialize_corpus(corpus))
    header: dict = {"emotion_scheme": corpus.schemes.emotion, "sentiment": corpus.schemes.sentiment}
    if with_inventory:
        header["inventory"] = corpus.inventory.to_json()
    header_path(path).write_text(json.dumps(header, indent=1) + "\n", encoding="utf-8")


def read_header(corpus_path: str | Path) -> tuple[Schemes | None, TagInventory | None]:
    hp = header_path(corpus_path)
    if not hp.exists():
        return None, None
    try:
        header = json.loads(hp.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{hp}: not valid JSON ({exc})") from None
    schemes = Schemes(header.get("emotion_scheme"), bool(header.get("sentiment", False)))
    inv = TagInventory.from_json(header["inventory"]) if header.get("inventory") else None
    return schemes, inv


def read_corpus(path: str | Path, schemes: Schemes | None = None,
                inventory: TagInventory | None = None) -> Corpus:
    """Parse a corpus file; explicit arguments override its sidecar header."""
    h_schemes, h_inv = read_header(path)
    with open(path, "rb") as fh:
        return parse_corpus(fh, schemes or h_schemes or Schemes(), inventory or h_inv)


def split_corpus(corpus: Corpus, test_fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Deterministic split by dialogue."""
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must lie in (0, 1)")
    n = len(corpus.dialogues)
    order = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    test_ids = set(order[:n_test].tolist())
    train = tuple(d for i, d in enumerate(corpus.dialogues) if i not in test_ids)
    test = tuple(d for i, d in enumerate(corpus.dialogues) if i in test_ids)
    return Corpus(train, corpus.inventory, corpus.schemes), Corpus(test, corpus.inventory, corpus.schemes)


# --- synthetic corpora ----------------------------------------------------------

_ONSETS = "b d f g k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()

_SENTIMENT_OF = {
    "anger": "negative", "disgust": "negative", "fear": "negative", "sadness": "negative",
    "frustration": "negative", "joy": "positive", "surprise": "positive", "excited": "positive",
    "neutral": "neutral",
}


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for :func:`generate_synthetic`.

    With ``context_rule`` on, a fraction ``ambiguous_rate`` of non-initial turns
    carry no cue token; their label is the successor (mod class count) of the
    previous turn's label, so they can only be resolved from context.

    The vocabulary comes from ``vocab_seed`` alone, so corpora generated with
    different ``seed`` values share cue and filler words.
    """

    n_classes: int = 5
    n_dialogues: int = 60
    min_turns: int = 6
    max_turns: int = 12
    cues_per_class: int = 3
    n_fillers: int = 12
    fillers_per_utterance: tuple[int, int] = (0, 2)
    context_rule: bool = False
    ambiguous_rate: float = 0.3
    n_ambiguous_phrases: int = 3
    emotion_scheme: str | None = "meld"
    seed: int = 0
    vocab_seed: int = 0

    def validate(self, inventory: TagInventory) -> None:
        if not 2 <= self.n_classes <= len(inventory.trainable):
            raise DataError(f"n_classes must be in [2, {len(inventory.trainable)}]")
        if self.n_dialogues < 1 or self.min_turns < 1 or self.max_turns < self.min_turns:
            raise DataError("need n_dialogues >= 1 and 1 <= min_turns <= max_turns")
        if self.cues_per_class < 1 or self.n_fillers < 1 or self.n_ambiguous_phrases < 1:
            raise DataError("vocabulary sizes must be positive")
        lo, hi = self.fillers_per_utterance
        if not 0 <= lo <= hi:
            raise DataError("fillers_per_utterance must be an ordered nonnegative pair")
        if not 0.0 <= self.ambiguous_rate < 1.0:
            raise DataError("ambiguous_rate must lie in [0, 1)")
        if self.emotion_scheme is not None and self.emotion_scheme not in EMOTION_SCHEMES:
            raise DataError(f"unknown emotion scheme {self.emotion_scheme!r}")


def _pseudo_words(rng: np.random.Generator, n: int, taken: set[str]) -> list[str]:
    words: list[str] = []
    while len(words) < n:
        syllables = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(syllables))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def generate_synthetic(config: SynthConfig, inventory: TagInventory | None = None) -> Corpus:
    inventory = (inventory or default_inventory())
    config.validate(inventory)
    inventory = inventory.subset(config.n_classes)
    codes = inventory.trainable
    vrng = np.random.default_rng(config.vocab_seed)
    taken: set[str] = set()
    cues = [_pseudo_words(vrng, config.cues_per_class, taken) for _ in codes]
    fillers = _pseudo_words(vrng, config.n_fillers, taken)
    ambiguous_vocab = _pseudo_words(vrng, 2 * config.n_ambiguous_phrases, taken)
    rng = np.random.default_rng(config.seed)
    ambiguous_phrases = [" ".join(ambiguous_vocab[2 * i:2 * i + 2]) for i in range(config.n_ambiguous_phrases)]

    with_sentiment = config.emotion_scheme == "meld"
    emotions = EMOTION_SCHEMES[config.emotion_scheme] if config.emotion_scheme else ()
    lo, hi = config.fillers_per_utterance

    dialogues = []
    for d in range(config.n_dialogues):
        did = f"syn{d:04d}"
        n_turns = int(rng.integers(config.min_turns, config.max_turns + 1))
        utts = []
        prev_label = -1
        prev_ambiguous = False
        for t in range(n_turns):
            ambiguous = (config.context_rule and t > 0 and not prev_ambiguous
                         and rng.random() < config.ambiguous_rate)
            if ambiguous:
                label = (prev_label + 1) % len(codes)
                body = ambiguous_phrases[int(rng.integers(len(ambiguous_phrases)))]
            else:
                label = int(rng.integers(len(codes)))
                n_fill = int(rng.integers(lo, hi + 1))
                words = [cues[label][int(rng.integers(config.cues_per_class))]]
                words += [fillers[int(rng.integers(len(fillers)))] for _ in range(n_fill)]
                perm = rng.permutation(len(words))
                body = " ".join(words[i] for i in perm)
            text = body[:1].upper() + body[1:] + ".!?"[int(rng.integers(3))]
            emotion = sentiment = None
            if emotions:
                if rng.random() < 0.6:
                    emotion = emotions[label % len(emotions)]
                else:
                    emotion = emotions[int(rng.integers(len(emotions)))]
                if with_sentiment:
                    sentiment = _SENTIMENT_OF[emotion]
            utts.append(Utterance(did, t, "AB"[t % 2], text, gold_da=codes[label],
                                  emotion=emotion, sentiment=sentiment))
            prev_label, prev_ambiguous = label, ambiguous
        dialogues.append(Dialogue(did, tuple(utts)))
    return Corpus(tuple(dialogues), inventory, Schemes(config.emotion_scheme, with_sentiment))
