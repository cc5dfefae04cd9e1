"""Embedding providers and the numeric building blocks shared by the annotators:
a gated recurrent encoder, additive attention, mean pooling and softmax.

Each trainable block has a ``*_forward`` returning a cache and a matching
``*_backward`` that turns an upstream gradient into parameter gradients plus the
gradient with respect to the block's input. Everything is float64.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .errors import DataError

INIT_SCALE = 0.08

Params = dict[str, np.ndarray]


class EmbeddingProvider(Protocol):
    dim: int

    def vector(self, token: str) -> np.ndarray: ...

    def spec(self) -> dict: ...


class PseudoEmbeddings:
    """Deterministic stand-in for pretrained vectors: each token is hashed with
    the seed and the digest seeds a uniform draw in [-1, 1]^dim."""

    def __init__(self, dim: int = 16, seed: int = 0):
        if dim < 1:
            raise ValueError("embedding dimension must be positive")
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def vector(self, token: str) -> np.ndarray:
        v = self._cache.get(token)
        if v is None:
            digest = hashlib.blake2b(f"{self.seed}\x00{token}".encode("utf-8"), digest_size=16).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            v = rng.uniform(-1.0, 1.0, self.dim)
            v.setflags(write=False)
            self._cache[token] = v
        return v

    def spec(self) -> dict:
        return {"type": "pseudo", "dim": self.dim, "seed": self.seed}


class FileEmbeddings:
    """Precomputed vectors: a ``d=<int>`` header line, then ``token<TAB>v1 ... vd``.

    Unknown tokens map to the ``<unk>`` entry when the file has one, else to zeros.
    """

    UNK = "<unk>"

    def __init__(self, path: str | Path):
        self.path = str(path)
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except FileNotFoundError:
            raise DataError(f"embedding file not found: {path}") from None
        if not lines or not lines[0].startswith("d="):
            raise DataError(f"{path}: first line must be 'd=<int>'")
        try:
            self.dim = int(lines[0][2:])
        except ValueError:
            raise DataError(f"{path}: bad dimension header {lines[0]!r}") from None
        self._table: dict[str, np.ndarray] = {}
        for n, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            token, sep, rest = line.partition("\t")
            if not sep:
                raise DataError(f"{path}:{n}: expected token<TAB>values")
            try:
                values = np.array([float(x) for x in rest.split()], dtype=np.float64)
            except ValueError:
                raise DataError(f"{path}:{n}: non-numeric vector entry") from None
            if values.shape != (self.dim,) or not np.isfinite(values).all():
                raise DataError(f"{path}:{n}: expected {self.dim} finite values")
            values.setflags(write=False)
            self._table[token] = values
        unk = self._table.get(self.UNK)
        self._unk = unk if unk is not None else np.zeros(self.dim)

    def vector(self, token: str) -> np.ndarray:
        return self._table.get(token, self._unk)

    def spec(self) -> dict:
        return {"type": "file", "path": self.path}


def provider_from_spec(spec: Mapping) -> EmbeddingProvider:
    kind = spec.get("type")
    if kind == "pseudo":
        return PseudoEmbeddings(int(spec["dim"]), int(spec["seed"]))
    if kind == "file":
        return FileEmbeddings(spec["path"])
    raise DataError(f"unknown embedding provider type {kind!r}")


def embed_tokens(provider: EmbeddingProvider, tokens: Sequence[str]) -> np.ndarray:
    """``len(tokens) x dim`` matrix of token vectors."""
    if not tokens:
        return np.zeros((0, provider.dim))
    return np.stack([provider.vector(t) for t in tokens])


# --- elementwise helpers --------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form avoids overflow warnings for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def mean_pool(vectors: np.ndarray | Sequence[np.ndarray]) -> np.ndarray:
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("mean_pool needs a nonempty sequence of vectors")
    return X.mean(axis=0)


# --- parameter initialisation -----------------------------------------------------

def init_rnn(rng: np.random.Generator, n_in: int, hidden: int) -> Params:
    """Gate rows are stacked as [update, reset, candidate]."""
    u = lambda *shape: rng.uniform(-INIT_SCALE, INIT_SCALE, shape)
    return {"W": u(3 * hidden, n_in), "U": u(3 * hidden, hidden), "b": u(3 * hidden)}


def init_attention(rng: np.random.Generator, hidden: int, att: int | None = None) -> Params:
    att = att or hidden
    u = lambda *shape: rng.uniform(-INIT_SCALE, INIT_SCALE, shape)
    return {"W": u(att, hidden), "b": u(att), "v": u(att)}


# --- gated recurrent encoder ----------------------------------------------------------

def rnn_forward(p: Params, X: np.ndarray) -> tuple[np.ndarray, tuple]:
    W, U, b = p["W"], p["U"], p["b"]
    hidden = U.shape[1]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("rnn input must be a nonempty (T, n_in) matrix")
    if X.shape[1] != W.shape[1]:
        raise ValueError(f"rnn input width {X.shape[1]} does not match parameters ({W.shape[1]})")
    T = X.shape[0]
    XW = X @ W.T + b
    Uzr, Uc = U[: 2 * hidden], U[2 * hidden:]
    H = np.empty((T, hidden))
    Z = np.empty((T, hidden))
    R = np.empty((T, hidden))
    C = np.empty((T, hidden))
    h = np.zeros(hidden)
    for t in range(T):
        zr = sigmoid(XW[t, : 2 * hidden] + Uzr @ h)
        z, r = zr[:hidden], zr[hidden:]
        c = np.tanh(XW[t, 2 * hidden:] + Uc @ (r * h))
        h = (1.0 - z) * h + z * c
        Z[t], R[t], C[t], H[t] = z, r, c, h
    return H, (X, H, Z, R, C)


def rnn_backward(p: Params, cache: tuple, dH: np.ndarray) -> tuple[Params, np.ndarray]:
    X, H, Z, R, C = cache
    W, U = p["W"], p["U"]
    hidden = U.shape[1]
    Uzr, Uc = U[: 2 * hidden], U[2 * hidden:]
    T = X.shape[0]
    DA = np.empty((T, 3 * hidden))
    dU = np.zeros_like(U)
    dh_next = np.zeros(hidden)
    for t in range(T - 1, -1, -1):
        h_prev = H[t - 1] if t > 0 else np.zeros(hidden)
        z, r, c = Z[t], R[t], C[t]
        dh = dH[t] + dh_next
        dac = dh * z * (1.0 - c * c)
        daz = dh * (c - h_prev) * z * (1.0 - z)
        drh = Uc.T @ dac
        dar = drh * h_prev * r * (1.0 - r)
        dzr = np.concatenate([daz, dar])
        dU[: 2 * hidden] += np.outer(dzr, h_prev)
        dU[2 * hidden:] += np.outer(dac, r * h_prev)
        dh_next = dh * (1.0 - z) + drh * r + Uzr.T @ dzr
        DA[t, : 2 * hidden] = dzr
        DA[t, 2 * hidden:] = dac
    grads = {"W": DA.T @ X, "U": dU, "b": DA.sum(axis=0)}
    return grads, DA @ W


def rnn_encode(p: Params, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hidden-state sequence and final state."""
    H, _ = rnn_forward(p, X)
    return H, H[-1]


# --- additive attention ------------------------------------------------------------------

def attention_forward(p: Params, H: np.ndarray) -> tuple[np.ndarray, np.ndarray, tuple]:
    if H.ndim != 2 or H.shape[0] == 0:
        raise ValueError("attention needs a nonempty (T, hidden) matrix")
    if H.shape[1] != p["W"].shape[1]:
        raise ValueError(f"attention input width {H.shape[1]} does not match parameters ({p['W'].shape[1]})")
    S = np.tanh(H @ p["W"].T + p["b"])
    a = softmax(S @ p["v"])
    return a @ H, a, (H, S, a)


def attention_backward(p: Params, cache: tuple, dctx: np.ndarray) -> tuple[Params, np.ndarray]:
    H, S, a = cache
    dH = np.outer(a, dctx)
    da = H @ dctx
    de = a * (da - a @ da)
    dS = np.outer(de, p["v"]) * (1.0 - S * S)
    grads = {"W": dS.T @ H, "b": dS.sum(axis=0), "v": S.T @ de}
    return grads, dH + dS @ p["W"]


def attention(p: Params, H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Context vector and the normalised weights."""
    ctx, a, _ = attention_forward(p, H)
    return ctx, a
