"""Counting by regression: 12-block foreground/edge ratios, ridge-OLS, and an embedding SVR."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .core import FormatError, PerspectiveMap, Roi, StreamError

N_BLOCKS = 12
N_FEATURES = 2 * N_BLOCKS
RIDGE = 1e-6


class NumericError(ArithmeticError):
    pass


class ConfigurationError(RuntimeError):
    pass


@dataclass(frozen=True)
class BlockFeatures:
    """Interleaved (foreground ratio, edge ratio) for each of the 12 row blocks."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (N_FEATURES,):
            raise ValueError(f"block features must have {N_FEATURES} entries")
        object.__setattr__(self, "values", v)

    @property
    def foreground(self) -> np.ndarray:
        return self.values[0::2]

    @property
    def edges(self) -> np.ndarray:
        return self.values[1::2]


def block_bounds(height: int) -> np.ndarray:
    """Row boundaries: block k spans [b[k], b[k+1])."""
    return (np.arange(N_BLOCKS + 1) * height) // N_BLOCKS


def exclusion_mask(shape: tuple[int, int], exclusions: Sequence[Roi]) -> np.ndarray:
    H, W = shape
    mask = np.zeros(shape, dtype=bool)
    for r in exclusions:
        if not r.within(W, H):
            raise ValueError(f"exclusion {r} outside the {W}x{H} frame")
        mask[r.y : r.y + r.h, r.x : r.x + r.w] = True
    return mask


def block_sums(
    fg: np.ndarray,
    edges: np.ndarray,
    pmap: PerspectiveMap = PerspectiveMap(),
    exclusions: Sequence[Roi] = (),
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-block (weighted foreground count, weighted edge count, valid pixel count)."""
    fg = np.asarray(fg, dtype=bool)
    edges = np.asarray(edges, dtype=bool)
    if fg.shape != edges.shape:
        raise StreamError(f"mask shapes differ: {fg.shape} vs {edges.shape}")
    H, W = fg.shape
    if exclusions:
        keep = ~exclusion_mask(fg.shape, exclusions)
        fg_rows = np.count_nonzero(fg & keep, axis=1)
        edge_rows = np.count_nonzero(edges & keep, axis=1)
        valid_rows = np.count_nonzero(keep, axis=1)
    else:
        fg_rows = np.count_nonzero(fg, axis=1)
        edge_rows = np.count_nonzero(edges, axis=1)
        valid_rows = np.full(H, W)
    w = pmap.row_weights(H)
    starts = block_bounds(H)[:-1]
    return (np.add.reduceat(fg_rows * w, starts), np.add.reduceat(edge_rows * w, starts),
            np.add.reduceat(valid_rows, starts).astype(np.float64))


def extract_block_features(
    fg: np.ndarray,
    edges: np.ndarray,
    pmap: PerspectiveMap = PerspectiveMap(),
    exclusions: Sequence[Roi] = (),
) -> BlockFeatures:
    """Perspective-weighted foreground/edge ratios over the non-excluded pixels of each block.

    Excluded pixels leave both numerator and denominator; the row weight
    applies to the numerator only. A fully excluded block yields zeros.
    """
    fg_w, edge_w, denom = block_sums(fg, edges, pmap, exclusions)
    safe = np.where(denom > 0, denom, 1.0)
    out = np.empty(N_FEATURES)
    out[0::2] = np.where(denom > 0, fg_w / safe, 0.0)
    out[1::2] = np.where(denom > 0, edge_w / safe, 0.0)
    return BlockFeatures(out)


# ---------------------------------------------------------------------------
# linear model


@dataclass(frozen=True)
class LinearCountModel:
    weights: np.ndarray
    bias: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise NumericError("non-finite regression coefficients")
        object.__setattr__(self, "weights", w)

    @classmethod
    def zero(cls, dim: int = N_FEATURES) -> "LinearCountModel":
        return cls(np.zeros(dim), 0.0)

    def raw(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return X @ self.weights + self.bias

    def to_json(self) -> dict:
        return {"weights": [float(v) for v in self.weights], "bias": float(self.bias)}

    @classmethod
    def from_json(cls, d: dict) -> "LinearCountModel":
        try:
            return cls(np.asarray(d["weights"], dtype=np.float64), float(d["bias"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError("malformed linear model") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "LinearCountModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def _as_matrix(features) -> np.ndarray:
    rows = [f.values if isinstance(f, BlockFeatures) else np.asarray(f, dtype=np.float64) for f in features]
    return np.vstack(rows) if rows else np.zeros((0, N_FEATURES))


def train_linear(features, counts, ridge: float = RIDGE) -> LinearCountModel:
    """Least squares with a small ridge on the weights (the bias is not penalised)."""
    X = _as_matrix(features)
    y = np.asarray(counts, dtype=np.float64)
    n, d = X.shape
    if n != len(y):
        raise ValueError("features and counts differ in length")
    if n < d + 1:
        raise ValueError(f"need at least {d + 1} samples, got {n}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NumericError("non-finite training data")
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    A = np.vstack([Xc, np.sqrt(ridge) * np.eye(d)])
    b = np.concatenate([y - y_mean, np.zeros(d)])
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] == 0 or s[0] / s[-1] > 1e12:
        raise NumericError("design matrix too ill-conditioned for the ridge term")
    w, *_ = np.linalg.lstsq(A, b, rcond=None)
    return LinearCountModel(w, float(y_mean - x_mean @ w))


def estimate_count_regression(model: LinearCountModel, f) -> float:
    v = f.values if isinstance(f, BlockFeatures) else np.asarray(f, dtype=np.float64)
    return max(0.0, float(v @ model.weights + model.bias))


# ---------------------------------------------------------------------------
# embeddings + linear epsilon-SVR


class EmbeddingProvider(Protocol):
    dim: int

    def __call__(self, frame_index: int) -> np.ndarray: ...


def write_embedding(path, vector: np.ndarray) -> None:
    v = np.asarray(vector, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(v)))
        fh.write(v.tobytes())


def read_embedding(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise FormatError(f"{path}: truncated embedding")
    (n,) = struct.unpack_from("<I", data)
    if len(data) != 4 + 4 * n:
        raise FormatError(f"{path}: length prefix {n} does not match payload")
    return np.frombuffer(data, dtype="<f4", offset=4).astype(np.float64)


class SidecarEmbeddings:
    """Embeddings stored next to the frames as frame_NNNNNN.emb."""

    def __init__(self, directory, dim: int):
        self.directory = Path(directory)
        self.dim = int(dim)

    def __call__(self, frame_index: int) -> np.ndarray:
        v = read_embedding(self.directory / f"frame_{frame_index:06d}.emb")
        if len(v) != self.dim:
            raise FormatError(f"frame {frame_index}: embedding has {len(v)} values, expected {self.dim}")
        return v


class CallableEmbeddings:
    def __init__(self, fn: Callable[[int], np.ndarray], dim: int):
        self.fn = fn
        self.dim = int(dim)

    def __call__(self, frame_index: int) -> np.ndarray:
        return np.asarray(self.fn(frame_index), dtype=np.float64)


_provider: EmbeddingProvider | None = None


def register_embedding_provider(provider: EmbeddingProvider | None) -> None:
    global _provider
    _provider = provider


def get_embedding_provider() -> EmbeddingProvider:
    if _provider is None:
        raise ConfigurationError("no embedding provider registered")
    return _provider


@dataclass(frozen=True)
class EmbeddingCountModel:
    support: np.ndarray  # (n_sv, dim)
    coef: np.ndarray  # (n_sv,)
    bias_scale: float
    embedding_dim: int

    @property
    def weights(self) -> np.ndarray:
        return self.coef @ self.support if len(self.coef) else np.zeros(self.embedding_dim)

    @property
    def bias(self) -> float:
        return float(self.coef.sum() * self.bias_scale**2)

    def raw(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.embedding_dim:
            raise ValueError(f"embedding has {X.shape[1]} values, model expects {self.embedding_dim}")
        return X @ self.weights + self.bias

    def predict(self, X) -> np.ndarray:
        return np.maximum(0.0, self.raw(X))

    def to_json(self) -> dict:
        return {"kind": "linear_svr", "support": self.support.tolist(), "coef": self.coef.tolist(),
                "bias_scale": self.bias_scale, "embedding_dim": self.embedding_dim}

    @classmethod
    def from_json(cls, d: dict) -> "EmbeddingCountModel":
        dim = int(d["embedding_dim"])
        sv = np.asarray(d["support"], dtype=np.float64).reshape(-1, dim)
        return cls(sv, np.asarray(d["coef"], dtype=np.float64), float(d["bias_scale"]), dim)


def train_svr(
    X,
    y,
    C: float = 10.0,
    epsilon: float = 0.5,
    sample_weight=None,
    bias_scale: float = 1.0,
    tol: float = 1e-10,
    max_epochs: int = 20000,
    seed: int = 0,
) -> EmbeddingCountModel:
    """Linear epsilon-insensitive SVR by dual coordinate descent.

    The bias is learned as the weight of a constant feature ``bias_scale``.
    Per-sample bounds are C * sample_weight.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if n == 0 or len(y) != n:
        raise ValueError("need matching, non-empty embeddings and targets")
    U = C * (np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64))
    Xa = np.hstack([X, np.full((n, 1), bias_scale)])
    Qd = np.einsum("ij,ij->i", Xa, Xa)
    beta = np.zeros(n)
    w = np.zeros(d + 1)
    rng = np.random.default_rng(seed)
    for _ in range(max_epochs):
        max_step = 0.0
        for i in rng.permutation(n):
            G = Xa[i] @ w - y[i]
            H = Qd[i]
            if H <= 0:
                continue
            b = beta[i]
            Gp, Gn = G + epsilon, G - epsilon
            if Gp < H * b:
                z = -Gp / H
            elif Gn > H * b:
                z = -Gn / H
            else:
                z = -b
            nb = min(max(b + z, -U[i]), U[i])
            if nb != b:
                w += (nb - b) * Xa[i]
                beta[i] = nb
                max_step = max(max_step, abs(nb - b) * np.sqrt(H))
        if max_step < tol:
            break
    sv = np.flatnonzero(beta != 0)
    return EmbeddingCountModel(X[sv].copy(), beta[sv].copy(), float(bias_scale), d)


def estimate_count_svr(model: EmbeddingCountModel, embedding) -> float:
    return float(model.predict(embedding)[0])


def embeddings_for(frame_indices: Sequence[int], provider: EmbeddingProvider | None = None) -> np.ndarray:
    provider = provider if provider is not None else get_embedding_provider()
    return np.vstack([provider(i) for i in frame_indices])
