"""Factor model container, seeded initialization, scoring, and model files."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InputError

MODEL_MAGIC = "ials-model"
MODEL_VERSION = "v1"


@dataclass
class FactorModel:
    """User and item embeddings; score of pair (u, i) is the dot product."""

    user_factors: np.ndarray  # (num_users, dim) float64
    item_factors: np.ndarray  # (num_items, dim) float64

    def __post_init__(self):
        self.user_factors = np.ascontiguousarray(self.user_factors, dtype=np.float64)
        self.item_factors = np.ascontiguousarray(self.item_factors, dtype=np.float64)
        if self.user_factors.ndim != 2 or self.item_factors.ndim != 2:
            raise DimensionMismatch("factor matrices must be 2-d")
        if self.user_factors.shape[1] != self.item_factors.shape[1]:
            raise DimensionMismatch(
                f"embedding dims differ: users {self.user_factors.shape[1]}, "
                f"items {self.item_factors.shape[1]}"
            )

    @property
    def num_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_factors.shape[0]

    @property
    def dim(self) -> int:
        return self.user_factors.shape[1]


def init_model(num_users: int, num_items: int, dim: int,
               sigma_star: float = 0.1, seed: int = 0) -> FactorModel:
    """Gaussian init with per-entry scale sigma_star / sqrt(dim).

    The scale keeps the variance of an initial dot product independent of
    dim.  User factors are drawn before item factors from a single
    generator, so both matrices are reproducible from one seed.
    """
    if dim < 1 or num_users < 1 or num_items < 1:
        raise InputError("num_users, num_items and dim must be positive")
    rng = np.random.default_rng(seed)
    scale = sigma_star / math.sqrt(dim)
    w = rng.standard_normal((num_users, dim)) * scale
    h = rng.standard_normal((num_items, dim)) * scale
    return FactorModel(user_factors=w, item_factors=h)


def score(user_vec: np.ndarray, item_factors: np.ndarray) -> np.ndarray:
    """Scores of one user embedding against every row of item_factors."""
    user_vec = np.asarray(user_vec, dtype=np.float64)
    if user_vec.ndim != 1 or user_vec.size != item_factors.shape[1]:
        raise DimensionMismatch(
            f"user vector of size {user_vec.size} vs item dim {item_factors.shape[1]}"
        )
    return item_factors @ user_vec


@dataclass(frozen=True)
class RankedList:
    """Top-ranked items with their scores, best first."""

    items: np.ndarray
    scores: np.ndarray


def rank_items(scores: np.ndarray, exclude: np.ndarray | None = None,
               k: int | None = None) -> RankedList:
    """Rank items by descending score; ties go to the lower item index.

    exclude lists item indices removed from the ranking entirely (e.g. a
    fold-in history).  k truncates the result; None keeps the full order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    # Stable sort on negated scores: equal scores keep ascending index order.
    order = np.argsort(-scores, kind="stable")
    if exclude is not None and len(exclude):
        mask = np.zeros(scores.size, dtype=bool)
        mask[np.asarray(exclude, dtype=np.int64)] = True
        order = order[~mask[order]]
    if k is not None:
        order = order[:k]
    return RankedList(items=order, scores=scores[order])


def top_n(user_vec: np.ndarray, item_factors: np.ndarray, n: int,
          exclude: np.ndarray | None = None) -> RankedList:
    """Top-n recommendation for one user embedding."""
    return rank_items(score(user_vec, item_factors), exclude=exclude, k=n)


def save_model(path, model: FactorModel) -> None:
    """Write a model file: one ASCII header line, then W and H row-major.

    Header: "ials-model v1 <num_users> <num_items> <dim>\\n".  Both
    matrices follow as little-endian float64, W first.
    """
    header = (f"{MODEL_MAGIC} {MODEL_VERSION} "
              f"{model.num_users} {model.num_items} {model.dim}\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(model.user_factors.astype("<f8", copy=False).tobytes(order="C"))
        fh.write(model.item_factors.astype("<f8", copy=False).tobytes(order="C"))


def load_model(path) -> FactorModel:
    """Read a model file written by save_model.

    Raises:
        InputError: unknown magic/version, malformed header, or a payload
            whose size disagrees with the header.
    """
    with open(path, "rb") as fh:
        header = fh.readline(256).decode("ascii", errors="replace").strip()
        parts = header.split()
        if len(parts) != 5 or parts[0] != MODEL_MAGIC:
            raise InputError(f"{path}: not a model file (header {header!r})")
        if parts[1] != MODEL_VERSION:
            raise InputError(f"{path}: unsupported model version {parts[1]!r}")
        try:
            num_users, num_items, dim = (int(p) for p in parts[2:])
        except ValueError as exc:
            raise InputError(f"{path}: malformed header {header!r}") from exc
        if min(num_users, num_items, dim) < 1:
            raise InputError(f"{path}: non-positive shape in header {header!r}")
        payload = fh.read()

    expected = (num_users + num_items) * dim * 8
    if len(payload) != expected:
        raise InputError(
            f"{path}: expected {expected} payload bytes for shape "
            f"({num_users}+{num_items})x{dim}, found {len(payload)}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    w = flat[: num_users * dim].reshape(num_users, dim).astype(np.float64)
    h = flat[num_users * dim:].reshape(num_items, dim).astype(np.float64)
    return FactorModel(user_factors=w, item_factors=h)
