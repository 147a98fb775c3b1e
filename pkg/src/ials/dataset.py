"""Implicit-feedback interaction data: loading, sparse indices, and splits.

An InteractionSet stores a deduplicated set of positive (user, item) pairs
together with both adjacency directions: the sorted item list per user and
the sorted user list per item.  Split generation is seeded and fully
deterministic; split directories can also be loaded verbatim so published
benchmark splits are consumed bit-exactly.
"""

from __future__ import annotations

import gzip
import logging
import math
import os
from array import array
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError

log = logging.getLogger(__name__)


class ParseError(InputError):
    """A malformed row in an input file; message carries the line number."""


class EmptyDataset(InputError):
    """No interaction survived loading/filtering."""


class InsufficientUsers(InputError):
    """Not enough eligible users to build the requested split."""


class UserTooSparse(InputError):
    """Users with too few interactions for leave-one-out; lists offenders."""

    def __init__(self, users):
        self.users = list(users)
        shown = ", ".join(str(u) for u in self.users[:20])
        more = "" if len(self.users) <= 20 else f" (+{len(self.users) - 20} more)"
        super().__init__(
            f"{len(self.users)} users have fewer than 2 interactions: {shown}{more}"
        )


@dataclass(frozen=True)
class InteractionSet:
    """Sparse binary user-item interactions with both adjacency directions.

    user_ptr/user_items form a CSR-style index over users (items sorted
    ascending within each user); item_ptr/item_users are the exact
    transpose.  timestamps, when present, align with user_items.
    """

    num_users: int
    num_items: int
    user_ptr: np.ndarray
    user_items: np.ndarray
    item_ptr: np.ndarray
    item_users: np.ndarray
    timestamps: np.ndarray | None = None
    user_ids: np.ndarray | None = field(default=None, compare=False)
    item_ids: np.ndarray | None = field(default=None, compare=False)

    @classmethod
    def from_pairs(cls, users, items, num_users=None, num_items=None,
                   timestamps=None, user_ids=None, item_ids=None) -> "InteractionSet":
        """Build an InteractionSet from parallel index arrays.

        Duplicate pairs are collapsed (keeping the latest timestamp).
        Indices must be non-negative and, when num_users/num_items are
        given, strictly below them.
        """
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.shape != items.shape or users.ndim != 1:
            raise InputError("users and items must be 1-d arrays of equal length")
        if timestamps is not None:
            timestamps = np.asarray(timestamps, dtype=np.float64)
            if timestamps.shape != users.shape:
                raise InputError("timestamps must align with the pair arrays")
        if users.size and (users.min() < 0 or items.min() < 0):
            raise InputError("negative user or item index")

        max_u = int(users.max()) + 1 if users.size else 0
        max_i = int(items.max()) + 1 if items.size else 0
        num_users = max_u if num_users is None else int(num_users)
        num_items = max_i if num_items is None else int(num_items)
        if max_u > num_users or max_i > num_items:
            raise InputError(
                f"index out of range: max user {max_u - 1} / max item {max_i - 1} "
                f"for shape {num_users}x{num_items}"
            )

        if timestamps is None:
            order = np.lexsort((items, users))
        else:
            # Sort timestamps last within each (u, i) group so dedup below
            # keeps the latest one.
            order = np.lexsort((timestamps, items, users))
        users, items = users[order], items[order]
        if timestamps is not None:
            timestamps = timestamps[order]
        if users.size:
            keep = np.empty(users.size, dtype=bool)
            keep[-1] = True
            keep[:-1] = (users[1:] != users[:-1]) | (items[1:] != items[:-1])
            users, items = users[keep], items[keep]
            if timestamps is not None:
                timestamps = timestamps[keep]

        user_ptr = np.zeros(num_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(users, minlength=num_users), out=user_ptr[1:])

        t_order = np.lexsort((users, items))
        item_users = users[t_order]
        item_ptr = np.zeros(num_items + 1, dtype=np.int64)
        np.cumsum(np.bincount(items, minlength=num_items), out=item_ptr[1:])

        return cls(
            num_users=num_users,
            num_items=num_items,
            user_ptr=user_ptr,
            user_items=items,
            item_ptr=item_ptr,
            item_users=item_users,
            timestamps=timestamps,
            user_ids=None if user_ids is None else np.asarray(user_ids, dtype=object),
            item_ids=None if item_ids is None else np.asarray(item_ids, dtype=object),
        )

    @property
    def num_pairs(self) -> int:
        return int(self.user_items.size)

    @property
    def user_counts(self) -> np.ndarray:
        """|I(u)| for every user."""
        return np.diff(self.user_ptr)

    @property
    def item_counts(self) -> np.ndarray:
        """|U(i)| for every item."""
        return np.diff(self.item_ptr)

    def items_of(self, u: int) -> np.ndarray:
        """Sorted item indices I(u)."""
        return self.user_items[self.user_ptr[u]:self.user_ptr[u + 1]]

    def users_of(self, i: int) -> np.ndarray:
        """Sorted user indices U(i)."""
        return self.item_users[self.item_ptr[i]:self.item_ptr[i + 1]]

    def timestamps_of(self, u: int) -> np.ndarray | None:
        if self.timestamps is None:
            return None
        return self.timestamps[self.user_ptr[u]:self.user_ptr[u + 1]]

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """All pairs as parallel (users, items) arrays, grouped by user."""
        users = np.repeat(np.arange(self.num_users, dtype=np.int64), self.user_counts)
        return users, self.user_items.copy()

    def has_pair(self, u: int, i: int) -> bool:
        row = self.items_of(u)
        pos = np.searchsorted(row, i)
        return pos < row.size and row[pos] == i


@dataclass(frozen=True)
class HoldoutUser:
    """One evaluation user: revealed fold-in items and hidden target items."""

    user: int
    fold_in: np.ndarray
    target: np.ndarray


@dataclass(frozen=True)
class StrongGeneralizationSplit:
    """Evaluation users are absent from train; part of their history is revealed."""

    train: InteractionSet
    users: list[HoldoutUser]

    @property
    def num_items(self) -> int:
        return self.train.num_items


@dataclass(frozen=True)
class LeaveOneOutSplit:
    """One held-out item per user, ranked against sampled negative items."""

    train: InteractionSet
    users: np.ndarray
    holdout: np.ndarray
    negatives: np.ndarray  # (len(users), n_negatives)


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

_COLUMN_NAMES = {"user", "item", "rating", "time", "skip"}


def _open_text(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def _parse_columns(columns: str) -> dict[str, int]:
    names = [c.strip() for c in columns.split(",")]
    bad = [c for c in names if c not in _COLUMN_NAMES]
    if bad:
        raise InputError(f"unknown column names {bad}; valid: {sorted(_COLUMN_NAMES)}")
    pos = {name: idx for idx, name in enumerate(names) if name != "skip"}
    if "user" not in pos or "item" not in pos:
        raise InputError("column list must include 'user' and 'item'")
    return pos


def load_interactions(path, *, delimiter: str | None = None,
                      columns: str = "user,item,rating,time",
                      min_rating: float | None = None,
                      skip_header: bool | None = None) -> InteractionSet:
    """Load an interaction file into an InteractionSet.

    The file holds one interaction per row with at least (user, item)
    fields; rating and timestamp fields are used when present in the
    column list and the row.  External ids are mapped to contiguous
    0-based indices in first-appearance order and kept on the result
    (user_ids/item_ids).  Duplicate pairs are collapsed.

    Args:
        path: csv/tsv file, optionally gzip-compressed.
        delimiter: field separator; default is tab for .tsv files and
            comma otherwise.  Multi-character separators (e.g. "::") work.
        columns: comma-separated positional names out of
            user,item,rating,time,skip.
        min_rating: when set, rows with rating < min_rating are dropped
            (binarization threshold); default keeps every row as a positive.
        skip_header: skip the first line.  Default (None) skips it only
            when it fails to parse.

    Raises:
        ParseError: malformed row (with its line number).
        EmptyDataset: nothing survived filtering.
    """
    if delimiter is None:
        base = str(path)[:-3] if str(path).endswith(".gz") else str(path)
        delimiter = "\t" if base.endswith(".tsv") else ","
    pos = _parse_columns(columns)
    need = max(pos["user"], pos["item"]) + 1

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    users = array("q")
    items = array("q")
    times = array("d")
    have_time = "time" in pos

    try:
        fh = _open_text(path)
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc

    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split(delimiter)
            if skip_header and lineno == 1:
                continue
            try:
                if len(fields) < need:
                    raise ValueError(f"expected at least {need} fields, got {len(fields)}")
                if min_rating is not None or "rating" in pos:
                    rpos = pos.get("rating")
                    if min_rating is not None:
                        if rpos is None or rpos >= len(fields):
                            raise ValueError("rating threshold set but no rating field")
                        if float(fields[rpos]) < min_rating:
                            continue
                    elif rpos is not None and rpos < len(fields):
                        float(fields[rpos])  # validate when present
                ts = 0.0
                has_ts = False
                if have_time and pos["time"] < len(fields):
                    ts = float(fields[pos["time"]])
                    has_ts = True
                u_key = fields[pos["user"]]
                i_key = fields[pos["item"]]
            except ValueError as exc:
                if lineno == 1 and skip_header is None:
                    log.debug("treating first line of %s as a header", path)
                    continue
                raise ParseError(f"{path} line {lineno}: {exc}") from exc
            users.append(user_index.setdefault(u_key, len(user_index)))
            items.append(item_index.setdefault(i_key, len(item_index)))
            if has_ts:
                times.append(ts)
            elif have_time:
                times.append(0.0)
                have_time = False  # ragged rows: drop timestamps entirely

    if not users:
        raise EmptyDataset(f"no interactions loaded from {path}")

    return InteractionSet.from_pairs(
        np.frombuffer(users, dtype=np.int64),
        np.frombuffer(items, dtype=np.int64),
        num_users=len(user_index),
        num_items=len(item_index),
        timestamps=np.frombuffer(times, dtype=np.float64) if have_time and len(times) else None,
        user_ids=list(user_index),
        item_ids=list(item_index),
    )


# ---------------------------------------------------------------------------
# split generation
# ---------------------------------------------------------------------------

def strong_generalization_split(data: InteractionSet, n_holdout_users: int,
                                n_validation_users: int, fold_in_fraction: float = 0.8,
                                min_user_interactions: int = 0, seed: int = 0,
                                ) -> tuple[StrongGeneralizationSplit, StrongGeneralizationSplit]:
    """Split off validation and test users whose interactions leave the train set.

    Evaluation users are sampled uniformly without replacement among users
    with enough interactions.  Per user, ceil(fold_in_fraction * |I(u)|)
    interactions are revealed at evaluation time (fold-in) and the rest are
    ranking targets; the within-user partition is a seeded uniform shuffle.
    Items that never occur in the remaining train set are dropped from the
    evaluation users' lists afterwards.

    Returns (validation split, test split); both share the same train set.

    Raises:
        InsufficientUsers: fewer eligible users than requested.
    """
    if not 0.0 < fold_in_fraction < 1.0:
        raise InputError("fold_in_fraction must be in (0, 1)")
    n_holdout_users = int(n_holdout_users)
    n_validation_users = int(n_validation_users)
    if n_holdout_users < 1:
        raise InputError("n_holdout_users must be >= 1")

    counts = data.user_counts
    # A user is only usable if ceil(f*n) < n, i.e. at least one interaction
    # is left over as a ranking target.  Evaluate the ceil directly (same
    # float expression as the partition below) rather than a closed form.
    has_target = np.ceil(fold_in_fraction * counts) < counts
    eligible = np.flatnonzero(has_target & (counts >= int(min_user_interactions)))
    n_eval = n_holdout_users + n_validation_users
    if eligible.size < n_eval or n_eval >= data.num_users:
        raise InsufficientUsers(
            f"need {n_eval} evaluation users with >= {min_user_interactions} "
            f"interactions and a non-empty target at fold-in fraction "
            f"{fold_in_fraction}, found {eligible.size} of {data.num_users}"
        )

    rng = np.random.default_rng(seed)
    chosen = rng.choice(eligible, size=n_eval, replace=False)
    val_users = np.sort(chosen[:n_validation_users])
    test_users = np.sort(chosen[n_validation_users:])

    is_eval = np.zeros(data.num_users, dtype=bool)
    is_eval[chosen] = True
    all_u, all_i = data.pairs()
    keep = ~is_eval[all_u]
    train = InteractionSet.from_pairs(
        all_u[keep], all_i[keep],
        num_users=data.num_users, num_items=data.num_items,
        timestamps=None if data.timestamps is None else data.timestamps[keep],
        user_ids=data.user_ids, item_ids=data.item_ids,
    )
    in_train_vocab = train.item_counts > 0

    def build(users: np.ndarray) -> StrongGeneralizationSplit:
        holdout = []
        dropped = 0
        for u in users:
            row = data.items_of(u)
            perm = rng.permutation(row.size)
            n_fold = math.ceil(fold_in_fraction * row.size)
            fold_in = row[perm[:n_fold]]
            target = row[perm[n_fold:]]
            fold_in = np.sort(fold_in[in_train_vocab[fold_in]])
            target = np.sort(target[in_train_vocab[target]])
            if fold_in.size == 0 or target.size == 0:
                dropped += 1
                continue
            holdout.append(HoldoutUser(user=int(u), fold_in=fold_in, target=target))
        if dropped:
            log.warning(
                "dropped %d evaluation users whose fold-in or target emptied "
                "after restricting to the train item vocabulary", dropped)
        return StrongGeneralizationSplit(train=train, users=holdout)

    return build(val_users), build(test_users)


def leave_one_out_split(data: InteractionSet, n_negatives: int = 100, seed: int = 0,
                        allow_seen_negatives: bool = False) -> LeaveOneOutSplit:
    """Hold out one item per user and sample negative candidates.

    The held-out item is the user's latest by timestamp when timestamps
    exist (first-occurring maximum on ties), otherwise a seeded uniform
    draw.  Negatives are sampled uniformly without replacement from items
    that are not the holdout and, unless allow_seen_negatives, not among
    the user's interactions.

    Raises:
        UserTooSparse: some user has fewer than 2 interactions.
        InputError: not enough candidate items to sample negatives from.
    """
    counts = data.user_counts
    offenders = np.flatnonzero(counts < 2)
    if offenders.size:
        raise UserTooSparse(offenders.tolist())

    rng = np.random.default_rng(seed)
    num_items = data.num_items
    users = np.arange(data.num_users, dtype=np.int64)
    holdout = np.empty(data.num_users, dtype=np.int64)
    negatives = np.empty((data.num_users, n_negatives), dtype=np.int64)
    item_pool = np.arange(num_items, dtype=np.int64)

    for u in users:
        row = data.items_of(u)
        ts = data.timestamps_of(u)
        if ts is not None:
            held = row[int(np.argmax(ts))]
        else:
            held = row[int(rng.integers(row.size))]
        holdout[u] = held

        blocked = np.zeros(num_items, dtype=bool)
        if allow_seen_negatives:
            blocked[held] = True
        else:
            blocked[row] = True  # includes the holdout
        pool = item_pool[~blocked]
        if pool.size < n_negatives:
            raise InputError(
                f"user {u}: only {pool.size} candidate items for "
                f"{n_negatives} negatives"
            )
        negatives[u] = rng.choice(pool, size=n_negatives, replace=False)

    all_u, all_i = data.pairs()
    keep = all_i != holdout[all_u]
    train = InteractionSet.from_pairs(
        all_u[keep], all_i[keep],
        num_users=data.num_users, num_items=data.num_items,
        timestamps=None if data.timestamps is None else data.timestamps[keep],
        user_ids=data.user_ids, item_ids=data.item_ids,
    )
    return LeaveOneOutSplit(train=train, users=users, holdout=holdout, negatives=negatives)


# ---------------------------------------------------------------------------
# split directory I/O
# ---------------------------------------------------------------------------

STRONG_GEN_FILES = ("train.csv", "validation_fold_in.csv", "validation_target.csv",
                    "test_fold_in.csv", "test_target.csv")
LOO_FILES = ("train.csv", "test_holdout.csv", "test_negatives.csv")


def _write_pairs(path, users, items):
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in zip(users, items):
            fh.write(f"{u},{i}\n")


def _write_holdout_users(path, holdout_users, part):
    with open(path, "w", encoding="utf-8") as fh:
        for hu in holdout_users:
            for i in getattr(hu, part):
                fh.write(f"{hu.user},{i}\n")


def _read_int_rows(path, min_fields=2):
    """Integer CSV rows; the first line is skipped if it does not parse."""
    rows = []
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.replace("\t", ",").split(",")
            try:
                row = [int(f) for f in fields]
            except ValueError as exc:
                if lineno == 1:
                    continue
                raise ParseError(f"{path} line {lineno}: {exc}") from exc
            if len(row) < min_fields:
                raise ParseError(f"{path} line {lineno}: expected >= {min_fields} fields")
            rows.append(row)
    return rows


def write_id_maps(out_dir, data: InteractionSet) -> None:
    """Persist external-id maps as (external_id, internal_index) CSVs."""
    for name, ids in (("user_map.csv", data.user_ids), ("item_map.csv", data.item_ids)):
        if ids is None:
            continue
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            for idx, ext in enumerate(ids):
                fh.write(f"{ext},{idx}\n")


def save_strong_generalization(out_dir, validation: StrongGeneralizationSplit,
                               test: StrongGeneralizationSplit) -> None:
    os.makedirs(out_dir, exist_ok=True)
    out = Path(out_dir)
    _write_pairs(out / "train.csv", *validation.train.pairs())
    _write_holdout_users(out / "validation_fold_in.csv", validation.users, "fold_in")
    _write_holdout_users(out / "validation_target.csv", validation.users, "target")
    _write_holdout_users(out / "test_fold_in.csv", test.users, "fold_in")
    _write_holdout_users(out / "test_target.csv", test.users, "target")


def save_leave_one_out(out_dir, split: LeaveOneOutSplit) -> None:
    os.makedirs(out_dir, exist_ok=True)
    out = Path(out_dir)
    _write_pairs(out / "train.csv", *split.train.pairs())
    _write_pairs(out / "test_holdout.csv", split.users, split.holdout)
    with open(out / "test_negatives.csv", "w", encoding="utf-8") as fh:
        for u, negs in zip(split.users, split.negatives):
            fh.write(",".join([str(u)] + [str(n) for n in negs]) + "\n")


def _group_eval_users(rows) -> dict[int, list[int]]:
    grouped: dict[int, list[int]] = {}
    for u, i in rows:
        grouped.setdefault(u, []).append(i)
    return grouped


def load_strong_generalization(split_dir) -> tuple[StrongGeneralizationSplit | None,
                                                   StrongGeneralizationSplit]:
    """Load a strong-generalization split directory verbatim.

    Returns (validation, test); validation is None when its files are
    absent.  The item vocabulary is the union over all files so published
    splits evaluate exactly as distributed.
    """
    d = Path(split_dir)
    train_rows = _read_int_rows(d / "train.csv")
    parts = {}
    for part in ("validation", "test"):
        fi, tg = d / f"{part}_fold_in.csv", d / f"{part}_target.csv"
        if fi.exists() and tg.exists():
            parts[part] = (_read_int_rows(fi), _read_int_rows(tg))
        elif part == "test":
            raise InputError(f"{d}: missing {part}_fold_in.csv / {part}_target.csv")

    max_item = max((r[1] for r in train_rows), default=-1)
    max_user = max((r[0] for r in train_rows), default=-1)
    for fi_rows, tg_rows in parts.values():
        for rows in (fi_rows, tg_rows):
            for u, i in rows:
                max_item = max(max_item, i)
                max_user = max(max_user, u)

    train = InteractionSet.from_pairs(
        np.array([r[0] for r in train_rows], dtype=np.int64),
        np.array([r[1] for r in train_rows], dtype=np.int64),
        num_users=max_user + 1, num_items=max_item + 1,
    )

    def build(part) -> StrongGeneralizationSplit:
        fi_rows, tg_rows = parts[part]
        fold_in = _group_eval_users(fi_rows)
        target = _group_eval_users(tg_rows)
        users = []
        for u in sorted(set(fold_in) | set(target)):
            tg = target.get(u)
            if not tg:
                log.warning("%s: user %d has no target items, skipping", split_dir, u)
                continue
            users.append(HoldoutUser(
                user=u,
                fold_in=np.array(sorted(fold_in.get(u, [])), dtype=np.int64),
                target=np.array(sorted(tg), dtype=np.int64),
            ))
        return StrongGeneralizationSplit(train=train, users=users)

    validation = build("validation") if "validation" in parts else None
    return validation, build("test")


def load_leave_one_out(split_dir) -> LeaveOneOutSplit:
    """Load a leave-one-out split directory verbatim."""
    d = Path(split_dir)
    train_rows = _read_int_rows(d / "train.csv")
    holdout_rows = _read_int_rows(d / "test_holdout.csv")
    neg_rows = _read_int_rows(d / "test_negatives.csv")

    n_negs = {len(r) - 1 for r in neg_rows}
    if len(n_negs) > 1:
        raise InputError(f"{d}/test_negatives.csv: inconsistent row widths {sorted(n_negs)}")

    max_user = max(r[0] for r in train_rows + holdout_rows + neg_rows)
    max_item = max(
        max(r[1] for r in train_rows),
        max(r[1] for r in holdout_rows),
        max(max(r[1:]) for r in neg_rows),
    )

    train = InteractionSet.from_pairs(
        np.array([r[0] for r in train_rows], dtype=np.int64),
        np.array([r[1] for r in train_rows], dtype=np.int64),
        num_users=max_user + 1, num_items=max_item + 1,
    )
    holdout_map = {u: i for u, i in holdout_rows}
    neg_map = {r[0]: r[1:] for r in neg_rows}
    if set(holdout_map) != set(neg_map):
        raise InputError(f"{d}: holdout and negatives cover different users")

    users = np.array(sorted(holdout_map), dtype=np.int64)
    holdout = np.array([holdout_map[u] for u in users], dtype=np.int64)
    negatives = np.array([neg_map[u] for u in users], dtype=np.int64)
    return LeaveOneOutSplit(train=train, users=users, holdout=holdout, negatives=negatives)
