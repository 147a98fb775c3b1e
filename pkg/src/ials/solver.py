"""Alternating least squares for implicit feedback.

The objective has three parts: a squared error on observed pairs pushing
scores to 1, an implicit term alpha0 * sum of squared scores over ALL
user-item pairs (observed ones included), and a per-entity L2 penalty
whose weight scales with interaction frequency:

    lambda_u = lambda * (|I(u)| + alpha0 * |I|) ** nu

Fixing one side turns each embedding row into an independent ridge
regression whose normal matrix needs only the Gramian of the fixed side,
so a half-step never touches the |U| * |I| dense score matrix.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .dataset import InteractionSet
from .errors import InputError
from .linalg import gramian, solve_spd
from .model import FactorModel, init_model

SOLVER_KINDS = ("exact", "block")

# chunk length for streaming the observed-pair loss; bounds peak memory
# at roughly 2 * chunk * dim floats
_LOSS_CHUNK = 16384


@dataclass(frozen=True)
class Hyperparameters:
    """Training configuration.

    Regularization comes in two modes: direct (lambda_ set) or normalized
    (lambda_star set), where the actual lambda is rescaled per dataset so
    that the total penalty mass matches what exponent nu_star would give.
    Exactly one of lambda_ / lambda_star must be set.
    """

    dim: int
    alpha0: float
    lambda_: float | None = None
    lambda_star: float | None = None
    nu: float = 1.0
    nu_star: float = 1.0
    iterations: int = 16
    sigma_star: float = 0.1
    seed: int = 0
    solver: str = "exact"
    block_size: int = 128
    projection_repeats: int = 8

    def __post_init__(self):
        if self.dim < 1:
            raise InputError("dim must be >= 1")
        if self.alpha0 < 0:
            raise InputError("alpha0 must be >= 0")
        if (self.lambda_ is None) == (self.lambda_star is None):
            raise InputError("set exactly one of lambda_ / lambda_star")
        reg = self.lambda_ if self.lambda_ is not None else self.lambda_star
        if reg < 0:
            raise InputError("regularization strength must be >= 0")
        if not 0.0 <= self.nu <= 1.0 or not 0.0 <= self.nu_star <= 1.0:
            raise InputError("nu and nu_star must lie in [0, 1]")
        if self.iterations < 0:
            raise InputError("iterations must be >= 0")
        if self.sigma_star < 0:
            raise InputError("sigma_star must be >= 0")
        if self.solver not in SOLVER_KINDS:
            raise InputError(f"solver must be one of {SOLVER_KINDS}")
        if self.block_size < 1 or self.projection_repeats < 1:
            raise InputError("block_size and projection_repeats must be >= 1")

    @property
    def reg_mode(self) -> str:
        return "direct" if self.lambda_ is not None else "normalized"

    def resolve(self, data: InteractionSet) -> "Hyperparameters":
        """Return a direct-mode copy; normalized lambda_star is rescaled on data."""
        if self.lambda_ is not None:
            return self
        lam = effective_lambda(self.lambda_star, self.nu, self.nu_star, data, self.alpha0)
        return dataclasses.replace(self, lambda_=lam, lambda_star=None)


@dataclass(frozen=True)
class LossReport:
    """Loss decomposition after one iteration; L = L_S + L_I + R."""

    iteration: int
    L: float
    L_S: float
    L_I: float
    R: float


def regularization_weight(count: int, other_side_size: int, alpha0: float,
                          nu: float, lambda_: float) -> float:
    """Frequency-scaled L2 weight lambda * (count + alpha0*other_side_size)**nu."""
    return lambda_ * float(count + alpha0 * other_side_size) ** nu


def _penalty_base(counts: np.ndarray, other_side_size: int, alpha0: float) -> np.ndarray:
    return counts.astype(np.float64) + alpha0 * other_side_size


def effective_lambda_from_counts(lambda_star: float, nu: float, nu_star: float,
                                 user_counts, item_counts, alpha0: float) -> float:
    """Rescaled lambda from raw degree profiles (see effective_lambda)."""
    user_counts = np.asarray(user_counts, dtype=np.float64)
    item_counts = np.asarray(item_counts, dtype=np.float64)
    u_base = _penalty_base(user_counts, item_counts.size, alpha0)
    i_base = _penalty_base(item_counts, user_counts.size, alpha0)

    def mass(exponent: float) -> float:
        return float(np.power(u_base, exponent).sum() + np.power(i_base, exponent).sum())

    # Same code path for both sums, and the ratio is formed first: when
    # nu == nu_star it is exactly 1.0 and lambda_star passes through bitwise.
    return lambda_star * (mass(nu_star) / mass(nu))


def effective_lambda(lambda_star: float, nu: float, nu_star: float,
                     data: InteractionSet, alpha0: float) -> float:
    """Rescale lambda_star from reference exponent nu_star to exponent nu.

    The returned lambda makes the summed per-entity penalty weights under
    nu equal to what lambda_star would give under nu_star, keeping good
    regularization strengths on one scale while nu varies.
    """
    return effective_lambda_from_counts(
        lambda_star, nu, nu_star, data.user_counts, data.item_counts, alpha0)


def solve_entity(history: np.ndarray, G: np.ndarray, alpha0: float,
                 lambda_entity: float) -> np.ndarray:
    """Closed-form embedding for one entity given the fixed side.

    Args:
        history: (n, d) embedding rows of the entity's observed partners.
        G: (d, d) Gramian of the FULL fixed-side matrix.  The implicit
            term covers every pair, so observed rows contribute weight
            1 + alpha0 in total.
        alpha0: implicit-term weight.
        lambda_entity: this entity's L2 weight.

    Returns:
        argmin_x sum_history (x.h - 1)^2 + alpha0*x'Gx + lambda_entity*|x|^2.
    """
    d = G.shape[0]
    history = np.asarray(history, dtype=np.float64).reshape(-1, d)
    if history.shape[0] == 0:
        return np.zeros(d)  # b = 0 and A is PD, so the minimizer is 0
    A = history.T @ history + alpha0 * G
    A[np.diag_indices_from(A)] += lambda_entity
    b = history.sum(axis=0)
    return solve_spd(A, b)


def solve_entity_block(current: np.ndarray, history: np.ndarray, G: np.ndarray,
                       alpha0: float, lambda_entity: float, block_size: int) -> np.ndarray:
    """One cyclic pass of exact block coordinate descent on the entity quadratic.

    Uses the same A, b as solve_entity.  Each contiguous coordinate block
    is minimized exactly with the other coordinates held at their current
    values, in order; the fixed point of repeated passes is the
    solve_entity solution.  Returns a new vector; current is not modified.
    """
    d = G.shape[0]
    history = np.asarray(history, dtype=np.float64).reshape(-1, d)
    x = np.array(current, dtype=np.float64, copy=True)
    if x.shape != (d,):
        raise InputError(f"current has shape {x.shape}, expected ({d},)")
    A = history.T @ history + alpha0 * G
    A[np.diag_indices_from(A)] += lambda_entity
    b = history.sum(axis=0)
    for start in range(0, d, block_size):
        end = min(start + block_size, d)
        # rhs = b_B - A[B, outside] @ x[outside]; adding back the in-block
        # product avoids materializing the complement index set.
        rhs = b[start:end] - A[start:end] @ x + A[start:end, start:end] @ x[start:end]
        x[start:end] = solve_spd(A[start:end, start:end], rhs)
    return x


def _update_side(factors: np.ndarray, fixed: np.ndarray, ptr: np.ndarray,
                 partners: np.ndarray, hp: Hyperparameters) -> None:
    """Re-solve every row of `factors` against the fixed side, in place."""
    G = gramian(fixed)
    other_side_size = fixed.shape[0]
    for e in range(factors.shape[0]):
        rows = fixed[partners[ptr[e]:ptr[e + 1]]]
        lam = regularization_weight(rows.shape[0], other_side_size,
                                    hp.alpha0, hp.nu, hp.lambda_)
        if hp.solver == "block":
            factors[e] = solve_entity_block(factors[e], rows, G,
                                            hp.alpha0, lam, hp.block_size)
        else:
            factors[e] = solve_entity(rows, G, hp.alpha0, lam)


def update_users(model: FactorModel, data: InteractionSet, hp: Hyperparameters) -> None:
    """Half-step: re-solve all user embeddings with items fixed (mutates W)."""
    hp = hp.resolve(data)
    _update_side(model.user_factors, model.item_factors,
                 data.user_ptr, data.user_items, hp)


def update_items(model: FactorModel, data: InteractionSet, hp: Hyperparameters) -> None:
    """Half-step: re-solve all item embeddings with users fixed (mutates H)."""
    hp = hp.resolve(data)
    _update_side(model.item_factors, model.user_factors,
                 data.item_ptr, data.item_users, hp)


def compute_losses(model: FactorModel, data: InteractionSet,
                   hp: Hyperparameters, iteration: int = 0) -> LossReport:
    """Evaluate the full objective without forming the dense score matrix.

    The implicit term uses the Frobenius inner product of the two
    Gramians: alpha0 * <W'W, H'H> equals alpha0 * sum of all squared
    scores.  The observed term streams over S in chunks.
    """
    hp = hp.resolve(data)
    W, H = model.user_factors, model.item_factors

    loss_s = 0.0
    users, items = data.pairs()
    for start in range(0, users.size, _LOSS_CHUNK):
        u = users[start:start + _LOSS_CHUNK]
        i = items[start:start + _LOSS_CHUNK]
        scores = np.einsum("ij,ij->i", W[u], H[i])
        loss_s += float(((scores - 1.0) ** 2).sum())

    loss_i = hp.alpha0 * float(np.tensordot(gramian(W), gramian(H)))

    lam_u = hp.lambda_ * np.power(
        _penalty_base(data.user_counts, data.num_items, hp.alpha0), hp.nu)
    lam_i = hp.lambda_ * np.power(
        _penalty_base(data.item_counts, data.num_users, hp.alpha0), hp.nu)
    reg = float(lam_u @ (W ** 2).sum(axis=1) + lam_i @ (H ** 2).sum(axis=1))

    return LossReport(iteration=iteration, L=loss_s + loss_i + reg,
                      L_S=loss_s, L_I=loss_i, R=reg)


def project_user(history_items, H: np.ndarray, G_H: np.ndarray,
                 hp: Hyperparameters) -> np.ndarray:
    """Fold-in: embedding for an unseen user from their item history.

    Exact solver: the closed-form solve, identical to a training user
    whose item set equals history_items.  Block solver: projection_repeats
    cyclic block passes starting from the zero vector.

    hp must be in direct mode (resolve against the training set first);
    there is no dataset here to derive a normalized lambda from.
    """
    if hp.lambda_ is None:
        raise InputError("project_user needs direct-mode hyperparameters; "
                         "call hp.resolve(train_data) first")
    history_items = np.asarray(history_items, dtype=np.int64)
    rows = H[history_items]
    lam = regularization_weight(history_items.size, H.shape[0],
                                hp.alpha0, hp.nu, hp.lambda_)
    if hp.solver == "block":
        x = np.zeros(G_H.shape[0])
        for _ in range(hp.projection_repeats):
            x = solve_entity_block(x, rows, G_H, hp.alpha0, lam, hp.block_size)
        return x
    return solve_entity(rows, G_H, hp.alpha0, lam)


def train(data: InteractionSet, hp: Hyperparameters, observer=None, eval_fn=None,
          ) -> tuple[FactorModel, list[LossReport]]:
    """Run T alternating iterations from a fresh seeded initialization.

    Each iteration updates users then items and evaluates the loss.  The
    observer, when given, is called after every iteration as
    observer(iteration, LossReport, metrics) where metrics is eval_fn's
    result (eval_fn takes the current model) or None.

    Returns the trained model and the per-iteration loss reports.
    """
    hp = hp.resolve(data)
    model = init_model(data.num_users, data.num_items, hp.dim,
                       sigma_star=hp.sigma_star, seed=hp.seed)
    reports: list[LossReport] = []
    for t in range(1, hp.iterations + 1):
        update_users(model, data, hp)
        update_items(model, data, hp)
        report = compute_losses(model, data, hp, iteration=t)
        reports.append(report)
        metrics = eval_fn(model) if eval_fn is not None else None
        if observer is not None:
            observer(t, report, metrics)
    return model, reports
