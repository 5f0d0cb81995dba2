"""Success probabilities of item responses given the latent state.

All likelihood work happens through the log-space forms: ability values in
the target applications reach magnitudes of 35-40 logits, where the linear
complement 1 - sigmoid(x) is pure rounding noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model_spec import ItemBank, MeasurementMode


@dataclass
class ItemParams:
    """Item-side measurement parameters.

    ``difficulty`` and ``discrimination`` (length J) drive the logistic
    modes; under ONE_PL every discrimination is 1. ``success_table`` is the
    J x k free probability table of the UNCONSTRAINED mode; the logistic
    arrays are None there and vice versa.
    """

    difficulty: np.ndarray | None = None
    discrimination: np.ndarray | None = None
    success_table: np.ndarray | None = None

    def copy(self) -> "ItemParams":
        return ItemParams(
            None if self.difficulty is None else self.difficulty.copy(),
            None if self.discrimination is None else self.discrimination.copy(),
            None if self.success_table is None else self.success_table.copy(),
        )


@dataclass
class AbilitySupport:
    """Ability value of each latent state on each effective dimension.

    ``levels`` has shape (k, s_eff). Canonical state order sorts ascending
    on the first column; fitted results are reported in that order.
    """

    levels: np.ndarray

    @property
    def n_states(self) -> int:
        return self.levels.shape[0]

    def is_canonical(self) -> bool:
        col = self.levels[:, 0]
        return bool(np.all(col[:-1] <= col[1:]))

    def copy(self) -> "AbilitySupport":
        return AbilitySupport(self.levels.copy())


def log_sigmoid(x):
    """log(sigmoid(x)), stable over the whole float range."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


def sigmoid(x):
    return np.exp(log_sigmoid(x))


def success_logit_table(items: ItemParams, support: AbilitySupport,
                        bank: ItemBank) -> np.ndarray:
    """J x k matrix of success logits for the logistic modes."""
    if bank.mode is MeasurementMode.UNCONSTRAINED:
        raise ValueError("the unconstrained mode has no logit representation")
    dims = bank.dims_array()
    if support.levels.shape[1] == 1:
        dims = np.zeros_like(dims)  # unidimensional collapse
    ability = support.levels[:, dims].T  # (J, k)
    logits = ability - items.difficulty[:, None]
    if bank.mode is MeasurementMode.TWO_PL:
        logits = items.discrimination[:, None] * logits
    return logits


def success_prob_table(items: ItemParams, support: AbilitySupport | None,
                       bank: ItemBank) -> np.ndarray:
    """J x k matrix of success probabilities under any mode."""
    if bank.mode is MeasurementMode.UNCONSTRAINED:
        return np.asarray(items.success_table, dtype=float)
    return sigmoid(success_logit_table(items, support, bank))


def log_prob_tables(items: ItemParams, support: AbilitySupport | None,
                    bank: ItemBank) -> tuple[np.ndarray, np.ndarray]:
    """(log lambda, log(1 - lambda)) tables, each J x k."""
    if bank.mode is MeasurementMode.UNCONSTRAINED:
        table = np.asarray(items.success_table, dtype=float)
        with np.errstate(divide="ignore"):
            return np.log(table), np.log1p(-table)
    logits = success_logit_table(items, support, bank)
    return log_sigmoid(logits), log_sigmoid(-logits)


def _check_indices(item: int, state: int, n_items: int, n_states: int) -> None:
    if not 0 <= item < n_items:
        raise IndexError(f"item {item} out of range [0, {n_items})")
    if not 0 <= state < n_states:
        raise IndexError(f"state {state} out of range [0, {n_states})")


def success_prob(item: int, state: int, items: ItemParams,
                 support: AbilitySupport | None, bank: ItemBank) -> float:
    """P(correct response | item type, latent state)."""
    if bank.mode is MeasurementMode.UNCONSTRAINED:
        table = np.asarray(items.success_table, dtype=float)
        _check_indices(item, state, *table.shape)
        return float(table[item, state])
    _check_indices(item, state, bank.n_items, support.n_states)
    d = bank.item_dims[item] if support.levels.shape[1] > 1 else 0
    logit = support.levels[state, d] - items.difficulty[item]
    if bank.mode is MeasurementMode.TWO_PL:
        logit *= items.discrimination[item]
    return float(sigmoid(logit))


def log_success_prob(item: int, state: int, items: ItemParams,
                     support: AbilitySupport | None,
                     bank: ItemBank) -> tuple[float, float]:
    """(log lambda, log(1 - lambda)) for one (item, state) pair.

    Stable for |logit| far beyond 50: each side is computed directly from
    the logit instead of complementing the other.
    """
    if bank.mode is MeasurementMode.UNCONSTRAINED:
        table = np.asarray(items.success_table, dtype=float)
        _check_indices(item, state, *table.shape)
        lam = table[item, state]
        with np.errstate(divide="ignore"):
            return float(np.log(lam)), float(np.log1p(-lam))
    _check_indices(item, state, bank.n_items, support.n_states)
    d = bank.item_dims[item] if support.levels.shape[1] > 1 else 0
    logit = support.levels[state, d] - items.difficulty[item]
    if bank.mode is MeasurementMode.TWO_PL:
        logit *= items.discrimination[item]
    return float(log_sigmoid(logit)), float(log_sigmoid(-logit))


def bernoulli_prob(y: int, lam: float) -> float:
    """P(response = y) for success probability ``lam``."""
    if y not in (0, 1):
        raise ValueError(f"binary response expected, got {y}")
    return float(lam if y == 1 else 1.0 - lam)


def canonical_state_order(items: ItemParams, support: AbilitySupport | None,
                          bank: ItemBank) -> np.ndarray:
    """Permutation putting states into canonical order.

    Logistic modes sort ascending by the first ability dimension; the
    unconstrained mode (no abilities) sorts by mean success probability
    across items. Stable, so ties keep their relative order.
    """
    if bank.mode is MeasurementMode.UNCONSTRAINED:
        key = np.asarray(items.success_table, dtype=float).mean(axis=0)
    else:
        key = support.levels[:, 0]
    return np.argsort(key, kind="stable")
