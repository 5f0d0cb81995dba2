"""Independent oracles and small builders shared across the test modules.

The enumeration oracle computes manifest probabilities and posteriors by
summing over every latent path explicitly; it never touches the library's
forward/backward code, so agreement is a real check of the recursion.
"""

import itertools
import math

import numpy as np

from lmirt import (ChainParams, ConstraintSet, Dataset, ItemBank, ItemParams,
                   MeasurementMode, ModelSpec, ParamSet, RegimePlan,
                   AbilitySupport)


def log_sigmoid_oracle(x: float) -> float:
    """Stable log-sigmoid via the math module (independent of numpy paths)."""
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def enumerate_paths(pinit, trans_by_step, emit):
    """Manifest probability and posteriors by explicit path enumeration.

    pinit: (k,) initial probabilities; trans_by_step: list of T-1 matrices
    (step into occasion t uses trans_by_step[t-1]); emit: (T, k) response
    probabilities given the state. Returns (loglik, state_post, trans_post).
    """
    pinit = np.asarray(pinit, dtype=float)
    emit = np.asarray(emit, dtype=float)
    big_t, k = emit.shape
    total = 0.0
    state_post = np.zeros((big_t, k))
    trans_post = np.zeros((max(big_t - 1, 0), k, k))
    for path in itertools.product(range(k), repeat=big_t):
        prob = pinit[path[0]] * emit[0, path[0]]
        for t in range(1, big_t):
            prob *= trans_by_step[t - 1][path[t - 1], path[t]] * emit[t, path[t]]
        total += prob
        for t in range(big_t):
            state_post[t, path[t]] += prob
        for t in range(1, big_t):
            trans_post[t - 1, path[t - 1], path[t]] += prob
    return math.log(total), state_post / total, trans_post / total


def emission_for(record_items, record_responses, table):
    """(T, k) matrix of response probabilities from a success table."""
    lam = np.asarray(table, dtype=float)[np.asarray(record_items)]
    y = np.asarray(record_responses)[:, None]
    return np.where(y == 1, lam, 1.0 - lam)


def random_instance(rng, k=None, n_trials=None, n_items=None, n_regimes=None,
                    two_pl=False):
    """A random (spec, params, record arrays) instance for oracle checks."""
    k = k if k is not None else int(rng.integers(1, 4))
    n_trials = n_trials if n_trials is not None else int(rng.integers(1, 9))
    n_items = n_items if n_items is not None else int(rng.integers(1, 4))
    n_regimes = n_regimes if n_regimes is not None else int(rng.integers(1, 4))
    p = int(rng.integers(1, 3))

    if two_pl:
        n_dims = 1 if n_items == 1 else int(rng.integers(1, min(n_items, 2) + 1))
        dims = [int(d) for d in rng.integers(0, n_dims, n_items)]
        for d in range(n_dims):  # every dimension needs at least one item
            if d not in dims:
                dims[d % n_items] = d
        refs = tuple(dims.index(d) for d in range(n_dims))
        bank = ItemBank(tuple(dims), MeasurementMode.TWO_PL, refs)
    else:
        bank = ItemBank.unconstrained(n_items)
    spec = ModelSpec(k, bank, RegimePlan(n_regimes),
                     ConstraintSet.singletons(n_regimes), p)

    if two_pl:
        beta = rng.normal(0.0, 1.0, n_items)
        gamma = np.exp(rng.normal(0.0, 0.3, n_items))
        for ref in bank.reference_items:
            beta[ref] = 0.0
            gamma[ref] = 1.0
        support = AbilitySupport(np.sort(rng.normal(0.0, 2.0, (k, bank.n_dims)),
                                         axis=0))
        items = ItemParams(difficulty=beta, discrimination=gamma)
    else:
        items = ItemParams(success_table=rng.uniform(0.05, 0.95, (n_items, k)))
        support = None

    mats = rng.uniform(0.1, 1.0, (n_regimes, k, k))
    mats /= mats.sum(axis=2, keepdims=True)
    coefs = rng.normal(0.0, 0.8, (k - 1, p))
    params = ParamSet(items, support,
                      ChainParams(coefs, mats, np.arange(n_regimes)))

    x = np.concatenate([[1.0], rng.normal(0.0, 1.0, p - 1)])
    rec_items = rng.integers(0, n_items, n_trials)
    rec_regimes = np.concatenate([[-1], rng.integers(0, n_regimes, n_trials - 1)])
    rec_responses = rng.integers(0, 2, n_trials).astype(np.int8)
    return spec, params, x, rec_items, rec_regimes, rec_responses


def single_subject_dataset(x, items, regimes, responses) -> Dataset:
    n_trials = len(items)
    return Dataset(np.asarray(x, dtype=float)[None, :],
                   np.asarray(items)[None, :],
                   np.asarray(regimes)[None, :],
                   np.asarray(responses, dtype=np.int8)[None, :],
                   np.array([n_trials]))


def unconstrained_spec(k, n_items=2, n_regimes=1, p=1,
                       constraints=None) -> ModelSpec:
    return ModelSpec(k, ItemBank.unconstrained(n_items), RegimePlan(n_regimes),
                     constraints or ConstraintSet.singletons(n_regimes), p)


def table_params(spec, table, mats, coefs=None) -> ParamSet:
    k = spec.n_states
    coefs = (np.zeros((k - 1, spec.n_effective_covariates))
             if coefs is None else np.asarray(coefs, dtype=float))
    return ParamSet(ItemParams(success_table=np.asarray(table, dtype=float)),
                    None,
                    ChainParams(coefs, np.asarray(mats, dtype=float),
                                spec.regime_class_map()))
