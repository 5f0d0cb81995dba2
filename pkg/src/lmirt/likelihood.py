"""Manifest likelihood of response sequences and E-step posteriors.

The forward pass implements the matrix recursion
``l_t = diag(emission_t) @ transition_t' @ l_{t-1}`` with per-step
rescaling: each step vector is normalized to sum 1 and the log of the
normalizer accumulated, so sequences of length 132 with emission
probabilities as small as exp(-100) stay finite. The backward pass reuses
the same scale factors, which makes the state and pairwise posteriors come
out normalized up to float rounding.

Transition regimes attach to the destination occasion: the matrix of regime
``regimes[t]`` governs the step from occasion t-1 into occasion t.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateLikelihoodError, SpecValidationError
from .model_spec import ModelSpec
from .response_model import AbilitySupport, ItemParams, log_prob_tables

_DEGENERATE_DOC = "renormalized forward vector vanished"


@dataclass
class ChainParams:
    """Latent-chain parameters.

    ``init_coefs`` is the (k-1) x p coefficient matrix of the
    baseline-logit parameterization of the initial probabilities (state 0
    is the baseline with zero coefficients). ``class_transition`` stores one
    stochastic k x k matrix per transition equality class;
    ``regime_class`` maps each regime to its class, so tied regimes share
    one matrix by construction.
    """

    init_coefs: np.ndarray
    class_transition: np.ndarray
    regime_class: np.ndarray

    @property
    def n_states(self) -> int:
        return self.class_transition.shape[1]

    def transition_stack(self) -> np.ndarray:
        """(R, k, k) view with one matrix per regime."""
        return self.class_transition[self.regime_class]

    def copy(self) -> "ChainParams":
        return ChainParams(self.init_coefs.copy(), self.class_transition.copy(),
                           self.regime_class.copy())


@dataclass
class ParamSet:
    """One point in parameter space: measurement + ability + chain parts."""

    items: ItemParams
    support: AbilitySupport | None
    chain: ChainParams

    def copy(self) -> "ParamSet":
        return ParamSet(self.items.copy(),
                        None if self.support is None else self.support.copy(),
                        self.chain.copy())


@dataclass
class SubjectRecord:
    """One subject's covariates and ordered trials.

    ``regimes[0]`` is ignored (use -1); every later entry names the regime
    of the step into that occasion.
    """

    covariates: np.ndarray
    items: np.ndarray
    regimes: np.ndarray
    responses: np.ndarray

    @property
    def n_trials(self) -> int:
        return len(self.items)


class Dataset:
    """Padded array view of a set of subjects, ready for vectorized passes."""

    def __init__(self, covariates, items, regimes, responses, lengths,
                 subject_ids=None):
        self.covariates = np.asarray(covariates, dtype=float)
        self.items = np.asarray(items, dtype=np.int64)
        self.regimes = np.asarray(regimes, dtype=np.int64)
        self.responses = np.asarray(responses, dtype=np.int8)
        self.lengths = np.asarray(lengths, dtype=np.int64)
        self.subject_ids = (tuple(subject_ids) if subject_ids is not None
                            else tuple(str(i) for i in range(len(self.lengths))))
        self.mask = np.arange(self.items.shape[1])[None, :] < self.lengths[:, None]

    @classmethod
    def from_records(cls, records: Sequence[SubjectRecord], subject_ids=None):
        n = len(records)
        if n == 0:
            raise ValueError("empty dataset")
        t_max = max(r.n_trials for r in records)
        p = len(records[0].covariates)
        covariates = np.zeros((n, p))
        items = np.full((n, t_max), -1, dtype=np.int64)
        regimes = np.full((n, t_max), -1, dtype=np.int64)
        responses = np.zeros((n, t_max), dtype=np.int8)
        lengths = np.zeros(n, dtype=np.int64)
        for i, rec in enumerate(records):
            t = rec.n_trials
            covariates[i] = rec.covariates
            items[i, :t] = rec.items
            regimes[i, :t] = rec.regimes
            regimes[i, 0] = -1
            responses[i, :t] = rec.responses
            lengths[i] = t
        return cls(covariates, items, regimes, responses, lengths, subject_ids)

    @property
    def n_subjects(self) -> int:
        return len(self.lengths)

    @property
    def max_length(self) -> int:
        return self.items.shape[1]

    @property
    def total_trials(self) -> int:
        return int(self.lengths.sum())

    def record(self, i: int) -> SubjectRecord:
        t = self.lengths[i]
        return SubjectRecord(self.covariates[i].copy(), self.items[i, :t].copy(),
                             self.regimes[i, :t].copy(), self.responses[i, :t].copy())

    def validate_against(self, spec: ModelSpec) -> list[str]:
        """Conformance problems of this dataset under ``spec`` (empty = ok)."""
        problems = []
        if self.covariates.shape[1] != spec.n_covariates:
            problems.append(
                f"covariate width {self.covariates.shape[1]} != spec's {spec.n_covariates}")
        m = self.mask
        items = self.items[m]
        if items.size and (items.min() < 0 or items.max() >= spec.n_items):
            problems.append("item type out of range")
        steps = m.copy()
        steps[:, 0] = False
        regs = self.regimes[steps]
        if regs.size and (regs.min() < 0 or regs.max() >= spec.n_regimes):
            problems.append("regime missing or out of range for an occasion >= 2")
        if self.lengths.min() < 1:
            problems.append("every subject needs at least one trial")
        resp = self.responses[m]
        if resp.size and not np.isin(resp, (0, 1)).all():
            problems.append("responses must be 0/1")
        return problems


@dataclass
class ForwardResult:
    """Scaled forward pass for one subject."""

    log_manifest: float
    scaled_forward: np.ndarray  # (T, k), each row sums to 1
    log_scales: np.ndarray      # (T,), log_manifest is their sum


@dataclass
class ForwardBackwardResult:
    """E-step posteriors for one subject.

    ``trans_post[t-1]`` is the k x k matrix of pairwise posteriors for the
    step from occasion t-1 into occasion t (so it has T-1 slices).
    """

    log_manifest: float
    state_post: np.ndarray
    trans_post: np.ndarray


@dataclass
class PosteriorSet:
    """Vectorized posteriors for a whole dataset.

    ``trans[:, t]`` holds the pairwise posteriors of the step into occasion
    t (slice 0 is unused); padded occasions are zero.
    """

    state: np.ndarray            # (n, T, k)
    trans: np.ndarray            # (n, T, k, k)
    loglik_by_subject: np.ndarray
    total_loglik: float


def initial_probs(x: np.ndarray, init_coefs: np.ndarray) -> np.ndarray:
    """Initial state probabilities for one covariate vector."""
    return initial_prob_matrix(np.asarray(x, dtype=float)[None, :], init_coefs)[0]


def initial_prob_matrix(covariates: np.ndarray, init_coefs: np.ndarray) -> np.ndarray:
    """(n, k) initial probabilities under the baseline-logit parameterization."""
    covariates = np.asarray(covariates, dtype=float)
    n = covariates.shape[0]
    k = init_coefs.shape[0] + 1
    logits = np.zeros((n, k))
    if k > 1:
        logits[:, 1:] = covariates @ init_coefs.T
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def effective_covariates(data: Dataset, spec: ModelSpec) -> np.ndarray:
    """Design matrix actually entering the initial probabilities."""
    if spec.constraints.covariate_free_init:
        return np.ones((data.n_subjects, 1))
    return data.covariates


def emission_tables(spec: ModelSpec, params: ParamSet) -> tuple[np.ndarray, np.ndarray]:
    """(success, failure) probability tables, each J x k.

    Both sides come from log-space forms so that a success probability of
    1 - 1e-40 still has a representable nonzero complement.
    """
    logp, logq = log_prob_tables(params.items, params.support, spec.item_bank)
    return np.exp(logp), np.exp(logq)


def _emission_matrix(data: Dataset, spec: ModelSpec, params: ParamSet) -> np.ndarray:
    lam_pos, lam_neg = emission_tables(spec, params)
    items = np.clip(data.items, 0, None)
    emit = np.where(data.responses[..., None] == 1, lam_pos[items], lam_neg[items])
    emit[~data.mask] = 1.0
    return emit


def _forward_arrays(data: Dataset, spec: ModelSpec, params: ParamSet):
    """Scaled forward vectors, per-step log-scales and per-subject loglik."""
    n, t_max = data.items.shape
    k = spec.n_states
    emit = _emission_matrix(data, spec, params)
    pinit = initial_prob_matrix(effective_covariates(data, spec),
                                params.chain.init_coefs)
    trans = params.chain.transition_stack()
    reg = np.clip(data.regimes, 0, None)

    fwd = np.zeros((n, t_max, k))
    scales = np.ones((n, t_max))
    log_scales = np.zeros((n, t_max))

    cur = emit[:, 0, :] * pinit
    scale = cur.sum(axis=1)
    bad = ~(scale > 0.0)
    if bad.any():
        raise DegenerateLikelihoodError(np.nonzero(bad)[0].tolist(), 0)
    cur = cur / scale[:, None]
    fwd[:, 0] = cur
    scales[:, 0] = scale
    log_scales[:, 0] = np.log(scale)

    for t in range(1, t_max):
        act = data.mask[:, t]
        if not act.any():
            continue
        step = trans[reg[:, t]]                       # (n, k, k)
        pred = np.einsum("nc,ncd->nd", cur, step)
        nxt = emit[:, t, :] * pred
        scale = nxt.sum(axis=1)
        bad = act & ~(scale > 0.0)
        if bad.any():
            raise DegenerateLikelihoodError(np.nonzero(bad)[0].tolist(), t)
        safe = np.where(act, scale, 1.0)
        cur = np.where(act[:, None], nxt / safe[:, None], cur)
        fwd[:, t] = np.where(act[:, None], cur, 0.0)
        scales[:, t] = safe
        log_scales[:, t] = np.where(act, np.log(safe), 0.0)

    loglik = log_scales.sum(axis=1)
    return fwd, scales, log_scales, loglik, emit, trans, reg


def forward_all(data: Dataset, spec: ModelSpec, params: ParamSet):
    """Per-subject log manifest probabilities for a whole dataset."""
    _, _, _, loglik, _, _, _ = _forward_arrays(data, spec, params)
    return loglik


def forward(record: SubjectRecord, spec: ModelSpec, params: ParamSet) -> ForwardResult:
    """Scaled forward recursion for one subject."""
    data = Dataset.from_records([record])
    fwd, _, log_scales, loglik, _, _, _ = _forward_arrays(data, spec, params)
    return ForwardResult(float(loglik[0]), fwd[0], log_scales[0])


def forward_backward_all(data: Dataset, spec: ModelSpec,
                         params: ParamSet) -> PosteriorSet:
    """State and pairwise-transition posteriors for every subject."""
    problems = data.validate_against(spec)
    if problems:
        raise SpecValidationError(problems)
    n, t_max = data.items.shape
    k = spec.n_states
    fwd, scales, _, loglik, emit, trans, reg = _forward_arrays(data, spec, params)

    state = np.zeros((n, t_max, k))
    pair = np.zeros((n, t_max, k, k))
    back = np.ones((n, k))

    for t in range(t_max - 1, 0, -1):
        act = data.mask[:, t]
        if not act.any():
            continue
        w = fwd[:, t] * back
        wsum = w.sum(axis=1)
        wsafe = np.where(act & (wsum > 0), wsum, 1.0)
        state[:, t] = np.where(act[:, None], w / wsafe[:, None], 0.0)

        step = trans[reg[:, t]]
        contrib = emit[:, t, :] * back                # (n, d)
        z = fwd[:, t - 1][:, :, None] * step * contrib[:, None, :]
        zsum = z.sum(axis=(1, 2))
        zsafe = np.where(act & (zsum > 0), zsum, 1.0)
        pair[:, t] = np.where(act[:, None, None], z / zsafe[:, None, None], 0.0)

        back_new = np.einsum("ncd,nd->nc", step, contrib) / scales[:, t][:, None]
        back = np.where(act[:, None], back_new, back)

    w = fwd[:, 0] * back
    state[:, 0] = w / w.sum(axis=1, keepdims=True)

    return PosteriorSet(state, pair, loglik, float(loglik.sum()))


def forward_backward(record: SubjectRecord, spec: ModelSpec,
                     params: ParamSet) -> ForwardBackwardResult:
    """Posteriors for a single subject."""
    data = Dataset.from_records([record])
    post = forward_backward_all(data, spec, params)
    t = record.n_trials
    return ForwardBackwardResult(float(post.loglik_by_subject[0]),
                                 post.state[0, :t], post.trans[0, 1:t])
