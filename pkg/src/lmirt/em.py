"""EM estimation of the latent Markov item-response model.

The E-step runs the scaled forward-backward pass over all subjects at once.
M-step updates: transition matrices have the classical closed form
(aggregated pairwise posteriors normalized by row), the free success-table
mode has the counting closed form, and the logistic modes solve small
weighted-logistic Newton problems on the (item, state) sufficient-statistic
table. The TWO_PL update alternates items-given-abilities with
abilities-given-items; every sub-step only accepts likelihood-improving
moves, so the overall loglik is non-decreasing (generalized EM).

Multi-start: starting values are drawn by a seeded random rule and the best
converged start wins; per-start final logliks are kept as a multimodality
diagnostic. Fitted states are reported in canonical order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._optim import maximize_weighted_logistic, maximize_weighted_multinomial
from .errors import DegenerateLikelihoodError, EstimationError, SpecValidationError
from .likelihood import (ChainParams, Dataset, ParamSet, PosteriorSet,
                         effective_covariates, forward_all, forward_backward_all,
                         initial_prob_matrix)
from .model_spec import MeasurementMode, ModelSpec, count_free_params, require_valid
from .response_model import (AbilitySupport, ItemParams, canonical_state_order,
                             log_prob_tables)

_ZERO_GAMMA = 1e-10


@dataclass(frozen=True)
class FitOptions:
    """Estimation settings (all defaults are plain engineering choices)."""

    n_starts: int = 5
    seed: int = 0
    tol: float = 1e-8           # relative loglik improvement to declare convergence
    max_iter: int = 1000
    m_step_inner_tol: float = 1e-9
    m_step_inner_max: int = 50
    param_cap: float = 50.0     # |logit|-scale cap guarding against separation

    def check(self) -> None:
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")


@dataclass
class FitResult:
    """Best-of-starts EM outcome."""

    params: ParamSet
    loglik: float
    n_free_params: int
    n_iter: int
    converged: bool
    start_logliks: tuple[float, ...]
    start_histories: tuple[tuple[float, ...], ...]
    notes: tuple[str, ...]
    spec: ModelSpec


def loglik(data: Dataset, spec: ModelSpec, params: ParamSet) -> float:
    """Total manifest log-likelihood at ``params``."""
    return float(forward_all(data, spec, params).sum())


def e_step(data: Dataset, spec: ModelSpec, params: ParamSet):
    """Posteriors of the latent path plus the total log-likelihood."""
    post = forward_backward_all(data, spec, params)
    return post, post.total_loglik


def m_step_transitions(post: PosteriorSet, data: Dataset, spec: ModelSpec,
                       chain: ChainParams):
    """Closed-form transition update per equality class.

    Each free class gets the aggregated pairwise posteriors of its steps,
    normalized by row (identical to dividing by the aggregated occupancy of
    the source state, by the marginalization identity, but exactly
    stochastic). Identity-pinned classes are left at the identity; rows with
    no occupancy keep their previous value and are flagged.
    """
    k = spec.n_states
    class_map = spec.regime_class_map()
    reg = np.clip(data.regimes, 0, None)
    step_class = np.where(data.mask & (data.regimes >= 0), class_map[reg], -1)
    new = chain.class_transition.copy()
    notes: list[str] = []
    for ci in range(spec.constraints.n_classes):
        if spec.constraints.is_identity_class(ci):
            new[ci] = np.eye(k)
            continue
        sel = (step_class == ci).astype(float)
        counts = np.einsum("nt,ntcd->cd", sel, post.trans)
        rowsum = counts.sum(axis=1)
        for c in range(k):
            if rowsum[c] > 1e-300:
                new[ci, c] = counts[c] / rowsum[c]
            else:
                notes.append(f"transition class {ci} row {c} has no occupancy; kept")
    return new, notes


def m_step_initial(post: PosteriorSet, data: Dataset, spec: ModelSpec,
                   init_coefs: np.ndarray, options: FitOptions):
    """Newton update of the initial-probability coefficients."""
    if spec.n_states == 1:
        return init_coefs.copy(), []
    design = effective_covariates(data, spec)
    weights = post.state[:, 0, :]
    coefs, converged = maximize_weighted_multinomial(
        design, weights, init_coefs, cap=options.param_cap,
        tol=options.m_step_inner_tol, max_iter=options.m_step_inner_max)
    notes = [] if converged else ["initial-probability update stopped at iteration cap"]
    if np.abs(coefs).max(initial=0.0) >= options.param_cap - 1e-9:
        notes.append("initial-probability coefficient capped")
    return coefs, notes


def _weighted_cell_counts(post: PosteriorSet, data: Dataset, n_items: int):
    """(weights, successes), each J x k, aggregated over all trials."""
    m = data.mask
    idx = data.items[m]
    w = post.state[m]
    y = data.responses[m].astype(float)
    k = w.shape[1]
    weights = np.zeros((n_items, k))
    successes = np.zeros((n_items, k))
    np.add.at(weights, idx, w)
    np.add.at(successes, idx, w * y[:, None])
    return weights, successes


def m_step_items(post: PosteriorSet, data: Dataset, spec: ModelSpec,
                 items: ItemParams, support: AbilitySupport | None,
                 options: FitOptions):
    """Update of the measurement parameters, dispatched on the mode."""
    n_items, k = spec.n_items, spec.n_states
    weights, successes = _weighted_cell_counts(post, data, n_items)
    mode = spec.item_bank.mode
    notes: list[str] = []

    if mode is MeasurementMode.UNCONSTRAINED:
        table = items.success_table.copy()
        ok = weights > 1e-300
        table[ok] = successes[ok] / weights[ok]
        for j, c in zip(*np.nonzero(~ok)):
            notes.append(f"item {j} state {c}: no weight, kept previous probability")
        return ItemParams(success_table=table), None, notes

    cap = options.param_cap
    s_eff = spec.n_effective_dims
    dims = spec.effective_item_dims()
    refs = set(spec.effective_reference_items())
    free = [j for j in range(n_items) if j not in refs]

    if mode is MeasurementMode.ONE_PL:
        # Joint concave Newton over abilities and free difficulties.
        n_xi = k * s_eff
        design = np.zeros((n_items * k, n_xi + len(free)))
        for j in range(n_items):
            for c in range(k):
                design[j * k + c, c * s_eff + dims[j]] = 1.0
        for fi, j in enumerate(free):
            design[j * k:(j + 1) * k, n_xi + fi] = -1.0
        theta0 = np.concatenate([support.levels.ravel(),
                                 items.difficulty[free]])
        theta, converged = maximize_weighted_logistic(
            design, 0.0, weights.ravel(), successes.ravel(), theta0,
            cap=cap, tol=options.m_step_inner_tol,
            max_iter=options.m_step_inner_max)
        if not converged:
            notes.append("item/ability update stopped at iteration cap")
        if np.abs(theta).max() >= cap - 1e-9:
            notes.append("ability or difficulty capped (separation)")
        new_support = AbilitySupport(theta[:n_xi].reshape(k, s_eff).copy())
        beta = np.zeros(n_items)
        beta[free] = theta[n_xi:]
        new_items = ItemParams(difficulty=beta, discrimination=np.ones(n_items))
        return new_items, new_support, notes

    # TWO_PL: alternate (discrimination, difficulty) given abilities with
    # abilities given item parameters; each half is a concave problem.
    beta = items.difficulty.copy()
    gamma = items.discrimination.copy()
    levels = support.levels.copy()

    def clip_slope_intercept(th):
        # keep the implied (discrimination, difficulty) inside the box
        a = np.clip(th[0], -cap, cap)
        if abs(a) < _ZERO_GAMMA:
            return np.array([a, np.clip(th[1], -cap, cap)])
        b = -np.clip(-th[1] / a, -cap, cap) * a
        return np.array([a, b])

    for j in free:
        ability = levels[:, dims[j]]
        design = np.stack([ability, np.ones(k)], axis=1)
        theta0 = np.array([gamma[j], -gamma[j] * beta[j]])
        theta, converged = maximize_weighted_logistic(
            design, 0.0, weights[j], successes[j], theta0,
            cap=cap, tol=options.m_step_inner_tol,
            max_iter=options.m_step_inner_max, natural_clip=clip_slope_intercept)
        gamma[j] = theta[0]
        if abs(theta[0]) >= _ZERO_GAMMA:
            beta[j] = -theta[1] / theta[0]
        else:
            notes.append(f"item {j}: discrimination collapsed, difficulty kept")
        if not converged:
            notes.append(f"item {j} update stopped at iteration cap")
        if abs(gamma[j]) >= cap - 1e-9 or abs(beta[j]) >= cap - 1e-9:
            notes.append(f"item {j} parameter capped (separation)")

    for d in range(s_eff):
        members = np.nonzero(dims == d)[0]
        design = gamma[members][:, None]
        offset = -gamma[members] * beta[members]
        for c in range(k):
            theta, converged = maximize_weighted_logistic(
                design, offset, weights[members, c], successes[members, c],
                np.array([levels[c, d]]), cap=cap,
                tol=options.m_step_inner_tol, max_iter=options.m_step_inner_max)
            levels[c, d] = theta[0]
            if not converged:
                notes.append(f"ability[{c},{d}] update stopped at iteration cap")
            if abs(theta[0]) >= cap - 1e-9:
                notes.append(f"ability[{c},{d}] capped (separation)")

    new_items = ItemParams(difficulty=beta, discrimination=gamma)
    return new_items, AbilitySupport(levels), notes


def expected_complete_loglik(post: PosteriorSet, data: Dataset, spec: ModelSpec,
                             params: ParamSet) -> float:
    """Expected complete-data log-likelihood under the given posteriors.

    Jensen: this never exceeds the manifest loglik at the same parameters;
    the gap is the entropy of the posterior path distribution.
    """
    with np.errstate(divide="ignore"):
        log_init = np.log(initial_prob_matrix(effective_covariates(data, spec),
                                              params.chain.init_coefs))
        log_trans = np.log(params.chain.transition_stack())
    w0 = post.state[:, 0, :]
    total = float(np.where(w0 > 0, w0 * log_init, 0.0).sum())

    reg = np.clip(data.regimes, 0, None)
    step_log = log_trans[reg]                      # (n, T, k, k)
    z = post.trans
    total += float(np.where(z > 0, z * step_log, 0.0).sum())

    logp, logq = log_prob_tables(params.items, params.support, spec.item_bank)
    items = np.clip(data.items, 0, None)
    log_emit = np.where(data.responses[..., None] == 1, logp[items], logq[items])
    w = post.state
    total += float(np.where(w > 0, w * log_emit, 0.0).sum())
    return total


def default_chain_params(spec: ModelSpec) -> ChainParams:
    """Uniform initial probabilities and uniform (or identity) transitions."""
    k = spec.n_states
    mats = np.empty((spec.constraints.n_classes, k, k))
    for ci in range(spec.constraints.n_classes):
        mats[ci] = np.eye(k) if spec.constraints.is_identity_class(ci) \
            else np.full((k, k), 1.0 / k)
    coefs = np.zeros((k - 1, spec.n_effective_covariates))
    return ChainParams(coefs, mats, spec.regime_class_map())


def random_start(data: Dataset, spec: ModelSpec, rng: np.random.Generator,
                 options: FitOptions) -> ParamSet:
    """Random starting point: spread ability grid plus noise,
    diagonal-boosted random transition rows, success tables perturbed
    around the observed per-item success rates, zero initial coefficients.
    """
    k, n_items = spec.n_states, spec.n_items
    m = data.mask
    idx = data.items[m]
    y = data.responses[m].astype(float)
    counts = np.bincount(idx, minlength=n_items).astype(float)
    succ = np.bincount(idx, weights=y, minlength=n_items)
    rate = np.full(n_items, 0.5)
    seen = counts > 0
    rate[seen] = np.clip(succ[seen] / counts[seen], 0.05, 0.95)

    if spec.item_bank.mode is MeasurementMode.UNCONSTRAINED:
        table = np.clip(rate[:, None] + rng.uniform(-0.25, 0.25, (n_items, k)),
                        0.02, 0.98)
        items = ItemParams(success_table=table)
        support = None
    else:
        s_eff = spec.n_effective_dims
        base = np.linspace(-2.5, 2.5, k) if k > 1 else np.zeros(1)
        levels = base[:, None] + rng.normal(0.0, 0.7, (k, s_eff))
        refs = set(spec.effective_reference_items())
        free = [j for j in range(n_items) if j not in refs]
        beta = np.zeros(n_items)
        beta[free] = rng.normal(0.0, 1.0, len(free))
        gamma = np.ones(n_items)
        if spec.item_bank.mode is MeasurementMode.TWO_PL and free:
            gamma[free] = np.exp(rng.normal(0.0, 0.3, len(free)))
        items = ItemParams(difficulty=beta, discrimination=gamma)
        support = AbilitySupport(levels)

    mats = np.empty((spec.constraints.n_classes, k, k))
    for ci in range(spec.constraints.n_classes):
        if spec.constraints.is_identity_class(ci):
            mats[ci] = np.eye(k)
        else:
            rows = rng.uniform(0.2, 1.0, (k, k)) + 3.0 * np.eye(k)
            mats[ci] = rows / rows.sum(axis=1, keepdims=True)
    coefs = np.zeros((k - 1, spec.n_effective_covariates))
    chain = ChainParams(coefs, mats, spec.regime_class_map())
    return ParamSet(items, support, chain)


def permute_states(params: ParamSet, perm: np.ndarray) -> ParamSet:
    """Relabel states by ``perm`` (new index i takes old state perm[i])."""
    perm = np.asarray(perm)
    items = params.items.copy()
    if items.success_table is not None:
        items.success_table = items.success_table[:, perm]
    support = params.support.copy() if params.support is not None else None
    if support is not None:
        support.levels = support.levels[perm]
    chain = params.chain.copy()
    chain.class_transition = chain.class_transition[:, perm][:, :, perm]
    k = chain.n_states
    if k > 1:
        logits = np.vstack([np.zeros((1, chain.init_coefs.shape[1])),
                            chain.init_coefs])
        logits = logits[perm]
        chain.init_coefs = logits[1:] - logits[0]
    return ParamSet(items, support, chain)


def canonicalize(params: ParamSet, spec: ModelSpec) -> ParamSet:
    """Return ``params`` with states in canonical order."""
    perm = canonical_state_order(params.items, params.support, spec.item_bank)
    if np.array_equal(perm, np.arange(spec.n_states)):
        return params
    return permute_states(params, perm)


def _run_em(data: Dataset, spec: ModelSpec, params: ParamSet,
            options: FitOptions):
    post, cur = e_step(data, spec, params)
    history = [cur]
    notes: set[str] = set()
    converged = False
    iterations = 0
    for iterations in range(1, options.max_iter + 1):
        new_trans, t_notes = m_step_transitions(post, data, spec, params.chain)
        new_coefs, i_notes = m_step_initial(post, data, spec,
                                            params.chain.init_coefs, options)
        new_items, new_support, m_notes = m_step_items(post, data, spec,
                                                       params.items,
                                                       params.support, options)
        params = ParamSet(new_items, new_support,
                          ChainParams(new_coefs, new_trans,
                                      params.chain.regime_class))
        post, new = e_step(data, spec, params)
        history.append(new)
        notes.update(t_notes, i_notes, m_notes)
        if new + 1e-8 < cur:
            notes.add(f"loglik decreased by {cur - new:.3e} at iteration {iterations}")
        if new - cur < options.tol * max(1.0, abs(new)):
            cur = new
            converged = True
            break
        cur = new
    return params, cur, history, converged, iterations, sorted(notes)


def fit(data: Dataset, spec: ModelSpec, options: FitOptions | None = None,
        extra_starts=()) -> FitResult:
    """Best-of-``n_starts`` EM estimate; reproducible for a fixed seed.

    ``extra_starts`` are parameter points run in addition to the random
    starts (e.g. a constrained fit embedded into this spec's space, which
    guarantees the nested-loglik inequality at finite tolerance). Raises
    EstimationError when every start runs into a structurally
    zero-probability sequence.
    """
    options = options or FitOptions()
    options.check()
    require_valid(spec)
    problems = data.validate_against(spec)
    if problems:
        raise SpecValidationError(problems)

    seeds = np.random.SeedSequence(options.seed).spawn(options.n_starts)
    initial_points = [random_start(data, spec, np.random.default_rng(s), options)
                      for s in seeds]
    initial_points.extend(p.copy() for p in extra_starts)
    best = None
    start_logliks: list[float] = []
    start_histories: list[tuple[float, ...]] = []
    for start_params in initial_points:
        try:
            outcome = _run_em(data, spec, start_params, options)
        except DegenerateLikelihoodError:
            start_logliks.append(float("nan"))
            start_histories.append(())
            continue
        params, ll, history, converged, n_iter, notes = outcome
        start_logliks.append(ll)
        start_histories.append(tuple(history))
        if best is None or ll > best[1]:
            best = (params, ll, converged, n_iter, notes)
    if best is None:
        raise EstimationError("every start produced a degenerate likelihood")
    params, ll, converged, n_iter, notes = best
    return FitResult(
        params=canonicalize(params, spec),
        loglik=ll,
        n_free_params=count_free_params(spec),
        n_iter=n_iter,
        converged=converged,
        start_logliks=tuple(start_logliks),
        start_histories=tuple(start_histories),
        notes=tuple(notes),
        spec=spec,
    )


def validate_params(params: ParamSet, spec: ModelSpec) -> list[str]:
    """Parameter-set invariant violations under ``spec`` (empty = ok)."""
    problems: list[str] = []
    k = spec.n_states
    chain = params.chain
    if chain.class_transition.shape != (spec.constraints.n_classes, k, k):
        problems.append("transition stack has the wrong shape")
        return problems
    rowsum = chain.class_transition.sum(axis=2)
    if np.abs(rowsum - 1.0).max() > 1e-12:
        problems.append("a transition row does not sum to 1 within 1e-12")
    if chain.class_transition.min() < 0 or chain.class_transition.max() > 1:
        problems.append("a transition probability lies outside [0, 1]")
    for ci in range(spec.constraints.n_classes):
        if spec.constraints.is_identity_class(ci):
            if not np.array_equal(chain.class_transition[ci], np.eye(k)):
                problems.append(f"identity-pinned class {ci} is not the identity")
    expected = (k - 1, spec.n_effective_covariates)
    if chain.init_coefs.shape != expected:
        problems.append(f"init_coefs shape {chain.init_coefs.shape} != {expected}")
    mode = spec.item_bank.mode
    if mode is MeasurementMode.UNCONSTRAINED:
        table = params.items.success_table
        if table is None or table.shape != (spec.n_items, k):
            problems.append("success table missing or mis-shaped")
        elif table.min() < 0 or table.max() > 1:
            problems.append("a success-table entry lies outside [0, 1]")
    else:
        if params.support is None or params.support.levels.shape != (k, spec.n_effective_dims):
            problems.append("ability support missing or mis-shaped")
        for ref in spec.effective_reference_items():
            if params.items.difficulty[ref] != 0.0:
                problems.append(f"reference item {ref} difficulty not fixed at 0")
            if mode is MeasurementMode.TWO_PL and params.items.discrimination[ref] != 1.0:
                problems.append(f"reference item {ref} discrimination not fixed at 1")
        if mode is MeasurementMode.ONE_PL and not np.all(params.items.discrimination == 1.0):
            problems.append("1PL discriminations must all equal 1")
    return problems
