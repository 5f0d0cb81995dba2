"""Model comparison (BIC indices) and likelihood-ratio testing.

Boundary hypotheses (identity-pinned transition matrices) do not satisfy
the regularity conditions of the chi-squared limit, so the test offers a
parametric bootstrap of the statistic next to the standard chi-squared
p-value: datasets are redrawn from the fitted null on the observed design,
both models refitted, and the p-value is the fraction of simulated
statistics at least as large as the observed one.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import chi2

from .em import FitOptions, FitResult, fit
from .errors import EstimationError
from .likelihood import Dataset
from .model_spec import MeasurementMode, ModelSpec
from .simulate import simulate_responses

_MODE_RANK = {
    MeasurementMode.ONE_PL: 0,
    MeasurementMode.TWO_PL: 1,
    MeasurementMode.UNCONSTRAINED: 2,
}
_NUMERIC_SLACK = 1e-6


def bic(loglik: float, n_free_params: int, n_subjects: int) -> float:
    """-2*loglik + g*log(n), penalized by the sample size."""
    if n_subjects < 1:
        raise ValueError("n_subjects must be >= 1")
    return -2.0 * loglik + n_free_params * np.log(n_subjects)


def bic_star(loglik: float, n_free_params: int, total_trials: int) -> float:
    """-2*loglik + g*log(sum of trial counts), penalized by the observation count."""
    if total_trials < 1:
        raise ValueError("total_trials must be >= 1")
    return -2.0 * loglik + n_free_params * np.log(total_trials)


@dataclass(frozen=True)
class ComparisonRow:
    """One line of a model-comparison table."""

    label: str
    loglik: float
    n_free_params: int
    bic: float
    bic_star: float
    bic_is_min: bool = False
    bic_star_is_min: bool = False


def model_table(entries, n_subjects: int, total_trials: int) -> list[ComparisonRow]:
    """Comparison table from (label, loglik, n_free_params) triples.

    Rows are ordered by descending parameter count then ascending BIC, and
    the minima of each index are marked within every group of rows sharing
    a parameter count (exactly one mark per group and column; first row
    wins ties).
    """
    rows = [ComparisonRow(str(label), float(ll), int(g),
                          bic(ll, g, n_subjects), bic_star(ll, g, total_trials))
            for label, ll, g in entries]
    rows.sort(key=lambda r: (-r.n_free_params, r.bic, r.label))
    out: list[ComparisonRow] = []
    marked_bic: set[int] = set()
    marked_star: set[int] = set()
    for row in rows:
        group = [r for r in rows if r.n_free_params == row.n_free_params]
        best_bic = min(r.bic for r in group)
        best_star = min(r.bic_star for r in group)
        flag_bic = row.bic == best_bic and row.n_free_params not in marked_bic
        if flag_bic:
            marked_bic.add(row.n_free_params)
        flag_star = row.bic_star == best_star and row.n_free_params not in marked_star
        if flag_star:
            marked_star.add(row.n_free_params)
        out.append(replace(row, bic_is_min=flag_bic, bic_star_is_min=flag_star))
    return out


def check_nested(spec_null: ModelSpec, spec_alt: ModelSpec) -> list[str]:
    """Problems preventing ``spec_null`` from being nested in ``spec_alt``.

    The null must carry every constraint of the alternative and possibly
    more: a coarser transition partition, a superset of identity-pinned
    regimes, and optionally the unidimensionality / covariate-removal /
    simpler-measurement-mode restrictions. Identical specs count as nested.
    """
    problems: list[str] = []
    if spec_null.n_states != spec_alt.n_states:
        problems.append("different state counts")
    if spec_null.item_bank.item_dims != spec_alt.item_bank.item_dims:
        problems.append("different item banks")
    if spec_null.n_regimes != spec_alt.n_regimes:
        problems.append("different regime counts")
    if spec_null.n_covariates != spec_alt.n_covariates:
        problems.append("different covariate widths")
    null_mode = spec_null.item_bank.mode
    alt_mode = spec_alt.item_bank.mode
    if _MODE_RANK[null_mode] > _MODE_RANK[alt_mode]:
        problems.append(f"{null_mode.value} is not nested in {alt_mode.value}")
    if (null_mode is not MeasurementMode.UNCONSTRAINED
            and alt_mode is not MeasurementMode.UNCONSTRAINED
            and spec_null.item_bank.reference_items != spec_alt.item_bank.reference_items):
        problems.append("different reference items")
    if spec_alt.constraints.unidimensional and not spec_null.constraints.unidimensional:
        problems.append("alternative is unidimensional but null is not")
    if spec_alt.constraints.covariate_free_init and not spec_null.constraints.covariate_free_init:
        problems.append("alternative drops covariates but null keeps them")
    null_classes = [set(c) for c in spec_null.constraints.transition_classes]
    for cls in spec_alt.constraints.transition_classes:
        if not any(set(cls) <= nc for nc in null_classes):
            problems.append(f"alternative class {cls} is split across null classes")
    if not (spec_null.constraints.identity_regimes()
            >= spec_alt.constraints.identity_regimes()):
        problems.append("alternative pins regimes to identity that the null frees")
    return problems


def embed_params(params, spec_from: ModelSpec, spec_to: ModelSpec):
    """Re-express a constrained model's parameter point in a larger space.

    The embedded point has exactly the same manifest distribution, so EM
    warm-started there can only improve on the constrained loglik; that
    guarantees the nested-model inequality at finite convergence tolerance
    (plain random starts can leave the larger model a hair below the
    constrained optimum when the truth sits on the boundary, where EM
    converges slowly). Assumes ``check_nested(spec_from, spec_to)`` passes.
    """
    from .likelihood import ChainParams, ParamSet
    from .response_model import (AbilitySupport, ItemParams,
                                 success_prob_table)

    k = spec_to.n_states
    # transitions: every target class inherits the source class of any of
    # its regimes (they share one source matrix by the nesting refinement)
    source_map = spec_from.regime_class_map()
    mats = np.empty((spec_to.constraints.n_classes, k, k))
    for ci, cls in enumerate(spec_to.constraints.transition_classes):
        mats[ci] = params.chain.class_transition[source_map[cls[0]]]
    for ci in range(spec_to.constraints.n_classes):
        if spec_to.constraints.is_identity_class(ci):
            mats[ci] = np.eye(k)

    coefs = params.chain.init_coefs
    if spec_from.constraints.covariate_free_init \
            and not spec_to.constraints.covariate_free_init:
        padded = np.zeros((k - 1, spec_to.n_covariates))
        if k > 1:
            padded[:, 0] = coefs[:, 0]
        coefs = padded
    chain = ChainParams(coefs.copy(), mats, spec_to.regime_class_map())

    mode_from = spec_from.item_bank.mode
    mode_to = spec_to.item_bank.mode
    if mode_to is MeasurementMode.UNCONSTRAINED:
        table = success_prob_table(params.items, params.support,
                                   spec_from.item_bank)
        return ParamSet(ItemParams(success_table=table.copy()), None, chain)

    beta = params.items.difficulty.copy()
    gamma = (np.ones(spec_to.n_items) if mode_from is MeasurementMode.ONE_PL
             else params.items.discrimination.copy())
    levels = params.support.levels
    if spec_from.constraints.unidimensional \
            and not spec_to.constraints.unidimensional:
        # tile the single column, then re-anchor each dimension on its
        # reference item (exact reparameterization of the same logits)
        dims = spec_to.item_bank.dims_array()
        levels = np.repeat(levels, spec_to.n_dims, axis=1)
        for d, anchor in enumerate(spec_to.item_bank.reference_items):
            g_a, b_a = gamma[anchor], beta[anchor]
            levels[:, d] = g_a * (levels[:, d] - b_a)
            members = np.nonzero(dims == d)[0]
            gamma[members] = gamma[members] / g_a
            beta[members] = g_a * (beta[members] - b_a)
    else:
        levels = levels.copy()
    if mode_to is MeasurementMode.ONE_PL:
        gamma = np.ones(spec_to.n_items)
    return ParamSet(ItemParams(difficulty=beta, discrimination=gamma),
                    AbilitySupport(levels), chain)


@dataclass(frozen=True)
class BootstrapOptions:
    """Settings for the parametric bootstrap of the LR statistic."""

    n_replicates: int = 200
    seed: int = 0
    fit_options: FitOptions = field(default_factory=lambda: FitOptions(n_starts=1))
    workers: int = 1


@dataclass
class LRTestResult:
    statistic: float
    df: int
    p_value_chisq: float
    p_value_bootstrap: float | None
    boundary: bool
    n_bootstrap: int = 0
    bootstrap_stats: tuple[float, ...] = ()


def _replicate_statistic(payload) -> float:
    (params_null, spec_null, spec_alt, data, sim_seed, seed0, seed1,
     fit_options) = payload
    sim = simulate_responses(params_null, spec_null, data, sim_seed)
    fit_null = fit(sim, spec_null, replace(fit_options, seed=seed0))
    warm = embed_params(fit_null.params, spec_null, spec_alt)
    fit_alt = fit(sim, spec_alt, replace(fit_options, seed=seed1),
                  extra_starts=[warm])
    # the boundary null puts genuine probability mass at zero
    return max(0.0, -2.0 * (fit_null.loglik - fit_alt.loglik))


def _bootstrap_distribution(fit_null: FitResult, spec_alt: ModelSpec,
                            data: Dataset, options: BootstrapOptions) -> np.ndarray:
    m = options.n_replicates
    seeds = np.random.SeedSequence(options.seed).generate_state(3 * m, dtype=np.uint32)
    payloads = [
        (fit_null.params, fit_null.spec, spec_alt, data,
         int(seeds[3 * i]), int(seeds[3 * i + 1]), int(seeds[3 * i + 2]),
         options.fit_options)
        for i in range(m)
    ]
    if options.workers > 1:
        with ProcessPoolExecutor(max_workers=options.workers) as pool:
            stats = list(pool.map(_replicate_statistic, payloads, chunksize=4))
    else:
        stats = [_replicate_statistic(p) for p in payloads]
    return np.asarray(stats)


def lr_test(fit_null: FitResult, fit_alt: FitResult, *,
            data: Dataset | None = None, boundary: bool | None = None,
            bootstrap: BootstrapOptions | None = None) -> LRTestResult:
    """Likelihood-ratio test of the constrained (null) against the larger model.

    Both fits must come from the same dataset. ``boundary`` defaults to
    auto-detection: the null pinning transition matrices to the identity
    that the alternative leaves free puts parameters on the boundary, where
    the chi-squared reference is not valid and the bootstrap p-value is the
    one to report. ``bootstrap`` requires ``data``.
    """
    problems = check_nested(fit_null.spec, fit_alt.spec)
    if problems:
        raise ValueError("models are not nested: " + "; ".join(problems))
    if boundary is None:
        boundary = (fit_null.spec.constraints.identity_regimes()
                    > fit_alt.spec.constraints.identity_regimes())

    statistic = -2.0 * (fit_null.loglik - fit_alt.loglik)
    if statistic < -_NUMERIC_SLACK:
        raise EstimationError(
            f"null fit beats the alternative by {-statistic:.6g}; "
            "increase n_starts (multimodal likelihood)")
    if statistic < 0.0:
        warnings.warn("small negative LR statistic clamped to 0", stacklevel=2)
        statistic = 0.0
    df = fit_alt.n_free_params - fit_null.n_free_params
    if df < 0:
        raise ValueError("null model has more free parameters than the alternative")
    if df == 0:
        if statistic > _NUMERIC_SLACK:
            raise EstimationError(
                "models have equal dimension but different logliks; "
                "increase n_starts")
        p_chisq = 1.0
    else:
        p_chisq = float(chi2.sf(statistic, df))

    p_boot = None
    stats: tuple[float, ...] = ()
    if bootstrap is not None:
        if data is None:
            raise ValueError("bootstrap requires the observed dataset")
        draws = _bootstrap_distribution(fit_null, fit_alt.spec, data, bootstrap)
        p_boot = float((draws >= statistic).mean())
        stats = tuple(float(v) for v in draws)

    return LRTestResult(float(statistic), int(df), p_chisq, p_boot,
                        bool(boundary), len(stats), stats)
