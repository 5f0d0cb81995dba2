"""Dataset generation from any parameter point, plus the benchmark fixture.

Generation is vectorized across subjects one occasion at a time, with a
single seeded generator, so output is deterministic given the seed and the
ground-truth latent paths are retained for recovery scoring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .likelihood import (ChainParams, Dataset, ParamSet, effective_covariates,
                         emission_tables, initial_prob_matrix)
from .model_spec import (ConstraintSet, ItemBank, MeasurementMode, ModelSpec,
                         RegimePlan)
from .response_model import AbilitySupport, ItemParams


@dataclass(frozen=True)
class ArmTemplate:
    """Item type and transition regime per occasion for one testing order.

    ``regimes[0]`` is -1 (the first occasion has no incoming step).
    """

    items: tuple[int, ...]
    regimes: tuple[int, ...]

    @property
    def n_trials(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class DesignPlan:
    """Experimental design for simulation.

    Ages are drawn uniformly on ``age_range`` as the single covariate next
    to the intercept; ``None`` means intercept-only subjects. Assignment
    spreads subjects over the arms either by a seeded random permutation
    ("random_halves") or deterministically in order ("alternating").
    """

    n_subjects: int
    arms: tuple[ArmTemplate, ...]
    age_range: tuple[float, float] | None = None
    assignment: str = "random_halves"


@dataclass
class SimulatedDataset:
    """Generated data plus the ground truth that produced it."""

    data: Dataset
    states: np.ndarray   # (n, T_max), -1 where padded
    arm_of: np.ndarray   # (n,)
    seed: int


def _subject_ids(n: int) -> tuple[str, ...]:
    width = max(3, len(str(n)))
    return tuple(f"S{i + 1:0{width}d}" for i in range(n))


def _draw_categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One draw per row of a row-stochastic matrix."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(len(probs))
    return np.minimum((u[:, None] > cum).sum(axis=1), probs.shape[1] - 1)


def _draw_paths_and_responses(spec: ModelSpec, params: ParamSet, data: Dataset,
                              rng: np.random.Generator):
    n, t_max = data.items.shape
    pinit = initial_prob_matrix(effective_covariates(data, spec),
                                params.chain.init_coefs)
    trans = params.chain.transition_stack()
    reg = np.clip(data.regimes, 0, None)

    states = np.full((n, t_max), -1, dtype=np.int64)
    states[:, 0] = _draw_categorical(rng, pinit)
    for t in range(1, t_max):
        rows = trans[reg[:, t], np.clip(states[:, t - 1], 0, None), :]
        nxt = _draw_categorical(rng, rows)
        states[:, t] = np.where(data.mask[:, t], nxt, -1)

    success, _ = emission_tables(spec, params)
    lam = success[np.clip(data.items, 0, None), np.clip(states, 0, None)]
    responses = ((rng.random((n, t_max)) < lam) & data.mask).astype(np.int8)
    return states, responses


def simulate(params: ParamSet, spec: ModelSpec, plan: DesignPlan,
             seed: int) -> SimulatedDataset:
    """Draw a dataset: age, arm, latent path, then Bernoulli responses."""
    rng = np.random.default_rng(seed)
    n = plan.n_subjects
    if plan.age_range is not None:
        ages = rng.uniform(plan.age_range[0], plan.age_range[1], n)
        covariates = np.column_stack([np.ones(n), ages])
    else:
        covariates = np.ones((n, 1))

    n_arms = len(plan.arms)
    if n_arms == 1:
        arm = np.zeros(n, dtype=np.int64)
    elif plan.assignment == "alternating":
        arm = np.arange(n, dtype=np.int64) % n_arms
    elif plan.assignment == "random_halves":
        perm = rng.permutation(n)
        arm = np.zeros(n, dtype=np.int64)
        for a in range(n_arms):
            arm[perm[a::n_arms]] = a
    else:
        raise ValueError(f"unknown assignment rule {plan.assignment!r}")

    t_max = max(a.n_trials for a in plan.arms)
    items = np.full((n, t_max), -1, dtype=np.int64)
    regimes = np.full((n, t_max), -1, dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    for i in range(n):
        template = plan.arms[arm[i]]
        t = template.n_trials
        items[i, :t] = template.items
        regimes[i, :t] = template.regimes
        lengths[i] = t

    data = Dataset(covariates, items, regimes,
                   np.zeros((n, t_max), dtype=np.int8), lengths,
                   _subject_ids(n))
    states, responses = _draw_paths_and_responses(spec, params, data, rng)
    data.responses = responses
    return SimulatedDataset(data, states, arm, seed)


def simulate_responses(params: ParamSet, spec: ModelSpec, data: Dataset,
                       seed: int) -> Dataset:
    """Redraw latent paths and responses on an existing design.

    This is the parametric-bootstrap generator: covariates, item order,
    regimes and lengths are carried over unchanged.
    """
    rng = np.random.default_rng(seed)
    _, responses = _draw_paths_and_responses(spec, params, data, rng)
    return Dataset(data.covariates.copy(), data.items.copy(),
                   data.regimes.copy(), responses, data.lengths.copy(),
                   data.subject_ids)


def verify_simulation(sim: SimulatedDataset, spec: ModelSpec,
                      params: ParamSet) -> list[str]:
    """Re-check that the recorded paths could have produced the responses."""
    problems: list[str] = []
    data = sim.data
    mask = data.mask
    states = sim.states
    if np.any((states < 0) & mask) or np.any(states >= spec.n_states):
        problems.append("a latent state is out of range")
        return problems
    trans = params.chain.transition_stack()
    step = mask.copy()
    step[:, 0] = False
    idx = np.nonzero(step)
    probs = trans[data.regimes[idx], states[idx[0], idx[1] - 1], states[idx]]
    if np.any(probs <= 0):
        problems.append("a recorded transition has probability zero")
    success, _ = emission_tables(spec, params)
    lam = success[data.items[mask], states[mask]]
    y = data.responses[mask]
    if np.any((lam == 0.0) & (y == 1)) or np.any((lam == 1.0) & (y == 0)):
        problems.append("a response contradicts a degenerate success probability")
    return problems


# --- benchmark fixture -----------------------------------------------------
#
# Reconstructed 3-state bidimensional 2PL model: published ability support,
# item parameters, age slopes and the four tied transition matrices. The
# initial-probability intercepts are not published; they are solved
# numerically so the average initial probabilities over the uniform age
# range match the published (0.261, 0.360, 0.379).

_FIXTURE_AGE_RANGE = (34.0, 55.0)
_FIXTURE_AGE_SLOPES = (0.111, 0.361)
_FIXTURE_MEAN_INITIAL = (0.261, 0.360, 0.379)

_FIXTURE_ABILITY = np.array([
    [-5.454, 0.145],
    [0.040, -35.145],
    [5.050, 6.176],
])
_FIXTURE_DIFFICULTY = np.array([0.0, -4.880, 0.0, 0.107])
_FIXTURE_DISCRIMINATION = np.array([1.0, 0.610, 1.0, 2.744])

_FIXTURE_TRANSITIONS = {
    "within_ic": [[0.9809, 0.0191, 0.0000],
                  [0.0228, 0.9146, 0.0626],
                  [0.0114, 0.0372, 0.9514]],
    "within_af": [[0.5883, 0.2211, 0.1905],
                  [0.0049, 0.9951, 0.0000],
                  [0.0226, 0.0022, 0.9753]],
    "week": [[0.0000, 0.5763, 0.4237],
             [0.0609, 0.0000, 0.9391],
             [0.0000, 0.0000, 1.0000]],
    "six_month": [[0.3002, 0.6997, 0.0000],
                  [0.1795, 0.1165, 0.7040],
                  [0.1221, 0.1362, 0.7416]],
}

_TRIALS_PER_ABILITY_BLOCK = (16, 6)
_N_SESSIONS = 3

_intercept_cache: tuple[float, float] | None = None


def _calibrate_intercepts() -> tuple[float, float]:
    """Solve the two intercepts matching the published mean initial probs."""
    global _intercept_cache
    if _intercept_cache is not None:
        return _intercept_cache
    lo, hi = _FIXTURE_AGE_RANGE
    nodes, weights = np.polynomial.legendre.leggauss(64)
    ages = 0.5 * (lo + hi) + 0.5 * (hi - lo) * nodes
    quad = weights / 2.0
    design = np.column_stack([np.ones_like(ages), ages])
    s2, s3 = _FIXTURE_AGE_SLOPES
    target = np.asarray(_FIXTURE_MEAN_INITIAL[1:])

    def residual(b):
        coefs = np.array([[b[0], s2], [b[1], s3]])
        return quad @ initial_prob_matrix(design, coefs)[:, 1:] - target

    solution = optimize.fsolve(residual, x0=np.array([-4.0, -16.0]), xtol=1e-13)
    if np.abs(residual(solution)).max() > 1e-9:
        raise RuntimeError("intercept calibration did not converge")
    _intercept_cache = (float(solution[0]), float(solution[1]))
    return _intercept_cache


def _fixture_arm(first_pair, second_pair, reg_ic, reg_af, reg_week,
                 reg_session) -> ArmTemplate:
    """One testing order: three sessions of two (IC-block, AF-block) pairs.

    Within-block steps and the step entering an AF block use the session's
    inhibitory-control matrix; the step crossing the two block pairs of a
    session uses the week matrix; steps crossing sessions use the six-month
    matrix.
    """
    items: list[int] = []
    regimes: list[int] = []
    for session in range(_N_SESSIONS):
        blocks = [(first_pair[0], _TRIALS_PER_ABILITY_BLOCK[0]),
                  (first_pair[1], _TRIALS_PER_ABILITY_BLOCK[1]),
                  (second_pair[0], _TRIALS_PER_ABILITY_BLOCK[0]),
                  (second_pair[1], _TRIALS_PER_ABILITY_BLOCK[1])]
        for block_index, (item, count) in enumerate(blocks):
            for t in range(count):
                items.append(item)
                if len(items) == 1:
                    regimes.append(-1)
                elif t > 0:
                    regimes.append(reg_ic if block_index in (0, 2) else reg_af)
                elif block_index == 0:
                    regimes.append(reg_session)
                elif block_index == 2:
                    regimes.append(reg_week)
                else:
                    regimes.append(reg_ic)  # entering an AF block
    return ArmTemplate(tuple(items), tuple(regimes))


def paper_fixture(n_subjects: int = 115):
    """The reconstructed benchmark model, parameters and design.

    Items: 0 = day/night, 1 = abstract pattern (inhibitory control);
    2 = DCCS face-down, 3 = DCCS face-up (attentional flexibility); items 0
    and 2 anchor their dimensions. Regimes 0-7 pair up as (hard-first,
    easy-first) arms of four contexts: within-IC, within-AF, week gap,
    six-month gap, tied pairwise into four equality classes.

    Returns (spec, params, plan).
    """
    bank = ItemBank((0, 0, 1, 1), MeasurementMode.TWO_PL, (0, 2))
    constraints = ConstraintSet.make([(0, 1), (2, 3), (4, 5), (6, 7)])
    spec = ModelSpec(n_states=3, item_bank=bank, regime_plan=RegimePlan(8),
                     constraints=constraints, n_covariates=2)

    order = ("within_ic", "within_af", "week", "six_month")
    mats = np.stack([np.asarray(_FIXTURE_TRANSITIONS[name], dtype=float)
                     for name in order])
    mats /= mats.sum(axis=2, keepdims=True)  # published rounding residuals

    b2, b3 = _calibrate_intercepts()
    init_coefs = np.array([[b2, _FIXTURE_AGE_SLOPES[0]],
                           [b3, _FIXTURE_AGE_SLOPES[1]]])
    chain = ChainParams(init_coefs, mats, spec.regime_class_map())
    params = ParamSet(
        ItemParams(difficulty=_FIXTURE_DIFFICULTY.copy(),
                   discrimination=_FIXTURE_DISCRIMINATION.copy()),
        AbilitySupport(_FIXTURE_ABILITY.copy()),
        chain,
    )

    hard_first = _fixture_arm((0, 2), (1, 3), 0, 2, 4, 6)
    easy_first = _fixture_arm((1, 3), (0, 2), 1, 3, 5, 7)
    plan = DesignPlan(n_subjects, (hard_first, easy_first),
                      _FIXTURE_AGE_RANGE, "random_halves")
    return spec, params, plan
