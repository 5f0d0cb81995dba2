"""Free-parameter accounting and structural validation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmirt import (ConstraintSet, ItemBank, MeasurementMode, ModelSpec,
                   RegimePlan, count_free_params, validate)

BIDIM_BANK_UNC = ItemBank.unconstrained(4)
BIDIM_BANK_2PL = ItemBank((0, 0, 1, 1), MeasurementMode.TWO_PL, (0, 2))
BIDIM_BANK_1PL = ItemBank((0, 0, 1, 1), MeasurementMode.ONE_PL, (0, 2))

FOUR_CLASSES = ConstraintSet.make([(0, 1), (2, 3), (4, 5), (6, 7)])


def spec_unconstrained(k, constraints=None):
    return ModelSpec(k, BIDIM_BANK_UNC, RegimePlan(8),
                     constraints or ConstraintSet.singletons(8), n_covariates=2)


def merged(*pairs):
    """Constraint set merging the given regime pairs, rest singletons."""
    classes = list(pairs)
    used = {r for cls in pairs for r in cls}
    classes += [(r,) for r in range(8) if r not in used]
    return ConstraintSet.make(classes)


class TestStateSweepCounts:
    """Published counts for the unconstrained-measurement state sweep."""

    @pytest.mark.parametrize("k,expected", [(1, 4), (2, 26), (3, 64), (4, 118)])
    def test_k_sweep(self, k, expected):
        assert count_free_params(spec_unconstrained(k)) == expected


class TestConstraintLatticeCounts:
    """Published counts for the transition-constraint lattice (k=3)."""

    def test_single_merge(self):
        assert count_free_params(spec_unconstrained(3, merged((0, 1)))) == 58

    def test_two_merges(self):
        assert count_free_params(
            spec_unconstrained(3, merged((0, 1), (4, 5)))) == 52

    def test_three_merges(self):
        assert count_free_params(
            spec_unconstrained(3, merged((0, 1), (4, 5), (6, 7)))) == 46

    def test_four_merges(self):
        assert count_free_params(spec_unconstrained(3, FOUR_CLASSES)) == 40

    def test_identity_on_merged_class(self):
        constraints = ConstraintSet.make(
            [(0, 1), (2, 3), (4, 5), (6, 7)], identity_classes=[(0, 1)])
        assert count_free_params(spec_unconstrained(3, constraints)) == 34


class TestParameterizationCounts:
    """Published counts for the four measurement parameterizations (k=3)."""

    def params_for(self, bank, unidimensional):
        constraints = ConstraintSet.make(
            [(0, 1), (2, 3), (4, 5), (6, 7)], unidimensional=unidimensional)
        return ModelSpec(3, bank, RegimePlan(8), constraints, n_covariates=2)

    def test_rasch_unidimensional(self):
        assert count_free_params(self.params_for(BIDIM_BANK_1PL, True)) == 34

    def test_rasch_bidimensional(self):
        assert count_free_params(self.params_for(BIDIM_BANK_1PL, False)) == 36

    def test_2pl_unidimensional(self):
        assert count_free_params(self.params_for(BIDIM_BANK_2PL, True)) == 37

    def test_2pl_bidimensional(self):
        assert count_free_params(self.params_for(BIDIM_BANK_2PL, False)) == 38


class TestCountEdgeCases:
    def test_single_state_has_no_chain_freedom(self):
        for p in (1, 2, 5):
            spec = ModelSpec(1, BIDIM_BANK_UNC, RegimePlan(8),
                             ConstraintSet.singletons(8), n_covariates=p)
            assert count_free_params(spec) == 4

    def test_covariate_removal(self):
        base = spec_unconstrained(3, FOUR_CLASSES)
        dropped = ModelSpec(3, BIDIM_BANK_UNC, RegimePlan(8),
                            ConstraintSet.make(FOUR_CLASSES.transition_classes,
                                               covariate_free_init=True),
                            n_covariates=2)
        assert count_free_params(base) == 40
        assert count_free_params(dropped) == 38


@st.composite
def constrained_spec_pair(draw):
    """(looser, tighter) specs where the second adds one constraint."""
    k = draw(st.integers(1, 4))
    n_regimes = draw(st.integers(1, 6))
    mode = draw(st.sampled_from(list(MeasurementMode)))
    if mode is MeasurementMode.UNCONSTRAINED:
        bank = ItemBank.unconstrained(draw(st.integers(1, 5)))
    else:
        bank = ItemBank((0, 0, 1, 1), mode, (0, 2))
    p = draw(st.integers(1, 3))
    classes = [(r,) for r in range(n_regimes)]
    base = ConstraintSet.make(classes)
    move = draw(st.sampled_from(["merge", "identity", "unidim", "drop_cov"]))
    if move == "unidim" and mode is MeasurementMode.TWO_PL and k < 2:
        # degenerate corner where the counting convention itself is not
        # monotone: collapsing dimensions frees the other anchors' two
        # parameters each but removes only k ability cells
        move = "drop_cov"
    if move == "merge" and n_regimes >= 2:
        a, b = draw(st.sampled_from(
            [(i, j) for i in range(n_regimes) for j in range(n_regimes) if i < j]))
        tighter_classes = [(a, b)] + [(r,) for r in range(n_regimes)
                                      if r not in (a, b)]
        tighter = ConstraintSet.make(tighter_classes)
    elif move == "identity":
        r = draw(st.integers(0, n_regimes - 1))
        tighter = ConstraintSet.make(classes, identity_classes=[(r,)])
    elif move == "unidim":
        tighter = ConstraintSet.make(classes, unidimensional=True)
    else:
        tighter = ConstraintSet.make(classes, covariate_free_init=True)
    plan = RegimePlan(n_regimes)
    return (ModelSpec(k, bank, plan, base, p),
            ModelSpec(k, bank, plan, tighter, p))


@settings(max_examples=120, deadline=None)
@given(constrained_spec_pair())
def test_adding_a_constraint_never_increases_count(pair):
    looser, tighter = pair
    assert count_free_params(tighter) <= count_free_params(looser)


class TestValidate:
    def test_reconstructed_benchmark_spec_is_valid(self):
        spec = ModelSpec(3, BIDIM_BANK_2PL, RegimePlan(8), FOUR_CLASSES, 2)
        assert validate(spec) == []

    def test_item_assigned_to_unknown_dimension(self):
        bank = ItemBank((0, 0, 1, 3), MeasurementMode.TWO_PL, (0, 2))
        spec = ModelSpec(3, bank, RegimePlan(8), FOUR_CLASSES, 2)
        assert any("item 3" in msg and "dimension 3" in msg
                   for msg in validate(spec))

    def test_reference_item_outside_its_dimension(self):
        bank = ItemBank((0, 0, 1, 1), MeasurementMode.TWO_PL, (0, 1))
        spec = ModelSpec(3, bank, RegimePlan(8), FOUR_CLASSES, 2)
        assert any("reference item 1" in msg for msg in validate(spec))

    def test_empty_dimension(self):
        bank = ItemBank((0, 0, 0, 0), MeasurementMode.TWO_PL, (0, 2))
        spec = ModelSpec(3, bank, RegimePlan(8), FOUR_CLASSES, 2)
        assert any("dimension 1 has no items" in msg for msg in validate(spec))

    def test_identity_on_class_not_in_partition(self):
        constraints = ConstraintSet(FOUR_CLASSES.transition_classes, ((0,),))
        spec = ModelSpec(3, BIDIM_BANK_UNC, RegimePlan(8), constraints, 2)
        assert any("identity constraint" in msg for msg in validate(spec))

    def test_regime_in_two_classes(self):
        constraints = ConstraintSet.make([(0, 1), (1, 2)] +
                                         [(r,) for r in range(3, 8)])
        spec = ModelSpec(3, BIDIM_BANK_UNC, RegimePlan(8), constraints, 2)
        assert any("appears in classes" in msg for msg in validate(spec))

    def test_unassigned_regime(self):
        constraints = ConstraintSet.make([(r,) for r in range(7)])
        spec = ModelSpec(3, BIDIM_BANK_UNC, RegimePlan(8), constraints, 2)
        assert any("belong to no equality class" in msg
                   for msg in validate(spec))

    def test_more_dims_than_items(self):
        bank = ItemBank((0,), MeasurementMode.TWO_PL, (0, 0))
        spec = ModelSpec(2, bank, RegimePlan(1), ConstraintSet.singletons(1), 1)
        assert any("more dimensions" in msg for msg in validate(spec))

    def test_regime_class_map(self):
        spec = ModelSpec(3, BIDIM_BANK_UNC, RegimePlan(8), FOUR_CLASSES, 2)
        assert np.array_equal(spec.regime_class_map(),
                              [0, 0, 1, 1, 2, 2, 3, 3])
