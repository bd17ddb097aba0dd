"""Selection-ensemble analysis: hand-checked values, dual-route agreement,
and the weak-selector construction's guarantees."""

from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualpath.theory import (
    ConstructionInvalid,
    InstanceEntry,
    InvalidInstance,
    SelectionInstance,
    WeakSelectorParams,
    alpha_sweep,
    base_errors,
    combined_error,
    construct_weak_selector_instance,
    evaluate_params,
    exhaustive_oracle,
    feasible_base_level,
    monte_carlo,
    overall_rho,
    predicted_overall_rho,
    upper_bound_accuracy,
)

TOL = Fraction(1, 10**12)


def make_instance(rows):
    return SelectionInstance.from_rows(rows)


# ---------------------------------------------------------------------------
# Hand-checked values
# ---------------------------------------------------------------------------


def test_two_entry_instance_by_hand() -> None:
    # Entry 1: switching loses 1/2 but the selector always keeps method one.
    # Entry 2: switching gains 1/2 and the selector finds it 3 times in 4.
    instance = make_instance(
        [
            (Fraction(1, 2), Fraction(3, 4), Fraction(1, 4), Fraction(1)),
            (Fraction(1, 2), Fraction(1, 2), Fraction(1), Fraction(3, 4)),
        ]
    )
    err1, err2 = base_errors(instance)
    assert err1 == Fraction(3, 8)
    assert err2 == Fraction(3, 8)
    assert combined_error(instance) == Fraction(3, 16)
    assert exhaustive_oracle(instance) == Fraction(3, 16)
    assert upper_bound_accuracy(instance) == Fraction(7, 8)
    assert overall_rho(instance) == Fraction(7, 8)


def test_single_entry_perfect_methods() -> None:
    instance = make_instance([(1, 1, 1, Fraction(1, 2))])
    assert combined_error(instance) == 0
    assert exhaustive_oracle(instance) == 0


def test_instance_validation_messages() -> None:
    with pytest.raises(InvalidInstance, match="mass"):
        make_instance([(0, 1, 1, 1), (1, 1, 1, 1)])
    with pytest.raises(InvalidInstance, match="p2"):
        make_instance([(1, 1, 2, 1)])
    with pytest.raises(InvalidInstance, match="sum to 1"):
        make_instance([(Fraction(1, 2), 1, 1, 1)])
    with pytest.raises(InvalidInstance, match="at least one"):
        SelectionInstance(())


# ---------------------------------------------------------------------------
# Dual-route agreement on random instances
# ---------------------------------------------------------------------------

_grid_prob = st.integers(min_value=0, max_value=128).map(lambda k: Fraction(k, 128))


@st.composite
def instances(draw) -> SelectionInstance:
    n = draw(st.integers(min_value=1, max_value=64))
    weights = draw(st.lists(st.integers(1, 1000), min_size=n, max_size=n))
    total = sum(weights)
    rows = []
    for w in weights:
        rows.append(
            (Fraction(w, total), draw(_grid_prob), draw(_grid_prob), draw(_grid_prob))
        )
    return SelectionInstance.from_rows(rows)


@settings(max_examples=300, deadline=None)
@given(instances())
def test_combined_error_matches_exhaustive_oracle(instance: SelectionInstance) -> None:
    assert abs(combined_error(instance) - exhaustive_oracle(instance)) <= TOL


@settings(max_examples=200, deadline=None)
@given(instances())
def test_error_bounds(instance: SelectionInstance) -> None:
    err = combined_error(instance)
    err1, err2 = base_errors(instance)
    assert 0 <= err <= 1
    # No selector, however good, beats the perfect-selection bound.
    assert err >= 1 - upper_bound_accuracy(instance)
    assert min(err1, err2) >= 1 - upper_bound_accuracy(instance)


def test_oracle_routes_disagree_on_nothing_but_share_no_code() -> None:
    # Perfect selector on every entry collapses to the upper bound; both
    # routes must see it.
    instance = make_instance(
        [
            (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), 1),
            (Fraction(3, 4), Fraction(7, 8), Fraction(1, 8), 1),
        ]
    )
    assert combined_error(instance) == 1 - upper_bound_accuracy(instance)
    assert exhaustive_oracle(instance) == 1 - upper_bound_accuracy(instance)


# ---------------------------------------------------------------------------
# Weak-selector construction
# ---------------------------------------------------------------------------


def worked_params() -> WeakSelectorParams:
    return WeakSelectorParams(
        n=100,
        T=90,
        epsilon=Fraction(1, 10),
        delta=Fraction(9, 10),
        lam=Fraction(1, 10),
        base_level=Fraction(1, 10),
    )


def test_worked_point_exact_values() -> None:
    params = worked_params()
    assert params.beta == Fraction(9, 10)
    assert params.min_lam == Fraction(9, 100)
    point = evaluate_params(params)
    assert point.rho == Fraction(189, 1000)
    assert point.rho < Fraction(1, 2)
    assert point.err1 == Fraction(9, 10)
    assert point.err2 == Fraction(9, 10)
    # Improvement is exactly beta*delta/n.
    assert point.err == Fraction(9, 10) - Fraction(81, 10000)
    assert point.err < point.err1 <= point.err2


def test_predicted_rho_matches_instance() -> None:
    params = worked_params()
    instance = construct_weak_selector_instance(params)
    assert overall_rho(instance) == predicted_overall_rho(params)


def test_construction_rejects_named_violations() -> None:
    with pytest.raises(ConstructionInvalid, match="T must satisfy"):
        WeakSelectorParams(n=10, T=10, epsilon=Fraction(1, 10), delta=Fraction(1, 2), lam=1)
    with pytest.raises(ConstructionInvalid, match="beta"):
        WeakSelectorParams(n=100, T=90, epsilon=Fraction(1, 2), delta=Fraction(1, 2), lam=1)
    with pytest.raises(ConstructionInvalid, match="lam must be at least"):
        WeakSelectorParams(
            n=100, T=90, epsilon=Fraction(1, 10), delta=Fraction(9, 10), lam=Fraction(1, 100),
            base_level=Fraction(1, 10),
        )
    with pytest.raises(ConstructionInvalid, match="base_level \\+ beta"):
        WeakSelectorParams(
            n=100, T=90, epsilon=Fraction(1, 10), delta=Fraction(9, 10), lam=Fraction(1, 10)
        )
    with pytest.raises(ConstructionInvalid, match="epsilon must be in"):
        WeakSelectorParams(n=100, T=90, epsilon=0, delta=Fraction(1, 2), lam=1)


def test_feasible_base_level_collapses_at_tight_points() -> None:
    assert feasible_base_level(100, 90, Fraction(1, 10)) == Fraction(1, 10)
    assert feasible_base_level(20, 10, Fraction(1, 10)) == Fraction(1, 2)
    with pytest.raises(ConstructionInvalid, match="no valid base_level"):
        feasible_base_level(100, 95, Fraction(1, 10))


def test_perfect_selector_branch_identity() -> None:
    # With lam = 1 the closed form reduces to alpha + delta/n.
    params = WeakSelectorParams(
        n=40, T=20, epsilon=Fraction(1, 4), delta=Fraction(1, 2), lam=1
    )
    assert predicted_overall_rho(params) == params.alpha + params.delta / params.n
    point = evaluate_params(params)
    assert point.rho == predicted_overall_rho(params)
    assert point.err < point.err1


def test_floor_lam_branch_identity() -> None:
    # At the lam floor the closed form reduces to
    # 1 - alpha + delta*((2*alpha - 1)/(n - T) + 1/n).
    n, T = 60, 40
    delta = Fraction(1, 3)
    lam_floor = delta / (n - T)
    params = WeakSelectorParams(
        n=n, T=T, epsilon=Fraction(1, 8), delta=delta, lam=lam_floor, base_level=Fraction(1, 2)
    )
    alpha = params.alpha
    expected = 1 - alpha + delta * (Fraction(2 * alpha - 1, 1) / (n - T) + Fraction(1, n))
    assert predicted_overall_rho(params) == expected


@settings(max_examples=150, deadline=None)
@given(
    st.integers(2, 12),
    st.integers(1, 400),
    st.integers(1, 127),
    st.integers(1, 127),
    st.integers(1, 128),
)
def test_construction_guarantees_whenever_valid(
    tail_blocks: int, T: int, eps_num: int, delta_num: int, lam_num: int
) -> None:
    n = T + tail_blocks
    epsilon = Fraction(eps_num, 128)
    delta = Fraction(delta_num, 128)
    lam = Fraction(lam_num, 128)
    try:
        params = WeakSelectorParams(
            n=n,
            T=T,
            epsilon=epsilon,
            delta=delta,
            lam=lam,
            base_level=feasible_base_level(n, T, epsilon),
        )
    except ConstructionInvalid:
        return
    point = evaluate_params(params)
    assert point.err < point.err1
    assert point.err1 <= point.err2
    assert abs(point.rho - predicted_overall_rho(params)) <= TOL


# ---------------------------------------------------------------------------
# Sweep and Monte Carlo
# ---------------------------------------------------------------------------


def test_alpha_sweep_is_monotone_and_reaches_small_rho() -> None:
    points = alpha_sweep(25)
    rhos = [p.rho for p in points]
    assert all(a > b for a, b in zip(rhos, rhos[1:]))
    assert rhos[-1] < Fraction(1, 20)
    for point in points:
        assert point.err < point.err1 <= point.err2


def test_monte_carlo_brackets_analytic_error() -> None:
    params = worked_params()
    instance = construct_weak_selector_instance(params)
    result = monte_carlo(instance, trials=200_000, seed=7)
    err = float(combined_error(instance))
    rho = float(overall_rho(instance))
    assert abs(result.err_hat - err) <= 4 * result.err_stderr
    assert abs(result.rho_hat - rho) <= 4 * result.rho_stderr


def test_monte_carlo_is_seeded_and_shardable() -> None:
    instance = construct_weak_selector_instance(worked_params())
    a = monte_carlo(instance, trials=50_000, seed=3, shards=5)
    b = monte_carlo(instance, trials=50_000, seed=3, shards=5)
    assert a == b
    c = monte_carlo(instance, trials=50_000, seed=4, shards=5)
    assert a != c


def test_monte_carlo_degenerate_certainty() -> None:
    instance = make_instance([(1, 1, 1, Fraction(1, 2))])
    result = monte_carlo(instance, trials=10_000, seed=0)
    assert result.err_hat == 0.0
