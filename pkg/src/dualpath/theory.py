"""Exact error analysis of a two-method ensemble driven by a noisy selector.

A :class:`SelectionInstance` is a finite population of items; each item carries
its probability mass, the per-method correctness probabilities ``p1``/``p2``,
and ``rho``: the probability that the selector picks whichever method is better
on that item.  Two independent accountings of the ensemble's error are kept
side by side: :func:`combined_error` evaluates the closed-form decomposition,
while :func:`exhaustive_oracle` sums the full outcome mixture item by item.
They must agree to 1e-12 on every instance; tests enforce that, so neither is
allowed to be rewritten in terms of the other.

Everything analytic runs on :class:`fractions.Fraction`.  Floating point only
appears in :func:`monte_carlo`, which is a simulation-side cross-check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Iterable, Sequence

import numpy as np

MASS_TOLERANCE = Fraction(1, 10**12)

RationalLike = Fraction | int | str


class InvalidInstance(ValueError):
    """An instance entry violates a probability or mass constraint."""


class ConstructionInvalid(ValueError):
    """Requested construction parameters violate a named constraint."""


def _fraction(value: RationalLike, name: str) -> Fraction:
    try:
        return Fraction(value)
    except (ValueError, ZeroDivisionError, TypeError) as exc:
        raise ConstructionInvalid(f"{name} is not a rational value: {value!r}") from exc


@dataclass(frozen=True)
class InstanceEntry:
    """One item: its mass, both methods' correctness odds, selector quality."""

    mass: Fraction
    p1: Fraction
    p2: Fraction
    rho: Fraction

    @property
    def regret_gap(self) -> Fraction:
        """p2 - p1: positive when switching to the second method helps."""
        return self.p2 - self.p1


@dataclass(frozen=True)
class SelectionInstance:
    entries: tuple[InstanceEntry, ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise InvalidInstance("instance must have at least one entry")
        for i, entry in enumerate(self.entries):
            if not (0 < entry.mass <= 1):
                raise InvalidInstance(f"entry {i}: mass must be in (0, 1], got {entry.mass}")
            for label, p in (("p1", entry.p1), ("p2", entry.p2), ("rho", entry.rho)):
                if not (0 <= p <= 1):
                    raise InvalidInstance(f"entry {i}: {label} must be in [0, 1], got {p}")
        total = sum((entry.mass for entry in self.entries), Fraction(0))
        if abs(total - 1) > MASS_TOLERANCE:
            raise InvalidInstance(f"masses must sum to 1, got {total}")

    @staticmethod
    def from_rows(rows: Iterable[tuple[RationalLike, ...]]) -> "SelectionInstance":
        entries = tuple(
            InstanceEntry(Fraction(m), Fraction(p1), Fraction(p2), Fraction(rho))
            for m, p1, p2, rho in rows
        )
        return SelectionInstance(entries)


def base_errors(instance: SelectionInstance) -> tuple[Fraction, Fraction]:
    """(err1, err2): each method's standalone error rate."""
    acc1 = sum((e.mass * e.p1 for e in instance.entries), Fraction(0))
    acc2 = sum((e.mass * e.p2 for e in instance.entries), Fraction(0))
    return 1 - acc1, 1 - acc2


def combined_error(instance: SelectionInstance) -> Fraction:
    """Ensemble error via the decomposition around the first method.

    Starting from err1, each item moves the error by |gap| weighted by how the
    selector treats it: picking the better method on a positive-gap item pays
    off, failing to keep the first method on a negative-gap item costs.
    """
    err1, _ = base_errors(instance)
    shift = Fraction(0)
    for e in instance.entries:
        gap = e.regret_gap
        indicator = Fraction(1) if gap < 0 else Fraction(0)
        shift += e.mass * abs(gap) * (e.rho - indicator)
    return err1 - shift


def exhaustive_oracle(instance: SelectionInstance) -> Fraction:
    """Ensemble error by brute-force mixture accounting, item by item.

    Independent of :func:`combined_error` on purpose: it never forms the
    decomposition, it just asks "with what probability is the second method
    chosen, and how often is the chosen method right".
    """
    accuracy = Fraction(0)
    for e in instance.entries:
        if e.regret_gap >= 0:
            prob_second = e.rho
        else:
            prob_second = 1 - e.rho
        accuracy += e.mass * ((1 - prob_second) * e.p1 + prob_second * e.p2)
    return 1 - accuracy


def upper_bound_accuracy(instance: SelectionInstance) -> Fraction:
    """Accuracy of a perfect selector: always the better method."""
    return sum((e.mass * max(e.p1, e.p2) for e in instance.entries), Fraction(0))


def overall_rho(instance: SelectionInstance) -> Fraction:
    """Mass-weighted selector quality: how often the better method is picked."""
    return sum((e.mass * e.rho for e in instance.entries), Fraction(0))


# ---------------------------------------------------------------------------
# Adversarial construction: a weak selector that still beats both methods
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeakSelectorParams:
    """Parameters for a two-block population with a lopsided selector.

    ``T`` of the ``n`` items lose ``epsilon`` when switched to the second
    method; the remaining ``n - T`` gain ``beta``, sized so the two methods tie
    on average.  The selector is right with probability ``lam`` on the losing
    block and just good enough on the gaining block (a ``delta``-sized margin)
    to come out ahead overall.  ``base_level`` anchors the first method's
    per-item correctness probability.
    """

    n: int
    T: int
    epsilon: Fraction
    delta: Fraction
    lam: Fraction
    base_level: Fraction = Fraction(1, 2)

    def __post_init__(self) -> None:
        object.__setattr__(self, "epsilon", _fraction(self.epsilon, "epsilon"))
        object.__setattr__(self, "delta", _fraction(self.delta, "delta"))
        object.__setattr__(self, "lam", _fraction(self.lam, "lam"))
        object.__setattr__(self, "base_level", _fraction(self.base_level, "base_level"))
        if self.n < 2:
            raise ConstructionInvalid(f"n must be at least 2, got {self.n}")
        if not (1 <= self.T < self.n):
            raise ConstructionInvalid(f"T must satisfy 1 <= T < n, got T={self.T}, n={self.n}")
        if not (0 < self.epsilon < 1):
            raise ConstructionInvalid(f"epsilon must be in (0, 1), got {self.epsilon}")
        if not (0 < self.delta < 1):
            raise ConstructionInvalid(f"delta must be in (0, 1), got {self.delta}")
        if not (0 < self.lam <= 1):
            raise ConstructionInvalid(f"lam must be in (0, 1], got {self.lam}")
        if not (0 < self.beta < 1):
            raise ConstructionInvalid(
                f"beta = epsilon*T/(n-T) must be in (0, 1), got {self.beta}"
            )
        if self.lam < self.min_lam:
            raise ConstructionInvalid(
                f"lam must be at least 1 - beta*(n-T-delta)/(epsilon*T) = {self.min_lam}, "
                f"got {self.lam}"
            )
        if self.base_level - self.epsilon < 0:
            raise ConstructionInvalid(
                f"base_level - epsilon must be >= 0, got {self.base_level - self.epsilon}"
            )
        if self.base_level + self.beta > 1:
            raise ConstructionInvalid(
                f"base_level + beta must be <= 1, got {self.base_level + self.beta}"
            )

    @property
    def alpha(self) -> Fraction:
        return Fraction(self.T, self.n)

    @property
    def beta(self) -> Fraction:
        """Gain on the small block that exactly offsets the big block's loss."""
        return self.epsilon * self.T / (self.n - self.T)

    @property
    def min_lam(self) -> Fraction:
        # Simplifies to delta/(n-T); written out so the constraint message
        # matches the stated bound.
        return 1 - self.beta * (self.n - self.T - self.delta) / (self.epsilon * self.T)


def feasible_base_level(n: int, T: int, epsilon: RationalLike) -> Fraction:
    """Midpoint of the valid base_level interval [epsilon, 1 - beta].

    Useful because tight parameter points squeeze the interval; at the extreme
    it collapses to a single feasible value.
    """
    eps = _fraction(epsilon, "epsilon")
    if not (1 <= T < n):
        raise ConstructionInvalid(f"T must satisfy 1 <= T < n, got T={T}, n={n}")
    beta = eps * T / (n - T)
    low, high = eps, 1 - beta
    if low > high:
        raise ConstructionInvalid(
            f"no valid base_level: need epsilon <= 1 - beta, got epsilon={eps}, beta={beta}"
        )
    return (low + high) / 2


def construct_weak_selector_instance(params: WeakSelectorParams) -> SelectionInstance:
    """Materialize the two-block population as a concrete instance.

    Uniform mass 1/n.  The losing block gets rho = lam; the gaining block gets
    a uniform rho chosen so that its average clears the break-even threshold by
    exactly delta/(n-T).  That tail rho simplifies to 1 - lam + delta/(n-T).
    """
    n, T = params.n, params.T
    c0 = params.base_level
    mass = Fraction(1, n)
    tail_rho = (
        params.epsilon * Fraction(T, n - T) * (1 - params.lam) / params.beta
        + params.delta / (n - T)
    )
    entries = []
    for _ in range(T):
        entries.append(InstanceEntry(mass, c0, c0 - params.epsilon, params.lam))
    for _ in range(n - T):
        entries.append(InstanceEntry(mass, c0, c0 + params.beta, tail_rho))
    return SelectionInstance(tuple(entries))


def predicted_overall_rho(params: WeakSelectorParams) -> Fraction:
    """Closed-form overall selector quality of the constructed instance."""
    a, lam = params.alpha, params.lam
    return 1 - a + lam * (2 * a - 1) + params.delta / params.n


# ---------------------------------------------------------------------------
# Asymptotic sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    params: WeakSelectorParams
    rho: Fraction
    err: Fraction
    err1: Fraction
    err2: Fraction


def evaluate_params(params: WeakSelectorParams) -> SweepPoint:
    instance = construct_weak_selector_instance(params)
    err1, err2 = base_errors(instance)
    return SweepPoint(
        params=params,
        rho=overall_rho(instance),
        err=combined_error(instance),
        err1=err1,
        err2=err2,
    )


def alpha_sweep(steps: int, tail: int = 10) -> list[SweepPoint]:
    """A documented sequence driving overall selector quality toward zero.

    Step k keeps the gaining block at a fixed ``tail`` items while the losing
    block grows: n = tail*(k+1), T = tail*k, so alpha = k/(k+1) rises toward 1.
    delta = 1/(k+1) shrinks, lam sits at its floor delta/tail, epsilon = 1/(2k)
    keeps beta pinned at 1/2 so base_level = 1/2 stays feasible throughout.
    Every step still strictly improves on both methods, yet rho falls
    monotonically.
    """
    if steps < 1:
        raise ConstructionInvalid(f"steps must be >= 1, got {steps}")
    points = []
    for k in range(1, steps + 1):
        delta = Fraction(1, k + 1)
        params = WeakSelectorParams(
            n=tail * (k + 1),
            T=tail * k,
            epsilon=Fraction(1, 2 * k),
            delta=delta,
            lam=delta / tail,
            base_level=Fraction(1, 2),
        )
        points.append(evaluate_params(params))
    return points


SWEEP_COLUMNS = ("n", "T", "alpha", "epsilon", "delta", "lambda", "beta", "rho", "err", "err1", "err2")


def write_sweep_csv(points: Sequence[SweepPoint], out: IO[str]) -> None:
    writer = csv.writer(out)
    writer.writerow(SWEEP_COLUMNS)
    for point in points:
        p = point.params
        writer.writerow(
            [p.n, p.T]
            + [
                format(float(x), ".12g")
                for x in (p.alpha, p.epsilon, p.delta, p.lam, p.beta, point.rho, point.err, point.err1, point.err2)
            ]
        )


# ---------------------------------------------------------------------------
# Monte-Carlo cross-check (the one floating-point corner)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MonteCarloResult:
    trials: int
    err_hat: float
    rho_hat: float
    err_stderr: float
    rho_stderr: float


def monte_carlo(
    instance: SelectionInstance, trials: int, seed: int, shards: int = 1
) -> MonteCarloResult:
    """Simulate the ensemble: draw an item, a selector coin, a correctness coin.

    Seeded and shardable: each shard gets an independent substream spawned from
    the seed, so results are reproducible for a fixed (seed, shards) pair and
    shards can run in any order.
    """
    if trials < 1 or shards < 1 or trials % shards != 0:
        raise ValueError("trials must be a positive multiple of shards")
    masses = np.array([float(e.mass) for e in instance.entries])
    masses = masses / masses.sum()
    p1 = np.array([float(e.p1) for e in instance.entries])
    p2 = np.array([float(e.p2) for e in instance.entries])
    rho = np.array([float(e.rho) for e in instance.entries])
    better_is_second = np.array([e.regret_gap >= 0 for e in instance.entries])

    per_shard = trials // shards
    incorrect = 0
    picked_better = 0
    for child in np.random.SeedSequence(seed).spawn(shards):
        rng = np.random.default_rng(child)
        idx = rng.choice(len(instance.entries), size=per_shard, p=masses)
        hit_better = rng.random(per_shard) < rho[idx]
        p_better = np.where(better_is_second[idx], p2[idx], p1[idx])
        p_other = np.where(better_is_second[idx], p1[idx], p2[idx])
        p_chosen = np.where(hit_better, p_better, p_other)
        correct = rng.random(per_shard) < p_chosen
        incorrect += int(per_shard - correct.sum())
        picked_better += int(hit_better.sum())

    err_hat = incorrect / trials
    rho_hat = picked_better / trials
    return MonteCarloResult(
        trials=trials,
        err_hat=err_hat,
        rho_hat=rho_hat,
        err_stderr=float(np.sqrt(err_hat * (1 - err_hat) / trials)),
        rho_stderr=float(np.sqrt(rho_hat * (1 - rho_hat) / trials)),
    )
