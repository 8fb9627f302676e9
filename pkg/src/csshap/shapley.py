"""Cooperative-game machinery: exact and sampled Shapley values.

Coalitions are integer bitsets (bit i set means player i is present).
Value functions may return a scalar or a fixed-shape vector; vector games
let one pass of expensive evaluations serve several targets at once (one
masking evaluation yields every class probability).

``exact_shapley`` enumerates all subsets and is capped at 20 players.
``sampled_shapley`` is the unbiased permutation estimator: each sampled
ordering contributes one marginal per player, values are the means and the
standard errors come from the per-player variance across orderings.
Marginals along one ordering telescope, so efficiency (values summing to
``v(U) - v(empty)``) holds exactly for the sampled estimator as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CapacityError, InvalidInputError

EXACT_PLAYER_LIMIT = 20


@dataclass(frozen=True)
class CooperativeGame:
    """A set function over coalitions of ``player_count`` players.

    ``value`` maps a coalition bitset to a float or a 1-D array and must be
    deterministic within a run.  ``batch_value``, when provided, evaluates
    many coalitions at once (same semantics, stacked on the first axis);
    the sampling engine prefers it so expensive games can batch internally.
    """

    player_count: int
    value: Callable[[int], "float | np.ndarray"]
    batch_value: Optional[Callable[[Sequence[int]], np.ndarray]] = None

    def __post_init__(self) -> None:
        if not isinstance(self.player_count, (int, np.integer)) or self.player_count < 1:
            raise InvalidInputError(f"player_count must be a positive integer, got {self.player_count}")
        object.__setattr__(self, "player_count", int(self.player_count))

    @property
    def full_coalition(self) -> int:
        return (1 << self.player_count) - 1


@dataclass(frozen=True)
class ShapleyResult:
    """Shapley values plus estimation metadata.

    ``values`` has shape ``(n,)`` for scalar games or ``(n, m)`` for
    vector-valued games.  ``stderr`` is present only for sampled estimates
    (same shape, entries >= 0).  ``seed`` is None for exact enumeration.
    """

    values: np.ndarray
    stderr: Optional[np.ndarray]
    num_evaluations: int
    seed: Optional[int]

    def efficiency_gap(self, v_full, v_empty) -> np.ndarray:
        """|sum of values - (v(U) - v(empty))| per output component."""
        total = self.values.sum(axis=0)
        return np.abs(total - (np.asarray(v_full) - np.asarray(v_empty)))


def _as_value_array(v) -> np.ndarray:
    out = np.asarray(v, dtype=np.float64)
    if out.ndim > 1:
        raise InvalidInputError("game values must be scalar or 1-D")
    if not np.all(np.isfinite(out)):
        raise InvalidInputError("game value is not finite")
    return out


def _evaluate_coalitions(game: CooperativeGame, bitsets: list[int], cache: dict) -> None:
    """Fill ``cache`` for every bitset, batching when the game supports it."""
    missing = [b for b in bitsets if b not in cache]
    if not missing:
        return
    # preserve first-seen order but evaluate each coalition once
    seen: dict[int, None] = dict.fromkeys(missing)
    unique = list(seen)
    if game.batch_value is not None:
        stacked = np.asarray(game.batch_value(unique), dtype=np.float64)
        if stacked.shape[0] != len(unique):
            raise InvalidInputError(
                f"batch_value returned {stacked.shape[0]} rows for {len(unique)} coalitions"
            )
        for b, row in zip(unique, stacked):
            cache[b] = _as_value_array(row)
    else:
        for b in unique:
            cache[b] = _as_value_array(game.value(b))


def exact_shapley(game: CooperativeGame) -> ShapleyResult:
    """Shapley values by full subset enumeration.

    Weights are ``s! (n-s-1)! / n!`` over all coalitions not containing the
    player.  Efficiency holds to 1e-12.  Capped at 20 players; above that,
    use :func:`sampled_shapley`.
    """
    n = game.player_count
    if n > EXACT_PLAYER_LIMIT:
        raise CapacityError(
            f"exact enumeration supports at most {EXACT_PLAYER_LIMIT} players "
            f"(got {n}); use sampled_shapley instead"
        )
    cache: dict[int, np.ndarray] = {}
    all_masks = list(range(1 << n))
    _evaluate_coalitions(game, all_masks, cache)
    first = cache[0]
    values_table = np.empty((1 << n,) + first.shape, dtype=np.float64)
    for b in all_masks:
        if cache[b].shape != first.shape:
            raise InvalidInputError("game value shape varies across coalitions")
        values_table[b] = cache[b]

    n_fact = math.factorial(n)
    weight_by_size = np.array(
        [math.factorial(s) * math.factorial(n - s - 1) / n_fact for s in range(n)]
    )
    masks = np.arange(1 << n, dtype=np.uint64)
    sizes = np.array([bin(m).count("1") for m in range(1 << n)])
    shape = (n,) + first.shape
    psi = np.zeros(shape, dtype=np.float64)
    for i in range(n):
        without = (masks >> np.uint64(i)) & np.uint64(1) == 0
        base = masks[without].astype(np.int64)
        marginal = values_table[base | (1 << i)] - values_table[base]
        w = weight_by_size[sizes[base]]
        psi[i] = np.tensordot(w, marginal, axes=(0, 0))
    if first.shape == ():
        psi = psi.reshape(n)
    return ShapleyResult(values=psi, stderr=None, num_evaluations=1 << n, seed=None)


def sampled_shapley(game: CooperativeGame, num_permutations: int, seed: int) -> ShapleyResult:
    """Permutation-sampling Shapley estimate.

    The permutation schedule is drawn once from ``seed``; every distinct
    coalition prefix is evaluated exactly once (cached by bitset), batched
    through the game's ``batch_value`` when available.  Values are marginal
    means, stderr is the across-permutation standard error.  Deterministic
    given the seed.
    """
    n = game.player_count
    if num_permutations < 2:
        raise InvalidInputError(f"num_permutations must be >= 2, got {num_permutations}")
    rng = np.random.default_rng(seed)
    perms = [rng.permutation(n) for _ in range(num_permutations)]

    # collect every prefix coalition the schedule will need
    needed: dict[int, None] = dict.fromkeys([0, game.full_coalition])
    for perm in perms:
        mask = 0
        for p in perm:
            mask |= 1 << int(p)
            needed.setdefault(mask, None)
    cache: dict[int, np.ndarray] = {}
    _evaluate_coalitions(game, list(needed), cache)

    first = cache[0]
    # per-permutation marginals, kept so the variance is two-pass (the
    # one-pass formula cancels catastrophically for near-constant games)
    marginals = np.empty((num_permutations,) + (n,) + first.shape, dtype=np.float64)
    for j, perm in enumerate(perms):
        mask = 0
        prev = cache[0]
        for p in perm:
            p = int(p)
            mask |= 1 << p
            cur = cache[mask]
            marginals[j, p] = cur - prev
            prev = cur
    values = marginals.mean(axis=0)
    var = np.sum((marginals - values) ** 2, axis=0) / (num_permutations - 1)
    stderr = np.sqrt(var / num_permutations)
    if first.shape == ():
        values = values.reshape(n)
        stderr = stderr.reshape(n)
    return ShapleyResult(
        values=values, stderr=stderr, num_evaluations=len(cache), seed=int(seed)
    )
