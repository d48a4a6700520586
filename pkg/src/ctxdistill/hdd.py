"""Phase II: level-wise ddmin that shrinks a sufficient context until it
is 1-minimal.

Three passes (file, then function, then block) each run the classic
complement-testing ddmin over the level's units, visiting low-priority
units first.  Removing a unit always removes its whole subtree, so every
candidate stays renderable.  A final certification sweep re-tests every
remaining leaf with a fresh oracle evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .code_model import Level, UnitTree, subtree_leaf_ids
from .oracle import OracleBudgetExhausted, OracleSession, verdict_cache_key

TraceWriter = Callable[[dict], None]

PASS_LEVELS = (Level.FILE, Level.FUNCTION, Level.BLOCK)


class InsufficientContextError(ValueError):
    """ddmin was handed a context the oracle already rejects."""


@dataclass
class MinimizationResult:
    retained_leaf_ids: frozenset[str]
    oracle_calls: int
    per_level_removed: dict[str, int]
    one_minimal_certified: bool


def _level_units(tree: UnitTree, level: Level, retained: frozenset[str]) -> list[str]:
    """Units of ``level`` that still own at least one retained leaf."""
    return [
        uid
        for uid in tree.unit_order
        if tree.index[uid].level is level and subtree_leaf_ids(tree, uid) & retained
    ]


def _chunks(units: list[str], n: int) -> list[list[str]]:
    total = len(units)
    bounds = [(i * total) // n for i in range(n + 1)]
    return [units[bounds[i] : bounds[i + 1]] for i in range(n)]


def ddmin_level(
    retained: frozenset[str],
    level: Level,
    tree: UnitTree,
    session: OracleSession,
    phi: dict[str, float],
    trace: TraceWriter | None = None,
    verified: bool = False,
) -> frozenset[str]:
    """Remove every removable unit of one level from the retained leaf set.

    Terminates when no single remaining unit of the level can be dropped
    without the oracle rejecting the result.
    """
    if not verified:
        verdict = session.evaluate(retained)
        if trace:
            trace(
                {
                    "pass_level": "verify",
                    "step": 0,
                    "candidate_hash": verdict_cache_key(session.instance_id, retained),
                    "removed_count": 0,
                    "sufficient": verdict.sufficient,
                }
            )
        if not verdict.sufficient:
            raise InsufficientContextError(
                f"initial context rejected before {level.value}-level reduction"
            )

    # ascending priority, document order on ties: low-value units go first
    order_pos = tree.order_pos
    units = sorted(
        _level_units(tree, level, retained),
        key=lambda uid: (phi.get(uid, 0.0), order_pos[uid]),
    )
    step = 0
    n = min(2, len(units))
    while units and n >= 1:
        n = min(n, len(units))
        reduced = False
        for chunk in _chunks(units, n):
            if not chunk:
                continue
            dropped = frozenset().union(
                *(subtree_leaf_ids(tree, uid) for uid in chunk)
            )
            candidate = retained - dropped
            verdict = session.evaluate(candidate)
            if trace:
                trace(
                    {
                        "pass_level": level.value,
                        "step": step,
                        "candidate_hash": verdict_cache_key(session.instance_id, candidate),
                        "removed_count": len(retained) - len(candidate),
                        "sufficient": verdict.sufficient,
                    }
                )
            step += 1
            if verdict.sufficient:
                retained = candidate
                chunk_set = set(chunk)
                units = [uid for uid in units if uid not in chunk_set]
                n = max(n - 1, 2)
                reduced = True
                break
        if not reduced:
            if n >= len(units):
                break
            n = min(n * 2, len(units))
    return retained


def minimize(
    initial_leaf_ids: frozenset[str],
    tree: UnitTree,
    session: OracleSession,
    phi: dict[str, float],
    trace: TraceWriter | None = None,
) -> MinimizationResult:
    """File, function, then block reduction plus a certification sweep.

    If the oracle budget runs out mid-pass the best retained set so far
    is returned uncertified.
    """
    retained = frozenset(initial_leaf_ids)
    calls_before = session.invocations
    per_level_removed: dict[str, int] = {}
    certified = False

    try:
        verdict = session.evaluate(retained)
        if trace:
            trace(
                {
                    "pass_level": "verify",
                    "step": 0,
                    "candidate_hash": verdict_cache_key(session.instance_id, retained),
                    "removed_count": 0,
                    "sufficient": verdict.sufficient,
                }
            )
        if not verdict.sufficient:
            raise InsufficientContextError("minimize requires a sufficient starting context")

        for level in PASS_LEVELS:
            before = len(retained)
            retained = ddmin_level(
                retained, level, tree, session, phi, trace=trace, verified=True
            )
            per_level_removed[level.value] = before - len(retained)

        # certification: every remaining leaf must be individually necessary,
        # judged by fresh evaluations rather than cached verdicts
        certified = True
        order_pos = tree.order_pos
        for step, leaf_id in enumerate(sorted(retained, key=lambda uid: order_pos[uid])):
            candidate = retained - {leaf_id}
            verdict = session.evaluate(candidate, fresh=True)
            if trace:
                trace(
                    {
                        "pass_level": "certify",
                        "step": step,
                        "candidate_hash": verdict_cache_key(session.instance_id, candidate),
                        "removed_count": 1,
                        "sufficient": verdict.sufficient,
                    }
                )
            if verdict.sufficient:
                certified = False
    except OracleBudgetExhausted:
        certified = False

    return MinimizationResult(
        retained_leaf_ids=retained,
        oracle_calls=session.invocations - calls_before,
        per_level_removed=per_level_removed,
        one_minimal_certified=certified,
    )
