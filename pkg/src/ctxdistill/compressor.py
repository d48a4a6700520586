"""Inference-time compression: score segments against a structured query
and assemble a compressed context by budget-aware greedy selection.

Scorers are pluggable.  The built-in heuristic needs no model: it mixes
identifier overlap with the issue text and proximity to a fault
location.  A remote cross-encoder can be reached over HTTP.  Segments
longer than the scoring window are scored in overlapping line-aligned
windows and aggregated by max.
"""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

from .code_model import CodeUnit, Level, UnitTree, enclosing_unit, leaf_segments, unit_text, upward_closure
from .instance import FaultLocation, Instance
from .priority import lex_identifiers
from .render import RenderedContext, render, render_full
from .tokens import TokenCounter, get_counter

log = logging.getLogger(__name__)

ENV_SCORER_URL = "OCD_SCORER_URL"


class ScorerError(RuntimeError):
    """One scoring batch failed (retryable)."""


class ScorerUnavailableError(RuntimeError):
    """The remote scorer endpoint cannot be reached at all."""


@dataclass(frozen=True)
class StructuredQuery:
    issue_text: str
    fault_locations: tuple[FaultLocation, ...]
    rendered: str


def build_query(issue_text: str, fault_locations: Sequence[FaultLocation]) -> StructuredQuery:
    """Deterministic canonical text form of the issue plus fault locations."""
    if not issue_text:
        raise ValueError("issue_text must be non-empty")
    parts = [f"ISSUE:\n{issue_text}\n\nFAULT LOCATIONS:\n"]
    for fl in fault_locations:
        suffix = f" [{fl.symbol}]" if fl.symbol else ""
        parts.append(f"- {fl.path}:{fl.line}{suffix}\n")
    return StructuredQuery(issue_text, tuple(fault_locations), "".join(parts))


@dataclass(frozen=True)
class WindowConfig:
    window_tokens: int = 512
    stride_tokens: int = 256

    def __post_init__(self) -> None:
        if self.window_tokens < 1 or self.stride_tokens < 1:
            raise ValueError("window and stride must be positive")


@dataclass(frozen=True)
class CompressionBudget:
    target_rate: float
    budget_tokens: int

    @classmethod
    def from_rate(cls, initial_tokens: int, target_rate: float) -> "CompressionBudget":
        if target_rate <= 1:
            raise ValueError("compression rate must be > 1")
        return cls(target_rate, math.floor(initial_tokens / target_rate))


@dataclass(frozen=True)
class ScoredSegment:
    unit_id: str
    score: float
    token_cost: int
    priority_tiebreak: float
    order_tiebreak: int


class SegmentScorer(Protocol):
    max_batch_size: int

    def score_batch(self, query: StructuredQuery, segments: Sequence[str]) -> list[float]: ...


# --- heuristic scorer ----------------------------------------------------


def _near_fault(unit: CodeUnit, tree: UnitTree, faults: Sequence[FaultLocation]) -> bool:
    for fl in faults:
        if fl.path != unit.path:
            continue
        if unit.span.contains_line(fl.line):
            return True
        enclosing = enclosing_unit(tree, fl.path, fl.line, level=Level.FUNCTION)
        if enclosing is not None and (
            enclosing.span.contains(unit.span) or unit.span.contains(enclosing.span)
        ):
            return True
    return False


def heuristic_score(
    query: StructuredQuery,
    segment_text: str,
    unit: CodeUnit | None = None,
    tree: UnitTree | None = None,
) -> float:
    """Oracle-free default score: half identifier overlap with the issue,
    half fault-location proximity (when the unit is known)."""
    issue_ids = lex_identifiers(query.issue_text)
    if issue_ids:
        overlap = len(lex_identifiers(segment_text) & issue_ids) / len(issue_ids)
    else:
        overlap = 0.0
    fault = 0.0
    if unit is not None and tree is not None and _near_fault(unit, tree, query.fault_locations):
        fault = 1.0
    return 0.5 * overlap + 0.5 * fault


class HeuristicScorer:
    """Scores segments with :func:`heuristic_score`; no model required."""

    max_batch_size = 256

    def __init__(self, tree: UnitTree):
        self.tree = tree

    def score_batch(self, query: StructuredQuery, segments: Sequence[str]) -> list[float]:
        return [heuristic_score(query, text) for text in segments]

    def score_units(
        self, query: StructuredQuery, items: Sequence[tuple[CodeUnit | None, str]]
    ) -> list[float]:
        return [
            heuristic_score(query, text, unit=unit, tree=self.tree) for unit, text in items
        ]


# --- remote scorer --------------------------------------------------------


class RemoteScorer:
    """HTTP client for a served cross-encoder.

    Wire contract: ``POST /score`` with ``{"query": str, "segments":
    [str]}`` returning ``{"scores": [float]}``; ``GET /capabilities``
    advertises ``{"max_batch_size": int}``.
    """

    def __init__(self, base_url: str | None = None, timeout: int = 60, http=None):
        self.base_url = (base_url or os.environ.get(ENV_SCORER_URL, "")).rstrip("/")
        if not self.base_url:
            raise ScorerUnavailableError(f"no scorer endpoint configured (set {ENV_SCORER_URL})")
        self.timeout = timeout
        if http is None:
            import requests

            http = requests
        self.http = http
        try:
            response = self.http.get(f"{self.base_url}/capabilities", timeout=self.timeout)
            response.raise_for_status()
            self.max_batch_size = int(response.json().get("max_batch_size", 32))
        except Exception as exc:  # noqa: BLE001
            raise ScorerUnavailableError(f"scorer endpoint unreachable: {exc}") from exc

    def score_batch(self, query: StructuredQuery, segments: Sequence[str]) -> list[float]:
        try:
            response = self.http.post(
                f"{self.base_url}/score",
                json={"query": query.rendered, "segments": list(segments)},
                timeout=self.timeout,
            )
            response.raise_for_status()
            scores = response.json()["scores"]
        except Exception as exc:  # noqa: BLE001
            raise ScorerError(f"scoring batch failed: {exc}") from exc
        if len(scores) != len(segments):
            raise ScorerError("scorer returned a mismatched number of scores")
        return [float(s) for s in scores]


# --- sliding-window scoring ----------------------------------------------


def split_windows(text: str, cfg: WindowConfig, counter: TokenCounter) -> list[str]:
    """Overlapping line-aligned windows of roughly ``window_tokens`` each,
    advancing by roughly ``stride_tokens``."""
    lines = text.splitlines(keepends=True)
    if not lines:
        return [text]
    costs = [counter(line) for line in lines]
    windows: list[str] = []
    start = 0
    while start < len(lines):
        end = start
        total = 0
        while end < len(lines) and (total + costs[end] <= cfg.window_tokens or end == start):
            total += costs[end]
            end += 1
        windows.append("".join(lines[start:end]))
        if end >= len(lines):
            break
        stride_total = 0
        next_start = start
        while next_start < end and stride_total < cfg.stride_tokens:
            stride_total += costs[next_start]
            next_start += 1
        start = max(next_start, start + 1)
    return windows


def _clamp01(value: float) -> float:
    return min(1.0, max(0.0, float(value)))


def score_segments(
    query: StructuredQuery,
    segments: Sequence[tuple[CodeUnit, str]],
    scorer: SegmentScorer,
    window_cfg: WindowConfig | None = None,
    counter: TokenCounter | None = None,
    tiebreak: Callable[[CodeUnit, str], float] | None = None,
) -> list[ScoredSegment]:
    """Score each segment, windowing the ones longer than the scorer
    window and taking the max over window scores."""
    window_cfg = window_cfg or WindowConfig()
    counter = counter or get_counter()

    pieces: list[tuple[int, CodeUnit, str]] = []
    token_costs: list[int] = []
    for idx, (unit, text) in enumerate(segments):
        cost = counter(text)
        token_costs.append(cost)
        if cost <= window_cfg.window_tokens:
            pieces.append((idx, unit, text))
        else:
            for window in split_windows(text, window_cfg, counter):
                pieces.append((idx, unit, window))

    batch_size = max(1, getattr(scorer, "max_batch_size", 32))
    piece_scores: list[float] = []
    for offset in range(0, len(pieces), batch_size):
        batch = pieces[offset : offset + batch_size]
        items = [(unit, text) for _, unit, text in batch]
        texts = [text for _, text in items]
        scores: list[float] | None = None
        for attempt in range(2):
            try:
                if hasattr(scorer, "score_units"):
                    scores = scorer.score_units(query, items)
                else:
                    scores = scorer.score_batch(query, texts)
                break
            except ScorerError as exc:
                if attempt == 0:
                    continue
                log.warning("scoring batch failed twice, assigning zeros: %s", exc)
        if scores is None:
            scores = [0.0] * len(batch)
        piece_scores.extend(_clamp01(s) for s in scores)

    best: dict[int, float] = {}
    for (idx, _unit, _text), score in zip(pieces, piece_scores):
        best[idx] = max(best.get(idx, 0.0), score)

    results = []
    for idx, (unit, text) in enumerate(segments):
        results.append(
            ScoredSegment(
                unit_id=unit.id,
                score=best.get(idx, 0.0),
                token_cost=token_costs[idx],
                priority_tiebreak=tiebreak(unit, text) if tiebreak else 0.0,
                order_tiebreak=idx,
            )
        )
    return results


# --- selection and the full pipeline ---------------------------------------


def select_greedy(scored: Sequence[ScoredSegment], budget: CompressionBudget) -> set[str]:
    """Descending-score greedy selection under the token budget.

    Ties break by priority then document order.  The single
    highest-ranked segment is always taken, even over budget; in that
    case it is the only selection.
    """
    ordered = sorted(
        scored, key=lambda s: (-s.score, -s.priority_tiebreak, s.order_tiebreak)
    )
    selected: set[str] = set()
    remaining = budget.budget_tokens
    for i, seg in enumerate(ordered):
        if i == 0:
            selected.add(seg.unit_id)
            if seg.token_cost > budget.budget_tokens:
                log.warning(
                    "top segment %s exceeds the budget (%d > %d tokens); kept anyway",
                    seg.unit_id,
                    seg.token_cost,
                    budget.budget_tokens,
                )
                break
            remaining -= seg.token_cost
        elif seg.token_cost <= remaining:
            selected.add(seg.unit_id)
            remaining -= seg.token_cost
    return selected


@dataclass
class CompressionResult:
    rendered: RenderedContext
    initial_tokens: int
    compressed_tokens: int
    achieved_rate: float
    latency_seconds: float
    selected_segment_ids: list[str]

    def stats(self) -> dict:
        return {
            "initial_tokens": self.initial_tokens,
            "compressed_tokens": self.compressed_tokens,
            "achieved_rate": self.achieved_rate,
            "latency_seconds": self.latency_seconds,
            "selected_segment_ids": self.selected_segment_ids,
        }


def compress(
    instance: Instance,
    tree: UnitTree,
    scorer: SegmentScorer,
    rate: float,
    window_cfg: WindowConfig | None = None,
    counter: TokenCounter | None = None,
) -> CompressionResult:
    """Full pipeline: query -> scores -> greedy selection -> rendering."""
    counter = counter or get_counter()
    start = time.perf_counter()

    initial = render_full(tree, counter)
    budget = CompressionBudget.from_rate(initial.total_tokens, rate)
    query = build_query(instance.issue_text, instance.fault_locations)

    segments = [(leaf, unit_text(tree, leaf)) for leaf in leaf_segments(tree)]
    scored = score_segments(
        query,
        segments,
        scorer,
        window_cfg=window_cfg,
        counter=counter,
        tiebreak=lambda unit, text: heuristic_score(query, text, unit=unit, tree=tree),
    )
    chosen = select_greedy(scored, budget)
    rendered = render(tree, upward_closure(tree, chosen), counter)
    latency = time.perf_counter() - start

    compressed_tokens = rendered.total_tokens
    achieved = (
        initial.total_tokens / compressed_tokens if compressed_tokens else math.inf
    )
    order_pos = tree.order_pos
    return CompressionResult(
        rendered=rendered,
        initial_tokens=initial.total_tokens,
        compressed_tokens=compressed_tokens,
        achieved_rate=achieved,
        latency_seconds=latency,
        selected_segment_ids=sorted(chosen, key=lambda uid: order_pos[uid]),
    )
