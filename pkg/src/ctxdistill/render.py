"""Render a candidate context, replacing omitted units with placeholders.

Included files are emitted in document order; every maximal run of
excluded sibling subtrees collapses into one ``# ... N lines omitted``
line at the run's indentation, where N sums the omitted leaves' line
counts.  Fully included trees reproduce the original sources byte for
byte.  Excluded files are left out entirely.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

from .code_model import CodeUnit, Level, UnitTree, subtree_leaf_ids
from .tokens import TokenCounter, get_counter

PLACEHOLDER_RE = re.compile(r"^(\s*)# \.\.\. (\d+) lines omitted$")

FILE_SEPARATOR = "### FILE: "


class RenderError(ValueError):
    """Raised when the inclusion set is not upward-closed (or names
    unknown units); lists the violating ids."""

    def __init__(self, message: str, violating_ids: list[str]):
        super().__init__(message)
        self.violating_ids = violating_ids


@dataclass(frozen=True)
class RenderedFile:
    path: str
    text: str


@dataclass
class RenderedContext:
    per_file: list[RenderedFile]
    total_tokens: int
    included_leaf_ids: frozenset[str]

    def dump_text(self) -> str:
        """Plain-text dump with a separator line per file."""
        parts: list[str] = []
        for rf in self.per_file:
            parts.append(f"{FILE_SEPARATOR}{rf.path}\n")
            parts.append(rf.text)
            if rf.text and not rf.text.endswith("\n"):
                parts.append("\n")
        return "".join(parts)


def _check_closed(tree: UnitTree, included: frozenset[str]) -> None:
    unknown = [uid for uid in sorted(included) if uid not in tree.index]
    if unknown:
        raise RenderError(f"unknown unit ids: {', '.join(unknown)}", unknown)
    violating = [
        uid
        for uid in sorted(included)
        if tree.index[uid].parent_id is not None and tree.index[uid].parent_id not in included
    ]
    if violating:
        raise RenderError(
            "inclusion set is not upward-closed; violating ids: " + ", ".join(violating),
            violating,
        )


def _indent_of(lines: list[str], span_start: int, span_end: int) -> str:
    for i in range(span_start - 1, span_end):
        line = lines[i]
        if line.strip():
            return line[: len(line) - len(line.lstrip())]
    return ""


def placeholder_line(indent: str, omitted_lines: int) -> str:
    return f"{indent}# ... {omitted_lines} lines omitted\n"


def _emit(
    tree: UnitTree,
    unit: CodeUnit,
    included: frozenset[str],
    lines: list[str],
    out: list[str],
) -> None:
    if unit.is_leaf:
        out.extend(lines[unit.span.start_line - 1 : unit.span.end_line])
        return
    children = [tree.index[cid] for cid in unit.child_ids]
    i = 0
    while i < len(children):
        child = children[i]
        if child.id in included:
            _emit(tree, child, included, lines, out)
            i += 1
            continue
        # maximal run of excluded siblings becomes one placeholder
        run_start = child.span.start_line
        run_end = child.span.end_line
        omitted_lines = sum(
            tree.index[lid].source_line_count for lid in subtree_leaf_ids(tree, child.id)
        )
        i += 1
        while i < len(children) and children[i].id not in included:
            run_end = children[i].span.end_line
            omitted_lines += sum(
                tree.index[lid].source_line_count
                for lid in subtree_leaf_ids(tree, children[i].id)
            )
            i += 1
        indent = _indent_of(lines, run_start, run_end)
        out.append(placeholder_line(indent, omitted_lines))


def render(
    tree: UnitTree,
    included: Iterable[str],
    counter: TokenCounter | None = None,
) -> RenderedContext:
    """Render the context selected by an upward-closed inclusion set."""
    included_set = frozenset(included)
    _check_closed(tree, included_set)
    counter = counter or get_counter()

    per_file: list[RenderedFile] = []
    leaf_ids: set[str] = set()
    for file_unit in tree.files:
        if file_unit.id not in included_set:
            continue
        lines = tree.sources[file_unit.path].splitlines(keepends=True)
        out: list[str] = []
        _emit(tree, file_unit, included_set, lines, out)
        per_file.append(RenderedFile(file_unit.path, "".join(out)))
        leaf_ids.update(
            lid for lid in subtree_leaf_ids(tree, file_unit.id) if lid in included_set
        )

    rendered = RenderedContext(per_file, 0, frozenset(leaf_ids))
    rendered.total_tokens = counter(rendered.dump_text())
    return rendered


def render_full(tree: UnitTree, counter: TokenCounter | None = None) -> RenderedContext:
    """Render with every unit included (the uncompressed context)."""
    return render(tree, tree.unit_order, counter)
