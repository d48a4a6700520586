"""Instance input files: one issue plus the code context retrieved for it.

JSON schema::

    {
      "instance_id": str,
      "issue_text": str,
      "fault_location": [{"path": str, "line": int, "symbol": str?}],
      "context_files": [{"path": str}],
      "repo_root": str,
      "gold_patch_path": str?,        # distillation only
      "coverage_report_path": str?,   # distillation only
      "test_command": str?            # distillation only
    }

Mock-oracle runs may add ``mock_required`` / ``mock_distractors``: lists
of leaf ids or ``{"path", "line"}`` locators resolved against the tree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .code_model import UnitTree, build_tree, enclosing_leaf


class InstanceError(ValueError):
    pass


@dataclass(frozen=True)
class FaultLocation:
    path: str
    line: int
    symbol: str | None = None

    def to_json(self) -> dict:
        data: dict = {"path": self.path, "line": self.line}
        if self.symbol is not None:
            data["symbol"] = self.symbol
        return data

    @classmethod
    def from_json(cls, data: dict) -> "FaultLocation":
        return cls(path=str(data["path"]), line=int(data["line"]), symbol=data.get("symbol"))


@dataclass
class Instance:
    instance_id: str
    issue_text: str
    fault_locations: list[FaultLocation]
    context_files: list[str]
    repo_root: str
    gold_patch_path: str | None = None
    coverage_report_path: str | None = None
    test_command: str | None = None
    repo: str = ""
    mock_required: list = field(default_factory=list)
    mock_distractors: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.repo:
            self.repo = Path(self.repo_root).name


def load_instance(path: str | Path) -> Instance:
    path = Path(path)
    if not path.exists():
        raise InstanceError(f"instance file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InstanceError(f"instance file {path} is not valid JSON: {exc}") from exc

    for key in ("instance_id", "issue_text", "fault_location", "context_files", "repo_root"):
        if key not in data:
            raise InstanceError(f"instance file {path} missing required key: {key}")

    faults = [FaultLocation.from_json(f) for f in data["fault_location"]]
    context_files = []
    for entry in data["context_files"]:
        context_files.append(entry["path"] if isinstance(entry, dict) else str(entry))

    return Instance(
        instance_id=str(data["instance_id"]),
        issue_text=str(data["issue_text"]),
        fault_locations=faults,
        context_files=context_files,
        repo_root=str(data["repo_root"]),
        gold_patch_path=data.get("gold_patch_path"),
        coverage_report_path=data.get("coverage_report_path"),
        test_command=data.get("test_command"),
        repo=str(data.get("repo", "")),
        mock_required=list(data.get("mock_required", [])),
        mock_distractors=list(data.get("mock_distractors", [])),
    )


def load_sources(instance: Instance) -> list[tuple[str, str]]:
    """Read every context file from the instance's repository root."""
    root = Path(instance.repo_root)
    sources = []
    for rel in instance.context_files:
        target = root / rel
        if not target.exists():
            raise InstanceError(f"context file not found: {target}")
        sources.append((rel, target.read_text(encoding="utf-8")))
    return sources


def build_instance_tree(instance: Instance) -> UnitTree:
    return build_tree(instance.instance_id, load_sources(instance))


def resolve_leaf_locators(tree: UnitTree, locators: list) -> frozenset[str]:
    """Resolve leaf ids or ``{path, line}`` locators to leaf segment ids."""
    resolved: set[str] = set()
    for loc in locators:
        if isinstance(loc, str):
            unit = tree.unit(loc)
            if not unit.is_leaf:
                raise InstanceError(f"locator {loc} names a non-leaf unit")
            resolved.add(loc)
        elif isinstance(loc, dict):
            leaf = enclosing_leaf(tree, loc["path"], int(loc["line"]))
            if leaf is None:
                raise InstanceError(
                    f"no leaf segment contains {loc['path']}:{loc['line']}"
                )
            resolved.add(leaf.id)
        else:
            raise InstanceError(f"unsupported locator: {loc!r}")
    return frozenset(resolved)
