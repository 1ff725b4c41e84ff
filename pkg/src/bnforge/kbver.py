"""Content-addressed knowledge-base versions, change log and structural diff.

Store layout (see docs/store.md)::

    <root>/objects/<version_id>.bnkb   canonical serialization, write-once
    <root>/log.jsonl                   one JSON record per snapshot, append-only

A version id is the SHA-256 hex digest of the canonical serialization, so
formatting churn never creates a new version.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .core import BnError, Explicit
from .dsl import (
    ConstraintDecl,
    KnowledgeBase,
    format_constraint,
    parse_kb,
    serialize_kb,
)
from .fragments import Fragment


class StoreError(BnError):
    pass


class UnknownVersion(StoreError):
    pass


def version_id(kb: KnowledgeBase) -> str:
    return hashlib.sha256(serialize_kb(kb).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class KbVersion:
    version_id: str
    parent_id: str | None
    message: str
    rationale: str
    timestamp: str

    def to_json(self) -> dict:
        return {
            "id": self.version_id,
            "parent": self.parent_id,
            "message": self.message,
            "rationale": self.rationale,
            "timestamp": self.timestamp,
        }


def _atomic_write(path: Path, data: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Store:
    """Single-writer version store rooted at a directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    @property
    def objects(self) -> Path:
        return self.root / "objects"

    @property
    def log_path(self) -> Path:
        return self.root / "log.jsonl"

    def _records(self) -> list[KbVersion]:
        if not self.log_path.exists():
            return []
        out = []
        for line in self.log_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                d = json.loads(line)
                out.append(KbVersion(d["id"], d["parent"], d["message"], d["rationale"], d["timestamp"]))
        return out

    def version(self, vid: str) -> KbVersion:
        for rec in self._records():
            if rec.version_id == vid:
                return rec
        raise UnknownVersion(f"unknown version {vid!r}")

    def resolve(self, ref: str) -> str:
        """Full id for a unique id prefix."""
        matches = sorted({r.version_id for r in self._records() if r.version_id.startswith(ref)})
        if len(matches) != 1:
            raise UnknownVersion(f"{'ambiguous' if matches else 'unknown'} version {ref!r}")
        return matches[0]

    def head(self) -> str | None:
        records = self._records()
        return records[-1].version_id if records else None

    def snapshot(
        self,
        kb: KnowledgeBase,
        message: str,
        rationale: str = "",
        parent: str | None = None,
        timestamp: str | None = None,
    ) -> KbVersion:
        """Store ``kb`` and log it; returns the existing record for known content."""
        text = serialize_kb(kb)
        vid = hashlib.sha256(text.encode("utf-8")).hexdigest()
        for rec in self._records():
            if rec.version_id == vid:
                return rec
        if parent is not None:
            self.version(parent)
        obj = self.objects / f"{vid}.bnkb"
        try:
            if not obj.exists():
                _atomic_write(obj, text)
            rec = KbVersion(vid, parent, message, rationale, timestamp or datetime.now(timezone.utc).isoformat())
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec.to_json()) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise StoreError(f"cannot write to store {self.root}: {exc}") from exc
        return rec

    def load(self, vid: str) -> KnowledgeBase:
        obj = self.objects / f"{vid}.bnkb"
        if not obj.exists():
            raise UnknownVersion(f"unknown version {vid!r}")
        result = parse_kb(obj.read_text(encoding="utf-8"), file=str(obj))
        if result.diagnostics:
            raise StoreError(f"stored version {vid} does not parse: {result.diagnostics[0]}")
        return result.kb

    def diff(self, v1: str, v2: str) -> "KbDiff":
        return diff_kbs(self.load(v1), self.load(v2))

    def log(self) -> list[KbVersion]:
        """History in topological order; siblings by (timestamp, id)."""
        records = self._records()
        by_id = {r.version_id: r for r in records}
        children: dict[str | None, list[KbVersion]] = {}
        for r in records:
            parent = r.parent_id if r.parent_id in by_id else None
            children.setdefault(parent, []).append(r)
        out: list[KbVersion] = []
        ready = sorted(children.get(None, []), key=lambda r: (r.timestamp, r.version_id))
        while ready:
            r = ready.pop(0)
            out.append(r)
            ready.extend(children.get(r.version_id, []))
            ready.sort(key=lambda r: (r.timestamp, r.version_id))
        return out


def log(store: Store) -> list[KbVersion]:
    return store.log()


# --- structural diff --------------------------------------------------------


@dataclass(frozen=True)
class Change:
    kind: str  # definition, class, template, fragment, input, variable, arcs, cpt, cpt_row, instance, model, constraint, scenario
    op: str  # added, removed, changed, reordered
    path: tuple[str, ...]
    before: Any = None
    after: Any = None

    def describe(self) -> str:
        where = "/".join(self.path)
        if self.op == "reordered":
            return f"reordered {self.kind} entries under {where or '<kb>'}"
        return f"{self.op} {self.kind} {where}"


@dataclass(frozen=True)
class KbDiff:
    changes: tuple[Change, ...]

    @property
    def empty(self) -> bool:
        return not self.changes

    def __iter__(self):
        return iter(self.changes)

    def __len__(self) -> int:
        return len(self.changes)


def _keyed(items: Iterable, key: Callable) -> dict:
    out: dict = {}
    for item in items:
        k = key(item)
        n = 0
        while (k, n) in out:
            n += 1
        out[(k, n)] = item
    return {k if n == 0 else f"{k}#{n + 1}": v for (k, n), v in out.items()}


def _diff_keyed(
    old: Mapping, new: Mapping, kind: str, path: tuple[str, ...], changes: list[Change], on_change=None
) -> None:
    for k in old:
        if k not in new:
            changes.append(Change(kind, "removed", path + (str(k),), old[k], None))
    for k in new:
        if k in old and old[k] != new[k]:
            if on_change is None:
                changes.append(Change(kind, "changed", path + (str(k),), old[k], new[k]))
            else:
                on_change(k, old[k], new[k])
    for k in new:
        if k not in old:
            changes.append(Change(kind, "added", path + (str(k),), None, new[k]))
    expected = [k for k in old if k in new] + [k for k in new if k not in old]
    if expected != list(new):
        changes.append(Change(kind, "reordered", path, [str(k) for k in expected], [str(k) for k in new]))


def _apply_keyed(old: Mapping, changes: Sequence[Change], kind: str, path: tuple[str, ...], on_change=None) -> dict:
    items = dict(old)
    n = len(path)
    order = None
    for c in changes:
        if c.kind != kind:
            continue
        if c.op == "reordered" and c.path == path:
            order = c.after
        elif len(c.path) == n + 1 and c.path[:n] == path:
            key = next((k for k in list(items) + [c.path[n]] if str(k) == c.path[n]), c.path[n])
            if c.op == "removed":
                items.pop(key, None)
            elif c.op == "added" or (c.op == "changed" and on_change is None):
                # with on_change, "changed" entries are partial and patched below
                items[key] = c.after
    if on_change is not None:
        items = {k: on_change(k, v) for k, v in items.items()}
    if order is not None:
        by_str = {str(k): k for k in items}
        items = {by_str[s]: items[by_str[s]] for s in order}
    return items


_SECTIONS = (
    ("definitions", "definition", lambda d: d.name),
    ("classes", "class", lambda c: c.name),
    ("templates", "template", lambda t: t.name),
    ("instances", "instance", lambda i: "instance " + i.template + repr(i.bindings)),
    ("models", "model", lambda m: m.name),
    ("constraints", "constraint", lambda c: format_constraint(c.constraint)),
    ("scenarios", "scenario", lambda s: s.name),
)


def _fragment_header(f: Fragment) -> Fragment:
    return replace(f, inputs=(), residents=())


def _var_header(v):
    return replace(v, parents=(), cpt=None)


def _diff_fragment(name: str, old: Fragment, new: Fragment, changes: list[Change]) -> None:
    path = ("fragments", name)
    if _fragment_header(old) != _fragment_header(new):
        changes.append(Change("fragment", "changed", path, _fragment_header(old), _fragment_header(new)))
    _diff_keyed(_keyed(old.inputs, lambda i: i.name), _keyed(new.inputs, lambda i: i.name), "input", path + ("inputs",), changes)

    def var_changed(key, a, b):
        vpath = path + ("variables", str(key))
        if _var_header(a) != _var_header(b):
            changes.append(Change("variable", "changed", vpath, _var_header(a), _var_header(b)))
        if a.parents != b.parents:
            changes.append(Change("arcs", "changed", vpath, a.parents, b.parents))
        if a.cpt != b.cpt:
            if isinstance(a.cpt, Explicit) and isinstance(b.cpt, Explicit):
                _diff_keyed(
                    _keyed(a.cpt.rows, lambda r: _row_key(r[0])),
                    _keyed(b.cpt.rows, lambda r: _row_key(r[0])),
                    "cpt_row",
                    vpath + ("rows",),
                    changes,
                )
            else:
                changes.append(Change("cpt", "changed", vpath, a.cpt, b.cpt))

    _diff_keyed(
        _keyed(old.residents, lambda v: v.name),
        _keyed(new.residents, lambda v: v.name),
        "variable",
        path + ("variables",),
        changes,
        var_changed,
    )


def _row_key(config) -> str:
    return "(" + ", ".join(config) + ")"


def diff_kbs(old: KnowledgeBase, new: KnowledgeBase) -> KbDiff:
    """Structural differences; renames show up as removed + added."""
    changes: list[Change] = []
    for attr, kind, key in _SECTIONS[:3]:
        _diff_keyed(_keyed(getattr(old, attr), key), _keyed(getattr(new, attr), key), kind, (attr,), changes)
    _diff_keyed(
        _keyed(old.fragments, lambda f: f.name),
        _keyed(new.fragments, lambda f: f.name),
        "fragment",
        ("fragments",),
        changes,
        lambda k, a, b: _diff_fragment(k, a, b, changes),
    )
    for attr, kind, key in _SECTIONS[3:]:
        _diff_keyed(_keyed(getattr(old, attr), key), _keyed(getattr(new, attr), key), kind, (attr,), changes)
    return KbDiff(tuple(changes))


def apply_diff(old: KnowledgeBase, diff: KbDiff) -> KnowledgeBase:
    """Replay ``diff`` on ``old``; ``apply_diff(a, diff_kbs(a, b))`` reproduces ``b``."""
    changes = list(diff.changes)
    sections = {}
    for attr, kind, key in _SECTIONS:
        sections[attr] = tuple(_apply_keyed(_keyed(getattr(old, attr), key), changes, kind, (attr,)).values())

    def patch_fragment(name, frag: Fragment) -> Fragment:
        path = ("fragments", str(name))
        for c in changes:
            if c.kind == "fragment" and c.op == "changed" and c.path == path:
                frag = replace(c.after, inputs=frag.inputs, residents=frag.residents)
        inputs = _apply_keyed(_keyed(frag.inputs, lambda i: i.name), changes, "input", path + ("inputs",))

        def patch_var(vname, var):
            vpath = path + ("variables", str(vname))
            for c in changes:
                if c.path != vpath or c.op != "changed":
                    continue
                if c.kind == "variable":
                    var = replace(c.after, parents=var.parents, cpt=var.cpt)
                elif c.kind == "arcs":
                    var = replace(var, parents=tuple(c.after))
                elif c.kind == "cpt":
                    var = replace(var, cpt=c.after)
            if any(c.kind == "cpt_row" and c.path[: len(vpath) + 1] == vpath + ("rows",) for c in changes):
                rows = _apply_keyed(_keyed(var.cpt.rows, lambda r: _row_key(r[0])), changes, "cpt_row", vpath + ("rows",))
                var = replace(var, cpt=Explicit(tuple(rows.values())))
            return var

        residents = _apply_keyed(
            _keyed(frag.residents, lambda v: v.name), changes, "variable", path + ("variables",), patch_var
        )
        return replace(frag, inputs=tuple(inputs.values()), residents=tuple(residents.values()))

    fragments = _apply_keyed(
        _keyed(old.fragments, lambda f: f.name), changes, "fragment", ("fragments",), patch_fragment
    )
    return KnowledgeBase(fragments=tuple(fragments.values()), **sections)


def change_to_json(change: Change) -> dict:
    return {
        "kind": change.kind,
        "op": change.op,
        "path": list(change.path),
        "before": _summary(change.before),
        "after": _summary(change.after),
    }


def _summary(value: Any) -> Any:
    """Human-oriented rendering of a diff value for reports."""
    from .dsl import _cpt_text, _fragment_text, format_vector

    if value is None or isinstance(value, (str, int, float)):
        return value
    if isinstance(value, ConstraintDecl):
        return format_constraint(value.constraint)
    if isinstance(value, Fragment):
        return "\n".join(_fragment_text(value))
    if isinstance(value, tuple) and len(value) == 2 and isinstance(value[0], tuple) and isinstance(value[1], tuple):
        return format_vector(value[1])
    if isinstance(value, (list, tuple)):
        return [_summary(v) for v in value]
    if hasattr(value, "form"):
        return _cpt_text(value, "")
    return repr(value)
