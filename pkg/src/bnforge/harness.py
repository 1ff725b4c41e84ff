"""Case-based evaluation: test-case generation, golden regression, review lints."""

from __future__ import annotations

import itertools
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

from .core import (
    BnError,
    CompiledNetwork,
    Explicit,
    Partition,
    SourceSpan,
    StateSpace,
    UnknownReference,
    check_constraints,
    format_config,
)
from .inference import ZeroProbabilityEvidence, evidence_probability, posterior

if TYPE_CHECKING:
    from .dsl import KnowledgeBase

SCHEMA_VERSION = 1
DEFAULT_TOL = 1e-6


class ScenarioError(BnError):
    pass


class CaseSetMismatch(BnError):
    """Golden and current results were generated from different case sets."""


@dataclass(frozen=True)
class Scenario:
    """Focus variables plus evidence variables with their allowed states.

    ``evidence`` maps each variable to its allowed states, ``None`` meaning
    the variable's whole space. ``sampled`` is ``(n, seed)`` or ``None`` for
    exhaustive generation. With ``unanticipated`` set, sampling draws from
    the full spaces and marks cases outside the allowed subsets.
    """

    name: str
    focus: tuple[str, ...]
    evidence: tuple[tuple[str, tuple[str, ...] | None], ...] = ()
    sampled: tuple[int, int] | None = None
    unanticipated: bool = False
    description: str = ""
    comments: tuple[str, ...] = ()
    span: SourceSpan | None = field(default=None, compare=False, repr=False)

    @property
    def evidence_vars(self) -> list[str]:
        return [v for v, _ in self.evidence]


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class

    scenario: str
    index: int
    assignments: tuple[tuple[str, str], ...]
    unanticipated: bool = False

    @property
    def evidence(self) -> dict[str, str]:
        return dict(self.assignments)


def _allowed(scenario: Scenario, net: CompiledNetwork | None) -> list[tuple[str, ...]]:
    out = []
    for var, allowed in scenario.evidence:
        if allowed is None:
            if net is None:
                raise ScenarioError(f"scenario {scenario.name!r}: '*' for {var!r} needs the compiled network")
            allowed = net.space(var).states
        if not allowed:
            raise ScenarioError(f"scenario {scenario.name!r}: empty allowed-state set for {var!r}")
        out.append(tuple(allowed))
    return out


def check_scenario(scenario: Scenario, net: CompiledNetwork) -> None:
    if not scenario.focus:
        raise ScenarioError(f"scenario {scenario.name!r} has no focus variable")
    overlap = set(scenario.focus) & set(scenario.evidence_vars)
    if overlap:
        raise ScenarioError(f"scenario {scenario.name!r}: {sorted(overlap)} are both focus and evidence")
    if len(set(scenario.evidence_vars)) != len(scenario.evidence_vars):
        raise ScenarioError(f"scenario {scenario.name!r} lists an evidence variable twice")
    for v in scenario.focus:
        net.variable(v)
    for var, allowed in scenario.evidence:
        space = net.space(var)
        for s in allowed or ():
            space.index(s)


def generate_cases(scenario: Scenario, net: CompiledNetwork | None = None) -> list[TestCase]:
    """Exhaustive cartesian product, or ``n`` distinct seeded samples, in lexicographic order."""
    if net is not None:
        check_scenario(scenario, net)
    allowed = _allowed(scenario, net)
    names = scenario.evidence_vars
    if scenario.sampled is None:
        combos = list(itertools.product(*allowed))
        return [TestCase(scenario.name, i, tuple(zip(names, c))) for i, c in enumerate(combos)]

    n, seed = scenario.sampled
    if n < 1:
        raise ScenarioError(f"scenario {scenario.name!r}: sample count must be positive")
    if scenario.unanticipated:
        if net is None:
            raise ScenarioError("unanticipated sampling needs the compiled network")
        pool = [net.space(v).states for v in names]
    else:
        pool = allowed
    sizes = [len(p) for p in pool]
    total = math.prod(sizes)
    picks = range(total) if n >= total else sorted(random.Random(seed).sample(range(total), n))
    cases = []
    for i, flat in enumerate(picks):
        combo = []
        for size, states in zip(reversed(sizes), reversed(pool)):
            flat, r = divmod(flat, size)
            combo.append(states[r])
        combo.reverse()
        outside = any(s not in a for s, a in zip(combo, allowed))
        cases.append(TestCase(scenario.name, i, tuple(zip(names, combo)), outside))
    return cases


def coverage(scenario: Scenario, cases: Sequence[TestCase], net: CompiledNetwork | None = None) -> float:
    """Distinct cases inside the allowed subsets over the number of possible ones."""
    allowed = _allowed(scenario, net)
    total = math.prod(len(a) for a in allowed)
    inside = {
        c.assignments
        for c in cases
        if all(s in a for (_, s), a in zip(c.assignments, allowed))
    }
    return len(inside) / total


# --- running and golden files -----------------------------------------------


@dataclass(frozen=True)
class CaseResult:
    index: int
    assignments: tuple[tuple[str, str], ...]
    impossible: bool
    evidence_probability: float
    conflict: float | None
    marginals: Mapping[str, Mapping[str, float]]
    unanticipated: bool = False


@dataclass(frozen=True)
class RunResults:
    scenario: str
    focus: tuple[str, ...]
    cases: tuple[CaseResult, ...]


def _run_one(net: CompiledNetwork, focus: Sequence[str], case: TestCase) -> CaseResult:
    from .evaluation import conflict

    ev = case.evidence
    p_e = evidence_probability(net, ev)
    if p_e == 0.0:
        return CaseResult(case.index, case.assignments, True, 0.0, None, {}, case.unanticipated)
    try:
        post = posterior(net, ev, focus)
    except ZeroProbabilityEvidence:
        return CaseResult(case.index, case.assignments, True, 0.0, None, {}, case.unanticipated)
    margs = {f: post[f].as_dict() for f in focus}
    return CaseResult(case.index, case.assignments, False, p_e, conflict(net, ev).value, margs, case.unanticipated)


def run_cases(
    net: CompiledNetwork, scenario: Scenario, cases: Sequence[TestCase] | None = None, workers: int = 1
) -> RunResults:
    """Evaluate every case; zero-probability evidence is marked impossible, not raised."""
    check_scenario(scenario, net)
    if cases is None:
        cases = generate_cases(scenario, net)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda c: _run_one(net, scenario.focus, c), cases))
    else:
        results = [_run_one(net, scenario.focus, c) for c in cases]
    results.sort(key=lambda r: r.index)
    return RunResults(scenario.name, tuple(scenario.focus), tuple(results))


def results_to_json(results: RunResults, kb_version_id: str | None = None) -> dict:
    cases = []
    for r in results.cases:
        cases.append(
            {
                "index": r.index,
                "assignments": dict(r.assignments),
                "status": "impossible" if r.impossible else "ok",
                "unanticipated": r.unanticipated,
                "evidence_probability": r.evidence_probability,
                "conflict": r.conflict,
                "marginals": {f: dict(m) for f, m in r.marginals.items()},
                "verdict": None,
            }
        )
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "golden" if kb_version_id is not None else "run",
        "scenario": results.scenario,
        "focus": list(results.focus),
        "cases": cases,
    }
    if kb_version_id is not None:
        doc["kb_version_id"] = kb_version_id
    return doc


def results_from_json(doc: Mapping) -> RunResults:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise BnError(f"unsupported schema_version {doc.get('schema_version')!r}")
    cases = []
    for c in doc["cases"]:
        cases.append(
            CaseResult(
                c["index"],
                tuple(c["assignments"].items()),
                c["status"] == "impossible",
                c["evidence_probability"],
                c["conflict"],
                {f: dict(m) for f, m in c["marginals"].items()},
                c.get("unanticipated", False),
            )
        )
    return RunResults(doc["scenario"], tuple(doc["focus"]), tuple(cases))


@dataclass(frozen=True)
class GoldenRecord:
    kb_version_id: str
    results: RunResults

    def to_json(self) -> dict:
        return results_to_json(self.results, self.kb_version_id)

    @classmethod
    def from_json(cls, doc: Mapping) -> "GoldenRecord":
        if "kb_version_id" not in doc:
            raise BnError("not a golden file: missing kb_version_id")
        return cls(doc["kb_version_id"], results_from_json(doc))


def record_golden(results: RunResults, version_id: str) -> GoldenRecord:
    return GoldenRecord(version_id, results)


@dataclass(frozen=True)
class Drift:
    case: int
    focus: str
    state: str
    golden: float
    current: float

    @property
    def delta(self) -> float:
        return self.current - self.golden


@dataclass(frozen=True)
class StatusChange:
    case: int
    golden: str
    current: str


@dataclass(frozen=True)
class RegressionReport:
    drifts: tuple[Drift, ...] = ()
    status_changes: tuple[StatusChange, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.drifts and not self.status_changes

    @property
    def flagged_cases(self) -> set[int]:
        return {d.case for d in self.drifts} | {s.case for s in self.status_changes}


def compare_golden(results: RunResults, golden: GoldenRecord | RunResults, tol: float = DEFAULT_TOL) -> RegressionReport:
    """List every (case, focus, state) whose probability moved by more than ``tol``.

    Raises ``CaseSetMismatch`` if the two runs cover different cases.
    """
    ref = golden.results if isinstance(golden, GoldenRecord) else golden
    if ref.scenario != results.scenario or ref.focus != results.focus:
        raise CaseSetMismatch(f"scenario/focus differ: {ref.scenario}{list(ref.focus)} vs {results.scenario}{list(results.focus)}")
    if [(c.index, c.assignments) for c in ref.cases] != [(c.index, c.assignments) for c in results.cases]:
        raise CaseSetMismatch(f"scenario {results.scenario!r}: the generated case set differs from the golden one")
    drifts, changes = [], []
    for old, new in zip(ref.cases, results.cases):
        if old.impossible != new.impossible:
            changes.append(
                StatusChange(old.index, "impossible" if old.impossible else "ok", "impossible" if new.impossible else "ok")
            )
            continue
        for f in results.focus:
            for state, p_new in new.marginals.get(f, {}).items():
                p_old = old.marginals[f][state]
                if abs(p_new - p_old) > tol:
                    drifts.append(Drift(old.index, f, state, p_old, p_new))
    return RegressionReport(tuple(drifts), tuple(changes))


# --- elicitation review -----------------------------------------------------

RULES = {
    "R1": "state space differs from the central definition",
    "R2": "unnormalized distribution",
    "R3": "possible accidental equality / missing rationale",
    "R4": "declared constraint violated",
    "R5": "dangling reference",
    "R6": "stub inventory",
    "R7": "class hierarchy problem",
}
_NOWHERE = SourceSpan("<kb>", 0, 0, 0)


@dataclass(frozen=True)
class ReviewFinding:
    rule: str
    severity: str  # error | warning | info
    location: SourceSpan
    message: str

    def __str__(self) -> str:
        return f"{self.location}: {self.severity}: [{self.rule}] {self.message}"


def _span(obj) -> SourceSpan:
    return getattr(obj, "span", None) or _NOWHERE


def _rows_of(cpt):
    if isinstance(cpt, Explicit):
        return [(format_config(c), r) for c, r in cpt.rows]
    if isinstance(cpt, Partition):
        return [(f"partition element {i + 1}", el.distribution) for i, el in enumerate(cpt.elements)]
    return []


def elicitation_review(kb: "KnowledgeBase", compiled: CompiledNetwork | None = None) -> list[ReviewFinding]:
    """Lint a knowledge base for definition, distribution and structure problems.

    Findings are ordered by (file, line, rule).
    """
    from .fragments import ClassCycle, class_chain, instantiate_template, resolve_space
    from .workbench import compile_kb

    out: list[ReviewFinding] = []

    def add(rule: str, severity: str, obj, message: str) -> None:
        out.append(ReviewFinding(rule, severity, obj if isinstance(obj, SourceSpan) else _span(obj), message))

    hierarchy = kb.hierarchy
    registry = kb.registry

    # R7 first: later rules must not walk a cyclic hierarchy
    cyclic: set[str] = set()
    for cls in kb.classes:
        if cls.parent_class is not None and cls.parent_class not in hierarchy:
            add("R5", "error", cls, f"class {cls.name!r} extends unknown class {cls.parent_class!r}")
            continue
        try:
            class_chain(cls.name, hierarchy)
        except ClassCycle as exc:
            cyclic.add(cls.name)
            add("R7", "error", cls, str(exc))
        except UnknownReference:
            pass
    safe = {n: c for n, c in hierarchy.items() if n not in cyclic}

    # fragments, with template instances expanded where possible
    fragments = []
    for f in kb.fragments:
        fragments.append((f, f))
    for inst in kb.instances:
        template = kb.template(inst.template)
        if template is None:
            add("R5", "error", inst, f"instance of unknown template {inst.template!r}")
            continue
        try:
            fragments.append((instantiate_template(template, inst.binding_dict()), inst))
        except BnError as exc:
            add("R5", "error", inst, f"template instance failed: {exc}")

    used_classes: set[str] = set()
    uses: dict[str, list[tuple[str, StateSpace, object]]] = {}
    all_vars: set[str] = set()
    for frag, where in fragments:
        for decl in (*frag.inputs, *frag.residents):
            loc = decl if where is frag else where
            if decl.class_ref is not None:
                if decl.class_ref not in hierarchy:
                    add("R5", "error", loc, f"{frag.name}.{decl.name}: unknown class {decl.class_ref!r}")
                    continue
                if decl.class_ref not in cyclic:
                    used_classes.update(class_chain(decl.class_ref, safe))
            if decl.class_ref in cyclic:
                continue
            try:
                space = resolve_space(decl, safe, registry)
            except BnError as exc:
                add("R5", "error", loc, f"{frag.name}.{decl.name}: {exc}")
                continue
            uses.setdefault(decl.name, []).append((frag.name, space, loc))
            if decl in frag.residents or getattr(decl, "exogenous", False):
                all_vars.add(decl.name)

    # R1: one name, one state space
    for name, occurrences in sorted(uses.items()):
        reference = registry[name].space if name in registry else occurrences[0][1]
        source = "central definition" if name in registry else f"fragment {occurrences[0][0]!r}"
        for frag_name, space, loc in occurrences:
            if space != reference:
                add(
                    "R1",
                    "error",
                    loc,
                    f"{name!r} in fragment {frag_name!r} has {len(space)} states {list(space.states)}; "
                    f"{source} has {len(reference)} states {list(reference.states)}",
                )

    # R2 / R3: distributions
    def review_cpt(owner: str, cpt, loc) -> None:
        for where, row in _rows_of(cpt):
            total = math.fsum(row)
            if abs(total - 1.0) > 1e-9:
                add("R2", "error", loc, f"{owner} {where}: row sums to {total:.12g}")
        if isinstance(cpt, Explicit):
            groups: dict[tuple, list[str]] = {}
            for config, row in cpt.rows:
                groups.setdefault(tuple(row), []).append(format_config(config))
            for row, configs in groups.items():
                if len(configs) > 1:
                    add(
                        "R3",
                        "warning",
                        loc,
                        f"{owner}: rows {', '.join(configs)} are identical; possible accidental equality "
                        f"(declare a 'cpt partition' with a rationale if intended)",
                    )
        if isinstance(cpt, Partition):
            for i, el in enumerate(cpt.elements):
                if not el.rationale.strip():
                    add("R3", "info", loc, f"{owner}: partition element {i + 1} has no rationale")

    for cls in kb.classes:
        if cls.cpt is not None:
            review_cpt(f"class {cls.name}", cls.cpt, cls)
    for frag, where in fragments:
        for decl in frag.inputs:
            if decl.prior is not None:
                review_cpt(f"{frag.name}.{decl.name}", Explicit((((), decl.prior),)), decl if where is frag else where)
        for decl in frag.residents:
            if decl.cpt is not None:
                review_cpt(f"{frag.name}.{decl.name}", decl.cpt, decl if where is frag else where)

    # R5: model, constraint and scenario references
    frag_names = {f.name: f for f, _ in fragments}
    for model in kb.models:
        for u in model.uses:
            if u not in frag_names:
                add("R5", "error", model, f"model {model.name!r} uses unknown fragment {u!r}")
        for sf, si, tf, tr in model.binds:
            for fname, vname in ((sf, si), (tf, tr)):
                frag = frag_names.get(fname)
                if frag is None:
                    add("R5", "error", model, f"model {model.name!r} binds unknown fragment {fname!r}")
                elif frag.input(vname) is None and frag.resident(vname) is None:
                    add("R5", "error", model, f"model {model.name!r} binds unknown variable {fname}.{vname}")
        for stub, repl in model.substitutions:
            for fname in (stub, repl):
                if fname not in frag_names:
                    add("R5", "error", model, f"model {model.name!r} substitutes unknown fragment {fname!r}")
    for decl in kb.constraints:
        c = decl.constraint
        refs = [c.child] + ([c.parent] if hasattr(c, "parent") else [])
        for r in refs:
            if r not in all_vars:
                add("R5", "error", decl, f"constraint references unknown variable {r!r}")
    for scenario in kb.scenarios:
        for v in (*scenario.focus, *scenario.evidence_vars):
            if v not in all_vars:
                add("R5", "error", scenario, f"scenario {scenario.name!r} references unknown variable {v!r}")
    for cls in kb.classes:
        for cc in cls.constraints or ():
            if cc.along_class not in hierarchy:
                add("R5", "error", cls, f"class {cls.name!r} constraint refers to unknown class {cc.along_class!r}")
            else:
                used_classes.add(cc.along_class)

    # R4: constraints against the compiled network
    net = compiled
    if net is None:
        try:
            net = compile_kb(kb)
        except BnError:
            net = None
    if net is not None:
        spans = {d.constraint: d for d in kb.constraints}
        for c in net.constraints:
            try:
                report = check_constraints(net, [c])
            except BnError:
                continue
            for v in report:
                loc = spans.get(c)
                if loc is None:
                    var_class = net.variable(c.child).class_ref
                    loc = hierarchy.get(var_class) if var_class else None
                add("R4", "error", loc, v.message)

    # R6: stubs
    for frag, where in fragments:
        if frag.is_stub:
            inputs = ", ".join(i.name for i in frag.inputs) or "none"
            residents = ", ".join(v.name for v in frag.residents) or "none"
            add("R6", "info", where, f"stub {frag.name!r} (inputs: {inputs}; variables: {residents})")

    # R7: unused classes
    for cls in kb.classes:
        if cls.name not in used_classes and cls.name not in cyclic:
            add("R7", "warning", cls, f"class {cls.name!r} is not used by any variable")

    severity_rank = {"error": 0, "warning": 1, "info": 2}
    out.sort(key=lambda f: (f.location.file, f.location.line, f.rule, f.location.column, severity_rank[f.severity], f.message))
    return out


def has_problems(findings: Sequence[ReviewFinding]) -> bool:
    return any(f.severity in ("error", "warning") for f in findings)

