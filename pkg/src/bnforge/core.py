"""Core network types, CPT forms, table expansion, validation and constraints.

Tables are stored as tuples of rows. Row ``i`` is the child distribution for
the ``i``-th parent configuration, with configurations enumerated
lexicographically: the first parent varies slowest and each parent runs
through its states in declared order. This is the C-order layout of an
array shaped ``(|P1|, ..., |Pk|, |child|)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence, Union

NORMALIZATION_TOL = 1e-9

Config = tuple[str, ...]
# ``None`` is the wildcard ``*`` in a configuration pattern.
Pattern = tuple[Union[str, None], ...]
Row = tuple[float, ...]
Table = tuple[Row, ...]


class BnError(Exception):
    """Base class for errors raised by bnforge."""


class CptError(BnError):
    """A CPT specification cannot be expanded against the given spaces."""


class UnknownReference(BnError):
    """A name does not resolve to a variable, state, fragment or class."""

    def __init__(self, message: str, name: str = ""):
        super().__init__(message)
        self.name = name


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    column: int
    length: int = 1

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"


@dataclass(frozen=True)
class StateSpace:
    states: tuple[str, ...]
    ordered: bool = False

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        if len(self.states) < 2:
            raise ValueError(f"a state space needs at least 2 states, got {self.states!r}")
        if len(set(self.states)) != len(self.states):
            raise ValueError(f"duplicate state labels in {self.states!r}")

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self) -> Iterator[str]:
        return iter(self.states)

    def index(self, state: str) -> int:
        try:
            return self.states.index(state)
        except ValueError:
            raise UnknownReference(f"unknown state {state!r}; expected one of {list(self.states)}", state) from None

    @property
    def is_boolean(self) -> bool:
        return len(self.states) == 2


@dataclass(frozen=True)
class Variable:
    name: str
    space: StateSpace
    class_ref: str | None = None
    description: str = ""


# --- CPT specifications -----------------------------------------------------


@dataclass(frozen=True)
class Explicit:
    """One probability vector per parent configuration, keyed by configuration."""

    rows: tuple[tuple[Config, Row], ...]

    form = "explicit"


@dataclass(frozen=True)
class PartitionElement:
    configs: tuple[Pattern, ...]
    distribution: Row
    rationale: str = ""


@dataclass(frozen=True)
class Partition:
    elements: tuple[PartitionElement, ...]

    form = "partition"


@dataclass(frozen=True)
class NoisyOr:
    """Leaky noisy-OR. The first state of every boolean space is the 'true' state."""

    links: tuple[float, ...]
    leak: float

    form = "noisyor"


@dataclass(frozen=True)
class Deterministic:
    entries: tuple[tuple[Pattern, str], ...]

    form = "deterministic"


CptSpec = Union[Explicit, Partition, NoisyOr, Deterministic]


def parent_configs(parent_spaces: Sequence[StateSpace]) -> list[Config]:
    """All parent configurations in table-row order."""
    return list(itertools.product(*(s.states for s in parent_spaces)))


def pattern_matches(pattern: Pattern, config: Config) -> bool:
    return len(pattern) == len(config) and all(p is None or p == c for p, c in zip(pattern, config))


def _check_pattern(pattern: Pattern, parent_spaces: Sequence[StateSpace]) -> None:
    if len(pattern) != len(parent_spaces):
        raise CptError(f"configuration {format_config(pattern)} has {len(pattern)} entries, expected {len(parent_spaces)}")
    for label, space in zip(pattern, parent_spaces):
        if label is not None and label not in space.states:
            raise CptError(f"configuration {format_config(pattern)}: {label!r} is not one of {list(space.states)}")


def _check_distribution(row: Sequence[float], child_space: StateSpace, where: str) -> None:
    if len(row) != len(child_space):
        raise CptError(f"{where}: distribution has {len(row)} entries, child has {len(child_space)} states")
    if any(not math.isfinite(p) or p < 0 for p in row):
        raise CptError(f"{where}: probabilities must be finite and non-negative")


def format_config(config: Sequence[str | None]) -> str:
    return "(" + ", ".join("*" if c is None else c for c in config) + ")"


def expand_cpt(spec: CptSpec, child_space: StateSpace, parent_spaces: Sequence[StateSpace]) -> Table:
    """Expand any CPT form into an explicit table in lexicographic row order.

    Raises ``CptError`` for partitions or deterministic tables that overlap or
    fail to cover the parent configurations, noisy-OR on non-boolean spaces,
    and malformed rows. Row normalization is left to ``validate_network``.
    """
    configs = parent_configs(parent_spaces)

    if isinstance(spec, Explicit):
        by_config: dict[Config, Row] = {}
        for config, row in spec.rows:
            config = tuple(config)
            _check_pattern(config, parent_spaces)
            if None in config:
                raise CptError("explicit rows cannot use '*' wildcards")
            if config in by_config:
                raise CptError(f"duplicate row for configuration {format_config(config)}")
            _check_distribution(row, child_space, f"row {format_config(config)}")
            by_config[config] = tuple(float(p) for p in row)
        missing = [c for c in configs if c not in by_config]
        if missing:
            raise CptError(f"no row for configuration {format_config(missing[0])} ({len(missing)} missing)")
        return tuple(by_config[c] for c in configs)

    if isinstance(spec, Partition):
        owner: dict[Config, int] = {}
        for k, element in enumerate(spec.elements):
            _check_distribution(element.distribution, child_space, f"partition element {k + 1}")
            for pattern in element.configs:
                _check_pattern(pattern, parent_spaces)
                for config in configs:
                    if pattern_matches(pattern, config):
                        if config in owner and owner[config] != k:
                            raise CptError(
                                f"partition elements {owner[config] + 1} and {k + 1} overlap at {format_config(config)}"
                            )
                        owner[config] = k
        missing = [c for c in configs if c not in owner]
        if missing:
            raise CptError(f"partition does not cover configuration {format_config(missing[0])}")
        return tuple(tuple(float(p) for p in spec.elements[owner[c]].distribution) for c in configs)

    if isinstance(spec, NoisyOr):
        if not child_space.is_boolean or not all(s.is_boolean for s in parent_spaces):
            raise CptError("noisy-OR requires a boolean child and boolean parents")
        if len(spec.links) != len(parent_spaces):
            raise CptError(f"noisy-OR has {len(spec.links)} link probabilities for {len(parent_spaces)} parents")
        for p in (*spec.links, spec.leak):
            if not 0.0 <= p <= 1.0:
                raise CptError(f"noisy-OR parameter {p!r} outside [0, 1]")
        rows = []
        for config in configs:
            q = 1.0 - spec.leak
            for link, state, space in zip(spec.links, config, parent_spaces):
                if state == space.states[0]:
                    q *= 1.0 - link
            rows.append((1.0 - q, q))
        return tuple(rows)

    if isinstance(spec, Deterministic):
        target: dict[Config, str] = {}
        for pattern, state in spec.entries:
            _check_pattern(pattern, parent_spaces)
            if state not in child_space.states:
                raise CptError(f"deterministic entry {format_config(pattern)}: unknown child state {state!r}")
            for config in configs:
                if pattern_matches(pattern, config):
                    if config in target and target[config] != state:
                        raise CptError(f"deterministic entries conflict at {format_config(config)}")
                    target[config] = state
        missing = [c for c in configs if c not in target]
        if missing:
            raise CptError(f"deterministic table has no entry for {format_config(missing[0])}")
        rows = []
        for config in configs:
            hot = child_space.states.index(target[config])
            rows.append(tuple(1.0 if i == hot else 0.0 for i in range(len(child_space))))
        return tuple(rows)

    raise CptError(f"unsupported CPT specification {spec!r}")


# --- compiled networks ------------------------------------------------------


@dataclass(frozen=True)
class Monotone:
    child: str
    target_state: str
    parent: str
    direction: str  # "nonincreasing" | "nondecreasing"

    kind = "monotone"


@dataclass(frozen=True)
class Inequality:
    child: str
    target_state: str
    config_a: Config
    config_b: Config
    relation: str  # "<" | "<="

    kind = "inequality"


Constraint = Union[Monotone, Inequality]


@dataclass(frozen=True)
class Provenance:
    fragment: str
    form: str


@dataclass(frozen=True)
class CompiledNetwork:
    variables: tuple[Variable, ...]
    parents: Mapping[str, tuple[str, ...]]
    cpts: Mapping[str, Table]
    provenance: Mapping[str, Provenance] = field(default_factory=dict)
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise BnError("variable names must be unique within a network")
        object.__setattr__(self, "_by_name", {v.name: v for v in self.variables})

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def variable(self, name: str) -> Variable:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownReference(f"unknown variable {name!r}", name) from None

    def space(self, name: str) -> StateSpace:
        return self.variable(name).space


def make_network(
    specs: Sequence[tuple[str, Sequence[str], Sequence[str], CptSpec]],
    ordered: Sequence[str] = (),
) -> CompiledNetwork:
    """Build a network from ``(name, states, parents, cpt_spec)`` tuples.

    Convenience for tests and small hand-built models; CPTs are expanded
    with ``expand_cpt``. Names listed in ``ordered`` get ordered spaces.
    """
    spaces = {name: StateSpace(tuple(states), name in ordered) for name, states, _, _ in specs}
    variables, parents, cpts, prov = [], {}, {}, {}
    for name, _, pars, spec in specs:
        variables.append(Variable(name, spaces[name]))
        parents[name] = tuple(pars)
        cpts[name] = expand_cpt(spec, spaces[name], [spaces[p] for p in pars])
        prov[name] = Provenance("<inline>", spec.form)
    return CompiledNetwork(tuple(variables), parents, cpts, prov)


def prior(*probs: float) -> Explicit:
    return Explicit((((), tuple(probs)),))


def table(rows: Mapping[Config, Sequence[float]]) -> Explicit:
    return Explicit(tuple((tuple(c), tuple(r)) for c, r in rows.items()))


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" | "warning" | "info"
    code: str
    message: str
    variable: str | None = None


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...]

    @property
    def ok(self) -> bool:
        return not self.findings

    def __iter__(self):
        return iter(self.findings)

    def __len__(self) -> int:
        return len(self.findings)


def find_cycle(graph: Mapping[str, Sequence[str]]) -> list[str] | None:
    """Return one cycle of ``graph`` (node -> predecessors) or None.

    Nodes are explored in sorted order so the reported cycle is deterministic.
    """
    WHITE, GREY, BLACK = 0, 1, 2
    color = {n: WHITE for n in graph}
    stack: list[str] = []

    def visit(node: str) -> list[str] | None:
        color[node] = GREY
        stack.append(node)
        for nxt in sorted(graph.get(node, ())):
            if color.get(nxt, BLACK) == GREY:
                return stack[stack.index(nxt):]
            if color.get(nxt) == WHITE:
                found = visit(nxt)
                if found:
                    return found
        stack.pop()
        color[node] = BLACK
        return None

    for node in sorted(graph):
        if color[node] == WHITE:
            found = visit(node)
            if found:
                return found
    return None


def validate_network(net: CompiledNetwork) -> ValidationReport:
    findings: list[Finding] = []
    for var in net.variables:
        name = var.name
        pars = net.parents.get(name)
        if pars is None:
            findings.append(Finding("error", "missing-parents", f"{name}: no parent list", name))
            continue
        unknown = [p for p in pars if p not in net]
        if unknown:
            findings.append(Finding("error", "unknown-parent", f"{name}: unknown parent(s) {', '.join(unknown)}", name))
            continue
        if name not in net.cpts:
            findings.append(Finding("error", "missing-cpt", f"{name}: no CPT", name))
            continue
        rows = net.cpts[name]
        expected = math.prod(len(net.space(p)) for p in pars)
        if len(rows) != expected:
            findings.append(Finding("error", "dimension", f"{name}: {len(rows)} rows, expected {expected}", name))
        configs = parent_configs([net.space(p) for p in pars])
        for i, row in enumerate(rows):
            where = format_config(configs[i]) if i < len(configs) else f"#{i}"
            if len(row) != len(var.space):
                findings.append(
                    Finding("error", "dimension", f"{name} row {where}: {len(row)} entries, expected {len(var.space)}", name)
                )
                continue
            if any(p < 0 or not math.isfinite(p) for p in row):
                findings.append(Finding("error", "negative", f"{name} row {where}: negative or non-finite entry", name))
            total = math.fsum(row)
            if abs(total - 1.0) > NORMALIZATION_TOL:
                findings.append(Finding("error", "normalization", f"{name} row {where}: row sums to {total:.12g}", name))
    extra = sorted(set(net.cpts) - set(net.names))
    for name in extra:
        findings.append(Finding("error", "orphan-cpt", f"CPT for undeclared variable {name}", name))
    cycle = find_cycle({n: [p for p in net.parents.get(n, ()) if p in net] for n in net.names})
    if cycle:
        findings.append(Finding("error", "cycle", "cycle " + ",".join(cycle)))
    return ValidationReport(tuple(findings))


# --- constraints ------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    constraint: Constraint
    message: str
    configs: tuple[Config, Config]
    values: tuple[float, float]


@dataclass(frozen=True)
class ConstraintReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __iter__(self):
        return iter(self.violations)

    def __len__(self) -> int:
        return len(self.violations)


def _row_lookup(net: CompiledNetwork, child: str) -> tuple[tuple[str, ...], dict[Config, Row]]:
    pars = net.parents[child]
    configs = parent_configs([net.space(p) for p in pars])
    return pars, dict(zip(configs, net.cpts[child]))


def check_constraints(net: CompiledNetwork, constraints: Sequence[Constraint]) -> ConstraintReport:
    """Check monotonicity and inequality constraints against compiled tables.

    Violations are reported, never repaired. Raises ``UnknownReference``
    when a constraint names a variable, parent or state that does not exist.
    """
    out: list[Violation] = []
    for c in constraints:
        child_space = net.space(c.child)
        t = child_space.index(c.target_state)
        pars, rows = _row_lookup(net, c.child)
        if isinstance(c, Monotone):
            if c.parent not in pars:
                raise UnknownReference(f"{c.parent!r} is not a parent of {c.child!r}", c.parent)
            pspace = net.space(c.parent)
            if not pspace.ordered:
                raise BnError(f"monotone constraint needs an ordered state space for {c.parent!r}")
            if c.direction not in ("nonincreasing", "nondecreasing"):
                raise BnError(f"unknown direction {c.direction!r}")
            k = pars.index(c.parent)
            others = [net.space(p) for i, p in enumerate(pars) if i != k]
            for rest in parent_configs(others):
                seq = []
                for s in pspace.states:
                    cfg = rest[:k] + (s,) + rest[k:]
                    seq.append((cfg, rows[cfg][t]))
                for i, j in itertools.combinations(range(len(seq)), 2):
                    (ci, vi), (cj, vj) = seq[i], seq[j]
                    bad = vj > vi if c.direction == "nonincreasing" else vj < vi
                    if bad:
                        out.append(
                            Violation(
                                c,
                                f"P({c.child}={c.target_state} | {format_config(ci)}) = {vi:.6g} then "
                                f"{format_config(cj)} = {vj:.6g} is not {c.direction} in {c.parent}",
                                (ci, cj),
                                (vi, vj),
                            )
                        )
        elif isinstance(c, Inequality):
            for cfg in (c.config_a, c.config_b):
                if tuple(cfg) not in rows:
                    raise UnknownReference(f"{format_config(cfg)} is not a parent configuration of {c.child!r}")
            a = rows[tuple(c.config_a)][t]
            b = rows[tuple(c.config_b)][t]
            if c.relation == "<":
                bad = not a < b
            elif c.relation == "<=":
                bad = a > b
            else:
                raise BnError(f"unknown relation {c.relation!r}")
            if bad:
                out.append(
                    Violation(
                        c,
                        f"P({c.child}={c.target_state} | {format_config(c.config_a)}) = {a:.6g} is not "
                        f"{c.relation} P(... | {format_config(c.config_b)}) = {b:.6g}",
                        (tuple(c.config_a), tuple(c.config_b)),
                        (a, b),
                    )
                )
        else:
            raise BnError(f"unknown constraint {c!r}")
    return ConstraintReport(tuple(out))
