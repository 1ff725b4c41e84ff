"""Object-oriented network fragments and their compilation to flat networks.

A ``Fragment`` owns resident variables (each with a CPT) and conditions on
input variables owned elsewhere. Fragments are wired together by an explicit
``Binding`` from (fragment, input) to (fragment, resident); ``compose``
enforces the separability checks and ``compile`` expands everything into a
``CompiledNetwork``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

from .core import (
    BnError,
    CompiledNetwork,
    Constraint,
    CptError,
    CptSpec,
    Explicit,
    Monotone,
    Provenance,
    Row,
    SourceSpan,
    StateSpace,
    UnknownReference,
    Variable,
    expand_cpt,
    find_cycle,
    validate_network,
)

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class ClassCycle(BnError):
    pass


class MissingFeature(BnError):
    pass


class CompositionError(BnError):
    pass


class HomeConflict(CompositionError):
    """Two fragments supply a CPT for the same merged variable."""


class InterfaceMismatch(CompositionError):
    """Connected variables have different state spaces or names."""


class CrossCycle(CompositionError):
    def __init__(self, message: str, cycle: Sequence[str] = ()):
        super().__init__(message)
        self.cycle = list(cycle)


class UnboundInput(CompositionError):
    pass


class TemplateError(BnError):
    def __init__(self, message: str, diagnostics: Sequence = ()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class UnboundParameter(TemplateError):
    pass


class InvalidNetwork(BnError):
    def __init__(self, message: str, report):
        super().__init__(message)
        self.report = report


# --- declarations -----------------------------------------------------------


@dataclass(frozen=True)
class ClassConstraint:
    """Monotonicity inherited by every instance of a class.

    Applied to whichever parent of the instance belongs to ``along_class``.
    """

    target_state: str
    along_class: str
    direction: str


@dataclass(frozen=True)
class VariableClass:
    name: str
    parent_class: str | None = None
    space: StateSpace | None = None
    cpt: CptSpec | None = None
    description: str | None = None
    constraints: tuple[ClassConstraint, ...] | None = None
    comments: tuple[str, ...] = ()
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Definition:
    """Central registry entry: the agreed state space for a variable name."""

    name: str
    space: StateSpace
    description: str = ""
    comments: tuple[str, ...] = ()
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class InputDecl:
    name: str
    class_ref: str | None = None
    space: StateSpace | None = None
    description: str = ""
    prior: Row | None = None  # set only for exogenous inputs
    comments: tuple[str, ...] = ()
    span: SourceSpan | None = field(default=None, compare=False, repr=False)

    @property
    def exogenous(self) -> bool:
        return self.prior is not None


@dataclass(frozen=True)
class VarDecl:
    name: str
    class_ref: str | None = None
    space: StateSpace | None = None
    description: str = ""
    parents: tuple[str, ...] = ()
    cpt: CptSpec | None = None
    comments: tuple[str, ...] = ()
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Fragment:
    name: str
    inputs: tuple[InputDecl, ...] = ()
    residents: tuple[VarDecl, ...] = ()
    is_stub: bool = False
    description: str = ""
    comments: tuple[str, ...] = ()
    span: SourceSpan | None = field(default=None, compare=False, repr=False)

    def input(self, name: str) -> InputDecl | None:
        return next((i for i in self.inputs if i.name == name), None)

    def resident(self, name: str) -> VarDecl | None:
        return next((v for v in self.residents if v.name == name), None)


@dataclass(frozen=True)
class TemplateParam:
    name: str
    kind: str  # "ident" | "range"


@dataclass(frozen=True)
class Template:
    """Parameterized fragment; ``body`` is fragment-body text with ``${param}`` placeholders."""

    name: str
    params: tuple[TemplateParam, ...]
    body: str
    comments: tuple[str, ...] = ()
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


BindingValue = Union[str, tuple[str, ...]]


@dataclass(frozen=True)
class Binding:
    """Explicit wiring ``(fragment, input) -> (fragment, resident)``."""

    connections: tuple[tuple[tuple[str, str], tuple[str, str]], ...] = ()

    @classmethod
    def of(cls, mapping: Mapping[tuple[str, str], tuple[str, str]]) -> "Binding":
        return cls(tuple((tuple(k), tuple(v)) for k, v in mapping.items()))

    def as_dict(self) -> dict[tuple[str, str], tuple[str, str]]:
        out = {}
        for src, dst in self.connections:
            if src in out and out[src] != dst:
                raise CompositionError(f"input {src[0]}.{src[1]} is bound twice")
            out[src] = dst
        return out


Hierarchy = Mapping[str, VariableClass]


# --- classes ----------------------------------------------------------------


@dataclass(frozen=True)
class ResolvedClass:
    name: str
    chain: tuple[str, ...]
    space: StateSpace | None
    cpt: CptSpec | None
    description: str | None
    constraints: tuple[ClassConstraint, ...]
    sources: Mapping[str, str]


_FEATURES = ("space", "cpt", "description", "constraints")


def class_chain(name: str, hierarchy: Hierarchy) -> list[str]:
    """``name`` followed by its ancestors, nearest first."""
    chain: list[str] = []
    current: str | None = name
    while current is not None:
        if current in chain:
            raise ClassCycle(f"class hierarchy cycle: {' -> '.join(chain + [current])}")
        if current not in hierarchy:
            raise UnknownReference(f"unknown class {current!r}", current)
        chain.append(current)
        current = hierarchy[current].parent_class
    return chain


def resolve_class(name: str, hierarchy: Hierarchy) -> ResolvedClass:
    """Resolve inheritable features, nearest ancestor wins for each feature."""
    chain = class_chain(name, hierarchy)
    values: dict[str, object] = {}
    sources: dict[str, str] = {}
    for cls_name in chain:
        cls = hierarchy[cls_name]
        for feature in _FEATURES:
            value = getattr(cls, feature)
            if feature not in values and value is not None:
                values[feature] = value
                sources[feature] = cls_name
    return ResolvedClass(
        name=name,
        chain=tuple(chain),
        space=values.get("space"),
        cpt=values.get("cpt"),
        description=values.get("description"),
        constraints=tuple(values.get("constraints", ())),
        sources=sources,
    )


def is_a(name: str | None, ancestor: str, hierarchy: Hierarchy) -> bool:
    if name is None or name not in hierarchy:
        return False
    return ancestor in class_chain(name, hierarchy)


# --- templates --------------------------------------------------------------

PLACEHOLDER_RE = re.compile(r"\$(?:\{([A-Za-z_][A-Za-z0-9_]*)\}|([A-Za-z_][A-Za-z0-9_]*))")


def placeholders(text: str) -> set[str]:
    return {a or b for a, b in PLACEHOLDER_RE.findall(text)}


def instance_name(template: Template, bindings: Mapping[str, BindingValue]) -> str:
    idents = [str(bindings[p.name]) for p in template.params if p.kind == "ident" and p.name in bindings]
    return "/".join([template.name, *idents])


def instantiate_template(template: Template, bindings: Mapping[str, BindingValue]) -> Fragment:
    """Substitute bindings into the template body and parse the result.

    Identifier parameters replace ``${X}`` by the bound identifier (inside
    strings too); range parameters expand to a comma-separated state list.
    The fragment is named ``template/ident1/ident2...``.
    """
    from .dsl import format_label, parse_kb

    declared = {p.name: p.kind for p in template.params}
    missing = [p for p in declared if p not in bindings]
    if missing:
        raise UnboundParameter(f"template {template.name!r}: unbound parameter(s) {', '.join(missing)}")
    extra = sorted(set(bindings) - set(declared))
    if extra:
        raise TemplateError(f"template {template.name!r} has no parameter(s) {', '.join(extra)}")
    text_for: dict[str, str] = {}
    for pname, kind in declared.items():
        value = bindings[pname]
        if kind == "ident":
            if not isinstance(value, str) or not IDENT_RE.match(value):
                raise TemplateError(f"parameter {pname!r} needs an identifier, got {value!r}")
            text_for[pname] = value
        else:
            labels = (value,) if isinstance(value, str) else tuple(value)
            if not labels:
                raise TemplateError(f"parameter {pname!r} needs a non-empty state range")
            text_for[pname] = ", ".join(format_label(str(s)) for s in labels)

    def sub(m: re.Match) -> str:
        return text_for[m.group(1) or m.group(2)]

    body = PLACEHOLDER_RE.sub(sub, template.body)
    name = instance_name(template, bindings)
    from .dsl import format_name

    source = f"fragment {format_name(name)} {{\n{body}\n}}\n"
    result = parse_kb(source, file=f"<template {template.name}>")
    if result.diagnostics:
        raise TemplateError(
            f"instantiating {template.name!r} failed: {result.diagnostics[0].message}", result.diagnostics
        )
    (fragment,) = result.kb.fragments
    return fragment


# --- composition ------------------------------------------------------------


@dataclass(frozen=True)
class ComposedModel:
    fragments: tuple[Fragment, ...]
    binding: Binding
    hierarchy: Mapping[str, VariableClass]
    definitions: Mapping[str, Definition]
    # (fragment, local name) -> global variable name
    names: Mapping[tuple[str, str], str]
    # global variable name -> home fragment
    homes: Mapping[str, str]
    # global variable name -> resolved state space
    spaces: Mapping[str, StateSpace]

    def fragment(self, name: str) -> Fragment:
        for f in self.fragments:
            if f.name == name:
                return f
        raise UnknownReference(f"unknown fragment {name!r}", name)


def resolve_space(
    decl: InputDecl | VarDecl, hierarchy: Hierarchy, definitions: Mapping[str, Definition]
) -> StateSpace:
    if decl.space is not None:
        return decl.space
    if decl.class_ref is not None:
        space = resolve_class(decl.class_ref, hierarchy).space
        if space is not None:
            return space
    if decl.name in definitions:
        return definitions[decl.name].space
    raise MissingFeature(f"variable {decl.name!r} has no state space (declare one, use a class, or a definition)")


def compose(
    fragments: Sequence[Fragment],
    binding: Binding | Mapping = Binding(),
    hierarchy: Hierarchy | None = None,
    definitions: Mapping[str, Definition] | None = None,
) -> ComposedModel:
    """Merge fragments along ``binding`` and run the separability checks.

    S1 every merged variable has exactly one home (``HomeConflict``), S2
    connected variables share a state space (``InterfaceMismatch``), S4
    every input is bound or exogenous (``UnboundInput``), S3 the merged
    graph is acyclic (``CrossCycle``).
    """
    hierarchy = dict(hierarchy or {})
    definitions = dict(definitions or {})
    if not isinstance(binding, Binding):
        binding = Binding.of(binding)
    by_name: dict[str, Fragment] = {}
    for f in fragments:
        if f.name in by_name:
            raise CompositionError(f"fragment {f.name!r} appears twice")
        by_name[f.name] = f
    wiring = binding.as_dict()

    local_space: dict[tuple[str, str], StateSpace] = {}
    for f in fragments:
        for decl in (*f.inputs, *f.residents):
            local_space[(f.name, decl.name)] = resolve_space(decl, hierarchy, definitions)

    for (sf, si), (tf, tr) in sorted(wiring.items()):
        if sf not in by_name:
            raise UnknownReference(f"binding names unknown fragment {sf!r}", sf)
        if by_name[sf].input(si) is None:
            raise UnknownReference(f"fragment {sf!r} has no input {si!r}", si)
        if tf not in by_name:
            raise UnknownReference(f"binding names unknown fragment {tf!r}", tf)
        if by_name[tf].resident(tr) is None:
            if by_name[tf].input(tr) is not None:
                raise HomeConflict(f"{sf}.{si} is bound to {tf}.{tr}, which is an input, not a resident")
            raise UnknownReference(f"fragment {tf!r} has no resident variable {tr!r}", tr)
        a, b = local_space[(sf, si)], local_space[(tf, tr)]
        if a != b:
            raise InterfaceMismatch(
                f"{sf}.{si} has states {list(a.states)}{' ordered' if a.ordered else ''} but "
                f"{tf}.{tr} has {list(b.states)}{' ordered' if b.ordered else ''}"
            )

    names: dict[tuple[str, str], str] = {}
    homes: dict[str, str] = {}
    spaces: dict[str, StateSpace] = {}

    def claim(global_name: str, frag: str) -> None:
        if global_name in homes:
            raise HomeConflict(f"variable {global_name!r} is defined by both {homes[global_name]!r} and {frag!r}")
        homes[global_name] = frag
        spaces[global_name] = local_space[(frag, global_name)]

    for f in fragments:
        for v in f.residents:
            claim(v.name, f.name)
            names[(f.name, v.name)] = v.name
        for i in f.inputs:
            if i.exogenous:
                if (f.name, i.name) in wiring:
                    raise HomeConflict(f"exogenous input {f.name}.{i.name} is also bound")
                claim(i.name, f.name)
                names[(f.name, i.name)] = i.name
    for f in fragments:
        for i in f.inputs:
            if i.exogenous:
                continue
            if (f.name, i.name) not in wiring:
                raise UnboundInput(f"input {f.name}.{i.name} is neither bound nor exogenous")
            names[(f.name, i.name)] = wiring[(f.name, i.name)][1]

    graph: dict[str, list[str]] = {g: [] for g in homes}
    for f in fragments:
        for v in f.residents:
            graph[v.name] = [names[(f.name, p)] for p in v.parents]
    cycle = find_cycle(graph)
    if cycle:
        raise CrossCycle("cycle across fragments: " + " -> ".join(cycle), cycle)

    return ComposedModel(tuple(fragments), binding, hierarchy, definitions, names, homes, spaces)


def stub_interface(model: ComposedModel, stub_name: str) -> dict[str, tuple[str, StateSpace]]:
    """Boundary of a fragment: its inputs plus residents other fragments bind to."""
    stub = model.fragment(stub_name)
    out: dict[str, tuple[str, StateSpace]] = {}
    for i in stub.inputs:
        out[i.name] = ("input", resolve_space(i, model.hierarchy, model.definitions))
    for (sf, _), (tf, tr) in model.binding.connections:
        if tf == stub_name and sf != stub_name:
            out[tr] = ("resident", model.spaces[tr])
    return out


def substitute_stub(
    model: ComposedModel,
    stub_name: str,
    replacement: Fragment,
    extra: Binding | Mapping | None = None,
) -> ComposedModel:
    """Swap a stub for a fuller fragment exposing the same boundary.

    The replacement must carry every stub input and every bound-to resident
    under the same name with an identical state space; it may add more.
    Extra inputs of the replacement are wired with ``extra``.
    """
    stub = model.fragment(stub_name)
    if not stub.is_stub:
        raise CompositionError(f"{stub_name!r} is not a stub")
    for name, (role, space) in stub_interface(model, stub_name).items():
        decl = replacement.input(name) if role == "input" else replacement.resident(name)
        if decl is None:
            raise InterfaceMismatch(f"replacement {replacement.name!r} has no {role} variable {name!r}")
        got = resolve_space(decl, model.hierarchy, model.definitions)
        if got != space:
            raise InterfaceMismatch(
                f"replacement {replacement.name!r}: {name!r} has states {list(got.states)}, stub has {list(space.states)}"
            )

    def repoint(ref: tuple[str, str]) -> tuple[str, str]:
        return (replacement.name, ref[1]) if ref[0] == stub_name else ref

    connections = [(repoint(s), repoint(t)) for s, t in model.binding.connections]
    if extra is not None:
        if not isinstance(extra, Binding):
            extra = Binding.of(extra)
        connections.extend(extra.connections)
    fragments = [replacement if f.name == stub_name else f for f in model.fragments]
    return compose(fragments, Binding(tuple(connections)), model.hierarchy, model.definitions)


# --- compilation ------------------------------------------------------------


def compile_model(
    model: ComposedModel,
    hierarchy: Hierarchy | None = None,
    constraints: Sequence[Constraint] = (),
) -> CompiledNetwork:
    """Resolve classes, expand every CPT and return a validated flat network.

    Raises ``InvalidNetwork`` if the result fails ``validate_network``.
    """
    hierarchy = model.hierarchy if hierarchy is None else hierarchy
    variables: list[Variable] = []
    parents: dict[str, tuple[str, ...]] = {}
    cpts = {}
    provenance: dict[str, Provenance] = {}
    derived: list[Constraint] = []

    for global_name in sorted(model.homes):
        frag = model.fragment(model.homes[global_name])
        space = model.spaces[global_name]
        decl = frag.resident(global_name) or frag.input(global_name)
        resolved = resolve_class(decl.class_ref, hierarchy) if decl.class_ref else None
        description = decl.description
        if not description and resolved is not None and resolved.description:
            description = resolved.description
        if not description and global_name in model.definitions:
            description = model.definitions[global_name].description
        variables.append(Variable(global_name, space, decl.class_ref, description))

        if isinstance(decl, InputDecl):
            spec: CptSpec = Explicit((((), tuple(decl.prior)),))
            pars: tuple[str, ...] = ()
        else:
            spec = decl.cpt if decl.cpt is not None else (resolved.cpt if resolved else None)
            if spec is None:
                raise MissingFeature(f"{frag.name}.{global_name} has no CPT and its class supplies none")
            pars = tuple(model.names[(frag.name, p)] for p in decl.parents)
            if resolved is not None:
                for cc in resolved.constraints:
                    for p in pars:
                        pdecl = _decl_of(model, p)
                        if is_a(pdecl.class_ref, cc.along_class, hierarchy):
                            derived.append(Monotone(global_name, cc.target_state, p, cc.direction))
        try:
            table = expand_cpt(spec, space, [model.spaces[p] for p in pars])
        except CptError as exc:
            raise CptError(f"{frag.name}.{global_name}: {exc}") from None
        parents[global_name] = pars
        cpts[global_name] = table
        provenance[global_name] = Provenance(frag.name, spec.form)

    net = CompiledNetwork(tuple(variables), parents, cpts, provenance, tuple(derived) + tuple(constraints))
    report = validate_network(net)
    if not report.ok:
        raise InvalidNetwork(f"compiled network is invalid: {report.findings[0].message}", report)
    return net


def _decl_of(model: ComposedModel, global_name: str) -> InputDecl | VarDecl:
    home = model.fragment(model.homes[global_name])
    return home.resident(global_name) or home.input(global_name)

