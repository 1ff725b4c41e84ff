"""Parser and canonical serializer for ``.bnkb`` knowledge-base files.

The grammar is documented in ``docs/grammar.md``. Parsing is total: every
problem becomes a ``Diagnostic`` with a source span, and the parser
resynchronizes at the next top-level keyword.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .core import (
    BnError,
    Constraint,
    CptSpec,
    Deterministic,
    Explicit,
    Inequality,
    Monotone,
    NoisyOr,
    Partition,
    PartitionElement,
    SourceSpan,
    StateSpace,
)
from .fragments import (
    IDENT_RE,
    BindingValue,
    ClassConstraint,
    Definition,
    Fragment,
    InputDecl,
    Template,
    TemplateParam,
    VarDecl,
    VariableClass,
    placeholders,
)
from .harness import Scenario

TOP_KEYWORDS = frozenset(
    ["definition", "class", "fragment", "stub", "template", "instance", "model", "constraint", "scenario"]
)
KEYWORDS = TOP_KEYWORDS | frozenset(
    """extends description states ordered input var parents prior cpt partition noisyor leak
    deterministic because exogenous uniform use bind substitute with monotone inequality along
    when nonincreasing nondecreasing focus evidence exhaustive sampled seed unanticipated ident range
    """.split()
)
DIRECTIONS = ("nonincreasing", "nondecreasing")

# --- knowledge base ---------------------------------------------------------


@dataclass(frozen=True)
class Instance:
    template: str
    bindings: tuple[tuple[str, BindingValue], ...]
    comments: tuple[str, ...] = ()
    span: SourceSpan | None = field(default=None, compare=False, repr=False)

    def binding_dict(self) -> dict[str, BindingValue]:
        return dict(self.bindings)


@dataclass(frozen=True)
class ModelDecl:
    name: str
    uses: tuple[str, ...] = ()
    binds: tuple[tuple[str, str, str, str], ...] = ()
    substitutions: tuple[tuple[str, str], ...] = ()
    comments: tuple[str, ...] = ()
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class ConstraintDecl:
    constraint: Constraint
    comments: tuple[str, ...] = ()
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class KnowledgeBase:
    definitions: tuple[Definition, ...] = ()
    classes: tuple[VariableClass, ...] = ()
    templates: tuple[Template, ...] = ()
    fragments: tuple[Fragment, ...] = ()
    instances: tuple[Instance, ...] = ()
    models: tuple[ModelDecl, ...] = ()
    constraints: tuple[ConstraintDecl, ...] = ()
    scenarios: tuple[Scenario, ...] = ()

    def __post_init__(self):
        # definitions and classes are maps: keep them in name order
        object.__setattr__(self, "definitions", tuple(sorted(self.definitions, key=lambda d: d.name)))
        object.__setattr__(self, "classes", tuple(sorted(self.classes, key=lambda c: c.name)))
        for name in ("templates", "fragments", "instances", "models", "constraints", "scenarios"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def hierarchy(self) -> dict[str, VariableClass]:
        return {c.name: c for c in self.classes}

    @property
    def registry(self) -> dict[str, Definition]:
        return {d.name: d for d in self.definitions}

    def fragment(self, name: str) -> Fragment | None:
        return next((f for f in self.fragments if f.name == name), None)

    def template(self, name: str) -> Template | None:
        return next((t for t in self.templates if t.name == name), None)

    def scenario(self, name: str) -> Scenario | None:
        return next((s for s in self.scenarios if s.name == name), None)

    def model(self, name: str) -> ModelDecl | None:
        return next((m for m in self.models if m.name == name), None)


@dataclass(frozen=True)
class Diagnostic:
    span: SourceSpan
    message: str
    code: str = "syntax"
    expected: tuple[str, ...] = ()

    def __str__(self) -> str:
        text = f"{self.span}: {self.message}"
        if self.expected:
            text += f" (expected {', '.join(self.expected)})"
        return text


@dataclass(frozen=True)
class ParseResult:
    kb: KnowledgeBase
    diagnostics: tuple[Diagnostic, ...]

    @property
    def ok(self) -> bool:
        return not self.diagnostics


class KbSyntaxError(BnError):
    def __init__(self, diagnostics: Sequence[Diagnostic]):
        super().__init__("\n".join(str(d) for d in diagnostics))
        self.diagnostics = list(diagnostics)


# --- lexer ------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
     (?P<ws>[ \t\r\f]+)
    |(?P<nl>\n)
    |(?P<comment>\#[^\n]*)
    |(?P<string>"(?:[^"\\\n]|\\.)*")
    |(?P<badstring>"(?:[^"\\\n]|\\.)*)
    |(?P<number>-?[0-9]+(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?)
    |(?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    |(?P<placeholder>\$\{[A-Za-z_][A-Za-z0-9_]*\}|\$[A-Za-z_][A-Za-z0-9_]*)
    |(?P<punct><=|->|[{}()\[\],:=.*<|])
    """,
    re.VERBOSE,
)
_ESCAPES = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}


@dataclass
class Token:
    kind: str  # ident, string, number, placeholder, punct, eof
    text: str
    value: str
    span: SourceSpan
    comments: tuple[str, ...] = ()


def _unescape(body: str) -> str:
    return re.sub(r"\\(.)", lambda m: _ESCAPES.get(m.group(1), m.group(1)), body)


def tokenize(text: str, file: str = "<string>") -> tuple[list[Token], list[Diagnostic]]:
    tokens: list[Token] = []
    diags: list[Diagnostic] = []
    pending: list[str] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            diags.append(Diagnostic(SourceSpan(file, line, col, 1), f"unexpected character {text[pos]!r}", "lex"))
            pos += 1
            continue
        kind = m.lastgroup
        raw = m.group()
        span = SourceSpan(file, line, col, max(len(raw), 1))
        pos = m.end()
        if kind == "nl":
            line += 1
            line_start = pos
        elif kind == "ws":
            pass
        elif kind == "comment":
            pending.append(raw[1:].rstrip())
        elif kind == "badstring":
            diags.append(Diagnostic(span, "unterminated string", "lex"))
        else:
            if kind == "string":
                value = _unescape(raw[1:-1])
            elif kind == "placeholder":
                value = raw.strip("${}")
            else:
                value = raw
            tokens.append(Token(kind, raw, value, span, tuple(pending)))
            pending = []
    tokens.append(Token("eof", "", "", SourceSpan(file, line, pos - line_start + 1, 1), tuple(pending)))
    return tokens, diags


# --- parser -----------------------------------------------------------------


class _Bail(Exception):
    pass


class _Parser:
    def __init__(self, text: str, file: str):
        self.file = file
        self.tokens, self.diagnostics = tokenize(text, file)
        self.pos = 0

    # token helpers

    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def advance(self) -> Token:
        tok = self.peek()
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok.kind in ("punct", "ident") and tok.text == text

    def accept(self, text: str) -> Token | None:
        return self.advance() if self.at(text) else None

    def fail(self, span: SourceSpan, message: str, expected: Sequence[str] = (), code: str = "syntax"):
        self.diagnostics.append(Diagnostic(span, message, code, tuple(expected)))
        raise _Bail()

    def describe(self, tok: Token) -> str:
        return "end of input" if tok.kind == "eof" else repr(tok.text)

    def expect(self, text: str) -> Token:
        if self.at(text):
            return self.advance()
        tok = self.peek()
        self.fail(tok.span, f"expected {text!r}, found {self.describe(tok)}", [repr(text)])

    def name(self, what: str = "name") -> Token:
        tok = self.peek()
        if tok.kind in ("ident", "string"):
            return self.advance()
        self.fail(tok.span, f"expected {what}, found {self.describe(tok)}", ["identifier", "string"])

    def label(self) -> str:
        tok = self.peek()
        if tok.kind in ("ident", "string", "number"):
            self.advance()
            return tok.value
        self.fail(tok.span, f"expected a state label, found {self.describe(tok)}", ["identifier", "string", "number"])

    def number(self) -> float:
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return float(tok.text)
        self.fail(tok.span, f"expected a number, found {self.describe(tok)}", ["number"])

    def integer(self) -> int:
        tok = self.peek()
        if tok.kind == "number" and re.fullmatch(r"-?[0-9]+", tok.text):
            self.advance()
            return int(tok.text)
        self.fail(tok.span, f"expected an integer, found {self.describe(tok)}", ["integer"])

    def string(self) -> str:
        tok = self.peek()
        if tok.kind == "string":
            self.advance()
            return tok.value
        self.fail(tok.span, f"expected a string, found {self.describe(tok)}", ["string"])

    def unclosed(self, opener: Token, expected: Sequence[str]):
        tok = self.peek()
        self.fail(
            opener.span,
            f"unclosed {opener.text!r}: found {self.describe(tok)} at {tok.span.line}:{tok.span.column}",
            expected,
        )

    def comma_list(self, open_text: str, close_text: str, item):
        opener = self.expect(open_text)
        items = []
        if self.accept(close_text):
            return items
        while True:
            items.append(item())
            if self.accept(close_text):
                return items
            if self.accept(","):
                continue
            self.unclosed(opener, [repr(","), repr(close_text)])

    # grammar

    def parse(self) -> KnowledgeBase:
        buckets: dict[str, list] = {
            k: []
            for k in ("definitions", "classes", "templates", "fragments", "instances", "models", "constraints", "scenarios")
        }
        seen: dict[str, dict[str, SourceSpan]] = {k: {} for k in buckets}
        while self.peek().kind != "eof":
            start = self.pos
            try:
                kind, decl, name_tok = self.declaration()
            except _Bail:
                self.synchronize(start)
                continue
            if name_tok is not None:
                key = "fragments" if kind == "instances" else kind
                name, span = name_tok, decl.span
                if name in seen[key]:
                    self.diagnostics.append(
                        Diagnostic(span, f"duplicate {key[:-1]} name {name!r} (first declared at {seen[key][name]})", "duplicate")
                    )
                    continue
                seen[key][name] = span
            buckets[kind].append(decl)
        return KnowledgeBase(**buckets)

    def synchronize(self, start: int) -> None:
        depth = 0
        for tok in self.tokens[start:self.pos]:
            if tok.text == "{" and tok.kind == "punct":
                depth += 1
            elif tok.text == "}" and tok.kind == "punct":
                depth -= 1
        if self.pos == start:
            self.advance()
        while True:
            tok = self.peek()
            if tok.kind == "eof":
                return
            if tok.kind == "ident" and tok.text in TOP_KEYWORDS and (depth <= 0 or tok.span.column == 1):
                return
            if tok.kind == "punct" and tok.text == "{":
                depth += 1
            elif tok.kind == "punct" and tok.text == "}":
                depth -= 1
            self.advance()

    def declaration(self):
        tok = self.peek()
        kw = tok.text if tok.kind == "ident" else None
        comments = tok.comments
        if kw == "definition":
            d = self.definition(comments)
            return "definitions", d, d.name
        if kw == "class":
            c = self.class_decl(comments)
            return "classes", c, c.name
        if kw in ("fragment", "stub"):
            f = self.fragment(comments)
            return "fragments", f, f.name
        if kw == "template":
            t = self.template(comments)
            return "templates", t, t.name
        if kw == "instance":
            i = self.instance(comments)
            idents = [v for _, v in i.bindings if isinstance(v, str)]
            return "instances", i, "/".join([i.template, *idents])
        if kw == "model":
            m = self.model(comments)
            return "models", m, m.name
        if kw == "constraint":
            c = self.constraint(comments)
            return "constraints", c, None
        if kw == "scenario":
            s = self.scenario(comments)
            return "scenarios", s, s.name
        self.fail(tok.span, f"expected a declaration, found {self.describe(tok)}", sorted(TOP_KEYWORDS))

    def state_space(self) -> StateSpace:
        self.expect("states")
        opener = self.peek()
        labels = self.comma_list("{", "}", self.label)
        ordered = bool(self.accept("ordered"))
        try:
            return StateSpace(tuple(labels), ordered)
        except ValueError as exc:
            self.fail(opener.span, str(exc), code="states")

    def vector(self, n_states: int | None) -> tuple[float, ...]:
        tok = self.peek()
        if self.accept("uniform"):
            if n_states is None:
                self.fail(tok.span, "'uniform' needs the variable's states declared in place")
            return tuple(1.0 / n_states for _ in range(n_states))
        opener = self.expect("(")
        values: list[float] = []
        while True:
            tok = self.peek()
            if self.accept(")"):
                break
            if self.accept(","):
                continue
            if tok.kind == "number":
                values.append(float(self.advance().text))
                continue
            self.unclosed(opener, ["number", "','", "')'"])
        if not values:
            self.fail(opener.span, "empty probability vector", ["number"])
        return tuple(values)

    def config(self) -> tuple:
        def item():
            if self.accept("*"):
                return None
            return self.label()

        return tuple(self.comma_list("(", ")", item))

    def block(self, item) -> None:
        opener = self.expect("{")
        while not self.accept("}"):
            if self.peek().kind == "eof":
                self.unclosed(opener, ["'}'"])
            item()

    def cpt_def(self, n_states: int | None, allow_parents: bool = True) -> CptSpec:
        tok = self.peek()
        if self.accept("prior"):
            return Explicit((((), self.vector(n_states)),))
        if not self.accept("cpt"):
            self.fail(tok.span, f"expected 'prior' or 'cpt', found {self.describe(tok)}", ["'prior'", "'cpt'"])
        if self.accept("partition"):
            elements: list[PartitionElement] = []

            def element():
                configs = self.comma_list("{", "}", self.config)
                self.expect(":")
                dist = self.vector(n_states)
                rationale = self.string() if self.accept("because") else ""
                elements.append(PartitionElement(tuple(configs), dist, rationale))

            self.block(element)
            return Partition(tuple(elements))
        if self.accept("noisyor"):
            links = self.vector(None)
            self.expect("leak")
            return NoisyOr(links, self.number())
        if self.accept("deterministic"):
            entries: list = []

            def entry():
                cfg = self.config()
                self.expect(":")
                entries.append((cfg, self.label()))

            self.block(entry)
            return Deterministic(tuple(entries))
        rows: list = []

        def row():
            cfg_tok = self.peek()
            cfg = self.config()
            if None in cfg:
                self.fail(cfg_tok.span, "explicit rows cannot use '*'; use 'cpt partition'")
            self.expect(":")
            rows.append((cfg, self.vector(n_states)))

        self.block(row)
        return Explicit(tuple(rows))

    def definition(self, comments) -> Definition:
        self.expect("definition")
        name = self.name()
        space = self.state_space()
        description = self.string() if self.accept("description") else ""
        return Definition(name.value, space, description, comments, name.span)

    def class_decl(self, comments) -> VariableClass:
        self.expect("class")
        name = self.name("class name")
        parent = self.name("class name").value if self.accept("extends") else None
        fields: dict = {}
        constraints: list[ClassConstraint] = []

        def once(key: str, tok: Token):
            if key in fields:
                self.fail(tok.span, f"class {name.value!r} declares {key} twice", code="duplicate")

        def item():
            tok = self.peek()
            if self.at("states"):
                once("space", tok)
                fields["space"] = self.state_space()
            elif self.accept("description"):
                once("description", tok)
                fields["description"] = self.string()
            elif self.at("cpt") or self.at("prior"):
                once("cpt", tok)
                space = fields.get("space")
                fields["cpt"] = self.cpt_def(len(space) if space else None)
            elif self.accept("constraint"):
                self.expect("monotone")
                target = self.label()
                self.expect("along")
                self.expect("class")
                along = self.name("class name").value
                constraints.append(ClassConstraint(target, along, self.direction()))
            else:
                self.fail(
                    tok.span,
                    f"unexpected {self.describe(tok)} in class body",
                    ["'states'", "'description'", "'cpt'", "'prior'", "'constraint'", "'}'"],
                )

        self.block(item)
        return VariableClass(
            name.value,
            parent,
            fields.get("space"),
            fields.get("cpt"),
            fields.get("description"),
            tuple(constraints) if constraints else None,
            comments,
            name.span,
        )

    def direction(self) -> str:
        tok = self.peek()
        if tok.kind == "ident" and tok.text in DIRECTIONS:
            return self.advance().text
        self.fail(tok.span, f"expected a direction, found {self.describe(tok)}", list(DIRECTIONS))

    def var_header(self):
        class_ref = self.name("class name").value if self.accept(":") else None
        space = self.state_space() if self.at("states") else None
        description = self.string() if self.accept("description") else ""
        return class_ref, space, description

    def fragment(self, comments) -> Fragment:
        is_stub = self.advance().text == "stub"
        name = self.name("fragment name")
        description = ""
        inputs: list[InputDecl] = []
        residents: list[VarDecl] = []
        locals_: dict[str, SourceSpan] = {}
        parent_refs: list[tuple[Token, str]] = []
        opener = self.expect("{")
        if self.accept("description"):
            description = self.string()
        while not self.accept("}"):
            tok = self.peek()
            if tok.kind == "eof":
                self.unclosed(opener, ["'}'"])
            if self.accept("input"):
                vname = self.name("variable name")
                class_ref, space, desc = self.var_header()
                prior = None
                if self.accept("exogenous"):
                    self.expect("prior")
                    prior = self.vector(len(space) if space else None)
                decl = InputDecl(vname.value, class_ref, space, desc, prior, tok.comments, vname.span)
                target = inputs
            elif self.accept("var"):
                vname = self.name("variable name")
                class_ref, space, desc = self.var_header()
                parents: list[str] = []
                if self.accept("parents"):
                    def parent():
                        ptok = self.name("parent name")
                        parent_refs.append((ptok, vname.value))
                        return ptok.value

                    parents = self.comma_list("(", ")", parent)
                cpt = None
                if self.at("prior") or self.at("cpt"):
                    prior_tok = self.peek()
                    cpt = self.cpt_def(len(space) if space else None)
                    if prior_tok.text == "prior" and parents:
                        self.fail(prior_tok.span, f"{vname.value!r} has parents; use 'cpt' instead of 'prior'")
                decl = VarDecl(vname.value, class_ref, space, desc, tuple(parents), cpt, tok.comments, vname.span)
                target = residents
            else:
                self.fail(tok.span, f"unexpected {self.describe(tok)} in fragment body", ["'input'", "'var'", "'}'"])
            if decl.name in locals_:
                self.diagnostics.append(
                    Diagnostic(decl.span, f"duplicate variable {decl.name!r} in fragment {name.value!r}", "duplicate")
                )
                continue
            locals_[decl.name] = decl.span
            target.append(decl)
        for ptok, child in parent_refs:
            if ptok.value not in locals_:
                self.diagnostics.append(
                    Diagnostic(
                        ptok.span,
                        f"unknown reference: {child!r} names parent {ptok.value!r}, which is not an input or "
                        f"variable of fragment {name.value!r}",
                        "unknown-reference",
                    )
                )
        return Fragment(name.value, tuple(inputs), tuple(residents), is_stub, description, comments, name.span)

    def template(self, comments) -> Template:
        self.expect("template")
        name = self.name("template name")

        def param():
            ptok = self.peek()
            if ptok.kind != "ident":
                self.fail(ptok.span, "template parameters must be identifiers", ["identifier"])
            self.advance()
            self.expect(":")
            ktok = self.peek()
            if ktok.kind == "ident" and ktok.text in ("ident", "range"):
                self.advance()
                return TemplateParam(ptok.text, ktok.text)
            self.fail(ktok.span, f"expected a parameter kind, found {self.describe(ktok)}", ["ident", "range"])

        params = self.comma_list("(", ")", param)
        declared = {p.name for p in params}
        opener = self.expect("{")
        depth = 1
        body: list[Token] = []
        while True:
            tok = self.peek()
            if tok.kind == "eof":
                self.unclosed(opener, ["'}'"])
            self.advance()
            if tok.kind == "punct" and tok.text == "{":
                depth += 1
            elif tok.kind == "punct" and tok.text == "}":
                depth -= 1
                if depth == 0:
                    break
            body.append(tok)
        for tok in body:
            used = {tok.value} if tok.kind == "placeholder" else placeholders(tok.value) if tok.kind == "string" else set()
            for u in sorted(used - declared):
                self.diagnostics.append(
                    Diagnostic(tok.span, f"template {name.value!r} uses undeclared parameter {u!r}", "unknown-reference")
                )
        return Template(name.value, tuple(params), format_tokens(body), comments, name.span)

    def instance(self, comments) -> Instance:
        self.expect("instance")
        name = self.name("template name")

        def binding():
            ptok = self.peek()
            if ptok.kind != "ident":
                self.fail(ptok.span, "expected a parameter name", ["identifier"])
            self.advance()
            self.expect("=")
            if self.at("{"):
                return ptok.text, tuple(self.comma_list("{", "}", self.label))
            return ptok.text, self.name("identifier").value

        bindings = self.comma_list("(", ")", binding)
        return Instance(name.value, tuple(bindings), comments, name.span)

    def model(self, comments) -> ModelDecl:
        self.expect("model")
        name = self.name("model name")
        uses: list[str] = []
        binds: list = []
        subs: list = []

        def ref():
            f = self.name("fragment name").value
            self.expect(".")
            return f, self.name("variable name").value

        def item():
            tok = self.peek()
            if self.accept("use"):
                uses.append(self.name("fragment name").value)
                while self.accept(","):
                    uses.append(self.name("fragment name").value)
            elif self.accept("bind"):
                src = ref()
                self.expect("->")
                binds.append(src + ref())
            elif self.accept("substitute"):
                stub = self.name("stub name").value
                self.expect("with")
                subs.append((stub, self.name("fragment name").value))
            else:
                self.fail(tok.span, f"unexpected {self.describe(tok)} in model body", ["'use'", "'bind'", "'substitute'", "'}'"])

        self.block(item)
        return ModelDecl(name.value, tuple(uses), tuple(binds), tuple(subs), comments, name.span)

    def constraint(self, comments) -> ConstraintDecl:
        start = self.expect("constraint")
        tok = self.peek()
        if self.accept("monotone"):
            child = self.name("variable name").value
            self.expect("=")
            target = self.label()
            self.expect("along")
            parent = self.name("parent name").value
            c: Constraint = Monotone(child, target, parent, self.direction())
        elif self.accept("inequality"):
            child = self.name("variable name").value
            self.expect("=")
            target = self.label()
            self.expect("when")
            a = self.config()
            rel_tok = self.peek()
            if self.accept("<="):
                rel = "<="
            elif self.accept("<"):
                rel = "<"
            else:
                self.fail(rel_tok.span, f"expected a relation, found {self.describe(rel_tok)}", ["'<'", "'<='"])
            b = self.config()
            if None in a or None in b:
                self.fail(rel_tok.span, "inequality configurations cannot use '*'")
            c = Inequality(child, target, a, b, rel)
        else:
            self.fail(tok.span, f"expected a constraint kind, found {self.describe(tok)}", ["'monotone'", "'inequality'"])
        return ConstraintDecl(c, comments, start.span)

    def scenario(self, comments) -> Scenario:
        self.expect("scenario")
        name = self.name("scenario name")
        focus: list[str] = []
        evidence: list = []
        fields: dict = {}

        def item():
            tok = self.peek()
            if self.accept("focus"):
                focus.append(self.name("variable name").value)
                while self.accept(","):
                    focus.append(self.name("variable name").value)
            elif self.accept("evidence"):
                var = self.name("variable name").value
                if self.accept("*"):
                    evidence.append((var, None))
                else:
                    evidence.append((var, tuple(self.comma_list("{", "}", self.label))))
            elif self.accept("exhaustive"):
                fields["sampled"] = None
            elif self.accept("sampled"):
                n = self.integer()
                self.expect("seed")
                fields["sampled"] = (n, self.integer())
            elif self.accept("unanticipated"):
                fields["unanticipated"] = True
            elif self.accept("description"):
                fields["description"] = self.string()
            else:
                self.fail(
                    tok.span,
                    f"unexpected {self.describe(tok)} in scenario body",
                    ["'focus'", "'evidence'", "'exhaustive'", "'sampled'", "'unanticipated'", "'description'", "'}'"],
                )

        self.block(item)
        return Scenario(
            name.value,
            tuple(focus),
            tuple(evidence),
            fields.get("sampled"),
            fields.get("unanticipated", False),
            fields.get("description", ""),
            comments,
            name.span,
        )


def parse_kb(text: str, file: str = "<string>") -> ParseResult:
    """Parse knowledge-base text. Never raises on malformed input."""
    parser = _Parser(text, file)
    kb = parser.parse()
    diags = sorted(parser.diagnostics, key=lambda d: (d.span.line, d.span.column))
    return ParseResult(kb, tuple(diags))


def load_kb(path: str | Path) -> KnowledgeBase:
    """Read and parse a ``.bnkb`` file, raising ``KbSyntaxError`` on any diagnostic."""
    path = Path(path)
    result = parse_kb(path.read_text(encoding="utf-8"), file=str(path))
    if result.diagnostics:
        raise KbSyntaxError(result.diagnostics)
    return result.kb


# --- serializer -------------------------------------------------------------


def quote(text: str) -> str:
    out = text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
    return f'"{out}"'


def format_name(name: str) -> str:
    if IDENT_RE.match(name) and name not in KEYWORDS:
        return name
    return quote(name)


def format_label(label: str) -> str:
    if (IDENT_RE.match(label) and label not in KEYWORDS) or re.fullmatch(r"[0-9]+", label):
        return label
    return quote(label)


def format_number(x: float) -> str:
    return repr(float(x))


def format_vector(values: Sequence[float]) -> str:
    return "(" + ", ".join(format_number(v) for v in values) + ")"


def format_config(config: Sequence[str | None]) -> str:
    return "(" + ", ".join("*" if c is None else format_label(c) for c in config) + ")"


def format_space(space: StateSpace) -> str:
    text = "states {" + ", ".join(format_label(s) for s in space.states) + "}"
    return text + " ordered" if space.ordered else text


def format_tokens(tokens: Sequence[Token]) -> str:
    """Canonical text for a token run (template bodies): whitespace-insensitive."""
    lines: list[str] = []
    current: list[str] = []
    indent = 1
    # brace depths that open CPT row blocks
    row_blocks: list[int] = []
    depth = 0
    prev: Token | None = None

    def newline():
        nonlocal current
        if current:
            lines.append("  " * indent + "".join(current).lstrip())
        current = []

    for tok in tokens:
        if tok.kind == "string":
            text = quote(tok.value)
        elif tok.kind == "placeholder":
            text = "${" + tok.value + "}"
        else:
            text = tok.text
        is_punct = tok.kind == "punct"
        if tok.kind == "ident" and tok.text in ("var", "input") and not row_blocks:
            newline()
        elif is_punct and text == "}" and row_blocks and row_blocks[-1] == depth:
            newline()
            row_blocks.pop()
            indent -= 1
        elif (
            is_punct
            and text in ("(", "{")
            and row_blocks
            and row_blocks[-1] == depth
            and prev is not None
            and prev.text not in (":", ",")
        ):
            newline()
        glue = not current or (prev is not None and prev.text in ("(", "{", ".")) or text in (",", ")", "}", ":", ".")
        if prev is not None and "placeholder" in (tok.kind, prev.kind) and "punct" not in (tok.kind, prev.kind):
            # ${X}Suffix must stay one word
            adjacent = tok.span.line == prev.span.line and tok.span.column == prev.span.column + prev.span.length
            glue = glue or adjacent
        current.append(text if glue else " " + text)
        if is_punct and text == "{":
            depth += 1
            if prev is not None and prev.kind == "ident" and prev.text in ("cpt", "partition", "deterministic"):
                row_blocks.append(depth)
                newline()
                indent += 1
        elif is_punct and text == "}":
            depth -= 1
        prev = tok
    newline()
    return "\n".join(lines)


def _comment_lines(comments: Sequence[str], indent: str = "") -> list[str]:
    return [f"{indent}#{c}" for c in comments]


def _cpt_text(spec: CptSpec, indent: str) -> str:
    inner = indent + "  "
    if isinstance(spec, Explicit):
        if len(spec.rows) == 1 and spec.rows[0][0] == ():
            return "prior " + format_vector(spec.rows[0][1])
        rows = [f"{inner}{format_config(c)}: {format_vector(r)}" for c, r in spec.rows]
        return "cpt {\n" + "\n".join(rows) + f"\n{indent}}}"
    if isinstance(spec, Partition):
        lines = []
        for el in spec.elements:
            line = f"{inner}{{" + ", ".join(format_config(c) for c in el.configs) + "}: " + format_vector(el.distribution)
            if el.rationale:
                line += " because " + quote(el.rationale)
            lines.append(line)
        return "cpt partition {\n" + "\n".join(lines) + f"\n{indent}}}"
    if isinstance(spec, NoisyOr):
        return f"cpt noisyor {format_vector(spec.links)} leak {format_number(spec.leak)}"
    if isinstance(spec, Deterministic):
        rows = [f"{inner}{format_config(c)}: {format_label(s)}" for c, s in spec.entries]
        return "cpt deterministic {\n" + "\n".join(rows) + f"\n{indent}}}"
    raise BnError(f"cannot serialize {spec!r}")


def _header(class_ref, space, description) -> str:
    text = ""
    if class_ref is not None:
        text += " : " + format_name(class_ref)
    if space is not None:
        text += " " + format_space(space)
    if description:
        text += " description " + quote(description)
    return text


def _definition_text(d: Definition) -> list[str]:
    line = f"definition {format_name(d.name)} {format_space(d.space)}"
    if d.description:
        line += " description " + quote(d.description)
    return [*_comment_lines(d.comments), line]


def _class_text(c: VariableClass) -> list[str]:
    head = f"class {format_name(c.name)}"
    if c.parent_class is not None:
        head += " extends " + format_name(c.parent_class)
    lines = [*_comment_lines(c.comments), head + " {"]
    if c.space is not None:
        lines.append("  " + format_space(c.space))
    if c.description is not None:
        lines.append("  description " + quote(c.description))
    if c.cpt is not None:
        lines.append("  " + _cpt_text(c.cpt, "  "))
    for cc in c.constraints or ():
        lines.append(
            f"  constraint monotone {format_label(cc.target_state)} along class {format_name(cc.along_class)} {cc.direction}"
        )
    lines.append("}")
    return lines


def _fragment_text(f: Fragment) -> list[str]:
    kw = "stub" if f.is_stub else "fragment"
    lines = [*_comment_lines(f.comments), f"{kw} {format_name(f.name)} {{"]
    if f.description:
        lines.append("  description " + quote(f.description))
    for i in f.inputs:
        lines.extend(_comment_lines(i.comments, "  "))
        line = "  input " + format_name(i.name) + _header(i.class_ref, i.space, i.description)
        if i.prior is not None:
            line += " exogenous prior " + format_vector(i.prior)
        lines.append(line)
    for v in f.residents:
        lines.extend(_comment_lines(v.comments, "  "))
        line = "  var " + format_name(v.name) + _header(v.class_ref, v.space, v.description)
        if v.parents:
            line += " parents (" + ", ".join(format_name(p) for p in v.parents) + ")"
        if v.cpt is not None:
            line += " " + _cpt_text(v.cpt, "  ")
        lines.append(line)
    lines.append("}")
    return lines


def _template_text(t: Template) -> list[str]:
    params = ", ".join(f"{p.name}: {p.kind}" for p in t.params)
    lines = [*_comment_lines(t.comments), f"template {format_name(t.name)}({params}) {{"]
    if t.body:
        lines.append(t.body)
    lines.append("}")
    return lines


def _instance_text(i: Instance) -> list[str]:
    parts = []
    for pname, value in i.bindings:
        if isinstance(value, str):
            parts.append(f"{pname} = {format_name(value)}")
        else:
            parts.append(f"{pname} = {{" + ", ".join(format_label(s) for s in value) + "}")
    return [*_comment_lines(i.comments), f"instance {format_name(i.template)}(" + ", ".join(parts) + ")"]


def _model_text(m: ModelDecl) -> list[str]:
    lines = [*_comment_lines(m.comments), f"model {format_name(m.name)} {{"]
    if m.uses:
        lines.append("  use " + ", ".join(format_name(u) for u in m.uses))
    for sf, si, tf, tr in m.binds:
        lines.append(f"  bind {format_name(sf)}.{format_name(si)} -> {format_name(tf)}.{format_name(tr)}")
    for stub, repl in m.substitutions:
        lines.append(f"  substitute {format_name(stub)} with {format_name(repl)}")
    lines.append("}")
    return lines


def format_constraint(c: Constraint) -> str:
    if isinstance(c, Monotone):
        return (
            f"constraint monotone {format_name(c.child)} = {format_label(c.target_state)} "
            f"along {format_name(c.parent)} {c.direction}"
        )
    return (
        f"constraint inequality {format_name(c.child)} = {format_label(c.target_state)} "
        f"when {format_config(c.config_a)} {c.relation} {format_config(c.config_b)}"
    )


def _scenario_text(s: Scenario) -> list[str]:
    lines = [*_comment_lines(s.comments), f"scenario {format_name(s.name)} {{"]
    if s.description:
        lines.append("  description " + quote(s.description))
    if s.focus:
        lines.append("  focus " + ", ".join(format_name(f) for f in s.focus))
    for var, allowed in s.evidence:
        if allowed is None:
            lines.append(f"  evidence {format_name(var)} *")
        else:
            lines.append(f"  evidence {format_name(var)} {{" + ", ".join(format_label(a) for a in allowed) + "}")
    if s.sampled is None:
        lines.append("  exhaustive")
    else:
        lines.append(f"  sampled {s.sampled[0]} seed {s.sampled[1]}")
    if s.unanticipated:
        lines.append("  unanticipated")
    lines.append("}")
    return lines


def serialize_kb(kb: KnowledgeBase) -> str:
    """Canonical text: fixed section order, declaration order within sections,
    shortest round-trip float formatting."""
    blocks: list[list[str]] = []
    blocks += [_definition_text(d) for d in kb.definitions]
    blocks += [_class_text(c) for c in kb.classes]
    blocks += [_template_text(t) for t in kb.templates]
    blocks += [_fragment_text(f) for f in kb.fragments]
    blocks += [_instance_text(i) for i in kb.instances]
    blocks += [_model_text(m) for m in kb.models]
    blocks += [[*_comment_lines(c.comments), format_constraint(c.constraint)] for c in kb.constraints]
    blocks += [_scenario_text(s) for s in kb.scenarios]
    return "\n\n".join("\n".join(b) for b in blocks) + ("\n" if blocks else "")
