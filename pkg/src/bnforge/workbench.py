"""Glue from a parsed knowledge base to composed models and compiled networks."""

from __future__ import annotations

from .core import CompiledNetwork, UnknownReference
from .dsl import KnowledgeBase, ModelDecl
from .fragments import Binding, ComposedModel, Fragment, compile_model, compose, instantiate_template, substitute_stub


def kb_fragments(kb: KnowledgeBase) -> dict[str, Fragment]:
    """Declared fragments plus every template instance, by name."""
    out = {f.name: f for f in kb.fragments}
    for inst in kb.instances:
        template = kb.template(inst.template)
        if template is None:
            raise UnknownReference(f"instance of unknown template {inst.template!r}", inst.template)
        fragment = instantiate_template(template, inst.binding_dict())
        out[fragment.name] = fragment
    return out


def default_model(kb: KnowledgeBase) -> ModelDecl | None:
    return kb.models[0] if kb.models else None


def build_model(kb: KnowledgeBase, model: str | None = None) -> ComposedModel:
    """Compose the named model (default: the first declared one).

    Without any model declaration every fragment is composed unbound, so all
    inputs must be exogenous.
    """
    fragments = kb_fragments(kb)
    decl = kb.model(model) if model is not None else default_model(kb)
    if model is not None and decl is None:
        raise UnknownReference(f"unknown model {model!r}", model)
    if decl is None:
        return compose(list(fragments.values()), Binding(), kb.hierarchy, kb.registry)

    def get(name: str) -> Fragment:
        if name not in fragments:
            raise UnknownReference(f"model {decl.name!r} uses unknown fragment {name!r}", name)
        return fragments[name]

    used = [get(n) for n in decl.uses]
    replacements = {r for _, r in decl.substitutions}
    direct, later = [], []
    for sf, si, tf, tr in decl.binds:
        (later if sf in replacements or tf in replacements else direct).append(((sf, si), (tf, tr)))
    composed = compose(used, Binding(tuple(direct)), kb.hierarchy, kb.registry)
    for stub, repl in decl.substitutions:
        wires = [w for w in later if repl in (w[0][0], w[1][0])]
        composed = substitute_stub(composed, stub, get(repl), Binding(tuple(wires)))
    return composed


def compile_kb(kb: KnowledgeBase, model: str | None = None) -> CompiledNetwork:
    return compile_model(build_model(kb, model), constraints=[c.constraint for c in kb.constraints])
