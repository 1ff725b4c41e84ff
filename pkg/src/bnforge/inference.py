"""Exact inference: variable elimination and a brute-force joint oracle.

The two routes share nothing beyond reading CPT rows out of the network, so
the oracle can be used to check the eliminator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import BnError, CompiledNetwork

ORACLE_LIMIT = 10**6


class ZeroProbabilityEvidence(BnError):
    """The evidence has probability zero under the network."""


class TooLargeForOracle(BnError):
    pass


@dataclass(frozen=True)
class Marginal:
    variable: str
    states: tuple[str, ...]
    probabilities: tuple[float, ...]

    def __getitem__(self, state: str) -> float:
        return self.probabilities[self.states.index(state)]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.states, self.probabilities))


def check_evidence(net: CompiledNetwork, evidence: Mapping[str, str]) -> dict[str, int]:
    """Map evidence to state indices, raising ``UnknownReference`` on bad names."""
    return {var: net.space(var).index(state) for var, state in evidence.items()}


# --- factors ----------------------------------------------------------------


class _Factor:
    __slots__ = ("scope", "values")

    def __init__(self, scope: tuple[str, ...], values: np.ndarray):
        self.scope = scope
        self.values = values


def _cpt_array(net: CompiledNetwork, name: str) -> np.ndarray:
    pars = net.parents[name]
    shape = tuple(len(net.space(p)) for p in pars) + (len(net.space(name)),)
    return np.asarray(net.cpts[name], dtype=np.float64).reshape(shape)


def _initial_factors(net: CompiledNetwork, observed: Mapping[str, int], names: Sequence[str]) -> list[_Factor]:
    factors = []
    for name in names:
        scope = net.parents[name] + (name,)
        values = _cpt_array(net, name)
        index = tuple(observed.get(v, slice(None)) for v in scope)
        values = values[index]
        scope = tuple(v for v in scope if v not in observed)
        factors.append(_Factor(scope, values))
    return factors


def _product(factors: Sequence[_Factor], keep: Iterable[str]) -> _Factor:
    """Multiply factors and sum out every variable not in ``keep``."""
    letters: dict[str, str] = {}
    for f in factors:
        for v in f.scope:
            if v not in letters:
                letters[v] = _letter(len(letters))
    out_scope = tuple(v for v in letters if v in set(keep))
    spec = ",".join("".join(letters[v] for v in f.scope) for f in factors)
    spec += "->" + "".join(letters[v] for v in out_scope)
    values = np.einsum(spec, *(f.values for f in factors))
    return _Factor(out_scope, np.asarray(values, dtype=np.float64))


def _letter(i: int) -> str:
    return "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"[i]


def min_fill_order(scopes: Iterable[Iterable[str]], eliminate: Iterable[str]) -> list[str]:
    """Greedy min-fill elimination order; ties broken by variable name."""
    adj: dict[str, set[str]] = {}
    for scope in scopes:
        scope = list(scope)
        for v in scope:
            adj.setdefault(v, set()).update(u for u in scope if u != v)
    remaining = set(eliminate)
    for v in remaining:
        adj.setdefault(v, set())
    order = []
    while remaining:
        best, best_fill = None, None
        for v in sorted(remaining):
            nbrs = sorted(adj[v])
            fill = sum(1 for i, a in enumerate(nbrs) for b in nbrs[i + 1:] if b not in adj[a])
            if best_fill is None or fill < best_fill:
                best, best_fill = v, fill
        nbrs = adj.pop(best)
        for a in nbrs:
            adj[a].discard(best)
            adj[a].update(n for n in nbrs if n != a)
        remaining.discard(best)
        order.append(best)
    return order


def _relevant(net: CompiledNetwork, observed: Mapping[str, int], keep: Sequence[str], connected: bool) -> list[str]:
    """Variables whose CPTs can affect P(keep, evidence).

    Barren variables (not ancestors of a query or evidence variable) sum to
    one and are dropped. With ``connected``, factors not linked to ``keep``
    through unobserved variables only scale the result and are dropped too,
    so d-separated parts of the network cannot perturb it even by rounding.
    """
    needed = set(keep) | set(observed)
    stack = list(needed)
    while stack:
        for p in net.parents[stack.pop()]:
            if p not in needed:
                needed.add(p)
                stack.append(p)
    names = [n for n in net.names if n in needed]
    if not connected or not keep:
        return names
    # union-find over unobserved variables sharing a family
    root = {n: n for n in names}

    def find(x: str) -> str:
        while root[x] != x:
            root[x] = root[root[x]]
            x = root[x]
        return x

    for n in names:
        family = [v for v in (*net.parents[n], n) if v not in observed]
        for v in family[1:]:
            root[find(v)] = find(family[0])
    wanted = {find(k) for k in keep}
    out = []
    for n in names:
        family = [v for v in (*net.parents[n], n) if v not in observed]
        if family and find(family[0]) in wanted:
            out.append(n)
    return out


def _eliminate(
    net: CompiledNetwork, observed: Mapping[str, int], keep: Sequence[str], connected: bool = False
) -> _Factor:
    """Unnormalized P(keep, evidence) as a factor whose scope is ``keep`` order.

    With ``connected`` the result is only proportional to that.
    """
    names = _relevant(net, observed, keep, connected)
    factors = _initial_factors(net, observed, names)
    keep_set = set(keep)
    hidden = [v for v in names if v not in observed and v not in keep_set]
    for var in min_fill_order((f.scope for f in factors), hidden):
        touching = [f for f in factors if var in f.scope]
        if not touching:
            continue
        rest = [f for f in factors if var not in f.scope]
        scope = {v for f in touching for v in f.scope if v != var}
        rest.append(_product(touching, scope))
        factors = rest
    result = _product(factors, keep_set) if factors else _Factor((), np.float64(1.0))
    if result.scope != tuple(keep):
        perm = [result.scope.index(v) for v in keep]
        result = _Factor(tuple(keep), np.transpose(result.values, perm))
    return result


def _require_possible(net: CompiledNetwork, observed: Mapping[str, int], evidence: Mapping[str, str]) -> None:
    if observed and float(_eliminate(net, observed, ()).values) == 0.0:
        raise ZeroProbabilityEvidence(f"evidence {dict(evidence)} has probability zero")


def evidence_probability(net: CompiledNetwork, evidence: Mapping[str, str]) -> float:
    """Exact P(evidence); 1.0 for empty evidence."""
    observed = check_evidence(net, evidence)
    return float(_eliminate(net, observed, ()).values)


def joint_posterior(net: CompiledNetwork, evidence: Mapping[str, str], variables: Sequence[str]) -> np.ndarray:
    """P(variables | evidence) as an array indexed in ``variables`` order.

    Observed variables among ``variables`` get a one-hot axis.
    """
    observed = check_evidence(net, evidence)
    if len(set(variables)) != len(variables):
        raise BnError("duplicate variables in joint query")
    for v in variables:
        net.variable(v)
    _require_possible(net, observed, evidence)
    free = [v for v in variables if v not in observed]
    factor = _eliminate(net, observed, free, connected=True)
    out = np.zeros([len(net.space(v)) for v in variables])
    index = tuple(observed[v] if v in observed else slice(None) for v in variables)
    out[index] = factor.values / float(np.sum(factor.values))
    return out


def posterior(
    net: CompiledNetwork, evidence: Mapping[str, str], targets: Sequence[str]
) -> dict[str, Marginal]:
    """Exact posterior marginals by variable elimination.

    Each target is computed on its own connected part of the network, so
    evidence d-separated from a target leaves its marginal bit-identical.
    Raises ``ZeroProbabilityEvidence`` when P(evidence) = 0.
    """
    observed = check_evidence(net, evidence)
    for t in targets:
        net.variable(t)
    _require_possible(net, observed, evidence)
    out: dict[str, Marginal] = {}
    for t in targets:
        states = net.space(t).states
        if t in observed:
            probs = tuple(1.0 if i == observed[t] else 0.0 for i in range(len(states)))
        else:
            values = _eliminate(net, observed, (t,), connected=True).values
            probs = tuple(float(p) for p in values / float(np.sum(values)))
        out[t] = Marginal(t, states, probs)
    return out


# --- brute-force oracle -----------------------------------------------------


def _full_joint(net: CompiledNetwork) -> tuple[list[str], np.ndarray]:
    names = net.names
    sizes = [len(net.space(n)) for n in names]
    if math.prod(sizes) > ORACLE_LIMIT:
        raise TooLargeForOracle(f"joint state space of {math.prod(sizes)} exceeds {ORACLE_LIMIT}")
    axis = {n: i for i, n in enumerate(names)}
    joint = np.ones(sizes)
    for name in names:
        family = list(net.parents[name]) + [name]
        cpt = np.asarray(net.cpts[name], dtype=np.float64).reshape([sizes[axis[v]] for v in family])
        # move the family axes into network order, then broadcast
        order = sorted(range(len(family)), key=lambda i: axis[family[i]])
        cpt = np.transpose(cpt, order)
        shape = [1] * len(names)
        for v in family:
            shape[axis[v]] = sizes[axis[v]]
        joint = joint * cpt.reshape(shape)
    return names, joint


def _condition(net: CompiledNetwork, evidence: Mapping[str, str]) -> tuple[list[str], np.ndarray]:
    names, joint = _full_joint(net)
    mask = np.ones(joint.shape, dtype=bool)
    for var, state in evidence.items():
        i = names.index(var)
        keep = np.zeros(joint.shape[i], dtype=bool)
        keep[net.space(var).index(state)] = True
        shape = [1] * joint.ndim
        shape[i] = joint.shape[i]
        mask &= keep.reshape(shape)
    return names, np.where(mask, joint, 0.0)


def brute_force_evidence_probability(net: CompiledNetwork, evidence: Mapping[str, str]) -> float:
    check_evidence(net, evidence)
    _, joint = _condition(net, evidence)
    return float(joint.sum())


def brute_force_posterior(
    net: CompiledNetwork, evidence: Mapping[str, str], targets: Sequence[str]
) -> dict[str, Marginal]:
    """Posterior marginals by enumerating the full joint distribution.

    Raises ``TooLargeForOracle`` when the joint has more than 10**6 cells.
    """
    check_evidence(net, evidence)
    for t in targets:
        net.variable(t)
    names, joint = _condition(net, evidence)
    z = float(joint.sum())
    if z == 0.0:
        raise ZeroProbabilityEvidence(f"evidence {dict(evidence)} has probability zero")
    out = {}
    for t in targets:
        i = names.index(t)
        axes = tuple(a for a in range(joint.ndim) if a != i)
        values = joint.sum(axis=axes) / z
        out[t] = Marginal(t, net.space(t).states, tuple(float(p) for p in values))
    return out


def marginals(net: CompiledNetwork, evidence: Mapping[str, str] | None = None) -> dict[str, Marginal]:
    """Posterior marginals of every variable."""
    return posterior(net, evidence or {}, net.names)


__all__ = [
    "Marginal",
    "ZeroProbabilityEvidence",
    "TooLargeForOracle",
    "posterior",
    "evidence_probability",
    "joint_posterior",
    "brute_force_posterior",
    "brute_force_evidence_probability",
    "min_fill_order",
    "marginals",
]
