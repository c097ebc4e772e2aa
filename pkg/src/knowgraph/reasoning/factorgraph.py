"""Grounded factor graphs over model outputs, with exact-inference oracles.

Grounding creates one variable per (predicate, example) and one factor per
(rule, example); examples never share variables, so the graph decomposes
into per-example components.  Classifier confidences become soft evidence:
singleton log-odds potentials b_i = log(z / (1 - z)), leaving the variable
free so rules can override it.  Threshold-rule antecedents are evaluated
against observed attributes and enter as observed variables.

The enumeration routines here (exact marginals, expected formula truth,
blanket conditionals, evidence mass) are deliberately independent of the
variational machinery in ``em``; they are the oracles the fast paths are
tested against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from knowgraph.reasoning.rules import (
    KIND_EQUIVALENCE,
    KIND_EXCLUSION,
    KIND_IMPLICATION,
    KIND_THRESHOLD,
    GroundingError,
    Rule,
    attribute_predicate_eval,
)

EVIDENCE_EPS = 1e-6
ORACLE_LIMIT = 20
ARITY_LIMIT = 8

STATUS_SOFT = "soft"
STATUS_OBSERVED = "observed"
STATUS_LATENT = "latent"


def evidence_logodds(z: float) -> float:
    """log(z / (1-z)) with z clamped to [1e-6, 1 - 1e-6]."""
    if not (0.0 <= z <= 1.0):
        raise ValueError(f"evidence probability {z} outside [0, 1]")
    zc = min(max(z, EVIDENCE_EPS), 1.0 - EVIDENCE_EPS)
    return math.log(zc / (1.0 - zc))


@dataclass(frozen=True)
class ExampleOutputs:
    """Per-example classifier outputs and observed facts for grounding."""

    example_id: str
    z: dict[str, float] = field(default_factory=dict)
    observed: dict[str, bool] = field(default_factory=dict)
    attrs: dict = field(default_factory=dict)
    label: int | None = None


@dataclass
class PredicateVar:
    index: int
    name: str
    example_id: str
    status: str
    z: float | None = None
    value: bool | None = None
    b: float = 0.0
    is_attribute: bool = False


@dataclass
class Factor:
    """A grounded formula.  After grounding only three shapes remain:
    implication (vars[:-1] conjunction implies vars[-1]), equivalence
    (two literals agree), and exclusion (at most one member literal true)."""

    index: int
    rule_name: str
    weight_id: str
    kind: str
    var_ids: tuple[int, ...]
    polarities: tuple[bool, ...]


@dataclass
class FactorGraph:
    variables: list[PredicateVar]
    factors: list[Factor]
    examples: list[str]
    example_of_var: list[int]  # example position per variable

    @property
    def weight_ids(self) -> tuple[str, ...]:
        return tuple(sorted({f.weight_id for f in self.factors}))

    @property
    def free_var_ids(self) -> list[int]:
        return [v.index for v in self.variables if v.status != STATUS_OBSERVED]

    def vars_of_example(self, pos: int) -> list[int]:
        return [i for i, e in enumerate(self.example_of_var) if e == pos]

    def var_index(self, example_id: str, name: str) -> int:
        for v in self.variables:
            if v.example_id == example_id and v.name == name:
                return v.index
        raise KeyError((example_id, name))


def build_factor_graph(
    examples: list[ExampleOutputs],
    rules: tuple[Rule, ...],
    latent_preds: tuple[str, ...] = (),
) -> FactorGraph:
    """Ground every rule over every example.

    Predicate names resolve, in order, to an observed value, a soft-evidence
    confidence, or a declared latent; anything else is a GroundingError.
    """
    variables: list[PredicateVar] = []
    factors: list[Factor] = []
    example_of_var: list[int] = []
    pred_names: list[str] = []
    for rule in rules:
        for p in rule.predicates:
            if p not in pred_names:
                pred_names.append(p)

    for pos, ex in enumerate(examples):
        lookup: dict[str, int] = {}
        for name in pred_names:
            idx = len(variables)
            if name in ex.observed:
                var = PredicateVar(idx, name, ex.example_id, STATUS_OBSERVED, value=bool(ex.observed[name]))
            elif name in ex.z:
                z = float(ex.z[name])
                if not (0.0 <= z <= 1.0):
                    raise GroundingError(f"confidence for {name!r} outside [0, 1]: {z}")
                var = PredicateVar(idx, name, ex.example_id, STATUS_SOFT, z=z, b=evidence_logodds(z))
            elif name in latent_preds:
                var = PredicateVar(idx, name, ex.example_id, STATUS_LATENT)
            else:
                raise GroundingError(
                    f"predicate {name!r} is neither a model output, an observed value, "
                    f"nor a declared latent (example {ex.example_id!r})"
                )
            variables.append(var)
            example_of_var.append(pos)
            lookup[name] = idx

        for rule in rules:
            fid = len(factors)
            if rule.kind == KIND_THRESHOLD:
                truth = attribute_predicate_eval(ex.attrs, rule.atoms)
                aidx = len(variables)
                variables.append(
                    PredicateVar(
                        aidx, f"{rule.name}.antecedent", ex.example_id,
                        STATUS_OBSERVED, value=truth, is_attribute=True,
                    )
                )
                example_of_var.append(pos)
                factors.append(
                    Factor(fid, rule.name, rule.weight_id, KIND_IMPLICATION,
                           (aidx, lookup[rule.consequent.pred]),
                           (True, rule.consequent.positive))
                )
            elif rule.kind == KIND_IMPLICATION:
                ids = tuple(lookup[l.pred] for l in rule.antecedent) + (lookup[rule.consequent.pred],)
                pols = tuple(l.positive for l in rule.antecedent) + (rule.consequent.positive,)
                factors.append(Factor(fid, rule.name, rule.weight_id, KIND_IMPLICATION, ids, pols))
            elif rule.kind == KIND_EQUIVALENCE:
                a = rule.antecedent[0]
                ids = (lookup[a.pred], lookup[rule.consequent.pred])
                factors.append(
                    Factor(fid, rule.name, rule.weight_id, KIND_EQUIVALENCE, ids,
                           (a.positive, rule.consequent.positive))
                )
            else:
                ids = tuple(lookup[m.pred] for m in rule.members)
                pols = tuple(m.positive for m in rule.members)
                factors.append(Factor(fid, rule.name, rule.weight_id, KIND_EXCLUSION, ids, pols))

    return FactorGraph(
        variables=variables,
        factors=factors,
        examples=[ex.example_id for ex in examples],
        example_of_var=example_of_var,
    )


def factor_truth(factor: Factor, world: dict[int, bool]) -> int:
    """0/1 truth of a grounded formula under a complete assignment."""
    lits = [bool(world[v]) == p for v, p in zip(factor.var_ids, factor.polarities)]
    if factor.kind == KIND_IMPLICATION:
        return int(not all(lits[:-1]) or lits[-1])
    if factor.kind == KIND_EQUIVALENCE:
        return int(lits[0] == lits[1])
    return int(sum(lits) <= 1)  # exclusion: at most one true


def _factor_truth_matrix(factor: Factor, values: np.ndarray) -> np.ndarray:
    """Vectorized truth over a (n_worlds x n_vars) boolean value matrix."""
    lits = [values[:, v] == p for v, p in zip(factor.var_ids, factor.polarities)]
    if factor.kind == KIND_IMPLICATION:
        ant = np.logical_and.reduce(lits[:-1]) if len(lits) > 1 else lits[0]
        return np.where(~ant | lits[-1], 1.0, 0.0)
    if factor.kind == KIND_EQUIVALENCE:
        return np.where(lits[0] == lits[1], 1.0, 0.0)
    return np.where(np.sum(lits, axis=0) <= 1, 1.0, 0.0)


def world_logpotential(world: dict[int, bool], fg: FactorGraph, weights: dict[str, float]) -> float:
    """Sum of weighted formula truths plus singleton evidence terms.

    Observed variables carry no b term; they influence only formula truth.
    """
    total = 0.0
    for f in fg.factors:
        total += weights.get(f.weight_id, 0.0) * factor_truth(f, world)
    for v in fg.variables:
        if v.status != STATUS_OBSERVED and world[v.index]:
            total += v.b
    return total


def _world_table(fg: FactorGraph) -> tuple[list[int], np.ndarray]:
    free = fg.free_var_ids
    u = len(free)
    if u > ORACLE_LIMIT:
        raise ValueError(f"oracle limit: {u} free variables > {ORACLE_LIMIT}")
    n_worlds = 1 << u
    values = np.zeros((n_worlds, len(fg.variables)), dtype=bool)
    for v in fg.variables:
        if v.status == STATUS_OBSERVED:
            values[:, v.index] = v.value
    codes = np.arange(n_worlds, dtype=np.int64)
    for j, vid in enumerate(free):
        values[:, vid] = (codes >> j) & 1
    return free, values


def _world_logpotentials(fg: FactorGraph, weights: dict[str, float], values: np.ndarray) -> np.ndarray:
    logpot = np.zeros(values.shape[0])
    for f in fg.factors:
        w = weights.get(f.weight_id, 0.0)
        if w != 0.0:
            logpot += w * _factor_truth_matrix(f, values)
    for v in fg.variables:
        if v.status != STATUS_OBSERVED and v.b != 0.0:
            logpot += v.b * values[:, v.index]
    return logpot


def exact_marginals(fg: FactorGraph, weights: dict[str, float]) -> dict[int, float]:
    """Brute-force P(t_i = 1) for every non-observed variable.

    Enumerates all worlds consistent with the observed values; limited to 20
    free variables.
    """
    free, values = _world_table(fg)
    logpot = _world_logpotentials(fg, weights, values)
    logpot -= logpot.max()
    p = np.exp(logpot)
    p /= p.sum()
    return {vid: float(p @ values[:, vid]) for vid in free}


def log_evidence_mass(fg: FactorGraph, weights: dict[str, float]) -> float:
    """log sum over consistent worlds of exp(logpotential); ELBO upper bound."""
    _, values = _world_table(fg)
    logpot = _world_logpotentials(fg, weights, values)
    m = logpot.max()
    return float(m + np.log(np.exp(logpot - m).sum()))


def expected_formula_truth(
    factor: Factor, marginals: dict[int, float], fg: FactorGraph
) -> float:
    """E[f] under independent Bernoulli marginals, by exact enumeration.

    Observed variables are fixed; everything else enumerates, so arity is
    capped at 8.
    """
    free = [v for v in factor.var_ids if fg.variables[v].status != STATUS_OBSERVED]
    free = sorted(set(free))
    if len(factor.var_ids) > ARITY_LIMIT:
        raise ValueError(f"formula arity {len(factor.var_ids)} > {ARITY_LIMIT}")
    world = {
        v: bool(fg.variables[v].value)
        for v in factor.var_ids
        if fg.variables[v].status == STATUS_OBSERVED
    }
    total = 0.0
    for code in range(1 << len(free)):
        prob = 1.0
        for j, vid in enumerate(free):
            bit = (code >> j) & 1
            q = marginals[vid]
            prob *= q if bit else (1.0 - q)
            world[vid] = bool(bit)
        total += prob * factor_truth(factor, world)
    return total


def conditional_given_blanket(
    fg: FactorGraph, weights: dict[str, float], i: int, values: dict[int, bool]
) -> float:
    """P(t_i = 1 | Markov blanket) = sigmoid(b_i + sum_f w_f * (f(1) - f(0))).

    ``values`` must assign every neighbor of i in some shared factor.
    """
    var = fg.variables[i]
    s = var.b if var.status != STATUS_OBSERVED else 0.0
    world = dict(values)
    for f in fg.factors:
        if i not in f.var_ids:
            continue
        w = weights.get(f.weight_id, 0.0)
        if w == 0.0:
            continue
        world[i] = True
        up = factor_truth(f, world)
        world[i] = False
        down = factor_truth(f, world)
        s += w * (up - down)
    return 1.0 / (1.0 + math.exp(-s))
