"""First-order rule templates and the JSON rule file format.

Four rule kinds are supported:

- ``implication``: a conjunction of predicate literals implies a literal.
- ``equivalence``: two literals must agree.
- ``exclusion``: at most one of the member predicates is true.  (A strict
  XOR would also reject the all-false assignment; mutually exclusive class
  predictions are naturally all-false on negatives, so at-most-one is used.)
- ``threshold_implication``: a conjunction of attribute comparisons implies
  a literal; the antecedent is evaluated against observed attributes at
  grounding time and becomes an observed variable.

Rule files are JSON lists; see ``rules/lanl_rules.json`` for the bundled
authentication rules.  ``tied_weight_id`` lets several formulas share one
learned weight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

KIND_IMPLICATION = "implication"
KIND_EXCLUSION = "exclusion"
KIND_EQUIVALENCE = "equivalence"
KIND_THRESHOLD = "threshold_implication"
RULE_KINDS = (KIND_IMPLICATION, KIND_EXCLUSION, KIND_EQUIVALENCE, KIND_THRESHOLD)

THRESHOLD_OPS = ("<", ">", "!=", "==")


class RuleError(ValueError):
    pass


class GroundingError(ValueError):
    pass


@dataclass(frozen=True)
class Literal:
    pred: str
    positive: bool = True


@dataclass(frozen=True)
class ThresholdAtom:
    """One comparison ``attr op const``; ``const`` may reference another
    attribute with the ``@name`` form (e.g. billing vs delivery zip)."""

    attr: str
    op: str
    const: float | str

    def __post_init__(self):
        if self.op not in THRESHOLD_OPS:
            raise RuleError(f"unknown operator {self.op!r}")


@dataclass(frozen=True)
class Rule:
    name: str
    kind: str
    antecedent: tuple[Literal, ...] = ()
    atoms: tuple[ThresholdAtom, ...] = ()
    consequent: Literal | None = None
    members: tuple[Literal, ...] = ()
    tied_weight_id: str | None = None

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise RuleError(f"rule {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == KIND_IMPLICATION:
            if not self.antecedent or self.consequent is None:
                raise RuleError(f"rule {self.name!r}: implication needs antecedent and consequent")
        elif self.kind == KIND_EQUIVALENCE:
            if len(self.antecedent) != 1 or self.consequent is None:
                raise RuleError(f"rule {self.name!r}: equivalence needs exactly two literals")
        elif self.kind == KIND_EXCLUSION:
            if len(self.members) < 2:
                raise RuleError(f"rule {self.name!r}: exclusion needs at least two members")
        elif self.kind == KIND_THRESHOLD:
            if not self.atoms or self.consequent is None:
                raise RuleError(f"rule {self.name!r}: threshold rule needs atoms and consequent")

    @property
    def weight_id(self) -> str:
        return self.tied_weight_id or self.name

    @property
    def predicates(self) -> tuple[str, ...]:
        lits = list(self.antecedent) + list(self.members)
        if self.consequent is not None:
            lits.append(self.consequent)
        return tuple(l.pred for l in lits)

    @property
    def arity(self) -> int:
        # Grounded arity: threshold antecedents collapse to one observed var.
        if self.kind == KIND_THRESHOLD:
            return 2
        return len(self.predicates)


def attribute_predicate_eval(attrs: dict, atoms: tuple[ThresholdAtom, ...]) -> bool:
    """Conjunction of attribute comparisons; missing attributes are errors."""
    def resolve(name):
        if name not in attrs:
            raise GroundingError(name)
        return attrs[name]

    for atom in atoms:
        left = resolve(atom.attr)
        right = atom.const
        if isinstance(right, str) and right.startswith("@"):
            right = resolve(right[1:])
        if atom.op == "<":
            ok = float(left) < float(right)
        elif atom.op == ">":
            ok = float(left) > float(right)
        elif atom.op == "==":
            ok = left == right
        else:
            ok = left != right
        if not ok:
            return False
    return True


def _parse_literal(obj, where: str) -> Literal:
    if "pred" not in obj:
        raise RuleError(f"{where}: literal needs a 'pred' field, got {obj!r}")
    return Literal(pred=obj["pred"], positive=bool(obj.get("polarity", True)))


def parse_rules(spec: list[dict]) -> tuple[Rule, ...]:
    rules = []
    seen = set()
    for obj in spec:
        name = obj.get("name")
        if not name:
            raise RuleError(f"rule without a name: {obj!r}")
        if name in seen:
            raise RuleError(f"duplicate rule name {name!r}")
        seen.add(name)
        kind = obj.get("kind")
        ante = obj.get("antecedent", [])
        cons = obj.get("consequent")
        tied = obj.get("tied_weight_id")
        if kind == KIND_THRESHOLD:
            atoms = tuple(
                ThresholdAtom(attr=a["attr"], op=a["op"], const=a["const"]) for a in ante
            )
            rules.append(
                Rule(name=name, kind=kind, atoms=atoms,
                     consequent=_parse_literal(cons, name), tied_weight_id=tied)
            )
        elif kind == KIND_EXCLUSION:
            members = tuple(_parse_literal(a, name) for a in ante)
            rules.append(Rule(name=name, kind=kind, members=members, tied_weight_id=tied))
        elif kind in (KIND_IMPLICATION, KIND_EQUIVALENCE):
            lits = tuple(_parse_literal(a, name) for a in ante)
            rules.append(
                Rule(name=name, kind=kind, antecedent=lits,
                     consequent=_parse_literal(cons, name), tied_weight_id=tied)
            )
        else:
            raise RuleError(f"rule {name!r}: unknown kind {kind!r}")
    return tuple(rules)


def rules_to_json(rules: tuple[Rule, ...]) -> list[dict]:
    out = []
    for r in rules:
        obj: dict = {"name": r.name, "kind": r.kind}
        if r.kind == KIND_THRESHOLD:
            obj["antecedent"] = [
                {"attr": a.attr, "op": a.op, "const": a.const} for a in r.atoms
            ]
        elif r.kind == KIND_EXCLUSION:
            obj["antecedent"] = [
                {"pred": l.pred, "polarity": l.positive} for l in r.members
            ]
        else:
            obj["antecedent"] = [
                {"pred": l.pred, "polarity": l.positive} for l in r.antecedent
            ]
        if r.consequent is not None:
            obj["consequent"] = {"pred": r.consequent.pred, "polarity": r.consequent.positive}
        if r.tied_weight_id:
            obj["tied_weight_id"] = r.tied_weight_id
        out.append(obj)
    return out


def load_rules(path: str | Path) -> tuple[Rule, ...]:
    """Load a rule file; bare names resolve to bundled rule sets."""
    path = str(path)
    if not path.endswith(".json"):
        from importlib import resources

        candidate = resources.files("knowgraph") / "rules" / f"{path}_rules.json"
        if not candidate.is_file():
            raise RuleError(f"no bundled rule set named {path!r}")
        return parse_rules(json.loads(candidate.read_text(encoding="utf-8")))
    return parse_rules(json.loads(Path(path).read_text(encoding="utf-8")))
