"""Domain knowledge: class DAG, unit algebra, Horn rules, and the
interpretability verdict used to filter generated features."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

from .data import Dataset
from .transform import AggNode, BinaryNode, DateNode, Expr, RawRef, UnaryNode

BASE_DIMENSIONS = ("mass", "length", "time", "temperature", "currency", "count")


class KGError(ValueError):
    """Raised for malformed knowledge-graph documents."""


@dataclass(frozen=True)
class Unit:
    """Physical unit as a map of base dimensions to rational exponents.

    Stored as a sorted tuple of (dimension, exponent) pairs with zero
    exponents removed; the empty tuple is dimensionless.
    """

    dims: tuple = ()
    name: Optional[str] = None

    @classmethod
    def of(cls, name: Optional[str] = None, **exponents) -> "Unit":
        return cls(dims=_normalize(dict(exponents)), name=name)

    @property
    def dimensionless(self) -> bool:
        return not self.dims

    def dims_dict(self) -> dict:
        return {d: e for d, e in self.dims}

    def dims_token(self) -> str:
        if not self.dims:
            return "dim:1"
        return "dim:" + ",".join(f"{d}={e}" for d, e in self.dims)


def _normalize(exponents: dict) -> tuple:
    for d in exponents:
        if d not in BASE_DIMENSIONS:
            raise KGError(f"unknown base dimension {d!r}")
    pairs = [(d, Fraction(e)) for d, e in exponents.items() if Fraction(e) != 0]
    return tuple(sorted(pairs))


DIMENSIONLESS = Unit()


@dataclass(frozen=True)
class Atom:
    pred: str
    args: tuple


@dataclass(frozen=True)
class Rule:
    name: str
    body: tuple
    head: Atom


class VerdictStatus(str, Enum):
    INTERPRETABLE = "interpretable"
    NON_INTERPRETABLE = "non_interpretable"
    UNCOVERED = "uncovered"


@dataclass(frozen=True)
class Verdict:
    status: VerdictStatus
    reason: Optional[str] = None

    @property
    def interpretable(self) -> bool:
        return self.status == VerdictStatus.INTERPRETABLE


INTERPRETABLE = Verdict(VerdictStatus.INTERPRETABLE)
UNCOVERED = Verdict(VerdictStatus.UNCOVERED)

# Class asserted for each transform application node when rules are matched.
TRANSFORM_CLASS = {
    "log": "Logarithm",
    "sqrt": "SquareRoot",
    "square": "Square",
    "reciprocal": "Reciprocal",
    "one_hot": "OneHotEncoding",
    "add": "Addition",
    "sub": "Subtraction",
    "mul": "Multiplication",
    "div": "Division",
    "and": "LogicalAnd",
    "or": "LogicalOr",
    "group_min": "aggregationMin",
    "group_max": "aggregationMax",
    "group_mean": "aggregationMean",
    "group_sum": "aggregationSum",
    "day": "DateDay",
    "month": "DateMonth",
    "year": "DateYear",
    "is_weekend": "DateIsWeekend",
}


@dataclass
class KnowledgeGraph:
    classes: list
    subclass_edges: list              # (child, parent) pairs forming a DAG
    unit_registry: dict               # unit name -> Unit
    unit_class: dict                  # unit name -> asserted class
    quantity_of_unit: dict            # unit name -> quantity class
    column_concepts: dict             # column -> (class, unit name or None)
    rules: list
    concept_order: list               # fixed index of classes + unit names
    _parents: dict = field(default_factory=dict)
    _ancestors: dict = field(default_factory=dict)

    def ancestors(self, cls: str):
        """All classes reachable upward from cls, excluding cls itself."""
        if cls not in self._ancestors:
            seen = []
            stack = list(self._parents.get(cls, ()))
            while stack:
                c = stack.pop()
                if c not in seen:
                    seen.append(c)
                    stack.extend(self._parents.get(c, ()))
            self._ancestors[cls] = seen
        return list(self._ancestors[cls])

    def registered_name_for(self, unit: Unit):
        for name, u in self.unit_registry.items():
            if u.dims == unit.dims:
                return name
        return None


def empty_kg() -> KnowledgeGraph:
    return KnowledgeGraph([], [], {}, {}, {}, {}, [], [])


def _check_dag(classes, edges):
    children = {}
    for child, parent in edges:
        children.setdefault(parent, []).append(child)
    state = {}

    def visit(c):
        if state.get(c) == 1:
            raise KGError(f"cycle in subclass edges at {c!r}")
        if state.get(c) == 2:
            return
        state[c] = 1
        for ch in children.get(c, ()):
            visit(ch)
        state[c] = 2

    for c in classes:
        visit(c)


def load_kg(path: str, mapping_path: Optional[str] = None) -> KnowledgeGraph:
    """Load a KG document (classes, subclass_of, units, quantities, rules)
    plus an optional column-to-concept mapping document."""
    with open(path) as fh:
        doc = json.load(fh)
    classes = list(doc.get("classes", []))
    class_set = set(classes)
    edges = []
    for pair in doc.get("subclass_of", []):
        child, parent = pair
        for c in (child, parent):
            if c not in class_set:
                raise KGError(f"subclass edge references unknown class {c!r}")
        edges.append((child, parent))
    _check_dag(classes, edges)

    unit_registry = {}
    unit_class = {}
    for u in doc.get("units", []):
        name = u["name"]
        if name in unit_registry:
            raise KGError(f"duplicate unit name {name!r}")
        cls = u.get("class", "Units")
        if cls not in class_set:
            raise KGError(f"unit {name!r} references unknown class {cls!r}")
        unit_registry[name] = Unit(dims=_normalize(u.get("dims", {})), name=name)
        unit_class[name] = cls

    quantity_of_unit = {}
    for name, q in doc.get("quantities", {}).items():
        if name not in unit_registry:
            raise KGError(f"quantity entry for unknown unit {name!r}")
        if q not in class_set:
            raise KGError(f"quantity entry references unknown class {q!r}")
        quantity_of_unit[name] = q

    rules = []
    for i, r in enumerate(doc.get("rules", [])):
        body = tuple(Atom(a["pred"], tuple(a["args"])) for a in r["body"])
        head = Atom(r["head"]["pred"], tuple(r["head"]["args"]))
        head_vars = {a for a in head.args if a.startswith("?")}
        body_vars = {a for atom in body for a in atom.args if a.startswith("?")}
        if not head_vars <= body_vars:
            raise KGError(f"rule {i}: head variables must appear in the body")
        rules.append(Rule(name=r.get("name", f"rule {i + 1}"), body=body, head=head))

    column_concepts = {}
    if mapping_path is not None:
        with open(mapping_path) as fh:
            mapping = json.load(fh)
        for col, entry in mapping.items():
            cls = entry["class"]
            if cls not in class_set:
                raise KGError(f"mapping for {col!r} references unknown class {cls!r}")
            unit = entry.get("unit")
            if unit is not None and unit not in unit_registry:
                raise KGError(f"mapping for {col!r} references unknown unit {unit!r}")
            column_concepts[col] = (cls, unit)

    concept_order = classes + list(unit_registry)
    parents = {}
    for child, parent in edges:
        parents.setdefault(child, []).append(parent)
    return KnowledgeGraph(
        classes=classes,
        subclass_edges=edges,
        unit_registry=unit_registry,
        unit_class=unit_class,
        quantity_of_unit=quantity_of_unit,
        column_concepts=column_concepts,
        rules=rules,
        concept_order=concept_order,
        _parents=parents,
    )


def subsumes(kg: KnowledgeGraph, sub: str, sup: str) -> bool:
    """True iff sup is reachable from sub through subclass edges (reflexive)."""
    for c in (sub, sup):
        if c not in kg.classes:
            raise KGError(f"unknown class {c!r}")
    return sub == sup or sup in kg.ancestors(sub)


def is_instance(kg: KnowledgeGraph, unit_name: str, cls: str) -> bool:
    """Instance check: the unit's asserted class, or any ancestor, equals cls."""
    if cls not in kg.classes:
        raise KGError(f"unknown class {cls!r}")
    if unit_name not in kg.unit_registry:
        return False
    return subsumes(kg, kg.unit_class[unit_name], cls)


_DIMENSIONLESS_OPS = {"one_hot", "and", "or", "is_weekend", "day", "month", "year"}


def propagate_unit(op_name: str, input_units) -> Optional[Unit]:
    """Unit algebra over one transform application; None means unknown.

    Encoding/logical/date extractors yield dimensionless regardless of input;
    for everything else any unknown input makes the result unknown.
    """
    if op_name in _DIMENSIONLESS_OPS:
        return DIMENSIONLESS
    units = list(input_units)
    if any(u is None for u in units):
        return None
    if op_name in ("add", "sub"):
        a, b = units
        return Unit(dims=a.dims) if a.dims == b.dims else None
    if op_name == "mul":
        a, b = units
        return _combine(a, b, 1)
    if op_name == "div":
        a, b = units
        return _combine(a, b, -1)
    if op_name == "square":
        return _scale(units[0], 2)
    if op_name == "sqrt":
        return _scale(units[0], Fraction(1, 2))
    if op_name == "reciprocal":
        return _scale(units[0], -1)
    if op_name == "log":
        return DIMENSIONLESS if units[0].dimensionless else None
    if op_name in ("group_min", "group_max", "group_mean", "group_sum"):
        return Unit(dims=units[0].dims)
    raise KGError(f"unknown transform {op_name!r}")


def _combine(a: Unit, b: Unit, sign: int) -> Unit:
    dims = a.dims_dict()
    for d, e in b.dims:
        dims[d] = dims.get(d, Fraction(0)) + sign * e
    return Unit(dims=tuple(sorted((d, e) for d, e in dims.items() if e != 0)))


def _scale(a: Unit, factor) -> Unit:
    return Unit(dims=tuple((d, e * Fraction(factor)) for d, e in a.dims))


def expr_unit(kg: KnowledgeGraph, expr: Expr) -> Optional[Unit]:
    """Propagated unit of an expression from its mapped leaf units."""
    if isinstance(expr, RawRef):
        entry = kg.column_concepts.get(expr.name)
        if entry is None or entry[1] is None:
            return None
        return kg.unit_registry[entry[1]]
    if isinstance(expr, UnaryNode):
        return propagate_unit(expr.op, [expr_unit(kg, expr.child)])
    if isinstance(expr, BinaryNode):
        return propagate_unit(expr.op, [expr_unit(kg, expr.left), expr_unit(kg, expr.right)])
    if isinstance(expr, AggNode):
        return propagate_unit(expr.op, [expr_unit(kg, expr.value)])
    return propagate_unit(expr.op, [expr_unit(kg, expr.child)])


def _token_dims(kg: KnowledgeGraph, token: str):
    """Dims behind a unit token; unresolvable tokens compare as themselves."""
    if token in kg.unit_registry:
        return kg.unit_registry[token].dims
    if token == "dim:1":
        return ()
    if token.startswith("dim:"):
        pairs = []
        for part in token[4:].split(","):
            d, e = part.split("=")
            pairs.append((d, Fraction(e)))
        return tuple(sorted(pairs))
    return token


def _add_class_fact(kg: KnowledgeGraph, facts: set, cls: str, individual):
    facts.add((cls, individual))
    for anc in kg.ancestors(cls) if cls in kg.classes else ():
        facts.add((anc, individual))


def _match_body(kg, facts, body, binding, i=0):
    if i == len(body):
        yield dict(binding)
        return
    atom = body[i]
    if atom.pred == "Different":
        u, v = (binding.get(a, a) for a in atom.args)
        if not (isinstance(u, str) and u.startswith("?")) and not (
            isinstance(v, str) and v.startswith("?")
        ):
            if _token_dims(kg, u) != _token_dims(kg, v):
                yield from _match_body(kg, facts, body, binding, i + 1)
        return
    for fact in facts:
        if fact[0] != atom.pred or len(fact) - 1 != len(atom.args):
            continue
        new = dict(binding)
        ok = True
        for pat, val in zip(atom.args, fact[1:]):
            if pat.startswith("?"):
                if pat in new and new[pat] != val:
                    ok = False
                    break
                new[pat] = val
            elif pat != val:
                ok = False
                break
        if ok:
            yield from _match_body(kg, facts, body, new, i + 1)


def _forward_chain(kg: KnowledgeGraph, facts):
    """Naive fixpoint over the KG's Horn rules; returns (facts, provenance)."""
    facts = set(facts)
    closed = set()
    for fact in list(facts):
        if len(fact) == 2 and fact[0] in kg.classes:
            _add_class_fact(kg, closed, fact[0], fact[1])
    facts |= closed
    provenance = {}
    changed = True
    while changed:
        changed = False
        snapshot = frozenset(facts)
        for rule in kg.rules:
            for binding in _match_body(kg, snapshot, rule.body, {}):
                head = (rule.head.pred,) + tuple(
                    binding.get(a, a) for a in rule.head.args
                )
                if head not in facts:
                    facts.add(head)
                    provenance[head] = rule.name
                    if rule.head.pred in kg.classes:
                        _add_class_fact(kg, facts, head[0], head[1])
                    changed = True
    return facts, provenance


def forward_chain(kg: KnowledgeGraph, facts):
    """Rule fixpoint over a set of ground atoms (tuples of pred + args)."""
    result, _ = _forward_chain(kg, facts)
    return result


def _node_ids(expr: Expr, counter, out):
    """Post-order node listing as (id, expr) pairs."""
    if isinstance(expr, (UnaryNode, DateNode)):
        _node_ids(expr.child, counter, out)
    elif isinstance(expr, BinaryNode):
        _node_ids(expr.left, counter, out)
        _node_ids(expr.right, counter, out)
    elif isinstance(expr, AggNode):
        _node_ids(expr.key, counter, out)
        _node_ids(expr.value, counter, out)
    nid = f"n{counter[0]}"
    counter[0] += 1
    out.append((nid, expr))
    return nid


def _unit_token(kg: KnowledgeGraph, unit: Optional[Unit]):
    if unit is None:
        return None
    name = kg.registered_name_for(unit)
    return name if name is not None else unit.dims_token()


def materialize_facts(kg: KnowledgeGraph, expr: Expr):
    """Ground atoms describing every sub-expression of a feature.

    Returns (facts, root id, node-id map). Leaves contribute their mapped
    class and unit; each transform application contributes hasInput/hasOutput
    and its transform-class atom; propagated units attach to derived nodes.
    """
    nodes = []
    _node_ids(expr, [0], nodes)
    facts = set()
    for nid, node in nodes:
        facts.add(("Feature", nid))
        if isinstance(node, RawRef):
            entry = kg.column_concepts.get(node.name)
            if entry is not None:
                cls, unit_name = entry
                _add_class_fact(kg, facts, cls, nid)
                if unit_name is not None:
                    facts.add(("hasUnit", nid, unit_name))
        else:
            fid = f"t_{nid}"
            cls = TRANSFORM_CLASS[node.op]
            _add_class_fact(kg, facts, cls, fid)
            facts.add(("hasOutput", fid, nid))
            if isinstance(node, (UnaryNode, DateNode)):
                children = [node.child]
            elif isinstance(node, BinaryNode):
                children = [node.left, node.right]
            else:
                children = [node.value]
            for child in children:
                child_id = _find_id(nodes, child)
                facts.add(("hasInput", fid, child_id))
            token = _unit_token(kg, expr_unit(kg, node))
            if token is not None:
                facts.add(("hasUnit", nid, token))
    root_id = nodes[-1][0]
    return facts, root_id


def _find_id(nodes, target: Expr) -> str:
    for nid, node in nodes:
        if node == target:
            return nid
    raise KGError("child expression not found during materialization")


def judge(kg: KnowledgeGraph, expr: Expr, d: Dataset) -> Verdict:
    """The interpretability verdict for one feature expression.

    Features whose leaves are all unmapped are Uncovered (retained by the
    fallback rule); rule-derived non-interpretability and unknown units are
    discarded; everything else is Interpretable.
    """
    leaves = _leaves(expr)
    mapped = [l for l in leaves if l.name in kg.column_concepts]
    if not mapped:
        return UNCOVERED
    if isinstance(expr, RawRef):
        return INTERPRETABLE
    facts, root_id = materialize_facts(kg, expr)
    fixpoint, provenance = _forward_chain(kg, facts)
    bad = ("nonInterpretable", root_id)
    if bad in fixpoint:
        reason = provenance.get(bad, "rule")
        return Verdict(VerdictStatus.NON_INTERPRETABLE, reason=reason)
    # Any derived node judged non-interpretable taints the whole feature.
    for fact in sorted(provenance):
        if fact[0] == "nonInterpretable":
            return Verdict(VerdictStatus.NON_INTERPRETABLE, reason=provenance[fact])
    unit = expr_unit(kg, expr)
    if unit is None:
        return Verdict(VerdictStatus.NON_INTERPRETABLE, reason="unknown unit")
    if not unit.dimensionless and kg.registered_name_for(unit) is None:
        return Verdict(VerdictStatus.NON_INTERPRETABLE, reason="unknown unit")
    return INTERPRETABLE


def _leaves(expr: Expr):
    if isinstance(expr, RawRef):
        return [expr]
    if isinstance(expr, (UnaryNode, DateNode)):
        return _leaves(expr.child)
    if isinstance(expr, BinaryNode):
        return _leaves(expr.left) + _leaves(expr.right)
    return _leaves(expr.key) + _leaves(expr.value)


def coverage(kg: KnowledgeGraph, d: Dataset) -> float:
    """Fraction of non-target columns with a concept mapping."""
    cols = [c.name for c in d.feature_columns]
    if not cols:
        return 0.0
    mapped = sum(1 for c in cols if c in kg.column_concepts)
    return mapped / len(cols)
