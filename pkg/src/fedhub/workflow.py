"""Investigation plans, compliance-rule gating, and the hash-chained audit log.

Plans are trees of goals and information requirements instantiated from task
templates. Workflow events (sworn statements, offence descriptions, ...) are
recorded against a plan in timestamp order; named gates open only when every
rule in their compliance set is satisfied by the plan state. Rules are
authored in a small DSL::

    gate issue-warrant
    rule r1 cite "<statute citation>" require event(sworn-statement-recorded)
    rule r2 cite "..." require any(payload(grounds-asserted.present_now) = true,
                                   within_hours(sworn-statement-recorded,
                                                grounds-asserted.expected_at, 72))

Predicates: ``all(...)``, ``any(...)``, ``not(...)``, ``event(<kind>)``,
``payload(<kind>.<field>) <op> <value>``, ``fact(<concept>, <predicate>)``,
``within_hours(<kind>, <kind>.<field>, <h>)``. ``within_hours`` is satisfied
when the payload timestamp falls within [0, h] hours after the reference
event, inclusive at exactly h.

Every plan mutation appends to a hash-chained audit log; any byte flip in a
persisted record is detected by verification. The rule encodings bundled with
the node are illustrative, not legal advice; every gate decision carries its
statute citations for human review.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta

from .journal import Journal, dumps_canonical
from .hubstore import HubStore, StructuredQuery
from .ontology import is_subconcept
from .security import AuthContext
from .values import (
    concept_of,
    format_rfc3339,
    parse_rfc3339,
    sha256_hex,
    short_hash,
    utcnow,
)


class WorkflowError(ValueError):
    pass


class RuleSyntaxError(WorkflowError):
    pass


# ---------------------------------------------------------------- predicates

@dataclass(frozen=True)
class EventPresent:
    kind: str


@dataclass(frozen=True)
class PayloadCmp:
    kind: str
    field: str
    op: str
    value: object


@dataclass(frozen=True)
class FactPresent:
    concept: str
    predicate: str


@dataclass(frozen=True)
class WithinHours:
    ref_kind: str
    kind: str
    field: str
    hours: float


@dataclass(frozen=True)
class AllOf:
    children: tuple


@dataclass(frozen=True)
class AnyOf:
    children: tuple


@dataclass(frozen=True)
class NotOf:
    child: object


_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<string>"[^"]*")
      | (?P<number>-?\d+(?:\.\d+)?)
      | (?P<name>[A-Za-z][A-Za-z0-9_\-]*)
      | (?P<op><=|>=|!=|=|<|>)
      | (?P<punct>[(),.])
    )""",
    re.VERBOSE,
)


class _PredParser:
    def __init__(self, text: str):
        self.tokens = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None:
                if text[pos:].strip():
                    raise RuleSyntaxError(f"bad character {text[pos:].strip()[0]!r} in predicate")
                break
            pos = m.end()
            for group in ("string", "number", "name", "op", "punct"):
                val = m.group(group)
                if val is not None:
                    self.tokens.append((group, val))
                    break
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self, kind=None, value=None):
        tk, tv = self.peek()
        if tk is None:
            raise RuleSyntaxError("unexpected end of predicate")
        if kind is not None and tk != kind:
            raise RuleSyntaxError(f"expected {kind}, got {tv!r}")
        if value is not None and tv != value:
            raise RuleSyntaxError(f"expected {value!r}, got {tv!r}")
        self.i += 1
        return tv

    def parse(self):
        node = self.pred()
        if self.peek() != (None, None):
            raise RuleSyntaxError(f"trailing input after predicate: {self.peek()[1]!r}")
        return node

    def pred(self):
        name = self.take("name")
        if name in ("all", "any"):
            self.take("punct", "(")
            children = [self.pred()]
            while self.peek() == ("punct", ","):
                self.take()
                children.append(self.pred())
            self.take("punct", ")")
            if len(children) < 2:
                raise RuleSyntaxError(f"{name}(...) needs at least 2 arms")
            return AllOf(tuple(children)) if name == "all" else AnyOf(tuple(children))
        if name == "not":
            self.take("punct", "(")
            child = self.pred()
            self.take("punct", ")")
            return NotOf(child)
        if name == "event":
            self.take("punct", "(")
            kind = self.take("name")
            self.take("punct", ")")
            return EventPresent(kind)
        if name == "fact":
            self.take("punct", "(")
            concept = self.take("name")
            self.take("punct", ",")
            predicate = self.take("name")
            self.take("punct", ")")
            return FactPresent(concept, predicate)
        if name == "payload":
            self.take("punct", "(")
            kind = self.take("name")
            self.take("punct", ".")
            fld = self.take("name")
            self.take("punct", ")")
            op = self.take("op")
            return PayloadCmp(kind, fld, op, self.value())
        if name == "within_hours":
            self.take("punct", "(")
            ref = self.take("name")
            self.take("punct", ",")
            kind = self.take("name")
            self.take("punct", ".")
            fld = self.take("name")
            self.take("punct", ",")
            hours = float(self.take("number"))
            self.take("punct", ")")
            if hours <= 0:
                raise RuleSyntaxError("within_hours needs h > 0")
            return WithinHours(ref, kind, fld, hours)
        raise RuleSyntaxError(f"unknown predicate {name!r}")

    def value(self):
        tk, tv = self.peek()
        if tk == "string":
            self.take()
            return tv[1:-1]
        if tk == "number":
            self.take()
            return float(tv) if "." in tv else int(tv)
        if tk == "name" and tv in ("true", "false"):
            self.take()
            return tv == "true"
        raise RuleSyntaxError(f"expected a value, got {tv!r}")


def parse_predicate(text: str):
    return _PredParser(text).parse()


def print_predicate(node) -> str:
    if isinstance(node, AllOf):
        return "all(" + ", ".join(print_predicate(c) for c in node.children) + ")"
    if isinstance(node, AnyOf):
        return "any(" + ", ".join(print_predicate(c) for c in node.children) + ")"
    if isinstance(node, NotOf):
        return f"not({print_predicate(node.child)})"
    if isinstance(node, EventPresent):
        return f"event({node.kind})"
    if isinstance(node, FactPresent):
        return f"fact({node.concept}, {node.predicate})"
    if isinstance(node, PayloadCmp):
        v = f'"{node.value}"' if isinstance(node.value, str) else (
            "true" if node.value is True else "false" if node.value is False else node.value)
        return f"payload({node.kind}.{node.field}) {node.op} {v}"
    if isinstance(node, WithinHours):
        hours = int(node.hours) if node.hours == int(node.hours) else node.hours
        return f"within_hours({node.ref_kind}, {node.kind}.{node.field}, {hours})"
    raise TypeError(f"not a predicate: {node!r}")


# --------------------------------------------------------------------- rules

@dataclass(frozen=True)
class ComplianceRule:
    id: str
    citation: str
    gate: str
    requirement: object   # predicate tree

    def requirement_text(self) -> str:
        return f"{self.citation} (requires {print_predicate(self.requirement)})"


@dataclass(frozen=True)
class RulePack:
    gates: dict = field(default_factory=dict)   # gate name -> [ComplianceRule]

    def gate_rules(self, gate: str) -> list:
        if gate not in self.gates:
            raise WorkflowError(f"unknown gate {gate!r}")
        return self.gates[gate]

    def event_kinds(self) -> set:
        kinds = set()

        def walk(node):
            if isinstance(node, (AllOf, AnyOf)):
                for c in node.children:
                    walk(c)
            elif isinstance(node, NotOf):
                walk(node.child)
            elif isinstance(node, EventPresent):
                kinds.add(node.kind)
            elif isinstance(node, PayloadCmp):
                kinds.add(node.kind)
            elif isinstance(node, WithinHours):
                kinds.update((node.ref_kind, node.kind))

        for rules in self.gates.values():
            for r in rules:
                walk(r.requirement)
        return kinds


_GATE_RE = re.compile(r"^gate\s+([A-Za-z0-9_\-]+)\s*$")
_RULE_RE = re.compile(r'^rule\s+(\S+)\s+cite\s+"([^"]*)"\s+require\s+(.+)$')


def parse_rules(doc: str) -> RulePack:
    gates: dict = {}
    current: str | None = None
    for lineno, raw in enumerate(doc.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if m := _GATE_RE.match(line):
            current = m.group(1)
            gates.setdefault(current, [])
            continue
        if m := _RULE_RE.match(line):
            if current is None:
                raise RuleSyntaxError(f"line {lineno}: rule before any gate declaration")
            rid, citation, predicate = m.groups()
            if any(r.id == rid for r in gates[current]):
                raise RuleSyntaxError(f"line {lineno}: duplicate rule id {rid!r}")
            try:
                tree = parse_predicate(predicate)
            except RuleSyntaxError as exc:
                raise RuleSyntaxError(f"line {lineno}: {exc}") from None
            gates[current].append(ComplianceRule(rid, citation, current, tree))
            continue
        raise RuleSyntaxError(f"line {lineno}: unrecognized directive {line!r}")
    return RulePack(gates)


# -------------------------------------------------------------------- events

@dataclass(frozen=True)
class WorkflowEvent:
    id: str
    kind: str
    occurred_at: datetime
    actor: str
    payload: dict = field(default_factory=dict)
    linked_facts: tuple = ()

    def wire(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "occurred_at": format_rfc3339(self.occurred_at),
            "actor": self.actor,
            "payload": dict(self.payload),
            "linked_facts": list(self.linked_facts),
        }

    @staticmethod
    def from_wire(rec: dict) -> "WorkflowEvent":
        return WorkflowEvent(
            id=rec["id"],
            kind=rec["kind"],
            occurred_at=parse_rfc3339(rec["occurred_at"]),
            actor=rec.get("actor", ""),
            payload=dict(rec.get("payload", {})),
            linked_facts=tuple(rec.get("linked_facts", ())),
        )


@dataclass(frozen=True)
class GateDecision:
    gate: str
    open: bool
    missing: tuple    # (rule id, human-readable requirement text)
    evaluated_at: datetime

    def wire(self) -> dict:
        return {
            "gate": self.gate,
            "open": self.open,
            "missing": [[rid, text] for rid, text in self.missing],
            "evaluated_at": format_rfc3339(self.evaluated_at),
        }


def _cmp(op: str, left, right) -> bool:
    try:
        if isinstance(left, str) and isinstance(right, str):
            try:
                left, right = parse_rfc3339(left), parse_rfc3339(right)
            except Exception:
                pass
        elif isinstance(left, bool) or isinstance(right, bool):
            pass
        elif isinstance(left, (int, float)) and isinstance(right, (int, float)):
            left, right = float(left), float(right)
        if op == "=":
            return left == right
        if op == "!=":
            return left != right
        if op == "<":
            return left < right
        if op == "<=":
            return left <= right
        if op == ">":
            return left > right
        if op == ">=":
            return left >= right
    except TypeError:
        return False
    raise WorkflowError(f"unknown comparison operator {op!r}")


def eval_predicate(node, plan: "InvestigationPlan", store: HubStore | None = None) -> bool:
    if isinstance(node, AllOf):
        return all(eval_predicate(c, plan, store) for c in node.children)
    if isinstance(node, AnyOf):
        return any(eval_predicate(c, plan, store) for c in node.children)
    if isinstance(node, NotOf):
        return not eval_predicate(node.child, plan, store)
    if isinstance(node, EventPresent):
        return any(e.kind == node.kind for e in plan.events)
    if isinstance(node, PayloadCmp):
        for e in plan.events:
            if e.kind == node.kind and node.field in e.payload:
                if _cmp(node.op, e.payload[node.field], node.value):
                    return True
        return False
    if isinstance(node, WithinHours):
        refs = [e.occurred_at for e in plan.events if e.kind == node.ref_kind]
        stamps = []
        for e in plan.events:
            if e.kind == node.kind and node.field in e.payload:
                try:
                    stamps.append(parse_rfc3339(str(e.payload[node.field])))
                except Exception:
                    continue
        window = timedelta(hours=node.hours)
        return any(
            timedelta(0) <= ts - ref <= window for ref in refs for ts in stamps
        )
    if isinstance(node, FactPresent):
        if store is None:
            return False
        for fact_ids in plan.evidence.values():
            for fid in fact_ids:
                if not store.has_fact(fid):
                    continue
                fact = store.get_fact(fid)
                try:
                    concept = concept_of(fact.subject)
                except Exception:
                    continue
                if (concept in store.ontology.concepts
                        and is_subconcept(concept, node.concept, store.ontology)
                        and fact.predicate == node.predicate):
                    return True
        return False
    raise TypeError(f"not a predicate: {node!r}")


# --------------------------------------------------------------------- plans

@dataclass
class PlanElement:
    id: str
    kind: str                   # 'goal' | 'info-requirement'
    template: str
    text: str
    status: str = "pending"     # pending | running | satisfied | blocked
    children: list = field(default_factory=list)
    query: dict | None = None   # StructuredQuery wire form, slots bound

    def wire(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "template": self.template,
            "text": self.text,
            "status": self.status,
            "children": list(self.children),
            "query": self.query,
        }

    @staticmethod
    def from_wire(rec: dict) -> "PlanElement":
        return PlanElement(
            id=rec["id"], kind=rec["kind"], template=rec["template"],
            text=rec["text"], status=rec["status"],
            children=list(rec["children"]), query=rec.get("query"),
        )


@dataclass
class InvestigationPlan:
    id: str
    case_ref: str
    created_at: datetime = field(default_factory=utcnow)
    elements: dict = field(default_factory=dict)   # element id -> PlanElement
    roots: list = field(default_factory=list)
    evidence: dict = field(default_factory=dict)   # element id -> [fact id]
    events: list = field(default_factory=list)
    gate_decisions: dict = field(default_factory=dict)   # gate -> GateDecision wire
    _counter: int = 0

    def next_element_id(self) -> str:
        self._counter += 1
        return f"{self.id}-e{self._counter}"

    def next_event_id(self) -> str:
        return f"{self.id}-ev{len(self.events) + 1}"

    def wire(self) -> dict:
        return {
            "id": self.id,
            "case_ref": self.case_ref,
            "created_at": format_rfc3339(self.created_at),
            "elements": [self.elements[eid].wire() for eid in self.elements],
            "roots": list(self.roots),
            "evidence": {k: list(v) for k, v in self.evidence.items()},
            "events": [e.wire() for e in self.events],
            "gate_decisions": dict(self.gate_decisions),
            "counter": self._counter,
        }

    @staticmethod
    def from_wire(rec: dict) -> "InvestigationPlan":
        plan = InvestigationPlan(
            id=rec["id"], case_ref=rec["case_ref"],
            created_at=parse_rfc3339(rec["created_at"]),
        )
        for el in rec.get("elements", []):
            e = PlanElement.from_wire(el)
            plan.elements[e.id] = e
        plan.roots = list(rec.get("roots", []))
        plan.evidence = {k: list(v) for k, v in rec.get("evidence", {}).items()}
        plan.events = [WorkflowEvent.from_wire(e) for e in rec.get("events", [])]
        plan.gate_decisions = dict(rec.get("gate_decisions", {}))
        plan._counter = int(rec.get("counter", 0))
        return plan


# ----------------------------------------------------------------- templates

@dataclass(frozen=True)
class QueryTemplate:
    concept: str
    predicates: tuple   # (attribute, value text; "$name" marks a slot)


@dataclass(frozen=True)
class TaskTemplate:
    id: str
    goal_text: str
    sub_goals: tuple = ()
    info_requirements: tuple = ()
    gate: str | None = None


_TEMPLATE_RE = re.compile(r'^template\s+(\S+)\s+goal\s+"([^"]*)"\s*$')
_SUBGOAL_RE = re.compile(r"^subgoal\s+(\S+)\s*$")
_REQUIRE_RE = re.compile(r"^require\s+query\s+(.+)$")
_TMPL_GATE_RE = re.compile(r"^gate\s+([A-Za-z0-9_\-]+)\s*$")
_SLOT_RE = re.compile(r"\$([A-Za-z_][A-Za-z0-9_]*)")


def parse_templates(doc: str) -> dict:
    """Parse a task-template file into {template id: TaskTemplate}."""
    templates: dict = {}
    current = None   # [id, goal, subgoals, requirements, gate]

    def flush():
        if current is not None:
            templates[current[0]] = TaskTemplate(
                id=current[0], goal_text=current[1],
                sub_goals=tuple(current[2]), info_requirements=tuple(current[3]),
                gate=current[4],
            )

    for lineno, raw in enumerate(doc.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if m := _TEMPLATE_RE.match(line):
            flush()
            if m.group(1) in templates:
                raise WorkflowError(f"line {lineno}: duplicate template {m.group(1)!r}")
            current = [m.group(1), m.group(2), [], [], None]
            continue
        if current is None:
            raise WorkflowError(f"line {lineno}: directive before any template")
        if m := _SUBGOAL_RE.match(line):
            current[2].append(m.group(1))
            continue
        if m := _TMPL_GATE_RE.match(line):
            current[4] = m.group(1)
            continue
        if m := _REQUIRE_RE.match(line):
            pairs = []
            concept = None
            for part in m.group(1).split():
                key, sep, value = part.partition("=")
                if not sep:
                    raise WorkflowError(f"line {lineno}: bad query term {part!r}")
                if key == "concept":
                    concept = value
                else:
                    pairs.append((key, value))
            if concept is None:
                raise WorkflowError(f"line {lineno}: require query needs concept=<C>")
            current[3].append(QueryTemplate(concept, tuple(pairs)))
            continue
        raise WorkflowError(f"line {lineno}: unrecognized directive {line!r}")
    flush()

    for t in templates.values():
        for sg in t.sub_goals:
            if sg not in templates:
                raise WorkflowError(f"template {t.id!r} references unknown subgoal {sg!r}")
    _check_template_cycles(templates)
    return templates


def _check_template_cycles(templates: dict) -> None:
    state: dict = {}

    def visit(tid, trail):
        if state.get(tid) == "done":
            return
        if state.get(tid) == "visiting":
            raise WorkflowError("template cycle: " + " -> ".join(trail + [tid]))
        state[tid] = "visiting"
        for sg in templates[tid].sub_goals:
            visit(sg, trail + [tid])
        state[tid] = "done"

    for tid in templates:
        visit(tid, [])


def _bind(text_: str, params: dict) -> str:
    def sub(m):
        name = m.group(1)
        if name not in params:
            raise WorkflowError(f"unbound slot ${name}")
        return str(params[name])

    return _SLOT_RE.sub(sub, text_)


def instantiate_goal(templates: dict, template_id: str, params: dict,
                     plan: InvestigationPlan, audit: "AuditLog | None" = None,
                     actor: str = "") -> list:
    """Expand a template (depth-first) into plan elements; returns new element ids."""
    if template_id not in templates:
        raise WorkflowError(f"unknown template {template_id!r}")
    added: list = []

    def expand(tid: str) -> str:
        t = templates.get(tid)
        if t is None:
            raise WorkflowError(f"unknown template {tid!r}")
        el = PlanElement(plan.next_element_id(), "goal", tid, _bind(t.goal_text, params))
        plan.elements[el.id] = el
        added.append(el.id)
        for req in t.info_requirements:
            q = StructuredQuery(
                req.concept,
                tuple(
                    # bound values; slot substitution errors surface here
                    _mk_pred(attr, _bind(value, params)) for attr, value in req.predicates
                ),
            )
            child = PlanElement(plan.next_element_id(), "info-requirement", tid,
                                f"query {req.concept}", query=q.wire())
            plan.elements[child.id] = child
            el.children.append(child.id)
            added.append(child.id)
        for sg in t.sub_goals:
            el.children.append(expand(sg))
        return el.id

    root_id = expand(template_id)
    plan.roots.append(root_id)
    if audit is not None:
        audit.append(actor or "system", "instantiate_goal",
                     {"plan": plan.id, "template": template_id, "params": params},
                     {"added": added})
    return added


def _mk_pred(attr: str, value: str):
    from .hubstore import AttrPredicate
    return AttrPredicate(attr, "=", value)


# ------------------------------------------------------------------- actions

def record_event(plan: InvestigationPlan, kind: str, occurred_at: datetime,
                 actor: str, payload: dict | None = None, linked_facts=(),
                 rule_pack: RulePack | None = None, store: HubStore | None = None,
                 audit: "AuditLog | None" = None) -> WorkflowEvent:
    """Append an event in timestamp order and re-evaluate affected gates."""
    now = utcnow()
    if occurred_at > now + timedelta(seconds=1):
        raise WorkflowError(f"event occurred_at {format_rfc3339(occurred_at)} is in the future")
    if plan.events and occurred_at < plan.events[-1].occurred_at:
        raise WorkflowError(
            f"event timestamp {format_rfc3339(occurred_at)} is earlier than the last "
            f"recorded event ({format_rfc3339(plan.events[-1].occurred_at)})"
        )
    if not kind:
        raise WorkflowError("event kind must be non-empty")
    event = WorkflowEvent(plan.next_event_id(), kind, occurred_at, actor,
                          dict(payload or {}), tuple(linked_facts))
    plan.events.append(event)
    if rule_pack is not None and kind in rule_pack.event_kinds():
        for gate in rule_pack.gates:
            if any(_rule_mentions_kind(r.requirement, kind) for r in rule_pack.gates[gate]):
                decision = evaluate_gate(gate, plan, rule_pack, store)
                plan.gate_decisions[gate] = decision.wire()
    if audit is not None:
        audit.append(actor or "system", "record_event",
                     {"plan": plan.id, "event": event.wire()}, {"id": event.id})
    return event


def _rule_mentions_kind(node, kind: str) -> bool:
    if isinstance(node, (AllOf, AnyOf)):
        return any(_rule_mentions_kind(c, kind) for c in node.children)
    if isinstance(node, NotOf):
        return _rule_mentions_kind(node.child, kind)
    if isinstance(node, EventPresent):
        return node.kind == kind
    if isinstance(node, PayloadCmp):
        return node.kind == kind
    if isinstance(node, WithinHours):
        return kind in (node.ref_kind, node.kind)
    return False


def evaluate_gate(gate: str, plan: InvestigationPlan, rule_pack: RulePack,
                  store: HubStore | None = None) -> GateDecision:
    """Pure evaluation: no plan state is touched; same state, same decision."""
    rules = rule_pack.gate_rules(gate)
    missing = tuple(
        (r.id, r.requirement_text())
        for r in rules
        if not eval_predicate(r.requirement, plan, store)
    )
    return GateDecision(gate, open=not missing, missing=missing, evaluated_at=utcnow())


def execute_info_requirement(element_id: str, plan: InvestigationPlan, store: HubStore,
                             auth: AuthContext | None, audit: "AuditLog | None" = None,
                             actor: str = "") -> list:
    """Run an information requirement's query and link results as evidence.

    Matching entities' visible facts become the element's evidence; a
    plan-step activity citing them is recorded in the hub, so each evidence
    fact's provenance chain reaches this execution. Zero results still
    satisfy the requirement: a search that finds nothing is itself recorded
    information.
    """
    el = plan.elements.get(element_id)
    if el is None:
        raise WorkflowError(f"unknown plan element {element_id!r}")
    if el.kind != "info-requirement":
        raise WorkflowError(f"element {element_id} is not an information requirement")
    query = StructuredQuery.from_wire(el.query)
    el.status = "running"
    entity_ids = store.structured_query(query, auth)
    fact_ids = []
    for eid in entity_ids:
        for fact in store.visible_facts(eid, auth):
            fact_ids.append(fact.id)
    store.new_activity("plan-step", actor or (auth.principal if auth else "system"),
                       inputs=tuple(fact_ids) or (f"plan:{plan.id}:{element_id}",),
                       activity_id="act-" + short_hash("plan-step", plan.id, element_id,
                                                       *fact_ids)[:16])
    plan.evidence[element_id] = fact_ids
    el.status = "satisfied"
    if audit is not None:
        audit.append(actor or "system", "execute_info_requirement",
                     {"plan": plan.id, "element": element_id, "query": el.query},
                     {"facts": fact_ids})
    return fact_ids


# ----------------------------------------------------------------- audit log

GENESIS_HASH = "0" * 64


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    actor: str
    operation: str
    arg_digest: str
    result_digest: str
    prev_hash: str
    this_hash: str

    def wire(self) -> dict:
        return {
            "seq": self.seq,
            "actor": self.actor,
            "operation": self.operation,
            "arg_digest": self.arg_digest,
            "result_digest": self.result_digest,
            "prev_hash": self.prev_hash,
            "this_hash": self.this_hash,
        }

    @staticmethod
    def from_wire(rec: dict) -> "AuditRecord":
        return AuditRecord(
            seq=int(rec["seq"]), actor=rec["actor"], operation=rec["operation"],
            arg_digest=rec["arg_digest"], result_digest=rec["result_digest"],
            prev_hash=rec["prev_hash"], this_hash=rec["this_hash"],
        )


def record_hash(seq: int, actor: str, operation: str, arg_digest: str,
                result_digest: str, prev_hash: str) -> str:
    return sha256_hex(str(seq), actor, operation, arg_digest, result_digest, prev_hash)


class AuditLog:
    """Hash-chained, journaled operation log."""

    def __init__(self, path: str | None = None):
        self.records: list = []
        self._journal = Journal(path) if path else None

    def load(self) -> "AuditLog":
        if self._journal is not None:
            for rec in self._journal.replay():
                self.records.append(AuditRecord.from_wire(rec))
        return self

    def append(self, actor: str, operation: str, args, result) -> AuditRecord:
        seq = len(self.records) + 1
        prev = self.records[-1].this_hash if self.records else GENESIS_HASH
        arg_digest = short_hash(dumps_canonical(args))
        result_digest = short_hash(dumps_canonical(result))
        rec = AuditRecord(
            seq, actor, operation, arg_digest, result_digest, prev,
            record_hash(seq, actor, operation, arg_digest, result_digest, prev),
        )
        self.records.append(rec)
        if self._journal is not None:
            self._journal.append(rec.wire())
        return rec

    def close(self) -> None:
        if self._journal is not None:
            self._journal.close()


def verify_audit(records) -> int | None:
    """Recompute the hash chain; None when intact, else the first corrupt seq.

    Accepts AuditRecords or their wire dicts.
    """
    prev = GENESIS_HASH
    for i, rec in enumerate(records, start=1):
        if isinstance(rec, dict):
            try:
                rec = AuditRecord.from_wire(rec)
            except Exception:
                return i
        if rec.seq != i:
            return i
        if rec.prev_hash != prev:
            return i
        if record_hash(rec.seq, rec.actor, rec.operation, rec.arg_digest,
                       rec.result_digest, rec.prev_hash) != rec.this_hash:
            return i
        prev = rec.this_hash
    return None


# ------------------------------------------------------------- bundled packs

def _data_path(name: str) -> str:
    return os.path.join(os.path.dirname(__file__), "data", name)


def load_bundled_rules() -> RulePack:
    with open(_data_path("warrant.rules"), encoding="utf-8") as fh:
        return parse_rules(fh.read())


def load_bundled_templates() -> dict:
    with open(_data_path("tasks.tmpl"), encoding="utf-8") as fh:
        return parse_templates(fh.read())
