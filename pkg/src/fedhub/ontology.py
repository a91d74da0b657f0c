"""Domain ontology: concept taxonomy, attribute and relation definitions.

The ontology governs everything stored in the hub. It is loaded once from a
line-oriented text file, validated (single root ``Entity``, acyclic single-
inheritance taxonomy, all cross-references resolve), and is immutable
afterwards, so concurrent reads need no coordination.

File format, one declaration per line (``#`` comments, blank lines ignored)::

    version <text>
    concept <name> [parent=<name>]
    attribute <domain>.<name> : <datatype>
    relation <name> : <domain> -> <range>
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .values import DATATYPES, concept_of, is_identifier

ROOT_CONCEPT = "Entity"


class OntologyError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass(frozen=True)
class ConceptDef:
    name: str
    parent: str | None = None
    description: str = ""


@dataclass(frozen=True)
class AttributeDef:
    name: str
    domain: str
    datatype: str


@dataclass(frozen=True)
class RelationDef:
    name: str
    domain: str
    range: str


@dataclass(frozen=True)
class Ontology:
    concepts: dict = field(default_factory=dict)       # name -> ConceptDef
    attributes: dict = field(default_factory=dict)     # (domain, name) -> AttributeDef
    relations: dict = field(default_factory=dict)      # name -> RelationDef
    version: str = "0"

    def concept(self, name: str) -> ConceptDef:
        try:
            return self.concepts[name]
        except KeyError:
            raise OntologyError(f"unknown concept {name!r}") from None

    def attributes_named(self, name: str) -> list:
        return [a for a in self.attributes.values() if a.name == name]

    def relation(self, name: str):
        return self.relations.get(name)

    def top_concepts(self) -> list:
        """Concepts whose parent is the root, sorted by name."""
        return sorted(
            (c for c in self.concepts.values() if c.parent == ROOT_CONCEPT),
            key=lambda c: c.name,
        )


_CONCEPT_RE = re.compile(r"^concept\s+(\S+)(?:\s+parent=(\S+))?\s*$")
_ATTR_RE = re.compile(r"^attribute\s+(\S+)\.(\S+)\s*:\s*(\S+)\s*$")
_REL_RE = re.compile(r"^relation\s+(\S+)\s*:\s*(\S+)\s*->\s*(\S+)\s*$")
_VERSION_RE = re.compile(r"^version\s+(\S+)\s*$")


def load_ontology(doc: str) -> Ontology:
    """Parse and validate an ontology document; all invariants hold on return."""
    concepts: dict = {}
    attributes: dict = {}
    relations: dict = {}
    version = "0"

    for lineno, raw in enumerate(doc.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if m := _VERSION_RE.match(line):
            version = m.group(1)
            continue
        if m := _CONCEPT_RE.match(line):
            name, parent = m.group(1), m.group(2)
            if not is_identifier(name) or (parent and not is_identifier(parent)):
                raise OntologyError(f"bad concept identifier in {line!r}", lineno)
            if name in concepts:
                raise OntologyError(f"duplicate concept {name!r}", lineno)
            concepts[name] = ConceptDef(name, parent)
            continue
        if m := _ATTR_RE.match(line):
            domain, name, datatype = m.groups()
            if not (is_identifier(domain) and is_identifier(name)):
                raise OntologyError(f"bad attribute identifier in {line!r}", lineno)
            if datatype not in DATATYPES:
                raise OntologyError(f"unknown datatype {datatype!r}", lineno)
            if (domain, name) in attributes:
                raise OntologyError(f"duplicate attribute {domain}.{name}", lineno)
            attributes[(domain, name)] = AttributeDef(name, domain, datatype)
            continue
        if m := _REL_RE.match(line):
            name, domain, range_ = m.groups()
            if not all(map(is_identifier, (name, domain, range_))):
                raise OntologyError(f"bad relation identifier in {line!r}", lineno)
            if name in relations:
                raise OntologyError(f"duplicate relation {name!r}", lineno)
            relations[name] = RelationDef(name, domain, range_)
            continue
        raise OntologyError(f"unrecognized declaration {line!r}", lineno)

    onto = Ontology(concepts, attributes, relations, version)
    _validate(onto)
    return onto


def _validate(onto: Ontology) -> None:
    roots = [c.name for c in onto.concepts.values() if c.parent is None]
    if roots != [ROOT_CONCEPT] and sorted(roots) != [ROOT_CONCEPT]:
        raise OntologyError(
            f"expected exactly one root concept {ROOT_CONCEPT!r}, found {sorted(roots)}"
        )
    for c in onto.concepts.values():
        if c.parent is not None and c.parent not in onto.concepts:
            raise OntologyError(f"unresolved reference: parent {c.parent!r} of {c.name!r}")
    # cycle check via parent-chain walk
    for c in onto.concepts.values():
        seen = []
        cur = c.name
        while cur is not None:
            if cur in seen:
                cycle = seen[seen.index(cur):] + [cur]
                raise OntologyError("taxonomy cycle: " + " -> ".join(cycle))
            seen.append(cur)
            cur = onto.concepts[cur].parent
    for a in onto.attributes.values():
        if a.domain not in onto.concepts:
            raise OntologyError(f"unresolved reference: domain {a.domain!r} of attribute {a.name!r}")
    for r in onto.relations.values():
        if r.domain not in onto.concepts:
            raise OntologyError(f"unresolved reference: domain {r.domain!r} of relation {r.name!r}")
        if r.range not in onto.concepts:
            raise OntologyError(f"unresolved reference: range {r.range!r} of relation {r.name!r}")


def print_ontology(onto: Ontology) -> str:
    """Canonical text form; load_ontology(print_ontology(o)) reproduces o."""
    lines = [f"version {onto.version}"]
    for c in sorted(onto.concepts.values(), key=lambda c: c.name):
        lines.append(f"concept {c.name}" + (f" parent={c.parent}" if c.parent else ""))
    for a in sorted(onto.attributes.values(), key=lambda a: (a.domain, a.name)):
        lines.append(f"attribute {a.domain}.{a.name} : {a.datatype}")
    for r in sorted(onto.relations.values(), key=lambda r: r.name):
        lines.append(f"relation {r.name} : {r.domain} -> {r.range}")
    return "\n".join(lines) + "\n"


def is_subconcept(c: str, d: str, onto: Ontology) -> bool:
    """True iff d is reachable from c via zero or more parent edges."""
    if c not in onto.concepts:
        raise OntologyError(f"unknown concept {c!r}")
    if d not in onto.concepts:
        raise OntologyError(f"unknown concept {d!r}")
    cur: str | None = c
    while cur is not None:
        if cur == d:
            return True
        cur = onto.concepts[cur].parent
    return False


def validate_fact(fact, onto: Ontology) -> list:
    """Violation messages for a fact against the ontology; empty list means ok."""
    violations = []
    try:
        subj_concept = concept_of(fact.subject)
    except Exception:
        violations.append(f"subject id {fact.subject!r} carries no concept prefix")
        return violations
    if subj_concept not in onto.concepts:
        violations.append(f"unknown concept {subj_concept!r} in subject {fact.subject!r}")
        return violations

    rel = onto.relation(fact.predicate)
    if rel is not None:
        if not fact.object.is_entity:
            violations.append(f"relation {rel.name!r} requires an entity object")
            return violations
        if not is_subconcept(subj_concept, rel.domain, onto):
            violations.append(
                f"domain mismatch: {subj_concept} is not a {rel.domain} for relation {rel.name}"
            )
        try:
            obj_concept = concept_of(fact.object.value)
        except Exception:
            violations.append(f"object id {fact.object.value!r} carries no concept prefix")
            return violations
        if obj_concept not in onto.concepts:
            violations.append(f"unknown concept {obj_concept!r} in object {fact.object.value!r}")
        elif not is_subconcept(obj_concept, rel.range, onto):
            violations.append(
                f"range mismatch: {obj_concept} is not a {rel.range} for relation {rel.name}"
            )
        return violations

    candidates = onto.attributes_named(fact.predicate)
    if not candidates:
        violations.append(f"unknown predicate {fact.predicate!r}")
        return violations
    applicable = [a for a in candidates if is_subconcept(subj_concept, a.domain, onto)]
    if not applicable:
        domains = ", ".join(sorted(a.domain for a in candidates))
        violations.append(
            f"domain mismatch: attribute {fact.predicate!r} is declared for {domains}, "
            f"not {subj_concept}"
        )
        return violations
    if fact.object.is_entity:
        violations.append(f"attribute {fact.predicate!r} requires a literal object")
        return violations
    if not any(a.datatype == fact.object.kind for a in applicable):
        expected = ", ".join(sorted({a.datatype for a in applicable}))
        violations.append(
            f"datatype mismatch: attribute {fact.predicate!r} expects {expected}, "
            f"got {fact.object.kind}"
        )
    return violations


def ontology_query(onto: Ontology, pattern: str = "", kind: str | None = None) -> list:
    """Definitions whose name contains ``pattern``, optionally filtered by kind.

    kind is one of ``concept``, ``attribute``, ``relation`` or None for all.
    Results are sorted by name (attributes by domain-qualified name).
    """
    out = []
    if kind in (None, "concept"):
        out.extend(c for c in onto.concepts.values() if pattern in c.name)
    if kind in (None, "attribute"):
        out.extend(a for a in onto.attributes.values() if pattern in a.name)
    if kind in (None, "relation"):
        out.extend(r for r in onto.relations.values() if pattern in r.name)

    def sort_key(d):
        if isinstance(d, AttributeDef):
            return (d.domain + "." + d.name, 1)
        return (d.name, 0)

    return sorted(out, key=sort_key)
