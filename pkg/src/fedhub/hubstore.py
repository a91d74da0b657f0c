"""The knowledge-hub node's data stores.

Facts live in an append-only log, logically partitioned into ``generated``
(machine-derived, awaiting confirmation) and ``curated`` (human-confirmed).
Every fact carries a metadata envelope: provenance (source + activity +
agent), temporal validity, a visibility expression, confidence, and external
references. Documents and binary payloads are content-addressed blobs.

Nothing is ever deleted or mutated: promotion and merging write new curated
copies whose provenance cites the originals. One lock serializes all store
access (single-writer model; readers are short critical sections).
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta

from .journal import CorruptJournal, Journal, dumps_canonical
from .ontology import Ontology, OntologyError, is_subconcept, validate_fact
from .security import AuthContext, PUBLIC, authorize, parse_visibility, print_visibility
from .values import (
    Value,
    concept_of,
    format_rfc3339,
    parse_rfc3339,
    hash_bytes,
    short_hash,
    utcnow,
    value_from_wire,
)

GENERATED = "generated"
CURATED = "curated"

ACTIVITY_KINDS = ("ingest", "link", "merge", "promote", "plan-step", "remote-query")


class HubError(ValueError):
    pass


class MalformedEnvelope(HubError):
    pass


class OntologyViolation(HubError):
    def __init__(self, violations):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


class UnknownId(HubError, KeyError):
    pass


class AlreadyCurated(HubError):
    pass


class AccessDenied(HubError):
    pass


class BrokenChain(HubError):
    """Provenance corruption: a dangling activity reference."""


@dataclass(frozen=True)
class MetadataEnvelope:
    source: str
    activity: str
    agent: str
    recorded_at: datetime
    valid_from: datetime | None = None
    valid_to: datetime | None = None
    visibility: object = PUBLIC
    confidence: float = 1.0
    external_refs: tuple = ()

    def check(self) -> None:
        if not (0.0 <= self.confidence <= 1.0):
            raise MalformedEnvelope(f"confidence {self.confidence} outside [0, 1]")
        if self.valid_from is not None and self.valid_to is not None:
            if not self.valid_from < self.valid_to:
                raise MalformedEnvelope("valid interval requires start < end")
        if not self.source:
            raise MalformedEnvelope("envelope requires a source id")
        if not self.activity:
            raise MalformedEnvelope("envelope requires an activity id")

    def wire(self) -> dict:
        rec = {
            "source": self.source,
            "activity": self.activity,
            "agent": self.agent,
            "recorded_at": format_rfc3339(self.recorded_at),
            "visibility": print_visibility(self.visibility),
            "confidence": self.confidence,
            "external_refs": [list(r) for r in self.external_refs],
        }
        if self.valid_from is not None:
            rec["valid_from"] = format_rfc3339(self.valid_from)
        if self.valid_to is not None:
            rec["valid_to"] = format_rfc3339(self.valid_to)
        return rec

    @staticmethod
    def from_wire(rec: dict) -> "MetadataEnvelope":
        required = {"source", "activity", "agent", "recorded_at", "visibility",
                    "confidence", "external_refs"}
        keys = set(rec)
        if not required <= keys or keys - required - {"valid_from", "valid_to"}:
            raise MalformedEnvelope(f"envelope fields {sorted(keys)} do not match the record format")
        return MetadataEnvelope(
            source=rec["source"],
            activity=rec["activity"],
            agent=rec["agent"],
            recorded_at=parse_rfc3339(rec["recorded_at"]),
            valid_from=parse_rfc3339(rec["valid_from"]) if "valid_from" in rec else None,
            valid_to=parse_rfc3339(rec["valid_to"]) if "valid_to" in rec else None,
            visibility=parse_visibility(rec["visibility"]),
            confidence=float(rec["confidence"]),
            external_refs=tuple((str(a), str(b)) for a, b in rec["external_refs"]),
        )


def fact_id_for(subject: str, predicate: str, obj: Value, source: str,
                recorded_at: datetime) -> str:
    return short_hash("fact", subject, predicate, obj.canonical(), source,
                      format_rfc3339(recorded_at))


@dataclass(frozen=True)
class Fact:
    id: str
    subject: str
    predicate: str
    object: Value
    partition: str
    envelope: MetadataEnvelope

    def wire(self) -> dict:
        return {
            "id": self.id,
            "subject": self.subject,
            "predicate": self.predicate,
            "object": self.object.wire(),
            "partition": self.partition,
            "envelope": self.envelope.wire(),
        }

    @staticmethod
    def from_wire(rec: dict) -> "Fact":
        keys = set(rec)
        expected = {"id", "subject", "predicate", "object", "partition", "envelope"}
        if keys != expected:
            raise HubError(f"fact fields {sorted(keys)} do not match the record format")
        if rec["partition"] not in (GENERATED, CURATED):
            raise HubError(f"unknown partition {rec['partition']!r}")
        return Fact(
            id=rec["id"],
            subject=rec["subject"],
            predicate=rec["predicate"],
            object=value_from_wire(rec["object"]),
            partition=rec["partition"],
            envelope=MetadataEnvelope.from_wire(rec["envelope"]),
        )


def make_fact(subject: str, predicate: str, obj: Value, envelope: MetadataEnvelope,
              partition: str = GENERATED) -> Fact:
    """Build a fact with its content-hash id."""
    fid = fact_id_for(subject, predicate, obj, envelope.source, envelope.recorded_at)
    return Fact(fid, subject, predicate, obj, partition, envelope)


@dataclass(frozen=True)
class Activity:
    id: str
    kind: str
    started_at: datetime
    ended_at: datetime
    agent: str
    inputs: tuple = ()

    def check(self) -> None:
        if self.kind not in ACTIVITY_KINDS:
            raise HubError(f"unknown activity kind {self.kind!r}")
        if self.started_at > self.ended_at:
            raise HubError("activity started_at must not exceed ended_at")

    def wire(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "started_at": format_rfc3339(self.started_at),
            "ended_at": format_rfc3339(self.ended_at),
            "agent": self.agent,
            "inputs": list(self.inputs),
        }

    @staticmethod
    def from_wire(rec: dict) -> "Activity":
        return Activity(
            id=rec["id"],
            kind=rec["kind"],
            started_at=parse_rfc3339(rec["started_at"]),
            ended_at=parse_rfc3339(rec["ended_at"]),
            agent=rec["agent"],
            inputs=tuple(rec["inputs"]),
        )


@dataclass(frozen=True)
class DocumentBlob:
    id: str
    media_type: str
    data: bytes
    envelope: MetadataEnvelope


@dataclass(frozen=True)
class EntityView:
    """The redacted, temporally filtered facts of one entity."""

    id: str
    concept: str
    facts: tuple = ()

    def attribute_values(self, name: str) -> list:
        return [f.object for f in self.facts if f.predicate == name and not f.object.is_entity]

    def attribute_facts(self, name: str) -> list:
        return [f for f in self.facts if f.predicate == name and not f.object.is_entity]

    def attribute_names(self) -> set:
        return {f.predicate for f in self.facts if not f.object.is_entity}


def view_of(entity_id: str, facts) -> EntityView:
    try:
        concept = concept_of(entity_id)
    except Exception:
        concept = ""
    return EntityView(entity_id, concept, tuple(facts))


@dataclass(frozen=True)
class AttrPredicate:
    attr: str
    op: str = "="   # '=' exact, 'contains' case-insensitive substring
    value: str = ""


@dataclass(frozen=True)
class Traversal:
    relation: str
    target: "StructuredQuery"


@dataclass(frozen=True)
class StructuredQuery:
    concept: str
    where: tuple = ()
    traverse: Traversal | None = None

    def wire(self) -> dict:
        rec = {
            "concept": self.concept,
            "where": [{"attr": p.attr, "op": p.op, "value": p.value} for p in self.where],
        }
        if self.traverse:
            rec["traverse"] = {
                "relation": self.traverse.relation,
                "target": self.traverse.target.wire(),
            }
        return rec

    @staticmethod
    def from_wire(rec: dict) -> "StructuredQuery":
        where = tuple(
            AttrPredicate(p["attr"], p.get("op", "="), str(p["value"]))
            for p in rec.get("where", [])
        )
        traverse = None
        if rec.get("traverse"):
            traverse = Traversal(
                relation=rec["traverse"]["relation"],
                target=StructuredQuery.from_wire(rec["traverse"]["target"]),
            )
        return StructuredQuery(rec["concept"], where, traverse)


@dataclass(frozen=True)
class KeywordQuery:
    text: str

    def wire(self) -> dict:
        return {"keyword": self.text}


def query_from_wire(rec: dict):
    if "keyword" in rec:
        return KeywordQuery(str(rec["keyword"]))
    return StructuredQuery.from_wire(rec)


def _literal_matches(obj: Value, op: str, raw: str) -> bool:
    if op == "contains":
        return obj.kind == "text" and raw.lower() in str(obj.value).lower()
    if op == "=":
        from .values import coerce_literal, ValueError_
        try:
            return obj == coerce_literal(obj.kind, raw)
        except ValueError_:
            return False
    raise HubError(f"unknown predicate operator {op!r}")


def _tokens(value: Value) -> list:
    return str(value.value).lower().split()


class HubStore:
    """Fact/document store with keyword index, provenance, and persistence.

    ``data_dir=None`` keeps everything in memory (fixtures, ephemeral stores);
    otherwise facts, activities, and document metadata are journaled under the
    directory and replayed by :meth:`open`.
    """

    def __init__(self, ontology: Ontology, data_dir: str | None = None):
        self.ontology = ontology
        self.data_dir = data_dir
        self._lock = threading.RLock()
        self._facts: dict = {}            # fact id -> Fact
        self._by_subject: dict = {}       # entity id -> [fact id]
        self._by_object: dict = {}        # entity id -> [fact id] (relation facts)
        self._kw_index: dict = {}         # token -> set(fact id)
        self._activities: dict = {}       # activity id -> Activity
        self._consumers: dict = {}        # fact id -> [activity id] citing it as input
        self._documents: dict = {}        # doc id -> DocumentBlob
        self._promoted: dict = {}         # generated fact id -> curated fact id
        if data_dir:
            self._fact_log = Journal(os.path.join(data_dir, "facts.log"))
            self._activity_log = Journal(os.path.join(data_dir, "activities.log"))
            self._document_log = Journal(os.path.join(data_dir, "documents.log"))
            self._blob_dir = os.path.join(data_dir, "blobs")
        else:
            self._fact_log = self._activity_log = self._document_log = None
            self._blob_dir = None

    # ------------------------------------------------------------------ setup

    def open(self) -> "HubStore":
        """Replay the journals into memory; raises CorruptJournal on bad lines."""
        if not self.data_dir:
            return self
        with self._lock:
            os.makedirs(self.data_dir, exist_ok=True)
            for rec in self._activity_log.replay():
                act = Activity.from_wire(rec)
                self._index_activity(act)
            for lineno, rec in enumerate(self._fact_log.replay(), start=1):
                fact = Fact.from_wire(rec)
                expect = fact_id_for(fact.subject, fact.predicate, fact.object,
                                     fact.envelope.source, fact.envelope.recorded_at)
                if fact.id != expect:
                    raise CorruptJournal(self._fact_log.path, lineno, dumps_canonical(rec))
                self._index_fact(fact)
            for rec in self._document_log.replay():
                blob_path = os.path.join(self._blob_dir, rec["id"])
                with open(blob_path, "rb") as fh:
                    data = fh.read()
                if hash_bytes(data) != rec["id"]:
                    raise CorruptJournal(self._document_log.path, 0, rec["id"])
                self._documents[rec["id"]] = DocumentBlob(
                    rec["id"], rec["media_type"], data,
                    MetadataEnvelope.from_wire(rec["envelope"]),
                )
        return self

    def close(self) -> None:
        for j in (self._fact_log, self._activity_log, self._document_log):
            if j is not None:
                j.close()

    # ------------------------------------------------------------- activities

    def record_activity(self, act: Activity) -> Activity:
        act.check()
        with self._lock:
            existing = self._activities.get(act.id)
            if existing is not None:
                return existing
            if self._activity_log is not None:
                self._activity_log.append(act.wire())
            self._index_activity(act)
            return act

    def _index_activity(self, act: Activity) -> None:
        self._activities[act.id] = act
        for inp in act.inputs:
            self._consumers.setdefault(inp, []).append(act.id)

    def get_activity(self, activity_id: str) -> Activity | None:
        return self._activities.get(activity_id)

    def new_activity(self, kind: str, agent: str, inputs=(), activity_id: str | None = None,
                     started_at: datetime | None = None,
                     ended_at: datetime | None = None) -> Activity:
        started = started_at or utcnow()
        ended = ended_at or started
        if activity_id is None:
            activity_id = "act-" + short_hash(
                kind, agent, format_rfc3339(started), *inputs, os.urandom(8).hex()
            )[:16]
        act = Activity(activity_id, kind, started, ended, agent, tuple(inputs))
        return self.record_activity(act)

    # ------------------------------------------------------------------ facts

    def put_fact(self, fact: Fact) -> str:
        """Append a generated fact; identical re-puts are no-ops."""
        if fact.partition != GENERATED:
            raise HubError("new facts enter the generated partition; use promote/merge")
        return self._append_fact(fact)

    def _append_fact(self, fact: Fact) -> str:
        fact.envelope.check()
        violations = validate_fact(fact, self.ontology)
        if violations:
            raise OntologyViolation(violations)
        expect = fact_id_for(fact.subject, fact.predicate, fact.object,
                             fact.envelope.source, fact.envelope.recorded_at)
        if fact.id != expect:
            raise HubError(f"fact id {fact.id} does not match its content hash {expect}")
        with self._lock:
            if fact.envelope.activity not in self._activities:
                raise MalformedEnvelope(
                    f"activity {fact.envelope.activity!r} is not a recorded activity"
                )
            existing = self._facts.get(fact.id)
            if existing is not None:
                if existing != fact:
                    raise HubError(f"fact id collision with differing content: {fact.id}")
                return fact.id
            if self._fact_log is not None:
                self._fact_log.append(fact.wire())
            self._index_fact(fact)
            return fact.id

    def _index_fact(self, fact: Fact) -> None:
        self._facts[fact.id] = fact
        self._by_subject.setdefault(fact.subject, []).append(fact.id)
        if fact.object.is_entity:
            self._by_object.setdefault(fact.object.value, []).append(fact.id)
        else:
            for tok in _tokens(fact.object):
                self._kw_index.setdefault(tok, set()).add(fact.id)

    def get_fact(self, fact_id: str) -> Fact:
        try:
            return self._facts[fact_id]
        except KeyError:
            raise UnknownId(f"unknown fact {fact_id!r}") from None

    def has_fact(self, fact_id: str) -> bool:
        return fact_id in self._facts

    def facts(self) -> list:
        with self._lock:
            return list(self._facts.values())

    def fact_count(self) -> int:
        return len(self._facts)

    def entity_ids(self) -> list:
        with self._lock:
            return sorted(self._by_subject)

    # ---------------------------------------------------------------- queries

    @staticmethod
    def _valid_at(fact: Fact, as_of: datetime | None) -> bool:
        if as_of is None:
            return True
        env = fact.envelope
        if env.valid_from is not None and as_of < env.valid_from:
            return False
        if env.valid_to is not None and as_of >= env.valid_to:
            return False
        return True

    def visible_facts(self, entity_id: str, auth: AuthContext | None,
                      as_of: datetime | None = None) -> list:
        """auth=None is the trusted system context (no redaction); it is never
        constructible from the HTTP surface."""
        with self._lock:
            fids = self._by_subject.get(entity_id, [])
            facts = [self._facts[fid] for fid in fids]
        return [
            f for f in facts
            if (auth is None or authorize(f.envelope.visibility, auth))
            and self._valid_at(f, as_of)
        ]

    def get_entity(self, entity_id: str, auth: AuthContext,
                   as_of: datetime | None = None) -> EntityView:
        """All visible facts with this subject; empty view when nothing is visible."""
        return view_of(entity_id, self.visible_facts(entity_id, auth, as_of))

    def keyword_search(self, text: str, auth: AuthContext) -> list:
        """Ranked ``(entity id, matched token count)`` hits."""
        query_tokens = [t for t in text.lower().split() if t]
        matched: dict = {}
        with self._lock:
            for qt in set(query_tokens):
                for fid in self._kw_index.get(qt, ()):
                    fact = self._facts[fid]
                    if auth is None or authorize(fact.envelope.visibility, auth):
                        matched.setdefault(fact.subject, set()).add(qt)
        hits = [(eid, len(toks)) for eid, toks in matched.items()]
        hits.sort(key=lambda h: (-h[1], h[0]))
        return hits

    def _check_query_names(self, q: StructuredQuery) -> None:
        if q.concept not in self.ontology.concepts:
            raise OntologyError(f"unknown concept {q.concept!r}")
        for p in q.where:
            if not self.ontology.attributes_named(p.attr):
                raise OntologyError(f"unknown attribute {p.attr!r}")
        if q.traverse is not None:
            if self.ontology.relation(q.traverse.relation) is None:
                raise OntologyError(f"unknown relation {q.traverse.relation!r}")
            self._check_query_names(q.traverse.target)

    def _entity_satisfies(self, entity_id: str, q: StructuredQuery, auth: AuthContext,
                          as_of: datetime | None) -> bool:
        try:
            concept = concept_of(entity_id)
        except Exception:
            return False
        if concept not in self.ontology.concepts:
            return False
        if not is_subconcept(concept, q.concept, self.ontology):
            return False
        facts = self.visible_facts(entity_id, auth, as_of)
        if not facts:
            # nothing visible: the entity must not be observable at all
            return False
        for p in q.where:
            if not any(
                f.predicate == p.attr and not f.object.is_entity
                and _literal_matches(f.object, p.op, p.value)
                for f in facts
            ):
                return False
        if q.traverse is not None:
            hops = [
                f.object.value for f in facts
                if f.predicate == q.traverse.relation and f.object.is_entity
            ]
            if not any(
                self._entity_satisfies(t, q.traverse.target, auth, as_of) for t in hops
            ):
                return False
        return True

    def structured_query(self, q: StructuredQuery, auth: AuthContext,
                         as_of: datetime | None = None) -> list:
        """Entity ids satisfying the query using only visible, valid facts."""
        self._check_query_names(q)
        return sorted(
            eid for eid in self.entity_ids()
            if self._entity_satisfies(eid, q, auth, as_of)
        )

    def run_query(self, query, auth: AuthContext, as_of: datetime | None = None) -> list:
        """Entity ids matched by a keyword or structured query."""
        if isinstance(query, KeywordQuery):
            return [eid for eid, _ in self.keyword_search(query.text, auth)]
        return self.structured_query(query, auth, as_of)

    # -------------------------------------------------------------- promotion

    def promote(self, fact_id: str, curator: str) -> Fact:
        """Write a curated copy of a generated fact; the original remains."""
        with self._lock:
            fact = self.get_fact(fact_id)
            if fact.partition == CURATED or fact_id in self._promoted:
                raise AlreadyCurated(f"fact {fact_id} is already curated")
            act = self.new_activity("promote", curator, inputs=(fact_id,))
            recorded = max(utcnow(), fact.envelope.recorded_at + timedelta(microseconds=1))
            env = replace(fact.envelope, activity=act.id, agent=curator, recorded_at=recorded)
            curated = make_fact(fact.subject, fact.predicate, fact.object, env, CURATED)
            self._append_fact(curated)
            self._promoted[fact_id] = curated.id
            return curated

    # -------------------------------------------------------------- provenance

    def provenance_chain(self, fact_id: str) -> list:
        """Activities that produced the fact (transitively) or consumed it.

        Most-recent first; the producer walk terminates at an ingest or
        remote-query activity. A dangling activity reference raises
        BrokenChain.
        """
        with self._lock:
            fact = self.get_fact(fact_id)
            acts: dict = {}

            def activity(aid: str) -> Activity:
                act = self._activities.get(aid)
                if act is None:
                    raise BrokenChain(f"dangling activity id {aid!r}")
                return act

            for aid in self._consumers.get(fact_id, ()):
                act = activity(aid)
                acts[act.id] = act
            stack = [fact.envelope.activity]
            while stack:
                aid = stack.pop()
                if aid in acts:
                    continue
                act = activity(aid)
                acts[act.id] = act
                for inp in act.inputs:
                    f = self._facts.get(inp)
                    if f is not None:
                        stack.append(f.envelope.activity)
        return sorted(acts.values(), key=lambda a: (a.started_at, a.id), reverse=True)

    def chain_terminates_at_source(self, fact_id: str, source_ids) -> bool:
        """True iff the chain reaches an ingest/remote-query naming a known source."""
        for act in self.provenance_chain(fact_id):
            if act.kind in ("ingest", "remote-query") and any(
                i in source_ids for i in act.inputs
            ):
                return True
        return False

    # -------------------------------------------------------------- documents

    def put_document(self, media_type: str, data: bytes, envelope: MetadataEnvelope) -> str:
        envelope.check()
        doc_id = hash_bytes(data)
        with self._lock:
            if envelope.activity not in self._activities:
                raise MalformedEnvelope(
                    f"activity {envelope.activity!r} is not a recorded activity"
                )
            if doc_id in self._documents:
                return doc_id
            if self._blob_dir is not None:
                os.makedirs(self._blob_dir, exist_ok=True)
                path = os.path.join(self._blob_dir, doc_id)
                with open(path, "wb") as fh:
                    fh.write(data)
                    fh.flush()
                    os.fsync(fh.fileno())
                self._document_log.append({
                    "id": doc_id,
                    "media_type": media_type,
                    "envelope": envelope.wire(),
                })
            self._documents[doc_id] = DocumentBlob(doc_id, media_type, data, envelope)
            return doc_id

    def get_document(self, doc_id: str, auth: AuthContext) -> DocumentBlob:
        with self._lock:
            blob = self._documents.get(doc_id)
        if blob is None:
            raise UnknownId(f"unknown document {doc_id!r}")
        if not authorize(blob.envelope.visibility, auth):
            raise AccessDenied(f"document {doc_id} is not visible to this context")
        return blob

    # --------------------------------------------------------------- snapshot

    def snapshot_bytes(self) -> bytes:
        """All fact records, sorted by id; replaying it reproduces the store."""
        with self._lock:
            records = [self._facts[fid].wire() for fid in sorted(self._facts)]
        return ("".join(dumps_canonical(r) + "\n" for r in records)).encode("utf-8")

    def write_snapshot(self, path: str) -> None:
        data = self.snapshot_bytes()
        with open(path, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
