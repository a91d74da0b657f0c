"""Declarative mapping DSL and the staged ingestion pipeline.

A mapping file turns tabular source records into ontology facts::

    entity Person key(first_name,last_name)
    map first_name -> Person.name trim
    map dob -> Person.date_of_birth date-parse(YYYY-MM-DD)
    map plate -> ownsVehicle vis="LE" conf=0.9

The ``entity`` line names the concept and the identity-key fields; a record's
entity id is a hash of the source id and its key values, so re-ingesting the
same batch reproduces the same ids. ``map`` targets are ``Domain.attribute``
or a bare relation name; transforms are ``identity`` (default), ``trim``,
``upper``, ``date-parse(<pattern>)``, ``split("<delim>")``, and
``concat(<field>,"<sep>")``.

The pipeline runs acquire -> transform/extract -> annotate -> index -> link.
Ingest activities are content-addressed by (source id, batch digest): an
identical batch reuses the original activity and its start time as the
default record timestamp, which makes every fact id collide and every put a
no-op; re-running a batch cannot grow the store.
"""

from __future__ import annotations

import csv
import io
import os
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .journal import Journal
from .linker import (
    Gazetteer,
    SimilarityConfig,
    extract_entities,
    propose_links,
)
from .hubstore import (
    Activity,
    HubStore,
    MetadataEnvelope,
    make_fact,
)
from .ontology import Ontology, is_subconcept
from .security import PUBLIC, parse_visibility
from .values import (
    Value,
    ValueError_,
    coerce_literal,
    entity_id,
    format_rfc3339,
    hash_bytes,
    short_hash,
    text,
    utcnow,
)


class MappingError(ValueError):
    pass


class SourceUnreadable(ValueError):
    pass


@dataclass(frozen=True)
class MappingRule:
    source_field: str
    target_kind: str            # 'attribute' | 'relation'
    target: str                 # attribute name or relation name
    datatype: str | None        # attribute datatype; None for relations
    range_concept: str | None   # relation range; None for attributes
    transform: tuple = ("identity",)
    visibility_override: object = None
    confidence: float = 1.0


@dataclass(frozen=True)
class MappingRuleSet:
    source_concept: str
    key_fields: tuple
    rules: tuple


_ENTITY_RE = re.compile(r"^entity\s+(\w+)\s+key\(([^)]+)\)\s*$")
_MAP_RE = re.compile(r"^map\s+(\S+)\s*->\s*(\S+)(.*)$")
_VIS_RE = re.compile(r'\bvis="([^"]*)"')
_CONF_RE = re.compile(r"\bconf=([0-9.]+)")
_TRANSFORMS = re.compile(
    r"^(?:(identity|trim|upper)"
    r"|date-parse\(([^)]+)\)"
    r'|split\("([^"]*)"\)'
    r'|concat\((\w+)\s*,\s*"([^"]*)"\))$'
)

_DATE_TOKENS = [("YYYY", "%Y"), ("MM", "%m"), ("DD", "%d"),
                ("HH", "%H"), ("MI", "%M"), ("SS", "%S")]


def _strptime_format(pattern: str) -> str:
    fmt = pattern
    for token, directive in _DATE_TOKENS:
        fmt = fmt.replace(token, directive)
    return fmt


def parse_mappings(doc: str, onto: Ontology) -> MappingRuleSet:
    """Parse and validate a mapping file; every ontology name is checked here."""
    source_concept = None
    key_fields: tuple = ()
    rules = []
    for lineno, raw in enumerate(doc.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if m := _ENTITY_RE.match(line):
            if source_concept is not None:
                raise MappingError(f"line {lineno}: duplicate entity declaration")
            source_concept = m.group(1)
            key_fields = tuple(f.strip() for f in m.group(2).split(",") if f.strip())
            if source_concept not in onto.concepts:
                raise MappingError(f"line {lineno}: unknown concept {source_concept!r}")
            if not key_fields:
                raise MappingError(f"line {lineno}: entity needs at least one key field")
            continue
        if m := _MAP_RE.match(line):
            if source_concept is None:
                raise MappingError(f"line {lineno}: map before entity declaration")
            rules.append(_parse_rule(m, onto, source_concept, lineno))
            continue
        raise MappingError(f"line {lineno}: unrecognized directive {line!r}")
    if source_concept is None:
        raise MappingError("mapping file declares no entity line")
    if not rules:
        raise MappingError("mapping file declares no rules")
    return MappingRuleSet(source_concept, key_fields, tuple(rules))


def _parse_rule(m, onto: Ontology, source_concept: str, lineno: int) -> MappingRule:
    source_field, target, tail = m.group(1), m.group(2), m.group(3) or ""
    visibility = None
    if vm := _VIS_RE.search(tail):
        visibility = parse_visibility(vm.group(1))
        tail = tail[: vm.start()] + tail[vm.end():]
    confidence = 1.0
    if cm := _CONF_RE.search(tail):
        confidence = float(cm.group(1))
        tail = tail[: cm.start()] + tail[cm.end():]
        if not (0.0 <= confidence <= 1.0):
            raise MappingError(f"line {lineno}: conf {confidence} outside [0, 1]")
    tail = tail.strip()
    transform: tuple = ("identity",)
    if tail:
        tm = _TRANSFORMS.match(tail)
        if not tm:
            raise MappingError(f"line {lineno}: malformed transform {tail!r}")
        if tm.group(1):
            transform = (tm.group(1),)
        elif tm.group(2) is not None:
            fmt = _strptime_format(tm.group(2))
            if "%" not in fmt:
                raise MappingError(f"line {lineno}: date pattern {tm.group(2)!r} has no fields")
            transform = ("date-parse", tm.group(2))
        elif tm.group(3) is not None:
            if tm.group(3) == "":
                raise MappingError(f"line {lineno}: split delimiter must be non-empty")
            transform = ("split", tm.group(3))
        else:
            transform = ("concat", tm.group(4), tm.group(5))

    if "." in target:
        domain, _, attr = target.partition(".")
        adef = onto.attributes.get((domain, attr))
        if adef is None:
            raise MappingError(f"line {lineno}: unknown attribute {target!r}")
        if not is_subconcept(source_concept, domain, onto):
            raise MappingError(
                f"line {lineno}: {source_concept} is not a {domain}; cannot map {target}"
            )
        if transform[0] == "date-parse" and adef.datatype not in ("date", "timestamp"):
            raise MappingError(
                f"line {lineno}: date-parse targets a {adef.datatype} attribute"
            )
        return MappingRule(source_field, "attribute", attr, adef.datatype, None,
                           transform, visibility, confidence)
    rel = onto.relation(target)
    if rel is None:
        raise MappingError(f"line {lineno}: unknown relation {target!r}")
    if not is_subconcept(source_concept, rel.domain, onto):
        raise MappingError(
            f"line {lineno}: {source_concept} is not a {rel.domain}; cannot map {target}"
        )
    return MappingRule(source_field, "relation", target, None, rel.range,
                       transform, visibility, confidence)


def _apply_transform(rule: MappingRule, raw: str, record: dict) -> list:
    t = rule.transform
    if t[0] == "identity":
        return [raw]
    if t[0] == "trim":
        return [raw.strip()]
    if t[0] == "upper":
        return [raw.upper()]
    if t[0] == "split":
        return [p.strip() for p in raw.split(t[1]) if p.strip()]
    if t[0] == "concat":
        other = record.get(t[1], "")
        return [raw + t[2] + other]
    if t[0] == "date-parse":
        fmt = _strptime_format(t[1])
        try:
            dt = datetime.strptime(raw.strip(), fmt)
        except ValueError:
            raise ValueError_(f"value {raw!r} does not match pattern {t[1]!r}") from None
        if rule.datatype == "timestamp":
            return [format_rfc3339(dt.replace(tzinfo=timezone.utc))]
        return [dt.date().isoformat()]
    raise MappingError(f"unknown transform {t[0]!r}")


def _rule_value(rule: MappingRule, piece: str, source_id: str) -> Value:
    if rule.target_kind == "relation":
        target = entity_id(rule.range_concept, source_id, piece)
        return Value("entity", target)
    return coerce_literal(rule.datatype, piece)


def record_entity_id(rules: MappingRuleSet, record: dict, source_id: str) -> str:
    key_values = []
    for f in rules.key_fields:
        if f not in record:
            raise ValueError_(f"record is missing identity-key field {f!r}")
        key_values.append(str(record[f]))
    return entity_id(rules.source_concept, source_id, *key_values)


def transform(records, rules: MappingRuleSet, source_id: str, activity: Activity,
              default_visibility=PUBLIC, agent: str = "pipeline",
              recorded_at: datetime | None = None):
    """Map a tabular batch to facts.

    Returns ``(facts, errors)`` where errors is a list of ``(row index,
    message)``; a row that fails any transform contributes no facts and one
    error, and never disturbs other rows. ``recorded_at`` defaults to the
    activity's start time.
    """
    stamp = recorded_at or activity.started_at
    facts = []
    errors = []
    for idx, record in enumerate(records):
        try:
            eid = record_entity_id(rules, record, source_id)
            row_facts = []
            for rule in rules.rules:
                raw = record.get(rule.source_field)
                if raw is None or str(raw) == "":
                    continue
                for piece in _apply_transform(rule, str(raw), record):
                    value = _rule_value(rule, piece, source_id)
                    env = MetadataEnvelope(
                        source=source_id,
                        activity=activity.id,
                        agent=agent,
                        recorded_at=stamp,
                        visibility=rule.visibility_override
                        if rule.visibility_override is not None else default_visibility,
                        confidence=rule.confidence,
                    )
                    row_facts.append(make_fact(eid, rule.target, value, env))
        except ValueError_ as exc:
            errors.append((idx, str(exc)))
            continue
        facts.extend(row_facts)
    return facts, errors


@dataclass
class PipelineRun:
    id: str
    source: str
    started_at: datetime
    ended_at: datetime | None = None
    records_read: int = 0
    facts_emitted: int = 0
    extractions: int = 0
    links_proposed: int = 0
    errors: int = 0
    error_detail: list = field(default_factory=list)
    activity: str = ""

    def wire(self) -> dict:
        return {
            "id": self.id,
            "source": self.source,
            "started_at": format_rfc3339(self.started_at),
            "ended_at": format_rfc3339(self.ended_at) if self.ended_at else None,
            "counts": {
                "records_read": self.records_read,
                "facts_emitted": self.facts_emitted,
                "extractions": self.extractions,
                "links_proposed": self.links_proposed,
                "errors": self.errors,
            },
            "error_detail": [[i, m] for i, m in self.error_detail],
            "activity": self.activity,
        }


_run_locks: dict = {}
_run_locks_guard = threading.Lock()


def _source_lock(store: HubStore, source_id: str) -> threading.Lock:
    key = (id(store), source_id)
    with _run_locks_guard:
        return _run_locks.setdefault(key, threading.Lock())


def read_csv_batch(locator: str):
    """Read a CSV batch fully up front; returns (records, batch digest)."""
    try:
        with open(locator, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise SourceUnreadable(f"cannot read batch {locator!r}: {exc}") from None
    try:
        rows = list(csv.DictReader(io.StringIO(raw.decode("utf-8"))))
    except (UnicodeDecodeError, csv.Error) as exc:
        raise SourceUnreadable(f"cannot parse batch {locator!r}: {exc}") from None
    return rows, hash_bytes(raw)


def read_document_batch(locator: str):
    """Read every UTF-8 text file in a directory; returns (docs, digest)."""
    if not os.path.isdir(locator):
        raise SourceUnreadable(f"document batch {locator!r} is not a directory")
    docs = []
    hasher_parts = []
    for name in sorted(os.listdir(locator)):
        path = os.path.join(locator, name)
        if not os.path.isfile(path):
            continue
        try:
            with open(path, "rb") as fh:
                data = fh.read()
            content = data.decode("utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise SourceUnreadable(f"cannot read document {path!r}: {exc}") from None
        docs.append((name, content, data))
        hasher_parts.append(name + ":" + hash_bytes(data))
    return docs, short_hash("docs", *hasher_parts)


def ingest_activity(store: HubStore, source_id: str, batch_digest: str,
                    agent: str) -> tuple:
    """Content-addressed ingest activity; reused when the batch repeats."""
    act_id = "act-" + short_hash("ingest", source_id, batch_digest)[:16]
    existing = store.get_activity(act_id)
    if existing is not None:
        return existing, True
    act = store.new_activity("ingest", agent, inputs=(source_id,), activity_id=act_id)
    return act, False


def run_pipeline(store: HubStore, source, locator: str, mapping: MappingRuleSet | None = None,
                 gazetteer: Gazetteer | None = None, link_cfg: SimilarityConfig | None = None,
                 auth=None, agent: str = "pipeline") -> PipelineRun:
    """Run the staged pipeline for one source batch.

    ``source`` is a registered SourceDescriptor (its kind picks the acquire
    and extract behavior). All writes land in the generated partition; the
    run report is journaled under the store's data directory.
    """
    with _source_lock(store, source.id):
        if source.kind == "directory-of-documents":
            if gazetteer is None:
                raise MappingError("document sources require a gazetteer")
            docs, digest = read_document_batch(locator)
            records = None
        else:
            if mapping is None:
                mapping = source.mapping
            if mapping is None:
                raise MappingError(f"source {source.id!r} has no mapping rule set")
            records, digest = read_csv_batch(locator)
            docs = None

        act, _reused = ingest_activity(store, source.id, digest, agent)
        run = PipelineRun(
            id="run-" + short_hash(source.id, digest, format_rfc3339(utcnow()),
                                   os.urandom(4).hex())[:16],
            source=source.id,
            started_at=utcnow(),
            activity=act.id,
        )

        new_entities: list = []
        if records is not None:
            run.records_read = len(records)
            facts, errors = transform(records, mapping, source.id, act,
                                      default_visibility=source.default_visibility,
                                      agent=agent)
            run.errors = len(errors)
            run.error_detail = [(i, m) for i, m in errors]
            for fact in facts:
                store.put_fact(fact)
            run.facts_emitted = len(facts)
            new_entities = sorted({f.subject for f in facts})
        else:
            run.records_read = len(docs)
            emitted = 0
            for name, content, data in docs:
                try:
                    env = MetadataEnvelope(
                        source=source.id, activity=act.id, agent=agent,
                        recorded_at=act.started_at,
                        visibility=source.default_visibility,
                    )
                    blob_id = store.put_document("text/plain", data, env)
                    doc_entity = entity_id("Document", source.id, name)
                    title_env = MetadataEnvelope(
                        source=source.id, activity=act.id, agent=agent,
                        recorded_at=act.started_at,
                        visibility=source.default_visibility,
                        external_refs=(("document-store", blob_id),),
                    )
                    store.put_fact(make_fact(doc_entity, "title", text(name), title_env))
                    store.put_fact(make_fact(doc_entity, "text", text(content), title_env))
                    emitted += 2
                    for span, concept, canonical in extract_entities(content, gazetteer):
                        run.extractions += 1
                        target = entity_id(concept, source.id, concept, canonical)
                        label_env = MetadataEnvelope(
                            source=source.id, activity=act.id, agent=agent,
                            recorded_at=act.started_at,
                            visibility=source.default_visibility,
                        )
                        store.put_fact(make_fact(target, "label", text(canonical), label_env))
                        mention_env = MetadataEnvelope(
                            source=source.id, activity=act.id, agent=agent,
                            recorded_at=act.started_at,
                            visibility=source.default_visibility,
                            external_refs=(("document-store", blob_id),
                                           ("span", f"{span[0]}-{span[1]}")),
                        )
                        store.put_fact(make_fact(doc_entity, "mentions",
                                                 Value("entity", target), mention_env))
                        emitted += 2
                        if target not in new_entities:
                            new_entities.append(target)
                    if doc_entity not in new_entities:
                        new_entities.append(doc_entity)
                except (ValueError_, ValueError) as exc:
                    run.errors += 1
                    run.error_detail.append((name, str(exc)))
            run.facts_emitted = emitted

        if link_cfg is not None:
            for eid in new_entities:
                proposals = propose_links(eid, store, link_cfg, auth, agent=agent)
                run.links_proposed += len(proposals)

        run.ended_at = utcnow()
        if store.data_dir:
            journal = Journal(os.path.join(store.data_dir, "runs.log"))
            journal.append(run.wire())
            journal.close()
        return run
