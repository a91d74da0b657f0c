"""Typed literal values, RFC 3339 timestamps, and identifier/hash helpers.

Everything stored in the hub is a subject-predicate-object fact whose object
is either a typed literal or an entity reference. This module owns the value
representation, its wire encoding (the ``object{kind,value}`` shape of the
fact-log record format), and the content-hash ids built from it.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from datetime import date, datetime, timezone

IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

DATATYPES = ("text", "integer", "decimal", "date", "timestamp", "boolean")

# object kinds on the wire: the six literal datatypes plus entity references
KINDS = DATATYPES + ("entity",)


class ValueError_(ValueError):
    """Raised for malformed values, timestamps, or identifiers."""


def is_identifier(name: str) -> bool:
    return bool(IDENT_RE.match(name))


def parse_rfc3339(text: str) -> datetime:
    """Parse an RFC 3339 UTC timestamp; returns an aware UTC datetime."""
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(s)
    except ValueError as exc:
        raise ValueError_(f"bad timestamp {text!r}: {exc}") from None
    if dt.tzinfo is None:
        raise ValueError_(f"timestamp {text!r} has no UTC offset")
    return dt.astimezone(timezone.utc)


def format_rfc3339(dt: datetime) -> str:
    """Format an aware datetime as RFC 3339 UTC, seconds precision unless sub-second."""
    if dt.tzinfo is None:
        raise ValueError_("naive datetime cannot be formatted as RFC 3339")
    dt = dt.astimezone(timezone.utc)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%f") + "Z"
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_date(text: str) -> date:
    try:
        return date.fromisoformat(text.strip())
    except ValueError as exc:
        raise ValueError_(f"bad date {text!r}: {exc}") from None


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass(frozen=True)
class Value:
    """A typed fact object: one of the literal datatypes or an entity reference.

    The payload is held in canonical wire form (a string for date/timestamp,
    native int/float/bool/str otherwise; entity ids as strings).
    """

    kind: str
    value: object

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError_(f"unknown value kind {self.kind!r}")

    @property
    def is_entity(self) -> bool:
        return self.kind == "entity"

    def wire(self) -> dict:
        return {"kind": self.kind, "value": self.value}

    def canonical(self) -> str:
        """Stable string used in content hashes."""
        return f"{self.kind}:{self.value!r}"


def text(v: str) -> Value:
    return Value("text", str(v))


def integer(v: int) -> Value:
    return Value("integer", int(v))


def decimal(v: float) -> Value:
    return Value("decimal", float(v))


def boolean(v: bool) -> Value:
    return Value("boolean", bool(v))


def date_value(v: "date | str") -> Value:
    if isinstance(v, str):
        v = parse_date(v)
    return Value("date", v.isoformat())


def timestamp(v: "datetime | str") -> Value:
    if isinstance(v, str):
        v = parse_rfc3339(v)
    return Value("timestamp", format_rfc3339(v))


def entity_ref(entity_id: str) -> Value:
    return Value("entity", entity_id)


def value_from_wire(obj: dict) -> Value:
    if not isinstance(obj, dict) or set(obj) != {"kind", "value"}:
        raise ValueError_(f"bad object record {obj!r}")
    kind, raw = obj["kind"], obj["value"]
    if kind == "text":
        return text(raw)
    if kind == "integer":
        return integer(raw)
    if kind == "decimal":
        return decimal(raw)
    if kind == "boolean":
        if not isinstance(raw, bool):
            raise ValueError_(f"boolean object must be true/false, got {raw!r}")
        return boolean(raw)
    if kind == "date":
        return date_value(raw)
    if kind == "timestamp":
        return timestamp(raw)
    if kind == "entity":
        return entity_ref(str(raw))
    raise ValueError_(f"unknown value kind {kind!r}")


def coerce_literal(datatype: str, raw: str) -> Value:
    """Parse source text into a literal of the given ontology datatype."""
    raw = raw.strip()
    if datatype == "text":
        return text(raw)
    if datatype == "integer":
        try:
            return integer(int(raw))
        except ValueError:
            raise ValueError_(f"not an integer: {raw!r}") from None
    if datatype == "decimal":
        try:
            return decimal(float(raw))
        except ValueError:
            raise ValueError_(f"not a decimal: {raw!r}") from None
    if datatype == "boolean":
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return boolean(True)
        if low in ("false", "0", "no"):
            return boolean(False)
        raise ValueError_(f"not a boolean: {raw!r}")
    if datatype == "date":
        return date_value(raw)
    if datatype == "timestamp":
        return timestamp(raw)
    raise ValueError_(f"unknown datatype {datatype!r}")


def sha256_hex(*parts: str) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode("utf-8"))
        h.update(b"\x1f")
    return h.hexdigest()


def short_hash(*parts: str) -> str:
    """Content hash truncated to 128 bits; the id format used throughout."""
    return sha256_hex(*parts)[:32]


def hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:32]


def entity_id(concept: str, *key_parts: str) -> str:
    """Deterministic entity id carrying its concept as a prefix."""
    return f"{concept}-{short_hash(concept, *key_parts)[:16]}"


def concept_of(entity_id_: str) -> str:
    """The concept encoded in an entity id (the segment before the first dash)."""
    head, sep, _ = entity_id_.partition("-")
    if not sep or not head:
        raise ValueError_(f"entity id {entity_id_!r} carries no concept prefix")
    return head
