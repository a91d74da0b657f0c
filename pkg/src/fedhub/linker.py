"""Entity similarity, metadata-aware ranking, link proposal, and merging.

Similarity between two entities is a weighted mean of per-attribute scores
over the attributes both carry: trigram Jaccard for text, exact match for
dates/timestamps/booleans, a bounded relative-difference score for numbers.
Ranking folds in envelope confidence, so a high-similarity candidate backed
by low-confidence facts ranks below an equally similar well-sourced one.

Accepted proposals become generated ``sameAs`` facts pending curation; a
curator merges linked entities into a new curated entity that retains every
constituent fact (conflicting values are all kept, distinguished by their
provenance).

A gazetteer-backed extractor stands in for full open information extraction
from text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import timedelta

from .hubstore import (
    CURATED,
    GENERATED,
    EntityView,
    HubError,
    HubStore,
    MetadataEnvelope,
    make_fact,
)
from .security import And, AuthContext, PUBLIC, Public, canonicalize
from .values import Value, concept_of, entity_ref, short_hash

LOCAL_SOURCE = "local"

SAME_AS = "sameAs"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimilarityConfig:
    weights: dict = field(default_factory=dict)   # attribute name -> weight >= 0
    link_threshold: float = 0.8
    string_method: str = "trigram-jaccard"

    def check(self) -> None:
        if not self.weights or sum(self.weights.values()) <= 0:
            raise ConfigError("attribute weights must sum to a positive value")
        for name, w in self.weights.items():
            if w < 0:
                raise ConfigError(f"negative weight for {name!r}")
        if not (0.0 < self.link_threshold <= 1.0):
            raise ConfigError(f"link threshold {self.link_threshold} outside (0, 1]")


def load_similarity_config(doc: str) -> SimilarityConfig:
    """Parse ``weight <attr> <decimal>`` / ``threshold <decimal>`` lines."""
    weights: dict = {}
    threshold = 0.8
    for lineno, raw in enumerate(doc.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "weight" and len(parts) == 3:
                weights[parts[1]] = float(parts[2])
            elif parts[0] == "threshold" and len(parts) == 2:
                threshold = float(parts[1])
            else:
                raise ConfigError(f"line {lineno}: unrecognized directive {line!r}")
        except ValueError:
            raise ConfigError(f"line {lineno}: bad decimal in {line!r}") from None
    cfg = SimilarityConfig(weights, threshold)
    cfg.check()
    return cfg


@dataclass(frozen=True)
class LinkProposal:
    left: str
    right: str
    score: float
    evidence: tuple = ()   # (attribute name, attribute-level score)

    def __post_init__(self):
        if self.left == self.right:
            raise ValueError("a link proposal needs two distinct entities")
        if self.left > self.right:
            raise ValueError("proposal endpoints must be in canonical order")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")

    def wire(self) -> dict:
        return {
            "left": self.left,
            "right": self.right,
            "score": self.score,
            "evidence": [[a, s] for a, s in self.evidence],
        }


# ------------------------------------------------------------------ similarity

def trigrams(s: str) -> set:
    """Character trigrams of the case-folded string; short strings gram whole."""
    s = s.casefold()
    if len(s) < 3:
        return {s}
    return {s[i:i + 3] for i in range(len(s) - 2)}


def trigram_jaccard(a: str, b: str) -> float:
    ga, gb = trigrams(a), trigrams(b)
    union = ga | gb
    if not union:
        return 1.0
    return len(ga & gb) / len(union)


def _value_score(a: Value, b: Value) -> float:
    if a.kind != b.kind:
        return 0.0
    if a.kind == "text":
        return trigram_jaccard(str(a.value), str(b.value))
    if a.kind in ("integer", "decimal"):
        x, y = float(a.value), float(b.value)
        return 1.0 - min(1.0, abs(x - y) / max(abs(x), abs(y), 1.0))
    # date, timestamp, boolean: exact match
    return 1.0 if a.value == b.value else 0.0


def attribute_score(a: EntityView, b: EntityView, attr: str) -> float:
    """Best score over the value pairs of a (possibly multi-valued) attribute."""
    va = a.attribute_values(attr)
    vb = b.attribute_values(attr)
    if not va or not vb:
        return 0.0
    return max(_value_score(x, y) for x in va for y in vb)


def shared_attributes(a: EntityView, b: EntityView, cfg: SimilarityConfig) -> list:
    common = a.attribute_names() & b.attribute_names()
    return sorted(n for n in common if cfg.weights.get(n, 0.0) > 0)


def pair_similarity(a: EntityView, b: EntityView, cfg: SimilarityConfig) -> float:
    """Weighted mean over attributes present in both views; no overlap -> 0."""
    attrs = shared_attributes(a, b, cfg)
    if not attrs:
        return 0.0
    total_w = sum(cfg.weights[n] for n in attrs)
    return sum(cfg.weights[n] * attribute_score(a, b, n) for n in attrs) / total_w


def adjusted_score(probe: EntityView, candidate: EntityView, cfg: SimilarityConfig):
    """(similarity x mean confidence of the candidate's contributing facts, evidence)."""
    attrs = shared_attributes(probe, candidate, cfg)
    evidence = tuple((n, attribute_score(probe, candidate, n)) for n in attrs)
    contributing = [f for n in attrs for f in candidate.attribute_facts(n)]
    if not contributing:
        return 0.0, evidence, ()
    sim = pair_similarity(probe, candidate, cfg)
    mean_conf = sum(f.envelope.confidence for f in contributing) / len(contributing)
    return sim * mean_conf, evidence, tuple(contributing)


def rank_candidates(probe: EntityView, candidates, cfg: SimilarityConfig) -> list:
    """(entity id, adjusted score) descending, entity-id tie-break ascending."""
    scored = [(c.id, adjusted_score(probe, c, cfg)[0]) for c in candidates]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored


# ---------------------------------------------------------------- proposals

def _conjoin_visibility(exprs):
    """Conjunction of the evidence facts' labels: seeing the link requires
    satisfying every label that guarded its evidence."""
    parts = []
    for e in exprs:
        if isinstance(e, Public):
            continue
        if e not in parts:
            parts.append(e)
    if not parts:
        return PUBLIC
    if len(parts) == 1:
        return parts[0]
    return canonicalize(And(tuple(parts)))


def propose_over_views(probe: EntityView, candidates, cfg: SimilarityConfig) -> list:
    """Proposals meeting the threshold, with per-attribute evidence scores."""
    proposals = []
    for cand in sorted(candidates, key=lambda c: c.id):
        if cand.id == probe.id:
            continue
        score, evidence, _ = adjusted_score(probe, cand, cfg)
        if score >= cfg.link_threshold:
            left, right = sorted((probe.id, cand.id))
            proposals.append(LinkProposal(left, right, score, evidence))
    proposals.sort(key=lambda p: (p.left, p.right))
    return proposals


def propose_links(entity_id: str, store: HubStore, cfg: SimilarityConfig,
                  auth: AuthContext, agent: str = "linker") -> list:
    """Propose links for one entity and write accepted ones as sameAs facts.

    Candidates are the store's other entities of the same concept, viewed
    under the caller's auth, so proposals never rest on hidden facts.
    """
    cfg.check()
    probe = store.get_entity(entity_id, auth)
    concept = concept_of(entity_id)
    candidates = [
        store.get_entity(eid, auth)
        for eid in store.entity_ids()
        if eid != entity_id and concept_of(eid) == concept
    ]
    proposals = propose_over_views(probe, candidates, cfg)
    for prop in proposals:
        _write_same_as(store, prop, probe, candidates, cfg, agent)
    return proposals


def _write_same_as(store: HubStore, prop: LinkProposal, probe: EntityView,
                   candidates, cfg: SimilarityConfig, agent: str) -> str:
    views = {v.id: v for v in candidates}
    views[probe.id] = probe
    left, right = views[prop.left], views[prop.right]
    attrs = shared_attributes(left, right, cfg)
    evidence_facts = sorted(
        {f for n in attrs for v in (left, right) for f in v.attribute_facts(n)},
        key=lambda f: f.id,
    )
    act = store.new_activity(
        "link", agent,
        inputs=tuple(f.id for f in evidence_facts),
        activity_id="act-" + short_hash("link", prop.left, prop.right,
                                        *(f.id for f in evidence_facts))[:16],
    )
    # deterministic timestamp: re-proposing over the same evidence is a no-op
    recorded = max(f.envelope.recorded_at for f in evidence_facts) + timedelta(microseconds=1)
    env = MetadataEnvelope(
        source=LOCAL_SOURCE,
        activity=act.id,
        agent=agent,
        recorded_at=recorded,
        visibility=_conjoin_visibility(f.envelope.visibility for f in evidence_facts),
        confidence=prop.score,
    )
    fact = make_fact(prop.left, SAME_AS, entity_ref(prop.right), env, GENERATED)
    return store.put_fact(fact)


# ------------------------------------------------------------------- merging

def _same_as_components(store: HubStore) -> dict:
    """Union-find over sameAs facts (any partition); entity id -> root id."""
    parent: dict = {}

    def find(x):
        parent.setdefault(x, x)
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for fact in store.facts():
        if fact.predicate == SAME_AS and fact.object.is_entity:
            ra, rb = find(fact.subject), find(fact.object.value)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    return {x: find(x) for x in parent}


def merge_entities(store: HubStore, ids, curator: str) -> str:
    """Merge sameAs-connected entities into one new curated entity.

    Every constituent fact is copied (subject rewritten, source preserved,
    envelope citing a merge activity); constituents remain untouched.
    """
    ids = sorted(set(ids))
    if len(ids) < 2:
        raise HubError("merging requires at least 2 entity ids")
    concepts = {concept_of(i) for i in ids}
    if len(concepts) > 1:
        raise HubError(f"cannot merge entities of different concepts: {sorted(concepts)}")
    roots = _same_as_components(store)
    rset = {roots.get(i) for i in ids}
    if None in rset or len(rset) > 1:
        raise HubError(f"entities {ids} are not connected by sameAs links")
    concept = concepts.pop()
    merged_id = f"{concept}-m{short_hash('merge', *ids)[:15]}"

    # curation acts on the full record, not a redacted view
    constituent_facts = sorted(
        (f for f in store.facts() if f.subject in set(ids)), key=lambda f: f.id,
    )
    act = store.new_activity("merge", curator, inputs=tuple(f.id for f in constituent_facts))
    for fact in constituent_facts:
        recorded = max(act.started_at, fact.envelope.recorded_at + timedelta(microseconds=1))
        env = MetadataEnvelope(
            source=fact.envelope.source,
            activity=act.id,
            agent=curator,
            recorded_at=recorded,
            valid_from=fact.envelope.valid_from,
            valid_to=fact.envelope.valid_to,
            visibility=fact.envelope.visibility,
            confidence=fact.envelope.confidence,
            external_refs=fact.envelope.external_refs,
        )
        copy = make_fact(merged_id, fact.predicate, fact.object, env, CURATED)
        store._append_fact(copy)
    return merged_id


# ---------------------------------------------------------------- extraction

_GAZ_LINE = re.compile(r'^"([^"]+)"\s+(\S+)\s+"([^"]+)"\s*$')

_EDGE_PUNCT = ".,;:!?'\"()[]{}"


@dataclass(frozen=True)
class Gazetteer:
    entries: dict = field(default_factory=dict)  # folded surface -> (concept, canonical)

    def __post_init__(self):
        for surface in self.entries:
            if not surface.strip():
                raise ConfigError("gazetteer surface forms must be non-empty")

    @property
    def max_tokens(self) -> int:
        return max((len(s.split()) for s in self.entries), default=0)


def load_gazetteer(doc: str) -> Gazetteer:
    """Parse ``"<surface form>" <concept> "<canonical>"`` lines."""
    entries: dict = {}
    for lineno, raw in enumerate(doc.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _GAZ_LINE.match(line)
        if not m:
            raise ConfigError(f"line {lineno}: bad gazetteer entry {line!r}")
        surface = " ".join(m.group(1).casefold().split())
        entries[surface] = (m.group(2), m.group(3))
    return Gazetteer(entries)


def extract_entities(text: str, gazetteer: Gazetteer) -> list:
    """Longest-match, left-to-right scan over whitespace-token boundaries.

    Tokens are compared case-folded with edge punctuation stripped; spans
    cover the matched words in the original text. Matches never overlap.
    """
    tokens = []
    for m in re.finditer(r"\S+", text):
        word = m.group()
        head = len(word) - len(word.lstrip(_EDGE_PUNCT))
        core = word.strip(_EDGE_PUNCT)
        if not core:
            continue
        tokens.append((m.start() + head, m.start() + head + len(core), core.casefold()))
    out = []
    i = 0
    while i < len(tokens):
        matched = False
        for n in range(min(gazetteer.max_tokens, len(tokens) - i), 0, -1):
            surface = " ".join(t[2] for t in tokens[i:i + n])
            hit = gazetteer.entries.get(surface)
            if hit is not None:
                span = (tokens[i][0], tokens[i + n - 1][1])
                out.append((span, hit[0], hit[1]))
                i += n
                matched = True
                break
        if not matched:
            i += 1
    return out
