"""Source registry, parallel query dispatch, peer policy, and collation.

Each node keeps a registry of queryable sources. Dispatch fans a query out to
every capable source concurrently under one deadline; a slow source becomes a
``timeout`` partial, a broken one an ``error`` partial, and neither disturbs
the rest. Non-hub sources (CSV files, document directories) are translated
into ontology facts through their mapping rule set and stamped with a
remote-query activity; peer hubs answer in the fact-log record format and are
re-enveloped under the local source id.

When this node serves a peer, the peer's presented tokens are intersected
with the tokens this node has granted that peer: presented credentials are
never trusted blindly, and an unknown peer gets an empty (not an error)
reply. Federation is strictly single-hop: peer queries are answered from the
local store only, never re-dispatched.

Collation unions the surviving facts with local ones, proposes links across
the union, groups link-connected entities into consolidated views, and ranks
the groups; the result is invariant under the arrival order of partials.
"""

from __future__ import annotations

import json
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field

from .hubstore import (
    Fact,
    HubStore,
    KeywordQuery,
    MetadataEnvelope,
    make_fact,
    view_of,
)
from .ingest import parse_mappings, read_csv_batch, read_document_batch, transform
from .linker import SimilarityConfig, propose_over_views
from .ontology import Ontology
from .security import AuthContext, PUBLIC, authorize, parse_visibility, print_visibility
from .values import concept_of, text

SOURCE_KINDS = ("csv-file", "peer-hub", "directory-of-documents")

_KIND_CAPABILITIES = {
    "csv-file": {"keyword", "structured"},
    "peer-hub": {"keyword", "structured"},
    "directory-of-documents": {"keyword"},
}

DEFAULT_TIMEOUT = 5.0
DEFAULT_MAX_INFLIGHT = 8


class FederationError(ValueError):
    pass


@dataclass(frozen=True)
class SourceDescriptor:
    id: str
    kind: str
    endpoint: str
    capabilities: frozenset
    mapping_path: str | None = None
    mapping: object = None            # parsed MappingRuleSet for non-hub sources
    default_visibility: object = PUBLIC

    def check(self) -> None:
        if self.kind not in SOURCE_KINDS:
            raise FederationError(f"unknown source kind {self.kind!r}")
        bad = set(self.capabilities) - _KIND_CAPABILITIES[self.kind]
        if bad:
            raise FederationError(
                f"source kind {self.kind} cannot honor capabilities {sorted(bad)}"
            )
        if not self.capabilities:
            raise FederationError("source declares no capabilities")
        if self.kind == "csv-file" and self.mapping is None:
            raise FederationError("csv-file sources need a mapping rule set")

    def wire(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "endpoint": self.endpoint,
            "capabilities": sorted(self.capabilities),
            "mapping_path": self.mapping_path,
            "default_visibility": print_visibility(self.default_visibility),
        }


def descriptor_from_wire(rec: dict, onto: Ontology) -> SourceDescriptor:
    mapping = None
    if rec.get("mapping_path"):
        with open(rec["mapping_path"], encoding="utf-8") as fh:
            mapping = parse_mappings(fh.read(), onto)
    return SourceDescriptor(
        id=rec["id"],
        kind=rec["kind"],
        endpoint=rec["endpoint"],
        capabilities=frozenset(rec.get("capabilities", [])),
        mapping_path=rec.get("mapping_path"),
        mapping=mapping,
        default_visibility=parse_visibility(rec.get("default_visibility", "")),
    )


class SourceRegistry:
    def __init__(self):
        self._sources: dict = {}

    def register(self, desc: SourceDescriptor) -> None:
        desc.check()
        if desc.id in self._sources:
            raise FederationError(f"duplicate source id {desc.id!r}")
        self._sources[desc.id] = desc

    def get(self, source_id: str) -> SourceDescriptor:
        try:
            return self._sources[source_id]
        except KeyError:
            raise FederationError(f"unknown source {source_id!r}") from None

    def ids(self) -> list:
        return sorted(self._sources)

    def list(self) -> list:
        return [self._sources[i] for i in self.ids()]

    def capable(self, capability: str) -> list:
        return [d for d in self.list() if capability in d.capabilities]


@dataclass
class PartialResult:
    source: str
    status: str                 # ok | timeout | error
    facts: list = field(default_factory=list)
    error: str = ""
    elapsed: float = 0.0

    def wire(self) -> dict:
        return {
            "source": self.source,
            "status": self.status,
            "error": self.error,
            "elapsed_ms": round(self.elapsed * 1000.0, 3),
            "facts": [f.wire() for f in self.facts],
        }


@dataclass(frozen=True)
class ConsolidatedView:
    id: str                     # representative entity id (smallest member)
    members: tuple
    score: float
    facts: tuple
    sources: tuple

    def wire(self) -> dict:
        return {
            "id": self.id,
            "members": list(self.members),
            "score": self.score,
            "sources": list(self.sources),
            "facts": [f.wire() for f in self.facts],
        }


@dataclass(frozen=True)
class ConsolidatedResult:
    entities: tuple
    per_source: tuple           # PartialResult status summaries, facts omitted
    links_applied: tuple

    def wire(self) -> dict:
        return {
            "entities": [v.wire() for v in self.entities],
            "per_source": [
                {"source": p.source, "status": p.status, "error": p.error,
                 "elapsed_ms": round(p.elapsed * 1000.0, 3), "facts": len(p.facts)}
                for p in self.per_source
            ],
            "links_applied": [p.wire() for p in self.links_applied],
        }


# ----------------------------------------------------------------- adapters

def _query_capability(query) -> str:
    return "keyword" if isinstance(query, KeywordQuery) else "structured"


def _translated_store(onto: Ontology, facts, activity_id: str, agent: str) -> HubStore:
    """Ephemeral store used to evaluate a query over translated source facts."""
    tmp = HubStore(onto)
    tmp.new_activity("remote-query", agent, activity_id=activity_id)
    for f in facts:
        tmp.put_fact(f)
    return tmp


def _collect_matches(store: HubStore, query, auth: AuthContext) -> list:
    out = []
    for eid in store.run_query(query, auth):
        out.extend(store.visible_facts(eid, auth))
    return out


def query_csv_source(desc: SourceDescriptor, query, auth: AuthContext,
                     onto: Ontology, activity, store: HubStore | None = None) -> list:
    records, digest = read_csv_batch(desc.endpoint)
    # a batch this node already ingested translates to the same fact ids, so
    # collation dedupes live-source answers against the stored copies
    recorded_at = None
    if store is not None:
        from .values import short_hash
        prior = store.get_activity("act-" + short_hash("ingest", desc.id, digest)[:16])
        if prior is not None:
            recorded_at = prior.started_at
    facts, _errors = transform(records, desc.mapping, desc.id, activity,
                               default_visibility=desc.default_visibility,
                               agent="federation", recorded_at=recorded_at)
    tmp = _translated_store(onto, facts, activity.id, "federation")
    return _collect_matches(tmp, query, auth)


def query_document_source(desc: SourceDescriptor, query, auth: AuthContext,
                          onto: Ontology, activity, store: HubStore | None = None) -> list:
    if not isinstance(query, KeywordQuery):
        raise FederationError("document sources answer keyword queries only")
    docs, digest = read_document_batch(desc.endpoint)
    recorded_at = activity.started_at
    if store is not None:
        from .values import short_hash
        prior = store.get_activity("act-" + short_hash("ingest", desc.id, digest)[:16])
        if prior is not None:
            recorded_at = prior.started_at
    tokens = {t for t in query.text.lower().split() if t}
    facts = []
    from .values import entity_id
    for name, content, _data in docs:
        hay = (name + " " + content).lower()
        if not any(t in hay.split() or t in hay for t in tokens):
            continue
        doc_entity = entity_id("Document", desc.id, name)
        env = MetadataEnvelope(
            source=desc.id, activity=activity.id, agent="federation",
            recorded_at=recorded_at, visibility=desc.default_visibility,
        )
        facts.append(make_fact(doc_entity, "title", text(name), env))
        facts.append(make_fact(doc_entity, "text", text(content), env))
    tmp = _translated_store(onto, facts, activity.id, "federation")
    return _collect_matches(tmp, query, auth)


def query_peer_source(desc: SourceDescriptor, query, auth: AuthContext,
                      node_id: str, activity, timeout: float) -> list:
    """POST the query to a peer hub and re-envelope the reply locally."""
    body = json.dumps({
        "query": query.wire(),
        "tokens": sorted(auth.tokens),
    }).encode("utf-8")
    req = urllib.request.Request(
        desc.endpoint.rstrip("/") + "/peer/query",
        data=body,
        headers={"Content-Type": "application/json", "X-Peer-Id": node_id},
        method="POST",
    )
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        payload = json.loads(resp.read().decode("utf-8"))
    facts = []
    for rec in payload.get("facts", []):
        remote = Fact.from_wire(rec)
        env = MetadataEnvelope(
            source=desc.id,
            activity=activity.id,
            agent=remote.envelope.agent,
            recorded_at=remote.envelope.recorded_at,
            valid_from=remote.envelope.valid_from,
            valid_to=remote.envelope.valid_to,
            visibility=remote.envelope.visibility,
            confidence=remote.envelope.confidence,
            external_refs=remote.envelope.external_refs + (("peer-fact", remote.id),),
        )
        facts.append(make_fact(remote.subject, remote.predicate, remote.object, env))
    return facts


# ----------------------------------------------------------------- dispatch

def dispatch(store: HubStore, query, auth: AuthContext, registry: SourceRegistry,
             node_id: str = "node", timeout: float = DEFAULT_TIMEOUT,
             max_inflight: int = DEFAULT_MAX_INFLIGHT) -> list:
    """One PartialResult per capable source; failures never fail the dispatch.

    The deadline covers the whole dispatch, not each source. Remote-query
    activities are recorded in the local store so translated facts keep a
    resolvable provenance chain.
    """
    sources = registry.capable(_query_capability(query))
    if not sources:
        return []
    agent = auth.principal or "federation"
    activities = {
        d.id: store.new_activity("remote-query", agent, inputs=(d.id,))
        for d in sources
    }

    def run(desc: SourceDescriptor) -> PartialResult:
        started = time.monotonic()
        try:
            if desc.kind == "csv-file":
                facts = query_csv_source(desc, query, auth, store.ontology,
                                         activities[desc.id], store=store)
            elif desc.kind == "directory-of-documents":
                facts = query_document_source(desc, query, auth, store.ontology,
                                              activities[desc.id], store=store)
            else:
                # socket cap sits beyond the dispatch barrier: the barrier, not
                # the socket, decides what counts as a timeout
                facts = query_peer_source(desc, query, auth, node_id,
                                          activities[desc.id], timeout + 1.0)
            return PartialResult(desc.id, "ok", facts, elapsed=time.monotonic() - started)
        except Exception as exc:   # failure isolation: any error becomes a status
            return PartialResult(desc.id, "error", [], error=str(exc),
                                 elapsed=time.monotonic() - started)

    partials: dict = {}
    executor = ThreadPoolExecutor(max_workers=max(1, max_inflight))
    try:
        futures = {executor.submit(run, d): d for d in sources}
        done, not_done = wait(futures, timeout=timeout)
        for fut in done:
            partials[futures[fut].id] = fut.result()
        for fut in not_done:
            desc = futures[fut]
            partials[desc.id] = PartialResult(desc.id, "timeout", [], elapsed=timeout)
    finally:
        executor.shutdown(wait=False, cancel_futures=True)
    return [partials[d.id] for d in sources]


# -------------------------------------------------------------- peer policy

def effective_peer_auth(peer_id: str, presented_tokens, peer_grants: dict) -> AuthContext | None:
    """Intersect presented tokens with this node's grant; None for unknown peers."""
    grant = peer_grants.get(peer_id)
    if grant is None:
        return None
    tokens = frozenset(presented_tokens) & frozenset(grant)
    return AuthContext(principal=f"peer:{peer_id}", tokens=tokens)


def serve_remote(store: HubStore, query, peer_id: str, presented_tokens,
                 peer_grants: dict) -> list:
    """Answer a peer under local policy; only authorized facts leave the node."""
    auth = effective_peer_auth(peer_id, presented_tokens, peer_grants)
    if auth is None:
        return []   # unknown peer: indistinguishable from an empty store
    return _collect_matches(store, query, auth)


# ----------------------------------------------------------------- collation

def _group_score(view_facts, proposals, members) -> float:
    if not view_facts:
        return 0.0
    mean_conf = sum(f.envelope.confidence for f in view_facts) / len(view_facts)
    inside = [p.score for p in proposals if p.left in members and p.right in members]
    link_factor = sum(inside) / len(inside) if inside else 1.0
    return mean_conf * link_factor


def collate(partials, local_facts, cfg: SimilarityConfig | None,
            auth: AuthContext | None) -> ConsolidatedResult:
    """Union surviving facts with local ones, link, group, and rank.

    The output is a pure function of the *set* of partials: every internal
    ordering is canonical, so permuting the input list changes nothing.
    """
    union: dict = {}
    for f in local_facts:
        union[f.id] = f
    for p in partials:
        if p.status == "ok":
            for f in p.facts:
                union[f.id] = f
    facts = [
        f for _, f in sorted(union.items())
        if auth is None or authorize(f.envelope.visibility, auth)
    ]

    by_entity: dict = {}
    for f in facts:
        by_entity.setdefault(f.subject, []).append(f)
    views = {eid: view_of(eid, fs) for eid, fs in by_entity.items()}

    proposals: dict = {}
    if cfg is not None:
        by_concept: dict = {}
        for eid in sorted(views):
            try:
                by_concept.setdefault(concept_of(eid), []).append(eid)
            except Exception:
                continue
        for _concept, eids in sorted(by_concept.items()):
            group_views = [views[e] for e in eids]
            for probe in group_views:
                for prop in propose_over_views(probe, group_views, cfg):
                    key = (prop.left, prop.right)
                    if key not in proposals or prop.score > proposals[key].score:
                        proposals[key] = prop

    parent: dict = {eid: eid for eid in views}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for (left, right) in sorted(proposals):
        ra, rb = find(left), find(right)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    groups: dict = {}
    for eid in sorted(views):
        groups.setdefault(find(eid), []).append(eid)

    link_list = tuple(proposals[k] for k in sorted(proposals))
    consolidated = []
    for rep in sorted(groups):
        members = tuple(sorted(groups[rep]))
        group_facts = tuple(
            f for eid in members for f in sorted(views[eid].facts, key=lambda f: f.id)
        )
        sources = tuple(sorted({f.envelope.source for f in group_facts}))
        score = _group_score(group_facts, link_list, set(members))
        consolidated.append(ConsolidatedView(rep, members, score, group_facts, sources))
    consolidated.sort(key=lambda v: (-v.score, v.id))

    per_source = tuple(sorted(partials, key=lambda p: p.source))
    return ConsolidatedResult(tuple(consolidated), per_source, link_list)
