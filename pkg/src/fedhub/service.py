"""The node's process shell: configuration, wiring, and the HTTP API.

One process is one knowledge-hub node: it replays its journals into memory,
refuses to start on a corrupt log, then serves the query/ingest/plan/peer
endpoints. Authentication is a static principal-to-token map in the config
(demo grade, documented as such); peers are identified by the X-Peer-Id
header and constrained by the node's peer grants.

Config file: UTF-8 ``key=value`` lines, ``#`` comments. Environment variables
override scalar keys with the ``FEDHUB_`` prefix (``FEDHUB_DATA_DIR`` wins
over ``data_dir``). ``operator.<principal>`` and ``peer_grant.<peer>`` lines
hold comma-separated token sets.
"""

from __future__ import annotations

import json
import os
import re
import threading
import urllib.parse
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import __version__
from .federation import (
    DEFAULT_MAX_INFLIGHT,
    DEFAULT_TIMEOUT,
    FederationError,
    SourceRegistry,
    collate,
    descriptor_from_wire,
    dispatch,
    serve_remote,
)
from .hubstore import (
    AccessDenied,
    HubError,
    HubStore,
    UnknownId,
    query_from_wire,
)
from .ingest import MappingError, SourceUnreadable, run_pipeline
from .journal import CorruptJournal, Journal
from .linker import ConfigError, load_gazetteer, load_similarity_config
from .ontology import OntologyError, load_ontology, ontology_query
from .security import AuthContext, VisibilityError
from .values import parse_rfc3339, utcnow, ValueError_
from .workflow import (
    AuditLog,
    InvestigationPlan,
    WorkflowError,
    WorkflowEvent,
    evaluate_gate,
    execute_info_requirement,
    instantiate_goal,
    parse_rules,
    parse_templates,
    record_event,
    verify_audit,
)

_DATA_DIR = os.path.join(os.path.dirname(__file__), "data")

DEFAULTS = {
    "node_id": "node",
    "listen": "127.0.0.1:8700",
    "data_dir": "./fedhub-data",
    "ontology": os.path.join(_DATA_DIR, "reference.ont"),
    "rules": os.path.join(_DATA_DIR, "warrant.rules"),
    "templates": os.path.join(_DATA_DIR, "tasks.tmpl"),
    "similarity": os.path.join(_DATA_DIR, "fixtures", "linker.cfg"),
    "gazetteer": os.path.join(_DATA_DIR, "fixtures", "gazetteer.txt"),
    "dispatch_timeout": "5",
    "max_inflight": str(DEFAULT_MAX_INFLIGHT),
    "policy_cross_team_access": "false",
    "policy_retain_collected_data": "false",
}


class ConfigurationError(ValueError):
    pass


@dataclass
class NodeConfig:
    node_id: str = "node"
    listen_host: str = "127.0.0.1"
    listen_port: int = 8700
    data_dir: str = "./fedhub-data"
    ontology_path: str = DEFAULTS["ontology"]
    rules_path: str = DEFAULTS["rules"]
    templates_path: str = DEFAULTS["templates"]
    similarity_path: str = DEFAULTS["similarity"]
    gazetteer_path: str = DEFAULTS["gazetteer"]
    dispatch_timeout: float = DEFAULT_TIMEOUT
    max_inflight: int = DEFAULT_MAX_INFLIGHT
    peer_grants: dict = field(default_factory=dict)      # peer id -> set(tokens)
    operators: dict = field(default_factory=dict)        # principal -> set(tokens)
    policy_cross_team_access: bool = False
    policy_retain_collected_data: bool = False

    def check(self) -> None:
        if self.dispatch_timeout <= 0:
            raise ConfigurationError("dispatch_timeout must be positive")
        if self.max_inflight < 1:
            raise ConfigurationError("max_inflight must be at least 1")
        os.makedirs(self.data_dir, exist_ok=True)
        if not os.path.exists(self.ontology_path):
            raise ConfigurationError(f"ontology file {self.ontology_path!r} does not exist")


def _parse_bool(raw: str) -> bool:
    return raw.strip().lower() in ("1", "true", "yes", "on")


def load_config(path: str | None = None, env: dict | None = None) -> NodeConfig:
    env = os.environ if env is None else env
    values = dict(DEFAULTS)
    peer_grants: dict = {}
    operators: dict = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise ConfigurationError(f"{path}:{lineno}: expected key=value")
                key, value = key.strip(), value.strip()
                if key.startswith("peer_grant."):
                    peer_grants[key[len("peer_grant."):]] = _token_set(value)
                elif key.startswith("operator."):
                    operators[key[len("operator."):]] = _token_set(value)
                else:
                    values[key] = value
    for key in list(values):
        env_key = "FEDHUB_" + key.upper()
        if env_key in env:
            values[env_key[7:].lower()] = env[env_key]
    host, _, port = values["listen"].partition(":")
    try:
        cfg = NodeConfig(
            node_id=values["node_id"],
            listen_host=host or "127.0.0.1",
            listen_port=int(port or "8700"),
            data_dir=values["data_dir"],
            ontology_path=values["ontology"],
            rules_path=values["rules"],
            templates_path=values["templates"],
            similarity_path=values["similarity"],
            gazetteer_path=values["gazetteer"],
            dispatch_timeout=float(values["dispatch_timeout"]),
            max_inflight=int(values["max_inflight"]),
            peer_grants=peer_grants,
            operators=operators,
            policy_cross_team_access=_parse_bool(values["policy_cross_team_access"]),
            policy_retain_collected_data=_parse_bool(values["policy_retain_collected_data"]),
        )
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    cfg.check()
    return cfg


def _token_set(raw: str) -> set:
    return {t.strip() for t in raw.split(",") if t.strip()}


class Node:
    """All node state wired together; the HTTP handler is a thin layer on this."""

    def __init__(self, config: NodeConfig):
        self.config = config
        with open(config.ontology_path, encoding="utf-8") as fh:
            self.ontology = load_ontology(fh.read())
        self.store = HubStore(self.ontology, config.data_dir).open()
        self.audit = AuditLog(os.path.join(config.data_dir, "audit.log")).load()
        corrupt = verify_audit(self.audit.records)
        if corrupt is not None:
            raise CorruptJournal(os.path.join(config.data_dir, "audit.log"), corrupt,
                                 "audit hash chain does not verify")
        with open(config.rules_path, encoding="utf-8") as fh:
            self.rule_pack = parse_rules(fh.read())
        with open(config.templates_path, encoding="utf-8") as fh:
            self.templates = parse_templates(fh.read())
        self.similarity = None
        if os.path.exists(config.similarity_path):
            with open(config.similarity_path, encoding="utf-8") as fh:
                self.similarity = load_similarity_config(fh.read())
        self.gazetteer = None
        if os.path.exists(config.gazetteer_path):
            with open(config.gazetteer_path, encoding="utf-8") as fh:
                self.gazetteer = load_gazetteer(fh.read())

        self.registry = SourceRegistry()
        self._sources_log = Journal(os.path.join(config.data_dir, "sources.log"))
        for rec in self._sources_log.replay():
            self.registry.register(descriptor_from_wire(rec, self.ontology))

        self.plans: dict = {}
        self._plans_log = Journal(os.path.join(config.data_dir, "plans.log"))
        for rec in self._plans_log.replay():
            plan = InvestigationPlan.from_wire(rec)
            self.plans[plan.id] = plan

        self._plan_locks: dict = {}
        self._locks_guard = threading.Lock()

    # ------------------------------------------------------------------ auth

    def auth_for(self, principal: str | None, requested_tokens=None) -> AuthContext:
        """Static map lookup; requested tokens are intersected with the grant."""
        granted = frozenset(self.config.operators.get(principal or "", ()))
        if requested_tokens is not None:
            granted = granted & frozenset(requested_tokens)
        return AuthContext(principal=principal or "", tokens=granted)

    def _plan_lock(self, plan_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._plan_locks.setdefault(plan_id, threading.Lock())

    # --------------------------------------------------------------- actions

    def add_source(self, rec: dict):
        desc = descriptor_from_wire(rec, self.ontology)
        self.registry.register(desc)
        self._sources_log.append(desc.wire())
        self.audit.append("system", "register_source", {"id": desc.id}, {"ok": True})
        return desc

    def ingest(self, source_id: str, locator: str, actor: str = "system"):
        desc = self.registry.get(source_id)
        run = run_pipeline(
            self.store, desc, locator,
            gazetteer=self.gazetteer, link_cfg=self.similarity, agent=actor,
        )
        self.audit.append(actor, "ingest", {"source": source_id, "locator": locator},
                          run.wire()["counts"])
        return run

    def query(self, query, auth: AuthContext, federate: bool = False, as_of=None):
        local_ids = self.store.run_query(query, auth, as_of)
        local_facts = [
            f for eid in local_ids for f in self.store.visible_facts(eid, auth, as_of)
        ]
        partials = []
        if federate:
            partials = dispatch(
                self.store, query, auth, self.registry,
                node_id=self.config.node_id,
                timeout=self.config.dispatch_timeout,
                max_inflight=self.config.max_inflight,
            )
        return collate(partials, local_facts, self.similarity, auth)

    def create_plan(self, case_ref: str, actor: str) -> InvestigationPlan:
        plan_id = f"plan-{len(self.plans) + 1:04d}"
        while plan_id in self.plans:
            plan_id = f"plan-{int(plan_id.split('-')[1]) + 1:04d}"
        plan = InvestigationPlan(plan_id, case_ref)
        self.plans[plan_id] = plan
        self.audit.append(actor, "create_plan", {"case_ref": case_ref}, {"id": plan_id})
        self.save_plan(plan)
        return plan

    def get_plan(self, plan_id: str) -> InvestigationPlan:
        plan = self.plans.get(plan_id)
        if plan is None:
            raise WorkflowError(f"unknown plan {plan_id!r}")
        return plan

    def save_plan(self, plan: InvestigationPlan) -> None:
        self._plans_log.append(plan.wire())

    def add_goal(self, plan_id: str, template_id: str, params: dict,
                 auth: AuthContext, execute: bool = True) -> list:
        plan = self.get_plan(plan_id)
        with self._plan_lock(plan_id):
            added = instantiate_goal(self.templates, template_id, params, plan,
                                     audit=self.audit, actor=auth.principal)
            if execute:
                for eid in added:
                    el = plan.elements[eid]
                    if el.kind == "info-requirement":
                        execute_info_requirement(eid, plan, self.store, auth,
                                                 audit=self.audit, actor=auth.principal)
            self.save_plan(plan)
        return added

    def execute_element(self, plan_id: str, element_id: str, auth: AuthContext) -> list:
        plan = self.get_plan(plan_id)
        with self._plan_lock(plan_id):
            fact_ids = execute_info_requirement(element_id, plan, self.store, auth,
                                                audit=self.audit, actor=auth.principal)
            self.save_plan(plan)
        return fact_ids

    def add_event(self, plan_id: str, kind: str, occurred_at, actor: str,
                  payload=None, linked_facts=()) -> WorkflowEvent:
        plan = self.get_plan(plan_id)
        with self._plan_lock(plan_id):
            event = record_event(plan, kind, occurred_at, actor, payload, linked_facts,
                                 rule_pack=self.rule_pack, store=self.store,
                                 audit=self.audit)
            self.save_plan(plan)
        return event

    def gate_decision(self, plan_id: str, gate: str, hypothetical_events=None):
        plan = self.get_plan(plan_id)
        if hypothetical_events:
            # dry-run: evaluate against a copy; server state stays untouched
            plan = InvestigationPlan.from_wire(plan.wire())
            for rec in hypothetical_events:
                rec = dict(rec)
                rec.setdefault("id", plan.next_event_id())
                rec.setdefault("actor", "dry-run")
                plan.events.append(WorkflowEvent.from_wire(rec))
            plan.events.sort(key=lambda e: e.occurred_at)
        return evaluate_gate(gate, plan, self.rule_pack, self.store)

    def state_digest(self) -> str:
        """Digest over store + plans + audit; dry-runs must not change it."""
        from .values import short_hash
        plans = "".join(json.dumps(self.plans[p].wire(), sort_keys=True)
                        for p in sorted(self.plans))
        tail = self.audit.records[-1].this_hash if self.audit.records else ""
        return short_hash(self.store.snapshot_bytes().decode("utf-8"), plans, tail)

    def close(self) -> None:
        self.store.close()
        self.audit.close()
        self._sources_log.close()
        self._plans_log.close()


# ---------------------------------------------------------------------- HTTP

_ROUTES = []


def route(method: str, pattern: str):
    compiled = re.compile("^" + pattern + "$")

    def wrap(fn):
        _ROUTES.append((method, compiled, fn))
        return fn

    return wrap


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def _as_of_from(params: dict):
    raw = params.get("as_of")
    return parse_rfc3339(raw) if raw else None


@route("GET", r"/health")
def _health(node, req, m, body):
    return {
        "status": "ok",
        "node": node.config.node_id,
        "version": __version__,
        "facts": node.store.fact_count(),
        "digest": node.state_digest(),
        "policy": {
            "cross_team_access": node.config.policy_cross_team_access,
            "retain_collected_data": node.config.policy_retain_collected_data,
        },
    }


@route("GET", r"/whoami")
def _whoami(node, req, m, body):
    granted = sorted(node.config.operators.get(req.auth.principal or "", ()))
    return {"principal": req.auth.principal, "granted": granted,
            "presented": sorted(req.auth.tokens)}


@route("GET", r"/ontology")
def _ontology(node, req, m, body):
    defs = ontology_query(node.ontology, req.params.get("pattern", ""),
                          req.params.get("kind") or None)
    out = []
    for d in defs:
        rec = {"name": d.name, "kind": type(d).__name__.replace("Def", "").lower()}
        for attr in ("parent", "domain", "range", "datatype"):
            if getattr(d, attr, None) is not None:
                rec[attr] = getattr(d, attr)
        out.append(rec)
    return {"definitions": out, "version": node.ontology.version}


@route("GET", r"/entities/(?P<id>[^/]+)")
def _get_entity(node, req, m, body):
    view = node.store.get_entity(m["id"], req.auth, _as_of_from(req.params))
    return {"id": view.id, "concept": view.concept,
            "facts": [f.wire() for f in view.facts]}


@route("POST", r"/query")
def _query(node, req, m, body):
    query = query_from_wire(body)
    as_of = parse_rfc3339(body["as_of"]) if body.get("as_of") else None
    result = node.query(query, req.auth, federate=bool(body.get("federate")), as_of=as_of)
    return result.wire()


@route("POST", r"/ingest/(?P<source>[^/]+)")
def _ingest(node, req, m, body):
    run = node.ingest(m["source"], body["locator"], actor=req.auth.principal or "system")
    return run.wire()


@route("POST", r"/sources")
def _add_source(node, req, m, body):
    desc = node.add_source(body)
    return desc.wire()


@route("GET", r"/sources")
def _list_sources(node, req, m, body):
    return {"sources": [d.wire() for d in node.registry.list()]}


@route("GET", r"/facts/(?P<id>[^/]+)/provenance")
def _provenance(node, req, m, body):
    from .security import authorize
    fact = node.store.get_fact(m["id"])
    if not authorize(fact.envelope.visibility, req.auth):
        raise ApiError(404, f"unknown fact {m['id']!r}")   # no existence leak
    chain = node.store.provenance_chain(m["id"])
    return {"fact": fact.wire(), "chain": [a.wire() for a in chain]}


@route("POST", r"/plans")
def _create_plan(node, req, m, body):
    plan = node.create_plan(body.get("case_ref", ""), req.auth.principal or "system")
    return plan.wire()


@route("GET", r"/plans")
def _list_plans(node, req, m, body):
    return {"plans": sorted(node.plans)}


@route("GET", r"/plans/(?P<id>[^/]+)")
def _get_plan(node, req, m, body):
    return node.get_plan(m["id"]).wire()


@route("POST", r"/plans/(?P<id>[^/]+)/goals")
def _add_goal(node, req, m, body):
    added = node.add_goal(m["id"], body["template"], body.get("params", {}),
                          req.auth, execute=body.get("execute", True))
    return {"added": added, "plan": node.get_plan(m["id"]).wire()}


@route("POST", r"/plans/(?P<id>[^/]+)/events")
def _add_event(node, req, m, body):
    occurred = parse_rfc3339(body["occurred_at"]) if body.get("occurred_at") else utcnow()
    event = node.add_event(m["id"], body["kind"], occurred,
                           req.auth.principal or body.get("actor", "operator"),
                           body.get("payload"), body.get("linked_facts", ()))
    plan = node.get_plan(m["id"])
    return {"event": event.wire(), "gate_decisions": plan.gate_decisions}


def _gate_payload(node, decision) -> dict:
    rules = node.rule_pack.gate_rules(decision.gate)
    return {**decision.wire(),
            "rules": [{"id": r.id, "citation": r.citation} for r in rules]}


@route("GET", r"/plans/(?P<id>[^/]+)/gates/(?P<gate>[^/]+)")
def _gate(node, req, m, body):
    return _gate_payload(node, node.gate_decision(m["id"], m["gate"]))


@route("POST", r"/plans/(?P<id>[^/]+)/gates/(?P<gate>[^/]+)")
def _gate_dry_run(node, req, m, body):
    decision = node.gate_decision(m["id"], m["gate"],
                                  hypothetical_events=body.get("hypothetical_events"))
    return {"dry_run": bool(body.get("hypothetical_events")),
            **_gate_payload(node, decision)}


@route("POST", r"/plans/(?P<id>[^/]+)/elements/(?P<el>[^/]+)/execute")
def _execute_element(node, req, m, body):
    fact_ids = node.execute_element(m["id"], m["el"], req.auth)
    return {"element": m["el"], "facts": fact_ids}


@route("POST", r"/peer/query")
def _peer_query(node, req, m, body):
    peer_id = req.headers.get("X-Peer-Id", "")
    query = query_from_wire(body.get("query", body))
    facts = serve_remote(node.store, query, peer_id, body.get("tokens", ()),
                         node.config.peer_grants)
    return {"facts": [f.wire() for f in facts]}


@route("GET", r"/audit/verify")
def _audit_verify(node, req, m, body):
    corrupt = verify_audit(node.audit.records)
    if corrupt is None:
        return {"ok": True, "records": len(node.audit.records)}
    return {"ok": False, "corrupt_seq": corrupt}


@dataclass
class _Request:
    headers: dict
    params: dict
    auth: AuthContext


class _Handler(BaseHTTPRequestHandler):
    node: Node = None   # set by serve()
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):   # quiet by default
        pass

    def _dispatch(self, method: str):
        parsed = urllib.parse.urlsplit(self.path)
        params = dict(urllib.parse.parse_qsl(parsed.query))
        body = {}
        length = int(self.headers.get("Content-Length") or 0)
        if length:
            try:
                body = json.loads(self.rfile.read(length).decode("utf-8"))
            except (json.JSONDecodeError, UnicodeDecodeError):
                return self._send(400, {"error": "request body is not valid JSON"})
        principal = self.headers.get("X-Principal")
        requested = None
        if "X-Tokens" in self.headers:
            requested = _token_set(self.headers["X-Tokens"])
        auth = self.node.auth_for(principal, requested)
        req = _Request(headers=dict(self.headers), params=params, auth=auth)
        for m_method, pattern, fn in _ROUTES:
            if m_method != method:
                continue
            m = pattern.match(parsed.path)
            if m:
                try:
                    return self._send(200, fn(self.node, req, m.groupdict(), body))
                except ApiError as exc:
                    return self._send(exc.status, {"error": str(exc)})
                except (UnknownId,) as exc:
                    return self._send(404, {"error": str(exc)})
                except AccessDenied as exc:
                    return self._send(403, {"error": str(exc)})
                except (HubError, OntologyError, WorkflowError, FederationError,
                        MappingError, SourceUnreadable, ConfigError, VisibilityError,
                        ValueError_, KeyError) as exc:
                    return self._send(400, {"error": str(exc)})
                except Exception as exc:   # pragma: no cover - last resort
                    return self._send(500, {"error": f"internal error: {exc}"})
        return self._send(404, {"error": f"no route for {method} {parsed.path}"})

    def _send(self, status: int, payload: dict):
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers",
                         "Content-Type, X-Principal, X-Tokens, X-Peer-Id")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_OPTIONS(self):
        self._send(200, {})


class NodeServer:
    """A running node: the HTTP server plus its wired state."""

    def __init__(self, node: Node):
        self.node = node
        handler = type("BoundHandler", (_Handler,), {"node": node})
        self.httpd = ThreadingHTTPServer(
            (node.config.listen_host, node.config.listen_port), handler
        )
        self.httpd.daemon_threads = True

    @property
    def address(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def serve_forever(self):
        self.httpd.serve_forever()

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        thread.start()
        return thread

    def shutdown(self):
        self.httpd.shutdown()
        self.httpd.server_close()
        self.node.close()


def serve(config: NodeConfig) -> NodeServer:
    """Build the node (replaying logs; fail-closed on corruption) and bind."""
    node = Node(config)
    return NodeServer(node)
