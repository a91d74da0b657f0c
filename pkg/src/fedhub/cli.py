"""Command-line interface: `serve` runs a node, everything else is a thin
HTTP client of one API call (or a local library call where no node is
needed, e.g. `ontology check`).

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import urllib.error
import urllib.request

from .ontology import OntologyError, load_ontology
from .service import ConfigurationError, load_config, serve

DEFAULT_NODE = os.environ.get("FEDHUB_NODE", "http://127.0.0.1:8700")


class CliError(Exception):
    pass


def _call(args, method: str, path: str, body=None):
    url = args.node.rstrip("/") + path
    headers = {"Content-Type": "application/json"}
    if getattr(args, "principal", None):
        headers["X-Principal"] = args.principal
    if getattr(args, "tokens", None):
        headers["X-Tokens"] = args.tokens
    data = json.dumps(body).encode("utf-8") if body is not None else None
    req = urllib.request.Request(url, data=data, headers=headers, method=method)
    try:
        with urllib.request.urlopen(req, timeout=60) as resp:
            return json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        try:
            payload = json.loads(exc.read().decode("utf-8"))
            raise CliError(payload.get("error", str(exc))) from None
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise CliError(str(exc)) from None
    except urllib.error.URLError as exc:
        raise CliError(f"cannot reach node at {args.node}: {exc.reason}") from None


def _kv_pairs(pairs) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"expected key=value, got {item!r}")
        out[key] = value
    return out


# ---------------------------------------------------------------- subcommands

def cmd_serve(args) -> int:
    try:
        config = load_config(args.config)
        server = serve(config)
    except (ConfigurationError, OntologyError, OSError, ValueError) as exc:
        print(f"refusing to start: {exc}", file=sys.stderr)
        return 1
    print(f"node {config.node_id} listening on {server.address} "
          f"(data: {config.data_dir})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def cmd_ontology_check(args) -> int:
    try:
        with open(args.file, encoding="utf-8") as fh:
            onto = load_ontology(fh.read())
    except (OSError, OntologyError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    print(f"ok: {len(onto.concepts)} concepts, {len(onto.attributes)} attributes, "
          f"{len(onto.relations)} relations (version {onto.version})")
    return 0


def cmd_ingest(args) -> int:
    report = _call(args, "POST", f"/ingest/{args.source}",
                   {"locator": os.path.abspath(args.batch)})
    c = report["counts"]
    print(f"run {report['id']}: {c['records_read']} read, {c['facts_emitted']} facts, "
          f"{c['extractions']} extractions, {c['links_proposed']} links, "
          f"{c['errors']} errors")
    return 0 if c["errors"] == 0 else 1


def cmd_query(args) -> int:
    if args.keyword:
        body: dict = {"keyword": args.keyword}
    elif args.concept:
        body = {
            "concept": args.concept,
            "where": [
                {"attr": k, "op": "=", "value": v}
                for k, v in _kv_pairs(args.where).items()
            ],
        }
    else:
        raise CliError("provide --keyword or --concept")
    body["federate"] = args.federate
    if args.as_of:
        body["as_of"] = args.as_of
    result = _call(args, "POST", "/query", body)
    for view in result["entities"]:
        sources = ",".join(view["sources"])
        print(f"{view['id']}\tscore={view['score']:.3f}\tfacts={len(view['facts'])}"
              f"\tsources={sources}")
    failures = [p for p in result["per_source"] if p["status"] != "ok"]
    for p in failures:
        print(f"# source {p['source']}: {p['status']} {p['error']}".rstrip(),
              file=sys.stderr)
    return 0


def cmd_plan_create(args) -> int:
    plan = _call(args, "POST", "/plans", {"case_ref": args.case})
    print(plan["id"])
    return 0


def cmd_plan_goal(args) -> int:
    result = _call(args, "POST", f"/plans/{args.plan}/goals",
                   {"template": args.template, "params": _kv_pairs(args.param),
                    "execute": not args.no_execute})
    plan = result["plan"]
    for eid in result["added"]:
        el = next(e for e in plan["elements"] if e["id"] == eid)
        evidence = len(plan["evidence"].get(eid, []))
        extra = f" evidence={evidence}" if el["kind"] == "info-requirement" else ""
        print(f"{eid}\t{el['kind']}\t{el['status']}\t{el['text']}{extra}")
    return 0


def cmd_plan_event(args) -> int:
    body = {"kind": args.kind, "payload": _kv_typed(args.payload)}
    if args.occurred_at:
        body["occurred_at"] = args.occurred_at
    result = _call(args, "POST", f"/plans/{args.plan}/events", body)
    print(result["event"]["id"])
    return 0


def _kv_typed(pairs) -> dict:
    out = {}
    for key, value in _kv_pairs(pairs).items():
        if value in ("true", "false"):
            out[key] = value == "true"
        else:
            try:
                out[key] = int(value) if "." not in value else float(value)
            except ValueError:
                out[key] = value
    return out


def cmd_plan_gate(args) -> int:
    decision = _call(args, "GET", f"/plans/{args.plan}/gates/{args.gate}")
    state = "OPEN" if decision["open"] else "BLOCKED"
    print(f"{args.gate}: {state}")
    for rid, text in decision["missing"]:
        print(f"  missing {rid}: {text}")
    return 0 if decision["open"] else 1


def cmd_source_add(args) -> int:
    body = {
        "id": args.id,
        "kind": args.kind,
        "endpoint": args.endpoint,
        "capabilities": args.capabilities.split(","),
        "mapping_path": os.path.abspath(args.mapping) if args.mapping else None,
        "default_visibility": args.visibility,
    }
    desc = _call(args, "POST", "/sources", body)
    print(f"registered {desc['id']} ({desc['kind']})")
    return 0


def cmd_audit_verify(args) -> int:
    result = _call(args, "GET", "/audit/verify")
    if result["ok"]:
        print(f"ok: {result['records']} records verified")
        return 0
    print(f"corrupt at seq {result['corrupt_seq']}")
    return 1


# --------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedhub",
        description="Federated knowledge-hub node: fact store, linking, "
                    "federation, and compliance-gated investigation workflow.",
    )
    parser.add_argument("--node", default=DEFAULT_NODE,
                        help="node API base URL (env FEDHUB_NODE)")
    parser.add_argument("--principal", default=os.environ.get("FEDHUB_PRINCIPAL"),
                        help="principal presented to the node")
    parser.add_argument("--tokens", default=os.environ.get("FEDHUB_TOKENS"),
                        help="comma-separated token subset to present")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run a node")
    p.add_argument("--config", help="config file (key=value lines)")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("ontology", help="ontology tools")
    osub = p.add_subparsers(dest="ontology_command", required=True)
    oc = osub.add_parser("check", help="validate an ontology file")
    oc.add_argument("file")
    oc.set_defaults(fn=cmd_ontology_check)

    p = sub.add_parser("ingest", help="run the ingestion pipeline for a source")
    p.add_argument("source")
    p.add_argument("batch")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("query", help="query the hub")
    p.add_argument("--keyword")
    p.add_argument("--concept")
    p.add_argument("--where", action="append", metavar="ATTR=VALUE")
    p.add_argument("--federate", action="store_true")
    p.add_argument("--as-of", dest="as_of")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("plan", help="investigation plans")
    psub = p.add_subparsers(dest="plan_command", required=True)
    pc = psub.add_parser("create")
    pc.add_argument("--case", required=True)
    pc.set_defaults(fn=cmd_plan_create)
    pg = psub.add_parser("goal", help="add a line of inquiry")
    pg.add_argument("plan")
    pg.add_argument("template")
    pg.add_argument("--param", action="append", metavar="SLOT=VALUE")
    pg.add_argument("--no-execute", action="store_true")
    pg.set_defaults(fn=cmd_plan_goal)
    pe = psub.add_parser("event", help="record a workflow event")
    pe.add_argument("plan")
    pe.add_argument("--kind", required=True)
    pe.add_argument("--payload", action="append", metavar="KEY=VALUE")
    pe.add_argument("--occurred-at", dest="occurred_at")
    pe.set_defaults(fn=cmd_plan_event)
    pgate = psub.add_parser("gate", help="evaluate a compliance gate")
    pgate.add_argument("plan")
    pgate.add_argument("gate")
    pgate.set_defaults(fn=cmd_plan_gate)

    p = sub.add_parser("source", help="source registry")
    ssub = p.add_subparsers(dest="source_command", required=True)
    sa = ssub.add_parser("add")
    sa.add_argument("--id", required=True)
    sa.add_argument("--kind", required=True,
                    choices=["csv-file", "peer-hub", "directory-of-documents"])
    sa.add_argument("--endpoint", required=True)
    sa.add_argument("--capabilities", default="keyword,structured")
    sa.add_argument("--mapping")
    sa.add_argument("--visibility", default="")
    sa.set_defaults(fn=cmd_source_add)

    p = sub.add_parser("audit", help="audit log tools")
    asub = p.add_subparsers(dest="audit_command", required=True)
    av = asub.add_parser("verify")
    av.set_defaults(fn=cmd_audit_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
