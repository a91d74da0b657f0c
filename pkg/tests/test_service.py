import json
import os

import pytest

from conftest import api, fixture, start_node, write_config
from fedhub.cli import main as cli_main
from fedhub.journal import CorruptJournal
from fedhub.service import ConfigurationError, Node, load_config


@pytest.fixture
def node(tmp_path):
    server = start_node(tmp_path)
    yield server
    server.shutdown()


def _url(server):
    return server.address


def _register_people(server, visibility=""):
    api(_url(server), "POST", "/sources", {
        "id": "people", "kind": "csv-file", "endpoint": fixture("people.csv"),
        "capabilities": ["keyword", "structured"],
        "mapping_path": fixture("people.map"),
        "default_visibility": visibility,
    }, principal="amy")
    status, report = api(_url(server), "POST", "/ingest/people",
                         {"locator": fixture("people.csv")}, principal="amy")
    return report


# ------------------------------------------------------------------- config

def test_config_defaults_and_overrides(tmp_path):
    path = write_config(tmp_path, extra="dispatch_timeout = 2.5\n")
    cfg = load_config(path)
    assert cfg.dispatch_timeout == 2.5
    assert cfg.operators["amy"] == {"LE", "TF"}
    assert cfg.operators["bob"] == {"LE"}


def test_env_overrides_scalar_keys(tmp_path):
    path = write_config(tmp_path)
    cfg = load_config(path, env={"FEDHUB_NODE_ID": "overridden",
                                 "FEDHUB_DISPATCH_TIMEOUT": "9"})
    assert cfg.node_id == "overridden"
    assert cfg.dispatch_timeout == 9.0


def test_nonpositive_timeout_rejected(tmp_path):
    path = write_config(tmp_path, extra="dispatch_timeout = 0\n")
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_bad_config_line_rejected(tmp_path):
    path = os.path.join(str(tmp_path), "bad.cfg")
    open(path, "w").write("node_id fedhub\n")
    with pytest.raises(ConfigurationError):
        load_config(path)


# ------------------------------------------------------------------ startup

def test_empty_data_dir_starts_healthy(node):
    status, health = api(_url(node), "GET", "/health")
    assert status == 200
    assert health["status"] == "ok"
    assert health["facts"] == 0
    assert "policy" in health


def test_restart_preserves_query_answers(tmp_path):
    server = start_node(tmp_path, "restartable")
    _register_people(server)
    _, before = api(_url(server), "POST", "/query", {"keyword": "smith"},
                    principal="amy")
    digest_before = server.node.state_digest()
    server.shutdown()

    server2 = start_node(tmp_path, "restartable")
    _, after = api(_url(server2), "POST", "/query", {"keyword": "smith"},
                   principal="amy")
    try:
        assert before == after
        assert server2.node.state_digest() == digest_before
    finally:
        server2.shutdown()


def test_corrupt_fact_log_refuses_startup(tmp_path):
    server = start_node(tmp_path, "victim")
    _register_people(server)
    data_dir = server.node.config.data_dir
    server.shutdown()

    log = os.path.join(data_dir, "facts.log")
    lines = open(log, "rb").read().splitlines(keepends=True)
    lines[2] = b'{"garbage": tru\n'
    open(log, "wb").write(b"".join(lines))
    with pytest.raises(CorruptJournal) as err:
        Node(load_config(write_config(tmp_path, "victim")))
    assert err.value.lineno == 3


def test_torn_tail_is_dropped_not_fatal(tmp_path):
    server = start_node(tmp_path, "torn")
    report = _register_people(server)
    data_dir = server.node.config.data_dir
    count = server.node.store.fact_count()
    server.shutdown()

    log = os.path.join(data_dir, "facts.log")
    with open(log, "ab") as fh:
        fh.write(b'{"id": "half-written')   # no newline: torn append
    node = Node(load_config(write_config(tmp_path, "torn")))
    assert node.store.fact_count() == count
    node.close()


# ---------------------------------------------------------------- endpoints

def test_ingest_and_entity_fetch(node):
    report = _register_people(node)
    assert report["counts"] == {"records_read": 10, "facts_emitted": 20,
                                "extractions": 0, "links_proposed": 0, "errors": 0}
    _, res = api(_url(node), "POST", "/query", {"keyword": "smith"}, principal="amy")
    eid = res["entities"][0]["id"]
    _, view = api(_url(node), "GET", f"/entities/{eid}", principal="amy")
    assert view["concept"] == "Person"
    assert len(view["facts"]) == 2


def test_query_redaction_via_tokens_header(node):
    _register_people(node, visibility="LE")
    _, with_le = api(_url(node), "POST", "/query", {"keyword": "smith"},
                     principal="amy", tokens="LE")
    _, without = api(_url(node), "POST", "/query", {"keyword": "smith"},
                     principal="amy", tokens="")
    assert with_le["entities"] and not without["entities"]


def test_tokens_header_cannot_exceed_grant(node):
    _register_people(node, visibility="ORG")
    # amy's grant is LE,TF; requesting ORG gives nothing
    _, res = api(_url(node), "POST", "/query", {"keyword": "smith"},
                 principal="amy", tokens="ORG")
    assert res["entities"] == []


def test_provenance_endpoint(node):
    _register_people(node)
    _, res = api(_url(node), "POST", "/query", {"keyword": "smith"}, principal="amy")
    fact_id = res["entities"][0]["facts"][0]["id"]
    _, prov = api(_url(node), "GET", f"/facts/{fact_id}/provenance", principal="amy")
    assert [a["kind"] for a in prov["chain"]] == ["ingest"]
    assert "people" in prov["chain"][0]["inputs"]


def test_provenance_hidden_fact_is_404(node):
    _register_people(node, visibility="LE")
    _, res = api(_url(node), "POST", "/query", {"keyword": "smith"},
                 principal="amy", tokens="LE")
    fact_id = res["entities"][0]["facts"][0]["id"]
    status, _ = api(_url(node), "GET", f"/facts/{fact_id}/provenance",
                    principal="amy", tokens="", expect_error=True)
    assert status == 404


def test_unknown_route_404(node):
    status, err = api(_url(node), "GET", "/nope", expect_error=True)
    assert status == 404


def test_bad_json_body_400(node):
    import urllib.request
    req = urllib.request.Request(_url(node) + "/query", data=b"{nope",
                                 headers={"Content-Type": "application/json"},
                                 method="POST")
    import urllib.error
    with pytest.raises(urllib.error.HTTPError) as err:
        urllib.request.urlopen(req, timeout=10)
    assert err.value.code == 400


def test_structured_query_endpoint(node):
    _register_people(node)
    _, res = api(_url(node), "POST", "/query",
                 {"concept": "Person",
                  "where": [{"attr": "name", "op": "=", "value": "John Smith"}]},
                 principal="amy")
    assert len(res["entities"]) == 1


def test_plan_goal_event_gate_flow(node):
    _register_people(node)
    api(_url(node), "POST", "/sources", {
        "id": "court", "kind": "csv-file", "endpoint": fixture("criminal_history.csv"),
        "capabilities": ["keyword", "structured"],
        "mapping_path": fixture("criminal_history.map"), "default_visibility": "",
    }, principal="amy")
    api(_url(node), "POST", "/ingest/court",
        {"locator": fixture("criminal_history.csv")}, principal="amy")

    _, plan = api(_url(node), "POST", "/plans", {"case_ref": "CASE-9"}, principal="amy")
    pid = plan["id"]
    _, goal = api(_url(node), "POST", f"/plans/{pid}/goals",
                  {"template": "criminal-history", "params": {"subject": "John Smith"}},
                  principal="amy")
    req_el = goal["added"][1]
    evidence = goal["plan"]["evidence"][req_el]
    assert len(evidence) == 8   # both John Smith records, 4 attributes each

    _, gate = api(_url(node), "GET", f"/plans/{pid}/gates/issue-warrant",
                  principal="amy")
    assert gate["open"] is False and len(gate["missing"]) == 5

    for kind, payload in [
        ("sworn-statement-recorded", {}),
        ("grounds-asserted", {"present_now": True}),
        ("offence-described", {"text": "burglary"}),
        ("premises-described", {"address": "12 High St"}),
        ("material-kinds-listed", {"kinds": "stolen goods"}),
    ]:
        api(_url(node), "POST", f"/plans/{pid}/events",
            {"kind": kind, "payload": payload}, principal="amy")
    _, gate = api(_url(node), "GET", f"/plans/{pid}/gates/issue-warrant",
                  principal="amy")
    assert gate["open"] is True and gate["missing"] == []


def test_dry_run_gate_does_not_mutate(node):
    _, plan = api(_url(node), "POST", "/plans", {"case_ref": "X"}, principal="amy")
    pid = plan["id"]
    digest_before = node.node.state_digest()
    _, decision = api(_url(node), "POST", f"/plans/{pid}/gates/issue-warrant",
                      {"dry_run": True, "hypothetical_events": [
                          {"kind": "sworn-statement-recorded",
                           "occurred_at": "2024-01-01T00:00:00Z", "payload": {}},
                      ]}, principal="amy")
    assert decision["dry_run"] is True
    assert {m[0] for m in decision["missing"]} == {"r2", "r3", "r4", "r5"}
    assert node.node.state_digest() == digest_before
    _, plan_after = api(_url(node), "GET", f"/plans/{pid}", principal="amy")
    assert plan_after["events"] == []


def test_out_of_order_event_400(node):
    _, plan = api(_url(node), "POST", "/plans", {"case_ref": "X"}, principal="amy")
    pid = plan["id"]
    api(_url(node), "POST", f"/plans/{pid}/events",
        {"kind": "a", "occurred_at": "2024-01-02T00:00:00Z"}, principal="amy")
    status, err = api(_url(node), "POST", f"/plans/{pid}/events",
                      {"kind": "b", "occurred_at": "2024-01-01T00:00:00Z"},
                      principal="amy", expect_error=True)
    assert status == 400


def test_peer_query_intersection(tmp_path):
    server = start_node(tmp_path, "nodeB", extra="peer_grant.nodeA = LE\n")
    try:
        _register_people(server, visibility="LE")
        _, reply = api(_url(server), "POST", "/peer/query",
                       {"query": {"keyword": "smith"}, "tokens": ["LE", "TF"]},
                       peer="nodeA")
        assert reply["facts"]
        _, reply2 = api(_url(server), "POST", "/peer/query",
                        {"query": {"keyword": "smith"}, "tokens": ["TF"]},
                        peer="nodeA")
        assert reply2["facts"] == []
        _, reply3 = api(_url(server), "POST", "/peer/query",
                        {"query": {"keyword": "smith"}, "tokens": ["LE"]},
                        peer="mallory")
        assert reply3["facts"] == []
    finally:
        server.shutdown()


def test_two_node_federated_query(tmp_path):
    b = start_node(tmp_path, "nodeB", extra="peer_grant.nodeA = LE\n")
    a = start_node(tmp_path, "nodeA")
    try:
        _register_people(b, visibility="LE")
        api(_url(a), "POST", "/sources", {
            "id": "nodeB", "kind": "peer-hub", "endpoint": _url(b),
            "capabilities": ["keyword", "structured"],
        }, principal="amy")
        _, res = api(_url(a), "POST", "/query",
                     {"keyword": "smith", "federate": True},
                     principal="amy", tokens="LE,TF")
        assert res["per_source"] == [
            {"source": "nodeB", "status": "ok",
             "error": "", "elapsed_ms": res["per_source"][0]["elapsed_ms"], "facts": 2}]
        assert len(res["entities"]) == 1
        assert res["entities"][0]["sources"] == ["nodeB"]
    finally:
        a.shutdown()
        b.shutdown()


def test_audit_verify_endpoint(node):
    _register_people(node)
    _, res = api(_url(node), "GET", "/audit/verify")
    assert res["ok"] is True and res["records"] >= 2


def test_duplicate_source_registration_400(node):
    _register_people(node)
    status, err = api(_url(node), "POST", "/sources", {
        "id": "people", "kind": "csv-file", "endpoint": fixture("people.csv"),
        "capabilities": ["keyword"], "mapping_path": fixture("people.map"),
        "default_visibility": "",
    }, principal="amy", expect_error=True)
    assert status == 400 and "duplicate" in err["error"]


def test_ontology_endpoint(node):
    _, res = api(_url(node), "GET", "/ontology?pattern=owns&kind=relation")
    assert [d["name"] for d in res["definitions"]] == [
        "ownsAccount", "ownsDevice", "ownsPremises", "ownsVehicle", "ownsWeapon"]


# ---------------------------------------------------------------------- CLI

def test_cli_ontology_check_ok(capsys):
    from conftest import bundled
    assert cli_main(["ontology", "check", bundled("reference.ont")]) == 0
    assert "ok:" in capsys.readouterr().out


def test_cli_ontology_check_invalid(tmp_path, capsys):
    bad = tmp_path / "bad.ont"
    bad.write_text("concept Entity\nconcept A parent=A\n")
    assert cli_main(["ontology", "check", str(bad)]) == 1
    assert "cycle" in capsys.readouterr().err


def test_cli_usage_error_exits_2():
    with pytest.raises(SystemExit) as err:
        cli_main(["query", "--bogus-flag"])
    assert err.value.code == 2


def test_cli_query_passthrough(node, capsys):
    _register_people(node)
    code = cli_main(["--node", _url(node), "--principal", "amy",
                     "query", "--keyword", "smith"])
    out = capsys.readouterr().out
    assert code == 0
    lines = [l for l in out.strip().splitlines() if l]
    assert len(lines) == 1 and lines[0].startswith("Person-")


def test_cli_source_add_and_ingest(node, capsys):
    code = cli_main(["--node", _url(node), "--principal", "amy",
                     "source", "add", "--id", "people", "--kind", "csv-file",
                     "--endpoint", fixture("people.csv"),
                     "--mapping", fixture("people.map")])
    assert code == 0
    code = cli_main(["--node", _url(node), "--principal", "amy",
                     "ingest", "people", fixture("people.csv")])
    out = capsys.readouterr().out
    assert code == 0
    assert "10 read, 20 facts" in out


def test_cli_plan_flow(node, capsys):
    _register_people(node)
    assert cli_main(["--node", _url(node), "--principal", "amy",
                     "plan", "create", "--case", "CASE-1"]) == 0
    pid = capsys.readouterr().out.strip()
    assert cli_main(["--node", _url(node), "--principal", "amy",
                     "plan", "goal", pid, "criminal-history",
                     "--param", "subject=John Smith"]) == 0
    capsys.readouterr()
    assert cli_main(["--node", _url(node), "--principal", "amy",
                     "plan", "event", pid, "--kind", "sworn-statement-recorded"]) == 0
    capsys.readouterr()
    code = cli_main(["--node", _url(node), "--principal", "amy",
                     "plan", "gate", pid, "issue-warrant"])
    out = capsys.readouterr().out
    assert code == 1   # gate still blocked
    assert "BLOCKED" in out and "r2" in out


def test_cli_audit_verify_detects_corruption(tmp_path, capsys):
    server = start_node(tmp_path, "auditable")
    try:
        _register_people(server)
        assert cli_main(["--node", _url(server), "audit", "verify"]) == 0
        data_dir = server.node.config.data_dir
        # flip a byte in the persisted log, reload records in place
        path = os.path.join(data_dir, "audit.log")
        raw = bytearray(open(path, "rb").read())
        idx = raw.find(b'"arg_digest":"') + len(b'"arg_digest":"')
        raw[idx] = ord("0") if raw[idx] != ord("0") else ord("1")
        open(path, "wb").write(bytes(raw))
        from fedhub.workflow import AuditLog
        server.node.audit = AuditLog(path).load()
        code = cli_main(["--node", _url(server), "audit", "verify"])
        out = capsys.readouterr().out
        assert code == 1
        assert "corrupt at seq" in out
    finally:
        server.shutdown()


def test_cli_unreachable_node(capsys):
    code = cli_main(["--node", "http://127.0.0.1:1", "query", "--keyword", "x"])
    assert code == 1
    assert "cannot reach node" in capsys.readouterr().err
