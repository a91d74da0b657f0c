"""Acceptance suite: one test per acceptance criterion, run at its stated
tolerance. Each prints a PASS line on success (visible with -s / -rA)."""

import itertools
import json
import os
import random
import statistics
import subprocess
import sys
import time
from datetime import datetime, timedelta, timezone

from conftest import StoreBuilder, api, bundled, fixture, start_node, write_config
from fedhub.federation import PartialResult, SourceDescriptor, collate
from fedhub.hubstore import HubStore
from fedhub.ingest import parse_mappings, run_pipeline
from fedhub.linker import SimilarityConfig, pair_similarity
from fedhub.ontology import load_ontology
from fedhub.security import (
    And,
    AuthContext,
    Or,
    Token,
    authorize,
    canonicalize,
    parse_visibility,
    print_visibility,
    redact_facts,
)
from fedhub.service import Node, load_config
from fedhub.workflow import evaluate_gate, load_bundled_rules, verify_audit

ANON = AuthContext(tokens=frozenset())


def ok(name):
    print(f"\nACCEPTANCE PASS: {name}")


TOKENS10 = ["T0", "T1", "T2", "T3", "T4", "T5", "T6", "T7", "T8", "T9"]


def _random_expr(rng, depth, tokens):
    if depth <= 0 or rng.random() < 0.4:
        return Token(rng.choice(tokens))
    op = rng.choice([And, Or])
    return op(tuple(_random_expr(rng, depth - 1, tokens)
                    for _ in range(rng.randint(2, 3))))


# 1 ---------------------------------------------------------------------------

def test_redaction_equivalence_exhaustive_auth_space(builder):
    """<= 200 facts over <= 10 tokens, all 2^10 auth subsets, vs a compiled
    Python-boolean oracle built from the printed expression text."""
    rng = random.Random(20240601)
    facts = []
    for i in range(200):
        expr = _random_expr(rng, rng.randint(0, 4), TOKENS10)
        facts.append(builder.fact("Person-p1", "alias", f"v{i}",
                                  vis=print_visibility(expr)))

    def compile_oracle(expr_text):
        if not expr_text:
            return lambda toks: True
        py = expr_text.replace("&", " and ").replace("|", " or ")
        for t in TOKENS10:
            py = py.replace(t, f"('{t}' in toks)")
        code = compile(py, "<vis>", "eval")
        return lambda toks: eval(code, {"toks": toks})

    oracles = [compile_oracle(print_visibility(f.envelope.visibility)) for f in facts]

    started = time.monotonic()
    for bits in range(1024):
        toks = frozenset(t for i, t in enumerate(TOKENS10) if bits >> i & 1)
        auth = AuthContext(tokens=toks)
        got = redact_facts(facts, auth)
        want = [f for f, orc in zip(facts, oracles) if orc(toks)]
        assert got == want
    elapsed = time.monotonic() - started
    assert elapsed < 10.0, f"took {elapsed:.1f}s"
    ok(f"redaction equivalence (200 facts x 1024 auth subsets, {elapsed:.1f}s)")


# 2 ---------------------------------------------------------------------------

def test_visibility_parser_round_trip_1000():
    rng = random.Random(77007)
    for _ in range(1000):
        expr = _random_expr(rng, 6, TOKENS10)
        assert parse_visibility(print_visibility(expr)) == canonicalize(expr)
        toks = frozenset(rng.sample(TOKENS10, rng.randint(0, 10)))
        auth = AuthContext(tokens=toks)
        assert authorize(expr, auth) == authorize(canonicalize(expr), auth)
    ok("visibility parser round trip (1000 expressions, depth <= 6)")


# 3 ---------------------------------------------------------------------------

def test_cross_node_privacy_fuzz(tmp_path):
    """Two-node fixture, peer granted {LE}: over 1000 fuzzed queries, zero
    facts with unsatisfied visibility leave the serving node."""
    server = start_node(tmp_path, "nodeB", extra="peer_grant.nodeA = LE\n")
    try:
        b = StoreBuilder(server.node.store, source="seed")
        rng = random.Random(5150)
        labels = ["", "LE", "TF", "ORG", "LE&TF", "LE|TF", "TF&ORG",
                  "LE&(TF|ORG)", "SEC", "LE&SEC"]
        names = ["John Smith", "Jane Doe", "Kim Lee", "Ahmed Khan", "Mei Chen"]
        for i in range(120):
            vis = rng.choice(labels)
            b.fact(f"Person-f{i:03d}", "name", rng.choice(names), vis=vis)
            if rng.random() < 0.4:
                b.fact(f"Person-f{i:03d}", "occupation",
                       rng.choice(["chef", "driver", "clerk"]), vis=rng.choice(labels))

        all_tokens = ["LE", "TF", "ORG", "SEC"]
        words = ["smith", "doe", "lee", "khan", "chen", "chef", "driver", "john"]
        checked = 0
        leaks = 0
        started = time.monotonic()
        for i in range(1000):
            presented = rng.sample(all_tokens, rng.randint(0, 4))
            if rng.random() < 0.5:
                q = {"keyword": " ".join(rng.sample(words, rng.randint(1, 3)))}
            else:
                q = {"concept": "Person",
                     "where": [{"attr": "name", "op": "=",
                                "value": rng.choice(names)}]}
            peer = "nodeA" if rng.random() < 0.9 else "nodeX"
            _, reply = api(server.address, "POST", "/peer/query",
                           {"query": q, "tokens": presented}, peer=peer)
            effective = (frozenset(presented) & frozenset({"LE"})
                         if peer == "nodeA" else frozenset())
            ctx = AuthContext(tokens=effective)
            if peer != "nodeA":
                assert reply["facts"] == []
            for rec in reply["facts"]:
                checked += 1
                if not authorize(parse_visibility(rec["envelope"]["visibility"]), ctx):
                    leaks += 1
        elapsed = time.monotonic() - started
        assert leaks == 0
        assert checked > 0
        assert elapsed < 60.0
        ok(f"cross-node privacy fuzz (1000 queries, {checked} facts checked, "
           f"0 leaks, {elapsed:.1f}s)")
    finally:
        server.shutdown()


# 4 ---------------------------------------------------------------------------

def test_federation_determinism_all_24_permutations(builder):
    cfg = SimilarityConfig({"name": 1.0}, 0.85)
    facts = [builder.fact(f"Person-p{i}", "name", n)
             for i, n in enumerate(["John Smith", "John Smith", "Jane Doe", "Kim Lee"])]
    partials = [PartialResult(f"s{i}", "ok", [facts[i]]) for i in range(3)]
    partials.append(PartialResult("s3", "error", [], error="down"))
    wires = set()
    for perm in itertools.permutations(partials):
        result = collate(list(perm), [facts[3]], cfg, ANON)
        wires.add(json.dumps(result.wire(), sort_keys=True))
    assert len(wires) == 1
    ok("federation determinism (24 permutations of 4 partials collate identically)")


# 5 ---------------------------------------------------------------------------

def test_ingest_idempotence_bundled_fixture(onto, tmp_path):
    store = HubStore(onto, str(tmp_path / "data")).open()
    mapping = parse_mappings(open(fixture("people.map")).read(), onto)
    desc = SourceDescriptor("people", "csv-file", fixture("people.csv"),
                            frozenset({"keyword", "structured"}), mapping=mapping)
    run1 = run_pipeline(store, desc, fixture("people.csv"))
    snap1 = store.snapshot_bytes()
    run2 = run_pipeline(store, desc, fixture("people.csv"))
    snap2 = store.snapshot_bytes()
    assert snap1 == snap2
    for run in (run1, run2):
        counts = run.wire()["counts"]
        assert counts["records_read"] == 10
        assert counts["facts_emitted"] == 20
        assert counts["errors"] == 0
    ok("ingest idempotence (10-row fixture twice: byte-identical snapshot, "
       "counts 10 read / 20 facts / 0 errors)")


# 6 ---------------------------------------------------------------------------

def _run_demo(tmp_path):
    """Full demo scenario on one node: three sources, ingest, linking,
    promote + merge, a plan with an executed line of inquiry."""
    server = start_node(tmp_path, "demo")
    url = server.address
    for sid, endpoint, mapping_path, vis in [
        ("people", fixture("people.csv"), fixture("people.map"), ""),
        ("register2", fixture("people30.csv"), fixture("people30.map"), ""),
        ("court", fixture("criminal_history.csv"), fixture("criminal_history.map"), "LE"),
    ]:
        api(url, "POST", "/sources", {
            "id": sid, "kind": "csv-file", "endpoint": endpoint,
            "capabilities": ["keyword", "structured"],
            "mapping_path": mapping_path, "default_visibility": vis,
        }, principal="amy")
        api(url, "POST", f"/ingest/{sid}", {"locator": endpoint}, principal="amy")
    api(url, "POST", "/sources", {
        "id": "reports", "kind": "directory-of-documents", "endpoint": fixture("docs"),
        "capabilities": ["keyword"], "default_visibility": "",
    }, principal="amy")
    api(url, "POST", "/ingest/reports", {"locator": fixture("docs")}, principal="amy")

    node = server.node
    # curation: promote one ingested fact, merge the linked John Smiths
    store = node.store
    store.promote(
        next(f for f in store.facts() if f.object.value == "John Smith").id, "amy")
    same_as = [f for f in store.facts() if f.predicate == "sameAs"]
    assert same_as, "demo linking produced no sameAs proposals"
    from fedhub.linker import merge_entities
    pair = [same_as[0].subject, same_as[0].object.value]
    merge_entities(store, pair, "amy")

    _, plan = api(url, "POST", "/plans", {"case_ref": "CASE-DEMO"}, principal="amy")
    _, goal = api(url, "POST", f"/plans/{plan['id']}/goals",
                  {"template": "criminal-history", "params": {"subject": "John Smith"}},
                  principal="amy", tokens="LE,TF")
    return server, plan["id"], goal


def test_provenance_completeness_full_demo(tmp_path):
    server, plan_id, goal = _run_demo(tmp_path)
    try:
        node = server.node
        registered = set(node.registry.ids())
        for fact in node.store.facts():
            assert node.store.chain_terminates_at_source(fact.id, registered), \
                f"fact {fact.id} ({fact.predicate}) does not reach a registered source"
        plan = node.get_plan(plan_id)
        assert plan.evidence, "demo plan collected no evidence"
        for element_id, fact_ids in plan.evidence.items():
            assert fact_ids, "criminal-history requirement found no facts"
            for fid in fact_ids:
                chain = node.store.provenance_chain(fid)
                assert any(a.kind == "plan-step" for a in chain)
        ok(f"provenance completeness ({node.store.fact_count()} facts all reach "
           f"registered sources; evidence chains contain their plan-step)")
    finally:
        server.shutdown()


# 7 ---------------------------------------------------------------------------

def test_warrant_gate_truth_table_and_72h_boundary():
    from test_workflow import ALL_RULES, _oracle_satisfied, _satisfy, iso, plan
    pack = load_bundled_rules()
    for bits in itertools.product([False, True], repeat=5):
        chosen = {r for r, b in zip(ALL_RULES, bits) if b}
        p = plan()
        _satisfy(p, chosen)
        decision = evaluate_gate("issue-warrant", p, pack)
        assert _oracle_satisfied(p) == chosen
        assert decision.open == (len(chosen) == 5)
        assert {m[0] for m in decision.missing} == set(ALL_RULES) - chosen

    from fedhub.workflow import record_event
    t0 = datetime(2024, 3, 4, 9, 0, 0, tzinfo=timezone.utc)

    def with_expected(delta):
        p = plan()
        record_event(p, "sworn-statement-recorded", t0, "o")
        record_event(p, "grounds-asserted", t0 + timedelta(minutes=1), "o",
                     {"present_now": False, "expected_at": iso(t0 + delta)})
        _satisfy(p, {"r3", "r4", "r5"}, base=t0 + timedelta(minutes=2))
        return evaluate_gate("issue-warrant", p, pack)

    assert with_expected(timedelta(hours=72)).open
    assert not with_expected(timedelta(hours=72, seconds=1)).open
    ok("warrant gate truth table (2^5 vs oracle; 72h inclusive, 72h+1s exclusive)")


# 8 ---------------------------------------------------------------------------

def test_linker_properties_and_fixture_oracle(onto):
    from test_linker import _load_fixture_store
    cfg = SimilarityConfig({"name": 1.0, "date_of_birth": 0.75}, 0.8)
    store = _load_fixture_store(onto, 0.8)
    views = [store.get_entity(e, ANON) for e in store.entity_ids()]
    rng = random.Random(808)
    for _ in range(500):
        a, b = rng.choice(views), rng.choice(views)
        sab, sba = pair_similarity(a, b, cfg), pair_similarity(b, a, cfg)
        assert abs(sab - sba) < 1e-12
        assert 0.0 <= sab <= 1.0
    for v in views:
        assert pair_similarity(v, v, cfg) == 1.0

    from test_linker import test_fixture_proposals_match_all_pairs_brute_force as oracle_test
    for threshold in (0.5, 0.7, 0.9):
        oracle_test(onto, threshold)
    ok("linker properties (symmetry/identity/range over 500 pairs; 30-entity "
       "fixture equals all-pairs oracle at thresholds 0.5/0.7/0.9)")


# 9 ---------------------------------------------------------------------------

_CRASH_DRIVER = """
import os, sys
sys.path.insert(0, {src!r})
from fedhub.service import Node, load_config
node = Node(load_config({cfg!r}))
for i in range(40):
    node.ingest("bulk", {batch_dir!r} + "/batch-%03d.csv" % i)
"""


def test_crash_consistency_random_kills(onto, tmp_path):
    batch_dir = tmp_path / "batches"
    batch_dir.mkdir()
    for i in range(40):
        rows = ["name,dob"]
        rows += [f"P{i:03d}-{j:03d},19{50 + i % 40:02d}-01-{j % 27 + 1:02d}"
                 for j in range(50)]
        (batch_dir / f"batch-{i:03d}.csv").write_text("\n".join(rows) + "\n")

    cfg_path = write_config(tmp_path, "crashme")
    config = load_config(cfg_path)
    node = Node(config)
    node.add_source({
        "id": "bulk", "kind": "csv-file", "endpoint": str(batch_dir / "batch-000.csv"),
        "capabilities": ["keyword"], "mapping_path": _bulk_mapping(tmp_path),
        "default_visibility": "",
    })
    node.close()

    driver = _CRASH_DRIVER.format(
        src=os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")),
        cfg=cfg_path, batch_dir=str(batch_dir))
    rng = random.Random(999)
    kills = 0
    for attempt in range(10):
        proc = subprocess.Popen([sys.executable, "-c", driver],
                                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        time.sleep(rng.uniform(0.05, 0.8))
        if proc.poll() is None:
            proc.kill()
            kills += 1
        proc.wait()
        # restart must replay cleanly and the audit chain must verify
        node = Node(load_config(cfg_path))
        assert verify_audit(node.audit.records) is None
        for fact in node.store.facts():
            assert fact.id   # every replayed record parsed completely
        node.close()
    assert kills >= 5, f"only {kills} kills landed mid-run; driver too fast"
    ok(f"crash consistency (10 restarts after SIGKILL, {kills} mid-run kills, "
       f"clean replay + audit verified each time)")


def _bulk_mapping(tmp_path) -> str:
    path = tmp_path / "bulk.map"
    path.write_text(
        "entity Person key(name)\n"
        "map name -> Person.name\n"
        "map dob -> Person.date_of_birth date-parse(YYYY-MM-DD)\n")
    return str(path)


# 10 --------------------------------------------------------------------------

def test_bundled_ontology_19_top_level_concepts():
    onto = load_ontology(open(bundled("reference.ont"), encoding="utf-8").read())
    tops = onto.top_concepts()
    assert len(tops) == 19
    assert all(c.parent == "Entity" for c in tops)
    ok("bundled ontology (exactly 19 top-level concepts under Entity)")


# 11 --------------------------------------------------------------------------

def test_desk_scale_responsiveness(onto, tmp_path):
    store = HubStore(onto)
    b = StoreBuilder(store)
    rng = random.Random(3141)
    first = ["john", "jane", "kim", "ahmed", "mei", "carlos", "priya", "liam",
             "sofia", "noah"]
    last = ["smith", "doe", "lee", "khan", "chen", "garcia", "patel", "obrien",
            "rossi", "taylor"]
    n_entities = 50_000
    for i in range(n_entities):   # 2 facts each: 100k facts
        name = f"{rng.choice(first)} {rng.choice(last)}"
        b.fact(f"Person-x{i:06d}", "name", name)
        b.fact(f"Person-x{i:06d}", "occupation", rng.choice(["chef", "driver", "clerk"]))
    assert store.fact_count() == 100_000

    auth = ANON
    timings = []
    for i in range(21):
        q = f"{rng.choice(first)} {rng.choice(last)}"
        t0 = time.perf_counter()
        store.keyword_search(q, auth)
        timings.append(time.perf_counter() - t0)
    median = statistics.median(timings)
    assert median < 0.2, f"median keyword latency {median * 1000:.0f}ms"

    # healthy 2-node federated query under a 5s timeout completes < 1s
    b_server = start_node(tmp_path, "fastB", extra="peer_grant.fastA = LE\n")
    a_server = start_node(tmp_path, "fastA")
    try:
        seed = StoreBuilder(b_server.node.store, source="seed")
        for i in range(50):
            seed.fact(f"Person-y{i:03d}", "name", "John Smith", vis="LE")
        api(a_server.address, "POST", "/sources", {
            "id": "fastB", "kind": "peer-hub", "endpoint": b_server.address,
            "capabilities": ["keyword", "structured"]}, principal="amy")
        t0 = time.perf_counter()
        _, res = api(a_server.address, "POST", "/query",
                     {"keyword": "smith", "federate": True},
                     principal="amy", tokens="LE")
        federated = time.perf_counter() - t0
        assert res["per_source"][0]["status"] == "ok"
        assert federated < 1.0, f"federated query took {federated:.2f}s"
    finally:
        a_server.shutdown()
        b_server.shutdown()
    ok(f"desk-scale responsiveness (median keyword {median * 1000:.0f}ms over 100k "
       f"facts; healthy 2-node federated query {federated * 1000:.0f}ms)")
