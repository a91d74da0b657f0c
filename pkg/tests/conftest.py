import os
from datetime import datetime, timedelta, timezone

import pytest

from fedhub.hubstore import HubStore, MetadataEnvelope, make_fact
from fedhub.ontology import load_ontology
from fedhub.security import parse_visibility
from fedhub.values import (
    Value,
    boolean,
    date_value,
    decimal,
    entity_ref,
    integer,
    text,
)

DATA = os.path.join(os.path.dirname(__file__), "..", "src", "fedhub", "data")
FIXTURES = os.path.abspath(os.path.join(DATA, "fixtures"))

BASE_TS = datetime(2020, 1, 1, tzinfo=timezone.utc)


def bundled(name: str) -> str:
    return os.path.abspath(os.path.join(DATA, name))


def fixture(name: str) -> str:
    return os.path.join(FIXTURES, name)


@pytest.fixture(scope="session")
def onto():
    with open(bundled("reference.ont"), encoding="utf-8") as fh:
        return load_ontology(fh.read())


class StoreBuilder:
    """Convenience wrapper for hand-building store fixtures with stable ids."""

    def __init__(self, store: HubStore, source: str = "src-test"):
        self.store = store
        self.source = source
        self.activity = store.new_activity("ingest", "tester", inputs=(source,),
                                           activity_id=f"act-{source}")
        self._n = 0

    def envelope(self, vis="", conf=1.0, valid_from=None, valid_to=None,
                 source=None, recorded_at=None, activity=None):
        self._n += 1
        return MetadataEnvelope(
            source=source or self.source,
            activity=activity or self.activity.id,
            agent="tester",
            recorded_at=recorded_at or BASE_TS + timedelta(microseconds=self._n),
            valid_from=valid_from,
            valid_to=valid_to,
            visibility=parse_visibility(vis) if isinstance(vis, str) else vis,
            confidence=conf,
        )

    def fact(self, subject, predicate, value, **env_kw):
        f = make_fact(subject, predicate, _as_value(value), self.envelope(**env_kw))
        self.store.put_fact(f)
        return f


def _as_value(v):
    if isinstance(v, Value):
        return v
    if isinstance(v, bool):
        return boolean(v)
    if isinstance(v, int):
        return integer(v)
    if isinstance(v, float):
        return decimal(v)
    return text(v)


__all__ = [
    "BASE_TS", "FIXTURES", "StoreBuilder", "bundled", "fixture",
    "boolean", "date_value", "decimal", "entity_ref", "integer", "text",
]


@pytest.fixture
def mem_store(onto):
    return HubStore(onto)


@pytest.fixture
def builder(mem_store):
    return StoreBuilder(mem_store)


# ------------------------------------------------------------- live nodes

import json as _json
import urllib.error
import urllib.request

from fedhub.service import load_config, serve


def write_config(dirpath, name="node", extra="") -> str:
    cfg_path = os.path.join(str(dirpath), f"{name}.cfg")
    with open(cfg_path, "w", encoding="utf-8") as fh:
        fh.write(
            f"node_id = {name}\n"
            f"listen = 127.0.0.1:0\n"
            f"data_dir = {dirpath}/{name}-data\n"
            "operator.amy = LE,TF\n"
            "operator.bob = LE\n"
            + extra
        )
    return cfg_path


def start_node(dirpath, name="node", extra=""):
    """Spin up a real node on an ephemeral port; caller must .shutdown()."""
    server = serve(load_config(write_config(dirpath, name, extra)))
    server.start_background()
    return server


def api(base_url, method, path, body=None, principal=None, tokens=None,
        peer=None, expect_error=False):
    headers = {"Content-Type": "application/json"}
    if principal:
        headers["X-Principal"] = principal
    if tokens is not None:
        headers["X-Tokens"] = tokens
    if peer:
        headers["X-Peer-Id"] = peer
    data = _json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(base_url + path, data=data, headers=headers,
                                 method=method)
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            return resp.status, _json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        if not expect_error:
            raise AssertionError(
                f"{method} {path} -> {exc.code}: {exc.read().decode()}") from None
        return exc.code, _json.loads(exc.read())
