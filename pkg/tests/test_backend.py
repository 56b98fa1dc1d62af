from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from openrex.backend import (
    GenerationRequest,
    HttpBackend,
    RecordingBackend,
    ReplayBackend,
    SimulatedOracle,
    SimulatedOracleConfig,
    synthetic_miss_name,
)
from openrex.domain import RelationName
from openrex.errors import OracleError, ServerError, Timeout


class _ScriptedHandler(BaseHTTPRequestHandler):
    """Replays a scripted list of (status, body_fn) responses in order and
    instruments concurrency."""

    script = []
    lock = threading.Lock()
    calls = 0
    in_flight = 0
    max_in_flight = 0
    delay = 0.0

    def do_POST(self):
        cls = type(self)
        with cls.lock:
            cls.in_flight += 1
            cls.max_in_flight = max(cls.max_in_flight, cls.in_flight)
            index = cls.calls
            cls.calls += 1
        try:
            if cls.delay:
                time.sleep(cls.delay)
            length = int(self.headers.get("Content-Length", 0))
            payload = json.loads(self.rfile.read(length) or b"{}")
            status, body_fn = cls.script[min(index, len(cls.script) - 1)]
            body = body_fn(payload)
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.end_headers()
            self.wfile.write(body.encode("utf-8"))
        finally:
            with cls.lock:
                cls.in_flight -= 1

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    servers = []

    def start(script, delay=0.0):
        handler = type(
            "Handler",
            (_ScriptedHandler,),
            {"script": script, "calls": 0, "in_flight": 0, "max_in_flight": 0, "delay": delay,
             "lock": threading.Lock()},
        )
        server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        return f"http://127.0.0.1:{server.server_address[1]}", handler

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()


def _completion(text):
    return lambda payload: json.dumps({"choices": [{"text": text}]})


def test_http_retries_rate_limits_then_succeeds(stub_server):
    url, handler = stub_server(
        [(429, lambda p: "slow down"), (429, lambda p: "slow down"), (200, _completion("alpha"))]
    )
    backend = HttpBackend(url, "test-model", backoff_base=0.01, max_attempts=5)
    assert backend.generate(GenerationRequest("p", tag="a|x")) == "alpha"
    assert handler.calls == 3


def test_http_malformed_body_is_server_error(stub_server):
    url, _ = stub_server([(200, lambda p: "not json at all")])
    backend = HttpBackend(url, "m", backoff_base=0.01)
    with pytest.raises(ServerError):
        backend.generate(GenerationRequest("p"))


def test_http_client_error_fails_fast(stub_server):
    url, handler = stub_server([(404, lambda p: "missing")])
    backend = HttpBackend(url, "m", backoff_base=0.01, max_attempts=4)
    with pytest.raises(ServerError):
        backend.generate(GenerationRequest("p"))
    assert handler.calls == 1


def test_http_budget_exhaustion_is_timeout(stub_server):
    url, handler = stub_server([(500, lambda p: "boom")])
    backend = HttpBackend(url, "m", backoff_base=0.001, max_attempts=3)
    with pytest.raises(Timeout):
        backend.generate(GenerationRequest("p"))
    assert handler.calls == 3


def test_http_passes_stop_sequences_and_truncates(stub_server):
    def body(payload):
        text = "first line\nsecond line"
        for stop in payload.get("stop") or []:
            pos = text.find(stop)
            if pos >= 0:
                text = text[:pos]
        return json.dumps({"choices": [{"text": text}]})

    url, _ = stub_server([(200, body)])
    backend = HttpBackend(url, "m")
    out = backend.generate(GenerationRequest("p", stop=("\n",)))
    assert "\n" not in out
    assert out == "first line"


def test_http_in_flight_window_is_bounded(stub_server):
    url, handler = stub_server([(200, _completion("ok"))] * 64, delay=0.03)
    backend = HttpBackend(url, "m", max_in_flight=2)
    threads = [
        threading.Thread(target=backend.generate, args=(GenerationRequest("p", tag=f"a|{i}"),))
        for i in range(8)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert handler.calls == 8
    assert handler.max_in_flight <= 2


GOLD = {"i1": RelationName("place of birth"), "i2": RelationName("spouse")}


def _prompt(candidates):
    listed = ", ".join(candidates)
    return (
        "You are an expert in relationship extraction.\n"
        f"The relationship must be in these possible relationships: {listed}.\n"
        "text: something\nrelationship:"
    )


def test_simulator_hits_when_gold_listed():
    oracle = SimulatedOracle(SimulatedOracleConfig(gold=GOLD, p_hit_target_in_demos=1.0))
    request = GenerationRequest(_prompt(["place of birth", "spouse"]), tag="i1|probe")
    assert oracle.generate(request) == "place of birth"


def test_simulator_uniform_confusion_support():
    oracle = SimulatedOracle(
        SimulatedOracleConfig(gold=GOLD, p_hit_target_in_demos=0.0, p_hit_otherwise=0.0)
    )
    wrong = {"director", "member of", "capital of"}
    outputs = {
        oracle.generate(GenerationRequest(_prompt(sorted(wrong)), tag=f"i1|t{i}"))
        for i in range(50)
    }
    assert outputs <= wrong
    assert len(outputs) > 1


def test_simulator_novel_confusion_is_synthetic():
    oracle = SimulatedOracle(
        SimulatedOracleConfig(gold=GOLD, p_hit_otherwise=0.0, confusion="novel")
    )
    out = oracle.generate(GenerationRequest(_prompt(["director"]), tag="i1|t"))
    assert RelationName(out) == synthetic_miss_name(GOLD["i1"])
    assert RelationName(out) != GOLD["i1"]


def test_simulator_deterministic_per_tag():
    oracle = SimulatedOracle(
        SimulatedOracleConfig(gold=GOLD, p_hit_target_in_demos=0.5, seed=9)
    )
    request = GenerationRequest(_prompt(["place of birth", "spouse"]), tag="i1|k|1")
    assert oracle.generate(request) == oracle.generate(request)
    outputs = {
        oracle.generate(GenerationRequest(_prompt(["place of birth", "spouse"]), tag=f"i1|k|{i}"))
        for i in range(64)
    }
    assert len(outputs) > 1


def test_simulator_unknown_instance_errors():
    oracle = SimulatedOracle(SimulatedOracleConfig(gold=GOLD))
    with pytest.raises(OracleError):
        oracle.generate(GenerationRequest(_prompt(["spouse"]), tag="nope|x"))


def test_simulator_empirical_hit_rate():
    oracle = SimulatedOracle(
        SimulatedOracleConfig(gold=GOLD, p_hit_target_in_demos=0.8, seed=123)
    )
    prompt = _prompt(["place of birth", "spouse", "director"])
    hits = sum(
        oracle.generate(GenerationRequest(prompt, tag=f"i1|draw|{i}")) == "place of birth"
        for i in range(10_000)
    )
    assert abs(hits / 10_000 - 0.8) < 0.02


def test_replay_and_recording_backends(tmp_path):
    oracle = SimulatedOracle(SimulatedOracleConfig(gold=GOLD, p_hit_target_in_demos=1.0))
    recorder = RecordingBackend(oracle)
    request = GenerationRequest(_prompt(["place of birth"]), tag="i1|rec")
    text = recorder.generate(request)
    path = tmp_path / "fixture.json"
    recorder.dump(path)
    replay = ReplayBackend(path)
    assert replay.generate(request) == text
    with pytest.raises(ServerError):
        replay.generate(GenerationRequest("p", tag="unknown|tag"))
