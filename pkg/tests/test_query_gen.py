import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from lesplat.query_gen import (
    LlmClientConfig,
    PromptContext,
    ProtocolError,
    ResponseParseError,
    TransportError,
    build_prompt,
    format_response,
    generate_query,
    parse_response,
    prompt_hash,
)
from lesplat.relevancy import QuerySpec

GOOD_RESPONSE = """Main Positive: cars
Helping Positives:
- headlights
- wheels
Negatives:
1. road
2. buildings
3. sky
4. pedestrians
5. trees
"""


class TestBuildPrompt:
    def test_object_mode_template(self):
        system, user = build_prompt(PromptContext(mode="object", object="cars"))
        assert user == "show the cars."
        assert "Main Positive" in system and "Negatives" in system

    def test_attention_mode_substitutes_metadata(self):
        ctx = PromptContext(
            mode="attention", road_type="urban street", weather="rainy", time_of_day="evening"
        )
        _, user = build_prompt(ctx)
        for word in ("urban street", "rainy", "evening"):
            assert word in user

    def test_deterministic(self):
        ctx = PromptContext(mode="object", object="traffic lights")
        assert build_prompt(ctx) == build_prompt(ctx)

    def test_attention_mode_requires_metadata(self):
        with pytest.raises(ValueError, match="metadata"):
            PromptContext(mode="attention", road_type="urban street")

    def test_object_required_iff_object_mode(self):
        with pytest.raises(ValueError):
            PromptContext(mode="object")
        with pytest.raises(ValueError):
            PromptContext(
                mode="attention", road_type="a", weather="b", time_of_day="c", object="x"
            )


class TestParseResponse:
    def test_parses_counted_fixture(self):
        spec = parse_response(GOOD_RESPONSE)
        assert spec.main_positive == "cars"
        assert spec.helping_positives == ("headlights", "wheels")
        assert len(spec.canonicals) == 5

    def test_case_insensitive_headers_and_bullets(self):
        text = "MAIN POSITIVE: bus\nhelping positives:\n* big vehicle\nNEGATIVES:\n- a\n- b\n- c\n- d"
        spec = parse_response(text)
        assert spec.main_positive == "bus"
        assert spec.helping_positives == ("big vehicle",)

    def test_missing_section_names_it(self):
        with pytest.raises(ResponseParseError, match="Negatives"):
            parse_response("Main Positive: cars\nHelping Positives:\n- one")

    def test_zero_helping_rejected_with_counts(self):
        text = "Main Positive: cars\nHelping Positives:\nNegatives:\n- a\n- b\n- c\n- d"
        with pytest.raises(ResponseParseError, match="Helping Positives"):
            parse_response(text)

    def test_seven_negatives_rejected(self):
        items = "\n".join(f"- n{i}" for i in range(7))
        text = f"Main Positive: cars\nHelping Positives:\n- one\nNegatives:\n{items}"
        with pytest.raises(ValueError, match="4-6"):
            parse_response(text)

    def test_duplicate_across_sections_rejected(self):
        text = "Main Positive: cars\nHelping Positives:\n- road\nNegatives:\n- road\n- a\n- b\n- c"
        with pytest.raises(ValueError, match="both"):
            parse_response(text)

    def test_round_trip_of_rendered_specs(self):
        import numpy as np

        rng = np.random.default_rng(0)
        words = [f"phrase {i}" for i in range(40)]
        for _ in range(25):
            picks = rng.choice(40, size=11, replace=False)
            spec = QuerySpec(
                main_positive=words[picks[0]],
                helping_positives=tuple(words[i] for i in picks[1 : 1 + rng.integers(1, 5)]),
                canonicals=tuple(words[i] for i in picks[5 : 5 + rng.integers(4, 7)]),
            )
            assert parse_response(format_response(spec)) == spec


class StubOnlySocket:
    def __init__(self, *args, **kwargs):
        raise AssertionError("network access attempted in stub mode")


class TestGenerateQueryStub:
    def test_stub_returns_fixture_without_network(self, tmp_path, monkeypatch):
        ctx = PromptContext(mode="object", object="cars")
        system, user = build_prompt(ctx)
        fixtures = {prompt_hash(system, user): GOOD_RESPONSE}
        path = tmp_path / "fixtures.json"
        path.write_text(json.dumps(fixtures))
        monkeypatch.setattr(socket, "socket", StubOnlySocket)
        cfg = LlmClientConfig(stub_path=str(path))
        spec, exchange = generate_query(cfg, ctx)
        assert spec.main_positive == "cars"
        assert exchange.raw_response == GOOD_RESPONSE
        assert exchange.retries_used == 0

    def test_missing_fixture_is_reported(self, tmp_path):
        path = tmp_path / "fixtures.json"
        path.write_text("{}")
        cfg = LlmClientConfig(stub_path=str(path))
        with pytest.raises(ValueError, match="no entry"):
            generate_query(cfg, PromptContext(mode="object", object="cars"))


class FlakyHandler(BaseHTTPRequestHandler):
    """Returns 500 for the first two requests, then a valid completion."""

    failures = 2
    count = 0

    def do_POST(self):
        self.rfile.read(int(self.headers.get("Content-Length", 0)))
        FlakyHandler.count += 1
        if FlakyHandler.count <= FlakyHandler.failures:
            self.send_response(500)
            self.end_headers()
            return
        body = json.dumps(
            {"choices": [{"message": {"role": "assistant", "content": GOOD_RESPONSE}}]}
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


class NonJsonHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        self.rfile.read(int(self.headers.get("Content-Length", 0)))
        body = b"definitely not json"
        self.send_response(200)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def local_server():
    servers = []

    def start(handler):
        server = HTTPServer(("127.0.0.1", 0), handler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        return f"http://127.0.0.1:{server.server_port}/v1/chat/completions"

    yield start
    for server in servers:
        server.shutdown()


class TestGenerateQueryLive:
    def test_retries_then_succeeds(self, local_server):
        FlakyHandler.count = 0
        endpoint = local_server(FlakyHandler)
        cfg = LlmClientConfig(endpoint=endpoint, retries=2, backoff_s=0.0, timeout_s=5.0)
        spec, exchange = generate_query(cfg, PromptContext(mode="object", object="cars"))
        assert spec.main_positive == "cars"
        assert exchange.retries_used == 2
        assert exchange.latency_ms >= 0.0

    def test_persistent_500_raises_transport_error_with_status(self, local_server):
        FlakyHandler.count = 0
        FlakyHandler.failures = 99
        try:
            endpoint = local_server(FlakyHandler)
            cfg = LlmClientConfig(endpoint=endpoint, retries=1, backoff_s=0.0, timeout_s=5.0)
            with pytest.raises(TransportError) as exc:
                generate_query(cfg, PromptContext(mode="object", object="cars"))
            assert exc.value.status == 500
        finally:
            FlakyHandler.failures = 2

    def test_unreachable_endpoint_raises_transport_error(self):
        cfg = LlmClientConfig(
            endpoint="http://127.0.0.1:9/v1/chat/completions",
            retries=0, backoff_s=0.0, timeout_s=0.5,
        )
        with pytest.raises(TransportError) as exc:
            generate_query(cfg, PromptContext(mode="object", object="cars"))
        assert exc.value.status is None

    def test_non_json_body_raises_protocol_error(self, local_server):
        endpoint = local_server(NonJsonHandler)
        cfg = LlmClientConfig(endpoint=endpoint, retries=0, timeout_s=5.0)
        with pytest.raises(ProtocolError):
            generate_query(cfg, PromptContext(mode="object", object="cars"))


class TestConfigValidation:
    def test_rejects_bad_timeout(self):
        with pytest.raises(ValueError):
            LlmClientConfig(timeout_s=0.0)

    def test_rejects_negative_retries(self):
        with pytest.raises(ValueError):
            LlmClientConfig(retries=-1)
