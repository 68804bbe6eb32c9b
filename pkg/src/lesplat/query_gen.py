"""LLM-driven query generation for open-vocabulary segmentation.

Builds a structured prompt describing the driving context, sends it to an
OpenAI-compatible chat-completions endpoint (or a fully offline fixture
stub), and parses the reply into a `QuerySpec`.

The accepted reply grammar is pinned: three case-insensitive section
headers ("Main Positive", "Helping Positives", "Negatives"), each followed
by dash/star/numbered list items; the main positive may also sit inline
after its header. Negatives become the canonical phrases of the scoring
stage. Requests use temperature 0 so reruns are reproducible.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass

import requests

from .relevancy import CANONICAL_RANGE, HELPING_RANGE, QuerySpec

logger = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "LESPLAT_API_KEY"

SYSTEM_PROMPT = (
    "You are a helpful assistant for a computer vision task, providing structured "
    "information about objects to pay attention to while driving. Include both "
    "important objects and nearby objects that might be at the borders.\n"
    "Respond using exactly this structure:\n"
    "Main Positive: <the object to pay attention to>\n"
    "Helping Positives:\n"
    f"- <{HELPING_RANGE[0]} to {HELPING_RANGE[1]} related terms or attributes>\n"
    "Negatives:\n"
    f"- <{CANONICAL_RANGE[0]} to {CANONICAL_RANGE[1]} objects to differentiate from, "
    "including similar objects, nearby objects, and background elements>"
)

ATTENTION_TEMPLATE = (
    "Driving through an intersection in an {road_type} on a {weather} {time_of_day}, "
    "what objects should the driver pay attention to?"
)
OBJECT_TEMPLATE = "show the {object}."


class ResponseParseError(ValueError):
    """The reply text does not follow the documented response grammar."""


class TransportError(RuntimeError):
    """The endpoint stayed unreachable or non-2xx after all retries."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class ProtocolError(RuntimeError):
    """The endpoint answered but not with a valid chat-completion body."""


@dataclass(frozen=True)
class PromptContext:
    mode: str  # "attention" or "object"
    road_type: str = ""
    weather: str = ""
    time_of_day: str = ""
    object: str = ""

    def __post_init__(self):
        if self.mode not in ("attention", "object"):
            raise ValueError(f"mode must be 'attention' or 'object', got {self.mode!r}")
        if self.mode == "object":
            if not self.object:
                raise ValueError("object mode requires an object phrase")
        else:
            if self.object:
                raise ValueError("object phrase is only valid in object mode")
            missing = [
                n for n in ("road_type", "weather", "time_of_day") if not getattr(self, n)
            ]
            if missing:
                raise ValueError(f"attention mode requires scene metadata: {missing}")


@dataclass(frozen=True)
class ChatExchange:
    system: str
    user: str
    model: str
    raw_response: str
    latency_ms: float
    retries_used: int = 0

    def __post_init__(self):
        if not self.system or not self.user:
            raise ValueError("messages must be non-empty")


@dataclass(frozen=True)
class LlmClientConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    api_key_env: str = DEFAULT_API_KEY_ENV
    model: str = "gpt-3.5-turbo"
    timeout_s: float = 30.0
    retries: int = 2
    backoff_s: float = 1.0
    stub_path: str | None = None

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout must be positive")
        if self.retries < 0:
            raise ValueError("retry count must be nonnegative")


def build_prompt(ctx: PromptContext) -> tuple[str, str]:
    """Deterministic (system, user) texts for a prompt context."""
    if ctx.mode == "object":
        user = OBJECT_TEMPLATE.format(object=ctx.object)
    else:
        user = ATTENTION_TEMPLATE.format(
            road_type=ctx.road_type, weather=ctx.weather, time_of_day=ctx.time_of_day
        )
    return SYSTEM_PROMPT, user


_SECTION_RE = re.compile(
    r"^\s*(?:\*\*)?(main\s+positives?|helping\s+positives?|negatives?)(?:\*\*)?\s*:?\s*(.*?)\s*$",
    re.IGNORECASE,
)
_ITEM_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*(.+?)\s*$")


def parse_response(text: str) -> QuerySpec:
    """Extract the three labeled sections into a QuerySpec.

    Missing sections raise `ResponseParseError` naming the section; count
    and duplicate violations surface as the QuerySpec's ValueError.
    """
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in text.splitlines():
        m = _SECTION_RE.match(line)
        if m:
            name = re.sub(r"\s+", " ", m.group(1).lower())
            key = {
                "main positive": "main",
                "main positives": "main",
                "helping positive": "helping",
                "helping positives": "helping",
                "negative": "negatives",
                "negatives": "negatives",
            }[name]
            sections[key] = current = []
            inline = m.group(2).strip()
            if inline:
                current.append(inline)
            continue
        m = _ITEM_RE.match(line)
        if m and current is not None:
            current.append(m.group(1))

    for key, label in (("main", "Main Positive"), ("helping", "Helping Positives"),
                       ("negatives", "Negatives")):
        if key not in sections or not sections[key]:
            raise ResponseParseError(f"missing section: {label}")
    if len(sections["main"]) != 1:
        raise ResponseParseError(
            f"Main Positive must contain exactly one phrase, got {len(sections['main'])}"
        )
    return QuerySpec(
        main_positive=sections["main"][0],
        helping_positives=tuple(sections["helping"]),
        canonicals=tuple(sections["negatives"]),
    )


def format_response(spec: QuerySpec) -> str:
    """Render a QuerySpec in the documented reply format (parse round-trips)."""
    lines = [f"Main Positive: {spec.main_positive}", "Helping Positives:"]
    lines += [f"- {p}" for p in spec.helping_positives]
    lines.append("Negatives:")
    lines += [f"- {p}" for p in spec.canonicals]
    return "\n".join(lines)


def prompt_hash(system: str, user: str) -> str:
    """Fixture key for a prompt pair."""
    return hashlib.sha256(f"{system}\x00{user}".encode()).hexdigest()


def _stub_response(cfg: LlmClientConfig, system: str, user: str) -> str:
    with open(cfg.stub_path, encoding="utf-8") as f:
        fixtures = json.load(f)
    key = prompt_hash(system, user)
    if key not in fixtures:
        raise ValueError(f"stub fixture file has no entry for prompt hash {key}")
    return fixtures[key]


def _post_chat(cfg: LlmClientConfig, system: str, user: str, api_key: str | None):
    """POST the chat request, retrying transport failures and non-2xx replies."""
    body = {
        "model": cfg.model,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ],
        "temperature": 0,
    }
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    last_status = None
    last_error = None
    attempts = cfg.retries + 1
    for attempt in range(attempts):
        if attempt > 0:
            time.sleep(cfg.backoff_s * 2 ** (attempt - 1))
        try:
            resp = requests.post(cfg.endpoint, json=body, headers=headers, timeout=cfg.timeout_s)
        except requests.RequestException as exc:
            last_error, last_status = exc, None
            logger.warning("chat request attempt %d/%d failed: %s", attempt + 1, attempts, exc)
            continue
        if 200 <= resp.status_code < 300:
            return resp, attempt
        last_status, last_error = resp.status_code, None
        logger.warning(
            "chat request attempt %d/%d returned HTTP %d", attempt + 1, attempts, resp.status_code
        )
    if last_status is not None:
        raise TransportError(
            f"endpoint returned HTTP {last_status} after {attempts} attempts", status=last_status
        )
    raise TransportError(f"endpoint unreachable after {attempts} attempts: {last_error}")


def generate_query(
    cfg: LlmClientConfig, ctx: PromptContext, api_key: str | None = None
) -> tuple[QuerySpec, ChatExchange]:
    """Produce a QuerySpec for a context, via the endpoint or the stub.

    In stub mode the reply is looked up by prompt hash in the fixture file
    and no network connection is ever opened.
    """
    system, user = build_prompt(ctx)
    start = time.monotonic()
    retries_used = 0
    if cfg.stub_path is not None:
        raw = _stub_response(cfg, system, user)
    else:
        resp, retries_used = _post_chat(cfg, system, user, api_key)
        try:
            payload = resp.json()
            raw = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed chat-completion response: {exc}") from exc
    latency_ms = (time.monotonic() - start) * 1000.0
    spec = parse_response(raw)
    exchange = ChatExchange(
        system=system,
        user=user,
        model=cfg.model,
        raw_response=raw,
        latency_ms=latency_ms,
        retries_used=retries_used,
    )
    return spec, exchange
