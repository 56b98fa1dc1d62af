"""Text-generation backends.

Three implementations of one contract: an HTTP client for OpenAI-compatible
completion servers, a deterministic simulated oracle for desk-scale
verification, and a replay backend over recorded fixtures. Backends are
shareable services; ``generate`` may be called concurrently.

Request tags follow ``"{instance_id}|{stage}|..."``; the instance id is
everything before the first ``|``. Tags, not prompt bytes, drive the
simulator's randomness, so benign template edits do not perturb simulated
runs.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import requests

from .domain import RelationName
from .errors import (
    OracleError,
    RateLimited,
    ServerError,
    Timeout,
    TransportError,
)

API_KEY_ENV = "OPENREX_API_KEY"

_CANDIDATE_MARKER = "possible relationships: "


@dataclass(frozen=True)
class GenerationRequest:
    """One completion request."""

    prompt: str
    max_tokens: int = 16
    temperature: float = 0.0
    stop: tuple[str, ...] = ("\n",)
    tag: str = ""

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


class TextBackend(ABC):
    """The generation boundary every stage talks to."""

    @abstractmethod
    def generate(self, request: GenerationRequest) -> str:
        """Return raw model text. Must be safe under concurrent invocation."""

    def describe(self) -> dict:
        """Identity recorded in run manifests."""
        return {"kind": type(self).__name__}


class HttpBackend(TextBackend):
    """Client for an OpenAI-compatible ``/completions`` endpoint.

    Retries rate limits, transient server errors (408/429/5xx), and transport
    failures with exponential backoff and jitter; other 4xx fail fast. A
    semaphore bounds concurrent in-flight requests at ``max_in_flight``.
    """

    RETRYABLE = frozenset({408, 429})

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        max_in_flight: int = 8,
        max_attempts: int = 5,
        backoff_base: float = 0.5,
        backoff_cap: float = 30.0,
        timeout: float = 120.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.timeout = timeout
        self._gate = threading.Semaphore(max_in_flight)
        self._session = requests.Session()
        self._jitter = random.Random()

    def describe(self) -> dict:
        return {"kind": "http", "endpoint": self.base_url, "model": self.model}

    def generate(self, request: GenerationRequest) -> str:
        payload = {
            "model": self.model,
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "stop": list(request.stop) or None,
            "n": 1,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                delay = min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1))
                time.sleep(delay * (0.5 + self._jitter.random()))
            try:
                with self._gate:
                    response = self._session.post(
                        f"{self.base_url}/completions",
                        json=payload,
                        headers=headers,
                        timeout=self.timeout,
                    )
            except requests.Timeout as exc:
                last = Timeout(f"request timed out: {exc}")
                continue
            except requests.RequestException as exc:
                last = TransportError(f"transport failure: {exc}")
                continue
            if response.status_code in self.RETRYABLE:
                last = RateLimited(f"status {response.status_code}")
                continue
            if response.status_code >= 500:
                last = ServerError(f"status {response.status_code}", response.status_code)
                continue
            if response.status_code != 200:
                raise ServerError(f"status {response.status_code}", response.status_code)
            try:
                body = response.json()
                return body["choices"][0]["text"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ServerError(f"malformed completion body: {exc}", response.status_code) from exc
        raise Timeout(f"retry budget exhausted after {self.max_attempts} attempts: {last}")


@dataclass(frozen=True)
class SimulatedOracleConfig:
    """Behavior of the simulated backend.

    The simulator answers from the sealed gold map: when the test instance's
    gold relation appears in the prompt's announced candidate list it emits
    the gold name with ``p_hit_target_in_demos``, otherwise with
    ``p_hit_otherwise``. Misses draw from the confusion model:

    - ``uniform``: a uniform choice among the listed non-gold candidates
      (falling back to a synthetic name when none are listed);
    - ``novel``: a synthetic wrong name derived from the instance's gold
      relation. Deriving it from the gold relation rather than the request
      keeps the universe of wrong names bounded, the way a real generator's
      near-miss errors cluster by meaning instead of being unique per call.
    """

    gold: Mapping[str, RelationName]
    p_hit_target_in_demos: float = 1.0
    p_hit_otherwise: float = 0.0
    confusion: str = "uniform"  # "uniform" | "novel"
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("p_hit_target_in_demos", "p_hit_otherwise"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.confusion not in ("uniform", "novel"):
            raise ValueError(f"unknown confusion mode {self.confusion!r}")
        object.__setattr__(self, "gold", {str(k): RelationName(v) for k, v in self.gold.items()})


def synthetic_miss_name(gold: RelationName) -> RelationName:
    """The deterministic wrong name the novel confusion mode emits."""
    return RelationName(f"unknown {gold}")


class SimulatedOracle(TextBackend):
    """Deterministic stand-in for a served model.

    The output for a request is a pure function of (config seed, request
    tag). The instance id is parsed from the tag; the candidate list from the
    prompt's announcement line.
    """

    def __init__(self, config: SimulatedOracleConfig):
        self.config = config

    def describe(self) -> dict:
        cfg = self.config
        return {
            "kind": "simulator",
            "p_hit_target_in_demos": cfg.p_hit_target_in_demos,
            "p_hit_otherwise": cfg.p_hit_otherwise,
            "confusion": cfg.confusion,
            "seed": cfg.seed,
        }

    @staticmethod
    def parse_candidates(prompt: str) -> list[RelationName]:
        for line in prompt.split("\n"):
            pos = line.find(_CANDIDATE_MARKER)
            if pos >= 0:
                listed = line[pos + len(_CANDIDATE_MARKER) :].rstrip().rstrip(".")
                return [RelationName(part) for part in listed.split(", ") if part.strip()]
        return []

    def generate(self, request: GenerationRequest) -> str:
        instance_id = request.tag.split("|", 1)[0]
        gold = self.config.gold.get(instance_id)
        if not instance_id or gold is None:
            raise OracleError(f"request tag {request.tag!r} does not name a known instance")
        candidates = self.parse_candidates(request.prompt)
        p = (
            self.config.p_hit_target_in_demos
            if gold in candidates
            else self.config.p_hit_otherwise
        )
        digest = hashlib.sha256(f"{self.config.seed}|{request.tag}".encode("utf-8")).digest()
        rng = random.Random(int.from_bytes(digest[:8], "big"))
        if rng.random() < p:
            return str(gold)
        if self.config.confusion == "uniform":
            wrong = [c for c in candidates if c != gold]
            if wrong:
                return str(wrong[rng.randrange(len(wrong))])
        return str(synthetic_miss_name(gold))


class ReplayBackend(TextBackend):
    """Serves completions recorded in a fixture file keyed by request tag."""

    def __init__(self, fixture: str | Path | Mapping[str, str]):
        if isinstance(fixture, (str, Path)):
            with Path(fixture).open(encoding="utf-8") as fh:
                self.responses: dict[str, str] = json.load(fh)
        else:
            self.responses = dict(fixture)

    def describe(self) -> dict:
        return {"kind": "replay", "recorded": len(self.responses)}

    def generate(self, request: GenerationRequest) -> str:
        try:
            return self.responses[request.tag]
        except KeyError as exc:
            raise ServerError(f"no recorded response for tag {request.tag!r}") from exc


@dataclass
class RecordingBackend(TextBackend):
    """Wraps another backend and captures tag -> completion pairs."""

    inner: TextBackend
    recorded: dict[str, str] = field(default_factory=dict)

    def describe(self) -> dict:
        return self.inner.describe()

    def generate(self, request: GenerationRequest) -> str:
        text = self.inner.generate(request)
        self.recorded[request.tag] = text
        return text

    def dump(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            json.dump(self.recorded, fh, ensure_ascii=False, indent=0, sort_keys=True)
            fh.write("\n")
