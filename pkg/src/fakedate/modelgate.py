"""Forecast-text producers ("gates"): live HTTP model, replay cache, simulated model.

Every gate exposes ``complete(request, seed=0) -> str``. Simulated gates draw
each response from a random stream derived from ``(seed, cache key)`` so any
single request is reproducible in isolation, independent of batch order.
"""

from __future__ import annotations

import calendar
import dataclasses
import datetime as dt
import functools
import hashlib
import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Protocol

import httpx
import numpy as np

from .domain import MacroSnapshot, VariableKind
from .errors import AuthError, BatchError, GateError, RateLimited, ReplayMiss, Transport
from .promptkit import PromptComponents, TemplateSet, parse_prompt, render_prompt

log = logging.getLogger(__name__)

API_KEY_ENV = "FAKEDATE_API_KEY"
DEFAULT_MAX_TOKENS = 2048


@dataclasses.dataclass(frozen=True)
class GateRequest:
    prompt: str
    temperature: float
    model_id: str
    sample_index: int

    def __post_init__(self):
        if self.temperature < 0 or not math.isfinite(self.temperature):
            raise ValueError("temperature must be finite and non-negative")
        if self.sample_index < 0:
            raise ValueError("sample_index must be non-negative")

    @property
    def key(self) -> str:
        return cache_key(self.model_id, self.temperature, self.prompt, self.sample_index)


def cache_key(model_id: str, temperature: float, prompt: str, sample_index: int) -> str:
    """sha256 of ``json.dumps([model_id, temperature, prompt, sample_index])``."""
    h = _key_prefix(model_id, float(temperature), prompt).copy()
    h.update(f", {int(sample_index)}]".encode("ascii"))
    return h.hexdigest()


@functools.lru_cache(maxsize=256)
def _key_prefix(model_id: str, temperature: float, prompt: str):
    # every sample of a prompt shares this prefix of the serialized list
    head = json.dumps([model_id, temperature, prompt], ensure_ascii=False)[:-1]
    return hashlib.sha256(head.encode("utf-8"))


@dataclasses.dataclass(frozen=True)
class CacheRecord:
    key: str
    raw_text: str
    created_at: str
    model_id: str
    temperature: float
    sample_index: int | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "CacheRecord":
        return cls(**json.loads(line))


class ResponseCache:
    """Append-only JSONL store of raw completions, keyed by request hash.

    The first record written for a key wins; later writes for the same key are
    ignored so records never change once on disk. ``path=None`` keeps the cache
    in memory only.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._records: dict[str, CacheRecord] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        rec = CacheRecord.from_json(line)
                    except (ValueError, TypeError) as exc:
                        raise GateError(f"{self.path}:{lineno}: corrupt cache record: {exc}") from None
                    self._records.setdefault(rec.key, rec)

    def __len__(self):
        return len(self._records)

    def __contains__(self, key):
        return key in self._records

    def get(self, key: str) -> CacheRecord | None:
        return self._records.get(key)

    def put(self, request: GateRequest, raw_text: str) -> CacheRecord:
        rec = CacheRecord(
            key=request.key,
            raw_text=raw_text,
            created_at=dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
            model_id=request.model_id,
            temperature=request.temperature,
            sample_index=request.sample_index,
        )
        with self._lock:
            existing = self._records.get(rec.key)
            if existing is not None:
                return existing
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(rec.to_json() + "\n")
            self._records[rec.key] = rec
        return rec


class Gate(Protocol):
    name: str
    concurrency: int

    def complete(self, request: GateRequest, seed: int = 0) -> str: ...


def request_rng(seed: int, key: str) -> np.random.Generator:
    """Independent stream for one request, a pure function of (seed, key)."""
    digest = hashlib.blake2b(key.encode("ascii"), digest_size=16).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *words]))


# simulated model ----------------------------------------------------------

UNBIASED = "unbiased"
LOOKAHEAD = "lookahead"
DATE_SENSITIVE = "date"
MODES = (UNBIASED, LOOKAHEAD, DATE_SENSITIVE)


def default_base_rule(snapshot: MacroSnapshot, variable: VariableKind) -> float:
    """Naive Taylor-style rule: persistence plus mild reversion toward 2%."""
    if variable is VariableKind.FED_RATE_LOWER_BOUND:
        return snapshot.rate_lower_bound + 0.25 * (snapshot.cpi_yoy - 2.0) + 0.25 * (snapshot.gdp_yoy - 2.0)
    if variable is VariableKind.CPI_YOY:
        return 0.6 * snapshot.cpi_yoy + 0.8
    return 0.5 * snapshot.gdp_yoy + 1.0


@dataclasses.dataclass(frozen=True)
class SimulatedGateSpec:
    mode: str = UNBIASED
    base_rule: Callable[[MacroSnapshot, VariableKind], float] = default_base_rule
    noise_sd: float = 0.25
    leak_shift: float = 1.0
    knowledge_horizon: dt.date = dt.date(2025, 8, 15)
    refusal_rate: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown simulated mode {self.mode!r}; expected one of {MODES}")
        if not self.noise_sd >= 0:
            raise ValueError("noise_sd must be non-negative")
        if not 0.0 <= self.refusal_rate <= 1.0:
            raise ValueError("refusal_rate must lie in [0, 1]")

    def mean(self, c: PromptComponents) -> float:
        mu = self.base_rule(c.snapshot, c.variable)
        if self.mode == LOOKAHEAD and c.t_forecast <= self.knowledge_horizon:
            mu += self.leak_shift
        elif self.mode == DATE_SENSITIVE:
            mu += self.leak_shift * math.cos(2 * math.pi * c.t_current.month / 12)
        return mu


_DECIMALS = {VariableKind.FED_RATE_LOWER_BOUND: 2, VariableKind.CPI_YOY: 1, VariableKind.GDP_YOY: 1}


@functools.lru_cache(maxsize=1024)
def _explanation(c: PromptComponents) -> str:
    s = c.snapshot
    return (
        f"The policy rate currently sits at {s.rate_lower_bound:.1f}%, real GDP grew "
        f"{s.gdp_yoy:.1f}% year over year in Q{s.gdp_quarter} {s.gdp_year}, and CPI inflation "
        f"was {s.cpi_yoy:.1f}% in {calendar.month_name[s.cpi_month]} {s.cpi_year}. "
        f"Weighing growth against inflation, I expect only gradual movement over the "
        f"{c.horizon_months} months to {c.t_forecast:%B %d, %Y}."
    )


def simulate_response(spec: SimulatedGateSpec, components: PromptComponents, rng: np.random.Generator) -> str:
    # always consume both draws so refusals never shift later streams
    u = rng.random()
    z = rng.standard_normal()
    marker = components.variable.marker
    if u < spec.refusal_rate:
        answer = "N/A"
    else:
        value = round(spec.mean(components) + spec.noise_sd * z, _DECIMALS[components.variable]) + 0.0
        answer = f"{value:.{_DECIMALS[components.variable]}f}%"
    return f"{_explanation(components)}\n\n{marker} {answer}\n"


class SimulatedGate:
    """Synthetic model with a known information set, for validation runs.

    The gate reads the prompt text back into components, so it sees exactly
    what a real model would. Responses are optionally recorded to ``cache``.
    """

    concurrency = 1

    def __init__(self, spec: SimulatedGateSpec | None = None, templates: TemplateSet | None = None,
                 cache: ResponseCache | None = None):
        self.spec = spec or SimulatedGateSpec()
        self.templates = templates
        self.cache = cache
        self.name = f"simulated-{self.spec.mode}"

    def complete(self, request: GateRequest, seed: int = 0) -> str:
        components = parse_prompt(request.prompt, self.templates)
        text = simulate_response(self.spec, components, request_rng(seed, request.key))
        if self.cache is not None:
            self.cache.put(request, text)
        return text


class ReplayGate:
    """Serves recorded completions only; never touches the network."""

    concurrency = 1
    name = "replay"

    def __init__(self, cache: ResponseCache):
        self.cache = cache

    def complete(self, request: GateRequest, seed: int = 0) -> str:
        rec = self.cache.get(request.key)
        if rec is None:
            raise ReplayMiss(f"no cached completion for sample {request.sample_index} of model {request.model_id}")
        return rec.raw_text


class LiveGate:
    """Chat-completions HTTP client with retries, backed by a response cache.

    Cached keys are served from the cache (record-if-missing), so a crashed run
    resumes without paying twice and a finished run replays byte-exactly.
    """

    name = "live"

    def __init__(self, endpoint: str, cache: ResponseCache, api_key: str | None = None,
                 max_tokens: int = DEFAULT_MAX_TOKENS, timeout: float = 120.0, attempts: int = 3,
                 backoff: float = 1.0, concurrency: int = 4, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        if not endpoint:
            raise GateError("live gate needs an endpoint URL")
        api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not api_key:
            raise AuthError(f"no API key: set {API_KEY_ENV}")
        self.endpoint = endpoint
        self.cache = cache
        self.max_tokens = max_tokens
        self.attempts = attempts
        self.backoff = backoff
        self.concurrency = max(1, concurrency)
        self.sleep = sleep
        self.client = client or httpx.Client(timeout=timeout)
        self._headers = {"Authorization": f"Bearer {api_key}"}

    def _post(self, request: GateRequest) -> str:
        body = {
            "model": request.model_id,
            "temperature": request.temperature,
            "max_tokens": self.max_tokens,
            "messages": [{"role": "user", "content": request.prompt}],
        }
        try:
            resp = self.client.post(self.endpoint, json=body, headers=self._headers)
        except httpx.HTTPError as exc:
            raise Transport(f"request failed: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"endpoint rejected credentials ({resp.status_code})")
        if resp.status_code == 429:
            raise RateLimited("rate limited (429)")
        if resp.status_code >= 500:
            raise Transport(f"server error {resp.status_code}")
        if resp.status_code >= 400:
            raise GateError(f"request rejected ({resp.status_code}): {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise Transport(f"malformed completion payload: {exc}") from exc

    def complete(self, request: GateRequest, seed: int = 0) -> str:
        rec = self.cache.get(request.key)
        if rec is not None:
            return rec.raw_text
        for attempt in range(self.attempts):
            try:
                text = self._post(request)
                break
            except (Transport, RateLimited) as exc:
                if attempt == self.attempts - 1:
                    raise
                delay = self.backoff * 2 ** attempt
                log.warning("attempt %d failed (%s); retrying in %.1fs", attempt + 1, exc, delay)
                self.sleep(delay)
        return self.cache.put(request, text).raw_text


def complete(request: GateRequest, gate: Gate, seed: int = 0) -> str:
    return gate.complete(request, seed)


def sample_forecasts(components: PromptComponents, n: int, gate: Gate, seed: int = 0,
                     temperature: float = 0.7, model_id: str = "model",
                     templates: TemplateSet | None = None) -> list[str]:
    """``n`` raw completions for one prompt, ordered by sample index."""
    if n < 0:
        raise ValueError("n must be non-negative")
    prompt = render_prompt(components, templates)
    requests = [GateRequest(prompt, temperature, model_id, i) for i in range(n)]
    results: list[str | None] = [None] * n
    failed: dict[int, Exception] = {}

    def run(i):
        try:
            results[i] = gate.complete(requests[i], seed)
        except GateError as exc:
            failed[i] = exc

    if gate.concurrency > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=gate.concurrency) as pool:
            list(pool.map(run, range(n)))
    else:
        for i in range(n):
            run(i)
    if failed:
        first = failed[min(failed)]
        raise BatchError(
            f"{len(failed)} of {n} requests failed (first: sample {min(failed)}: {first})",
            results, dict(sorted(failed.items())),
        ) from first
    return results
