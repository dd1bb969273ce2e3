"""Client for chat-completion-style MLLM endpoints.

This is the only module that touches the network.  It speaks the
OpenAI-compatible chat completions wire protocol and implements the three
prompt roles used by the experiments: structurer (page -> structured text),
answerer (condition-specific question answering), and judge (binary
correct/incorrect grading).

Every request/response exchange is appended to a JSONL audit log, retries
use exponential backoff with jitter, and prompt assembly is a pure function
of its inputs so runs are reproducible against a deterministic endpoint.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import json
import os
import random
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import httpx

from .doc_model import StructuredDoc
from .structured_encoder import Diagnostic, parse_structured

PROMPT_VERSIONS = {
    "structurer": "structurer.v1.txt",
    "answerer": "answerer.v1.txt",
    "judge": "judge.v1.txt",
}

JUDGE_TOKEN_RE = re.compile(r"\b(yes|no|correct|incorrect)\b", re.IGNORECASE)
JUDGE_EXTRACTION_RULE = (
    "first standalone yes/no/correct/incorrect token, case-insensitive; "
    "unextractable -> incorrect"
)


class GatewayError(Exception):
    pass


class Transport(GatewayError):
    def __init__(self, url: str, cause: Exception):
        self.url = url
        self.cause = cause
        super().__init__(f"transport failure for {url}: {cause}")


class Timeout(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class BadResponse(GatewayError):
    def __init__(self, status: int, body_prefix: str):
        self.status = status
        self.body_prefix = body_prefix
        super().__init__(f"HTTP {status}: {body_prefix}")


class MissingEvidence(GatewayError):
    def __init__(self, condition: str, part: str):
        self.condition = condition
        self.part = part
        super().__init__(f"condition {condition} requires {part}")


class InputCondition(enum.Enum):
    """The experiment's evidence conditions (image/text combinations)."""

    image_only = "image_only"
    image_plus_ocr = "image_plus_ocr"
    image_plus_structured = "image_plus_structured"
    ocr_only = "ocr_only"
    structured_only = "structured_only"

    @property
    def needs_image(self) -> bool:
        return self in (
            InputCondition.image_only,
            InputCondition.image_plus_ocr,
            InputCondition.image_plus_structured,
        )

    @property
    def needs_ocr(self) -> bool:
        return self in (InputCondition.image_plus_ocr, InputCondition.ocr_only)

    @property
    def needs_structured(self) -> bool:
        return self in (
            InputCondition.image_plus_structured,
            InputCondition.structured_only,
        )


ALL_CONDITIONS = tuple(InputCondition)


@dataclass(frozen=True)
class EvidenceBundle:
    image: bytes | None = None
    image_media_type: str = "image/png"
    ocr_text: str | None = None
    structured_text: str | None = None


@dataclass(frozen=True)
class ModelEndpoint:
    base_url: str
    model_name: str
    api_key_env: str = ""
    max_tokens: int = 512
    temperature: float = 0.0
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 1.0

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def text_part(text: str) -> dict:
    return {"type": "text", "text": text}


def image_part(image: bytes, media_type: str = "image/png") -> dict:
    b64 = base64.b64encode(image).decode("ascii")
    return {
        "type": "image_url",
        "image_url": {"url": f"data:{media_type};base64,{b64}"},
    }


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[tuple[str, tuple[dict, ...]], ...]

    def __post_init__(self) -> None:
        system_idx = [i for i, (role, _) in enumerate(self.messages) if role == "system"]
        if len(system_idx) > 1 or (system_idx and system_idx[0] != 0):
            raise ValueError("at most one system message, first if present")
        object.__setattr__(
            self,
            "messages",
            tuple((role, tuple(parts)) for role, parts in self.messages),
        )

    @classmethod
    def user(cls, parts: list[dict]) -> "ChatRequest":
        return cls(messages=(("user", tuple(parts)),))

    def to_wire(self, endpoint: ModelEndpoint) -> dict:
        return {
            "model": endpoint.model_name,
            "messages": [
                {"role": role, "content": list(parts)}
                for role, parts in self.messages
            ],
            "max_tokens": endpoint.max_tokens,
            "temperature": endpoint.temperature,
        }


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency_s: float
    raw_body_sha256: str


@dataclass(frozen=True)
class JudgeVerdict:
    correct: bool
    raw_judge_text: str


def extract_verdict(raw: str) -> tuple[bool, bool]:
    """Apply the documented extraction rule; returns (correct, extractable)."""
    m = JUDGE_TOKEN_RE.search(raw)
    if m is None:
        return False, False
    return m.group(1).lower() in ("yes", "correct"), True


def render_template(template: str, values: dict[str, str]) -> str:
    out = template
    for key, value in values.items():
        out = out.replace("{{" + key + "}}", value)
    return out


class RateLimiter:
    """Simple sliding-window requests-per-minute limiter."""

    def __init__(self, requests_per_minute: int | None):
        self.rpm = requests_per_minute
        self._times: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rpm is None:
            return
        while True:
            with self._lock:
                now = time.monotonic()
                while self._times and now - self._times[0] > 60.0:
                    self._times.popleft()
                if len(self._times) < self.rpm:
                    self._times.append(now)
                    return
                wait = 60.0 - (now - self._times[0])
            time.sleep(max(wait, 0.01))


class Gateway:
    """Shared client state: HTTP session, audit log, limits, templates."""

    def __init__(
        self,
        audit_log: str | Path | None = None,
        template_dir: str | Path | None = None,
        client: httpx.Client | None = None,
        max_concurrency: int = 4,
        requests_per_minute: int | None = None,
    ):
        self.audit_log = Path(audit_log) if audit_log else None
        self.template_dir = Path(template_dir) if template_dir else None
        self._client = client or httpx.Client()
        self._audit_lock = threading.Lock()
        self._sem = threading.Semaphore(max_concurrency)
        self._limiter = RateLimiter(requests_per_minute)
        self.warnings: list[str] = []

    # -- templates ---------------------------------------------------------

    def load_template(self, role: str) -> str:
        name = PROMPT_VERSIONS[role]
        if self.template_dir is not None:
            return (self.template_dir / name).read_text(encoding="utf-8")
        return (
            resources.files("docstruct").joinpath("prompts", name)
            .read_text(encoding="utf-8")
        )

    # -- audit -------------------------------------------------------------

    def _audit(self, record: dict) -> None:
        if self.audit_log is None:
            return
        with self._audit_lock:
            self.audit_log.parent.mkdir(parents=True, exist_ok=True)
            with open(self.audit_log, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def audit_entries(self) -> list[dict]:
        if self.audit_log is None or not self.audit_log.exists():
            return []
        return [
            json.loads(line)
            for line in self.audit_log.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]

    # -- core request ------------------------------------------------------

    def complete(self, endpoint: ModelEndpoint, request: ChatRequest) -> ChatResponse:
        url = endpoint.base_url.rstrip("/") + "/chat/completions"
        payload = request.to_wire(endpoint)
        body = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(endpoint.api_key_env, "") if endpoint.api_key_env else ""
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error: GatewayError | None = None
        attempts = endpoint.max_retries + 1
        with self._sem:
            for attempt in range(attempts):
                if attempt > 0:
                    delay = endpoint.backoff_base * (2 ** (attempt - 1))
                    delay += random.uniform(0, endpoint.backoff_base * 0.1)
                    time.sleep(delay)
                self._limiter.acquire()
                start = time.monotonic()
                status: int | None = None
                resp_bytes = b""
                error: GatewayError | None = None
                try:
                    resp = self._client.post(
                        url, content=body, headers=headers, timeout=endpoint.timeout
                    )
                    status = resp.status_code
                    resp_bytes = resp.content
                except httpx.TimeoutException as exc:
                    error = Timeout(f"timeout after {endpoint.timeout}s: {exc}")
                except httpx.HTTPError as exc:
                    error = Transport(url, exc)
                latency = time.monotonic() - start
                digest = hashlib.sha256(resp_bytes).hexdigest()
                self._audit(
                    {
                        "ts": time.time(),
                        "url": url,
                        "model": endpoint.model_name,
                        "attempt": attempt,
                        "request_bytes": len(body),
                        "response_bytes": len(resp_bytes),
                        "status": status,
                        "response_sha256": digest,
                        "latency_s": latency,
                        "error": str(error) if error else None,
                    }
                )
                if error is not None:
                    last_error = error
                    continue
                if status == 429:
                    last_error = RateLimited(f"429 from {url}")
                    continue
                if status is not None and status >= 500:
                    last_error = BadResponse(status, resp_bytes[:200].decode(
                        "utf-8", errors="replace"))
                    continue
                if status != 200:
                    raise BadResponse(
                        status or 0, resp_bytes[:200].decode("utf-8", errors="replace")
                    )
                try:
                    parsed = json.loads(resp_bytes)
                    text = parsed["choices"][0]["message"]["content"]
                    usage = parsed.get("usage", {})
                except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
                    raise BadResponse(
                        status,
                        f"unparseable completion body: {exc}",
                    ) from exc
                return ChatResponse(
                    text=text if isinstance(text, str) else json.dumps(text),
                    prompt_tokens=int(usage.get("prompt_tokens", 0) or 0),
                    completion_tokens=int(usage.get("completion_tokens", 0) or 0),
                    latency_s=latency,
                    raw_body_sha256=digest,
                )
        assert last_error is not None
        raise last_error

    # -- prompt roles ------------------------------------------------------

    def build_answer_prompt(
        self, question: str, condition: InputCondition, evidence: EvidenceBundle
    ) -> str:
        template = self.load_template("answerer")
        return render_template(
            template,
            {
                "question": question,
                "ocr_text": (evidence.ocr_text or "(not provided)")
                if condition.needs_ocr
                else "(not provided)",
                "structured_text": (evidence.structured_text or "(not provided)")
                if condition.needs_structured
                else "(not provided)",
            },
        )

    def structure_via_mllm(
        self, endpoint: ModelEndpoint, image: bytes, ocr_text: str
    ) -> tuple[StructuredDoc, list[Diagnostic]]:
        if not image:
            raise ValueError("image must be non-empty")
        prompt = render_template(
            self.load_template("structurer"), {"ocr_text": ocr_text}
        )
        request = ChatRequest.user([image_part(image), text_part(prompt)])
        response = self.complete(endpoint, request)
        return parse_structured(response.text)

    def answer(
        self,
        endpoint: ModelEndpoint,
        question: str,
        condition: InputCondition,
        evidence: EvidenceBundle,
    ) -> str:
        if condition.needs_image and evidence.image is None:
            raise MissingEvidence(condition.value, "image")
        if condition.needs_ocr and evidence.ocr_text is None:
            raise MissingEvidence(condition.value, "ocr_text")
        if condition.needs_structured and evidence.structured_text is None:
            raise MissingEvidence(condition.value, "structured_text")
        parts: list[dict] = []
        if condition.needs_image:
            parts.append(image_part(evidence.image, evidence.image_media_type))
        parts.append(text_part(self.build_answer_prompt(question, condition, evidence)))
        return self.complete(endpoint, ChatRequest.user(parts)).text

    def judge(
        self, endpoint: ModelEndpoint, question: str, reference: str, candidate: str
    ) -> JudgeVerdict:
        for name, value in (
            ("question", question),
            ("reference", reference),
            ("candidate", candidate),
        ):
            if not value:
                raise ValueError(f"{name} must be non-empty")
        prompt = render_template(
            self.load_template("judge"),
            {"question": question, "reference": reference, "candidate": candidate},
        )
        response = self.complete(endpoint, ChatRequest.user([text_part(prompt)]))
        correct, extractable = extract_verdict(response.text)
        if not extractable:
            self.warnings.append(
                f"JudgeUnparseable: {response.text[:80]!r}"
            )
        return JudgeVerdict(correct=correct, raw_judge_text=response.text)

    def close(self) -> None:
        self._client.close()
