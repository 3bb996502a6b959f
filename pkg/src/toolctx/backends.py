"""Text-completion backends and tool-calling agents.

Mock implementations are deterministic and make every test run offline; the
HTTP backend speaks the common chat-completions JSON protocol.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

from .dataset import Dataset, ToolCall
from .schema import tools_in_rendered

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    """A completion backend could not produce a response."""


class AgentBackendFailure(RuntimeError):
    """The agent could not produce a prediction for one query."""


class CompletionBackend(Protocol):
    identity: str

    def complete(self, prompt: str) -> str: ...


class AgentBackend(Protocol):
    def predict(self, context_text: str, query: str) -> list[ToolCall]: ...


# -- completion backends -----------------------------------------------------


@dataclass
class MockCompletionBackend:
    """Ordered ``{match, response}`` rules; the first substring match answers."""

    rules: list[dict] = field(default_factory=list)
    default: str | None = None
    identity: str = "mock"

    @classmethod
    def from_file(cls, path) -> "MockCompletionBackend":
        data = json.loads(Path(path).read_text())
        if isinstance(data, dict):
            return cls(list(data.get("rules", [])), data.get("default"), data.get("identity", "mock"))
        return cls(list(data))

    def complete(self, prompt: str) -> str:
        for rule in self.rules:
            if rule.get("match", "") in prompt:
                return rule["response"]
        if self.default is not None:
            return self.default
        raise BackendError("mock backend: no rule matches the prompt")


@dataclass
class HttpCompletionBackend:
    base_url: str
    model: str
    temperature: float = 1.0
    api_key_env: str | None = None
    timeout_s: float = 60.0
    max_retries: int = 2

    @property
    def identity(self) -> str:
        return f"http:{self.model}"

    @classmethod
    def from_config(cls, cfg: dict) -> "HttpCompletionBackend":
        try:
            return cls(
                base_url=cfg["base_url"],
                model=cfg["model"],
                temperature=float(cfg.get("temperature", 1.0)),
                api_key_env=cfg.get("api_key_env"),
                timeout_s=float(cfg.get("timeout_s", 60)),
                max_retries=int(cfg.get("max_retries", 2)),
            )
        except KeyError as e:
            raise ValueError(f"http backend config missing {e.args[0]!r}") from e

    def complete(self, prompt: str) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        url = self.base_url.rstrip("/") + "/chat/completions"
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = requests.post(url, json=body, headers=headers, timeout=self.timeout_s)
                if resp.status_code >= 500 or resp.status_code == 429:
                    raise BackendError(f"HTTP {resp.status_code}")
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, BackendError, KeyError, IndexError, ValueError) as e:
                last = e
                log.warning("completion attempt %d/%d failed: %s", attempt + 1, self.max_retries + 1, e)
                if attempt < self.max_retries:
                    time.sleep(min(2.0**attempt, 8.0) * 0.1)
        raise BackendError(f"completion failed after {self.max_retries + 1} attempts: {last}")


def _json_after(text: str, heading: str):
    """Decode the first JSON value that follows ``heading`` in ``text``."""
    start = text.find(heading)
    if start < 0:
        return None
    pos = start + len(heading)
    dec = json.JSONDecoder()
    while pos < len(text) and text[pos] not in "[{":
        pos += 1
    try:
        value, _ = dec.raw_decode(text, pos)
    except json.JSONDecodeError:
        return None
    return value


@dataclass
class ScriptedReflector:
    """Offline reflector that fixes tool confusions with fixed preference phrases.

    For every ``wrong_tool`` signal in the prompt's feedback whose expected tool
    has a phrase, the expected tool's description gains that phrase. With no
    phrases it is a no-op reflector.
    """

    phrases: dict[str, str] = field(default_factory=dict)
    identity: str = "scripted"

    def complete(self, prompt: str) -> str:
        from .reflection import FEEDBACK_HEADING, TOOLS_HEADING

        tools = _json_after(prompt, TOOLS_HEADING) or []
        feedback = _json_after(prompt, FEEDBACK_HEADING) or []
        by_name = {t["name"]: t for t in tools}
        revised: dict[str, dict] = {}
        for item in feedback:
            for sig in item.get("signals", []):
                target = sig.get("expected_tool")
                if sig.get("kind") != "wrong_tool" or target not in self.phrases or target not in by_name:
                    continue
                tool = revised.get(target) or json.loads(json.dumps(by_name[target]))
                phrase = self.phrases[target]
                if phrase not in tool["description"]:
                    tool["description"] = f"{tool['description']} {phrase}".strip()
                revised[target] = tool
        answer = {
            "global_instructions": "",
            "example_specific_instructions": "",
            "tool_revisions": [revised[k] for k in sorted(revised)],
        }
        return "Answer: " + json.dumps(answer)


# -- agents ------------------------------------------------------------------


@dataclass
class MockAgent:
    """Answers from a query -> gold-call table, optionally confusing tools.

    Each confusion ``(tool, confused_with, phrase)`` makes the agent call
    ``confused_with`` instead of ``tool`` unless ``tool``'s description in the
    rendered context contains ``phrase``.
    """

    answers: dict[str, list[ToolCall]]
    confusions: Sequence[tuple[str, str, str]] = ()

    @classmethod
    def from_dataset(cls, ds: Dataset, confusions: Sequence[tuple[str, str, str]] = ()) -> "MockAgent":
        return cls({e.query: list(e.gold_calls) for e in ds.examples}, tuple(confusions))

    def predict(self, context_text: str, query: str) -> list[ToolCall]:
        if query not in self.answers:
            raise AgentBackendFailure(f"mock agent has no answer for query {query[:60]!r}")
        calls = self.answers[query]
        if not self.confusions:
            return list(calls)
        described = {t["name"]: t.get("description", "") for t in tools_in_rendered(context_text)}
        swap = {
            tool: other
            for tool, other, phrase in self.confusions
            if phrase not in described.get(tool, "")
        }
        return [ToolCall(swap.get(c.tool, c.tool), dict(c.arguments)) for c in calls]


AGENT_SUFFIX = """

Decide which tool calls answer the query above. Reply with only a JSON object:
{"tool_calls": [{"name": "<tool name>", "arguments": {"<parameter>": <value>}}]}
Use an empty list when no tool is needed."""


def parse_tool_calls(text: str) -> list[ToolCall]:
    """Extract tool calls from a model reply; unparseable replies yield no calls."""
    dec = json.JSONDecoder()
    for start in (i for i, ch in enumerate(text) if ch in "{["):
        try:
            value, _ = dec.raw_decode(text, start)
        except json.JSONDecodeError:
            continue
        if isinstance(value, dict) and "tool_calls" in value:
            value = value["tool_calls"]
        if isinstance(value, dict) and ("name" in value or "tool" in value):
            value = [value]
        if not isinstance(value, list):
            continue
        calls = []
        for item in value:
            if not isinstance(item, dict):
                continue
            name = item.get("name") or item.get("tool")
            args = item.get("arguments") or {}
            if isinstance(args, str):
                try:
                    args = json.loads(args)
                except json.JSONDecodeError:
                    args = {}
            if isinstance(name, str) and isinstance(args, dict):
                calls.append(ToolCall(name, args))
        return calls
    return []


@dataclass
class LLMAgent:
    backend: CompletionBackend

    def predict(self, context_text: str, query: str) -> list[ToolCall]:
        try:
            reply = self.backend.complete(context_text + AGENT_SUFFIX)
        except Exception as e:
            raise AgentBackendFailure(str(e)) from e
        return parse_tool_calls(reply)


# -- construction from config ------------------------------------------------


def completion_from_config(cfg: dict | None) -> CompletionBackend:
    cfg = cfg or {"type": "scripted"}
    kind = cfg.get("type", "mock")
    if kind == "http":
        return HttpCompletionBackend.from_config(cfg)
    if kind == "scripted":
        return ScriptedReflector(dict(cfg.get("phrases") or {}))
    if kind == "mock":
        if "scenario" in cfg:
            return MockCompletionBackend.from_file(cfg["scenario"])
        return MockCompletionBackend(list(cfg.get("rules") or []), cfg.get("default"))
    raise ValueError(f"unknown completion backend type {kind!r}")


def agent_from_config(cfg: dict | None, ds: Dataset) -> AgentBackend:
    cfg = cfg or {"type": "mock"}
    kind = cfg.get("type", "mock")
    if kind == "mock":
        conf = [(c["tool"], c["confused_with"], c["phrase"]) for c in cfg.get("confusions") or []]
        return MockAgent.from_dataset(ds, conf)
    if kind == "http":
        return LLMAgent(HttpCompletionBackend.from_config(cfg))
    raise ValueError(f"unknown agent backend type {kind!r}")
