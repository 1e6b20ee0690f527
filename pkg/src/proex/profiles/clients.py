"""Chat and text-embedding clients: deterministic mocks and HTTP clients."""

from __future__ import annotations

import hashlib
import json
import os
import re
from pathlib import Path
from typing import Protocol

import numpy as np

ENDPOINT_ENV = "PROEX_LLM_ENDPOINT"
KEY_ENV = "PROEX_LLM_KEY"


class ChatClient(Protocol):
    def complete(self, system: str, user: str, *, tag: str | None = None) -> str: ...


class TextEmbedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def call_tag(kind: str, entity_id, stage: str) -> str:
    return f"{kind}:{entity_id}:{stage}"


# Word pools for fallback text. Original-profile words and new-profile words
# are disjoint so synthesized new profiles never echo the original.
_OP_WORDS = (
    "enjoys likes reads fiction novels stories books popular bestselling authors "
    "classic series mystery romance fantasy thriller history plot characters"
).split()
_NP_WORDS = (
    "gravitates toward savours prose narratives volumes craft atmosphere "
    "introspective brooding whimsical intricate sprawling lyrical meticulous "
    "archival speculative pastoral kinetic austere ornate wry tender"
).split()
_ASPECT_WORDS = "praised criticised pacing tone ending dialogue worldbuilding length".split()


def _digest(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


def _words(pool, n, seed) -> str:
    rng = np.random.default_rng(seed)
    return " ".join(rng.choice(pool, size=n))


def render_numbered(items) -> str:
    return "\n".join(f"{i}. {text}" for i, text in enumerate(items, 1))


class MockChatClient:
    """Stateless chat client answering from recorded fixtures keyed by call tag.

    Unknown tags get deterministic filler text derived from a hash of the tag;
    for the last stage the requested profile count is read from the prompt.
    """

    def __init__(self, fixtures: dict[str, str | list[str]] | None = None):
        self.fixtures = dict(fixtures or {})

    @classmethod
    def from_jsonl(cls, path) -> "MockChatClient":
        fixtures = {}
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                for stage, text in rec["stages"].items():
                    fixtures[call_tag(rec["kind"], rec["id"], stage)] = text
        return cls(fixtures)

    def complete(self, system: str, user: str, *, tag: str | None = None) -> str:
        if tag in self.fixtures:
            out = self.fixtures[tag]
            return render_numbered(out) if isinstance(out, list) else out
        seed = _digest(tag, system, user)
        stage = (tag or "").rsplit(":", 1)[-1]
        if stage == "f1":
            return _words(_OP_WORDS, 24, seed)
        if stage == "f2":
            return "Positive: " + _words(_ASPECT_WORDS, 6, seed) + "\nNegative: " + _words(_ASPECT_WORDS, 6, seed + 1)
        if stage == "f3":
            return _words(_NP_WORDS + _ASPECT_WORDS, 20, seed)
        m = re.search(r"exactly (\d+) new profiles", user)
        n = int(m.group(1)) if m else 3
        return render_numbered(_words(_NP_WORDS, 20, seed + k) for k in range(n))


class HashEmbedder:
    """Seeded hash of the text -> Gaussian vector, L2-normalized."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def embed(self, text: str) -> np.ndarray:
        rng = np.random.default_rng(_digest(self.seed, text))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)


class HttpChatClient:
    """OpenAI-compatible chat-completions client."""

    def __init__(self, endpoint: str, key: str, model: str = "gpt-3.5-turbo", timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.key = key
        self.model = model
        self.timeout = timeout

    @classmethod
    def from_env(cls, **kwargs) -> "HttpChatClient":
        endpoint, key = os.environ.get(ENDPOINT_ENV), os.environ.get(KEY_ENV)
        if not endpoint or not key:
            raise RuntimeError(f"set {ENDPOINT_ENV} and {KEY_ENV} to use the HTTP chat client")
        return cls(endpoint, key, **kwargs)

    def complete(self, system: str, user: str, *, tag: str | None = None) -> str:
        import requests

        resp = requests.post(
            f"{self.endpoint}/chat/completions",
            headers={"Authorization": f"Bearer {self.key}"},
            json={"model": self.model, "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ]},
            timeout=self.timeout,
        )
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]


class HttpEmbedder:
    """OpenAI-compatible embeddings client."""

    def __init__(self, endpoint: str, key: str, model: str = "text-embedding-ada-002",
                 dim: int = 1536, timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.key = key
        self.model = model
        self.dim = dim
        self.timeout = timeout

    @classmethod
    def from_env(cls, **kwargs) -> "HttpEmbedder":
        endpoint, key = os.environ.get(ENDPOINT_ENV), os.environ.get(KEY_ENV)
        if not endpoint or not key:
            raise RuntimeError(f"set {ENDPOINT_ENV} and {KEY_ENV} to use the HTTP embedder")
        return cls(endpoint, key, **kwargs)

    def embed(self, text: str) -> np.ndarray:
        import requests

        resp = requests.post(
            f"{self.endpoint}/embeddings",
            headers={"Authorization": f"Bearer {self.key}"},
            json={"model": self.model, "input": text},
            timeout=self.timeout,
        )
        resp.raise_for_status()
        return np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
