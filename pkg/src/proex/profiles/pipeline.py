"""Four-stage profile construction: original profile, positive/negative
aspects, latent preferences, then K-1 reworded new profiles."""

from __future__ import annotations

import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .clients import ChatClient, call_tag

log = logging.getLogger(__name__)

STAGES = ("f1", "f2", "f3", "f4")
PROMPT_VERSION = "v1"


class PipelineError(RuntimeError):
    def __init__(self, stage: str, entity, cause: Exception):
        super().__init__(f"stage {stage} failed for {entity}: {cause}")
        self.stage = stage
        self.entity = entity


class ProfileCountError(ValueError):
    pass


@dataclass(frozen=True)
class PromptSet:
    version: str
    templates: dict[str, tuple[str, str]]  # stage -> (system, user template)

    def render(self, stage: str, **values) -> tuple[str, str]:
        system, user = self.templates[stage]
        return system, user.format(**values)


def load_prompt_set(kind: str, version: str = PROMPT_VERSION) -> PromptSet:
    """Read the shipped templates for ``kind`` in {user, item}."""
    if version != PROMPT_VERSION:
        raise ValueError(f"unknown prompt set version {version!r}")
    base = resources.files("proex.profiles") / "prompts"
    templates = {}
    for stage in STAGES:
        text = (base / f"{kind}_{stage}.txt").read_text(encoding="utf-8")
        system, user = text.split("\n---\n", 1)
        templates[stage] = (system.strip(), user.rstrip("\n"))
    return PromptSet(version, templates)


@dataclass(frozen=True)
class EntityContext:
    kind: str
    entity_id: int
    interactions: tuple[str, ...]
    side_info: str = ""


@dataclass
class ProfileTextRecord:
    kind: str
    entity_id: int
    f1: str
    f2: str
    f3: str
    f4: list[str] = field(default_factory=list)
    prompt_set_version: str = PROMPT_VERSION

    @property
    def profiles(self) -> list[str]:
        """Original profile first, then the new profiles."""
        return [self.f1, *self.f4]

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind,
            "id": self.entity_id,
            "stages": {"f1": self.f1, "f2": self.f2, "f3": self.f3, "f4": list(self.f4)},
            "prompt_set_version": self.prompt_set_version,
        }, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileTextRecord":
        s = d["stages"]
        return cls(d["kind"], int(d["id"]), s["f1"], s["f2"], s["f3"], list(s["f4"]),
                   d.get("prompt_set_version", PROMPT_VERSION))


_ITEM = re.compile(r"^\s*(\d+)[.)]\s+(.*\S)\s*$")


def parse_numbered_list(text: str) -> list[str]:
    """Items of a "1. ..." list; continuation lines join the preceding item."""
    items: list[str] = []
    for line in text.splitlines():
        m = _ITEM.match(line)
        if m:
            items.append(m.group(2))
        elif line.strip() and items:
            items[-1] = f"{items[-1]} {line.strip()}"
    return items


def _call(client: ChatClient, system, user, tag, stage, entity, retries, backoff, sleep) -> str:
    for attempt in range(retries + 1):
        try:
            out = client.complete(system, user, tag=tag)
            if not out or not out.strip():
                raise ValueError("empty response")
            return out.strip()
        except Exception as exc:  # noqa: BLE001 - any client failure is retried then reported
            if attempt == retries:
                raise PipelineError(stage, entity, exc) from exc
            log.warning("stage %s for %s failed (%s); retrying", stage, entity, exc)
            sleep(backoff * 2 ** attempt)
    raise AssertionError("unreachable")


def run_cot_pipeline(ctx: EntityContext, client: ChatClient, prompts: PromptSet, K: int,
                     retries: int = 3, backoff: float = 1.0, sleep=time.sleep) -> ProfileTextRecord:
    """Run the four stages in order, each prompt carrying all earlier outputs."""
    if K < 2:
        raise ValueError("K must be >= 2 (one original plus at least one new profile)")
    entity = (ctx.kind, ctx.entity_id)
    values = {
        "entity_id": ctx.entity_id,
        "interactions": "\n".join(f"- {t}" for t in ctx.interactions),
        "side_info": ctx.side_info or "(none)",
        "num_new": K - 1,
    }

    def stage(name: str, suffix: str = "") -> str:
        system, user = prompts.render(name, **values)
        return _call(client, system, user + suffix, call_tag(ctx.kind, ctx.entity_id, name),
                     name, entity, retries, backoff, sleep)

    values["f1"] = stage("f1")
    values["f2"] = stage("f2")
    values["f3"] = stage("f3")
    new = parse_numbered_list(stage("f4"))
    if len(new) != K - 1:
        log.warning("stage f4 for %s returned %d profiles, expected %d; reprompting", entity, len(new), K - 1)
        new = parse_numbered_list(stage("f4", f"\n\nReturn exactly {K - 1} numbered items and nothing else."))
        if len(new) != K - 1:
            raise ProfileCountError(f"stage f4 for {entity} returned {len(new)} profiles, expected {K - 1}")
    return ProfileTextRecord(ctx.kind, ctx.entity_id, values["f1"], values["f2"], values["f3"],
                             new, prompts.version)


def run_cot_corpus(contexts, client: ChatClient, prompts: PromptSet, K: int, max_workers: int = 4,
                   **kwargs) -> list[ProfileTextRecord]:
    """Run the pipeline over many entities with at most ``max_workers`` in flight; order is preserved."""
    contexts = list(contexts)
    if max_workers <= 1:
        return [run_cot_pipeline(c, client, prompts, K, **kwargs) for c in contexts]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda c: run_cot_pipeline(c, client, prompts, K, **kwargs), contexts))


def _tokens(text: str) -> set[str]:
    return set(re.findall(r"[\w']+", text.lower()))


def audit_profile_diversity(record: ProfileTextRecord) -> list[float]:
    """Token Jaccard similarity of each new profile against the original."""
    op = _tokens(record.f1)
    out = []
    for text in record.f4:
        np_ = _tokens(text)
        union = op | np_
        out.append(len(op & np_) / len(union) if union else 1.0)
    return out


def save_records(records, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    os.replace(tmp, path)


def load_records(path) -> list[ProfileTextRecord]:
    with Path(path).open(encoding="utf-8") as fh:
        return [ProfileTextRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
