"""Profile text construction, embedding, and corpus persistence."""

import json
from importlib import resources

from .clients import ChatClient, HashEmbedder, HttpChatClient, HttpEmbedder, MockChatClient, TextEmbedder
from .pipeline import (
    EntityContext,
    PipelineError,
    ProfileCountError,
    ProfileTextRecord,
    PromptSet,
    audit_profile_diversity,
    load_prompt_set,
    load_records,
    parse_numbered_list,
    run_cot_corpus,
    run_cot_pipeline,
    save_records,
)
from .vectors import (
    EmbeddingError,
    ProfileBundle,
    ProfileFormatError,
    ProfileSet,
    embed_profiles,
    load_profile_set,
    save_profile_set,
)


def fixture_path():
    return resources.files("proex.profiles") / "data" / "fixtures_v1.jsonl"


def fixture_contexts() -> list[EntityContext]:
    """Entity contexts of the recorded fixture corpus, in file order."""
    out = []
    for line in fixture_path().read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            ctx = rec["context"]
            out.append(EntityContext(rec["kind"], rec["id"], tuple(ctx["interactions"]), ctx.get("side_info", "")))
    return out


def fixture_client() -> MockChatClient:
    return MockChatClient.from_jsonl(fixture_path())
