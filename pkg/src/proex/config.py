"""Run configuration: a ``key = value`` text format plus overrides.

Schema (unknown keys are rejected)::

    # data: either files ...
    dataset = data/interactions.txt
    user_profiles = data/user.vec
    item_profiles = data/item.vec
    min_interactions = 3
    # ... or a synthetic corpus
    synthetic = true
    synthetic.num_users = 500        # any SyntheticSpec field
    synthetic.noise = 0.3
    # run
    seed = 0
    output_dir = runs/lightgcn
    profile_slots = 0,1,2,3          # optional subset of profile indices
    # any HyperParams field
    model = lightgcn
    lambda2 = 0.1
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .engine import HyperParams
from .synthetic import SyntheticSpec

_HP_FIELDS = {f.name: f for f in dataclasses.fields(HyperParams)}
_SYN_FIELDS = {f.name: f for f in dataclasses.fields(SyntheticSpec)}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    hp: HyperParams = field(default_factory=HyperParams)
    dataset: str | None = None
    user_profiles: str | None = None
    item_profiles: str | None = None
    min_interactions: int = 3
    synthetic: SyntheticSpec | None = None
    seed: int = 0
    output_dir: str = "runs/proex"
    profile_slots: tuple[int, ...] | None = None

    def validate(self) -> None:
        if self.synthetic is None:
            if not self.dataset:
                raise ConfigError("either dataset or synthetic must be configured")
            paths = [self.dataset]
            if self.hp.use_profiles:
                if not (self.user_profiles and self.item_profiles):
                    raise ConfigError("use_profiles needs user_profiles and item_profiles")
                paths += [self.user_profiles, self.item_profiles]
            for p in paths:
                if not Path(p).exists():
                    raise ConfigError(f"path does not exist: {p}")

    def to_dict(self) -> dict:
        return {
            "hp": self.hp.to_dict(),
            "dataset": self.dataset,
            "user_profiles": self.user_profiles,
            "item_profiles": self.item_profiles,
            "min_interactions": self.min_interactions,
            "synthetic": dataclasses.asdict(self.synthetic) if self.synthetic else None,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "profile_slots": list(self.profile_slots) if self.profile_slots is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(
            hp=HyperParams(**d["hp"]),
            dataset=d.get("dataset"),
            user_profiles=d.get("user_profiles"),
            item_profiles=d.get("item_profiles"),
            min_interactions=d.get("min_interactions", 3),
            synthetic=SyntheticSpec(**d["synthetic"]) if d.get("synthetic") else None,
            seed=d.get("seed", 0),
            output_dir=d.get("output_dir", "runs/proex"),
            profile_slots=tuple(d["profile_slots"]) if d.get("profile_slots") is not None else None,
        )

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _coerce(raw: str, ftype):
    ftype = str(ftype)
    raw = raw.strip()
    if "bool" in ftype:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if raw.lower() in ("none", "null", ""):
        return None
    if "int" in ftype and "float" not in ftype:
        return int(raw)
    if "float" in ftype:
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def build_config(values: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    """Apply string key/value pairs on top of ``base`` (defaults when omitted)."""
    cfg = base or RunConfig()
    hp = cfg.hp.to_dict()
    syn = dataclasses.asdict(cfg.synthetic) if cfg.synthetic else None
    top = {k: v for k, v in cfg.to_dict().items() if k not in ("hp", "synthetic")}
    use_synth = cfg.synthetic is not None
    for key, raw in values.items():
        try:
            if key == "synthetic":
                use_synth = _coerce(raw, bool)
            elif key.startswith("synthetic."):
                name = key.split(".", 1)[1]
                if name not in _SYN_FIELDS:
                    raise ConfigError(f"unknown synthetic field {name!r}")
                syn = syn or dataclasses.asdict(SyntheticSpec())
                syn[name] = _coerce(raw, _SYN_FIELDS[name].type)
                use_synth = True
            elif key in _HP_FIELDS:
                hp[key] = _coerce(raw, _HP_FIELDS[key].type)
            elif key in ("dataset", "user_profiles", "item_profiles", "output_dir"):
                top[key] = raw
            elif key in ("seed", "min_interactions"):
                top[key] = int(raw)
            elif key == "profile_slots":
                top[key] = [int(x) for x in raw.split(",") if x.strip()]
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
    if use_synth and syn is None:
        syn = dataclasses.asdict(SyntheticSpec())
    try:
        return RunConfig.from_dict({**top, "hp": hp, "synthetic": syn if use_synth else None})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8"))
    values.update(overrides or {})
    return build_config(values)
