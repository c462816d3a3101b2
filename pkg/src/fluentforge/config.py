"""Plain-text run configuration: `key = value` lines, `#` comments.

Keys are namespaced by the component they tune (`zero.`, `former.`,
`train.`) plus a top-level `seed`.  Unknown keys are rejected, and the fully
resolved configuration is echoed into each run's output directory so a run
can be reproduced from its artifacts alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from . import stutterformer as sf
from . import stutterzero as sz
from . import training as tr


class ConfigError(ValueError):
    pass


_SECTIONS = {
    "zero": sz.StutterZeroConfig,
    "former": sf.StutterFormerConfig,
    "train": tr.TrainConfig,
}


def _known_keys():
    keys = {"seed": int}
    for prefix, cls in _SECTIONS.items():
        for f in fields(cls):
            keys[f"{prefix}.{f.name}"] = f.type
    return keys


def _parse_value(raw: str, default):
    """Coerce raw text to the type of the field's default value."""
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        parts = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
        elem = default[0] if default else 0
        return tuple(int(p) if isinstance(elem, int) else float(p) for p in parts)
    return raw


@dataclass
class RunConfig:
    seed: int = 0
    overrides: dict = field(default_factory=dict)  # section -> {field: value}

    def model_config(self, kind: str):
        section = "zero" if kind == "stutterzero" else "former"
        return _SECTIONS[section](**self.overrides.get(section, {}))

    def train_config(self, kind: str) -> tr.TrainConfig:
        base = tr.default_train_config(kind)
        for name, value in self.overrides.get("train", {}).items():
            setattr(base, name, value)
        base.seed = self.seed
        return base


def _defaults():
    return {prefix: cls() for prefix, cls in _SECTIONS.items()}


def parse_run_config(path) -> RunConfig:
    defaults = _defaults()
    cfg = RunConfig()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected `key = value`")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key == "seed":
                cfg.seed = int(raw)
                continue
            if "." not in key:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            prefix, name = key.split(".", 1)
            if prefix not in _SECTIONS or not hasattr(defaults[prefix], name):
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            default = getattr(defaults[prefix], name)
            cfg.overrides.setdefault(prefix, {})[name] = _parse_value(raw, default)
    return cfg


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def write_resolved(cfg: RunConfig, path) -> None:
    """Echo every tunable with its effective value, overrides applied."""
    lines = [f"seed = {cfg.seed}"]
    for prefix, cls in _SECTIONS.items():
        base = cls()
        for name, value in cfg.overrides.get(prefix, {}).items():
            setattr(base, name, value)
        for f in fields(cls):
            lines.append(f"{prefix}.{f.name} = {_format_value(getattr(base, f.name))}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
