"""Run configuration: flat key=value files with includes and env overrides.

Precedence, lowest to highest: built-in defaults, included files (depth
first), the file itself, ``CGT_``-prefixed environment variables, then
explicit command-line flags.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

ENV_PREFIX = "CGT_"

DEFAULTS = {
    # model (reference setting)
    "d": 256,
    "n_heads": 8,
    "window": 3,
    "conv_layers": 2,
    "nl_blocks": 6,
    "ast_blocks": 5,
    "test_blocks": 6,
    "code_blocks": 5,
    "ff_first": 1024,
    "dropout": 0.15,
    "l_max": 512,
    "s_max": 16,
    "path_max": 16,
    # training
    "epochs": 30,
    "batch_size": 16,
    "lr": None,
    "min_freq_text": 2,
    "fresh_per_round": False,
    # pipeline
    "n_rounds": 3,
    "seed": 0,
    # decoding
    "max_actions": 350,
    "beam_width": 1,
    # harness
    "time_limit": 5.0,
    "memory_limit": 256 * 1024 * 1024,
    "parallelism": 4,
    # ablation
    "disable_test_info": False,
    "disable_code_encoder": False,
}


class ConfigFileError(Exception):
    pass


@dataclass
class RunConfig:
    corpus_dir: str = ""
    grammar_path: str = ""
    run_dir: str = "runs/default"
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def __getattr__(self, name):
        values = object.__getattribute__(self, "values")
        if name in values:
            return values[name]
        raise AttributeError(name)

    def model_kwargs(self) -> dict:
        keys = (
            "d", "n_heads", "window", "conv_layers", "nl_blocks", "ast_blocks",
            "test_blocks", "code_blocks", "ff_first", "dropout", "l_max", "s_max",
            "path_max", "epochs", "batch_size", "lr", "seed", "min_freq_text",
        )
        return {k: self.values[k] for k in keys}


def _coerce(key: str, raw: str):
    default = DEFAULTS.get(key)
    text = raw.strip()
    if text.lower() in ("none", "null", ""):
        return None
    if isinstance(default, bool) or text.lower() in ("true", "false"):
        return text.lower() == "true"
    if isinstance(default, int) and not isinstance(default, bool):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if default is None:
        # untyped key: best-effort numeric, else string
        for cast in (int, float):
            try:
                return cast(text)
            except ValueError:
                pass
    return text


def parse_config_text(text: str, base_dir: str = ".") -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include "):
            inc = line[len("include "):].strip()
            path = inc if os.path.isabs(inc) else os.path.join(base_dir, inc)
            out.update(load_config_file(path))
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = _coerce(key.strip(), value)
    return out


def load_config_file(path: str) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigFileError(f"cannot read config {path}: {err}") from err
    return parse_config_text(text, base_dir=os.path.dirname(path) or ".")


def env_overrides(environ=None) -> dict:
    environ = environ if environ is not None else os.environ
    out = {}
    for key, raw in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            out[name] = _coerce(name, raw)
    return out


def build_run_config(
    config_path: str | None = None,
    overrides: dict | None = None,
    environ=None,
) -> RunConfig:
    values = dict(DEFAULTS)
    special = {}
    for source in (
        load_config_file(config_path) if config_path else {},
        env_overrides(environ),
        overrides or {},
    ):
        for key, value in source.items():
            if value is None and key not in ("lr",):
                continue
            if key in ("corpus_dir", "grammar_path", "run_dir"):
                special[key] = str(value)
            else:
                values[key] = value
    cfg = RunConfig(values=values, **special)
    return cfg
