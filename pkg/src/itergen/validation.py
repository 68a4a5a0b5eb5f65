"""Shared input-validation helpers."""

from __future__ import annotations


class ConfigError(ValueError):
    pass


def check_config(cfg) -> None:
    """Structural constraints every model configuration must satisfy."""
    if cfg.d <= 0 or cfg.d % 2 != 0:
        raise ConfigError("embedding dimension d must be positive and even")
    if cfg.n_heads <= 0 or cfg.d % cfg.n_heads != 0:
        raise ConfigError("d must be divisible by the head count")
    if cfg.window < 1 or cfg.window % 2 == 0:
        raise ConfigError("convolution window must be odd and >= 1")
    if not 0.0 <= cfg.dropout < 1.0:
        raise ConfigError("dropout rate must lie in [0, 1)")
    for name in ("conv_layers", "nl_blocks", "ast_blocks", "test_blocks",
                 "code_blocks", "ff_first", "l_max", "s_max", "path_max", "n_rounds"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1")


def check_fitted(obj, attr: str) -> None:
    if getattr(obj, attr, None) is None:
        raise RuntimeError(
            f"{type(obj).__name__} is not fitted yet; call fit() before predicting"
        )
