"""Run configuration: a flat `key = value` file format, typed coercion, and
the mapping onto model hyperparameters.

Every key can also arrive as a command-line flag of the same name with
underscores turned into dashes; flags override file values, and the
``TCVAE_PRECISION`` environment variable overrides both for precision.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from tcvae.model import ModelConfig

__all__ = ["ConfigError", "RunConfig", "build_model_config", "effective_precision",
           "load_run_config", "parse_config_file"]

PRECISION_TAGS = ("f32", "f64")


class ConfigError(ValueError):
    """Raised for unknown keys, malformed lines, or invalid values."""


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_columns(text: str):
    stripped = text.strip()
    if not stripped or stripped.lower() in ("all", "auto"):
        return None
    try:
        return tuple(int(part) for part in stripped.split(","))
    except ValueError as err:
        raise ConfigError(f"expected comma-separated column indices, got {text!r}") from err


def _parse_optional_int(text: str):
    stripped = text.strip()
    if not stripped or stripped.lower() == "auto":
        return None
    return int(stripped)


def _parse_optional_float(text: str):
    stripped = text.strip()
    if not stripped or stripped.lower() == "auto":
        return None
    return float(stripped)


@dataclass
class RunConfig:
    """Everything a command run needs beyond its positional inputs.

    ``lambda_kl`` left unset resolves to 0.1 for horizons 12 and 24 and to
    0.01 otherwise; ``token_len`` left unset resolves to half the window.
    """

    data: str = ""
    out_dir: str = "runs"
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    w: int = 24
    h: int = 24
    token_len: int | None = None
    d: int = 64
    k: int = 64
    heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 1
    flow_steps: int = 20
    lambda_kl: float | None = None
    learning_rate: float = 0.001
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    precision: str = "f32"
    target_columns: tuple[int, ...] | None = None
    use_tha: bool = True
    use_gam: bool = True
    use_fda: bool = True
    use_ccnf: bool = True
    use_kl: bool = True
    use_backcast: bool = True

    @property
    def effective_lambda(self) -> float:
        if self.lambda_kl is not None:
            return self.lambda_kl
        return 0.1 if self.h in (12, 24) else 0.01

    def split_fractions(self) -> tuple[float, float, float]:
        return (self.train_fraction, self.val_fraction, self.test_fraction)

    def as_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif value is None:
                value = "auto"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_CASTERS = {
    "data": str,
    "out_dir": str,
    "train_fraction": float,
    "val_fraction": float,
    "test_fraction": float,
    "w": int,
    "h": int,
    "token_len": _parse_optional_int,
    "d": int,
    "k": int,
    "heads": int,
    "encoder_layers": int,
    "decoder_layers": int,
    "flow_steps": int,
    "lambda_kl": _parse_optional_float,
    "learning_rate": float,
    "batch_size": int,
    "epochs": int,
    "seed": int,
    "precision": str,
    "target_columns": _parse_columns,
    "use_tha": _parse_bool,
    "use_gam": _parse_bool,
    "use_fda": _parse_bool,
    "use_ccnf": _parse_bool,
    "use_kl": _parse_bool,
    "use_backcast": _parse_bool,
}


def parse_config_file(path) -> dict[str, str]:
    """Read `key = value` lines; '#' starts a comment, blank lines skipped."""
    text = Path(path).read_text(encoding="utf-8")
    found: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CASTERS:
            raise ConfigError(f"{path}:{lineno}: unknown configuration key {key!r}")
        found[key] = value
    return found


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then file values, then overrides, with typed coercion."""
    merged: dict[str, str] = {}
    if path is not None:
        merged.update(parse_config_file(path))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _CASTERS:
            raise ConfigError(f"unknown configuration key {key!r}")
        merged[key] = value
    kwargs = {}
    for key, value in merged.items():
        try:
            kwargs[key] = _CASTERS[key](value) if isinstance(value, str) else value
        except ConfigError:
            raise
        except ValueError as err:
            raise ConfigError(f"invalid value for {key!r}: {value!r}") from err
    run = RunConfig(**kwargs)
    if run.precision not in PRECISION_TAGS:
        raise ConfigError(f"precision must be one of {PRECISION_TAGS}; "
                          f"got {run.precision!r}")
    total = sum(run.split_fractions())
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1; got {total}")
    return run


def effective_precision(run: RunConfig) -> str:
    """Config precision, unless TCVAE_PRECISION overrides it."""
    tag = os.environ.get("TCVAE_PRECISION", run.precision)
    if tag not in PRECISION_TAGS:
        raise ConfigError(f"TCVAE_PRECISION must be one of {PRECISION_TAGS}; "
                          f"got {tag!r}")
    return tag


def build_model_config(run: RunConfig, d_x: int) -> ModelConfig:
    return ModelConfig(
        d_x=d_x,
        w=run.w,
        h=run.h,
        d=run.d,
        k=run.k,
        heads=run.heads,
        token_len=run.token_len,
        encoder_layers=run.encoder_layers,
        decoder_layers=run.decoder_layers,
        flow_steps=run.flow_steps,
        lambda_kl=run.effective_lambda,
        learning_rate=run.learning_rate,
        batch_size=run.batch_size,
        epochs=run.epochs,
        seed=run.seed,
        target_columns=run.target_columns,
        use_tha=run.use_tha,
        use_gam=run.use_gam,
        use_fda=run.use_fda,
        use_ccnf=run.use_ccnf,
        use_kl=run.use_kl,
        use_backcast=run.use_backcast,
    )
