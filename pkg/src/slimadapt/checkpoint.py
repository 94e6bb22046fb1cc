"""Checkpoint files: one JSON document holding the architecture, every
parameter array (17 significant digits, exact float64 round-trip), the
training seed, the step count, and the training mode."""

from __future__ import annotations

import numpy as np

from . import jsonio
from .errors import ConfigError
from .slimnet import Architecture, ParamStore

__all__ = ["save_checkpoint", "load_checkpoint"]


def save_checkpoint(path, bank: ParamStore, seed: int, step: int, mode: str) -> None:
    doc = {
        "architecture": {
            "input_dim": bank.arch.input_dim,
            "block_max_widths": list(bank.arch.block_max_widths),
            "layers_per_block": bank.arch.layers_per_block,
            "class_count": bank.arch.class_count,
        },
        "params": {name: t.data for name, t in sorted(bank.params.items())},
        "seed": int(seed),
        "step": int(step),
        "mode": mode,
    }
    jsonio.dump_exact(doc, path)


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    doc = jsonio.load(path)
    for field in ("architecture", "params", "seed", "step"):
        if field not in doc:
            raise ConfigError(f"checkpoint missing field {field!r}")
    a = doc["architecture"]
    try:
        arch = Architecture(
            input_dim=a["input_dim"],
            block_max_widths=tuple(a["block_max_widths"]),
            layers_per_block=a["layers_per_block"],
            class_count=a["class_count"],
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed checkpoint architecture: {exc}") from exc
    bank = ParamStore(arch, np.random.default_rng(0))
    bank.load_arrays({k: np.asarray(v, dtype=np.float64) for k, v in doc["params"].items()})
    meta = {"seed": doc["seed"], "step": doc["step"], "mode": doc.get("mode", "slimda")}
    return bank, meta
