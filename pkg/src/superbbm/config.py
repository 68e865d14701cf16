"""Experiment configuration: mechanism files and run descriptions.

Mechanism files are TOML or JSON with keys alpha (required), beta,
atoms = [[x, w], ...], gamma = [[c, k, b], ...].
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError
from .mechanism import BranchingMechanism, JumpMeasure


@dataclass(frozen=True)
class ExperimentConfig:
    """One CLI experiment: where the mechanism lives, what to run, and where
    the output goes. validate() enforces the cross-field invariants before
    any work starts."""

    mechanism_path: str | None
    kind: str
    seed: int
    out: str | None
    fmt: str
    rho: float | None = None
    t: float | None = None
    z: float | None = None
    n: int | None = None

    def validate(self):
        if self.mechanism_path is not None and not Path(self.mechanism_path).exists():
            raise ConfigError(f"mechanism file not found: {self.mechanism_path}")
        if self.n is not None and self.n < 1:
            raise ConfigError("replica count must be at least 1")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must fit in 64 bits")
        if self.fmt not in ("csv", "json"):
            raise ConfigError(f"unknown output format {self.fmt!r}")
        return self


def load_mechanism(path) -> BranchingMechanism:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"mechanism file not found: {path}")
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(path.read_text())
        else:
            data = tomllib.loads(path.read_text())
    except Exception as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    if not isinstance(data, dict) or "alpha" not in data:
        raise ConfigError(f"{path} must define at least 'alpha'")
    try:
        atoms = tuple((float(x), float(w)) for x, w in data.get("atoms", ()))
        gammas = tuple((float(c), int(k), float(b)) for c, k, b in data.get("gamma", ()))
        return BranchingMechanism(
            alpha=float(data["alpha"]),
            beta=float(data.get("beta", 0.0)),
            pi=JumpMeasure(atoms=atoms, gamma_components=gammas),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid mechanism in {path}: {exc}") from exc
