"""Simulation config: flat key=value files, XLSX workbooks, env overrides."""
from __future__ import annotations

import dataclasses
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

from .errors import ConfigError

log = logging.getLogger("crem.config")

__all__ = [
    "SimConfig",
    "DEFAULT_POPULATION_CAP",
    "parse_text",
    "read_xlsx",
    "build_config",
    "load_config",
    "apply_env",
    "env_truthy",
    "int_env",
]

DEFAULT_POPULATION_CAP = 2**27

Beta = Tuple[float, float]


def env_truthy(name: str, default: bool = False) -> bool:
    raw = os.getenv(name)
    if raw is None:
        return default
    return str(raw).strip().lower() in {"1", "true", "yes", "y", "on"}


def int_env(name: str, default: int) -> int:
    try:
        return int(os.getenv(name, str(default)) or str(default))
    except Exception:
        return default


@dataclass(frozen=True)
class SimConfig:
    speed: str = "exp:3.0"
    offspring: str = "binary"
    t: float = 6.0
    times: Tuple[float, ...] = ()
    rho: float = 0.0
    betas: Tuple[Beta, ...] = ((0.0, 0.0),)
    beta_grid: Optional[Tuple[float, float, float]] = None
    boundary_band: float = 0.2
    replicas: int = 32
    seed: int = 0
    grid_step: Optional[float] = None
    envelope: Optional[Tuple[float, float]] = None
    envelope_C: Tuple[float, ...] = (5.0, 10.0, 20.0, 40.0)
    snapshot: Optional[Tuple[float, Optional[float]]] = None
    population_cap: int = DEFAULT_POPULATION_CAP
    phase_factor: int = 1
    quad_rel_tol: float = 1e-9
    quad_max_depth: int = 40
    strict_speed: bool = True
    scan_tolerance: float = 0.15

    def __post_init__(self) -> None:
        if self.replicas < 1:
            raise ConfigError("replicas", "must be >= 1")
        for horizon in self.horizons():
            if not (horizon > 0 and math.isfinite(horizon)):
                raise ConfigError("t" if not self.times else "times", f"horizon must be finite and > 0, got {horizon}")
        if not abs(self.rho) <= 1:
            raise ConfigError("rho", f"|rho| must be <= 1, got {self.rho}")
        for sigma, tau in self.betas:
            if not (math.isfinite(sigma) and math.isfinite(tau)):
                raise ConfigError("betas", f"non-finite beta ({sigma}, {tau})")
        if self.phase_factor not in (1, 2):
            raise ConfigError("phase_factor", "must be 1 or 2")
        if self.quad_rel_tol <= 0:
            raise ConfigError("quad_rel_tol", "must be > 0")
        if self.grid_step is not None and self.grid_step <= 0:
            raise ConfigError("grid_step", "must be > 0")
        if self.population_cap < 1:
            raise ConfigError("population_cap", "must be >= 1")

    def horizons(self) -> Tuple[float, ...]:
        return self.times or (self.t,)

    def grid_step_for(self, horizon: float) -> float:
        """Envelope grid spacing: configured, else 0.05*t capped at 0.25."""
        if self.grid_step is not None:
            return min(self.grid_step, horizon)
        return min(0.05 * horizon, 0.25)

    def beta_list(self) -> Tuple[Beta, ...]:
        """Explicit betas, or the square grid when beta_grid is set."""
        if self.beta_grid is None:
            return self.betas
        start, stop, step = self.beta_grid
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        axis = [round(start + i * step, 12) for i in range(count)]
        return tuple((s, u) for s in axis for u in axis)

    def replace(self, **changes: Any) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_provenance(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data["population_cap"] = int(self.population_cap)
        return data


# ---------- parsing helpers ----------
def _float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {raw!r}") from None


def _int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        pass
    value = _float(key, raw)
    if not value.is_integer():
        raise ConfigError(key, f"expected an integer, got {raw!r}")
    return int(value)


def _floats(key: str, raw: str) -> Tuple[float, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError(key, "expected a comma-separated list of numbers")
    return tuple(_float(key, p) for p in parts)


def _pair(key: str, raw: str) -> Tuple[float, float]:
    values = _floats(key, raw)
    if len(values) != 2:
        raise ConfigError(key, f"expected two numbers, got {raw!r}")
    return values[0], values[1]


def _betas(key: str, raw: str) -> Tuple[Beta, ...]:
    pairs = [chunk.strip() for chunk in raw.split(";") if chunk.strip()]
    if not pairs:
        raise ConfigError(key, "expected 'sigma,tau' pairs separated by ';'")
    return tuple(_pair(key, chunk) for chunk in pairs)


def _grid(key: str, raw: str) -> Tuple[float, float, float]:
    parts = [p.strip() for p in raw.split(":")]
    if len(parts) != 3:
        raise ConfigError(key, f"expected start:stop:step, got {raw!r}")
    start, stop, step = (_float(key, p) for p in parts)
    if step <= 0 or stop < start:
        raise ConfigError(key, "need step > 0 and stop >= start")
    return start, stop, step


def _snapshot(key: str, raw: str) -> Tuple[float, Optional[float]]:
    values = _floats(key, raw)
    if len(values) == 1:
        return values[0], None
    if len(values) == 2:
        return values[0], values[1]
    raise ConfigError(key, f"expected 'B' or 'B,w', got {raw!r}")


def _truthy(raw: str) -> bool:
    return str(raw).strip().lower() in {"1", "true", "yes", "y", "on"}


def _text(_key: str, raw: str) -> str:
    return raw


_CONVERTERS: Dict[str, Callable[[str, str], Any]] = {
    "speed": _text,
    "offspring": _text,
    "t": _float,
    "times": _floats,
    "rho": _float,
    "betas": _betas,
    "beta_grid": _grid,
    "boundary_band": _float,
    "replicas": _int,
    "seed": _int,
    "grid_step": _float,
    "envelope": _pair,
    "envelope_C": _floats,
    "snapshot": _snapshot,
    "population_cap": _int,
    "phase_factor": _int,
    "quad_rel_tol": _float,
    "quad_max_depth": _int,
    "strict_speed": lambda _k, raw: _truthy(raw),
    "scan_tolerance": _float,
}


def _unquote(value: str) -> str:
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in ("'", '"'):
        return value[1:-1]
    return value


def parse_text(text: str) -> Dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` comments and ``[section]`` lines are skipped."""
    raw: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped or (stripped.startswith("[") and stripped.endswith("]")):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}", f"expected key = value, got {line.strip()!r}")
        key, value = stripped.split("=", 1)
        raw[key.strip()] = _unquote(value)
    return raw


def read_xlsx(path: Path) -> Dict[str, str]:
    """Read key/value rows from the ``General`` sheet of a workbook."""
    import pandas as pd

    try:
        frame = pd.read_excel(path, sheet_name="General", dtype=str)
    except Exception as exc:
        raise ConfigError("General", f"workbook {path} has no readable General sheet: {exc}") from exc
    headers = {str(col).strip().lower(): col for col in frame.columns}
    missing = [name for name in ("key", "value") if name not in headers]
    if missing:
        raise ConfigError("General", "missing required header(s): " + ", ".join(missing))
    raw: Dict[str, str] = {}
    for record in frame.to_dict("records"):
        key = str(record.get(headers["key"]) or "").strip()
        value = record.get(headers["value"])
        if not key or key.lower() == "nan" or value is None:
            continue
        raw[key] = _unquote(str(value))
    return raw


def build_config(raw: Dict[str, str], base: Optional[SimConfig] = None) -> SimConfig:
    changes: Dict[str, Any] = {}
    for key, value in raw.items():
        converter = _CONVERTERS.get(key)
        if converter is None:
            raise ConfigError(key, "unknown key")
        if key in ("grid_step", "envelope", "snapshot", "beta_grid") and value.strip().lower() in ("", "none"):
            changes[key] = None
            continue
        changes[key] = converter(key, value.strip())
    return dataclasses.replace(base or SimConfig(), **changes)


def apply_env(cfg: SimConfig) -> SimConfig:
    changes: Dict[str, Any] = {}
    if os.getenv("CREM_SEED"):
        changes["seed"] = _int("CREM_SEED", os.environ["CREM_SEED"])
    if os.getenv("CREM_POPULATION_CAP"):
        changes["population_cap"] = int_env("CREM_POPULATION_CAP", cfg.population_cap)
    return cfg.replace(**changes) if changes else cfg


def load_config(path: Optional[str]) -> Tuple[SimConfig, Dict[str, Any]]:
    """Load a config file (text or .xlsx) and return it with source metadata."""
    meta: Dict[str, Any] = {"source": "defaults", "path": None, "status": "loading", "last_error": None}
    raw: Dict[str, str] = {}
    if path:
        src = Path(path)
        meta["path"] = str(src)
        if not src.exists():
            meta["status"] = "error"
            raise ConfigError("--config", f"file not found: {src}")
        if src.suffix.lower() in (".xlsx", ".xlsm"):
            raw = read_xlsx(src)
            meta["source"] = "Excel file"
        else:
            raw = parse_text(src.read_text(encoding="utf-8"))
            meta["source"] = "text file"
    cfg = apply_env(build_config(raw))
    meta["status"] = "ready"
    log.info("[config] source=%s path=%s keys=%d", meta["source"], meta["path"], len(raw))
    return cfg, meta
