# reports/render.py
# Result-file renderers (CSV rows, verdicts, provenance, one-line digest).

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

SCHEMA_VERSION = 1
RESULTS_FILE = "results.csv"
VERDICTS_FILE = "verdicts.json"
PROVENANCE_FILE = "provenance.json"

# Golden headers; bump SCHEMA_VERSION whenever one of these changes.
CSV_COLUMNS: Dict[str, tuple[str, ...]] = {
    "validate-speed": ("speed", "condition", "x", "detail", "sigma_b_sq", "sigma_e_sq"),
    "scan": (
        "t", "sigma", "tau", "phase", "region", "boundary_distance", "excluded", "predicted",
        "corrected", "median", "iqr", "replicas", "overflowed", "within_tolerance",
    ),
    "run": (
        "t", "replica", "sigma", "tau", "n_t", "max_x", "max_x_minus_m", "log_abs", "arg",
        "value_re", "value_im", "envelope_crossed", "envelope_crossed_integer", "overflowed",
    ),
    "b1": ("t", "replica", "sigma", "tau", "rho", "n_t", "m_re", "m_im", "overflowed"),
    "b2": (
        "t", "replica", "sigma", "tau", "rho", "n_t", "max_x_minus_m", "extremal_points",
        "cluster_count", "w_re", "w_im", "overflowed",
    ),
    "b3": ("t", "replica", "sigma", "tau", "rho", "n_t", "n_re", "n_im", "coupled_martingale", "overflowed"),
    "envelope": (
        "t", "gamma", "C", "replicas", "p_hat", "stderr", "p_hat_integer", "stderr_integer",
        "union_bound", "overflowed",
    ),
    "oracle": (
        "t", "sigma", "tau", "rho", "phase", "first_moment_re", "first_moment_im", "second_moment_abs",
        "second_moment_abs_offdiag", "plateau_abs", "second_moment_b1", "divergent",
    ),
    "covariance": ("t", "rho", "d_lo", "d_hi", "n", "cov", "se", "predicted"),
    "moment": ("t", "sigma", "tau", "rho", "phase_factor", "ratio_re", "ratio_im", "stderr", "z"),
}


def format_cell(value: Any) -> str:
    """Shortest round-trip text for floats; stable text for everything else."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def schema_line(experiment: str) -> str:
    return f"# crem-sim results schema={experiment}/v{SCHEMA_VERSION}"


def render_results_csv(experiment: str, rows: Sequence[Mapping[str, Any]]) -> str:
    columns = CSV_COLUMNS[experiment]
    frame = pd.DataFrame(list(rows), columns=list(columns)) if rows else pd.DataFrame(columns=list(columns))
    missing = [c for c in columns if rows and c not in rows[0]]
    if missing:
        raise KeyError(f"{experiment} rows are missing columns: {missing}")
    text = frame[list(columns)].astype(object).apply(lambda col: col.map(format_cell))
    body = text.to_csv(index=False, lineterminator="\n")
    return schema_line(experiment) + "\n" + body


def _jsonable(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else format_cell(value)
    if isinstance(value, complex):
        return [_jsonable(value.real), _jsonable(value.imag)]
    return value


def render_json(payload: Mapping[str, Any]) -> str:
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"


def build_verdicts_payload(experiment: str, verdicts: Iterable[Mapping[str, Any]]) -> Dict[str, Any]:
    items = list(verdicts)
    gated = [v for v in items if v.get("passed") is not None]
    return {
        "schema": f"{experiment}/v{SCHEMA_VERSION}",
        "experiment": experiment,
        "passed": all(v["passed"] for v in gated),
        "gated": len(gated),
        "verdicts": items,
    }


def build_provenance_payload(
    experiment: str,
    config: Mapping[str, Any],
    config_meta: Mapping[str, Any],
    version: str,
) -> Dict[str, Any]:
    """Everything needed to rerun: resolved config, source, library versions.

    No wall-clock time or worker count, so files stay byte-identical.
    """
    import scipy

    return {
        "schema": f"provenance/v{SCHEMA_VERSION}",
        "experiment": experiment,
        "crem_sim_version": version,
        "config": dict(config),
        "config_source": {"source": config_meta.get("source"), "path": config_meta.get("path")},
        "libraries": {"numpy": np.__version__, "scipy": scipy.__version__, "pandas": pd.__version__},
    }


def write_outputs(out_dir: Path, experiment: str, rows: Sequence[Mapping[str, Any]], verdicts: Mapping[str, Any], provenance: Mapping[str, Any]) -> Dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        RESULTS_FILE: out_dir / RESULTS_FILE,
        VERDICTS_FILE: out_dir / VERDICTS_FILE,
        PROVENANCE_FILE: out_dir / PROVENANCE_FILE,
    }
    paths[RESULTS_FILE].write_text(render_results_csv(experiment, rows), encoding="utf-8")
    paths[VERDICTS_FILE].write_text(render_json(verdicts), encoding="utf-8")
    paths[PROVENANCE_FILE].write_text(render_json(provenance), encoding="utf-8")
    return paths


def build_digest_line(experiment: str, verdicts: Mapping[str, Any], rows: int, overflowed: int) -> str:
    """Return a single-line run digest for logs."""
    items = verdicts.get("verdicts", [])
    passed = sum(1 for v in items if v.get("passed") is True)
    failed = sum(1 for v in items if v.get("passed") is False)
    info = sum(1 for v in items if v.get("passed") is None)

    return (
        "crem-sim digest | "
        f"experiment:{experiment} | rows:{rows} | overflowed:{overflowed} | "
        f"pass:{passed} fail:{failed} info:{info} | overall:{'ok' if verdicts.get('passed') else 'FAIL'}"
    )
