"""Run a registered case end to end and write the report files.

Outputs of :func:`run_case` in the output directory:

``report.csv``
    one row per step, columns :data:`igaest.estimates.REPORT_COLUMNS`
``mesh_step_<n>.txt``
    element listing of the primal mesh at step ``n``
``summary.json``
    timing totals, final row, status and an echo of the configuration
"""

import dataclasses
import json
import logging
import os
import time

import numpy as np

from .adaptivity import AdaptiveRunConfig, adaptive_solve
from .cases import case_options, get_case
from .estimates import TIMING_COLUMNS, report_csv
from .geometry import CellSet, Mesh, QuadratureRule

__all__ = ["CONFIG_KEYS", "parse_config_text", "load_config", "build_config", "run_case", "RunOutcome"]

log = logging.getLogger(__name__)

_FIELDS = {f.name: f for f in dataclasses.fields(AdaptiveRunConfig)}
_CASE_KEYS = ("k1", "k2")
_HARNESS_KEYS = ("out",)
CONFIG_KEYS = tuple(_FIELDS) + _CASE_KEYS + _HARNESS_KEYS

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key, value):
    if value is None:
        return None
    if key in _HARNESS_KEYS:
        return str(value)
    if key in _CASE_KEYS:
        return float(value)
    default = _FIELDS[key].default
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in _TRUE:
            return True
        if text in _FALSE:
            return False
        raise ValueError("%s expects a boolean, got %r" % (key, value))
    if isinstance(default, int) or key == "quad_order":
        if isinstance(value, str) and value.strip().lower() in ("", "none"):
            return None
        number = float(value)
        if number != int(number):
            raise ValueError("%s expects an integer, got %r" % (key, value))
        return int(number)
    if isinstance(default, float):
        return float(value)
    return str(value).strip()


def _normalise_key(key):
    key = key.strip().lstrip("-").replace("-", "_")
    if key not in CONFIG_KEYS:
        raise ValueError("invalid config key %r; valid keys: %s" % (key, ", ".join(CONFIG_KEYS)))
    return key


def parse_config_text(text):
    """Parse flat ``key = value`` lines; ``#`` starts a comment.

    Keys mirror the command-line flags, so ``maj-iters`` and ``maj_iters``
    are the same key. Unknown keys raise ``ValueError``.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError("line %d: expected key=value, got %r" % (lineno, raw))
        key, value = (s.strip() for s in line.split("=", 1))
        key = _normalise_key(key)
        out[key] = _coerce(key, value)
    return out


def load_config(path):
    with open(path) as fh:
        return parse_config_text(fh.read())


def build_config(file_values=None, overrides=None):
    """Merge file values with overrides (which win) into run settings.

    Returns ``(config, case_opts, out_dir)``. ``None`` overrides are ignored
    so unset command-line flags do not mask file values.
    """
    merged = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            key = _normalise_key(key)
            merged[key] = _coerce(key, value)
    case_opts = {k: merged.pop(k) for k in _CASE_KEYS if k in merged}
    out_dir = merged.pop("out", None)
    return AdaptiveRunConfig(**merged), case_opts, out_dir


@dataclasses.dataclass
class RunOutcome:
    """What :func:`run_case` produced."""

    result: object
    summary: dict
    files: list

    @property
    def ok(self):
        return not self.result.failed


def _jsonable(value):
    if isinstance(value, (np.floating, float)):
        return None if not np.isfinite(value) else float(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def run_case(name, config=None, out_dir=None, **options):
    """Run case ``name`` with ``config`` and write reports to ``out_dir``.

    ``options`` are case parameters such as ``k1`` and ``k2``. With
    ``out_dir=None`` nothing is written. Raises ``KeyError`` for an unknown
    case and ``ValueError`` for an invalid configuration; solver failures
    are reported through ``RunOutcome.ok``.
    """
    config = AdaptiveRunConfig() if config is None else config
    config.validate()
    options = {k: v for k, v in options.items() if v is not None}
    case = get_case(name, **options)
    rule = QuadratureRule(config.quad_order or max(config.p, config.q, config.r) + 2, case.dim)
    files = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    def on_step(step, row, hierarchy, u_h):
        if out_dir is None:
            return
        mesh = Mesh(CellSet.from_hierarchy(hierarchy), case.geometry, rule)
        path = os.path.join(out_dir, "mesh_step_%d.txt" % step)
        with open(path, "w") as fh:
            fh.write(mesh.dump())
        files.append(path)

    t0 = time.perf_counter()
    result = adaptive_solve(case, config, on_step=on_step)
    wall = time.perf_counter() - t0

    totals = {c: float(sum(getattr(r, c) for r in result.rows if np.isfinite(getattr(r, c))))
              for c in TIMING_COLUMNS}
    final = result.rows[-1].as_dict() if result.rows else {}
    summary = {
        "case": name,
        "case_options": {k: options[k] for k in sorted(options) if k in case_options(name)},
        "description": case.description,
        "status": "failed" if result.failed else ("converged" if result.converged else "completed"),
        "message": result.message,
        "n_rows": len(result.rows),
        "timing_totals": totals,
        "wall_time": wall,
        "final": {k: _jsonable(v) for k, v in final.items()},
        "config": {k: _jsonable(v) for k, v in dataclasses.asdict(config).items()},
    }
    if out_dir is not None:
        path = os.path.join(out_dir, "report.csv")
        with open(path, "w") as fh:
            fh.write(report_csv(result.rows))
        files.append(path)
        path = os.path.join(out_dir, "summary.json")
        with open(path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        files.append(path)
    return RunOutcome(result, summary, files)
