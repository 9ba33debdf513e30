"""TOML run configurations, validated in full before anything runs.

Example::

    kind = "spif"
    seeds = [0, 1, 2]

    [instance]
    n_contexts = 4
    n_responses = 8

    [method]
    iterations = 10
    beta = 1.0
    c = 2.0

    [sweep]
    c = [0.125, 0.5, 2.0]
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from ..bandit import MAX_SEED
from ..errors import ConfigValidationError

KINDS = (
    "game",
    "spif",
    "spin",
    "linear_spin",
    "sppo",
    "inpo",
    "iter_dpo",
    "gap_rate_sweep",
    "c_ablation",
    "regularizer_ablation",
)

INSTANCE_DEFAULTS = {
    "n_contexts": 4,
    "n_responses": 8,
    "concentration": 0.5,
    "reference": "uniform",
}

METHOD_DEFAULTS = {
    "iterations": 10,
    "beta": 1.0,
    "zeta": 1e-3,
    "c": 2.0,
    "alpha": 0.5,
    "r_max": 1.0,
    "inner_steps": 100,
    "lr": 1.0,
    "sampling": "exact",
    "n_samples": 1000,
    "regularizer": "box",
    "link": "identity",
    "mode": "unmapped",
    "schedule": "fixed",
    "bregman_form": "union",
    "eta": 1.0,
    "tau": 0.5,
}

# game-kind runs use a proximal weight of order one unless told otherwise
GAME_ZETA_DEFAULT = 1.0

SWEEP_AXES = {
    "gap_rate_sweep": ("iterations", (16, 64, 256, 1024)),
    "c_ablation": ("c", (0.125, 0.5, 2.0)),
    "regularizer_ablation": ("regularizer", ("box", "mixed_quadratic")),
}

_CHOICES = {
    "sampling": ("exact", "monte_carlo"),
    "regularizer": ("box", "mixed_quadratic"),
    "link": ("identity", "logistic"),
    "mode": ("unmapped", "mapped_delta_r"),
    "schedule": ("fixed", "theorem"),
    "bregman_form": ("union", "expert"),
    "reference": ("uniform", "random"),
}
_POSITIVE_INT = ("iterations", "inner_steps", "n_samples")
_POSITIVE = ("beta", "c", "r_max", "lr", "eta", "tau", "concentration")


@dataclass(frozen=True)
class RunConfig:
    kind: str
    seeds: tuple
    instance: dict
    method: dict
    sweep: dict = field(default_factory=dict)
    out: str | None = None
    threads: int = 1

    def echo(self) -> dict:
        return {
            "kind": self.kind,
            "seeds": list(self.seeds),
            "threads": self.threads,
            "instance": dict(self.instance),
            "method": dict(self.method),
            "sweep": {k: list(v) for k, v in self.sweep.items()},
        }

    def points(self):
        """[(label, method dict)] for every sweep point, in a fixed order."""
        if not self.sweep:
            return [("", dict(self.method))]
        (axis, values), = self.sweep.items()
        out = []
        for v in values:
            m = dict(self.method)
            m[axis] = v
            out.append((f"{axis}={v}", m))
        return out


def _check_value(key, value, problems, where):
    if key in _POSITIVE_INT:
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            problems.append(f"{where}.{key} must be a positive integer, got {value!r}")
    elif key in _POSITIVE:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
            problems.append(f"{where}.{key} must be a positive number, got {value!r}")
    elif key in ("zeta",):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not value >= 0:
            problems.append(f"{where}.{key} must be a non-negative number, got {value!r}")
    elif key == "alpha":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0 < value < 1:
            problems.append(f"{where}.alpha must lie in (0, 1), got {value!r}")
    elif key in _CHOICES:
        if value not in _CHOICES[key]:
            problems.append(f"{where}.{key} must be one of {list(_CHOICES[key])}, got {value!r}")
    elif key in ("n_contexts",):
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            problems.append(f"{where}.{key} must be a positive integer, got {value!r}")
    elif key in ("n_responses",):
        if isinstance(value, bool) or not isinstance(value, int) or value < 2:
            problems.append(f"{where}.{key} must be an integer >= 2, got {value!r}")


def _cross_checks(kind, m, problems, where):
    if kind in ("game", "gap_rate_sweep", "regularizer_ablation"):
        if m.get("regularizer") == "box" and not m.get("zeta", 1) > 0:
            problems.append(f"{where}: a box regularizer needs zeta > 0")
        if m.get("regularizer") == "mixed_quadratic" and m.get("link") != "identity":
            problems.append(f"{where}: the mixed quadratic regularizer needs the identity link")
    if kind == "inpo" and isinstance(m.get("tau"), (int, float)) and isinstance(m.get("eta"), (int, float)):
        if m["tau"] > m["eta"]:
            problems.append(f"{where}: INPO needs tau <= eta, got tau={m['tau']}, eta={m['eta']}")


def parse_config(data: dict, seeds=None, out=None, threads=None) -> RunConfig:
    """Validate a parsed TOML mapping; raise ConfigValidationError listing every problem."""
    problems: list[str] = []
    data = copy.deepcopy(data)
    known = {"kind", "seeds", "instance", "method", "sweep", "out", "threads"}
    for key in sorted(set(data) - known):
        problems.append(f"unknown top-level key {key!r}")

    kind = data.get("kind")
    if kind not in KINDS:
        problems.append(f"kind must be one of {list(KINDS)}, got {kind!r}")

    raw_seeds = seeds if seeds is not None else data.get("seeds", [0])
    if not isinstance(raw_seeds, (list, tuple)) or not raw_seeds:
        problems.append(f"seeds must be a non-empty list of integers, got {raw_seeds!r}")
        raw_seeds = []
    for s in raw_seeds:
        if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s <= MAX_SEED:
            problems.append(f"seed {s!r} is not a 64-bit unsigned integer")
    if len(set(raw_seeds)) != len(raw_seeds):
        problems.append("seeds must be distinct")

    inst = dict(INSTANCE_DEFAULTS)
    user_inst = data.get("instance", {})
    if not isinstance(user_inst, dict):
        problems.append("[instance] must be a table")
        user_inst = {}
    for key in sorted(set(user_inst) - set(INSTANCE_DEFAULTS)):
        problems.append(f"unknown instance key {key!r}")
    inst.update(user_inst)
    for key, value in inst.items():
        _check_value(key, value, problems, "instance")

    method = dict(METHOD_DEFAULTS)
    if kind in ("game", "gap_rate_sweep", "regularizer_ablation"):
        method["zeta"] = GAME_ZETA_DEFAULT
    if kind == "gap_rate_sweep":
        method["schedule"] = "theorem"
    user_method = data.get("method", {})
    if not isinstance(user_method, dict):
        problems.append("[method] must be a table")
        user_method = {}
    for key in sorted(set(user_method) - set(METHOD_DEFAULTS)):
        problems.append(f"unknown method key {key!r}")
    method.update(user_method)
    for key, value in method.items():
        _check_value(key, value, problems, "method")
    _cross_checks(kind, method, problems, "method")

    sweep = data.get("sweep", {})
    if not isinstance(sweep, dict):
        problems.append("[sweep] must be a table")
        sweep = {}
    if kind in SWEEP_AXES:
        axis, default = SWEEP_AXES[kind]
        extra = set(sweep) - {axis}
        for key in sorted(extra):
            problems.append(f"{kind} sweeps only over {axis!r}, not {key!r}")
        values = sweep.get(axis, list(default))
        if not isinstance(values, list) or not values:
            problems.append(f"sweep.{axis} must be a non-empty list")
            values = []
        if axis == "iterations" and len({v for v in values if isinstance(v, int)}) < 3:
            problems.append("gap_rate_sweep needs at least 3 distinct iteration counts")
        for i, v in enumerate(values):
            _check_value(axis, v, problems, f"sweep.{axis}[{i}]")
            _cross_checks(kind, {**method, axis: v}, problems, f"sweep.{axis}[{i}]")
        sweep = {axis: tuple(values)}
    elif sweep:
        problems.append(f"kind {kind!r} does not take a [sweep] table")

    out_dir = out if out is not None else data.get("out")
    if out_dir is not None and not isinstance(out_dir, str):
        problems.append(f"out must be a path string, got {out_dir!r}")
    n_threads = threads if threads is not None else data.get("threads", 1)
    if isinstance(n_threads, bool) or not isinstance(n_threads, int) or n_threads < 1:
        problems.append(f"threads must be a positive integer, got {n_threads!r}")

    if problems:
        raise ConfigValidationError(problems)
    return RunConfig(kind, tuple(raw_seeds), inst, method, sweep, out_dir, n_threads)


def load_config(path, seeds=None, out=None, threads=None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigValidationError([f"cannot read config {p}: {exc.strerror or exc}"]) from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigValidationError([f"{p}: invalid TOML: {exc}"]) from exc
    return parse_config(data, seeds=seeds, out=out, threads=threads)
