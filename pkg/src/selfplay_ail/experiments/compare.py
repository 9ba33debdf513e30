"""Side-by-side reward-magnitude and gradient-norm summaries of two run artifacts."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ComparisonError
from .runner import COLUMNS

BOUND_SLACK = 0.05


@dataclass(frozen=True)
class Artifact:
    path: Path
    rows: np.ndarray  # (K+1, len(COLUMNS))
    meta: dict

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, COLUMNS.index(name)]


def load_artifact(path) -> Artifact:
    p = Path(path)
    try:
        with p.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            body = [[float(v) for v in row] for row in reader]
    except OSError as exc:
        raise ComparisonError(f"cannot read artifact {p}: {exc.strerror or exc}") from exc
    except ValueError as exc:
        raise ComparisonError(f"{p}: malformed numeric field ({exc})") from exc
    if header is None or tuple(header) != COLUMNS:
        raise ComparisonError(f"{p}: unexpected header {header}")
    if len(body) < 2:
        raise ComparisonError(f"{p}: needs at least one iteration row")
    side = p.with_suffix(".json")
    try:
        meta = json.loads(side.read_text())
    except OSError as exc:
        raise ComparisonError(f"{p}: missing run metadata {side}") from exc
    return Artifact(p, np.array(body), meta)


def gradient_range(a: Artifact, warmup: int = 1) -> float:
    """max/min of the per-iteration peak gradient norm, skipping row 0 and ``warmup`` iterations."""
    g = a.column("grad_inf_norm")[1 + warmup :]
    if g.size == 0 or not np.all(g > 0):
        return math.nan
    return float(g.max() / g.min())


@dataclass(frozen=True)
class Comparison:
    max_dr_a: float
    max_dr_b: float
    max_dr_ratio: float
    grad_range_a: float
    grad_range_b: float
    grad_range_ratio: float
    grad_ratio_per_iteration: tuple
    reward_bound: float | None
    a_bounded: bool | None
    b_exceeds_bound: bool | None

    def as_dict(self) -> dict:
        return {
            "max_abs_dr": {"a": self.max_dr_a, "b": self.max_dr_b, "ratio_b_over_a": self.max_dr_ratio},
            "grad_range": {"a": self.grad_range_a, "b": self.grad_range_b, "ratio_b_over_a": self.grad_range_ratio},
            "grad_ratio_per_iteration": list(self.grad_ratio_per_iteration),
            "reward_bound": self.reward_bound,
            "a_bounded": self.a_bounded,
            "b_exceeds_bound": self.b_exceeds_bound,
        }


def _ratio(num: float, den: float) -> float:
    if num == den:
        return 1.0
    return num / den if den != 0 else math.inf


def compare_dynamics(path_a, path_b) -> Comparison:
    """Compare artifact ``a`` (typically SPIF) with ``b`` (typically SPIN).

    Ratios are b over a.  When ``a`` is a chi-square run its reward bound is
    1/(2 c alpha) (1/c at alpha = 1/2); ``a_bounded`` says whether every logged
    max|dr| stays within that bound plus 0.05.
    """
    a, b = load_artifact(path_a), load_artifact(path_b)
    for key in ("instance_digest", "seed"):
        if a.meta.get(key) != b.meta.get(key):
            raise ComparisonError(f"artifacts differ in {key}: {a.meta.get(key)!r} vs {b.meta.get(key)!r}")
    if a.rows.shape != b.rows.shape:
        raise ComparisonError(f"artifacts have different iteration counts: {a.rows.shape[0] - 1} vs {b.rows.shape[0] - 1}")

    dr_a = float(a.column("max_abs_dr")[1:].max())
    dr_b = float(b.column("max_abs_dr")[1:].max())
    ga, gb = gradient_range(a), gradient_range(b)
    na, nb = a.column("grad_inf_norm")[1:], b.column("grad_inf_norm")[1:]
    per_iter = tuple(_ratio(float(y), float(x)) for x, y in zip(na, nb))

    bound = a_ok = b_over = None
    params = a.meta.get("method_params", {})
    if a.meta.get("method") == "spif" and "c" in params:
        bound = 1.0 / (2.0 * params["c"] * params.get("alpha", 0.5))
        a_ok = dr_a <= bound + BOUND_SLACK
        b_over = dr_b > bound
    return Comparison(
        dr_a, dr_b, _ratio(dr_b, dr_a), ga, gb, _ratio(gb, ga) if not math.isnan(ga) else math.nan,
        per_iter, bound, a_ok, b_over,
    )
