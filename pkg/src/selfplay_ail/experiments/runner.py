"""Execute a validated RunConfig and write CSV/JSON artifacts.

Each (method, seed, sweep point) job writes ``<name>.csv`` with one row per
iteration (row 0 is the initial policy) plus a ``<name>.json`` sidecar
describing the run.  Inner-loop methods also get ``<name>_steps.csv``.
``summary.json`` collects final metrics and, for sweeps, the derived
statistics.  Everything except the wall-clock field is a deterministic
function of the config.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..bandit import PolicyTable, RewardTable
from ..baselines import (
    InpoConfig,
    PreferenceOracle,
    inpo_step,
    iterative_dpo_step,
    linear_spin_update,
    spin_train,
    sppo_step,
)
from ..divergences import DivergenceKind, divergence
from ..errors import SelfPlayError
from ..game import GameConfig, argmax_policy, calibrated_schedule, game_value, rate_fit, run_selfplay
from ..reward_player import Box, Link, MixedQuadratic, sign_reward
from ..spif import BregmanForm, Exact, MonteCarlo, SpifConfig, SpifLossSpec, spif_train
from .config import RunConfig
from .instance import Instance, default_instance

COLUMNS = ("iteration", "J", "dual_gap", "kl_expert", "tv_expert", "max_abs_dr", "loss", "grad_inf_norm")
STEP_COLUMNS = ("iteration", "step", "loss", "grad_inf_norm", "max_abs_dr")

_KL = DivergenceKind.KL()
_TV = DivergenceKind.TV()

# the sweep kinds run one underlying method
_METHOD_OF = {"gap_rate_sweep": "game", "c_ablation": "spif", "regularizer_ablation": "game"}


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """What every method hands to the artifact writer.

    ``policies`` is pi^1..pi^{K+1}; ``rewards[k]`` is the reward of iteration
    k+1 (the game's r^k or a realized beta log-ratio); ``losses``, ``grad_norms``
    and ``max_drs`` hold one value per iteration.
    """

    policies: list
    rewards: list
    losses: list
    grad_norms: list
    max_drs: list
    r_max: float
    traces: list | None = None
    params: dict = field(default_factory=dict)


def instance_digest(inst: Instance) -> str:
    h = hashlib.sha256()
    for a in (inst.p_star.probs, inst.p_ref.probs, inst.rho.probs):
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        h.update(repr(a.shape).encode())
    return h.hexdigest()


def bt_oracle(inst: Instance) -> PreferenceOracle:
    """Bradley-Terry oracle whose induced expert is p_star (latent reward log p_star)."""
    return PreferenceOracle.bradley_terry(inst.p_star.log_probs)


# ------------------------------------------------------------------ methods


def _realized(p_next: PolicyTable, p_k: PolicyTable, scale: float) -> RewardTable:
    dr = scale * (p_next.log_probs - p_k.log_probs)
    return RewardTable(dr, float(np.max(np.abs(dr))))


def _from_history(hist, r_max=None, params=None) -> Trajectory:
    traces = hist.extras.get("traces")
    k = hist.iterations
    if traces is not None:
        losses = [float(t.loss[-1]) for t in traces]
        norms = [float(t.grad_inf_norm.max()) for t in traces]
        drs = [float(t.max_abs_dr.max()) for t in traces]
    else:
        losses, norms = [0.0] * k, [0.0] * k
        drs = [float(np.max(np.abs(r.values))) for r in hist.mapped_rewards]
    if r_max is None:
        r_max = max((float(np.max(np.abs(r.values))) for r in hist.rewards), default=0.0)
    return Trajectory(list(hist.policies), list(hist.rewards), losses, norms, drs, r_max, traces, params or {})


def _closed_form_loop(p_ref, iterations, step, scale) -> Trajectory:
    pk = p_ref
    policies, rewards = [pk], []
    for _ in range(iterations):
        nxt = step(pk)
        rewards.append(_realized(nxt, pk, scale))
        policies.append(nxt)
        pk = nxt
    drs = [float(np.max(np.abs(r.values))) for r in rewards]
    return Trajectory(policies, rewards, [0.0] * iterations, [0.0] * iterations, drs, max(drs, default=0.0))


def _inner_loop(p_ref, iterations, step, scale) -> Trajectory:
    pk = p_ref
    policies, rewards, traces = [pk], [], []
    for _ in range(iterations):
        nxt, tr = step(pk)
        nxt = PolicyTable(nxt.probs)
        rewards.append(_realized(nxt, pk, scale))
        policies.append(nxt)
        traces.append(tr)
        pk = nxt
    realized = max((r.r_max_bound for r in rewards), default=0.0)
    return Trajectory(
        policies,
        rewards,
        [float(t.loss[-1]) for t in traces],
        [float(t.grad_inf_norm.max()) for t in traces],
        [float(t.max_abs_dr.max()) for t in traces],
        realized,
        traces,
    )


def run_method(method: str, m: dict, inst: Instance, seed: int) -> Trajectory:
    """Run one method on one instance with the hyperparameters ``m``."""
    k = int(m["iterations"])
    if method == "game":
        beta, zeta = m["beta"], m["zeta"]
        params = {}
        if m["schedule"] == "theorem":
            beta, zeta, d_hat, b_hat = calibrated_schedule(k, inst.p_star, inst.p_ref, inst.rho, m["r_max"])
            params = {"beta": beta, "zeta": zeta, "d_hat": d_hat, "b_hat": b_hat}
        reg = Box(m["r_max"]) if m["regularizer"] == "box" else MixedQuadratic(m["c"], m["alpha"])
        cfg = GameConfig(k, beta, zeta, m["r_max"], reg, Link(m["link"]), m["mode"])
        hist = run_selfplay(cfg, inst.p_star, inst.p_ref, inst.rho)
        return _from_history(hist, m["r_max"], params)
    if method == "spif":
        spec = SpifLossSpec(m["beta"], m["c"], m["alpha"], m["zeta"], BregmanForm(m["bregman_form"]))
        sampling = MonteCarlo(m["n_samples"], seed) if m["sampling"] == "monte_carlo" else Exact()
        cfg = SpifConfig(k, spec, m["inner_steps"], m["lr"], sampling)
        return _from_history(spif_train(cfg, inst.p_star, inst.p_ref, inst.rho))
    if method == "spin":
        hist = spin_train(inst.p_star, inst.p_ref, inst.rho, m["beta"], k, m["inner_steps"], m["lr"])
        return _from_history(hist)
    if method == "linear_spin":
        traj = _closed_form_loop(
            inst.p_ref, k, lambda p: linear_spin_update(p, inst.p_star, inst.rho, m["beta"], m["r_max"]), m["beta"]
        )
        # the reward player of linear SPIN is the sign reward against pi^k
        signs = [sign_reward(inst.p_star, p, m["r_max"]) for p in traj.policies[:-1]]
        return Trajectory(traj.policies, signs, traj.losses, traj.grad_norms, traj.max_drs, m["r_max"])
    if method == "iter_dpo":
        oracle = bt_oracle(inst)
        return _closed_form_loop(inst.p_ref, k, lambda p: iterative_dpo_step(p, oracle, m["beta"]), m["beta"])
    if method == "sppo":
        oracle = bt_oracle(inst)
        return _inner_loop(
            inst.p_ref,
            k,
            lambda p: sppo_step(p, oracle, inst.rho, m["beta"], m["inner_steps"], m["lr"], m["c"], return_trace=True),
            m["beta"],
        )
    if method == "inpo":
        oracle = bt_oracle(inst)
        icfg = InpoConfig(m["eta"], m["tau"], inst.p_ref)
        return _inner_loop(
            inst.p_ref,
            k,
            lambda p: inpo_step(p, oracle, inst.rho, icfg, m["inner_steps"], m["lr"], return_trace=True),
            m["eta"],
        )
    raise ValueError(f"unknown method {method!r}")


# ------------------------------------------------------------------ rows


def trajectory_rows(traj: Trajectory, inst: Instance) -> list[tuple]:
    """K+1 rows; row k summarizes the first k iterations and the policy pi^{k+1}.

    The duality gap of row k uses the running averages of pi^1..pi^k and
    r^1..r^k with box radius ``traj.r_max``; row 0 averages pi^1 against the
    zero reward, so its gap is 0.
    """
    ps, rho = inst.p_star, inst.rho
    r_box = traj.r_max if traj.r_max > 0 else 1.0
    rows = []
    pol_sum = np.zeros(ps.shape)
    rew_sum = np.zeros(ps.shape)
    for k in range(len(traj.policies)):
        cur = traj.policies[k]
        kl = divergence(_KL, ps, cur, rho)
        tv = divergence(_TV, ps, cur, rho)
        if k == 0:
            rows.append((0, 0.0, 0.0, kl, tv, 0.0, 0.0, 0.0))
            continue
        prev = traj.policies[k - 1]
        r = traj.rewards[k - 1]
        pol_sum += prev.probs
        rew_sum += r.values
        pi_bar = PolicyTable.from_weights(pol_sum / k)
        r_bar = RewardTable(rew_sum / k)
        max_term = game_value(pi_bar, sign_reward(ps, pi_bar, r_box), ps, rho)
        min_term = game_value(argmax_policy(r_bar), r_bar, ps, rho)
        j = game_value(prev, r, ps, rho)
        rows.append(
            (k, j, max_term - min_term, kl, tv, traj.max_drs[k - 1], traj.losses[k - 1], traj.grad_norms[k - 1])
        )
    for row in rows:
        if not all(math.isfinite(v) for v in row):
            raise SelfPlayError(f"non-finite metric in artifact row {row[0]}")
    return rows


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def step_rows(traces) -> list[tuple]:
    out = []
    for k, t in enumerate(traces, start=1):
        for s in range(len(t.loss)):
            out.append((k, s, t.loss[s], t.grad_inf_norm[s], t.max_abs_dr[s]))
    return out


# ------------------------------------------------------------------ jobs


@dataclass(frozen=True)
class Job:
    name: str
    method: str
    seed: int
    point: str
    params: dict


def plan(config: RunConfig) -> list[Job]:
    method = _METHOD_OF.get(config.kind, config.kind)
    jobs = []
    for label, m in config.points():
        for seed in config.seeds:
            suffix = f"_{label.replace('=', '-')}" if label else ""
            jobs.append(Job(f"{method}_s{seed}{suffix}", method, seed, label, m))
    return jobs


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc


def execute(job: Job, config: RunConfig, out_dir: Path) -> dict:
    inst = default_instance(job.seed, **config.instance)
    traj = run_method(job.method, job.params, inst, job.seed)
    rows = trajectory_rows(traj, inst)
    _write(out_dir / f"{job.name}.csv", render_csv(COLUMNS, rows))
    if traj.traces is not None:
        _write(out_dir / f"{job.name}_steps.csv", render_csv(STEP_COLUMNS, step_rows(traj.traces)))
    meta = {
        "name": job.name,
        "kind": config.kind,
        "method": job.method,
        "seed": job.seed,
        "point": job.point,
        "instance": dict(config.instance),
        "instance_digest": instance_digest(inst),
        "method_params": dict(job.params),
        "derived_params": {k: float(v) for k, v in traj.params.items()},
        "reward_box": traj.r_max,
        "iterations": len(rows) - 1,
    }
    _write(out_dir / f"{job.name}.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    last = rows[-1]
    return {
        "file": f"{job.name}.csv",
        "method": job.method,
        "seed": job.seed,
        "point": job.point,
        "final": dict(zip(COLUMNS[1:], (float(v) for v in last[1:]))),
        "max_abs_dr": max(float(r[5]) for r in rows),
    }


def _sweep_summary(config: RunConfig, results: list[dict]) -> dict:
    out = {}
    if config.kind == "gap_rate_sweep":
        exps = {}
        for seed in config.seeds:
            pts = [(r["iterations"], r["final"]["dual_gap"]) for r in results if r["seed"] == seed]
            try:
                exps[str(seed)] = rate_fit(pts)[0]
            except SelfPlayError as exc:
                exps[str(seed)] = None
                out.setdefault("rate_fit_errors", {})[str(seed)] = str(exc)
        out["rate_exponents"] = exps
    if config.kind == "c_ablation":
        table = {}
        for c in config.sweep["c"]:
            tvs = {str(r["seed"]): r["final"]["tv_expert"] for r in results if r["c"] == c}
            table[_fmt(c)] = {"final_tv": tvs, "median_final_tv": float(np.median(list(tvs.values())))}
        out["c_ablation"] = table
    if config.kind == "regularizer_ablation":
        table = {}
        for reg in config.sweep["regularizer"]:
            finals = [r["final"] for r in results if r["regularizer"] == reg]
            table[reg] = {
                "median_dual_gap": float(np.median([f["dual_gap"] for f in finals])),
                "median_final_tv": float(np.median([f["tv_expert"] for f in finals])),
            }
        out["regularizer_ablation"] = table
    return out


def run(config: RunConfig, out_dir=None) -> dict:
    """Execute every job of ``config``, write artifacts and return the summary dict."""
    out = Path(out_dir if out_dir is not None else (config.out or "runs"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create output directory {out}: {exc.strerror}") from exc
    jobs = plan(config)
    t0 = time.perf_counter()
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(lambda j: execute(j, config, out), jobs))
    else:
        results = [execute(j, config, out) for j in jobs]
    for job, res in zip(jobs, results):
        res.update({k: job.params[k] for k in ("iterations", "c", "regularizer")})
    summary = {
        "version": __version__,
        "config": config.echo(),
        "wall_clock_seconds": time.perf_counter() - t0,
        "runs": results,
        **_sweep_summary(config, results),
    }
    _write(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    return summary
