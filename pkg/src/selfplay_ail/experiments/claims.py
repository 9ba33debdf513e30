"""Executable checks for the twelve numbered claims verified by ``selfplay-ail verify``.

Each ``claim_N`` runs its check end to end and returns a :class:`ClaimResult`.
Where a claim compares an implementation with an oracle, the oracle here is
computed by separate code (grid search, finite differences, direct algebra).
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from ..bandit import ContextDistribution, PolicyTable, make_rng
from ..baselines import (
    InpoConfig,
    PreferenceOracle,
    contraction_check_dpo,
    contraction_check_spin,
    inpo_ail_gradient,
    inpo_displayed_gradient,
    inpo_gradient,
    iterative_dpo_step,
    spin_exact_update,
    spin_train,
    sppo_ail_gradient,
    sppo_gradient,
)
from ..divergences import (
    DivergenceKind,
    brute_force_variational_max,
    divergence,
    optimal_mixed_chi2_reward,
    variational_value,
)
from ..game import GameConfig, Mode, calibrated_schedule, duality_gap, game_value, rate_fit, run_selfplay
from ..policy_player import kl_upper_check, one_step_descent_check
from ..reward_player import Box, MixedQuadratic, sign_reward
from ..spif import SpifConfig, SpifLossSpec, spif_gradient, spif_loss_exact, spif_train
from .instance import default_instance, random_pair

_KL = DivergenceKind.KL()
_TV = DivergenceKind.TV()

# Hyperparameters of the training-dynamics comparisons on the default instance.
DYNAMICS = {"beta": 1.0, "lr": 1.0, "inner_steps": 100, "iterations": 10, "zeta": 1e-3}
RATE_KS = (16, 64, 256, 1024)
SEEDS = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class ClaimResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float
    budget: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:>2}. {self.title}: {self.detail} ({self.seconds:.2f}s / {self.budget:g}s)"


def _timed(number, title, budget, fn) -> ClaimResult:
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    if dt > budget:
        detail += f"; over the {budget:g}s budget"
    return ClaimResult(number, title, bool(ok) and dt <= budget, detail, dt, budget)


# --------------------------------------------------------------------- 1


def claim_1(n_pairs: int = 1000, seed: int = 1) -> ClaimResult:
    def run():
        rng = make_rng(seed)
        worst_val, worst_r, n = -np.inf, -np.inf, 0
        low = np.inf
        for _ in range(n_pairs):
            ps, p, rho = random_pair(rng)
            for c in (0.125, 0.5, 2.0, 8.0):
                val = divergence(DivergenceKind.MixedChi2(0.5, c), ps, p, rho)
                r = optimal_mixed_chi2_reward(ps, p, c)
                if not np.max(np.abs(r.values)) <= 1.0 / c:
                    return False, f"max|r*| = {np.max(np.abs(r.values))!r} exceeds 1/c = {1 / c!r}"
                worst_val = max(worst_val, val - 1.0 / c)
                worst_r = max(worst_r, np.max(np.abs(r.values)) * c)
                low = min(low, val)
                n += 1
        ok = low >= 0 and worst_val <= 1e-10
        return ok, f"{n} (pair, c) cases; min value {low:.3g}, max(value - 1/c) {worst_val:.3g}, max c|r*| {worst_r:.6f}"

    return _timed(1, "mixed chi-square value and optimal reward are bounded by 1/c", 5.0, run)


# --------------------------------------------------------------------- 2


def claim_2(n_instances: int = 100, seed: int = 2) -> ClaimResult:
    def run():
        rng = make_rng(seed)
        dr, dv = 0.0, 0.0
        for _ in range(n_instances):
            ps, p, rho = random_pair(rng, 3, 4, concentration=1.0)
            c = float(rng.choice([0.5, 1.0, 2.0, 8.0]))
            r_cf = optimal_mixed_chi2_reward(ps, p, c)
            v_cf = variational_value(r_cf, ps, p, rho, c)
            r_bf, v_bf = brute_force_variational_max(ps, p, rho, c, grid_step=1e-4)
            dr = max(dr, float(np.max(np.abs(r_bf.values - r_cf.values))))
            dv = max(dv, abs(v_bf - v_cf))
        return dr <= 1e-3 and dv <= 1e-4, f"{n_instances} instances; max reward error {dr:.2e}, max value error {dv:.2e}"

    return _timed(2, "grid-search variational maximizer matches the closed form", 30.0, run)


# --------------------------------------------------------------------- 3


def claim_3(n_draws: int = 1000, seed: int = 3) -> ClaimResult:
    def run():
        rng = make_rng(seed)
        slack_a, slack_b = np.inf, np.inf
        for _ in range(n_draws):
            ps, p, rho = random_pair(rng)
            beta = float(10 ** rng.uniform(-1, 2))
            r_max = float(10 ** rng.uniform(-1, 1))
            r = rng.uniform(-r_max, r_max, size=p.shape)
            lhs, rhs = one_step_descent_check(ps, p, r, beta, rho, r_max)
            slack_a = min(slack_a, rhs - lhs)
            lhs, rhs = kl_upper_check(p, r, beta)
            slack_b = min(slack_b, rhs - lhs)
        ok = slack_a >= -1e-10 and slack_b >= -1e-10
        return ok, f"{n_draws} draws; min slack one-step {slack_a:.3g}, KL-upper {slack_b:.3g}"

    return _timed(3, "one-step descent and KL-upper inequalities", 5.0, run)


# --------------------------------------------------------------------- 4


def gap_rate(seed: int, ks=RATE_KS, r_max: float = 1.0):
    """[(K, gap)] for the Box game with the pilot-calibrated theorem schedule."""
    inst = default_instance(seed)
    out = []
    for k in ks:
        beta, zeta, _, _ = calibrated_schedule(k, inst.p_star, inst.p_ref, inst.rho, r_max)
        hist = run_selfplay(GameConfig(k, beta, zeta, r_max, Box(r_max)), inst.p_star, inst.p_ref, inst.rho)
        out.append((k, duality_gap(hist, inst.p_star, inst.rho, r_max).gap))
    return out


def claim_4(seeds=SEEDS) -> ClaimResult:
    def run():
        exps, all_nonneg = [], True
        for s in seeds:
            gaps = gap_rate(s)
            all_nonneg &= all(g >= 0 for _, g in gaps)
            exps.append(rate_fit(gaps)[0] if all(g > 0 for _, g in gaps) else float("inf"))
        good = sum(e >= 0.35 for e in exps)
        return good >= 4 and all_nonneg, (
            f"exponents {', '.join(f'{e:.3f}' for e in exps)}; {good}/{len(exps)} >= 0.35; "
            f"gaps non-negative: {all_nonneg}"
        )

    return _timed(4, "duality gap decays at rate >= K^-0.35 under the theorem schedule", 120.0, run)


# --------------------------------------------------------------------- 5


def claim_5(n_instances: int = 20, seed: int = 5) -> ClaimResult:
    def run():
        rng = make_rng(seed)
        worst = 0.0
        for i in range(n_instances):
            ps, p, rho = random_pair(rng)
            beta = float(10 ** rng.uniform(-0.5, 1))
            if i % 2:
                psi, zeta, r_max = MixedQuadratic(float(rng.choice([0.5, 2.0]))), float(rng.uniform(0, 2)), 4.0
            else:
                r_max = float(rng.uniform(0.5, 2))
                psi, zeta = Box(r_max), float(rng.uniform(0.1, 5))
            a = run_selfplay(GameConfig(30, beta, zeta, r_max, psi), ps, p, rho)
            b = run_selfplay(GameConfig(30, beta, zeta, r_max, psi, mode=Mode.MAPPED_DELTA_R), ps, p, rho)
            for x, y in zip(a.policies, b.policies):
                worst = max(worst, float(np.max(np.abs(x.probs - y.probs))))
        return worst <= 1e-8, f"{n_instances} instances x 30 iterations; max policy difference {worst:.2e}"

    return _timed(5, "mapped-reward runs reproduce unmapped policies", 30.0, run)


# --------------------------------------------------------------------- 6


def finite_difference(f, theta: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        e = np.zeros_like(theta)
        e[idx] = h
        g[idx] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def reference_spif_loss(theta, p_k, p_star, rho, spec: SpifLossSpec):
    """The exact chi-square loss written out directly in extended precision."""
    ld = np.longdouble
    t = np.asarray(theta, dtype=ld)
    m = t.max(axis=1, keepdims=True)
    logp = t - m - np.log(np.exp(t - m).sum(axis=1, keepdims=True))
    a, b, w = (np.asarray(v, dtype=ld) for v in (p_star, p_k, rho))
    l = logp - np.log(b)
    dr = ld(spec.beta) * l
    sq_star = (dr - ld(spec.r_max_target)) ** 2
    sq_k = (dr - ld(spec.r_min_target)) ** 2
    if spec.bregman_form.value == "union":
        reg = (a + b) / 2 * l * l
    else:
        reg = a * dr * dr
    cell = ld(spec.alpha) * a * sq_star + (1 - ld(spec.alpha)) * b * sq_k + ld(spec.zeta) / 2 * reg
    return (w[:, None] * cell).sum()


def relative_error(g, ref, floor: float = 1e-6) -> float:
    return float(np.max(np.abs(g - ref) / np.maximum(np.maximum(np.abs(g), np.abs(ref)), floor)))


def one_by_two_grid_minimizer(p_star_row, p_k_row, spec: SpifLossSpec, n: int = 2_000_001) -> float:
    """argmin over q = pi(y_0) of the exact loss on a 1x2 instance, by grid search plus refinement."""
    a, b = np.asarray(p_star_row, float), np.asarray(p_k_row, float)
    m = 0.5 * (a + b)

    def loss(q):
        l0 = np.log(q) - math.log(b[0])
        l1 = np.log1p(-q) - math.log(b[1])
        out = 0.0
        for l, i in ((l0, 0), (l1, 1)):
            d = spec.beta * l
            out = out + spec.alpha * a[i] * (d - spec.r_max_target) ** 2
            out = out + (1 - spec.alpha) * b[i] * (d - spec.r_min_target) ** 2
            out = out + 0.5 * spec.zeta * m[i] * l * l
        return out

    lo, hi = 1e-9, 1.0 - 1e-9
    for _ in range(3):
        q = np.linspace(lo, hi, n if lo == 1e-9 else 200_001)
        j = int(np.argmin(loss(q)))
        step = q[1] - q[0]
        lo, hi = max(q[j] - 2 * step, 1e-12), min(q[j] + 2 * step, 1 - 1e-12)
    return float(0.5 * (lo + hi))


def claim_6(n_instances: int = 100, n_small: int = 10, seed: int = 6) -> ClaimResult:
    def run():
        rng = make_rng(seed)
        worst = 0.0
        for _ in range(n_instances):
            ps, pk, rho = random_pair(rng, 3, 4)
            spec = SpifLossSpec(
                float(10 ** rng.uniform(-0.5, 0.5)),
                float(rng.choice([0.5, 2.0])),
                float(rng.uniform(0.2, 0.8)),
                float(rng.uniform(0, 1)),
                str(rng.choice(["union", "expert"])),
            )
            theta = np.log(pk.probs) + rng.normal(scale=0.5, size=pk.shape)
            g = spif_gradient(_pol(theta), pk, ps, rho, spec)

            def f(t, pk=pk, ps=ps, rho=rho, spec=spec):
                return reference_spif_loss(t, pk.probs, ps.probs, rho.probs, spec)

            fd = finite_difference(f, theta.astype(np.longdouble)).astype(float)
            worst = max(worst, relative_error(g, fd, floor=1e-9))
        tv_worst = 0.0
        for _ in range(n_small):
            ps = PolicyTable.from_weights(rng.dirichlet([1.0, 1.0], size=1))
            pk = PolicyTable.from_weights(rng.dirichlet([1.0, 1.0], size=1))
            spec = SpifLossSpec(float(rng.uniform(0.5, 2)), float(rng.choice([0.5, 2.0])), 0.5, float(rng.uniform(0, 0.1)))
            hist = spif_train(SpifConfig(1, spec, 4000, 0.5 / spec.beta**2), ps, pk, ContextDistribution([1.0]))
            q = one_by_two_grid_minimizer(ps.probs[0], pk.probs[0], spec)
            tv_worst = max(tv_worst, abs(hist.policies[1].probs[0, 0] - q))
        ok = worst <= 1e-4 and tv_worst <= 1e-3
        return ok, (
            f"{n_instances} gradient checks, max relative error {worst:.2e}; "
            f"{n_small} 1x2 trainings, max TV to grid minimizer {tv_worst:.2e}"
        )

    return _timed(6, "chi-square loss gradients and trained minimizers", 60.0, run)


def _pol(theta) -> PolicyTable:
    z = theta - theta.max(axis=1, keepdims=True)
    p = np.exp(z)
    return PolicyTable(p / p.sum(axis=1, keepdims=True), logits=theta)


# --------------------------------------------------------------------- 7


def dynamics_pair(seed: int, c: float = 2.0, **overrides):
    """SPIF and SPIN gradient-descent histories on the default instance."""
    hp = {**DYNAMICS, **overrides}
    inst = default_instance(seed)
    spec = SpifLossSpec(hp["beta"], c, 0.5, hp["zeta"])
    spif = spif_train(SpifConfig(hp["iterations"], spec, hp["inner_steps"], hp["lr"]), inst.p_star, inst.p_ref, inst.rho)
    spin = spin_train(inst.p_star, inst.p_ref, inst.rho, hp["beta"], hp["iterations"], hp["inner_steps"], hp["lr"])
    return spif, spin


def gradient_range(history, warmup: int = 1) -> float:
    """max/min over iterations (after ``warmup``) of each iteration's peak logit-gradient inf-norm."""
    peaks = np.array([t.grad_inf_norm.max() for t in history.extras["traces"][warmup:]])
    return float(peaks.max() / peaks.min())


def claim_7(seed: int = 0, c: float = 2.0) -> ClaimResult:
    def run():
        spif, spin = dynamics_pair(seed, c)
        spif_dr = max(float(t.max_abs_dr.max()) for t in spif.extras["traces"])
        spin_dr = max(float(t.max_abs_dr.max()) for t in spin.extras["traces"][:3])
        ra, rb = gradient_range(spif), gradient_range(spin)
        ok = spif_dr <= 0.55 and spin_dr > 1.0 and ra < rb
        return ok, (
            f"SPIF max|dr| {spif_dr:.3f} (<= 0.55), SPIN max|dr| in 3 iterations {spin_dr:.3f} (> 1.0), "
            f"gradient range SPIF {ra:.2f} vs SPIN {rb:.2f}"
        )

    return _timed(7, "bounded SPIF rewards and steadier gradients than SPIN", 60.0, run)


# --------------------------------------------------------------------- 8


def claim_8(n_instances: int = 100, iterations: int = 20, seed: int = 8) -> ClaimResult:
    def run():
        rng = make_rng(seed)
        worst_step, worst_env, one_step = -np.inf, -np.inf, 0.0
        for i in range(n_instances):
            ps, p0, rho = random_pair(rng)
            for beta in (1.0, 2.0, 5.0, 10.0):
                hist = [p0]
                for _ in range(iterations):
                    hist.append(spin_exact_update(hist[-1], ps, beta))
                for _, lhs, rhs in contraction_check_spin(hist, ps, beta, rho):
                    worst_step = max(worst_step, lhs - rhs)
                kl0 = divergence(_KL, ps, p0, rho)
                for k, p in enumerate(hist):
                    worst_env = max(worst_env, divergence(_KL, ps, p, rho) - (1 - 1 / beta) ** k * kl0)
                if beta == 1.0:
                    one_step = max(one_step, divergence(_KL, ps, hist[1], rho))
        ok = worst_step <= 1e-10 and worst_env <= 1e-10 and one_step <= 1e-10
        return ok, (
            f"{n_instances} instances x 4 betas; max step violation {worst_step:.2e}, "
            f"envelope {worst_env:.2e}, KL after one beta=1 step {one_step:.2e}"
        )

    return _timed(8, "exact SPIN update contracts KL geometrically", 10.0, run)


# --------------------------------------------------------------------- 9


def claim_9(n_instances: int = 100, iterations: int = 20, seed: int = 9) -> ClaimResult:
    def run():
        rng = make_rng(seed)
        worst, n_bad, n_total, ref_dev = -np.inf, 0, 0, 0.0
        for i in range(n_instances):
            n_x, n_y = int(rng.integers(1, 4)), int(rng.integers(2, 7))
            r_star = rng.normal(scale=float(rng.uniform(0.5, 3.0)), size=(n_x, n_y))
            oracle = PreferenceOracle.bradley_terry(r_star)
            ps = oracle.expert()
            rho = ContextDistribution(rng.dirichlet(np.ones(n_x)))
            beta = (1.0, 2.0, 5.0, 10.0)[i % 4]
            hist = [PolicyTable.from_weights(rng.dirichlet(np.ones(n_y), size=n_x))]
            for _ in range(iterations):
                nxt = iterative_dpo_step(hist[-1], oracle, beta)
                for y_ref in range(1, n_y):
                    alt = iterative_dpo_step(hist[-1], oracle, beta, y_ref=y_ref)
                    ref_dev = max(ref_dev, float(np.max(np.abs(alt.probs - nxt.probs))))
                hist.append(nxt)
            for _, lhs, rhs in contraction_check_dpo(hist, ps, rho):
                n_total += 1
                if lhs > rhs + 1e-10:
                    n_bad += 1
                worst = max(worst, lhs - rhs)
        ok = n_bad == 0 and ref_dev <= 1e-10
        return ok, (
            f"{n_bad}/{n_total} iterations violate the contraction (worst excess {worst:.3g}); "
            f"y_ref deviation {ref_dev:.2e}"
        )

    return _timed(9, "iterative DPO contraction inequality", 10.0, run)


# --------------------------------------------------------------------- 10


def random_general_oracle(rng, n_x, n_y) -> PreferenceOracle:
    upper = rng.uniform(size=(n_x, n_y, n_y))
    p = np.triu(upper, 1)
    p = p + np.triu(1.0 - upper, 1).transpose(0, 2, 1)
    idx = np.arange(n_y)
    p[:, idx, idx] = 0.5
    return PreferenceOracle.general(p)


def claim_10(n_instances: int = 200, seed: int = 10) -> ClaimResult:
    def run():
        rng = make_rng(seed)
        e_sppo = e_inpo = e_disp = 0.0
        for _ in range(n_instances):
            n_x, n_y = int(rng.integers(1, 4)), int(rng.integers(2, 5))
            oracle = random_general_oracle(rng, n_x, n_y)
            rho = ContextDistribution(rng.dirichlet(np.ones(n_x)))
            pk = PolicyTable.from_weights(rng.dirichlet(np.ones(n_y), size=n_x))
            pi = _pol(np.log(pk.probs) + rng.normal(scale=0.7, size=pk.shape))
            beta = float(10 ** rng.uniform(-0.5, 1))
            g_l = sppo_gradient(pi, pk, oracle, rho, beta)
            g_a = sppo_ail_gradient(pi, pk, oracle, rho, beta)
            e_sppo = max(e_sppo, _prop_error(g_l, -g_a / beta**2))
            eta = float(10 ** rng.uniform(-0.5, 1))
            cfg = InpoConfig(eta, float(rng.uniform(0.05, 1.0)) * eta, PolicyTable.from_weights(rng.dirichlet(np.ones(n_y), size=n_x)))
            g_p = inpo_gradient(pi, pk, oracle, rho, cfg)
            g_ai = inpo_ail_gradient(pi, pk, oracle, rho, cfg)
            g_d = inpo_displayed_gradient(pi, pk, oracle, rho, cfg)
            e_inpo = max(e_inpo, _prop_error(g_p, -2.0 * g_ai / eta**2))
            e_disp = max(e_disp, _prop_error(g_d, g_p))
        ok = max(e_sppo, e_inpo, e_disp) <= 1e-8
        return ok, (
            f"{n_instances} instances; SPPO vs AIL {e_sppo:.2e}, INPO vs AIL {e_inpo:.2e}, "
            f"displayed vs paired INPO {e_disp:.2e}"
        )

    return _timed(10, "SPPO and INPO gradients are proportional to chi-square AIL gradients", 30.0, run)


def _prop_error(g, ref) -> float:
    return float(np.max(np.abs(g - ref)) / max(np.max(np.abs(ref)), 1e-300))


# --------------------------------------------------------------------- 11


def claim_11(n_pairs: int = 1000, seed: int = 11) -> ClaimResult:
    def run():
        rng = make_rng(seed)
        worst = 0.0
        for _ in range(n_pairs):
            ps, p, rho = random_pair(rng)
            r_max = float(10 ** rng.uniform(-1, 1))
            lhs = game_value(p, sign_reward(ps, p, r_max), ps, rho)
            rhs = 2 * r_max * divergence(_TV, p, ps, rho)
            worst = max(worst, abs(lhs - rhs))
        return worst <= 1e-10, f"{n_pairs} pairs; max |J(sign) - 2 R TV| {worst:.2e}"

    return _timed(11, "sign-reward game value equals 2 R_max TV", 5.0, run)


# --------------------------------------------------------------------- 12


def claim_12(seeds=SEEDS) -> ClaimResult:
    def run():
        finals = {}
        for c in (2.0, 0.125):
            tvs = []
            for s in seeds:
                inst = default_instance(s)
                spec = SpifLossSpec(DYNAMICS["beta"], c, 0.5, DYNAMICS["zeta"])
                cfg = SpifConfig(DYNAMICS["iterations"], spec, DYNAMICS["inner_steps"], DYNAMICS["lr"])
                hist = spif_train(cfg, inst.p_star, inst.p_ref, inst.rho)
                tvs.append(divergence(_TV, inst.p_star, hist.policies[-1], inst.rho))
            finals[c] = float(np.median(tvs))
        return finals[2.0] <= finals[0.125], f"median final TV: c=2 {finals[2.0]:.4f}, c=0.125 {finals[0.125]:.4f}"

    return _timed(12, "SPIF at c=2 ends closer to the expert than at c=0.125", 120.0, run)


CLAIMS = {
    1: claim_1,
    2: claim_2,
    3: claim_3,
    4: claim_4,
    5: claim_5,
    6: claim_6,
    7: claim_7,
    8: claim_8,
    9: claim_9,
    10: claim_10,
    11: claim_11,
    12: claim_12,
}


def run_claims(numbers=None, echo=None) -> list[ClaimResult]:
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for n in numbers or sorted(CLAIMS):
            res = CLAIMS[n]()
            if echo is not None:
                echo(res.line())
            out.append(res)
    return out
