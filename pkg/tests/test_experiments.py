import csv
import json
from pathlib import Path

import numpy as np
import pytest

from selfplay_ail.errors import ComparisonError, ConfigValidationError
from selfplay_ail.experiments.cli import main
from selfplay_ail.experiments.compare import compare_dynamics
from selfplay_ail.experiments.config import load_config, parse_config
from selfplay_ail.experiments.instance import default_instance
from selfplay_ail.experiments.runner import COLUMNS, run, run_method
from selfplay_ail.game import GameConfig, duality_gap, run_selfplay
from selfplay_ail.reward_player import Box

GOLDEN = Path(__file__).parent / "golden"
CONFIGS = Path(__file__).parent.parent / "configs"


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ------------------------------------------------------------------ config


def test_every_violation_is_reported():
    bad = {
        "kind": "spif",
        "seeds": [0, 0, -1],
        "colour": "red",
        "instance": {"n_responses": 1, "shape": 3},
        "method": {"beta": -1.0, "alpha": 1.5, "sampling": "bootstrap", "lr": 0},
    }
    with pytest.raises(ConfigValidationError) as exc:
        parse_config(bad)
    text = "\n".join(exc.value.violations)
    for needle in ("colour", "shape", "n_responses", "beta", "alpha", "sampling", "lr", "distinct", "-1"):
        assert needle in text
    assert len(exc.value.violations) >= 9


def test_method_preconditions_are_checked_before_running():
    with pytest.raises(ConfigValidationError, match="tau <= eta"):
        parse_config({"kind": "inpo", "method": {"eta": 0.5, "tau": 1.0}})
    with pytest.raises(ConfigValidationError, match="zeta > 0"):
        parse_config({"kind": "game", "method": {"zeta": 0.0}})
    with pytest.raises(ConfigValidationError, match="identity link"):
        parse_config({"kind": "game", "method": {"regularizer": "mixed_quadratic", "link": "logistic"}})
    with pytest.raises(ConfigValidationError, match="at least 3"):
        parse_config({"kind": "gap_rate_sweep", "sweep": {"iterations": [16, 64]}})
    with pytest.raises(ConfigValidationError, match="does not take"):
        parse_config({"kind": "spif", "sweep": {"c": [1.0]}})


def test_overrides_and_defaults():
    cfg = parse_config({"kind": "c_ablation"}, seeds=[3, 4], threads=2)
    assert cfg.seeds == (3, 4) and cfg.threads == 2
    assert cfg.sweep == {"c": (0.125, 0.5, 2.0)}
    assert len(cfg.points()) == 3


def test_shipped_configs_validate():
    paths = sorted(CONFIGS.glob("*.toml"))
    assert paths
    for p in paths:
        load_config(p)


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(ConfigValidationError, match="cannot read"):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("kind = \n")
    with pytest.raises(ConfigValidationError, match="invalid TOML"):
        load_config(bad)


# ------------------------------------------------------------------ runner


def test_csv_schema_matches_golden_header(tmp_path):
    run(parse_config({"kind": "spif", "method": {"iterations": 3, "inner_steps": 10}}), tmp_path)
    golden = (GOLDEN / "csv_header.txt").read_text()
    text = (tmp_path / "spif_s0.csv").read_text()
    assert text.splitlines(keepends=True)[0] == golden
    assert tuple(golden.strip().split(",")) == COLUMNS


@pytest.mark.parametrize("kind", ["game", "spif", "spin", "linear_spin", "sppo", "inpo", "iter_dpo"])
def test_every_method_writes_k_plus_one_finite_rows(tmp_path, kind):
    k = 4
    run(parse_config({"kind": kind, "seeds": [1], "method": {"iterations": k, "inner_steps": 20}}), tmp_path)
    rows = _rows(tmp_path / f"{kind}_s1.csv")
    assert len(rows) == k + 2
    body = np.array(rows[1:], dtype=float)
    assert np.all(np.isfinite(body))
    assert list(body[:, 0]) == list(range(k + 1))
    assert np.all(body[:, 3] >= 0) and np.all(body[:, 4] >= 0)
    meta = json.loads((tmp_path / f"{kind}_s1.json").read_text())
    assert meta["seed"] == 1 and meta["iterations"] == k


def test_final_gap_matches_game_engine(tmp_path):
    run(parse_config({"kind": "game", "method": {"iterations": 25, "zeta": 2.0, "beta": 1.5}}), tmp_path)
    last = np.array(_rows(tmp_path / "game_s0.csv")[-1], dtype=float)
    inst = default_instance(0)
    hist = run_selfplay(GameConfig(25, 1.5, 2.0, 1.0, Box(1.0)), inst.p_star, inst.p_ref, inst.rho)
    assert last[2] == pytest.approx(duality_gap(hist, inst.p_star, inst.rho, 1.0).gap, abs=1e-12)
    assert last[1] == pytest.approx(hist.game_values[-1], abs=1e-15)
    assert last[3] == pytest.approx(hist.kl_to_expert[-1], abs=1e-15)


def test_steps_csv_for_inner_loop_methods(tmp_path):
    run(parse_config({"kind": "spin", "method": {"iterations": 2, "inner_steps": 5}}), tmp_path)
    rows = _rows(tmp_path / "spin_s0_steps.csv")
    assert rows[0] == ["iteration", "step", "loss", "grad_inf_norm", "max_abs_dr"]
    assert len(rows) == 1 + 2 * 6


def test_same_config_twice_gives_identical_bytes(tmp_path):
    data = {"kind": "spif", "seeds": [0, 2], "method": {"iterations": 3, "sampling": "monte_carlo", "n_samples": 100}}
    run(parse_config(data), tmp_path / "a")
    run(parse_config(data, threads=3), tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    assert names
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_gap_rate_sweep_summary_has_exponent_per_seed(tmp_path):
    data = {"kind": "gap_rate_sweep", "seeds": [0, 1], "sweep": {"iterations": [16, 32, 64]}}
    s = run(parse_config(data), tmp_path)
    assert set(s["rate_exponents"]) == {"0", "1"}
    assert all(isinstance(v, float) for v in s["rate_exponents"].values())
    assert json.loads((tmp_path / "summary.json").read_text())["rate_exponents"] == s["rate_exponents"]


def test_c_ablation_summary(tmp_path):
    s = run(parse_config({"kind": "c_ablation", "seeds": [0], "method": {"iterations": 3, "inner_steps": 20}}), tmp_path)
    assert set(s["c_ablation"]) == {"0.125", "0.5", "2"}
    assert len(s["runs"]) == 3
    assert s["config"]["kind"] == "c_ablation" and "version" in s


def test_unwritable_output_reports_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        run(parse_config({"kind": "game", "method": {"iterations": 2}}), blocker / "sub")


# ------------------------------------------------------------------ compare


@pytest.fixture(scope="module")
def dynamics_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("dyn")
    run(parse_config({"kind": "spif"}), d)
    run(parse_config({"kind": "spin"}), d)
    run(parse_config({"kind": "spin", "seeds": [1]}), d)
    return d


def test_compare_spif_with_spin(dynamics_dir):
    res = compare_dynamics(dynamics_dir / "spif_s0.csv", dynamics_dir / "spin_s0.csv")
    assert res.reward_bound == pytest.approx(0.5)
    assert res.a_bounded is True
    assert res.b_exceeds_bound is True
    assert res.max_dr_ratio > 2.0
    assert res.grad_range_ratio > 1.0


def test_compare_identical_artifacts_gives_unit_ratios(dynamics_dir):
    p = dynamics_dir / "spif_s0.csv"
    res = compare_dynamics(p, p)
    assert res.max_dr_ratio == 1.0 and res.grad_range_ratio == 1.0
    assert all(r == 1.0 for r in res.grad_ratio_per_iteration)


def test_compare_rejects_mismatched_instances(dynamics_dir):
    with pytest.raises(ComparisonError, match="differ"):
        compare_dynamics(dynamics_dir / "spif_s0.csv", dynamics_dir / "spin_s1.csv")


def test_run_method_rejects_unknown():
    with pytest.raises(ValueError):
        run_method("ppo", {"iterations": 1}, default_instance(0), 0)


# ------------------------------------------------------------------ CLI


def test_cli_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.toml"
    good.write_text('kind = "game"\nseeds = [0]\n[method]\niterations = 3\n')
    assert main(["run", str(good), "--out", str(tmp_path / "o"), "--seeds", "0,1"]) == 0
    assert (tmp_path / "o" / "game_s1.csv").exists()

    bad = tmp_path / "bad.toml"
    bad.write_text('kind = "game"\n[method]\nbeta = -1.0\nzeta = 0.0\n')
    assert main(["run", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "beta" in err and "zeta" in err

    assert main(["compare", str(tmp_path / "o" / "game_s0.csv"), str(tmp_path / "o" / "game_s1.csv")]) == 2
    assert main(["verify", "--claims", "99"]) == 1


def test_cli_verify_subset_and_determinism(tmp_path, capsys):
    assert main(["verify", "--claims", "11,13", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "[PASS] 11." in out and "[PASS] 13." in out
