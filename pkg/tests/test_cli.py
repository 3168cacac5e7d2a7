import json
import re
import shutil
from pathlib import Path

import numpy as np
import pytest

from wassrl.cli import EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_OK, main
from wassrl.mdp_io import load_mdp, parse_solution
from wassrl.robust_mdp import WassersteinBall, solve_value_iteration

SAMPLE = Path(__file__).parent / "data" / "two_state.mdp"
RUN_DIR = re.compile(r"^\d{8}T\d{6}Z-[0-9a-f]{8}(-\d+)?$")


@pytest.fixture
def sample(tmp_path):
    path = tmp_path / "two_state.mdp"
    shutil.copy(SAMPLE, path)
    return path


def tiny_config(tmp_path, **train):
    cfg = {"seed": 4, "checkpoint_every": 100,
           "train": {"hidden": [8], "total_steps": 250, "log_interval": 50, **train}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_solve_sample_closed_form(sample):
    # the adversary moves delta mass from state 0 onto the absorbing cost state:
    # u0 = gamma delta u1 / (1 - gamma (1 - delta)), u1 = 1 / (1 - gamma), lambda*(0) = u1 - u0
    out = sample.with_name("sol.txt")
    assert main(["solve", str(sample), "--delta", "0.5", "--order-p", "1", "--out", str(out)]) == EXIT_OK
    sol = parse_solution(out.read_text())
    g, d = 0.9, 0.5
    u1 = 1 / (1 - g)
    u0 = g * d * u1 / (1 - g * (1 - d))
    np.testing.assert_allclose(sol["value"], [u0, u1], atol=1e-6)
    assert sol["lambda_star"][0, 0] == pytest.approx(u1 - u0, abs=1e-6)
    assert sol["converged"] and sol["delta"] == 0.5


def test_solve_zero_radius_is_classical(sample):
    assert main(["solve", str(sample), "--delta", "0"]) == EXIT_OK
    sol = parse_solution(sample.with_name(sample.name + ".solution").read_text())
    mdp = load_mdp(sample)
    P = mdp.transition[:, 0]
    exact = np.linalg.solve(np.eye(2) - mdp.gamma * P, mdp.cost[:, 0])
    np.testing.assert_allclose(sol["value"], exact, atol=1e-6)


def test_solve_cli_matches_library(sample, tmp_path):
    out = tmp_path / "s.txt"
    main(["solve", str(sample), "--delta", "0.3", "--order-p", "2", "--out", str(out)])
    lib = solve_value_iteration(load_mdp(sample), WassersteinBall(2.0, 0.3))
    np.testing.assert_array_equal(parse_solution(out.read_text())["value"], lib.value)


def test_solve_malformed_file(tmp_path, capsys):
    bad = tmp_path / "bad.mdp"
    bad.write_text(SAMPLE.read_text().replace("cost[1] = 1.0", "cost[1] = one"))
    assert main(["solve", str(bad)]) == EXIT_INVALID
    assert "bad.mdp:7" in capsys.readouterr().err
    assert not (tmp_path / "bad.mdp.solution").exists()


def test_solve_missing_file(tmp_path):
    assert main(["solve", str(tmp_path / "none.mdp")]) == EXIT_INVALID


def test_solve_not_converged(sample):
    assert main(["solve", str(sample), "--delta", "0.5", "--max-iter", "2"]) == EXIT_NOT_CONVERGED
    assert parse_solution(sample.with_name(sample.name + ".solution").read_text())["converged"] is False


def test_solve_invalid_radius(sample):
    assert main(["solve", str(sample), "--delta", "-1"]) == EXIT_INVALID


def run_train(args, capsys):
    rc = main(["train", *args])
    out = capsys.readouterr().out.strip().splitlines()
    return rc, Path(out[-1]) if out else None


def test_train_outputs_and_replay(tmp_path, capsys):
    rc, run = run_train(["--config", str(tiny_config(tmp_path)), "--out", str(tmp_path / "runs")], capsys)
    assert rc == EXIT_OK and RUN_DIR.match(run.name)
    names = {p.name for p in run.iterdir()}
    assert {"config.json", "train.csv", "actor.ckpt", "critic.ckpt", "manifest.json", "checkpoints"} <= names
    assert sorted(p.name for p in (run / "checkpoints").iterdir()) == [
        "actor_00000100.ckpt", "actor_00000200.ckpt", "critic_00000100.ckpt", "critic_00000200.ckpt"]
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["status"] == "ok" and manifest["algorithm"] == "wraac"
    assert run.name.split("-")[1] == manifest["config_digest"]
    assert "train.csv" in manifest["outputs"]

    rc, replay = run_train(["--config", str(run / "config.json"), "--out", str(tmp_path / "runs")], capsys)
    assert rc == EXIT_OK and replay != run
    assert (replay / "train.csv").read_bytes() == (run / "train.csv").read_bytes()
    assert (replay / "actor.ckpt").read_bytes() == (run / "actor.ckpt").read_bytes()


def test_train_flags_override_config(tmp_path, capsys):
    rc, run = run_train(["--config", str(tiny_config(tmp_path)), "--robust", "off", "--seed", "9",
                         "--steps", "60", "--out", str(tmp_path)], capsys)
    assert rc == EXIT_OK
    snap = json.loads((run / "config.json").read_text())
    assert snap["seed"] == 9 and snap["train"]["seed"] == 9
    assert snap["train"]["robust"] is False and snap["train"]["total_steps"] == 60


def test_train_output_root_from_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("WASSRL_OUTPUT_ROOT", str(tmp_path / "envroot"))
    rc, run = run_train(["--config", str(tiny_config(tmp_path)), "--steps", "20"], capsys)
    assert rc == EXIT_OK and run.parent == tmp_path / "envroot"


@pytest.mark.parametrize("content", ['{"train": {"bogus": 1}}', '{"seed": 1,', '{"train": {"gamma": 2}}'])
def test_train_bad_config(tmp_path, content, capsys):
    path = tmp_path / "c.json"
    path.write_text(content)
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "runs")]) == EXIT_INVALID
    assert not (tmp_path / "runs").exists() or not any((tmp_path / "runs").iterdir())


def test_sweep_end_to_end(tmp_path, capsys):
    _, run = run_train(["--config", str(tiny_config(tmp_path)), "--out", str(tmp_path)], capsys)
    args = ["sweep", "--param", "mass_pole", "--grid", "0.1,0.5", "--episodes", "3",
            "--checkpoint", f"w={run / 'actor.ckpt'}", "--out", str(tmp_path / "sw")]
    assert main(args) == EXIT_OK
    out = Path(capsys.readouterr().out.strip())
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "policy,parameter,value,mean,std,n" and len(lines) == 3
    assert (out / "sweep_mass_pole.svg").is_file()
    assert json.loads((out / "config.json").read_text())["sweep"]["grid"] == [0.1, 0.5]


def test_sweep_param_switch_uses_its_default_grid(tmp_path, capsys):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"sweep": {"parameter": "force_mag", "grid": [3.0]}}))
    from wassrl.neural import DenseNet, save_checkpoint
    ckpt = save_checkpoint(DenseNet.initialize((4, 4, 2), head="softmax", seed=0), tmp_path / "a.ckpt")
    assert main(["sweep", "--config", str(cfg), "--param", "mass_pole", "--episodes", "1",
                 "--checkpoint", f"a={ckpt}", "--out", str(tmp_path / "o")]) == EXIT_OK
    out = Path(capsys.readouterr().out.strip())
    assert len((out / "sweep.csv").read_text().splitlines()) == 1 + 8


@pytest.mark.parametrize("extra", [["--checkpoint", "x=/no/such.ckpt"], ["--checkpoint", "nolabel"], []])
def test_sweep_bad_checkpoints(tmp_path, extra):
    assert main(["sweep", "--episodes", "1", "--out", str(tmp_path), *extra]) == EXIT_INVALID


def test_verify_passes_and_is_repeatable(capsys):
    assert main(["verify"]) == EXIT_OK
    first = capsys.readouterr().out
    assert main(["verify"]) == EXIT_OK
    assert capsys.readouterr().out == first
    assert "6/6 checks passed" in first


def test_verify_detects_corrupted_gradient(capsys):
    assert main(["verify", "--corrupt-gradient"]) != EXIT_OK
    out = capsys.readouterr().out
    assert re.search(r"gradients\s+FAIL", out)
