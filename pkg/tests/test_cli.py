"""Tests for the collusion-lab command line."""

import json

import pytest

from types import SimpleNamespace

from collusion_lab import cli
from collusion_lab.cli import (
    EXIT_CERTIFICATE_FAILED,
    EXIT_CONFIG,
    EXIT_NO_USABLE,
    EXIT_OK,
    EXIT_RESOURCE,
    EXIT_UNEXPECTED,
    run,
)

TINY = """\
market:
  grid_points: 3
agents:
  beta: 0.001
  convergence_threshold: 1
  iteration_cap: 1000
mechanism:
  variant: platform_full
  activation_period: 5
experiment:
  phase2_experiment_count: 3
  episode_length: 10
  n_simulations: 2
  base_seed: 7
  pre_window: [1, 5]
  post_window_length: 3
"""


@pytest.fixture(autouse=True)
def no_out_override(monkeypatch):
    monkeypatch.delenv("COLLUSION_LAB_OUT", raising=False)


@pytest.fixture
def tiny_yaml(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY, encoding="utf-8")
    return path


def write_yaml(tmp_path, text: str):
    path = tmp_path / "lab.yaml"
    path.write_text(text, encoding="utf-8")
    return path


def nash_line(output: str) -> list[float]:
    line = next(l for l in output.splitlines() if l.startswith("Logit Bertrand Nash prices:"))
    return [float(x) for x in line.split(":", 1)[1].split(",")]


class TestNash:
    def test_baseline(self, capsys):
        assert run(["nash"]) == EXIT_OK
        prices = nash_line(capsys.readouterr().out)
        assert prices == pytest.approx([1.4729, 1.4729], abs=1e-3)

    def test_heterogeneous_costs(self, tmp_path, capsys):
        path = write_yaml(tmp_path, "market:\n  c: [1.0, 1.2]\n")
        assert run(["nash", "--config", str(path)]) == EXIT_OK
        prices = nash_line(capsys.readouterr().out)
        assert prices == pytest.approx([1.5330, 1.6100], abs=1e-3)

    def test_prints_cournot(self, capsys):
        run(["nash"])
        assert "Cournot Nash quantities: 3.0000, 3.0000" in capsys.readouterr().out


class TestErrors:
    def test_missing_config(self, tmp_path):
        assert run(["nash", "--config", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG

    def test_unknown_command(self):
        assert run(["fly"]) == EXIT_CONFIG

    def test_invalid_config(self, tmp_path):
        path = write_yaml(tmp_path, "market:\n  mu: -1\n")
        assert run(["nash", "--config", str(path)]) == EXIT_CONFIG

    def test_bad_threads(self):
        assert run(["nash", "--threads", "0"]) == EXIT_CONFIG

    def test_cost_estimate_needs_simplified_rule(self, tiny_yaml, tmp_path):
        code = run([
            "simulate", "--config", str(tiny_yaml), "--out", str(tmp_path / "out"),
            "--cost-estimate", "1.0", "-q",
        ])
        assert code == EXIT_CONFIG

    def test_report_without_trajectories(self, tmp_path):
        assert run(["report", "--out", str(tmp_path / "empty")]) == EXIT_CONFIG

    def test_phase_only_for_training_commands(self, tmp_path):
        assert run(["nash", "--phase", "1"]) == EXIT_CONFIG
        assert run(["verify", "--phase", "2", "--out", str(tmp_path / "out"), "-q"]) == EXIT_CONFIG


class TestVerify:
    def test_resource_limit(self, tmp_path):
        path = write_yaml(tmp_path, "verifier:\n  max_strategies: 10\n")
        code = run([
            "verify", "--kind", "platform", "--config", str(path),
            "--out", str(tmp_path / "out"), "-q",
        ])
        assert code == EXIT_RESOURCE
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text(encoding="utf-8"))
        assert [f["type"] for f in manifest["findings"]] == ["error"]
        assert "ResourceLimitError" in manifest["findings"][0]["content"]

    def test_writes_certificates(self, tmp_path):
        path = write_yaml(tmp_path, "verifier:\n  t_max: 0\n")
        out = tmp_path / "out"
        code = run(["verify", "--kind", "both", "--config", str(path), "--out", str(out), "-q"])
        assert code == EXIT_OK
        platform = json.loads((out / "certificate_platform.json").read_text(encoding="utf-8"))
        direct = json.loads((out / "certificate_direct.json").read_text(encoding="utf-8"))
        assert platform["ok"] and direct["ok"]
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["command"] == "verify"

    def test_failed_certificate_has_its_own_exit_code(self, tmp_path, monkeypatch):
        failed = SimpleNamespace(
            ok=False,
            survivors=[(5, 8), (6, 6), (8, 5)],
            nash_profile=(6, 6),
            to_dict=lambda: {"kind": "direct", "ok": False},
        )
        monkeypatch.setattr(cli, "verify_direct_theorem", lambda *args, **kwargs: failed)
        out = tmp_path / "out"
        code = run(["verify", "--kind", "direct", "--out", str(out), "-q"])
        assert code == EXIT_CERTIFICATE_FAILED
        assert code != EXIT_UNEXPECTED
        assert json.loads((out / "certificate_direct.json").read_text(encoding="utf-8"))["ok"] is False
        assert (out / "manifest.json").is_file()

    def test_env_overrides_out(self, tmp_path, monkeypatch):
        path = write_yaml(tmp_path, "verifier:\n  t_max: 0\n")
        target = tmp_path / "from_env"
        monkeypatch.setenv("COLLUSION_LAB_OUT", str(target))
        code = run([
            "verify", "--kind", "direct", "--config", str(path),
            "--out", str(tmp_path / "ignored"), "-q",
        ])
        assert code == EXIT_OK
        assert (target / "certificate_direct.json").is_file()
        assert not (tmp_path / "ignored").exists()


class TestSimulate:
    def test_reproducible(self, tiny_yaml, tmp_path):
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = run(["simulate", "--config", str(tiny_yaml), "--out", str(out), "-q"])
            assert code in (EXIT_OK, EXIT_NO_USABLE)
            outputs.append(out)
        for filename in ("trajectories.csv", "summary.json"):
            first = (outputs[0] / filename).read_text(encoding="utf-8")
            second = (outputs[1] / filename).read_text(encoding="utf-8")
            assert first == second
        assert (outputs[0] / "results.db").is_file()
        assert (outputs[0] / "events.jsonl").is_file()

    def test_report_after_simulate(self, tiny_yaml, tmp_path):
        out = tmp_path / "out"
        run(["simulate", "--config", str(tiny_yaml), "--out", str(out), "-q"])
        assert run(["report", "--config", str(tiny_yaml), "--out", str(out)]) == EXIT_OK
        assert (out / "price_series.csv").is_file()

    def test_train_in_two_phases(self, tiny_yaml, tmp_path):
        staged = tmp_path / "staged"
        assert run(["train", "--phase", "1", "--config", str(tiny_yaml), "--out", str(staged), "-q"]) == EXIT_OK
        assert (staged / "agents" / "sim_0000.json").is_file()
        assert not (staged / "agents_phase2").exists()
        code = run(["train", "--phase", "2", "--config", str(tiny_yaml), "--out", str(staged), "-q"])
        assert code in (EXIT_OK, EXIT_NO_USABLE)
        assert (staged / "agents_phase2" / "sim_0000.json").is_file()
        phase1 = json.loads((staged / "agents" / "sim_0000.json").read_text(encoding="utf-8"))
        phase2 = json.loads((staged / "agents_phase2" / "sim_0000.json").read_text(encoding="utf-8"))
        assert phase2["iteration"] == phase1["iteration"] + 3 * 9

        full = tmp_path / "full"
        run(["simulate", "--config", str(tiny_yaml), "--out", str(full), "-q"])
        assert (staged / "summary.json").read_text(encoding="utf-8") == (
            full / "summary.json"
        ).read_text(encoding="utf-8")

    def test_seeds_override(self, tiny_yaml, tmp_path):
        out = tmp_path / "out"
        run(["simulate", "--config", str(tiny_yaml), "--out", str(out), "--seeds", "1", "-q"])
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert summary["n_total"] == 1

    def test_simulate_accepts_phase(self, tiny_yaml, tmp_path):
        out = tmp_path / "out"
        code = run(["simulate", "--phase", "1", "--config", str(tiny_yaml), "--out", str(out), "-q"])
        assert code == EXIT_OK
        assert (out / "agents" / "sim_0001.json").is_file()
        assert not (out / "summary.json").exists()

    def test_plain_simulate_saves_no_agents(self, tiny_yaml, tmp_path):
        out = tmp_path / "out"
        run(["simulate", "--config", str(tiny_yaml), "--out", str(out), "-q"])
        assert not (out / "agents").exists()
        assert not (out / "agents_phase2").exists()
