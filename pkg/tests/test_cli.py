"""CLI tests: flag parsing, exit codes, JSON round-trips, and the
text/JSON consistency of reported verdicts."""

from __future__ import annotations

import json

import pytest

from schedcheck.cli import (
    EXIT_INCOMPLETE,
    EXIT_OK,
    EXIT_USAGE,
    EXIT_VIOLATION,
    config_from_dict,
    config_to_dict,
    emit_json,
    exit_code_for,
    main,
    parse_args,
    parse_task_plan,
    report_to_doc,
    step_from_dict,
    step_to_dict,
)
from schedcheck.explorer import ScheduleStep, VirtualProcess, explore
from schedcheck.model import ConfigurationError, KernelConfig, TaskKind

H = TaskKind.HEAVY
L = TaskKind.LIGHT


class TestParsing:
    def test_task_plan(self):
        assert parse_task_plan("H,L,L") == (H, L, L)
        assert parse_task_plan("h , l") == (H, L)

    def test_malformed_task_plan(self):
        with pytest.raises(ConfigurationError):
            parse_task_plan("H,X")

    def test_walk_requires_seed(self):
        with pytest.raises(SystemExit) as err:
            parse_args(["--mode", "walk"])
        assert err.value.code == 2

    def test_replay_requires_trace(self):
        with pytest.raises(SystemExit) as err:
            parse_args(["--mode", "replay"])
        assert err.value.code == 2

    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            parse_args(["--frobnicate"])
        assert err.value.code == 2

    def test_defaults(self):
        args = parse_args([])
        assert args.mode == "explore"
        assert args.tasks is None  # resolved to H,L,L in config building

    def test_no_args_echoes_default_config(self):
        from schedcheck.cli import config_from_args

        cfg = config_from_args(parse_args([]))
        assert config_to_dict(cfg) == {
            "workers": 2,
            "tasks": "H,L,L",
            "fix_wait": True,
            "fix_preempt": True,
            "faults": [],
            "max_waits": 1,
            "max_preemptions": 1,
        }


class TestDocuments:
    def test_config_round_trip(self):
        cfg = KernelConfig(
            worker_count=3,
            task_plan=(H, L),
            fix_wait_need_sched=False,
            fault_skip_running_check=True,
            max_waits_per_task=2,
        )
        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_step_round_trip(self):
        step = ScheduleStep(VirtualProcess("Worker", 2), 0)
        assert step_from_dict(step_to_dict(step)) == step

    def test_report_json_round_trip(self):
        cfg = KernelConfig(
            worker_count=1,
            task_plan=(H,),
            fix_wait_need_sched=False,
            max_preemptions_per_task=0,
        )
        doc = report_to_doc(explore(cfg), "explore")
        assert json.loads(emit_json(doc)) == doc

    def test_exit_code_is_pure_function_of_report(self):
        assert exit_code_for({"violations": [], "incomplete": False}) == EXIT_OK
        assert exit_code_for({"violations": [1], "incomplete": False}) == EXIT_VIOLATION
        assert exit_code_for({"violations": [1], "incomplete": True}) == EXIT_VIOLATION
        assert exit_code_for({"violations": [], "incomplete": True}) == EXIT_INCOMPLETE


class TestMainExplore:
    def test_small_clean_run_exits_zero(self, capsys):
        code = main(["--tasks", "H", "--workers", "1", "--max-preemptions", "0"])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "result: ok" in out

    def test_lost_wakeup_exits_one_with_deadlock_trace(self, capsys):
        code = main(
            ["--fix-wait", "off", "--tasks", "H", "--workers", "1",
             "--max-preemptions", "0"]
        )
        out = capsys.readouterr().out
        assert code == EXIT_VIOLATION
        assert "Deadlock" in out
        assert "timer fire" in out

    def test_state_budget_exits_three(self, capsys):
        code = main(["--max-states", "10"])
        assert code == EXIT_INCOMPLETE

    def test_nonpositive_violation_cap_is_usage_error(self, capsys):
        code = main(["--max-violations", "0"])
        assert code == EXIT_USAGE

    def test_text_and_json_report_same_verdicts(self, capsys):
        flags = ["--fix-wait", "off", "--tasks", "H", "--workers", "1",
                 "--max-preemptions", "0"]
        code_text = main(flags)
        text = capsys.readouterr().out
        code_json = main(flags + ["--out", "json"])
        doc = json.loads(capsys.readouterr().out)
        assert code_text == code_json
        assert text.count("violation 1:") == 1
        assert len(doc["violations"]) == text.count("violation ")
        assert doc["violations"][0]["verdict"] in text

    def test_faults_flags_land_in_config(self, capsys):
        code = main(
            ["--tasks", "H", "--workers", "2", "--max-waits", "0",
             "--fix-preempt", "off",
             "--fault", "enqueue-before-state", "--fault", "skip-running-check",
             "--out", "json", "--max-violations", "64"]
        )
        doc = json.loads(capsys.readouterr().out)
        assert code == EXIT_VIOLATION
        assert doc["config"]["faults"] == ["enqueue-before-state", "skip-running-check"]

    def test_walk_mode_runs_with_seed(self, capsys):
        code = main(["--mode", "walk", "--seed", "3", "--tasks", "H",
                     "--workers", "1", "--max-preemptions", "0"])
        assert code == EXIT_OK

    def test_quiet_suppresses_trace_lines(self, capsys):
        flags = ["--fix-wait", "off", "--tasks", "H", "--workers", "1",
                 "--max-preemptions", "0"]
        main(flags + ["--quiet"])
        quiet_out = capsys.readouterr().out
        assert "timer fire" not in quiet_out
        assert "Deadlock" in quiet_out


class TestMainReplay:
    def test_replay_round_trip(self, tmp_path, capsys):
        flags = ["--fix-wait", "off", "--tasks", "H", "--workers", "1",
                 "--max-preemptions", "0", "--out", "json"]
        main(flags)
        report_file = tmp_path / "report.json"
        report_file.write_text(capsys.readouterr().out)
        code = main(["--mode", "replay", "--trace-in", str(report_file)])
        out = capsys.readouterr().out
        assert code == EXIT_VIOLATION
        assert "MATCH" in out and "MISMATCH" not in out

    def test_replay_under_different_toggles_reports_divergence(self, tmp_path, capsys):
        flags = ["--fix-wait", "off", "--tasks", "H", "--workers", "1",
                 "--max-preemptions", "0", "--out", "json"]
        main(flags)
        report_file = tmp_path / "report.json"
        report_file.write_text(capsys.readouterr().out)
        # flipping the fix on invalidates or changes the recorded schedule
        code = main(["--mode", "replay", "--trace-in", str(report_file),
                     "--fix-wait", "on"])
        out = capsys.readouterr().out
        assert code == EXIT_USAGE
        assert "MISMATCH" in out or "diverges" in out

    def test_missing_trace_file_is_usage_error(self, capsys):
        code = main(["--mode", "replay", "--trace-in", "/nonexistent.json"])
        assert code == EXIT_USAGE


class TestCrossProcessDeterminism:
    def test_reports_do_not_depend_on_hash_seed(self):
        import subprocess
        import os
        import sys

        outs = []
        for hash_seed in ("1", "4242"):
            env = dict(os.environ, PYTHONHASHSEED=hash_seed)
            proc = subprocess.run(
                [sys.executable, "-m", "schedcheck.cli", "--tasks", "H,L",
                 "--max-waits", "0", "--fix-preempt", "off", "--out", "json",
                 "--max-violations", "64"],
                capture_output=True,
                env=env,
            )
            assert proc.returncode == 1
            outs.append(proc.stdout)
        assert outs[0] == outs[1]


class TestSweep:
    def test_sweep_runs_each_plan(self, tmp_path, capsys):
        plans = tmp_path / "plans.txt"
        plans.write_text("H\nL\n")
        code = main(["--sweep", str(plans), "--workers", "1",
                     "--max-preemptions", "0"])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "plan H:" in out and "plan L:" in out

    def test_sweep_propagates_worst_exit(self, tmp_path, capsys):
        plans = tmp_path / "plans.txt"
        plans.write_text("H\n")
        code = main(["--sweep", str(plans), "--workers", "1",
                     "--max-preemptions", "0", "--fix-wait", "off"])
        assert code == EXIT_VIOLATION
