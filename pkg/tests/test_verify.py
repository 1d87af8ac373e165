import pytest
from click.testing import CliRunner

from fewbit import CdfMode
from fewbit.cli import main
from fewbit.verify import (Check, map_dominance, moment_errors, suite_elbo, suite_moments,
                           suite_quadform, quadform_error)


def test_check_line_format():
    assert Check("s", "n", True, "fine", 7).line() == "PASS s/n: fine"
    assert Check("s", "n", False, "bad", 7).line() == "FAIL s/n: bad (replay seed 7)"


def test_small_moment_suite_passes():
    checks = suite_moments(count=50, base_seed=3)
    assert len(checks) == 2 and all(c.passed for c in checks)


def test_moment_errors_are_tiny():
    for mode in (CdfMode.EXACT_NORMAL, CdfMode.LOGISTIC):
        assert max(moment_errors(11, mode)) < 1e-8


def test_replay_runs_a_single_instance():
    checks = suite_quadform(replay=5)
    assert "1 instances" in checks[0].detail
    assert quadform_error(5) < 0.01


def test_small_elbo_suite_passes():
    assert all(c.passed for c in suite_elbo(count=20, base_seed=1))


def test_map_agreement_threshold_is_reported():
    checks = {c.name: c for c in map_dominance(frames=60)[0]}
    assert "mf-agrees-with-map@10dB" in checks
    assert "need 90%" in checks["mf-agrees-with-map@10dB"].detail


def test_cli_verify_exit_codes():
    runner = CliRunner()
    ok = runner.invoke(main, ["verify", "moments", "--count", "20"])
    assert ok.exit_code == 0 and "2/2 checks passed" in ok.output
    assert ok.output.count("PASS") == 2
    res = runner.invoke(main, ["verify", "elbo", "--count", "5", "--seed", "4"])
    assert res.exit_code == 0
    assert runner.invoke(main, ["verify", "nonsense"]).exit_code == 2


@pytest.mark.slow
def test_cli_verify_failure_prints_seed():
    res = CliRunner().invoke(main, ["verify", "oracle", "--count", "200"])
    # the 90% MAP agreement check does not hold for any VB detector here
    assert res.exit_code == 1
    assert "FAIL oracle/mf-agrees-with-map@10dB" in res.output and "replay seed" in res.output
