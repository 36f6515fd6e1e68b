from unittest.mock import MagicMock, patch

import pytest

from orbtrack import main as cli


@pytest.fixture
def runner():
    mock = MagicMock()
    mock.run_batch.return_value.exit_status = 0
    mock.run_batch.return_value.output_dir = "runs"
    return mock


@pytest.fixture
def quiet_logging():
    with patch.object(cli, "setup_logging"):
        yield


def _patched(runner):
    container = MagicMock()
    container.runner = runner
    return patch("orbtrack.dependencies.container.build_container", return_value=container)


def test_run_applies_overrides_and_the_default_seed(runner, quiet_logging):
    with _patched(runner):
        cli.main(["run", "--scenario", "case2", "--runs", "3", "--tracker", "ukf"])
    config = runner.run_batch.call_args.args[0]
    assert (config.name, config.runs, config.tracker.value) == ("case2", 3, "ukf")
    assert config.master_seed == 2024


def test_explicit_seed_wins(runner, quiet_logging):
    with _patched(runner):
        cli.main(["run", "--scenario", "case1", "--seed", "77"])
    assert runner.run_batch.call_args.args[0].master_seed == 77


def test_failed_batch_exits_with_its_status(runner, quiet_logging):
    runner.run_batch.return_value.exit_status = 2
    with _patched(runner), pytest.raises(SystemExit) as excinfo:
        cli.main(["run", "--scenario", "case1"])
    assert excinfo.value.code == 2


def test_bad_scenario_is_a_configuration_error(runner, quiet_logging):
    with _patched(runner), pytest.raises(SystemExit) as excinfo:
        cli.main(["run", "--scenario", "missing.json"])
    assert excinfo.value.code == 1


def test_unexpected_failures_exit_with_1(runner, quiet_logging):
    runner.run_pcrb.side_effect = RuntimeError("boom")
    with _patched(runner), pytest.raises(SystemExit) as excinfo:
        cli.main(["pcrb", "--scenario", "case1"])
    assert excinfo.value.code == 1


def test_study_dispatch(runner, quiet_logging):
    runner.run_study.return_value = "runs/depletion.json"
    with _patched(runner):
        cli.main(["study", "--kind", "depletion", "--scenario", "case1", "--samples", "2000"])
    kind, config, out = runner.run_study.call_args.args
    assert kind.value == "depletion"
    assert runner.run_study.call_args.kwargs["samples"] == 2000


def test_study_kind_is_required():
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["study"])
