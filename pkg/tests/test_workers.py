import logging

from rheterodyne.observability import METRICS, TRACE_ID, log_event, log_warning
from rheterodyne.workers import JoblibRunner, SerialRunner, get_runner


def test_get_runner_reads_environment(monkeypatch):
    monkeypatch.setenv("RHET_THREADS", "3")
    runner = get_runner()
    assert isinstance(runner, JoblibRunner) and runner.n_workers == 3
    monkeypatch.delenv("RHET_THREADS")
    assert isinstance(get_runner(), SerialRunner)
    assert isinstance(get_runner(1), SerialRunner)


def test_runners_keep_submission_order():
    items = [-3, 1, -4, 1, -5]
    assert list(SerialRunner().map(abs, items)) == [3, 1, 4, 1, 5]
    assert list(JoblibRunner(2).map(abs, items)) == [3, 1, 4, 1, 5]


def test_log_event_payload(caplog):
    with caplog.at_level(logging.INFO, logger="rheterodyne"):
        payload = log_event("unit_test_event", value=1.5)
    assert payload["trace_id"] == TRACE_ID and payload["event"] == "unit_test_event"
    assert payload["ts"].endswith("Z")
    assert "unit_test_event" in caplog.text


def test_log_warning_counts():
    before = METRICS["warnings"]
    payload = log_warning("unit_test_warning")
    assert METRICS["warnings"] == before + 1 and payload["event"] == "unit_test_warning"
