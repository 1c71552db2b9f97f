import json

import pytest

from golden_cases import CASES, GOLDEN_DIR
from hagsim import cli
from hagsim.harness import (
    EXIT_CONFIG, EXIT_INCOMPLETE, EXIT_OK, ConfigError, default_config, load_config, run,
    summarize,
)
from hagsim.trace import CSV_COLUMNS, Trace


def small(**changes):
    doc = default_config()
    doc["workloads"][0]["transfer_bytes"] = 200_000
    doc.update(changes)
    return doc


def test_defaults_validate():
    cfg = load_config(default_config())
    assert cfg.mode == "hag" and set(cfg.links) == {"fbb", "mbb"}
    # queue defaults to one BDP in whole frames
    assert cfg.links["mbb"][1].queue_cap_bytes % 1500 == 0


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d.update(mode="tunnel"), "mode"),
    (lambda d: d["accesses"]["fbb"]["dl"].update(rate_bps=0), "accesses.fbb.dl.rate_bps"),
    (lambda d: d["accesses"]["fbb"]["dl"].update(loss_prob=2), "accesses.fbb.dl.loss_prob"),
    (lambda d: d["workloads"][0].update(app="ftp"), "workloads.0.app"),
    (lambda d: d.update(link_events=[{"at_ms": 5, "access": "wifi", "state": "down"}]), "link_events.0.access"),
    (lambda d: d["transport"].update(advertise_mode="fast"), "transport.advertise_mode"),
])
def test_config_errors_name_the_field(mutate, field):
    doc = default_config()
    mutate(doc)
    with pytest.raises(ConfigError) as exc:
        load_config(doc)
    assert exc.value.field == field


def test_missing_policy_file_is_config_error():
    doc = default_config()
    doc["mode"] = "converged-core"
    doc["atsss"]["policy_file"] = "/nonexistent/policies.json"
    with pytest.raises(ConfigError):
        load_config(doc)


def test_policy_naming_unknown_access_rejected():
    doc = default_config()
    doc["mode"] = "converged-core"
    doc["atsss"]["policies"] = [{"service_class": "default", "mode": "steer", "access_priority": ["wifi"]}]
    with pytest.raises(ConfigError) as exc:
        load_config(doc)
    assert exc.value.field == "atsss.policies"


def test_run_writes_artifacts(tmp_path):
    result = run(small(), tmp_path)
    assert (tmp_path / "trace.csv").read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["delivered_bytes"] == 200_000
    assert summary["completion_time_us"] == result.summary.completion_time_us
    assert (tmp_path / "rates.csv").read_text().startswith("interval_start_us,")


def test_summary_recomputes_from_trace_file(tmp_path):
    doc = small(mode="converged-core")
    result = run(doc, tmp_path)
    trace = Trace.from_csv(tmp_path / "trace.csv")
    again = summarize(trace, load_config(doc))
    assert again.trace_fields() == result.summary.trace_fields()
    on_disk = json.loads((tmp_path / "summary.json").read_text())
    assert {k: on_disk[k] for k in again.trace_fields()} == json.loads(json.dumps(again.trace_fields()))


def test_same_seed_same_bytes(tmp_path):
    doc = small()
    doc["accesses"]["fbb"]["dl"]["loss_prob"] = 0.01
    run(doc, tmp_path / "a")
    run(doc, tmp_path / "b")
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    doc["seed"] = 2
    run(doc, tmp_path / "c")
    assert (tmp_path / "a" / "trace.csv").read_bytes() != (tmp_path / "c" / "trace.csv").read_bytes()


@pytest.mark.parametrize("name", sorted(CASES))
def test_trace_matches_golden(name, tmp_path):
    run(CASES[name](), tmp_path)
    assert (tmp_path / "trace.csv").read_bytes() == (GOLDEN_DIR / f"{name}.csv").read_bytes()


def test_trace_round_trip(tmp_path):
    tr = Trace()
    tr.log(5, "fbb.dl", "send", "data", 1500, 1, 0, 1440)
    tr.log(9, "fbb.ul", "drop", "ack", 60, 1, 0, -1)
    tr.to_csv(tmp_path / "t.csv")
    assert Trace.from_csv(tmp_path / "t.csv").records == tr.records


def test_incomplete_run_reported():
    doc = small(t_end_s=0.05)
    assert run(doc).summary.completion_time_us == "incomplete"


# -- command line -------------------------------------------------------------

def test_cli_run_ok(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(small()))
    assert cli.main(["run", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / "out")]) == EXIT_OK
    assert json.loads((tmp_path / "out" / "summary.json").read_text())["seed"] == 7


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mode": "hag"}))
    assert cli.main(["run", "--config", str(cfg)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    cfg.write_text("{not json")
    assert cli.main(["run", "--config", str(cfg)]) == EXIT_CONFIG


def test_cli_incomplete_exit_code(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(small(t_end_s=0.05)))
    assert cli.main(["run", "--config", str(cfg)]) == EXIT_INCOMPLETE


def test_cli_fig6_table(capsys):
    assert cli.main(["fig6", "--direction", "dl", "--app", "wget"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "fbb-only" in out and "never" in out


def test_cli_failover_both_down_is_incomplete(capsys):
    code = cli.main(["failover", "--kill-at", "300", "--kill-both", "--transfer-bytes", "20000000"])
    assert code == EXIT_INCOMPLETE


def test_cli_rejects_bad_seed():
    with pytest.raises(SystemExit):
        cli.main(["run", "--config", "x.json", "--seed", "-1"])
