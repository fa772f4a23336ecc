import json
from pathlib import Path

from badlite.cli import main

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def test_scenario_command_exit_zero(capsys):
    code = main(["scenario", str(SCENARIO_DIR / "unseen_walkthrough.json")])
    out = capsys.readouterr().out
    assert code == 0
    assert "PASS" in out


def test_scenario_command_json_report(capsys):
    code = main(["scenario", str(SCENARIO_DIR / "count_channel_sample.json"),
                 "--json"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["ok"] is True
    assert report["executions"][0]["pass"] is True


def test_exec_runs_statement_file(tmp_path, capsys):
    script = tmp_path / "setup.bad"
    script.write_text(
        "-- demo script\n"
        "CREATE TYPE Tweet AS OPEN { tid: bigint };\n"
        "CREATE ACTIVE DATASET Tweets(Tweet) PRIMARY KEY tid;\n",
        encoding="utf-8")
    assert main(["exec", str(script)]) == 0
    out = capsys.readouterr().out
    assert "active dataset Tweets created" in out


def test_exec_parse_error_exit_two(tmp_path, capsys):
    script = tmp_path / "broken.bad"
    script.write_text("CREATE DATASET Tweets(Tweet)\n  PRIMARY KY tid;\n",
                      encoding="utf-8")
    code = main(["exec", str(script)])
    err = capsys.readouterr().err
    assert code == 2
    assert "line 2" in err


def test_explain_with_setup(tmp_path, capsys):
    setup = tmp_path / "setup.bad"
    setup.write_text(
        "CREATE TYPE Tweet AS OPEN { tid: bigint, area_code: string };\n"
        "CREATE ACTIVE DATASET Tweets(Tweet) PRIMARY KEY tid;\n",
        encoding="utf-8")
    code = main(["explain",
                 'CREATE CONTINUOUS CHANNEL C(a) PERIOD duration("PT10S") '
                 "{ SELECT t FROM Tweets t WHERE t.area_code = a AND is_new(t) }",
                 "--setup", str(setup)])
    out = capsys.readouterr().out
    assert code == 0
    assert "window=(previous_channel_time, current_channel_time)" in out


def test_bench_command_small(capsys):
    code = main(["bench", "--rate", "10", "--period", "PT0.2S",
                 "--budget-ms", "60", "--subscribers", "32", "--json"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["max_subscribers"] >= 32
    for stage in ("load_subscriptions", "load_new_data", "join",
                  "persist_results", "deliver"):
        assert stage in report["stages"]


def test_random_command_smoke(capsys):
    code = main(["random", "--seed", "7", "--duration-s", "0.8",
                 "--tweet-rate", "300", "--location-rate", "100",
                 "--period-ms", "500", "--nodes", "2", "--json"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["missed"] == 0 and report["duplicated"] == 0
