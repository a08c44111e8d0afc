import json

import pytest
from click.testing import CliRunner

from swarmteleop.cli import main


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    """One calibrate+train pass shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()
    session = root / "session.jsonl"
    model = root / "model.json"
    r = runner.invoke(main, ["calibrate", "--pilot", "rh-position", "--seed", "1",
                             "--out", str(session)])
    assert r.exit_code == 0, r.output
    r = runner.invoke(main, ["train", "--session", str(session), "--out", str(model)])
    assert r.exit_code == 0, r.output
    return root, session, model


class TestCli:
    def test_calibrate_reports_rows(self, artifacts):
        root, session, model = artifacts
        assert session.exists()

    def test_train_prints_selection_report(self, artifacts):
        root, session, model = artifacts
        runner = CliRunner()
        r = runner.invoke(main, ["train", "--session", str(session),
                                 "--out", str(model)])
        assert r.exit_code == 0
        assert "palm_px[raw]" in r.output
        assert "position" in r.output

    def test_fly_writes_metrics(self, artifacts):
        root, session, model = artifacts
        metrics = root / "metrics.json"
        runner = CliRunner()
        r = runner.invoke(main, ["fly", "--model", str(model), "--pilot",
                                 "rh-position", "--seed", "1",
                                 "--out", str(metrics)])
        assert r.exit_code == 0, r.output
        assert "completed: 4/4 gates" in r.output
        doc = json.loads(metrics.read_text())
        assert doc["metrics"]["completed"]

    def test_evaluate_prints_table_and_kruskal(self, artifacts):
        root, session, model = artifacts
        runner = CliRunner()
        paths = []
        for seed in (1, 2):
            out = root / f"m{seed}.json"
            r = runner.invoke(main, ["fly", "--model", str(model), "--seed",
                                     str(seed), "--out", str(out)])
            assert r.exit_code == 0, r.output
            paths.append(str(out))
        r = runner.invoke(main, ["evaluate", *paths, "--group-by", "seed"])
        assert r.exit_code == 0, r.output
        assert "Kruskal-Wallis" in r.output

    def test_train_on_truncated_session_exits_nonzero(self, artifacts):
        root, session, model = artifacts
        broken = root / "broken.jsonl"
        broken.write_text(session.read_text()[:500])
        out = root / "never.json"
        runner = CliRunner()
        r = runner.invoke(main, ["train", "--session", str(broken),
                                 "--out", str(out)])
        assert r.exit_code != 0
        assert not out.exists()

    def test_calibrate_from_existing_session(self, artifacts):
        root, session, model = artifacts
        copy = root / "copy.jsonl"
        runner = CliRunner()
        r = runner.invoke(main, ["calibrate", "--from", str(session),
                                 "--out", str(copy)])
        assert r.exit_code == 0
        assert copy.read_bytes() == session.read_bytes()

    def test_ablation_flag_collides_and_exits_nonzero(self, artifacts):
        root, session, model = artifacts
        runner = CliRunner()
        r = runner.invoke(main, ["fly", "--model", str(model), "--no-expand",
                                 "--seed", "1"])
        assert r.exit_code == 2
        assert "collision" in r.output
