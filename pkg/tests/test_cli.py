"""End-to-end checks of the batch front end.

Most tests drive the installed module through a subprocess so argument
parsing, exit codes and file layout are exercised exactly as a user
would hit them.  A module-scoped workspace keeps the number of fits
down.
"""
import json
import subprocess
import sys

import pytest

from fhm import cli
from fhm.fitting import FitNumericalError


def run_cli(*argv, cwd):
    return subprocess.run(
        [sys.executable, "-m", "fhm.cli", *map(str, argv)],
        cwd=cwd, capture_output=True, text=True,
    )


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Workspace with one generated scenario and one finished fit."""
    d = tmp_path_factory.mktemp("cli")
    r = run_cli("gen", "--seed", 7, "--outer-n", 2, "--inner-n", 2,
                "--metrics", 2, "--out", "scn.json", cwd=d)
    assert r.returncode == 0, r.stderr
    r = run_cli("fit", "--scenario", "scn.json", "--max-iters", 30,
                "--seed", 3, "--out", "fit.json", cwd=d)
    assert r.returncode == 0, r.stderr
    return d


class TestGen:
    def test_rerun_is_byte_identical(self, work):
        r = run_cli("gen", "--seed", 7, "--outer-n", 2, "--inner-n", 2,
                    "--metrics", 2, "--out", "scn2.json", cwd=work)
        assert r.returncode == 0
        assert (work / "scn2.json").read_bytes() == (work / "scn.json").read_bytes()
        a = json.loads((work / "scn.json.manifest.json").read_text())
        b = json.loads((work / "scn2.json.manifest.json").read_text())
        b["config"]["out"] = a["config"]["out"]
        assert a == b

    def test_default_metric_names(self, tmp_path):
        r = run_cli("gen", "--seed", 1, "--out", "s.json", cwd=tmp_path)
        assert r.returncode == 0
        data = json.loads((tmp_path / "s.json").read_text())
        assert data["metric_names"] == ["wait", "throughput", "utilization", "patience"]

    def test_metric_count_above_inner_n_exits_2(self, tmp_path):
        r = run_cli("gen", "--seed", 1, "--inner-n", 2, "--metrics", 4,
                    "--out", "s.json", cwd=tmp_path)
        assert r.returncode == 2
        assert "metric_count" in r.stderr and "inner_n" in r.stderr

    def test_missing_required_flag_exits_2(self, tmp_path):
        r = run_cli("gen", "--out", "s.json", cwd=tmp_path)
        assert r.returncode == 2


class TestFit:
    def test_report_shape(self, work):
        data = json.loads((work / "fit.json").read_text())
        assert data["status"] in ("converged", "budget_exhausted")
        assert set(data["losses"]) == {"total", "fit_term", "align_term"}
        assert sorted(data["ranking"]) == [0, 1]
        assert len(data["nodes"]) == 2
        for rec in data["nodes"]:
            assert 0.0 <= rec["contribution"] <= 10.0
            assert all(0.0 <= v <= 1.0 for v in rec["metric_values"])
        inner = data["multiplex"]["inner"]
        assert len(inner) == 2 and len(inner[0]["weights"]) == 2
        assert data["manifest"]["version"]

    def test_trace_is_non_increasing(self, work):
        rows = (work / "fit_trace.csv").read_text().strip().splitlines()
        assert rows[0] == "iteration,loss"
        vals = [float(r.split(",")[1]) for r in rows[1:]]
        assert vals, "empty loss trace"
        assert all(b <= a for a, b in zip(vals, vals[1:]))

    def test_figures_rendered(self, work):
        for name in ("fit_loss.png", "fit_contributions.png"):
            blob = (work / name).read_bytes()
            assert blob[:8] == b"\x89PNG\r\n\x1a\n"

    def test_rerun_is_byte_identical(self, work):
        r = run_cli("fit", "--scenario", "scn.json", "--max-iters", 30,
                    "--seed", 3, "--out", "fit2.json", cwd=work)
        assert r.returncode == 0
        assert (work / "fit2.json").read_bytes() != b""
        a = json.loads((work / "fit.json").read_text())
        b = json.loads((work / "fit2.json").read_text())
        b["manifest"]["config"]["out"] = a["manifest"]["config"]["out"]
        b["loss_trace_file"] = a["loss_trace_file"]
        assert a == b
        assert (work / "fit2_trace.csv").read_text().splitlines()[1:] == \
            (work / "fit_trace.csv").read_text().splitlines()[1:]

    def test_missing_scenario_exits_2(self, tmp_path):
        r = run_cli("fit", "--scenario", "nope.json", "--out", "f.json", cwd=tmp_path)
        assert r.returncode == 2
        assert "not found" in r.stderr

    def test_numerical_failure_exits_3(self, work, monkeypatch, capsys):
        def boom(m0, scenario, cfg):
            raise FitNumericalError(5)
        monkeypatch.setattr(cli, "fit", boom)
        rc = cli.main(["fit", "--scenario", str(work / "scn.json"),
                       "--out", str(work / "unused.json")])
        assert rc == 3
        assert "iteration 5" in capsys.readouterr().err


class TestCompare:
    def test_suite_csv(self, work):
        r = run_cli("compare", "--seeds", "1:3", "--outer-n", 2, "--inner-n", 2,
                    "--budget", 8, "--out", "cmp.csv", cwd=work)
        assert r.returncode == 0, r.stderr
        rows = (work / "cmp.csv").read_text().strip().splitlines()
        assert rows[0] == "scenario,fhm_loss,fcm_loss,winner"
        assert len(rows) == 5  # header, three scenarios, summary
        wins = 0
        for row in rows[1:4]:
            label, fh, fc, winner = row.split(",")
            assert label.startswith("seed-")
            assert float(fh) >= 0.0 and float(fc) >= 0.0
            assert winner in ("fhm", "fcm", "tie")
            wins += winner != "fcm"
        assert rows[4] == f"summary,,,fhm_win_rate={wins}/3={wins / 3:.6f}"

    def test_rerun_is_byte_identical(self, work):
        r = run_cli("compare", "--seeds", "1:3", "--outer-n", 2, "--inner-n", 2,
                    "--budget", 8, "--out", "cmp2.csv", cwd=work)
        assert r.returncode == 0
        assert (work / "cmp2.csv").read_bytes() == (work / "cmp.csv").read_bytes()

    def test_single_scenario_mode(self, work):
        r = run_cli("compare", "--scenario", "scn.json", "--budget", 8,
                    "--out", "cmp_one.csv", cwd=work)
        assert r.returncode == 0, r.stderr
        rows = (work / "cmp_one.csv").read_text().strip().splitlines()
        assert rows[1].startswith("scn.json,")
        assert rows[-1].startswith("summary,,,fhm_win_rate=")

    def test_requires_exactly_one_source(self, work):
        assert run_cli("compare", "--out", "x.csv", cwd=work).returncode == 2
        r = run_cli("compare", "--scenario", "scn.json", "--seeds", "1:2",
                    "--out", "x.csv", cwd=work)
        assert r.returncode == 2

    def test_bad_seed_range_exits_2(self, work):
        r = run_cli("compare", "--seeds", "5:1", "--out", "x.csv", cwd=work)
        assert r.returncode == 2


class TestReport:
    def test_markdown_and_csv_agree(self, work):
        md = run_cli("report", "--fit-report", "fit.json", cwd=work)
        cv = run_cli("report", "--fit-report", "fit.json", "--format", "csv", cwd=work)
        assert md.returncode == 0 and cv.returncode == 0
        md_rows = [
            [c.strip() for c in line.strip("|").split("|")]
            for line in md.stdout.strip().splitlines()
            if not set(line) <= {"|", "-", " "}
        ]
        cv_rows = [line.split(",") for line in cv.stdout.strip().splitlines()]
        assert md_rows == cv_rows

    def test_sorted_by_contribution_with_index_tiebreak(self, tmp_path):
        contributions = [7.29, 7.19, 5.83, 6.11, 5.91]
        payload = {
            "metric_names": ["wait", "throughput", "utilization", "patience"],
            "nodes": [
                {"node": i, "metric_values": [0.5, 0.5, 0.5, 0.5], "contribution": c}
                for i, c in enumerate(contributions)
            ],
        }
        p = tmp_path / "rep.json"
        p.write_text(json.dumps(payload))
        r = run_cli("report", "--fit-report", "rep.json", "--format", "csv", cwd=tmp_path)
        assert r.returncode == 0
        rows = r.stdout.strip().splitlines()
        assert rows[0] == "Node,Wait,Throughput,Utilization,Patience,Contribution"
        assert [row.split(",")[0] for row in rows[1:]] == ["0", "1", "3", "4", "2"]
        assert rows[1].split(",")[-1] == "7.29"

    def test_empty_file_exits_2(self, tmp_path):
        (tmp_path / "empty.json").write_text("")
        r = run_cli("report", "--fit-report", "empty.json", cwd=tmp_path)
        assert r.returncode == 2
        assert "empty" in r.stderr

    def test_malformed_json_exits_2(self, tmp_path):
        (tmp_path / "bad.json").write_text("{")
        r = run_cli("report", "--fit-report", "bad.json", cwd=tmp_path)
        assert r.returncode == 2

    def test_written_file_mode(self, work):
        r = run_cli("report", "--fit-report", "fit.json", "--format", "csv",
                    "--out", "table.csv", cwd=work)
        assert r.returncode == 0
        assert (work / "table.csv").read_text().startswith("Node,")
        assert (work / "table_contributions.png").exists()


class TestIntervals:
    def test_width_zero_matches_fit_metrics(self, work):
        r = run_cli("fit", "--scenario", "scn.json", "--seed", 3,
                    "--out", "fit_full.json", cwd=work)
        assert r.returncode == 0, r.stderr
        r = run_cli("intervals", "--scenario", "scn.json", "--width", 0,
                    "--budget", 16, "--seed", 3, "--out", "iv0.json", cwd=work)
        assert r.returncode == 0, r.stderr
        fit_data = json.loads((work / "fit_full.json").read_text())
        iv_data = json.loads((work / "iv0.json").read_text())
        names = fit_data["metric_names"]
        for frec, irec in zip(fit_data["nodes"], iv_data["nodes"]):
            for k, name in enumerate(names):
                lo, hi = irec["intervals"][name]
                assert lo == hi == frec["metric_values"][k]

    def test_wider_width_contains_narrower_hull(self, work):
        for width, name in ((0.1, "ivn.json"), (0.2, "ivw.json")):
            r = run_cli("intervals", "--scenario", "scn.json", "--width", width,
                        "--budget", 32, "--seed", 3, "--out", name, cwd=work)
            assert r.returncode == 0, r.stderr
        narrow = json.loads((work / "ivn.json").read_text())
        wide = json.loads((work / "ivw.json").read_text())
        for a, b in zip(narrow["nodes"], wide["nodes"]):
            for name, (l1, h1) in a["intervals"].items():
                l2, h2 = b["intervals"][name]
                assert l2 <= l1 and h1 <= h2

    def test_rerun_is_byte_identical(self, work):
        for name in ("iva.json", "ivb.json"):
            r = run_cli("intervals", "--scenario", "scn.json", "--width", 0.1,
                        "--budget", 16, "--seed", 3, "--out", name, cwd=work)
            assert r.returncode == 0
        a = json.loads((work / "iva.json").read_text())
        b = json.loads((work / "ivb.json").read_text())
        a["manifest"]["config"]["out"] = b["manifest"]["config"]["out"]
        assert a == b

    def test_budget_below_two_exits_2(self, work):
        r = run_cli("intervals", "--scenario", "scn.json", "--width", 0.1,
                    "--budget", 1, "--out", "x.json", cwd=work)
        assert r.returncode == 2
        assert "budget" in r.stderr
