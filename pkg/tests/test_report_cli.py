"""End-to-end pipeline: run configuration, report assembly, determinism,
diffing, file outputs, and the command-line interface."""

import dataclasses
import json
import os

import pytest
import yaml

from lendaudit.cli import main
from lendaudit.data import write_applications, write_demographics, write_loans
from lendaudit.errors import ValidationError
from lendaudit.report import (
    AuditReport,
    RunConfig,
    diff_reports,
    load_run_config,
    run_audit,
    write_report,
)
from lendaudit.synthgen import MarketConfig, generate_market, market_truth

MARKET = MarketConfig(
    n_applicants=1500,
    seed=7,
    demo_mixing=0.2,
    shopping_strength=0.3,
    miscalibration_race=(0.0, -0.02, 0.0, 0.0, 0.0),
)

GROUP_METRIC_COLS = {"metric", "axis", "group", "point",
                     "ci68_lo", "ci68_hi", "ci95_lo", "ci95_hi", "n_eff"}
CI_COLS = {"ci68_lo", "ci68_hi", "ci95_lo", "ci95_hi", "ci_lo", "ci_hi"}


@pytest.fixture(scope="module")
def market_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("market")
    market_truth.cache_clear()
    ds = generate_market(MARKET)
    write_loans(ds.loans, str(d / "loans.csv"), str(d / "cashflows.csv"))
    write_demographics(ds.demographics, str(d / "demographics.csv"))
    write_applications(ds.applications, str(d / "applications.csv"))
    return d


def config_for(market_dir, out_dir, seed=21, **kw) -> RunConfig:
    return RunConfig(
        seed=seed,
        loans_path=str(market_dir / "loans.csv"),
        cashflows_path=str(market_dir / "cashflows.csv"),
        demographics_path=str(market_dir / "demographics.csv"),
        applications_path=str(market_dir / "applications.csv"),
        out_dir=str(out_dir),
        n_boot=200,
        learner="logistic",
        calibration_bins=4,
        figures=False,
        **kw,
    )


@pytest.fixture(scope="module")
def report(market_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("audit")
    return run_audit(config_for(market_dir, out))


class TestRunAudit:
    def test_all_tables_present(self, report):
        expected = {
            "f1_portfolio_irr", "f2_target_return_curve", "f3_target_return",
            "f3_principal_lost", "f4_calibration_blind", "f4_calibration_blind_smooth",
            "f4_calibration_blind_gap", "f5_default_by_apr", "f6_calibration_aware",
            "f6_calibration_aware_smooth", "f6_calibration_aware_gap",
            "f7_approval_delta", "f7_apr_delta", "f8_realized_irr",
            "f8_counterfactual_irr", "a5_default_rate", "a6_target_default_curve",
            "a7_irr_volatility",
        }
        assert expected <= set(report.tables)
        for key in ("f1_portfolio_irr", "a5_default_rate", "f8_realized_irr"):
            assert report.tables[key], key
            assert set(report.tables[key][0]) == GROUP_METRIC_COLS

    def test_metadata_fields(self, report):
        md = report.metadata
        assert md["seed"] == 21
        assert md["n_loans"] > 0 and md["n_applications"] == MARKET.n_applicants
        assert {"Approval", "Apr", "NoShopIrr"} <= set(md["fits"])

    def test_toggles_prune_tables(self, market_dir, tmp_path):
        cfg = config_for(market_dir, tmp_path, metrics={
            "calibration": False, "counterfactuals": False, "noshop": False,
            "default_by_apr": False, "target_return_curve": False,
        })
        rep = run_audit(cfg)
        assert "f4_calibration_blind" not in rep.tables
        assert "f7_approval_delta" not in rep.tables
        assert "f8_counterfactual_irr" not in rep.tables
        assert "f1_portfolio_irr" in rep.tables

    def test_deterministic_up_to_timestamp(self, market_dir, report, tmp_path):
        again = run_audit(config_for(market_dir, tmp_path))
        a = json.loads(report.to_json())
        b = json.loads(again.to_json())
        for obj in (a, b):
            obj["metadata"].pop("generated_at")
            obj["metadata"].pop("config_hash")  # out_dir differs between runs
        assert a["tables"] == b["tables"]
        assert a["warnings"] == b["warnings"]
        assert a["metadata"] == b["metadata"]

    def test_run_seed_moves_only_interval_cells(self, market_dir, report, tmp_path):
        other = run_audit(config_for(market_dir, tmp_path, seed=22))
        diff = diff_reports(report, other)
        assert diff  # the bootstrap must actually depend on the seed
        for key, cells in diff.items():
            for cell in cells:
                assert cell["column"] in CI_COLS, (key, cell)


class TestDiffReports:
    def test_self_diff_empty(self, report):
        assert diff_reports(report, report) == {}

    def test_tolerance_absorbs_small_differences(self, market_dir, report, tmp_path):
        other = run_audit(config_for(market_dir, tmp_path, seed=22))
        assert diff_reports(report, other, tolerance=1.0) == {}

    def test_mismatched_keys_rejected(self, report):
        trimmed = AuditReport(
            metadata=report.metadata,
            tables={k: v for k, v in report.tables.items() if k != "f1_portfolio_irr"},
        )
        with pytest.raises(ValidationError, match="f1_portfolio_irr"):
            diff_reports(report, trimmed)

    def test_row_count_mismatch_reported(self, report):
        tables = dict(report.tables)
        tables["f1_portfolio_irr"] = tables["f1_portfolio_irr"][:-1]
        diff = diff_reports(report, AuditReport(metadata={}, tables=tables))
        assert any(c.get("note") for c in diff["f1_portfolio_irr"])


class TestWriteReport:
    def test_outputs_and_manifest(self, report, tmp_path):
        manifest = write_report(report, str(tmp_path), render_figures=False)
        assert (tmp_path / "report.json").exists()
        assert (tmp_path / "manifest.json").exists()
        for name, rel in manifest["tables"].items():
            assert (tmp_path / rel).exists()
        assert set(manifest["tables"]) == set(report.tables)
        loaded = AuditReport.from_json((tmp_path / "report.json").read_text())
        assert loaded.tables == report.tables

    def test_csv_floats_round_trip(self, report, tmp_path):
        import csv

        write_report(report, str(tmp_path), render_figures=False)
        with open(tmp_path / "f1_portfolio_irr.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(report.tables["f1_portfolio_irr"])
        for got, want in zip(rows, report.tables["f1_portfolio_irr"]):
            assert float(got["point"]) == want["point"]  # repr round trip
            assert got["group"] == want["group"]

    def test_figures_rendered(self, report, tmp_path):
        manifest = write_report(report, str(tmp_path), render_figures=True)
        assert manifest["figures"]
        for name, rel in manifest["figures"].items():
            p = tmp_path / rel
            assert p.exists() and p.stat().st_size > 0
        assert "f1_portfolio_irr" in manifest["figures"]
        assert "f4_calibration_blind" in manifest["figures"]


class TestLoadRunConfig:
    def write_yaml(self, path, obj):
        path.write_text(yaml.safe_dump(obj))

    def base_yaml(self, market_dir):
        return {
            "seed": 5,
            "inputs": {
                "loans": str(market_dir / "loans.csv"),
                "cashflows": str(market_dir / "cashflows.csv"),
                "demographics": str(market_dir / "demographics.csv"),
            },
            "bootstrap": {"n_boot": 300},
            "risk_model": {"learner": "logistic", "n_folds": 3, "seed": 4},
            "calibration": {"n_bins": 6},
            "output": {"dir": "somewhere", "figures": False},
        }

    def test_fields_mapped(self, market_dir, tmp_path):
        p = tmp_path / "run.yaml"
        self.write_yaml(p, self.base_yaml(market_dir))
        cfg = load_run_config(str(p))
        assert (cfg.seed, cfg.n_boot, cfg.learner, cfg.n_folds) == (5, 300, "logistic", 3)
        assert cfg.model_seed == 4 and cfg.calibration_bins == 6
        assert cfg.out_dir == "somewhere" and cfg.figures is False
        assert cfg.applications_path is None

    def test_overrides_win(self, market_dir, tmp_path):
        p = tmp_path / "run.yaml"
        self.write_yaml(p, self.base_yaml(market_dir))
        cfg = load_run_config(str(p), {"seed": 9, "group_scheme": "argmax", "out": "o2"})
        assert cfg.seed == 9 and cfg.group_scheme == "argmax" and cfg.out_dir == "o2"

    def test_missing_seed_rejected(self, market_dir, tmp_path):
        obj = self.base_yaml(market_dir)
        del obj["seed"]
        p = tmp_path / "run.yaml"
        self.write_yaml(p, obj)
        with pytest.raises(ValidationError, match="seed"):
            load_run_config(str(p))

    def test_missing_input_file_rejected(self, market_dir, tmp_path):
        obj = self.base_yaml(market_dir)
        obj["inputs"]["loans"] = str(tmp_path / "nope.csv")
        p = tmp_path / "run.yaml"
        self.write_yaml(p, obj)
        with pytest.raises(ValidationError, match="does not exist"):
            load_run_config(str(p))

    def test_config_hash_stable(self, market_dir, tmp_path):
        p = tmp_path / "run.yaml"
        self.write_yaml(p, self.base_yaml(market_dir))
        assert load_run_config(str(p)).config_hash() == load_run_config(str(p)).config_hash()


class TestGoldenReport:
    """Frozen small-market report: schema exactly, numerics to 1e-6."""

    def test_matches_golden(self, tmp_path):
        market_truth.cache_clear()
        ds = generate_market(MarketConfig(n_applicants=1000, seed=29, demo_mixing=0.15))
        write_loans(ds.loans, str(tmp_path / "loans.csv"), str(tmp_path / "cashflows.csv"))
        write_demographics(ds.demographics, str(tmp_path / "demographics.csv"))
        write_applications(ds.applications, str(tmp_path / "applications.csv"))
        cfg = RunConfig(
            seed=8,
            loans_path=str(tmp_path / "loans.csv"),
            cashflows_path=str(tmp_path / "cashflows.csv"),
            demographics_path=str(tmp_path / "demographics.csv"),
            applications_path=str(tmp_path / "applications.csv"),
            n_boot=150,
            learner="logistic",
            calibration_bins=3,
            figures=False,
            metrics={"default_by_apr": False},
        )
        rep = run_audit(cfg)
        golden_path = os.path.join(os.path.dirname(__file__), "golden", "report.json")
        with open(golden_path) as fh:
            golden = json.load(fh)
        assert rep.warnings == golden["warnings"]
        assert set(rep.tables) == set(golden["tables"])
        for key, want_rows in golden["tables"].items():
            got_rows = rep.tables[key]
            assert len(got_rows) == len(want_rows), key
            for i, (got, want) in enumerate(zip(got_rows, want_rows)):
                assert set(got) == set(want), (key, i)
                for col, w in want.items():
                    g = got[col]
                    if isinstance(w, float):
                        assert g == pytest.approx(w, abs=1e-6), (key, i, col)
                    else:
                        assert g == w, (key, i, col)


class TestCli:
    def test_simulate_then_audit_round_trip(self, tmp_path, capsys):
        sim_cfg = tmp_path / "sim.yaml"
        sim_cfg.write_text(yaml.safe_dump({
            "simulate": {"n_applicants": 600, "seed": 3, "demo_mixing": 0.1},
        }))
        data_dir = tmp_path / "data"
        assert main(["simulate", "--config", str(sim_cfg), "--out", str(data_dir)]) == 0
        for f in ("loans.csv", "cashflows.csv", "demographics.csv", "applications.csv"):
            assert (data_dir / f).exists()

        run_cfg = tmp_path / "run.yaml"
        out_dir = tmp_path / "out"
        run_cfg.write_text(yaml.safe_dump({
            "seed": 2,
            "inputs": {
                "loans": str(data_dir / "loans.csv"),
                "cashflows": str(data_dir / "cashflows.csv"),
                "demographics": str(data_dir / "demographics.csv"),
                "applications": str(data_dir / "applications.csv"),
            },
            "bootstrap": {"n_boot": 150},
            "risk_model": {"learner": "logistic"},
            "calibration": {"n_bins": 3},
            # small market: skip the per-group curves that need more data
            "metrics": {"default_by_apr": False},
        }))
        code = main(["audit", "--config", str(run_cfg), "--out", str(out_dir),
                     "--no-figures"])
        assert code == 0
        rep = AuditReport.from_json((out_dir / "report.json").read_text())
        assert "f1_portfolio_irr" in rep.tables
        assert rep.metadata["seed"] == 2

    def test_missing_input_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "run.yaml"
        cfg.write_text(yaml.safe_dump({
            "seed": 1,
            "inputs": {"loans": "missing.csv", "cashflows": "missing.csv",
                       "demographics": "missing.csv"},
        }))
        assert main(["audit", "--config", str(cfg)]) == 2
        assert "error:" in capsys.readouterr().err

    def test_numerical_failure_exits_3(self, market_dir, tmp_path, capsys, monkeypatch):
        from lendaudit import cli
        from lendaudit.errors import NumericalError

        def boom(config):
            raise NumericalError("synthetic failure")

        monkeypatch.setattr(cli, "run_audit", boom)
        cfg = tmp_path / "run.yaml"
        cfg.write_text(yaml.safe_dump({
            "seed": 1,
            "inputs": {
                "loans": str(market_dir / "loans.csv"),
                "cashflows": str(market_dir / "cashflows.csv"),
                "demographics": str(market_dir / "demographics.csv"),
            },
        }))
        assert main(["audit", "--config", str(cfg)]) == 3
        assert "numerical failure" in capsys.readouterr().err

    def test_diff_exit_codes(self, report, tmp_path, capsys):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        a.write_text(report.to_json())
        mutated = AuditReport.from_json(report.to_json())
        mutated.tables["f1_portfolio_irr"][0]["point"] += 1e-3
        b.write_text(mutated.to_json())
        assert main(["diff", str(a), str(a)]) == 0
        assert main(["diff", str(a), str(b)]) == 1
        assert main(["diff", str(a), str(b), "--tolerance", "0.01"]) == 0
        capsys.readouterr()
