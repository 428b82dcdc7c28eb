import json

import numpy as np
import pytest

from commands import inference_commands
from helpers import CHAIN_DOC, COVERAGE_HOLE_DOC, DETERMINISTIC_DOC, EXAMPLE_DOC, REDUNDANT_DOC, network_text, random_network
from main import main
from services.approx_service import BoundedPosterior
from services.exact_service import InferenceStats
from services.ingest_service import parse_model
from services.model_service import RuleBaseKind


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def record(capsys, *argv):
    code, out, err = run(capsys, *argv, "--format", "record")
    return code, json.loads(out) if out else None, err


class TestValidate:
    def test_valid_network(self, capsys, model_file):
        code, out, _ = run(capsys, "validate", "--model", model_file(CHAIN_DOC))
        assert code == 0
        assert "valid" in out

    def test_record(self, capsys, model_file):
        code, report, _ = record(capsys, "validate", "--model", model_file(EXAMPLE_DOC))
        assert code == 0
        assert report["valid"] is True
        assert report["kind"] == "rules"
        assert report["rule_count"] == 20
        assert len(report["input_digest"]) == 64

    def test_coverage_hole(self, capsys, model_file):
        code, report, _ = record(capsys, "validate", "--model", model_file(COVERAGE_HOLE_DOC))
        assert code == 1
        assert report["violations"][0]["kind"] == "coverage"
        assert report["violations"][0]["witness"]["b"] == "f"

    def test_syntax_error(self, capsys, model_file):
        code, _, err = run(capsys, "validate", "--model", model_file("variable a {t f}"))
        assert code == 2
        assert "line 1, column 15" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "validate", "--model", str(tmp_path / "nope.txt"))
        assert code == 2
        assert "cannot read model file" in err


class TestInfer:
    @pytest.mark.parametrize("engine", ["ve", "rules", "enum"])
    def test_chain_marginal(self, capsys, model_file, engine):
        code, report, _ = record(capsys, "infer", "--model", model_file(CHAIN_DOC), "--query", "b", "--engine", engine)
        assert code == 0
        assert report["posterior"]["t"] == pytest.approx(0.41, abs=1e-12)
        assert report["engine"] == engine
        assert report["wall_time"] >= 0

    @pytest.mark.parametrize("engine", ["ve", "rules", "enum"])
    def test_rules_document(self, capsys, model_file, engine):
        code, report, _ = record(capsys, "infer", "--model", model_file(EXAMPLE_DOC), "--query", "a", "--engine", engine)
        assert code == 0
        assert report["posterior"]["t"] == pytest.approx(0.455, abs=1e-12)

    def test_evidence_and_order(self, capsys, model_file):
        path = model_file(EXAMPLE_DOC)
        code, report, _ = record(
            capsys, "infer", "--model", path, "--query", "a", "--evidence", "b=t", "--evidence", "c=t", "--order", "e,d"
        )
        assert code == 0
        assert report["posterior"]["t"] == pytest.approx(0.6, abs=1e-12)
        assert report["ordering"] == ["e", "d"]
        assert report["evidence"] == {"b": "t", "c": "t"}

    def test_table_output(self, capsys, model_file):
        code, out, _ = run(capsys, "infer", "--model", model_file(CHAIN_DOC), "--query", "b", "--evidence", "a=t")
        assert code == 0
        assert "query: b   evidence: a=t   engine: rules" in out
        assert "0.9" in out

    def test_impossible_evidence(self, capsys, model_file):
        code, _, err = run(capsys, "infer", "--model", model_file(DETERMINISTIC_DOC), "--query", "b", "--evidence", "a=f")
        assert code == 3
        assert "probability 0" in err

    @pytest.mark.parametrize(
        "extra",
        [
            ["--query", "z"],
            ["--query", "b", "--evidence", "a"],
            ["--query", "b", "--evidence", "a=maybe"],
            ["--query", "b", "--evidence", "b=t"],
            ["--query", "b", "--order", "b"],
        ],
    )
    def test_bad_query(self, capsys, model_file, extra):
        code, _, _ = run(capsys, "infer", "--model", model_file(CHAIN_DOC), *extra)
        assert code == 2

    def test_invalid_model(self, capsys, model_file):
        code, _, err = run(capsys, "infer", "--model", model_file(COVERAGE_HOLE_DOC), "--query", "a")
        assert code == 1
        assert "not a valid rule base" in err

    def test_missing_query_is_a_usage_error(self, model_file):
        with pytest.raises(SystemExit) as excinfo:
            main(["infer", "--model", model_file(CHAIN_DOC)])
        assert excinfo.value.code == 2


class TestBounds:
    def test_threshold_zero_is_a_point(self, capsys, model_file):
        code, report, _ = record(
            capsys, "bounds", "--model", model_file(CHAIN_DOC), "--query", "b", "--threshold", "0"
        )
        assert code == 0
        t = report["bounds"]["t"]
        assert t["low"] == pytest.approx(0.41, abs=1e-12)
        assert t["high"] == pytest.approx(0.41, abs=1e-12)
        assert report["contains_exact"] is True

    def test_merged_rules(self, capsys, model_file):
        code, report, _ = record(
            capsys, "bounds", "--model", model_file(EXAMPLE_DOC), "--query", "a", "--evidence", "b=t",
            "--threshold", "0.4",
        )
        assert code == 0
        assert report["strategy"] == "resolve"
        assert report["contains_exact"] is True
        assert report["rule_count"] < 20
        assert report["bounds"]["t"]["low"] <= report["exact"]["t"] <= report["bounds"]["t"]["high"]

    @pytest.mark.parametrize("strategy", ["drop", "resolve", "both"])
    def test_wide_threshold_is_sound(self, capsys, model_file, strategy):
        text = network_text(random_network(np.random.default_rng(3), 5))
        code, report, _ = record(
            capsys, "bounds", "--model", model_file(text), "--query", "x4", "--evidence", "x0=t",
            "--threshold", "1.0", "--strategy", strategy,
        )
        assert code == 0
        assert report["contains_exact"] is True

    def test_simplify_steps(self, capsys, model_file):
        code, report, _ = record(
            capsys, "bounds", "--model", model_file(EXAMPLE_DOC), "--query", "a", "--threshold", "0.2",
            "--simplify-steps",
        )
        assert code == 0
        assert report["contains_exact"] is True

    def test_negative_threshold(self, capsys, model_file):
        code, _, _ = run(capsys, "bounds", "--model", model_file(CHAIN_DOC), "--query", "b", "--threshold", "-1")
        assert code == 2


class TestCompress:
    def test_redundant_parent(self, capsys, model_file):
        code, report, _ = record(capsys, "compress", "--model", model_file(REDUNDANT_DOC), "--threshold", "0.1")
        assert code == 0
        b = next(row for row in report["rows"] if row["variable"] == "b")
        assert (b["table_rows"], b["table_entries"]) == (2, 4)
        assert b["rules_exact"] == 2
        assert b["rules_threshold"] == 2
        assert report["total"]["rules_exact"] == 4

    def test_multi_parent_rows(self, capsys, model_file):
        path = model_file(EXAMPLE_DOC)
        _, everything, _ = record(capsys, "compress", "--model", path)
        assert [row["parents"] for row in everything["rows"]] == [0, 0, 0, 0, 4]

        code, report, _ = record(capsys, "compress", "--model", path, "--multi-parent")
        assert code == 0
        assert report["multi_parent"] is True
        assert [row["variable"] for row in report["rows"]] == ["a"]
        a = report["rows"][0]
        assert (a["table_rows"], a["table_entries"]) == (16, 32)
        assert a["rules_exact"] == 12
        assert report["total"]["rules_exact"] == 12
        assert report["total"]["parents"] is None

    def test_writes_the_compressed_rules(self, capsys, model_file, tmp_path):
        out = tmp_path / "compressed.txt"
        code, out_text, _ = run(
            capsys, "compress", "--model", model_file(EXAMPLE_DOC), "--threshold", "0.4", "--out", str(out)
        )
        assert code == 0
        assert "compressed rule base written to" in out_text
        doc = parse_model(out.read_text(encoding="utf-8"))
        assert doc.rule_base.kind is RuleBaseKind.APPROXIMATING
        assert "rule a=t <- b=t : 0.4, 0.8" in out.read_text(encoding="utf-8")


class TestConvert:
    def test_network_to_rules(self, capsys, model_file):
        code, out, _ = run(capsys, "convert", "--model", model_file(CHAIN_DOC))
        assert code == 0
        doc = parse_model(out)
        assert doc.kind == "rules"
        assert len(doc.rule_base.rules) == 6
        assert "rule b=t <- a=t : 0.9" in out

    def test_rules_to_network(self, capsys, model_file, tmp_path):
        target = tmp_path / "net.txt"
        code, out, _ = run(capsys, "convert", "--model", model_file(EXAMPLE_DOC), "--out", str(target))
        assert code == 0
        assert out == ""
        doc = parse_model(target.read_text(encoding="utf-8"))
        assert doc.kind == "network"
        assert doc.network.cpts[4].parents == (0, 1, 2, 3)


class TestCompare:
    def test_all_engines_agree(self, capsys, model_file):
        code, report, _ = record(capsys, "compare", "--model", model_file(EXAMPLE_DOC), "--trials", "10")
        assert code == 0
        assert report["checked"] == 10
        assert report["thresholds"] == [0.05, 0.1, 0.2]
        assert report["max_engine_gap"] <= 1e-9
        assert report["violations"] == []

    def test_same_seed_same_report(self, capsys, model_file):
        path = model_file(network_text(random_network(np.random.default_rng(11), 6)))
        first = run(capsys, "compare", "--model", path, "--trials", "8", "--seed", "5")
        second = run(capsys, "compare", "--model", path, "--trials", "8", "--seed", "5")
        assert first[0] == second[0] == 0
        assert first[1] == second[1]

    def test_deterministic_model_skips_impossible_trials(self, capsys, model_file):
        code, report, _ = record(
            capsys, "compare", "--model", model_file(DETERMINISTIC_DOC), "--trials", "20", "--threshold", "0.1"
        )
        assert code == 0
        assert report["checked"] + report["skipped"] == 20

    def test_violation_has_a_reproduction_command(self, capsys, model_file, monkeypatch):
        def empty_bounds(arb, query, evidence, order=None, simplify_each_step=None, on_step=None):
            zeros = tuple(0.0 for _ in query.domain)
            return BoundedPosterior(query.name, query.domain, zeros, zeros), InferenceStats("bounds")

        monkeypatch.setattr(inference_commands, "bounded_posterior", empty_bounds)
        path = model_file(CHAIN_DOC)
        code, out, _ = run(capsys, "compare", "--model", path, "--trials", "3", "--threshold", "0.1", "--seed", "4")
        assert code == 1
        assert "[bounds]" in out
        assert f"reproduce: main.py bounds --model {path} --query" in out
        assert "--threshold 0.1 --strategy resolve  # seed 4" in out

    def test_interval_model_is_refused(self, capsys, model_file):
        text = "variable a {t, f}\nrule a=t <- : 0.2, 0.4\nrule a=f <- : 0.6, 0.8\n"
        code, _, _ = run(capsys, "compare", "--model", model_file(text), "--trials", "2")
        assert code == 2
