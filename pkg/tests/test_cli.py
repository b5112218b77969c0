import csv
import json
from importlib import resources

import jsonschema
import pytest

from treecert.cli import Config, ConfigError, main, parse_config
from treecert.data_io import parse_libsvm
from treecert.fixtures import stump_pair, tree_b
from treecert.model import ADDITIVE, dump_ensemble, load_ensemble
from treecert.verifier import report_schema

AZ_MAP = str(resources.files("treecert.data").joinpath("collision_manner_arizona.json"))


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return str(path)


def az_rows(manners):
    sev = ["No Injury", "Fatal"]
    return [{"CollisionManner": m, "Vehicles": str(1 + i % 3), "Severity": sev[i % 2]} for i, m in enumerate(manners)]


def unify_args(tmp_path, csv_path, maps=AZ_MAP):
    return ["unify", csv_path, "--maps", maps, "--label-column", "Severity", "--positive", "Fatal",
            "--out", str(tmp_path / "out.libsvm")]


class TestConfig:
    def test_defaults_are_setting_1(self):
        cfg = parse_config('{"model": "m.json", "data": "d.libsvm"}')
        assert (cfg.eps_init, cfg.max_clique, cfg.max_search, cfg.max_level, cfg.dp) == (0.3, 2, 10, 1, 0)
        assert cfg.num_points == 1000 and cfg.train_fraction == 0.2

    def test_setting_2(self):
        assert parse_config('{"eps_init": 0.5}').verify_params().eps_init == 0.5

    @pytest.mark.parametrize(
        "text,key",
        [('{"eps_init": -1}', "eps_init"), ('{"dp": 2}', "dp"), ('{"max_search": "10"}', "max_search"),
         ('{"max_clique": 1}', "max_clique"), ('{"num_points": 1.5}', "num_points")],
    )
    def test_bad_values_name_the_key(self, text, key):
        with pytest.raises(ConfigError, match=key):
            parse_config(text)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="colour"):
            parse_config('{"colour": 1}')

    def test_paths_relative_to_config(self, tmp_path):
        cfg = parse_config('{"model": "m.json", "data": "/abs/d"}', base_dir=tmp_path)
        assert cfg.model == str(tmp_path / "m.json") and cfg.data == "/abs/d"

    def test_overrides_win(self):
        assert parse_config('{"eps_init": 0.5}', eps_init=0.1, dp=None).eps_init == 0.1

    def test_each_setting_one_key_away(self):
        base = Config()
        for key, value in [("eps_init", 0.5), ("max_search", 1), ("max_level", 2), ("max_clique", 3), ("dp", 1)]:
            cfg = parse_config(json.dumps({key: value}))
            changed = [k for k in ("eps_init", "max_search", "max_level", "max_clique", "dp")
                       if getattr(cfg, k) != getattr(base, k)]
            assert changed == [key]


class TestUnify:
    def test_clean_fixture(self, tmp_path, capsys):
        path = write_csv(tmp_path / "az.csv", az_rows(["Rear End", "Head On", "Left Turn", "NULL", "Rear To Rear"]))
        assert main(unify_args(tmp_path, path)) == 0
        data = parse_libsvm((tmp_path / "out.libsvm").read_text())
        assert len(data) == 5
        assert [ex.features[0] for ex in data] == [2, 6, 3, 99, 7]
        assert [ex.label for ex in data] == [0, 1, 0, 1, 0]
        assert (tmp_path / "out.audit.csv").read_text() == ""
        schema = json.loads((tmp_path / "out.schema.json").read_text())
        assert list(schema) == ["collision_manner", "Vehicles"] and schema["Vehicles"] == "integer"

    def test_unmapped_value(self, tmp_path):
        path = write_csv(tmp_path / "az.csv", az_rows(["Rear End", "Backing"]))
        assert main(unify_args(tmp_path, path)) == 0
        lines = (tmp_path / "out.audit.csv").read_text().splitlines()
        assert lines == [f"{path},2,CollisionManner,Backing"]
        assert parse_libsvm((tmp_path / "out.libsvm").read_text())[1].features[0] == 99

    def test_missing_map(self, tmp_path, capsys):
        path = write_csv(tmp_path / "az.csv", az_rows(["Rear End"]))
        assert main(unify_args(tmp_path, path, maps=str(tmp_path / "nope.json"))) != 0
        assert "nope.json" in capsys.readouterr().err

    def test_unknown_flag_is_usage_error(self):
        assert main(["unify", "--bogus"]) == 1

    def test_no_subcommand(self):
        assert main([]) == 1


@pytest.fixture
def train_file(tmp_path):
    rows = [f"{int(i >= 30)} 1:{i % 5 + 1} 2:{i}" for i in range(60)]
    path = tmp_path / "all.libsvm"
    path.write_text("\n".join(rows) + "\n")
    return str(path)


class TestTrain:
    def test_grid_report(self, tmp_path, train_file, capsys):
        out = tmp_path / "model.json"
        assert main(["train", "--data", train_file, "--train-fraction", "0.5", "--out", str(out)]) == 0
        grid = json.loads((tmp_path / "model.grid.json").read_text())
        assert len(grid["cells"]) == 12
        assert {(c["max_depth"], c["min_samples_split"]) for c in grid["cells"]} == {
            (d, m) for d in (3, 4, 5) for m in (2, 10, 20, 50)
        }
        assert load_ensemble(out.read_text()).mode == "classifier"
        assert len(parse_libsvm((tmp_path / "model.test.libsvm").read_text())) == 30
        assert "cells" in capsys.readouterr().out

    def test_boosted(self, tmp_path, train_file):
        out = tmp_path / "model.json"
        assert main(["train", "--data", train_file, "--train-fraction", "0.5", "--boosted", "--out", str(out)]) == 0
        assert load_ensemble(out.read_text()).mode == ADDITIVE

    def test_bad_path(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "m.json")]) == 2

    def test_config_file(self, tmp_path, train_file):
        cfg = tmp_path / "exp.json"
        cfg.write_text(json.dumps({"data": "all.libsvm", "model": "m.json", "depths": [3], "min_samples": [2]}))
        assert main(["train", "--config", str(cfg)]) == 0
        grid = json.loads((tmp_path / "m.grid.json").read_text())
        assert len(grid["cells"]) == 1

    def test_deterministic(self, tmp_path, train_file):
        outs = []
        for name in ("a.json", "b.json"):
            assert main(["train", "--data", train_file, "--seed", "4", "--out", str(tmp_path / name)]) == 0
            outs.append((tmp_path / name).read_text())
        assert outs[0] == outs[1]


class TestRules:
    def test_tree_b(self, tmp_path, capsys):
        path = tmp_path / "b.json"
        path.write_text(dump_ensemble(tree_b()))
        schema = tmp_path / "s.json"
        schema.write_text('{"a": "real", "b": "real"}')
        assert main(["rules", "--model", str(path), "--schema", str(schema), "--target", "1"]) == 0
        assert capsys.readouterr().out.splitlines() == [
            "((a ≤ 0.5) ∧ (b > 0.3)) ⇒ (label⇒label_yes)",
            "(a > 0.5) ⇒ (label⇒label_yes)",
        ]

    def test_additive_rejected(self, tmp_path, capsys):
        path = tmp_path / "e.json"
        path.write_text(dump_ensemble(stump_pair()))
        assert main(["rules", "--model", str(path)]) == 2
        assert "rules require classifier mode" in capsys.readouterr().err

    def test_missing_schema(self, tmp_path, capsys, caplog):
        path = tmp_path / "b.json"
        path.write_text(dump_ensemble(tree_b()))
        out = tmp_path / "rules.json"
        assert main(["rules", "--model", str(path), "--out", str(out)]) == 0
        captured = capsys.readouterr()
        assert "(f0 > 0.5) ⇒ (label⇒label_yes)" in captured.out
        assert "no schema given" in caplog.text
        assert len(json.loads(out.read_text())) == 2


@pytest.fixture
def verify_inputs(tmp_path):
    model = tmp_path / "s12.json"
    model.write_text(dump_ensemble(stump_pair()))
    data = tmp_path / "pts.libsvm"
    data.write_text("1 1:0.6\n1 1:0.9\n0 1:0.2\n")
    return str(model), str(data)


class TestVerify:
    def test_report_and_summary(self, tmp_path, verify_inputs, capsys):
        model, data = verify_inputs
        out = tmp_path / "report.json"
        assert main(["verify", "--model", model, "--data", data, "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        jsonschema.validate(doc, report_schema())
        assert doc["num_points"] == 3
        line = capsys.readouterr().out.strip()
        assert line == f"avg bound = {doc['average_bound']:.6g}, verified error = {doc['verified_error']:.6g}"

    def test_single_probe_identity(self, tmp_path, verify_inputs):
        model, data = verify_inputs
        out = tmp_path / "r.json"
        assert main(["verify", "--model", model, "--data", data, "--max-search", "1", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["average_bound"] == pytest.approx(0.3 * (1 - doc["verified_error"]), abs=1e-15)

    def test_dp_dominance(self, tmp_path, verify_inputs):
        model, data = verify_inputs
        bounds = []
        for dp in ("0", "1"):
            out = tmp_path / f"r{dp}.json"
            assert main(["verify", "--model", model, "--data", data, "--dp", dp, "--out", str(out)]) == 0
            bounds.append(json.loads(out.read_text())["average_bound"])
        assert bounds[1] >= bounds[0]

    def test_bad_dp(self, verify_inputs):
        model, data = verify_inputs
        assert main(["verify", "--model", model, "--data", data, "--dp", "2"]) == 1

    def test_bad_eps_config(self, tmp_path, verify_inputs):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"eps_init": -1}')
        assert main(["verify", "--config", str(cfg)]) == 1

    def test_malformed_model(self, tmp_path, verify_inputs):
        _, data = verify_inputs
        bad = tmp_path / "bad.json"
        bad.write_text('{"trees": 3}')
        assert main(["verify", "--model", str(bad), "--data", data]) == 2

    def test_rerun_identical(self, tmp_path, verify_inputs):
        model, data = verify_inputs
        texts = []
        for name in ("a.json", "b.json"):
            assert main(["verify", "--model", model, "--data", data, "--out", str(tmp_path / name)]) == 0
            texts.append((tmp_path / name).read_bytes())
        assert texts[0] == texts[1]
