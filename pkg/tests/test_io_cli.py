import csv
import json

import numpy as np
import pytest

from distreach import io
from distreach.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from distreach.errors import ParseError, ShapeError
from distreach.model import Box
from distreach.scenarios import PlatoonSpec, PowerSpec, platoon_scenario, power_scenario
from distreach.reformulate import evaluate


def strip_timing(doc):
    doc = json.loads(json.dumps(doc))
    doc.pop("timing", None)
    for s in doc["solves"]:
        s.pop("solve_time")
    return doc


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestShippedConfigs:
    def test_platoon(self):
        cfg = io.load_config(io.shipped_config("platoon_m9"))
        g = cfg.scenario.graph
        assert g.dynamic_ids == list(range(1, 10)) and g.n_x == 3 and g.n_u == 1
        assert all(g[i].neighbor_ids == (i - 1,) for i in g.dynamic_ids)
        assert g[0].is_static and cfg.horizon == 5

    def test_power(self):
        cfg = io.load_config(io.shipped_config("power_m4"))
        g = cfg.scenario.graph
        assert g.dynamic_ids == [1, 2, 3, 4]
        assert g[2].neighbor_ids == (1, 3)

    @pytest.mark.parametrize("name,builder,spec", [
        ("platoon_m3", platoon_scenario, PlatoonSpec(M=3)),
        ("power_m4", power_scenario, PowerSpec()),
    ])
    def test_matches_python_builders(self, rng, name, builder, spec):
        cfg = io.load_config(io.shipped_config(name))
        ref = builder(spec)
        for i in ref.graph.dynamic_ids:
            a, b = cfg.scenario.graph[i], ref.graph[i]
            np.testing.assert_allclose(a.A_self, b.A_self, atol=1e-14)
            np.testing.assert_allclose(a.B, b.B, atol=1e-14)
            np.testing.assert_allclose(np.array(a.w_seq), np.array(b.w_seq), atol=1e-14)
            for j in a.neighbor_ids:
                x = rng.standard_normal(2 * a.n_x)
                np.testing.assert_allclose(evaluate(cfg.scenario.nets[(i, j)], x), evaluate(ref.nets[(i, j)], x), atol=1e-14)

    def test_unknown_shipped_config(self):
        with pytest.raises(FileNotFoundError):
            io.shipped_config("nope")


class TestParsing:
    def test_unknown_field_is_named(self):
        path = io.shipped_config("platoon_m3")
        raw = json.loads(path.read_text())
        raw["colour"] = "red"
        with pytest.raises(ParseError, match="colour"):
            io.parse_config(json.dumps(raw, indent=1), path)

    def test_unknown_agent_field_has_line(self):
        path = io.shipped_config("platoon_m3")
        raw = json.loads(path.read_text())
        raw["system"]["agents"][1]["mass"] = 1200
        with pytest.raises(ParseError, match=r"'mass'.*line \d+"):
            io.parse_config(json.dumps(raw, indent=1), path)

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"system": [1,}')
        with pytest.raises(ParseError, match="line 1"):
            io.load_config(p)

    def test_steps_override(self):
        cfg = io.load_config(io.shipped_config("platoon_m3"), steps=7)
        assert cfg.horizon == 7 and len(cfg.scenario.graph[1].w_seq) == 7


class TestWeights:
    def test_two_hidden_layers_of_fifteen(self, tmp_path, rng):
        sizes = [2, 15, 15, 1]
        layers = [{"W": rng.standard_normal((b, a)).tolist(), "b": rng.standard_normal(b).tolist()}
                  for a, b in zip(sizes[:-1], sizes[1:])]
        p = tmp_path / "w.json"
        p.write_text(json.dumps({"layers": layers}))
        m = io.load_weights(p)
        assert m.depth == 2 and m.hidden_widths == (15, 15) and m.input_dim == 2
        np.testing.assert_array_equal(m.layers[1][0], np.array(layers[1]["W"]))

    def test_shipped_shapes(self):
        base = io.CONFIG_DIR / "weights"
        assert io.load_weights(base / "platoon" / "pi_1_0.json").hidden_widths == (15, 15)
        assert io.load_weights(base / "power" / "pi_2_3.json").hidden_widths == (10, 10)

    def test_row_count_mismatch(self):
        bad = {"layers": [{"W": [[1.0, 2.0]], "b": [0.0]}, {"W": [[1.0], [2.0]], "b": [0.0]}]}
        with pytest.raises(ShapeError, match="layer 1"):
            io.parse_weights(bad)

    def test_round_trip_exact(self, tmp_path, rng):
        from conftest import random_mlp
        m = random_mlp(rng, 4, (5,), 2)
        io.save_weights(m, tmp_path / "m.json")
        back = io.load_weights(tmp_path / "m.json")
        for (W, b), (W2, b2) in zip(m.layers, back.layers):
            assert np.array_equal(W, W2) and np.array_equal(b, b2)


class TestResults:
    def test_csv_export(self, tmp_path):
        boxes = {1: [Box([0.0, 1.0], [1.0, 2.0])] * 2}
        traj = {1: np.zeros((3, 2, 2))}
        io.export_csv(boxes, tmp_path, traj)
        rows = list(csv.reader((tmp_path / "agent_1.csv").open()))
        assert rows[0] == ["step", "coord", "lower", "upper"] and len(rows) == 5
        rows = list(csv.reader((tmp_path / "trajectories_agent_1.csv").open()))
        assert rows[0] == ["sample", "step", "x0", "x1"] and len(rows) == 7


class TestCli:
    def test_missing_config(self, capsys):
        code, _, err = run_cli(capsys, "verify")
        assert code == EXIT_USAGE and json.loads(err)["error"] == "UsageError"

    def test_parse_error_is_usage(self, capsys, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{}")
        code, _, err = run_cli(capsys, "verify", "--config", str(p))
        assert code == EXIT_USAGE and json.loads(err)["error"] == "ParseError"

    def test_verify_check_csv_determinism(self, capsys, tmp_path):
        cfg = str(io.shipped_config("platoon_m3"))
        out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
        code, out, _ = run_cli(capsys, "verify", "--config", cfg, "--steps", "1", "--out", str(out1),
                               "--csv", str(tmp_path / "csv"))
        assert code == EXIT_OK and json.loads(out)["solves"] == 18
        assert (tmp_path / "csv" / "agent_3.csv").exists()
        assert (tmp_path / "csv" / "trajectories_agent_3.csv").exists()
        code, _, _ = run_cli(capsys, "verify", "--config", cfg, "--steps", "1", "--out", str(out2), "--workers", "3")
        assert code == EXIT_OK
        a, b = json.loads(out1.read_text()), json.loads(out2.read_text())
        assert strip_timing(a) == strip_timing(b)
        assert a["config_hash"] and a["seed"] == 0 and a["settings"]["backend"] == "cvxopt" and a["version"]

        code, out, _ = run_cli(capsys, "check", "--result", str(out1), "--samples", "2000")
        rep = json.loads(out)
        assert code == EXIT_OK and rep["ok"] and rep["n_violations"] == 0

    def test_check_flags_doctored_result(self, capsys, tmp_path):
        cfg = str(io.shipped_config("platoon_m3"))
        res = tmp_path / "r.json"
        run_cli(capsys, "verify", "--config", cfg, "--steps", "1", "--out", str(res))
        doc = json.loads(res.read_text())
        doc["agents"]["2"]["upper"][1] = doc["agents"]["2"]["lower"][1]
        res.write_text(json.dumps(doc))
        code, _, err = run_cli(capsys, "check", "--result", str(res), "--samples", "500")
        assert code == EXIT_FAIL and json.loads(err)["details"]["n_violations"] > 0

    def test_synth_weights_reproduces_shipped(self, capsys, tmp_path):
        cfg = str(io.shipped_config("power_m4"))
        code, out, _ = run_cli(capsys, "synth-weights", "--config", cfg, "--out", str(tmp_path))
        assert code == EXIT_OK
        written = json.loads(out)["written"]
        assert len(written) == 6
        shipped = io.CONFIG_DIR / "weights" / "power" / "pi_2_3.json"
        assert json.loads(shipped.read_text()) == json.loads((tmp_path / "weights" / "power" / "pi_2_3.json").read_text())

    @pytest.mark.slow
    def test_verify_full_platoon(self, capsys, tmp_path):
        res = tmp_path / "p.json"
        code, _, _ = run_cli(capsys, "verify", "--config", str(io.shipped_config("platoon_m9")), "--out", str(res),
                             "--workers", "4")
        assert code == EXIT_OK
        boxes = io.boxes_from_json(json.loads(res.read_text()))
        assert sorted(boxes) == list(range(1, 10)) and all(len(s) == 6 for s in boxes.values())
        code, _, _ = run_cli(capsys, "check", "--result", str(res))
        assert code == EXIT_OK

    def test_compare_two_agents(self, capsys, tmp_path):
        # an M=2 prefix of the platoon, written as its own config
        raw = json.loads(io.shipped_config("platoon_m3").read_text())
        raw["system"]["agents"] = raw["system"]["agents"][:3]
        raw["networks"]["files"] = {k: str(io.CONFIG_DIR / v) for k, v in raw["networks"]["files"].items() if k != "3,2"}
        raw["horizon"] = 1
        p = tmp_path / "m2.json"
        p.write_text(json.dumps(raw))
        code, out, _ = run_cli(capsys, "compare", "--config", str(p), "--out", str(tmp_path / "cmp.json"))
        assert code == EXIT_OK
        doc = json.loads(out)
        times = {r["mode"]: r["solve_time"] for r in doc["timing"]}
        assert times["per-agent"] < times["monolithic"]
        assert doc["max_bound_difference"] <= 1e-3
