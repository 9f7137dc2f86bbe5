import csv
import json

import numpy as np
import pytest

from feedaudit import io
from feedaudit.cli import main
from feedaudit.counterfactual import CounterfactualPairing
from feedaudit.markov import validate_chain
from feedaudit.regulatory import FeedBatch

REF = [[0.9, 0.1], [0.5, 0.5]]
REG = {"n": 2, "eps1": 0.0, "eps2": 0.5, "delta": 0.1}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def simulate(tmp_path, gap, seed=7, tag="s"):
    cfg = {"seed": seed, "scenario": {"n": 2, "U": 3, "gap": gap, "reference": REF}, "M": 20, "T": "auto",
           "regulatory": REG, "cover_trials": 100,
           "outputs": {"filtered": f"{tag}_f.jsonl", "reference": f"{tag}_r.jsonl", "truth": f"{tag}_truth.json"}}
    assert main(["simulate", "--config", write(tmp_path / f"{tag}.json", cfg), "--out", str(tmp_path / f"{tag}.out")]) == 0
    return cfg


def regulate(tmp_path, tag="s", out="reg.out", seed=7, extra=()):
    cfg = {"seed": seed, "inputs": {"filtered": f"{tag}_f.jsonl", "reference": f"{tag}_r.jsonl"}, "regulatory": REG}
    code = main(["test-regulatory", "--config", write(tmp_path / f"{tag}_reg.json", cfg), "--out", str(tmp_path / out),
                 *extra])
    return code, json.loads((tmp_path / out).read_text())


class TestPipeline:
    def test_null_scenario_exits_zero(self, tmp_path):
        simulate(tmp_path, 0.0)
        code, report = regulate(tmp_path)
        assert code == 0 and report["result"]["decision"] == "YES"
        assert set(report["inputs"]) == {"inputs.filtered", "inputs.reference"}
        assert json.loads((tmp_path / "reg.out.timing.json").read_text())["wall_clock_s"] >= 0

    def test_alt_scenario_exits_one(self, tmp_path):
        simulate(tmp_path, 1.0)
        code, report = regulate(tmp_path)
        assert code == 1 and report["result"]["reason"] == "Statistic"

    def test_reports_are_bit_identical(self, tmp_path):
        simulate(tmp_path, 0.3, tag="a")
        first = (tmp_path / "a_f.jsonl").read_bytes()
        simulate(tmp_path, 0.3, tag="a")
        assert (tmp_path / "a_f.jsonl").read_bytes() == first
        regulate(tmp_path, "a", "one.out")
        regulate(tmp_path, "a", "two.out")
        assert (tmp_path / "one.out").read_bytes() == (tmp_path / "two.out").read_bytes()

    def test_seed_override_is_echoed(self, tmp_path):
        simulate(tmp_path, 0.0)
        _, report = regulate(tmp_path, extra=("--seed-override", "123"))
        assert report["config"]["seed"] == 123

    def test_echoed_config_reproduces(self, tmp_path):
        simulate(tmp_path, 0.0)
        _, report = regulate(tmp_path)
        write(tmp_path / "echo.json", report["config"])
        assert main(["test-regulatory", "--config", str(tmp_path / "echo.json"), "--out", str(tmp_path / "e.out")]) == 0
        assert json.loads((tmp_path / "e.out").read_text())["result"] == report["result"]


class TestErrors:
    def test_missing_eps2(self, tmp_path, capsys):
        simulate(tmp_path, 0.0)
        cfg = {"seed": 1, "inputs": {"filtered": "s_f.jsonl", "reference": "s_r.jsonl"},
               "regulatory": {"n": 2, "eps1": 0.0, "delta": 0.1}}
        assert main(["test-regulatory", "--config", write(tmp_path / "bad.json", cfg)]) == 2
        assert "regulatory.eps2" in capsys.readouterr().err

    def test_missing_seed(self, tmp_path, capsys):
        assert main(["cover-time", "--config", write(tmp_path / "c.json", {"chain": {"n": 2, "rows": REF}})]) == 2
        assert "seed" in capsys.readouterr().err

    def test_missing_input_file(self, tmp_path, capsys):
        cfg = {"seed": 1, "inputs": {"filtered": "nope.jsonl", "reference": "nope.jsonl"}, "regulatory": REG}
        assert main(["test-regulatory", "--config", write(tmp_path / "c.json", cfg)]) == 2
        assert "inputs.filtered" in capsys.readouterr().err

    def test_command_mismatch(self, tmp_path):
        assert main(["sweep", "--config", write(tmp_path / "c.json", {"command": "simulate", "seed": 1})]) == 2

    def test_unparsable(self, tmp_path):
        (tmp_path / "c.json").write_text("{not json")
        assert main(["sweep", "--config", str(tmp_path / "c.json")]) == 2

    def test_bad_scenario_field(self, tmp_path, capsys):
        cfg = {"seed": 1, "scenario": {"n": 2, "U": 1, "gap": 3.0}, "M": 1, "T": 5,
               "outputs": {"filtered": "f.jsonl", "reference": "r.jsonl"}}
        assert main(["simulate", "--config", write(tmp_path / "c.json", cfg)]) == 2
        assert "scenario" in capsys.readouterr().err

    def test_unknown_command(self, tmp_path):
        assert main(["frobnicate", "--config", "x"]) == 2


class TestCommands:
    def test_iid(self, tmp_path):
        rng = np.random.default_rng(0)
        sp = [(rng.integers(0, 3, 300), rng.integers(0, 3, 300))]
        io.write_samples(tmp_path / "s.jsonl", sp, sp)
        cfg = {"seed": 1, "inputs": {"samples": "s.jsonl"},
               "iid": {"n": 3, "m": 200, "eps1": 0.0, "eps2": 0.5, "delta": 0.1}}
        assert main(["test-iid", "--config", write(tmp_path / "c.json", cfg), "--out", str(tmp_path / "o")]) == 0
        assert json.loads((tmp_path / "o").read_text())["result"]["G"] <= 0

    def test_counterfactual(self, tmp_path):
        simulate(tmp_path, 0.0)
        io.save_pairing(tmp_path / "pairs.json", CounterfactualPairing([(0, 1)]))
        cfg = {"seed": 2, "inputs": {"filtered": "s_f.jsonl", "reference": "s_r.jsonl", "pairing": "pairs.json"},
               "regulatory": REG, "delta_b1": 0.05, "delta_b2": 0.05}
        code = main(["test-counterfactual", "--config", write(tmp_path / "c.json", cfg), "--out", str(tmp_path / "o")])
        report = json.loads((tmp_path / "o").read_text())["result"]
        assert code in (0, 1) and set(report) >= {"decision", "block1", "block2"}
        assert (code == 0) == (report["decision"] == "YES")

    def test_cover_time_workers_agree(self, tmp_path):
        outs = []
        for w in (1, 3):
            cfg = {"seed": 5, "chain": {"n": 2, "rows": [[0.5, 0.5], [0.5, 0.5]]}, "m": 1, "k": 1, "trials": 3000,
                   "workers": w}
            assert main(["cover-time", "--config", write(tmp_path / "c.json", cfg), "--out", str(tmp_path / f"o{w}")]) == 0
            outs.append(json.loads((tmp_path / f"o{w}").read_text())["result"])
        assert outs[0] == outs[1]
        assert abs(outs[0]["profiles"]["start:0"]["mean"] - 3.0) < 0.1

    def test_calibrate_small_grid(self, tmp_path):
        grid = [{"name": "null", "P": [[0.5, 0.5]], "Q": [[0.5, 0.5]], "eps1": 0.0, "eps2": 0.5, "delta": 0.1,
                 "regime": "null"},
                {"name": "alt", "P": [[1.0, 0.0]], "Q": [[0.0, 1.0]], "eps1": 0.0, "eps2": 0.5, "delta": 0.1,
                 "regime": "alt"}]
        cfg = {"seed": 3, "grid": grid, "trials": 100, "outputs": {"calibration": "cal.json"}}
        assert main(["calibrate", "--config", write(tmp_path / "c.json", cfg), "--out", str(tmp_path / "o")]) == 0
        cal = json.loads((tmp_path / "cal.json").read_text())
        assert set(cal) >= {"c", "C", "grid_hash", "achieved_error"}


class TestSweep:
    def run(self, tmp_path, name, workers=1):
        # fixed per-pair alternative, replicated over U users
        points = [{"id": f"U{U}", "scenario": {"n": 2, "U": U, "gap": 0.9, "eps2": 0.5},
                   "iid": {"n": 2, "m": 30, "eps1": 0.0, "eps2": 0.5, "delta": 0.1}} for U in (1, 2, 4)]
        cfg = {"seed": 11, "tester": "iid", "trials": 200, "workers": workers, "csv": f"{name}.csv", "grid": points}
        assert main(["sweep", "--config", write(tmp_path / f"{name}.json", cfg), "--out", str(tmp_path / f"{name}.out")]) == 0
        return (tmp_path / f"{name}.csv").read_bytes()

    def test_csv_and_determinism(self, tmp_path):
        a = self.run(tmp_path, "a")
        b = self.run(tmp_path, "b", workers=3)
        assert a == b
        rows = list(csv.DictReader(a.decode().splitlines()))
        assert [r["scenario_id"] for r in rows] == ["U1", "U2", "U4"]
        assert list(rows[0]) == list(io.CSV_COLUMNS)
        rates = [float(r["yes_rate"]) for r in rows]
        ses = [float(r["se"]) for r in rows]
        assert all(rates[i + 1] <= rates[i] + 3 * max(ses[i], ses[i + 1], 1 / 200) for i in range(2))

    def test_appends(self, tmp_path):
        self.run(tmp_path, "a")
        data = self.run(tmp_path, "a").decode().splitlines()
        assert len(data) == 7 and data.count(",".join(io.CSV_COLUMNS)) == 1

    def test_empty_grid(self, tmp_path, capsys):
        cfg = {"seed": 1, "csv": "x.csv", "grid": []}
        assert main(["sweep", "--config", write(tmp_path / "c.json", cfg)]) == 2
        assert "grid" in capsys.readouterr().err


class TestFormats:
    def test_git_blob_hash(self):
        assert io.blob_sha1(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
        assert io.blob_sha1(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"

    def test_chain_round_trip(self, tmp_path):
        c = validate_chain(REF)
        io.save_chain(tmp_path / "c.json", c)
        assert io.load_chain(tmp_path / "c.json") == c
        assert json.loads((tmp_path / "c.json").read_text())["n"] == 2

    def test_trajectories_are_one_based(self, tmp_path):
        b = FeedBatch(4, "F", ([0, 1, 1],), 2)
        io.write_trajectories(tmp_path / "t.jsonl", [b])
        rec = json.loads((tmp_path / "t.jsonl").read_text())
        assert rec == {"user": 4, "world": "F", "traj_index": 0, "states": [1, 2, 2]}
        assert io.read_trajectories(tmp_path / "t.jsonl", 2)["F"][0] == b

    def test_trajectory_label_range(self, tmp_path):
        (tmp_path / "t.jsonl").write_text('{"user":0,"world":"F","traj_index":0,"states":[0,1]}\n')
        with pytest.raises(ValueError):
            io.read_trajectories(tmp_path / "t.jsonl", 2)

    def test_samples_round_trip(self, tmp_path):
        sp = [(np.array([0, 1]), np.array([1, 1]))]
        sq = [(np.array([2, 2]), np.array([0, 0]))]
        io.write_samples(tmp_path / "s.jsonl", sp, sq)
        first = json.loads((tmp_path / "s.jsonl").read_text().splitlines()[0])
        assert first == {"u": 0, "world": "P", "half": 1, "symbols": [1, 2]}
        p, q = io.read_samples(tmp_path / "s.jsonl", 3)
        assert p[0][1].tolist() == [1, 1] and q[0][0].tolist() == [2, 2]

    def test_pairing_round_trip(self, tmp_path):
        pr = CounterfactualPairing([(0, 1), (2, 3)])
        io.save_pairing(tmp_path / "p.json", pr)
        assert io.load_pairing(tmp_path / "p.json") == pr
