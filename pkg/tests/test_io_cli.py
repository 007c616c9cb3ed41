import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plsfilm.cli import main
from plsfilm.core import FitConfig, film_a_fit
from plsfilm.errors import InputError
from plsfilm.io import (
    component_records,
    fmt,
    read_components,
    read_matrix,
    read_weights,
    write_components,
    write_matrix,
    write_records,
)

from helpers import random_instance

FIX = Path(__file__).parent / "fixtures"
RANK1 = FIX / "rank1"
CT = FIX / "contingency2x2"


def rank1_args(method="a", *extra):
    return ["fit", method, "--x", str(RANK1 / "x.csv"), "--y", str(RANK1 / "y.csv"),
            "--z", str(RANK1 / "z.csv"), *extra]


def load_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


class TestIO:
    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_fmt_round_trip(self, x):
        assert float(fmt(x)) == x

    def test_matrix_round_trip(self, tmp_path, rng):
        data = rng.standard_normal((4, 3)) * 10.0 ** rng.integers(-8, 8, (4, 3))
        write_matrix(tmp_path / "m.csv", list("abcd"), ["u", "v", "w"], data)
        ids, cols, back = read_matrix(tmp_path / "m.csv")
        assert ids == list("abcd") and cols == ["u", "v", "w"]
        np.testing.assert_array_equal(back, data)

    def test_components_round_trip(self, tmp_path, rng):
        zb, X, Y = random_instance(rng, J=3, K=2)
        model = film_a_fit(zb, X, Y, FitConfig(n_ranks=2))
        n, m = zb.z.shape
        recs = (component_records(model.subject_basis, [f"s{i}" for i in range(n)],
                                  ["x1", "x2", "x3"])
                + component_records(model.object_basis, [f"o{i}" for i in range(m)],
                                    ["y1", "y2"]))
        write_components(tmp_path / "c.csv", recs)
        back = read_components(tmp_path / "c.csv")
        for t in (1, 2):
            np.testing.assert_array_equal(back[("subject", "score", t)][1],
                                          model.subject_basis.scores[:, t - 1])
            np.testing.assert_array_equal(back[("object", "loading", t)][1],
                                          model.object_basis.loadings[:, t - 1])

    def test_bad_cell_names_file_and_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("id,a,b\nr1,1,2\nr2,1,oops\n", encoding="utf-8")
        with pytest.raises(InputError, match=r"bad\.csv, line 3"):
            read_matrix(p)

    def test_ragged_row(self, tmp_path):
        p = tmp_path / "ragged.csv"
        p.write_text("id,a,b\nr1,1\n", encoding="utf-8")
        with pytest.raises(InputError, match="line 2"):
            read_matrix(p)

    def test_non_finite_rejected(self, tmp_path):
        p = tmp_path / "nan.csv"
        p.write_text("id,a\nr1,nan\n", encoding="utf-8")
        with pytest.raises(InputError, match="non-finite"):
            read_matrix(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError, match="missing.csv"):
            read_matrix(tmp_path / "missing.csv")

    def test_weights(self, tmp_path):
        p = tmp_path / "w.txt"
        p.write_text("0.25\n\n0.75\n", encoding="utf-8")
        np.testing.assert_array_equal(read_weights(p), [0.25, 0.75])

    def test_records_missing_values(self, tmp_path):
        write_records(tmp_path / "r.csv", [{"a": np.nan, "b": True, "c": 3}])
        rows = list(csv.reader((tmp_path / "r.csv").open()))
        assert rows == [["a", "b", "c"], ["", "true", "3"]]


class TestFit:
    @pytest.mark.parametrize("regime", ["on", "off"])
    def test_rank1_fixture(self, tmp_path, regime):
        code = main(rank1_args("a", "--ranks", "1", "--structural", regime,
                               "--out", str(tmp_path)))
        assert code == 0
        diag = load_json(tmp_path / "diagnostics.json")
        assert diag["r2"] == pytest.approx(1.0, abs=1e-8)
        assert diag["residual_share"] == pytest.approx(0.0, abs=1e-8)
        for name in ("components.csv", "omega.csv", "manifest.json"):
            assert (tmp_path / name).exists()
        comps = read_components(tmp_path / "components.csv")
        assert len(comps[("subject", "score", 1)][1]) == 6

    def test_contingency_fixture(self, tmp_path):
        code = main(["fit", "contingency", "--table", str(CT / "table.csv"),
                     "--x", str(CT / "x.csv"), "--y", str(CT / "y.csv"),
                     "--ranks", "1", "--out", str(tmp_path)])
        assert code == 0
        diag = load_json(tmp_path / "diagnostics.json")
        assert diag["phi2"] == pytest.approx(1.0, abs=1e-12)
        assert diag["omega"][0][0] == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("method", ["b1", "b2", "rlq"])
    def test_other_methods(self, tmp_path, method):
        assert main(rank1_args(method, "--ranks", "1", "--out", str(tmp_path))) == 0
        assert load_json(tmp_path / "diagnostics.json")["method"] == method
        assert (tmp_path / "omega.csv").exists()

    def test_missing_z_is_usage_error(self, tmp_path, capsys):
        code = main(["fit", "a", "--x", str(RANK1 / "x.csv"),
                     "--y", str(RANK1 / "y.csv"), "--out", str(tmp_path)])
        assert code == 1
        assert "--z" in capsys.readouterr().err

    def test_missing_required_flag_prints_usage(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["fit", "a", "--x", "x.csv"])
        assert exc.value.code == 1
        assert "usage:" in capsys.readouterr().err

    def test_malformed_input_names_file(self, tmp_path, capsys):
        bad = tmp_path / "z.csv"
        bad.write_text("id,a\nr1,x\n", encoding="utf-8")
        code = main(["fit", "a", "--x", str(RANK1 / "x.csv"), "--y",
                     str(RANK1 / "y.csv"), "--z", str(bad), "--out", str(tmp_path)])
        assert code == 1
        assert "z.csv, line 2" in capsys.readouterr().err

    def test_dimension_mismatch(self, tmp_path):
        z = tmp_path / "z.csv"
        write_matrix(z, ["a", "b"], ["c", "d"], np.ones((2, 2)))
        code = main(["fit", "a", "--x", str(RANK1 / "x.csv"), "--y",
                     str(RANK1 / "y.csv"), "--z", str(z), "--out", str(tmp_path / "o")])
        assert code == 3

    def test_weight_count_mismatch(self, tmp_path):
        w = tmp_path / "p.txt"
        w.write_text("0.5\n0.5\n", encoding="utf-8")
        assert main(rank1_args("a", "--px", str(w), "--out", str(tmp_path))) == 3

    def test_degenerate_problem_is_numerical_failure(self, tmp_path):
        table = tmp_path / "t.csv"
        write_matrix(table, ["r1", "r2"], ["c1", "c2"], np.ones((2, 2)))
        code = main(["fit", "contingency", "--table", str(table),
                     "--x", str(CT / "x.csv"), "--y", str(CT / "y.csv"),
                     "--out", str(tmp_path / "o")])
        assert code == 2

    def test_non_convergence_is_numerical_failure(self, tmp_path, rng):
        zb, X, Y = random_instance(rng, n=8, p=7, J=3, K=3, weighted=False)
        paths = {}
        for name, (data, n) in {"x": (X.data, 8), "y": (Y.data, 7)}.items():
            paths[name] = tmp_path / f"{name}.csv"
            write_matrix(paths[name], [f"r{i}" for i in range(n)],
                         [f"v{j}" for j in range(data.shape[1])], data)
        paths["z"] = tmp_path / "z.csv"
        write_matrix(paths["z"], [f"r{i}" for i in range(8)],
                     [f"r{i}" for i in range(7)], zb.z)
        code = main(["fit", "a", "--x", str(paths["x"]), "--y", str(paths["y"]),
                     "--z", str(paths["z"]), "--ranks", "3", "--max-iter", "1",
                     "--out", str(tmp_path / "o")])
        assert code == 2

    def test_manifest_contents(self, tmp_path):
        main(rank1_args("a", "--out", str(tmp_path)))
        man = load_json(tmp_path / "manifest.json")
        assert man["command"] == "fit" and man["argv"][:2] == ["fit", "a"]
        assert set(man["inputs"]) == {"x", "y", "z"}
        assert len(man["inputs"]["z"]["sha256"]) == 64
        assert man["resolved"]["fit_config"]["tol"] == 1e-9
        assert man["seed"] == 0

    def test_replay_reproduces_outputs(self, tmp_path):
        first, again = tmp_path / "first", tmp_path / "again"
        assert main(rank1_args("b2", "--ranks", "2", "--out", str(first))) == 0
        assert main(["replay", str(first / "manifest.json"), "--out", str(again)]) == 0
        for name in ("components.csv", "omega.csv", "diagnostics.json"):
            assert (first / name).read_bytes() == (again / name).read_bytes()

    def test_replay_bad_manifest(self, tmp_path):
        bad = tmp_path / "m.json"
        bad.write_text("{", encoding="utf-8")
        assert main(["replay", str(bad), "--out", str(tmp_path / "o")]) == 1

    def test_inputs_outside_working_directory(self, tmp_path, monkeypatch):
        # absolute paths in the manifest make replay independent of the cwd
        src = tmp_path / "data"
        shutil.copytree(RANK1, src)
        out = tmp_path / "out"
        monkeypatch.chdir(src)
        assert main(["fit", "a", "--x", "x.csv", "--y", "y.csv", "--z", "z.csv",
                     "--out", str(out)]) == 0
        monkeypatch.chdir(tmp_path)
        assert main(["replay", str(out / "manifest.json"),
                     "--out", str(tmp_path / "re")]) == 0


class TestSimulate:
    def args(self, out):
        return ["simulate", "--replicates", "1", "--noise-grid", "0", "--seed", "7",
                "--out", str(out)]

    def test_single_cell(self, tmp_path):
        assert main(self.args(tmp_path)) == 0
        rows = list(csv.DictReader((tmp_path / "cells.csv").open()))
        assert {(r["replicate"], r["noise_fraction"]) for r in rows} == {("0", "0")}
        by_regime = {r["regime"]: r for r in rows}
        assert float(by_regime["off"]["r2"]) > 0.99
        assert (tmp_path / "aggregates.csv").exists()
        man = load_json(tmp_path / "manifest.json")
        assert man["resolved"]["config"]["seed"] == 7
        assert man["resolved"]["bundle"]["sizes"] == [3, 2, 1]

    def test_byte_identical_rerun(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(self.args(a)) == 0
        assert main(self.args(b)) == 0
        for name in ("cells.csv", "aggregates.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_invalid_grid(self, tmp_path, capsys):
        code = main(["simulate", "--noise-grid", "0,1.5", "--out", str(tmp_path)])
        assert code == 1
        assert "[0, 1]" in capsys.readouterr().err

    def test_unparsable_grid(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--noise-grid", "a,b", "--out", str(tmp_path)])
        assert exc.value.code == 1
