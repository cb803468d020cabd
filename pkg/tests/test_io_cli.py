import json

import numpy as np
import pytest
import scipy.sparse as sp

from randalo import alo
from randalo.cli import cmd_estimate, main
from randalo.config import RunConfig, from_dict, load_config, loads
from randalo.data import Dataset
from randalo.errors import InconsistentDimension, InvalidSpec, ParseError
from randalo.experiments import SyntheticSpec, generate
from randalo.io import data_lines, format_rows, infer_format, ingest, write_dataset
from randalo.jacobian import build_oracle
from randalo.model import fit, lasso


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestReaders:
    def test_csv_with_header(self, tmp_path):
        data = ingest(write(tmp_path, "a.csv", "x1,x2,y\n1,2,3\n4,5,6\n"))
        np.testing.assert_array_equal(data.X, [[1, 2], [4, 5]])
        np.testing.assert_array_equal(data.y, [3, 6])
        assert data.storage == "dense"

    def test_csv_without_header(self, tmp_path):
        data = ingest(write(tmp_path, "a.csv", "1,2\n3,4\n\n5,6\n"))
        assert data.X.shape == (3, 1)

    def test_csv_bad_field(self, tmp_path):
        with pytest.raises(ParseError) as exc:
            ingest(write(tmp_path, "a.csv", "1,2\n3,abc\n"))
        assert exc.value.line == 2 and exc.value.module == "io"

    def test_csv_ragged(self, tmp_path):
        with pytest.raises(InconsistentDimension):
            ingest(write(tmp_path, "a.csv", "1,2,3\n4,5\n"))

    def test_csv_declared_width(self, tmp_path):
        with pytest.raises(InconsistentDimension):
            ingest(write(tmp_path, "a.csv", "1,2,3\n"), n_features=3)

    def test_csv_empty(self, tmp_path):
        with pytest.raises(ParseError):
            ingest(write(tmp_path, "a.csv", "a,b\n"))

    def test_svmlight(self, tmp_path):
        data = ingest(write(tmp_path, "a.svm", "1 1:0.5 3:2 # note\n-1 2:1\n\n0\n"))
        assert sp.issparse(data.X)
        np.testing.assert_array_equal(data.X.toarray(), [[0.5, 0, 2], [0, 1, 0], [0, 0, 0]])
        np.testing.assert_array_equal(data.y, [1, -1, 0])

    @pytest.mark.parametrize(
        "text,line",
        [("1 1:2\n1 0:3\n", 2), ("1 2:1 2:3\n", 1), ("1 3:1 2:3\n", 1), ("1 a:1\n", 1), ("x 1:1\n", 1),
         ("1 1:q\n", 1), ("1 12\n", 1)],
    )
    def test_svmlight_errors(self, tmp_path, text, line):
        with pytest.raises(ParseError) as exc:
            ingest(write(tmp_path, "a.svm", text))
        assert exc.value.line == line

    def test_svmlight_width(self, tmp_path):
        path = write(tmp_path, "a.svm", "1 5:1\n")
        assert ingest(path, n_features=8).p == 8
        with pytest.raises(InconsistentDimension):
            ingest(path, n_features=4)

    def test_unknown_extension(self, tmp_path):
        with pytest.raises(InvalidSpec):
            infer_format("data.parquet")
        with pytest.raises(InvalidSpec):
            ingest(write(tmp_path, "a.csv", "1,2\n"), format="hdf5")

    def test_categorical_round_trip(self, tmp_path):
        data, _, _ = generate(SyntheticSpec("categorical", n=40, d=25, k=10, seed=3))
        path = str(tmp_path / "c.svm")
        write_dataset(data, path)
        back = ingest(path, n_features=data.p)
        a, b = sp.csr_matrix(data.X), back.X
        np.testing.assert_array_equal(a.indptr, b.indptr)
        np.testing.assert_array_equal(a.indices, b.indices)
        assert a.data.tobytes() == b.data.tobytes()
        assert data.y.tobytes() == back.y.tobytes()

    def test_dense_round_trip(self, tmp_path, rng):
        data = Dataset(rng.standard_normal((7, 3)), rng.standard_normal(7))
        path = str(tmp_path / "d.csv")
        write_dataset(data, path)
        back = ingest(path)
        assert back.X.tobytes() == data.X.tobytes() and back.y.tobytes() == data.y.tobytes()


class TestConfig:
    def test_round_trip(self):
        cfg = RunConfig()
        cfg.estimator.methods = ["randalo", "kfold_cv"]
        cfg.model.penalty = "group_lasso"
        cfg.model.groups = [[0, 1], [2]]
        back = loads(cfg.dumps())
        assert back == cfg
        assert loads(back.dumps()).dumps() == cfg.dumps()

    def test_partial_uses_defaults(self):
        cfg = from_dict({"estimator": {"m": 20}})
        assert cfg.estimator.m == 20 and cfg.estimator.K == RunConfig().estimator.K

    def test_unknown_key_named(self):
        with pytest.raises(InvalidSpec) as exc:
            from_dict({"estimator": {"probes": 3}})
        assert "estimator.probes" in str(exc.value)
        assert exc.value.module == "cli"

    def test_bad_values(self):
        for bad in ({"estimator": {"methods": ["gcv"]}}, {"estimator": {"m": 1}}, {"model": {"penalty": "scad"}},
                    {"output": {"format": "xml"}}, {"estimator": 3}):
            with pytest.raises(InvalidSpec):
                from_dict(bad)
        with pytest.raises(InvalidSpec):
            loads("{not json")

    def test_load_file(self, tmp_path):
        cfg = load_config(write(tmp_path, "c.json", json.dumps({"name": "x"})))
        assert cfg.name == "x"


def small_config(**est):
    cfg = RunConfig()
    cfg.data.n = 80
    cfg.data.p = 60
    for k, v in est.items():
        setattr(cfg.estimator, k, v)
    return cfg


class TestEstimate:
    def test_rows(self):
        rows = cmd_estimate(small_config(methods=["randalo", "bks_alo", "exact_alo", "kfold_cv"], m=20))
        assert [r.method for r in rows] == ["randalo", "bks_alo", "exact_alo", "kfold_cv"]
        assert all(r.conditional_risk is not None and np.isfinite(r.risk_estimate) for r in rows)
        assert rows[0].parameter == "m=20" and rows[3].parameter == "K=5"

    def test_loo_cv_equals_ridge_shortcut(self):
        cfg = small_config(methods=["loo_cv", "ridge_loo"])
        cfg.model.penalty = "ridge"
        cfg.model.lam = 3.0
        cfg.data.n = 40
        rows = cmd_estimate(cfg)
        assert abs(rows[0].risk_estimate - rows[1].risk_estimate) <= 1e-8 * rows[1].risk_estimate

    def test_ridge_loo_needs_ridge(self):
        with pytest.raises(InvalidSpec):
            cmd_estimate(small_config(methods=["ridge_loo"]))

    def test_kernel(self):
        cfg = small_config(methods=["exact_alo", "kfold_cv"])
        cfg.model.penalty = "kernel_ridge"
        cfg.model.lam = 1.0
        cfg.model.gamma = 0.05
        rows = cmd_estimate(cfg)
        assert all(np.isfinite(r.risk_estimate) for r in rows)

    def test_from_file(self, tmp_path, rng):
        X = rng.standard_normal((50, 4))
        y = X @ np.ones(4) + rng.standard_normal(50)
        path = str(tmp_path / "d.csv")
        write_dataset(Dataset(X, y), path)
        cfg = small_config(methods=["exact_alo"])
        cfg.data.path = path
        cfg.model.penalty = "ridge"
        rows = cmd_estimate(cfg)
        assert rows[0].conditional_risk is None

    def test_warnings_verbatim(self):
        cfg = small_config(methods=["randalo"], m=4)
        cfg.data.n, cfg.data.p, cfg.model.lam = 40, 80, 1.0
        row = cmd_estimate(cfg)[0]
        assert row.warnings.startswith("negative debiasing slope")
        data, _, _ = generate(SyntheticSpec("gaussian_lasso", n=40, p=80, seed=0))
        model = fit(data, "squared", lasso(1.0))
        rep = alo.randalo(data.y, model.predictions, build_oracle(model, data), m=4, seed=0)
        assert row.warnings == "; ".join(rep.warnings)


class TestOutput:
    def test_metadata_prefixed(self):
        rows = cmd_estimate(small_config(methods=["exact_alo"]))
        lines = format_rows(rows, header={"config": "x"})
        assert lines[0].startswith("# created:")
        data = data_lines("\n".join(lines))
        assert data[0].startswith("experiment,seed,method")
        assert len(data) == 2
        assert "wall_time" not in data[0]
        timed = data_lines("\n".join(format_rows(rows, timing=True)))
        assert timed[0].endswith("wall_time,relative_time")

    def test_jsonl(self):
        rows = cmd_estimate(small_config(methods=["exact_alo"]))
        recs = [json.loads(l) for l in data_lines("\n".join(format_rows(rows, fmt="jsonl")))]
        assert recs[0]["method"] == "exact_alo"
        with pytest.raises(InvalidSpec):
            format_rows(rows, fmt="xml")

    @pytest.mark.parametrize("method", ["randalo", "bks_alo", "kfold_cv"])
    def test_byte_identical_across_threads(self, method):
        texts = []
        for threads in (1, 2, 8):
            rows = cmd_estimate(small_config(methods=[method], m=24), threads)
            texts.append(data_lines("\n".join(format_rows(rows))))
        assert texts[0] == texts[1] == texts[2]


class TestMain:
    def run(self, capsys, *argv):
        code = main(list(argv))
        out = capsys.readouterr()
        return code, out.out, out.err

    def test_print_config(self, capsys):
        code, out, _ = self.run(capsys, "print-config")
        assert code == 0 and loads(out) == RunConfig()

    def test_estimate_stdout(self, capsys, tmp_path):
        cfg = small_config(methods=["randalo"], m=10)
        path = write(tmp_path, "c.json", cfg.dumps())
        code, out, _ = self.run(capsys, "estimate", "--config", path)
        assert code == 0
        assert data_lines(out)[1].startswith("estimate,0,randalo,m=10,")

    def test_estimate_to_file(self, capsys, tmp_path):
        cfg = small_config(methods=["exact_alo"])
        path = write(tmp_path, "c.json", cfg.dumps())
        out = str(tmp_path / "r.jsonl")
        assert main(["estimate", "--config", path, "--output", out, "--format", "jsonl"]) == 0
        lines = data_lines(open(out).read())
        assert json.loads(lines[0])["method"] == "exact_alo"

    def test_unknown_method_exit(self, capsys, tmp_path):
        path = write(tmp_path, "c.json", json.dumps({"estimator": {"methods": ["gcv"]}}))
        code, _, err = self.run(capsys, "estimate", "--config", path)
        assert code == 2
        assert "estimator.methods" in err and "[cli]" in err

    def test_bench_bad_scale(self, capsys):
        code, _, err = self.run(capsys, "bench", "lasso_scaling", "--scale", "0")
        assert code != 0 and "scale" in err

    def test_bench_clt_summary(self, capsys, tmp_path):
        out = str(tmp_path / "clt.csv")
        code, _, _ = self.run(capsys, "bench", "clt_validation", "--scale", "0.2", "--seeds", "1", "--output", out)
        assert code == 0
        summary = [json.loads(l) for l in open(str(tmp_path / "clt.summary.jsonl"))]
        params = {s["parameter"] for s in summary}
        assert {"z_mean", "z_var", "adjacent_correlation"} <= params

    def test_bench_threads_identical(self, capsys):
        outs = []
        for t in ("1", "2", "8"):
            code, out, _ = self.run(capsys, "--threads", t, "bench", "first_diff", "--scale", "0.1", "--seeds", "3")
            assert code == 0
            outs.append([l for l in data_lines(out) if not l.startswith("{")])
        assert outs[0] == outs[1] == outs[2]

    def test_ingest_check(self, capsys, tmp_path):
        path = write(tmp_path, "a.svm", "1 1:1 4:2\n0 2:1\n")
        code, out, _ = self.run(capsys, "ingest-check", path)
        assert code == 0 and json.loads(out) == {"n": 2, "p": 4, "storage": "sparse", "nnz": 3}

    def test_ingest_check_parse_error(self, capsys, tmp_path):
        code, _, err = self.run(capsys, "ingest-check", write(tmp_path, "a.svm", "1 0:1\n"))
        assert code == 2 and "ParseError" in err and "line 1" in err

    def test_env_threads(self, monkeypatch, capsys):
        monkeypatch.setenv("RANDALO_THREADS", "x")
        code, _, err = self.run(capsys, "print-config")
        assert code == 2 and "RANDALO_THREADS" in err
