import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocschur import cli
from ocschur.errors import ContractError, OcschurError
from ocschur.expcli import experiments, io
from ocschur.expcli.io import ExperimentConfig, emit, parse, strip_timing


@pytest.fixture
def sweep_config():
    return ExperimentConfig(kind="phi_sweep", n=16, phis=(2e-2, 2e-5, 2e-8), deterministic=True)


@pytest.fixture
def sample_rows():
    return [{"key": 0.5, "iters": 3, "ok": True, "name": "a", "err": ""},
            {"key": 0.25, "iters": 4, "ok": False, "name": "b", "err": "x"},
            {"key": 1e-300, "iters": 5, "ok": True, "name": "c", "err": ""}]


class TestConfig:
    def test_defaults_per_kind(self):
        c = ExperimentConfig(kind="accuracy_cliff")
        assert (c.physics, c.units, c.n, c.inner_solver) == ("elasticity", "MPa", 24, "direct")
        assert c.phis == (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
        assert len(ExperimentConfig(kind="phi_sweep").phis) == 11

    @pytest.mark.parametrize("phis", [(1e-8, 1e-2), (1e-2, 1e-2), (1e-2, 0.0), (-1e-3,)])
    def test_phi_list_rejected(self, phis):
        with pytest.raises(ContractError):
            ExperimentConfig(kind="phi_sweep", phis=phis)

    def test_empty_phi_list_allowed(self):
        assert ExperimentConfig(kind="precond_compare", phis=()).phis == ()

    @pytest.mark.parametrize("kw", [dict(kind="nope"), dict(kind="phi_sweep", physics="fluid"),
                                    dict(kind="accuracy_cliff", physics="heat"),
                                    dict(kind="phi_sweep", n=12),
                                    dict(kind="phi_sweep", tol=2.0),
                                    dict(kind="phi_sweep", threads=0)])
    def test_invalid(self, kw):
        with pytest.raises(ContractError):
            ExperimentConfig(**kw)

    def test_partition_from_h_ratio(self):
        c = ExperimentConfig(kind="precond_compare", n=8)
        assert (c.s_x, c.s_y) == (3, 1)

    def test_unknown_key(self):
        with pytest.raises(ContractError, match="bogus"):
            ExperimentConfig.from_dict({"kind": "phi_sweep", "bogus": 1})

    def test_hash_ignores_output_and_threads(self, sweep_config):
        h = sweep_config.config_hash()
        assert sweep_config.replace(output="x.csv", threads=4, format="json").config_hash() == h
        assert sweep_config.replace(n=8).config_hash() != h

    def test_load_round_trip(self, tmp_path, sweep_config):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(sweep_config.to_dict()))
        assert ExperimentConfig.load(p) == sweep_config

    def test_load_errors_name_path(self, tmp_path):
        with pytest.raises(OSError, match="missing.json"):
            ExperimentConfig.load(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        with pytest.raises(ContractError, match="bad.json"):
            ExperimentConfig.load(bad)


class TestEmit:
    def test_csv_line_count(self, sample_rows):
        text = emit(sample_rows, "csv")
        lines = text.splitlines()
        assert lines[0].startswith("# config_hash=")
        assert len(lines) == 1 + 1 + 3

    @pytest.mark.parametrize("fmt", ["csv", "json"])
    def test_round_trip(self, sample_rows, fmt, sweep_config):
        rows, chash = parse(emit(sample_rows, fmt, config=sweep_config))
        assert rows == sample_rows
        assert chash == sweep_config.config_hash()

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(allow_nan=False), min_size=1, max_size=5))
    def test_float_round_trip_exact(self, xs):
        rows = [{"v": float(x)} for x in xs]
        back, _ = parse(emit(rows, "csv"))
        assert [r["v"] for r in back] == xs
        assert all(isinstance(r["v"], float) for r in back)

    def test_seventeen_digits(self):
        assert io.format_value(0.1) == "0.10000000000000001"
        assert io.format_value(2.0) == "2.0"

    def test_stable_columns(self, sample_rows):
        header = emit(sample_rows, "csv", columns=("name", "key")).splitlines()[1]
        assert header.split(",")[:2] == ["name", "key"]
        assert header == emit(list(reversed(sample_rows)), "csv",
                              columns=("name", "key")).splitlines()[1]

    def test_empty_refused(self):
        with pytest.raises(ContractError, match="empty"):
            emit([], "csv")
        assert parse(emit([], "csv", allow_empty=True))[0] == []

    def test_io_error_has_path(self, tmp_path, sample_rows):
        target = tmp_path / "no_such_dir" / "out.csv"
        with pytest.raises(OSError, match="no_such_dir"):
            emit(sample_rows, "csv", path=target)

    def test_strip_timing(self):
        rows = [{"a": 1, "solve_time": 2.0, "wall_time": 1.0, "time": 3.0}]
        assert strip_timing(rows) == [{"a": 1}]


class TestPhiSweep:
    def test_rows_and_augmentation(self, sweep_config):
        rows = experiments.run_phi_sweep(sweep_config)
        assert [r["phi"] for r in rows] == list(sweep_config.phis)
        for r in rows:
            assert r["error"] == "" and r["converged"]
            assert r["aug_iters_minus"] <= r["iters_minus"]
            assert r["config_hash"] == sweep_config.config_hash()
            assert r["constraint_violation"] < 1e-8

    def test_single_phi_matches_multi(self, sweep_config):
        multi = strip_timing(experiments.run(sweep_config))
        single = strip_timing(experiments.run(sweep_config.replace(phis=(2e-5,))))
        drop = lambda r: {k: v for k, v in r.items() if k != "config_hash"}  # noqa: E731
        assert drop(single[0]) == drop(multi[1])

    def test_deterministic(self, sweep_config):
        a = strip_timing(experiments.run(sweep_config))
        b = strip_timing(experiments.run(sweep_config))
        assert a == b

    def test_threads_do_not_change_rows(self, sweep_config):
        a = strip_timing(experiments.run(sweep_config))
        b = strip_timing(experiments.run(sweep_config.replace(threads=3)))
        assert a == b

    def test_row_failure_recorded(self, sweep_config, monkeypatch):
        real = experiments.ROW_FUNCS["phi_sweep"]

        def flaky(config, phi):
            if phi == 2e-5:
                raise OcschurError("boom")
            return real(config, phi)

        monkeypatch.setitem(experiments.ROW_FUNCS, "phi_sweep", flaky)
        rows = experiments.run(sweep_config)
        assert len(rows) == 3
        assert "boom" in rows[1]["error"]
        assert rows[0]["error"] == rows[2]["error"] == ""

    def test_without_augmentation(self, sweep_config):
        rows = experiments.run(sweep_config.replace(augment=False, phis=(2e-8,)))
        assert "aug_iters_minus" not in rows[0]


class TestResume:
    def test_existing_rows_skipped(self, tmp_path, sweep_config, monkeypatch):
        out = tmp_path / "r.csv"
        first, _ = experiments.run_and_emit(sweep_config, out=out)
        calls = []
        real = experiments.ROW_FUNCS["phi_sweep"]
        monkeypatch.setitem(experiments.ROW_FUNCS, "phi_sweep",
                            lambda c, k: calls.append(k) or real(c, k))
        second, _ = experiments.run_and_emit(sweep_config, out=out)
        assert calls == []
        assert second == parse(out.read_text())[0]
        assert strip_timing(second) == strip_timing(parse(emit(first, "csv"))[0])

    def test_partial_file_completed(self, tmp_path, sweep_config, monkeypatch):
        out = tmp_path / "r.csv"
        experiments.run_and_emit(sweep_config.replace(phis=(2e-2,)), out=out)
        # different hash: nothing reused
        calls = []
        real = experiments.ROW_FUNCS["phi_sweep"]
        monkeypatch.setitem(experiments.ROW_FUNCS, "phi_sweep",
                            lambda c, k: calls.append(k) or real(c, k))
        experiments.run_and_emit(sweep_config, out=out)
        assert calls == list(sweep_config.phis)
        rows, _ = parse(out.read_text())
        keep = rows[:1] + rows[2:]
        emit(keep, "csv", out, sweep_config, experiments.columns_for("phi_sweep"))
        calls.clear()
        rows, _ = experiments.run_and_emit(sweep_config, out=out)
        assert calls == [2e-5]
        assert [r["key"] for r in rows] == list(sweep_config.phis)

    def test_failed_rows_are_retried(self, tmp_path, sweep_config):
        out = tmp_path / "r.csv"
        rows = experiments.run(sweep_config)
        rows[0] = {**rows[0], "error": "OcschurError: boom"}
        emit(rows, "csv", out, sweep_config)
        again, _ = experiments.run_and_emit(sweep_config, out=out)
        assert again[0]["error"] == ""


class TestOtherExperiments:
    def test_scalability(self):
        c = ExperimentConfig(kind="scalability", sizes=(16, 32), deterministic=True)
        rows = experiments.run_scalability(c)
        assert [r["nsub"] for r in rows] == [4, 16]
        assert all(r["converged"] for r in rows)
        assert rows[1]["iters_minus"] <= rows[0]["iters_minus"] + 2

    @pytest.mark.parametrize("inner", ["direct", "feti"])
    def test_precond_compare_agreement(self, inner):
        c = ExperimentConfig(kind="precond_compare", n=4, s_x=3, s_y=1,
                             phis=(1e-7, 1e-12), inner_solver=inner)
        rows = experiments.run_precond_compare(c)
        for r in rows:
            assert r["error"] == "" and r["sp_converged"] and r["sc_converged"]
            assert r["agreement"] <= 1e-6
            assert r["sc_ni"] <= 3
        assert rows[1]["sp_ni"] > rows[0]["sp_ni"]

    def test_precond_compare_empty(self):
        c = ExperimentConfig(kind="precond_compare", phis=())
        assert experiments.run_precond_compare(c) == []
        rows, text = experiments.run_and_emit(c)
        assert rows == [] and text.startswith("# config_hash=")

    def test_accuracy_cliff_small(self):
        c = ExperimentConfig(kind="accuracy_cliff", n=8, phis=(1e-1, 1e-6))
        rows = experiments.run_accuracy_cliff(c)
        assert rows[0]["rs_constraint_violation"] >= rows[1]["rs_constraint_violation"]
        assert all(r["fs_converged"] and r["fs_constraint_violation"] <= 1e-8 for r in rows)
        assert rows[1]["agreement"] <= 1e-6


class TestCli:
    def _config(self, tmp_path, **kw):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"n": 16, "phis": [2e-2, 2e-8], **kw}))
        return p

    def test_verify(self, capsys):
        assert cli.main(["verify"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert len(out) == 6 and all(line.startswith("PASS") for line in out)

    def test_deterministic_runs_identical(self, tmp_path):
        cfg = self._config(tmp_path)
        for name in ("a.csv", "b.csv"):
            args = ["phi-sweep", "--config", str(cfg), "--deterministic",
                    "--out", str(tmp_path / name)]
            assert cli.main(args) == 0
        a, ha = parse((tmp_path / "a.csv").read_text())
        b, hb = parse((tmp_path / "b.csv").read_text())
        assert ha == hb and strip_timing(a) == strip_timing(b)

    def test_stdout_json(self, tmp_path, capsys):
        assert cli.main(["phi-sweep", "--config", str(self._config(tmp_path)),
                         "--format", "json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert len(doc["rows"]) == 2 and doc["config"]["kind"] == "phi_sweep"

    def test_bad_config_exit_code(self, tmp_path, capsys):
        cfg = self._config(tmp_path, phis=[1e-8, 1e-2])
        assert cli.main(["phi-sweep", "--config", str(cfg)]) == 2
        assert "descending" in capsys.readouterr().err

    def test_kind_mismatch(self, tmp_path, capsys):
        cfg = self._config(tmp_path, kind="scalability")
        assert cli.main(["phi-sweep", "--config", str(cfg)]) == 2
        assert "does not match" in capsys.readouterr().err

    def test_missing_config(self, tmp_path, capsys):
        assert cli.main(["phi-sweep", "--config", str(tmp_path / "nope.json")]) == 2
        assert "nope.json" in capsys.readouterr().err

    def test_threads_env(self, monkeypatch):
        assert cli.resolve_threads(None, {"OCSCHUR_THREADS": "3"}) == 3
        assert cli.resolve_threads(2, {"OCSCHUR_THREADS": "3"}) == 2
        assert cli.resolve_threads(None, {}) is None
        with pytest.raises(ContractError):
            cli.resolve_threads(None, {"OCSCHUR_THREADS": "many"})

    def test_threads_env_reaches_config(self, tmp_path, monkeypatch):
        monkeypatch.setenv("OCSCHUR_THREADS", "2")
        args = cli.build_parser().parse_args(["phi-sweep", "--config",
                                              str(self._config(tmp_path))])
        assert cli.load_config(args, "phi_sweep").threads == 2

    def test_empty_sweep_succeeds(self, tmp_path):
        cfg = tmp_path / "e.json"
        cfg.write_text('{"phis": []}')
        out = tmp_path / "e.csv"
        assert cli.main(["precond-compare", "--config", str(cfg), "--out", str(out)]) == 0
        assert parse(out.read_text())[0] == []


def test_float_cells_parse_as_float():
    assert isinstance(io.parse_value("1.0"), float)
    assert io.parse_value("3") == 3 and io.parse_value("true") is True
    assert np.isinf(io.parse_value("inf"))
