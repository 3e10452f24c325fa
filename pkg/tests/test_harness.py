import json
import warnings

import numpy as np
import pytest

from distloc import cli
from distloc.filtering import FilterAbort
from distloc.harness.config import ConfigError, load_config, parse_config, preset_names
from distloc.harness.io import (ERROR_HEADER, read_error_csv, summarize, write_csv, write_summary)
from distloc.harness.metrics import chain_config, rmse_series, tracking_error_vs_nodes
from distloc.harness.simulation import (RunResults, build_scenario, node_offsets, prepare_run,
                                        run_scenario, run_single)

CHAIN = {"network": {"nodes": [1, 2, 3], "edges": [[1, 2], [2, 3]],
                     "positions": {"1": [0, 0], "2": [3, 0], "3": [3, 4]}}}


def _small(name="fig2a", **over):
    return load_config(name).replace(**{"runs": 1, "steps": 30, **over})


def test_minimal_config_defaults():
    cfg = parse_config(CHAIN)
    assert cfg.K == 2 and cfg.runs == 1 and cfg.theta0 == "zero"
    assert cfg.estimator.kind == "none" and cfg.observation.kind == "linear"
    assert cfg.network.positions[3] == [3.0, 4.0]


def test_missing_edges_names_field():
    raw = {"network": {"nodes": [1, 2], "positions": {"1": [0, 0], "2": [1, 1]}}}
    with pytest.raises(ConfigError) as exc:
        parse_config(raw)
    assert exc.value.field == "network.edges"


@pytest.mark.parametrize("path,value", [("estimator.kind", "sgd"), ("runs", 0), ("prior.kappa", -1.0),
                                        ("estimator.max_step", 0.0), ("theta0", "random")])
def test_invalid_fields_rejected(path, value):
    with pytest.raises(ConfigError) as exc:
        parse_config(CHAIN).replace(**{path: value})
    assert exc.value.field.startswith(path.split(".")[0])


def test_unknown_field_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config({**CHAIN, "estimator": {"kind": "rml", "gama0": 1.0}})


def test_em_with_bearings_rejected():
    with pytest.raises(ConfigError, match="linear"):
        load_config("fig2b").replace(**{"estimator.kind": "em"})


def test_fig2a_preset_values():
    cfg = load_config("fig2a")
    assert len(cfg.network.nodes) == 11 and cfg.K == 5
    assert cfg.estimator.kind == "rml" and cfg.estimator.gamma0 == pytest.approx(4e-3)
    assert cfg.observation.sigma_y == 0.5 and cfg.motion.sigma_x == 1.0


def test_all_presets_load():
    names = preset_names()
    assert {"fig1b", "fig2a", "fig2b", "fig4"} <= set(names)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for name in names:
            build_scenario(load_config(name))


def test_missing_preset():
    with pytest.raises(FileNotFoundError):
        load_config("no-such-preset")


def test_cyclic_graph_warns_when_k_exceeds_girth():
    raw = {"network": {"nodes": [1, 2, 3], "edges": [[1, 2], [2, 3], [3, 1]],
                       "positions": {"1": [0, 0], "2": [1, 0], "3": [0, 1]}}, "K": 3}
    with pytest.warns(UserWarning, match="more than once"):
        build_scenario(parse_config(raw))


def test_run_is_deterministic(tmp_path):
    cfg = _small()
    a = write_csv(run_single(cfg, 1), tmp_path / "a.csv").read_bytes()
    b = write_csv(run_single(cfg, 1), tmp_path / "b.csv").read_bytes()
    assert a == b
    assert a != write_csv(run_single(cfg, 2), tmp_path / "c.csv").read_bytes()


def test_truth_without_estimator_keeps_zero_error():
    cfg = _small(**{"estimator.kind": "none", "theta0": "truth"})
    res = run_single(cfg)
    assert not res.theta_err.any() and not res.theta_err0.any()


def test_zero_theta_error_is_truth():
    cfg = _small(**{"estimator.kind": "none"})
    res = run_single(cfg)
    s = prepare_run(cfg)
    np.testing.assert_array_equal(res.theta_err0, s.truth[:, [0, 2]])
    np.testing.assert_array_equal(res.theta_err[-1], res.theta_err0)


def test_local_frames_consistent():
    s = prepare_run(_small())
    off = node_offsets(s.scenario)
    # every node's local position difference equals the true parameter of the edge
    for e, (i, j) in enumerate(s.scenario.topology.directed_edges):
        idx = s.scenario.topology.index
        ki, kj = idx[i], idx[j]
        local_i = s.x_global - off[ki]
        local_j = s.x_global - off[kj]
        np.testing.assert_allclose(local_j - local_i, np.broadcast_to(s.truth[e], local_i.shape),
                                   atol=1e-8)


def test_rml_run_reduces_error():
    res = run_single(_small(steps=400))
    assert np.abs(res.theta_err[-1]).max() < np.abs(res.theta_err0).max()
    # the two directions of an edge are estimated separately, so they agree only approximately
    assert 0 <= res.diagnostics["antisymmetry_residual_max"] < 1e-2


def _fake(errs, err0=None):
    errs = np.asarray(errs, dtype=float)
    return RunResults(run=0, edges=[(1, 2), (2, 1)][:errs.shape[1]], nodes=[1, 2],
                      theta_err0=np.zeros(errs.shape[1:]) if err0 is None else np.asarray(err0, float),
                      theta_err=errs, track_err=np.zeros((errs.shape[0], 2)),
                      theta_final=np.zeros((errs.shape[1], 4)), alpha={1: 1.0, 2: 1.0})


def test_rmse_examples():
    np.testing.assert_array_equal(rmse_series([_fake(np.zeros((3, 2, 2)))]), np.zeros(3))
    np.testing.assert_allclose(rmse_series([_fake([[[3.0, 4.0]]])]), [5.0])
    two = rmse_series([_fake([[[3.0, 4.0], [0.0, 0.0]]])])
    np.testing.assert_allclose(two, [np.sqrt(12.5)])
    init = rmse_series([_fake([[[0.0, 0.0]]], err0=[[6.0, 8.0]])], include_initial=True)
    np.testing.assert_allclose(init, [10.0, 0.0])
    with pytest.raises(ValueError):
        rmse_series([])


def test_write_csv_empty_and_rows(tmp_path):
    p = write_csv(None, tmp_path / "empty.csv")
    assert p.read_text().strip() == ",".join(ERROR_HEADER)
    res = _fake(np.random.default_rng(0).standard_normal((3, 2, 2)))
    rows = read_error_csv(write_csv(res, tmp_path / "e.csv"))
    assert len(rows) == 6
    assert [r[0] for r in rows] == [1, 1, 2, 2, 3, 3]
    back = np.array([[r[3], r[4]] for r in rows]).reshape(3, 2, 2)
    np.testing.assert_array_equal(back, res.theta_err)


def test_write_csv_scalar_leaves_err_y_empty(tmp_path):
    res = _fake(np.ones((2, 1, 1)))
    rows = read_error_csv(write_csv(res, tmp_path / "s.csv"))
    assert all(r[4] is None for r in rows)


def test_summary_json(tmp_path):
    cfg = _small()
    results = run_scenario(cfg)
    p = write_summary(tmp_path / "summary.json", results, cfg)
    doc = json.loads(p.read_text())
    assert doc["config"]["name"] == cfg.name
    run = doc["runs"][0]
    assert set(run["final_theta"]) == {f"{i}->{j}" for i, j in results[0].edges}
    assert run["final_max_abs_error"] == pytest.approx(np.abs(results[0].theta_err[-1]).max())
    assert "theta_history" not in summarize(results)["runs"][0]["diagnostics"]


def test_loopy_run_reports_reach():
    cfg = _small("fig2c", steps=5)
    res = run_single(cfg)
    reached = res.diagnostics["reached"]
    assert set(reached) == {str(v) for v in cfg.network.nodes}
    assert all(c == 1 for row in reached.values() for c in row.values())


def test_tracking_rows_deterministic_and_more_nodes_help():
    tmpl = load_config("fig1b").replace(runs=8, steps=200)
    a = tracking_error_vs_nodes([1, 2], tmpl)
    b = tracking_error_vs_nodes([1, 2], tmpl)
    assert a == b
    assert a[1].mean_abs_error < a[0].mean_abs_error
    assert chain_config(tmpl, 1).K == 1


def test_cli_run_writes_outputs(tmp_path, capsys):
    rc = cli.main(["run", "--config", "fig2a", "--out", str(tmp_path), "--runs", "2", "--steps", "20"])
    assert rc == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert {"errors_run0.csv", "errors_run1.csv", "tracking_run0.csv", "rmse.csv", "summary.json"} <= names
    assert len(read_error_csv(tmp_path / "errors_run0.csv")) == 20 * 20
    assert "RMSE" in capsys.readouterr().out


def test_cli_sweep(tmp_path):
    rc = cli.main(["sweep", "--config", "fig2a", "--out", str(tmp_path), "--steps", "10",
                   "--param", "K=2,3"])
    assert rc == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "K,rmse_initial,rmse_final" and len(lines) == 3
    assert (tmp_path / "K=2" / "summary.json").exists()


def test_parse_param():
    assert cli.parse_param("motion.sigma_x=0.25,0.5") == ("motion.sigma_x", [0.25, 0.5])
    assert cli.parse_param("prior.mu0=zero,truth") == ("prior.mu0", ["zero", "truth"])


def test_cli_error_codes(tmp_path, monkeypatch, capsys):
    assert cli.main(["run", "--config", "nope", "--out", str(tmp_path)]) == 2
    assert cli.main(["run", "--config", "fig2a", "--out", str(tmp_path), "--runs", "0"]) == 2

    def boom(*a, **k):
        raise FilterAbort("singular information matrix", 3)

    monkeypatch.setattr(cli, "run_scenario", boom)
    assert cli.main(["run", "--config", "fig2a", "--out", str(tmp_path)]) == 3
    assert "abort" in capsys.readouterr().err


def test_cli_verify_reports_failure(monkeypatch):
    from distloc import verify

    ok = verify.CheckResult(1, "fine", True, "ok", {})
    bad = verify.CheckResult(2, "broken", False, "no", {})
    monkeypatch.setattr(verify, "ORACLE_CHECKS", [lambda: ok])
    assert cli.main(["verify"]) == 0
    monkeypatch.setattr(verify, "ORACLE_CHECKS", [lambda: ok, lambda: bad])
    assert cli.main(["verify"]) == 1
