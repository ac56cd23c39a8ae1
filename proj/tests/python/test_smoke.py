import json
import math

import numpy as np
import pytest

import dualfilter as df


def test_two_cycle_structure():
    h = df.two_cycle(4, 1)
    assert (h.d, h.m) == (4, 1)
    np.testing.assert_allclose(h.A.sum(axis=1), 1.0)
    np.testing.assert_allclose(h.C.sum(axis=1), 1.0)
    assert h.A[3, 0] == 0.5 and h.A[3, 2] == 0.5


def test_json_round_trip():
    h = df.perturb(df.two_cycle(6, 2), 0.1, "emission")
    g = df.Hmm.from_json(h.to_json())
    np.testing.assert_array_equal(g.C, h.C)
    assert json.loads(h.to_json())["d"] == 6


def test_dual_filter_matches_forward_filter():
    h = df.two_cycle(16, 4)
    z = df.sample_paths(h, 64, 1, 0)[0]
    rho, report = df.dual_filter(h, z)
    pi, _ = df.forward_filter(h, z)
    assert report["converged"]
    assert rho.shape == (16, 64)
    assert np.abs(rho - pi).max() <= 1e-3


def test_heatmap_is_causal_and_masked():
    h = df.two_cycle(16, 4)
    z = df.sample_paths(h, 64, 1, 3)[0]
    rho, _ = df.dual_filter(h, z)
    w = df.path_weights(h, rho, z)
    assert np.all(np.triu(w, 1) == 0.0)
    events = np.array(df.event_columns(z))
    assert w[:, ~events].sum() == 0.0
    assert w[:, events].sum() > 0.0


def test_exact_benchmark_small():
    h = df.two_cycle(4, 1)
    v = df.entropy_benchmark_exact(h, 8)
    assert 0.0 < v < math.log(2.0)


def test_errors_map_to_python_exceptions():
    with pytest.raises(df.ArgumentError):
        df.two_cycle(3, 1)
    with pytest.raises(df.ModelError):
        df.Hmm(np.array([[0.5, 0.6], [1.0, 0.0]]), np.eye(2), np.array([1.0, 0.0]))
    assert issubclass(df.ConvergenceError, df.Error)


def test_non_convergence(tmp_path):
    h = df.two_cycle(16, 4)
    _, report = df.dual_filter(h, df.sample_paths(h, 64, 1, 0)[0], max_layers=1)
    assert not report["converged"]
    with pytest.raises(df.ConvergenceError):
        df.run_experiment("two-cycle", {"max_layers": 1, "eval_paths": 2}, tmp_path)


def test_run_experiment(tmp_path):
    cfg = {"d": 6, "q": 2, "T": 24, "slice": 20, "eval_paths": 10}
    manifest = df.run_experiment("two-cycle", cfg, tmp_path)
    assert manifest["config"]["d"] == 6
    assert (tmp_path / "heatmap.csv").exists()
    assert manifest["summary"]["heatmap_off_event_mass"] == 0.0
    assert set(df.default_config("two-cycle")) == set(manifest["config"])
    with pytest.raises(df.ArgumentError):
        df.run_experiment("two-cycle", {"bogus": 1}, tmp_path)
