import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import fdeflow as ff
from fdeflow.errors import InvalidArgumentError


def test_uniform_grid_examples():
    g = ff.build_uniform_grid(1.0, 4)
    assert np.allclose(g.points, [0, 0.25, 0.5, 0.75, 1.0])
    assert ff.build_uniform_grid(1.0, 1).points.tolist() == [0.0, 1.0]
    assert ff.build_uniform_grid(0.5, 5).mesh == pytest.approx(0.1)


def test_uniform_grid_rejects_bad_inputs():
    with pytest.raises(InvalidArgumentError):
        ff.build_uniform_grid(0.0, 4)
    with pytest.raises(InvalidArgumentError):
        ff.build_uniform_grid(-1.0, 4)
    with pytest.raises(InvalidArgumentError):
        ff.build_uniform_grid(1.0, 0)


def test_contraction_budget_validation():
    with pytest.raises(InvalidArgumentError):
        ff.ContractionBudget(c1=0.0)
    with pytest.raises(InvalidArgumentError):
        ff.ContractionBudget(c1=1.0, c_grad=-0.1)


def test_contraction_partition_examples():
    g = ff.build_contraction_partition(1.0, ff.ContractionBudget(1.0, 0.0))
    assert g.num_steps == 64
    # weak coupling: the bound caps at 1, one interval suffices
    g1 = ff.build_contraction_partition(1.0, ff.ContractionBudget(1.0 / 16, 1.0))
    assert g1.num_steps == 1
    g4 = ff.build_contraction_partition(4.0, ff.ContractionBudget(1.0, 0.0))
    assert g4.num_steps == 256


@given(st.floats(0.05, 10.0), st.floats(0.0, 5.0), st.floats(0.1, 8.0))
@settings(max_examples=50, deadline=None)
def test_partition_mesh_rule_holds(c1, c_grad, T):
    budget = ff.ContractionBudget(c1, c_grad)
    g = ff.build_contraction_partition(T, budget)
    assert np.sqrt(g.mesh) <= min(1.0 / (8 * c1 * (1 + c_grad)), 1.0) + 1e-12
    assert g.points[0] == 0.0 and g.points[-1] == pytest.approx(T)


@given(st.floats(0.1, 5.0), st.integers(1, 64))
@settings(max_examples=50, deadline=None)
def test_refining_never_increases_mesh(T, K):
    coarse = ff.build_uniform_grid(T, K)
    fine = ff.build_uniform_grid(T, 2 * K)
    assert fine.mesh <= coarse.mesh + 1e-15
    assert np.all(np.diff(coarse.points) > 0)
    assert coarse.mesh == pytest.approx(np.diff(coarse.points).max())


def test_segment_windows_cover_and_respect_cap():
    g = ff.build_uniform_grid(1.0, 64)
    windows = ff.segment_windows(g, 0.13)
    assert windows[0][0] == 0 and windows[-1][1] == 64
    for (a, b), (a2, _) in zip(windows, windows[1:]):
        assert b == a2
    for a, b in windows:
        assert b > a
        assert g.points[b] - g.points[a] <= 0.13 * (1 + 1e-9)
    # cap below the grid step still yields one-step windows
    assert all(b - a == 1 for a, b in ff.segment_windows(g, 1e-4))


def test_ensemble_seed_determinism():
    g = ff.build_uniform_grid(1.0, 8)
    e1 = ff.sample_ensemble(g, 500, 2, 77)
    e2 = ff.sample_ensemble(g, 500, 2, 77)
    assert np.array_equal(e1.increments, e2.increments)
    e3 = ff.sample_ensemble(g, 500, 2, 78)
    assert not np.array_equal(e1.increments, e3.increments)


def test_ensemble_path_blocks_independent_of_path_count():
    # counter-based draws: path i never depends on how many paths are drawn
    g = ff.build_uniform_grid(1.0, 8)
    small = ff.sample_ensemble(g, 10, 2, 5)
    big = ff.sample_ensemble(g, 200, 2, 5)
    assert np.array_equal(small.increments, big.increments[:10])


def test_ensemble_increment_statistics():
    g = ff.build_uniform_grid(1.0, 1)
    ens = ff.sample_ensemble(g, 100_000, 1, 99)
    var = ens.increments.var()
    assert 0.98 <= var <= 1.02
    # terminal value is a zero-mean martingale: 5 sigma band
    term = ens.brownian_paths()[:, -1, 0]
    assert abs(term.mean()) <= 5.0 / np.sqrt(term.size)


def test_ensemble_multistep_statistics():
    g = ff.build_uniform_grid(2.0, 16)
    ens = ff.sample_ensemble(g, 20_000, 1, 3)
    dt = g.dt[0]
    var = ens.increments.var(axis=(0, 2))
    se = dt * np.sqrt(2.0 / ens.num_paths)
    assert np.all(np.abs(var - dt) <= 5 * se)


def test_ensemble_serialization_roundtrip(tmp_path):
    g = ff.build_uniform_grid(0.7, 6)
    ens = ff.sample_ensemble(g, 37, 3, 2024)
    path = tmp_path / "ens.fdeb"
    ff.save_ensemble(ens, path)
    back = ff.load_ensemble(path)
    assert back.seed == ens.seed
    assert back.num_paths == ens.num_paths and back.dim == ens.dim
    assert np.array_equal(back.grid.points, g.points)
    assert np.array_equal(back.increments, ens.increments)
    with open(path, "rb") as fh:
        assert fh.readline().startswith(b"FDEB1 ")


def test_load_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.fdeb"
    path.write_bytes(b"NOPE0 1 1 1 1\n" + b"\x00" * 32)
    with pytest.raises(InvalidArgumentError):
        ff.load_ensemble(path)


def test_ensemble_sampler_validation():
    g = ff.build_uniform_grid(1.0, 2)
    with pytest.raises(InvalidArgumentError):
        ff.sample_ensemble(g, 0, 1, 1)
    with pytest.raises(InvalidArgumentError):
        ff.sample_ensemble(g, 5, 0, 1)
