import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import normal_equations
from voxfuse.depth_prior import (
    DepthMap,
    FitConfig,
    RelativeDepthMap,
    ScaleFit,
    apply_scale,
    fit_scale,
    render_sparse_depth,
)
from voxfuse.errors import DegenerateFit, DimensionMismatch, InsufficientSamples
from voxfuse.geometry import CameraIntrinsics, RigidPose, project_camera

K = CameraIntrinsics(50.0, 50.0, 20.0, 15.0, 41, 31)


def _sparse(values):
    v = np.asarray(values, float)
    return DepthMap(v, v > 0)


def test_render_single_point_on_axis():
    d = render_sparse_depth(np.array([[0, 0, 5.0]]), RigidPose.identity(), K)
    assert d.valid.sum() == 1 and d.values[15, 20] == 5.0


def test_render_keeps_nearest():
    pts = np.array([[0, 0, 9.0, 0.1], [0, 0, 4.0, 0.3]])
    d = render_sparse_depth(pts, RigidPose.identity(), K)
    assert d.values[15, 20] == 4.0


def test_render_matches_brute_force():
    rng = np.random.default_rng(0)
    pts = rng.uniform([-6, -4, -1], [6, 4, 12], size=(3000, 3))
    pose = RigidPose.from_translation([0.1, -0.2, 0.3])
    d = render_sparse_depth(pts, pose, K)
    ref = np.full((K.height, K.width), np.inf)
    for p in pts:
        q = pose.apply(p)
        if q[2] <= 0:
            continue
        (x, y), z = project_camera(q, K)
        c, r = int(np.floor(x + 0.5)), int(np.floor(y + 0.5))
        if -0.5 <= x < K.width - 0.5 and -0.5 <= y < K.height - 0.5:
            ref[r, c] = min(ref[r, c], z)
    assert np.array_equal(d.valid, np.isfinite(ref))
    assert np.array_equal(d.values[d.valid], ref[d.valid])


def test_render_monotone_when_adding_points():
    rng = np.random.default_rng(1)
    pts = rng.uniform([-6, -4, 1], [6, 4, 12], size=(800, 3))
    a = render_sparse_depth(pts[:400], RigidPose.identity(), K)
    b = render_sparse_depth(pts, RigidPose.identity(), K)
    assert np.all(b.valid[a.valid]) and np.all(b.values[a.valid] <= a.values[a.valid])


def test_two_point_and_identity_fits():
    rel = RelativeDepthMap(np.array([[1.0, 2.0]]))
    f = fit_scale(rel, _sparse([[2.0, 4.0]]))
    assert abs(f.a - 2) < 1e-12 and abs(f.b) < 1e-12
    r = np.linspace(1, 30, 100).reshape(10, 10)
    f = fit_scale(RelativeDepthMap(r), _sparse(r))
    assert abs(f.a - 1) < 1e-12 and abs(f.b) < 1e-9 and f.rms_residual < 1e-12 and f.inlier_count == 100


def test_fit_errors():
    with pytest.raises(InsufficientSamples):
        fit_scale(RelativeDepthMap(np.ones((2, 2))), _sparse([[1, 0], [0, 0]]))
    with pytest.raises(DegenerateFit):
        fit_scale(RelativeDepthMap(np.ones((2, 2))), _sparse([[1, 2], [3, 0]]))
    with pytest.raises(DimensionMismatch):
        fit_scale(RelativeDepthMap(np.ones((2, 3))), _sparse([[1, 2], [3, 0]]))


def planted(seed, n=400, outlier_frac=0.1):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.5, 5), rng.uniform(1, 10)
    r = rng.uniform(0.5, 10, size=n)
    d = a * r + b + rng.normal(0, 0.02, size=n)
    bad = rng.choice(n, int(outlier_frac * n), replace=False)
    d[bad] += rng.choice([-1, 1], bad.size) * rng.uniform(5, 30, bad.size)
    d = np.abs(d) + 0.01
    return a, b, r.reshape(20, -1), d.reshape(20, -1), bad


def test_trimmed_fit_matches_normal_equations_on_inliers():
    a, b, r, d, bad = planted(3)
    f = fit_scale(RelativeDepthMap(r), _sparse(d))
    inl = np.ones(r.size, bool)
    inl[bad] = False
    a_ref, b_ref = normal_equations(r.reshape(-1)[inl], d.reshape(-1)[inl])
    assert abs(f.a - a_ref) < 0.01 * abs(a_ref) and abs(f.b - b_ref) < 0.02 * abs(b_ref)
    assert abs(f.a - a) / a < 0.02 and abs(f.b - b) / b < 0.02


def test_untrimmed_fit_equals_normal_equations():
    a, b, r, d, _ = planted(4)
    f = fit_scale(RelativeDepthMap(r), _sparse(d), FitConfig(trim=False))
    a_ref, b_ref = normal_equations(r.reshape(-1), d.reshape(-1))
    assert abs(f.a - a_ref) < 1e-9 * abs(a_ref) and abs(f.b - b_ref) < 1e-9 * max(1, abs(b_ref))


def test_inverse_space_fit():
    r = np.linspace(1, 5, 50).reshape(5, 10)
    d = 1.0 / (0.3 * r + 0.1)
    f = fit_scale(RelativeDepthMap(r), _sparse(d), FitConfig(space="inverse"))
    assert abs(f.a - 0.3) < 1e-9 and abs(f.b - 0.1) < 1e-9
    assert np.allclose(apply_scale(RelativeDepthMap(r), f).values, d)


def test_apply_scale_examples():
    assert apply_scale(RelativeDepthMap([[3.0]]), ScaleFit(1, 0, 2, 0)).values[0, 0] == 3.0
    assert apply_scale(RelativeDepthMap([[0.0]]), ScaleFit(2, 1, 2, 0)).values[0, 0] == 1.0
    rng = np.random.default_rng(2)
    r = rng.uniform(-10, 60, size=(30, 40))
    out = apply_scale(RelativeDepthMap(r), ScaleFit(1.5, 2.0, 2, 0))
    assert np.array_equal(out.values, np.clip(1.5 * r + 2.0, 0.1, 80.0)) and out.valid.all()


@given(st.floats(0.1, 10), st.floats(-5, 5), st.integers(0, 2**31))
def test_refit_after_apply_is_identity(a, b, seed):
    rng = np.random.default_rng(seed)
    r = rng.uniform(1, 8, size=(6, 6))
    sparse = _sparse(np.where(rng.random((6, 6)) < 0.5, a * r + b, 0.0))
    if sparse.valid.sum() < 2 or np.ptp(r[sparse.valid]) == 0 or np.any(sparse.values[sparse.valid] <= 0.1):
        return
    f = fit_scale(RelativeDepthMap(r), sparse, FitConfig(trim=False))
    dense = apply_scale(RelativeDepthMap(r), f, clamp=(1e-6, 1e6))
    g = fit_scale(RelativeDepthMap(dense.values), DepthMap(dense.values, sparse.valid), FitConfig(trim=False))
    assert abs(g.a - 1) < 1e-9 and abs(g.b) < 1e-9 * max(1, np.abs(dense.values).max())
