import numpy as np
import pytest

from splatslam.errors import BehindCamera, DimensionMismatch
from splatslam.evaluation import SceneSpec, generate_scene
from splatslam.frontend import (
    FrontEndGraph,
    FrontendConfig,
    GraphListener,
    MatcherProvider,
    OracleProvider,
    mean_flow,
    solve_dba,
)
from splatslam.geometry import Intrinsics, Pixel, Pose

K = Intrinsics(fx=64.0, fy=64.0, cx=64.0, cy=64.0, width=128, height=128)


def make_graph(n_patches=8, window=10):
    return FrontEndGraph(
        K, FrontendConfig(patches_per_frame=n_patches, optimization_window=window, seed=0)
    )


def blank():
    return np.zeros((128, 128, 3))


def test_add_frame_creates_patches_and_bipartite_edges():
    g = make_graph(n_patches=5)
    f0 = g.add_frame(blank(), 0.0)
    f1 = g.add_frame(blank(), 0.1)
    assert len(g.patches_of(f0)) == 5
    assert len(g.patches_of(f1)) == 5
    # every edge joins a patch to a frame that is not its source
    for (pid, tfid) in g.edges:
        assert g.patches[pid].source_frame != tfid
    # new patches connect to old frames and old patches to the new frame
    targets = {tf for (_, tf) in g.edges}
    assert targets == {f0, f1}
    assert len(g.edges) == 10


def test_add_frame_rejects_wrong_image_size():
    g = make_graph()
    with pytest.raises(DimensionMismatch):
        g.add_frame(np.zeros((64, 64, 3)), 0.0)


def test_pose_initialization_extrapolates_constant_motion():
    g = make_graph(n_patches=1)
    p0 = Pose.identity()
    step = Pose.identity().retract([0.1, 0, 0, 0, 0.05, 0])
    p1 = p0.compose(step)
    g.add_frame(blank(), 0.0, initial_pose_guess=p0)
    g.add_frame(blank(), 0.1, initial_pose_guess=p1)
    f2 = g.add_frame(blank(), 0.2)  # no guess: extrapolated
    expected = p1.compose(p0.inverse().compose(p1))
    assert g.frames[f2].pose.almost_equal(expected, tol=1e-12)


def test_reproject_identity_pose_is_fixed_point():
    g = make_graph(n_patches=1)
    f0 = g.add_frame(blank(), 0.0)
    f1 = g.add_frame(blank(), 0.1)  # same pose as f0
    (patch,) = g.patches_of(f0)
    px = g.reproject(patch, g.frames[f1])
    assert px.u == pytest.approx(patch.center.u, abs=1e-12)
    assert px.v == pytest.approx(patch.center.v, abs=1e-12)


def test_reproject_behind_camera_raises():
    g = make_graph(n_patches=1)
    f0 = g.add_frame(blank(), 0.0)
    flipped = Pose.identity().retract([0, 0, 5.0, 0, 0, 0])  # far forward
    f1 = g.add_frame(blank(), 0.1, initial_pose_guess=flipped)
    (patch,) = g.patches_of(f0)
    with pytest.raises(BehindCamera):
        g.reproject(patch, g.frames[f1])


def test_solve_dba_all_zero_weights_is_noop():
    g = make_graph(n_patches=4)
    g.add_frame(blank(), 0.0)
    g.add_frame(blank(), 0.1, initial_pose_guess=Pose.identity().retract([0.2, 0, 0, 0, 0, 0]))
    before = {f: g.frames[f].pose.copy() for f in g.frames}
    res = solve_dba(g, free_pose_ids=[1], free_patch_ids=list(g.patches))
    assert res.iterations == 0
    for f, p in before.items():
        assert g.frames[f].pose.almost_equal(p, tol=1e-15)


@pytest.fixture(scope="module")
def scene():
    return generate_scene(SceneSpec(n_frames=48), seed=0)


def build_oracle_graph(scene, n_frames=6, n_patches=48):
    g = FrontEndGraph(
        scene.intrinsics, FrontendConfig(patches_per_frame=n_patches, seed=0)
    )
    for i in range(n_frames):
        g.add_frame(scene.images[i], scene.timestamps[i], initial_pose_guess=scene.poses[i])
    for p in g.patches.values():
        p.inv_depth = 1.0 / scene.depth_at(p.source_frame, p.center.u, p.center.v)
    return g


def test_solve_dba_ground_truth_is_fixed_point(scene):
    g = build_oracle_graph(scene)
    OracleProvider(scene).populate(g)
    before = {f: g.frames[f].pose.copy() for f in g.frames}
    res = solve_dba(g, free_pose_ids=[2, 3, 4, 5], free_patch_ids=list(g.patches))
    assert res.initial_objective == pytest.approx(0.0, abs=1e-18)
    assert res.final_objective <= res.initial_objective + 1e-18
    for f, p in before.items():
        assert g.frames[f].pose.almost_equal(p, tol=1e-10)


def test_solve_dba_recovers_perturbed_poses(scene):
    rng = np.random.default_rng(0)
    g = build_oracle_graph(scene)
    free = [2, 3, 4, 5]
    for f in free:
        g.frames[f].pose = g.frames[f].pose.retract(rng.normal(0, 0.01, 6))
    for p in g.patches.values():
        p.inv_depth *= 1.0 + rng.normal(0, 0.02)
    OracleProvider(scene).populate(g)
    res = solve_dba(g, free_pose_ids=free, free_patch_ids=list(g.patches), iterations=8)
    assert res.final_objective < 1e-12 * max(res.initial_objective, 1.0)
    for f in free:
        err = np.linalg.norm(g.frames[f].pose.t - scene.poses[f].t)
        assert err < 1e-6


def test_solve_dba_gauge_anchor_untouched(scene):
    rng = np.random.default_rng(1)
    g = build_oracle_graph(scene)
    anchors = {f: g.frames[f].pose.copy() for f in (0, 1)}
    for f in (2, 3, 4, 5):
        g.frames[f].pose = g.frames[f].pose.retract(rng.normal(0, 0.01, 6))
    OracleProvider(scene).populate(g)
    solve_dba(g, free_pose_ids=[2, 3, 4, 5], free_patch_ids=list(g.patches))
    for f, p in anchors.items():
        assert np.array_equal(g.frames[f].pose.t, p.t)
        assert np.array_equal(g.frames[f].pose.q, p.q)


def test_solve_dba_decreases_objective_monotonically(scene):
    rng = np.random.default_rng(2)
    g = build_oracle_graph(scene)
    for f in (2, 3, 4, 5):
        g.frames[f].pose = g.frames[f].pose.retract(rng.normal(0, 0.02, 6))
    provider = OracleProvider(scene)
    prev = None
    for _ in range(4):
        provider.populate(g)
        res = solve_dba(g, [2, 3, 4, 5], list(g.patches), iterations=1)
        # each one-iteration solve must not increase its own objective
        assert res.final_objective <= res.initial_objective + 1e-12
        # re-populated residuals shrink as the state approaches ground truth
        if prev is not None:
            assert res.initial_objective <= prev + 1e-9
        prev = res.initial_objective


def test_oracle_drift_injection_skips_long_range_edges(scene):
    g = build_oracle_graph(scene, n_frames=6)
    provider = OracleProvider(scene, drift_px=3.0, drift_range=2)
    biased = unbiased = 0
    exact = OracleProvider(scene)
    res_exact, w_exact = exact.predict(g, list(g.edges.values()))
    res_drift, _ = provider.predict(g, list(g.edges.values()))
    for i, e in enumerate(g.edges.values()):
        src = g.patches[e.patch_id].source_frame
        if not np.any(w_exact[i] > 0):
            continue
        delta = np.linalg.norm(res_drift[i] - res_exact[i])
        if abs(e.target_frame_id - src) > 2:
            assert delta == pytest.approx(0.0, abs=1e-12)
            unbiased += 1
        else:
            assert delta == pytest.approx(3.0, abs=1e-9)
            biased += 1
    assert biased > 0 and unbiased > 0


def test_retire_frames_drops_nonkeyframes_and_freezes_old_poses():
    g = make_graph(n_patches=2, window=3)
    for i in range(6):
        g.add_frame(blank(), 0.1 * i)
    g.mark_keyframe(1, False)
    g.retire_frames()
    assert 1 not in g.frames
    # no dangling edges or patches
    for (pid, tfid) in g.edges:
        assert pid in g.patches and tfid in g.frames
    assert all(p.source_frame != 1 for p in g.patches.values())
    # frames before the 3-frame window are frozen
    assert g.frames[0].fixed and g.frames[2].fixed
    assert not g.frames[5].fixed


def test_retire_frames_ages_out_old_edges():
    g = make_graph(n_patches=1, window=2)
    g.config.removal_window = 3
    for i in range(8):
        g.add_frame(blank(), 0.1 * i)
    g.retire_frames()
    latest = max(g.frames)
    assert all(latest - e.created_at <= 3 for e in g.edges.values())


def test_listener_mirroring_callbacks():
    events = []

    class Recorder(GraphListener):
        def on_frame_added(self, graph, frame, patches, edges):
            events.append(("add", frame.id, len(patches), len(edges)))

        def on_nonkeyframe_deleted(self, graph, frame_id):
            events.append(("del", frame_id))

        def on_keyframe_flag(self, graph, frame_id, is_keyframe):
            events.append(("flag", frame_id, is_keyframe))

    g = make_graph(n_patches=2, window=3)
    g.listener = Recorder()
    for i in range(4):
        g.add_frame(blank(), 0.1 * i)
    g.mark_keyframe(0, False)
    g.retire_frames()
    kinds = [e[0] for e in events]
    assert kinds.count("add") == 4
    assert ("flag", 0, False) in events
    assert ("del", 0) in events


def test_mean_flow_inf_without_edges_and_zero_at_rest(scene):
    g = build_oracle_graph(scene, n_frames=3)
    assert mean_flow(g, 0, 0) == float("inf")
    OracleProvider(scene).populate(g)
    # consecutive frames of a slow trajectory: finite, positive flow
    flow = mean_flow(g, 0, 1)
    assert np.isfinite(flow) and flow > 0


def test_matcher_recovers_known_translation():
    rng = np.random.default_rng(3)
    from scipy.ndimage import gaussian_filter

    base = gaussian_filter(rng.uniform(size=(128, 128)), 2.0)
    base = (base - base.min()) / (base.max() - base.min())
    shift = 4
    target = np.roll(base, shift, axis=1)  # pure horizontal shift
    m = MatcherProvider()
    result = m._match(
        base.astype(np.float32),
        target.astype(np.float32),
        Pixel(60.0, 60.0),
        Pixel(60.0, 60.0),  # guess at unshifted spot; true match at u=64
    )
    assert result is not None
    matched, score = result
    assert score > 0.9
    assert matched.u == pytest.approx(60.0 + shift, abs=0.5)
    assert matched.v == pytest.approx(60.0, abs=0.5)


def test_matcher_rejects_flat_template():
    m = MatcherProvider()
    flat = np.zeros((64, 64), dtype=np.float32)
    assert m._match(flat, flat, Pixel(32, 32), Pixel(32, 32)) is None
