import itertools

import numpy as np
import pytest

from bevtrack.core import BoxPose3D, Detection, ViewObservation
from bevtrack.embedding import EmbeddingNet, embed
from bevtrack.tracker import (
    AffinityMatcher,
    CentroidMatcher,
    OracleAffinityModel,
    Tracker,
    TrackerConfig,
    assignment_cost,
    centroid_baseline,
    fuse_views,
    hungarian,
    preprocess,
)


_BOX_SLOT = itertools.count()


def det(x, y, score=0.9, category="car", camera=0, box=None,
        gt=None, descriptor=None, size=(2.0, 1.6, 4.5)):
    if box is None:
        # unique non-overlapping pixel box so preprocess never merges
        u1 = 10.0 + 90.0 * (next(_BOX_SLOT) % 150)
        box = (u1, 100.0, u1 + 80.0, 180.0)
    d = np.zeros(8) if descriptor is None else descriptor
    pose = BoxPose3D(x, y, 0.8, 0.0, *size)
    return Detection(pose, score, category, [ViewObservation(camera, box, d)], gt_identity=gt)


class TestHungarian:
    def test_diagonal_assignment(self):
        cost = np.ones((3, 3)) - np.eye(3)
        a = hungarian(cost)
        assert sorted(a.pairs) == [(0, 0), (1, 1), (2, 2)]
        assert assignment_cost(cost, a) == 0.0

    def test_two_by_two_anti_diagonal(self):
        # [[1,2],[2,4]]: diagonal costs 5, anti-diagonal 4
        a = hungarian(np.array([[1.0, 2.0], [2.0, 4.0]]))
        assert sorted(a.pairs) == [(0, 1), (1, 0)]

    def test_random_square_matches_brute_force(self):
        for trial in range(1000):
            rng = np.random.default_rng(trial)
            n = int(rng.integers(1, 6))
            cost = rng.integers(0, 100, size=(n, n)).astype(float)
            a = hungarian(cost)
            best = min(
                sum(cost[i, p[i]] for i in range(n))
                for p in itertools.permutations(range(n))
            )
            assert assignment_cost(cost, a) == best

    def test_rectangular_padding(self):
        cost = np.array([[5.0, 1.0, 9.0], [9.0, 9.0, 2.0]])
        a = hungarian(cost)
        assert sorted(a.pairs) == [(0, 1), (1, 2)]
        assert a.unmatched_rows == []
        assert a.unmatched_cols == [0]

        cost_t = cost.T
        a = hungarian(cost_t)
        assert sorted(a.pairs) == [(1, 0), (2, 1)]
        assert a.unmatched_rows == [0]

    def test_rectangular_matches_brute_force(self):
        for trial in range(300):
            rng = np.random.default_rng(10_000 + trial)
            m = int(rng.integers(1, 6))
            n = int(rng.integers(1, 6))
            cost = rng.integers(0, 100, size=(m, n)).astype(float)
            a = hungarian(cost)
            k = min(m, n)
            assert len(a.pairs) == k
            if m <= n:
                best = min(
                    sum(cost[i, perm[i]] for i in range(m))
                    for perm in itertools.permutations(range(n), m)
                )
            else:
                best = min(
                    sum(cost[perm[j], j] for j in range(n))
                    for perm in itertools.permutations(range(m), n)
                )
            assert assignment_cost(cost, a) == best

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            hungarian(np.array([[np.inf]]))

    def test_empty_dimensions(self):
        a = hungarian(np.zeros((0, 3)))
        assert a.pairs == [] and a.unmatched_cols == [0, 1, 2]


class TestPreprocess:
    def test_score_threshold(self):
        cfg = TrackerConfig()
        kept = preprocess([det(0, 0, 0.9), det(5, 5, 0.7)], cfg)
        assert len(kept) == 1 and kept[0].score == 0.9

    def test_pedestrian_threshold(self):
        cfg = TrackerConfig()
        kept = preprocess([det(0, 0, 0.82, category="pedestrian"),
                           det(5, 5, 0.86, category="pedestrian")], cfg)
        assert len(kept) == 1 and kept[0].score == 0.86

    def test_cross_camera_duplicate_merges_views(self):
        cfg = TrackerConfig()
        a = det(10.0, 5.0, 0.95, camera=0, box=(100, 100, 200, 200))
        b = det(10.4, 5.2, 0.85, camera=1, box=(300, 100, 400, 200))
        kept = preprocess([a, b], cfg)
        assert len(kept) == 1
        assert kept[0].score == 0.95
        assert {v.camera_id for v in kept[0].views} == {0, 1}

    def test_same_camera_iou_duplicate(self):
        cfg = TrackerConfig()
        a = det(10.0, 5.0, 0.95, camera=0, box=(100, 100, 200, 200))
        b = det(30.0, -20.0, 0.9, camera=0, box=(105, 100, 205, 200))
        kept = preprocess([a, b], cfg)
        assert len(kept) == 1 and kept[0].score == 0.95

    def test_different_category_never_merges(self):
        cfg = TrackerConfig(category_thresholds={})
        a = det(10.0, 5.0, 0.95, camera=0)
        b = det(10.1, 5.0, 0.9, camera=1, category="pedestrian", box=(300, 1, 400, 99))
        assert len(preprocess([a, b], cfg)) == 2

    def test_empty_input(self):
        assert preprocess([], TrackerConfig()) == []

    def test_far_same_camera_detections_survive(self):
        cfg = TrackerConfig()
        a = det(10.0, 5.0, 0.95, camera=0, box=(100, 100, 200, 200))
        b = det(10.2, 5.1, 0.9, camera=0, box=(700, 100, 800, 200))
        # same camera, no overlap: IoU rule governs, so both stay
        assert len(preprocess([a, b], cfg)) == 2


class TestFuseViews:
    @pytest.fixture(scope="class")
    def net(self):
        return EmbeddingNet(8, rng=np.random.default_rng(0))

    def test_single_view_identity(self, net):
        d = det(1, 2, descriptor=np.arange(8.0))
        fused = fuse_views(net, d)
        assert np.allclose(fused, embed(net, np.arange(8.0), d.pose.size), atol=1e-12)

    def test_equal_areas_average(self, net):
        pose = BoxPose3D(0, 0, 1, 0, 2, 1.5, 4)
        v1 = ViewObservation(0, (0, 0, 10, 10), np.ones(8))
        v2 = ViewObservation(1, (0, 0, 10, 10), -np.ones(8))
        d = Detection(pose, 0.9, "car", [v1, v2])
        e1 = embed(net, np.ones(8), pose.size)
        e2 = embed(net, -np.ones(8), pose.size)
        assert np.allclose(fuse_views(net, d), (e1 + e2) / 2.0)

    def test_resolution_weighting(self, net):
        pose = BoxPose3D(0, 0, 1, 0, 2, 1.5, 4)
        v1 = ViewObservation(0, (0, 0, 10, 10), np.ones(8))  # area 100
        v2 = ViewObservation(1, (0, 0, 30, 10), -np.ones(8))  # area 300
        d = Detection(pose, 0.9, "car", [v1, v2])
        e1 = embed(net, np.ones(8), pose.size)
        e2 = embed(net, -np.ones(8), pose.size)
        assert np.allclose(fuse_views(net, d), (100 * e1 + 300 * e2) / 400.0)


class FakeModels:
    """Affinity model driven by an explicit matrix schedule."""

    use_appearance = False

    def __init__(self, matrices):
        self.matrices = matrices
        self.calls = 0

    def det_embeddings(self, detections):
        return None

    def affinity_matrix(self, tracks, detections, det_embeddings, max_history):
        y = self.matrices[self.calls]
        self.calls += 1
        return np.asarray(y, dtype=float)


class TestTrackerStep:
    def test_floor_rule_matches_spec_example(self):
        cfg = TrackerConfig()
        models = FakeModels([np.array([[0.9, 0.2], [0.3, 0.4]])])
        tracker = Tracker(AffinityMatcher(models, cfg), cfg)
        frame0 = [det(0, 0, 0.9, gt=1), det(20, 0, 0.9, gt=2)]
        tracker.step(frame0)
        assert len(tracker.tracks) == 2
        frame1 = [det(1, 0, 0.9, gt=1), det(30, 0, 0.9, gt=3)]
        out = tracker.step(frame1)
        # track 1 matched det 0; det 1 spawns id 3; track 2 aged
        ids = sorted(e.track_id for e in out.entries)
        assert ids == [1, 3]
        aged = [t for t in tracker.tracks if t.id == 2]
        assert aged[0].frames_since_seen == 1

    def test_tracking_score_is_product(self):
        cfg = TrackerConfig()
        models = FakeModels([np.array([[0.8]])])
        tracker = Tracker(AffinityMatcher(models, cfg), cfg)
        tracker.step([det(0, 0, 0.9)])
        out = tracker.step([det(0.5, 0, 0.9)])
        assert out.entries[0].score == pytest.approx(0.72)

    def test_new_track_score_is_detection_score(self):
        cfg = TrackerConfig()
        tracker = Tracker(AffinityMatcher(FakeModels([]), cfg), cfg)
        out = tracker.step([det(0, 0, 0.87)])
        assert out.entries[0].score == 0.87

    def test_lifecycle_removal_after_max_age(self):
        cfg = TrackerConfig(max_lost_age=2)
        models = FakeModels([np.zeros((1, 1))] * 10)
        tracker = Tracker(AffinityMatcher(models, cfg), cfg)
        tracker.step([det(0, 0, 0.9)])
        for k in range(3):
            tracker.step([det(50.0 + k, 50.0, 0.9)])
        # original track aged out (3 misses > 2); clutter keeps spawning
        assert all(t.frames_since_seen <= cfg.max_lost_age for t in tracker.tracks)
        assert 1 not in [t.id for t in tracker.tracks]

    def test_zero_max_age_terminates_on_first_miss(self):
        cfg = TrackerConfig(max_lost_age=0)
        tracker = Tracker(AffinityMatcher(FakeModels([]), cfg), cfg)
        tracker.step([det(0, 0, 0.9)])
        tracker.step([])
        assert tracker.tracks == []

    def test_ids_never_reused(self):
        cfg = TrackerConfig(max_lost_age=0)
        tracker = Tracker(AffinityMatcher(FakeModels([]), cfg), cfg)
        seen = set()
        for k in range(5):
            out = tracker.step([det(k * 30.0, 0, 0.9)])
            tracker.step([])
            for e in out.entries:
                assert e.track_id not in seen
                seen.add(e.track_id)
        assert len(seen) == 5

    def test_no_double_assignment(self):
        cfg = TrackerConfig()
        y = np.array([[0.9, 0.8], [0.85, 0.7]])
        models = FakeModels([y])
        tracker = Tracker(AffinityMatcher(models, cfg), cfg)
        tracker.step([det(0, 0, 0.9), det(10, 0, 0.9)])
        out = tracker.step([det(0, 0, 0.9), det(10, 0, 0.9)])
        matched = [e.track_id for e in out.entries]
        assert len(matched) == len(set(matched)) == 2

    def test_cross_category_never_matches(self):
        cfg = TrackerConfig(category_thresholds={})
        models = FakeModels([np.array([[0.99]])])
        tracker = Tracker(AffinityMatcher(models, cfg), cfg)
        tracker.step([det(0, 0, 0.9, category="car")])
        out = tracker.step([det(0.2, 0, 0.9, category="pedestrian")])
        assert len(out.entries) == 1
        assert out.entries[0].track_id == 2  # new identity, old track aged

    def test_scores_bounded_by_detection_score(self):
        cfg = TrackerConfig()
        rng = np.random.default_rng(0)
        mats = [rng.uniform(0.4, 1.0, size=(k + 1, k + 1)) for k in range(6)]
        models = FakeModels([np.ones((0, 0))] + mats)
        tracker = Tracker(AffinityMatcher(models, cfg), cfg)
        for k in range(6):
            dets = [det(6.0 * i, 0, 0.8 + 0.02 * i, gt=i) for i in range(k + 1)]
            out = tracker.step(dets)
            for e in out.entries:
                assert 0.0 <= e.score <= max(d.score for d in dets) + 1e-12


class TestOracleAffinity:
    def test_identity_links_drive_matching(self):
        cfg = TrackerConfig()
        models = OracleAffinityModel()
        tracker = Tracker(AffinityMatcher(models, cfg), cfg)
        tracker.step([det(0, 0, 0.9, gt=7), det(10, 0, 0.9, gt=8)])
        out = tracker.step([det(1, 0, 0.9, gt=8), det(9, 0, 0.9, gt=7)])
        by_gt = {}
        for e, d in zip(sorted(out.entries, key=lambda e: e.pose.x),
                        sorted([det(1, 0, 0.9, gt=8), det(9, 0, 0.9, gt=7)],
                               key=lambda d: d.pose.x)):
            by_gt[d.gt_identity] = e.track_id
        assert by_gt[7] == 2 or by_gt[7] == 1  # consistent re-use
        # run longer to confirm stability
        out2 = tracker.step([det(2, 0, 0.9, gt=8), det(8, 0, 0.9, gt=7)])
        assert {e.track_id for e in out2.entries} == {e.track_id for e in out.entries}


class TestCentroidBaseline:
    def test_static_objects_keep_ids(self):
        frames = [[det(0, 0, 0.9), det(30, 0, 0.9)] for _ in range(6)]
        results = centroid_baseline(frames, max_dist=10.0)
        first = sorted(e.track_id for e in results[0].entries)
        for frame in results[1:]:
            assert sorted(e.track_id for e in frame.entries) == first

    def test_distance_gate_spawns_new_id(self):
        frames = [[det(0, 0, 0.9)], [det(11.0, 0, 0.9)]]
        results = centroid_baseline(frames, max_dist=10.0)
        assert results[0].entries[0].track_id != results[1].entries[0].track_id

    def test_within_gate_keeps_id(self):
        frames = [[det(0, 0, 0.9)], [det(9.0, 0, 0.9)]]
        results = centroid_baseline(frames, max_dist=10.0)
        assert results[0].entries[0].track_id == results[1].entries[0].track_id

    def test_score_is_detection_score(self):
        frames = [[det(0, 0, 0.83)], [det(1.0, 0, 0.77)]]
        results = centroid_baseline(frames, max_dist=10.0, cfg=TrackerConfig(score_threshold=0.5))
        assert results[1].entries[0].score == 0.77

    def test_head_on_crossing_swaps_identities(self):
        # two objects crossing head-on: after they meet, following the
        # nearest centroid means swapping; this is the baseline's known
        # failure mode (deterministic here, noise only widens it)
        frames = []
        for t in range(8):
            x = -7.0 + 2.0 * t  # straddles the crossing: ..., -1, +1, ...
            frames.append([det(x, 0.3, 0.9, gt=1), det(-x, -0.3, 0.9, gt=2)])
        results = centroid_baseline(frames, max_dist=10.0)
        id_of = {}
        swaps = 0
        for frame, dets_t in zip(results, frames):
            for e in frame.entries:
                d = next(dt for dt in dets_t if dt.pose == e.pose)
                if d.gt_identity in id_of and id_of[d.gt_identity] != e.track_id:
                    swaps += 1
                id_of[d.gt_identity] = e.track_id
        assert swaps >= 1
