import numpy as np
import pytest

from bevtrack import autodiff as ad
from bevtrack import embedding as emb
from bevtrack.errors import CollapseError
from bevtrack.simulator import WorldConfig, generate_scene


def brute_force_batch_hard(embeddings, labels, margin=1.0):
    """Exhaustive per-anchor hardest triplet, direct distance computation."""
    n = len(labels)
    total = 0.0
    for a in range(n):
        d_hp = max(
            np.linalg.norm(embeddings[a] - embeddings[p])
            for p in range(n)
            if p != a and labels[p] == labels[a]
        )
        d_hn = min(
            np.linalg.norm(embeddings[a] - embeddings[q])
            for q in range(n)
            if labels[q] != labels[a]
        )
        total += max(0.0, margin + d_hp - d_hn)
    return total / n


def brute_force_batch_all(embeddings, labels, margin=1.0):
    """Mean over all active (anchor, positive, negative) triplets."""
    n = len(labels)
    terms = []
    for a in range(n):
        for p in range(n):
            if p == a or labels[p] != labels[a]:
                continue
            for q in range(n):
                if labels[q] == labels[a]:
                    continue
                term = margin + np.linalg.norm(embeddings[a] - embeddings[p]) - np.linalg.norm(
                    embeddings[a] - embeddings[q]
                )
                if term > 0:
                    terms.append(term)
    return float(np.mean(terms)) if terms else 0.0


class TestTripletLosses:
    def test_all_identical_embeddings_give_margin(self):
        e = np.ones((6, 4))
        labels = np.array([0, 0, 1, 1, 2, 2])
        assert emb.triplet_loss_batch_hard(e, labels).data == pytest.approx(1.0, abs=1e-6)
        assert emb.triplet_loss_batch_all(e, labels).data == pytest.approx(1.0, abs=1e-6)

    def test_satisfied_margin_term_is_zero(self):
        # anchor/positive distance 0.2, negative 1.5 -> hinge max(0, 1+0.2-1.5)=0
        e = np.array([[0.0, 0.0], [0.2, 0.0], [1.5, 0.0], [1.7, 0.0]])
        labels = np.array([0, 0, 1, 1])
        assert emb.triplet_loss_batch_hard(e, labels).data == pytest.approx(0.0)

    def test_separated_clusters_zero_batch_all(self):
        e = np.concatenate([np.zeros((3, 2)), np.full((3, 2), 10.0)])
        labels = np.array([0, 0, 0, 1, 1, 1])
        assert emb.triplet_loss_batch_all(e, labels).data == 0.0

    @pytest.mark.parametrize("trial", range(40))
    def test_matches_exhaustive_oracles(self, trial):
        rng = np.random.default_rng(trial)
        p = int(rng.integers(2, 5))
        k = int(rng.integers(2, 4))
        labels = np.repeat(np.arange(p), k)
        e = rng.normal(size=(p * k, 5)) * rng.uniform(0.2, 3.0)
        hard = emb.triplet_loss_batch_hard(e, labels).data
        assert hard == pytest.approx(brute_force_batch_hard(e, labels), abs=1e-9)
        ball = emb.triplet_loss_batch_all(e, labels).data
        assert ball == pytest.approx(brute_force_batch_all(e, labels), abs=1e-9)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(99)
        e = rng.normal(size=(12, 8))
        labels = np.repeat(np.arange(4), 3)
        q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
        base_h = emb.triplet_loss_batch_hard(e, labels).data
        rot_h = emb.triplet_loss_batch_hard(e @ q, labels).data
        assert rot_h == pytest.approx(base_h, abs=1e-9)
        base_a = emb.triplet_loss_batch_all(e, labels).data
        rot_a = emb.triplet_loss_batch_all(e @ q, labels).data
        assert rot_a == pytest.approx(base_a, abs=1e-9)

    def test_zero_iff_margin_satisfied_on_clusters(self):
        centers = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
        tight = np.concatenate([c + 0.01 * np.eye(2)[:2] for c in centers])
        labels = np.repeat(np.arange(3), 2)
        assert emb.triplet_loss_batch_hard(tight, labels).data == 0.0
        # shrink separation below margin: loss must become positive
        squeezed = tight * 0.15
        assert emb.triplet_loss_batch_hard(squeezed, labels).data > 0.0

    def test_identity_with_single_sample_rejected(self):
        e = np.zeros((3, 2))
        with pytest.raises(ValueError):
            emb.triplet_loss_batch_hard(e, np.array([0, 0, 1]))

    def test_single_identity_batch_rejected(self):
        e = np.zeros((4, 2))
        with pytest.raises(ValueError):
            emb.triplet_loss_batch_all(e, np.array([3, 3, 3, 3]))

    def test_gradients_flow(self):
        rng = np.random.default_rng(5)
        start = rng.normal(size=(6, 4))
        w = ad.parameter(np.eye(4))
        labels = np.array([0, 0, 0, 1, 1, 1])

        def loss():
            return emb.triplet_loss_batch_hard(ad.matmul(ad.constant(start), w), labels)

        assert ad.grad_check(loss, [w]) < 1e-4


class TestEmbeddingNet:
    def test_deterministic_forward(self):
        net = emb.EmbeddingNet(8, rng=np.random.default_rng(0))
        d = np.random.default_rng(1).normal(size=8)
        out1 = emb.embed(net, d, (1.5, 1.5, 4.0))
        out2 = emb.embed(net, d, (1.5, 1.5, 4.0))
        assert np.array_equal(out1, out2)
        assert out1.shape == (128,)

    def test_box_size_sensitivity(self):
        net = emb.EmbeddingNet(8, rng=np.random.default_rng(2))
        d = np.random.default_rng(3).normal(size=8)
        a = emb.embed(net, d, (1.5, 1.5, 4.0))
        b = emb.embed(net, d, (2.5, 1.5, 4.0))
        assert not np.allclose(a, b)

    def test_box_size_ignored_when_disabled(self):
        net = emb.EmbeddingNet(8, use_box_size=False, rng=np.random.default_rng(2))
        d = np.random.default_rng(3).normal(size=8)
        assert np.array_equal(emb.embed(net, d, (1.0, 1.0, 1.0)), emb.embed(net, d, (9, 9, 9)))

    def test_graph_and_numpy_paths_agree(self):
        net = emb.EmbeddingNet(8, rng=np.random.default_rng(4))
        rng = np.random.default_rng(5)
        desc = rng.normal(size=(6, 8))
        sizes = rng.uniform(0.5, 3.0, size=(6, 3))
        assert np.array_equal(net.forward(desc, sizes).data, net.forward_np(desc, sizes))

    def test_distance_loss_gradcheck(self):
        net = emb.EmbeddingNet(5, hidden_dim=6, embed_dim=4, rng=np.random.default_rng(6))
        rng = np.random.default_rng(7)
        desc = rng.normal(size=(4, 5))
        sizes = rng.uniform(0.5, 2.0, size=(4, 3))
        labels = np.array([0, 0, 1, 1])

        def loss():
            return emb.triplet_loss_batch_all(net.forward(desc, sizes), labels)

        assert ad.grad_check(loss, list(net.params().values())) < 1e-4

    def test_dimension_mismatch_rejected(self):
        net = emb.EmbeddingNet(8, rng=np.random.default_rng(8))
        with pytest.raises(ValueError):
            emb.embed(net, np.zeros(5), (1, 1, 1))

    def test_checkpoint_roundtrip(self, tmp_path):
        net = emb.EmbeddingNet(8, rng=np.random.default_rng(9))
        net.save(tmp_path / "e.json")
        loaded = emb.EmbeddingNet.load(tmp_path / "e.json")
        assert loaded.use_box_size == net.use_box_size
        d = np.random.default_rng(10).normal(size=8)
        assert np.array_equal(emb.embed(net, d, (1, 1, 1)), emb.embed(loaded, d, (1, 1, 1)))


class TestPkSampling:
    def _pool(self, identities=6, samples=5, dim=4, seed=0):
        rng = np.random.default_rng(seed)
        return {
            gid: [(rng.normal(size=dim), rng.uniform(0.5, 3.0, size=3)) for _ in range(samples)]
            for gid in range(identities)
        }

    def test_exact_pk_structure(self):
        pool = self._pool()
        spec = emb.PKBatchSpec(p=4, k=3)
        desc, sizes, labels = emb.sample_pk_batch(pool, spec, np.random.default_rng(0))
        assert desc.shape[0] == 12 and sizes.shape == (12, 3)
        _, counts = np.unique(labels, return_counts=True)
        assert list(counts) == [3, 3, 3, 3]

    def test_zero_noise_keeps_exact_sizes(self):
        pool = self._pool()
        spec = emb.PKBatchSpec(p=3, k=2)
        _, sizes, labels = emb.sample_pk_batch(pool, spec, np.random.default_rng(1), size_noise=0.0)
        allowed = {tuple(s) for entry in pool.values() for _, s in entry}
        for s in sizes:
            assert tuple(s) in allowed

    def test_noise_bounds(self):
        pool = {0: [(np.zeros(4), np.array([2.0, 2.0, 2.0]))] * 4,
                1: [(np.zeros(4), np.array([2.0, 2.0, 2.0]))] * 4}
        spec = emb.PKBatchSpec(p=2, k=4)
        rng = np.random.default_rng(2)
        for _ in range(50):
            _, sizes, _ = emb.sample_pk_batch(pool, spec, rng, size_noise=0.2)
            assert np.all(sizes >= 1.6 - 1e-12) and np.all(sizes <= 2.4 + 1e-12)

    def test_multiplier_mean_near_one(self):
        pool = {0: [(np.zeros(2), np.ones(3))] * 4, 1: [(np.zeros(2), np.ones(3))] * 4}
        spec = emb.PKBatchSpec(p=2, k=4)
        rng = np.random.default_rng(3)
        sizes = []
        for _ in range(1250):
            _, s, _ = emb.sample_pk_batch(pool, spec, rng, size_noise=0.2)
            sizes.append(s)
        mean = np.concatenate(sizes).mean()
        assert abs(mean - 1.0) < 0.005

    def test_small_identity_sampled_with_replacement(self):
        pool = {0: [(np.zeros(2), np.ones(3))], 1: [(np.zeros(2), np.ones(3))] * 4}
        spec = emb.PKBatchSpec(p=2, k=4)
        desc, _, labels = emb.sample_pk_batch(pool, spec, np.random.default_rng(4))
        assert (labels == 0).sum() == 4

    def test_too_few_identities_rejected(self):
        pool = self._pool(identities=3)
        with pytest.raises(ValueError):
            emb.sample_pk_batch(pool, emb.PKBatchSpec(p=4, k=2), np.random.default_rng(5))


class TestTraining:
    def test_zero_epochs_keeps_initialization(self):
        scenes = [generate_scene(WorldConfig(seed=s, n_objects=8, n_frames=10)) for s in range(5)]
        cfg = emb.EmbeddingTrainConfig(epochs=0, seed=1, spec=emb.PKBatchSpec(p=8, k=2))
        net, log = emb.train_embedding(scenes, scenes, cfg)
        reference = emb.EmbeddingNet(
            scenes[0].metadata["descriptor_dim"], rng=np.random.default_rng(cfg.seed)
        )
        for name, node in net.params().items():
            assert np.array_equal(node.data, reference.params()[name].data)
        assert log == []

    def test_collapse_detector_triggers(self):
        scenes = [generate_scene(WorldConfig(seed=s, n_objects=8, n_frames=10)) for s in range(4)]
        cfg = emb.EmbeddingTrainConfig(
            epochs=1, warmup_epochs=0, seed=0, spec=emb.PKBatchSpec(p=8, k=2),
            collapse_threshold=1e9,  # any spread counts as collapsed
        )
        with pytest.raises(CollapseError):
            emb.train_embedding(scenes, scenes, cfg)

    def test_size_fingerprint_on_twin_set(self):
        # identical appearance latents; training without size noise lets box
        # size alone separate the twins
        scenes = [
            generate_scene(
                WorldConfig(seed=s, n_objects=8, n_frames=16, twin_fraction=1.0,
                            descriptor_noise=0.05)
            )
            for s in range(4)
        ]
        cfg = emb.EmbeddingTrainConfig(
            epochs=6, warmup_epochs=2, seed=0, size_noise=0.0,
            spec=emb.PKBatchSpec(p=8, k=4),
        )
        net, _ = emb.train_embedding(scenes, scenes, cfg)
        # rank-1 restricted to twin pairs: gallery = one sample per identity,
        # query must pick its own identity over its identically-looking twin
        correct = 0
        total = 0
        for scene in scenes:
            pool = emb.build_annotation_pool([scene])
            for a in range(0, 8, 2):
                b = a + 1
                if a not in pool or b not in pool:
                    continue
                if len(pool[a]) < 2:
                    continue
                qd, qs = pool[a][0]
                gallery = [pool[a][1], pool[b][0]]
                emb_q = emb.embed(net, qd, qs)
                d = [np.linalg.norm(emb_q - emb.embed(net, gd, gs)) for gd, gs in gallery]
                correct += int(d[0] < d[1])
                total += 1
        assert total >= 10
        assert correct / total >= 0.75
