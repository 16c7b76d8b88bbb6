"""Appearance embedding model and its metric-learning training stage.

The network maps (appearance descriptor, 3D box size) to a 128-d embedding.
Two dense+relu trunk layers process the descriptor alone; the box size is
concatenated only at the final linear head, so it acts as a late auxiliary
cue. Training minimizes a margin-based triplet loss over P-identity /
K-sample batches, warming up with batch-all mining before switching to
batch-hard.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint, take_param
from .errors import CollapseError
from .optim import Adam


@dataclass
class PKBatchSpec:
    """P identities x K samples per batch; margin for the hinge."""

    p: int = 32
    k: int = 4
    margin: float = 1.0

    @property
    def batch_size(self):
        return self.p * self.k


class EmbeddingNet:
    def __init__(self, descriptor_dim, hidden_dim=128, embed_dim=128, use_box_size=True, rng=None):
        rng = rng or np.random.default_rng(0)
        self.descriptor_dim = descriptor_dim
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.use_box_size = use_box_size
        head_in = hidden_dim + (3 if use_box_size else 0)
        self.w1 = ad.parameter(ad.uniform_init(rng, descriptor_dim, (descriptor_dim, hidden_dim)))
        self.b1 = ad.parameter(np.zeros(hidden_dim))
        self.w2 = ad.parameter(ad.uniform_init(rng, hidden_dim, (hidden_dim, hidden_dim)))
        self.b2 = ad.parameter(np.zeros(hidden_dim))
        self.w3 = ad.parameter(ad.uniform_init(rng, head_in, (head_in, embed_dim)))
        self.b3 = ad.parameter(np.zeros(embed_dim))

    def params(self):
        return {
            "embed.w1": self.w1,
            "embed.b1": self.b1,
            "embed.w2": self.w2,
            "embed.b2": self.b2,
            "embed.w3": self.w3,
            "embed.b3": self.b3,
        }

    def forward(self, descriptors, box_sizes=None):
        """Graph forward over a batch; descriptors (B, d_a), box_sizes (B, 3)."""
        x = ad.as_node(descriptors)
        h = ad.relu(ad.dense(x, self.w1, self.b1))
        h = ad.relu(ad.dense(h, self.w2, self.b2))
        if self.use_box_size:
            if box_sizes is None:
                raise ValueError("this embedding net expects box sizes")
            h = ad.concat([h, ad.as_node(box_sizes)], axis=1)
        return ad.dense(h, self.w3, self.b3)

    def forward_np(self, descriptors, box_sizes=None):
        """Graph-free forward pass for inference; bitwise equal to forward()."""
        h = np.maximum(descriptors @ self.w1.data + self.b1.data, 0.0)
        h = np.maximum(h @ self.w2.data + self.b2.data, 0.0)
        if self.use_box_size:
            if box_sizes is None:
                raise ValueError("this embedding net expects box sizes")
            h = np.concatenate([h, box_sizes], axis=1)
        return h @ self.w3.data + self.b3.data

    def config(self):
        return {
            "descriptor_dim": self.descriptor_dim,
            "hidden_dim": self.hidden_dim,
            "embed_dim": self.embed_dim,
            "use_box_size": self.use_box_size,
        }

    def save(self, path):
        save_checkpoint(path, "embedding", self.config(), self.params())

    @classmethod
    def load(cls, path):
        _, config, params = load_checkpoint(path, expect_kind="embedding")
        net = cls(
            config["descriptor_dim"],
            config["hidden_dim"],
            config["embed_dim"],
            config["use_box_size"],
        )
        for name, node in net.params().items():
            node.data[...] = take_param(params, name, node.data.shape)
        return net


def embed(net, descriptor, box_size):
    """Embed a single (descriptor, box size) observation."""
    desc = np.asarray(descriptor, dtype=np.float64).reshape(1, -1)
    if desc.shape[1] != net.descriptor_dim:
        raise ValueError(
            f"descriptor has dimension {desc.shape[1]}, expected {net.descriptor_dim}"
        )
    sizes = None
    if net.use_box_size:
        sizes = np.asarray(box_size, dtype=np.float64).reshape(1, 3)
        if np.any(sizes <= 0):
            raise ValueError("box sizes must be strictly positive")
    return net.forward_np(desc, sizes)[0]


def pairwise_distances(embeddings):
    """Euclidean distance matrix as a graph node; embeddings (B, D)."""
    e = ad.as_node(embeddings)
    sq = ad.reduce_sum(ad.mul(e, e), axis=1, keepdims=True)
    gram = ad.matmul(e, ad.transpose(e))
    d2 = ad.sub(ad.add(sq, ad.transpose(sq)), ad.mul(gram, 2.0))
    # small epsilon keeps sqrt differentiable at coincident embeddings
    return ad.sqrt(ad.add(ad.clip(d2, 0.0, None), 1e-12))


def _label_masks(labels):
    labels = np.asarray(labels)
    n = labels.shape[0]
    same = labels[:, None] == labels[None, :]
    positive = same & ~np.eye(n, dtype=bool)
    negative = ~same
    if positive.sum(axis=1).min() == 0:
        raise ValueError("every identity needs at least 2 samples in the batch")
    if negative.sum(axis=1).min() == 0:
        raise ValueError("a batch needs at least 2 distinct identities")
    return positive, negative


def triplet_loss_batch_hard(embeddings, labels, margin=1.0):
    """Mean over anchors of [margin + hardest-positive - hardest-negative]_+.

    The hardest positive is the farthest same-identity sample, the hardest
    negative the nearest other-identity sample, both within the batch.
    """
    positive, negative = _label_masks(labels)
    dist = pairwise_distances(embeddings)
    n = positive.shape[0]
    d = dist.data
    hp = np.where(positive, d, -np.inf).argmax(axis=1)
    hn = np.where(negative, d, np.inf).argmin(axis=1)
    rows = np.arange(n)
    d_hp = ad.take_flat(dist, rows * n + hp)
    d_hn = ad.take_flat(dist, rows * n + hn)
    return ad.mean(ad.relu(ad.add(ad.sub(d_hp, d_hn), margin)))


def triplet_loss_batch_all(embeddings, labels, margin=1.0):
    """Mean hinge over every valid (anchor, positive, negative) triplet that
    is active (strictly positive); zero when no triplet violates the margin."""
    positive, negative = _label_masks(labels)
    n = positive.shape[0]
    a_idx, p_idx, n_idx = [], [], []
    for a in range(n):
        ps = np.flatnonzero(positive[a])
        ns = np.flatnonzero(negative[a])
        a_idx.append(np.full(ps.size * ns.size, a))
        p_idx.append(np.repeat(ps, ns.size))
        n_idx.append(np.tile(ns, ps.size))
    a_idx = np.concatenate(a_idx)
    p_idx = np.concatenate(p_idx)
    n_idx = np.concatenate(n_idx)
    dist = pairwise_distances(embeddings)
    d_ap = ad.take_flat(dist, a_idx * n + p_idx)
    d_an = ad.take_flat(dist, a_idx * n + n_idx)
    terms = ad.relu(ad.add(ad.sub(d_ap, d_an), margin))
    active = int((terms.data > 0.0).sum())
    if active == 0:
        return ad.constant(0.0)
    return ad.mul(ad.reduce_sum(terms), 1.0 / active)


def build_annotation_pool(scenes, min_visibility=0.4):
    """Per-identity samples usable for metric learning.

    Identities are scene-local; each camera view of an annotation passing
    the visibility filter contributes one (descriptor, box size) sample.
    Returns (samples, labels) with samples[gid] = list of (descriptor, size).
    """
    pool = {}
    keys = {}
    for scene in scenes:
        for frame in scene.frames:
            for ann in frame.annotations:
                if ann.visibility < min_visibility or not ann.views:
                    continue
                key = (scene.scene_id, ann.identity)
                gid = keys.setdefault(key, len(keys))
                entry = pool.setdefault(gid, [])
                for view in ann.views:
                    entry.append((view.descriptor, ann.pose.size))
    return pool


def sample_pk_batch(pool, spec, rng, size_noise=0.2):
    """Draw a PK batch; box sizes get independent per-dimension relative
    noise of (1 + u), u ~ U(-size_noise, size_noise)."""
    ids = sorted(pool)
    if len(ids) < spec.p:
        raise ValueError(f"need at least {spec.p} identities, have {len(ids)}")
    chosen = rng.choice(len(ids), size=spec.p, replace=False)
    descriptors, sizes, labels = [], [], []
    for c in chosen:
        gid = ids[int(c)]
        samples = pool[gid]
        replace = len(samples) < spec.k
        picks = rng.choice(len(samples), size=spec.k, replace=replace)
        for i in picks:
            desc, size = samples[int(i)]
            factor = 1.0 + size_noise * rng.uniform(-1.0, 1.0, size=3)
            descriptors.append(desc)
            sizes.append(size * factor)
            labels.append(gid)
    return np.asarray(descriptors), np.asarray(sizes), np.asarray(labels)


def rank1_accuracy(net, scenes, rng, min_visibility=0.4, queries_per_identity=8):
    """Re-identification rank-1: nearest gallery embedding shares the identity."""
    pool = build_annotation_pool(scenes, min_visibility)
    gallery_desc, gallery_size, gallery_label = [], [], []
    query_desc, query_size, query_label = [], [], []
    for gid in sorted(pool):
        samples = pool[gid]
        if len(samples) < 2:
            continue
        order = rng.permutation(len(samples))
        g = samples[int(order[0])]
        gallery_desc.append(g[0])
        gallery_size.append(g[1])
        gallery_label.append(gid)
        for i in order[1 : 1 + queries_per_identity]:
            q = samples[int(i)]
            query_desc.append(q[0])
            query_size.append(q[1])
            query_label.append(gid)
    if not query_label or len(gallery_label) < 2:
        raise ValueError("not enough identities for a rank-1 evaluation")
    sizes_g = np.asarray(gallery_size) if net.use_box_size else None
    sizes_q = np.asarray(query_size) if net.use_box_size else None
    emb_g = net.forward_np(np.asarray(gallery_desc), sizes_g)
    emb_q = net.forward_np(np.asarray(query_desc), sizes_q)
    d2 = (
        (emb_q * emb_q).sum(axis=1, keepdims=True)
        + (emb_g * emb_g).sum(axis=1)
        - 2.0 * emb_q @ emb_g.T
    )
    nearest = d2.argmin(axis=1)
    hits = np.asarray(gallery_label)[nearest] == np.asarray(query_label)
    return float(hits.mean())


@dataclass
class EmbeddingTrainConfig:
    epochs: int = 18
    warmup_epochs: int = 5  # batch-all mining before switching to batch-hard
    lr: float = 1e-3
    steps_per_epoch: int | None = None
    spec: PKBatchSpec = None
    size_noise: float = 0.2
    min_visibility: float = 0.4
    collapse_threshold: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.spec is None:
            self.spec = PKBatchSpec()


def mean_pairwise_distance(embeddings):
    n = embeddings.shape[0]
    d2 = (
        (embeddings * embeddings).sum(axis=1, keepdims=True)
        + (embeddings * embeddings).sum(axis=1)
        - 2.0 * embeddings @ embeddings.T
    )
    d = np.sqrt(np.maximum(d2, 0.0))
    off = ~np.eye(n, dtype=bool)
    return float(d[off].mean())


def train_embedding(train_scenes, val_scenes, cfg, use_box_size=True):
    """Stage-1 training loop; returns (net, per-epoch log records)."""
    pool = build_annotation_pool(train_scenes, cfg.min_visibility)
    rng = np.random.default_rng(cfg.seed)
    descriptor_dim = next(iter(pool.values()))[0][0].shape[0]
    net = EmbeddingNet(descriptor_dim, use_box_size=use_box_size, rng=rng)
    total = sum(len(v) for v in pool.values())
    steps = cfg.steps_per_epoch or max(1, total // cfg.spec.batch_size)
    opt = Adam(net.params(), lr=cfg.lr)
    log = []
    for epoch in range(cfg.epochs):
        epoch_losses = []
        last_embeddings = None
        for _ in range(steps):
            desc, sizes, labels = sample_pk_batch(pool, cfg.spec, rng, cfg.size_noise)
            emb = net.forward(desc, sizes if use_box_size else None)
            if epoch < cfg.warmup_epochs:
                loss = triplet_loss_batch_all(emb, labels, cfg.spec.margin)
            else:
                loss = triplet_loss_batch_hard(emb, labels, cfg.spec.margin)
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite triplet loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.data))
            last_embeddings = emb.data
        if last_embeddings is not None:
            spread = mean_pairwise_distance(last_embeddings)
            if spread < cfg.collapse_threshold:
                raise CollapseError(
                    f"embedding collapse at epoch {epoch}: mean pairwise distance "
                    f"{spread:.3e} < {cfg.collapse_threshold:.3e}; enable or extend "
                    "the batch-all warmup"
                )
        rank1 = rank1_accuracy(net, val_scenes, np.random.default_rng(cfg.seed + 1),
                               cfg.min_visibility)
        log.append(
            {"epoch": epoch, "loss": float(np.mean(epoch_losses)), "rank1": rank1}
        )
    return net, log
