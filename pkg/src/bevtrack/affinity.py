"""Affinity network, its supervision, and the joint association training.

A pair (tracked object, detected object) is scored by a two-layer net on
the concatenation [track embedding | detection embedding | track motion
representation | detection position relative to the track's sequence
origin]. Ablation variants drop the appearance block or the whole motion
block; the layer widths stay fixed.

Stage-2 training optimizes the LSTM and the affinity net jointly against
ground-truth 0/1 affinity matrices built from identity labels; the
embedding net stays frozen and is evaluated outside the graph.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import motion as motion_mod
from .checkpoint import load_checkpoint, save_checkpoint, take_param
from .optim import Adam

BCE_EPS = 1e-7


class AffinityNet:
    def __init__(
        self,
        embed_dim=128,
        motion_dim=128,
        hidden_dim=128,
        use_motion=True,
        use_appearance=True,
        rng=None,
    ):
        if not (use_motion or use_appearance):
            raise ValueError("affinity net needs at least one cue")
        rng = rng or np.random.default_rng(0)
        self.embed_dim = embed_dim
        self.motion_dim = motion_dim
        self.hidden_dim = hidden_dim
        self.use_motion = use_motion
        self.use_appearance = use_appearance
        in_dim = (2 * embed_dim if use_appearance else 0) + (
            motion_dim + 2 if use_motion else 0
        )
        self.in_dim = in_dim
        self.w1 = ad.parameter(ad.uniform_init(rng, in_dim, (in_dim, hidden_dim)))
        self.b1 = ad.parameter(np.zeros(hidden_dim))
        self.w2 = ad.parameter(ad.uniform_init(rng, hidden_dim, (hidden_dim, 1)))
        self.b2 = ad.parameter(np.zeros(1))

    def params(self):
        return {
            "affinity.w1": self.w1,
            "affinity.b1": self.b1,
            "affinity.w2": self.w2,
            "affinity.b2": self.b2,
        }

    def forward_graph(self, x):
        h = ad.relu(ad.dense(x, self.w1, self.b1))
        return ad.sigmoid(ad.dense(h, self.w2, self.b2))

    def forward_np(self, x):
        h = np.maximum(x @ self.w1.data + self.b1.data, 0.0)
        z = h @ self.w2.data + self.b2.data
        return 1.0 / (1.0 + np.exp(-z[:, 0]))

    def config(self):
        return {
            "embed_dim": self.embed_dim,
            "motion_dim": self.motion_dim,
            "hidden_dim": self.hidden_dim,
            "use_motion": self.use_motion,
            "use_appearance": self.use_appearance,
        }


def affinity_score(net, emb_t=None, emb_d=None, motion_t=None, rel_pos_d=None,
                   position_scale=1.0):
    """Score one pair; inputs sized per the net's enabled cues."""
    parts = []
    if net.use_appearance:
        parts.append(np.asarray(emb_t).reshape(-1))
        parts.append(np.asarray(emb_d).reshape(-1))
    if net.use_motion:
        parts.append(np.asarray(motion_t).reshape(-1))
        parts.append(np.asarray(rel_pos_d).reshape(-1) * position_scale)
    x = np.concatenate(parts).reshape(1, -1)
    if x.shape[1] != net.in_dim:
        raise ValueError(f"pair input has dimension {x.shape[1]}, expected {net.in_dim}")
    return float(net.forward_np(x)[0])


def build_gt_affinity(tracked_labels, detected_labels):
    """1 where identity labels agree; the sentinel -1 never matches anything."""
    t = np.asarray(tracked_labels).reshape(-1, 1)
    d = np.asarray(detected_labels).reshape(1, -1)
    y = (t == d) & (t != -1) & (d != -1)
    return y.astype(np.float64)


def weighted_bce_np(y_hat, y, pos_weight, eps=BCE_EPS):
    """Reference formula: positive-weighted cross entropy averaged over M*N."""
    y_hat = np.clip(np.asarray(y_hat, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(y, dtype=np.float64)
    if np.isnan(y_hat).any() or np.isnan(y).any():
        raise ValueError("weighted_bce received NaN input")
    terms = -pos_weight * y * np.log(y_hat) - (1.0 - y) * np.log(1.0 - y_hat)
    return float(terms.sum() / y.size)


def weighted_bce(y_hat, y, pos_weight, eps=BCE_EPS):
    """Graph version of weighted_bce_np; y_hat a node, y a 0/1 array."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != y_hat.data.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.data.shape}")
    clipped = ad.clip(y_hat, eps, 1.0 - eps)
    scale = 1.0 / y.size
    pos = ad.mul(ad.log(clipped), -pos_weight * y * scale)
    neg = ad.mul(ad.log(ad.sub(1.0, clipped)), -(1.0 - y) * scale)
    return ad.reduce_sum(ad.add(pos, neg))


def _best_view(annotation):
    return max(annotation.views, key=lambda v: v.area)


@dataclass
class FrameSample:
    """Everything stage-2 needs for one sampled training frame."""

    tracked_labels: np.ndarray
    tracked_paths: list  # (n_i, 2) arrays, noise already applied
    tracked_descriptors: np.ndarray
    tracked_sizes: np.ndarray
    detected_labels: np.ndarray
    detected_bev: np.ndarray  # (N, 2)
    detected_descriptors: np.ndarray
    detected_sizes: np.ndarray
    gt: np.ndarray  # (M, N)
    pos_weight: float


def history_horizon_frames(fps, seconds=5.0):
    """Tracked-object recency bound in frames (about 5 s of history)."""
    return max(1, int(round(seconds * fps)))


def sample_training_frame(
    scene,
    t,
    rng,
    m_max=16,
    n_max=16,
    horizon=None,
    traj_noise_sigma=1.0,
    max_len=motion_mod.MAX_HISTORY,
    history_dropout=0.0,
):
    """Sample up to m_max tracked identities (seen within `horizon` frames
    before t) and up to n_max detected annotations at t, with the matching
    ground-truth affinity matrix and its positive weight. Returns None when
    either side is empty.

    history_dropout randomly removes interior history points so training
    sequences exhibit the gaps that missed detections cause at inference
    (the final point always survives, keeping the recency bound intact)."""
    if t < 1:
        raise ValueError("training frames start at t=1")
    if horizon is None:
        horizon = history_horizon_frames(scene.fps)
    histories = {}
    for past in range(t):
        for ann in scene.frames[past].annotations:
            if not ann.views:
                continue
            histories.setdefault(ann.identity, []).append((past, ann))
    tracked_ids = [
        ident for ident, anns in histories.items() if anns[-1][0] >= t - horizon
    ]
    detected_anns = [a for a in scene.frames[t].annotations if a.views]
    if not tracked_ids or not detected_anns:
        return None
    tracked_ids.sort()
    if len(tracked_ids) > m_max:
        keep = rng.choice(len(tracked_ids), size=m_max, replace=False)
        tracked_ids = [tracked_ids[i] for i in sorted(keep)]
    if len(detected_anns) > n_max:
        keep = rng.choice(len(detected_anns), size=n_max, replace=False)
        detected_anns = [detected_anns[i] for i in sorted(keep)]

    paths, t_desc, t_sizes, t_labels = [], [], [], []
    for ident in tracked_ids:
        anns = histories[ident]
        pts = np.array([[a.pose.x, a.pose.y] for _, a in anns])
        if history_dropout > 0.0 and pts.shape[0] > 1:
            keep = rng.random(pts.shape[0] - 1) >= history_dropout
            pts = np.concatenate([pts[:-1][keep], pts[-1:]], axis=0)
        paths.append(motion_mod.augment_path(pts, rng, traj_noise_sigma))
        last = anns[-1][1]
        view = _best_view(last)
        t_desc.append(view.descriptor)
        t_sizes.append(last.pose.size)
        t_labels.append(ident)

    d_bev, d_desc, d_sizes, d_labels = [], [], [], []
    for ann in detected_anns:
        view = _best_view(ann)
        d_bev.append([ann.pose.x, ann.pose.y])
        d_desc.append(view.descriptor)
        d_sizes.append(ann.pose.size)
        d_labels.append(ann.identity)

    gt = build_gt_affinity(t_labels, d_labels)
    positives = gt.sum()
    negatives = gt.size - positives
    pos_weight = float(np.clip(negatives / max(1.0, positives), 1.0, 100.0))
    return FrameSample(
        tracked_labels=np.asarray(t_labels),
        tracked_paths=paths,
        tracked_descriptors=np.asarray(t_desc),
        tracked_sizes=np.asarray(t_sizes),
        detected_labels=np.asarray(d_labels),
        detected_bev=np.asarray(d_bev),
        detected_descriptors=np.asarray(d_desc),
        detected_sizes=np.asarray(d_sizes),
        gt=gt,
        pos_weight=pos_weight,
    )


def pair_inputs_np(
    affinity_net,
    emb_t=None,
    emb_d=None,
    motion_t=None,
    rel=None,
):
    """Assemble the (M*N, in_dim) input block for a full pair matrix.

    rel: (M, N, 2) relative positions, already scaled.
    """
    blocks = []
    if affinity_net.use_appearance:
        m, n = emb_t.shape[0], emb_d.shape[0]
        blocks.append(np.repeat(emb_t, n, axis=0))
        blocks.append(np.tile(emb_d, (m, 1)))
    if affinity_net.use_motion:
        m, n = rel.shape[0], rel.shape[1]
        blocks.append(np.repeat(motion_t, n, axis=0))
        blocks.append(rel.reshape(m * n, 2))
    return np.concatenate(blocks, axis=1)


def pair_matrix_np(affinity_net, emb_t=None, emb_d=None, motion_t=None, rel=None):
    """Affinity matrix (M, N) with the net's enabled cues."""
    if affinity_net.use_motion:
        m, n = rel.shape[0], rel.shape[1]
    else:
        m, n = emb_t.shape[0], emb_d.shape[0]
    x = pair_inputs_np(affinity_net, emb_t, emb_d, motion_t, rel)
    return affinity_net.forward_np(x).reshape(m, n)


@dataclass
class AssociationTrainConfig:
    epochs: int = 24
    batch_frames: int = 32
    lr: float = 5e-4
    m_max: int = 16
    n_max: int = 16
    horizon_seconds: float = 5.0
    traj_noise_sigma: float = 1.0
    history_dropout: float = 0.15
    max_len: int = motion_mod.MAX_HISTORY
    use_motion: bool = True
    use_appearance: bool = True
    lstm_hidden: int = 128
    hidden_dim: int = 256
    position_scale: float = motion_mod.DEFAULT_POSITION_SCALE
    seed: int = 0
    val_frames: int = 64


def _embed_frozen(embedding_net, descriptors, sizes):
    return embedding_net.forward_np(
        descriptors, sizes if embedding_net.use_box_size else None
    )


class _BatchGraph:
    """Assembles the loss graph for a list of frame samples."""

    def __init__(self, samples, embedding_net, encoder, affinity_net, cfg):
        self.samples = samples
        self.embedding_net = embedding_net
        self.encoder = encoder
        self.affinity_net = affinity_net
        self.cfg = cfg
        self._prepare()

    def _prepare(self):
        cfg = self.cfg
        self.norm_seqs = []
        self.origins = []
        self.track_offsets = []
        offset = 0
        for s in self.samples:
            self.track_offsets.append(offset)
            for path in s.tracked_paths:
                seq = motion_mod.normalize_sequence(path, cfg.max_len)
                self.norm_seqs.append(seq.points)
                self.origins.append([seq.origin.x, seq.origin.y])
            offset += len(s.tracked_paths)
        self.origins = np.asarray(self.origins)

        const_rows = []
        self.pair_track_rows = []
        self.y_rows = []
        self.coef_pos = []
        self.coef_neg = []
        for s, off in zip(self.samples, self.track_offsets):
            m = len(s.tracked_labels)
            n = len(s.detected_labels)
            if cfg.use_appearance:
                emb_t = _embed_frozen(self.embedding_net, s.tracked_descriptors, s.tracked_sizes)
                emb_d = _embed_frozen(self.embedding_net, s.detected_descriptors, s.detected_sizes)
                app = np.concatenate(
                    [np.repeat(emb_t, n, axis=0), np.tile(emb_d, (m, 1))], axis=1
                )
            rel = (
                s.detected_bev[None, :, :] - self.origins[off : off + m][:, None, :]
            ).reshape(m * n, 2) * cfg.position_scale
            if cfg.use_appearance:
                const_rows.append(np.concatenate([app, rel], axis=1) if cfg.use_motion else app)
            else:
                const_rows.append(rel)
            rows = np.repeat(np.arange(off, off + m), n)
            self.pair_track_rows.append(rows)
            y = s.gt.reshape(m * n)
            self.y_rows.append(y)
            norm = 1.0 / (m * n * len(self.samples))
            self.coef_pos.append(-s.pos_weight * y * norm)
            self.coef_neg.append(-(1.0 - y) * norm)
        self.const_block = np.concatenate(const_rows, axis=0)
        self.pair_track_rows = np.concatenate(self.pair_track_rows)
        self.y = np.concatenate(self.y_rows)
        self.coef_pos = np.concatenate(self.coef_pos)[:, None]
        self.coef_neg = np.concatenate(self.coef_neg)[:, None]

    def loss(self):
        cfg = self.cfg
        if cfg.use_motion:
            padded, lengths = motion_mod.pad_sequences(self.norm_seqs)
            motion_all = self.encoder.forward_graph(padded, lengths)
            motion_rows = ad.gather_rows(motion_all, self.pair_track_rows)
            if cfg.use_appearance:
                app_rel = self.const_block
                x = ad.concat(
                    [
                        ad.constant(app_rel[:, : 2 * self.affinity_net.embed_dim]),
                        motion_rows,
                        ad.constant(app_rel[:, 2 * self.affinity_net.embed_dim :]),
                    ],
                    axis=1,
                )
            else:
                x = ad.concat([motion_rows, ad.constant(self.const_block)], axis=1)
        else:
            x = ad.constant(self.const_block)
        y_hat = self.affinity_net.forward_graph(x)
        clipped = ad.clip(y_hat, BCE_EPS, 1.0 - BCE_EPS)
        pos = ad.mul(ad.log(clipped), self.coef_pos)
        neg = ad.mul(ad.log(ad.sub(1.0, clipped)), self.coef_neg)
        return ad.reduce_sum(ad.add(pos, neg))

    def scores_np(self):
        cfg = self.cfg
        if cfg.use_motion:
            motion_all = self.encoder.encode_batch(self.norm_seqs)
            motion_rows = motion_all[self.pair_track_rows]
            if cfg.use_appearance:
                app_rel = self.const_block
                x = np.concatenate(
                    [
                        app_rel[:, : 2 * self.affinity_net.embed_dim],
                        motion_rows,
                        app_rel[:, 2 * self.affinity_net.embed_dim :],
                    ],
                    axis=1,
                )
            else:
                x = np.concatenate([motion_rows, self.const_block], axis=1)
        else:
            x = self.const_block
        return self.affinity_net.forward_np(x)


def pair_auc(scores, labels):
    """Rank-based AUC of same-identity pair classification."""
    scores = np.asarray(scores)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = scores.argsort(kind="stable")
    ranks = np.empty(scores.size)
    ranks[order] = np.arange(1, scores.size + 1)
    # midranks for ties
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    rank_sum = ranks[labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _collect_frame_pool(scenes):
    pool = []
    for idx, scene in enumerate(scenes):
        for t in range(1, len(scene.frames)):
            if scene.visible_annotations(t):
                pool.append((idx, t))
    return pool


def train_association(train_scenes, val_scenes, embedding_net, cfg):
    """Stage-2 loop: jointly trains the motion encoder and affinity net.

    The embedding net is frozen (evaluated outside the graph); pass None
    when appearance is disabled. Returns (encoder, affinity_net, log).
    """
    if cfg.use_appearance and embedding_net is None:
        raise ValueError("appearance cue enabled but no embedding net given")
    rng = np.random.default_rng(cfg.seed)
    encoder = (
        motion_mod.MotionEncoder(cfg.lstm_hidden, cfg.position_scale, rng=rng)
        if cfg.use_motion
        else None
    )
    embed_dim = embedding_net.embed_dim if cfg.use_appearance else 128
    affinity_net = AffinityNet(
        embed_dim=embed_dim,
        motion_dim=cfg.lstm_hidden,
        hidden_dim=cfg.hidden_dim,
        use_motion=cfg.use_motion,
        use_appearance=cfg.use_appearance,
        rng=rng,
    )
    params = dict(affinity_net.params())
    if encoder is not None:
        params.update(encoder.params())
    opt = Adam(params, lr=cfg.lr)

    horizon = None  # per-scene fps decides
    pool = _collect_frame_pool(train_scenes)
    if not pool:
        raise ValueError("no usable training frames")
    steps = max(1, math.ceil(len(pool) / cfg.batch_frames))

    val_rng = np.random.default_rng(cfg.seed + 1)
    val_samples = []
    for idx, t in _collect_frame_pool(val_scenes)[: cfg.val_frames]:
        s = sample_training_frame(
            val_scenes[idx], t, val_rng, cfg.m_max, cfg.n_max,
            horizon, traj_noise_sigma=0.0, max_len=cfg.max_len,
        )
        if s is not None:
            val_samples.append(s)

    log = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pool))
        losses = []
        for start in range(0, steps * cfg.batch_frames, cfg.batch_frames):
            picks = [pool[i] for i in order[start : start + cfg.batch_frames]]
            samples = []
            for idx, t in picks:
                s = sample_training_frame(
                    train_scenes[idx], t, rng, cfg.m_max, cfg.n_max,
                    horizon, cfg.traj_noise_sigma, cfg.max_len,
                    cfg.history_dropout,
                )
                if s is not None:
                    samples.append(s)
            if not samples:
                continue
            graph = _BatchGraph(samples, embedding_net, encoder, affinity_net, cfg)
            loss = graph.loss()
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite association loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        auc, acc = evaluate_pairs(val_samples, embedding_net, encoder, affinity_net, cfg)
        log.append(
            {
                "epoch": epoch,
                "loss": float(np.mean(losses)) if losses else float("nan"),
                "val_auc": auc,
                "val_acc": acc,
            }
        )
    return encoder, affinity_net, log


def evaluate_pairs(samples, embedding_net, encoder, affinity_net, cfg):
    """(AUC, accuracy at the 0.5 cut) over pre-sampled validation frames."""
    if not samples:
        return float("nan"), float("nan")
    graph = _BatchGraph(samples, embedding_net, encoder, affinity_net, cfg)
    scores = graph.scores_np()
    labels = graph.y
    auc = pair_auc(scores, labels)
    acc = float(((scores >= 0.5) == labels.astype(bool)).mean())
    return auc, acc


def save_association_checkpoint(path, encoder, affinity_net, position_scale=None):
    config = affinity_net.config()
    if encoder is not None:
        config["lstm_hidden"] = encoder.hidden_dim
        config["position_scale"] = encoder.position_scale
    elif position_scale is not None:
        config["position_scale"] = position_scale
    params = dict(affinity_net.params())
    if encoder is not None:
        params.update(encoder.params())
    save_checkpoint(path, "association", config, params)


def load_association_checkpoint(path):
    """Returns (motion encoder or None, affinity net, position_scale)."""
    _, config, params = load_checkpoint(path, expect_kind="association")
    net = AffinityNet(
        embed_dim=config["embed_dim"],
        motion_dim=config["motion_dim"],
        hidden_dim=config["hidden_dim"],
        use_motion=config["use_motion"],
        use_appearance=config["use_appearance"],
    )
    for name, node in net.params().items():
        node.data[...] = take_param(params, name, node.data.shape)
    encoder = None
    scale = config.get("position_scale", motion_mod.DEFAULT_POSITION_SCALE)
    if config["use_motion"]:
        encoder = motion_mod.MotionEncoder(config["lstm_hidden"], scale)
        for name, node in encoder.params().items():
            node.data[...] = take_param(params, name, node.data.shape)
    return encoder, net, scale
