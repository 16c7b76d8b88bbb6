"""LSTM motion representation of BEV path histories.

Paths are preprocessed before encoding: keep the most recent `max_len`
points, translate so the first retained point is the origin, and remember
that origin so detection positions can be expressed in the same local
frame. A fixed input scale maps meter-valued displacements into a range
the gate nonlinearities handle; it is part of the model configuration and
applied identically to sequences and relative detection positions.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .checkpoint import load_checkpoint, save_checkpoint, take_param
from .core import BevPoint

MAX_HISTORY = 40
DEFAULT_POSITION_SCALE = 1.0 / 32.0


@dataclass
class MotionSequence:
    """Normalized history: points (n, 2) with points[0] == (0, 0)."""

    points: np.ndarray
    origin: BevPoint


def _as_points(path):
    if isinstance(path, np.ndarray):
        return path.astype(np.float64).reshape(-1, 2)
    return np.array([[p.x, p.y] for p in path], dtype=np.float64)


def normalize_sequence(path, max_len=MAX_HISTORY):
    """Cap to the last `max_len` points and translate to the first retained one."""
    pts = _as_points(path)
    if pts.shape[0] == 0:
        raise ValueError("cannot normalize an empty path")
    pts = pts[-max_len:]
    origin = BevPoint(pts[0, 0], pts[0, 1])
    return MotionSequence(pts - pts[0], origin)


def relative_detection_position(det_bev, origin):
    """Detection BEV position expressed w.r.t. a track's sequence origin."""
    return np.array([det_bev.x - origin.x, det_bev.y - origin.y])


def augment_path(path, rng, sigma=1.0):
    """Isotropic Gaussian position noise on every history point (training only)."""
    pts = _as_points(path)
    if sigma > 0.0:
        pts = pts + sigma * rng.normal(size=pts.shape)
    return pts


def pad_sequences(seqs):
    """Stack variable-length (n_i, 2) sequences into (T, B, 2) plus lengths."""
    lengths = np.array([s.shape[0] for s in seqs], dtype=np.intp)
    T = int(lengths.max())
    out = np.zeros((T, len(seqs), 2))
    for b, s in enumerate(seqs):
        out[: s.shape[0], b, :] = s
    return out, lengths


class MotionEncoder:
    """One-layer LSTM, input (x, y), hidden 128; representation = final h."""

    def __init__(self, hidden_dim=128, position_scale=DEFAULT_POSITION_SCALE, rng=None):
        rng = rng or np.random.default_rng(0)
        self.input_dim = 2
        self.hidden_dim = hidden_dim
        self.position_scale = position_scale
        self.wx = ad.parameter(
            ad.uniform_init(rng, self.input_dim, (self.input_dim, 4 * hidden_dim))
        )
        self.wh = ad.parameter(ad.uniform_init(rng, hidden_dim, (hidden_dim, 4 * hidden_dim)))
        self.b = ad.parameter(np.zeros(4 * hidden_dim))

    def params(self):
        return {"lstm.wx": self.wx, "lstm.wh": self.wh, "lstm.b": self.b}

    def forward_graph(self, padded, lengths):
        """Graph encoding of a padded (T, B, 2) batch -> (B, H) node."""
        x = ad.constant(padded * self.position_scale)
        h = ad.lstm_sequence(x, self.wx, self.wh, self.b)
        return ad.last_step(h, lengths)

    def encode_batch(self, seqs):
        """Inference encoding of a list of (n_i, 2) normalized sequences."""
        padded, lengths = pad_sequences(seqs)
        T, B, _ = padded.shape
        x_flat = padded.reshape(T * B, 2) * self.position_scale
        xw = (x_flat @ self.wx.data + self.b.data).reshape(T, B, 4 * self.hidden_dim)
        zeros = np.zeros((B, self.hidden_dim))
        h, _, _ = kernels.lstm_seq_forward(xw, self.wh.data, zeros, zeros)
        return h[lengths - 1, np.arange(B)]

    def config(self):
        return {"hidden_dim": self.hidden_dim, "position_scale": self.position_scale}

    def save(self, path):
        save_checkpoint(path, "motion", self.config(), self.params())

    @classmethod
    def load(cls, path):
        _, config, params = load_checkpoint(path, expect_kind="motion")
        return cls.from_params(config, params)

    @classmethod
    def from_params(cls, config, params):
        enc = cls(config["hidden_dim"], config["position_scale"])
        for name, node in enc.params().items():
            node.data[...] = take_param(params, name, node.data.shape)
        return enc


def encode_motion(encoder, seq):
    """Final hidden state for one normalized sequence."""
    return encoder.encode_batch([seq.points])[0]
