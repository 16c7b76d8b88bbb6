"""Finite-difference gradient suites over every differentiable component.

Each check builds a small instance of the real computation (tiny widths,
handful of steps) so the whole suite runs in seconds; the architectures
are width-parametric, so these cover the same code paths as full-size
training. Primitives must agree with central differences to 1e-4,
deep compositions to 1e-3.
"""

import numpy as np

from . import autodiff as ad
from .affinity import AffinityNet, weighted_bce
from .embedding import EmbeddingNet
from .motion import MotionEncoder

PRIMITIVE_TOL = 1e-4
COMPOSITION_TOL = 1e-3


def check_dense(rng):
    x = ad.parameter(rng.normal(size=(3, 4)))
    w = ad.parameter(rng.normal(size=(4, 5)))
    b = ad.parameter(rng.normal(size=5))

    def loss():
        y = ad.dense(x, w, b)
        return ad.mean(ad.mul(y, y))

    return ad.grad_check(loss, [x, w, b])


def check_activations(rng):
    x = ad.parameter(rng.normal(size=(4, 3)))

    def loss():
        s = ad.sigmoid(x)
        t = ad.tanh(x)
        r = ad.relu(x)
        return ad.mean(ad.add(ad.mul(s, t), r))

    return ad.grad_check(loss, [x])


def check_lstm_cell(rng):
    hidden = 5
    wx = ad.parameter(rng.normal(size=(2, 4 * hidden)) * 0.4)
    wh = ad.parameter(rng.normal(size=(hidden, 4 * hidden)) * 0.4)
    b = ad.parameter(rng.normal(size=4 * hidden) * 0.1)
    x = ad.parameter(rng.normal(size=(3, 2)))
    h0 = ad.parameter(rng.normal(size=(3, hidden)) * 0.5)
    c0 = ad.parameter(rng.normal(size=(3, hidden)) * 0.5)

    def loss():
        h, c = ad.lstm_cell(x, h0, c0, (wx, wh, b))
        return ad.mean(ad.add(h, c))

    return ad.grad_check(loss, [wx, wh, b, x, h0, c0])


def check_motion_encoder(rng, steps=10):
    enc = MotionEncoder(hidden_dim=6, position_scale=1.0, rng=rng)
    seqs = [rng.normal(size=(steps, 2)), rng.normal(size=(steps - 3, 2))]
    from .motion import pad_sequences

    padded, lengths = pad_sequences(seqs)

    def loss():
        out = enc.forward_graph(padded, lengths)
        return ad.mean(ad.mul(out, out))

    return ad.grad_check(loss, list(enc.params().values()))


def check_embedding_net(rng):
    net = EmbeddingNet(descriptor_dim=5, hidden_dim=7, embed_dim=6, rng=rng)
    desc = rng.normal(size=(4, 5))
    sizes = rng.uniform(0.5, 3.0, size=(4, 3))

    def loss():
        emb = net.forward(desc, sizes)
        return ad.mean(ad.mul(emb, emb))

    return ad.grad_check(loss, list(net.params().values()))


def check_affinity_graph(rng):
    """LSTM -> affinity net -> weighted BCE, gradients w.r.t. every
    stage-2 trainable parameter."""
    embed_dim, hidden = 4, 6
    enc = MotionEncoder(hidden_dim=hidden, position_scale=1.0, rng=rng)
    net = AffinityNet(embed_dim=embed_dim, motion_dim=hidden, hidden_dim=5, rng=rng)
    from .motion import pad_sequences

    m, n = 2, 3
    padded, lengths = pad_sequences([rng.normal(size=(4, 2)), rng.normal(size=(6, 2))])
    emb_t = rng.normal(size=(m, embed_dim))
    emb_d = rng.normal(size=(n, embed_dim))
    rel = rng.normal(size=(m, n, 2))
    y = (rng.random((m * n, 1)) < 0.3).astype(float)

    def loss():
        motion = enc.forward_graph(padded, lengths)
        rows = ad.gather_rows(motion, np.repeat(np.arange(m), n))
        const = np.concatenate(
            [np.repeat(emb_t, n, axis=0), np.tile(emb_d, (m, 1))], axis=1
        )
        x = ad.concat([ad.constant(const), rows, ad.constant(rel.reshape(m * n, 2))], axis=1)
        y_hat = net.forward_graph(x)
        return weighted_bce(y_hat, y, pos_weight=3.0)

    params = list(enc.params().values()) + list(net.params().values())
    return ad.grad_check(loss, params)


def run_all(seed=0):
    """Returns [(name, max relative error, tolerance)]."""
    rng = np.random.default_rng(seed)
    return [
        ("dense", check_dense(rng), PRIMITIVE_TOL),
        ("activations", check_activations(rng), PRIMITIVE_TOL),
        ("lstm_cell", check_lstm_cell(rng), PRIMITIVE_TOL),
        ("motion_encoder_10step", check_motion_encoder(rng), COMPOSITION_TOL),
        ("embedding_net", check_embedding_net(rng), PRIMITIVE_TOL),
        ("affinity_graph", check_affinity_graph(rng), COMPOSITION_TOL),
    ]
