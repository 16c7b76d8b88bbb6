import numpy as np
import pytest

from bevtrack import autodiff as ad


class TestPrimitiveGradients:
    def test_dense_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        x = ad.parameter(rng.normal(size=(3, 4)))
        w = ad.parameter(rng.normal(size=(4, 5)))
        b = ad.parameter(rng.normal(size=5))

        def loss():
            y = ad.dense(x, w, b)
            return ad.mean(ad.mul(y, y))

        assert ad.grad_check(loss, [x, w, b]) < 1e-4

    def test_dense_identity(self):
        y = ad.dense(ad.constant([[1.0, 0.0]]), ad.constant(np.eye(2)), ad.constant(np.zeros(2)))
        assert np.allclose(y.data, [[1.0, 0.0]])

    def test_dense_scalar_affine(self):
        y = ad.dense(ad.constant([[2.0]]), ad.constant([[3.0]]), ad.constant([1.0]))
        assert y.data[0, 0] == 7.0

    def test_dense_shape_mismatch(self):
        with pytest.raises(ValueError):
            ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))

    def test_activation_values_and_derivatives(self):
        x = ad.parameter(np.array([0.0]))
        y = ad.sigmoid(x)
        assert y.data[0] == 0.5
        ad.reduce_sum(y).backward()
        assert x.grad[0] == pytest.approx(0.25)

        x = ad.parameter(np.array([0.0]))
        y = ad.tanh(x)
        assert y.data[0] == 0.0
        ad.reduce_sum(y).backward()
        assert x.grad[0] == pytest.approx(1.0)

        assert ad.relu(ad.constant(np.array([-1.0]))).data[0] == 0.0
        assert ad.relu(ad.constant(np.array([2.0]))).data[0] == 2.0

    @pytest.mark.parametrize("op", [ad.sigmoid, ad.tanh, ad.relu, ad.sqrt, ad.log])
    def test_elementwise_gradcheck(self, op):
        rng = np.random.default_rng(5)
        x = ad.parameter(rng.uniform(0.3, 2.0, size=(4, 3)))

        def loss():
            return ad.mean(ad.mul(op(x), op(x)))

        assert ad.grad_check(loss, [x]) < 1e-4

    @pytest.mark.parametrize("shape_b", [(4, 3), (1, 3), (3,), ()])
    def test_broadcast_add_unbroadcasts_gradient(self, shape_b):
        rng = np.random.default_rng(7)
        a = ad.parameter(rng.normal(size=(4, 3)))
        b = ad.parameter(rng.normal(size=shape_b))

        def loss():
            return ad.mean(ad.mul(ad.add(a, b), ad.add(a, b)))

        assert ad.grad_check(loss, [a, b]) < 1e-4

    def test_gather_ops_gradcheck(self):
        rng = np.random.default_rng(9)
        x = ad.parameter(rng.normal(size=(5, 4)))
        flat_idx = np.array([0, 3, 3, 17, 11])
        row_idx = np.array([1, 1, 4, 0])

        def loss():
            g1 = ad.take_flat(x, flat_idx)
            g2 = ad.gather_rows(x, row_idx)
            return ad.add(ad.reduce_sum(ad.mul(g1, g1)), ad.mean(ad.mul(g2, g2)))

        assert ad.grad_check(loss, [x]) < 1e-4

    def test_concat_narrow_transpose_gradcheck(self):
        rng = np.random.default_rng(13)
        a = ad.parameter(rng.normal(size=(3, 2)))
        b = ad.parameter(rng.normal(size=(3, 4)))

        def loss():
            cat = ad.concat([a, b], axis=1)
            piece = ad.narrow(cat, 1, 1, 4)
            return ad.mean(ad.mul(ad.transpose(piece), ad.transpose(piece)))

        assert ad.grad_check(loss, [a, b]) < 1e-4

    def test_clip_blocks_gradient_outside_range(self):
        x = ad.parameter(np.array([-1.0, 0.5, 2.0]))
        y = ad.clip(x, 0.0, 1.0)
        ad.reduce_sum(y).backward()
        assert np.allclose(x.grad, [0.0, 1.0, 0.0])


class TestGraphMechanics:
    def test_backward_requires_scalar(self):
        x = ad.parameter(np.ones((2, 2)))
        with pytest.raises(ValueError):
            ad.mul(x, x).backward()

    def test_shared_subgraph_accumulates_once(self):
        # f = x*y + x: df/dx = y + 1 exactly; double-visiting would double it
        x = ad.parameter(np.array(2.0))
        y = ad.parameter(np.array(-4.0))
        f = ad.add(ad.mul(x, y), x)
        f.backward()
        assert x.grad == pytest.approx(-3.0)
        assert y.grad == pytest.approx(2.0)

    def test_each_backward_rule_runs_once(self):
        calls = {"n": 0}
        x = ad.parameter(np.array([1.0, 2.0]))

        def counting_op(node):
            out_data = node.data * 2.0

            def backward(g):
                calls["n"] += 1
                ad._acc(node, g * 2.0)

            return ad.ValueNode(out_data, (node,), backward)

        mid = counting_op(x)
        out = ad.add(ad.reduce_sum(mid), ad.reduce_sum(ad.mul(mid, mid)))
        out.backward()
        assert calls["n"] == 1

    def test_accumulation_order_independent(self):
        rng = np.random.default_rng(21)
        vals = rng.normal(size=(6, 3))
        x = ad.parameter(vals.copy())
        terms = [ad.reduce_sum(ad.mul(ad.narrow(x, 0, i, i + 1), float(i + 1))) for i in range(6)]
        total = terms[0]
        for t in terms[1:]:
            total = ad.add(total, t)
        total.backward()
        g_forward = x.grad.copy()

        x2 = ad.parameter(vals.copy())
        terms = [ad.reduce_sum(ad.mul(ad.narrow(x2, 0, i, i + 1), float(i + 1))) for i in range(6)]
        total = terms[-1]
        for t in reversed(terms[:-1]):
            total = ad.add(total, t)
        total.backward()
        assert np.max(np.abs(g_forward - x2.grad)) < 1e-10

    def test_forward_backward_deterministic(self):
        rng = np.random.default_rng(2)
        w = ad.parameter(rng.normal(size=(6, 6)))
        x = rng.normal(size=(4, 6))

        def run():
            w.grad = None
            out = ad.mean(ad.relu(ad.matmul(ad.constant(x), w)))
            out.backward()
            return out.data.copy(), w.grad.copy()

        d1, g1 = run()
        d2, g2 = run()
        assert np.array_equal(d1, d2)
        assert np.array_equal(g1, g2)

    def test_constants_do_not_collect_gradients(self):
        c = ad.constant(np.ones((2, 2)))
        w = ad.parameter(np.ones((2, 2)))
        ad.reduce_sum(ad.mul(c, w)).backward()
        assert c.grad is None
        assert np.allclose(w.grad, 1.0)


class TestLstmOps:
    def _params(self, rng, hidden, in_dim=2):
        wx = ad.parameter(rng.normal(size=(in_dim, 4 * hidden)) * 0.4)
        wh = ad.parameter(rng.normal(size=(hidden, 4 * hidden)) * 0.4)
        b = ad.parameter(rng.normal(size=4 * hidden) * 0.1)
        return wx, wh, b

    def test_cell_zero_params_zero_state(self):
        hidden = 4
        wx = ad.constant(np.zeros((2, 4 * hidden)))
        wh = ad.constant(np.zeros((hidden, 4 * hidden)))
        b = ad.constant(np.zeros(4 * hidden))
        h, c = ad.lstm_cell(
            ad.constant(np.ones((3, 2))),
            ad.constant(np.zeros((3, hidden))),
            ad.constant(np.zeros((3, hidden))),
            (wx, wh, b),
        )
        assert np.all(h.data == 0.0)
        assert np.all(c.data == 0.0)

    def test_cell_deterministic(self):
        rng = np.random.default_rng(3)
        params = self._params(rng, 5)
        x = ad.constant(np.zeros((2, 2)))
        h0 = ad.constant(np.zeros((2, 5)))
        c0 = ad.constant(np.zeros((2, 5)))
        h1, _ = ad.lstm_cell(x, h0, c0, params)
        h2, _ = ad.lstm_cell(x, h0, c0, params)
        assert np.array_equal(h1.data, h2.data)

    def test_unrolled_cell_gradcheck(self):
        rng = np.random.default_rng(4)
        wx, wh, b = self._params(rng, 4)
        seq = rng.normal(size=(5, 3, 2))

        def loss():
            h = ad.constant(np.zeros((3, 4)))
            c = ad.constant(np.zeros((3, 4)))
            for t in range(5):
                h, c = ad.lstm_cell(ad.constant(seq[t]), h, c, (wx, wh, b))
            return ad.mean(h)

        assert ad.grad_check(loss, [wx, wh, b]) < 1e-4

    def test_fused_sequence_equals_composed_cells(self):
        rng = np.random.default_rng(6)
        wx, wh, b = self._params(rng, 6)
        seq = rng.normal(size=(7, 4, 2))

        h_cell = ad.constant(np.zeros((4, 6)))
        c_cell = ad.constant(np.zeros((4, 6)))
        stack = []
        for t in range(7):
            h_cell, c_cell = ad.lstm_cell(ad.constant(seq[t]), h_cell, c_cell, (wx, wh, b))
            stack.append(h_cell.data)
        fused = ad.lstm_sequence(ad.constant(seq), wx, wh, b)
        assert np.max(np.abs(np.stack(stack) - fused.data)) < 1e-12

        # gradient parity between the two formulations
        def composed_loss():
            h = ad.constant(np.zeros((4, 6)))
            c = ad.constant(np.zeros((4, 6)))
            for t in range(7):
                h, c = ad.lstm_cell(ad.constant(seq[t]), h, c, (wx, wh, b))
            return ad.mean(h)

        def fused_loss():
            h = ad.lstm_sequence(ad.constant(seq), wx, wh, b)
            return ad.mean(ad.last_step(h, np.full(4, 7)))

        grads = {}
        for name, fn in (("composed", composed_loss), ("fused", fused_loss)):
            for p in (wx, wh, b):
                p.grad = None
            fn().backward()
            grads[name] = [p.grad.copy() for p in (wx, wh, b)]
        for g1, g2 in zip(grads["composed"], grads["fused"]):
            assert np.max(np.abs(g1 - g2)) < 1e-9

    def test_variable_length_batch_matches_loop(self):
        rng = np.random.default_rng(8)
        wx, wh, b = self._params(rng, 5)
        seqs = [rng.normal(size=(n, 2)) for n in (1, 4, 7)]
        from bevtrack.motion import pad_sequences

        padded, lengths = pad_sequences(seqs)
        batched = ad.last_step(ad.lstm_sequence(ad.constant(padded), wx, wh, b), lengths)
        for k, s in enumerate(seqs):
            single = ad.lstm_sequence(ad.constant(s[:, None, :]), wx, wh, b)
            expected = single.data[-1, 0]
            assert np.max(np.abs(batched.data[k] - expected)) < 1e-12
