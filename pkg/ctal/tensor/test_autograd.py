import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from ctal.errors import DimensionError
from ctal.tensor import ComputeGraph, Tensor, backward, concat, default_dtype, where
from ctal.tensor import functional as F
from ctal.tensor.gradcheck import gradcheck

ATOMIC_TOLERANCE = 1e-6


def _leaf(rng, *shape, low=None):
    data = rng.normal(size=shape) if low is None else rng.uniform(low, low + 2.0, size=shape)
    return Tensor(data, requires_grad=True, dtype=np.float64)


def _weighted(out, rng):
    weights = Tensor(rng.normal(size=out.shape), dtype=np.float64)
    return (out * weights).sum()


class TestBackwardBasics:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        x.sum().backward()
        assert_array_equal(x.grad, np.ones((2, 3)))

    def test_squared_norm_gives_two_x(self):
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        (x * x).sum().backward()
        assert_allclose(x.grad, [2.0, -4.0, 6.0])

    def test_matmul_sum_gradient(self):
        rng = np.random.default_rng(0)
        with default_dtype(np.float64):
            a = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
            b = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
            (a @ b).sum().backward()
        assert_allclose(a.grad, np.ones((4, 3)) @ b.data.T)
        assert_allclose(b.grad, a.data.T @ np.ones((4, 3)))

    def test_non_scalar_loss_is_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(DimensionError):
            backward(x * 2.0)

    def test_shared_input_accumulates(self):
        x = Tensor([3.0], requires_grad=True)
        (x * x + x).sum().backward()
        assert_allclose(x.grad, [7.0])

    def test_graph_visits_each_node_once(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = x * 2.0
        loss = (y + y * y).sum()
        graph = ComputeGraph.trace(loss)
        ids = [id(node.tensor) for node in graph.nodes]
        assert len(ids) == len(set(ids))
        positions = {id(node.tensor): node.index for node in graph.nodes}
        for node in graph.nodes:
            assert all(i < node.index for i in node.inputs)
        assert positions[id(x)] < positions[id(y)] < positions[id(loss)]

    def test_accumulate_into_leaves_grad_untouched(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        sink = {}
        backward((x * 3.0).sum(), accumulate_into=sink)
        assert x.grad is None
        assert_allclose(sink[x], [3.0, 3.0])

    def test_repeated_runs_are_bit_identical(self):
        def run():
            rng = np.random.default_rng(5)
            x = Tensor(rng.normal(size=(3, 8)), requires_grad=True)
            w = Tensor(rng.normal(size=(8, 4)), requires_grad=True)
            loss = F.softmax(F.gelu(x @ w)).sum() * 0.5 + (x * x).mean()
            loss.backward()
            return loss.item(), w.grad.tobytes()
        assert run() == run()


class TestFiniteDifferences:
    """
    Every differentiable op against central differences at float64.
    """

    @pytest.fixture
    def rng(self):
        return np.random.default_rng(42)

    def check(self, f, **inputs):
        with default_dtype(np.float64):
            errors = gradcheck(f, inputs)
        for name, error in errors.items():
            assert error < ATOMIC_TOLERANCE, f"{name}: relative error {error}"

    def test_broadcast_arithmetic(self, rng):
        a, b, c = _leaf(rng, 3, 4), _leaf(rng, 4), _leaf(rng, 3, 1, low=1.0)
        weights = rng.normal(size=(3, 4))
        self.check(lambda: (((a + b) * a - b) / c * weights).sum() + (-a).sum(), a=a, b=b, c=c)

    def test_power_exp_log_sqrt(self, rng):
        x = _leaf(rng, 2, 5, low=0.5)
        self.check(lambda: _weighted((x ** 3) + x.exp() + x.log() + x.sqrt(), np.random.default_rng(1)), x=x)

    def test_tanh_abs(self, rng):
        x = _leaf(rng, 4, 3)
        self.check(lambda: _weighted(x.tanh() + x.abs(), np.random.default_rng(1)), x=x)

    def test_batched_matmul(self, rng):
        a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)
        self.check(lambda: _weighted(a @ b, np.random.default_rng(1)), a=a, b=b)

    def test_reshape_transpose_mean(self, rng):
        x = _leaf(rng, 2, 3, 4)
        self.check(lambda: _weighted(x.reshape(6, 4).transpose(1, 0), np.random.default_rng(1))
                   + x.mean(axis=1).sum(), x=x)

    def test_gather_with_repeats(self, rng):
        table = _leaf(rng, 5, 3)
        ids = np.array([[0, 2, 2], [4, 0, 1]])
        self.check(lambda: _weighted(table[ids], np.random.default_rng(1)), table=table)

    def test_concat_and_where(self, rng):
        a, b = _leaf(rng, 2, 3), _leaf(rng, 2, 2)
        condition = np.array([[True, False, True, False, True], [False, False, True, True, False]])
        self.check(lambda: _weighted(where(condition, concat([a, b], axis=-1), concat([b, a], axis=-1)),
                                     np.random.default_rng(1)), a=a, b=b)

    def test_masked_softmax(self, rng):
        x = _leaf(rng, 3, 5)
        mask = np.array([[1, 1, 0, 1, 0], [0, 1, 1, 1, 1], [1, 0, 0, 0, 0]], dtype=bool)
        self.check(lambda: _weighted(F.softmax(x, mask=mask), np.random.default_rng(1)), x=x)

    def test_layer_norm(self, rng):
        x, gamma, beta = _leaf(rng, 2, 3, 6), _leaf(rng, 6), _leaf(rng, 6)
        self.check(lambda: _weighted(F.layer_norm(x, gamma, beta), np.random.default_rng(1)),
                   x=x, gamma=gamma, beta=beta)

    def test_gelu(self, rng):
        x = _leaf(rng, 4, 4)
        self.check(lambda: _weighted(F.gelu(x), np.random.default_rng(1)), x=x)

    def test_masked_max(self, rng):
        x = _leaf(rng, 2, 4, 3)
        mask = np.array([[True, True, False, True], [False, True, True, False]])[..., None]
        self.check(lambda: _weighted(F.masked_max(x, mask, axis=1), np.random.default_rng(1)), x=x)

    def test_cross_entropy(self, rng):
        logits = _leaf(rng, 2, 3, 7)
        targets = np.array([[1, -100, 6], [0, 3, -100]])
        self.check(lambda: F.cross_entropy(logits, targets, normalizer=5.0), logits=logits)

    def test_masked_l1(self, rng):
        prediction = _leaf(rng, 2, 4, 3)
        target = rng.normal(size=(2, 4, 3))
        mask = np.array([[True, False, True, True], [False, False, True, False]])
        self.check(lambda: F.l1_masked(prediction, target, mask), prediction=prediction)


class TestTorchOracle:
    def test_composed_graph_matches_torch(self):
        torch = pytest.importorskip("torch")
        rng = np.random.default_rng(7)
        x0, w0, b0 = rng.normal(size=(2, 4, 6)), rng.normal(size=(6, 6)), rng.normal(size=6)
        g0, beta0 = rng.normal(size=6), rng.normal(size=6)
        targets = np.array([[1, 0, 5, -100], [2, -100, 3, 4]])

        with default_dtype(np.float64):
            x, w, b = (Tensor(v, requires_grad=True) for v in (x0, w0, b0))
            gamma, beta = Tensor(g0, requires_grad=True), Tensor(beta0, requires_grad=True)
            h = F.layer_norm(F.gelu(x @ w + b), gamma, beta)
            scores = h @ h.transpose(0, 2, 1) * (1.0 / np.sqrt(6.0))
            context = F.softmax(scores) @ h
            loss = F.cross_entropy(context, targets)
            loss.backward()

        tx, tw, tb, tg, tbeta = (torch.tensor(v, requires_grad=True) for v in (x0, w0, b0, g0, beta0))
        th = torch.nn.functional.layer_norm(torch.nn.functional.gelu(tx @ tw + tb), (6,), tg, tbeta, eps=1e-5)
        tscores = th @ th.transpose(1, 2) / np.sqrt(6.0)
        tcontext = torch.softmax(tscores, dim=-1) @ th
        tloss = torch.nn.functional.cross_entropy(tcontext.reshape(-1, 6), torch.tensor(targets.reshape(-1)),
                                                  ignore_index=-100)
        tloss.backward()

        assert loss.item() == pytest.approx(tloss.item(), rel=1e-10)
        for ours, theirs in ((x, tx), (w, tw), (b, tb), (gamma, tg), (beta, tbeta)):
            assert_allclose(ours.grad, theirs.grad.numpy(), rtol=1e-8, atol=1e-10)
