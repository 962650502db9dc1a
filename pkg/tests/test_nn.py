"""Layer primitives: shapes, parameter collection, and gradients through
whole modules via the directional finite-difference oracle."""

import numpy as np
import pytest

from adt import nn
from adt.errors import DimensionError, FormatError
from adt.rng import Rng
from adt.tensor import Tensor
from conftest import directional_gradcheck


class TestParamCollection:
    def test_nested_names(self):
        rng = Rng(0)
        ff = nn.FeedForward(rng, 8, 16)
        names = set(ff.params())
        assert names == {"up.w", "up.b", "down.w", "down.b"}

    def test_list_submodules_get_indices(self):
        class Stack(nn.Module):
            def __init__(self):
                rng = Rng(0)
                self.layers = [nn.Linear(rng.split(i), 4, 4) for i in range(2)]

        names = set(Stack().params())
        assert names == {"layers.0.w", "layers.0.b", "layers.1.w", "layers.1.b"}

    def test_load_roundtrip(self):
        a = nn.FeedForward(Rng(1), 4, 8)
        b = nn.FeedForward(Rng(2), 4, 8)
        b.load({k: p.data for k, p in a.params().items()})
        for k in a.params():
            np.testing.assert_array_equal(a.params()[k].data, b.params()[k].data)

    def test_load_rejects_missing_and_misshapen(self):
        ff = nn.FeedForward(Rng(1), 4, 8)
        with pytest.raises(FormatError):
            ff.load({})
        bad = {k: p.data for k, p in ff.params().items()}
        bad["up.w"] = np.zeros((2, 2))
        with pytest.raises(FormatError):
            ff.load(bad)

    def test_n_params(self):
        lin = nn.Linear(Rng(0), 3, 5)
        assert lin.n_params() == 3 * 5 + 5


class TestLinear:
    def test_shapes(self):
        lin = nn.Linear(Rng(0), 6, 4)
        out = lin(Tensor(np.zeros((10, 6))))
        assert out.shape == (10, 4)

    def test_zero_init(self):
        lin = nn.Linear(Rng(0), 6, 4, zero_init=True)
        out = lin(Tensor(np.ones((3, 6))))
        np.testing.assert_array_equal(out.data, np.zeros((3, 4)))

    def test_grad(self, f64):
        lin = nn.Linear(Rng(3), 5, 4)
        x = Tensor(Rng(9).normal((7, 5)), dtype=np.float64)
        directional_gradcheck(lambda: (lin(x) * lin(x)).sum(), lin.params())


class TestLayerNormModule:
    def test_affine_identity_at_init(self, rng):
        ln = nn.LayerNorm(8)
        x = Tensor(rng.normal((5, 8)))
        out = ln(x).data
        np.testing.assert_allclose(out.mean(axis=-1), np.zeros(5), atol=1e-6)

    def test_grad(self, f64):
        ln = nn.LayerNorm(6)
        x = Tensor(Rng(4).normal((3, 6)), dtype=np.float64)
        w = Tensor(Rng(5).normal((3, 6)), dtype=np.float64)
        directional_gradcheck(lambda: (ln(x) * w).sum(), ln.params(), rtol=1e-3)


class TestAttention:
    def test_self_attention_shape(self):
        attn = nn.MultiHeadAttention(Rng(0), 16, 4)
        out = attn(Tensor(np.random.default_rng(0).normal(size=(9, 16))))
        assert out.shape == (9, 16)

    def test_cross_attention_uses_kv_length(self):
        attn = nn.MultiHeadAttention(Rng(0), 16, 4, kv_dim=8)
        q = Tensor(np.zeros((9, 16)))
        kv = Tensor(np.zeros((5, 8)))
        assert attn(q, kv).shape == (9, 16)

    def test_dim_must_divide(self):
        with pytest.raises(DimensionError):
            nn.MultiHeadAttention(Rng(0), 10, 3)

    def test_grad(self, f64):
        attn = nn.MultiHeadAttention(Rng(7), 8, 2)
        x = Tensor(Rng(8).normal((5, 8)), dtype=np.float64)
        directional_gradcheck(lambda: (attn(x) * x).sum(), attn.params(),
                              rtol=1e-3)

    def test_cross_grad(self, f64):
        attn = nn.MultiHeadAttention(Rng(7), 8, 2, kv_dim=6)
        q = Tensor(Rng(8).normal((5, 8)), dtype=np.float64)
        kv = Tensor(Rng(9).normal((3, 6)), dtype=np.float64)
        directional_gradcheck(lambda: (attn(q, kv) * q).sum(), attn.params(),
                              rtol=1e-3)


class TestPositions:
    def test_sinusoid_shape_and_bounds(self):
        table = nn.sinusoidal_positions(12, 16)
        assert table.shape == (12, 16)
        assert np.abs(table).max() <= 1.0 + 1e-12

    def test_first_row_is_sin0_cos0(self):
        table = nn.sinusoidal_positions(4, 8)
        np.testing.assert_allclose(table[0, 0::2], np.zeros(4), atol=1e-12)
        np.testing.assert_allclose(table[0, 1::2], np.ones(4), atol=1e-12)

    def test_rows_distinct(self):
        table = nn.sinusoidal_positions(50, 16)
        dots = table @ table.T
        # every row most similar to itself
        assert np.all(np.argmax(dots, axis=1) == np.arange(50))

    def test_odd_dim_rejected(self):
        with pytest.raises(DimensionError):
            nn.sinusoidal_positions(4, 7)


class TestTimeEmbedding:
    def test_shape_and_determinism(self):
        e1 = nn.timestep_embedding(0.3, 32)
        e2 = nn.timestep_embedding(0.3, 32)
        assert e1.shape == (32,)
        np.testing.assert_array_equal(e1, e2)

    def test_distinguishes_times(self):
        a = nn.timestep_embedding(0.1, 32)
        b = nn.timestep_embedding(0.9, 32)
        assert np.linalg.norm(a - b) > 0.5

    def test_bounded(self):
        for t in (0.0, 0.25, 1.0):
            assert np.abs(nn.timestep_embedding(t, 64)).max() <= 1.0 + 1e-12
