"""Solver on stub fields with known solutions, time-grid properties,
guidance algebra, and context clamping."""

import numpy as np
import pytest

from adt import sampler
from adt.errors import DomainError
from adt.fusion import span_mask
from adt.rng import Rng
from adt.tensor import Tensor


class TestSwayTimes:
    def test_endpoints_and_monotonicity(self):
        for coeff in (-1.0, -0.5, 0.0):
            t = sampler.sway_times(16, coeff)
            assert t.shape == (17,)
            assert t[0] == pytest.approx(0.0, abs=1e-12)
            assert t[-1] == pytest.approx(1.0, abs=1e-12)
            assert np.all(np.diff(t) > 0)

    def test_zero_coeff_is_uniform(self):
        t = sampler.sway_times(10, 0.0)
        np.testing.assert_allclose(t, np.linspace(0, 1, 11), atol=1e-12)

    def test_negative_coeff_packs_early(self):
        t = sampler.sway_times(16, -1.0)
        assert t[1] - t[0] < 1.0 / 16.0
        assert t[-1] - t[-2] > 1.0 / 16.0

    def test_default_matches_cosine_form(self):
        # with coefficient -1 the warp reduces to t = 1 - cos(pi*u/2)
        u = np.linspace(0, 1, 9)
        np.testing.assert_allclose(sampler.sway_times(8, -1.0),
                                   1.0 - np.cos(np.pi * u / 2.0), atol=1e-12)

    def test_rejects_bad_steps(self):
        with pytest.raises(DomainError):
            sampler.sway_times(0)


class TestIntegrate:
    def test_constant_field_is_exact(self, rng):
        # Euler is exact for dx/dt = c on any grid: x(1) = x0 + c
        x0 = rng.normal((6, 4))
        c = rng.normal((6, 4))
        for steps in (1, 7, 32):
            out = sampler.integrate(lambda x, t: c, x0, steps)
            np.testing.assert_allclose(out, x0 + c, rtol=1e-6)

    def test_linear_field_first_order_convergence(self, rng):
        # dx/dt = -x has solution x(1) = x0 / e; Euler error ~ 1/n
        x0 = rng.normal((5,)) + 3.0
        exact = x0 * np.exp(-1.0)
        errs = []
        for steps in (16, 32, 64):
            out = sampler.integrate(lambda x, t: -x, x0, steps, sway=0.0)
            errs.append(np.abs(out - exact).max())
        assert errs[2] < 0.02 * np.abs(exact).max()
        ratio = errs[0] / errs[2]
        assert 3.0 < ratio < 5.5  # halving h twice ~ quarter of the error

    def test_time_argument_passed(self):
        seen = []

        def field(x, t):
            seen.append(t)
            return np.zeros_like(x)

        sampler.integrate(field, np.zeros(2), 4, sway=0.0)
        np.testing.assert_allclose(seen, [0.0, 0.25, 0.5, 0.75], atol=1e-12)

    def test_post_step_applied(self):
        out = sampler.integrate(lambda x, t: np.ones_like(x), np.zeros(3), 5,
                                sway=0.0, post_step=lambda x, t: x * 0.0)
        np.testing.assert_array_equal(out, np.zeros(3))


class _StubModel:
    """Velocity depends only on which condition streams are present."""

    def __init__(self, v_full, v_text, v_uncond, shape):
        self.by_branch = {
            (True, True): v_full, (False, True): v_text,
            (False, False): v_uncond, (True, False): v_uncond,
        }
        self.shape = shape
        self.calls = []

    def __call__(self, x_t, t, mel_ctx, mask, video=None, text_ids=None,
                 want_ctc=False):
        branch = (video is not None, text_ids is not None)
        self.calls.append(branch)
        return Tensor(np.full(self.shape, self.by_branch[branch],
                              dtype=np.float32)), []


class TestGuidance:
    def _run(self, s_text, s_video, video="v", text="t"):
        model = _StubModel(1.0, 10.0, 100.0, (4, 3))
        v, forwards = sampler.guided_velocity(
            model, np.zeros((4, 3)), 0.5, np.zeros((4, 3)),
            np.ones(4, dtype=np.float32), video, text, s_text, s_video)
        return v[0, 0], forwards, model.calls

    @pytest.mark.parametrize("s_text,s_video", [
        (0.0, 0.0), (2.0, 2.0), (5.0, 2.0), (5.0, 5.0),
    ])
    def test_combination_algebra(self, s_text, s_video):
        value, _, _ = self._run(s_text, s_video)
        expected = 1.0 + s_video * (1.0 - 10.0) + s_text * (10.0 - 100.0)
        assert value == pytest.approx(expected)

    def test_forward_counts(self):
        assert self._run(0.0, 0.0)[1] == 1
        assert self._run(0.0, 2.0)[1] == 2   # no unconditional branch needed
        assert self._run(5.0, 0.0)[1] == 3
        assert self._run(5.0, 2.0)[1] == 3
        assert self._run(2.0, 2.0)[1] == 2   # equal scales drop a branch
        assert self._run(5.0, 5.0)[1] == 2

    def test_equal_scales_skip_the_text_branch(self):
        value, forwards, calls = self._run(2.0, 2.0)
        assert calls == [(True, True), (False, False)]
        # exactly the single-scale form v_full + s * (v_full - v_uncond)
        assert value == pytest.approx(1.0 + 2.0 * (1.0 - 100.0))

    def test_missing_video_collapses_video_term(self):
        value, forwards, _ = self._run(0.0, 7.0, video=None)
        # v_full == v_text when there is no video stream; the term vanishes
        assert value == pytest.approx(10.0)
        assert forwards == 1

    def test_missing_text_collapses_text_term(self):
        value, forwards, calls = self._run(3.0, 0.0, text=None)
        # without text, the text branch and unconditional branch coincide
        assert value == pytest.approx(100.0)
        assert forwards == 2  # full (video-only) + shared uncond branch


class _EchoModel:
    """Pulls the state toward a target so sampling has a fixed point."""

    def __init__(self, target):
        self.target = target

    def __call__(self, x_t, t, mel_ctx, mask, video=None, text_ids=None,
                 want_ctc=False):
        x = x_t if isinstance(x_t, np.ndarray) else x_t.data
        return Tensor((self.target - x).astype(np.float32)), []


class TestSample:
    def test_context_rows_exact_and_masked_rows_move(self):
        rng = Rng(0)
        mel = rng.normal((12, 6)).astype(np.float32)
        mask = span_mask(12, 3, 9)
        target = np.zeros((12, 6))
        out = sampler.sample(_EchoModel(target), Rng(5), mel, mask, n_steps=8)
        np.testing.assert_array_equal(out[mask == 0.0], mel[mask == 0.0])
        assert np.abs(out[mask == 1.0]).max() < np.abs(
            Rng(5).split("noise").normal((12, 6))[mask == 1.0]).max()

    def test_deterministic_given_seed(self):
        rng = Rng(1)
        mel = rng.normal((10, 4)).astype(np.float32)
        mask = span_mask(10, 0, 10)
        a = sampler.sample(_EchoModel(np.ones((10, 4))), Rng(7), mel, mask,
                           n_steps=6)
        b = sampler.sample(_EchoModel(np.ones((10, 4))), Rng(7), mel, mask,
                           n_steps=6)
        np.testing.assert_array_equal(a, b)
        c = sampler.sample(_EchoModel(np.ones((10, 4))), Rng(8), mel, mask,
                           n_steps=6)
        assert not np.array_equal(a, c)

    def test_more_steps_approach_the_exact_solution(self):
        # dx/dt = target - x from noise x0 has x(1) = target + (x0 - target)/e
        mel = np.zeros((8, 4), dtype=np.float32)
        mask = span_mask(8, 0, 8)
        target = np.full((8, 4), 2.0)
        x0 = Rng(3).split("noise").normal((8, 4)).astype(np.float32)
        exact = target + (x0 - target) * np.exp(-1.0)
        errs = []
        for steps in (2, 8, 32):
            out = sampler.sample(_EchoModel(target), Rng(3), mel, mask,
                                 n_steps=steps, sway=0.0)
            errs.append(np.abs(out - exact).mean())
        assert errs[2] < errs[1] < errs[0]
        assert errs[2] < 0.05
