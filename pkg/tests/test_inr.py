import numpy as np
import pytest

from interlaced_inr.inr import (
    AdamState,
    EncodingConfig,
    InrConfig,
    InrModel,
    adam_step,
    downsample,
    encode,
    full_grid,
    inr_backward,
    inr_forward,
    jittered_grid,
    load_checkpoint,
    pixel_centers,
    save_checkpoint,
    tv_axial,
    tv_spatial,
    tv_temporal,
)

SEEDS = range(20)


def fd_gradient(f, x, h=1e-5):
    """Fourth-order central differences of a scalar ``f`` w.r.t. the array ``x`` (modified in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        x0 = flat[i]
        vals = []
        for s in (2, 1, -1, -2):
            flat[i] = x0 + s * h
            vals.append(f())
        flat[i] = x0
        g.reshape(-1)[i] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-3 * np.abs(b).max())))


def small_model(seed, hidden=4, n_layers=2, input_dim=3, perturb_mod=True):
    cfg = InrConfig(EncodingConfig(3, 2.0, input_dim), hidden=hidden, n_layers=n_layers, seed=seed, dtype="float64")
    m = InrModel(cfg)
    if perturb_mod:
        rng = np.random.default_rng(seed + 100)
        for sl in m.modulation_slices():
            m.params[sl] += rng.normal(0.0, 0.1, 4)
    return m


class TestNetwork:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradients_match_finite_differences(self, seed):
        m = small_model(seed)
        rng = np.random.default_rng(seed)
        feats = m.encode(rng.uniform(-1, 1, (5, 3)))
        g = rng.standard_normal(5)
        _, cache = inr_forward(m, feats)
        analytic = inr_backward(m, cache, g)
        numeric = fd_gradient(lambda: float(g @ inr_forward(m, feats, keep_cache=False)[0]), m.params)
        assert rel_err(analytic, numeric) <= 1e-6
        mods = np.concatenate(m.modulation_slices())
        assert rel_err(analytic[mods], numeric[mods]) <= 1e-6

    def test_zero_upstream_gradient(self):
        m = small_model(0)
        _, cache = inr_forward(m, m.encode(np.zeros((3, 3))))
        assert not np.any(inr_backward(m, cache, np.zeros(3)))

    def test_d_gradient_is_downstream_sum(self):
        m = small_model(1, n_layers=1)
        rng = np.random.default_rng(0)
        feats = m.encode(rng.uniform(-1, 1, (7, 3)))
        g = rng.standard_normal(7)
        _, cache = inr_forward(m, feats)
        grad = inr_backward(m, cache, g)
        d_index = m.modulation_slices()[0][3]
        assert grad[d_index] == pytest.approx(g.sum() * m.w_out.sum(), rel=1e-12)

    def test_symbolic_oracle(self):
        cfg = InrConfig(EncodingConfig(1, 1.0, 2), hidden=4, n_layers=1, omega0=30.0, seed=7, dtype="float64")
        m = InrModel(cfg)
        m.params[m.modulation_slices()[0]] = (0.7, 1.2, 0.3, -0.1)
        v = np.array([[0.25, -0.5]])
        proj = 2 * np.pi * (v @ m.B.T)[0, 0]
        feats = [np.cos(proj), np.sin(proj)]
        W, bias = m.layers[0]["W"], m.layers[0]["bias"]
        expected = m.b_out[0]
        for j in range(4):
            pre = W[j, 0] * feats[0] + W[j, 1] * feats[1] + bias[j]
            expected += m.w_out[j] * (0.7 * np.sin(1.2 * 30.0 * pre + 0.3) - 0.1)
        assert abs(m(v)[0] - expected) <= 1e-12

    def test_default_modulation_is_plain_sine_network(self, rng):
        m = small_model(3, hidden=8, n_layers=3, perturb_mod=False)
        feats = m.encode(rng.uniform(-1, 1, (20, 3)))
        h = feats
        for layer in m.layers:
            h = np.sin(30.0 * (h @ layer["W"].T + layer["bias"]))
        assert np.max(np.abs(inr_forward(m, feats)[0] - (h @ m.w_out + m.b_out[0]))) <= 1e-12

    def test_zero_amplitude_gives_constant(self, rng):
        m = small_model(4)
        last = m.modulation_slices()[-1]
        m.params[last[0]] = 0.0
        m.params[last[3]] = 2.5
        out = m(rng.uniform(-1, 1, (10, 3)))
        np.testing.assert_allclose(out, 2.5 * m.w_out.sum() + m.b_out[0], rtol=1e-14)

    def test_deterministic(self, rng):
        coords = rng.uniform(-1, 1, (6, 3))
        a, b = InrModel(InrConfig(seed=5, hidden=16)), InrModel(InrConfig(seed=5, hidden=16))
        np.testing.assert_array_equal(a.B, b.B)
        np.testing.assert_array_equal(a(coords), b(coords))

    def test_time_scale_only_touches_time_column(self):
        a = InrModel(InrConfig(EncodingConfig(8, 5.0, 3, 1.0), hidden=4, seed=2))
        b = InrModel(InrConfig(EncodingConfig(8, 5.0, 3, 0.1), hidden=4, seed=2))
        np.testing.assert_array_equal(a.B[:, :2], b.B[:, :2])
        np.testing.assert_allclose(b.B[:, 2], 0.1 * a.B[:, 2], rtol=1e-6)

    def test_rejects_non_finite_params(self):
        m = small_model(0)
        m.params[0] = np.nan
        with pytest.raises(FloatingPointError):
            m(np.zeros((1, 3)))

    def test_rejects_missing_cache(self):
        m = small_model(0)
        _, cache = inr_forward(m, m.encode(np.zeros((2, 3))), keep_cache=False)
        with pytest.raises(ValueError):
            inr_backward(m, cache, np.ones(2))

    def test_checkpoint_round_trip(self, tmp_path, rng):
        m = InrModel(InrConfig(EncodingConfig(16, 3.0, 3, 0.5), hidden=8, n_layers=2, seed=11))
        m.params[m.modulation_slices()[1]] = (0.9, 1.1, 0.2, 0.05)
        save_checkpoint(m, tmp_path / "m.inrckpt", {"iteration": 3})
        back, extra = load_checkpoint(tmp_path / "m.inrckpt")
        assert extra == {"iteration": 3} and back.cfg == m.cfg
        np.testing.assert_array_equal(back.params, m.params)
        coords = rng.uniform(-1, 1, (5, 3))
        np.testing.assert_array_equal(back(coords), m(coords))

    def test_checkpoint_rejects_foreign_file(self, tmp_path):
        (tmp_path / "x").write_bytes(b"not a checkpoint at all")
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "x")


class TestEncode:
    def test_origin(self):
        B = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(encode(np.zeros((1, 3)), B), [[1.0] * 5 + [0.0] * 5])

    def test_bounded(self, rng):
        f = encode(rng.uniform(-1, 1, (50, 3)), rng.normal(0, 10, (16, 3)))
        assert np.all(np.abs(f) <= 1.0)

    def test_rejects_wrong_dim(self):
        with pytest.raises(ValueError):
            encode(np.zeros((2, 2)), np.zeros((4, 3)))


def _tv_fd_case(seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((5, 6)), rng.standard_normal((5, 6)), rng.standard_normal((3, 4, 5))


class TestTv:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradients(self, seed):
        img, prev, vol = _tv_fd_case(seed)
        eps = 1e-2
        for fn, x, args in (
            (tv_spatial, img, ()),
            (tv_temporal, img, (prev,)),
            (tv_axial, vol, ()),
        ):
            loss, grad = fn(x, *args, eps=eps)
            numeric = fd_gradient(lambda: fn(x, *args, eps=eps)[0], x, h=1e-4)
            assert rel_err(grad, numeric) <= 1e-6, fn.__name__
        _, grad3 = tv_spatial(vol, eps=eps)
        assert rel_err(grad3, fd_gradient(lambda: tv_spatial(vol, eps=eps)[0], vol, h=1e-4)) <= 1e-6

    def test_constants_are_zero(self):
        c = np.full((6, 6), 1.7)
        for loss, grad in (tv_spatial(c), tv_temporal(c, c), tv_axial(np.stack([c, c]))):
            assert loss == 0.0 and not np.any(grad)

    def test_step_edge(self):
        n, h = 16, 0.8
        img = np.zeros((n, n))
        img[:, n // 2 :] = h
        assert tv_spatial(img, eps=1e-12)[0] == pytest.approx((n - 1) * h / n**2, rel=1e-9)

    def test_constant_offset(self, rng):
        a = rng.random((4, 4))
        assert tv_temporal(a + 0.3, a, eps=1e-12)[0] == pytest.approx(0.3, rel=1e-9)

    def test_temporal_gradient_ignores_previous(self, rng):
        a, b = rng.random((4, 4)), rng.random((4, 4))
        _, g = tv_temporal(a, b)
        assert g.shape == a.shape

    def test_nonnegative(self, rng):
        x = rng.standard_normal((3, 5, 5))
        assert tv_spatial(x)[0] >= 0 and tv_axial(x)[0] >= 0 and tv_temporal(x[0], x[1])[0] >= 0

    def test_validation(self):
        with pytest.raises(ValueError):
            tv_spatial(np.zeros((1, 5)))
        with pytest.raises(ValueError):
            tv_temporal(np.zeros((2, 2)), np.zeros((3, 3)))
        assert tv_axial(np.zeros((1, 3, 3)))[0] == 0.0


class TestAdam:
    def test_zero_gradient(self):
        p = np.array([1.0, -2.0])
        st = AdamState.for_params(p)
        adam_step(st, p, np.zeros(2))
        np.testing.assert_array_equal(p, [1.0, -2.0])

    def test_first_step_is_sign(self):
        p = np.array([0.0, 0.0])
        st = AdamState.for_params(p, lr=0.01)
        adam_step(st, p, np.array([3.0, -1e-3]))
        np.testing.assert_allclose(p, [-0.01, 0.01], rtol=1e-4)

    def test_quadratic(self):
        p = np.array([1.0])
        st = AdamState.for_params(p, lr=0.1)
        for _ in range(100):
            adam_step(st, p, 2 * p)
        assert abs(p[0]) < 0.1

    def test_decay_and_errors(self):
        p = np.zeros(2)
        st = AdamState.for_params(p, lr=1.0)
        st.decay(0.5)
        assert st.lr == 0.5
        with pytest.raises(FloatingPointError):
            adam_step(st, p, np.array([np.inf, 0.0]))
        with pytest.raises(ValueError):
            adam_step(st, p, np.zeros(3))


class TestSampling:
    def test_pixel_lattice(self):
        pts = full_grid(4, 6)
        np.testing.assert_allclose(np.unique(pts[:, 0]), pixel_centers(6))
        np.testing.assert_allclose(np.unique(pts[:, 1]), pixel_centers(4))
        assert pts.shape == (24, 2)

    def test_jitter_stays_in_cells(self, rng):
        base = jittered_grid(8, 8, 2, jitter=False)
        pts = jittered_grid(8, 8, 2, rng)
        assert np.all(np.abs(pts) <= 1.0)
        assert np.all(np.abs(pts - base) <= 2.0 / 8 + 1e-12)

    def test_jitter_mean(self):
        s, n, runs = 2, 4, 10_000
        base = jittered_grid(n, n, s, jitter=False)
        acc = np.zeros_like(base)
        for seed in range(runs):
            acc += jittered_grid(n, n, s, seed)
        sigma = (s / n) / np.sqrt(3.0) / np.sqrt(runs)
        assert np.all(np.abs(acc / runs - base) <= 3 * sigma)

    def test_rejects_non_divisor(self):
        with pytest.raises(ValueError):
            jittered_grid(6, 6, 4)

    def test_downsample(self):
        img = np.arange(16.0).reshape(4, 4)
        np.testing.assert_array_equal(downsample(img, 2), [[2.5, 4.5], [10.5, 12.5]])
        assert downsample(img, 1) is img
