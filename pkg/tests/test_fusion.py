import mpmath
import numpy as np
import pytest

from lvic.errors import ConfigurationError
from lvic.fusion import (
    FusionParams,
    embed,
    fusion_backward,
    fusion_forward,
    gelu,
    gelu_grad,
    init_params,
    sgd_step,
)
from lvic.painter import PaintLayout
from reference import _gelu, central_difference, naive_forward, naive_loss, params_as_lists, relative_error


def random_params(rng, d, e, scale=1.0):
    p = init_params(d, e, seed=int(rng.integers(2**31)))
    return p.map(lambda k, v: v * scale + rng.normal(scale=0.1, size=v.shape))


def painted_row(rng, c, d):
    """A painted row with valid depth: u, v >= 0 and z_c > 0."""
    row = np.empty(c + 4 + d)
    row[:c] = rng.normal(scale=5.0, size=c)
    row[c:c + 2] = rng.uniform(0, 1600, size=2) / 400.0
    row[c + 2] = rng.uniform(1.0, 40.0) / 10.0
    row[c + 3] = rng.normal()
    row[c + 4:] = rng.normal(size=d)
    return row


def unpainted_row(rng, c, d):
    row = np.full(c + 4 + d, -1.0)
    row[:c] = rng.normal(scale=5.0, size=c)
    return row


def no_depth_row(rng, c, d):
    row = painted_row(rng, c, d)
    row[c + 2:c + 4] = -1.0
    return row


class TestGelu:
    def test_zero(self):
        assert gelu(0.0) == 0.0

    def test_asymptote(self):
        assert abs(gelu(10.0) - 10.0) < 1e-9

    def test_one_matches_independent_erf(self):
        mpmath.mp.dps = 30
        want = float(1 * 0.5 * (1 + mpmath.erf(1 / mpmath.sqrt(2))))
        assert abs(gelu(1.0) - want) < 1e-15
        assert abs(gelu(1.0) - 0.8413447461) < 1e-10

    def test_negative_tail(self):
        assert abs(gelu(-10.0)) < 1e-20

    def test_derivative_matches_finite_difference(self):
        x = np.linspace(-6, 6, 121)
        h = 1e-6
        fd = (gelu(x + h) - gelu(x - h)) / (2 * h)
        assert np.abs(fd - gelu_grad(x)).max() < 1e-8


class TestForward:
    def test_zero_params_give_zero(self, rng):
        layout = PaintLayout(4, 16)
        for row in (painted_row(rng, 4, 16), unpainted_row(rng, 4, 16)):
            assert (fusion_forward(FusionParams.zeros(16, 16), row, layout) == 0.0).all()

    def test_default_output_width(self, rng):
        p = init_params()
        assert fusion_forward(p, painted_row(rng, 3, 16), PaintLayout(3, 16)).shape == (16,)

    def test_unpainted_row_ignores_texture(self, rng):
        layout = PaintLayout(5, 16)
        p = random_params(rng, 16, 16)
        row = unpainted_row(rng, 5, 16)
        base = fusion_forward(p, row, layout)
        for _ in range(20):
            other = row.copy()
            other[5 + 4:] = rng.normal(scale=10, size=16)
            other[5 + 2:5 + 4] = rng.normal(scale=10, size=2)
            assert fusion_forward(p, other, layout).tobytes() == base.tobytes()

    def test_unpainted_row_depends_on_position(self, rng):
        layout = PaintLayout(3, 4)
        p = random_params(rng, 4, 8)
        row = unpainted_row(rng, 3, 4)
        moved = row.copy()
        moved[0] += 1.0
        assert not np.array_equal(fusion_forward(p, row, layout), fusion_forward(p, moved, layout))

    def test_missing_depth_ignores_discrepancy_channel(self, rng):
        layout = PaintLayout(3, 6)
        p = random_params(rng, 6, 5)
        row = no_depth_row(rng, 3, 6)
        a = fusion_forward(p, row, layout)
        row2 = row.copy()
        row2[3 + 3] = 5.0
        assert fusion_forward(p, row2, layout).tobytes() == a.tobytes()

    def test_matches_reference_on_100_pairs(self, rng):
        worst = 0.0
        makers = (painted_row, unpainted_row, no_depth_row)
        for i in range(100):
            c, d, e = int(rng.integers(3, 9)), int(rng.integers(1, 33)), int(rng.integers(1, 33))
            p = random_params(rng, d, e)
            row = makers[i % 3](rng, c, d)
            got = fusion_forward(p, row, PaintLayout(c, d))
            want = np.array(naive_forward(params_as_lists(p), row, c, d))
            worst = max(worst, float(np.abs(got - want).max()))
        assert worst < 1e-12

    def test_batch_matches_rows(self, rng):
        layout = PaintLayout(4, 8)
        p = random_params(rng, 8, 16)
        rows = np.stack([painted_row(rng, 4, 8) for _ in range(30)] + [unpainted_row(rng, 4, 8)])
        batch = embed(p, rows, layout)
        for r, b in zip(rows, batch):
            np.testing.assert_allclose(fusion_forward(p, r, layout), b, rtol=0, atol=1e-14)

    def test_layout_mismatch(self, rng):
        with pytest.raises(ConfigurationError):
            fusion_forward(init_params(16), painted_row(rng, 3, 8), PaintLayout(3, 8))

    def test_row_width_mismatch(self, rng):
        with pytest.raises(ConfigurationError):
            fusion_forward(init_params(8), painted_row(rng, 3, 8)[:-1], PaintLayout(3, 8))

    def test_homogeneity_of_linear_path(self, rng):
        layout = PaintLayout(3, 8)
        p = random_params(rng, 8, 6)
        zero = np.zeros(layout.width)
        bias = fusion_forward(p, zero, layout, activation="identity")
        row = painted_row(rng, 3, 8)
        base = fusion_forward(p, row, layout, activation="identity") - bias
        for alpha in (0.5, 2.0, 7.25):
            scaled = fusion_forward(p, alpha * row, layout, activation="identity") - bias
            np.testing.assert_allclose(scaled, alpha * base, rtol=1e-12, atol=1e-12)


def check_gradients(p, row, layout, upstream, activation="gelu"):
    """Largest relative error between analytic and central-difference gradients.

    The finite differences are taken of the independent reference forward
    pass, not of the implementation under test.
    """
    grads, g_row = fusion_backward(p, row, layout, upstream, activation)
    act = _gelu if activation == "gelu" else (lambda x: x)
    lists = params_as_lists(p)
    up = [float(u) for u in upstream]
    c, d = layout.c, layout.d
    worst = 0.0
    for name, value in p.arrays().items():

        def loss(x, name=name):
            return naive_loss({**lists, name: x.tolist()}, row.tolist(), c, d, up, act)

        fd = central_difference(loss, value)
        worst = max(worst, float(relative_error(getattr(grads, name), fd).max()))
    fd_row = central_difference(lambda x: naive_loss(lists, x.tolist(), c, d, up, act), row)
    worst = max(worst, float(relative_error(g_row, fd_row).max()))
    return worst


class TestBackward:
    def test_zero_upstream(self, rng):
        layout = PaintLayout(4, 16)
        p = random_params(rng, 16, 16)
        grads, g_row = fusion_backward(p, painted_row(rng, 4, 16), layout, np.zeros(16))
        assert all((v == 0).all() for v in grads.arrays().values())
        assert (g_row == 0).all()

    def test_fuse_weight_gradient_is_input_activation(self, rng):
        layout = PaintLayout(3, 2)
        p = random_params(rng, 2, 9)
        row = painted_row(rng, 3, 2)
        for k in range(9):
            up = np.zeros(9)
            up[k] = 1.0
            grads, _ = fusion_backward(p, row, layout, up, activation="identity")
            # output k = fuse_w[k] . fused_in + fuse_b[k]; its weight gradient is fused_in
            geo = p.point2_w @ (p.point1_w @ row[:3] + p.point1_b) + p.point2_b
            tex = p.visual2_w @ (p.visual1_w @ row[7:] + p.visual1_b) + p.visual2_b
            fused_in = np.concatenate([geo, tex, [row[6]]])
            np.testing.assert_allclose(grads.fuse_w[k], fused_in, rtol=1e-13, atol=1e-13)
            assert (np.delete(grads.fuse_w, k, axis=0) == 0).all()
            assert grads.fuse_b.tolist() == up.tolist()

    def test_ignored_channels_have_zero_gradient(self, rng):
        layout = PaintLayout(5, 4)
        p = random_params(rng, 4, 7)
        _, g_row = fusion_backward(p, painted_row(rng, 5, 4), layout, rng.normal(size=7))
        assert (g_row[3:5] == 0).all()  # pass-through extras
        assert (g_row[5:8] == 0).all()  # u, v, z_c
        assert g_row[8] != 0.0

    @pytest.mark.parametrize("maker", [painted_row, unpainted_row, no_depth_row])
    def test_finite_differences(self, rng, maker):
        c, d, e = 4, 16, 16
        layout = PaintLayout(c, d)
        for _ in range(3):
            p = random_params(rng, d, e)
            assert check_gradients(p, maker(rng, c, d), layout, rng.normal(size=e)) < 1e-5

    def test_finite_differences_identity(self, rng):
        layout = PaintLayout(3, 5)
        p = random_params(rng, 5, 3)
        assert check_gradients(p, painted_row(rng, 3, 5), layout, rng.normal(size=3), "identity") < 1e-5


class TestSgd:
    def test_zero_learning_rate(self, rng):
        p = random_params(rng, 16, 16)
        g = random_params(rng, 16, 16)
        q = sgd_step(p, g, 0.0)
        for k, v in p.arrays().items():
            assert np.array_equal(q.arrays()[k], v)

    def test_unit_step_from_zero(self, rng):
        g = random_params(rng, 8, 4)
        q = sgd_step(FusionParams.zeros(8, 4), g, 1.0)
        for k, v in g.arrays().items():
            assert np.array_equal(q.arrays()[k], -v)

    def test_quadratic_toy_descends(self, rng):
        # loss(p) = 0.5 * sum ||p - target||^2 has gradient p - target
        target = random_params(rng, 16, 16)
        p = random_params(rng, 16, 16)

        def loss(q):
            return sum(0.5 * float(((v - target.arrays()[k]) ** 2).sum()) for k, v in q.arrays().items())

        losses = [loss(p)]
        for _ in range(2):
            grad = p.map(lambda k, v: v - target.arrays()[k])
            p = sgd_step(p, grad, 0.5)
            losses.append(loss(p))
        assert losses[0] > losses[1] > losses[2]

    def test_embedding_loss_descends(self, rng):
        layout = PaintLayout(3, 16)
        p = init_params(16, 16, seed=3)
        row = painted_row(rng, 3, 16)
        target = rng.normal(size=16)
        losses = []
        for _ in range(5):
            out = fusion_forward(p, row, layout)
            losses.append(0.5 * float(((out - target) ** 2).sum()))
            grads, _ = fusion_backward(p, row, layout, out - target)
            p = sgd_step(p, grads, 1e-2)
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            sgd_step(init_params(16), init_params(8), 0.1)


def test_reference_gelu_agrees():
    for x in (-3.0, -0.5, 0.0, 0.7, 4.0):
        assert abs(gelu(x) - _gelu(x)) < 1e-15
