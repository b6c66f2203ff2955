import numpy as np
import pytest

from cineflow.diffcore import grad_check
from cineflow.errors import ShapeMismatchError
from cineflow.models import (
    CodeTable,
    MotionNet,
    ShapeNet,
    composed_backward,
    composed_forward,
    composed_sdf,
    deform_to_ed,
    phase_tau,
)


@pytest.fixture(scope="module")
def small_nets():
    rng = np.random.default_rng(0)
    shape_net = ShapeNet.create(rng, code_dim=16, hidden=32, n_layers=4, skip_at=2)
    motion_net = MotionNet.create(rng, code_dim=8, hidden=16, n_layers=3)
    return shape_net, motion_net


def _perturbed_motion(motion_net, scale=0.05, seed=1):
    rng = np.random.default_rng(seed)
    net = MotionNet(motion_net.net.copy(), motion_net.code_dim)
    for layer in net.net.layers:
        layer.weight = layer.weight + rng.normal(0, scale, layer.weight.shape)
        layer.bias = layer.bias + rng.normal(0, scale, layer.bias.shape)
    return net


class TestPhaseTau:
    def test_ed_is_zero(self):
        assert phase_tau(0, 25) == 0.0

    def test_normalization(self):
        assert phase_tau(9, 25) == pytest.approx(0.36)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            phase_tau(26, 25)


class TestShapeNet:
    def test_forward_is_pure(self, small_nets):
        shape_net, _ = small_nets
        rng = np.random.default_rng(2)
        code = rng.normal(0, 0.1, 16)
        pts = rng.normal(0, 0.3, (10, 3))
        assert np.array_equal(shape_net.forward(code, pts), shape_net.forward(code, pts))

    def test_code_length_mismatch(self, small_nets):
        shape_net, _ = small_nets
        with pytest.raises(ShapeMismatchError):
            shape_net.forward(np.zeros(7), np.zeros((2, 3)))

    def test_per_point_codes_match_broadcast(self, small_nets):
        shape_net, _ = small_nets
        rng = np.random.default_rng(3)
        code = rng.normal(0, 0.1, 16)
        pts = rng.normal(0, 0.3, (5, 3))
        stacked = np.repeat(code[None, :], 5, axis=0)
        assert np.array_equal(shape_net.forward(code, pts), shape_net.forward(stacked, pts))


class TestMotionNet:
    def test_zero_init_gives_identity_deformation(self, small_nets):
        _, motion_net = small_nets
        rng = np.random.default_rng(4)
        pts = rng.normal(0, 0.4, (20, 3))
        v = motion_net.forward(rng.normal(0, 0.1, 8), pts, 0.5)
        assert np.all(v == 0.0)
        assert np.array_equal(deform_to_ed(motion_net, np.zeros(8), pts, 0.5), pts)

    def test_bias_only_net_is_constant_translation(self, small_nets):
        _, motion_net = small_nets
        net = MotionNet(motion_net.net.copy(), motion_net.code_dim)
        b = np.array([0.1, -0.2, 0.05])
        net.net.layers[-1].bias = b.copy()
        rng = np.random.default_rng(5)
        pts = rng.normal(0, 0.4, (7, 3))
        out = deform_to_ed(net, rng.normal(0, 0.1, 8), pts, 0.3)
        assert np.abs(out - (pts + b)).max() < 1e-12

    def test_motion_input_gradients_match_fd(self, small_nets):
        _, motion_net = small_nets
        net = _perturbed_motion(motion_net)
        rng = np.random.default_rng(6)
        code = rng.normal(0, 0.1, 8)
        x0 = rng.normal(0, 0.3, 3)
        tau = 0.4
        probe = rng.normal(size=3)

        def f(x):
            v, cache = net.forward_cached(code, x[None, :], tau)
            _, _, d_pts = net.backward(cache, probe[None, :], with_param_grads=False)
            return float(v[0] @ probe), d_pts[0]

        res = grad_check(f, x0, h=1e-5)
        assert res.max_rel_error < 1e-5


class TestComposition:
    def test_zero_motion_composed_equals_shape_forward(self, small_nets):
        shape_net, motion_net = small_nets
        rng = np.random.default_rng(7)
        c_s = rng.normal(0, 0.1, 16)
        c_m = rng.normal(0, 0.1, 8)
        pts = rng.normal(0, 0.3, (12, 3))
        composed = composed_sdf(shape_net, motion_net, c_s, c_m, pts, 0.7)
        direct = shape_net.forward(c_s, pts)
        assert np.array_equal(composed, direct)  # bit-level: same code path

    def test_composed_gradients_match_fd(self, small_nets):
        shape_net, motion_net = small_nets
        net_m = _perturbed_motion(motion_net)
        rng = np.random.default_rng(8)
        c_s0 = rng.normal(0, 0.1, 16)
        c_m0 = rng.normal(0, 0.1, 8)
        x0 = rng.normal(0, 0.3, 3)
        tau = 0.4

        def f(theta):
            c_s, c_m, x = theta[:16], theta[16:24], theta[24:]
            sdf, cache = composed_forward(shape_net, net_m, c_s, c_m, x[None, :], tau)
            g = composed_backward(shape_net, net_m, cache, np.ones(1), with_param_grads=False)
            grad = np.concatenate([g.d_code_shape[0], g.d_code_motion[0], g.d_points[0]])
            return float(sdf[0]), grad

        def f_batch(thetas):
            out = np.empty(len(thetas))
            for i, th in enumerate(thetas):
                out[i] = composed_sdf(shape_net, net_m, th[:16], th[16:24], th[24:][None, :], tau)[0]
            return out

        res = grad_check(f, np.concatenate([c_s0, c_m0, x0]), h=1e-5, f_batch=f_batch)
        assert res.max_rel_error < 1e-5

    def test_velocity_upstream_reaches_motion_codes_only(self, small_nets):
        shape_net, motion_net = small_nets
        net_m = _perturbed_motion(motion_net)
        rng = np.random.default_rng(9)
        pts = rng.normal(0, 0.3, (4, 3))
        _, cache = composed_forward(
            shape_net, net_m, rng.normal(0, 0.1, 16), rng.normal(0, 0.1, 8), pts, 0.2
        )
        g = composed_backward(
            shape_net,
            net_m,
            cache,
            np.zeros(4),
            upstream_velocity=np.ones((4, 3)),
            with_param_grads=False,
        )
        assert np.abs(g.d_code_motion).max() > 0
        assert np.all(g.d_code_shape == 0.0)


class TestCodeTable:
    def test_one_shape_code_per_subject(self):
        table = CodeTable(shape_dim=4, motion_dim=3)
        table.add_shape_code("s0", np.zeros(4))
        with pytest.raises(ValueError, match="one per sequence"):
            table.add_shape_code("s0", np.ones(4))

    def test_one_motion_code_per_phase(self):
        table = CodeTable(shape_dim=4, motion_dim=3)
        table.add_motion_code("s0", 0, np.zeros(3))
        with pytest.raises(ValueError):
            table.add_motion_code("s0", 0, np.ones(3))
        table.add_motion_code("s0", 1, np.ones(3))
        assert table.phases("s0") == [0, 1]

    def test_motion_matrix_order(self):
        table = CodeTable(shape_dim=2, motion_dim=2)
        table.add_motion_code("s", 2, np.array([2.0, 2.0]))
        table.add_motion_code("s", 0, np.array([0.0, 0.0]))
        table.add_motion_code("s", 1, np.array([1.0, 1.0]))
        mat = table.motion_matrix("s")
        assert np.array_equal(mat[:, 0], [0.0, 1.0, 2.0])

    def test_init_random_is_seeded(self):
        rng1 = np.random.default_rng(11)
        rng2 = np.random.default_rng(11)
        t1 = CodeTable.init_random(["a", "b"], 3, rng1, shape_dim=4, motion_dim=2)
        t2 = CodeTable.init_random(["a", "b"], 3, rng2, shape_dim=4, motion_dim=2)
        assert np.array_equal(t1.shape_code("a"), t2.shape_code("a"))
        assert np.array_equal(t1.motion_code("b", 2), t2.motion_code("b", 2))
