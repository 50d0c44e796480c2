import numpy as np
import pytest

from parafem.fem import FeFunction, l2_project
from parafem.mesh import uniform_mesh, unit_square
from parafem.surrogate import (
    SurrogateNet,
    TrainConfig,
    TrainReport,
    gradient,
    init_net,
    loss,
    train,
)


@pytest.fixture
def small_net(square_domain):
    return init_net([2, 8, 8, 1], square_domain, seed=7)


@pytest.fixture
def coarse_mesh(square_domain):
    return uniform_mesh(square_domain, 0.25)


class TestArchitecture:
    def test_parameter_count(self, square_domain):
        net = init_net([2, 40, 40, 40, 1], square_domain, seed=0)
        # weights: 2*40 + 40*40 + 40*40 + 40*1; hidden biases: 40 * 3
        assert net.num_parameters == 80 + 1600 + 1600 + 40 + 120 == 3440

    def test_bad_dims_rejected(self, square_domain):
        with pytest.raises(ValueError):
            init_net([3, 8, 1], square_domain)
        with pytest.raises(ValueError):
            init_net([2, 8, 2], square_domain)
        with pytest.raises(ValueError):
            init_net([2], square_domain)

    def test_output_layer_has_no_bias(self, small_net):
        assert len(small_net.biases) == len(small_net.weights) - 1

    def test_kaiming_scale(self, square_domain):
        rng_free = init_net([2, 400, 400, 1], square_domain, seed=3)
        w1 = rng_free.weights[1]  # 400 x 400: enough samples for a tight check
        assert w1.std() == pytest.approx(np.sqrt(2.0 / 400), rel=0.02)
        assert all(np.all(b == 0.0) for b in rng_free.biases)

    def test_initialization_is_deterministic(self, square_domain):
        a = init_net([2, 8, 1], square_domain, seed=11)
        b = init_net([2, 8, 1], square_domain, seed=11)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_vanishes_on_boundary(self, small_net):
        boundary = np.array(
            [[0.0, 0.0], [1.0, 0.3], [0.52, 1.0], [0.0, 0.77], [1.0, 1.0]]
        )
        np.testing.assert_allclose(small_net(boundary), 0.0, atol=1e-12)

    def test_lift_added(self, small_net):
        base = small_net(np.array([[0.3, 0.4]]))[0]
        small_net.lift = lambda p: np.full(len(np.atleast_2d(p)), 2.5)
        assert small_net(np.array([[0.3, 0.4]]))[0] == pytest.approx(base + 2.5)
        assert small_net(np.array([[1.0, 0.6]]))[0] == pytest.approx(2.5)

    def test_scalar_point_shape(self, small_net):
        out = small_net(np.array([0.3, 0.4]))
        assert np.ndim(out) == 0 or np.shape(out) == ()

    def test_pack_unpack_roundtrip(self, small_net):
        theta = small_net.pack()
        assert theta.shape == (small_net.num_parameters,)
        other = small_net.copy()
        other.unpack(theta * 0.0)
        assert np.all(other.pack() == 0.0)
        other.unpack(theta)
        np.testing.assert_array_equal(other.pack(), theta)

    def test_save_load_roundtrip(self, small_net, tmp_path):
        path = tmp_path / "net.npz"
        small_net.save(path)
        loaded = SurrogateNet.load(path, small_net.domain)
        pts = np.random.default_rng(1).uniform(0, 1, (20, 2))
        np.testing.assert_allclose(loaded(pts), small_net(pts), atol=1e-15)


class TestLossAndGradient:
    def test_loss_zero_on_exact_target(self, small_net, coarse_mesh):
        target = small_net(coarse_mesh.vertices)
        assert loss(small_net, coarse_mesh, target) == 0.0

    def test_loss_mse(self, small_net, coarse_mesh):
        target = small_net(coarse_mesh.vertices) + 0.5
        assert loss(small_net, coarse_mesh, target) == pytest.approx(0.25)

    def test_accepts_fe_function(self, small_net, coarse_mesh):
        u = FeFunction(coarse_mesh, np.zeros(coarse_mesh.num_vertices))
        pred = small_net(coarse_mesh.vertices)
        assert loss(small_net, coarse_mesh, u) == pytest.approx(np.mean(pred ** 2))

    def test_gradient_matches_finite_differences(self, coarse_mesh, square_domain):
        net = init_net([2, 6, 6, 1], square_domain, seed=2)
        net.lift = lambda p: 0.1 * np.atleast_2d(p)[:, 0]
        rng = np.random.default_rng(5)
        target = rng.normal(size=coarse_mesh.num_vertices)
        g = gradient(net, coarse_mesh, target)
        theta0 = net.pack()
        eps = 1e-6
        probe = net.copy()
        probe.lift = net.lift
        for idx in rng.choice(len(theta0), size=25, replace=False):
            tp, tm = theta0.copy(), theta0.copy()
            tp[idx] += eps
            tm[idx] -= eps
            probe.unpack(tp)
            lp = loss(probe, coarse_mesh, target)
            probe.unpack(tm)
            lm = loss(probe, coarse_mesh, target)
            fd = (lp - lm) / (2 * eps)
            assert g[idx] == pytest.approx(fd, rel=1e-5, abs=1e-10)

    def test_gradient_zero_at_exact_fit(self, small_net, coarse_mesh):
        target = small_net(coarse_mesh.vertices)
        g = gradient(small_net, coarse_mesh, target)
        np.testing.assert_allclose(g, 0.0, atol=1e-14)


class TestTrainConfigValidation:
    def test_bad_values(self):
        with pytest.raises(ValueError):
            TrainConfig(adam_lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(loss_target=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(lbfgs_cap=0)


class TestTrain:
    def test_trivial_target_converges_immediately(self, square_domain, coarse_mesh):
        net = init_net([2, 8, 1], square_domain, seed=0)
        for w in net.weights:
            w *= 0.0
        target = np.zeros(coarse_mesh.num_vertices)
        net, report = train(net, coarse_mesh, target, TrainConfig())
        assert report.adam_epochs == 0
        assert report.lbfgs_iters == 0
        assert report.final_loss == 0.0
        assert not report.aborted

    def test_fits_smooth_function(self, square_domain):
        mesh = uniform_mesh(square_domain, 0.2)
        x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
        # boundary-compatible target: vanishes where the scaled net must
        target = 16.0 * x * (1 - x) * y * (1 - y)
        net = init_net([2, 16, 16, 1], square_domain, seed=0)
        cfg = TrainConfig(loss_target=1e-5, adam_epoch_cap=5000, lbfgs_cap=300)
        net, report = train(net, mesh, target, cfg)
        assert report.final_loss <= 1e-5
        assert loss(net, mesh, target) == pytest.approx(report.final_loss, rel=1e-9)

    def test_warm_start_uses_smaller_cap(self, square_domain, coarse_mesh):
        rng = np.random.default_rng(9)
        target = rng.normal(size=coarse_mesh.num_vertices)
        net = init_net([2, 4, 1], square_domain, seed=1)
        cfg = TrainConfig(
            loss_target=1e-30, adam_epoch_cap=50, adam_epoch_cap_warm=5,
            lbfgs_cap=1, stagnation_window=1,
        )
        _, cold = train(net.copy(), coarse_mesh, target, cfg, warm=False)
        _, warm = train(net.copy(), coarse_mesh, target, cfg, warm=True)
        assert cold.adam_epochs == 50
        assert warm.adam_epochs == 5

    def test_nonfinite_start_aborts(self, square_domain, coarse_mesh):
        net = init_net([2, 4, 1], square_domain, seed=0)
        net.weights[0][0, 0] = np.nan
        target = np.zeros(coarse_mesh.num_vertices)
        net, report = train(net, coarse_mesh, target, TrainConfig())
        assert report.aborted

    def test_training_is_deterministic(self, square_domain, coarse_mesh):
        target = coarse_mesh.vertices[:, 0] * (1 - coarse_mesh.vertices[:, 0])
        cfg = TrainConfig(loss_target=1e-5, adam_epoch_cap=200, lbfgs_cap=20)
        n1, r1 = train(init_net([2, 8, 1], square_domain, seed=4),
                       coarse_mesh, target, cfg)
        n2, r2 = train(init_net([2, 8, 1], square_domain, seed=4),
                       coarse_mesh, target, cfg)
        assert r1.final_loss == r2.final_loss
        assert r1.adam_epochs == r2.adam_epochs
        np.testing.assert_array_equal(n1.pack(), n2.pack())

    def test_lbfgs_improves_after_adam_cap(self, square_domain, coarse_mesh):
        target = np.sin(3 * coarse_mesh.vertices[:, 0])
        net = init_net([2, 8, 8, 1], square_domain, seed=0)
        cfg = TrainConfig(loss_target=1e-30, adam_epoch_cap=50,
                          lbfgs_cap=100, stagnation_window=5)
        before = loss(net, coarse_mesh, target)
        net, report = train(net, coarse_mesh, target, cfg)
        assert report.adam_epochs == 50
        assert report.lbfgs_iters > 0
        assert report.final_loss < before
