import numpy as np
import pytest
from sklearn.base import clone

from hybridpred.geometry import ReferencePath, to_cartesian
from hybridpred.irl import (
    CostContext,
    CostWeights,
    MaxEntIRL,
    _demo_terms,
    _profiled,
    cost_gradient_hessian,
    cumulative_cost,
    demo_log_likelihood,
    feature_derivatives,
    feature_sums,
    features,
    log_likelihood,
    project_simplex,
    regularize_hessian,
    train_irl,
)
from hybridpred.planner import sample_demonstrations
from hybridpred.scenario import corner_case_suite, generate_dataset

from oracles import central_difference, relative_error

LONG = ReferencePath([[-1000.0, 0.0], [3000.0, 0.0]], origin_arc_length=1000.0, path_id="long")


def cruise_context(ego_xy, speed=8.0, n=5, dt=0.2, proximity_scale=5.0):
    prev = np.array([[-speed * dt, 0.0], [0.0, 0.0]])
    states = np.c_[speed * dt * np.arange(1, n + 1), np.zeros(n)]
    ctx = CostContext(LONG, prev, np.asarray(ego_xy, float), 8.0, dt, proximity_scale)
    return ctx, states


@pytest.fixture(scope="module")
def contexts():
    ds = generate_dataset(400, 0.0, seed=3, noise=0.0)
    return [s for s in ds.train if s.mode.startswith("rational")]


class TestFeatures:
    def test_coincident_proximity_one(self):
        ctx, states = cruise_context(np.zeros((5, 2)))
        ego = to_cartesian(states, LONG)
        ctx = CostContext(LONG, ctx.pred_prev, ego, 8.0, 0.2)
        assert np.allclose(features(ctx, states)[:, 0], 1.0)

    def test_far_cruise_is_zero(self):
        ctx, states = cruise_context(np.tile([1000.0, 0.0], (5, 1)) + [[1600.0, 0.0]])
        assert np.allclose(features(ctx, states), 0.0, atol=1e-12)

    def test_kernel_at_sigma(self):
        ctx, states = cruise_context(np.zeros((5, 2)))
        ego = to_cartesian(states, LONG) + [0.0, 5.0]
        ctx = CostContext(LONG, ctx.pred_prev, ego, 8.0, 0.2, proximity_scale=5.0)
        assert np.allclose(features(ctx, states)[:, 0], np.exp(-1.0))
        assert np.exp(-1.0) == pytest.approx(0.3679, abs=1e-4)

    def test_backward_differences(self):
        ctx, _ = cruise_context(np.full((3, 2), 1e4))
        states = np.array([[2.0, 0.5], [3.0, -1.0], [5.0, 0.0]])
        phi = features(ctx, states)
        # history ends at s=0 with speed 8; steps 2, 1, 2 m over 0.2 s
        v = np.array([10.0, 5.0, 10.0])
        a = np.diff(np.r_[8.0, v]) / 0.2
        assert np.allclose(phi[:, 1], (v - 8.0) ** 2)
        assert np.allclose(phi[:, 2], a**2)
        assert np.allclose(phi[:, 3], [0.25, 1.0, 0.0])


class TestCost:
    def test_zero_weights(self):
        scene = corner_case_suite()[1]
        assert cumulative_cost(scene.pred_future, scene.ego_future, scene, np.zeros(4)) == 0.0

    def test_linear_in_weights(self):
        scene = corner_case_suite()[1]
        theta = np.array([0.4, 0.1, 0.2, 0.3])
        c1 = cumulative_cost(scene.pred_future, scene.ego_future, scene, theta)
        c2 = cumulative_cost(scene.pred_future, scene.ego_future, scene, 2 * theta)
        assert c2 == pytest.approx(2 * c1, rel=1e-14)

    def test_cost_weights_scale(self):
        scene = corner_case_suite()[1]
        theta = np.array([0.4, 0.1, 0.2, 0.3])
        w = CostWeights(theta, 3.0)
        assert cumulative_cost(scene.pred_future, scene.ego_future, scene, w) == pytest.approx(
            cumulative_cost(scene.pred_future, scene.ego_future, scene, 3.0 * theta)
        )

    def test_weights_validation_and_json(self):
        with pytest.raises(ValueError):
            CostWeights([-1.0, 0, 0, 2])
        w = CostWeights([0.1, 0.2, 0.3, 0.4], 2.5)
        back = CostWeights.from_json(w.to_json())
        assert np.array_equal(back.theta, w.theta) and back.scale == w.scale


class TestDerivatives:
    def test_lateral_quadratic_minimum(self):
        ctx, states = cruise_context(np.full((5, 2), 1e4))
        _, J, Hk = feature_derivatives(ctx, states)
        w = np.array([0.0, 0.0, 0.0, 1.0])
        g = J @ w
        H = np.tensordot(w, Hk, axes=1)
        assert np.allclose(g, 0.0, atol=1e-9)
        assert np.allclose(np.diag(H)[1::2], 2.0, atol=1e-6)
        assert np.allclose(np.diag(H)[0::2], 0.0, atol=1e-6)

    def test_gradient_matches_independent_difference(self):
        scene = corner_case_suite()[2]
        theta = np.array([0.5, 0.2, 0.1, 0.2])
        traj = scene.pred_future.states + 0.1
        g, _ = cost_gradient_hessian(traj, scene.ego_future, scene, theta)

        def c(x):
            return float(cumulative_cost(x.reshape(traj.shape), scene.ego_future, scene, theta))

        ref = central_difference(c, traj.ravel(), h=1e-6)
        assert relative_error(g, ref) < 1e-4
        # one-sided differences at a different step
        h = 1e-7
        one = np.array([(c(traj.ravel() + h * e) - c(traj.ravel())) / h for e in np.eye(traj.size)])
        assert np.allclose(g, one, rtol=1e-3, atol=1e-3 * np.abs(g).max())

    def test_hessian_matches_gradient_differences(self):
        scene = corner_case_suite()[2]
        theta = np.array([0.5, 0.2, 0.1, 0.2])
        traj = scene.pred_future.states + 0.1
        _, H = cost_gradient_hessian(traj, scene.ego_future, scene, theta)

        def grad(x):
            return cost_gradient_hessian(x.reshape(traj.shape), scene.ego_future, scene, theta)[0]

        h = 1e-4
        ref = np.array([(grad(traj.ravel() + h * e) - grad(traj.ravel() - h * e)) / (2 * h) for e in np.eye(traj.size)])
        assert np.allclose(H, ref, atol=1e-3)

    def test_zero_weights_regularized(self):
        scene = corner_case_suite()[0]
        g, H = cost_gradient_hessian(scene.pred_future, scene.ego_future, scene, np.zeros(4))
        assert not g.any()
        assert np.allclose(H, 1e-6 * np.eye(10))

    def test_regularize_doubles_eps(self):
        H = np.diag([1.0, -3e-6])
        Hr, _, eps = regularize_hessian(H)
        # 1e-6, 2e-6 fail; 4e-6 is the first shift that makes it positive definite
        assert eps == pytest.approx(4e-6)
        assert np.allclose(Hr, H + eps * np.eye(2))
        _, _, eps0 = regularize_hessian(np.eye(2))
        assert eps0 == 0.0


class TestLikelihood:
    def test_standard_gaussian(self):
        assert demo_log_likelihood(np.zeros(10), np.eye(10)) == pytest.approx(-5 * np.log(2 * np.pi))
        assert demo_log_likelihood(np.zeros(10), np.eye(10)) == pytest.approx(-9.189, abs=1e-3)

    def test_hessian_scaling(self):
        base = demo_log_likelihood(np.zeros(10), np.eye(10))
        assert demo_log_likelihood(np.zeros(10), 4 * np.eye(10)) - base == pytest.approx(5 * np.log(4))

    def test_gradient_penalty(self):
        g = np.array([1.0, 2.0])
        H = np.diag([2.0, 4.0])
        expected = -0.5 * (1 / 2 + 4 / 4) + 0.5 * np.log(8) - np.log(2 * np.pi)
        assert demo_log_likelihood(g, H) == pytest.approx(expected)

    def test_planted_weights_maximize_grid(self, contexts):
        theta_star = np.array([0.4, 0.2, 0.3, 0.1])
        demos = sample_demonstrations(contexts[:15], theta_star, 1000.0, np.random.default_rng(1))
        terms = [_demo_terms(d, 1e-4, 5.0) for d in demos]
        grid = [np.array(p) / 10 for p in np.ndindex(11, 11, 11) if sum(p) <= 10]
        grid = [np.r_[p, 1 - p.sum()] for p in grid]
        best = max(grid, key=lambda u: _profiled(terms, u)[0])
        assert np.abs(best - theta_star).max() <= 0.1 + 1e-9

    def test_profiled_scale_is_closed_form(self, contexts):
        demos = sample_demonstrations(contexts[:6], np.array([0.4, 0.2, 0.3, 0.1]), 100.0, np.random.default_rng(2))
        terms = [_demo_terms(d, 1e-4, 5.0) for d in demos]
        u = np.array([0.3, 0.3, 0.2, 0.2])
        value, c = _profiled(terms, u)
        mean = log_likelihood(terms, c * u) / len(terms)
        assert value == pytest.approx(mean, rel=1e-10)
        for f in (0.9, 1.1):
            assert log_likelihood(terms, f * c * u) / len(terms) < value


class TestTraining:
    def test_planted_recovery(self, contexts):
        theta_star = np.array([0.275, 0.242, 0.229, 0.254])
        demos = sample_demonstrations(contexts[:30], theta_star, 1000.0, np.random.default_rng(0))
        est = MaxEntIRL().fit(demos)
        cos = est.theta_ @ theta_star / np.linalg.norm(est.theta_) / np.linalg.norm(theta_star)
        assert cos >= 0.95
        assert est.theta_.sum() == pytest.approx(1.0)
        assert est.scale_ > 0
        assert np.all(np.diff(est.likelihood_curve_) >= -1e-12)

    @pytest.mark.parametrize("k", [0, 1, 2])
    def test_single_feature_concentration(self, contexts, k):
        theta_star = np.full(4, 0.03)
        theta_star[k] = 0.91
        demos = sample_demonstrations(contexts[:15], theta_star, 1000.0, np.random.default_rng(k))
        theta = train_irl(demos).theta
        assert np.argmax(theta) == k
        assert theta[k] > 0.8

    def test_duplicated_demos_same_weights(self, contexts):
        demos = sample_demonstrations(contexts[:8], np.array([0.3, 0.3, 0.2, 0.2]), 300.0, np.random.default_rng(3))
        a = MaxEntIRL(max_iter=100).fit(demos)
        b = MaxEntIRL(max_iter=100).fit(demos + demos)
        assert np.allclose(a.theta_, b.theta_, atol=1e-6)
        assert a.scale_ == pytest.approx(b.scale_, rel=1e-6)

    def test_too_few_demos(self, contexts):
        demos = sample_demonstrations(contexts[:4], np.full(4, 0.25), np.inf, np.random.default_rng(0))
        with pytest.raises(ValueError):
            MaxEntIRL().fit(demos)

    def test_estimator_api(self, contexts):
        est = MaxEntIRL(proximity_scale=4.0)
        assert clone(est).get_params()["proximity_scale"] == 4.0
        demos = sample_demonstrations(contexts[:6], np.full(4, 0.25), 300.0, np.random.default_rng(4))
        est.fit(demos)
        assert np.isfinite(est.score(demos))
        scene = demos[0].context
        assert est.cost(demos[0].pred_future, demos[0].ego_future, scene) > 0


class TestSimplex:
    def test_projection_properties(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            v = rng.normal(size=4) * 3
            p = project_simplex(v)
            assert p.min() >= 0 and p.sum() == pytest.approx(1.0)
            # optimality: no other simplex point among random draws is closer
            for _ in range(20):
                q = rng.dirichlet(np.ones(4))
                assert np.linalg.norm(p - v) <= np.linalg.norm(q - v) + 1e-12

    def test_fixed_point(self):
        p = np.array([0.1, 0.2, 0.3, 0.4])
        assert np.allclose(project_simplex(p), p)


def test_feature_sums_batch():
    ctx, states = cruise_context(np.zeros((5, 2)))
    batch = np.stack([states, states + 0.1])
    assert np.allclose(feature_sums(ctx, batch)[1], feature_sums(ctx, states + 0.1))
