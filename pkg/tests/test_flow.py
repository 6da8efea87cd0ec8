from decimal import Decimal, getcontext

import numpy as np
import pytest

from relu_lab.arrangements import enumerate_sign_patterns
from relu_lab.convex import NetworkParams
from relu_lab.datasets import Dataset
from relu_lab.flow import (FlowConfig, alignment, g_min_max, g_vector,
                           init_balanced, lambda_tilde, logistic_loss,
                           network_masks, recover_dual, run_flow, step,
                           time_bounds)

# outputs printed by the reference run at its first checkpoint
ITER10_Q = np.array([3.54896592, 4.36184346, 6.38061314])
ITER10_LAMBDA = np.array([0.84944458, -0.3827491, -0.0513976])


class TestInitBalanced:
    def test_exact_balance(self):
        params = init_balanced(FlowConfig(m=10, seed=3), d=2)
        np.testing.assert_allclose(np.linalg.norm(params.W1, axis=0),
                                   np.abs(params.w2), atol=0.0)

    def test_initial_loss_near_n_log2(self, notebook_ds):
        cfg = FlowConfig(m=10, init_scale=1e-4, seed=5)
        params = init_balanced(cfg, notebook_ds.d)
        loss = logistic_loss(notebook_ds.X, notebook_ds.y, params)
        assert loss == pytest.approx(3 * np.log(2.0), abs=1e-6)

    def test_seed_determinism(self):
        a = init_balanced(FlowConfig(seed=11), d=2)
        b = init_balanced(FlowConfig(seed=11), d=2)
        assert np.array_equal(a.W1, b.W1) and np.array_equal(a.w2, b.w2)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FlowConfig(m=0)
        with pytest.raises(ValueError):
            FlowConfig(init_scale=0.0)
        with pytest.raises(ValueError):
            FlowConfig(iters=100, checkpoints=(200,))


class TestLambdaTilde:
    def test_zero_output_gives_half_labels(self, notebook_ds):
        params = NetworkParams(W1=np.zeros((2, 3)), w2=np.zeros(3))
        lt = lambda_tilde(notebook_ds.X, notebook_ds.y, params)
        np.testing.assert_allclose(lt, notebook_ds.y / 2.0, atol=1e-15)

    def test_saturated_sample_vanishes(self, notebook_ds):
        params = NetworkParams(W1=100 * np.array([[1.0, 0.0], [0.0, 1.0]]),
                               w2=np.array([1.0, -1.0]))
        lt = lambda_tilde(notebook_ds.X, notebook_ds.y, params)
        assert np.abs(lt).max() <= 1e-20

    def test_sign_matches_labels(self, notebook_ds):
        rng = np.random.default_rng(6)
        params = NetworkParams(W1=rng.normal(size=(2, 4)),
                               w2=rng.normal(size=4))
        lt = lambda_tilde(notebook_ds.X, notebook_ds.y, params)
        assert np.all(np.sign(lt) == notebook_ds.y)
        assert np.abs(lt).max() <= 0.5

    def test_reference_direction(self, notebook_ds):
        # lambda-tilde computed from the reference q values is proportional
        # to the printed dual variable before the gauge division
        lt = notebook_ds.y / (1.0 + np.exp(ITER10_Q))
        unit = lt / np.linalg.norm(lt)
        ref = ITER10_LAMBDA / np.linalg.norm(ITER10_LAMBDA)
        np.testing.assert_allclose(unit, ref, atol=1e-5)


class TestGVector:
    def test_zero_pattern(self, notebook_ds):
        assert np.all(g_vector(notebook_ds.X, np.zeros(3),
                               notebook_ds.y / 4) == 0.0)

    def test_notebook_single_support(self, notebook_ds):
        g = g_vector(notebook_ds.X, np.array([1, -1, -1]),
                     notebook_ds.y / 4.0)
        np.testing.assert_allclose(g, [0.25, 0.0], atol=1e-15)

    def test_linearity_in_dual(self, notebook_ds):
        sigma = np.array([1, 1, -1])
        lam = np.array([0.3, -0.2, 0.4])
        np.testing.assert_allclose(g_vector(notebook_ds.X, sigma, 2 * lam),
                                   2 * g_vector(notebook_ds.X, sigma, lam),
                                   atol=1e-15)

    def test_direction_input_uses_strict_signs(self, notebook_ds):
        g_dir = g_vector(notebook_ds.X, np.array([1.0, 0.0]),
                         notebook_ds.y / 4.0)
        np.testing.assert_allclose(g_dir, [0.25, 0.0], atol=1e-15)


class TestGMinMax:
    def test_notebook_values(self, notebook_ds):
        pats = enumerate_sign_patterns(notebook_ds.X)
        gmin, gmax, minimizers, maximizers = g_min_max(
            notebook_ds.X, notebook_ds.y, pats)
        assert gmin == pytest.approx(0.25, abs=1e-12)
        assert gmax == pytest.approx(np.sqrt(2) / 2, abs=1e-12)
        assert (0,) in {p.positive_support() for p in minimizers}
        assert {p.positive_support() for p in maximizers} == {(0, 1, 2)}

    def test_gmin_positive(self):
        rng = np.random.default_rng(13)
        for _ in range(5):
            X = rng.normal(size=(4, 2))
            y = rng.choice([-1.0, 1.0], size=4)
            pats = enumerate_sign_patterns(X)
            gmin, gmax, _, _ = g_min_max(X, y, pats)
            assert 0.0 < gmin <= gmax


class TestStep:
    def test_injected_zero_dual_freezes(self, notebook_ds):
        params = init_balanced(FlowConfig(m=4, seed=2), 2)
        after = step(notebook_ds.X, notebook_ds.y, params, 0.5,
                     lam=np.zeros(3))
        assert np.array_equal(after.W1, params.W1)
        assert np.array_equal(after.w2, params.w2)

    def test_zero_params_fixed_point(self, notebook_ds):
        params = NetworkParams(W1=np.zeros((2, 3)), w2=np.zeros(3))
        after = step(notebook_ds.X, notebook_ds.y, params, 1.0)
        assert np.array_equal(after.W1, params.W1)
        assert np.array_equal(after.w2, params.w2)

    def test_one_step_balance_drift_is_quadratic_in_eta(self, notebook_ds):
        params = init_balanced(FlowConfig(m=6, init_scale=0.5, seed=4), 2)

        def drift(eta):
            after = step(notebook_ds.X, notebook_ds.y, params, eta)
            return np.abs(np.sum(after.W1 ** 2, axis=0)
                          - after.w2 ** 2).max()

        ratio = drift(0.2) / drift(0.1)
        assert ratio == pytest.approx(4.0, rel=0.05)

    def test_w2_update_matches_finite_difference(self, notebook_ds):
        # d loss / d w2_i = -lambda_tilde . (X w1_i)_+ on the smooth region
        rng = np.random.default_rng(10)
        W1 = rng.normal(size=(2, 3))
        w2 = rng.normal(size=3)
        params = NetworkParams(W1=W1, w2=w2)
        after = step(notebook_ds.X, notebook_ds.y, params, 1.0)
        update = after.w2 - w2
        h = 1e-6
        for i in range(3):
            wp, wm = w2.copy(), w2.copy()
            wp[i] += h
            wm[i] -= h
            fd = (logistic_loss(notebook_ds.X, notebook_ds.y,
                                NetworkParams(W1=W1, w2=wp))
                  - logistic_loss(notebook_ds.X, notebook_ds.y,
                                  NetworkParams(W1=W1, w2=wm))) / (2 * h)
            assert update[i] == pytest.approx(-fd, rel=1e-6, abs=1e-9)


class TestRunFlow:
    def test_iters_zero_records_initialization_only(self, notebook_ds):
        trace = run_flow(notebook_ds, FlowConfig(m=4, iters=0,
                                                 checkpoints=(), seed=1))
        assert len(trace.records) == 1
        assert trace.records[0].iteration == 0

    def test_loss_non_increasing_across_checkpoints(self, notebook_ds):
        cfg = FlowConfig(m=8, init_scale=1e-2, step=0.5, iters=2000,
                         checkpoints=(10, 100, 500, 2000), seed=1)
        trace = run_flow(notebook_ds, cfg)
        losses = [r.loss for r in trace.records]
        assert all(a >= b - 1e-12 for a, b in zip(losses, losses[1:]))

    def test_lambda_sign_pattern_at_checkpoints(self, notebook_ds):
        cfg = FlowConfig(m=8, iters=500, checkpoints=(500,), seed=1)
        trace = run_flow(notebook_ds, cfg)
        for rec in trace.records:
            assert np.all(np.sign(rec.lambda_tilde) == notebook_ds.y)

    def test_sign_events_recorded(self, notebook_ds):
        cfg = FlowConfig(m=8, init_scale=1e-2, step=1.0, iters=200,
                         checkpoints=(200,), seed=1)
        trace = run_flow(notebook_ds, cfg)
        assert len(trace.sign_events) > 0
        ev = trace.sign_events[0]
        assert ev.old != ev.new and 1 <= ev.iteration <= 200

    def test_multiclass_runs_k_flows(self, notebook_ds):
        labels = np.where(notebook_ds.labels == 1, 1, 2)
        ds2 = Dataset(X=notebook_ds.X, labels=labels, K=2)
        traces = run_flow(ds2, FlowConfig(m=4, iters=50, checkpoints=(50,),
                                          seed=1))
        assert isinstance(traces, list) and len(traces) == 2

    def test_overflow_aborts_with_last_good_record(self, notebook_ds):
        cfg = FlowConfig(m=4, init_scale=1.0, step=1e12, iters=2000,
                         checkpoints=(1,), seed=1)
        trace = run_flow(notebook_ds, cfg)
        assert trace.aborted_at is not None
        assert all(np.isfinite(r.loss) for r in trace.records)

    def test_balance_conserved_in_continuous_limit(self, notebook_ds):
        drift = {}
        for eta, iters in ((0.5, 400), (0.25, 800)):
            cfg = FlowConfig(m=6, init_scale=1e-2, step=eta, iters=iters,
                             checkpoints=(iters,), seed=3)
            drift[eta] = run_flow(notebook_ds, cfg).max_balance_drift
        assert drift[0.5] / drift[0.25] == pytest.approx(2.0, abs=0.4)


class TestAlignment:
    def test_fixed_point_alignment_is_one(self, notebook_ds):
        u = np.array([1.0, 0.0])
        assert alignment(notebook_ds.X, u, notebook_ds.y) == pytest.approx(
            1.0, abs=1e-12)

    def test_orthogonal_is_zero(self):
        X = np.array([[1.0, 0.0], [1.0, 0.0]])
        a = alignment(X, np.array([0.0, 1.0]), np.array([1.0, 1.0]))
        assert a is None  # strict activations vanish at the boundary
        a2 = alignment(np.array([[1.0, 0.0], [0.0, 1.0]]),
                       np.array([1e-9, 1.0]), np.array([1.0, 0.0]))
        assert a2 == pytest.approx(0.0, abs=1e-8)

    def test_zero_reference_flag(self, notebook_ds):
        assert alignment(notebook_ds.X, np.array([-1.0, -1.0]),
                         np.array([0.0, 0.0, 0.0])) is None


class TestTimeBounds:
    def test_shift_at_one_minus_delta_equals_t_star(self):
        tb = time_bounds(0.2, 0.5, 0.1)
        assert tb.t_shift(0.8) == tb.t_star()

    def test_aligned_start_gives_zero(self):
        tb = time_bounds(0.1, 0.25, 0.9)
        assert tb.t_star() == pytest.approx(0.0, abs=1e-12)

    def test_against_high_precision_oracle(self):
        getcontext().prec = 50
        delta, g0, vu0 = Decimal("0.1"), Decimal("0.25"), Decimal("0.2")
        s = (1 - delta / 8).sqrt()
        term1 = ((s + 1 - delta) / (s - (1 - delta))).ln()
        term2 = ((s + vu0) / (s - vu0)).ln()
        expected = (term1 - term2) / (2 * g0 * s)
        tb = time_bounds(0.1, 0.25, 0.2)
        assert tb.t_star() == pytest.approx(float(expected), rel=1e-12)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            time_bounds(1.5, 0.25, 0.2)
        with pytest.raises(ValueError):
            time_bounds(0.1, -1.0, 0.2)
        with pytest.raises(ValueError):
            time_bounds(0.1, 0.25, 0.999)
        tb = time_bounds(0.1, 0.25, 0.2)
        with pytest.raises(ValueError):
            tb.t_shift(0.95)


class TestRecoverDual:
    def test_zero_network_proportional_to_labels(self, notebook_ds,
                                                 notebook_masks):
        params = NetworkParams(W1=np.zeros((2, 2)), w2=np.zeros(2))
        lam, gauge_net, gauge_all = recover_dual(
            notebook_ds.X, notebook_ds.y, params, notebook_masks)
        unit = lam / np.linalg.norm(lam)
        np.testing.assert_allclose(unit, notebook_ds.y / np.linalg.norm(
            notebook_ds.y), atol=1e-9)

    def test_optimal_network_hand_computed(self, notebook_ds, notebook_masks):
        # margins are exactly one, so lambda-tilde is y/(1+e) and the
        # normalizing gauge is ||X^T y|| / sqrt(3) = 2 sqrt(2/3)
        params = NetworkParams(W1=np.array([[1.0, 0.0], [0.0, 1.0]]),
                               w2=np.array([1.0, -1.0]))
        lam, gauge_net, gauge_all = recover_dual(
            notebook_ds.X, notebook_ds.y, params, notebook_masks)
        assert gauge_net == pytest.approx(2 * np.sqrt(2.0 / 3.0), abs=1e-6)
        np.testing.assert_allclose(lam, notebook_ds.y / (2 * np.sqrt(2.0)),
                                   atol=1e-6)
        # minimizing mask 011: -||(1/2, -1)|| / (2 sqrt 2) = -sqrt(5/8)
        assert gauge_all == pytest.approx(np.sqrt(5.0 / 8.0), abs=1e-4)
        assert gauge_all <= 1.0 + 1e-6

    def test_network_masks_deduplicated(self, notebook_ds):
        params = NetworkParams(W1=np.array([[1.0, 1.0], [0.0, 0.0]]),
                               w2=np.array([1.0, -1.0]))
        masks = network_masks(notebook_ds.X, params)
        assert [m.as_string() for m in masks] == ["100"]

    def test_weak_duality_and_progress(self, notebook_ds, notebook_masks,
                                       notebook_solved):
        _, _, _, report = notebook_solved
        cfg = FlowConfig(m=8, init_scale=1e-4, step=1.0, iters=10_000,
                         checkpoints=(10, 100, 1000, 10_000), seed=1)
        trace = run_flow(notebook_ds, cfg)
        objectives = []
        for rec in trace.records:
            if rec.iteration == 0:
                continue
            params = NetworkParams(W1=rec.W1, w2=rec.w2)
            lam, _, gauge_all = recover_dual(notebook_ds.X, notebook_ds.y,
                                             params, notebook_masks)
            assert gauge_all <= 1.0 + 1e-4
            objectives.append(float(notebook_ds.y @ lam))
        assert all(o <= report.objective + 1e-6 for o in objectives)
        assert all(a <= b + 1e-9 for a, b in zip(objectives, objectives[1:]))
