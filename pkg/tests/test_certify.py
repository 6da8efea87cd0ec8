import numpy as np
import pytest

from relu_lab.arrangements import enumerate_masks
from relu_lab.certify import (convex_kkt_residuals, dual_feasible,
                              extract_kkt, local_extremum, ortho_coverage,
                              spike_free, certifying_multipliers)
from relu_lab.convex import (NetworkParams, build_primal, convex_from_network,
                             network_from_convex, solve_primal)
from relu_lab.datasets import is_orthogonal_separable
from relu_lab.flow import FlowConfig, run_flow


@pytest.fixture(scope="module")
def notebook_network(notebook_masks, notebook_solved):
    _, sol, dual, _ = notebook_solved
    return network_from_convex(sol, notebook_masks), dual


class TestExtractKKT:
    def test_optimal_network_residuals(self, notebook_ds, notebook_network):
        net, dual = notebook_network
        ex = extract_kkt(notebook_ds.X, notebook_ds.y, net.W1, net.w2,
                         dual.lam)
        assert ex.max_direction_residual() <= 1e-6
        assert ex.max_norm_residual() <= 1e-6
        assert float(ex.comp_slack.max()) <= 1e-6

    def test_boundary_completion_enumerates_kink_bits(self, notebook_ds,
                                                      notebook_solved):
        # exactly-boundary neurons: the completion search must pick the bit
        # choice matching the dual variable
        _, _, dual, _ = notebook_solved
        W1 = np.array([[1.0, 0.0], [0.0, 1.0]])
        w2 = np.array([1.0, -1.0])
        ex = extract_kkt(notebook_ds.X, notebook_ds.y, W1, w2, dual.lam)
        by_index = {n.index: n for n in ex.neurons}
        assert by_index[0].boundary == (1,)   # x2 on the kink of (1, 0)
        assert by_index[1].boundary == (0,)   # x1 on the kink of (0, 1)
        assert by_index[0].mask.as_string() == "100"
        assert by_index[1].mask.as_string() == "011"
        assert ex.max_direction_residual() <= 1e-6

    def test_completion_masks_on_solved_network(self, notebook_ds,
                                                notebook_network):
        net, dual = notebook_network
        ex = extract_kkt(notebook_ds.X, notebook_ds.y, net.W1, net.w2,
                         dual.lam)
        for neuron in ex.neurons:
            assert neuron.mask.as_string() in ("100", "011")

    def test_off_boundary_neuron_uses_strict_mask(self, notebook_ds):
        w1 = np.array([2.0, -1.0])  # strictly off every hyperplane
        lam = np.array([1.0, -1.0, 0.0])
        ex = extract_kkt(notebook_ds.X, notebook_ds.y,
                         w1.reshape(2, 1), np.array([1.0]), lam)
        neuron = ex.neurons[0]
        assert neuron.boundary == ()
        assert neuron.mask.bits == neuron.strict_bits

    def test_random_network_reports_positive_residuals(self, notebook_ds):
        rng = np.random.default_rng(17)
        W1 = rng.normal(size=(2, 4))
        w2 = rng.normal(size=4)
        lam = np.array([1.0, -1.0, 0.0])
        ex = extract_kkt(notebook_ds.X, notebook_ds.y, W1, w2, lam)
        assert ex.max_direction_residual() > 1e-3

    def test_all_zero_w2_rejected(self, notebook_ds):
        with pytest.raises(ValueError):
            extract_kkt(notebook_ds.X, notebook_ds.y, np.ones((2, 2)),
                        np.zeros(2), np.ones(3))

    def test_large_boundary_set_uses_greedy_pass(self):
        # 14 boundary samples exceed the enumeration limit; the greedy pass
        # must still find the residual-minimizing completion (all bits on)
        N = 14
        X = np.tile([1.0, 0.0], (N, 1))
        y = np.ones(N)
        lam = np.full(N, 1.0 / N)
        w1 = np.array([0.0, 1.0])  # every sample exactly on the kink
        ex = extract_kkt(X, y, w1.reshape(2, 1), np.array([1.0]), lam)
        neuron = ex.neurons[0]
        assert len(neuron.boundary) == N
        # target w1/w2 = (0, 1) is orthogonal to every x_n, so flipping any
        # bit only adds mass along (1, 0): the empty completion wins
        assert neuron.direction_residual == pytest.approx(1.0, abs=1e-12)
        assert neuron.mask.as_string() == "0" * N


class TestDualFeasible:
    def test_zero_is_feasible(self, notebook_ds, notebook_masks):
        assert dual_feasible(notebook_ds.X, notebook_masks,
                             np.zeros(3)).verdict

    def test_optimal_dual_feasible(self, notebook_ds, notebook_masks,
                                   notebook_solved):
        _, _, dual, _ = notebook_solved
        cert = dual_feasible(notebook_ds.X, notebook_masks, dual.lam)
        assert cert.verdict

    def test_scaled_dual_infeasible_with_matching_gauge(self, notebook_ds,
                                                        notebook_masks,
                                                        notebook_solved):
        _, _, dual, _ = notebook_solved
        cert = dual_feasible(notebook_ds.X, notebook_masks, 10 * dual.lam)
        assert not cert.verdict
        assert max(cert.slacks.values()) == pytest.approx(10.0, abs=1e-3)


class TestOrthoCoverage:
    def test_converged_flow_covers(self, ortho_ds):
        masks = enumerate_masks(ortho_ds.X)
        cfg = FlowConfig(m=8, init_scale=1e-4, step=0.1, iters=20_000,
                         checkpoints=(20_000,), seed=1)
        trace = run_flow(ortho_ds, cfg)
        rec = trace.final()
        lam = rec.lambda_tilde / np.linalg.norm(rec.lambda_tilde)
        ex = extract_kkt(ortho_ds.X, ortho_ds.y, rec.W1, rec.w2, lam)
        assert ortho_coverage(ex, ortho_ds.y).verdict

    def test_positive_only_network_not_covered(self, notebook_ds):
        W1 = np.array([[1.0], [0.0]])
        w2 = np.array([1.0])
        ex = extract_kkt(notebook_ds.X, notebook_ds.y, W1, w2,
                         np.array([1.0, -1.0, 0.0]))
        assert not ortho_coverage(ex, notebook_ds.y).verdict

    def test_single_sample_vacuous_negative_side(self):
        X = np.array([[1.0, 0.5]])
        y = np.array([1.0])
        W1 = np.array([[1.0], [0.0]])
        ex = extract_kkt(X, y, W1, np.array([1.0]), np.array([1.0]))
        assert ortho_coverage(ex, y).verdict


class TestSpikeFree:
    def test_identity_is_spike_free(self):
        cert = spike_free(np.eye(2))
        assert cert.verdict and cert.approximate

    def test_ortho_matrix_is_not_spike_free(self, ortho_ds):
        cert = spike_free(ortho_ds.X)
        assert not cert.verdict
        assert cert.slacks["max_z_norm"] == pytest.approx(1.2222, abs=1e-3)

    def test_acute_rows_matrix_is_boundary_spike_free(self, nonspikefree_ds):
        # rows with positive inner product: the clipped branch peaks exactly
        # at the ellipse axis, so max ||z|| is 1.0 and the definition holds
        # with equality (the reference experiment's prose labels this matrix
        # the other way; see the decisions record)
        cert = spike_free(nonspikefree_ds.X)
        assert cert.verdict
        assert cert.slacks["max_z_norm"] == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal_invariance(self, ortho_ds):
        theta = 0.7
        Q = np.array([[np.cos(theta), -np.sin(theta)],
                      [np.sin(theta), np.cos(theta)]])
        a = spike_free(ortho_ds.X)
        b = spike_free(ortho_ds.X @ Q)
        assert a.verdict == b.verdict
        assert a.slacks["max_z_norm"] == pytest.approx(
            b.slacks["max_z_norm"], abs=1e-3)

    def test_random_mode_for_higher_dimension(self):
        cert = spike_free(np.eye(3), grid=2000)
        assert cert.verdict

    def test_deterministic(self, ortho_ds):
        a = spike_free(ortho_ds.X)
        b = spike_free(ortho_ds.X)
        assert a.slacks == b.slacks


class TestLocalExtremum:
    def test_notebook_positive_neuron_is_local_max(self, notebook_ds):
        cert = local_extremum(notebook_ds.X, notebook_ds.y,
                              np.array([1.0, 0.0]))
        assert cert.kind == "local-max"
        assert cert.slacks["min_pos_inner"] > 0.0

    def test_sign_symmetry(self, notebook_ds):
        cert = local_extremum(notebook_ds.X, -notebook_ds.y,
                              np.array([1.0, 0.0]))
        assert cert.kind == "local-min"

    def test_misaligned_is_neither(self, ortho_ds):
        # direction activating both samples is pulled sideways
        u = np.array([0.0, 1.0])
        cert = local_extremum(ortho_ds.X, ortho_ds.y, u)
        assert cert.kind == "neither"

    def test_zero_g_errors(self, notebook_ds):
        with pytest.raises(ValueError):
            local_extremum(notebook_ds.X, notebook_ds.y,
                           np.array([-1.0, -1.0]) / np.sqrt(2))

    def test_local_max_matches_stationary_direction(self, notebook_ds):
        from relu_lab.geometry import stationary_direction
        u, res, _ = stationary_direction(notebook_ds.X, notebook_ds.y / 4.0,
                                         np.array([1.0, -1.0]) / np.sqrt(2))
        cert = local_extremum(notebook_ds.X, notebook_ds.y, u)
        assert cert.kind == "local-max"
        assert cert.slacks["alignment"] == pytest.approx(1.0, abs=1e-10)


class TestConvexKKTResiduals:
    def test_joint_optimum_families_small(self, notebook_solved):
        problem, sol, dual, _ = notebook_solved
        rep = convex_kkt_residuals(problem, sol, dual.lam, dual.z,
                                   dual.z_prime)
        assert rep.max_family_residual() <= 1e-5
        assert rep.primal_margin_violation <= 1e-6
        assert rep.dual_sign_violation <= 1e-9

    def test_origin_stationary_but_infeasible(self, notebook_solved):
        problem, sol, _, _ = notebook_solved
        zero_sol = type(sol)(u=[np.zeros(2)] * 6, u_prime=[np.zeros(2)] * 6,
                             objective=0.0, margin_slack=-1.0,
                             cone_slack=0.0)
        p = len(problem.masks)
        rep = convex_kkt_residuals(problem, zero_sol, np.zeros(3),
                                   np.zeros((p, 3)), np.zeros((p, 3)))
        assert rep.stationarity_neg == 0.0 and rep.stationarity_pos == 0.0
        assert rep.primal_margin_violation == pytest.approx(1.0)

    def test_perturbed_dual_breaks_complementarity(self):
        # needs an instance with a strictly slack margin (every notebook
        # margin is tight, which silences family iii): duplicate sample 1
        # at double length so its margin is 2
        X = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 1.0], [2.0, 0.0]])
        y = np.array([1.0, -1.0, -1.0, 1.0])
        masks = enumerate_masks(X)
        problem = build_primal(X, y, masks)
        sol, dual, report = solve_primal(problem)
        base = convex_kkt_residuals(problem, sol, dual.lam, dual.z,
                                    dual.z_prime)
        assert base.margin_comp_slack <= 1e-5
        lam = dual.lam + 0.1
        rep = convex_kkt_residuals(problem, sol, lam, dual.z, dual.z_prime)
        assert rep.margin_comp_slack > 0.05

    def test_certified_roundtrip(self, notebook_ds, notebook_masks,
                                notebook_solved, notebook_network):
        problem, _, dual, _ = notebook_solved
        net, _ = notebook_network
        ex = extract_kkt(notebook_ds.X, notebook_ds.y, net.W1, net.w2,
                         dual.lam)
        assert ex.max_direction_residual() <= 1e-6
        assert dual_feasible(notebook_ds.X, notebook_masks,
                             dual.lam).verdict
        z, zp = certifying_multipliers(notebook_ds.X, ex, dual.lam,
                                     notebook_masks)
        back = convex_from_network(notebook_ds.X, net.W1, net.w2,
                                   notebook_masks, y=notebook_ds.y)
        rep = convex_kkt_residuals(problem, back, dual.lam, z, zp)
        assert rep.max_family_residual() <= 1e-4


class TestMulticlassCertification:
    def test_per_class_loop(self, notebook_ds, notebook_masks,
                            notebook_solved):
        from relu_lab.certify import dual_feasible_multiclass
        from relu_lab.datasets import encode_labels
        _, _, dual, _ = notebook_solved
        labels = np.where(notebook_ds.labels == 1, 1, 2)
        enc = encode_labels(labels, 2)
        # class-1 dual is the binary optimum, class-2 its sign flip
        Lambda = np.stack([dual.lam, -dual.lam], axis=1)
        certs = dual_feasible_multiclass(notebook_ds.X, notebook_masks,
                                         Lambda, enc.Y)
        assert len(certs) == 2
        assert all(c.verdict for c in certs)
        bad = dual_feasible_multiclass(notebook_ds.X, notebook_masks,
                                       np.stack([dual.lam, dual.lam], axis=1),
                                       enc.Y)
        assert not bad[1].verdict  # sign condition fails on the flipped class


class TestCoverageImpliesFeasibility:
    def test_on_paper_datasets(self, ortho_ds, notebook_ds):
        from relu_lab.flow import recover_dual
        for ds in (ortho_ds, notebook_ds):
            assert is_orthogonal_separable(ds).separable
            masks = enumerate_masks(ds.X)
            cfg = FlowConfig(m=8, init_scale=1e-4, step=0.5, iters=5000,
                             checkpoints=(5000,), seed=1)
            rec = run_flow(ds, cfg).final()
            params = NetworkParams(W1=rec.W1, w2=rec.w2)
            lam, _, gauge_all = recover_dual(ds.X, ds.y, params, masks)
            ex = extract_kkt(ds.X, ds.y, rec.W1, rec.w2, lam)
            if ortho_coverage(ex, ds.y).verdict:
                assert gauge_all <= 1.0 + 1e-6
