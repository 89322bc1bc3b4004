"""Tests for the five update rules and the unified switch dispatch."""

import numpy as np
import pytest

from particleflow import (
    DivergenceError,
    KernelSpec,
    ParticleEnsemble,
    RngStream,
    SamplerConfig,
    SamplerKind,
    blob_velocity,
    pi_sgld_step,
    run_sampler,
    sgld_step,
    standard_gaussian,
    step,
    svgd_direction,
    svgd_step,
    synth_logreg,
    toy_target,
    unified_step,
    wsgld_b_step,
    wsgld_grad_f2,
    wsgld_step,
)
from particleflow.targets import LogisticRegressionTarget, TargetModel


class _FlatTarget(TargetModel):
    """Constant density: zero score everywhere."""

    def __init__(self, dim=2):
        self._dim = dim

    @property
    def dim(self):
        return self._dim

    def log_density(self, theta):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        out = np.zeros(theta.shape[0])
        return out if out.size > 1 else float(out[0])

    def grad_log_density(self, theta):
        return np.zeros_like(np.asarray(theta, dtype=float))


class TestSgldStep:
    def test_noise_free_is_gradient_ascent(self):
        """With diffusion weight 0 the update is theta + h * grad."""
        target = standard_gaussian(2)
        cfg = SamplerConfig(stepsize=0.1, iterations=1, diffusion_weight=0.0)
        ens = ParticleEnsemble(np.array([[1.0, -2.0], [0.5, 0.5]]))
        out = sgld_step(ens, target, cfg, RngStream(0))
        np.testing.assert_allclose(out.positions, ens.positions * (1 - 0.1), rtol=1e-14)

    def test_noise_scale(self):
        """On a flat target the update is pure noise with variance 2h."""
        cfg = SamplerConfig(stepsize=0.05, iterations=1)
        ens = ParticleEnsemble(np.zeros((20_000, 1)))
        out = sgld_step(ens, _FlatTarget(1), cfg, RngStream(1))
        np.testing.assert_allclose(out.positions.std(), np.sqrt(2 * 0.05), rtol=0.02)

    def test_one_dim_gaussian_equilibrium_variance(self):
        """Long Langevin runs on a unit Gaussian keep variance near 1
        (biased only at O(h))."""
        target = standard_gaussian(1)
        cfg = SamplerConfig(stepsize=0.01, iterations=2000)
        rng = RngStream(2)
        ens = ParticleEnsemble(rng.standard_normal((500, 1)))
        ens = run_sampler(target, SamplerKind("sgld"), cfg, ens, rng)
        var = ens.positions.var()
        assert 0.9 <= var <= 1.1

    def test_decay_schedule_shrinks_moves(self):
        target = standard_gaussian(1)
        ens = ParticleEnsemble(np.full((1, 1), 4.0))
        cfg = SamplerConfig(stepsize=0.5, iterations=1, diffusion_weight=0.0, step_decay=0.5)
        first = sgld_step(ens, target, cfg, RngStream(0), iteration=0)
        late = sgld_step(ens, target, cfg, RngStream(0), iteration=3)
        move_first = abs(first.positions[0, 0] - 4.0)
        move_late = abs(late.positions[0, 0] - 4.0)
        np.testing.assert_allclose(move_late, move_first / 2.0, rtol=1e-12)

    def test_minibatch_gradients_used(self):
        data = synth_logreg(40, 2, separation=2.0, rng=RngStream(3))
        target = LogisticRegressionTarget(data)
        cfg_full = SamplerConfig(stepsize=0.01, iterations=1, diffusion_weight=0.0)
        cfg_mini = cfg_full.updated(minibatch_size=5)
        ens = ParticleEnsemble(np.zeros((4, 3)))
        full = sgld_step(ens, target, cfg_full, RngStream(4))
        mini = sgld_step(ens, target, cfg_mini, RngStream(4))
        assert not np.array_equal(full.positions, mini.positions)


class TestSvgd:
    def test_single_particle_is_gradient_ascent(self):
        """M = 1 kills the interaction exactly."""
        target = toy_target("banana")
        kern = KernelSpec(bandwidth=1.0)
        ens = ParticleEnsemble(np.array([[1.0, 2.0]]))
        direction = svgd_direction(ens, target, kern)
        np.testing.assert_allclose(direction, target.grad_log_density(ens.positions), atol=1e-12)

    def test_permutation_equivariance(self):
        """Renumbering particles renumbers their updates."""
        target = toy_target("bimodal-gauss")
        kern = KernelSpec(bandwidth=0.8)
        cfg = SamplerConfig(stepsize=0.1, iterations=1)
        pts = np.random.default_rng(5).normal(size=(9, 2))
        perm = np.random.default_rng(6).permutation(9)
        out = svgd_step(ParticleEnsemble(pts), target, kern, cfg)
        out_perm = svgd_step(ParticleEnsemble(pts[perm]), target, kern, cfg)
        np.testing.assert_allclose(out.positions[perm], out_perm.positions, atol=1e-12)

    def test_flat_target_pair_repels(self):
        """Without a score the kernel term pushes two particles apart."""
        kern = KernelSpec(bandwidth=1.0)
        pts = np.array([[0.5, 0.0], [-0.5, 0.0]])
        direction = svgd_direction(ParticleEnsemble(pts), _FlatTarget(), kern)
        assert direction[0, 0] > 0 and direction[1, 0] < 0
        np.testing.assert_allclose(direction[0], -direction[1], atol=1e-14)

    def test_interaction_shrinks_with_ensemble_size(self):
        """At exact target samples the mean interaction is O(1/sqrt(M))."""
        target = standard_gaussian(2)
        kern = KernelSpec(bandwidth=1.0)
        norms = []
        for m in (50, 5000):
            draws = RngStream(7).standard_normal((m, 2))
            d = svgd_direction(ParticleEnsemble(draws), target, kern)
            norms.append(np.linalg.norm(d.mean(axis=0)))
        assert norms[1] < norms[0]


class TestWsgld:
    def test_pair_force_hand_value(self):
        """1-D pair at distance 2 with unit reg and scale: the descent force
        on the moving particle is 12 e^-4 (squared distance 4)."""
        ens = ParticleEnsemble(np.array([[2.0]]))
        prev = ParticleEnsemble(np.array([[0.0]]))
        f2 = wsgld_grad_f2(ens, prev, reg=1.0, gamma=1.0)
        np.testing.assert_allclose(f2[0, 0], 12.0 * np.exp(-4.0), rtol=1e-12)

    def test_force_sign_flips_at_reg(self):
        """Descent force attracts beyond sqrt(reg) separation, repels inside."""
        reg = 1.0
        for factor, attracts in ((1.0 + 1e-3, True), (1.0 - 1e-3, False)):
            x = np.sqrt(reg * factor)
            ens = ParticleEnsemble(np.array([[x]]))
            prev = ParticleEnsemble(np.array([[0.0]]))
            f2 = wsgld_grad_f2(ens, prev, reg=reg, gamma=1.0)
            move = -f2[0, 0]  # the update subtracts the objective gradient
            if attracts:
                assert move < 0.0  # pulled towards the previous particle
            else:
                assert move > 0.0  # pushed away

    def test_requires_exactly_one_coupling(self):
        ens = ParticleEnsemble(np.zeros((2, 1)))
        with pytest.raises(ValueError):
            wsgld_grad_f2(ens, ens, reg=1.0)
        with pytest.raises(ValueError):
            wsgld_grad_f2(ens, ens, reg=1.0, gamma=1.0, plan=np.full((2, 2), 0.25))

    def test_lagged_ensemble_enters_the_force(self):
        """The step sees the previous cloud, not the current one."""
        target = _FlatTarget(1)
        cfg = SamplerConfig(stepsize=0.1, iterations=1, plan_scale=1.0, entropic_reg=1.0)
        ens = ParticleEnsemble(np.array([[0.4], [-0.4]]))
        prev_near = ParticleEnsemble(np.array([[0.3], [-0.3]]))
        prev_far = ParticleEnsemble(np.array([[2.0], [-2.0]]))
        out_near = wsgld_step(ens, target, cfg, RngStream(0), previous=prev_near)
        out_far = wsgld_step(ens, target, cfg, RngStream(0), previous=prev_far)
        assert not np.array_equal(out_near.positions, out_far.positions)

    def test_sinkhorn_coupling_runs(self):
        target = toy_target("bimodal-gauss")
        cfg = SamplerConfig(stepsize=0.05, iterations=1, coupling="sinkhorn",
                            entropic_reg=1.0, plan_scale=1.0)
        pts = np.random.default_rng(8).normal(size=(6, 2))
        out = wsgld_step(ParticleEnsemble(pts), target, cfg, RngStream(0),
                         previous=ParticleEnsemble(pts + 0.1))
        assert np.all(np.isfinite(out.positions))

    def test_inner_steps_repeat_the_descent(self):
        target = standard_gaussian(1)
        cfg1 = SamplerConfig(stepsize=0.01, iterations=1, inner_steps=1)
        cfg3 = cfg1.updated(inner_steps=3)
        ens = ParticleEnsemble(np.array([[3.0], [-3.0]]))
        prev = ParticleEnsemble(np.array([[3.1], [-3.1]]))
        one = wsgld_step(ens, target, cfg1, RngStream(0), previous=prev)
        three = wsgld_step(ens, target, cfg3, RngStream(0), previous=prev)
        # three inner descent steps move further towards the centre
        assert abs(three.positions[0, 0]) < abs(one.positions[0, 0])


class TestBlob:
    def test_single_particle_is_gradient_ascent(self):
        target = toy_target("banana")
        kern = KernelSpec(bandwidth=1.0)
        ens = ParticleEnsemble(np.array([[0.5, -0.5]]))
        v = blob_velocity(ens, target, kern)
        np.testing.assert_allclose(v, target.grad_log_density(ens.positions), atol=1e-12)

    def test_flat_target_pair_repels_symmetrically(self):
        kern = KernelSpec(bandwidth=1.0)
        pts = np.array([[0.3, 0.0], [-0.3, 0.0]])
        v = blob_velocity(ParticleEnsemble(pts), _FlatTarget(), kern)
        assert v[0, 0] > 0 and v[1, 0] < 0
        np.testing.assert_allclose(v[0], -v[1], atol=1e-14)

    def test_step_matches_velocity(self):
        target = standard_gaussian(2)
        kern = KernelSpec(bandwidth=1.0)
        cfg = SamplerConfig(stepsize=0.07, iterations=1)
        pts = np.random.default_rng(9).normal(size=(5, 2))
        ens = ParticleEnsemble(pts)
        v = blob_velocity(ens, target, kern)
        out = wsgld_b_step(ens, target, kern, cfg)
        np.testing.assert_allclose(out.positions, pts + 0.07 * v, rtol=1e-14)


class TestPiSgld:
    def test_zero_weight_reduces_to_sgld_bitwise(self):
        """svgd_weight = 0 must reproduce the plain Langevin trajectory
        draw for draw."""
        target = toy_target("bimodal-gauss")
        cfg = SamplerConfig(stepsize=0.05, iterations=25, svgd_weight=0.0)
        start = RngStream(10).standard_normal((30, 2))
        a = run_sampler(target, SamplerKind("pi-sgld"), cfg, ParticleEnsemble(start), RngStream(11))
        b = run_sampler(target, SamplerKind("sgld"), cfg, ParticleEnsemble(start), RngStream(11))
        np.testing.assert_array_equal(a.positions, b.positions)

    def test_interaction_enters_drift(self):
        """With matched seeds, nonzero svgd_weight changes the move by
        exactly stepsize * weight * interaction."""
        target = standard_gaussian(2)
        kern = KernelSpec(bandwidth=1.0)
        pts = np.random.default_rng(12).normal(size=(8, 2))
        cfg0 = SamplerConfig(stepsize=0.05, iterations=1, svgd_weight=3.0, diffusion_weight=0.0)
        ens = ParticleEnsemble(pts)
        out = pi_sgld_step(ens, target, kern, cfg0, RngStream(0))
        interaction = svgd_direction(ens, target, kern)
        want = pts + 0.05 * (target.grad_log_density(pts) + 3.0 * interaction)
        np.testing.assert_allclose(out.positions, want, rtol=1e-12)


class TestUnifiedDispatch:
    def test_presets_match_named_steppers(self):
        """Every preset switch combination reproduces its named rule bitwise."""
        target = toy_target("bimodal-gauss")
        kern = KernelSpec(bandwidth=1.0)
        pts = np.random.default_rng(13).normal(size=(6, 2))
        prev = ParticleEnsemble(pts + 0.05)
        for tag in ("sgld", "svgd", "w-sgld", "w-sgld-b", "pi-sgld"):
            cfg = SamplerConfig(stepsize=0.05, iterations=1, svgd_weight=2.0)
            named = step(ParticleEnsemble(pts), target, SamplerKind(tag), cfg, RngStream(14),
                         kernel=kern, previous=prev)
            via_unified = unified_step(ParticleEnsemble(pts), target, kern, SamplerKind(tag),
                                       cfg, RngStream(14), previous=prev)
            np.testing.assert_array_equal(named.positions, via_unified.positions)

    def test_unknown_tag_rejected(self):
        with pytest.raises(ValueError):
            SamplerKind("metropolis")

    def test_infeasible_combination_requires_assertion(self):
        """A switch setting outside the preset table is refused with an
        explanation unless the caller claims responsibility for it."""
        kind = SamplerKind("unified", drift=False, interaction="svgd",
                           diffusion=True, flow="simulate")
        target = standard_gaussian(2)
        cfg = SamplerConfig(stepsize=0.05, iterations=1)
        ens = ParticleEnsemble(np.zeros((3, 2)))
        with pytest.raises(ValueError, match="stationar"):
            unified_step(ens, target, KernelSpec(bandwidth=1.0), kind, cfg, RngStream(0))

    def test_asserted_combination_runs(self):
        kind = SamplerKind("unified", drift=False, interaction="svgd",
                           diffusion=True, flow="simulate", user_asserted=True)
        target = standard_gaussian(2)
        cfg = SamplerConfig(stepsize=0.05, iterations=1)
        ens = ParticleEnsemble(np.random.default_rng(15).normal(size=(4, 2)))
        out = unified_step(ens, target, KernelSpec(bandwidth=1.0), kind, cfg, RngStream(0))
        assert np.all(np.isfinite(out.positions))


class TestRunSampler:
    def test_callback_sees_every_iteration(self):
        target = standard_gaussian(2)
        cfg = SamplerConfig(stepsize=0.05, iterations=7)
        seen = []
        run_sampler(target, SamplerKind("sgld"), cfg,
                    ParticleEnsemble(np.zeros((3, 2))), RngStream(16),
                    callback=lambda t, ens: seen.append(t))
        assert seen == list(range(1, 8))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises(self):
        """An exploding step produces non-finite positions and a clear error."""
        target = toy_target("banana")
        cfg = SamplerConfig(stepsize=1e8, iterations=50, diffusion_weight=0.0)
        ens = ParticleEnsemble(np.full((4, 2), 3.0))
        with pytest.raises(DivergenceError):
            run_sampler(target, SamplerKind("svgd"), cfg, ens, RngStream(17),
                        kernel=KernelSpec(bandwidth=1.0))

    def test_reproducible_end_to_end(self):
        target = toy_target("bimodal-gauss")
        cfg = SamplerConfig(stepsize=0.05, iterations=30)
        start = RngStream(18).standard_normal((20, 2))
        a = run_sampler(target, SamplerKind("pi-sgld"), cfg, ParticleEnsemble(start), RngStream(19))
        b = run_sampler(target, SamplerKind("pi-sgld"), cfg, ParticleEnsemble(start), RngStream(19))
        np.testing.assert_array_equal(a.positions, b.positions)
