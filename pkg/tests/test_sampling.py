import numpy as np
import pytest
from scipy import stats

from boltzgrad.sampling import (
    ConditioningSpec,
    DensitySpec,
    EmptyEnsemble,
    EnvelopeViolated,
    PhaseCell,
    RejectionBudgetExceeded,
    estimate_correlation,
    estimate_partition_function,
    sample_factorized,
    sample_grand_canonical,
    sample_velocity,
)
from boltzgrad.simulate import simulate
from boltzgrad.torus import minimal_image


def velocity_chi_square(draws, spec, bins=8, lim=3.5):
    """Chi-square p-value of sampled velocities against the analytic
    two-dimensional marginal, on a bins x bins grid with pooled tails."""
    edges = np.linspace(-lim, lim, bins + 1)
    counts, _, _ = np.histogram2d(draws[:, 0], draws[:, 1], bins=(edges, edges))
    # cell probabilities by midpoint quadrature on a fine subgrid
    fine = 6
    probs = np.zeros((bins, bins))
    for i in range(bins):
        for j in range(bins):
            xs = np.linspace(edges[i], edges[i + 1], fine + 1)[:-1] + (edges[1] - edges[0]) / (2 * fine)
            ys = np.linspace(edges[j], edges[j + 1], fine + 1)[:-1] + (edges[1] - edges[0]) / (2 * fine)
            pts = np.stack(np.meshgrid(xs, ys, indexing="ij"), -1).reshape(-1, 2)
            cell_area = (edges[1] - edges[0]) ** 2
            probs[i, j] = spec.velocity_density(pts).mean() * cell_area
    inside = counts.sum()
    keep = (probs * inside).ravel() >= 5
    obs = counts.ravel()[keep]
    exp = probs.ravel()[keep] * inside / probs.ravel()[keep].sum()
    obs = obs * exp.sum() / obs.sum()
    return stats.chisquare(obs, exp).pvalue


class TestDensitySpec:
    def test_maxwellian_mean_square_speed(self):
        spec = DensitySpec(beta=1.0, dim=2)
        rng = np.random.default_rng(0)
        v = sample_velocity(spec, rng, 100_000)
        m2 = np.sum(v**2, axis=1)
        se = m2.std() / np.sqrt(len(m2))
        assert abs(m2.mean() - 2.0) < 3 * se

    def test_two_bump_goodness_of_fit(self):
        spec = DensitySpec(beta=1.0, dim=2, form="two_bump")
        rng = np.random.default_rng(1)
        v = spec.sample_velocity(rng, 60_000)
        assert velocity_chi_square(v, spec, lim=4.0) > 0.01

    def test_envelope_probe_maxwellian(self):
        spec = DensitySpec(beta=1.0, dim=2)
        spec.check_envelope()  # raises on violation
        v = spec._probe_velocities()
        vals = spec.velocity_density(v) * np.exp(spec.mu + 0.5 * np.sum(v * v, -1))
        assert vals.max() <= 1.0 + 1e-9

    def test_two_bump_needs_tighter_bumps(self):
        with pytest.raises(ValueError):
            DensitySpec(beta=1.0, dim=2, form="two_bump", bump_beta=0.5)

    def test_custom_rejection_matches_density(self):
        target = DensitySpec(beta=1.0, dim=2, form="two_bump")
        spec = DensitySpec(
            beta=1.0, dim=2, form="custom",
            custom_density=target.velocity_density,
        )
        rng = np.random.default_rng(2)
        v = spec.sample_velocity(rng, 30_000)
        assert velocity_chi_square(v, target, lim=4.0) > 0.01

    def test_envelope_violation_detected(self):
        base = DensitySpec(beta=1.0, dim=2)
        bad = DensitySpec(
            beta=1.0, dim=2, form="custom",
            custom_density=base.velocity_density, mu=base.mu,
        )
        bad.mu = base.mu + 0.5  # claim a tighter envelope than the density obeys
        with pytest.raises(EnvelopeViolated):
            bad.check_envelope()

    def test_moment_matched_maxwellian(self):
        spec = DensitySpec(beta=1.0, dim=2, form="two_bump")
        m = spec.moment_matched_maxwellian()
        assert np.isclose(m.dim / m.beta, spec.mean_square_speed())


class TestFactorized:
    def test_single_particle_immediate(self):
        spec = DensitySpec(beta=1.0, dim=2)
        cfg = sample_factorized(spec, 1, 0.1, np.random.default_rng(3))
        assert cfg.n == 1

    def test_two_particle_acceptance_probability(self):
        spec = DensitySpec(beta=1.0, dim=2)
        p, se = estimate_partition_function(spec, 2, 0.1, 20_000, np.random.default_rng(4))
        assert abs(p - (1 - np.pi * 0.01)) < 3 * se

    def test_partition_function_monotone(self):
        spec = DensitySpec(beta=1.0, dim=2)
        p2, se2 = estimate_partition_function(spec, 2, 0.1, 10_000, np.random.default_rng(5))
        p3, se3 = estimate_partition_function(spec, 3, 0.1, 10_000, np.random.default_rng(6))
        assert p3 <= p2 + 3 * (se2 + se3)
        p1, se1 = estimate_partition_function(spec, 1, 0.1, 100, np.random.default_rng(7))
        assert p1 == 1.0

    def test_budget_exceeded(self):
        spec = DensitySpec(beta=1.0, dim=2)
        with pytest.raises(RejectionBudgetExceeded):
            sample_factorized(spec, 40, 0.2, np.random.default_rng(8), budget=50)

    def test_samplers_agree_on_pair_distances(self):
        # cross-sampler oracle: radial distribution for N = 8, d = 2
        spec = DensitySpec(beta=1.0, dim=2)
        n, eps, reps = 8, 0.1, 250
        edges = np.array([eps, 0.15, 0.25, 0.35, 0.5, 0.72])

        def pooled_histogram(method, seed):
            rng = np.random.default_rng(seed)
            per_rep = np.zeros((reps, len(edges) - 1))
            iu, ju = np.triu_indices(n, k=1)
            for r in range(reps):
                cfg = sample_factorized(spec, n, eps, rng, method=method, burn_in=60)
                d = np.linalg.norm(minimal_image(cfg.x[iu], cfg.x[ju]), axis=-1)
                per_rep[r] = np.histogram(d, bins=edges)[0]
            mean = per_rep.mean(0)
            err = per_rep.std(0, ddof=1) / np.sqrt(reps)
            return mean, err

        m1, e1 = pooled_histogram("global_rejection", 9)
        m2, e2 = pooled_histogram("markov_chain", 10)
        z = np.abs(m1 - m2) / np.sqrt(e1**2 + e2**2 + 1e-300)
        assert np.all(z < 3.5)

    def test_velocity_marginal_unconstrained(self):
        spec = DensitySpec(beta=1.0, dim=2)
        rng = np.random.default_rng(11)
        vels = np.concatenate(
            [sample_factorized(spec, 8, 0.1, rng).v for _ in range(500)]
        )
        assert velocity_chi_square(vels, spec) > 0.01


class TestGrandCanonical:
    def test_mean_count_matches_tilted_poisson(self):
        spec = DensitySpec(beta=1.0, dim=2)
        eps = 0.1
        mu_eps = 1 / eps
        rng = np.random.default_rng(12)
        ns = np.array(
            [sample_grand_canonical(spec, eps, rng).n for _ in range(800)]
        )
        # Poisson proposal tilted by the independent-pair exclusion estimate
        k = np.arange(0, 60)
        logw = stats.poisson.logpmf(k, mu_eps) - k * (k - 1) / 2 * np.pi * eps**2
        w = np.exp(logw - logw.max())
        mean_pred = float(np.sum(k * w) / np.sum(w))
        se = ns.std(ddof=1) / np.sqrt(len(ns))
        assert abs(ns.mean() - mean_pred) < 3 * se + 0.02 * mean_pred

    def test_conditioned_samples_collision_free(self):
        spec = DensitySpec(beta=1.0, dim=2)
        eps, delta = 0.05, 0.02
        cond = ConditioningSpec(delta=delta, eps=eps)
        rng = np.random.default_rng(13)
        for _ in range(60):
            s = sample_grand_canonical(spec, eps, rng, conditioning=cond)
            if s.n >= 2:
                _, log = simulate(s.config, delta)
                assert len(log) == 0

    def test_conditioned_scaling_kappa_stable(self):
        spec = DensitySpec(beta=1.0, dim=2)
        delta = 0.01
        kappas = []
        for eps, reps in ((0.05, 400), (0.035, 300)):
            rng = np.random.default_rng(14)
            cond = ConditioningSpec(delta=delta, eps=eps)
            ns = [sample_grand_canonical(spec, eps, rng, conditioning=cond).n
                  for _ in range(reps)]
            kappas.append(eps * np.mean(ns))
        assert abs(kappas[0] - kappas[1]) < 0.1 * max(kappas)


class TestCorrelations:
    @staticmethod
    def _cells():
        ca = PhaseCell([0.0, 0.0], [0.5, 1.0], [-1.0, -1.0], [1.0, 1.0])
        cb = PhaseCell([0.5, 0.0], [1.0, 1.0], [-1.0, -1.0], [1.0, 1.0])
        return ca, cb

    @staticmethod
    def _gauss_mass(lo, hi, beta=1.0):
        s = 1 / np.sqrt(beta)
        return float(
            np.prod([stats.norm.cdf(h, 0, s) - stats.norm.cdf(l, 0, s) for l, h in zip(lo, hi)])
        )

    def _ensemble(self, cond=None, eps=0.05, reps=500, seed=15):
        spec = DensitySpec(beta=1.0, dim=2)
        rng = np.random.default_rng(seed)
        return [sample_grand_canonical(spec, eps, rng, conditioning=cond) for _ in range(reps)]

    def test_empty_ensemble_raises(self):
        with pytest.raises(EmptyEnsemble):
            estimate_correlation([], 1, [self._cells()[0]], 0.05)

    def test_first_correlation_matches_f0(self):
        # the exclusion tilt kappa(eps) = eps E[n] is a global factor; the
        # velocity shape is exactly f0's, and the absolute level approaches
        # f0 as eps shrinks
        eps = 0.01
        samples = self._ensemble(eps=eps, reps=400, seed=15)
        ca, cb = self._cells()
        est, err = estimate_correlation(samples, 1, [ca, cb], eps)
        kappa = eps * np.mean([s.n for s in samples])
        for cell, e, s in zip((ca, cb), est, err):
            f0_cell = self._gauss_mass(cell.v_lo, cell.v_hi) / np.prod(cell.v_hi - cell.v_lo)
            assert abs(e / kappa - f0_cell) < 4 * s / kappa   # exact shape identity
            assert abs(e - f0_cell) < 4 * s + 0.05 * f0_cell  # absolute, small-eps tilt

    def test_second_correlation_factorizes(self):
        eps = 0.05
        samples = self._ensemble(eps=eps, reps=700, seed=16)
        ca, cb = self._cells()
        (f2,), (e2,) = estimate_correlation(samples, 2, [(ca, cb)], eps)
        (fa, fb), (ea, eb) = estimate_correlation(samples, 1, [ca, cb], eps)
        assert abs(f2 - fa * fb) < 3 * (e2 + fa * eb + fb * ea)

    def test_uniform_bound_by_f0_product(self):
        eps = 0.05
        samples = self._ensemble(eps=eps, reps=500, seed=17)
        ca, cb = self._cells()
        (f2,), (e2,) = estimate_correlation(samples, 2, [(ca, cb)], eps)
        f0a = self._gauss_mass(ca.v_lo, ca.v_hi) / np.prod(ca.v_hi - ca.v_lo)
        f0b = self._gauss_mass(cb.v_lo, cb.v_hi) / np.prod(cb.v_hi - cb.v_lo)
        assert f2 <= f0a * f0b + 3 * e2

    def test_conditioned_below_unconditioned_nowhere_above_f0(self):
        eps = 0.05
        cond = ConditioningSpec(delta=0.02, eps=eps)
        samples = self._ensemble(cond=cond, eps=eps, reps=400, seed=18)
        ca, _ = self._cells()
        (f1,), (e1,) = estimate_correlation(samples, 1, [ca], eps)
        f0_cell = self._gauss_mass(ca.v_lo, ca.v_hi) / np.prod(ca.v_hi - ca.v_lo)
        assert f1 <= f0_cell + 3 * e1
