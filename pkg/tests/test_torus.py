import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boltzgrad.torus import (
    ContactResult,
    InitialOverlap,
    NonUnitNormal,
    ParticleState,
    free_flight,
    minimal_image,
    pair_collision_time,
    scatter,
    torus_distance,
    wrap,
)


def grid_oracle_min_distance(z1, z2, t_max, step=1e-4):
    """Dense time grid of the free-flight torus distance."""
    ts = np.arange(0.0, t_max + step, step)
    p1 = z1.x + ts[:, None] * z1.v
    p2 = z2.x + ts[:, None] * z2.v
    return ts, np.linalg.norm(minimal_image(p1, p2), axis=-1)


class TestMinimalImage:
    def test_wrap_across_boundary(self):
        assert np.allclose(minimal_image(np.array([0.9]), np.array([0.1])), [-0.2])

    def test_identity(self):
        a = np.array([0.3, 0.7])
        assert np.all(minimal_image(a, a) == 0.0)

    def test_antipodal_halfopen_convention(self):
        d = minimal_image(np.array([0.25, 0.5]), np.array([0.75, 0.5]))
        assert np.allclose(d, [-0.5, 0.0])
        assert np.isclose(torus_distance(np.array([0.25, 0.5]), np.array([0.75, 0.5])), 0.5)

    def test_range(self):
        rng = np.random.default_rng(0)
        a, b = rng.random((2, 1000, 3))
        d = minimal_image(a, b)
        assert np.all(d >= -0.5) and np.all(d < 0.5)

    @given(
        st.lists(st.floats(0, 0.999999), min_size=2, max_size=2),
        st.lists(st.floats(0, 0.999999), min_size=2, max_size=2),
    )
    @settings(max_examples=200)
    def test_antisymmetry(self, a, b):
        a, b = np.array(a), np.array(b)
        d1, d2 = minimal_image(a, b), minimal_image(b, a)
        # exact antisymmetry except on the measure-zero antipodal tie set
        ties = np.isclose(np.abs(d1), 0.5, atol=1e-12)
        assert np.allclose(d1[~ties], -d2[~ties], atol=1e-12)


class TestFreeFlight:
    def test_one_wrap(self):
        z = ParticleState(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
        out = free_flight(z, 0.75)
        assert np.allclose(out.x, [0.25, 0.5])

    def test_zero_time_identity(self):
        z = ParticleState(np.array([0.1, 0.9]), np.array([-2.0, 3.0]))
        out = free_flight(z, 0.0)
        assert np.allclose(out.x, z.x) and np.allclose(out.v, z.v)

    def test_group_property(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            z = ParticleState(rng.random(2), rng.normal(size=2))
            t = rng.uniform(-3, 3)
            back = free_flight(free_flight(z, t), -t)
            assert np.allclose(back.x, z.x, atol=1e-12)


class TestPairCollisionTime:
    def test_collinear_approach(self):
        z1 = ParticleState(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
        z2 = ParticleState(np.array([0.5, 0.0]), np.array([0.0, 0.0]))
        res = pair_collision_time(z1, z2, 0.1, 1.0)
        assert res and np.isclose(res.time, 0.4, atol=1e-12)
        assert np.allclose(res.nu, [1.0, 0.0], atol=1e-9)

    def test_root_beyond_horizon(self):
        z1 = ParticleState(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
        z2 = ParticleState(np.array([0.5, 0.0]), np.array([0.0, 0.0]))
        assert not pair_collision_time(z1, z2, 0.1, 0.3)

    def test_receding_no_contact_grid_checked(self):
        z1 = ParticleState(np.array([0.0, 0.0]), np.array([-1.0, 0.0]))
        z2 = ParticleState(np.array([0.5, 0.0]), np.array([0.0, 0.0]))
        res = pair_collision_time(z1, z2, 0.1, 0.3)
        assert not res
        _, dist = grid_oracle_min_distance(z1, z2, 0.3)
        assert np.isclose(dist.min(), 0.2, atol=1e-3)

    def test_wraparound_contact(self):
        # receding inside the box but colliding through the boundary
        z1 = ParticleState(np.array([0.1, 0.0]), np.array([-1.0, 0.0]))
        z2 = ParticleState(np.array([0.5, 0.0]), np.array([0.0, 0.0]))
        res = pair_collision_time(z1, z2, 0.1, 1.0)
        assert res and np.isclose(res.time, 0.5, atol=1e-12)

    def test_initial_overlap_raises(self):
        z1 = ParticleState(np.array([0.0, 0.0]), np.zeros(2))
        z2 = ParticleState(np.array([0.05, 0.0]), np.zeros(2))
        with pytest.raises(InitialOverlap):
            pair_collision_time(z1, z2, 0.1, 1.0)

    def test_contact_invariant(self):
        rng = np.random.default_rng(7)
        hits = 0
        for _ in range(300):
            z1 = ParticleState(rng.random(2), rng.normal(size=2))
            z2 = ParticleState(rng.random(2), rng.normal(size=2))
            if torus_distance(z1.x, z2.x) < 0.05:
                continue
            res = pair_collision_time(z1, z2, 0.05, 2.0)
            if res:
                hits += 1
                d = torus_distance(z1.x + res.time * z1.v, z2.x + res.time * z2.v)
                assert abs(d - 0.05) < 1e-12
                assert abs(np.linalg.norm(res.nu) - 1.0) < 1e-12
        assert hits > 20


class TestScatter:
    def test_head_on_swap(self):
        vi, vj = scatter(np.array([1.0, 0.0]), np.array([-1.0, 0.0]), np.array([1.0, 0.0]))
        assert np.allclose(vi, [-1.0, 0.0]) and np.allclose(vj, [1.0, 0.0])

    def test_grazing_unchanged(self):
        vi, vj = scatter(np.array([1.0, 1.0]), np.array([-1.0, 1.0]), np.array([0.0, 1.0]))
        assert np.allclose(vi, [1.0, 1.0]) and np.allclose(vj, [-1.0, 1.0])

    def test_oblique_example(self):
        # direct formula evaluation cross-checked against conservation
        vi, vj = scatter(np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.0, 1.0]))
        assert np.allclose(vi, [1.0, 1.0]) and np.allclose(vj, [0.0, 0.0])
        assert np.allclose(vi + vj, [1.0, 1.0])
        assert np.isclose(vi @ vi + vj @ vj, 2.0)

    def test_non_unit_normal_raises(self):
        with pytest.raises(NonUnitNormal):
            scatter(np.zeros(2), np.zeros(2), np.array([1.0, 1.0]))

    def test_bulk_conservation_and_involution(self):
        rng = np.random.default_rng(3)
        n = 100_000
        vi = rng.normal(size=(n, 2))
        vj = rng.normal(size=(n, 2))
        nu = rng.normal(size=(n, 2))
        nu /= np.linalg.norm(nu, axis=-1, keepdims=True)
        q = np.sum((vi - vj) * nu, axis=-1, keepdims=True)
        vi2, vj2 = vi - q * nu, vj + q * nu
        assert np.abs(vi2 + vj2 - vi - vj).max() < 1e-12
        e = np.sum(vi**2 + vj**2, -1)
        e2 = np.sum(vi2**2 + vj2**2, -1)
        assert np.abs(e - e2).max() < 1e-12
        q2 = np.sum((vi2 - vj2) * nu, axis=-1, keepdims=True)
        vi3, vj3 = vi2 - q2 * nu, vj2 + q2 * nu
        assert np.abs(vi3 - vi).max() < 1e-12 and np.abs(vj3 - vj).max() < 1e-12

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_scatter_involution_hypothesis(self, seed):
        rng = np.random.default_rng(seed)
        vi, vj = rng.normal(size=2), rng.normal(size=2)
        nu = rng.normal(size=2)
        nu /= np.linalg.norm(nu)
        wi, wj = scatter(*scatter(vi, vj, nu), nu)
        assert np.allclose(wi, vi, atol=1e-12) and np.allclose(wj, vj, atol=1e-12)


def test_wrap_into_unit_box():
    assert np.allclose(wrap(np.array([1.25, -0.25, 3.0])), [0.25, 0.75, 0.0])


def test_contact_result_truthiness():
    assert not ContactResult(None, None)
    assert ContactResult(0.5, np.array([1.0, 0.0]))
