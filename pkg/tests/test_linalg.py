import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geom.errors import DegenerateMetric
from geom.linalg import flat_components, index_of, invert_sym, jacobi_eigh, orthonormal_basis, sharp_components
from geom.rng import Lcg64


def random_sym(rng, m, nu):
    """Random symmetric matrix of index ``nu``: Q diag(eps * lam) Q^T."""
    a = np.array([[rng.normal() for _ in range(m)] for _ in range(m)])
    q, _ = np.linalg.qr(a)
    lam = np.array([rng.uniform(0.2, 3.0) for _ in range(m)])
    lam[:nu] *= -1
    return q @ np.diag(lam) @ q.T


class TestJacobi:
    def test_matches_characteristic_polynomial(self):
        lam, _ = jacobi_eigh(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert sorted(lam) == pytest.approx([-1.0, 1.0], abs=1e-15)

    def test_reconstruction(self):
        rng = Lcg64(1)
        for m in range(1, 7):
            a = random_sym(rng, m, m // 2)
            lam, v = jacobi_eigh(a)
            np.testing.assert_allclose(v @ np.diag(lam) @ v.T, a, atol=1e-12)
            np.testing.assert_allclose(v.T @ v, np.eye(m), atol=1e-13)

    def test_already_diagonal(self):
        lam, v = jacobi_eigh(np.diag([3.0, -1.0, 2.0]))
        assert list(lam) == [3.0, -1.0, 2.0]
        assert np.array_equal(v, np.eye(3))

    def test_tiny_off_diagonal(self):
        a = np.array([[1.0, 1e-200], [1e-200, 1.0 + 1e-15]])
        lam, _ = jacobi_eigh(a)
        assert np.all(np.isfinite(lam))


class TestInverse:
    def test_identity(self):
        assert np.array_equal(invert_sym(np.eye(3)), np.eye(3))

    def test_minkowski_self_inverse(self):
        g = np.diag([-1.0, 1.0, 1.0, 1.0])
        assert np.array_equal(invert_sym(g), g)

    def test_degenerate(self):
        with pytest.raises(DegenerateMetric):
            invert_sym(np.diag([0.0, 1.0]), tol=1e-12)

    def test_result_symmetric(self):
        g = random_sym(Lcg64(4), 4, 1)
        inv = invert_sym(g)
        assert np.array_equal(inv, inv.T)
        np.testing.assert_allclose(inv @ g, np.eye(4), atol=1e-12)


class TestIndex:
    @pytest.mark.parametrize(
        "g, nu",
        [(np.eye(3), 0), (np.diag([-1.0, 1, 1, 1]), 1), (np.array([[0.0, 1.0], [1.0, 0.0]]), 1), (-np.eye(2), 2)],
    )
    def test_examples(self, g, nu):
        assert index_of(g) == nu

    def test_degenerate_rejected(self):
        with pytest.raises(DegenerateMetric):
            index_of(np.diag([1.0, 0.0]))

    def test_sylvester_invariance(self):
        """Index is unchanged under congruence A^T g A for invertible A."""
        rng = Lcg64(9)
        for m in range(1, 6):
            for nu in range(m + 1):
                g = random_sym(rng, m, nu)
                a = np.array([[rng.normal() for _ in range(m)] for _ in range(m)]) + 3 * np.eye(m)
                assert index_of(g) == nu
                assert index_of(a.T @ g @ a) == nu


class TestOrthonormalBasis:
    def test_identity(self):
        b, eps = orthonormal_basis(np.eye(2))
        np.testing.assert_allclose(b, np.eye(2))
        assert list(eps) == [1, 1]

    def test_rescaling(self):
        b, eps = orthonormal_basis(np.diag([4.0, 9.0]))
        np.testing.assert_allclose(b, np.diag([0.5, 1.0 / 3.0]), atol=1e-15)
        assert list(eps) == [1, 1]

    def test_negatives_first(self):
        b, eps = orthonormal_basis(np.diag([1.0, -1.0, 2.0]))
        assert list(eps) == [-1, 1, 1]

    def test_random(self):
        rng = Lcg64(2)
        for m in range(1, 6):
            for nu in range(m + 1):
                g = random_sym(rng, m, nu)
                b, eps = orthonormal_basis(g)
                np.testing.assert_allclose(b.T @ g @ b, np.diag(eps), atol=1e-10)
                assert int(np.sum(eps < 0)) == nu


class TestFlatSharp:
    def test_diagonal(self):
        assert list(flat_components(np.diag([-1.0, 1.0]), [1.0, 2.0])) == [-1.0, 2.0]

    def test_identity_is_trivial(self):
        v = np.array([0.3, -2.0, 5.0])
        assert np.array_equal(flat_components(np.eye(3), v), v)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32), nu=st.integers(0, 3))
    def test_round_trip(self, seed, nu):
        rng = Lcg64(seed)
        g = random_sym(rng, 3, nu)
        v = np.array([rng.normal() for _ in range(3)])
        back = sharp_components(invert_sym(g), flat_components(g, v))
        np.testing.assert_allclose(back, v, atol=1e-9 * max(1.0, np.max(np.abs(v))))


class TestLcg:
    def test_deterministic(self):
        a, b = Lcg64(7), Lcg64(7)
        assert [a.next_u64() for _ in range(5)] == [b.next_u64() for _ in range(5)]

    def test_recurrence(self):
        mask = (1 << 64) - 1
        r = Lcg64(0)
        s0 = r.next_u64()
        s1 = r.next_u64()
        assert s1 == (6364136223846793005 * s0 + 1442695040888963407) & mask

    def test_uniform_range(self):
        r = Lcg64(3)
        xs = [r.uniform(-2.0, 5.0) for _ in range(2000)]
        assert min(xs) > -2.0 and max(xs) < 5.0
        assert abs(np.mean(xs) - 1.5) < 0.2

    def test_normal_moments(self):
        xs = Lcg64(4).normals(20000)
        assert abs(np.mean(xs)) < 0.03
        assert abs(np.std(xs) - 1.0) < 0.03
