import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import expm
from scipy.spatial.transform import Rotation

from geospline.lie_groups import (
    GroupElement,
    LogBranchError,
    MetricTensor,
    adjoint,
    bracket,
    compose,
    exp,
    get_group,
    hat,
    inner,
    inverse,
    log,
    vee,
)

GROUPS = ["SO3", "SE2", "SE3"]
finite = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)


def vectors(n):
    return arrays(np.float64, n, elements=finite)


def clipped(G, xi, max_angle=3.0):
    """Scale the rotational part of ``xi`` to lie on the principal branch."""
    xi = np.array(xi, dtype=float)
    rot = np.linalg.norm(xi[: G.rot_coords])
    if rot > max_angle:
        xi[: G.rot_coords] *= max_angle / rot
    return xi


class TestHatVee:
    def test_so3_basis_e1(self):
        np.testing.assert_array_equal(hat([1, 0, 0], "SO3"), [[0, 0, 0], [0, 0, -1], [0, 1, 0]])

    def test_zero(self):
        np.testing.assert_array_equal(hat([0, 0, 0], "SO3"), np.zeros((3, 3)))
        np.testing.assert_array_equal(vee(np.zeros((3, 3)), "SO3"), np.zeros(3))

    def test_se3_translation_basis(self):
        e4 = np.zeros((4, 4))
        e4[0, 3] = 1.0
        np.testing.assert_array_equal(hat([0, 0, 0, 1, 0, 0], "SE3"), e4)
        e6 = np.zeros((4, 4))
        e6[2, 3] = 1.0
        np.testing.assert_array_equal(vee(e6, "SE3"), [0, 0, 0, 0, 0, 1])

    def test_roundtrip_example(self):
        np.testing.assert_array_equal(vee(hat([1, 2, 3], "SO3"), "SO3"), [1, 2, 3])

    @pytest.mark.parametrize("group", GROUPS)
    def test_roundtrip_exact_on_many_vectors(self, group):
        G = get_group(group)
        rng = np.random.default_rng(0)
        V = np.concatenate([np.eye(G.dim), rng.normal(size=(1000, G.dim))])
        np.testing.assert_array_equal(vee(hat(V, group), group), V)

    def test_rejects_non_algebra_matrix(self):
        with pytest.raises(ValueError, match="not in the Lie algebra"):
            vee(np.eye(3), "SO3")

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            hat([1, 2], "SO3")


class TestBracket:
    def test_se3_rotations(self):
        np.testing.assert_allclose(bracket([1, 0, 0, 0, 0, 0], [0, 1, 0, 0, 0, 0], "SE3"), [0, 0, 1, 0, 0, 0])

    def test_se2_basis(self):
        np.testing.assert_allclose(bracket([1, 0, 0], [0, 1, 0], "SE2"), [0, 0, 1])

    @pytest.mark.parametrize("group", GROUPS)
    @settings(max_examples=50, deadline=None)
    @given(data=st.data())
    def test_matches_matrix_commutator(self, group, data):
        G = get_group(group)
        u = data.draw(vectors(G.dim))
        w = data.draw(vectors(G.dim))
        U, W = hat(u, group), hat(w, group)
        np.testing.assert_allclose(bracket(u, w, group), vee(U @ W - W @ U, group), atol=1e-12)
        np.testing.assert_allclose(bracket(u, u, group), 0.0, atol=0)

    @pytest.mark.parametrize("group", GROUPS)
    @settings(max_examples=50, deadline=None)
    @given(data=st.data())
    def test_jacobi_identity(self, group, data):
        G = get_group(group)
        u, w, z = (data.draw(vectors(G.dim)) for _ in range(3))
        b = lambda p, q: bracket(p, q, group)  # noqa: E731
        total = b(u, b(w, z)) + b(w, b(z, u)) + b(z, b(u, w))
        np.testing.assert_allclose(total, 0.0, atol=1e-12 * (1 + np.abs(u).max() * np.abs(w).max() * np.abs(z).max()))


class TestComposition:
    def test_identity_and_inverse(self):
        g = exp([0.3, -0.2, 0.9, 1.0, 2.0, -1.0], "SE3")
        np.testing.assert_allclose(compose(g, GroupElement.identity("SE3")).matrix, g.matrix)
        np.testing.assert_allclose(compose(inverse(g), g).matrix, np.eye(4), atol=1e-12)

    def test_translations_add(self):
        a = GroupElement.from_rt("SE3", np.eye(3), [1.0, 2.0, 3.0])
        b = GroupElement.from_rt("SE3", np.eye(3), [-0.5, 0.25, 4.0])
        np.testing.assert_allclose((a @ b).r, [0.5, 2.25, 7.0])

    def test_group_mismatch(self):
        with pytest.raises(ValueError, match="group mismatch"):
            compose(GroupElement.identity("SE2"), GroupElement.identity("SE3"))


class TestExpLog:
    def test_exp_zero(self):
        for group in GROUPS:
            G = get_group(group)
            np.testing.assert_array_equal(exp(np.zeros(G.dim), group).matrix, np.eye(G.size))

    def test_so3_quarter_turn(self):
        R = exp([0, 0, np.pi / 2], "SO3").matrix
        np.testing.assert_allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)

    def test_se2_pure_translation(self):
        np.testing.assert_allclose(exp([0, 1, 0], "SE2").matrix, [[1, 0, 1], [0, 1, 0], [0, 0, 1]])

    def test_log_three_radians(self):
        R = Rotation.from_rotvec([3.0, 0, 0]).as_matrix()
        np.testing.assert_allclose(log(GroupElement("SO3", R)), [3.0, 0, 0], atol=1e-12)

    def test_log_identity(self):
        np.testing.assert_array_equal(log(GroupElement.identity("SE3")), np.zeros(6))

    def test_log_branch_error_near_pi(self):
        R = Rotation.from_rotvec([0, np.pi - 1e-8, 0]).as_matrix()
        with pytest.raises(LogBranchError):
            log(GroupElement("SO3", R))
        w = get_group("SO3").log(R, strict=False)
        assert abs(np.linalg.norm(w) - (np.pi - 1e-8)) < 1e-6

    @pytest.mark.parametrize("group", GROUPS)
    @settings(max_examples=100, deadline=None)
    @given(data=st.data())
    def test_exp_matches_matrix_series(self, group, data):
        G = get_group(group)
        xi = data.draw(vectors(G.dim))
        np.testing.assert_allclose(G.exp(xi), expm(G.hat(xi)), atol=1e-9)

    @pytest.mark.parametrize("group", GROUPS)
    @settings(max_examples=200, deadline=None)
    @given(data=st.data())
    def test_roundtrip(self, group, data):
        G = get_group(group)
        xi = clipped(G, data.draw(vectors(G.dim)))
        np.testing.assert_allclose(G.log(G.exp(xi)), xi, atol=1e-9)

    def test_roundtrip_unit_rotation(self):
        G = get_group("SE3")
        xi = np.array([0.6, 0.0, 0.8, 1.0, -2.0, 0.5])
        np.testing.assert_allclose(G.log(G.exp(xi)), xi, atol=1e-12)

    def test_so3_log_agrees_with_scipy(self):
        rng = np.random.default_rng(1)
        R = Rotation.random(500, random_state=rng)
        w = R.as_rotvec()
        keep = np.linalg.norm(w, axis=1) < np.pi - 1e-3
        np.testing.assert_allclose(get_group("SO3").log(R.as_matrix()[keep]), w[keep], atol=1e-10)

    def test_batched_exp(self):
        G = get_group("SE3")
        xi = np.random.default_rng(2).normal(size=(7, 5, 6))
        out = G.exp(xi)
        assert out.shape == (7, 5, 4, 4)
        np.testing.assert_allclose(out[3, 2], G.exp(xi[3, 2]))


class TestAdjoint:
    def test_identity(self):
        xi = np.array([1.0, 2, 3, 4, 5, 6])
        np.testing.assert_allclose(adjoint(GroupElement.identity("SE3"), xi), xi)

    def test_pure_translation(self):
        r = np.array([0.5, -1.0, 2.0])
        a, b = np.array([1.0, 2.0, -1.0]), np.array([0.3, 0.2, 0.1])
        g = GroupElement.from_rt("SE3", np.eye(3), r)
        np.testing.assert_allclose(adjoint(g, np.concatenate([a, b])), np.concatenate([a, b - np.cross(a, r)]))

    @pytest.mark.parametrize("group", GROUPS)
    def test_homomorphism_and_conjugation(self, group):
        G = get_group(group)
        rng = np.random.default_rng(3)
        for _ in range(100):
            g, h = (GroupElement(group, G.exp(rng.normal(size=G.dim))) for _ in range(2))
            xi = rng.normal(size=G.dim)
            np.testing.assert_allclose(adjoint(g @ h, xi), adjoint(g, adjoint(h, xi)), atol=1e-10)
            conj = g.matrix @ G.hat(xi) @ np.linalg.inv(g.matrix)
            np.testing.assert_allclose(adjoint(g, xi), G.vee(conj), atol=1e-10)


class TestMetric:
    def test_inner_examples(self):
        I = MetricTensor.create("SE3", J=[2, 1, 1])
        e1, e2 = np.eye(6)[0], np.eye(6)[1]
        assert inner(e1, e1, I) == 2.0
        assert inner(e1, e2, I) == 0.0

    def test_se2_layout(self):
        I = MetricTensor.create("SE2", J=2.0, m=3.0)
        np.testing.assert_array_equal(I.diag, [2.0, 3.0, 3.0])

    @pytest.mark.parametrize("bad", [0.0, -1.0, np.nan])
    def test_rejects_non_positive(self, bad):
        with pytest.raises(ValueError):
            MetricTensor.create("SO3", J=bad)

    @settings(max_examples=50, deadline=None)
    @given(u=vectors(6), diag=arrays(np.float64, 6, elements=st.floats(0.1, 10)))
    def test_positive_definite_and_symmetric(self, u, diag):
        I = MetricTensor("SE3", diag)
        w = np.arange(6.0)
        assert I.inner(u, w) == I.inner(w, u)
        assume(np.abs(u).max() > 1e-100)
        assert I.inner(u, u) > 0


def test_element_rejects_bad_shape():
    with pytest.raises(ValueError):
        GroupElement("SE3", np.eye(3))


def test_validate_catches_drift():
    R = np.eye(3)
    R[0, 0] = 1.0 + 1e-6
    with pytest.raises(ValueError, match="not a proper rotation"):
        GroupElement("SO3", R).validate()


def test_unknown_group():
    with pytest.raises(ValueError, match="unknown group"):
        get_group("SL2")
