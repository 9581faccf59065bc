import numpy as np

from marionette import geom


def random_quats(rng, n):
    return geom.quat_normalize(rng.normal(size=(n, 4)))


def test_quat_mul_matches_matrix_product():
    rng = np.random.default_rng(0)
    a = random_quats(rng, 64)
    b = random_quats(rng, 64)
    lhs = geom.quat_to_mat(geom.quat_mul(a, b))
    rhs = geom.quat_to_mat(a) @ geom.quat_to_mat(b)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_rotate_matches_matrix():
    rng = np.random.default_rng(1)
    q = random_quats(rng, 128)
    v = rng.normal(size=(128, 3))
    assert np.allclose(geom.quat_rotate(q, v), np.einsum("nij,nj->ni", geom.quat_to_mat(q), v), atol=1e-12)
    assert np.allclose(geom.quat_rotate_inv(q, geom.quat_rotate(q, v)), v, atol=1e-10)


def test_axis_angle_roundtrip():
    rng = np.random.default_rng(2)
    axis = rng.normal(size=(32, 3))
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = rng.uniform(-3.0, 3.0, size=32)
    q = geom.quat_from_axis_angle(axis, angle)
    assert np.allclose(np.linalg.norm(q, axis=-1), 1.0, atol=1e-12)
    # rotating the axis leaves it fixed
    assert np.allclose(geom.quat_rotate(q, axis), axis, atol=1e-10)
    assert np.allclose(geom.quat_geodesic_angle(q, geom.quat_identity((32,))), np.abs(angle), atol=1e-9)


def test_mat_quat_roundtrip():
    rng = np.random.default_rng(3)
    q = random_quats(rng, 256)
    q_rt = geom.mat_to_quat(geom.quat_to_mat(q))
    # double cover: compare rotations, not raw components
    assert np.allclose(geom.quat_geodesic_angle(q, q_rt), 0.0, atol=1e-7)


def test_sixd_roundtrip_and_continuity():
    rng = np.random.default_rng(4)
    q = random_quats(rng, 256)
    e = geom.quat_to_sixd(q)
    assert e.shape == (256, 6)
    q_rt = geom.sixd_to_quat(e)
    assert np.allclose(geom.quat_geodesic_angle(q, q_rt), 0.0, atol=1e-7)
    # antipodal quats encode identically (same rotation)
    assert np.allclose(geom.quat_to_sixd(-q), e, atol=1e-12)


def test_box_minus_recovers_small_rotations():
    rng = np.random.default_rng(5)
    base = random_quats(rng, 64)
    axis = rng.normal(size=(64, 3))
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = rng.uniform(-0.5, 0.5, size=64)
    target = geom.quat_mul(geom.quat_from_axis_angle(axis, angle), base)
    diff = geom.quat_box_minus(target, base)
    assert np.allclose(diff, axis * angle[:, None], atol=1e-9)
    assert np.allclose(np.linalg.norm(diff, axis=-1), np.abs(angle), atol=1e-9)


def test_quat_integrate_constant_rate():
    # integrating omega about z should accumulate yaw at omega*dt per step
    q = geom.quat_identity()
    omega = np.array([0.0, 0.0, 1.5])
    dt = 1e-4
    for _ in range(10000):
        q = geom.quat_integrate(q, omega, dt)
    assert abs(geom.yaw_from_quat(q) - geom.wrap_angle(1.5)) < 1e-3


def test_heading_quat_removes_tilt():
    rng = np.random.default_rng(6)
    q = random_quats(rng, 128)
    h = geom.heading_quat(q)
    # heading quat is pure yaw
    assert np.allclose(h[..., 1], 0.0) and np.allclose(h[..., 2], 0.0)
    assert np.allclose(geom.yaw_from_quat(h), geom.yaw_from_quat(q), atol=1e-9)
    # residual tilt rotation has zero heading
    tilt = geom.quat_mul(geom.quat_conj(h), q)
    assert np.allclose(geom.yaw_from_quat(tilt), 0.0, atol=1e-9)


def test_wrap_angle():
    a = np.array([0.0, np.pi, -np.pi, 3 * np.pi, -2.5 * np.pi, 0.1])
    w = geom.wrap_angle(a)
    assert np.all(w > -np.pi - 1e-12) and np.all(w <= np.pi + 1e-12)
    assert np.allclose(np.cos(w), np.cos(a), atol=1e-12)
    assert np.allclose(np.sin(w), np.sin(a), atol=1e-12)
