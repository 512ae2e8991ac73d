import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from motion_prior import skeleton as sk
from motion_prior.kinematics import forward_kinematics, global_rotations
from motion_prior.rotation import matrix_to_rot6d
from motion_prior.skeleton import Skeleton
from motion_prior.tensor import Tensor

CHAIN = Skeleton(["a", "b", "c"], [-1, 0, 1], np.array([[0, 0, 0], [0, 1.0, 0], [0, 1.0, 0]]))
RZ90 = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])


def fk_loop(R, skeleton, root):
    """Recursive per-joint oracle."""
    P, G = {}, {}
    def visit(j):
        p = skeleton.parents[j]
        if p < 0:
            G[j], P[j] = R[j], root
        else:
            G[j] = G[p] @ R[j]
            P[j] = P[p] + G[p] @ skeleton.offsets[j]
        for c in skeleton.children(j):
            visit(c)
    visit(skeleton.root)
    return np.stack([P[j] for j in range(skeleton.n_joints)])


def test_straight_chain():
    P = forward_kinematics(np.broadcast_to(np.eye(3), (3, 3, 3)), CHAIN)
    np.testing.assert_allclose(P, [[0, 0, 0], [0, 1, 0], [0, 2, 0]])


def test_root_rotation_hand_case():
    R = np.stack([RZ90, np.eye(3), np.eye(3)])
    P = forward_kinematics(R, CHAIN)
    np.testing.assert_allclose(P[1], [-1, 0, 0], atol=1e-15)


def test_translation_shifts_everything():
    R = Rotation.random(3, random_state=0).as_matrix()
    t = np.array([0.3, -1.0, 2.0])
    np.testing.assert_allclose(forward_kinematics(R, CHAIN, t), forward_kinematics(R, CHAIN) + t, atol=1e-15)


def test_joint_count_mismatch():
    with pytest.raises(ValueError):
        forward_kinematics(np.broadcast_to(np.eye(3), (4, 3, 3)), CHAIN)


def test_matches_recursive_oracle_on_smpl():
    skel = sk.smpl24()
    R = Rotation.random(24, random_state=1).as_matrix()
    root = np.array([0.1, 0.9, -0.2])
    np.testing.assert_allclose(forward_kinematics(R, skel, root), fk_loop(R, skel, root), atol=1e-12)
    G = global_rotations(R, skel)
    np.testing.assert_allclose(G[4], R[0] @ R[1] @ R[4], atol=1e-12)


def test_6d_input_and_tensor_path():
    skel = sk.toy7()
    R = Rotation.random((2 * 7), random_state=2).as_matrix().reshape(2, 7, 3, 3)
    x = matrix_to_rot6d(R)
    P_np = forward_kinematics(R, skel)
    np.testing.assert_allclose(forward_kinematics(x, skel), P_np, atol=1e-12)
    np.testing.assert_allclose(forward_kinematics(Tensor(x), skel).data, P_np, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 30), seed=st.integers(0, 2**31))
def test_bone_lengths_and_equivariance(n, seed):
    rng = np.random.default_rng(seed)
    skel = sk.random_tree(n, rng)
    R = Rotation.random(n, random_state=seed % (2**32)).as_matrix()
    root = rng.standard_normal(3)
    P = forward_kinematics(R, skel, root)
    for j, p in enumerate(skel.parents):
        if p >= 0:
            assert abs(np.linalg.norm(P[j] - P[p]) - np.linalg.norm(skel.offsets[j])) < 1e-6
    R0 = Rotation.random(random_state=(seed + 1) % (2**32)).as_matrix()
    R2 = R.copy()
    R2[skel.root] = R0 @ R[skel.root]
    np.testing.assert_allclose(forward_kinematics(R2, skel, root), root + (P - root) @ R0.T, atol=1e-9)
