import numpy as np
import pytest

from motion_prior import data, hmvae, metrics, skeleton as sk, tasks
from motion_prior.hmvae import TrainConfig, make_variant, reconstruct
from motion_prior.kinematics import forward_kinematics
from motion_prior.rotation import identity_6d, matrix_to_quat, rot6d_to_matrix
from motion_prior.tasks import OptimConfig, centre_indices, make_body_part_mask, make_keyframe_mask, \
    masked_reconstruction, optimize_latent, refine_sequence


@pytest.fixture(scope="module")
def trained():
    clips = data.synth_dataset(data.SynthConfig(seed=0, length=24), 32)
    W = data.windows_array(clips, 16, 2)
    m = make_variant(hmvae.toy_arch(), sk.toy7(), seed=0)
    m, _ = hmvae.train(m, W, TrainConfig(iters=400, lr=1e-3, switch_iter=100, seed=0))
    return m


@pytest.fixture(scope="module")
def window16():
    return data.synth_dataset(data.SynthConfig(seed=99, length=16), 1)[0].rot6d


@pytest.fixture(scope="module")
def small_refiner():
    return make_variant(hmvae.refine_arch(widths=(8, 8, 16, 16), latent_local=4, latent_global=4), sk.toy7(), seed=1)


def mpjpe6d(x, gt, skel):
    return metrics.mpjpe(forward_kinematics(rot6d_to_matrix(x), skel), forward_kinematics(rot6d_to_matrix(gt), skel))


@pytest.mark.parametrize("extra", [0, 1, 7])
def test_refine_preserves_length(small_refiner, extra):
    x = data.synth_dataset(data.SynthConfig(seed=2, length=8 + extra), 1)[0].rot6d
    assert refine_sequence(small_refiner, x).shape == x.shape


def test_refine_uses_window_centres(small_refiner):
    T = 8
    assert centre_indices(T + 2, T) == [4, 5, 6]
    x = data.synth_dataset(data.SynthConfig(seed=3, length=T + 2), 1)[0].rot6d
    out = refine_sequence(small_refiner, x)
    decoded = [reconstruct(small_refiner, x[s:s + T][None])[0] for s in range(3)]
    for s, c in enumerate(centre_indices(T + 2, T)):
        np.testing.assert_allclose(out[c], decoded[s][T // 2], atol=1e-6)
    np.testing.assert_allclose(out[:4], decoded[0][:4], atol=1e-6)
    np.testing.assert_allclose(out[7:], decoded[2][5:], atol=1e-6)
    with pytest.raises(ValueError):
        refine_sequence(small_refiner, x[:T - 1])


def test_refine_does_not_mutate_input(small_refiner):
    x = data.synth_dataset(data.SynthConfig(seed=4, length=10), 1)[0].rot6d
    before = x.copy()
    refine_sequence(small_refiner, x)
    assert np.array_equal(x, before)


def test_keyframe_masks():
    m = make_keyframe_mask(16, 10, 1)
    assert m.frames.sum() == 11 and m.frames[:10].all() and m.frames[15]
    assert make_keyframe_mask(16, 16, 0).frames.all()
    gapped = make_keyframe_mask(16, 4, 4, gap=8)
    assert list(np.flatnonzero(~gapped.frames)) == list(range(4, 12))
    with pytest.raises(ValueError):
        make_keyframe_mask(16, 0, 0)
    with pytest.raises(ValueError):
        make_keyframe_mask(16, 10, 7)


def test_body_part_masks_on_smpl():
    skel = sk.smpl24()
    upper = make_body_part_mask(skel, "upper").joints
    legs = [j for j, n in enumerate(skel.names) if any(k in n for k in ("hip", "knee", "ankle", "foot"))]
    assert legs and not upper[legs].any()
    assert upper[skel.names.index("head")] and upper[skel.names.index("left_wrist")]
    assert upper.sum() == 24 - len(legs)
    lower = make_body_part_mask(skel, "lower").joints
    assert lower[legs].all() and lower[skel.root] and not lower[skel.names.index("head")]
    assert make_body_part_mask(skel, "all").joints.all()
    with pytest.raises(ValueError):
        make_body_part_mask(skel, "nonexistent")


def test_zero_iterations_return_prior_decode(trained, window16):
    cfg = OptimConfig(0, 0, seed=5)
    res = tasks.interpolate_window(trained, window16, 4, 8, 4, cfg)
    rng = np.random.default_rng(5)
    zg = rng.standard_normal(trained.arch.latent_global)
    zl = rng.standard_normal(trained.arch.latent_local)
    from motion_prior.hmvae import LatentPair, decode
    from motion_prior.tensor import Tensor
    ref = decode(trained, LatentPair(Tensor(zl.astype(np.float32)), Tensor(zg.astype(np.float32)))).data
    np.testing.assert_array_equal(res.window, ref.astype(np.float64))
    assert res.trace == [] and res.decoder_shift == 0


def test_phase1_plain_descent_lowers_masked_loss(trained):
    wins = data.synth_dataset(data.SynthConfig(seed=7, length=16), 5)
    drops = []
    for n, c in enumerate(wins):
        res = tasks.interpolate_window(trained, c.rot6d, 4, 8, 4,
                                       OptimConfig(30, 0, lr=0.05, optimizer="sgd", seed=n))
        losses = [r["loss"] for r in res.trace]
        assert np.all(np.isfinite(losses))
        drops.append(losses[-1] - losses[0])
    assert np.median(drops) < 0


def test_dominant_regulariser_pins_decoder(trained, window16):
    names = trained.decoder_names()
    norm = np.sqrt(sum((trained.params[n].data.astype(np.float64) ** 2).sum() for n in names))
    pinned = tasks.interpolate_window(trained, window16, 4, 8, 4,
                                      OptimConfig(5, 50, lambda2=1e6, lr=0.01, lr_decoder=1e-7, optimizer="sgd"))
    free = tasks.interpolate_window(trained, window16, 4, 8, 4,
                                    OptimConfig(5, 50, lambda2=0.0, lr=0.01, lr_decoder=1e-7, optimizer="sgd"))
    assert pinned.decoder_shift < 1e-3 * norm
    assert pinned.decoder_shift < free.decoder_shift


def test_fully_constrained_matches_reconstruction(trained):
    for c in data.synth_dataset(data.SynthConfig(seed=11, length=16), 2):
        x = c.rot6d
        rec = reconstruct(trained, x[None])[0].astype(np.float64)
        res = tasks.interpolate_window(trained, x, 16, 0, 0, tasks.INTERPOLATION_BUDGET)
        assert mpjpe6d(res.window, x, trained.skeleton) <= 1.1 * mpjpe6d(rec, x, trained.skeleton)


def test_optimize_leaves_model_and_mask_untouched(trained, window16):
    before = {n: t.data.copy() for n, t in trained.params.items()}
    mask = make_keyframe_mask(16, 4, 4, 7, gap=8, targets=window16)
    targets = mask.targets.copy()
    res = optimize_latent(trained, mask, OptimConfig(3, 3))
    assert all(np.array_equal(before[n], t.data) for n, t in trained.params.items())
    assert np.array_equal(mask.targets, targets)
    assert res.window.shape == (16, 7, 6)
    lines = res.trace_jsonl().splitlines()
    assert len(lines) == 6 and '"phase": 2' in lines[-1]
    assert masked_reconstruction(trained, window16, mask, 10.0) == 0.0


def test_optimize_errors(trained):
    with pytest.raises(ValueError):
        optimize_latent(trained, make_keyframe_mask(16, 4, 4, 7), OptimConfig(1, 1))
    with pytest.raises(ValueError):
        optimize_latent(trained, make_keyframe_mask(8, 4, 4, 7, targets=identity_6d((8, 7))), OptimConfig(1, 1))
    with pytest.raises(ValueError):
        OptimConfig(-1, 0)
    with pytest.raises(ValueError):
        OptimConfig(lambda2=-1.0)


def test_slerp_baseline_keeps_keys_and_interpolates():
    w = identity_6d((6, 1))
    w[5, 0] = [0.0, 1, 0, -1, 0, 0]           # 90 degrees about z
    out = tasks.slerp_inbetween(w, 1, 4)
    np.testing.assert_array_equal(out[[0, 5]], w[[0, 5]])
    q = matrix_to_quat(rot6d_to_matrix(out[:, 0]))
    angles = np.degrees(2 * np.arctan2(np.abs(q[:, 3]), q[:, 0]))
    np.testing.assert_allclose(angles, [0, 18, 36, 54, 72, 90], atol=1e-9)
    with pytest.raises(ValueError):
        tasks.slerp_inbetween(w, 0, 4)


def test_lerp_baselines():
    v = np.array([[0.0, 0, 0], [9, 9, 9], [9, 9, 9], [3.0, 0, 0]])
    np.testing.assert_allclose(tasks.lerp_inbetween(v, 1, 2)[1:3], [[1, 0, 0], [2, 0, 0]])
    w = identity_6d((4, 2))
    out = tasks.lerp6d_inbetween(w, 1, 2)
    np.testing.assert_allclose(out, w, atol=1e-15)
    with pytest.raises(ValueError):
        tasks.lerp_inbetween(v, 1, 3)
