import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from nerfaug import scene as S
from nerfaug.composite import blend, inpaint_background
from nerfaug.geometry import camera_to_world
from nerfaug.segment import candidate_pixels, dilate_mask, iou, segment_by_background
from oracles import psnr

images = hnp.arrays(np.float64, (6, 7, 3), elements=st.floats(0, 1))
masks = hnp.arrays(np.float64, (6, 7), elements=st.sampled_from([0.0, 1.0]))
soft_masks = hnp.arrays(np.float64, (6, 7), elements=st.floats(0, 1))


@pytest.fixture(scope="module")
def workspace_demo():
    from nerfaug.experiments import demo_camera
    cam = demo_camera(96)
    sc = S.preset("workspace")
    tr = S.generate_demo_trajectory(sc, S.default_demo_spec(), cam)
    return sc, cam, tr


def background_render(sc, cam, tr, t):
    c2w = camera_to_world(tr.steps[t].gripper_pose, tr.camera_offset)
    return S.analytic_render(sc.without(S.OBJECT), cam, c2w).rgb


# --- segmentation --------------------------------------------------------------

@given(images)
def test_segment_same_frame_is_empty(img):
    assert not segment_by_background(img, img).any()


def test_isolated_pixel_filtered():
    bg = np.zeros((9, 9, 3))
    fr = bg.copy()
    fr[4, 4] = 1.0
    assert not segment_by_background(fr, bg, 0.05, min_blob=2).any()
    assert segment_by_background(fr, bg, 0.05, min_blob=1)[4, 4] == 1


def test_diagonal_blob_is_connected():
    bg = np.zeros((6, 6, 3))
    fr = bg.copy()
    for i in range(4):
        fr[i, i] = 1.0
    assert segment_by_background(fr, bg, 0.05, min_blob=4).sum() == 4


def test_segment_dimension_mismatch():
    with pytest.raises(ValueError):
        segment_by_background(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
    with pytest.raises(ValueError):
        candidate_pixels(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), 0.0)


@given(images, images, st.floats(0.01, 0.5), st.floats(0.01, 0.5))
def test_threshold_monotone(a, b, t1, t2):
    lo, hi = min(t1, t2), max(t1, t2)
    assert not (candidate_pixels(a, b, hi) & ~candidate_pixels(a, b, lo)).any()


@given(images, images)
def test_segment_output_is_hard(a, b):
    m = segment_by_background(a, b, 0.1, 2)
    assert m.shape == (6, 7) and set(np.unique(m)) <= {0.0, 1.0}


def test_segment_workspace_against_truth(workspace_demo):
    sc, cam, tr = workspace_demo
    for t in (0, 5, 8, 20):
        m = segment_by_background(tr.steps[t].frame, background_render(sc, cam, tr, t))
        assert iou(m, tr.steps[t].mask) >= 0.95


def test_dilate_examples():
    m = np.random.default_rng(0).uniform(size=(5, 5)) > 0.5
    assert np.array_equal(dilate_mask(m, 0), m.astype(float))
    one = np.zeros((5, 5))
    one[2, 2] = 1
    d = dilate_mask(one, 1)
    assert d.sum() == 9 and np.all(d[1:4, 1:4] == 1)
    with pytest.raises(ValueError):
        dilate_mask(one, -1)


@given(masks, st.integers(0, 3))
def test_dilate_superset(m, r):
    assert np.all(dilate_mask(m, r) >= m)


def test_iou_cases():
    a = np.zeros((4, 4))
    a[:2] = 1
    assert iou(a, a) == 1.0 and iou(a, 1 - a) == 0.0 and iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0


# --- compositing ---------------------------------------------------------------

@given(images, images)
def test_inpaint_extremes(fr, bg):
    assert np.array_equal(inpaint_background(fr, np.zeros((6, 7)), bg), fr)
    assert np.array_equal(inpaint_background(fr, np.ones((6, 7)), bg), bg)


def test_inpaint_dimension_mismatch():
    with pytest.raises(ValueError):
        inpaint_background(np.zeros((4, 4, 3)), np.zeros((4, 4)), np.zeros((5, 4, 3)))
    with pytest.raises(ValueError):
        inpaint_background(np.zeros((4, 4, 3)), np.zeros((3, 4)), np.zeros((4, 4, 3)))


def test_inpaint_workspace_against_truth(workspace_demo):
    sc, cam, tr = workspace_demo
    for t in (3, 15):
        bg = background_render(sc, cam, tr, t)
        m = dilate_mask(tr.steps[t].mask, 1) > 0.5
        out = inpaint_background(tr.steps[t].frame, m, bg)
        assert psnr(out[m], bg[m]) >= 40


@given(images, images)
def test_blend_extremes(a, b):
    assert np.array_equal(blend(a, np.ones((6, 7)), b), a)
    assert np.array_equal(blend(a, np.zeros((6, 7)), b), b)


@given(images, images)
def test_blend_half_is_mean(a, b):
    assert np.allclose(blend(a, np.full((6, 7), 0.5), b), 0.5 * (a + b), atol=1e-15)


@given(images, images, soft_masks)
def test_blend_in_envelope(a, b, m):
    out = blend(a, m, b)
    assert np.all(out >= np.minimum(a, b) - 1e-15) and np.all(out <= np.maximum(a, b) + 1e-15)


@given(images, soft_masks)
def test_blend_equal_inputs(a, m):
    assert np.allclose(blend(a, m, a), a, atol=1e-15)


@given(images, images, images, masks, masks)
def test_background_untouched_outside_masks(frame, bg, nerf, orig, m_nerf):
    out = blend(nerf, m_nerf, inpaint_background(frame, orig, bg))
    outside = (orig == 0) & (m_nerf == 0)
    assert out[outside].tobytes() == frame[outside].tobytes()


def test_blend_validation():
    with pytest.raises(ValueError):
        blend(np.zeros((2, 2, 3)), np.full((2, 2), 1.5), np.zeros((2, 2, 3)))
    with pytest.raises(ValueError):
        blend(np.zeros((2, 2, 3)), np.ones((2, 2)), np.zeros((2, 3, 3)))
