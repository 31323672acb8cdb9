import numpy as np

from platerec.harness.corpus import DESK_SYMBOLS, desk_config, random_plate_affine, synth_plates, synth_warped
from platerec.platelang import AugmentConfig, validate
from platerec.rectify import apply_affine, canonical_quad, quad_area


def test_frontal_corpus_is_seeded_and_grammatical():
    a = synth_plates(6, seed=3, augment_cfg=AugmentConfig())
    b = synth_plates(6, seed=3, augment_cfg=AugmentConfig())
    for x, y in zip(a, b):
        assert x.label == y.label and validate(x.label)
        np.testing.assert_array_equal(x.image, y.image)
        assert x.image.shape == (32, 128, 3)


def test_prefix_stability():
    # sample i depends only on (seed, i), so a longer corpus extends a shorter one
    short, long = synth_plates(3, seed=9), synth_plates(5, seed=9)
    assert [s.label for s in short] == [s.label for s in long[:3]]


def test_desk_setting_restricts_alphabet_and_length():
    samples = synth_plates(40, seed=0, **desk_config())
    assert len(DESK_SYMBOLS) == 12
    for s in samples:
        assert set(s.label) <= set(DESK_SYMBOLS)
        assert len(s.label.replace("-", "")) == 5


def test_plate_affine_stays_inside_frame():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = random_plate_affine(rng)
        q = apply_affine(m, canonical_quad())
        assert q.min() >= -1e-9 and q[:, 0].max() <= 127 + 1e-9 and q[:, 1].max() <= 31 + 1e-9
        assert quad_area(q) > 0


def test_warped_samples_carry_quads():
    samples = synth_warped(4, seed=1)
    for s in samples:
        assert s.quad.shape == (4, 2)
        assert s.image.shape == (32, 128, 3)
        assert 0.0 <= s.image.min() and s.image.max() <= 1.0
