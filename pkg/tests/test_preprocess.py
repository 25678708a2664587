import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dipss.exceptions import DegenerateInput, NoConvergence, OddDimension
from dipss.phantom import STOCK_PROFILES, render_case
from dipss.preprocess import (
    HalfDownsampler,
    IntensityNormalizer,
    NormalizationConfig,
    downsample_half,
    nonzero_mean,
    normalize_intensity,
)
from dipss.volume import Volume


def test_fixed_point():
    x = np.zeros((4, 4, 4))
    x[1:3, 1:3, 1:3] = 18.0
    out, g = normalize_intensity(Volume(x))
    assert g == 1.0 and out.voxels[1, 1, 1] == 18.0


def test_uniform_closed_form():
    x = np.full((4, 4, 4), 127.5)
    out, g = normalize_intensity(Volume(x))
    expected = math.log(18 / 255) / math.log(0.5)
    assert abs(g - expected) < 1e-2
    assert 17 <= nonzero_mean(out) <= 19


def test_degenerate_and_unreachable():
    with pytest.raises(DegenerateInput):
        normalize_intensity(Volume(np.zeros((3, 3, 3))))
    with pytest.raises(NoConvergence):
        normalize_intensity(Volume(np.full((2, 2, 2), 255.0)))
    with pytest.raises(ValueError):
        NormalizationConfig(margin=0)
    with pytest.raises(ValueError):
        NormalizationConfig(gamma_bounds=(2.0, 1.0))


@given(arrays(np.float64, (3, 3, 4), elements=st.floats(1.0, 180.0)))
def test_ranking_preserved_and_zeros_kept(x):
    x = x.copy()
    x[0] = 0.0
    out, g = normalize_intensity(Volume(x))
    y = out.voxels.astype(np.float64)
    assert np.all(y[0] == 0)
    order = np.argsort(x.ravel(), kind="stable")
    assert np.all(np.diff(y.ravel()[order]) >= 0)
    assert 17 <= nonzero_mean(out) <= 19


def test_idempotent_on_phantom():
    v, _ = render_case(2, STOCK_PROFILES["synthA"], dims=(16, 16, 24))
    once, _ = normalize_intensity(v)
    _, g2 = normalize_intensity(once)
    assert abs(g2 - 1.0) < 1e-3


def test_downsample_examples():
    x = np.zeros((2, 2, 2))
    x[1] = 255.0
    assert downsample_half(Volume(x)).voxels.item() == 127.5
    c = downsample_half(Volume(np.full((4, 6, 8), 42.0)))
    assert c.dims == (2, 3, 4) and np.all(c.voxels == 42.0)
    assert downsample_half(Volume(np.zeros((160, 160, 192), np.float32))).dims == (80, 80, 96)
    with pytest.raises(OddDimension):
        downsample_half(Volume(np.zeros((3, 4, 4))))


def test_downsample_mask_majority_ties_true():
    m = np.zeros((2, 2, 2), bool)
    m[0] = True
    assert downsample_half(Volume(np.ones((2, 2, 2)), mask=m)).mask.item()
    m[0, 0, 0] = False
    assert not downsample_half(Volume(np.ones((2, 2, 2)), mask=m)).mask.item()


@given(arrays(np.float32, (4, 4, 2), elements=st.integers(0, 255).map(float)), st.sampled_from([0.5, 2.0, 0.25]))
def test_downsample_commutes_with_scaling(x, a):
    # powers of two keep the float arithmetic exact
    assert np.array_equal(downsample_half(Volume(a * x)).voxels, a * downsample_half(Volume(x)).voxels)


def test_estimators_wrap_functions():
    vols = [render_case(i, STOCK_PROFILES["synthB"], dims=(8, 8, 8))[0] for i in range(3)]
    norm = IntensityNormalizer()
    out = norm.fit(vols).transform(vols)
    assert len(out) == 3 and norm.gammas_.shape == (3,)
    arr = np.stack([v.voxels for v in vols])
    assert norm.transform(arr).shape == arr.shape
    assert HalfDownsampler().fit_transform(arr).shape == (3, 4, 4, 4)
    assert norm.get_params()["target_mean"] == 18.0
