import numpy as np
import pytest

from meshlift.core import ConfigError, DimensionError
from meshlift.phantom import (
    ConcentricRings,
    FilteredNoise,
    GaussianBlobs,
    PhantomSpec,
    RadialExpansion,
    UniformShift,
    generate,
)
from meshlift.warp import sample_bilinear


def test_static_phantom():
    frames, truth = generate(PhantomSpec())
    assert len(frames) == 4 and len(truth) == 3
    assert all(frame == frames[0] for frame in frames)
    assert all(not np.any(field) for field in truth)
    assert frames[0].samples.shape == (64, 64)
    assert 0 < frames[0].samples.min() and frames[0].samples.max() < 4095


def test_uniform_shift():
    spec = PhantomSpec(width=40, height=30, frames=3, deformation=UniformShift(2, -1))
    frames, truth = generate(spec)
    for t in range(2):
        # f_{t+1}(x, y) = f_t(x + 2, y - 1)
        np.testing.assert_array_equal(frames[t + 1].samples[1:, :-2], frames[t].samples[:-1, 2:])
        assert truth[t].shape == (2, 30, 40)
        assert np.all(truth[t][0] == 2) and np.all(truth[t][1] == -1)


def test_radial_truth_matches_frames():
    spec = PhantomSpec(
        width=64,
        height=64,
        frames=3,
        bit_depth=16,
        deformation=RadialExpansion(amplitude=3, period=4, radius=16),
        texture=ConcentricRings(spacing=16),
    )
    frames, truth = generate(spec)
    y, x = np.mgrid[0:64, 0:64].astype(np.float64)
    for t in range(2):
        moved = sample_bilinear(frames[t].normalized, x + truth[t][0], y + truth[t][1])
        error = np.abs(moved - frames[t + 1].normalized)[4:-4, 4:-4]
        assert error.max() < 0.05

    # Half the amplitude is reached between phases 0 and 0.5; nothing moves at the center
    magnitude = np.hypot(truth[0][0], truth[0][1])
    assert magnitude[32, 32] < 0.25
    assert 1.0 < magnitude.max() <= 1.5 + 1e-9


def test_amplitude_limit():
    spec = PhantomSpec(frames=2, deformation=RadialExpansion(amplitude=20, radius=16))
    with pytest.raises(ConfigError) as e:
        generate(spec)
    assert e.value.key == "amplitude"


def test_noise():
    spec = PhantomSpec(width=32, height=32, frames=2, noise_sigma=0.01, seed=3)
    first, _ = generate(spec)
    again, _ = generate(spec)
    other, _ = generate(PhantomSpec(width=32, height=32, frames=2, noise_sigma=0.01, seed=4))
    assert first == again
    assert first != other
    assert first[0] != first[1]

    with pytest.warns(UserWarning):
        generate(PhantomSpec(width=32, height=32, frames=2, bit_depth=8, noise_sigma=0.5))


def test_textures():
    blobs, _ = generate(PhantomSpec(width=32, height=32, frames=1, texture=GaussianBlobs(count=4, seed=1)))
    other, _ = generate(PhantomSpec(width=32, height=32, frames=1, texture=GaussianBlobs(count=4, seed=2)))
    assert blobs != other

    rings, _ = generate(PhantomSpec(width=33, height=33, frames=1, bit_depth=8, texture=ConcentricRings(spacing=8)))
    samples = rings[0].samples
    assert samples.max() <= 255
    # Rings are symmetric about the center
    np.testing.assert_array_equal(samples, samples[::-1, ::-1])


def test_invalid_specs():
    with pytest.raises(DimensionError):
        PhantomSpec(width=1)
    with pytest.raises(ConfigError) as e:
        PhantomSpec(frames=0)
    assert e.value.key == "frames"
    with pytest.raises(ConfigError):
        PhantomSpec(bit_depth=17)
    with pytest.raises(ConfigError):
        PhantomSpec(deformation=RadialExpansion(period=0))
    with pytest.raises(ConfigError) as e:
        PhantomSpec(texture=FilteredNoise(correlation_length=0))
    assert e.value.key == "correlation_length"


def test_filtered_noise():
    spec = PhantomSpec(width=48, height=40, frames=1, texture=FilteredNoise(correlation_length=3, seed=5))
    first, _ = generate(spec)
    again, _ = generate(spec)
    other, _ = generate(PhantomSpec(width=48, height=40, frames=1, texture=FilteredNoise(correlation_length=3, seed=6)))
    assert first == again
    assert first != other
    normalized = first[0].normalized
    assert 0.1 <= normalized.min() and normalized.max() <= 0.9
    # Varies along both axes, unlike rings around a center
    assert np.abs(np.diff(normalized, axis=0)).mean() > 0.005
    assert np.abs(np.diff(normalized, axis=1)).mean() > 0.005


def test_filtered_noise_truth_matches_frames():
    spec = PhantomSpec(
        width=64,
        height=64,
        frames=3,
        bit_depth=16,
        deformation=RadialExpansion(amplitude=3, period=4, radius=16),
        texture=FilteredNoise(correlation_length=4),
    )
    frames, truth = generate(spec)
    y, x = np.mgrid[0:64, 0:64].astype(np.float64)
    for t in range(2):
        moved = sample_bilinear(frames[t].normalized, x + truth[t][0], y + truth[t][1])
        error = np.abs(moved - frames[t + 1].normalized)[4:-4, 4:-4]
        assert error.max() < 0.05
