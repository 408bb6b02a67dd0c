import math

import numpy as np
import pytest
from meshlift_test_tools import mesh_with_motion, random_frame

from meshlift.core import DegenerateQuadError, DimensionError, Frame, SignedFrame, build_uniform_mesh
from meshlift.evaluation import (
    endpoint_error,
    entropy_rate_proxy,
    highpass_energy,
    mesh_smoothness,
    psnr,
    quad_smoothness,
    sequence_psnr,
    warped_lowpass_psnr,
)
from meshlift.lifting import haar_analysis, mc_analysis


def test_psnr():
    rng = np.random.default_rng(0)
    frame = random_frame(rng, 16, 16)
    assert psnr(frame, frame) == math.inf

    shifted = Frame(np.where(frame.samples < 4095, frame.samples + 1, frame.samples - 1), 12)
    # Every sample off by one: MSE 1
    assert psnr(frame, shifted) == pytest.approx(20 * math.log10(4095))
    assert psnr(np.zeros((2, 2)), np.full((2, 2), 255.0), peak=255) == 0

    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(DimensionError):
        psnr(frame, np.zeros((4, 4)))


def test_sequence_psnr():
    rng = np.random.default_rng(1)
    frames = [random_frame(rng, 8, 8) for _ in range(3)]
    values = sequence_psnr(frames, frames)
    assert list(values) == [math.inf] * 3

    with pytest.raises(DimensionError):
        sequence_psnr(frames, frames[:2])


def test_quad_smoothness():
    assert quad_smoothness((0, 0), (1, 0), (1, 1), (0, 1)) == pytest.approx(1.0)
    # Stretched along one axis only the edge ratio drops
    assert quad_smoothness((0, 0), (2, 0), (2, 1), (0, 1)) == pytest.approx(0.5)
    skewed = quad_smoothness((0, 0), (1, 0), (3, 2), (0, 2))
    assert skewed == pytest.approx((1 / 3) * math.sqrt(5) / math.sqrt(13))

    with pytest.raises(DegenerateQuadError):
        quad_smoothness((0, 0), (0, 0), (1, 1), (0, 1))


def test_mesh_smoothness():
    report = mesh_smoothness(build_uniform_mesh(33, 33, 8))
    assert report.per_quad.shape == (4, 4)
    assert report.mean == pytest.approx(1.0)

    # Remainder quads are not square
    report = mesh_smoothness(build_uniform_mesh(21, 17, 8))
    assert report.per_quad[0, 2] == pytest.approx(4 / 8)

    moved = mesh_smoothness(mesh_with_motion(33, 33, 8, {(2, 2): (3, 1)}))
    assert moved.mean < 1.0
    assert moved.per_quad[0, 0] == pytest.approx(1.0)


def test_warped_lowpass_psnr():
    rng = np.random.default_rng(2)
    frame = random_frame(rng, 17, 17)
    pair = haar_analysis(frame, frame)
    assert warped_lowpass_psnr(pair, frame) == math.inf
    assert warped_lowpass_psnr(pair, frame, rounding="none") == math.inf

    mesh = mesh_with_motion(17, 17, 8, {(1, 1): (0.5, 0.25)})
    pair = mc_analysis(frame, random_frame(rng, 17, 17), mesh)
    nearest = warped_lowpass_psnr(pair, frame)
    exact = warped_lowpass_psnr(pair, frame, rounding="none")
    assert math.isfinite(nearest) and math.isfinite(exact)

    with pytest.raises(ValueError):
        warped_lowpass_psnr(pair, frame, rounding="up")


def test_band_statistics():
    assert entropy_rate_proxy(SignedFrame(np.full((4, 4), 7))) == 0.0
    assert entropy_rate_proxy(np.array([[0, 1], [0, 1]])) == pytest.approx(1.0)
    assert entropy_rate_proxy(np.array([[-3, 1], [5, 2]])) == pytest.approx(2.0)
    assert highpass_energy(SignedFrame(np.array([[1, -2], [3, 0]]))) == 14


def test_endpoint_error():
    mesh = build_uniform_mesh(33, 33, 8)
    truth = np.zeros((2, 33, 33))
    assert endpoint_error(mesh, truth) == 0

    motion = np.array(mesh.motion)
    motion[1:-1, 1:-1] = (3, 4)
    moved = mesh.with_motion(motion)
    assert endpoint_error(moved, truth) == pytest.approx(5.0)
    # Border points contribute when asked to
    assert endpoint_error(moved, truth, interior_only=False) == pytest.approx(5.0 * 9 / 25)

    truth[0], truth[1] = 3, 4
    assert endpoint_error(moved, truth) == 0

    with pytest.raises(DimensionError):
        endpoint_error(mesh, np.zeros((2, 32, 33)))
    with pytest.raises(ValueError):
        endpoint_error(build_uniform_mesh(8, 8, 8), np.zeros((2, 8, 8)))
