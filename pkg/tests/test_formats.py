import math
import os

import numpy as np
import pytest
from meshlift_test_tools import random_frame, random_valid_mesh

from meshlift.core import ConfigError, EstimationConfig, FormatError, Metric, SignedFrame, Stage, SubpixelStage
from meshlift.formats import (
    HEADER_SIZE,
    DecompositionReport,
    Manifest,
    PairReport,
    format_mesh,
    parse_estimation,
    parse_key_values,
    parse_mesh,
    parse_phantom,
    read_band,
    read_mesh,
    read_truth,
    read_volume,
    volume_from_bytes,
    volume_to_bytes,
    write_band,
    write_mesh,
    write_rows,
    write_truth,
    write_volume,
)
from meshlift.phantom import ConcentricRings, FilteredNoise, GaussianBlobs, NoDeformation, RadialExpansion, UniformShift


def test_volume(tmp_path):
    rng = np.random.default_rng(0)
    frames = [random_frame(rng, 64, 64) for _ in range(4)]
    fname = os.path.join(tmp_path, "volume.raw")
    write_volume(fname, frames)
    assert os.path.getsize(fname) == HEADER_SIZE + 4 * 64 * 64 * 2 == 21 + 32768
    assert read_volume(fname) == frames

    data = volume_to_bytes(frames)
    assert data[:8] == b"MLIFTV01"
    # Samples are little-endian u16 in row-major order
    first = frames[0].samples[0, 0]
    assert data[HEADER_SIZE : HEADER_SIZE + 2] == bytes([first & 0xFF, first >> 8])


def test_malformed_volume():
    rng = np.random.default_rng(1)
    data = volume_to_bytes([random_frame(rng, 8, 8, 10)])
    with pytest.raises(FormatError):
        volume_from_bytes(data[:-1])
    with pytest.raises(FormatError):
        volume_from_bytes(data[:10])
    with pytest.raises(FormatError):
        volume_from_bytes(b"NOTMAGIC" + data[8:])
    with pytest.raises(FormatError):
        volume_from_bytes(data + b"\x00\x00")

    # A sample that does not fit the declared bit depth
    too_large = bytearray(data)
    too_large[HEADER_SIZE : HEADER_SIZE + 2] = (1 << 10).to_bytes(2, "little")
    with pytest.raises(FormatError):
        volume_from_bytes(bytes(too_large))


def test_band(tmp_path):
    band = SignedFrame(np.array([[-70000, 3], [0, 65535]]), 16)
    fname = os.path.join(tmp_path, "H.band")
    write_band(fname, band)
    assert os.path.getsize(fname) == HEADER_SIZE + 4 * 4
    loaded = read_band(fname)
    assert loaded == band
    assert loaded.bit_depth == 16

    with pytest.raises(FormatError):
        write_volume(fname, [random_frame(np.random.default_rng(2), 2, 2)])
        read_band(fname)


def test_mesh(tmp_path):
    rng = np.random.default_rng(3)
    mesh = random_valid_mesh(rng, 45, 33, 8)
    text = format_mesh(mesh)
    assert text.splitlines()[0] == f"mesh bs=8 cols={mesh.cols} rows={mesh.rows}"
    assert len(text.splitlines()) == 1 + mesh.cols * mesh.rows
    # Quantized motion survives the text round trip bit for bit
    assert parse_mesh(text, 45, 33) == mesh

    fname = os.path.join(tmp_path, "mesh_0000.txt")
    write_mesh(fname, mesh)
    assert read_mesh(fname, 45, 33) == mesh
    with open(fname, "rb") as f:
        assert b"\r\n" not in f.read()


def test_malformed_mesh():
    mesh = random_valid_mesh(np.random.default_rng(4), 17, 17, 8)
    lines = format_mesh(mesh).splitlines()

    with pytest.raises(FormatError):
        parse_mesh("", 17, 17)
    with pytest.raises(FormatError):
        parse_mesh("grid bs=8 cols=3 rows=3\n", 17, 17)
    # Wrong frame size for the header
    with pytest.raises(FormatError):
        parse_mesh("\n".join(lines), 33, 17)
    # Missing, repeated and malformed grid point lines
    with pytest.raises(FormatError):
        parse_mesh("\n".join(lines[:-1]), 17, 17)
    with pytest.raises(FormatError):
        parse_mesh("\n".join(lines + lines[1:2]), 17, 17)
    with pytest.raises(FormatError):
        parse_mesh("\n".join(lines[:-1] + ["2 2 zero 0.0"]), 17, 17)


def test_key_values():
    values = parse_key_values("# comment\nlambda = 0.0005\n\nmetric=d11  # trailing\n")
    assert values == {"lambda": "0.0005", "metric": "d11"}
    with pytest.raises(FormatError):
        parse_key_values("lambda 0.1")


def test_parse_estimation():
    config, options = parse_estimation(
        {
            "schedule": "64:2:10, 32:1:5",
            "subpixel": "0.5:0.0004",
            "lambda": "0.0007",
            "td": "0.3",
            "metric": "d11",
            "compensation": "identity",
            "warped_psnr_rounding": "none",
            "threads": "3",
        }
    )
    assert config.schedule == (Stage(64, 2, 10), Stage(32, 1, 5))
    assert config.subpixel_stages == (SubpixelStage(0.5, 0.0004),)
    assert (config.reg_lambda, config.td, config.metric, config.threads) == (0.0007, 0.3, Metric.D11, 3)
    assert options.compensation == "identity"
    assert options.warped_psnr_rounding == "none"

    config, options = parse_estimation({"schedule": "auto", "subpixel": ""})
    assert config == EstimationConfig(subpixel_stages=())
    assert options.compensation == "estimate"

    for key, value in [
        ("bogus", "1"),
        ("lambda", "much"),
        ("lambda", "-1"),
        ("metric", "d12"),
        ("schedule", "64:2"),
        ("schedule", "8:1:3, 16:1:3"),
        ("warped_psnr_rounding", "up"),
    ]:
        with pytest.raises(ConfigError) as e:
            parse_estimation({key: value})
        assert e.value.key == key


def test_parse_phantom():
    spec = parse_phantom(
        {
            "width": "96",
            "height": "80",
            "frames": "10",
            "deformation": "radial_expansion",
            "amplitude": "5",
            "radius": "20",
            "texture": "concentric_rings",
            "ring_spacing": "12",
            "noise_sigma": "0.01",
        }
    )
    assert (spec.width, spec.height, spec.frames, spec.bit_depth) == (96, 80, 10, 12)
    assert spec.deformation == RadialExpansion(amplitude=5, radius=20)
    assert spec.texture == ConcentricRings(spacing=12)
    assert spec.noise_sigma == 0.01

    spec = parse_phantom({"deformation": "uniform_shift", "shift_y": "-1.5", "blobs": "5"})
    assert spec.deformation == UniformShift(shift_x=2, shift_y=-1.5)
    assert spec.texture == GaussianBlobs(count=5)
    assert parse_phantom({}).deformation == NoDeformation()

    spec = parse_phantom({"texture": "filtered_noise", "correlation_length": "2.5", "texture_seed": "7"})
    assert spec.texture == FilteredNoise(correlation_length=2.5, seed=7)
    assert parse_phantom({"texture": "filtered_noise"}).texture == FilteredNoise()

    with pytest.raises(ConfigError) as e:
        parse_phantom({"deformation": "twist"})
    assert e.value.key == "deformation"


def test_manifest(tmp_path):
    manifest = Manifest(width=64, height=48, frames=5, bit_depth=12, pairs=2, passthrough=True)
    manifest.save(str(tmp_path))
    with open(os.path.join(tmp_path, "manifest.txt")) as f:
        assert "passthrough=1\n" in f.read()
    assert Manifest.load(str(tmp_path)) == manifest

    with open(os.path.join(tmp_path, "manifest.txt"), "w") as f:
        f.write("width=64\n")
    with pytest.raises(FormatError):
        Manifest.load(str(tmp_path))


def test_truth(tmp_path):
    rng = np.random.default_rng(5)
    truth = [rng.normal(size=(2, 12, 20)) for _ in range(3)]
    fname = os.path.join(tmp_path, "volume.truth.msgpack")
    write_truth(fname, truth)
    loaded = read_truth(fname)
    assert len(loaded) == 3
    for a, b in zip(truth, loaded):
        np.testing.assert_array_equal(a, b)


def test_report(tmp_path):
    report = DecompositionReport(
        rows=[
            PairReport(0, 41.25, math.inf, 0.875, 6.5, 3.25),
            PairReport(1, 39.0, 38.5, 0.75, 6.0, 3.0),
        ]
    )
    fname = os.path.join(tmp_path, "report.csv")
    report.save_to_csv(fname)
    with open(fname, newline="") as f:
        text = f.read()
    assert text.splitlines()[0] == "t,psnr_ref_L,warped_psnr,smoothness_mean,entropy_L,entropy_H"
    assert text.splitlines()[1] == "0,41.250000,inf,0.875000,6.500000,3.250000"
    assert "\r" not in text
    assert DecompositionReport.load_from_csv(fname) == report


def test_write_rows(tmp_path):
    fname = os.path.join(tmp_path, "rows.csv")
    with open(fname, "w", newline="") as f:
        write_rows(f, ("frame", "psnr"), [(0, math.inf), (1, 48.0)])
    with open(fname, newline="") as f:
        assert f.read() == "frame,psnr\n0,inf\n1,48.000000\n"
