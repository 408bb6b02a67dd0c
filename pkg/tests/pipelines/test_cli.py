import os

import numpy as np
import pytest

from meshlift.core import SignedFrame
from meshlift.formats import read_band, read_truth, read_volume, write_band, write_volume
from meshlift.pipelines.cli import run

RADIAL_PHANTOM = """
width = 32
height = 32
frames = 5
deformation = radial_expansion
amplitude = 2
radius = 12
texture = concentric_rings
ring_spacing = 8
"""

SMALL_ESTIMATION = """
# Short run so the tests stay fast
schedule = 16:1:2, 8:1:2
subpixel =
threads = 8
"""


def _write(path, text: str) -> str:
    with open(path, "w") as f:
        f.write(text)
    return str(path)


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def _make_phantom(tmp_path, text: str = RADIAL_PHANTOM) -> str:
    volume = os.path.join(tmp_path, "phantom.raw")
    assert run(["phantom", "--config", _write(tmp_path / "phantom.cfg", text), "--out", volume]) == 0
    return volume


def _decompose(tmp_path, volume: str, name: str, *extra: str) -> str:
    config = _write(tmp_path / "estimation.cfg", SMALL_ESTIMATION)
    out = os.path.join(tmp_path, name)
    with pytest.warns(UserWarning):
        assert run(["--quiet", "decompose", volume, "--config", config, "--out", out, *extra]) == 0
    return out


def test_phantom(tmp_path):
    volume = _make_phantom(tmp_path)
    frames = read_volume(volume)
    assert len(frames) == 5
    assert frames[0].samples.shape == (32, 32)
    truth = read_truth(os.path.join(tmp_path, "phantom.truth.msgpack"))
    assert len(truth) == 4
    assert truth[0].shape == (2, 32, 32)


def test_decompose_and_reconstruct(tmp_path, capsys):
    volume = _make_phantom(tmp_path)
    out = _decompose(tmp_path, volume, "bands")

    for name in ["L_0000.band", "H_0001.band", "mesh_0001.txt", "passthrough.raw", "manifest.txt", "report.csv"]:
        assert os.path.exists(os.path.join(out, name)), name
    assert not os.path.exists(os.path.join(out, "L_0002.band"))
    with open(os.path.join(out, "report.csv"), newline="") as f:
        lines = f.read().splitlines()
    assert lines[0] == "t,psnr_ref_L,warped_psnr,smoothness_mean,entropy_L,entropy_H"
    assert len(lines) == 3

    rebuilt = os.path.join(tmp_path, "rebuilt.raw")
    assert run(["reconstruct", out, "--out", rebuilt]) == 0
    assert _read_bytes(rebuilt) == _read_bytes(volume)

    capsys.readouterr()
    assert run(["eval", volume, rebuilt]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["frame,psnr"] + [f"{t},inf" for t in range(5)]

    assert run(["smoothness", out]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "t,smoothness_mean"
    assert len(lines) == 3
    assert all(0 < float(line.split(",")[1]) <= 1 for line in lines[1:])


def test_default_reconstruct_location(tmp_path):
    volume = _make_phantom(tmp_path)
    out = _decompose(tmp_path, volume, "bands")
    assert run(["reconstruct", out]) == 0
    assert _read_bytes(os.path.join(out, "reconstructed.raw")) == _read_bytes(volume)


def test_no_compensation(tmp_path):
    volume = _make_phantom(tmp_path, "width = 24\nheight = 20\nframes = 4\n")
    out = os.path.join(tmp_path, "haar")
    assert run(["decompose", volume, "--out", out, "--no-compensation"]) == 0
    # A static phantom leaves nothing to predict
    for t in range(2):
        assert not np.any(read_band(os.path.join(out, f"H_{t:04d}.band")).samples)
    with open(os.path.join(out, "mesh_0000.txt")) as f:
        assert f.readline().split()[0] == "mesh"
    assert not os.path.exists(os.path.join(out, "passthrough.raw"))


def test_overrides(tmp_path):
    volume = _make_phantom(tmp_path)
    out = _decompose(tmp_path, volume, "bands", "--metric", "d11", "--lambda", "0", "--td", "0.3")
    rebuilt = os.path.join(tmp_path, "rebuilt.raw")
    assert run(["reconstruct", out, "--out", rebuilt]) == 0
    assert _read_bytes(rebuilt) == _read_bytes(volume)


def test_thread_cap(tmp_path, monkeypatch):
    volume = _make_phantom(tmp_path)
    monkeypatch.setenv("MESHLIFT_THREADS", "1")
    serial = _decompose(tmp_path, volume, "serial")
    monkeypatch.setenv("MESHLIFT_THREADS", "8")
    threaded = _decompose(tmp_path, volume, "threaded")
    for name in sorted(os.listdir(serial)):
        assert _read_bytes(os.path.join(serial, name)) == _read_bytes(os.path.join(threaded, name)), name

    monkeypatch.setenv("MESHLIFT_THREADS", "many")
    config = _write(tmp_path / "estimation.cfg", SMALL_ESTIMATION)
    assert run(["decompose", volume, "--config", config, "--out", os.path.join(tmp_path, "bad")]) == 2


def test_bad_input(tmp_path):
    volume = _make_phantom(tmp_path, "frames = 2\n")
    bogus = _write(tmp_path / "bogus.cfg", "bogus = 1\n")
    assert run(["decompose", volume, "--config", bogus, "--out", os.path.join(tmp_path, "a")]) == 2
    assert run(["phantom", "--config", bogus, "--out", os.path.join(tmp_path, "b.raw")]) == 2
    assert run(["decompose", os.path.join(tmp_path, "missing.raw"), "--out", os.path.join(tmp_path, "c")]) == 2

    truncated = os.path.join(tmp_path, "truncated.raw")
    with open(truncated, "wb") as f:
        f.write(_read_bytes(volume)[:-3])
    assert run(["decompose", truncated, "--out", os.path.join(tmp_path, "d")]) == 2
    assert run(["eval", volume, truncated]) == 2

    # A single frame cannot be decomposed
    single = os.path.join(tmp_path, "single.raw")
    write_volume(single, read_volume(volume)[:1])
    assert run(["decompose", single, "--out", os.path.join(tmp_path, "e")]) == 2


def test_reconstruct_failures(tmp_path):
    volume = _make_phantom(tmp_path, "width = 17\nheight = 17\nframes = 2\n")
    out = os.path.join(tmp_path, "haar")
    assert run(["decompose", volume, "--out", out, "--no-compensation"]) == 0

    # The left border slides inwards, leaving the first pixel columns uncovered
    mesh_file = os.path.join(out, "mesh_0000.txt")
    with open(mesh_file) as f:
        header = f.readline().strip()
    assert header == "mesh bs=17 cols=2 rows=2"
    lines = [header, "0 0 2.000000 0.000000", "0 1 0.000000 0.000000", "1 0 2.000000 0.000000"]
    _write(mesh_file, "\n".join(lines + ["1 1 0.000000 0.000000"]) + "\n")
    assert run(["reconstruct", out]) == 3

    os.remove(os.path.join(out, "H_0000.band"))
    assert run(["reconstruct", out]) == 3


def test_out_of_range_band(tmp_path, capsys):
    volume = _make_phantom(tmp_path, "width = 16\nheight = 12\nframes = 2\n")
    out = os.path.join(tmp_path, "haar")
    assert run(["decompose", volume, "--out", out, "--no-compensation"]) == 0

    # The rebuilt odd frame would exceed 12 bits
    band = os.path.join(out, "L_0000.band")
    write_band(band, SignedFrame(np.full((12, 16), 70000), read_band(band).bit_depth))
    capsys.readouterr()
    assert run(["reconstruct", out]) == 2
    assert "meshlift: error: Frame samples must lie in [0, 4096)" in capsys.readouterr().err
