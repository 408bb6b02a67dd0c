"""On-disk formats: raw volumes, signed bands, mesh text files, manifests, configs, truth fields and reports."""

from __future__ import annotations

import csv
import dataclasses
import math
import os
import struct
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import msgpack
import numpy as np

from meshlift.core import (
    ConfigError,
    EstimationConfig,
    FormatError,
    Frame,
    Metric,
    QuadMesh,
    SignedFrame,
    Stage,
    SubpixelStage,
    lattice_anchors,
)
from meshlift.phantom import (
    ConcentricRings,
    Deformation,
    FilteredNoise,
    GaussianBlobs,
    NoDeformation,
    PhantomSpec,
    RadialExpansion,
    Texture,
    UniformShift,
)

VOLUME_MAGIC = b"MLIFTV01"
BAND_MAGIC = b"MLIFTB01"

# magic, width, height, frame count, bit depth
_HEADER = struct.Struct("<8sIIIB")
HEADER_SIZE = _HEADER.size

##########################################################
# Volumes and bands
##########################################################


def _read_header(data: bytes, magic: bytes, fname: str) -> Tuple[int, int, int, int]:
    if len(data) < HEADER_SIZE:
        raise FormatError(f"{fname}: truncated header, {len(data)} of {HEADER_SIZE} bytes")
    found, width, height, count, bit_depth = _HEADER.unpack_from(data)
    if found != magic:
        raise FormatError(f"{fname}: expected magic {magic!r}, found {found!r}")
    return width, height, count, bit_depth


def _check_payload(data: bytes, expected_payload: int, fname: str) -> None:
    expected = HEADER_SIZE + expected_payload
    if len(data) != expected:
        raise FormatError(f"{fname}: expected {expected} bytes from the header, found {len(data)}")


def volume_to_bytes(frames: Sequence[Frame]) -> bytes:
    if len(frames) == 0:
        raise ValueError("A volume needs at least one frame")
    first = frames[0]
    for frame in frames:
        if (frame.width, frame.height, frame.bit_depth) != (first.width, first.height, first.bit_depth):
            raise ValueError("All frames of a volume must share size and bit depth")
    header = _HEADER.pack(VOLUME_MAGIC, first.width, first.height, len(frames), first.bit_depth)
    payload = np.stack([frame.samples for frame in frames]).astype("<u2").tobytes()
    return header + payload


def volume_from_bytes(data: bytes, fname: str = "<volume>") -> List[Frame]:
    width, height, count, bit_depth = _read_header(data, VOLUME_MAGIC, fname)
    if not (1 <= bit_depth <= 16):
        raise FormatError(f"{fname}: bit depth {bit_depth} outside 1..16")
    _check_payload(data, count * height * width * 2, fname)
    samples = np.frombuffer(data, dtype="<u2", offset=HEADER_SIZE).reshape(count, height, width)
    if samples.size > 0 and int(samples.max()) >= (1 << bit_depth):
        raise FormatError(f"{fname}: sample {int(samples.max())} does not fit in {bit_depth} bits")
    return [Frame(frame.astype(np.int64), bit_depth) for frame in samples]


def write_volume(fname: str, frames: Sequence[Frame]) -> None:
    with open(fname, "wb") as f:
        f.write(volume_to_bytes(frames))


def read_volume(fname: str) -> List[Frame]:
    with open(fname, "rb") as f:
        return volume_from_bytes(f.read(), fname)


def write_band(fname: str, band: SignedFrame) -> None:
    samples = band.samples
    if samples.size > 0 and (samples.min() < np.iinfo(np.int32).min or samples.max() > np.iinfo(np.int32).max):
        raise ValueError("Band samples do not fit in 32 bits")
    header = _HEADER.pack(BAND_MAGIC, band.width, band.height, 1, band.bit_depth or 0)
    with open(fname, "wb") as f:
        f.write(header + samples.astype("<i4").tobytes())


def read_band(fname: str) -> SignedFrame:
    with open(fname, "rb") as f:
        data = f.read()
    width, height, count, bit_depth = _read_header(data, BAND_MAGIC, fname)
    if count != 1:
        raise FormatError(f"{fname}: a band file holds one band, header says {count}")
    _check_payload(data, height * width * 4, fname)
    samples = np.frombuffer(data, dtype="<i4", offset=HEADER_SIZE).reshape(height, width)
    return SignedFrame(samples.astype(np.int64), bit_depth or None)


##########################################################
# Meshes
##########################################################


def format_mesh(mesh: QuadMesh) -> str:
    lines = [f"mesh bs={mesh.bs} cols={mesh.cols} rows={mesh.rows}"]
    for i in range(mesh.rows):
        for j in range(mesh.cols):
            mv_x, mv_y = mesh.motion[i, j]
            lines.append(f"{i} {j} {mv_x:.6f} {mv_y:.6f}")
    return "\n".join(lines) + "\n"


def parse_mesh(text: str, frame_width: int, frame_height: int) -> QuadMesh:
    """Parse `format_mesh` output; the frame size is not part of the file."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise FormatError("Empty mesh file")
    header = lines[0].split()
    try:
        if header[0] != "mesh":
            raise ValueError
        fields = dict(item.split("=", 1) for item in header[1:])
        bs, cols, rows = int(fields["bs"]), int(fields["cols"]), int(fields["rows"])
    except (ValueError, KeyError, IndexError):
        raise FormatError(f"Malformed mesh header: {lines[0]!r}")

    anchors_x = lattice_anchors(frame_width, bs)
    anchors_y = lattice_anchors(frame_height, bs)
    if (len(anchors_x), len(anchors_y)) != (cols, rows):
        raise FormatError(
            f"Mesh header says {cols}x{rows} grid points, a {frame_width}x{frame_height} frame "
            f"at bs={bs} has {len(anchors_x)}x{len(anchors_y)}"
        )

    motion = np.zeros((rows, cols, 2))
    seen = np.zeros((rows, cols), dtype=bool)
    for line in lines[1:]:
        parts = line.split()
        try:
            i, j, mv_x, mv_y = int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])
        except (ValueError, IndexError):
            raise FormatError(f"Malformed mesh line: {line!r}")
        if len(parts) != 4 or not (0 <= i < rows and 0 <= j < cols) or seen[i, j]:
            raise FormatError(f"Invalid or repeated grid point line: {line!r}")
        motion[i, j] = (mv_x, mv_y)
        seen[i, j] = True
    if not seen.all():
        i, j = np.argwhere(~seen)[0]
        raise FormatError(f"Mesh file is missing grid point ({i}, {j})")

    return QuadMesh(frame_width, frame_height, bs, anchors_x, anchors_y, motion)


def write_mesh(fname: str, mesh: QuadMesh) -> None:
    with open(fname, "w", newline="\n") as f:
        f.write(format_mesh(mesh))


def read_mesh(fname: str, frame_width: int, frame_height: int) -> QuadMesh:
    with open(fname, "r") as f:
        return parse_mesh(f.read(), frame_width, frame_height)


##########################################################
# Key-value files: configs and manifests
##########################################################


def parse_key_values(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parse `key = value` lines. `#` starts a comment and blank lines are ignored."""
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{number}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def read_key_values(fname: str) -> Dict[str, str]:
    with open(fname, "r") as f:
        return parse_key_values(f.read(), fname)


def write_key_values(fname: str, values: Mapping[str, Any]) -> None:
    with open(fname, "w", newline="\n") as f:
        for key, value in values.items():
            f.write(f"{key}={value}\n")


ESTIMATION_KEYS = frozenset(
    ["compensation", "schedule", "subpixel", "lambda", "td", "metric", "warped_psnr_rounding", "threads"]
)
PHANTOM_KEYS = frozenset(
    [
        "width",
        "height",
        "frames",
        "bit_depth",
        "deformation",
        "amplitude",
        "period",
        "radius",
        "center_x",
        "center_y",
        "shift_x",
        "shift_y",
        "texture",
        "blobs",
        "texture_seed",
        "ring_spacing",
        "correlation_length",
        "noise_sigma",
        "seed",
    ]
)


def check_keys(values: Mapping[str, str]) -> None:
    for key in values:
        if key not in ESTIMATION_KEYS and key not in PHANTOM_KEYS:
            raise ConfigError(key, "unknown configuration key")


def _convert(values: Mapping[str, str], key: str, kind: Callable[[str], Any], default: Any) -> Any:
    if key not in values:
        return default
    try:
        return kind(values[key])
    except ValueError:
        raise ConfigError(key, f"cannot interpret {values[key]!r}")


def _choice(values: Mapping[str, str], key: str, choices: Sequence[str], default: str) -> str:
    value = values.get(key, default)
    if value not in choices:
        raise ConfigError(key, f"must be one of {', '.join(choices)}, got {value!r}")
    return value


def _parse_triples(text: str, width: int) -> List[Tuple[str, ...]]:
    items = [item.strip() for item in text.split(",") if item.strip()]
    parsed = [tuple(item.split(":")) for item in items]
    for item in parsed:
        if len(item) != width:
            raise ValueError(f"expected {width} ':'-separated numbers, got {':'.join(item)!r}")
    return parsed


def parse_schedule(text: str) -> Tuple[Stage, ...]:
    """`auto` (empty schedule) or comma separated `bs:sr:iterations` triples."""
    if text.strip() == "auto":
        return ()
    return tuple(Stage(int(bs), float(sr), int(it)) for bs, sr, it in _parse_triples(text, 3))


def parse_subpixel(text: str) -> Tuple[SubpixelStage, ...]:
    return tuple(SubpixelStage(float(sr), float(lam)) for sr, lam in _parse_triples(text, 2))


@dataclasses.dataclass(frozen=True)
class DecomposeOptions:
    """Settings of the decompose command that are not estimation settings."""

    compensation: str = "estimate"
    warped_psnr_rounding: str = "nearest"
    threads: int = 1


def parse_estimation(values: Mapping[str, str]) -> Tuple[EstimationConfig, DecomposeOptions]:
    check_keys(values)
    defaults = EstimationConfig()
    threads = _convert(values, "threads", int, 1)
    config = EstimationConfig(
        schedule=_convert(values, "schedule", parse_schedule, ()),
        reg_lambda=_convert(values, "lambda", float, defaults.reg_lambda),
        td=_convert(values, "td", float, defaults.td),
        metric=Metric(_choice(values, "metric", [m.value for m in Metric], defaults.metric.value)),
        subpixel_stages=_convert(values, "subpixel", parse_subpixel, defaults.subpixel_stages),
        threads=threads,
    )
    options = DecomposeOptions(
        compensation=_choice(values, "compensation", ["identity", "estimate"], "estimate"),
        warped_psnr_rounding=_choice(values, "warped_psnr_rounding", ["nearest", "none"], "nearest"),
        threads=threads,
    )
    return config, options


def parse_phantom(values: Mapping[str, str]) -> PhantomSpec:
    check_keys(values)
    defaults = PhantomSpec()

    def optional_float(key: str) -> Optional[float]:
        return _convert(values, key, float, None)

    deformation_kind = _choice(values, "deformation", ["none", "radial_expansion", "uniform_shift"], "none")
    deformation: Deformation
    if deformation_kind == "radial_expansion":
        deformation = RadialExpansion(
            amplitude=_convert(values, "amplitude", float, RadialExpansion.amplitude),
            period=_convert(values, "period", float, RadialExpansion.period),
            radius=optional_float("radius"),
            center_x=optional_float("center_x"),
            center_y=optional_float("center_y"),
        )
    elif deformation_kind == "uniform_shift":
        deformation = UniformShift(
            shift_x=_convert(values, "shift_x", float, UniformShift.shift_x),
            shift_y=_convert(values, "shift_y", float, UniformShift.shift_y),
        )
    else:
        deformation = NoDeformation()

    texture_kind = _choice(
        values, "texture", ["gaussian_blobs", "concentric_rings", "filtered_noise"], "gaussian_blobs"
    )
    texture: Texture
    if texture_kind == "concentric_rings":
        texture = ConcentricRings(spacing=_convert(values, "ring_spacing", float, ConcentricRings.spacing))
    elif texture_kind == "filtered_noise":
        texture = FilteredNoise(
            correlation_length=_convert(values, "correlation_length", float, FilteredNoise.correlation_length),
            seed=_convert(values, "texture_seed", int, FilteredNoise.seed),
        )
    else:
        texture = GaussianBlobs(
            count=_convert(values, "blobs", int, GaussianBlobs.count),
            seed=_convert(values, "texture_seed", int, GaussianBlobs.seed),
        )

    return PhantomSpec(
        width=_convert(values, "width", int, defaults.width),
        height=_convert(values, "height", int, defaults.height),
        frames=_convert(values, "frames", int, defaults.frames),
        bit_depth=_convert(values, "bit_depth", int, defaults.bit_depth),
        deformation=deformation,
        texture=texture,
        noise_sigma=_convert(values, "noise_sigma", float, defaults.noise_sigma),
        seed=_convert(values, "seed", int, defaults.seed),
    )


##########################################################
# Decomposition directory
##########################################################

MANIFEST_NAME = "manifest.txt"
REPORT_NAME = "report.csv"
PASSTHROUGH_NAME = "passthrough.raw"


def lowpass_name(t: int) -> str:
    return f"L_{t:04d}.band"


def highpass_name(t: int) -> str:
    return f"H_{t:04d}.band"


def mesh_name(t: int) -> str:
    return f"mesh_{t:04d}.txt"


@dataclasses.dataclass(frozen=True)
class Manifest:
    width: int
    height: int
    frames: int
    bit_depth: int
    pairs: int
    passthrough: bool

    def save(self, directory: str) -> None:
        values = dataclasses.asdict(self)
        values["passthrough"] = int(self.passthrough)
        write_key_values(os.path.join(directory, MANIFEST_NAME), values)

    @classmethod
    def load(cls, directory: str) -> Manifest:
        values = read_key_values(os.path.join(directory, MANIFEST_NAME))
        try:
            return cls(
                width=int(values["width"]),
                height=int(values["height"]),
                frames=int(values["frames"]),
                bit_depth=int(values["bit_depth"]),
                pairs=int(values["pairs"]),
                passthrough=bool(int(values["passthrough"])),
            )
        except (KeyError, ValueError) as e:
            raise FormatError(f"Malformed manifest in {directory}: {e}")


##########################################################
# Ground truth and reports
##########################################################


def write_truth(fname: str, truth: Sequence[np.ndarray]) -> None:
    """Store per-pair (2, height, width) displacement fields with msgpack, as little-endian float64 buffers."""
    fields = [np.asarray(field, dtype="<f8") for field in truth]
    shape = list(fields[0].shape[1:]) if fields else [0, 0]
    with open(fname, "wb") as f:
        msgpack.pack({"height": shape[0], "width": shape[1], "fields": [field.tobytes() for field in fields]}, f)


def read_truth(fname: str) -> List[np.ndarray]:
    with open(fname, "rb") as f:
        data = msgpack.unpack(f, raw=False)
    height, width = data["height"], data["width"]
    return [np.frombuffer(buffer, dtype="<f8").reshape(2, height, width) for buffer in data["fields"]]


def format_float(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.6f}"


REPORT_COLUMNS = ("t", "psnr_ref_L", "warped_psnr", "smoothness_mean", "entropy_L", "entropy_H")


@dataclasses.dataclass
class PairReport:
    t: int
    psnr_ref_L: float
    warped_psnr: float
    smoothness_mean: float
    entropy_L: float
    entropy_H: float


@dataclasses.dataclass
class DecompositionReport:
    rows: List[PairReport]

    def save_to_csv(self, fname: str):
        with open(fname, "w", newline="") as f:
            writer = csv.DictWriter(f, REPORT_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for row in self.rows:
                values = dataclasses.asdict(row)
                writer.writerow({k: v if k == "t" else format_float(v) for k, v in values.items()})

    @classmethod
    def load_from_csv(cls, fname: str):
        rows: List[PairReport] = []
        with open(fname, "r", newline="") as f:
            for row in csv.DictReader(f):
                rows.append(PairReport(int(row["t"]), *(float(row[k]) for k in REPORT_COLUMNS[1:])))
        return DecompositionReport(rows=rows)


def write_rows(f: Any, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    """Write a small CSV table with LF line endings; floats use 6 decimals and `inf`."""
    writer = csv.writer(f, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, float) else v for v in row])
