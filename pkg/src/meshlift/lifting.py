"""Integer Haar lifting along the temporal axis, plain and mesh-compensated."""

from __future__ import annotations

import concurrent.futures
import dataclasses
import logging
import warnings
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from meshlift.core import (
    DimensionError,
    EstimationConfig,
    Frame,
    InvertibilityError,
    QuadMesh,
    SignedFrame,
    SubbandPair,
    check_same_shape,
    identity_mesh,
    validate_mesh,
)
from meshlift.estimation import hierarchical_estimate
from meshlift.warp import warp_frame_forward, warp_frame_inverse

logger = logging.getLogger(__name__)

MeshSource = Union[str, EstimationConfig, QuadMesh]


def _pair_samples(f_odd: Frame, f_even: Frame) -> Tuple[np.ndarray, np.ndarray]:
    check_same_shape(f_odd, f_even)
    if f_odd.bit_depth != f_even.bit_depth:
        raise ValueError(f"Frames have different bit depths: {f_odd.bit_depth} != {f_even.bit_depth}")
    return f_odd.samples, f_even.samples


def haar_analysis(f_odd: Frame, f_even: Frame) -> SubbandPair:
    """Uncompensated integer Haar step: H = f_even - f_odd, L = f_odd + floor(H / 2)."""
    odd, even = _pair_samples(f_odd, f_even)
    highpass = even - odd
    lowpass = odd + np.floor_divide(highpass, 2)
    return SubbandPair(
        lowpass=SignedFrame(lowpass, f_odd.bit_depth),
        highpass=SignedFrame(highpass, f_odd.bit_depth),
        mesh=identity_mesh(f_odd.width, f_odd.height),
    )


def _rebuild_frame(samples: np.ndarray, bit_depth: Optional[int]) -> Frame:
    if bit_depth is None:
        raise ValueError("Subbands do not record the bit depth of their source frames")
    return Frame(samples, bit_depth)


def haar_synthesis(pair: SubbandPair) -> Tuple[Frame, Frame]:
    if not pair.mesh.is_identity:
        raise ValueError("haar_synthesis requires an identity mesh; use mc_synthesis")
    lowpass, highpass = pair.lowpass.samples, pair.highpass.samples
    odd = lowpass - np.floor_divide(highpass, 2)
    even = highpass + odd
    bit_depth = pair.lowpass.bit_depth
    return _rebuild_frame(odd, bit_depth), _rebuild_frame(even, bit_depth)


def _prediction(f_odd: Union[Frame, np.ndarray], mesh: QuadMesh) -> np.ndarray:
    return np.floor(warp_frame_forward(f_odd, mesh)).astype(np.int64)


def _update(highpass: np.ndarray, mesh: QuadMesh) -> np.ndarray:
    return np.floor(0.5 * warp_frame_inverse(highpass, mesh)).astype(np.int64)


def mc_analysis(f_odd: Frame, f_even: Frame, mesh: QuadMesh) -> SubbandPair:
    """Mesh-compensated lifting step.

    H = f_even - floor(W_fwd(f_odd)), L = f_odd + floor(W_inv(H) / 2). Both warps are evaluated
    in float64 and floored toward negative infinity, which `mc_synthesis` repeats bit for bit.
    """
    odd, even = _pair_samples(f_odd, f_even)
    highpass = even - _prediction(f_odd, mesh)
    lowpass = odd + _update(highpass, mesh)
    return SubbandPair(
        lowpass=SignedFrame(lowpass, f_odd.bit_depth),
        highpass=SignedFrame(highpass, f_odd.bit_depth),
        mesh=mesh,
    )


def mc_synthesis(pair: SubbandPair) -> Tuple[Frame, Frame]:
    highpass = pair.highpass.samples
    odd = pair.lowpass.samples - _update(highpass, pair.mesh)
    bit_depth = pair.lowpass.bit_depth
    f_odd = _rebuild_frame(odd, bit_depth)
    even = highpass + _prediction(f_odd, pair.mesh)
    return f_odd, _rebuild_frame(even, bit_depth)


def analyze_pair(f_odd: Frame, f_even: Frame, mesh: QuadMesh) -> SubbandPair:
    """Run the lifting step appropriate for `mesh`: plain Haar for zero motion, compensated otherwise."""
    if mesh.is_identity:
        pair = haar_analysis(f_odd, f_even)
        return dataclasses.replace(pair, mesh=mesh)
    return mc_analysis(f_odd, f_even, mesh)


def synthesize_pair(pair: SubbandPair) -> Tuple[Frame, Frame]:
    if pair.mesh.is_identity:
        return haar_synthesis(pair)
    return mc_synthesis(pair)


@dataclasses.dataclass
class DecompositionResult:
    """One temporal decomposition level of a frame sequence.

    `pairs[t]` holds the subbands of frames (2t, 2t + 1). An odd-length sequence carries its last
    frame through unmodified as `passthrough`.
    """

    pairs: List[SubbandPair]
    passthrough: Optional[Frame] = None

    @property
    def meshes(self) -> List[QuadMesh]:
        return [pair.mesh for pair in self.pairs]

    @property
    def frame_count(self) -> int:
        return 2 * len(self.pairs) + (1 if self.passthrough is not None else 0)


def _resolve_sources(mesh_source: Union[MeshSource, Sequence[MeshSource]], num_pairs: int) -> List[MeshSource]:
    if isinstance(mesh_source, (str, EstimationConfig, QuadMesh)):
        return [mesh_source] * num_pairs
    sources = list(mesh_source)
    if len(sources) != num_pairs:
        raise ValueError(f"Expected {num_pairs} mesh sources, got {len(sources)}")
    return sources


def _decompose_pair(f_odd: Frame, f_even: Frame, source: MeshSource) -> SubbandPair:
    if isinstance(source, str):
        if source != "identity":
            raise ValueError(f"Unknown mesh source {source!r}")
        return haar_analysis(f_odd, f_even)
    if isinstance(source, EstimationConfig):
        mesh = hierarchical_estimate(f_odd, f_even, source)
    else:
        mesh = source
        validate_mesh(mesh)
    return analyze_pair(f_odd, f_even, mesh)


def decompose_sequence(
    frames: Sequence[Frame],
    mesh_source: Union[MeshSource, Sequence[MeshSource]] = "identity",
    threads: int = 1,
    progress: bool = False,
) -> DecompositionResult:
    """Decompose a sequence into (L_t, H_t) pairs of consecutive frames.

    Arguments:
        frames: The sequence, all frames sharing one size and bit depth
        mesh_source: "identity", an EstimationConfig to estimate every mesh, a QuadMesh to apply,
            or a sequence of those with one entry per pair
        threads: Pairs are independent and may be processed concurrently
        progress: Show a progress bar over pairs
    """
    if len(frames) < 2:
        raise DimensionError(f"Need at least two frames to decompose, got {len(frames)}")
    check_same_shape(*frames)
    if len({frame.bit_depth for frame in frames}) != 1:
        raise ValueError("All frames of a sequence must share a bit depth")

    num_pairs = len(frames) // 2
    sources = _resolve_sources(mesh_source, num_pairs)
    logger.info("Decomposing %d frames into %d pairs", len(frames), num_pairs)

    def process(t: int) -> SubbandPair:
        try:
            return _decompose_pair(frames[2 * t], frames[2 * t + 1], sources[t])
        except InvertibilityError as e:
            e.pair = t
            raise

    if threads > 1 and num_pairs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
            pairs = list(tqdm(executor.map(process, range(num_pairs)), total=num_pairs, disable=not progress))
    else:
        pairs = [process(t) for t in tqdm(range(num_pairs), disable=not progress)]

    passthrough = None
    if len(frames) % 2 == 1:
        warnings.warn(f"Odd number of frames ({len(frames)}), carrying the last frame through unmodified")
        passthrough = frames[-1]
    return DecompositionResult(pairs=pairs, passthrough=passthrough)


def reconstruct_sequence(result: DecompositionResult) -> List[Frame]:
    """Invert `decompose_sequence` exactly."""
    frames: List[Frame] = []
    for pair in result.pairs:
        frames.extend(synthesize_pair(pair))
    if result.passthrough is not None:
        frames.append(result.passthrough)
    return frames
