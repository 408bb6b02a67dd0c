import numpy as np

from meshlift.core import EstimationConfig, Metric
from meshlift.estimation import hierarchical_estimate
from meshlift.evaluation import mesh_smoothness, psnr, warped_lowpass_psnr
from meshlift.lifting import mc_analysis
from meshlift.phantom import FilteredNoise, PhantomSpec, RadialExpansion, generate

SCHEDULE = [(16, 1, 4), (8, 1, 6)]


def _noisy_pair():
    spec = PhantomSpec(
        width=64,
        height=64,
        frames=2,
        deformation=RadialExpansion(amplitude=3, radius=16),
        texture=FilteredNoise(correlation_length=3, seed=1),
        noise_sigma=0.01,
        seed=11,
    )
    (f_odd, f_even), _ = generate(spec)
    return f_odd, f_even


def test_regularizer_trades_prediction_for_smoothness():
    f_odd, f_even = _noisy_pair()
    smoothness = []
    lowpass_psnr = []
    for reg_lambda in (0.0, 0.001, 0.01, 0.1):
        config = EstimationConfig(schedule=SCHEDULE, reg_lambda=reg_lambda, subpixel_stages=())
        mesh = hierarchical_estimate(f_odd, f_even, config)
        smoothness.append(mesh_smoothness(mesh).mean)
        lowpass_psnr.append(psnr(f_odd, mc_analysis(f_odd, f_even, mesh).lowpass))

    assert all(np.diff(smoothness) >= 0), smoothness
    assert all(np.diff(lowpass_psnr) <= 0), lowpass_psnr
    # Without the regularizer noise makes the mesh visibly rougher
    assert smoothness[0] < smoothness[-1]


def test_inverse_term_helps_warped_lowpass():
    f_odd, f_even = _noisy_pair()
    warped = {}
    for metric in Metric:
        config = EstimationConfig(schedule=SCHEDULE, metric=metric, reg_lambda=0.0004)
        mesh = hierarchical_estimate(f_odd, f_even, config)
        warped[metric] = warped_lowpass_psnr(mc_analysis(f_odd, f_even, mesh), f_even)
    assert warped[Metric.D13] >= warped[Metric.D11], warped
