import pytest

from eprsim import model, simulate

# reference calibration: sigma_minus^2 = 0.0400 mm^2, sigma_plus^2 = 0.4878 mm^2,
# D = 0.0137 mm^2/us
SIGMA_MINUS_REF = 0.2
SIGMA_PLUS_REF = 0.6984268036093689
D_REF = 0.0137


@pytest.fixture(scope="session")
def sref():
    return model.EprGaussianState(epsilon=1.0, sigma_minus=SIGMA_MINUS_REF,
                                  sigma_plus=SIGMA_PLUS_REF)


@pytest.fixture(scope="session")
def dref():
    return model.DiffusionModel(diffusion_coefficient=D_REF)


@pytest.fixture(scope="session")
def no_diffusion():
    return model.DiffusionModel(diffusion_coefficient=0.0)


def random_states(rng, n, sigma_minus=(0.1, 1.0), ratio=(1.2, 10.0)):
    """Entangled-parameterization states for property tests."""
    out = []
    for _ in range(n):
        sm = rng.uniform(*sigma_minus)
        sp = sm * rng.uniform(*ratio)
        out.append(model.EprGaussianState(epsilon=rng.uniform(0.2, 2.0),
                                          sigma_minus=sm, sigma_plus=sp))
    return out


def near_detector(pitch=0.02, roi=1.5, eff=0.6, dark=0.1, pairs_per_mode=0.05,
                  mode_count=12):
    r = simulate.Roi(lo=(-roi, -roi), hi=(roi, roi))
    return simulate.DetectorConfig(
        basis=model.Basis.NEAR_FIELD, pixel_pitch=pitch, roi_stokes=r,
        roi_anti_stokes=r, eff_photon=eff, eff_spinwave_readout=eff,
        dark_rate=dark, pairs_per_mode=pairs_per_mode, mode_count=mode_count)


def far_detector(pitch=0.1, roi=7.5, eff=0.6, dark=0.1, pairs_per_mode=0.05,
                 mode_count=12):
    r = simulate.Roi(lo=(-roi, -roi), hi=(roi, roi))
    return simulate.DetectorConfig(
        basis=model.Basis.FAR_FIELD, pixel_pitch=pitch, roi_stokes=r,
        roi_anti_stokes=r, eff_photon=eff, eff_spinwave_readout=eff,
        dark_rate=dark, pairs_per_mode=pairs_per_mode, mode_count=mode_count)
