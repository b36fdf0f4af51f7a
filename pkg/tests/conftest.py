import numpy as np
import pytest

from meshforge.geoframe import build_frame
from meshforge.rfm import GeoPoint
from meshforge.synthio import SceneSpec, ViewSpec, generate_scene

ANCHOR = GeoPoint(30.0, -81.7, 20.0)


@pytest.fixture(scope="session")
def frame():
    return build_frame(ANCHOR)


@pytest.fixture(scope="session")
def scene_small():
    """64x64 px two-view fractal scene at 1 m GSD (fast shared fixture)."""
    spec = SceneSpec(
        extent=64.0,
        gsd=1.0,
        terrain="fractal",
        terrain_params={"amplitude": 3.0, "corr_len": 0.15},
        texture_corr_px=2.0,
        views=[ViewSpec(6.0, 0.0), ViewSpec(6.0, 180.0)],
    )
    return generate_scene(spec, seed=7)


@pytest.fixture(scope="session")
def scene_flat():
    """Flat textured plane under two oblique views (sign-test fixture)."""
    spec = SceneSpec(
        extent=64.0,
        gsd=1.0,
        terrain="flat",
        texture_corr_px=2.0,
        views=[ViewSpec(8.0, 0.0), ViewSpec(8.0, 180.0)],
    )
    return generate_scene(spec, seed=13)


def random_rfm(rng, cubic=True):
    """Random well-conditioned sensor model for property tests."""
    from meshforge.rfm import RfmModel

    def coeffs(scale):
        c = rng.normal(0.0, scale, 20)
        if not cubic:
            c[4:] = 0.0
        return c

    num_s = coeffs(0.1)
    num_l = coeffs(0.1)
    num_s[1] += 1.0
    num_l[2] += 1.0
    den_s = np.concatenate([[1.0], rng.normal(0.0, 0.01, 19)])
    den_l = np.concatenate([[1.0], rng.normal(0.0, 0.01, 19)])
    if not cubic:
        den_s[4:] = 0.0
        den_l[4:] = 0.0
    return RfmModel(
        num_s=num_s, den_s=den_s, num_l=num_l, den_l=den_l,
        scale_b=0.02 + rng.uniform(0, 0.02), off_b=rng.uniform(25, 45),
        scale_l=0.02 + rng.uniform(0, 0.02), off_l=rng.uniform(-120, -60),
        scale_h=300.0 + rng.uniform(0, 500), off_h=rng.uniform(0, 300),
        scale_samp=5000.0, off_samp=4999.5, scale_line=6000.0,
        off_line=5999.5,
        shift_samp=rng.normal(0, 2), shift_line=rng.normal(0, 2),
    )
