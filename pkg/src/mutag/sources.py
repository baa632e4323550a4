"""Particle generators: sea-level muons and ambient gamma rays.

Both sources generate rays on a sphere enclosing the stack.  The muon
generator samples directions from the zenith intensity model and impact
points uniformly on a disk perpendicular to each direction, which gives
an exactly uniform fluence; the generation rate that reproduces a given
flux through a horizontal plane follows from the model's two angular
moments.  The gamma source is an isotropic field sampled with the
standard surface-source recipe (cosine-law directions from a sphere).
"""
from __future__ import annotations

import numpy as np

from .config import AngularConfig, MuonEnergyConfig, SourcesConfig


def orthonormal_basis(vecs: np.ndarray):
    """Two unit vectors spanning the plane perpendicular to each row of vecs."""
    ref = np.where(np.abs(vecs[:, 2:3]) < 0.9,
                   np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    e1 = np.cross(vecs, ref)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(vecs, e1)
    return e1, e2


def zenith_intensity(cos_theta, angular: AngularConfig):
    """Unnormalized intensity I(cos theta) of the zenith model."""
    u = np.asarray(cos_theta, dtype=float)
    if angular.kind == "cos2":
        return u * u
    f = angular.isotropic_fraction
    return (1.0 - f) * u ** angular.zenith_exponent + f


def angular_moments(angular: AngularConfig) -> tuple[float, float]:
    """(intensity moment, flux moment) of the zenith model.

    Z = int_0^1 I(u) du weights a perpendicular detector, W = int_0^1
    I(u) u du a horizontal one; their ratio converts a horizontal-plane
    flux into the generation rate of the uniform-fluence sampler.
    """
    if angular.kind == "cos2":
        return 1.0 / 3.0, 1.0 / 4.0
    n = angular.zenith_exponent
    f = angular.isotropic_fraction
    z = (1.0 - f) / (n + 1.0) + f
    w = (1.0 - f) / (n + 2.0) + f / 2.0
    return z, w


def sample_zenith(n: int, angular: AngularConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw cos(theta) from the intensity density I(u) on [0, 1]."""
    v = rng.random(n)
    if angular.kind == "cos2":
        return v ** (1.0 / 3.0)
    exp = angular.zenith_exponent
    f = angular.isotropic_fraction
    z, _ = angular_moments(angular)
    p_cos = ((1.0 - f) / (exp + 1.0)) / z
    pick = rng.random(n) < p_cos
    u = np.where(pick, v ** (1.0 / (exp + 1.0)), v)
    return u


def sample_muon_rays(n: int, angular: AngularConfig, radius_cm: float,
                     rng: np.random.Generator):
    """Uniform-fluence muon rays through a sphere of the given radius.

    Directions follow the zenith intensity model; each ray's impact
    point is uniform on the disk through the sphere center perpendicular
    to its direction, back-projected onto the sphere.

    Returns (origins, directions) with shapes (n, 3).
    """
    u = sample_zenith(n, angular, rng)
    phi = 2.0 * np.pi * rng.random(n)
    s = np.sqrt(1.0 - u * u)
    d = np.column_stack([s * np.cos(phi), s * np.sin(phi), -u])
    e1, e2 = orthonormal_basis(d)
    r = radius_cm * np.sqrt(rng.random(n))
    psi = 2.0 * np.pi * rng.random(n)
    p = r[:, None] * (np.cos(psi)[:, None] * e1 + np.sin(psi)[:, None] * e2)
    back = np.sqrt(np.maximum(radius_cm**2 - r * r, 0.0))
    origins = p - back[:, None] * d
    return origins, d


def equivalent_livetime(n_generated: int, flux_per_cm2_s: float,
                        surface_cm2: float, geometry_factor: float = 1.0) -> float:
    """Exposure in seconds that a generated sample corresponds to.

    The generation rate is flux * surface * geometry_factor; rates are
    later computed as counts / livetime.  n = 0 maps to 0 s.
    """
    if flux_per_cm2_s <= 0:
        raise ValueError("flux must be > 0 to define a livetime")
    if surface_cm2 <= 0:
        raise ValueError("generation surface must be > 0")
    if n_generated == 0:
        return 0.0
    return n_generated / (flux_per_cm2_s * surface_cm2 * geometry_factor)


def muon_generation_rate(flux_per_cm2_s: float, radius_cm: float,
                         angular: AngularConfig) -> float:
    """Rays per second the sampler must emit to realize the given flux.

    The flux is the conventional rate through a horizontal plane; the
    moment ratio Z/W corrects for the cosine the disk sampler absorbs.
    """
    z, w = angular_moments(angular)
    return flux_per_cm2_s * np.pi * radius_cm**2 * z / w


def muon_equivalent_livetime(n: int, flux_per_cm2_s: float, radius_cm: float,
                             angular: AngularConfig) -> float:
    """Seconds of exposure that n generated muons correspond to."""
    z, w = angular_moments(angular)
    return equivalent_livetime(n, flux_per_cm2_s, np.pi * radius_cm**2, z / w)


def sample_muon_energies(n: int, cfg: MuonEnergyConfig, rng: np.random.Generator) -> np.ndarray:
    """Energies in GeV from dN/dE ~ (E + e0)^-index above e_min (inverse CDF)."""
    u = rng.random(n)
    g = cfg.spectral_index - 1.0
    return (cfg.e_min_gev + cfg.e0_gev) * (1.0 - u) ** (-1.0 / g) - cfg.e0_gev


def sample_gamma_rays(n: int, radius_cm: float, rng: np.random.Generator):
    """Isotropic-field rays: origins on the sphere, inward cosine-law directions."""
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    origins = radius_cm * nrm
    inward = -nrm
    ca = np.sqrt(rng.random(n))
    sa = np.sqrt(1.0 - ca * ca)
    psi = 2.0 * np.pi * rng.random(n)
    e1, e2 = orthonormal_basis(inward)
    d = (ca[:, None] * inward
         + sa[:, None] * (np.cos(psi)[:, None] * e1 + np.sin(psi)[:, None] * e2))
    return origins, d


def gamma_generation_rate(flux_per_cm2_s: float, radius_cm: float) -> float:
    """Surface-source emission rate for an isotropic field of the given fluence rate."""
    return flux_per_cm2_s * np.pi * radius_cm**2


def gamma_equivalent_livetime(n: int, flux_per_cm2_s: float, radius_cm: float) -> float:
    return equivalent_livetime(n, flux_per_cm2_s, np.pi * radius_cm**2)


def sample_gamma_energies(n: int, cfg: SourcesConfig, rng: np.random.Generator) -> np.ndarray:
    """Energies in MeV: discrete lines plus a truncated-exponential continuum."""
    cont = cfg.gamma_continuum
    u = rng.random(n)
    e = np.empty(n)
    p0 = 0.0
    for e_line, weight in cfg.gamma_lines_mev:
        sel = (u >= p0) & (u < p0 + weight)
        e[sel] = e_line
        p0 += weight
    sel = u >= p0
    v = rng.random(int(sel.sum()))
    span = 1.0 - np.exp(-(cont.e_max_mev - cont.e_min_mev) / cont.slope_mev)
    e[sel] = cont.e_min_mev - cont.slope_mev * np.log1p(-v * span)
    return e
