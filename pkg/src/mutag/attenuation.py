"""Photon attenuation data and Compton scattering kinematics.

Linear attenuation coefficients are tabulated at import time on a log
grid from a two-part model: exact Klein-Nishina incoherent scattering
off Z/A electrons per gram, plus a photoelectric power law anchored to
published mass attenuation values for each material.  Coherent
scattering and pair production are neglected; both are percent-level
corrections over the 20 keV - 3 MeV domain covered here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

R_E_CM = 2.8179403262e-13  # classical electron radius
MEC2_MEV = 0.51099895
N_AVOGADRO = 6.02214076e23

E_MIN_MEV = 0.02
E_MAX_MEV = 3.0
_N_GRID = 241


def klein_nishina_cross_section(e_mev):
    """Total Compton cross-section per electron in cm^2.

    Parameters
    ----------
    e_mev : array_like
        Photon energy in MeV.

    Returns
    -------
    ndarray
        Cross-section values, same shape as `e_mev`.
    """
    k = np.asarray(e_mev, dtype=float) / MEC2_MEV
    pre = 2.0 * np.pi * R_E_CM**2
    t1 = (1.0 + k) / k**2 * (2.0 * (1.0 + k) / (1.0 + 2.0 * k) - np.log1p(2.0 * k) / k)
    t2 = np.log1p(2.0 * k) / (2.0 * k)
    t3 = -(1.0 + 3.0 * k) / (1.0 + 2.0 * k) ** 2
    return pre * (t1 + t2 + t3)


@dataclass(frozen=True)
class Material:
    """Composition data for one absorber.

    The photoelectric part is a single power law mu_pe/rho =
    anchor * (E/E_anchor)^-exponent, adequate away from absorption
    edges for the low-Z and mid-Z materials used here.
    """

    name: str
    density_g_cm3: float
    z_over_a: float
    pe_anchor_mev: float
    pe_anchor_cm2_g: float
    pe_exponent: float = 3.0

    def mu_compton_exact(self, e_mev):
        """Linear Compton attenuation in 1/cm."""
        electrons_per_g = N_AVOGADRO * self.z_over_a
        return klein_nishina_cross_section(e_mev) * electrons_per_g * self.density_g_cm3

    def mu_photoelectric_exact(self, e_mev):
        """Linear photoelectric attenuation in 1/cm."""
        e = np.asarray(e_mev, dtype=float)
        return (self.pe_anchor_cm2_g * (e / self.pe_anchor_mev) ** (-self.pe_exponent)
                * self.density_g_cm3)


MATERIALS = {
    "si": Material("si", 2.329, 0.49848, 0.030, 1.15),
    "cu": Material("cu", 8.960, 0.45636, 0.100, 0.28),
    "al": Material("al", 2.699, 0.48181, 0.030, 0.86),
    # 80/20 NiFe magnetic shielding alloy
    "nife": Material("nife", 8.700, 0.47650, 0.100, 0.24),
}


class AttenuationTable:
    """Log-log interpolated attenuation coefficients for one material."""

    def __init__(self, material: Material):
        self.material = material
        self._log_e = np.linspace(np.log(E_MIN_MEV), np.log(E_MAX_MEV), _N_GRID)
        e = np.exp(self._log_e)
        self._log_mu_c = np.log(material.mu_compton_exact(e))
        self._log_mu_pe = np.log(material.mu_photoelectric_exact(e))

    def _check(self, e_mev: np.ndarray) -> np.ndarray:
        e = np.asarray(e_mev, dtype=float)
        if np.any(e < E_MIN_MEV * (1 - 1e-9)) or np.any(e > E_MAX_MEV * (1 + 1e-9)):
            raise ValueError(
                f"photon energy outside table domain [{E_MIN_MEV}, {E_MAX_MEV}] MeV")
        return e

    def mu_compton(self, e_mev):
        e = self._check(e_mev)
        return np.exp(np.interp(np.log(e), self._log_e, self._log_mu_c))

    def mu_photoelectric(self, e_mev):
        e = self._check(e_mev)
        return np.exp(np.interp(np.log(e), self._log_e, self._log_mu_pe))

    def mu_total(self, e_mev):
        return self.mu_compton(e_mev) + self.mu_photoelectric(e_mev)

    def photoelectric_fraction(self, e_mev):
        """Probability that an interaction at this energy is photoelectric."""
        mu_pe = self.mu_photoelectric(e_mev)
        return mu_pe / (mu_pe + self.mu_compton(e_mev))


TABLES = {name: AttenuationTable(mat) for name, mat in MATERIALS.items()}


def mu_total(material: str, e_mev):
    """Linear attenuation coefficient in 1/cm for a named material."""
    return TABLES[material].mu_total(e_mev)


def mass_attenuation(material: str, e_mev):
    """mu/rho in cm^2/g, the form quoted in published tables."""
    return mu_total(material, e_mev) / MATERIALS[material].density_g_cm3


def sample_compton_scatter(e_mev: np.ndarray, rng: np.random.Generator):
    """Draw scattered-photon energy fractions from the Klein-Nishina density.

    Uses the standard composition/rejection split: the 1/eps and eps
    components of the differential cross-section are sampled in
    proportion, then accepted against the angular factor.

    Returns
    -------
    eps : ndarray
        Scattered photon energy as a fraction of the incident energy.
    cos_theta : ndarray
        Scattering angle cosine consistent with each eps.
    """
    e = np.asarray(e_mev, dtype=float)
    k = e / MEC2_MEV
    eps0 = 1.0 / (1.0 + 2.0 * k)
    alpha1 = -np.log(eps0)
    alpha2 = 0.5 * (1.0 - eps0**2)
    out = np.empty_like(e)
    todo = np.ones(e.shape, dtype=bool)
    while todo.any():
        m = todo.nonzero()[0]
        r1, r2, r3 = rng.random((3, m.size))
        pick_log = r1 < alpha1[m] / (alpha1[m] + alpha2[m])
        eps = np.where(pick_log,
                       np.exp(-alpha1[m] * r2),
                       np.sqrt(eps0[m] ** 2 + (1.0 - eps0[m] ** 2) * r2))
        t = (1.0 - eps) / (k[m] * eps)
        sin2 = t * (2.0 - t)
        g = 1.0 - eps * sin2 / (1.0 + eps * eps)
        acc = r3 <= g
        out[m[acc]] = eps[acc]
        todo[m[acc]] = False
    cos_theta = 1.0 - (1.0 - out) / (k * out)
    return out, np.clip(cos_theta, -1.0, 1.0)
