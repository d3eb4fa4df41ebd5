"""Material laws, the double-well potential, and membrane electrostatics.

The two lipid phases are labelled by the order parameter c (c ~ 1 and c ~ 0).
Density and viscosity interpolate between the phase values: viscosity by a
clamped linear law, density (where its derivative matters for the momentum
scheme) by a smooth, monotone, uniformly positive profile whose derivative is
theta^2.  Electrostatics follows the linearised Grahame relation evaluated at
the slip plane, in SI units.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS0 = 8.85e-12  # vacuum permittivity, F/m


@dataclass
class MaterialParams:
    """Phase densities/viscosities (c = 1 phase first), line tension, interface data.

    Units: lengths in micrometres, time in seconds, masses scaled so rho2 = 1.
    D is the diffusivity in um^2/s (1e-5 cm^2/s = 1e3 um^2/s).
    """

    rho1: float = 2.0
    rho2: float = 1.0
    eta1: float = 2.0
    eta2: float = 1.0
    sigma_gamma: float = 1.0
    epsilon: float = 0.1
    D: float = 1.0e3
    mobility: str = "degenerate"   # or "constant"
    alpha: float = 0.1             # smoothing width of the density profile


def f0(c: np.ndarray) -> np.ndarray:
    """Double-well potential f0(c) = 1/4 c^2 (1 - c)^2."""
    return 0.25 * c * c * (1.0 - c) ** 2


def f0_prime(c: np.ndarray) -> np.ndarray:
    """f0'(c) = 1/2 c (1 - c)(1 - 2c)."""
    return 0.5 * c * (1.0 - c) * (1.0 - 2.0 * c)


def mobility(c: np.ndarray, mp: MaterialParams) -> np.ndarray:
    """Degenerate mobility M = D c(1-c) with c clamped to [0, 1], or constant D."""
    if mp.mobility == "constant":
        return np.full_like(np.asarray(c, dtype=float), mp.D)
    cc = np.clip(c, 0.0, 1.0)
    return mp.D * cc * (1.0 - cc)


def cutoff_density(c: np.ndarray, mp: MaterialParams) -> np.ndarray:
    """rho2 for c <= 0, rho1 for c >= 1, linear in between."""
    return mp.rho2 + (mp.rho1 - mp.rho2) * np.clip(c, 0.0, 1.0)


def cutoff_viscosity(c: np.ndarray, mp: MaterialParams) -> np.ndarray:
    return mp.eta2 + (mp.eta1 - mp.eta2) * np.clip(c, 0.0, 1.0)


def theta_squared(c: np.ndarray, mp: MaterialParams) -> np.ndarray:
    """theta^2 = d rho_smooth / dc = (rho1 - rho2)/2 (tanh(c/alpha) + 1)."""
    return 0.5 * (mp.rho1 - mp.rho2) * (np.tanh(np.asarray(c) / mp.alpha) + 1.0)


def theta(c: np.ndarray, mp: MaterialParams) -> np.ndarray:
    return np.sqrt(np.maximum(theta_squared(c, mp), 0.0))


def theta_prime(c: np.ndarray, mp: MaterialParams) -> np.ndarray:
    """d theta / dc, with the 0/0 limit at theta -> 0 resolved to 0."""
    th = theta(c, mp)
    dth2 = 0.5 * (mp.rho1 - mp.rho2) / np.cosh(np.asarray(c) / mp.alpha) ** 2 / mp.alpha
    out = np.zeros_like(th)
    np.divide(dth2, 2.0 * th, out=out, where=th > 1.0e-14)
    return out


def _log_cosh(x: np.ndarray) -> np.ndarray:
    # overflow-safe log(cosh(x)) = |x| + log1p(exp(-2|x|)) - log 2
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)


def rho_smooth(c: np.ndarray, mp: MaterialParams) -> np.ndarray:
    """Smooth monotone density: integral of theta^2 from 0 to c, plus rho2.

    Closed form rho2 + (rho1 - rho2)/2 (c + alpha log cosh(c/alpha)); equals
    rho2 exactly at c = 0 and stays uniformly positive.
    """
    c = np.asarray(c, dtype=float)
    return mp.rho2 + 0.5 * (mp.rho1 - mp.rho2) * (
        c + mp.alpha * _log_cosh(c / mp.alpha)
    )


def rho_hat(c: np.ndarray, mp: MaterialParams) -> np.ndarray:
    """rho - (d rho/dc) c, the density combination in the convection form."""
    return rho_smooth(c, mp) - theta_squared(c, mp) * c


# -- electrostatics (SI) -----------------------------------------------------


def grahame_sigma(zeta_volts: float, kappa_per_nm: float = 10.0 / 7.0,
                  x_slip_nm: float = 0.24, eps_r: float = 80.0,
                  eps0: float = EPS0) -> float:
    """Surface charge density from the linearised Grahame relation.

    The measured zeta potential sits at the slip plane x; extrapolating the
    screened potential back to the surface gives Psi_0 = zeta / exp(-kappa x),
    and sigma = eps_r eps0 kappa Psi_0 (kappa converted to 1/m).
    """
    psi0 = zeta_volts * np.exp(kappa_per_nm * x_slip_nm)
    return eps_r * eps0 * (kappa_per_nm * 1.0e9) * psi0


def electric_field(sigma: float, include_medium_permittivity: bool = False,
                   eps_r: float = 80.0, eps0: float = EPS0) -> float:
    """Field magnitude E = sigma / (2 eps0) of a charged plane.

    The medium's relative permittivity is omitted by default (as displayed in
    the source relation); include_medium_permittivity divides it back in.
    """
    E = sigma / (2.0 * eps0)
    if include_medium_permittivity:
        E /= eps_r
    return E


# PAT3's charge split (67.15% of the charged lipid in the L_d phase at area
# fraction 29.63%) fixes an affinity ratio K; the same K gives the split for
# any composition.
_P3, _A3 = 0.6715, 1.0 - 0.7037
CHARGE_AFFINITY = (_P3 * (1.0 - _A3)) / ((1.0 - _P3) * _A3)


def charge_partition_fraction(ld_area_fraction: float,
                              affinity: float = CHARGE_AFFINITY) -> float:
    """Fraction of total charge in the L_d region of given area fraction."""
    a = ld_area_fraction
    return affinity * a / (affinity * a + (1.0 - a))


@dataclass
class ElectrostaticParams:
    """External-force model: charged SUV membrane attracted to a GUV plane."""

    enabled: bool = False
    zeta_mV: float = 10.0
    kappa_per_nm: float = 10.0 / 7.0
    x_slip_nm: float = 0.24
    eps_r: float = 80.0
    include_medium_permittivity: bool = False
    partition_fraction: float | None = None   # None: derive from the region areas
    threshold: float = 0.5
    force_scale: float = 1.0                  # SI force density -> simulation units
    direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -1.0]))

    def sigma(self) -> float:
        return grahame_sigma(self.zeta_mV * 1.0e-3, self.kappa_per_nm,
                             self.x_slip_nm, self.eps_r)

    def field_strength(self) -> float:
        return electric_field(self.sigma(), self.include_medium_permittivity,
                              self.eps_r)


def build_external_force(am, c_values, elec: ElectrostaticParams) -> np.ndarray:
    """Electrostatic force density at the surface quadrature points.

    Total charge Q = sigma * area; a fraction (given, or derived from the
    region areas) is spread uniformly over the charged-phase region
    {c > threshold}, the rest over its complement, and each point is pulled
    toward the GUV plane with strength E * (local charge density).
    The integral of the result is exactly E * Q * direction.
    """
    w = am.surf_qw
    area = float(w.sum())
    sigma = elec.sigma()
    E = elec.field_strength()
    Q = sigma * area

    mask_ld = c_values > elec.threshold
    area_ld = float(w[mask_ld].sum())
    area_lo = area - area_ld

    p = elec.partition_fraction
    if p is None:
        p = charge_partition_fraction(area_ld / area)
    if area_ld <= 0.0:
        p = 0.0
    if area_lo <= 0.0:
        p = 1.0

    density = np.zeros_like(c_values)
    if area_ld > 0.0:
        density[mask_ld] = p * Q / area_ld
    if area_lo > 0.0:
        density[~mask_ld] = (1.0 - p) * Q / area_lo

    d = np.asarray(elec.direction, dtype=float)
    d = d / np.linalg.norm(d)
    return elec.force_scale * E * density[..., None] * d
