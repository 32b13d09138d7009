"""Peng-Robinson thermodynamics for a single isothermal gas component.

All quantities are SI: molar density c in mol/m^3, energy density in J/m^3,
chemical potential in J/mol, pressure in Pa. The admissible range of c is the
open interval (0, 1/beta), beta being the covolume.

The Helmholtz free energy density splits into three parts,

    f(c) = f_ide + f_rep + f_att
    f_ide = c R T ln(c)
    f_rep = -c R T ln(1 - beta c)
    f_att = b c / (2 sqrt(2) beta) * ln((1 + (1-sqrt2) beta c)
                                        / (1 + (1+sqrt2) beta c)),

with mu(c) = f'(c) and the closed-form pressure

    p(c) = c R T / (1 - beta c) - b c^2 / (1 + 2 beta c - beta^2 c^2),

which satisfies the identity p = c mu - f.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# CODATA molar gas constant, J mol^-1 K^-1
R_GAS = 8.314462618

_SQRT2 = np.sqrt(2.0)


class EosDomainError(ValueError):
    """Molar density outside (0, 1/beta), or porosity outside (0, 1)."""


class InvalidParameterError(ValueError):
    """Non-physical constructor input."""


@dataclass(frozen=True)
class FluidEos:
    """Fluid parameters at a fixed temperature.

    R     gas constant (J mol^-1 K^-1)
    T     temperature (K)
    Tc    critical temperature (K)
    Pc    critical pressure (Pa)
    omega acentric factor (-)
    m     slope coefficient in the attraction term (-)
    b     attraction parameter b(T) (Pa m^6 mol^-2)
    beta  covolume (m^3 mol^-1)
    """

    R: float
    T: float
    Tc: float
    Pc: float
    omega: float
    m: float
    b: float
    beta: float

    def __post_init__(self):
        if not (self.beta > 0.0 and self.b > 0.0 and self.T > 0.0):
            raise InvalidParameterError(
                f"need beta, b, T > 0, got beta={self.beta}, b={self.b}, T={self.T}"
            )


@dataclass(frozen=True)
class RockProps:
    """Rock and coupling parameters.

    alpha        Biot coefficient (-)
    N            Biot modulus (Pa)
    lame_mu      shear Lame parameter (Pa)
    lame_lambda  dilatational Lame parameter (Pa)
    phi_ref      reference porosity for the permeability law (-)
    kappa0       reference permeability (m^2)
    visc         gas viscosity (Pa s)
    """

    alpha: float
    N: float
    lame_mu: float
    lame_lambda: float
    phi_ref: float
    kappa0: float
    visc: float

    def __post_init__(self):
        ok = (
            0.0 < self.alpha <= 1.0
            and self.N > 0.0
            and self.lame_mu > 0.0
            and self.lame_lambda > 0.0
            and 0.0 < self.phi_ref < 1.0
            and self.kappa0 > 0.0
            and self.visc > 0.0
        )
        if not ok:
            raise InvalidParameterError(f"non-physical rock parameters: {self}")


def acentric_slope(omega: float) -> float:
    """Slope coefficient m(omega), with the high-acentricity branch above 0.49."""
    if omega <= 0.49:
        return 0.37464 + 1.54226 * omega - 0.26992 * omega**2
    return 0.379642 + 1.485030 * omega - 0.164423 * omega**2 + 0.016666 * omega**3


def eos_from_critical(Tc: float, Pc: float, omega: float, T: float, R: float = R_GAS) -> FluidEos:
    """Build fluid parameters from critical properties.

    b = 0.45724 R^2 Tc^2 / Pc * (1 + m (1 - sqrt(T/Tc)))^2,
    beta = 0.07780 R Tc / Pc.
    """
    if not (Tc > 0.0 and Pc > 0.0 and T > 0.0 and R > 0.0):
        raise InvalidParameterError(
            f"need Tc, Pc, T, R > 0, got Tc={Tc}, Pc={Pc}, T={T}, R={R}"
        )
    m = acentric_slope(omega)
    b = 0.45724 * R**2 * Tc**2 / Pc * (1.0 + m * (1.0 - np.sqrt(T / Tc))) ** 2
    beta = 0.07780 * R * Tc / Pc
    return FluidEos(R=R, T=T, Tc=Tc, Pc=Pc, omega=omega, m=m, b=b, beta=beta)


def _check_c(eos: FluidEos, c):
    c = np.asarray(c, dtype=float)
    if np.any(c <= 0.0) or np.any(eos.beta * c >= 1.0):
        bad = c[(c <= 0.0) | (eos.beta * c >= 1.0)]
        raise EosDomainError(f"molar density outside (0, 1/beta): {bad[:5]}")
    return c


def helmholtz_f(eos: FluidEos, c):
    """Helmholtz free energy density f(c) in J/m^3."""
    c = _check_c(eos, c)
    RT = eos.R * eos.T
    bc = eos.beta * c
    f_ide = c * RT * np.log(c)
    f_rep = -c * RT * np.log(1.0 - bc)
    f_att = (
        eos.b * c / (2.0 * _SQRT2 * eos.beta)
        * np.log((1.0 + (1.0 - _SQRT2) * bc) / (1.0 + (1.0 + _SQRT2) * bc))
    )
    return f_ide + f_rep + f_att


def chemical_potential(eos: FluidEos, c):
    """mu(c) = f'(c) in J/mol, closed form."""
    c = _check_c(eos, c)
    RT = eos.R * eos.T
    beta = eos.beta
    bc = beta * c
    lo = 1.0 + (1.0 - _SQRT2) * bc
    hi = 1.0 + (1.0 + _SQRT2) * bc
    mu_ide = RT * (np.log(c) + 1.0)
    mu_rep = -RT * np.log(1.0 - bc) + RT * bc / (1.0 - bc)
    mu_att = (
        eos.b / (2.0 * _SQRT2 * beta) * np.log(lo / hi)
        + eos.b * c / (2.0 * _SQRT2 * beta)
        * ((1.0 - _SQRT2) * beta / lo - (1.0 + _SQRT2) * beta / hi)
    )
    return mu_ide + mu_rep + mu_att


def pressure_peng(eos: FluidEos, c):
    """Equation-of-state pressure p(c) in Pa."""
    c = _check_c(eos, c)
    bc = eos.beta * c
    return c * eos.R * eos.T / (1.0 - bc) - eos.b * c * c / (1.0 + 2.0 * bc - bc * bc)


def stab_coeff(eos: FluidEos, c):
    """Convex-part curvature R T / (c (1 - beta c)^2) in J m^3 mol^-2.

    This is the second derivative of f_ide + f_rep; it weights the
    stabilization increment in the linearized chemical potential.
    """
    c = _check_c(eos, c)
    return eos.R * eos.T / (c * (1.0 - eos.beta * c) ** 2)


def mobility(rock: RockProps, phi, kappa0=None):
    """Kozeny-Carman mobility lambda(phi) = kappa0/visc (phi/phi_r)^3 ((1-phi_r)/(1-phi))^2.

    kappa0 may be a per-cell array overriding the scalar reference value,
    for heterogeneous permeability fields. Units: m^2 Pa^-1 s^-1.
    """
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0.0) or np.any(phi >= 1.0):
        raise EosDomainError(f"porosity outside (0, 1): {phi[(phi <= 0) | (phi >= 1)][:5]}")
    k0 = rock.kappa0 if kappa0 is None else np.asarray(kappa0, dtype=float)
    return (
        k0 / rock.visc
        * (phi / rock.phi_ref) ** 3
        * ((1.0 - rock.phi_ref) / (1.0 - phi)) ** 2
    )
