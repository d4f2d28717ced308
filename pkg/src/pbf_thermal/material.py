"""Temperature-dependent material laws (Hastelloy X defaults).

Conductivity follows a tanh step across the melting range and the heat
capacity is an *apparent* capacity: two Gaussian bumps on a linear trend
absorb the solid-state transition and the latent heat of fusion.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch

# Temperature range over which the laws are guaranteed positive and over
# which the explicit solver scans for the maximum diffusivity.
T_SCAN_MIN = 300.0
T_SCAN_MAX = 4000.0


class MaterialError(ValueError):
    """Invalid temperature input or material coefficients."""


def _check_temperature(T):
    arr = np.asarray(T, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise MaterialError("temperature must be finite")
    if np.any(arr < 0.0):
        raise MaterialError(f"temperature below 0 K: min={arr.min():.6g}")
    return arr


@dataclass(frozen=True)
class ConductivityLaw:
    """kappa(T) = offset + slope*T + step * tanh(rate * (T - center))  [W/(m K)]"""

    offset: float = 229.87
    slope: float = 0.0184
    step: float = 225.10
    rate: float = 0.0118
    center: float = 1816.8

    def __call__(self, T):
        T = _check_temperature(T)
        return self.offset + self.slope * T + self.step * np.tanh(self.rate * (T - self.center))

    def derivative(self, T):
        T = _check_temperature(T)
        th = np.tanh(self.rate * (T - self.center))
        return self.slope + self.step * self.rate * (1.0 - th * th)

    def torch(self, T: torch.Tensor) -> torch.Tensor:
        return self.offset + self.slope * T + self.step * torch.tanh(self.rate * (T - self.center))

    def torch_derivative(self, T: torch.Tensor) -> torch.Tensor:
        th = torch.tanh(self.rate * (T - self.center))
        return self.slope + self.step * self.rate * (1.0 - th * th)


@dataclass(frozen=True)
class CapacityLaw:
    """c_p(T) = offset + slope*T - dip*exp(-dip_rate (T-dip_center)^2)
    + peak*exp(-peak_rate (T-peak_center)^2)  [J/(kg K)]"""

    offset: float = 407.62
    slope: float = 0.142
    dip: float = 61.43
    dip_rate: float = 3.1e-4
    dip_center: float = 798.0
    peak: float = 1054.96
    peak_rate: float = 6.2e-5
    peak_center: float = 1816.8

    def __call__(self, T):
        T = _check_temperature(T)
        return (
            self.offset
            + self.slope * T
            - self.dip * np.exp(-self.dip_rate * (T - self.dip_center) ** 2)
            + self.peak * np.exp(-self.peak_rate * (T - self.peak_center) ** 2)
        )

    def derivative(self, T):
        T = _check_temperature(T)
        d1 = T - self.dip_center
        d2 = T - self.peak_center
        return (
            self.slope
            + 2.0 * self.dip * self.dip_rate * d1 * np.exp(-self.dip_rate * d1**2)
            - 2.0 * self.peak * self.peak_rate * d2 * np.exp(-self.peak_rate * d2**2)
        )

    def torch(self, T: torch.Tensor) -> torch.Tensor:
        return (
            self.offset
            + self.slope * T
            - self.dip * torch.exp(-self.dip_rate * (T - self.dip_center) ** 2)
            + self.peak * torch.exp(-self.peak_rate * (T - self.peak_center) ** 2)
        )


@dataclass(frozen=True)
class MaterialParams:
    density: float = 8351.91
    conductivity_law: ConductivityLaw = field(default_factory=ConductivityLaw)
    capacity_law: CapacityLaw = field(default_factory=CapacityLaw)

    def __post_init__(self):
        if not (np.isfinite(self.density) and self.density > 0):
            raise MaterialError(f"density must be positive, got {self.density}")
        scan = np.linspace(250.0, 5000.0, 4751)
        if np.any(self.conductivity_law(scan) <= 0):
            raise MaterialError("conductivity law is not positive on [250, 5000] K")
        if np.any(self.capacity_law(scan) <= 0):
            raise MaterialError("capacity law is not positive on [250, 5000] K")

    def conductivity(self, T):
        return self.conductivity_law(T)

    def conductivity_derivative(self, T):
        return self.conductivity_law.derivative(T)

    def heat_capacity(self, T):
        return self.capacity_law(T)

    def diffusivity(self, T):
        return self.conductivity(T) / (self.density * self.heat_capacity(T))

    def to_dict(self) -> dict:
        return {
            "density": self.density,
            "conductivity": asdict(self.conductivity_law),
            "capacity": asdict(self.capacity_law),
        }

    @classmethod
    def from_dict(cls, data: dict | None) -> "MaterialParams":
        data = dict(data or {})
        unknown = set(data) - {"density", "conductivity", "capacity"}
        if unknown:
            raise MaterialError(f"unknown material keys: {sorted(unknown)}")
        kwargs = {}
        if "density" in data:
            kwargs["density"] = float(data["density"])
        if "conductivity" in data:
            kwargs["conductivity_law"] = ConductivityLaw(**data["conductivity"])
        if "capacity" in data:
            kwargs["capacity_law"] = CapacityLaw(**data["capacity"])
        return cls(**kwargs)


HASTELLOY_X = MaterialParams()


def conductivity(T, material: MaterialParams = HASTELLOY_X):
    return material.conductivity(T)


def conductivity_derivative(T, material: MaterialParams = HASTELLOY_X):
    return material.conductivity_derivative(T)


def heat_capacity(T, material: MaterialParams = HASTELLOY_X):
    return material.heat_capacity(T)


def max_diffusivity(material: MaterialParams, t_min=T_SCAN_MIN, t_max=T_SCAN_MAX) -> float:
    """Maximum of kappa/(rho c_p) over [t_min, t_max].

    A 1 K scan brackets the maximum, then a bounded scalar search polishes it.
    """
    from scipy.optimize import minimize_scalar

    scan = np.arange(t_min, t_max + 0.5, 1.0)
    alpha = material.diffusivity(scan)
    i = int(np.argmax(alpha))
    lo, hi = scan[max(i - 1, 0)], scan[min(i + 1, scan.size - 1)]
    if hi <= lo:
        return float(alpha[i])
    res = minimize_scalar(lambda T: -material.diffusivity(T), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-9})
    return float(max(alpha[i], -res.fun))
