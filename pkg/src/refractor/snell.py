"""Vector refraction across a surface separating two homogeneous media.

All directions are unit vectors. kappa = n2/n1 < 1 is the refractive index
ratio (light passes into the optically denser-to-rarer sense where total
internal reflection is possible).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class RefractionResult:
    m: np.ndarray       # refracted unit direction
    lam: float          # positive multiplier in x - kappa*m = lam*nu


def critical_cos(kappa: float) -> float:
    """Cosine of the critical incidence angle: sqrt(1 - kappa^2)."""
    if not (0.0 < kappa < 1.0):
        raise ValueError("kappa must lie in (0, 1)")
    return float(np.sqrt(1.0 - kappa * kappa))


def refract(x, nu, kappa: float) -> Optional[RefractionResult]:
    """Refract incident direction x at a surface with unit normal nu.

    Returns None when the incidence is beyond the critical angle
    (x . nu < sqrt(1 - kappa^2)); the boundary case refracts. Otherwise the
    result satisfies x - kappa*m = lam*nu with lam > 0 and |m| = 1.
    """
    x = np.asarray(x, dtype=float)
    nu = np.asarray(nu, dtype=float)
    ci = float(x @ nu)
    crit = critical_cos(kappa)
    if ci < crit:
        return None
    # radicand is nonnegative in exact arithmetic whenever ci >= crit;
    # clamp roundoff at grazing incidence
    rad = 1.0 - (1.0 - ci * ci) / (kappa * kappa)
    if rad < 0.0:
        rad = 0.0
    lam = ci - kappa * float(np.sqrt(rad))
    m = (x - lam * nu) / kappa
    return RefractionResult(m=m, lam=lam)
