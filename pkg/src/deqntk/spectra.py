"""Limiting spectral density of the shifted-Gaussian resolvent matrix.

The matrix of interest is (I - sqrt(s/n) W)^T (I - sqrt(s/n) W) for an
i.i.d. standard Gaussian W and s = sigma_w_sq.  Its limiting eigenvalue
distribution mu has a Stieltjes transform g solving the implicit equation

    1/g = (1 - s*g) * z - 1/(1 - s*g),   z in the upper half plane,

which after clearing denominators is a cubic in g.  This g is the
resolvent-trace convention g(z) = integral of dmu(x)/(z - x): it behaves
like 1/z at infinity and has Im g <= 0 in the upper half plane, so the
density is recovered as -Im g / pi on a shrinking line above the real
axis.  The integral of 1/lambda against mu equals 1/(1-s).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import ConvergenceError, DomainError

_IMPLICIT_RESIDUAL_TOL = 1e-10
#: Density below this value counts as "outside the support".
_DENSITY_FLOOR = 1e-9


@dataclass(frozen=True)
class SpectralDensitySamples:
    """Tabulated limiting density with its support interval."""

    sigma_w_sq: float
    support: tuple[float, float]
    grid: np.ndarray  # shape (n, 2): columns lambda, density

    def cdf(self, points):
        """Cumulative distribution evaluated at ``points`` by trapezoid sums."""
        lam = self.grid[:, 0]
        den = self.grid[:, 1]
        cum = np.concatenate(
            [[0.0], np.cumsum(0.5 * (den[1:] + den[:-1]) * np.diff(lam))]
        )
        total = cum[-1]
        return np.interp(points, lam, cum / total, left=0.0, right=1.0)


def _cubic_roots(z: complex, sigma_w_sq: float) -> np.ndarray:
    """Roots of the cleared-denominator cubic
    s^2 z g^3 - 2 s z g^2 + (z + s - 1) g - 1 = 0."""
    s = sigma_w_sq
    if s == 0.0:
        return np.array([1.0 / (z - 1.0)])
    coeffs = [s * s * z, -2.0 * s * z, z + s - 1.0, -1.0]
    return np.roots(coeffs)


#: Height at which g is close enough to 1/z to identify the branch.
_TRACK_START = 64.0


def stieltjes_root(z: complex, sigma_w_sq: float) -> complex:
    """The transform branch of the cubic at z (Im z > 0).

    The cubic has spurious companion roots (a near-conjugate pair inside
    the support, extra real roots outside it), so sign inspection alone
    cannot select the branch.  It is identified high in the upper half
    plane, where g ~ 1/z, and followed down to z by nearest-root
    continuation with adaptive steps near root collisions.
    """
    if z.imag <= 0:
        raise DomainError("z must lie in the upper half plane")
    if sigma_w_sq == 0.0:
        return 1.0 / (z - 1.0)

    height = max(_TRACK_START, 2.0 * z.imag)
    g = min(
        _cubic_roots(complex(z.real, height), sigma_w_sq),
        key=lambda r: abs(r - 1.0 / complex(z.real, height)),
    )
    b = height
    while b > z.imag:
        b_next = max(0.5 * b, z.imag)
        # near a branch point two roots nearly collide; shrink the step
        # until the nearest root is unambiguous (or the step is tiny)
        while True:
            roots = _cubic_roots(complex(z.real, b_next), sigma_w_sq)
            dist = sorted(abs(r - g) for r in roots)
            if dist[1] > 3.0 * dist[0] or (b - b_next) < 1e-3 * b:
                break
            b_next = 0.5 * (b + b_next)
        g = min(roots, key=lambda r: abs(r - g))
        b = b_next
    # In this convention Im g <= 0 strictly above the real axis; noise of
    # the order of Im z is tolerated, anything clearly positive means the
    # tracking jumped to the conjugate branch.
    if g.imag > 1e-3 * (1.0 + abs(g)) or (
        _implicit_residual(g, z, sigma_w_sq) > _IMPLICIT_RESIDUAL_TOL
    ):
        raise ConvergenceError(
            f"branch tracking failed at z={z} (candidate {g})"
        )
    return complex(g)


def _implicit_residual(g: complex, z: complex, sigma_w_sq: float) -> float:
    d = 1.0 - sigma_w_sq * g
    if g == 0 or d == 0:
        return np.inf
    return abs(1.0 / g - (d * z - 1.0 / d))


def density(lam: float, sigma_w_sq: float, b_eps: float = 1e-8) -> float:
    """Spectral density at ``lam`` via the Stieltjes inversion formula.

    -Im g is evaluated at heights b_eps and b_eps/2 and extrapolated
    linearly to the real axis, which cancels the O(b) bias of the limit.
    """
    p1 = -stieltjes_root(complex(lam, b_eps), sigma_w_sq).imag / np.pi
    p2 = -stieltjes_root(complex(lam, b_eps / 2), sigma_w_sq).imag / np.pi
    return max(2.0 * p2 - p1, 0.0)


@lru_cache(maxsize=64)
def support_endpoints(sigma_w_sq: float) -> tuple[float, float]:
    """Support interval of the limiting density, located numerically.

    Scans for positive density and bisects the two edges; for s = 0 the
    distribution is a point mass at 1.  Cached: every quadrature over the
    support re-asks for the same interval.
    """
    if not 0.0 <= sigma_w_sq < 1.0:
        raise DomainError("sigma_w_sq must lie in [0, 1)")
    if sigma_w_sq == 0.0:
        return (1.0, 1.0)

    lo, hi = 1e-4, 16.0
    grid = np.linspace(lo, hi, 801)
    dens = np.array([density(x, sigma_w_sq) for x in grid])
    inside = np.nonzero(dens > _DENSITY_FLOOR)[0]
    if inside.size == 0:
        raise ConvergenceError("no support found on the scan grid")

    def bisect(outside, within):
        for _ in range(60):
            mid = 0.5 * (outside + within)
            if density(mid, sigma_w_sq) > _DENSITY_FLOOR:
                within = mid
            else:
                outside = mid
            if abs(within - outside) < 1e-12:
                break
        return 0.5 * (outside + within)

    first, last = inside[0], inside[-1]
    left_out = grid[first - 1] if first > 0 else lo
    right_out = grid[last + 1] if last < grid.size - 1 else hi
    l = bisect(left_out, grid[first])
    u = bisect(right_out, grid[last])
    return (l, u)


def density_table(
    sigma_w_sq: float, num: int = 1200, endpoint_offset: float = 1e-6
) -> SpectralDensitySamples:
    """Tabulate the density on a grid spanning the detected support."""
    l, u = support_endpoints(sigma_w_sq)
    lam = np.linspace(l + endpoint_offset, u - endpoint_offset, num)
    den = np.array([density(x, sigma_w_sq) for x in lam])
    grid = np.column_stack([lam, den])
    return SpectralDensitySamples(sigma_w_sq=sigma_w_sq, support=(l, u), grid=grid)


def integrate_inverse_eig(sigma_w_sq: float) -> float:
    """Numerical value of the integral of 1/lambda against the limiting
    density; the closed-form target is 1/(1-sigma_w_sq)."""
    if not 0.0 <= sigma_w_sq <= 0.9:
        raise DomainError("sigma_w_sq must lie in [0, 0.9]")
    if sigma_w_sq == 0.0:
        return 1.0
    l, u = support_endpoints(sigma_w_sq)
    val, err = integrate.quad(
        lambda x: density(x, sigma_w_sq) / x,
        l + 1e-6,
        u - 1e-6,
        limit=200,
        epsabs=1e-9,
        epsrel=1e-9,
    )
    if err > 1e-4:
        raise ConvergenceError(f"quadrature error estimate {err} too large")
    return float(val)


def integrate_density(sigma_w_sq: float) -> float:
    """Total mass of the tabulated density (normalization check)."""
    l, u = support_endpoints(sigma_w_sq)
    val, _ = integrate.quad(
        lambda x: density(x, sigma_w_sq),
        l + 1e-6,
        u - 1e-6,
        limit=200,
        epsabs=1e-9,
        epsrel=1e-9,
    )
    return float(val)


def write_density_csv(samples: SpectralDensitySamples, path) -> None:
    """CSV table of (lambda, density) with a comment line carrying the
    parameters."""
    l, u = samples.support
    header = (
        f"# sigma_w_sq={samples.sigma_w_sq!r} support_low={l!r} "
        f"support_high={u!r}\nlambda,density"
    )
    np.savetxt(path, samples.grid, delimiter=",", header=header, comments="",
               fmt="%.17g")
