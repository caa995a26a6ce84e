"""Scalar kernel mathematics for input-injected infinite-width networks.

Everything here reduces to one-dimensional recursions in the pairwise inner
product x.y: closed-form Gaussian dual activations, the covariance update
map, the finite-depth tangent-kernel recursion and its depth limit obtained
by root-finding.  All functions are pure and accept either scalars or numpy
arrays of inner products; scalar in, scalar out.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError, SingularityError
from .params import LINEAR, KernelParams

#: Inputs this close to +-1 are treated as rounding noise and clamped.
BOUNDARY_SLACK = 1e-12

_MAX_NEWTON_ITER = 200
_ROOT_TOL = 1e-12
_POLE_TOL = 1e-14


@dataclass(frozen=True)
class PairKernelState:
    """Per-pair covariance/kernel scalars after a finite-depth recursion."""

    rho: float  # correlation of the current pre-activation covariance
    sigma_dot: float  # current derivative-covariance value
    theta: float  # accumulated tangent-kernel value
    depth: int


@dataclass(frozen=True)
class FixedPointResult:
    """Depth-limit kernel quantities for one input pair."""

    rho_star: float  # fixed point of the covariance map
    rho_dot_star: float  # derivative dual activation at the fixed point
    sigma_dot_star: float  # sigma_w_sq * rho_dot_star
    theta: float  # limiting kernel value, readout layer included
    iterations: int
    residual: float


def _as_correlation(rho):
    """Validate and clamp correlations to [-1, 1]."""
    arr = np.asarray(rho, dtype=float)
    if np.any(np.abs(arr) > 1.0 + BOUNDARY_SLACK):
        bad = np.max(np.abs(arr))
        raise DomainError(f"correlation magnitude {bad} exceeds 1")
    return np.clip(arr, -1.0, 1.0)


def _maybe_scalar(value, template):
    return float(value) if np.isscalar(template) else value


def dual_activation(rho):
    """E[sigma(u) sigma(v)] for the normalized ReLU at correlation ``rho``.

    (u, v) are jointly standard normal with correlation rho; the closed form
    is (sqrt(1 - rho^2) + (pi - arccos(rho)) * rho) / pi.
    """
    r = _as_correlation(rho)
    val = (np.sqrt(1.0 - r * r) + (np.pi - np.arccos(r)) * r) / np.pi
    return _maybe_scalar(val, rho)


def dual_activation_dot(rho):
    """E[sigma'(u) sigma'(v)] for the normalized ReLU: (pi - arccos(rho)) / pi."""
    r = _as_correlation(rho)
    val = (np.pi - np.arccos(r)) / np.pi
    return _maybe_scalar(val, rho)


def _k1(rho, activation):
    """Dual activation at unit marginals, dispatched on the activation tag."""
    if activation == LINEAR:
        return np.asarray(rho, dtype=float)
    r = np.clip(np.asarray(rho, dtype=float), -1.0, 1.0)
    return (np.sqrt(1.0 - r * r) + (np.pi - np.arccos(r)) * r) / np.pi


def _k0(rho, activation):
    """Derivative dual activation at unit marginals."""
    r = np.asarray(rho, dtype=float)
    if activation == LINEAR:
        return np.ones_like(r)
    r = np.clip(r, -1.0, 1.0)
    return (np.pi - np.arccos(r)) / np.pi


def r_sigma(rho, dot, params: KernelParams):
    """One application of the covariance map:
    sigma_w_sq * dual(rho) + sigma_u_sq * (x.y) + sigma_b_sq."""
    r = _as_correlation(rho)
    val = (
        params.sigma_w_sq * _k1(r, params.activation)
        + params.sigma_u_sq * np.asarray(dot, dtype=float)
        + params.sigma_b_sq
    )
    return _maybe_scalar(val, rho)


def _diag_fixed_point(params: KernelParams) -> float:
    """Limit of the self-covariance for unit-norm inputs.

    The diagonal recursion a <- sigma_w_sq * a + sigma_u_sq + sigma_b_sq is
    affine, so its limit is closed-form.  Equals 1 under the unit-sum
    initialization.
    """
    return (params.sigma_u_sq + params.sigma_b_sq) / (1.0 - params.sigma_w_sq)


def _interior_recursion(dot, d, params: KernelParams):
    """Run d layers of the covariance/kernel recursion.

    Returns (diag, cov, sigma_dot, theta) where ``diag`` is the common
    self-covariance of both inputs (scalar), and the rest are arrays shaped
    like ``dot``.
    """
    sw2, su2, sb2 = params.sigma_w_sq, params.sigma_u_sq, params.sigma_b_sq
    act = params.activation
    dot = np.asarray(dot, dtype=float)

    diag = 1.0
    cov = dot.copy()
    sigma_dot = np.zeros_like(dot)
    theta = dot.copy()
    for _ in range(d):
        rho = np.clip(cov / diag, -1.0, 1.0)
        sigma_dot = sw2 * _k0(rho, act)
        cov = sw2 * diag * _k1(rho, act) + su2 * dot + sb2
        diag = sw2 * diag + su2 + sb2
        theta = sigma_dot * theta + cov
    return diag, cov, sigma_dot, theta


def finite_depth_theta(dot, d, params: KernelParams, include_output_layer=True):
    """Vectorized finite-depth tangent-kernel values for inner products ``dot``."""
    _as_correlation(dot)
    if d < 0:
        raise ValueError("depth must be nonnegative")
    diag, cov, _, theta = _interior_recursion(dot, d, params)
    if not include_output_layer:
        return _maybe_scalar(theta, dot)
    rho = np.clip(cov / diag, -1.0, 1.0)
    out = params.sigma_v_sq * (
        _k0(rho, params.activation) * theta
        + diag * _k1(rho, params.activation)
    )
    return _maybe_scalar(out, dot)


def finite_depth_ntk(dot, d: int, params: KernelParams) -> PairKernelState:
    """Finite-depth kernel state for one pair of unit-norm inputs.

    Runs ``d`` interior layers and applies the readout-layer dual
    activations scaled by sigma_v_sq.
    """
    _as_correlation(dot)
    if d < 0:
        raise ValueError("depth must be nonnegative")
    diag, cov, sigma_dot, theta = _interior_recursion(float(dot), d, params)
    rho = float(np.clip(cov / diag, -1.0, 1.0))
    out = params.sigma_v_sq * (
        float(_k0(rho, params.activation)) * theta
        + diag * float(_k1(rho, params.activation))
    )
    return PairKernelState(
        rho=rho, sigma_dot=float(sigma_dot), theta=float(out), depth=d
    )


def _solve_cov_fixed_point(dot, params: KernelParams):
    """Root of the covariance map, vectorized over ``dot``.

    Safeguarded Newton on F(s) = sigma_w_sq * a * k1(s/a) + sigma_u_sq * dot
    + sigma_b_sq - s, where a is the diagonal fixed point.  F' <=
    sigma_w_sq - 1 < 0, so the root is unique and Newton steps are damped
    only by the [-a, a] clamp.
    """
    params.require_contraction()
    sw2, su2, sb2 = params.sigma_w_sq, params.sigma_u_sq, params.sigma_b_sq
    act = params.activation
    dot = np.asarray(dot, dtype=float)
    a = _diag_fixed_point(params)

    inject = su2 * dot + sb2
    s = np.clip(inject / (1.0 - sw2), -a, a)
    iterations = 0
    for iterations in range(1, _MAX_NEWTON_ITER + 1):
        rho = np.clip(s / a, -1.0, 1.0)
        f = sw2 * a * _k1(rho, act) + inject - s
        if np.all(np.abs(f) <= _ROOT_TOL):
            break
        fprime = sw2 * _k0(rho, act) - 1.0
        s = np.clip(s - f / fprime, -a, a)
    residual = np.abs(f)
    if np.any(residual > _ROOT_TOL):
        raise ConvergenceError(
            f"covariance fixed point not found in {_MAX_NEWTON_ITER} "
            f"iterations (max residual {np.max(residual):.3e})"
        )
    return s, residual, iterations


def solve_rho_star(dot, params: KernelParams):
    """Fixed point rho* of the covariance map for unit-norm inputs."""
    _as_correlation(dot)
    s, _, _ = _solve_cov_fixed_point(dot, params)
    return _maybe_scalar(s, dot)


def theta_deq_grid(dot, params: KernelParams):
    """Vectorized depth-limit kernel over an array of inner products."""
    _as_correlation(dot)
    s, _, _ = _solve_cov_fixed_point(dot, params)
    a = _diag_fixed_point(params)
    rho = np.clip(s / a, -1.0, 1.0)
    rho_dot = _k0(rho, params.activation)
    sigma_dot = params.sigma_w_sq * rho_dot
    pole = np.abs(1.0 - sigma_dot)
    if np.any(pole < _POLE_TOL):
        raise SingularityError("derivative covariance reached 1: frozen kernel")
    theta = params.sigma_v_sq * (
        rho_dot * s / (1.0 - sigma_dot) + a * _k1(rho, params.activation)
    )
    return _maybe_scalar(theta, dot)


def theta_deq(dot: float, params: KernelParams) -> FixedPointResult:
    """Depth-limit kernel for one pair, with the fixed-point diagnostics.

    The interior kernel limit is s* / (1 - sigma_dot*); the readout layer
    contributes sigma_v_sq times the dual activations at the fixed point.
    """
    _as_correlation(dot)
    s, residual, iterations = _solve_cov_fixed_point(float(dot), params)
    a = _diag_fixed_point(params)
    rho = float(np.clip(s / a, -1.0, 1.0))
    rho_dot = float(_k0(rho, params.activation))
    sigma_dot = params.sigma_w_sq * rho_dot
    if abs(1.0 - sigma_dot) < _POLE_TOL:
        raise SingularityError("derivative covariance reached 1: frozen kernel")
    theta = params.sigma_v_sq * (
        rho_dot * float(s) / (1.0 - sigma_dot)
        + a * float(_k1(rho, params.activation))
    )
    return FixedPointResult(
        rho_star=float(s),
        rho_dot_star=rho_dot,
        sigma_dot_star=sigma_dot,
        theta=float(theta),
        iterations=iterations,
        residual=float(residual),
    )


def theta_linear_deq(dot, params: KernelParams):
    """Closed-form depth-limit kernel of the linear (identity activation) DEQ:
    sigma_v_sq * sigma_u_sq * x.y * (1/(1-sigma_w_sq)^2 + 1/(1-sigma_w_sq)).
    """
    params.require_contraction()
    c = params.sigma_v_sq * params.sigma_u_sq
    w = 1.0 - params.sigma_w_sq
    val = c * np.asarray(dot, dtype=float) * (1.0 / (w * w) + 1.0 / w)
    return _maybe_scalar(val, dot)
