"""Manufactured solutions, data generation and error norms.

All fields are closed-form callables ``f(x, y)`` acting elementwise on
arrays and returning arrays with the value shape appended. Gradients are
stored with the convention ``grad_u[..., i, j] = d u_i / d x_j`` and the
rotation is ``anti(grad u) = (grad u - grad u^T) / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .quadrature import quadrature_rule
from .spaces import cell_chunks, cell_geometry, integration_mesh

__all__ = [
    "MaterialParams",
    "ManufacturedCase",
    "ErrorReport",
    "case_example1",
    "case_example2",
    "case_polar2d",
    "case_polar_summary",
    "case_stokes_noflow",
    "case_transient_polar",
    "f_from_tilde",
    "saint_venant_residual",
    "compute_errors",
    "get_case",
    "CASES",
]

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]
ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])
EYE = np.eye(2)


@dataclass(frozen=True)
class MaterialParams:
    """Shear modulus (or viscosity) ``mu`` and second parameter ``lam``.

    ``lam = math.inf`` encodes the incompressible limit.
    """

    mu: float
    lam: float
    d: int = 2

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not (self.lam >= 0):
            raise ValueError("lam must be non-negative or inf")
        if self.d != 2:
            raise ValueError("only d = 2 is supported")

    @property
    def incompressible(self) -> bool:
        return math.isinf(self.lam)

    @property
    def trace_coefficient(self) -> float:
        if self.incompressible:
            return 0.0
        return 1.0 / (self.d * (2.0 * self.mu + self.d * self.lam))

    def compliance(self, sigma: np.ndarray) -> np.ndarray:
        """Apply the compliance operator to tensors (..., 2, 2)."""
        tr = np.trace(sigma, axis1=-2, axis2=-1)
        dev = sigma - tr[..., None, None] * EYE / self.d
        return dev / (2.0 * self.mu) + self.trace_coefficient * tr[..., None, None] * EYE


def _zeros(shape):
    def f(x, y):
        return np.zeros(np.shape(x) + shape)
    return f


def _anti(g):
    return 0.5 * (g - np.swapaxes(g, -1, -2))


def _sym(g):
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def _scalar_times(s, M):
    return np.asarray(s)[..., None, None] * M


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact fields and data of one benchmark configuration."""

    name: str
    params: MaterialParams
    delta: float
    exact_u: Field
    grad_u: Field
    exact_sigma: Field = field(default_factory=lambda: _zeros((2, 2)))
    div_sigma: Field = field(default_factory=lambda: _zeros((2,)))
    data_F: Field = field(default_factory=lambda: _zeros((2, 2)))
    data_f: Field = field(default_factory=lambda: _zeros((2,)))
    exact_p: Field | None = None
    grad_p: Field | None = None
    data_gdiv: Field | None = None
    nu: Field | None = None
    K_F: Field | None = None
    Ra: float | None = None
    target_trace: float = 0.0
    quad_degree: int | None = None
    stokes: bool = False
    scale: float = 1.0

    def exact_omega(self, x, y):
        return _anti(self.grad_u(x, y))

    def data_g(self, x, y):
        return self.exact_u(x, y)

    @property
    def magnitude(self) -> float:
        """Natural size of the fields, used to scale tolerances."""
        return self.scale

    def constitutive_residual(self, x, y):
        sig = self.exact_sigma(x, y)
        return self.params.compliance(sig) - _sym(self.grad_u(x, y)) - self.data_F(x, y)

    def momentum_residual(self, x, y):
        return self.div_sigma(x, y) - self.data_f(x, y)


def case_example1(delta: float, mu: float = 1e-4, lam: float = 1.0) -> ManufacturedCase:
    """Rigid body motion ``u = delta (-y, x)`` with zero stress."""
    _check_delta(delta)

    def u(x, y):
        return delta * np.stack([-np.asarray(y, float), np.asarray(x, float)], axis=-1)

    def gu(x, y):
        return np.broadcast_to(delta * np.array([[0.0, -1.0], [1.0, 0.0]]), np.shape(x) + (2, 2)).copy()

    return ManufacturedCase("rigid_body_motion", MaterialParams(mu, lam), delta, u, gu,
                            scale=delta / mu)


def case_example2(delta: float, mu: float = 1e-4) -> ManufacturedCase:
    """Transversely isotropic solid with director ``(x, x + y)`` and zero stress."""
    _check_delta(delta)
    params = MaterialParams(mu, 0.0)
    c = delta / (2.0 * mu)

    def u(x, y):
        return -c * np.stack([x**3 / 3 - y**3 / 3,
                              x**2 * y + x * y**2 + y**3 / 3 + 2 * x**3 / 3], axis=-1)

    def gu(x, y):
        g = np.empty(np.shape(x) + (2, 2))
        g[..., 0, 0] = -c * x**2
        g[..., 0, 1] = c * y**2
        g[..., 1, 0] = -c * (2 * x * y + y**2 + 2 * x**2)
        g[..., 1, 1] = -c * (x**2 + 2 * x * y + y**2)
        return g

    def nu(x, y):
        return np.stack([np.asarray(x, float), x + y], axis=-1)

    def F(x, y):
        n = nu(x, y)
        return f_from_tilde(delta * n[..., :, None] * n[..., None, :], params)

    return ManufacturedCase("transverse_isotropic", params, delta, u, gu, data_F=F, nu=nu,
                            scale=delta / mu)


def _polar_parts(delta, mu):
    k = delta / mu

    def u(x, y):
        return k * np.stack([np.cos(x) * np.cosh(y), -np.sin(x) * np.sinh(y)], axis=-1)

    def gu(x, y):
        g = np.empty(np.shape(x) + (2, 2))
        g[..., 0, 0] = -k * np.sin(x) * np.cosh(y)
        g[..., 0, 1] = k * np.cos(x) * np.sinh(y)
        g[..., 1, 0] = -k * np.cos(x) * np.sinh(y)
        g[..., 1, 1] = -k * np.sin(x) * np.cosh(y)
        return g

    def K_F(x, y):
        return delta * np.sin(x) * np.cosh(y)

    def p(x, y):
        return -delta * np.sin(x) * np.cosh(y)

    def nu(x, y):
        return np.stack([np.asarray(x, float), np.asarray(y, float)], axis=-1)

    return u, gu, K_F, p, nu


def _identity_grad(x, y):
    return np.broadcast_to(EYE, np.shape(x) + (2, 2))


def _polar_F(params, grad_u, K_F, grad_nu=_identity_grad):
    """``F = (K_F grad(nu)^T grad(nu))^D / (2 mu) - (div u / d) I``."""

    def F(x, y):
        G = grad_nu(x, y)
        M = _scalar_times(K_F(x, y), np.swapaxes(G, -1, -2) @ G)
        dev = M - _scalar_times(np.trace(M, axis1=-2, axis2=-1) / params.d, EYE)
        div = np.trace(grad_u(x, y), axis1=-2, axis2=-1)
        return dev / (2.0 * params.mu) - _scalar_times(div / params.d, EYE)

    return F


def case_polar2d(delta: float, mu: float = 1e-4) -> ManufacturedCase:
    """Incompressible polar fluid with identity director and zero stress."""
    _check_delta(delta)
    params = MaterialParams(mu, math.inf)
    u, gu, K_F, p, nu = _polar_parts(delta, mu)

    def gdiv(x, y):
        return np.trace(gu(x, y), axis1=-2, axis2=-1)

    return ManufacturedCase("polar", params, delta, u, gu, data_F=_polar_F(params, gu, K_F),
                            exact_p=p, data_gdiv=gdiv, nu=nu, K_F=K_F, target_trace=0.0,
                            quad_degree=12, scale=delta / mu)


def case_polar_summary(delta: float, mu: float = 1e-4) -> ManufacturedCase:
    """Polar fluid plus the smooth velocity ``(y cos x, sin y)``.

    The extra velocity is not divergence free, so the divergence entering
    ``F`` is that of the full velocity; the stress is then the deviatoric
    part of ``2 mu eps(u_extra)`` and does not depend on ``delta``. It is not
    divergence free, so the body force is ``f = div sigma``.
    """
    _check_delta(delta)
    params = MaterialParams(mu, math.inf)
    u0, gu0, K_F, p, nu = _polar_parts(delta, mu)

    def u(x, y):
        return u0(x, y) + np.stack([y * np.cos(x), np.sin(y)], axis=-1)

    def gu(x, y):
        g = gu0(x, y)
        g[..., 0, 0] += -y * np.sin(x)
        g[..., 0, 1] += np.cos(x)
        g[..., 1, 1] += np.cos(y)
        return g

    def sigma(x, y):
        s = np.empty(np.shape(x) + (2, 2))
        a = -y * np.sin(x) - np.cos(y)
        s[..., 0, 0] = mu * a
        s[..., 1, 1] = -mu * a
        s[..., 0, 1] = s[..., 1, 0] = mu * np.cos(x)
        return s

    def divs(x, y):
        return mu * np.stack([-y * np.cos(x), -np.sin(y)], axis=-1)

    def gdiv(x, y):
        return np.trace(gu(x, y), axis1=-2, axis2=-1)

    return ManufacturedCase("polar_extra", params, delta, u, gu, exact_sigma=sigma,
                            div_sigma=divs, data_F=_polar_F(params, gu, K_F), data_f=divs,
                            exact_p=p, data_gdiv=gdiv, nu=nu, K_F=K_F, target_trace=0.0,
                            quad_degree=12, scale=delta / mu)


def case_stokes_noflow(Ra: float) -> ManufacturedCase:
    """No-flow Stokes problem driven by a gradient force of size ``Ra``."""
    if not Ra > 0:
        raise ValueError("Ra must be positive")

    def f(x, y):
        return np.stack([np.zeros_like(y, dtype=float), Ra * (1 - y + 3 * y**2)], axis=-1)

    def p(x, y):
        return Ra * (y**3 - y**2 / 2 + y - 7.0 / 12.0) + 0.0 * x

    def gp(x, y):
        return f(x, y)

    zero_u = _zeros((2,))
    return ManufacturedCase("no_flow", MaterialParams(1.0, math.inf), Ra, zero_u,
                            _zeros((2, 2)), data_f=f, exact_p=p, grad_p=gp, Ra=Ra,
                            stokes=True, scale=Ra)


def case_transient_polar(delta: float = 1e3, mu: float = 1.0, lam: float = 0.0) -> ManufacturedCase:
    """Equilibrium of the transient polar fluid.

    The data drive the fluid towards the stress-free state with velocity
    ``u0 = delta (-cos x cosh y, sin x sinh y)``; the transient driver scales
    ``g`` and ``F`` by ``min(1, t)``. The compliance is ``sigma / (2 mu)``
    (``lam = 0``); ``lam = inf`` gives the deviatoric fluid law instead.
    """
    _check_delta(delta)
    params = MaterialParams(mu, lam)

    def u(x, y):
        return delta * np.stack([-np.cos(x) * np.cosh(y), np.sin(x) * np.sinh(y)], axis=-1)

    def gu(x, y):
        g = np.empty(np.shape(x) + (2, 2))
        g[..., 0, 0] = delta * np.sin(x) * np.cosh(y)
        g[..., 0, 1] = -delta * np.cos(x) * np.sinh(y)
        g[..., 1, 0] = delta * np.cos(x) * np.sinh(y)
        g[..., 1, 1] = delta * np.sin(x) * np.cosh(y)
        return g

    def K_F(x, y):
        return delta * np.sin(x) * np.cosh(y)

    def nu(x, y):
        return np.stack([np.asarray(x, float), np.asarray(y, float)], axis=-1)

    def gdiv(x, y):
        return np.trace(gu(x, y), axis1=-2, axis2=-1)

    return ManufacturedCase("transient_polar", params, delta, u, gu,
                            data_F=_polar_F(params, gu, K_F), data_gdiv=gdiv, nu=nu,
                            K_F=K_F, target_trace=0.0, quad_degree=12, scale=delta)


CASES = {
    "rigid_body_motion": case_example1,
    "example1": case_example1,
    "transverse_isotropic": case_example2,
    "example2": case_example2,
    "polar": case_polar2d,
    "polar2d": case_polar2d,
    "polar_extra": case_polar_summary,
    "no_flow": case_stokes_noflow,
    "stokes_noflow": case_stokes_noflow,
    "transient_polar": case_transient_polar,
}


def get_case(name: str, delta: float) -> ManufacturedCase:
    try:
        return CASES[name](delta)
    except KeyError:
        raise ValueError(f"unknown case {name!r}; choose from {sorted(CASES)}") from None


def _check_delta(delta):
    if not delta > 0:
        raise ValueError("delta must be positive")


def f_from_tilde(Ft: np.ndarray, params: MaterialParams) -> np.ndarray:
    """Anisotropy tensor from ``F~`` by applying the compliance operator."""
    if params.incompressible:
        raise ValueError("f_from_tilde needs a finite lam; use the fluid form for lam = inf")
    return params.compliance(np.asarray(Ft, dtype=float))


def saint_venant_residual(F: Field, points: np.ndarray, h: float = 1e-4) -> float:
    """Max over ``points`` of the nested finite-difference incompatibility.

    The row-wise curl ``(curl F)_i = d_x F_i2 - d_y F_i1`` is taken first and
    the curl of the resulting vector second, both by central differences.
    ``points`` may also be a :class:`~symstress.mesh.Mesh`, in which case its
    cell barycenters are used.
    """
    if hasattr(points, "cells"):
        points = points.vertices[points.cells].mean(axis=1)
    x, y = np.asarray(points, dtype=float).T

    def row_curl(x, y):
        Fx = (F(x + h, y) - F(x - h, y)) / (2 * h)
        Fy = (F(x, y + h) - F(x, y - h)) / (2 * h)
        return Fx[..., :, 1] - Fy[..., :, 0]

    cx = (row_curl(x + h, y) - row_curl(x - h, y)) / (2 * h)
    cy = (row_curl(x, y + h) - row_curl(x, y - h)) / (2 * h)
    return float(np.max(np.abs(cx[..., 1] - cy[..., 0])))


@dataclass(frozen=True)
class ErrorReport:
    level: int
    delta: float
    sigma_error: float | None = None
    displacement_error: float | None = None
    omega_err: float | None = None
    velocity_error: float | None = None
    pressure_error: float | None = None
    divergence_error: float | None = None


def _quad_degree(spaces, case, extra=4):
    deg = max(s.element.degree for s in spaces) + extra
    if case.quad_degree:
        deg = max(deg, case.quad_degree)
    return min(deg, 20)


def compute_errors(sol, case: ManufacturedCase, level: int = 0) -> ErrorReport:
    """Quadrature error norms of a solved system against ``case``."""
    system = sol.system
    spaces = system.spaces
    if case.stokes:
        return _stokes_errors(sol, case, level)
    sig_s, u_s = spaces["sigma"], spaces["u"]
    om_s = spaces.get("omega")
    used = [sig_s, u_s] + ([om_s] if om_s is not None else [])
    imesh = integration_mesh(*used)
    rule = quadrature_rule(_quad_degree(used, case))
    xi, w = rule.points, rule.weights
    sig, u = sol.sigma, sol.u
    om = sol.omega
    acc = np.zeros(4)
    per_cell = len(rule) * (4 * sig_s.ldim + 2 * u_s.ldim)
    for c0, c1 in cell_chunks(imesh, per_cell):
        g = cell_geometry(imesh, c0, c1)
        X = g.map(xi)
        wq = w[None, :] * np.abs(g.detJ)[:, None]
        x, y = X[..., 0], X[..., 1]
        es = sig_s.evaluate(sig, imesh, c0, c1, xi) - case.exact_sigma(x, y)
        ed = sig_s.evaluate(sig, imesh, c0, c1, xi, "div") - case.div_sigma(x, y)
        eu = u_s.evaluate(u, imesh, c0, c1, xi) - case.exact_u(x, y)
        acc[0] += np.sum(wq * np.sum(es**2, axis=(-1, -2)))
        acc[1] += np.sum(wq * np.sum(ed**2, axis=-1))
        acc[2] += np.sum(wq * np.sum(eu**2, axis=-1))
        if om_s is not None:
            eo = om_s.evaluate(om, imesh, c0, c1, xi) - case.exact_omega(x, y)
            acc[3] += np.sum(wq * np.sum(eo**2, axis=(-1, -2)))
    return ErrorReport(
        level=level,
        delta=case.delta,
        sigma_error=float(np.sqrt(acc[0] + acc[1])),
        displacement_error=float(np.sqrt(acc[2])),
        omega_err=float(np.sqrt(acc[3])) if om_s is not None else None,
    )


def _stokes_errors(sol, case, level):
    spaces = sol.system.spaces
    vs, ps = spaces["velocity"], spaces["pressure"]
    imesh = integration_mesh(vs, ps)
    rule = quadrature_rule(_quad_degree([vs, ps], case))
    xi, w = rule.points, rule.weights
    u, p = sol.velocity, sol.pressure
    acc = np.zeros(5)  # |e_u|^2, |grad e_u|^2, |div u_h|^2, int e_p, int e_p^2
    for c0, c1 in cell_chunks(imesh, len(rule) * 6 * vs.ldim):
        g = cell_geometry(imesh, c0, c1)
        X = g.map(xi)
        wq = w[None, :] * np.abs(g.detJ)[:, None]
        x, y = X[..., 0], X[..., 1]
        eu = vs.evaluate(u, imesh, c0, c1, xi) - case.exact_u(x, y)
        eg = vs.evaluate(u, imesh, c0, c1, xi, "grad") - case.grad_u(x, y)
        dv = vs.evaluate(u, imesh, c0, c1, xi, "div")
        ep = ps.evaluate(p, imesh, c0, c1, xi) - case.exact_p(x, y)
        acc[0] += np.sum(wq * np.sum(eu**2, axis=-1))
        acc[1] += np.sum(wq * np.sum(eg**2, axis=(-1, -2)))
        acc[2] += np.sum(wq * dv**2)
        acc[3] += np.sum(wq * ep)
        acc[4] += np.sum(wq * ep**2)
    area = float(imesh.signed_areas.sum())
    perr = max(acc[4] - acc[3] ** 2 / area, 0.0)
    return ErrorReport(
        level=level,
        delta=case.Ra,
        velocity_error=float(np.sqrt(acc[0] + acc[1])),
        pressure_error=float(np.sqrt(perr)),
        divergence_error=float(np.sqrt(acc[2])),
    )
