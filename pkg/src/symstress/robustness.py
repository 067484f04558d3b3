"""Invariance tests, kernel probes and discrete stability constants.

A scheme is *material robust* when its discrete stress does not react to
shifting the right-hand side by ``B(., r)`` for a multiplier field ``r``,
equivalently when every discrete tensor in the kernel of the constraint
operator is pointwise symmetric and divergence free. The helpers here
measure both sides of that equivalence, together with the discrete
inf-sup and kernel coercivity constants, by dense linear algebra on coarse
meshes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    SchemeConfig,
    assemble_a,
    assemble_hdiv_gram,
    assemble_load,
    assemble_mass,
    assemble_system,
)
from .cases import ManufacturedCase, MaterialParams
from .linsolve import factorize, solve_direct
from .mesh import Mesh
from .quadrature import quadrature_rule
from .spaces import FunctionSpace, cell_chunks, cell_geometry, integration_mesh

__all__ = [
    "RobustnessReport",
    "ShiftResult",
    "KernelProbe",
    "EmptyKernelError",
    "DenseLimitError",
    "DENSE_DOF_CAP",
    "shift_invariance_test",
    "kernel_inclusion_probe",
    "div_projection_witness",
    "phi_projection",
    "infsup_estimate",
    "infsup_from_blocks",
    "kernel_coercivity_estimate",
    "robustness_report",
]

DENSE_DOF_CAP = 20_000


class EmptyKernelError(ValueError):
    """The discrete kernel of the constraint operator is trivial."""


class DenseLimitError(ValueError):
    """The problem exceeds the dense eigensolver cap."""

    def __init__(self, ndofs: int, cap: int = DENSE_DOF_CAP):
        super().__init__(f"{ndofs} dofs exceed the dense cap of {cap}; use a coarser mesh")
        self.ndofs = ndofs
        self.cap = cap


@dataclass(frozen=True)
class ShiftResult:
    """Outcome of :func:`shift_invariance_test`.

    ``lemma_defect`` is the relative size of ``p_r - p - Phi_h r`` for the
    displacement multiplier; it is ``None`` when ``Phi_h`` is not the L2
    projection (weakly symmetric schemes with a non-discrete shift).
    """

    defect: float
    lemma_defect: float | None
    sigma_norm: float


@dataclass(frozen=True)
class KernelProbe:
    div_violation: float
    anti_violation: float
    kernel_dim: int

    @property
    def violation(self) -> float:
        return max(self.div_violation, self.anti_violation)


@dataclass(frozen=True)
class RobustnessReport:
    scheme: str
    level: int
    invariance_defect: float
    kernel_violation: float
    beta_h: float | None
    alpha_h: float | None
    c_phi: float | None


def _scheme(scheme) -> SchemeConfig:
    return SchemeConfig.parse(scheme) if isinstance(scheme, str) else scheme


def _constraint_block(system) -> sp.csr_matrix:
    """``[B; C]``: rows are multiplier dofs, columns stress dofs."""
    if system.C is not None and system.C.shape[0]:
        return sp.vstack([system.B, system.C]).tocsr()
    return system.B.tocsr()


def _multiplier_gram(spaces: dict) -> sp.csr_matrix:
    blocks = [assemble_mass(spaces["u"], spaces["u"].mesh)]
    if "omega" in spaces:
        blocks.append(assemble_mass(spaces["omega"]))
    return sp.block_diag(blocks, format="csr")


def _energy(M, x) -> float:
    return float(np.sqrt(max(x @ (M @ x), 0.0)))


def _check_cap(n: int) -> None:
    if n > DENSE_DOF_CAP:
        raise DenseLimitError(n)


# -- shift invariance ---------------------------------------------------------

def _shift_load(system, r, r_omega, degree):
    """Load ``B(tau_i, r)`` on the stress dofs and the discrete part of ``r`` if known."""
    sig = system.spaces["sigma"]
    if isinstance(r, tuple):
        ru, rw = r
        dG = system.B.T @ ru
        if system.C is not None and rw is not None:
            dG = dG + system.C.T @ rw
        return dG
    dG = assemble_load(sig, r, degree, "div")
    if r_omega is not None and "omega" in system.spaces:
        dG = dG + assemble_load(sig, r_omega, degree)
    return dG


def shift_invariance_test(scheme, case: ManufacturedCase, mesh: Mesh, r=None, r_omega=None,
                          degree: int = 12) -> ShiftResult:
    """Solve ``case`` twice, the second time with the right-hand side shifted by ``B(., r)``.

    Parameters
    ----------
    scheme : str or SchemeConfig
    case : ManufacturedCase
        Supplies the unshifted data.
    mesh : Mesh
    r : callable, tuple or None
        A displacement field ``r(x, y)``, or a pair ``(ru, romega)`` of
        coefficient vectors in the discrete multiplier spaces. Defaults to
        the case's exact displacement.
    r_omega : callable, optional
        Rotation part of the shift for weakly symmetric schemes. Defaults
        to ``anti(grad r)`` when ``r`` is the case displacement.
    degree : int
        Quadrature degree for the shift load.

    Returns
    -------
    ShiftResult
        ``defect = |sigma - sigma_r|_div / (1 + |sigma|_div)``.
    """
    scheme = _scheme(scheme)
    if r is None:
        r = case.exact_u
        if r_omega is None:
            r_omega = case.exact_omega
    system = assemble_system(scheme, mesh, case)
    factor = factorize(system)
    sol = solve_direct(system, factor)
    dG = _shift_load(system, r, r_omega, degree)
    shifted = solve_direct(system.with_rhs(G_sigma=system.G_sigma + dG), factor)

    X = assemble_hdiv_gram(system.spaces["sigma"])
    nrm = _energy(X, sol.sigma)
    defect = _energy(X, shifted.sigma - sol.sigma) / (1.0 + nrm)

    # the multiplier moves by exactly Phi_h r
    Mu = assemble_mass(system.spaces["u"], system.spaces["u"].mesh)
    du = shifted.u - sol.u
    lemma = None
    if isinstance(r, tuple):
        expect = r[0]
    elif scheme.symmetry == "strong":
        expect = phi_projection(r, scheme, mesh, space=system.spaces["u"])
    else:
        expect = None
    if expect is not None:
        lemma = _energy(Mu, du - expect) / max(_energy(Mu, expect), np.finfo(float).tiny)
    return ShiftResult(float(defect), lemma, nrm)


def phi_projection(r, scheme=None, mesh: Mesh | None = None, space: FunctionSpace | None = None,
                   degree: int = 12) -> np.ndarray:
    """L2 projection of the field ``r`` onto the displacement space.

    For schemes with ``div Sigma_h = V_h`` this is the operator that moves
    the discrete multiplier under a shift. Either ``space`` or both
    ``scheme`` and ``mesh`` must be given.
    """
    if space is None:
        space = _scheme(scheme).build_spaces(mesh)["u"]
    M = assemble_mass(space, space.mesh)
    b = assemble_load(space, r, degree, imesh=space.mesh)
    return spla.spsolve(M.tocsc(), b)


# -- kernel probes --------------------------------------------------------------

def _pointwise_max(space: FunctionSpace, coeffs: np.ndarray, imesh: Mesh, degree: int):
    """Max over quadrature points of ``|div tau|`` and ``|anti tau|``."""
    rule = quadrature_rule(degree)
    div_max = anti_max = 0.0
    for c0, c1 in cell_chunks(imesh, len(rule) * 6 * space.ldim):
        t = space.evaluate(coeffs, imesh, c0, c1, rule.points)
        d = space.evaluate(coeffs, imesh, c0, c1, rule.points, "div")
        a = 0.5 * (t - np.swapaxes(t, -1, -2))
        div_max = max(div_max, float(np.max(np.linalg.norm(d, axis=-1))))
        anti_max = max(anti_max, float(np.max(np.linalg.norm(a, axis=(-2, -1)))))
    return div_max, anti_max


def _discrete_kernel(system, extra_rows=None) -> np.ndarray:
    Bc = _constraint_block(system).toarray()
    if extra_rows is not None:
        Bc = np.vstack([Bc, extra_rows])
    _check_cap(Bc.shape[1])
    scale = np.abs(Bc).max() or 1.0
    N = sla.null_space(Bc / scale, rcond=1e-11)
    return N


def kernel_inclusion_probe(scheme, mesh: Mesh, trials: int = 8, seed: int = 0,
                           params: MaterialParams | None = None) -> KernelProbe:
    """Sample random members of the discrete kernel and measure their defects.

    Each sample is a random combination of an orthonormal kernel basis; the
    pointwise maxima of ``|div tau|`` and ``|anti tau|`` are divided by
    ``|tau|_div``.
    """
    scheme = _scheme(scheme)
    system = _blocks_only(scheme, mesh, params)
    sig = system.spaces["sigma"]
    N = _discrete_kernel(system)
    if N.shape[1] == 0:
        raise EmptyKernelError("the constraint operator has a trivial kernel on this mesh")
    X = assemble_hdiv_gram(sig)
    rng = np.random.default_rng(seed)
    imesh = integration_mesh(sig)
    deg = min(20, sig.element.degree + 4)
    dv = av = 0.0
    for _ in range(trials):
        tau = N @ rng.standard_normal(N.shape[1])
        nrm = _energy(X, tau)
        d, a = _pointwise_max(sig, tau, imesh, deg)
        dv, av = max(dv, d / nrm), max(av, a / nrm)
    return KernelProbe(dv, av, N.shape[1])


def div_projection_witness(scheme, mesh: Mesh, trials: int = 4, seed: int = 0) -> float:
    """Certificate for ``div Sigma_h = V_h``.

    Returns the larger of two relative defects: the distance of ``div tau``
    from ``V_h`` for random stresses, and the residual ``|div tau - v|`` of
    the minimum-norm preimage of random ``v`` in ``V_h``.
    """
    scheme = _scheme(scheme)
    system = _blocks_only(scheme, mesh)
    sig, us = system.spaces["sigma"], system.spaces["u"]
    _check_cap(sig.ndofs + us.ndofs)
    imesh = integration_mesh(sig, us)
    Mu = assemble_mass(us, us.mesh)
    Mlu = spla.splu(Mu.tocsc())
    rng = np.random.default_rng(seed)
    Bd = system.B.toarray()
    worst = 0.0
    for _ in range(trials):
        tau = rng.standard_normal(sig.ndofs)
        proj = Mlu.solve(system.B @ tau)
        worst = max(worst, _div_gap(sig, us, tau, proj, imesh))
        v = rng.standard_normal(us.ndofs)
        pre = np.linalg.lstsq(Bd, Mu @ v, rcond=None)[0]
        worst = max(worst, _div_gap(sig, us, pre, v, imesh))
    return worst


def _div_gap(sig, us, tau, v, imesh) -> float:
    """``|div tau - v| / |v|`` in L2."""
    rule = quadrature_rule(min(20, 2 * sig.element.degree + 2))
    num = den = 0.0
    for c0, c1 in cell_chunks(imesh, len(rule) * 4 * sig.ldim):
        g = cell_geometry(imesh, c0, c1)
        wq = rule.weights[None, :] * np.abs(g.detJ)[:, None]
        d = sig.evaluate(tau, imesh, c0, c1, rule.points, "div")
        vv = us.evaluate(v, imesh, c0, c1, rule.points)
        num += np.sum(wq * np.sum((d - vv) ** 2, axis=-1))
        den += np.sum(wq * np.sum(vv**2, axis=-1))
    return float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))


# -- stability constants ----------------------------------------------------------

def _blocks_only(scheme: SchemeConfig, mesh: Mesh, params: MaterialParams | None = None):
    """Blocks of the scheme on ``mesh`` with zero data."""
    from .cases import case_example1

    case = case_example1(1.0)
    return assemble_system(scheme, mesh, case, params or case.params)


def infsup_from_blocks(Bc, X, MQ) -> float:
    """Smallest singular value of ``Lq^-1 Bc Lx^-T`` (``X = Lx Lx^T``, ``MQ = Lq Lq^T``).

    This equals ``sqrt`` of the smallest eigenvalue of ``Bc X^-1 Bc^T q =
    beta^2 MQ q`` but avoids squaring, so a rank-deficient ``Bc`` yields
    ``beta`` at roundoff level rather than at ``sqrt(eps)``.
    """
    Bc = Bc.toarray() if sp.issparse(Bc) else np.asarray(Bc)
    X = X.toarray() if sp.issparse(X) else np.asarray(X)
    MQ = MQ.toarray() if sp.issparse(MQ) else np.asarray(MQ)
    _check_cap(Bc.shape[0] + Bc.shape[1])
    if Bc.shape[0] > Bc.shape[1]:
        return 0.0
    Lx = np.linalg.cholesky(0.5 * (X + X.T))
    Lq = np.linalg.cholesky(0.5 * (MQ + MQ.T))
    G = sla.solve_triangular(Lq, Bc, lower=True)
    G = sla.solve_triangular(Lx, G.T, lower=True).T
    return float(sla.svdvals(G)[-1])


def infsup_estimate(scheme, mesh: Mesh) -> float:
    """Discrete inf-sup constant in the ``H(div) x L2`` norms."""
    scheme = _scheme(scheme)
    system = _blocks_only(scheme, mesh)
    _check_cap(system.ndofs)
    X = assemble_hdiv_gram(system.spaces["sigma"])
    return infsup_from_blocks(_constraint_block(system), X, _multiplier_gram(system.spaces))


def kernel_coercivity_estimate(scheme, mesh: Mesh, params: MaterialParams) -> float:
    """Smallest ``a(tau, tau) / |tau|_div^2`` over the discrete kernel.

    For ``lam = inf`` the kernel is further restricted to tensors with zero
    mean trace, on which ``a`` is coercive.
    """
    scheme = _scheme(scheme)
    system = _blocks_only(scheme, mesh, params)
    sig = system.spaces["sigma"]
    extra = None
    if params.incompressible:
        extra = system.trace_functional[None, : sig.ndofs]
        extra = extra / np.abs(extra).max() * np.abs(_constraint_block(system)).max()
    N = _discrete_kernel(system, extra)
    if N.shape[1] == 0:
        raise EmptyKernelError("the constraint operator has a trivial kernel on this mesh")
    A = assemble_a(sig, params).toarray()
    X = assemble_hdiv_gram(sig).toarray()
    Ak = N.T @ A @ N
    Xk = N.T @ X @ N
    lam = sla.eigh(0.5 * (Ak + Ak.T), 0.5 * (Xk + Xk.T), eigvals_only=True,
                   subset_by_index=[0, 0])[0]
    return float(lam)


def robustness_report(scheme, case: ManufacturedCase, mesh: Mesh, level: int = 0,
                      constants: bool = True) -> RobustnessReport:
    """All robustness measurements for one scheme on one mesh."""
    scheme = _scheme(scheme)
    shift = shift_invariance_test(scheme, case, mesh)
    probe = kernel_inclusion_probe(scheme, mesh, params=case.params)
    beta = alpha = None
    if constants:
        beta = infsup_estimate(scheme, mesh)
        alpha = kernel_coercivity_estimate(scheme, mesh, case.params)
    # Phi_h is an orthogonal projection for the displacement part, so |Phi_h| = 1
    c_phi = 1.0 if scheme.symmetry == "strong" else None
    return RobustnessReport(scheme.label, level, shift.defect, probe.violation, beta, alpha, c_phi)
