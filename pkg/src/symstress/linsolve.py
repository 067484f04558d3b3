"""Direct solution of the assembled saddle-point systems.

A one-dimensional nullspace (the identity stress for ``lam = inf``, the
constant pressure for Stokes) is removed by pinning one unknown to zero;
:func:`postprocess_trace` then moves the solution along the nullspace to
meet the prescribed trace (or mean) constraint.

The backend is MKL PARDISO when ``pypardiso`` can be loaded and SuperLU
from SciPy otherwise; ``SYMSTRESS_SOLVER=superlu|pardiso`` forces one.
"""

from __future__ import annotations

import glob
import logging
import os
import sys
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "Solution",
    "Factorization",
    "SingularSystemError",
    "CompatibilityError",
    "factorize",
    "solve_direct",
    "postprocess_trace",
]

log = logging.getLogger(__name__)


FALLBACK_RESIDUAL = 1e-10


class SingularSystemError(RuntimeError):
    """The matrix is singular beyond the declared nullspace."""

    def __init__(self, message: str, block: str):
        super().__init__(f"{message} (suspect block: {block})")
        self.block = block


class CompatibilityError(ValueError):
    """The right-hand side is not orthogonal to the nullspace."""


@dataclass(frozen=True)
class Solution:
    """Solution vector with per-field views."""

    x: np.ndarray
    system: object
    residual: float
    trace_integral: float | None = None
    pinned: int | None = None

    def field(self, name: str) -> np.ndarray:
        off = self.system.offsets
        if name not in off:
            return None
        return self.x[off[name]]

    @property
    def sigma(self):
        return self.field("sigma")

    @property
    def u(self):
        return self.field("u")

    @property
    def omega(self):
        return self.field("omega")

    @property
    def velocity(self):
        """Velocity on the full space, boundary values included."""
        free = self.system.free_velocity
        out = np.zeros(self.system.spaces["velocity"].ndofs)
        out[free] = self.field("velocity")
        return out

    @property
    def pressure(self):
        return self.field("pressure")


def _locate_mkl_rt() -> None:
    if os.environ.get("PYPARDISO_MKL_RT"):
        return
    for d in (os.path.join(sys.prefix, "lib"), "/usr/local/lib", "/usr/lib"):
        for name in sorted(glob.glob(os.path.join(d, "libmkl_rt.so*"))):
            os.environ["PYPARDISO_MKL_RT"] = name
            return


@lru_cache(maxsize=1)
def _pardiso_available() -> bool:
    _locate_mkl_rt()
    try:
        import pypardiso  # noqa: F401
    except (ImportError, OSError):
        return False
    return True


def _backend() -> str:
    choice = os.environ.get("SYMSTRESS_SOLVER", "auto").lower()
    if choice == "auto":
        return "pardiso" if _pardiso_available() else "superlu"
    if choice == "pardiso" and not _pardiso_available():
        raise RuntimeError("SYMSTRESS_SOLVER=pardiso but pypardiso cannot be loaded")
    return choice


def _is_symmetric(K: sp.spmatrix, rtol: float = 1e-13) -> bool:
    K = K.tocsr()
    scale = abs(K).max() if K.nnz else 0.0
    d = (K - K.T).tocsr()
    return d.nnz == 0 or abs(d).max() <= rtol * scale


def _upper_with_diagonal(K: sp.spmatrix) -> sp.csr_matrix:
    """Upper triangle in CSR with every diagonal entry stored (PARDISO needs them)."""
    U = sp.triu(K).tocoo()
    n = K.shape[0]
    i = np.arange(n)
    out = sp.csr_matrix((np.r_[U.data, np.zeros(n)], (np.r_[U.row, i], np.r_[U.col, i])), shape=K.shape)
    out.sum_duplicates()
    return out


class Factorization:
    """LU factors of a square sparse matrix with optional pinned unknowns."""

    def __init__(self, K: sp.spmatrix, pinned=(), block_hint=None, backend: str | None = None):
        self.n = K.shape[0]
        self.pinned = np.asarray(sorted(pinned), dtype=np.int64)
        keep = np.ones(self.n, dtype=bool)
        keep[self.pinned] = False
        self.keep = np.flatnonzero(keep)
        Kr = K.tocsr()[self.keep][:, self.keep]
        self.backend = backend or _backend()
        try:
            if self.backend == "pardiso":
                import pypardiso

                # symmetric equilibration: stress rows scale like 1/mu and the
                # constraint rows like h, and unscaled the Schur pivots fall
                # below PARDISO's perturbation threshold
                rowmax = abs(Kr).max(axis=1).toarray().ravel()
                self._D = 1.0 / np.sqrt(np.where(rowmax > 0, rowmax, 1.0))
                Kr = (sp.diags(self._D) @ Kr @ sp.diags(self._D)).tocsr()
                if _is_symmetric(Kr):
                    # symmetric indefinite with Bunch-Kaufman pivoting and matching;
                    # the unsymmetric default perturbs too many saddle-point pivots
                    self._solver = pypardiso.PyPardisoSolver(mtype=-2)
                    self._Kr = _upper_with_diagonal(Kr)
                    iparm = {1: 1, 2: 2, 10: 8, 11: 1, 13: 1}
                else:
                    self._solver = pypardiso.PyPardisoSolver(mtype=11)
                    self._Kr = Kr.tocsr()
                    iparm = {1: 1, 2: 2, 10: 13, 11: 1, 13: 1}
                for k, v in iparm.items():
                    self._solver.set_iparm(k, v)
                self._solver.set_iparm(34, 1)  # conditional numerical reproducibility
                self._Kr.sort_indices()
                self._solver.factorize(self._Kr)
            else:
                self._lu = spla.splu(Kr.tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularSystemError(str(exc), block_hint or "A") from exc

    def close(self) -> None:
        """Release the factors (PARDISO keeps them outside Python's heap)."""
        solver = self.__dict__.pop("_solver", None)
        if solver is not None:
            try:
                solver.free_memory(everything=True)
            except Exception:  # interpreter shutdown or a failed factorization
                pass
        self.__dict__.pop("_lu", None)

    def __del__(self):
        self.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def solve(self, b: np.ndarray) -> np.ndarray:
        br = np.asarray(b, dtype=float)[self.keep]
        if self.backend == "pardiso":
            y = self._D * self._solver.solve(self._Kr, self._D * br)
        else:
            y = self._lu.solve(br)
        if not np.all(np.isfinite(y)):
            raise SingularSystemError("factorization produced non-finite values", "A")
        x = np.zeros(self.n)
        x[self.keep] = y
        return x


def _block_hint(system) -> str:
    """Name the block most likely responsible for a singular matrix."""
    for name, M in (("B", system.B), ("C", system.C)):
        if M is None or M.shape[0] == 0:
            continue
        if np.any(np.diff(M.tocsr().indptr) == 0):
            return name
    return "A"


def _pin_index(system) -> list:
    z = system.nullspace
    if z is None:
        return []
    return [int(np.argmax(np.abs(z)))]


def factorize(system, pin: int | None = None, backend: str | None = None) -> Factorization:
    pins = _pin_index(system) if pin is None else [int(pin)]
    if system.nullspace is not None and abs(system.nullspace[pins[0]]) == 0:
        raise ValueError("pinned unknown does not meet the nullspace")
    return Factorization(system.matrix(), pins, _block_hint(system), backend)


def _backward_error(absK, r, x, b) -> float:
    """Componentwise relative backward error ``max |r| / (|K| |x| + |b|)``."""
    denom = absK @ np.abs(x) + np.abs(b)
    mask = denom > 0
    return float(np.max(np.abs(r[mask]) / denom[mask])) if mask.any() else 0.0


def _refine(K, b, x, factor, steps):
    """Iterative refinement while the residual still shrinks.

    Progress is measured both normwise and by the componentwise backward
    error. The normwise test alone is not enough: the stress rows carry
    data of size ``delta / mu`` while the divergence rows are tiny, so a
    small global residual can hide a large relative error in the
    constraint rows. The componentwise error alone can stall near one on
    rows whose exact solution and data vanish.
    """
    absK = abs(K)
    bnorm = np.linalg.norm(b)
    last = (np.inf, np.inf)
    for _ in range(steps):
        r = b - K @ x
        now = (_backward_error(absK, r, x, b), np.linalg.norm(r) / bnorm)
        if now[0] <= np.finfo(float).eps:
            break
        if now[0] > 0.5 * last[0] and now[1] > 0.5 * last[1]:
            break
        x = x + factor.solve(r)
        last = now
    return x


def solve_direct(system, factor: Factorization | None = None, pin: int | None = None,
                 postprocess: bool = True, refine_steps: int = 3) -> Solution:
    """Solve ``system`` and (by default) apply the trace post-processing."""
    K = system.matrix()
    b = system.rhs()
    z = system.nullspace
    bnorm = np.linalg.norm(b)
    if z is not None and bnorm > 0:
        proj = abs(z @ b) / (np.linalg.norm(z) * bnorm)
        if proj > 1e-8:
            raise CompatibilityError(f"right-hand side has a nullspace component ({proj:.2e})")
    own = factor is None
    if own:
        factor = factorize(system, pin)
    if bnorm == 0:
        x = np.zeros(K.shape[0])
    else:
        x = _refine(K, b, factor.solve(b), factor, refine_steps)
    res = float(np.linalg.norm(K @ x - b) / bnorm) if bnorm > 0 else 0.0
    if own and res > FALLBACK_RESIDUAL and factor.backend == "pardiso":
        # perturbed pivots that refinement could not repair
        warnings.warn(f"PARDISO residual {res:.1e}; refactoring with SuperLU", RuntimeWarning, stacklevel=2)
        factor = factorize(system, pin, backend="superlu")
        x = _refine(K, b, factor.solve(b), factor, refine_steps)
        res = float(np.linalg.norm(K @ x - b) / bnorm)
    pinned = int(factor.pinned[0]) if factor.pinned.size else None
    sol = Solution(x, system, res, pinned=pinned)
    if postprocess and z is not None:
        sol = postprocess_trace(sol)
    elif system.trace_functional is not None:
        sol = replace(sol, trace_integral=float(system.trace_functional @ x))
    return sol


def postprocess_trace(sol: Solution, system=None) -> Solution:
    """Shift along the nullspace so the trace (or mean) matches its target."""
    system = system or sol.system
    z, t = system.nullspace, system.trace_functional
    if z is None:
        warnings.warn("no nullspace on this system; trace post-processing skipped", stacklevel=2)
        return sol
    c = (system.target_trace - t @ sol.x) / (t @ z)
    x = sol.x + c * z
    return replace(sol, x=x, trace_integral=float(t @ x))
