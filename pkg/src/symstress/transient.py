"""Two-stage Radau IIA time stepping for the transient polar fluid.

The semi-discrete problem is a linear DAE ``M y' = K y + q(t)`` with
``y = (sigma, u[, omega])``; only the displacement rows carry a mass
matrix. Stage values are the unknowns of the coupled system

    (A^-1 (x) M) (Y - 1 (x) y_n) / dt = (I (x) K) Y + Q,

which is assembled and factored once. The method is stiffly accurate, so
the new state is the last stage and the algebraic constraints hold at
every accepted step.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .assembly import SchemeConfig, assemble_mass, assemble_system
from .cases import ManufacturedCase, case_transient_polar
from .linsolve import Factorization, SingularSystemError
from .mesh import Mesh, generate_unit_square
from .spaces import cell_chunks, cell_geometry, integration_mesh

__all__ = [
    "ButcherTableau",
    "TransientState",
    "LinearDAE",
    "RadauStepper",
    "TransientProblem",
    "radau2a_tableau",
    "transient_step",
    "run_transient",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ButcherTableau:
    A: tuple
    b: tuple
    c: tuple

    @property
    def stages(self) -> int:
        return len(self.b)

    def as_arrays(self):
        return (np.array(self.A, dtype=float), np.array(self.b, dtype=float),
                np.array(self.c, dtype=float))


def radau2a_tableau() -> ButcherTableau:
    """Two-stage Radau IIA (order 3, stiffly accurate), in exact rationals."""
    F = Fraction
    return ButcherTableau(
        A=((F(5, 12), F(-1, 12)), (F(3, 4), F(1, 4))),
        b=(F(3, 4), F(1, 4)),
        c=(F(1, 3), F(1)),
    )


@dataclass
class LinearDAE:
    """``M y' = K y + ramp(t) * q`` with a possibly singular ``M``.

    ``pins`` are unknowns fixed to zero in every stage (to remove a known
    nullspace shared by ``M`` and ``K``).
    """

    M: sp.spmatrix
    K: sp.spmatrix
    q: np.ndarray
    ramp: Callable[[float], float] = lambda t: min(1.0, t)
    pins: tuple = ()


class RadauStepper:
    """Fixed-step Radau IIA integrator for a :class:`LinearDAE`."""

    def __init__(self, dae: LinearDAE, dt: float, tableau: ButcherTableau | None = None):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.dae = dae
        self.dt = dt
        self.tableau = tableau or radau2a_tableau()
        A, _, self.c = self.tableau.as_arrays()
        self.Ainv = np.linalg.inv(A)
        s = self.tableau.stages
        n = dae.K.shape[0]
        self.n = n
        M = sp.csr_matrix(dae.M)
        K = sp.csr_matrix(dae.K)
        self._MA = sp.kron(sp.csr_matrix(self.Ainv), M, format="csr") / dt
        S = (self._MA - sp.kron(sp.identity(s), K)).tocsr()
        pins = [i * n + p for i in range(s) for p in dae.pins]
        try:
            self._factor = Factorization(S, pins, "A")
        except SingularSystemError as exc:
            raise SingularSystemError("singular stage system", "A") from exc

    def stages(self, y: np.ndarray, t: float) -> np.ndarray:
        s, n, dt = self.tableau.stages, self.n, self.dt
        rhs = self._MA @ np.tile(y, s)
        for i in range(s):
            rhs[i * n:(i + 1) * n] += self.dae.ramp(t + self.c[i] * dt) * self.dae.q
        return self._factor.solve(rhs).reshape(s, n)

    def step(self, y: np.ndarray, t: float) -> np.ndarray:
        Y = self.stages(y, t)
        # stiff accuracy: the update is the last stage value
        return Y[-1].copy()


@dataclass
class TransientState:
    t: float
    sigma: np.ndarray
    u: np.ndarray
    omega: np.ndarray | None = None

    def vector(self) -> np.ndarray:
        parts = [self.sigma, self.u] + ([self.omega] if self.omega is not None else [])
        return np.concatenate(parts)


@dataclass
class TransientProblem:
    """Stage-coupled discretisation of one scheme on one mesh.

    Parameters
    ----------
    scheme : str or SchemeConfig
        ``jmk`` or a weakly symmetric scheme.
    mesh : Mesh
    dt : float
    case : ManufacturedCase, optional
        Defaults to :func:`case_transient_polar` (``mu = 1``, ``delta = 1e3``).
    ramp : callable
        Scalar time profile of ``g`` and ``F``.
    """

    scheme: SchemeConfig | str
    mesh: Mesh
    dt: float = 0.01
    case: ManufacturedCase | None = None
    ramp: Callable[[float], float] = lambda t: min(1.0, t)
    system: object = field(init=False, repr=False)
    stepper: RadauStepper = field(init=False, repr=False)

    def __post_init__(self):
        if isinstance(self.scheme, str):
            self.scheme = SchemeConfig.parse(self.scheme)
        self.case = self.case or case_transient_polar()
        if self.case.data_f is not None:
            probe = np.asarray(self.case.data_f(np.array([0.3]), np.array([0.6])))
            if np.any(probe != 0):
                raise ValueError("the transient driver assumes zero body force")
        self.system = assemble_system(self.scheme, self.mesh, self.case)
        sysm = self.system
        n0, n1, n2 = sysm.sizes
        Mu = assemble_mass(sysm.spaces["u"], sysm.spaces["u"].mesh)
        M = sp.block_diag([sp.csr_matrix((n0, n0)), Mu, sp.csr_matrix((n2, n2))], format="csr")
        # rows: -(A s + B^T u + C^T w) + G, B s, -C s  (zero rows of M are constraints)
        blocks = [[-sysm.A, -sysm.B.T], [sysm.B, None]]
        if n2:
            blocks = [[-sysm.A, -sysm.B.T, -sysm.C.T], [sysm.B, None, None], [-sysm.C, None, None]]
        K = sp.bmat(blocks, format="csr")
        q = np.zeros(n0 + n1 + n2)
        q[:n0] = sysm.G_sigma
        pins = ()
        if sysm.nullspace is not None:
            pins = (int(np.argmax(np.abs(sysm.nullspace))),)
        self.dae = LinearDAE(M, K, q, self.ramp, pins)
        self.stepper = RadauStepper(self.dae, self.dt)
        self._stress_mass = assemble_mass(sysm.spaces["sigma"])

    def initial_state(self) -> TransientState:
        n0, n1, n2 = self.system.sizes
        return TransientState(0.0, np.zeros(n0), np.zeros(n1), np.zeros(n2) if n2 else None)

    def _split(self, t, y) -> TransientState:
        n0, n1, n2 = self.system.sizes
        return TransientState(t, y[:n0], y[n0:n0 + n1], y[n0 + n1:] if n2 else None)

    def step(self, state: TransientState) -> TransientState:
        y = self.stepper.step(state.vector(), state.t)
        return self._split(state.t + self.dt, y)

    def shifted_sigma(self, state: TransientState) -> np.ndarray:
        """Stress with the trace nullspace fixed by the mean-trace target."""
        sysm = self.system
        z = sysm.nullspace
        if z is None:
            return state.sigma
        n0 = sysm.sizes[0]
        t = sysm.trace_functional[:n0]
        c = (sysm.target_trace - t @ state.sigma) / (t @ z[:n0])
        return state.sigma + c * z[:n0]

    def sigma_l2(self, state: TransientState) -> float:
        s = self.shifted_sigma(state)
        return float(np.sqrt(max(s @ (self._stress_mass @ s), 0.0)))

    def constraint_defect(self, state: TransientState) -> float:
        """``|C sigma| / |sigma|`` (zero for strongly symmetric schemes)."""
        if self.system.C is None:
            return 0.0
        nrm = np.linalg.norm(state.sigma)
        return float(np.linalg.norm(self.system.C @ state.sigma) / nrm) if nrm > 0 else 0.0

    def magnitude_table(self, state: TransientState) -> np.ndarray:
        """Rows ``(x, y, |sigma|)`` at the centroids of the integration cells."""
        sig_s = self.system.spaces["sigma"]
        imesh = integration_mesh(sig_s)
        s = self.shifted_sigma(state)
        centroid = np.array([[1.0 / 3.0, 1.0 / 3.0]])
        rows = []
        for c0, c1 in cell_chunks(imesh, 4 * sig_s.ldim):
            X = cell_geometry(imesh, c0, c1).map(centroid)[:, 0]
            v = sig_s.evaluate(s, imesh, c0, c1, centroid)[:, 0]
            rows.append(np.column_stack([X, np.linalg.norm(v, axis=(-2, -1))]))
        return np.vstack(rows)


def transient_step(state: TransientState, dt: float, scheme, case: ManufacturedCase | None = None,
                   mesh: Mesh | None = None, problem: TransientProblem | None = None) -> TransientState:
    """One Radau IIA step; builds (and factors) a problem unless one is given."""
    if problem is None:
        problem = TransientProblem(scheme, mesh or generate_unit_square(20), dt, case)
    elif not math.isclose(problem.dt, dt):
        raise ValueError("dt does not match the problem's factored stage system")
    return problem.step(state)


@dataclass
class TransientResult:
    times: np.ndarray
    sigma_l2: np.ndarray
    snapshots: dict
    max_constraint_defect: float
    final: TransientState


def run_transient(scheme="jmk", delta: float = 1e3, dt: float = 0.01, T: float = 1.5,
                  mesh: Mesh | None = None, mu: float = 1.0, lam: float = 0.0,
                  snapshot_times=(0.5, 1.0, 1.5),
                  out: str | Path | None = None, problem: TransientProblem | None = None) -> TransientResult:
    """Integrate from rest to ``T`` and record ``|sigma_h(t)|_L2`` after every step.

    With ``out`` set, writes ``<out>.csv`` (columns ``t,sigma_l2``) and one
    ``<out>_t<time>.dat`` table per snapshot time.
    """
    if problem is None:
        mesh = mesh or generate_unit_square(20)
        problem = TransientProblem(scheme, mesh, dt, case_transient_polar(delta, mu, lam))
    state = problem.initial_state()
    nsteps = int(round(T / dt))
    times, norms = [0.0], [0.0]
    snaps = {}
    wanted = {int(round(ts / dt)): ts for ts in snapshot_times}
    worst = 0.0
    for k in range(1, nsteps + 1):
        state = problem.step(state)
        state.t = k * dt  # avoid drift from repeated addition
        times.append(state.t)
        norms.append(problem.sigma_l2(state))
        worst = max(worst, problem.constraint_defect(state))
        if k in wanted:
            snaps[wanted[k]] = problem.magnitude_table(state)
    result = TransientResult(np.array(times), np.array(norms), snaps, worst, state)
    if out is not None:
        write_series(result, out)
    return result


def write_series(result: TransientResult, stem: str | Path) -> list:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    files = [stem.with_suffix(".csv")]
    with open(files[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "sigma_l2"])
        for t, s in zip(result.times, result.sigma_l2):
            w.writerow([repr(float(t)), repr(float(s))])
    for ts, table in sorted(result.snapshots.items()):
        path = stem.parent / f"{stem.name}_t{ts:g}.dat"
        with open(path, "w") as fh:
            fh.write("x y |sigma|\n")
            for row in table:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        files.append(path)
    return files
