"""Right-hand sides of the reduced evolution system and time integrators.

The primary integrator is a first-order IMEX scheme.  The constant
coefficient operators ``(1/(kappa^2 gamma)) Lap`` on ``psi``,
``grad div - mu curl curl`` on ``A`` and ``(k0/c0) Lap`` on ``u`` are taken
implicitly, everything else explicitly from the current state.  The ``psi_t``
entering the heat equation is the increment of the step just taken.

The implicit matrices are factorized once per ``(grid, params, dt, kind)``
with a sparse LU; every solve is checked against its residual.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Literal

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fields import grad_energy, norm, operators
from .functionals import (
    State,
    StructureError,
    dissipation,
    f2,
    lyapunov,
    supercurrent,
    z1_norm,
    z2_norm,
)
from .params import BoundaryData, Grid2D, PhysicalParams, SolverError

#: Constant of the per-step monotonicity tolerance ``C dt^2 (1 + D)``.
C_SCHEME = 10.0

DT_MAX = 1e-3


@dataclass(frozen=True, eq=False)
class StateDot:
    psit: np.ndarray
    At: np.ndarray
    ut: np.ndarray

    def as_state(self, grid: Grid2D) -> State:
        return State(grid, self.psit, self.At, self.ut)


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    scheme: Literal["imex", "explicit-euler"] = "imex"
    tol: float = 1e-10
    max_steps: int = 10_000_000

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt={self.dt!r}: must be strictly positive")
        if not self.tol > 0:
            raise ValueError(f"tol={self.tol!r}: must be strictly positive")
        if self.scheme not in ("imex", "explicit-euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class TrajectoryRecord:
    t: float
    L: float
    D: float
    z1: float
    z2: float
    grad_u: float
    divA: float
    psit: float
    F2: float


RECORD_FIELDS = ("t", "L", "D", "z1", "z2", "grad_u", "divA", "psit", "F2")


def _check_grid(state: State, bdata: BoundaryData):
    if state.grid != bdata.grid:
        raise StructureError(f"state grid {state.grid} differs from boundary-data grid {bdata.grid}")


@dataclass
class _Pieces:
    """Intermediate fields of one right-hand side evaluation."""

    dot: StateDot
    lap_psi: np.ndarray
    gd: np.ndarray  # grad(div A), flattened over both components
    curlcurl: np.ndarray
    flux: np.ndarray  # -|psi|^2 a + J
    lap_u: np.ndarray
    div_flux: np.ndarray
    d: np.ndarray
    gu: np.ndarray
    rho: np.ndarray
    a: np.ndarray
    J: np.ndarray


def _pieces(state: State, params: PhysicalParams, bdata: BoundaryData, psit=None) -> _Pieces:
    _check_grid(state, bdata)
    g = state.grid
    ops = operators(g)
    n = g.size
    psi = state.psi.ravel()
    A = state.A.reshape(2, n)
    a = A + bdata.A_H.reshape(2, n)
    u = state.u.ravel()
    kappa, gamma = params.kappa, params.gamma

    gpsi = np.stack([ops.gnx @ psi, ops.gny @ psi])
    d = ops.divx @ A[0] + ops.divy @ A[1]
    lap_psi = ops.lap_n @ psi
    rho = (psi * np.conj(psi)).real
    a_sq = a[0] ** 2 + a[1] ** 2
    apsi = a * psi
    div_apsi = ops.divx @ apsi[0] + ops.divy @ apsi[1]
    # skew form of 2 a.grad psi; equals it when div a = div A
    advect = a[0] * gpsi[0] + a[1] * gpsi[1] + div_apsi - d * psi
    if psit is None:
        psit = (
            lap_psi / kappa**2
            - (1j / kappa) * advect
            - a_sq * psi
            + 1j * params.beta * d * psi
            - psi * (rho - 1.0 + u + bdata.u_H.ravel())
        ) / gamma
    else:
        psit = np.asarray(psit).ravel()

    J = supercurrent(g, psi, kappa, gpsi)
    flux = -rho * a + J
    gd = np.concatenate([ops.gnx @ d, ops.gny @ d])
    curlcurl = ops.curlcurl @ A.ravel()
    gu = np.concatenate([ops.gnx @ u, ops.gny @ u])
    At = gd - params.mu * curlcurl + flux.ravel() - gu - bdata.curl_G.ravel()
    At[g.normal_mask.ravel()] = 0.0

    lap_u = ops.lap_d @ u
    div_flux = ops.divx @ flux[0] + ops.divy @ flux[1]
    ut = ((np.conj(psi) * psit).real + params.k0 * lap_u + div_flux) / params.c0
    ut[g.boundary.ravel()] = 0.0

    dot = StateDot(psit.reshape(g.shape), At.reshape((2,) + g.shape), ut.reshape(g.shape))
    return _Pieces(dot, lap_psi, gd, curlcurl, flux, lap_u, div_flux, d, gu, rho, a, J)


def _energy_from_pieces(state: State, pk: _Pieces, params: PhysicalParams, bdata: BoundaryData):
    """``(L, D)`` reusing the fields of one right-hand side evaluation.

    Same values as :func:`lyapunov` and :func:`dissipation`, cheaper.
    """
    g = state.grid
    ops = operators(g)
    w = g.weights.ravel()
    n = g.size
    psi = state.psi.ravel()
    A = state.A.ravel()
    u = state.u.ravel()
    a, rho, d = pk.a, pk.rho, pk.d
    c = ops.curl @ A
    grad_sq = -float(np.dot(w, (np.conj(psi) * pk.lap_psi).real))
    dens = (
        -2.0 * (a[0] * pk.J[0] + a[1] * pk.J[1])
        + (a[0] ** 2 + a[1] ** 2) * rho
        + 0.5 * (rho - 1.0) ** 2
        + rho * bdata.u_H.ravel()
        + params.mu * c * c
        + params.eta * d * d
        + 2.0 * (bdata.curl_G.ravel() * A).reshape(2, n).sum(axis=0)
        + params.c0 * u * u
    )
    L = 0.5 * (grad_sq / params.kappa**2 + float(np.dot(w, dens)))

    dot = pk.dot
    ortho = dot.psit.ravel() - 1j * params.kappa * psi * d
    At = dot.At.reshape(2, n)
    gd = pk.gd.reshape(2, n)
    gu = pk.gu.reshape(2, n)
    qd = (
        (At**2).sum(0)
        + (gd**2).sum(0)
        + (params.k0 + 1.0) * (gu**2).sum(0)
        + (params.eta - 2.0) * (At * gd).sum(0)
        + 2.0 * (At * gu).sum(0)
        - 2.0 * (gd * gu).sum(0)
    )
    gu_sq = float(np.dot(w, (gu**2).sum(0)))
    edge_sq = -float(np.dot(w, u * pk.lap_u))
    D = (
        params.gamma * float(np.dot(w, (ortho * np.conj(ortho)).real))
        + float(np.dot(w, qd))
        + params.k0 * (edge_sq - gu_sq)
    )
    return L, D


def rhs(state: State, params: PhysicalParams, bdata: BoundaryData) -> StateDot:
    """Instantaneous time derivative of the reduced system."""
    return _pieces(state, params, bdata).dot


class _Factor:
    """Sparse LU of one implicit matrix with a residual-checked solve."""

    def __init__(self, matrix: sp.csc_matrix, what: str):
        self.matrix = matrix.tocsr()
        self.lu = splu(matrix.tocsc(), permc_spec="MMD_AT_PLUS_A")
        self.what = what

    def solve(self, b: np.ndarray, tol: float) -> np.ndarray:
        x = self.lu.solve(b)
        r = float(np.max(np.abs(self.matrix @ x - b), initial=0.0))
        scale = max(1.0, float(np.max(np.abs(b), initial=0.0)))
        if not (r <= tol * scale):
            raise SolverError(f"{self.what}: implicit solve failed", r)
        return x


@dataclass
class ImplicitOperators:
    """Factorized ``I - dt L`` for the three fields on their free unknowns."""

    psi: _Factor
    A: _Factor
    u: _Factor
    A_free: np.ndarray
    u_free: np.ndarray


@lru_cache(maxsize=32)
def implicit_operators(grid: Grid2D, params: PhysicalParams, dt: float, kind: str = "full") -> ImplicitOperators:
    """``kind="full"`` for the nonlinear scheme, ``"linear"`` for the decaying split flow."""
    ops = operators(grid)
    n = grid.size
    I = sp.identity(n, format="csr")
    if kind == "full":
        Lpsi = ops.lap_n / (params.kappa**2 * params.gamma)
    elif kind == "linear":
        Lpsi = (ops.lap_n / params.kappa**2 - I) / params.gamma
    else:
        raise ValueError(f"unknown kind {kind!r}")
    A_free = np.flatnonzero(~grid.normal_mask.ravel())
    LA = (ops.grad_n @ ops.div - params.mu * ops.curlcurl).tocsr()[A_free][:, A_free]
    u_free = np.flatnonzero(~grid.boundary.ravel())
    Lu = (params.k0 / params.c0) * ops.lap_d.tocsr()[u_free][:, u_free]
    return ImplicitOperators(
        psi=_Factor((I - dt * Lpsi).tocsc(), "psi implicit solve"),
        A=_Factor((sp.identity(A_free.size) - dt * LA).tocsc(), "A implicit solve"),
        u=_Factor((sp.identity(u_free.size) - dt * Lu).tocsc(), "u implicit solve"),
        A_free=A_free,
        u_free=u_free,
    )


def _solve_psi(fac: _Factor, b: np.ndarray, tol: float) -> np.ndarray:
    x = fac.solve(np.column_stack([b.real, b.imag]), tol)
    return x[:, 0] + 1j * x[:, 1]


def _imex_from_pieces(
    state: State, pieces: _Pieces, params: PhysicalParams, dt: float, tol: float
) -> State:
    g = state.grid
    imp = implicit_operators(g, params, float(dt), "full")
    dot = pieces.dot
    psi0 = state.psi.ravel()
    b = psi0 + dt * (dot.psit.ravel() - pieces.lap_psi / (params.kappa**2 * params.gamma))
    psi1 = _solve_psi(imp.psi, b, tol)

    A0 = state.A.ravel()
    lin_A = pieces.gd - params.mu * pieces.curlcurl
    bA = (A0 + dt * (dot.At.ravel() - lin_A))[imp.A_free]
    A1 = np.zeros(2 * g.size)
    A1[imp.A_free] = imp.A.solve(bA, tol)

    # heat equation sees the psi increment of this step
    psit = (psi1 - psi0) / dt
    u0 = state.u.ravel()
    expl_u = ((np.conj(psi0) * psit).real + pieces.div_flux) / params.c0
    bu = (u0 + dt * expl_u)[imp.u_free]
    u1 = np.zeros(g.size)
    u1[imp.u_free] = imp.u.solve(bu, tol)
    return State(g, psi1.reshape(g.shape), A1.reshape((2,) + g.shape), u1.reshape(g.shape))


def step_imex(
    state: State, params: PhysicalParams, bdata: BoundaryData, dt: float, tol: float = 1e-10
) -> State:
    """One first-order IMEX step."""
    if not dt > 0:
        raise ValueError(f"dt={dt!r}: must be strictly positive")
    return _imex_from_pieces(state, _pieces(state, params, bdata), params, dt, tol)


def step_explicit_euler(state: State, params: PhysicalParams, bdata: BoundaryData, dt: float) -> State:
    """``z + dt rhs(z)``.  Stable only for ``dt`` of order ``h^2``."""
    dot = rhs(state, params, bdata)
    return State(state.grid, state.psi + dt * dot.psit, state.A + dt * dot.At, state.u + dt * dot.ut)


def explicit_euler_substepped(
    state: State, params: PhysicalParams, bdata: BoundaryData, T: float, dt: float
) -> State:
    n = max(1, int(round(T / dt)))
    h = T / n
    for _ in range(n):
        state = step_explicit_euler(state, params, bdata, h)
    return state


def monotonicity_tolerance(L: float, D: float, dt: float) -> float:
    return 1e-12 * max(1.0, abs(L)) + C_SCHEME * dt * dt * (1.0 + D)


@dataclass
class SimulationResult:
    records: list[TrajectoryRecord]
    final: State
    steps: int
    violations: int = 0
    max_violation: float = 0.0
    dissipation_integral: float = 0.0  # int (||psi_t||^2 + ||A_t||^2) dt
    regularity_integral: float = 0.0  # int (||grad div A||^2 + ||grad u||^2) dt
    psit_sup: float = 0.0
    aborted: bool = False
    message: str = ""
    snapshots: dict[int, State] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def make_record(t: float, state: State, dot: StateDot, params: PhysicalParams, bdata: BoundaryData, L=None, D=None):
    g = state.grid
    if L is None:
        L = lyapunov(state, params, bdata)
    if D is None:
        D = dissipation(state, dot, params)
    ops = operators(g)
    d = (ops.div @ state.A.ravel()).reshape(g.shape)
    return TrajectoryRecord(
        t=float(t),
        L=float(L),
        D=float(D),
        z1=z1_norm(state),
        z2=z2_norm(state),
        grad_u=math.sqrt(max(grad_energy(g, state.u, "dirichlet0"), 0.0)),
        divA=norm(g, d),
        psit=norm(g, dot.psit),
        F2=f2(state, params, bdata),
    )


def simulate(
    z0: State,
    params: PhysicalParams,
    bdata: BoundaryData,
    integrator: IntegratorConfig,
    T: float,
    record_every: int = 1,
    monitor: bool = True,
    snapshot_every: int = 0,
    callback: Callable[[int, float, State], None] | None = None,
) -> SimulationResult:
    """Integrate from ``z0`` to time ``T``.

    With ``monitor`` the Lyapunov functional is evaluated every step and
    increases beyond :func:`monotonicity_tolerance` are counted.  A
    non-finite state aborts the run; the result then carries the last good
    state and ``aborted=True``.
    """
    _check_grid(z0, bdata)
    dt = integrator.dt
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a multiple of dt={dt}")
    if n_steps > integrator.max_steps:
        raise ValueError(f"{n_steps} steps exceed max_steps={integrator.max_steps}")
    record_every = max(1, int(record_every))
    g = z0.grid
    state = z0
    res = SimulationResult(records=[], final=z0, steps=0)
    if snapshot_every:
        res.snapshots[0] = z0
    L_prev = None
    for k in range(n_steps + 1):
        t = k * dt
        pieces = _pieces(state, params, bdata)
        dot = pieces.dot
        L, D = _energy_from_pieces(state, pieces, params, bdata)
        if L_prev is not None and monitor:
            excess = L - L_prev[0]
            if excess > monotonicity_tolerance(L_prev[0], L_prev[1], dt):
                res.violations += 1
                res.max_violation = max(res.max_violation, excess)
        if k % record_every == 0 or k == n_steps:
            res.records.append(make_record(t, state, dot, params, bdata, L, D))
        res.psit_sup = max(res.psit_sup, norm(g, dot.psit))
        if k == n_steps:
            break
        res.dissipation_integral += dt * (norm(g, dot.psit) ** 2 + norm(g, dot.At) ** 2)
        res.regularity_integral += dt * (
            float(np.sum(g.weights.ravel() * (pieces.gd[: g.size] ** 2 + pieces.gd[g.size :] ** 2)))
            + grad_energy(g, state.u, "dirichlet0")
        )
        L_prev = (L, D)
        if integrator.scheme == "imex":
            try:
                new = _imex_from_pieces(state, pieces, params, dt, integrator.tol)
            except StructureError as exc:
                res.aborted, res.message = True, f"step {k + 1}: {exc}"
                break
        else:
            try:
                new = State(g, state.psi + dt * dot.psit, state.A + dt * dot.At, state.u + dt * dot.ut)
            except StructureError as exc:
                res.aborted, res.message = True, f"step {k + 1}: {exc}"
                break
        state = new
        res.steps = k + 1
        if snapshot_every and (k + 1) % snapshot_every == 0:
            res.snapshots[k + 1] = state
        if callback is not None:
            callback(k + 1, (k + 1) * dt, state)
    res.final = state
    if res.aborted:
        res.message += f"; last good step {res.steps} at t={res.steps * dt:.6g}"
    return res


def random_smooth_state(
    grid: Grid2D,
    rng: np.random.Generator,
    z1_target: float = 2.0,
    max_mode: int = 3,
    psi_perturbation: float = 0.3,
) -> State:
    """Smooth random state satisfying the boundary encodings.

    ``psi`` is a random constant plus a relative cosine-mode perturbation of
    size ``psi_perturbation`` (keeping it away from zero), ``A`` is built from
    modes that respect ``A . n = 0`` and ``u`` from sine modes.  The result is
    rescaled so that its Z1 norm equals ``z1_target``.
    """
    X, Y = grid.mesh
    sx, sy = X / grid.lx, Y / grid.ly
    modes = [(m, n) for m in range(max_mode + 1) for n in range(max_mode + 1)]

    def coeffs(k, complex_=False):
        c = rng.normal(size=k) / np.arange(1, k + 1)
        if complex_:
            c = c + 1j * rng.normal(size=k) / np.arange(1, k + 1)
        return c

    cp = coeffs(len(modes) - 1, True)
    pert = sum(c * np.cos(m * np.pi * sx) * np.cos(n * np.pi * sy) for c, (m, n) in zip(cp, modes[1:]))
    pert = psi_perturbation * pert / max(float(np.max(np.abs(pert))), 1e-300)
    base = np.exp(1j * rng.uniform(0, 2 * np.pi))
    psi = base * (1.0 + pert)

    pos = [(m, n) for m in range(1, max_mode + 1) for n in range(max_mode + 1)]
    c1, c2 = coeffs(len(pos)), coeffs(len(pos))
    A1 = sum(c * np.sin(m * np.pi * sx) * np.cos(n * np.pi * sy) for c, (m, n) in zip(c1, pos))
    A2 = sum(c * np.cos(n * np.pi * sx) * np.sin(m * np.pi * sy) for c, (m, n) in zip(c2, pos))
    both = [(m, n) for m in range(1, max_mode + 1) for n in range(1, max_mode + 1)]
    cu = coeffs(len(both))
    # the extra sin factor gives du/dn = 0 on the boundary, matching d(div A)/dn = 0
    bump = np.sin(np.pi * sx) * np.sin(np.pi * sy)
    u = bump * sum(c * np.sin(m * np.pi * sx) * np.sin(n * np.pi * sy) for c, (m, n) in zip(cu, both))
    z = State.from_fields(grid, psi, np.stack([A1, A2]) * 0.3, 0.3 * u)
    return z * (z1_target / z1_norm(z))


@dataclass
class DependenceResult:
    times: np.ndarray
    rho: np.ndarray
    log_fit: tuple[float, float]  # (log A, B) of the affine upper envelope
    max_slope: float


def continuous_dependence_experiment(
    z01: State,
    z02: State,
    params: PhysicalParams,
    bdata: BoundaryData,
    T: float,
    dt: float = 1e-3,
    record_every: int = 10,
) -> DependenceResult:
    """``rho(t) = z1(z_1(t) - z_2(t))^2 / z1(z_01 - z_02)^2`` along paired runs."""
    d0 = z1_norm(z01 - z02)
    n_steps = int(round(T / dt))
    times, rho = [0.0], [1.0 if d0 > 0 else 0.0]
    a, b = z01, z02
    for k in range(1, n_steps + 1):
        a = step_imex(a, params, bdata, dt)
        b = step_imex(b, params, bdata, dt)
        if k % record_every == 0 or k == n_steps:
            times.append(k * dt)
            rho.append(z1_norm(a - b) ** 2 / d0**2 if d0 > 0 else 0.0)
    times, rho = np.array(times), np.array(rho)
    if d0 == 0:
        return DependenceResult(times, rho, (-np.inf, 0.0), 0.0)
    logr = np.log(rho)
    slopes = np.diff(logr) / np.diff(times)
    max_slope = float(np.max(slopes))
    # smallest affine majorant with slope from the least-squares fit
    B = float(np.polyfit(times, logr, 1)[0])
    logA = float(np.max(logr - B * times))
    return DependenceResult(times, rho, (logA, B), max_slope)


@dataclass
class HolderResult:
    alpha: float
    C: float
    deltas: np.ndarray
    diffs: np.ndarray
    fixed_point: bool


def holder_time_check(
    z0: State,
    params: PhysicalParams,
    bdata: BoundaryData,
    t_star: float,
    levels: tuple[int, ...] = tuple(range(4, 11)),
    substeps: int = 4,
    exact_tol: float = 1e-14,
) -> HolderResult:
    """Fit ``alpha`` in ``z1(S(t*+delta) z - S(t*) z) ~ C delta^alpha``.

    ``delta`` ranges over ``2^-k t*`` for ``k`` in ``levels``; the step is
    ``2^-(max(levels)+log2(substeps)) t*`` so every offset is a whole number
    of steps on one trajectory.
    """
    kmax = max(levels)
    n_ref = substeps * 2**kmax
    dt = t_star / n_ref
    state = z0
    for _ in range(n_ref):
        state = step_imex(state, params, bdata, dt)
    base = state
    offsets = sorted({n_ref >> k for k in levels})
    diffs = {}
    step = 0
    for off in offsets:
        while step < off:
            state = step_imex(state, params, bdata, dt)
            step += 1
        diffs[off] = z1_norm(state - base)
    deltas = np.array([off * dt for off in offsets])
    vals = np.array([diffs[off] for off in offsets])
    scale = max(1.0, z1_norm(base))
    if np.all(vals <= exact_tol * scale):
        return HolderResult(float("nan"), 0.0, deltas, vals, True)
    alpha, logC = np.polyfit(np.log(deltas), np.log(vals), 1)
    return HolderResult(float(alpha), float(np.exp(logC)), deltas, vals, False)


def scalar_ode_reference(f0: float, gamma: float, t: float) -> float:
    """High-accuracy solution of ``gamma f' = -f (f^2 - 1)`` (independent integration)."""
    from scipy.integrate import solve_ivp

    sol = solve_ivp(lambda _t, f: -f * (f * f - 1.0) / gamma, (0.0, t), [f0], rtol=1e-12, atol=1e-14, method="DOP853")
    return float(sol.y[0, -1])


__all__ = [
    "C_SCHEME",
    "DependenceResult",
    "HolderResult",
    "ImplicitOperators",
    "IntegratorConfig",
    "RECORD_FIELDS",
    "SimulationResult",
    "StateDot",
    "TrajectoryRecord",
    "continuous_dependence_experiment",
    "explicit_euler_substepped",
    "holder_time_check",
    "implicit_operators",
    "make_record",
    "monotonicity_tolerance",
    "random_smooth_state",
    "rhs",
    "scalar_ode_reference",
    "simulate",
    "step_explicit_euler",
    "step_imex",
]
