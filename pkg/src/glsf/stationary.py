"""Steady states: residuals of the stationary system, a finder and diagnostics."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import _energy_from_pieces, _imex_from_pieces, _pieces
from .fields import grad_energy, norm, operators
from .functionals import State, lyapunov, supercurrent, z1_norm
from .params import BoundaryData, PhysicalParams

PRECONDITION_TOL = 1e-6


@dataclass(frozen=True)
class StationaryResidual:
    r_psi: float
    r_A: float
    r_u: float
    grad_u: float
    divA: float

    @property
    def max(self) -> float:
        return max(self.r_psi, self.r_A, self.r_u)


def _wnorm(grid, flat: np.ndarray) -> float:
    """L2 norm of a flattened scalar (or stacked vector) field."""
    w = grid.weights.ravel()
    v = np.abs(flat.reshape(-1, grid.size)) ** 2
    return float(np.sqrt(np.dot(w, v.sum(axis=0))))


def stationary_residual(state: State, params: PhysicalParams, bdata: BoundaryData) -> StationaryResidual:
    """Norms of the three stationary equations.

    The heat equation is evaluated with ``psi_t = 0``.
    """
    g = state.grid
    pk = _pieces(state, params, bdata)
    r_u = (params.k0 * pk.lap_u + pk.div_flux)
    r_u[g.boundary.ravel()] = 0.0
    return StationaryResidual(
        r_psi=params.gamma * norm(g, pk.dot.psit),
        r_A=norm(g, pk.dot.At),
        r_u=_wnorm(g, r_u),
        grad_u=float(np.sqrt(max(grad_energy(g, state.u, "dirichlet0"), 0.0))),
        divA=_wnorm(g, pk.d),
    )


@dataclass(frozen=True)
class ReducedResidual:
    r_psi: float
    r_A: float
    precondition_violated: bool


def reduced_residual(state: State, params: PhysicalParams, bdata: BoundaryData) -> ReducedResidual:
    """Residuals of the stationary equations after setting ``u = 0`` and ``div A = 0``.

    Those two facts are checked, not assumed; a violation beyond
    ``PRECONDITION_TOL`` sets the flag and emits a warning.
    """
    g = state.grid
    ops = operators(g)
    n = g.size
    psi = state.psi.ravel()
    A = state.A.reshape(2, n)
    a = A + bdata.A_H.reshape(2, n)
    d = ops.div @ state.A.ravel()
    u_norm = norm(g, state.u)
    violated = bool(u_norm > PRECONDITION_TOL or _wnorm(g, d) > PRECONDITION_TOL)
    if violated:
        warnings.warn(
            f"reduced residual evaluated off its domain: ||u||={u_norm:.3e}, ||div A||={_wnorm(g, d):.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
    kappa = params.kappa
    gpsi = np.stack([ops.gnx @ psi, ops.gny @ psi])
    apsi = a * psi
    advect = a[0] * gpsi[0] + a[1] * gpsi[1] + ops.divx @ apsi[0] + ops.divy @ apsi[1] - d * psi
    rho = (psi * np.conj(psi)).real
    r1 = (
        ops.lap_n @ psi / kappa**2
        - (1j / kappa) * advect
        - (a[0] ** 2 + a[1] ** 2) * psi
        - psi * (rho - 1.0 + bdata.u_H.ravel())
    )
    J = supercurrent(g, psi, kappa, gpsi)
    r2 = params.mu * (ops.curlcurl @ state.A.ravel()) + (rho * a - J).ravel() + bdata.curl_G.ravel()
    r2[g.normal_mask.ravel()] = 0.0
    return ReducedResidual(_wnorm(g, r1), _wnorm(g, r2), violated)


@dataclass
class StationaryResult:
    state: State
    residual: StationaryResidual
    converged: bool
    time: float
    steps: int
    L: float
    D: float


def find_stationary(
    z0: State,
    params: PhysicalParams,
    bdata: BoundaryData,
    tol: float = 1e-8,
    max_time: float = 200.0,
    dt: float = 1e-2,
    check_every: int = 10,
) -> StationaryResult:
    """Integrate with IMEX until the state is stationary.

    The dissipation ``D`` is quadratic in the equation residuals, so the
    stopping test is ``D < tol^2 (1 + L)``; the residual norms are then
    confirmed to be ``<= 10 tol``.  With nonzero boundary data the discrete
    fixed point keeps ``u`` and ``div A`` of order ``h^2`` and hence a small
    positive ``D``, so a residual ``<= tol`` also counts as converged.  On
    timeout the last state is returned with ``converged=False``.
    """
    state = z0
    n_max = int(np.ceil(max_time / dt))
    steps = 0
    L = D = float("nan")
    while True:
        pk = _pieces(state, params, bdata)
        if steps % check_every == 0 or steps >= n_max:
            L, D = _energy_from_pieces(state, pk, params, bdata)
            res = stationary_residual(state, params, bdata)
            if res.max <= tol or (D < tol * tol * (1.0 + abs(L)) and res.max <= 10.0 * tol):
                return StationaryResult(state, res, True, steps * dt, steps, L, D)
            if steps >= n_max:
                break
        state = _imex_from_pieces(state, pk, params, dt, 1e-10)
        steps += 1
    res = stationary_residual(state, params, bdata)
    return StationaryResult(state, res, False, steps * dt, steps, L, D)


@dataclass
class PropertiesReport:
    u_norm: float
    divA_norm: float
    z1: float
    ok: bool
    lines: list[str] = field(default_factory=list)


def stationary_properties_check(state: State, bdata: BoundaryData, tol: float = 1e-6) -> PropertiesReport:
    """Check ``u = 0`` and ``div A = 0`` on a state accepted as stationary."""
    g = state.grid
    u_n = norm(g, state.u)
    d_n = _wnorm(g, operators(g).div @ state.A.ravel())
    z1 = z1_norm(state)
    ok = u_n <= tol and d_n <= tol
    lines = [
        f"{'PASS' if u_n <= tol else 'FAIL'} u_norm {u_n:.3e} <= {tol:.1e}",
        f"{'PASS' if d_n <= tol else 'FAIL'} divA_norm {d_n:.3e} <= {tol:.1e}",
        f"z1_norm {z1:.17g}",
    ]
    return PropertiesReport(u_n, d_n, z1, ok, lines)


def local_minimum_check(
    state: State,
    params: PhysicalParams,
    bdata: BoundaryData,
    rng: np.random.Generator,
    n_directions: int = 20,
    s_values=(-1e-3, -1e-4, 1e-4, 1e-3),
    slack: float = 1e-10,
) -> tuple[bool, float]:
    """``L(z + s delta) >= L(z) - slack`` along random unit rays.

    Returns ``(ok, worst drop)``.
    """
    from .dynamics import random_smooth_state

    g = state.grid
    L0 = lyapunov(state, params, bdata)
    worst = 0.0
    for _ in range(n_directions):
        delta = random_smooth_state(g, rng, z1_target=1.0)
        delta = delta * (1.0 / z1_norm(delta))
        for s in s_values:
            worst = max(worst, L0 - lyapunov(state + delta * s, params, bdata))
    return worst <= slack, worst
