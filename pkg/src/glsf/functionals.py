"""Lyapunov functional, auxiliary functionals, dissipation and phase-space norms.

The kinetic energy ``|(i/kappa) grad psi + a psi|^2`` is expanded as

    (1/kappa^2)|grad psi|^2 - 2 a.J + |a|^2 |psi|^2,

with ``|grad psi|^2`` taken as the edge-based quadratic form of the Neumann
5-point Laplacian and ``J`` built from centered differences.  With this form
the variation of ``lyapunov`` reproduces the discrete right-hand sides used by
:mod:`glsf.dynamics` term by term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import curl2d, curlcurl2d, div, grad, grad_energy, inner, laplacian, norm
from .params import BoundaryData, Grid2D, PhysicalParams

REALNESS_TOL = 1e-13


class StructureError(ValueError):
    """Raised when fields do not share a grid or violate their boundary encoding."""


@dataclass(frozen=True, eq=False)
class State:
    """Phase-space point ``z = (psi, A, u)`` on a grid.

    ``A`` carries zero normal components on boundary nodes and ``u`` vanishes
    on the boundary.  Arrays are copied on construction.
    """

    grid: Grid2D
    psi: np.ndarray
    A: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        g = self.grid
        psi = np.array(self.psi, dtype=complex)
        A = np.array(self.A, dtype=float)
        u = np.array(self.u, dtype=float)
        if psi.shape != g.shape or A.shape != (2,) + g.shape or u.shape != g.shape:
            raise StructureError(
                f"field shapes {psi.shape}, {A.shape}, {u.shape} do not match grid {g.shape}"
            )
        if not (np.all(np.isfinite(psi)) and np.all(np.isfinite(A)) and np.all(np.isfinite(u))):
            raise StructureError("state contains non-finite values")
        if np.any(A[g.normal_mask]):
            raise StructureError("A has nonzero normal components on the boundary")
        if np.any(u[g.boundary]):
            raise StructureError("u is nonzero on the boundary")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "u", u)

    @classmethod
    def from_fields(cls, grid: Grid2D, psi, A=None, u=None, enforce: bool = True) -> "State":
        """Build a state, optionally zeroing the constrained boundary values."""
        psi = np.broadcast_to(np.asarray(psi, dtype=complex), grid.shape)
        A = np.zeros((2,) + grid.shape) if A is None else np.array(A, dtype=float)
        u = np.zeros(grid.shape) if u is None else np.broadcast_to(np.asarray(u, dtype=float), grid.shape)
        if enforce:
            A = A.copy()
            A[grid.normal_mask] = 0.0
            u = np.where(grid.boundary, 0.0, u)
        return cls(grid, psi, A, u)

    @classmethod
    def zeros(cls, grid: Grid2D) -> "State":
        return cls(grid, np.zeros(grid.shape, complex), np.zeros((2,) + grid.shape), np.zeros(grid.shape))

    def _check(self, other: "State"):
        if self.grid != other.grid:
            raise StructureError("states live on different grids")

    def __add__(self, other: "State") -> "State":
        self._check(other)
        return State(self.grid, self.psi + other.psi, self.A + other.A, self.u + other.u)

    def __sub__(self, other: "State") -> "State":
        self._check(other)
        return State(self.grid, self.psi - other.psi, self.A - other.A, self.u - other.u)

    def __mul__(self, alpha: float) -> "State":
        if np.iscomplexobj(alpha) and np.imag(alpha) != 0:
            raise TypeError("only real scalars act on states")
        alpha = float(np.real(alpha))
        return State(self.grid, alpha * self.psi, alpha * self.A, alpha * self.u)

    __rmul__ = __mul__

    def __neg__(self) -> "State":
        return -1.0 * self

    def equals(self, other: "State") -> bool:
        """Bitwise equality of all fields."""
        return (
            self.grid == other.grid
            and np.array_equal(self.psi, other.psi)
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.u, other.u)
        )


def total_potential(state: State, bdata: BoundaryData) -> np.ndarray:
    """``a = A + A_H``."""
    return state.A + bdata.A_H


def supercurrent(grid: Grid2D, psi: np.ndarray, kappa: float, grad_psi: np.ndarray | None = None) -> np.ndarray:
    """``(i/2 kappa)(psi grad conj(psi) - conj(psi) grad psi)`` as a real vector field."""
    if grad_psi is None:
        grad_psi = grad(grid, psi, "neumann")
    Jc = (1j / (2.0 * kappa)) * (psi * np.conj(grad_psi) - np.conj(psi) * grad_psi)
    scale = max(1.0, float(np.max(np.abs(psi))) * float(np.max(np.abs(grad_psi), initial=0.0)) / kappa)
    imag = float(np.max(np.abs(Jc.imag), initial=0.0))
    if imag > REALNESS_TOL * scale:
        raise AssertionError(f"supercurrent has imaginary part {imag:.3e}")
    return Jc.real


def _kinetic(state: State, params: PhysicalParams, bdata: BoundaryData) -> float:
    g = state.grid
    a = total_potential(state, bdata)
    J = supercurrent(g, state.psi, params.kappa)
    grad_sq = grad_energy(g, state.psi, "neumann")
    cross = g.integrate(np.sum(a * J, axis=0))
    mass = g.integrate(np.sum(a * a, axis=0) * np.abs(state.psi) ** 2)
    return grad_sq / params.kappa**2 - 2.0 * cross + mass


def lyapunov(state: State, params: PhysicalParams, bdata: BoundaryData) -> float:
    g = state.grid
    rho = np.abs(state.psi) ** 2
    c = curl2d(g, state.A)
    d = div(g, state.A)
    density = (
        0.5 * (rho - 1.0) ** 2
        + rho * bdata.u_H
        + params.mu * c**2
        + params.eta * d**2
        + 2.0 * np.sum(bdata.curl_G * state.A, axis=0)
        + params.c0 * state.u**2
    )
    return 0.5 * (_kinetic(state, params, bdata) + g.integrate(density))


def hcurl_norm_sq(grid: Grid2D, A: np.ndarray) -> float:
    """``||div A||^2 + ||curl A||^2``."""
    return norm(grid, div(grid, A)) ** 2 + norm(grid, curl2d(grid, A)) ** 2


def f1(state: State, params: PhysicalParams, bdata: BoundaryData) -> float:
    g = state.grid
    rho = np.abs(state.psi) ** 2
    return (
        _kinetic(state, params, bdata)
        + 0.5 * g.integrate((rho - 1.0) ** 2)
        + g.integrate(rho * bdata.u_H)
        + hcurl_norm_sq(g, state.A)
        + norm(g, state.u) ** 2
    )


def f2(state: State, params: PhysicalParams, bdata: BoundaryData) -> float:
    g = state.grid
    lap_psi = laplacian(g, state.psi, "neumann")
    mixed = grad(g, div(g, state.A), "neumann") - grad(g, state.u, "neumann") - bdata.curl_G
    return (
        norm(g, lap_psi) ** 2 / params.kappa**2
        + params.mu * norm(g, curlcurl2d(g, state.A)) ** 2
        + norm(g, mixed) ** 2
        + params.k0 / (2.0 * params.epsilon * params.c0) * grad_energy(g, state.u, "dirichlet0")
    )


def q_matrix(params: PhysicalParams) -> np.ndarray:
    e = (params.eta - 2.0) / 2.0
    return np.array([[1.0, e, 1.0], [e, 1.0, -1.0], [1.0, -1.0, params.k0 + 1.0]])


def symmetric_eigenvalues_3x3(M: np.ndarray) -> np.ndarray:
    """Eigenvalues of a real symmetric 3x3 matrix in ascending order.

    Closed-form trigonometric solution of the characteristic cubic.
    """
    M = np.asarray(M, dtype=float)
    p1 = M[0, 1] ** 2 + M[0, 2] ** 2 + M[1, 2] ** 2
    q = np.trace(M) / 3.0
    if p1 == 0.0:
        return np.sort(np.diag(M))
    p2 = (M[0, 0] - q) ** 2 + (M[1, 1] - q) ** 2 + (M[2, 2] - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    B = (M - q * np.eye(3)) / p
    r = np.clip(np.linalg.det(B) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    hi = q + 2.0 * p * np.cos(phi)
    lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    mid = 3.0 * q - hi - lo
    return np.sort(np.array([_newton_polish(M, lam) for lam in (lo, mid, hi)]))


def _newton_polish(M: np.ndarray, lam: float, iters: int = 3) -> float:
    """Refine a root of ``det(M - lam I)``; the trigonometric form loses digits when ``p`` is large."""
    for _ in range(iters):
        S = M - lam * np.eye(3)
        f = np.linalg.det(S)
        # d/dlam det(S) = -trace(adj S), the sum of the principal 2x2 minors
        fp = -(
            S[1, 1] * S[2, 2] - S[1, 2] * S[2, 1]
            + S[0, 0] * S[2, 2] - S[0, 2] * S[2, 0]
            + S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
        )
        if fp == 0.0 or not np.isfinite(fp):
            break
        step = f / fp
        lam -= step
        if abs(step) <= 1e-16 * max(1.0, abs(lam)):
            break
    return float(lam)


def q_min_eigenvalue(params: PhysicalParams) -> float:
    return float(symmetric_eigenvalues_3x3(q_matrix(params))[0])


def q_value(grid: Grid2D, a: np.ndarray, b: np.ndarray, c: np.ndarray, params: PhysicalParams) -> float:
    dens = (
        np.sum(a * a, axis=0)
        + np.sum(b * b, axis=0)
        + (params.k0 + 1.0) * np.sum(c * c, axis=0)
        + (params.eta - 2.0) * np.sum(a * b, axis=0)
        + 2.0 * np.sum(a * c, axis=0)
        - 2.0 * np.sum(b * c, axis=0)
    )
    return grid.integrate(dens)


def dissipation(state: State, state_t, params: PhysicalParams) -> float:
    """Dissipation rate ``D`` of the discrete flow.

    ``state_t`` is any object with ``psit``, ``At`` and ``ut`` arrays.  The
    ``k0 |grad u|^2`` part uses the edge-based gradient norm (the quadratic
    form of the Dirichlet Laplacian) because that is the form the heat
    equation dissipates; it dominates the centered-difference value.
    """
    g = state.grid
    d = div(g, state.A)
    ortho = state_t.psit - 1j * params.kappa * state.psi * d
    grad_u = grad(g, state.u, "neumann")
    q = q_value(g, state_t.At, grad(g, d, "neumann"), grad_u, params)
    k0_correction = params.k0 * (grad_energy(g, state.u, "dirichlet0") - norm(g, grad_u) ** 2)
    return params.gamma * norm(g, ortho) ** 2 + q + k0_correction


def z1_norm(state: State) -> float:
    g = state.grid
    h1_psi = norm(g, state.psi) ** 2 + grad_energy(g, state.psi, "neumann")
    return float(np.sqrt(h1_psi + hcurl_norm_sq(g, state.A) + norm(g, state.u) ** 2))


def z2_norm(state: State) -> float:
    g = state.grid
    h2_psi = (
        norm(g, state.psi) ** 2
        + grad_energy(g, state.psi, "neumann")
        + norm(g, laplacian(g, state.psi, "neumann")) ** 2
    )
    h2_A = norm(g, grad(g, div(g, state.A), "neumann")) ** 2 + norm(g, curlcurl2d(g, state.A)) ** 2
    return float(np.sqrt(h2_psi + h2_A + grad_energy(g, state.u, "dirichlet0")))


def pointwise_identity_residual(psi_val, psit_val, divA_val, kappa: float):
    """``| |psi_t|^2 - RHS |`` for the algebraic identity behind the dissipation.

    RHS = ``|psi_t - i kappa psi d|^2 - kappa^2 |psi|^2 d^2
    - i kappa (psi_t conj(psi) - conj(psi_t) psi) d``.  Works elementwise on arrays.
    """
    psi = np.asarray(psi_val, dtype=complex)
    pt = np.asarray(psit_val, dtype=complex)
    d = np.asarray(divA_val, dtype=float)
    lhs = np.abs(pt) ** 2
    rhs = (
        np.abs(pt - 1j * kappa * psi * d) ** 2
        - kappa**2 * np.abs(psi) ** 2 * d**2
        - 1j * kappa * (pt * np.conj(psi) - np.conj(pt) * psi) * d
    )
    return np.abs(lhs - rhs)


def state_inner(a: State, b: State) -> float:
    """Real L2 pairing of two states (``Re`` on the complex component)."""
    g = a.grid
    return float(np.real(inner(g, a.psi, b.psi))) + inner(g, a.A, b.A) + inner(g, a.u, b.u)
