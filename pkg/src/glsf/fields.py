"""Boundary-aware difference operators on the collocated node grid.

Fields are plain numpy arrays: scalar and complex fields have shape
``grid.shape``, vector fields ``(2,) + grid.shape``.  Vector fields that play
the role of ``A`` carry ``v . n = 0`` as zero normal components on boundary
nodes.

Two one-dimensional centered first differences underlie everything:

* ``Cn`` (Neumann ghost ``s[-1] = s[1]``): zero on boundary nodes,
* ``Cd`` (odd ghost ``s[-1] = -s[1]`` about a zero boundary value).

``div`` is *assembled* as the negative adjoint of the Neumann gradient in the
trapezoidal inner product, and ``curlcurl2d`` as the adjoint of ``curl2d``
composed with ``curl2d``.  Discrete integration by parts therefore holds to
rounding, which the energy identity relies on.
"""
from __future__ import annotations

from functools import cached_property, lru_cache
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .params import Grid2D

BC = Literal["neumann", "dirichlet0"]


def _centered(n: int, h: float, kind: str) -> sp.csr_matrix:
    """1D centered first difference on ``n + 1`` nodes."""
    m = n + 1
    main_off = np.full(m - 1, 1.0 / (2 * h))
    D = sp.diags([-main_off, main_off], [-1, 1], shape=(m, m), format="lil")
    if kind == "neumann":
        D[0, :] = 0.0
        D[n, :] = 0.0
    elif kind == "dirichlet0":
        D[0, :] = 0.0
        D[n, :] = 0.0
        D[0, 1] = 1.0 / h
        D[n, n - 1] = -1.0 / h
    else:
        raise ValueError(f"unknown boundary condition {kind!r}")
    return D.tocsr()


def _second(n: int, h: float, kind: str) -> sp.csr_matrix:
    """1D 5-point (3-point in 1D) second difference with ghost closure."""
    m = n + 1
    L = sp.diags(
        [np.ones(m - 1), -2.0 * np.ones(m), np.ones(m - 1)], [-1, 0, 1], shape=(m, m), format="lil"
    )
    if kind == "neumann":
        L[0, 1] = 2.0
        L[n, n - 1] = 2.0
    elif kind == "dirichlet0":
        # boundary values are treated as zero and the boundary rows vanish
        L[0, :] = 0.0
        L[n, :] = 0.0
        L[:, 0] = 0.0
        L[:, n] = 0.0
    else:
        raise ValueError(f"unknown boundary condition {kind!r}")
    return (L / (h * h)).tocsr()


class Operators:
    """Sparse operator matrices for one grid, acting on C-order flattened fields."""

    def __init__(self, grid: Grid2D):
        self.grid = grid
        Ix = sp.identity(grid.nx + 1, format="csr")
        Iy = sp.identity(grid.ny + 1, format="csr")
        kx = lambda M: sp.kron(M, Iy, format="csr")  # noqa: E731
        ky = lambda M: sp.kron(Ix, M, format="csr")  # noqa: E731

        self.gnx = kx(_centered(grid.nx, grid.hx, "neumann"))
        self.gny = ky(_centered(grid.ny, grid.hy, "neumann"))
        self.gdx = kx(_centered(grid.nx, grid.hx, "dirichlet0"))
        self.gdy = ky(_centered(grid.ny, grid.hy, "dirichlet0"))

        w = grid.weights.ravel()
        Winv = sp.diags(1.0 / w)
        W = sp.diags(w)
        # negative adjoint of the Neumann gradient
        self.divx = (-(Winv @ self.gnx.T @ W)).tocsr()
        self.divy = (-(Winv @ self.gny.T @ W)).tocsr()

        self.lap_n = (kx(_second(grid.nx, grid.hx, "neumann")) + ky(_second(grid.ny, grid.hy, "neumann"))).tocsr()
        self.lap_d = (
            kx(_second(grid.nx, grid.hx, "dirichlet0")) + ky(_second(grid.ny, grid.hy, "dirichlet0"))
        ).tocsr()
        interior = (~grid.boundary).ravel().astype(float)
        self.lap_d = (self.lap_d @ sp.diags(interior)).tocsr()
        self.lap_d = (sp.diags(interior) @ self.lap_d).tocsr()

        # curl2d(v) = d v2/dx - d v1/dy, acting on stacked (v1, v2)
        self.curl = sp.hstack([-self.gny, self.gnx], format="csr")
        W2inv = sp.diags(np.concatenate([1.0 / w, 1.0 / w]))
        self.curl_adj = (W2inv @ self.curl.T @ W).tocsr()
        self.div = sp.hstack([self.divx, self.divy], format="csr")
        self.grad_n = sp.vstack([self.gnx, self.gny], format="csr")
        self.grad_d = sp.vstack([self.gdx, self.gdy], format="csr")

    @cached_property
    def graddiv(self) -> sp.csr_matrix:
        return (self.grad_n @ self.div).tocsr()

    @cached_property
    def curlcurl(self) -> sp.csr_matrix:
        return (self.curl_adj @ self.curl).tocsr()

    @cached_property
    def lap5_full(self) -> sp.csr_matrix:
        """Plain 5-point Laplacian on all nodes (boundary rows meaningless)."""
        g = self.grid
        m, n = g.nx + 1, g.ny + 1
        Lx = sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) / g.hx**2
        Ly = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) / g.hy**2
        return (sp.kron(Lx, sp.identity(n)) + sp.kron(sp.identity(m), Ly)).tocsr()

    @cached_property
    def stream_laplacian(self) -> sp.csr_matrix:
        """``M`` with ``curl2d(rotated_gradient(phi)) = -M phi``."""
        return (self.gnx @ self.gdx + self.gny @ self.gdy).tocsr()


@lru_cache(maxsize=16)
def operators(grid: Grid2D) -> Operators:
    return Operators(grid)


def _apply(M: sp.csr_matrix, values: np.ndarray, shape) -> np.ndarray:
    return (M @ values.ravel()).reshape(shape)


def grad(grid: Grid2D, s: np.ndarray, bc: BC = "neumann") -> np.ndarray:
    ops = operators(grid)
    if bc == "neumann":
        gx, gy = ops.gnx, ops.gny
    elif bc == "dirichlet0":
        gx, gy = ops.gdx, ops.gdy
    else:
        raise ValueError(f"unknown boundary condition {bc!r}")
    flat = s.ravel()
    return np.stack([(gx @ flat).reshape(grid.shape), (gy @ flat).reshape(grid.shape)])


def div(grid: Grid2D, v: np.ndarray) -> np.ndarray:
    ops = operators(grid)
    return (ops.divx @ v[0].ravel() + ops.divy @ v[1].ravel()).reshape(grid.shape)


def curl2d(grid: Grid2D, v: np.ndarray) -> np.ndarray:
    ops = operators(grid)
    return (ops.gnx @ v[1].ravel() - ops.gny @ v[0].ravel()).reshape(grid.shape)


def curlcurl2d(grid: Grid2D, v: np.ndarray) -> np.ndarray:
    ops = operators(grid)
    return (ops.curlcurl @ v.reshape(2, -1).ravel()).reshape((2,) + grid.shape)


def graddiv(grid: Grid2D, v: np.ndarray) -> np.ndarray:
    return grad(grid, div(grid, v), "neumann")


def laplacian(grid: Grid2D, s: np.ndarray, bc: BC = "neumann") -> np.ndarray:
    ops = operators(grid)
    if bc == "neumann":
        return _apply(ops.lap_n, s, grid.shape)
    if bc == "dirichlet0":
        return _apply(ops.lap_d, s, grid.shape)
    raise ValueError(f"unknown boundary condition {bc!r}")


def rotated_gradient(grid: Grid2D, phi: np.ndarray) -> np.ndarray:
    """``(dphi/dy, -dphi/dx)`` for a potential vanishing on the boundary."""
    d = grad(grid, phi, "dirichlet0")
    return np.stack([d[1], -d[0]])


def inner(grid: Grid2D, a: np.ndarray, b: np.ndarray):
    """Trapezoidal L2 inner product, conjugate-linear in ``a``.

    Vector fields (leading axis of length 2) are summed over components.
    Returns a real number for real inputs.
    """
    prod = np.conj(a) * b
    if prod.ndim == 3:
        prod = prod.sum(axis=0)
    val = np.sum(grid.weights * prod)
    if np.iscomplexobj(val):
        return complex(val)
    return float(val)


def norm(grid: Grid2D, a: np.ndarray) -> float:
    sq = np.abs(a) ** 2
    if sq.ndim == 3:
        sq = sq.sum(axis=0)
    return float(np.sqrt(np.sum(grid.weights * sq)))


def grad_energy(grid: Grid2D, s: np.ndarray, bc: BC = "neumann") -> float:
    """Edge-based ``||grad s||^2``, the quadratic form ``-<s, laplacian(s)>``.

    This is the gradient norm whose variation is exactly the 5-point
    Laplacian; it has no odd-even null space.
    """
    return float(np.real(-inner(grid, s, laplacian(grid, s, bc))))


def zero_normal(grid: Grid2D, v: np.ndarray) -> np.ndarray:
    out = np.array(v, dtype=float, copy=True)
    out[grid.normal_mask] = 0.0
    return out
