"""Physical constants, the discrete domain and the time-independent boundary data.

The domain is a 2D rectangle ``[0, lx] x [0, ly]`` discretized by a collocated
node grid.  Node arrays are indexed ``[i, j]`` with ``i`` along ``x`` and ``j``
along ``y`` (``numpy.meshgrid(..., indexing="ij")``), stored C-contiguous.

In 2D the curl of an in-plane field is a scalar, so the boundary datum
``omega`` is a single constant and the potential ``G`` is the out-of-plane
scalar with ``curl G = (dG/dy, -dG/dx)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Union

import numpy as np
from scipy.sparse.linalg import cg

#: Heat supply.  Always zero for the reduced system; kept for documentation.
HEAT_SUPPLY = 0.0

SOLVER_ATOL = 1e-10


class ParameterError(ValueError):
    """Raised when a model or grid parameter is outside its admissible domain."""

    def __init__(self, name: str, value, reason: str = "must be strictly positive"):
        self.name = name
        self.value = value
        super().__init__(f"{name}={value!r}: {reason}")


class SolverError(RuntimeError):
    """Raised when a linear solve does not reach its tolerance."""

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (achieved residual {residual:.3e})")


@dataclass(frozen=True)
class PhysicalParams:
    gamma: float
    kappa: float
    mu: float
    c0: float
    k0: float
    beta: float
    eta: float

    @property
    def epsilon(self) -> float:
        """Weight of the regularity functional F2 (fixed, not tunable)."""
        c0 = self.c0
        return 0.5 * min(self.gamma / 4.0, 1.0 / 3.0, (np.sqrt(1.0 + c0 * c0) - 1.0) / (2.0 * c0))


def derive_params(gamma=1.0, kappa=1.0, mu=1.0, c0=1.0, k0=1.0) -> PhysicalParams:
    """Validate the model constants and fill in ``beta`` and ``eta``."""
    values = dict(gamma=gamma, kappa=kappa, mu=mu, c0=c0, k0=k0)
    for name, value in values.items():
        if not (np.isfinite(value) and value > 0):
            raise ParameterError(name, value)
    values = {k: float(v) for k, v in values.items()}
    beta = values["kappa"] * values["gamma"] - 1.0 / values["kappa"]
    eta = 2.0 * values["k0"] / (values["k0"] + 1.0)
    return PhysicalParams(beta=beta, eta=eta, **values)


@dataclass(frozen=True)
class Grid2D:
    """Structured node grid on ``[0, lx] x [0, ly]`` with trapezoidal weights."""

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        for name in ("nx", "ny"):
            n = getattr(self, name)
            if int(n) != n or n < 4:
                raise ParameterError(name, n, "must be an integer >= 4")
        for name in ("lx", "ly"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(name, v)

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx + 1, self.ny + 1)

    @property
    def size(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.lx, self.nx + 1)

    @cached_property
    def y(self) -> np.ndarray:
        return np.linspace(0.0, self.ly, self.ny + 1)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    @cached_property
    def weights_x(self) -> np.ndarray:
        w = np.full(self.nx + 1, self.hx)
        w[[0, -1]] *= 0.5
        return w

    @cached_property
    def weights_y(self) -> np.ndarray:
        w = np.full(self.ny + 1, self.hy)
        w[[0, -1]] *= 0.5
        return w

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.outer(self.weights_x, self.weights_y)
        w.flags.writeable = False
        return w

    @cached_property
    def boundary(self) -> np.ndarray:
        """Boolean mask of boundary nodes."""
        mask = np.zeros(self.shape, dtype=bool)
        mask[[0, -1], :] = True
        mask[:, [0, -1]] = True
        mask.flags.writeable = False
        return mask

    @cached_property
    def normal_mask(self) -> np.ndarray:
        """Mask of the vector components that are normal to the boundary.

        Shape ``(2, nx+1, ny+1)``: component 0 on the ``x = const`` edges and
        component 1 on the ``y = const`` edges.
        """
        mask = np.zeros((2,) + self.shape, dtype=bool)
        mask[0, [0, -1], :] = True
        mask[1, :, [0, -1]] = True
        mask.flags.writeable = False
        return mask

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.weights * values))


ProfileLike = Union[float, np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def _node_values(grid: Grid2D, profile: ProfileLike) -> np.ndarray:
    if callable(profile):
        X, Y = grid.mesh
        return np.broadcast_to(np.asarray(profile(X, Y), dtype=float), grid.shape).copy()
    arr = np.asarray(profile, dtype=float)
    return np.broadcast_to(arr, grid.shape).copy()


def _cg_solve(matrix, rhs: np.ndarray, what: str, atol: float = SOLVER_ATOL) -> np.ndarray:
    n = rhs.size
    if not np.any(rhs):
        return np.zeros_like(rhs)
    maxiter = 10 * n
    sol, info = cg(matrix, rhs, rtol=0.0, atol=atol, maxiter=maxiter)
    residual = float(np.linalg.norm(matrix @ sol - rhs))
    if info != 0 or residual > atol:
        raise SolverError(f"{what}: conjugate gradient did not converge", residual)
    return sol


def build_harmonic_temperature(grid: Grid2D, u_b: ProfileLike) -> np.ndarray:
    """Discrete harmonic extension of the boundary temperature ``u_b``.

    ``u_b`` may be a constant, a node array or a callable ``f(X, Y)``; only its
    boundary-node values are used.
    """
    from .fields import operators

    ops = operators(grid)
    bvals = np.where(grid.boundary, _node_values(grid, u_b), 0.0)
    interior = ~grid.boundary.ravel()
    # -Lap restricted to interior nodes is SPD
    lap = ops.lap5_full
    A = (-lap)[interior][:, interior].tocsr()
    rhs = (lap @ bvals.ravel())[interior]
    u = bvals.ravel().copy()
    u[interior] = _cg_solve(A, rhs, "harmonic temperature")
    return u.reshape(grid.shape)


def _solve_stream_poisson(grid: Grid2D, rhs: np.ndarray, what: str) -> np.ndarray:
    """Solve ``M phi = rhs`` on interior nodes with ``phi = 0`` on the boundary.

    ``M`` is the Laplacian for which ``curl(dphi/dy, -dphi/dx) = -M phi`` holds
    exactly under the module's difference operators.
    """
    from .fields import operators

    ops = operators(grid)
    interior = ~grid.boundary.ravel()
    A = (-ops.stream_laplacian)[interior][:, interior].tocsr()
    phi = np.zeros(grid.size)
    phi[interior] = _cg_solve(A, -rhs.ravel()[interior], what)
    return phi.reshape(grid.shape)


def build_vector_potential_extension(grid: Grid2D, omega: float) -> np.ndarray:
    """Divergence-free extension ``A_H = (dphi/dy, -dphi/dx)`` with curl ``-omega``."""
    from .fields import rotated_gradient

    omega = float(omega)
    if omega == 0.0:
        return np.zeros((2,) + grid.shape)
    phi = _solve_stream_poisson(grid, np.full(grid.shape, omega), "vector potential extension")
    return rotated_gradient(grid, phi)


@dataclass(frozen=True)
class GResult:
    G: np.ndarray
    residual_x: float
    residual_y: float
    flagged: bool


def build_G(grid: Grid2D, u_H: np.ndarray, g: np.ndarray, flag_threshold: float = 0.1) -> GResult:
    """Potential ``G`` with ``curl G = grad u_H + g`` and ``G = 0`` on the boundary.

    The Poisson problem always has a solution; the first-order equation only
    holds when ``(grad u_H + g) . n = 0`` on the boundary.  The relative L2
    residuals of both components are returned and ``flagged`` is set (with a
    warning) when they exceed ``flag_threshold``.
    """
    from .fields import curl2d, grad, norm, rotated_gradient

    g = np.asarray(g, dtype=float)
    target = grad(grid, u_H, "neumann") + g
    source = -curl2d(grid, target)  # = dg1/dy - dg2/dx away from the boundary
    if np.any(source[~grid.boundary]):
        G = _solve_stream_poisson(grid, source, "G potential")
    else:
        G = np.zeros(grid.shape)
    rot = rotated_gradient(grid, G)
    scale = max(norm(grid, target), 1e-300)
    rx = norm(grid, rot[0] - target[0])
    ry = norm(grid, rot[1] - target[1])
    flagged = bool(max(rx, ry) > flag_threshold * scale and max(rx, ry) > 1e-12)
    if flagged:
        warnings.warn(
            f"grad u_H + g is not the curl of a potential vanishing on the boundary "
            f"(residuals {rx:.3e}, {ry:.3e})",
            RuntimeWarning,
            stacklevel=2,
        )
    return GResult(G=G, residual_x=rx, residual_y=ry, flagged=flagged)


@dataclass(frozen=True)
class BoundaryData:
    grid: Grid2D
    A_H: np.ndarray
    u_H: np.ndarray
    G: np.ndarray
    g: np.ndarray
    omega: float = 0.0
    u_b: ProfileLike = 0.0
    G_flagged: bool = False
    curl_G: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        from .fields import rotated_gradient

        for arr in (self.A_H, self.u_H, self.G, self.g):
            arr.flags.writeable = False
        curl_G = rotated_gradient(self.grid, self.G)
        curl_G.flags.writeable = False
        object.__setattr__(self, "curl_G", curl_G)

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.A_H) or np.any(self.u_H) or np.any(self.G))


def build_boundary_data(
    grid: Grid2D,
    omega: float = 0.0,
    u_b: ProfileLike = 0.0,
    g: np.ndarray | None = None,
) -> BoundaryData:
    """Assemble ``A_H``, ``u_H`` and ``G`` from the boundary/source data."""
    if g is None:
        g = np.zeros((2,) + grid.shape)
    g = np.array(g, dtype=float)
    A_H = build_vector_potential_extension(grid, omega)
    if callable(u_b) or np.ndim(u_b) > 0:
        u_H = build_harmonic_temperature(grid, u_b)
    else:
        # constants are harmonic
        u_H = np.full(grid.shape, float(u_b))
    res = build_G(grid, u_H, g)
    return BoundaryData(
        grid=grid, A_H=A_H, u_H=u_H, G=res.G, g=g, omega=float(omega), u_b=u_b, G_flagged=res.flagged
    )


def zero_boundary_data(grid: Grid2D) -> BoundaryData:
    return build_boundary_data(grid)
