"""Decomposition of trajectories into a decaying linear part and a smoothing part.

``z = z_l + z_k`` where ``z_l`` solves the linear system

    gamma psi_t = (1/kappa^2) Lap psi - psi
    A_t = grad div A - mu curl curl A - grad u
    c0 u_t = k0 Lap u

from the same initial data and ``z_k`` is obtained by subtraction.  The
remaining terms of the full equations are the forcings returned by
:func:`forcings`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import StateDot, _pieces, implicit_operators, rhs, step_imex
from .fields import operators
from .functionals import State, state_inner, z1_norm, z2_norm
from .params import BoundaryData, PhysicalParams


class ConsistencyError(RuntimeError):
    """Raised when ``z_l + z_k`` fails to reproduce ``z``."""


def linear_rhs(state: State, params: PhysicalParams) -> StateDot:
    g = state.grid
    ops = operators(g)
    psi = state.psi.ravel()
    u = state.u.ravel()
    psit = (ops.lap_n @ psi / params.kappa**2 - psi) / params.gamma
    At = (
        ops.graddiv @ state.A.ravel()
        - params.mu * (ops.curlcurl @ state.A.ravel())
        - np.concatenate([ops.gnx @ u, ops.gny @ u])
    )
    At[g.normal_mask.ravel()] = 0.0
    ut = params.k0 / params.c0 * (ops.lap_d @ u)
    return StateDot(psit.reshape(g.shape), At.reshape((2,) + g.shape), ut.reshape(g.shape))


def step_linear(state: State, params: PhysicalParams, dt: float, tol: float = 1e-10) -> State:
    """One backward-Euler step of the linear flow (``u``, then ``A``, then ``psi``)."""
    g = state.grid
    ops = operators(g)
    imp = implicit_operators(g, params, float(dt), "linear")
    u1 = np.zeros(g.size)
    u1[imp.u_free] = imp.u.solve(state.u.ravel()[imp.u_free], tol)
    bA = state.A.ravel() - dt * np.concatenate([ops.gnx @ u1, ops.gny @ u1])
    A1 = np.zeros(2 * g.size)
    A1[imp.A_free] = imp.A.solve(bA[imp.A_free], tol)
    psi0 = state.psi.ravel()
    x = imp.psi.solve(np.column_stack([psi0.real, psi0.imag]), tol)
    psi1 = x[:, 0] + 1j * x[:, 1]
    return State(g, psi1.reshape(g.shape), A1.reshape((2,) + g.shape), u1.reshape(g.shape))


@dataclass
class LinearTrajectory:
    times: np.ndarray
    states: list[State]
    z1: np.ndarray


def simulate_linear(z0: State, params: PhysicalParams, T: float, dt: float = 1e-3, record_every: int = 1) -> LinearTrajectory:
    n = int(round(T / dt))
    state = z0
    times, states, norms = [0.0], [z0], [z1_norm(z0)]
    for k in range(1, n + 1):
        state = step_linear(state, params, dt)
        if k % record_every == 0 or k == n:
            times.append(k * dt)
            states.append(state)
            norms.append(z1_norm(state))
    return LinearTrajectory(np.array(times), states, np.array(norms))


def forcings(state: State, state_t: StateDot, params: PhysicalParams, bdata: BoundaryData):
    """``(Upsilon, Theta, Gamma)`` so that ``rhs = linear_rhs + (Upsilon/gamma, Theta, Gamma/c0)``."""
    g = state.grid
    pk = _pieces(state, params, bdata, psit=state_t.psit)
    ops = operators(g)
    n = g.size
    psi = state.psi.ravel()
    a = pk.a
    gpsi = np.stack([ops.gnx @ psi, ops.gny @ psi])
    apsi = a * psi
    advect = a[0] * gpsi[0] + a[1] * gpsi[1] + ops.divx @ apsi[0] + ops.divy @ apsi[1] - pk.d * psi
    upsilon = (
        -(1j / params.kappa) * advect
        - (a[0] ** 2 + a[1] ** 2) * psi
        + 1j * params.beta * pk.d * psi
        - psi * (pk.rho - 2.0 + state.u.ravel() + bdata.u_H.ravel())
    )
    theta = pk.flux.ravel() - bdata.curl_G.ravel()
    theta[g.normal_mask.ravel()] = 0.0
    gam = (np.conj(psi) * state_t.psit.ravel()).real + pk.div_flux
    gam[g.boundary.ravel()] = 0.0
    return upsilon.reshape(g.shape), theta.reshape((2,) + g.shape), gam.reshape(g.shape)


@dataclass
class DecayFit:
    nu: float
    m1: float
    r_squared: float
    already_zero: bool = False


def fit_decay_rate(times, norms, drop_fraction: float = 0.1, floor: float = 1e-12) -> DecayFit:
    """Least-squares fit of ``log norm = log m1 - nu t``.

    The first ``drop_fraction`` of the time span is discarded and the window
    ends where the norm drops below ``floor``.
    """
    times = np.asarray(times, float)
    norms = np.asarray(norms, float)
    if np.all(norms <= floor):
        return DecayFit(0.0, 0.0, 1.0, already_zero=True)
    t0 = times[0] + drop_fraction * (times[-1] - times[0])
    keep = times >= t0
    below = np.flatnonzero(norms <= floor)
    if below.size:
        keep &= np.arange(times.size) < below[0]
    t, y = times[keep], np.log(norms[keep])
    if t.size < 3:
        raise ValueError("decay-fit window holds fewer than three points")
    slope, intercept = np.polyfit(t, y, 1)
    fit = slope * t + intercept
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(-slope), float(np.exp(intercept)), r2)


@dataclass
class SplitTrajectory:
    times: np.ndarray
    z: list[State]
    z_l: list[State]
    z_k: list[State]
    fit: DecayFit | None
    zk_z2: np.ndarray
    reconstruction_error: float
    forced_residual: np.ndarray  # norm of the forced-system defect at each recorded time
    residual_times: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _forced_residual(zk0: State, zk1: State, z0: State, params, bdata, dt, norm: str = "z1") -> float:
    """Defect of the forced system for ``z_k`` over one step, in the Z1 or L2 norm."""
    dot = rhs(z0, params, bdata)
    ups, th, gam = forcings(z0, dot, params, bdata)
    lin = linear_rhs(zk0, params)
    g = zk0.grid
    r_psi = (zk1.psi - zk0.psi) / dt - (lin.psit + ups / params.gamma)
    r_A = (zk1.A - zk0.A) / dt - (lin.At + th)
    r_u = (zk1.u - zk0.u) / dt - (lin.ut + gam / params.c0)
    defect = State(g, r_psi, r_A, r_u)
    if norm == "l2":
        return float(np.sqrt(state_inner(defect, defect)))
    return z1_norm(defect)


def split(
    z0: State,
    params: PhysicalParams,
    bdata: BoundaryData,
    T: float,
    dt: float = 1e-3,
    record_every: int = 10,
    recon_tol: float = 1e-10,
    residual_norm: str = "z1",
) -> SplitTrajectory:
    """Run the full and linear flows side by side; ``z_k = z - z_l``.

    At every recorded step the one-step defect of ``z_k`` in the forced
    system is measured in ``residual_norm`` (``"z1"`` or ``"l2"``).
    """
    if residual_norm not in ("z1", "l2"):
        raise ValueError(f"unknown residual norm {residual_norm!r}")
    n = int(round(T / dt))
    z, zl = z0, z0
    times, zs, zls, zks = [0.0], [z0], [z0], [State.zeros(z0.grid)]
    res_t, res = [], []
    worst = 0.0
    for k in range(1, n + 1):
        z_new = step_imex(z, params, bdata, dt)
        zl_new = step_linear(zl, params, dt)
        if k % record_every == 0 or k == n:
            zk_prev = z - zl
            zk_new = z_new - zl_new
            res_t.append((k - 1) * dt)
            res.append(_forced_residual(zk_prev, zk_new, z, params, bdata, dt, residual_norm))
            back = zl_new + zk_new
            err = max(
                float(np.max(np.abs(back.psi - z_new.psi))),
                float(np.max(np.abs(back.A - z_new.A))),
                float(np.max(np.abs(back.u - z_new.u))),
            )
            worst = max(worst, err)
            if err > recon_tol:
                raise ConsistencyError(f"reconstruction error {err:.3e} at t={k * dt}")
            times.append(k * dt)
            zs.append(z_new)
            zls.append(zl_new)
            zks.append(zk_new)
        z, zl = z_new, zl_new
    times = np.array(times)
    zl_norms = np.array([z1_norm(s) for s in zls])
    try:
        fit = fit_decay_rate(times, zl_norms)
    except ValueError:
        fit = None
    return SplitTrajectory(
        times=times,
        z=zs,
        z_l=zls,
        z_k=zks,
        fit=fit,
        zk_z2=np.array([z2_norm(s) for s in zks]),
        reconstruction_error=worst,
        forced_residual=np.array(res),
        residual_times=np.array(res_t),
    )


@dataclass
class ContractionSweep:
    t_stars: np.ndarray
    lambdas: np.ndarray
    first_below_half: float | None


def contraction_sweep(
    deltas: list[State], params: PhysicalParams, t_stars, dt: float = 1e-3
) -> ContractionSweep:
    """``lambda_hat(t*) = max_delta z1(linear flow(delta, t*)) / z1(delta)``.

    The linear flow is linear, so differences of trajectories are flows of
    differences and only the differences ``delta`` are integrated.
    """
    t_stars = np.asarray(sorted(t_stars), float)
    steps = [int(round(t / dt)) for t in t_stars]
    lam = np.zeros(t_stars.size)
    for delta in deltas:
        d0 = z1_norm(delta)
        state, k = delta, 0
        for i, target in enumerate(steps):
            while k < target:
                state = step_linear(state, params, dt)
                k += 1
            lam[i] = max(lam[i], z1_norm(state) / d0)
    below = np.flatnonzero(lam < 0.5)
    return ContractionSweep(t_stars, lam, float(t_stars[below[0]]) if below.size else None)


def contraction_estimate(deltas: list[State], params: PhysicalParams, t_star: float, dt: float = 1e-3) -> float:
    return float(contraction_sweep(deltas, params, [t_star], dt).lambdas[0])


def smoothing_estimate(
    pairs: list[tuple[State, State]],
    params: PhysicalParams,
    bdata: BoundaryData,
    t_star: float,
    dt: float = 1e-3,
) -> float:
    """``max z2(K(z1) - K(z2)) / z1(z1 - z2)`` with ``K(z) = S(t*) z - linear flow(z, t*)``."""
    n = int(round(t_star / dt))
    worst = 0.0
    for a, b in pairs:
        d0 = z1_norm(a - b)
        if d0 == 0:
            continue
        za, zb, la, lb = a, b, a, b
        for _ in range(n):
            za = step_imex(za, params, bdata, dt)
            zb = step_imex(zb, params, bdata, dt)
            la = step_linear(la, params, dt)
            lb = step_linear(lb, params, dt)
        worst = max(worst, z2_norm((za - la) - (zb - lb)) / d0)
    return worst


def tail_variation(times, values, t_from: float, floor: float = 1e-12) -> float:
    """``(max - min)`` over ``t >= t_from`` relative to the supremum of the whole series.

    Series whose supremum is below ``floor`` are measured against ``floor``,
    so roundoff around zero does not register as variation.
    """
    times = np.asarray(times)
    values = np.asarray(values)
    tail = values[times >= t_from]
    scale = max(float(np.max(np.abs(values))), floor)
    return float((tail.max() - tail.min()) / scale)


@dataclass
class AbsorbingReport:
    z2_plateaus: np.ndarray
    f2_plateaus: np.ndarray
    z2_variation: np.ndarray
    f2_variation: np.ndarray
    R2_hat: float
    F2_hat: float

    def plateaued(self, limit: float = 0.05) -> bool:
        return bool(np.all(self.z2_variation <= limit) and np.all(self.f2_variation <= limit))


def absorbing_from_series(series: list[tuple[np.ndarray, np.ndarray, np.ndarray]], T: float) -> AbsorbingReport:
    """Plateau statistics from ``(t, z2, F2)`` columns restricted to ``t <= T``."""
    z2p, f2p, z2v, f2v = [], [], [], []
    for t, z2, F2 in series:
        t, z2, F2 = np.asarray(t), np.asarray(z2), np.asarray(F2)
        m = t <= T + 1e-12
        t, z2, F2 = t[m], z2[m], F2[m]
        tail = t >= T / 2
        z2p.append(float(z2[tail].max()))
        f2p.append(float(F2[tail].max()))
        z2v.append(tail_variation(t, z2, T / 2))
        f2v.append(tail_variation(t, F2, T / 2))
    return AbsorbingReport(
        np.array(z2p), np.array(f2p), np.array(z2v), np.array(f2v), float(max(z2p)), float(max(f2p))
    )


def absorbing_diagnostics(
    corpus: list[State],
    params: PhysicalParams,
    bdata: BoundaryData,
    T: float,
    dt: float = 1e-3,
    record_every: int = 10,
) -> AbsorbingReport:
    from .dynamics import IntegratorConfig, simulate

    series = []
    for z0 in corpus:
        r = simulate(z0, params, bdata, IntegratorConfig(dt), T, record_every=record_every, monitor=False)
        series.append((r.column("t"), r.column("z2"), r.column("F2")))
    return absorbing_from_series(series, T)
