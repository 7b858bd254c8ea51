"""Batch command line: ``glsf <experiment> --config <path> [--out <dir>] [--seed <n>]``.

Configurations are flat ``key = value`` files with ``#`` comments.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

EXPERIMENTS = ("simulate", "stationary", "split", "qcheck", "depcheck", "oracle")
SCHEMES = ("imex", "explicit-euler")
U_B_PROFILES = ("const", "x")
G_PROFILES = ("zero", "vortex")


class ConfigError(ValueError):
    """Collects every problem found in a configuration text."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))


@dataclass(frozen=True)
class RunConfig:
    nx: int
    ny: int
    dt: float
    T: float
    lx: float = 1.0
    ly: float = 1.0
    gamma: float = 1.0
    kappa: float = 1.0
    mu: float = 1.0
    c0: float = 1.0
    k0: float = 1.0
    omega: float = 0.0
    u_b: float = 0.0
    u_b_profile: str = "const"
    g_profile: str = "zero"
    g_amp: float = 0.0
    scheme: str = "imex"
    record_every: int = 10
    snapshot_every: int = 0
    z1_target: float = 2.0
    tol: float = 1e-8
    max_time: float = 200.0
    perturbation: float = 1e-6
    euler_dt: float = 1e-6
    k0_sweep: str = "0.01,0.1,1,10,100"
    experiment: str = "simulate"
    seed: int = 0
    out: str = "."


REQUIRED = ("nx", "ny", "dt", "T")
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _positive(v):
    return v > 0


_CHECKS = {
    "nx": (lambda v: v >= 4, "must be an integer >= 4"),
    "ny": (lambda v: v >= 4, "must be an integer >= 4"),
    "dt": (_positive, "must be > 0"),
    "T": (_positive, "must be > 0"),
    "lx": (_positive, "must be > 0"),
    "ly": (_positive, "must be > 0"),
    "gamma": (_positive, "must be > 0"),
    "kappa": (_positive, "must be > 0"),
    "mu": (_positive, "must be > 0"),
    "c0": (_positive, "must be > 0"),
    "k0": (_positive, "must be > 0"),
    "u_b_profile": (lambda v: v in U_B_PROFILES, f"must be one of {', '.join(U_B_PROFILES)}"),
    "g_profile": (lambda v: v in G_PROFILES, f"must be one of {', '.join(G_PROFILES)}"),
    "scheme": (lambda v: v in SCHEMES, f"must be one of {', '.join(SCHEMES)}"),
    "record_every": (lambda v: v >= 1, "must be >= 1"),
    "snapshot_every": (lambda v: v >= 0, "must be >= 0"),
    "z1_target": (_positive, "must be > 0"),
    "tol": (_positive, "must be > 0"),
    "max_time": (_positive, "must be > 0"),
    "perturbation": (_positive, "must be > 0"),
    "euler_dt": (_positive, "must be > 0"),
    "experiment": (lambda v: v in EXPERIMENTS, f"must be one of {', '.join(EXPERIMENTS)}"),
    "seed": (lambda v: v >= 0, "must be >= 0"),
    "out": (lambda v: len(v) > 0, "must be non-empty"),
}


def _parse_sweep(text: str) -> list[float]:
    vals = [float(x) for x in text.split(",") if x.strip()]
    if not vals or not all(math.isfinite(v) and v > 0 for v in vals):
        raise ValueError("must be a comma-separated list of positive numbers")
    return vals


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    if kind == "int":
        return int(raw)
    if kind == "float":
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse and validate; raises :class:`ConfigError` listing all problems."""
    errors: list[str] = []
    values: dict[str, object] = {}
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            errors.append(f"line {lineno}: expected 'key = value', got {body!r}")
            continue
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in _TYPES:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in seen:
            errors.append(f"line {lineno}: duplicate key {key!r} (first on line {seen[key]})")
            continue
        seen[key] = lineno
        try:
            value = _convert(key, raw)
        except ValueError:
            errors.append(f"line {lineno}: {key}={raw!r}: not a valid {_TYPES[key]}")
            continue
        check = _CHECKS.get(key)
        if check and not check[0](value):
            errors.append(f"line {lineno}: {key}={raw}: {check[1]}")
            continue
        if key == "k0_sweep":
            try:
                _parse_sweep(value)
            except ValueError as exc:
                errors.append(f"line {lineno}: k0_sweep={raw!r}: {exc}")
                continue
        values[key] = value
    for key in REQUIRED:
        if key not in seen:
            errors.append(f"missing required key {key!r}")
    if errors:
        raise ConfigError(errors)
    return RunConfig(**values)


def serialize(config: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(config, f.name)
        lines.append(f"{f.name} = {repr(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


def _g_field(grid, config: RunConfig) -> np.ndarray:
    if config.g_profile == "zero" or config.g_amp == 0.0:
        return np.zeros((2,) + grid.shape)
    X, Y = grid.mesh
    sx, sy = np.pi / grid.lx, np.pi / grid.ly
    # divergence-free: (d chi/dy, -d chi/dx) with chi = sin sin
    return config.g_amp * np.stack(
        [np.sin(sx * X) * sy * np.cos(sy * Y), -sx * np.cos(sx * X) * np.sin(sy * Y)]
    )


def build_problem(config: RunConfig):
    from .params import Grid2D, build_boundary_data, derive_params

    grid = Grid2D(config.nx, config.ny, config.lx, config.ly)
    params = derive_params(config.gamma, config.kappa, config.mu, config.c0, config.k0)
    if config.u_b_profile == "const":
        u_b = config.u_b
    else:
        u_b = lambda X, Y: config.u_b * X  # noqa: E731
    bdata = build_boundary_data(grid, omega=config.omega, u_b=u_b, g=_g_field(grid, config))
    return grid, params, bdata


def _verdict(ok: bool, name: str, detail: str) -> str:
    return f"{'PASS' if ok else 'FAIL'} {name} {detail}"


def run(config: RunConfig) -> int:
    """Run one experiment and write its artifacts to ``config.out``.

    Returns the process exit status: 0 when every verdict passes.
    """
    from .dynamics import (
        IntegratorConfig,
        continuous_dependence_experiment,
        explicit_euler_substepped,
        random_smooth_state,
        rhs,
        make_record,
        simulate,
        step_imex,
    )
    from .functionals import q_matrix, q_min_eigenvalue, z1_norm
    from .io import write_series, write_snapshot
    from .params import derive_params
    from .splitting import split
    from .stationary import find_stationary, stationary_properties_check

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    grid, params, bdata = build_problem(config)
    rng = np.random.default_rng(config.seed)
    report: list[str] = [f"experiment {config.experiment}", f"seed {config.seed}"]
    records = []
    snapshots: dict[int, object] = {}
    exp = config.experiment

    def finish() -> int:
        write_series(records, out / "series.csv")
        for step, state in sorted(snapshots.items()):
            write_snapshot(state, out / f"state_{step}.fld")
        (out / "report.txt").write_text("\n".join(report) + "\n", encoding="ascii")
        return 0 if not any(line.startswith("FAIL") for line in report) else 1

    try:
        if exp == "qcheck":
            sweep = _parse_sweep(config.k0_sweep)
            for k0 in sweep:
                p = derive_params(config.gamma, config.kappa, config.mu, config.c0, k0)
                lam = q_min_eigenvalue(p)
                report.append(_verdict(lam > 0, "q_min_eigenvalue", f"k0={k0!r} eta={p.eta!r} lambda_min={lam:.17g}"))
            M = q_matrix(derive_params(k0=1.0))
            minors = [M[0, 0], np.linalg.det(M[:2, :2]), np.linalg.det(M)]
            report.append("minors_k0_1 " + " ".join(f"{m:.17g}" for m in minors))
            return finish()

        z0 = random_smooth_state(grid, rng, z1_target=config.z1_target)
        integ = IntegratorConfig(config.dt, config.scheme)

        if exp == "simulate":
            res = simulate(
                z0, params, bdata, integ, config.T, record_every=config.record_every,
                snapshot_every=config.snapshot_every,
            )
            records = res.records
            snapshots = dict(res.snapshots)
            snapshots.setdefault(0, z0)
            snapshots[res.steps] = res.final
            report.append(_verdict(not res.aborted, "finite", res.message or f"steps={res.steps}"))
            report.append(_verdict(res.violations == 0, "lyapunov_monotone", f"violations={res.violations} max_excess={res.max_violation:.3e}"))
            report.append(f"L_initial {records[0].L:.17g}")
            report.append(f"L_final {records[-1].L:.17g}")
            report.append(f"dissipation_integral {res.dissipation_integral:.17g}")
            report.append(f"regularity_integral {res.regularity_integral:.17g}")
        elif exp == "stationary":
            sr = find_stationary(z0, params, bdata, tol=config.tol, max_time=config.max_time, dt=config.dt)
            records = [make_record(sr.time, sr.state, rhs(sr.state, params, bdata), params, bdata)]
            snapshots = {0: z0, sr.steps: sr.state}
            report.append(_verdict(sr.converged, "converged", f"time={sr.time:.6g} D={sr.D:.3e}"))
            r = sr.residual
            report.append(f"residuals r_psi={r.r_psi:.3e} r_A={r.r_A:.3e} r_u={r.r_u:.3e}")
            report.extend(stationary_properties_check(sr.state, bdata).lines)
        elif exp == "split":
            st = split(z0, params, bdata, config.T, config.dt, record_every=config.record_every)
            for t, z in zip(st.times, st.z):
                records.append(make_record(t, z, rhs(z, params, bdata), params, bdata))
            snapshots = {0: z0}
            report.append(_verdict(st.reconstruction_error <= 1e-10, "reconstruction", f"max_error={st.reconstruction_error:.3e}"))
            if st.fit is not None:
                report.append(_verdict(st.fit.nu > 0, "linear_decay", f"nu={st.fit.nu:.6g} r2={st.fit.r_squared:.6f}"))
            report.append(f"zk_z2_max {float(np.max(st.zk_z2)):.17g}")
        elif exp == "depcheck":
            delta = random_smooth_state(grid, rng, z1_target=1.0) * config.perturbation
            dep = continuous_dependence_experiment(z0, z0 + delta, params, bdata, config.T, config.dt, config.record_every)
            logA, B = dep.log_fit
            ok = bool(np.all(np.log(dep.rho) <= logA + B * dep.times + 1e-12)) and math.isfinite(dep.max_slope)
            report.append(_verdict(ok, "affine_log_bound", f"logA={logA:.6g} B={B:.6g} max_slope={dep.max_slope:.6g}"))
            snapshots = {0: z0}
        elif exp == "oracle":
            z = z0
            n = int(round(config.T / config.dt))
            for _ in range(n):
                z = step_imex(z, params, bdata, config.dt)
            ref = explicit_euler_substepped(z0, params, bdata, config.T, config.euler_dt)
            rel = z1_norm(z - ref) / z1_norm(ref)
            report.append(_verdict(rel <= 1e-3, "oracle_equivalence", f"relative_z1={rel:.3e}"))
            snapshots = {0: z0, n: z}
    except Exception as exc:  # keep partial artifacts
        report.append(f"FAIL error {type(exc).__name__}: {exc}")
    return finish()


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="glsf", description=__doc__.splitlines()[0])
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--out", type=str, default=None)
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args(argv)
    try:
        config = parse_config(args.config.read_text(encoding="utf-8"))
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    overrides = {"experiment": args.experiment}
    if args.out is not None:
        overrides["out"] = args.out
    if args.seed is not None:
        if args.seed < 0:
            print("--seed must be >= 0", file=sys.stderr)
            return 2
        overrides["seed"] = args.seed
    config = replace(config, **overrides)
    status = run(config)
    print((Path(config.out) / "report.txt").read_text(), end="")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
