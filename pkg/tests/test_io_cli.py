import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glsf import Grid2D, State
from glsf.cli import EXPERIMENTS, ConfigError, RunConfig, main, parse_config, serialize
from glsf.dynamics import RECORD_FIELDS, random_smooth_state
from glsf.io import (
    FormatError,
    format_float,
    parse_snapshot,
    read_series,
    read_snapshot,
    snapshot_bytes,
    write_snapshot,
)

MINIMAL = "nx = 8\nny = 8\ndt = 0.001\nT = 0.01\n"


def test_snapshot_round_trip_bitwise(tmp_path, rng):
    g = Grid2D(12, 9, 1.5, 0.75)
    z = random_smooth_state(g, rng)
    path = tmp_path / "s.fld"
    write_snapshot(z, path)
    back = read_snapshot(path)
    assert back.grid == g and back.equals(z)
    assert snapshot_bytes(back) == path.read_bytes()


def test_snapshot_layout(rng):
    g = Grid2D(4, 5)
    z = random_smooth_state(g, rng)
    data = snapshot_bytes(z)
    assert data[:4] == b"GLSF"
    assert struct.unpack_from("<III", data, 4) == (1, 4, 5)
    assert struct.unpack_from("<dd", data, 16) == (1.0, 1.0)
    assert len(data) == 32 + 5 * 8 * 30
    psi_re = np.frombuffer(data, "<f8", count=30, offset=32).reshape(5, 6)
    assert np.array_equal(psi_re, z.psi.real)
    u = np.frombuffer(data, "<f8", count=30, offset=32 + 4 * 240).reshape(5, 6)
    assert np.array_equal(u, z.u)


def test_snapshot_errors(rng):
    data = snapshot_bytes(random_smooth_state(Grid2D(6, 6), rng))
    with pytest.raises(FormatError, match="size"):
        parse_snapshot(data[:-8])
    with pytest.raises(FormatError, match="truncated"):
        parse_snapshot(data[:10])
    with pytest.raises(FormatError, match="magic"):
        parse_snapshot(b"XXXX" + data[4:])
    with pytest.raises(FormatError, match="version 2"):
        parse_snapshot(data[:4] + struct.pack("<I", 2) + data[8:])
    with pytest.raises(FormatError, match="grid"):
        parse_snapshot(data[:8] + struct.pack("<I", 1) + data[12:])


def test_snapshot_rejects_invalid_state(rng):
    g = Grid2D(6, 6)
    data = bytearray(snapshot_bytes(State.zeros(g)))
    # u at node (0, 0) sits on the boundary and must vanish
    struct.pack_into("<d", data, 32 + 4 * 8 * g.size, 1.0)
    with pytest.raises(FormatError, match="invalid state"):
        parse_snapshot(bytes(data))


def test_format_float_round_trip(rng):
    for x in rng.normal(size=100) * 10.0 ** rng.integers(-300, 300, size=100):
        assert float(format_float(x)) == x


def test_parse_minimal_defaults():
    cfg = parse_config(MINIMAL)
    assert (cfg.nx, cfg.ny, cfg.dt, cfg.T) == (8, 8, 1e-3, 0.01)
    assert cfg.k0 == 1.0 and cfg.experiment == "simulate" and cfg.seed == 0
    assert parse_config(serialize(cfg)) == cfg


def test_parse_comments_and_blank_lines():
    cfg = parse_config("# preset\n\n" + MINIMAL.replace("nx = 8", "nx = 8   # cells"))
    assert cfg.nx == 8


def test_parse_reports_every_error_with_line():
    text = "nx = 8\nk0 = -1\nfoo = 3\nny = abc\nnx = 9\nscheme = rk4\nbroken line\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    errs = info.value.errors
    joined = "\n".join(errs)
    assert "line 2: k0=-1" in joined
    assert "line 3: unknown key 'foo'" in joined
    assert "line 4: ny='abc'" in joined
    assert "line 5: duplicate key 'nx'" in joined
    assert "line 6: scheme=rk4" in joined
    assert "line 7: expected" in joined
    assert "missing required key 'dt'" in joined and "missing required key 'T'" in joined
    assert len(errs) == 8


def test_parse_bad_sweep():
    with pytest.raises(ConfigError, match="k0_sweep"):
        parse_config(MINIMAL + "k0_sweep = 1,-2\n")


_pos = st.floats(min_value=1e-6, max_value=1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(
    nx=st.integers(4, 512),
    ny=st.integers(4, 512),
    dt=_pos,
    T=_pos,
    kappa=_pos,
    k0=_pos,
    omega=st.floats(-1e3, 1e3, allow_nan=False),
    u_b=st.floats(-1e3, 1e3, allow_nan=False),
    profile=st.sampled_from(["const", "x"]),
    experiment=st.sampled_from(EXPERIMENTS),
    seed=st.integers(0, 2**31),
    out=st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789_/.-", min_size=1, max_size=20),
)
def test_serialize_round_trip(nx, ny, dt, T, kappa, k0, omega, u_b, profile, experiment, seed, out):
    cfg = RunConfig(nx=nx, ny=ny, dt=dt, T=T, kappa=kappa, k0=k0, omega=omega, u_b=u_b,
                    u_b_profile=profile, experiment=experiment, seed=seed, out=out)
    back = parse_config(serialize(cfg))
    assert back == cfg
    assert serialize(back) == serialize(cfg)


def write_cfg(tmp_path, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text("nx = 8\nny = 8\ndt = 0.001\nT = 0.02\nrecord_every = 5\n" + extra)
    return path


def test_cli_simulate_deterministic(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    for name in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / name), "--seed", "3"]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "series.csv").read_bytes() == (b / "series.csv").read_bytes()
    assert sorted(p.name for p in a.glob("*.fld")) == ["state_0.fld", "state_20.fld"]
    for p in a.glob("*.fld"):
        assert p.read_bytes() == (b / p.name).read_bytes()
    header = (a / "series.csv").read_text().splitlines()[0]
    assert header == "t,L,D,z1,z2,grad_u,divA,psit,F2" == ",".join(RECORD_FIELDS)
    recs = read_series(a / "series.csv")
    assert len(recs) == 5
    assert all(r2.L <= r1.L for r1, r2 in zip(recs, recs[1:]))
    report = (a / "report.txt").read_text()
    assert "PASS lyapunov_monotone" in report
    assert "PASS lyapunov_monotone" in capsys.readouterr().out
    other = tmp_path / "c"
    main(["simulate", "--config", str(cfg), "--out", str(other), "--seed", "4"])
    assert (other / "series.csv").read_bytes() != (a / "series.csv").read_bytes()


def test_cli_qcheck(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["qcheck", "--config", str(cfg), "--out", str(tmp_path / "q")]) == 0
    lines = (tmp_path / "q" / "report.txt").read_text().splitlines()
    eig = [l for l in lines if "q_min_eigenvalue" in l]
    assert len(eig) == 5 and all(l.startswith("PASS") for l in eig)
    minors = [float(x) for x in next(l for l in lines if l.startswith("minors_k0_1")).split()[1:]]
    assert minors == pytest.approx([1.0, 0.75, 0.5], abs=1e-12)


def test_cli_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("nx = 2\n")
    assert main(["simulate", "--config", str(path)]) == 2
    assert "line 1: nx=2" in capsys.readouterr().err


def test_cli_failure_exit_code(tmp_path):
    # explicit Euler far above its stability limit blows up and fails the run
    cfg = write_cfg(tmp_path, "scheme = explicit-euler\n").read_text().replace("dt = 0.001", "dt = 0.1")
    cfg = cfg.replace("T = 0.02", "T = 20")
    path = tmp_path / "unstable.cfg"
    path.write_text(cfg)
    with np.errstate(all="ignore"):
        status = main(["simulate", "--config", str(path), "--out", str(tmp_path / "u")])
    assert status == 1
    assert (tmp_path / "u" / "series.csv").exists()
    assert "FAIL finite" in (tmp_path / "u" / "report.txt").read_text()


@pytest.mark.parametrize("experiment", ["stationary", "split", "depcheck"])
def test_cli_other_experiments_run(tmp_path, experiment):
    cfg = write_cfg(tmp_path, "max_time = 0.05\ntol = 1e-3\n")
    status = main([experiment, "--config", str(cfg), "--out", str(tmp_path / experiment)])
    report = (tmp_path / experiment / "report.txt").read_text()
    assert "FAIL error" not in report
    assert (tmp_path / experiment / "series.csv").exists()
    if experiment != "stationary":
        assert status == 0
