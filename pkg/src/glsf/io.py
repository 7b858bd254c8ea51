"""Binary state snapshots and CSV time series."""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .dynamics import RECORD_FIELDS, TrajectoryRecord
from .functionals import State, StructureError
from .params import Grid2D, ParameterError

MAGIC = b"GLSF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")


class FormatError(ValueError):
    """Raised for malformed snapshot files."""


def snapshot_bytes(state: State) -> bytes:
    g = state.grid
    head = _HEADER.pack(MAGIC, VERSION, g.nx, g.ny, g.lx, g.ly)
    arrays = (state.psi.real, state.psi.imag, state.A[0], state.A[1], state.u)
    return head + b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def write_snapshot(state: State, path) -> None:
    Path(path).write_bytes(snapshot_bytes(state))


def parse_snapshot(data: bytes) -> State:
    if len(data) < _HEADER.size:
        raise FormatError(f"snapshot truncated: {len(data)} bytes, header needs {_HEADER.size}")
    magic, version, nx, ny, lx, ly = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported snapshot version {version}, this reader handles {VERSION}")
    try:
        grid = Grid2D(nx, ny, lx, ly)
    except ParameterError as exc:
        raise FormatError(f"invalid grid in header: {exc}") from exc
    expected = _HEADER.size + 5 * 8 * grid.size
    if len(data) != expected:
        raise FormatError(f"snapshot size {len(data)} bytes, expected {expected}")
    flat = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(float)
    parts = flat.reshape(5, *grid.shape)
    try:
        return State(grid, parts[0] + 1j * parts[1], parts[2:4], parts[4])
    except StructureError as exc:
        raise FormatError(f"snapshot holds an invalid state: {exc}") from exc


def read_snapshot(path) -> State:
    return parse_snapshot(Path(path).read_bytes())


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def series_text(records: Iterable[TrajectoryRecord]) -> str:
    lines = [",".join(RECORD_FIELDS)]
    for r in records:
        lines.append(",".join(format_float(getattr(r, k)) for k in RECORD_FIELDS))
    return "\n".join(lines) + "\n"


def write_series(records: Iterable[TrajectoryRecord], path) -> None:
    Path(path).write_text(series_text(records), encoding="ascii")


def read_series(path) -> list[TrajectoryRecord]:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != ",".join(RECORD_FIELDS):
        raise FormatError("series header mismatch")
    return [TrajectoryRecord(*map(float, line.split(","))) for line in lines[1:] if line]
