"""Checkpoint files, CSV emission, and the conservation log.

Checkpoint format, version 1: the ASCII header line `RSFT-CKPT v1`, then a
fixed-order little-endian binary payload (site count, the two field arrays,
the bath scalar and momentum, the reference action, the step count, the
generator algorithm identifier and its serialized state), and a CRC-32 of
the payload.  Round trips are bit-exact, so a resumed trajectory reproduces
the unbroken one exactly.

Every CSV starts with `# key = value` comment lines carrying the fully
resolved configuration and seed; floating-point values use 17 significant
digits so re-emission of the same data is byte-identical.
"""

from __future__ import annotations

import json
import struct
import zlib
from typing import Iterable, Sequence, TextIO

import numpy as np

from .dynamics import ExtendedState
from .estimators import CorrelatorGrid

CHECKPOINT_MAGIC = b"RSFT-CKPT v1\n"
_SUPPORTED_GENERATORS = {"PCG64": np.random.PCG64}


class CheckpointError(RuntimeError):
    pass


def format_float(value: float) -> str:
    return f"{value:.17g}"


def write_checkpoint(path, state: ExtendedState, rng: np.random.Generator) -> None:
    algorithm = type(rng.bit_generator).__name__
    if algorithm not in _SUPPORTED_GENERATORS:
        raise CheckpointError(f"unsupported generator algorithm {algorithm!r}")
    rng_state = json.dumps(rng.bit_generator.state, sort_keys=True, separators=(",", ":"))
    n = state.phi.shape[0]
    parts = [
        struct.pack("<Q", n),
        np.ascontiguousarray(state.phi, dtype="<f8").tobytes(),
        np.ascontiguousarray(state.pi_phi, dtype="<f8").tobytes(),
        struct.pack("<ddd", state.s, state.pi_s, state.s0),
        struct.pack("<Q", state.step_count),
        struct.pack("<I", len(algorithm.encode())),
        algorithm.encode(),
        struct.pack("<I", len(rng_state.encode())),
        rng_state.encode(),
    ]
    payload = b"".join(parts)
    checksum = struct.pack("<I", zlib.crc32(payload))
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC + payload + checksum)


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.payload):
            raise CheckpointError("truncated checkpoint payload")
        chunk = self.payload[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> tuple[ExtendedState, np.random.Generator]:
    with open(path, "rb") as handle:
        blob = handle.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("not a checkpoint file or unsupported version")
    body = blob[len(CHECKPOINT_MAGIC) :]
    if len(body) < 4:
        raise CheckpointError("truncated checkpoint payload")
    payload, stored = body[:-4], struct.unpack("<I", body[-4:])[0]
    if zlib.crc32(payload) != stored:
        raise CheckpointError("checkpoint checksum mismatch")
    reader = _Reader(payload)
    (n,) = reader.unpack("<Q")
    phi = np.frombuffer(reader.take(8 * n), dtype="<f8").copy()
    pi_phi = np.frombuffer(reader.take(8 * n), dtype="<f8").copy()
    s, pi_s, s0 = reader.unpack("<ddd")
    (step_count,) = reader.unpack("<Q")
    (alg_len,) = reader.unpack("<I")
    algorithm = reader.take(alg_len).decode()
    (state_len,) = reader.unpack("<I")
    rng_state = json.loads(reader.take(state_len).decode())
    if reader.offset != len(payload):
        raise CheckpointError("trailing bytes in checkpoint payload")
    if algorithm not in _SUPPORTED_GENERATORS:
        raise CheckpointError(f"unsupported generator algorithm {algorithm!r}")
    bit_generator = _SUPPORTED_GENERATORS[algorithm]()
    bit_generator.state = rng_state
    state = ExtendedState(phi, pi_phi, s, pi_s, s0, step_count)
    return state, np.random.Generator(bit_generator)


def _write_header(handle: TextIO, header_items: Sequence[tuple[str, str]]) -> None:
    for key, value in header_items:
        handle.write(f"# {key} = {value}\n")


def emit_correlator_csv(
    grid: CorrelatorGrid, path, header_items: Sequence[tuple[str, str]] = ()
) -> None:
    """One row per grid point, in grid-spec order."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        _write_header(handle, header_items)
        handle.write("y0,y1,y2,y3,re_mean,im_mean,re_stderr,im_stderr,source\n")
        for g in range(grid.points.shape[0]):
            point = grid.points[g]
            se_re = grid.stderr_re[g] if grid.stderr_re is not None else float("nan")
            se_im = grid.stderr_im[g] if grid.stderr_im is not None else float("nan")
            fields = [format_float(v) for v in (*point, grid.values[g].real, grid.values[g].imag, se_re, se_im)]
            handle.write(",".join(fields) + f",{grid.source}\n")


def emit_table_csv(
    path,
    columns: Sequence[str],
    rows: Iterable[Sequence],
    header_items: Sequence[tuple[str, str]] = (),
) -> None:
    """Generic table writer: floats at 17 significant digits, everything
    else via str."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        _write_header(handle, header_items)
        handle.write(",".join(columns) + "\n")
        for row in rows:
            rendered = [
                format_float(cell) if isinstance(cell, float) else str(cell) for cell in row
            ]
            handle.write(",".join(rendered) + "\n")


class ConservationLog:
    """Incremental `step,lambda,total_action,s,pi_s` log."""

    COLUMNS = "step,lambda,total_action,s,pi_s"

    def __init__(self, path, header_items: Sequence[tuple[str, str]] = ()):
        self._handle = open(path, "w", encoding="utf-8", newline="\n")
        _write_header(self._handle, header_items)
        self._handle.write(self.COLUMNS + "\n")
        self.max_abs_total_action = 0.0

    def record(self, step: int, lam: float, total_action: float, s: float, pi_s: float) -> None:
        self.max_abs_total_action = max(self.max_abs_total_action, abs(total_action))
        row = [str(step)] + [format_float(v) for v in (lam, total_action, s, pi_s)]
        self._handle.write(",".join(row) + "\n")

    def close(self) -> None:
        self._handle.close()

    def __enter__(self) -> "ConservationLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
