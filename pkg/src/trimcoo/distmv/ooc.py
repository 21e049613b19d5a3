"""Out-of-core Krylov storage and Ritz-pair checkpoints.

Vector files are a little-endian int64 length header followed by the float64
payload.  The Krylov store keeps two append-only files (``V`` and ``HV``) of
such records; a Davidson restart truncates both to the surviving Ritz pair.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import struct
import threading
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

HEADER = struct.Struct("<q")


class IntegrityError(IOError):
    """A stored vector is truncated or its header disagrees with its length."""


class CheckpointMismatch(ValueError):
    """The checkpoint was written by a run with a different configuration."""


def encode_vector(v: np.ndarray) -> bytes:
    v = np.ascontiguousarray(v, dtype="<f8")
    return HEADER.pack(len(v)) + v.tobytes()


def decode_vector(data: bytes) -> np.ndarray:
    if len(data) < HEADER.size:
        raise IntegrityError("vector record shorter than its header")
    (n,) = HEADER.unpack_from(data)
    if n < 0 or len(data) != HEADER.size + 8 * n:
        raise IntegrityError(f"vector header says {n} values, payload has {(len(data) - 8) / 8}")
    return np.frombuffer(data, dtype="<f8", offset=HEADER.size).astype(np.float64)


def write_vector(path, v: np.ndarray) -> None:
    """Atomic write (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(encode_vector(v))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_vector(path) -> np.ndarray:
    return decode_vector(Path(path).read_bytes())


def write_dets(path, dets: np.ndarray) -> None:
    dets = np.ascontiguousarray(dets, dtype="<u8").reshape(-1, 4)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(HEADER.pack(len(dets)) + dets.tobytes())
    os.replace(tmp, path)


def read_dets(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (n,) = HEADER.unpack_from(data)
    if len(data) != HEADER.size + 32 * n:
        raise IntegrityError("determinant file length disagrees with its header")
    return np.frombuffer(data, dtype="<u8", offset=HEADER.size).reshape(n, 4).astype(np.uint64)


class OOCStore:
    """Append-only on-disk V_k / HV_k store with the in-memory store's interface."""

    def __init__(self, directory, n: int | None = None):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.n = n
        self._count = 0
        self._paths = {"v": self.dir / "V.bin", "hv": self.dir / "HV.bin"}
        for p in self._paths.values():
            p.write_bytes(b"")

    def __len__(self) -> int:
        return self._count

    @property
    def record_bytes(self) -> int:
        return HEADER.size + 8 * (self.n or 0)

    def _append(self, which: str, v: np.ndarray):
        v = np.asarray(v, dtype=np.float64)
        if self.n is None:
            self.n = len(v)
        if len(v) != self.n:
            raise ValueError(f"vector length {len(v)} != store length {self.n}")
        with open(self._paths[which], "ab") as fh:
            fh.write(encode_vector(v))

    def append(self, v, hv):
        self._append("v", v)
        self._append("hv", hv)
        self._count += 1

    def reset(self, v, hv):
        for p in self._paths.values():
            p.write_bytes(b"")
        self._count = 0
        self.append(v, hv)

    def _read(self, which: str, k: int) -> np.ndarray:
        if not 0 <= k < self._count:
            raise IndexError(k)
        rb = self.record_bytes
        with open(self._paths[which], "rb") as fh:
            fh.seek(k * rb)
            data = fh.read(rb)
        if len(data) != rb:
            raise IntegrityError(f"short read of layer {k} in {self._paths[which].name}")
        return decode_vector(data)

    def read_v(self, k):
        return self._read("v", k)

    def read_hv(self, k):
        return self._read("hv", k)

    def disk_bytes(self) -> int:
        return sum(p.stat().st_size for p in self._paths.values())

    def dots(self, y: np.ndarray) -> np.ndarray:
        """Sequential scan: <V_k, y> for every stored layer."""
        return np.array([self.read_v(k) @ y for k in range(self._count)])


def layer_bytes(n_det: int) -> int:
    """Disk added per Krylov layer (V and HV, payload only)."""
    return 2 * int(n_det) * 8


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class RitzCheckpoint:
    energy: float
    residual: float
    matvec_iter: int
    n_det: int
    config_hash: str
    v: np.ndarray
    hv: np.ndarray

    def meta(self) -> dict:
        d = asdict(self)
        d.pop("v")
        d.pop("hv")
        return d


def checkpoint_write(directory, ck: RitzCheckpoint) -> None:
    """Vectors first under a fresh generation, then the metadata pointing at them."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta_path = d / "meta.json"
    gen = 0
    if meta_path.exists():
        try:
            gen = int(json.loads(meta_path.read_text()).get("generation", -1)) + 1
        except (ValueError, OSError):
            gen = 0
    write_vector(d / f"ritz_v.{gen}.bin", ck.v)
    write_vector(d / f"ritz_hv.{gen}.bin", ck.hv)
    meta = ck.meta()
    meta["generation"] = gen
    tmp = d / "meta.json.tmp"
    tmp.write_text(json.dumps(meta, indent=2) + "\n")
    os.replace(tmp, meta_path)
    for old in d.glob("ritz_*.bin"):
        if not old.name.endswith(f".{gen}.bin"):
            old.unlink(missing_ok=True)


def checkpoint_read(directory) -> RitzCheckpoint:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    gen = meta.pop("generation", 0)
    v = read_vector(d / f"ritz_v.{gen}.bin")
    hv = read_vector(d / f"ritz_hv.{gen}.bin")
    if len(v) != len(hv):
        raise IntegrityError("checkpoint vectors differ in length")
    return RitzCheckpoint(float(meta["energy"]), float(meta["residual"]), int(meta["matvec_iter"]),
                          int(meta["n_det"]), str(meta["config_hash"]), v, hv)


def checkpoint_resume(directory, config_hash: str, n_local: int | None = None) -> RitzCheckpoint:
    """Load a checkpoint for restart, refusing one from another configuration."""
    ck = checkpoint_read(directory)
    if ck.config_hash != config_hash:
        raise CheckpointMismatch(f"checkpoint hash {ck.config_hash} does not match run {config_hash}")
    if n_local is not None and len(ck.v) != n_local:
        raise IntegrityError(f"checkpoint holds {len(ck.v)} values, expected {n_local}")
    return ck


class CheckpointWriter:
    """Background writer; only the newest pending checkpoint is kept."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self._q: queue.Queue = queue.Queue(maxsize=1)
        self._t = threading.Thread(target=self._run, daemon=True, name="checkpoint-writer")
        self._t.start()
        self.written = 0

    def submit(self, ck: RitzCheckpoint) -> None:
        try:
            self._q.get_nowait()
            self._q.task_done()
        except queue.Empty:
            pass
        self._q.put(ck)

    def _run(self):
        while True:
            ck = self._q.get()
            if ck is None:
                self._q.task_done()
                return
            try:
                checkpoint_write(self.dir, ck)
                self.written += 1
            except OSError:
                logger.exception("checkpoint write failed")
            finally:
                self._q.task_done()

    def close(self) -> None:
        self._q.join()
        self._q.put(None)
        self._t.join()
