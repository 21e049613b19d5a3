"""Stateless worker: lease bundles, fetch missing slices, execute, post back."""

from __future__ import annotations

import json
import logging
import os
import secrets
import time
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ..hamio import IntegralSet
from . import protocol
from .channels import BETA, Bundle, MissingInput, execute_bundle
from .ooc import HEADER

logger = logging.getLogger(__name__)


@dataclass
class WorkerConfig:
    factories: list[str] = field(default_factory=list)
    worker_id: str | None = None
    lease_size: int = 1
    chunk_rows: int = 4096
    cache_chunks: int = 4096
    idle_sleep: float = 0.02
    give_up: float = 30.0
    retries: int = 5
    die_after: int | None = None


class ChunkCache:
    """LRU of fixed-size row chunks keyed by (factory, file, chunk index)."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.data: OrderedDict = OrderedDict()
        self.hits = 0
        self.misses = 0

    def get(self, key):
        if key in self.data:
            self.data.move_to_end(key)
            self.hits += 1
            return self.data[key]
        self.misses += 1
        return None

    def put(self, key, value):
        self.data[key] = value
        if len(self.data) > self.capacity:
            self.data.popitem(last=False)


class RemoteSource:
    """Slices read through a factory's file endpoint, chunk-aligned and cached."""

    def __init__(self, base: str, tag: str, cache: ChunkCache, cfg: WorkerConfig, log: list):
        self.base, self.tag, self.cache, self.cfg, self.log = base, tag, cache, cfg, log

    def _rows(self, name: str, width: int, dtype, offset: int, length: int) -> np.ndarray:
        cr = self.cfg.chunk_rows
        parts = []
        for c in range(offset // cr, (offset + length - 1) // cr + 1 if length else offset // cr):
            key = (self.base, name, c)
            chunk = self.cache.get(key)
            if chunk is None:
                code, body = protocol.request(self.base, f"/files/{name}",
                                              {"offset": HEADER.size + c * cr * width * 8,
                                               "len": cr * width * 8}, retries=self.cfg.retries)
                self.log.append((name, c))
                if code != 200:
                    raise MissingInput(f"{name} chunk {c}: HTTP {code}")
                chunk = np.frombuffer(body, dtype=dtype).reshape(-1, width) if width > 1 else \
                    np.frombuffer(body, dtype=dtype)
                self.cache.put(key, chunk)
            parts.append(chunk)
        if not parts:
            return np.zeros((0, width) if width > 1 else 0, dtype=dtype)
        arr = np.concatenate(parts)
        lo = offset - (offset // cr) * cr
        out = arr[lo:lo + length]
        if len(out) != length:
            raise MissingInput(f"{name}: short read at rows {offset}+{length}")
        return out

    def dets(self, kind, offset, length):
        name = "dets_beta.bin" if kind == BETA else "dets.bin"
        return self._rows(name, 4, "<u8", offset, length)

    def values(self, kind, offset, length):
        name = f"vbeta_{self.tag}.bin" if kind == BETA else f"v_{self.tag}.bin"
        return self._rows(name, 1, "<f8", offset, length)


@dataclass
class WorkerStats:
    bundles: int = 0
    fetch_log: list = field(default_factory=list)
    cache_hits: int = 0
    exit_code: int = 0


def _fetch_integrals(cfg: WorkerConfig) -> IntegralSet | None:
    end = time.monotonic() + cfg.give_up
    while time.monotonic() < end:
        for base in cfg.factories:
            try:
                return protocol.integrals_from_bytes(protocol.fetch_file(base, "integrals.npz", retries=0))
            except (protocol.Unreachable, protocol.HttpStatus):
                continue
        time.sleep(0.2)
    return None


def worker_loop(ints: IntegralSet | None, cfg: WorkerConfig, stop=None) -> WorkerStats:
    """Pull, execute and post bundles until every factory reports it is done.

    Returns with ``exit_code`` 0 when all factories answered 410, and 1 when
    some factory stayed unreachable for longer than ``cfg.give_up`` seconds.
    ``stop`` may be a ``threading.Event`` for in-process use.  With ``ints``
    None the integrals are downloaded from the first reachable factory.
    """
    if not cfg.factories:
        raise ValueError("no factory addresses")
    if ints is None:
        ints = _fetch_integrals(cfg)
        if ints is None:
            logger.error("no factory reachable within %.0f s", cfg.give_up)
            return WorkerStats(exit_code=1)
    wid = cfg.worker_id or f"w{os.getpid()}-{secrets.token_hex(2)}"
    cache = ChunkCache(cfg.cache_chunks)
    stats = WorkerStats()
    done: set[str] = set()
    down_since: dict[str, float] = {}
    leased = 0
    k = 0
    while len(done) < len(cfg.factories):
        if stop is not None and stop.is_set():
            break
        base = cfg.factories[k % len(cfg.factories)]
        k += 1
        if base in done:
            continue
        try:
            code, body = protocol.request(base, "/bundle/next", {"worker": wid, "n": cfg.lease_size},
                                          retries=0, timeout=10)
        except protocol.Unreachable:
            t0 = down_since.setdefault(base, time.monotonic())
            if time.monotonic() - t0 > cfg.give_up:
                logger.error("factory %s unreachable for %.0f s; giving up", base, cfg.give_up)
                stats.exit_code = 1
                break
            time.sleep(min(0.05 * 2 ** min(len(down_since), 5), 1.0))
            continue
        down_since.pop(base, None)
        if code == 410:
            done.add(base)
            continue
        if code != 200:
            time.sleep(cfg.idle_sleep)
            continue
        msg = json.loads(body)
        source = RemoteSource(base, msg["tag"], cache, cfg, stats.fetch_log)
        for bd in msg["bundles"]:
            leased += 1
            if cfg.die_after is not None and leased > cfg.die_after:
                logger.warning("worker %s dying with bundle %s leased", wid, bd["bundle_id"])
                os._exit(3)
            bundle = Bundle.from_json(bd)
            try:
                rows, vals = execute_bundle(bundle, source, ints)
                protocol.request(base, "/bundle/result",
                                 {"bundle_id": bundle.bundle_id, "tag": msg["tag"], "worker": wid},
                                 data=protocol.encode_contributions(rows, vals),
                                 retries=cfg.retries)
                stats.bundles += 1
            except MissingInput as exc:
                # the lease will expire and the factory re-queues the bundle
                logger.info("bundle %s skipped: %s", bundle.bundle_id, exc)
            except protocol.Unreachable:
                logger.info("could not post bundle %s", bundle.bundle_id)
    stats.cache_hits = cache.hits
    return stats
