"""Row-owning factory: bundle dispatcher, sigma aggregator and Davidson driver.

Factory ``a`` owns rows ``[r_a, r_{a+1})``.  For every matvec it publishes the
current trial vector as files, queues its static bundle list, leases bundles
to workers, aggregates the returned contributions exactly once per bundle and
adds the diagonal pass.  Global dot products are a local partial sum followed
by a blocking K-way rendezvous hosted by factory 0.
"""

from __future__ import annotations

import json
import logging
import secrets
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from .. import _kernels as Kn
from .._config import config_hash
from ..detspace import DetSet
from ..eigen import DavidsonConfig, DavidsonResult, davidson
from ..hamio import IntegralSet
from . import ooc, protocol
from .channels import Bundle, aggregate, build_channels, pack

logger = logging.getLogger(__name__)

_CHUNK = 1 << 20  # largest byte range served per file request


@dataclass
class FactoryConfig:
    index: int = 0
    addresses: list[str] = field(default_factory=lambda: ["http://127.0.0.1:0"])
    shards: list[int] | None = None
    work_dir: str = "factory_work"
    ckpt_dir: str | None = None
    resume: bool = False
    lease_timeout: float = 120.0
    lease_size: int = 1
    linger: float = 1.0
    peer_deadline: float = 60.0
    C: int = 100
    B: int = 7
    checkpoint_every: int = 1

    @property
    def K(self) -> int:
        return len(self.addresses)

    def bounds(self, n_det: int) -> list[int]:
        if self.shards is None:
            return [round(a * n_det / self.K) for a in range(self.K + 1)]
        b = [int(x) for x in self.shards]
        if len(b) != self.K + 1 or b[0] != 0 or b[-1] != n_det or any(x > y for x, y in zip(b, b[1:])):
            raise ValueError(f"shard boundaries {b} do not cover 0..{n_det} for K={self.K}")
        return b


def run_hash(space: DetSet, ints: IntegralSet, cfg: FactoryConfig, dav: DavidsonConfig) -> str:
    dav_part = {"energy_tol": dav.energy_tol, "residual_tol": dav.residual_tol,
                "max_subspace": dav.max_subspace, "max_iters": dav.max_iters}
    space_digest = config_hash(np.ascontiguousarray(space.dets).tobytes().hex())
    return config_hash(ints.digest(), space_digest, cfg.K, cfg.bounds(len(space)), cfg.C, cfg.B, dav_part)


# ---------------------------------------------------------------------------
# bundle queue

class BundleQueue:
    """Pending / leased / completed bookkeeping for one matvec at a time."""

    def __init__(self, bundles: list[Bundle], lease_timeout: float):
        self.payload = {b.bundle_id: json.dumps(b.to_json()).encode() for b in bundles}
        self.ids = sorted(self.payload)
        self.lease_timeout = lease_timeout
        self.lock = threading.Condition()
        self.tag: str | None = None
        self.pending: deque[int] = deque()
        self.leased: dict[int, tuple[float, str]] = {}
        self.releases: dict[int, int] = {}
        self.results: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.duplicates = 0
        self.expired = 0
        self.per_worker: dict[str, int] = {}
        self.finished = False

    def start(self, tag: str) -> None:
        with self.lock:
            self.tag = tag
            self.pending = deque(self.ids)
            self.leased.clear()
            self.releases.clear()
            self.results = {}
            self.lock.notify_all()

    def _expire(self, now: float) -> None:
        for bid, (deadline, _) in list(self.leased.items()):
            if now > deadline:
                del self.leased[bid]
                self.pending.append(bid)
                self.releases[bid] = self.releases.get(bid, 0) + 1
                self.expired += 1

    def lease(self, worker: str, n: int) -> tuple[str | None, list[int]]:
        with self.lock:
            if self.tag is None:
                return None, []
            now = time.monotonic()
            self._expire(now)
            out = []
            while self.pending and len(out) < n:
                bid = self.pending.popleft()
                if bid in self.results:
                    continue
                # each re-lease doubles the allowance
                timeout = self.lease_timeout * 2 ** min(self.releases.get(bid, 0), 6)
                self.leased[bid] = (now + timeout, worker)
                out.append(bid)
            return self.tag, out

    def complete(self, bid: int, tag: str, rows, vals, worker: str = "?") -> str:
        with self.lock:
            if tag != self.tag or bid not in self.payload:
                return "stale"
            if bid in self.results:
                self.duplicates += 1
                return "duplicate"
            self.results[bid] = (rows, vals)
            self.leased.pop(bid, None)
            self.per_worker[worker] = self.per_worker.get(worker, 0) + 1
            if len(self.results) == len(self.ids):
                self.lock.notify_all()
            return "ok"

    def wait_all(self, poll: float = 0.05) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        with self.lock:
            while len(self.results) < len(self.ids):
                self.lock.wait(poll)
                self._expire(time.monotonic())
            res, self.tag = self.results, None
            return res

    def status(self) -> dict:
        with self.lock:
            return {"tag": self.tag, "bundles": len(self.ids), "pending": len(self.pending),
                    "leased": len(self.leased), "completed": len(self.results),
                    "duplicates": self.duplicates, "expired": self.expired,
                    "per_worker": dict(self.per_worker), "finished": self.finished}


# ---------------------------------------------------------------------------
# reductions

class ReduceHub:
    """Blocking K-way rendezvous; contributions are combined in factory order."""

    def __init__(self, K: int, timeout: float = 60.0):
        self.K = K
        self.timeout = timeout
        self.cv = threading.Condition()
        self.slots: dict[int, dict] = {}

    def submit(self, seq: int, factory: int, op: str, data: np.ndarray) -> np.ndarray:
        with self.cv:
            slot = self.slots.setdefault(seq, {"parts": {}, "out": None, "read": 0})
            slot["parts"][factory] = np.asarray(data, np.float64)
            if len(slot["parts"]) == self.K:
                parts = [slot["parts"][a] for a in range(self.K)]
                if op == "cat":
                    slot["out"] = np.concatenate(parts)
                else:
                    acc = parts[0].copy()
                    for p in parts[1:]:
                        acc = acc + p
                    slot["out"] = acc
                self.cv.notify_all()
            end = time.monotonic() + self.timeout
            while slot["out"] is None:
                left = end - time.monotonic()
                if left <= 0:
                    raise TimeoutError(f"reduction {seq} incomplete: {sorted(slot['parts'])}")
                self.cv.wait(left)
            out = slot["out"]
            slot["read"] += 1
            if slot["read"] == self.K:
                del self.slots[seq]
            return out


# ---------------------------------------------------------------------------
# HTTP

class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    node: "FactoryNode"

    def log_message(self, fmt, *args):
        logger.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, code: int, body: bytes = b"", ctype: str = "application/json"):
        self.send_response(code)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if body:
            self.wfile.write(body)

    def _body(self) -> bytes:
        n = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(n) if n else b""

    def do_GET(self):
        url = urlparse(self.path)
        q = {k: v[0] for k, v in parse_qs(url.query).items()}
        node = self.node
        if url.path == "/bundle/next":
            if node.queue.finished:
                return self._send(410)
            tag, ids = node.queue.lease(q.get("worker", "?"), max(1, int(q.get("n", 1))))
            if not ids:
                return self._send(204)
            body = b'{"tag": "%s", "factory": %d, "bundles": [%s]}' % (
                tag.encode(), node.cfg.index, b", ".join(node.queue.payload[i] for i in ids))
            return self._send(200, body)
        if url.path.startswith("/files/"):
            name = url.path[len("/files/"):]
            if "/" in name or name.startswith("."):
                return self._send(400)
            path = node.work / name
            try:
                off = int(q.get("offset", 0))
                ln = min(int(q.get("len", _CHUNK)), _CHUNK)
                with open(path, "rb") as fh:
                    fh.seek(off)
                    data = fh.read(ln)
            except (OSError, ValueError):
                return self._send(404)
            node.file_requests += 1
            return self._send(200, data, "application/octet-stream")
        if url.path == "/status":
            return self._send(200, json.dumps(node.status()).encode())
        self._send(404)

    def do_POST(self):
        url = urlparse(self.path)
        q = {k: v[0] for k, v in parse_qs(url.query).items()}
        body = self._body()
        node = self.node
        if url.path == "/bundle/result":
            try:
                rows, vals = protocol.decode_contributions(body)
                state = node.queue.complete(int(q["bundle_id"]), q.get("tag", ""), rows, vals,
                                            q.get("worker", "?"))
            except (KeyError, ValueError):
                return self._send(400)
            return self._send(409 if state == "stale" else 200, json.dumps({"state": state}).encode())
        if url.path == "/reduce":
            if node.hub is None:
                return self._send(404)
            try:
                out = node.hub.submit(int(q["seq"]), int(q["factory"]), q.get("op", "sum"),
                                      protocol.decode_array(body))
            except TimeoutError:
                return self._send(504)
            return self._send(200, protocol.encode_array(out), "application/octet-stream")
        self._send(404)


class FactoryNode:
    """One factory: HTTP server plus the Davidson driver over its row interval."""

    def __init__(self, space: DetSet, ints: IntegralSet, dav: DavidsonConfig,
                 cfg: FactoryConfig, host: str = "127.0.0.1", port: int | None = None):
        self.space, self.ints, self.dav, self.cfg = space, ints, dav, cfg
        n = len(space)
        b = cfg.bounds(n)
        self.r0, self.r1 = b[cfg.index], b[cfg.index + 1]
        self.bounds = b
        self.work = Path(cfg.work_dir)
        self.work.mkdir(parents=True, exist_ok=True)
        self.hash = run_hash(space, ints, cfg, dav)
        self.run_id = secrets.token_hex(4)
        census = build_channels(space, (self.r0, self.r1))
        bundles = pack(census, cfg.C, cfg.B, space, first_id=0)
        self.queue = BundleQueue(bundles, cfg.lease_timeout)
        self.hub = ReduceHub(cfg.K, cfg.peer_deadline) if cfg.index == 0 else None
        self.diag = Kn.diagonal(space.dets[self.r0:self.r1], ints.h, ints.eri, ints.e_core, ints.n_orb)
        self.n_matvec = 0
        self.seq = 0
        self.file_requests = 0
        self.energy = None
        self.residual = None
        self.result: DavidsonResult | None = None
        ooc.write_dets(self.work / "dets.bin", space.dets)
        ooc.write_dets(self.work / "dets_beta.bin", space.dets[space.beta_rows])
        (self.work / "integrals.npz").write_bytes(protocol.integrals_to_bytes(ints))
        self._prev_files: list[Path] = []

        if port is None:
            port = int(urlparse(cfg.addresses[cfg.index]).port or 0)
        handler = type("Handler", (_Handler,), {"node": self})
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self.port = self.httpd.server_address[1]
        self.address = f"http://{host}:{self.port}"
        self._serve_thread = threading.Thread(target=self.httpd.serve_forever, daemon=True,
                                              name=f"factory-{cfg.index}")
        self._serve_thread.start()
        logger.info("factory %d rows [%d, %d) on %s, %d bundles", cfg.index, self.r0, self.r1,
                    self.address, len(bundles))

    # -- collective operations ------------------------------------------------
    def _reduce(self, data: np.ndarray, op: str) -> np.ndarray:
        self.seq += 1
        if self.cfg.K == 1:
            return np.asarray(data, np.float64).copy()
        if self.hub is not None:
            return self.hub.submit(self.seq, 0, op, data)
        code, body = protocol.request(self.cfg.addresses[0], "/reduce",
                                      {"seq": self.seq, "factory": self.cfg.index, "op": op},
                                      data=protocol.encode_array(data),
                                      timeout=self.cfg.peer_deadline + 5,
                                      deadline=self.cfg.peer_deadline)
        if code != 200:
            raise protocol.Unreachable(f"reduction {self.seq} failed with HTTP {code}")
        return protocol.decode_array(body)

    def dots(self, vectors, y) -> np.ndarray:
        """Global <v_k, y>: local partials, then one K-way sum."""
        local = np.array([float(v @ y) for v in vectors])
        return self._reduce(local, "sum")

    def matvec(self, x_local: np.ndarray) -> np.ndarray:
        full = self._reduce(x_local, "cat")
        self.n_matvec += 1
        tag = f"{self.run_id}-{self.n_matvec}"
        sp = self.space
        vpath, bpath = self.work / f"v_{tag}.bin", self.work / f"vbeta_{tag}.bin"
        ooc.write_vector(vpath, full)
        ooc.write_vector(bpath, full[sp.beta_rows])
        self.queue.start(tag)
        results = self.queue.wait_all()
        sigma = self.diag * x_local + aggregate(results, self.r1 - self.r0, self.r0)
        for p in self._prev_files:
            p.unlink(missing_ok=True)
        self._prev_files = [vpath, bpath]
        return sigma

    # -- driver -------------------------------------------------------------
    def status(self) -> dict:
        s = self.queue.status()
        s.update(factory=self.cfg.index, rows=[self.r0, self.r1], n_det=len(self.space),
                 matvecs=self.n_matvec, energy=self.energy, residual=self.residual,
                 config_hash=self.hash, file_requests=self.file_requests)
        return s

    def _start_vector(self):
        if self.cfg.resume and self.cfg.ckpt_dir:
            ck = ooc.checkpoint_resume(self.cfg.ckpt_dir, self.hash, self.r1 - self.r0)
            logger.info("factory %d resuming at E=%.12f (matvec %d)", self.cfg.index, ck.energy, ck.matvec_iter)
            return ck.v, ck.hv
        # unit vector on the global diagonal minimum (first row on ties)
        lo = self._reduce(np.array([self.diag.min() if len(self.diag) else np.inf]), "cat")
        owner = int(np.argmin(lo))
        v0 = np.zeros(self.r1 - self.r0)
        if owner == self.cfg.index:
            v0[int(np.argmin(self.diag))] = 1.0
        return v0, None

    def run(self) -> DavidsonResult:
        writer = ooc.CheckpointWriter(self.cfg.ckpt_dir) if self.cfg.ckpt_dir else None
        store = ooc.OOCStore(self.work / "krylov", self.r1 - self.r0)

        def callback(it, theta, rn, x, hx):
            self.energy, self.residual = float(theta), float(rn)
            if writer is not None and it % max(1, self.cfg.checkpoint_every) == 0:
                writer.submit(ooc.RitzCheckpoint(float(theta), float(rn), self.n_matvec,
                                                 self.r1 - self.r0, self.hash,
                                                 np.array(x), np.array(hx)))

        try:
            v0, hv0 = self._start_vector()
            res = davidson(self.matvec, self.diag, v0, self.dav, dots=self.dots, hv0=hv0,
                           store=store, callback=callback)
        finally:
            if writer is not None:
                writer.close()
        self.result = res
        self.energy, self.residual = res.energy, res.residual
        return res

    def finish(self) -> None:
        """Answer 410 for ``linger`` seconds so workers exit, then stop serving."""
        self.queue.finished = True
        time.sleep(self.cfg.linger)
        self.httpd.shutdown()
        self.httpd.server_close()


def factory_serve(space: DetSet, ints: IntegralSet, dav: DavidsonConfig | None = None,
                  cfg: FactoryConfig | None = None, host: str = "127.0.0.1",
                  port: int | None = None, ready=None) -> tuple[float, np.ndarray, DavidsonResult]:
    """Run one factory to convergence; returns ``(E, v_owned, result)``.

    ``ready(node)`` is called once the server is listening (tests use it to
    learn the bound port).
    """
    node = FactoryNode(space, ints, dav or DavidsonConfig(), cfg or FactoryConfig(), host, port)
    if ready is not None:
        ready(node)
    try:
        res = node.run()
        out = Path(node.cfg.work_dir)
        (out / "result.json").write_text(json.dumps({
            "energy": res.energy, "converged": res.converged, "iterations": res.iterations,
            "residual": res.residual, "n_matvec": node.n_matvec, "rows": [node.r0, node.r1],
            "config_hash": node.hash}, indent=2) + "\n")
        ooc.write_vector(out / "v_final.bin", res.coeffs)
    finally:
        node.finish()
    return res.energy, res.coeffs, res
