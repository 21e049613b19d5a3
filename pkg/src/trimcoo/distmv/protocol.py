"""Wire formats and a small retrying HTTP client.

Routes served by a factory::

    GET  /bundle/next?worker=ID&n=K   lease up to K bundles (JSON), 204 if none now,
                                      410 once the factory has finished
    POST /bundle/result?bundle_id=I&tag=T   body: (u64 row, f64 value) pairs
    GET  /files/{name}?offset=O&len=L byte range of a served file
    GET  /status                      JSON summary
    POST /reduce?seq=S&factory=A&op=sum|cat   body: f64 array; factory 0 only
"""

from __future__ import annotations

import io
import json
import logging
import time
import urllib.error
import urllib.request
from urllib.parse import urlencode

import numpy as np

logger = logging.getLogger(__name__)

CONTRIB = np.dtype([("row", "<u8"), ("val", "<f8")])


def encode_contributions(rows: np.ndarray, vals: np.ndarray) -> bytes:
    rec = np.empty(len(rows), dtype=CONTRIB)
    rec["row"] = rows
    rec["val"] = vals
    return rec.tobytes()


def decode_contributions(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(data) % CONTRIB.itemsize:
        raise ValueError("contribution payload is not a whole number of records")
    rec = np.frombuffer(data, dtype=CONTRIB)
    return rec["row"].astype(np.int64), rec["val"].astype(np.float64)


def encode_array(v: np.ndarray) -> bytes:
    return np.ascontiguousarray(v, dtype="<f8").tobytes()


def decode_array(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype="<f8").astype(np.float64)


def integrals_to_bytes(ints) -> bytes:
    buf = io.BytesIO()
    np.savez(buf, n_orb=ints.n_orb, h=ints.h, v=ints.v, e_core=ints.e_core,
             n_alpha=ints.n_alpha, n_beta=ints.n_beta)
    return buf.getvalue()


def integrals_from_bytes(data: bytes):
    from ..hamio import IntegralSet

    z = np.load(io.BytesIO(data))
    return IntegralSet(int(z["n_orb"]), z["h"], z["v"], float(z["e_core"]),
                       int(z["n_alpha"]), int(z["n_beta"]))


class Unreachable(ConnectionError):
    """Retries exhausted."""


class HttpStatus(Exception):
    def __init__(self, code: int, body: bytes = b""):
        super().__init__(f"HTTP {code}")
        self.code = code
        self.body = body


def request(base: str, path: str, params: dict | None = None, data: bytes | None = None,
            timeout: float = 30.0, retries: int = 5, backoff: float = 0.1,
            deadline: float | None = None) -> tuple[int, bytes]:
    """GET (or POST when ``data`` is given) with exponential backoff.

    Connection failures are retried; HTTP status codes are returned as is.
    """
    url = base.rstrip("/") + path
    if params:
        url += "?" + urlencode(params)
    attempt = 0
    t_end = None if deadline is None else time.monotonic() + deadline
    while True:
        try:
            req = urllib.request.Request(url, data=data, method="POST" if data is not None else "GET")
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                return resp.status, resp.read()
        except urllib.error.HTTPError as exc:
            return exc.code, exc.read()
        except (urllib.error.URLError, ConnectionError, TimeoutError, OSError) as exc:
            attempt += 1
            out_of_time = t_end is not None and time.monotonic() > t_end
            if (t_end is None and attempt > retries) or out_of_time:
                raise Unreachable(f"{url}: {exc}") from exc
            time.sleep(min(backoff * 2 ** min(attempt - 1, 6), 2.0))


def fetch_file(base: str, name: str, chunk: int = 1 << 20, **kw) -> bytes:
    """Whole file through the ranged file endpoint."""
    parts, off = [], 0
    while True:
        code, body = request(base, f"/files/{name}", {"offset": off, "len": chunk}, **kw)
        if code != 200:
            raise HttpStatus(code, body)
        parts.append(body)
        off += len(body)
        if len(body) < chunk:
            return b"".join(parts)


def get_json(base: str, path: str, params: dict | None = None, **kw) -> tuple[int, dict | None]:
    code, body = request(base, path, params, **kw)
    return code, (json.loads(body) if body else None)
