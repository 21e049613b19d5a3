"""Launch localhost factory/worker processes through the command-line entry point."""

from __future__ import annotations

import json
import os
import signal
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from oracles import free_ports

DAVIDSON = ["--set", "davidson.energy_tol=1e-10", "--set", "davidson.residual_tol=1e-7"]


def _cmd(*args):
    return [sys.executable, "-m", "trimcoo", *map(str, args)]


@dataclass
class Cluster:
    root: Path
    model: list
    K: int
    C: int = 1000
    B: int = 8
    lease_timeout: float = 2.0
    addresses: list = field(default_factory=list)
    factories: dict = field(default_factory=dict)
    workers: list = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.addresses = [f"http://127.0.0.1:{p}" for p in free_ports(self.K)]

    def work_dir(self, a: int) -> Path:
        return self.root / f"factory_{a}"

    def ckpt_dir(self, a: int) -> Path:
        return self.root / f"ckpt_{a}"

    def start_factory(self, a: int, resume: bool = False, checkpoint: bool = False):
        args = ["factory", "-v", *self.model, *DAVIDSON, "--index", a, "--addresses", ",".join(self.addresses),
                "--C", self.C, "--B", self.B, "--lease-timeout", self.lease_timeout,
                "--linger", 2.0, "--out-dir", self.root / f"out_{a}",
                "--set", f"factory.work_dir={self.work_dir(a)}"]
        if checkpoint or resume:
            args += ["--ckpt-dir", self.ckpt_dir(a)]
        if resume:
            args.append("--resume")
        log = open(self.root / f"factory_{a}{'_resumed' if resume else ''}.log", "w")
        self.factories[a] = subprocess.Popen(_cmd(*args), stdout=log, stderr=subprocess.STDOUT)
        return self.factories[a]

    def start_worker(self, name: str, die_after: int | None = None, give_up: float = 60.0):
        args = ["worker", "--factories", ",".join(self.addresses), "--worker-id", name,
                "--give-up", give_up, "--out-dir", self.root / f"worker_{name}"]
        if die_after is not None:
            args += ["--die-after", die_after]
        log = open(self.root / f"worker_{name}.log", "w")
        p = subprocess.Popen(_cmd(*args), stdout=log, stderr=subprocess.STDOUT)
        self.workers.append(p)
        return p

    def wait_checkpoint(self, a: int, min_iter: int, timeout: float = 120.0) -> dict:
        meta = self.ckpt_dir(a) / "meta.json"
        end = time.monotonic() + timeout
        while time.monotonic() < end:
            try:
                m = json.loads(meta.read_text())
                if m["matvec_iter"] >= min_iter:
                    return m
            except (OSError, ValueError, KeyError):
                pass
            time.sleep(0.05)
        raise TimeoutError(f"no checkpoint at iteration {min_iter}")

    def kill_factory(self, a: int) -> None:
        p = self.factories[a]
        p.send_signal(signal.SIGKILL)
        p.wait()

    def wait(self, timeout: float = 240.0) -> list[dict]:
        end = time.monotonic() + timeout
        try:
            for p in self.factories.values():
                p.wait(max(1.0, end - time.monotonic()))
            for p in self.workers:
                p.wait(max(1.0, end - time.monotonic()))
        finally:
            self.shutdown()
        return [json.loads((self.work_dir(a) / "result.json").read_text()) for a in range(self.K)]

    def shutdown(self) -> None:
        for p in [*self.factories.values(), *self.workers]:
            if p.poll() is None:
                p.kill()
                p.wait()


def run(root, model, K: int, Z: int, **kw) -> tuple[list[dict], list[int]]:
    cl = Cluster(root, model, K, **kw)
    for a in range(K):
        cl.start_factory(a)
    for z in range(Z):
        cl.start_worker(f"w{z}")
    results = cl.wait()
    return results, [p.returncode for p in cl.workers]


def env_ok() -> bool:
    return "trimcoo" in subprocess.run([sys.executable, "-c", "import trimcoo; print('trimcoo')"],
                                       capture_output=True, text=True, env=os.environ).stdout
