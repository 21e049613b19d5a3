"""Command-line driver: ``trimcoo <command> [options]``.

Every command writes ``<command>.manifest.json`` into ``--out-dir`` next to
its CSV/JSON outputs.  Run settings come from ``--config FILE`` (flat
``key = value`` lines) and repeated ``--set key=value`` overrides; keys are
prefixed by the component they configure::

    model.L = 8            model.U = 4.0     model.alpha = 1.0   model.seed = 0
    phase0.num_runs = 8    phase0.cycles = 4 growth.growth_factor = 1.2
    coo.maxiter = 50       pt2.eps_hc = 1e-6 davidson.energy_tol = 1e-10
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._config import build, parse_value, read_kv, snapshot

logger = logging.getLogger("trimcoo")

SECTIONS = ("model", "phase0", "growth", "coo", "pt2", "davidson", "scan", "factory", "worker", "fit")


# ---------------------------------------------------------------------------
# run manifest

@dataclasses.dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict
    seeds: dict
    inputs: dict
    outputs: list[str]
    wall_time: float
    version: str = __version__

    def write(self, out_dir: Path) -> Path:
        path = out_dir / f"{self.command}.manifest.json"
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, default=_jsonable) + "\n")
        return path


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects config, inputs and outputs for the manifest of one command."""

    def __init__(self, args):
        self.args = args
        self.t0 = time.perf_counter()
        self.out = Path(args.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.conf = _load_config(args)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.snap: dict = {}

    def section(self, name: str) -> dict:
        return {k[len(name) + 1:]: v for k, v in self.conf.items() if k.startswith(name + ".")}

    def build(self, cls, name: str, **defaults):
        obj = build(cls, {**defaults, **self.section(name)})
        self.snap[name] = snapshot(obj)
        return obj

    def input(self, label: str, path) -> Path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"{label}: {p} does not exist")
        self.inputs[label] = _file_hash(p)
        return p

    def output(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(str(p))
        return p

    def finish(self) -> Path:
        self.snap.setdefault("raw", self.conf)
        man = RunManifest(self.args.command, sys.argv[1:], self.snap, {"seed": self.args.seed},
                          self.inputs, self.outputs, time.perf_counter() - self.t0)
        return man.write(self.out)


def _load_config(args) -> dict:
    conf: dict = {}
    if getattr(args, "config", None):
        conf.update(read_kv(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        conf[k.strip()] = parse_value(v)
    for k in conf:
        if k.split(".", 1)[0] not in SECTIONS:
            raise ValueError(f"config key {k!r} has no known section prefix {SECTIONS}")
    return conf


# ---------------------------------------------------------------------------
# shared inputs

def _integrals(run: Run):
    from .hamio import GraphModelSpec, build_hubbard_graph, read_fcidump

    m = run.section("model")
    a = run.args
    path = getattr(a, "fcidump", None) or m.get("fcidump")
    if path:
        ints = read_fcidump(run.input("fcidump", path))
        run.snap["model"] = {"fcidump": str(path)}
    else:
        spec = GraphModelSpec(L=int(a.L if a.L is not None else m.get("L", 8)),
                              t=float(a.t if a.t is not None else m.get("t", 1.0)),
                              U=float(a.U if a.U is not None else m.get("U", 4.0)),
                              alpha=float(a.alpha if a.alpha is not None else m.get("alpha", 0.0)),
                              seed=int(a.model_seed if a.model_seed is not None else m.get("seed", 0)))
        ints = build_hubbard_graph(spec)
        run.snap["model"] = dataclasses.asdict(spec)
    na, nb = m.get("n_alpha"), m.get("n_beta")
    if na is not None or nb is not None:
        na = ints.n_alpha if na is None else int(na)
        nb = ints.n_beta if nb is None else int(nb)
        ints = ints.with_electrons(na, nb)
    run.inputs["integrals_digest"] = ints.digest()
    return ints


def _wavefunction(run: Run, ints):
    from .detspace import read_wavefunction

    w = read_wavefunction(run.input("wavefunction", run.args.wavefunction))
    if w.n_orb != ints.n_orb:
        raise ValueError(f"wavefunction has {w.n_orb} orbitals, integrals {ints.n_orb}")
    na, nb = w.space.electron_counts()
    if (na, nb) != (ints.n_alpha, ints.n_beta):
        raise ValueError(f"wavefunction electrons ({na}, {nb}) differ from integrals "
                         f"({ints.n_alpha}, {ints.n_beta})")
    return w


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n")


def _num(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x


def _write_trajectory(run: Run, traj, name="trajectory.csv"):
    from .analysis import write_trajectory_csv

    rows = [(r.index, r.n_det, r.energy, r.pt2) for r in traj]
    write_trajectory_csv(rows, run.output(name))


# ---------------------------------------------------------------------------
# commands

def cmd_fci(run: Run) -> int:
    from .detspace import Wavefunction, fci_space, write_wavefunction
    from .eigen import LAPACK_LIMIT, DavidsonConfig, davidson_lowest, dense_ground_state

    ints = _integrals(run)
    space = fci_space(ints.n_orb, ints.n_alpha, ints.n_beta)
    solver = run.args.solver
    if solver == "auto":
        solver = "dense" if len(space) <= LAPACK_LIMIT else "davidson"
    if solver == "dense":
        e, c = dense_ground_state(space, ints)
    else:
        res = davidson_lowest(space, ints, run.build(DavidsonConfig, "davidson"))
        e, c = res.energy, res.coeffs
    write_wavefunction(Wavefunction(space, c, normalize=True), run.output("fci.wf"))
    _dump(run.output("fci.json"), {"energy": e, "n_det": len(space), "solver": solver})
    print(f"{e:.10f}")
    return 0


def _phase_configs(run: Run):
    from .analysis import Pt2Config
    from .coo import CooConfig
    from .trimci import Phase0Config, PhaseGrowthConfig

    p0 = run.build(Phase0Config, "phase0", seed=run.args.seed)
    g = run.build(PhaseGrowthConfig, "growth")
    coo = run.build(CooConfig, "coo")
    pt2 = run.build(Pt2Config, "pt2")
    return p0, g, coo, pt2


def _write_final(run: Run, last, ints) -> None:
    # growth may rotate orbitals; the FCIDUMP is the basis of final.wf
    from .detspace import write_wavefunction
    from .hamio import write_fcidump

    write_wavefunction(last.wavefunction, run.output("final.wf"))
    write_fcidump(last.integrals if last.integrals is not None else ints, run.output("final.fcidump"))


def cmd_trimci(run: Run) -> int:
    from .detspace import write_wavefunction
    from .hamio import write_fcidump
    from .trimci import phase0, phase_expand

    ints = _integrals(run)
    p0cfg, gcfg, coo, pt2 = _phase_configs(run)
    res = phase0(ints, p0cfg, coo)
    with open(run.output("phase0.csv"), "w") as fh:
        fh.write("cycle,N_det,E_ci,E_opt,basin\n")
        for c in res.cycles:
            fh.write(f"{c.cycle},{c.n_det},{float(c.e_ci)!r},{float(c.e_opt)!r},{c.basin}\n")
    write_wavefunction(res.core.wavefunction, run.output("core.wf"))
    write_fcidump(res.integrals, run.output("core.fcidump"))
    res.kappa.save(run.output("kappa.bin"))
    traj = [res.core]
    if run.args.expand:
        traj += phase_expand(res.core, res.integrals, gcfg, coo, pt2)
        _write_final(run, traj[-1], res.integrals)
    _write_trajectory(run, traj)
    _dump(run.output("trimci.json"), {"core_energy": res.core.energy, "best_cycle": res.best_cycle,
                                      "final_energy": traj[-1].energy, "final_n_det": traj[-1].n_det})
    print(f"{traj[-1].energy:.10f}")
    return 0


def cmd_coo(run: Run) -> int:
    from .coo import CooConfig, Kappa, bfgs_orbital_opt
    from .detspace import write_wavefunction
    from .hamio import write_fcidump
    from .detspace import Wavefunction

    ints = _integrals(run)
    w = _wavefunction(run, ints)
    res = bfgs_orbital_opt(w.space, ints, run.build(CooConfig, "coo"))
    Kappa.from_rotation(res.rotation).save(run.output("kappa.bin"))
    np.savetxt(run.output("rotation.txt"), res.rotation)
    write_fcidump(res.integrals, run.output("rotated.fcidump"))
    write_wavefunction(Wavefunction(w.space, res.coeffs, normalize=True), run.output("core_coo.wf"))
    _dump(run.output("coo.json"), {"initial_energy": res.initial_energy, "energy": res.energy,
                                   "n_iter": res.n_iter, "n_rejected": res.n_rejected,
                                   "history": res.history})
    print(f"{res.energy:.10f}")
    return 0


def cmd_expand(run: Run) -> int:
    from .trimci import CoreResult, phase_expand

    ints = _integrals(run)
    w = _wavefunction(run, ints)
    _, gcfg, coo, pt2 = _phase_configs(run)
    start = CoreResult(w, w.energy(ints), 0)
    traj = [start] + phase_expand(start, ints, gcfg, coo, pt2)
    _write_trajectory(run, traj)
    _write_final(run, traj[-1], ints)
    print(f"{traj[-1].energy:.10f}")
    return 0


def cmd_scan(run: Run) -> int:
    from .trimci import topology_scan

    p0cfg, gcfg, coo, _ = _phase_configs(run)
    s = run.section("scan")
    m = run.section("model")
    alphas = s.get("alphas", [0.0, 1.0])
    seeds = s.get("seeds", [run.args.seed])
    rows = topology_scan(int(m.get("L", 8)), float(m.get("U", 4.0)), alphas, seeds,
                         float(s.get("accuracy_target", 0.1)), float(m.get("t", 1.0)),
                         p0cfg, gcfg, coo, int(m.get("seed", 0)))
    run.snap["scan"] = {"alphas": alphas, "seeds": seeds}
    with open(run.output("scan.csv"), "w") as fh:
        fh.write("alpha,seed,E_fci,N_COO,N_noCOO,ratio\n")
        for r in rows:
            fh.write(f"{r.alpha},{r.seed},{float(r.e_fci)!r},{r.n_coo},{r.n_nocoo},{r.ratio}\n")
    with open(run.output("scan_trajectories.csv"), "w") as fh:
        fh.write("alpha,seed,orbitals,N_det,dE\n")
        for r in rows:
            for label, tr in (("coo", r.trajectory_coo), ("nocoo", r.trajectory_nocoo)):
                for n, de in tr:
                    fh.write(f"{r.alpha},{r.seed},{label},{n},{float(de)!r}\n")
    for r in rows:
        print(f"alpha={r.alpha} seed={r.seed} N_COO={r.n_coo:.1f} N_noCOO={r.n_nocoo:.1f}")
    return 0


def cmd_analyze(run: Run) -> int:
    from .obsrv import compute_rdms, fiedler_order, k95_bandwidth, mutual_information, rdm_energy

    ints = _integrals(run)
    w = _wavefunction(run, ints)
    g1, g2 = compute_rdms(w)
    mi = mutual_information(w)
    np.savetxt(run.output("mi.csv"), mi, delimiter=",", fmt="%.12g")
    order = fiedler_order(mi)
    out = {"rdm_energy": rdm_energy(g1, g2, ints), "rayleigh_energy": w.energy(ints),
           "k95_natural": k95_bandwidth(mi), "k95_fiedler": k95_bandwidth(mi, order),
           "fiedler_order": order.tolist(), "occupations": np.diag(g1).tolist(),
           "n_det": w.n_det}
    _dump(run.output("analyze.json"), out)
    print(f"{out['rdm_energy']:.10f}")
    return 0


def cmd_fit(run: Run) -> int:
    from .analysis import crossing_interpolate, powerlaw_fit, read_trajectory_csv, write_fit_json

    pts = read_trajectory_csv(run.input("csv", run.args.csv))
    f = run.section("fit")
    fit = powerlaw_fit(pts, int(f.get("n_candidates", 5000)), int(f.get("n_bootstrap", 500)),
                       int(f.get("seed", run.args.seed)))
    extra = {}
    if run.args.target is not None:
        extra["target"] = run.args.target
        extra["crossing_n"] = _num(crossing_interpolate(pts, run.args.target, fit.e_extrap))
    write_fit_json(fit, run.output("fit.json"), extra)
    print(f"{fit.e_extrap:.6f}")
    return 0


def cmd_pt2(run: Run) -> int:
    from .analysis import Pt2Config, pt2_correction

    ints = _integrals(run)
    w = _wavefunction(run, ints)
    res = pt2_correction(w, ints, run.build(Pt2Config, "pt2"))
    _dump(run.output("pt2.json"), {"e_var": res.e_var, "delta_e": res.delta_e, "e_total": res.e_total,
                                   "eps_hc": res.eps_hc, "n_external": res.n_external,
                                   "n_skipped": res.n_skipped})
    print(f"{res.delta_e:.12f}")
    return 0


def cmd_factory(run: Run) -> int:
    from .detspace import fci_space
    from .distmv import FactoryConfig, factory_serve
    from .eigen import DavidsonConfig

    ints = _integrals(run)
    a = run.args
    f = run.section("factory")
    if a.addresses:
        f["addresses"] = a.addresses.split(",")
    for key in ("index", "shards", "ckpt_dir", "lease_timeout", "linger", "C", "B"):
        val = getattr(a, key)
        if val is not None:
            f[key] = [int(x) for x in val.split(",")] if key == "shards" else val
    if a.resume:
        f["resume"] = True
    f.setdefault("work_dir", str(run.out / f"factory_{f.get('index', 0)}"))
    cfg = build(FactoryConfig, f)
    run.snap["factory"] = snapshot(cfg)
    dav = run.build(DavidsonConfig, "davidson")
    space = fci_space(ints.n_orb, ints.n_alpha, ints.n_beta)
    e, _, res = factory_serve(space, ints, dav, cfg, host=a.host)
    run.outputs += [str(Path(cfg.work_dir) / "result.json"), str(Path(cfg.work_dir) / "v_final.bin")]
    print(f"{e:.12f}")
    return 0 if res.converged else 1


def cmd_worker(run: Run) -> int:
    from .distmv import WorkerConfig, worker_loop

    a = run.args
    w = run.section("worker")
    if a.factories:
        w["factories"] = a.factories.split(",")
    for key in ("die_after", "give_up", "lease_size", "worker_id"):
        val = getattr(a, key)
        if val is not None:
            w[key] = val
    cfg = build(WorkerConfig, w)
    run.snap["worker"] = snapshot(cfg)
    stats = worker_loop(None, cfg)
    print(f"bundles={stats.bundles} fetches={len(stats.fetch_log)} cache_hits={stats.cache_hits}")
    return stats.exit_code


def cmd_checkpoint_inspect(run: Run) -> int:
    from .distmv import checkpoint_read

    ck = checkpoint_read(run.input("checkpoint", Path(run.args.directory) / "meta.json").parent)
    meta = ck.meta()
    meta["rayleigh"] = float(ck.v @ ck.hv / (ck.v @ ck.v))
    meta["norm"] = float(np.linalg.norm(ck.v))
    _dump(run.output("checkpoint.json"), meta)
    print(json.dumps(meta, indent=2))
    return 0


COMMANDS = {
    "fci": cmd_fci, "trimci": cmd_trimci, "coo": cmd_coo, "expand": cmd_expand, "scan": cmd_scan,
    "analyze": cmd_analyze, "fit": cmd_fit, "pt2": cmd_pt2, "factory": cmd_factory,
    "worker": cmd_worker, "checkpoint-inspect": cmd_checkpoint_inspect,
}


# ---------------------------------------------------------------------------
# parser

def _model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--fcidump", help="FCIDUMP file (overrides the Hubbard model)")
    g.add_argument("--L", type=int)
    g.add_argument("--U", type=float)
    g.add_argument("--t", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--model-seed", type=int, dest="model_seed")


def _global_args(suppress: bool) -> argparse.ArgumentParser:
    # the subcommand copy suppresses defaults so it never clobbers flags given
    # before the subcommand name
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=d(None), help="numba thread count")
    p.add_argument("--out-dir", default=d("."), help="directory for outputs and the manifest")
    p.add_argument("--config", default=d(None), help="key = value configuration file")
    p.add_argument("--set", action="append", default=d(None), metavar="KEY=VALUE",
                   help="override one config key")
    p.add_argument("-v", "--verbose", action="count", default=d(0))
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_args(True)
    ap = argparse.ArgumentParser(prog="trimcoo", description=__doc__.split("\n")[0],
                                 parents=[_global_args(False)])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fci", parents=[common], help="exact ground state of the full space")
    _model_args(p)
    p.add_argument("--solver", choices=["auto", "dense", "davidson"], default="auto")

    p = sub.add_parser("trimci", parents=[common], help="Phase-0 core search, optionally followed by growth")
    _model_args(p)
    p.add_argument("--expand", action="store_true", help="run the growth phase after Phase 0")

    for name, hlp in (("coo", "BFGS orbital optimization of a core"),
                      ("expand", "grow a wavefunction round by round"),
                      ("analyze", "RDMs, mutual information and k95"),
                      ("pt2", "Epstein-Nesbet PT2 correction")):
        p = sub.add_parser(name, parents=[common], help=hlp)
        _model_args(p)
        p.add_argument("wavefunction", help="wavefunction file")

    sub.add_parser("scan", parents=[common], help="topology scan with and without COO")

    p = sub.add_parser("fit", parents=[common], help="power-law extrapolation of (N_det, E) data")
    p.add_argument("csv")
    p.add_argument("--target", type=float, help="energy whose crossing N is reported")

    p = sub.add_parser("factory", parents=[common], help="run one distributed Davidson factory")
    _model_args(p)
    p.add_argument("--index", type=int)
    p.add_argument("--addresses", help="comma-separated base URLs of all factories")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--shards", help="comma-separated row boundaries (K+1 values)")
    p.add_argument("--ckpt-dir", dest="ckpt_dir")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--lease-timeout", type=float, dest="lease_timeout")
    p.add_argument("--linger", type=float)
    p.add_argument("--C", type=int)
    p.add_argument("--B", type=int)

    p = sub.add_parser("worker", parents=[common], help="stateless bundle worker")
    p.add_argument("--factories", help="comma-separated factory base URLs")
    p.add_argument("--die-after", type=int, dest="die_after", help="crash after leasing N bundles")
    p.add_argument("--give-up", type=float, dest="give_up")
    p.add_argument("--lease-size", type=int, dest="lease_size")
    p.add_argument("--worker-id", dest="worker_id")

    p = sub.add_parser("checkpoint-inspect", parents=[common], help="print and verify a Ritz checkpoint")
    p.add_argument("directory")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.threads:
        import numba

        numba.set_num_threads(args.threads)
    try:
        run = Run(args)
        code = COMMANDS[args.command](run)
        run.finish()
        return code
    except (FileNotFoundError, ValueError, KeyError, TypeError) as exc:
        print(f"trimcoo {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        logger.exception("command failed")
        print(f"trimcoo {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
