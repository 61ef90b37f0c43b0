"""Command line entry point: ``sos-lab {sample, estimate-ahom, percolation, clt, oracle-check}``.

Exit codes: 0 success, 1 invalid configuration or input, 2 numerical failure
(including failed oracle checks), 3 file-system errors. Every output file
carries the configuration hash and seed, and reruns with the same hash are
byte-identical.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
from scipy import stats as sps

from . import __version__
from .clt import (CltReport, F_values, brascamp_lieb_check, dipole, moment_structure, predict_gff_variance,
                  variance_direct, variance_tau_route)
from .coarsegrain import (CoarseGrainer, QuadraticityError, corrector_flatness, scalar_abar_bracket,
                          scale_sweep, summarize_sweep)
from .config import COMMANDS, ExperimentConfig
from .elliptic import ConductanceOperator, SolverError, log_det, solve_dirichlet
from .field import (PhiField, SnapshotError, TauField, bump_field, parse_snapshot, read_snapshot,
                    snapshot_bytes)
from .lattice import DomainError, cube
from .percolation import ensemble_inverse_moments, estimate_inverse_moments, good_cube_fractions, tail_statistics
from .reporting import csv_text, json_text
from .rng import RngStream
from .sampler import ConfigError, run_chain
from .stats import StatisticsError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


class CheckFailed(RuntimeError):
    """One or more oracle checks failed."""


# --- helpers ---------------------------------------------------------------------

def _meta(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.content_hash(), "seed": cfg.seed, "command": cfg.command,
            "version": __version__}


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {out}")
    return out


def _write(path: Path, text: str | bytes) -> str:
    data = text.encode() if isinstance(text, str) else text
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def _load_snapshots(directory) -> list[tuple[PhiField, TauField]]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"snapshot directory does not exist: {d}")
    phis = sorted(d.glob("phi_*.sosf"))
    taus = sorted(d.glob("tau_*.sosf"))
    if not taus:
        raise FileNotFoundError(f"no tau snapshots in {d}")
    if phis and len(phis) != len(taus):
        raise SnapshotError(f"{d}: {len(phis)} phi snapshots but {len(taus)} tau snapshots")
    pairs = []
    for k, tp in enumerate(taus):
        tau = read_snapshot(tp)
        phi = read_snapshot(phis[k]) if phis else None
        pairs.append((phi, tau))
    return pairs


def _samples(cfg: ExperimentConfig):
    if cfg.snapshots:
        return _load_snapshots(cfg.snapshots)
    return run_chain(cfg.sampler_config()).samples


# --- commands ----------------------------------------------------------------------

def cmd_sample(cfg: ExperimentConfig) -> dict:
    out = _out_dir(cfg)
    res = run_chain(cfg.sampler_config())
    snap = out / "snapshots"
    snap.mkdir(exist_ok=True)
    files = {}
    for k, (phi, tau) in enumerate(res.samples):
        files[f"snapshots/phi_{k:05d}.sosf"] = _write(snap / f"phi_{k:05d}.sosf", snapshot_bytes(phi))
        files[f"snapshots/tau_{k:05d}.sosf"] = _write(snap / f"tau_{k:05d}.sosf", snapshot_bytes(tau))
    manifest = dict(res.manifest)
    manifest["sampler_config_hash"] = manifest.pop("config_hash")
    manifest["files"] = files
    _write(out / "manifest.json", json_text(manifest, _meta(cfg)))
    rows = []
    for k, (phi, tau) in enumerate(res.samples):
        g = phi.grad()
        rows.append((k, float(np.mean(g ** 2)), float(np.mean(tau.tau)), float(np.max(tau.tau)),
                     float(np.min(tau.tau))))
    _write(out / "summary.csv", csv_text(["sample", "mean_grad2", "mean_tau", "max_tau", "min_tau"],
                                         rows, _meta(cfg)))
    return manifest


def cmd_estimate_ahom(cfg: ExperimentConfig) -> dict:
    out = _out_dir(cfg)
    taus = [t for _, t in _samples(cfg)]
    n_max = max(cfg.scales)
    reports = scale_sweep(taus, n_max, cfg.threshold, min(cfg.scales), cfg.volume)
    summary = summarize_sweep(reports)
    p = np.eye(cfg.d)[0]
    flat = [corrector_flatness(t, cfg.scales, p, cfg.threshold, CoarseGrainer(t, cfg.threshold, cfg.volume))
            for t in taus]
    flat_mean = {n: float(np.mean([f[n] for f in flat])) for n in cfg.scales}
    rows = [r for rep in reports for r in rep.rows()]
    _write(out / "ahom.csv", csv_text(["sample", "scale", "quantity", "basis", "value"], rows, _meta(cfg)))
    report = {"scales": summary, "corrector_flatness": flat_mean, "n_samples": len(taus)}
    _write(out / "ahom.json", json_text(report, _meta(cfg)))
    return report


def cmd_percolation(cfg: ExperimentConfig) -> dict:
    out = _out_dir(cfg)
    taus = [t for _, t in _samples(cfg)]
    tails = tail_statistics(taus, min_samples=1)
    header, rows = tails.table()
    _write(out / "tails.csv", csv_text(header, rows, _meta(cfg)))
    ref = ensemble_inverse_moments(taus)
    fractions = [good_cube_fractions(t, cfg.scales, cfg.threshold, ref) for t in taus]
    report = {
        "single_edge_fit": tails.single_edge_fit,
        "alpha": {f"{k[0]}@{k[1]}": v for k, v in sorted(tails.alpha.items())},
        "reference_inverse_moments": ref,
        "good_cube_fraction": {n: float(np.mean([f[n] for f in fractions])) for n in cfg.scales},
        "n_samples": len(taus),
    }
    if len(taus) >= 100:
        report["inverse_moments"] = estimate_inverse_moments(taus, ks=(1, 2, 4, -1))
    else:
        report["inverse_moments"] = "skipped: fewer than 100 samples"
    _write(out / "percolation.json", json_text(report, _meta(cfg)))
    return report


def cmd_clt(cfg: ExperimentConfig) -> dict:
    out = _out_dir(cfg)
    pairs = _samples(cfg)
    phis = [p for p, _ in pairs]
    taus = [t for _, t in pairs]
    f = bump_field(cfg.d, cfg.R, cfg.weights)
    rep = CltReport(R=cfg.R, L=taus[0].box.hi[0], delta=cfg.delta, n_samples=len(taus))
    if phis[0] is not None:
        vals = F_values(phis, f)
        _write(out / "F_R.csv", csv_text(["sample", "F_R"], list(enumerate(vals)), _meta(cfg)))
        vd, md = variance_direct(phis, f)
        rep.var_direct, rep.mean_direct = vd.to_dict(), md.to_dict()
        if len(phis) >= 200:
            rep.wick = moment_structure(phis, f, k_max=2)
        else:
            rep.wick = {"skipped": "fewer than 200 samples"}
    vt, rep.solver_failures = variance_tau_route(taus, f, tol=cfg.tolerance)
    rep.var_tau = vt.to_dict()
    bracket = scalar_abar_bracket(taus, t=cfg.threshold, volume=cfg.volume)
    rep.a_bar = bracket["estimate"]
    if cfg.d == 2:
        rep.var_gff = predict_gff_variance(rep.a_bar, f, cfg.d)
    bl = brascamp_lieb_check(taus, dipole(taus[0].box), k=1, tol=cfg.tolerance)
    rep.bl_margins = {"violations": bl["violations"], "max_margin": bl["max_margin"],
                      "moment": bl["moment"], "moment_bound": bl["moment_bound"]}
    report = rep.to_dict()
    report["a_bar_bracket"] = bracket
    _write(out / "clt.json", json_text(report, _meta(cfg)))
    return report


def _oracle_checks(cfg: ExperimentConfig) -> list[dict]:
    from . import oracle
    from .sampler import sample_tau_array

    root = RngStream(cfg.seed)
    checks = []

    def add(name, value, tol, passed):
        checks.append({"name": name, "value": float(value), "tolerance": float(tol), "passed": bool(passed)})

    for z in (0.1, 1.0, 10.0):
        v, _ = oracle.quadrature_magic_identity(z)
        err = abs(v - math.exp(-2 * math.sqrt(z)))
        add(f"magic-identity z={z}", err, 1e-10, err <= 1e-10)

    box = cube(2, 2)
    gen = root.child("oracle", "tree").generator()
    for k in range(5):
        tau = gen.normal(size=len(box.edges()))
        ref = math.log(oracle.enumerate_wired_spanning_trees(box, tau))
        rel = abs(log_det(ConductanceOperator(box, np.exp(tau))) - ref) / abs(ref)
        add(f"matrix-tree field {k}", rel, 1e-9, rel <= 1e-9)

    box = cube(4, 2)
    tau = root.child("oracle", "dense").generator().normal(size=len(box.edges()))
    op = ConductanceOperator(box, np.exp(tau))
    g = np.zeros(box.n_vertices)
    bnd = box.boundary_mask()
    g[bnd] = box.vertices()[bnd][:, 0]
    u = solve_dirichlet(op, g=g, tol=cfg.tolerance).solution
    a = dict(zip([(e.base, e.tip) for e in box.edges()], np.exp(tau)))
    M = oracle.dense_laplacian(box.vertices(), lambda x, y: a.get((x, y), a.get((y, x))))
    ref, _ = oracle.dense_dirichlet_minimum(M, bnd, g)
    err = float(np.abs(u - ref).max())
    add("dense dirichlet solve 9x9", err, 1e-8, err <= 1e-8)

    for z in (0.1, 1.0, 10.0):
        x = sample_tau_array(np.full(20000, z), root.child("oracle", "ks", z).generator())
        p = sps.kstest(x, oracle.tau_cdf_table(z)).pvalue
        add(f"tau-sampler KS z={z}", p, 0.01, p > 0.01)

    if cfg.snapshots:
        d = Path(cfg.snapshots)
        # digests recorded by `sample` sit next to the snapshot directory
        manifest = d.parent / "manifest.json"
        digests = json.loads(manifest.read_text())["report"].get("files", {}) if manifest.is_file() else {}
        for path in sorted(d.glob("*.sosf")):
            data = path.read_bytes()
            want = digests.get(f"{d.name}/{path.name}")
            ok = want is None or hashlib.sha256(data).hexdigest() == want
            try:
                parse_snapshot(data, str(path))
            except SnapshotError:
                ok = False
            add(f"snapshot {path.name}", 0.0 if ok else 1.0, 0.0, ok)
    return checks


def cmd_oracle_check(cfg: ExperimentConfig) -> dict:
    out = _out_dir(cfg)
    checks = _oracle_checks(cfg)
    report = {"checks": checks, "all_passed": all(c["passed"] for c in checks),
              "config": cfg.to_ini(include_all=False)}
    _write(out / "oracle_ledger.json", json_text(report, _meta(cfg)))
    failed = [c["name"] for c in checks if not c["passed"]]
    if failed:
        raise CheckFailed("failed oracle checks: " + ", ".join(failed))
    return report


HANDLERS = {
    "sample": cmd_sample,
    "estimate-ahom": cmd_estimate_ahom,
    "percolation": cmd_percolation,
    "clt": cmd_clt,
    "oracle-check": cmd_oracle_check,
}


# --- argument parsing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="existing output directory")
    common.add_argument("--threads", type=int, help="worker threads (default: $SOS_LAB_THREADS or 1)")
    common.add_argument("--tolerance", type=float, help="linear solver tolerance")
    parser = argparse.ArgumentParser(prog="sos-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HANDLERS[name].__name__.replace("cmd_", ""))
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    threads = args.threads
    if threads is None and os.environ.get("SOS_LAB_THREADS"):
        try:
            threads = int(os.environ["SOS_LAB_THREADS"])
        except ValueError as exc:
            raise ConfigError(f"SOS_LAB_THREADS: not an integer: {os.environ['SOS_LAB_THREADS']!r}") from exc
    cfg = cfg.with_overrides(command=args.command, seed=args.seed, out=args.out, threads=threads,
                             tolerance=args.tolerance)
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        HANDLERS[cfg.command](cfg)
    except (ConfigError, DomainError, StatisticsError) as exc:
        print(f"sos-lab: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverError, QuadraticityError, CheckFailed, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"sos-lab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"sos-lab: IO error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
