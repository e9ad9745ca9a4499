"""Command line entry point ``dirac-scatter``."""

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import antichiral, chiral, harness, inverse
from .field import inner


def _add_common(p):
    p.add_argument("--config", required=True, help="flat key = value experiment file")
    p.add_argument("--scale", choices=("full", "desk"))
    p.add_argument("--output", help="output directory (overrides the config)")


def cmd_forward(args):
    cfg = harness.load_config(args.config, scale=args.scale, output=args.output)
    coarse, fine, truth, fine_truth = harness.build_models(cfg)
    data = harness.generate_data(cfg, fine, fine_truth)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    write_measurements(out / "measurements.csv", data)
    harness.write_grid_csv(out / "truth.csv", truth.grid, truth.values)
    (out / "config.txt").write_text(harness.format_config(cfg))
    print(f"wrote {data.n_sources} sources x {data.n_detectors} detectors to {out}")
    return 0


def write_measurements(path, data):
    """One row per (source, component, detector): complex value as re,im."""
    ns, nd = data.n_sources, data.n_detectors
    vals = data.data.reshape(ns, 2, nd)
    lines = ["source,component,detector,re,im"]
    for s in range(ns):
        for c in range(2):
            for d in range(nd):
                z = vals[s, c, d]
                lines.append(f"{s},{c + 1},{d},{float(z.real)!r},{float(z.imag)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_reconstruct(args):
    cfg = harness.load_config(args.config, scale=args.scale, output=args.output,
                              method=args.method, n_terms=args.terms)
    try:
        result = harness.run_experiment(cfg)
    except harness.StageError as exc:
        Path(cfg.output).mkdir(parents=True, exist_ok=True)
        harness.write_manifest(Path(cfg.output) / "run.json",
                               harness.ExperimentResult(cfg, None, {}, math.nan),
                               stage=exc.stage)
        raise
    out = harness.write_outputs(result)
    for method, term, err in result.error_table():
        label = "Projection" if term == 0 else f"{method.upper()}{term}"
        print(f"{label:>12s}  {err:.4f}")
    print(f"outputs in {out}")
    return 0


def cmd_constants(args):
    scfg = inverse.SeriesConfig(lam=args.lam, lam_convention=args.lam_convention)
    if args.model == "chiral":
        cfg = harness.ExperimentConfig(model="chiral", scale=args.scale, k=args.k, lx=args.length,
                                       lam=args.lam)
        p = chiral.ChiralParams(cfg.lx, cfg.y_min, cfg.y_max, cfg.nx, cfg.ny, cfg.k)
        model = chiral.ChiralModel(p, harness.incident_chiral(p, cfg.n_sources))
        inc = harness.incident_chiral(p, cfg.n_sources)
    else:
        cfg = harness.ExperimentConfig(model="antichiral", scale=args.scale, k=args.k,
                                       length=args.length, lam=args.lam)
        p = antichiral.AntichiralParams(cfg.length, cfg.n, cfg.k)
        th = harness.incident_angles(cfg.n_sources)
        model = antichiral.AntichiralModel(p, th)
        inc = model.psi0
    like = model.empty_measurement()
    if args.power_iters > 0:
        c = inverse.compute_constants(args.model, p, inc, model, scfg, like, args.power_iters)
    else:
        lam = inverse._effective_lambda(model, like, scfg)
        c = inverse.compute_constants(args.model, p, inc,
                                      norm_K1inv=inverse.tikhonov_norm_estimate(lam))
    print(f"mu = {c.mu:.6g}\nnu = {c.nu:.6g}\n|K1+| = {c.norm_K1inv:.6g}\n"
          f"C = {c.C:.6g}\nr = {c.r:.6g}\nM = {c.M_const:.6g}")
    if args.model == "antichiral":
        R = math.sqrt(2) * cfg.length
        print(f"mu_a analytic bound (R = {R:.4g}) = {inverse.mu_a_bound_analytic(cfg.k, R):.6g}")
    return 0


def selftest():
    """Quick consistency checks; returns the number of failures."""
    rng = np.random.default_rng(0)
    checks = []

    h = antichiral.hankel1(0, 1.0)
    checks.append(("hankel1(0, 1)", abs(h - (0.7651976865579666 + 0.08825696421567697j)) < 1e-12))
    x = 3.7
    wr = antichiral.hankel1(1, x) * np.conj(antichiral.hankel1(0, x)) \
        - antichiral.hankel1(0, x) * np.conj(antichiral.hankel1(1, x))
    # J1 Y0 - J0 Y1 = 2/(pi x)  =>  H1 conj(H0) - H0 conj(H1) = -4i/(pi x)
    checks.append(("Wronskian", abs(wr + 4j / (np.pi * x)) < 1e-12))

    cp = chiral.ChiralParams(1.0, -2.0, 2.0, 20, 41, 2.0)
    cm = chiral.ChiralModel(cp, harness.incident_chiral(cp, 3, span=1.0))
    checks.append(("chiral adjoint", _dot_test(cm, rng) < 1e-10))

    ap = antichiral.AntichiralParams(4.0, 8, 1.0)
    am = antichiral.AntichiralModel(ap, harness.incident_angles(3))
    checks.append(("anti-chiral adjoint", _dot_test(am, rng) < 1e-10))

    comps = inverse.compositions(4, min_parts=2)
    checks.append(("compositions of 4", len(comps) == 7))

    fails = 0
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        fails += not ok
    return fails


def _dot_test(model, rng):
    from .field import Potential
    V = Potential(model.grid, rng.standard_normal(model.grid.shape))
    Kv = model.apply_K1(V)
    e = Kv.with_data(rng.standard_normal(Kv.data.shape) + 1j * rng.standard_normal(Kv.data.shape))
    a = inner(Kv, e)
    b = inner(V, model.apply_K1_adjoint(e))
    return abs(a - b) / max(abs(a), 1e-300)


def build_parser():
    ap = argparse.ArgumentParser(prog="dirac-scatter",
                                 description="Dirac inverse scattering with inverse Born series")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forward", help="generate synthetic measurements")
    _add_common(p)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("reconstruct", help="run an inverse series experiment")
    _add_common(p)
    p.add_argument("--method", choices=("ibs", "ribs", "both"))
    p.add_argument("--terms", type=int)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("constants", help="convergence constants of a model")
    p.add_argument("--model", choices=("chiral", "antichiral"), required=True)
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--length", type=float, help="Lx (chiral) or side length (anti-chiral)")
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--lam-convention", default="euclidean", choices=("euclidean", "l2"))
    p.add_argument("--scale", default="desk", choices=("full", "desk"))
    p.add_argument("--power-iters", type=int, default=0,
                   help="power iterations for |K1+| (0: Tikhonov estimate)")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("selftest", help="fast internal consistency checks")
    p.set_defaults(func=lambda a: int(selftest() > 0))
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "constants":
        if args.length is None:
            args.length = 2.0 if args.model == "chiral" else 25.6
        if args.lam is None:
            args.lam = 1e-3 if args.model == "chiral" else 0.05
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
