"""Command-line interface: ``s2s <subcommand> [options]``.

Exit status is 0 on success, 2 on invalid input or configuration, 1 on a
runtime failure.

Output files
------------
simulate
    ``stack.bin/.json`` (complex64 stack), ``truth_phases`` (N-band float32
    raster), ``labels`` (int32 raster), ``truth.json`` (class parameters).
select
    ``sshp_count`` (int32), ``reversals`` (int32), ``diagnostics`` (uint8),
    optionally ``masks`` (uint8, band = window offset).
estimate
    ``select`` outputs plus ``mean_coherence_<estimator>`` and ``s_map``
    (float32).
link
    ``estimate`` outputs plus ``phases_<estimator>-<method>`` (N bands) and
    ``phase_stat_<estimator>-<method>``.
evaluate
    ``rmse.csv`` with columns ``product,acquisition,rmse``.
power
    ``power.csv`` with columns ``sided,p_const,tau,coherence_gap,power``.
sgrid
    ``sgrid.csv`` with columns ``n,xi,repeat,s,at_bound``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ESTIMATORS, METHODS, Config, load_config
from .errors import ConfigError, FormatError, ParameterError
from .pipeline import ProductSet, pair_name, run_pipeline
from .simulation import (
    ClassParams,
    SceneSpec,
    check_sigma2_percentiles,
    coherence_series,
    default_classes,
    default_label_map,
    gen_scene,
    polynomial_phase,
    power_experiment,
    rmse_per_acquisition,
    s_grid_experiment,
)
from .stackio import SLCStack, read_raster, read_stack, write_csv, write_raster, write_stack

log = logging.getLogger("shape2scale")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p, pipeline=True):
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    if pipeline:
        p.add_argument("--stack", required=True, help="input stack (directory or .bin/.json path)")
        p.add_argument("--window", type=int, help="odd window side")
        p.add_argument("--alpha", type=float, help="test level")
        p.add_argument("--threads", type=int, help="worker processes (fallback: S2S_THREADS)")
        p.add_argument("--stride", type=int, help="process every k-th pixel in both directions")


def build_parser():
    p = _Parser(prog="s2s", description="Shape-based SSHP selection and robust phase linking.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic three-class scene")
    _common(s, pipeline=False)
    s.add_argument("--paper-scale", dest="full_scale", action="store_true", help="30 acquisitions on a 150x150 raster")

    for name, text in (("select", "SSHP selection only"), ("estimate", "selection and coherence estimation"), ("link", "full selection, estimation and phase linking")):
        q = sub.add_parser(name, help=text)
        _common(q)
        if name != "select":
            q.add_argument("--estimator", choices=ESTIMATORS)
        if name == "link":
            q.add_argument("--method", choices=METHODS)
        q.add_argument("--masks", action="store_true", help="also write per-pixel masks")

    e = sub.add_parser("evaluate", help="phase RMSE of link products against a simulated truth")
    e.add_argument("--products", required=True, help="directory written by 'link'")
    e.add_argument("--truth", required=True, help="directory written by 'simulate'")
    e.add_argument("--out", required=True)
    e.add_argument("-v", "--verbose", action="store_true")

    w = sub.add_parser("power", help="power of the CACG test along a coherence sweep")
    _common(w, pipeline=False)
    w.add_argument("--alpha", type=float, default=0.05)
    w.add_argument("--sided", choices=("one", "right", "two"), default="one")
    w.add_argument("--trials", type=int)
    w.add_argument("--reference", choices=("low", "high"))

    g = sub.add_parser("sgrid", help="estimated CGG shape over (N, xi)")
    _common(g, pipeline=False)
    g.add_argument("--samples", type=int)
    g.add_argument("--repeats", type=int)
    return p


def _config(args):
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace("pipeline", seed=args.seed).replace("simulation", seed=args.seed)
    cfg = cfg.replace(
        "pipeline",
        window=getattr(args, "window", None),
        estimator=getattr(args, "estimator", None),
        method=getattr(args, "method", None),
        threads=getattr(args, "threads", None),
        stride=getattr(args, "stride", None),
        write_masks=True if getattr(args, "masks", False) else None,
    )
    cfg = cfg.replace("acaf", alpha=getattr(args, "alpha", None))
    cfg.pipeline.validate()
    return cfg


def _stack_path(path):
    p = Path(path)
    return p / "stack" if p.is_dir() else p


def scene_from_config(cfg, full_scale=False):
    sc = cfg.simulation
    rows, cols, n = sc.rows, sc.cols, sc.n_acquisitions
    if full_scale:
        rows, cols, n = 150, 150, 30
    classes = default_classes()
    for k, v in (sc.classes or {}).items():
        try:
            classes[int(k)] = ClassParams(**v)
        except TypeError as exc:
            raise ConfigError(f"simulation.classes[{k}]: {exc}") from exc
    return SceneSpec(
        n_acquisitions=n,
        label_map=default_label_map(rows, cols),
        classes=classes,
        deformation_phase=polynomial_phase(rows, cols, n, sc.amplitude),
        seed=sc.seed,
        dt=sc.dt,
    )


def cmd_simulate(args, cfg):
    check_sigma2_percentiles()
    spec = scene_from_config(cfg, args.full_scale)
    data, truth = gen_scene(spec)
    out = Path(args.out)
    prov = json.dumps({"generator": "s2s simulate", "seed": spec.seed, "full_scale": bool(args.full_scale)}, sort_keys=True)
    write_stack(SLCStack(data.astype(np.complex64), prov), out / "stack")
    write_raster(truth.true_phases, out / "truth_phases", "float32")
    write_raster(truth.labels, out / "labels", "int32")
    info = {
        "seed": spec.seed,
        "dt": spec.dt,
        "classes": {str(k): vars(v) for k, v in spec.classes.items()},
    }
    with open(out / "truth.json", "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")
    n, rows, cols = data.shape
    print(f"simulate: wrote {n}x{rows}x{cols} stack to {out}")


def write_products(products: ProductSet, out, level):
    out = Path(out)
    write_raster(products.sshp_count, out / "sshp_count", "int32")
    write_raster(products.reversals, out / "reversals", "int32")
    write_raster(products.diagnostics, out / "diagnostics", "uint8")
    if products.masks is not None:
        write_raster(np.moveaxis(products.masks, 2, 0), out / "masks", "uint8")
    if level in ("estimate", "link"):
        for est, m in products.mean_coherence.items():
            write_raster(m, out / f"mean_coherence_{est}", "float32")
        if np.isfinite(products.s_map).any():
            write_raster(products.s_map, out / "s_map", "float32")
    if level == "link":
        for key, ph in products.phases.items():
            write_raster(ph, out / f"phases_{key}", "float32")
            write_raster(products.phase_stat[key], out / f"phase_stat_{key}", "float32")
    with open(out / "products.json", "w") as fh:
        json.dump({"level": level, **products.meta}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_pipeline(args, cfg, level):
    stack = read_stack(_stack_path(args.stack))
    products = run_pipeline(stack.data.astype(complex), cfg, level=level)
    write_products(products, args.out, level)
    n, rows, cols = stack.data.shape
    done = int(np.count_nonzero(products.diagnostics != 32))
    print(f"{level}: processed {done} of {rows * cols} pixels, mean SSHP count {products.sshp_count[products.diagnostics != 32].mean():.1f}, wrote {args.out}")


def cmd_evaluate(args, cfg):
    prod = Path(args.products)
    truth = read_raster(Path(args.truth) / "truth_phases", squeeze=False)
    with open(prod / "products.json") as fh:
        meta = json.load(fh)
    diag = read_raster(prod / "diagnostics")
    mask = diag != 32
    rows = []
    for key in meta.get("pairs", []):
        est = read_raster(prod / f"phases_{key}", squeeze=False)
        if est.shape != truth.shape:
            raise FormatError(f"phases_{key} shape {est.shape} does not match truth {truth.shape}")
        ok = mask & np.all(np.isfinite(est), axis=0)
        r = rmse_per_acquisition(est.astype(float), truth.astype(float), mask=ok)
        rows.extend((key, i, v) for i, v in enumerate(r))
    path = write_csv(Path(args.out) / "rmse.csv", ["product", "acquisition", "rmse"], rows)
    means = {k: np.mean([r[2] for r in rows if r[0] == k]) for k in meta.get("pairs", [])}
    print("evaluate: " + ", ".join(f"{k} mean RMSE {v:.4f}" for k, v in means.items()) + f"; wrote {path}")


def cmd_power(args, cfg):
    pc = cfg.power
    series = coherence_series(pc.n_points, pc.p_range, pc.tau_range)
    ref_side = args.reference or pc.reference
    ref = series[-1] if ref_side == "high" else series[0]
    seed = cfg.pipeline.seed if args.seed is None else args.seed
    curve = power_experiment(ref, series, args.alpha, args.sided, args.trials or pc.n_trials, np.random.default_rng(seed), n=pc.n_acquisitions)
    rows = [(curve.sided, p, t, g, pw) for (p, t), g, pw in zip(curve.params, curve.gap, curve.power)]
    path = write_csv(Path(args.out) / "power.csv", ["sided", "p_const", "tau", "coherence_gap", "power"], rows)
    print(f"power: {len(rows)} points, max power {curve.power.max():.3f}, wrote {path}")


def cmd_sgrid(args, cfg):
    g = cfg.sgrid
    seed = cfg.pipeline.seed if args.seed is None else args.seed
    res = s_grid_experiment(list(g.n_list), list(g.xi_list), args.samples or g.samples_per_cell, np.random.default_rng(seed), repeats=args.repeats or g.repeats)
    rows = [(r.n, r.xi, r.repeat, r.s, int(r.at_bound)) for r in res]
    path = write_csv(Path(args.out) / "sgrid.csv", ["n", "xi", "repeat", "s", "at_bound"], rows)
    print(f"sgrid: {len(rows)} fits, wrote {path}")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args) if args.command != "evaluate" else Config()
        if args.command == "simulate":
            cmd_simulate(args, cfg)
        elif args.command in ("select", "estimate", "link"):
            cmd_pipeline(args, cfg, args.command)
        elif args.command == "evaluate":
            cmd_evaluate(args, cfg)
        elif args.command == "power":
            cmd_power(args, cfg)
        elif args.command == "sgrid":
            cmd_sgrid(args, cfg)
    except (ConfigError, FormatError, ParameterError) as exc:
        print(f"s2s {args.command}: invalid input: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"s2s {args.command}: failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
