"""Sliding-window processing: SSHP selection, coherence estimation, linking.

The raster is cut into row tiles that are processed independently (in
worker processes when ``threads > 1``) and merged by tile index.  Every
pixel draws its random numbers from a generator keyed on
(seed, row, col), so products do not depend on the number of workers.
"""
from __future__ import annotations

import logging
import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .acaf import WindowSamples, select_sshp, window_rng
from .ces_core import (
    elliptical_kurtosis,
    normalize_to_coherence,
    sample_covariance,
    shrink_to_identity,
    tyler_estimate,
)
from .cgg import estimate_cgg
from .config import Config
from .errors import ConfigError, ConvergenceError, S2SError
from .phase_linking import cfpl_phases, cgg_mle_phases, phase_stat, pta_phases

log = logging.getLogger(__name__)

# diagnostics bit flags
DIAG_FALLBACK = 1
DIAG_REVERSAL = 2
DIAG_ESTIMATOR = 4
DIAG_LINKER = 8
DIAG_FAILED = 16
DIAG_SKIPPED = 32


def resolve_threads(threads=None):
    """Explicit value, else ``S2S_THREADS``, else 1."""
    if threads is not None:
        return int(threads)
    env = os.environ.get("S2S_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"S2S_THREADS must be an integer, got {env!r}") from exc
    return 1


def pair_name(estimator, method):
    return f"{estimator}-{method}"


@dataclass
class ProductSet:
    sshp_count: np.ndarray  # int32 (rows, cols)
    mean_coherence: dict  # estimator -> float (rows, cols)
    s_map: np.ndarray  # float, nan where not estimated
    phases: dict  # "estimator-method" -> (N, rows, cols)
    phase_stat: dict  # "estimator-method" -> (rows, cols)
    diagnostics: np.ndarray  # uint8 bit flags
    reversals: np.ndarray  # int32
    masks: np.ndarray | None = None  # uint8 (rows, cols, window*window)
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.sshp_count.shape


def _estimate(z, estimator, cfg):
    """Scatter, coherence and (for CGG) the shape parameter of one sample set."""
    L, n = z.shape
    s = np.nan
    ok = True
    if estimator == "cgg":
        fit = estimate_cgg(z, cfg.cgg)
        scatter, s, ok = fit.scatter, fit.s, fit.converged
        kappa = 0.0
    elif estimator == "tyler":
        kappa = 0.0
        try:
            scatter = tyler_estimate(z)
        except ConvergenceError as exc:
            scatter, ok = exc.last, False
        except S2SError:
            scatter, ok = sample_covariance(z), False
    else:
        scatter = sample_covariance(z)
        kappa = elliptical_kurtosis(z)
    shrunk = shrink_to_identity(scatter, "auto", n_samples=L, kurtosis=kappa)
    gamma = normalize_to_coherence(shrunk)
    return scatter, gamma, s, ok


def _link(method, z, gamma, scatter, s, cfg):
    lc = cfg.phase_linking
    mag = np.abs(gamma)
    if method == "cfpl":
        return cfpl_phases(gamma, mag, tol=lc.mm_tol, max_iter=lc.mm_max_iter, strict=False)
    if method == "pta":
        return pta_phases(gamma, mag, gtol=lc.gtol, max_iter=lc.max_iter)
    shape = 1.0 if not np.isfinite(s) else s
    scale = np.real(np.diag(scatter))
    init = cfpl_phases(gamma, mag, tol=lc.mm_tol, max_iter=lc.mm_max_iter, strict=False).theta
    return cgg_mle_phases(z, mag, shape, scale=scale, init=init, gtol=lc.gtol, max_iter=lc.max_iter)


def process_pixel(stack, row, col, cfg, pairs=None, level="link"):
    """All products of one pixel as a plain dict.

    ``level`` is ``select``, ``estimate`` or ``link`` and stops after that stage.
    """
    pc = cfg.pipeline
    pairs = pairs or pc.pairs()
    win = WindowSamples.from_stack(stack, row, col, pc.window)
    mask = select_sshp(win, cfg.acaf, window_rng(pc.seed, row, col))
    sel = mask.selected.ravel()
    z = win.vectors[sel]
    z = z[np.linalg.norm(z, axis=1) > 0]
    out = {"count": int(sel.sum()), "reversals": mask.reversals, "diag": 0, "mask": mask.selected, "phases": {}, "stat": {}, "coh": {}, "s": np.nan}
    if mask.fallback_triggered:
        out["diag"] |= DIAG_FALLBACK
    if mask.reversals:
        out["diag"] |= DIAG_REVERSAL
    if level == "select":
        return out
    ref = stack[:, row, col]
    estimates = {}
    for est, meth in pairs:
        if est not in estimates:
            try:
                if z.shape[0] < 2:
                    raise S2SError("fewer than two usable samples")
                estimates[est] = _estimate(z, est, cfg)
            except (S2SError, np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
                log.debug("estimator %s failed at (%d, %d): %s", est, row, col, exc)
                estimates[est] = None
                out["diag"] |= DIAG_FAILED
                continue
            scatter, gamma, s, ok = estimates[est]
            if not ok:
                out["diag"] |= DIAG_ESTIMATOR
            g = np.abs(gamma)
            iu = np.triu_indices(g.shape[0], 1)
            out["coh"][est] = float(g[iu].mean())
            if est == "cgg":
                out["s"] = s
        if estimates[est] is None or level == "estimate":
            continue
        scatter, gamma, s, _ = estimates[est]
        try:
            res = _link(meth, z, gamma, scatter, s, cfg)
        except (S2SError, np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            log.debug("linker %s failed at (%d, %d): %s", meth, row, col, exc)
            out["diag"] |= DIAG_FAILED
            continue
        if not res.converged:
            out["diag"] |= DIAG_LINKER
        key = pair_name(est, meth)
        out["phases"][key] = res.theta
        out["stat"][key] = phase_stat(ref, res.theta) if np.all(ref != 0) else np.nan
    return out


_STACK = None


def _init_worker(stack):
    global _STACK
    _STACK = stack


def _tile_job(args):
    return _process_tile(_STACK, *args)


def _process_tile(stack, r0, r1, cfg, pixel_mask, level="link"):
    n, _, cols = stack.shape
    pairs = cfg.pipeline.pairs()
    rows = r1 - r0
    w2 = cfg.pipeline.window**2
    t = {
        "count": np.zeros((rows, cols), np.int32),
        "reversals": np.zeros((rows, cols), np.int32),
        "diag": np.zeros((rows, cols), np.uint8),
        "s": np.full((rows, cols), np.nan),
        "coh": {e: np.full((rows, cols), np.nan) for e in dict(pairs)},
        "phases": {pair_name(*p): np.full((n, rows, cols), np.nan) for p in pairs},
        "stat": {pair_name(*p): np.full((rows, cols), np.nan) for p in pairs},
        "mask": np.zeros((rows, cols, w2), np.uint8) if cfg.pipeline.write_masks else None,
    }
    for r in range(r0, r1):
        for c in range(cols):
            i = r - r0
            if pixel_mask is not None and not pixel_mask[r, c]:
                t["diag"][i, c] = DIAG_SKIPPED
                continue
            try:
                px = process_pixel(stack, r, c, cfg, pairs, level)
            except (S2SError, np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
                log.warning("pixel (%d, %d) failed: %s", r, c, exc)
                t["diag"][i, c] = DIAG_FAILED
                continue
            t["count"][i, c] = px["count"]
            t["reversals"][i, c] = px["reversals"]
            t["diag"][i, c] = px["diag"]
            t["s"][i, c] = px["s"]
            for e, v in px["coh"].items():
                t["coh"][e][i, c] = v
            for k, v in px["phases"].items():
                t["phases"][k][:, i, c] = v
            for k, v in px["stat"].items():
                t["stat"][k][i, c] = v
            if t["mask"] is not None:
                m = _pad_mask(px["mask"], stack.shape[1:], r, c, cfg.pipeline.window)
                t["mask"][i, c] = m.ravel()
    return t


def _pad_mask(mask, raster_shape, row, col, size):
    """Place an edge-clipped window mask into a full ``size`` x ``size`` grid."""
    h = size // 2
    full = np.zeros((size, size), np.uint8)
    r0, c0 = max(0, row - h), max(0, col - h)
    dr, dc = r0 - (row - h), c0 - (col - h)
    full[dr : dr + mask.shape[0], dc : dc + mask.shape[1]] = mask
    return full


def stride_mask(shape, stride, offset=None):
    """Pixels on a regular grid with spacing ``stride``."""
    off = stride // 2 if offset is None else offset
    m = np.zeros(shape, bool)
    m[off::stride, off::stride] = True
    return m


def run_pipeline(stack, config=None, threads=None, pixel_mask=None, level="link"):
    """Run selection, estimation and linking over every pixel of ``stack``.

    Parameters
    ----------
    stack : ndarray (N, rows, cols) or SLCStack
    config : Config, optional
    threads : int, optional
        Worker processes; defaults to ``config.pipeline.threads`` or
        ``S2S_THREADS``.
    pixel_mask : bool ndarray (rows, cols), optional
        Only these pixels are processed; others get the skipped flag.
        ``config.pipeline.stride > 1`` builds such a mask.
    level : {'link', 'estimate', 'select'}
        Last stage to run; later products stay empty (NaN).

    Returns
    -------
    ProductSet
    """
    cfg = config or Config()
    cfg.pipeline.validate()
    if level not in ("select", "estimate", "link"):
        raise ConfigError(f"unknown level {level!r}")
    data = np.asarray(getattr(stack, "data", stack))
    if data.ndim != 3:
        raise ConfigError(f"stack must be (N, rows, cols), got shape {data.shape}")
    n, rows, cols = data.shape
    if n < 2:
        raise ConfigError("need at least two acquisitions")
    if pixel_mask is None and cfg.pipeline.stride > 1:
        pixel_mask = stride_mask((rows, cols), cfg.pipeline.stride)
    if pixel_mask is not None and np.shape(pixel_mask) != (rows, cols):
        raise ConfigError("pixel mask does not match the raster")
    if threads is None and cfg.pipeline.threads > 1:
        threads = cfg.pipeline.threads
    workers = resolve_threads(threads)
    step = cfg.pipeline.tile_rows
    jobs = [(r0, min(rows, r0 + step), cfg, pixel_mask, level) for r0 in range(0, rows, step)]
    if workers == 1 or len(jobs) == 1:
        tiles = [_process_tile(data, *j) for j in jobs]
    else:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=_init_worker, initargs=(data,)) as ex:
            tiles = list(ex.map(_tile_job, jobs))
    return _merge(tiles, cfg)


def _merge(tiles, cfg):
    cat = lambda key: np.concatenate([t[key] for t in tiles], axis=0)  # noqa: E731
    pairs = cfg.pipeline.pairs()
    phases = {k: np.concatenate([t["phases"][k] for t in tiles], axis=1) for k in tiles[0]["phases"]}
    stat = {k: np.concatenate([t["stat"][k] for t in tiles], axis=0) for k in tiles[0]["stat"]}
    coh = {e: np.concatenate([t["coh"][e] for t in tiles], axis=0) for e in tiles[0]["coh"]}
    masks = cat("mask") if tiles[0]["mask"] is not None else None
    return ProductSet(
        sshp_count=cat("count"),
        mean_coherence=coh,
        s_map=cat("s"),
        phases=phases,
        phase_stat=stat,
        diagnostics=cat("diag"),
        reversals=cat("reversals"),
        masks=masks,
        meta={"pairs": [pair_name(*p) for p in pairs], "window": cfg.pipeline.window, "seed": cfg.pipeline.seed},
    )
