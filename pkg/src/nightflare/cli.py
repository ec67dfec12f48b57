"""Command-line front end: ``nightflare {synth,masks,deglow,deghost,joint,eval}``.

Every command reads PNG/PPM inputs, writes into ``--out`` and, with
``--json``, prints one machine-readable JSON document on stdout. Exit codes
are 0 on success, 1 when a pipeline stage fails and 2 for usage errors.
"""

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import raster
from .errors import FlareError, PipelineError
from .formation import OpticalConfig, synth_pair
from .lightsource import extract_light_mask
from .ostpm import derive_ghost_mask, inpaint
from .psf import BolParams, kernel_to_json
from .scenes import night_scene
from .solver import SolverConfig, run

log = logging.getLogger("nightflare")

IMAGE_EXTS = (".png", ".ppm", ".pgm", ".pnm")
# suffixes stripped when pairing result files with ground truth
KNOWN_SUFFIXES = ("_flare", "_gt", "_D", "_L", "_y")


class UsageError(Exception):
    pass


# -- config and JSON helpers ---------------------------------------------------

def load_config(path):
    """Read a JSON config with optional ``optics``, ``bol`` and ``solver`` sections."""
    doc = {}
    if path:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
    unknown = set(doc) - {"optics", "bol", "solver"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    try:
        optics = OpticalConfig.from_dict(doc.get("optics", {}))
        bol = BolParams.from_dict(doc.get("bol", {}))
        solver = SolverConfig.from_dict(doc.get("solver", {}))
    except (FlareError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    return optics, bol, solver


def jsonable(x):
    """Replace non-finite floats by string sentinels so the output is strict JSON."""
    if isinstance(x, dict):
        return {k: jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_json(doc, path):
    with open(path, "w") as fh:
        json.dump(jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def collect_inputs(items):
    files = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            files.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in IMAGE_EXTS))
        elif p.is_file():
            files.append(p)
        else:
            raise UsageError(f"input not found: {item}")
    return files


def base_stem(path):
    stem = Path(path).stem
    for suffix in KNOWN_SUFFIXES:
        if stem.endswith(suffix):
            return stem[: -len(suffix)]
    return stem


def find_gt(gt_dir, path):
    if gt_dir is None:
        return None
    base = base_stem(path)
    for name in (f"{base}_gt", base, Path(path).stem):
        for ext in IMAGE_EXTS:
            cand = Path(gt_dir) / (name + ext)
            if cand.is_file():
                return cand
    log.warning("no ground truth for %s in %s", path, gt_dir)
    return None


class Output:
    """Output directory guard: refuses to overwrite unless ``force`` is set."""

    def __init__(self, root, force):
        self.root = Path(root)
        self.force = force
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name):
        p = self.root / name
        if p.exists() and not self.force:
            raise UsageError(f"{p} exists; pass --force to overwrite")
        return p


# -- per-image workers ---------------------------------------------------------
# Workers are module-level functions so a process pool can pickle them.

def _synth_one(job):
    src, stem, seed, optics, out, force = job
    o = Output(out, force)
    clean = raster.load_image(src) if src is not None else night_scene(seed=seed)[0]
    flared, gt, scene = synth_pair(clean, optics, seed)
    paths = o.path(f"{stem}_flare.png"), o.path(f"{stem}_gt.png"), o.path(f"{stem}_meta.json")
    raster.save_image(flared, paths[0])
    raster.save_image(gt, paths[1])
    write_json(scene.meta, paths[2])
    return {"input": stem, "seed": seed, "gamma": scene.meta["gamma"],
            "flare": str(paths[0]), "gt": str(paths[1])}


def _masks_one(job):
    path, solver, optics, out, force = job
    o = Output(out, force)
    r = raster.load_image(path)
    det = extract_light_mask(r, solver.percentile, solver.min_area)
    center = optics.resolve_center(r.shape)
    m_r = derive_ghost_mask(det.mask, center, solver.ghost_dilation) * (det.mask <= 0)
    stem = Path(path).stem
    raster.save_mask(det.mask, o.path(f"{stem}_ms.png"))
    raster.save_mask(m_r, o.path(f"{stem}_mr.png"))
    return {"input": stem, "n_sources": len(det.components), "threshold": det.threshold_used,
            "source_pixels": int(det.mask.sum()), "ghost_pixels": int(m_r.sum()),
            "centroids": [list(c.centroid) for c in det.components]}


def _debug_hook(out, stem):
    folder = out / f"{stem}_debug"
    folder.mkdir(exist_ok=True)
    count = [0]

    def hook(state, p):
        from .ostpm import confidence_term, data_term
        overlay = state.image.copy()
        for q in state.front:
            overlay[q] = (1.0, 0.0, 0.0)
        heat = np.zeros(state.fill_mask.shape)
        for q in state.front:
            heat[q] = confidence_term(state, q) * data_term(state.front_isophote(q), state.front_normal(q))
        if heat.max() > 0:
            heat /= heat.max()
        raster.save_image(overlay, folder / f"front_{count[0]:04d}.png")
        raster.save_image(heat[:, :, None], folder / f"priority_{count[0]:04d}.png")
        count[0] += 1

    return hook


def _deghost_one(job):
    path, gt_path, solver, optics, out, force, debug = job
    o = Output(out, force)
    r = raster.load_image(path)
    stem = Path(path).stem
    det = extract_light_mask(r, solver.percentile, solver.min_area)
    try:
        m_r = derive_ghost_mask(det.mask, optics.resolve_center(r.shape), solver.ghost_dilation)
        m_r = m_r * (det.mask <= 0)
        hook = _debug_hook(o.root, stem) if debug else None
        y = inpaint(r, m_r, solver.patch_radius, solver.search_window, on_iter=hook)
    except FlareError as exc:
        raise PipelineError("inpaint", exc) from exc
    raster.save_image(y, o.path(f"{base_stem(path)}_y.png"))
    rec = {"input": stem, "psnr_in": None, "psnr_out": None, "ssim_in": None, "ssim_out": None}
    if gt_path is not None:
        gt = raster.load_image(gt_path)
        rec.update(psnr_in=raster.psnr(r, gt), psnr_out=raster.psnr(y, gt),
                   ssim_in=raster.ssim(r, gt), ssim_out=raster.ssim(y, gt))
    return rec


def _joint_one(job):
    path, gt_path, solver, optics, bol, out, force, timings = job
    o = Output(out, force)
    r = raster.load_image(path)
    gt = raster.load_image(gt_path) if gt_path is not None else None
    stem = base_stem(path)
    res = run(r, solver, optics, bol, gt=gt, name=Path(path).name, record_timings=timings)
    raster.save_image(res.restored, o.path(f"{stem}_D.png"))
    raster.save_image(res.glow, o.path(f"{stem}_L.png"))
    raster.save_image(res.pseudo_target, o.path(f"{stem}_y.png"))
    kernel_to_json(res.kernel, o.path(f"{stem}_kernel.json"))
    write_json(res.report, o.path(f"{stem}_report.json"))
    summary = {k: v for k, v in res.report.items() if k != "loss_history"}
    summary["final_loss"] = res.report["loss_history"][-1] if res.report["loss_history"] else None
    return summary


def _pool_map(fn, jobs, n_jobs):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, jobs))


def _mean(records, key):
    vals = [r[key] for r in records if r.get(key) is not None]
    return float(np.mean(vals)) if vals else None


def _aggregate(records):
    return {k: _mean(records, k) for k in ("psnr_in", "psnr_out", "ssim_in", "ssim_out")}


# -- commands ------------------------------------------------------------------

def cmd_synth(args, optics, bol, solver):
    files = collect_inputs(args.inputs)
    if args.generate:
        jobs = [(None, f"scene_{i:02d}", args.seed + i, optics, args.out, args.force)
                for i in range(args.generate)]
    elif files:
        jobs = [(f, f.stem, args.seed + i, optics, args.out, args.force) for i, f in enumerate(files)]
    else:
        raise UsageError("synth needs clean input images or --generate N")
    records = _pool_map(_synth_one, jobs, args.jobs)
    return {"command": "synth", "seed": args.seed, "images": records}


def cmd_masks(args, optics, bol, solver):
    files = _require(args)
    records = _pool_map(_masks_one, [(f, solver, optics, args.out, args.force) for f in files], args.jobs)
    return {"command": "masks", "images": records}


def cmd_deghost(args, optics, bol, solver):
    files = _require(args)
    jobs = [(f, find_gt(args.gt, f), solver, optics, args.out, args.force, args.debug_dumps)
            for f in files]
    records = _pool_map(_deghost_one, jobs, args.jobs)
    return {"command": "deghost", "images": records, "mean": _aggregate(records)}


def _solve(args, optics, bol, solver, name):
    files = _require(args)
    report = Output(args.out, args.force).path("report.json")
    jobs = [(f, find_gt(args.gt, f), solver, optics, bol, args.out, args.force, args.timings)
            for f in files]
    records = _pool_map(_joint_one, jobs, args.jobs)
    doc = {"command": name, "seed": solver.seed, "images": records, "mean": _aggregate(records)}
    write_json(doc, report)
    return doc


def cmd_joint(args, optics, bol, solver):
    return _solve(args, optics, bol, solver, "joint")


def cmd_deglow(args, optics, bol, solver):
    solver.use_ostpm = False
    return _solve(args, optics, bol, solver, "deglow")


def cmd_eval(args, optics, bol, solver):
    if args.gt is None:
        raise UsageError("eval needs --gt DIR")
    files = _require(args)
    out = Output(args.out, args.force)
    json_path, text_path = out.path("metrics.json"), out.path("metrics.txt")
    rows, skipped = [], []
    for f in files:
        g = find_gt(args.gt, f)
        if g is None:
            skipped.append(str(f))
            continue
        a, b = raster.load_image(f), raster.load_image(g)
        if a.shape != b.shape:
            log.warning("shape mismatch for %s, skipped", f)
            skipped.append(str(f))
            continue
        rows.append({"input": f.name, "gt": g.name, "psnr": raster.psnr(a, b), "ssim": raster.ssim(a, b)})
    if skipped:
        log.warning("%d unmatched file(s) skipped", len(skipped))
    if not rows:
        raise UsageError("no result file could be paired with ground truth")
    mean = {"psnr": float(np.mean([r["psnr"] for r in rows])), "ssim": float(np.mean([r["ssim"] for r in rows]))}
    doc = {"command": "eval", "images": rows, "mean": mean, "skipped": skipped, "warnings": len(skipped)}
    write_json(doc, json_path)
    with open(text_path, "w") as fh:
        fh.write(format_table(rows, mean))
    return doc


def format_table(rows, mean):
    width = max([len(r["input"]) for r in rows] + [4])
    lines = [f"{'image':<{width}}  {'PSNR':>8}  {'SSIM':>7}"]
    for r in rows + [dict(input="mean", **mean)]:
        lines.append(f"{r['input']:<{width}}  {r['psnr']:>8.3f}  {r['ssim']:>7.4f}")
    return "\n".join(lines) + "\n"


def _require(args):
    files = collect_inputs(args.inputs)
    if not files:
        raise UsageError(f"{args.command} needs at least one input image")
    return files


COMMANDS = {
    "synth": (cmd_synth, "synthesize flared/clean pairs from clean images"),
    "masks": (cmd_masks, "write light-source and ghost-region masks"),
    "deglow": (cmd_deglow, "glow removal only (ghost stage disabled)"),
    "deghost": (cmd_deghost, "ghost removal only (inpainted pseudo-target)"),
    "joint": (cmd_joint, "joint glow and ghost removal"),
    "eval": (cmd_eval, "PSNR/SSIM of result images against ground truth"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("inputs", nargs="*", help="image files or directories")
    common.add_argument("--config", help="JSON file with optics/bol/solver sections")
    common.add_argument("--seed", type=int, default=None, help="base seed (default: config or 0)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--gt", default=None, help="directory of ground-truth images")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--json", action="store_true", help="print a JSON summary on stdout")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--debug-dumps", action="store_true", help="dump inpainting front/priority images")
    common.add_argument("--timings", action="store_true", help="record per-stage wall times in reports")

    parser = argparse.ArgumentParser(prog="nightflare", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=text)
        if name == "synth":
            p.add_argument("--generate", type=int, default=0, metavar="N",
                           help="use N generated night scenes instead of input files")
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("FLARE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        optics, bol, solver = load_config(args.config)
        if args.seed is None:
            args.seed = solver.seed
        solver.seed = args.seed
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        doc = COMMANDS[args.command][0](args, optics, bol, solver)
    except UsageError as exc:
        print(f"nightflare: error: {exc}", file=sys.stderr)
        return 2
    except (FlareError, OSError) as exc:
        print(f"nightflare: {exc}", file=sys.stderr)
        return 1
    if args.json:
        json.dump(jsonable(doc), sys.stdout, sort_keys=True)
        sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
