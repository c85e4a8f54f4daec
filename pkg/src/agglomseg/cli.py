"""Command-line entry point: ``agglomseg <command> [--flags]``.

Every command writes ``<command>_config.json`` with its fully resolved
settings into ``--out-dir``. A JSON file given with ``--config`` supplies
values for any flag (keys are the flag names with dashes or underscores);
flags given on the command line win.

Exit codes: 0 ok, 2 usage or shape error, 3 I/O error, 4 model or data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import volumeio
from .agglomerate import DELAYED, STANDARD
from .context import ContextConfig, partition_superpixels, run_context_on_graph
from .evaluate import evaluate, write_metrics_csv
from .features import feature_length
from .predictor import SingleClassError, iterative_train, load_forest, save_forest
from .rag import DEFAULT_CHANNELS, ProbabilityStack, build_rag
from .synth import SynthParams, synth_generate
from .watershed import watershed

log = logging.getLogger("agglomseg")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_MODEL = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


# argument types --------------------------------------------------------------

def int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def float_pair(text):
    try:
        vals = [float(v) for v in str(text).split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo,hi got {text!r}")
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected lo,hi got {text!r}")
    return vals


def on_off(text):
    v = str(text).lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on|off, got {text!r}")


def delta_sweep(text):
    """``0.2``, ``0.1,0.15,0.2`` or ``start:stop:step`` (stop inclusive)."""
    text = str(text)
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            vals = [round(start + i * step, 12) for i in range(max(n, 0))]
        else:
            vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad delta sweep {text!r}")
    if not vals or any(not 0 <= v <= 1 for v in vals):
        raise argparse.ArgumentTypeError(f"deltas must lie in [0, 1]: {text!r}")
    return vals


# defaults and parser ---------------------------------------------------------

DEFAULTS = {
    "config": None,
    "log_level": "warning",
    # synth
    "dims": list(SynthParams.dims),
    "n_cells": SynthParams.n_cells,
    "mito_per_cell": list(SynthParams.mito_per_cell),
    "mito_radius": list(SynthParams.mito_radius),
    "blur_sigma": SynthParams.boundary_blur_sigma,
    "noise_sigma": SynthParams.noise_sigma,
    "noise_correlation": SynthParams.noise_correlation,
    "membrane_strength": list(SynthParams.membrane_strength),
    "mito_boundary_leak": SynthParams.mito_boundary_leak,
    "background": SynthParams.background,
    "cristae": SynthParams.cristae,
    "cristae_period": SynthParams.cristae_period,
    "seed": 0,
    # inputs
    "labels": None,
    "gt": None,
    "channels_dir": None,
    "boundary": None,
    "forest": None,
    "seg": None,
    "image": None,
    # algorithm
    "theta_seed": 0.1,
    "theta_mito": 0.5,
    "delta_c": [0.2],
    "delta_m": 0.8,
    "policy": DELAYED,
    "context": True,
    "lazy": False,
    "estimator": "forest",
    # training
    "n_trees": 50,
    "max_depth": 20,
    "iterations": 1,
    "accumulate": False,
    "train_delta": 0.5,
    "train_seed": None,
    # overlay
    "alpha": 0.5,
}

COMMANDS = ("synth", "watershed", "train", "segment", "eval", "overlay", "pipeline")


def _add(p, name, **kw):
    p.add_argument("--" + name.replace("_", "-"), dest=name, default=argparse.SUPPRESS, **kw)


def _synth_flags(p):
    _add(p, "dims", type=int_list, help="grid extents, e.g. 128,128 or 32,64,64")
    _add(p, "n_cells", type=int)
    _add(p, "mito_per_cell", type=float_pair, help="lo,hi blob count per cell")
    _add(p, "mito_radius", type=float_pair, help="lo,hi blob radius in voxels")
    _add(p, "blur_sigma", type=float)
    _add(p, "noise_sigma", type=float)
    _add(p, "noise_correlation", type=float)
    _add(p, "membrane_strength", type=float_pair)
    _add(p, "mito_boundary_leak", type=float)
    _add(p, "background", type=float)
    _add(p, "cristae", type=float)
    _add(p, "cristae_period", type=float)


def _context_flags(p):
    _add(p, "theta_mito", type=float)
    _add(p, "context", type=on_off, help="on|off")


def _segment_flags(p):
    _add(p, "delta_c", type=delta_sweep, help="0.2, a list 0.1,0.2 or a sweep 0.10:0.20:0.02")
    _add(p, "delta_m", type=float)
    _add(p, "policy", choices=(STANDARD, DELAYED))
    _add(p, "lazy", type=on_off, help="on|off")
    _add(p, "estimator", choices=("forest", "mean"))


def _train_flags(p):
    _add(p, "n_trees", type=int)
    _add(p, "max_depth", type=int)
    _add(p, "iterations", type=int)
    _add(p, "accumulate", type=on_off, help="on|off")
    _add(p, "train_delta", type=float, help="stopping threshold of the training passes")


def build_parser():
    parser = argparse.ArgumentParser(prog="agglomseg", allow_abbrev=False,
                                     description="Context-aware delayed agglomerative segmentation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help):
        p = sub.add_parser(name, help=help, allow_abbrev=False)
        p.add_argument("--out-dir", dest="out_dir", required=True, help="existing output directory")
        _add(p, "config", help="JSON file of flag values (explicit flags win)")
        _add(p, "log_level", choices=("debug", "info", "warning", "error"))
        _add(p, "seed", type=int)
        return p

    p = command("synth", "generate a synthetic volume with ground truth")
    _synth_flags(p)

    p = command("watershed", "over-segment a boundary channel")
    _add(p, "boundary", help="boundary channel .segv")
    _add(p, "theta_seed", type=float)

    p = command("train", "train a boundary forest")
    _add(p, "labels", help="over-segmentation .segv")
    _add(p, "gt", help="ground-truth .segv")
    _add(p, "channels_dir", help="directory holding <channel>.segv files")
    _context_flags(p)
    _train_flags(p)

    p = command("segment", "agglomerate an over-segmentation")
    _add(p, "labels")
    _add(p, "channels_dir")
    _add(p, "forest", help="forest JSON (not needed with --estimator mean)")
    _add(p, "gt", help="optional ground truth; writes metrics.csv")
    _context_flags(p)
    _segment_flags(p)

    p = command("eval", "split VI / split Rand error of a segmentation")
    _add(p, "seg")
    _add(p, "gt")

    p = command("overlay", "write random-colour overlays, one PPM per z-plane")
    _add(p, "seg")
    _add(p, "image", help="optional grey-level channel .segv under the colours")
    _add(p, "alpha", type=float)

    p = command("pipeline", "synth, watershed, train, segment and eval in one go")
    _synth_flags(p)
    _add(p, "theta_seed", type=float)
    _add(p, "train_seed", type=int, help="seed of the training volume (default seed + 1000)")
    _context_flags(p)
    _train_flags(p)
    _segment_flags(p)
    return parser


def resolve(args):
    """Merge defaults < JSON config < explicit flags."""
    explicit = {k: v for k, v in vars(args).items()}
    cfg = dict(DEFAULTS)
    path = explicit.get("config")
    if path:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read config {path}: {exc}")
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_USAGE, f"config {path} is not valid JSON: {exc}")
        if not isinstance(loaded, dict):
            raise CliError(EXIT_USAGE, f"config {path} must hold a JSON object")
        for k, v in loaded.items():
            key = k.replace("-", "_")
            if key in ("command", "out_dir"):
                continue
            if key not in DEFAULTS:
                raise CliError(EXIT_USAGE, f"unknown config key {k!r} in {path}")
            cfg[key] = _coerce(key, v)
    cfg.update(explicit)
    return cfg


_COERCE = {"dims": int_list, "mito_per_cell": float_pair, "mito_radius": float_pair,
           "membrane_strength": float_pair, "delta_c": delta_sweep, "context": on_off,
           "lazy": on_off, "accumulate": on_off}


def _coerce(key, value):
    f = _COERCE.get(key)
    if f is None or value is None:
        return value
    if isinstance(value, bool) or (isinstance(value, list) and key != "delta_c"):
        return value
    if isinstance(value, list):
        return [float(v) for v in value]
    try:
        return f(value)
    except argparse.ArgumentTypeError as exc:
        raise CliError(EXIT_USAGE, f"config key {key}: {exc}")


# helpers ---------------------------------------------------------------------

def _out_path(cfg, name):
    return os.path.join(cfg["out_dir"], name)


def _require(cfg, *keys):
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise CliError(EXIT_USAGE, f"{cfg['command']}: missing required {flags}")


def _read(path):
    try:
        return volumeio.read_volume(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}")
    except volumeio.VolumeFormatError as exc:
        raise CliError(EXIT_IO, f"{path}: {exc}")


def _write(vol, path):
    try:
        volumeio.write_volume(vol, path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}")


def _write_json(doc, path):
    try:
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}")


def _read_channels(directory, shape):
    data = {}
    for c in DEFAULT_CHANNELS:
        arr = _read(os.path.join(directory, c + ".segv"))
        if arr.shape != shape:
            raise CliError(EXIT_USAGE, f"channel {c} has shape {arr.shape}, labels {shape}")
        data[c] = arr
    try:
        return ProbabilityStack(DEFAULT_CHANNELS, data)
    except ValueError as exc:
        raise CliError(EXIT_MODEL, str(exc))


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise CliError(EXIT_USAGE, f"{what}: shape mismatch {a.shape} vs {b.shape}")


def synth_params(cfg, seed=None):
    try:
        return SynthParams(
            dims=tuple(cfg["dims"]), n_cells=cfg["n_cells"],
            mito_per_cell=tuple(cfg["mito_per_cell"]), mito_radius=tuple(cfg["mito_radius"]),
            boundary_blur_sigma=cfg["blur_sigma"], noise_sigma=cfg["noise_sigma"],
            seed=cfg["seed"] if seed is None else seed,
            noise_correlation=cfg["noise_correlation"],
            membrane_strength=tuple(cfg["membrane_strength"]),
            mito_boundary_leak=cfg["mito_boundary_leak"], background=cfg["background"],
            cristae=cfg["cristae"], cristae_period=cfg["cristae_period"])
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_USAGE, f"bad synth parameters: {exc}")


def _fmt_delta(d):
    return f"{d:.4f}".rstrip("0").rstrip(".") if d else "0"


# commands --------------------------------------------------------------------

def write_synth(vol, directory):
    _write(vol.cells, os.path.join(directory, "gt.segv"))
    _write(vol.mito, os.path.join(directory, "mito.segv"))
    for c in DEFAULT_CHANNELS:
        _write(vol.probs[c], os.path.join(directory, c + ".segv"))


def cmd_synth(cfg):
    p = synth_params(cfg)
    vol = synth_generate(p)
    write_synth(vol, cfg["out_dir"])
    return {"cells": int(vol.cells.max()), "mito_blobs": len(vol.blob_cell)}


def cmd_watershed(cfg):
    _require(cfg, "boundary")
    prob = _read(cfg["boundary"])
    try:
        labels = watershed(prob, cfg["theta_seed"])
    except ValueError as exc:
        raise CliError(EXIT_MODEL, str(exc))
    _write(labels.astype(np.uint32), _out_path(cfg, "overseg.segv"))
    return {"regions": int(labels.max())}


def _load_graph(cfg):
    labels = _read(cfg["labels"]).astype(np.int64)
    probs = _read_channels(cfg["channels_dir"], labels.shape)
    try:
        return labels, probs, build_rag(labels, probs)
    except ValueError as exc:
        raise CliError(EXIT_MODEL, str(exc))


def train_model(cfg, labels, gt, g0):
    if cfg["context"]:
        partition_superpixels(g0, cfg["theta_mito"])
    try:
        return iterative_train(g0, labels, gt, cfg["iterations"], cfg["accumulate"],
                               n_trees=cfg["n_trees"], max_depth=cfg["max_depth"],
                               seed=cfg["seed"], delta=cfg["train_delta"], context=cfg["context"])
    except SingleClassError as exc:
        raise CliError(EXIT_MODEL, f"cannot train: {exc}")
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc))


def cmd_train(cfg):
    _require(cfg, "labels", "gt", "channels_dir")
    labels, _, g0 = _load_graph(cfg)
    gt = _read(cfg["gt"]).astype(np.int64)
    _same_shape(labels, gt, "train")
    t0 = time.perf_counter()
    run = train_model(cfg, labels, gt, g0)
    for i, n in enumerate(run.rows_per_iteration, 1):
        log.info("training pass %d: %d rows", i, n)
    path = _out_path(cfg, "forest.json")
    try:
        save_forest(run.forest, path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}")
    summary = {"iterations": cfg["iterations"], "accumulate": cfg["accumulate"],
               "rows_per_iteration": run.rows_per_iteration}
    _write_json(summary, _out_path(cfg, "train_summary.json"))
    log.info("trained in %.2fs", time.perf_counter() - t0)
    return summary


def segment_volume(cfg, labels, probs, forest, gt=None):
    """Run the configured pipeline once per delta_c; write outputs; return metric rows."""
    rows = []
    estimator = "mean" if cfg["estimator"] == "mean" else None
    if estimator is None and forest is None:
        raise CliError(EXIT_USAGE, "segment: --forest is required unless --estimator mean")
    if forest is not None and forest.n_features != feature_length(len(probs.channels)):
        raise CliError(EXIT_MODEL, f"forest expects {forest.n_features} features, "
                                   f"data gives {feature_length(len(probs.channels))}")
    sweep = len(cfg["delta_c"]) > 1
    for dc in cfg["delta_c"]:
        cc = ContextConfig(theta_mito=cfg["theta_mito"], delta_c=dc, delta_m=cfg["delta_m"],
                           policy=cfg["policy"], lazy_updates=cfg["lazy"], context=cfg["context"])
        g = build_rag(labels, probs)
        res = run_context_on_graph(g, labels, forest, cc, estimator=estimator)
        suffix = f"_d{_fmt_delta(dc)}" if sweep else ""
        _write(res.labels.astype(np.uint32), _out_path(cfg, f"segmentation{suffix}.segv"))
        res.cyto_trace.to_csv(_out_path(cfg, f"cyto_trace{suffix}.csv"))
        res.mito_trace.to_csv(_out_path(cfg, f"mito_trace{suffix}.csv"))
        _write_json({"cyto": res.cyto_trace.counters(), "mito": res.mito_trace.counters()},
                    _out_path(cfg, f"counters{suffix}.json"))
        if gt is not None:
            rows.append({"delta": dc, **evaluate(res.labels, gt)})
    if gt is not None:
        write_metrics_csv(rows, _out_path(cfg, "metrics.csv"))
    return rows


def cmd_segment(cfg):
    _require(cfg, "labels", "channels_dir")
    labels, probs, _ = _load_graph(cfg)
    forest = None
    if cfg["forest"]:
        try:
            forest = load_forest(cfg["forest"])
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read {cfg['forest']}: {exc.strerror or exc}")
        except (ValueError, KeyError) as exc:
            raise CliError(EXIT_MODEL, f"bad forest file {cfg['forest']}: {exc}")
    gt = None
    if cfg["gt"]:
        gt = _read(cfg["gt"]).astype(np.int64)
        _same_shape(labels, gt, "segment")
    rows = segment_volume(cfg, labels, probs, forest, gt)
    return {"runs": len(cfg["delta_c"]), "metrics": rows}


def cmd_eval(cfg):
    _require(cfg, "seg", "gt")
    seg = _read(cfg["seg"]).astype(np.int64)
    gt = _read(cfg["gt"]).astype(np.int64)
    _same_shape(seg, gt, "eval")
    m = evaluate(seg, gt)
    write_metrics_csv([{"delta": None, **m}], _out_path(cfg, "metrics.csv"))
    return m


def region_colors(ids, seed):
    """Seed-deterministic RGB colour per region id (id 0 stays black)."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.zeros((ids.size, 3), dtype=np.uint8)
    for i, r in enumerate(ids.tolist()):
        if r:
            out[i] = np.random.default_rng([seed, r]).integers(40, 256, size=3)
    return out


def write_ppm(rgb, path):
    h, w, _ = rgb.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}")


def cmd_overlay(cfg):
    _require(cfg, "seg")
    seg = _read(cfg["seg"]).astype(np.int64)
    if seg.ndim == 2:
        seg = seg[None]
    elif seg.ndim != 3:
        raise CliError(EXIT_USAGE, f"overlay needs a 2D or 3D volume, got {seg.ndim}D")
    grey = None
    if cfg["image"]:
        grey = _read(cfg["image"]).astype(np.float64)
        if grey.ndim == 2:
            grey = grey[None]
        _same_shape(seg, grey, "overlay")
    ids, inv = np.unique(seg, return_inverse=True)
    colors = region_colors(ids, cfg["seed"])[inv.reshape(seg.shape)].astype(np.float64)
    if grey is not None:
        a = cfg["alpha"]
        base = np.clip(grey, 0, 1)[..., None] * 255.0
        colors = a * colors + (1 - a) * base
    rgb = np.rint(colors).astype(np.uint8)
    for z in range(seg.shape[0]):
        write_ppm(rgb[z], _out_path(cfg, f"overlay_z{z:03d}.ppm"))
    return {"planes": seg.shape[0]}


def cmd_pipeline(cfg):
    out = cfg["out_dir"]
    train_seed = cfg["train_seed"] if cfg["train_seed"] is not None else cfg["seed"] + 1000
    dirs = {k: os.path.join(out, k) for k in ("train_data", "test_data", "model", "segment")}
    for d in dirs.values():
        try:
            os.makedirs(d, exist_ok=True)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot create {d}: {exc.strerror or exc}")
    result = {}
    volumes = {}
    for name, seed in (("train_data", train_seed), ("test_data", cfg["seed"])):
        vol = synth_generate(synth_params(cfg, seed))
        write_synth(vol, dirs[name])
        try:
            ws = watershed(vol.probs["boundary"], cfg["theta_seed"])
        except ValueError as exc:
            raise CliError(EXIT_MODEL, str(exc))
        _write(ws.astype(np.uint32), os.path.join(dirs[name], "overseg.segv"))
        volumes[name] = (vol, ws)
        result[name] = {"seed": seed, "regions": int(ws.max())}

    vol, ws = volumes["train_data"]
    t0 = time.perf_counter()
    run = train_model(cfg, ws, vol.cells, build_rag(ws, vol.probs))
    result["train_seconds"] = time.perf_counter() - t0
    save_forest(run.forest, os.path.join(dirs["model"], "forest.json"))
    _write_json({"iterations": cfg["iterations"], "accumulate": cfg["accumulate"],
                 "rows_per_iteration": run.rows_per_iteration},
                os.path.join(dirs["model"], "train_summary.json"))

    vol, ws = volumes["test_data"]
    seg_cfg = dict(cfg, out_dir=dirs["segment"])
    forest = None if cfg["estimator"] == "mean" else run.forest
    result["metrics"] = segment_volume(seg_cfg, ws, vol.probs, forest, vol.cells)
    return result


HANDLERS = {"synth": cmd_synth, "watershed": cmd_watershed, "train": cmd_train,
            "segment": cmd_segment, "eval": cmd_eval, "overlay": cmd_overlay,
            "pipeline": cmd_pipeline}


def _echo(cfg):
    doc = {k: v for k, v in cfg.items() if k != "config"}
    _write_json(doc, _out_path(cfg, f"{cfg['command']}_config.json"))


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        cfg = resolve(args)
        logging.basicConfig(level=cfg["log_level"].upper(), format="%(levelname)s %(message)s")
        if not os.path.isdir(cfg["out_dir"]):
            raise CliError(EXIT_IO, f"output directory does not exist: {cfg['out_dir']}")
        _echo(cfg)
        HANDLERS[cfg["command"]](cfg)
    except CliError as exc:
        print(f"agglomseg {args.command}: error: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
