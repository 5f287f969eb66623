"""
Command-line front end.

Every command reads a JSON run configuration (``--config``).  ``score``
and ``export-png`` can also run from positional paths alone.  Exit codes:
0 success, 2 usage or configuration error, 3 reconstruction stopped at
``max_iters`` without converging (outputs are still written), 4 numeric
failure.
"""
import argparse
import json
import logging
import math
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np
import scipy.fft
from jsonschema import Draft202012Validator

from . import (admm, convdict, forward, metrics, patch, prox, tensor,
               transforms)
from .errors import (ContainerError, DimensionError, DivergenceError,
                     NonFiniteError, SingularBlockError)
from .phantom import make_phantom

log = logging.getLogger("convinv")

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(Exception):
    """Bad configuration or inputs; maps to exit code 2."""


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer", "minimum": 0}
_path = {"type": "string", "minLength": 1}

_PSF = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["gaussian", "disk", "disk-defocus", "delta"]},
        "size": {"type": "integer", "minimum": 1},
        "sigma": {"type": "number", "minimum": 0},
        "radius": {"type": "number", "minimum": 0},
        "weight": _num,
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "forward": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 1},
                "S": {"type": "integer", "minimum": 1},
                "K": {"type": "integer", "minimum": 1},
                "psfs": {"type": "array", "minItems": 1,
                         "items": {"type": "array", "minItems": 1,
                                   "items": _PSF}},
                "bank": _path,
                "snr_db": _num,
                "noiseless": {"type": "boolean"},
                "per_measurement": {"type": "boolean"},
                "seed": _int,
                "phantom": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"n_shapes": _int, "seed": _int},
                },
            },
        },
        "prior": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "prior": {"enum": list(admm.PRIORS)},
                "preset": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["snr_db"],
                    "properties": {"snr_db": {"enum": [20, 30, 40]},
                                   "dims": {"enum": ["2d", "3d"]}},
                },
                "beta": _pos, "lam": _pos, "rho0": _pos, "sigma0": _pos,
                "mu_tik": {"type": "number", "minimum": 0},
                "adapt": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"enabled": {"type": "boolean"},
                                   "tau": _pos, "mu_ratio": _pos},
                },
                "max_iters": _int,
                "stop_tol": _pos,
                "online_dict_update": {"type": "boolean"},
                "seed": _int,
                "inner_iters": {"type": "integer", "minimum": 1},
                "inner_tol": _pos,
                "transform": {"type": "string"},
                "dictionary": _path,
                "patch": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "Q": {"type": "integer", "minimum": 1},
                        "T": {"type": "integer", "minimum": 1},
                        "stride": {"type": "integer", "minimum": 1},
                        "depth_stride": {"type": "integer", "minimum": 1},
                        "mode": {"enum": ["volumetric", "per-slice"]},
                        "n_atoms": {"type": "integer", "minimum": 1},
                    },
                },
                "conv": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "M": {"type": "integer", "minimum": 1},
                        "L": {"type": "integer", "minimum": 1},
                        "R": {"type": "integer", "minimum": 1},
                        "mode": {"enum": list(convdict.MODES)},
                    },
                },
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["conv", "patch"]},
                "M": {"type": "integer", "minimum": 1},
                "L": {"type": "integer", "minimum": 1},
                "R": {"type": "integer", "minimum": 1},
                "mode": {"enum": list(convdict.MODES)},
                "lam": _pos, "rho": _pos, "sigma": _pos,
                "mu": {"type": "number", "minimum": 0},
                "max_iters": _int, "tol": _pos, "seed": _int,
                "restarts": {"type": "integer", "minimum": 1},
                "lam_start": _pos,
                "lam_decay": {"type": "number", "exclusiveMinimum": 0,
                              "maximum": 1},
                "shift_iters": _int,
                "Q": {"type": "integer", "minimum": 1},
                "n_atoms": {"type": "integer", "minimum": 1},
            },
        },
        "io": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: _path for k in (
                "measurement", "truth", "truth_input", "bank", "manifest",
                "output", "report", "timings", "csv", "figures",
                "metrics", "dictionary", "training")},
        },
        "report": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"csv": {"type": "boolean"},
                           "json": {"type": "boolean"},
                           "png": {"type": "boolean"}},
        },
    },
}

_VALIDATOR = Draft202012Validator(SCHEMA)


def _locate(text, path):
    """Best-effort 1-based line of the JSON node at ``path``."""
    pos = 0
    for key in path:
        if isinstance(key, int):
            continue
        hit = text.find('"%s"' % key, pos)
        if hit < 0:
            break
        pos = hit
    return text.count("\n", 0, pos) + 1


def load_config(path):
    """Parse and validate a run configuration file.

    Raises :class:`ConfigError` with a ``file:line:`` prefix on syntax
    errors, schema violations and unknown keys.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("%s: cannot read config: %s" % (path, exc))
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("%s:%d: invalid JSON: %s"
                          % (path, exc.lineno, exc.msg))
    errors = sorted(_VALIDATOR.iter_errors(cfg),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        where = list(err.absolute_path)
        if err.validator == "additionalProperties":
            # point at the offending key rather than its parent
            extra = [k for k in err.instance
                     if k not in err.schema.get("properties", {})]
            where = where + extra[:1]
        line = _locate(text, where)
        dotted = ".".join(map(str, where)) or "<root>"
        raise ConfigError("%s:%d: %s: %s" % (path, line, dotted,
                                             err.message))
    return cfg


# ---------------------------------------------------------------- helpers

def _io(cfg, key, required=True):
    value = cfg.get("io", {}).get(key)
    if value is None and required:
        raise ConfigError("io.%s is required for this command" % key)
    return Path(value) if value is not None else None


def _bank_from_config(fwd):
    if "bank" in fwd:
        bank_dir = Path(fwd["bank"])
        if not (bank_dir / "manifest.json").is_file():
            raise ConfigError("forward.bank: no PSF bank at %s" % bank_dir)
        return forward.BlurBank.load(bank_dir)
    if "psfs" not in fwd:
        raise ConfigError("forward needs either 'psfs' or 'bank'")
    if "N" not in fwd:
        raise ConfigError("forward.N is required with inline psfs")
    bank = forward.BlurBank.from_specs(fwd["psfs"], fwd["N"])
    for key, got in (("K", bank.K), ("S", bank.S)):
        if key in fwd and fwd[key] != got:
            raise ConfigError("forward.%s=%d but psfs give %d"
                              % (key, fwd[key], got))
    return bank


def _read_stack(path, what):
    if not Path(path).is_file():
        raise ConfigError("%s: %s not found" % (path, what))
    return tensor.read_container(path)


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _solver_config(prior_cfg, seed):
    p = dict(prior_cfg)
    for extra in ("transform", "dictionary", "patch", "conv"):
        p.pop(extra, None)
    pre = p.pop("preset", None)
    name = p.pop("prior", "tv")
    if seed is not None:
        p["seed"] = seed
    if "adapt" in p:
        p["adapt"] = admm.AdaptSpec(**p["adapt"])
    try:
        if pre is not None:
            return admm.preset(name, pre["snr_db"], pre.get("dims", "2d"),
                               **p)
        return admm.SolverConfig(prior=name, **p)
    except (KeyError, ValueError) as exc:
        raise ConfigError("prior: %s" % exc.args[0])


def _dictionary_prior(prior_cfg, solver, S, N):
    """Build the synthesis prior state, loading a trained dictionary if set."""
    src = prior_cfg.get("dictionary")
    if solver.prior == "patch-dict":
        pc = prior_cfg.get("patch", {})
        if src:
            D, trained = patch.load_patch_dictionary(src)
            # patch shape and strides carry over; the stack size does not
            try:
                geom = replace(trained, N=N, S=S)
            except (ValueError, DimensionError) as exc:
                raise ConfigError("prior.dictionary: %s" % exc)
        else:
            mode = pc.get("mode", "per-slice")
            geom = patch.PatchGeometry(
                N, S, pc.get("Q", 6), pc.get("T", 1), pc.get("stride", 1),
                pc.get("depth_stride", 1), mode)
            D = patch.random_dictionary(geom.patch_len, pc.get("n_atoms"),
                                        solver.seed)
        try:
            return admm.PatchPrior(D, geom)
        except DimensionError as exc:
            raise ConfigError("prior.patch: %s" % exc)
    cc = prior_cfg.get("conv", {})
    if src:
        dictionary = convdict.ConvDictionary.load(src)
    else:
        dictionary = convdict.ConvDictionary.random(
            cc.get("M", 4), cc.get("L", 6), cc.get("R", 1),
            cc.get("mode", "per-slice"), solver.seed)
    if dictionary.R > S:
        raise ConfigError("conv dictionary depth %d exceeds S=%d"
                          % (dictionary.R, S))
    return admm.ConvPrior(dictionary, S, N, solver.mu_tik)


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg, seed=None):
    fwd = dict(cfg.get("forward", {}))
    if seed is not None:
        fwd["seed"] = seed
    bank = _bank_from_config(fwd)
    out = _io(cfg, "measurement")
    truth_in = _io(cfg, "truth_input", required=False)
    if truth_in is not None:
        x = _read_stack(truth_in, "ground truth")
        if x.shape != (bank.S, bank.N, bank.N):
            raise ConfigError("ground truth shape %s does not match bank "
                              "(S=%d, N=%d)" % (x.shape, bank.S, bank.N))
    else:
        ph = fwd.get("phantom", {})
        x = make_phantom(bank.N, bank.S, ph.get("n_shapes", 6),
                         ph.get("seed", fwd.get("seed", 0)))
    noiseless = fwd.get("noiseless", False)
    noise = forward.NoiseSpec(math.inf if noiseless
                              else fwd.get("snr_db", 30.0),
                              fwd.get("seed", 0),
                              fwd.get("per_measurement", True))
    y, sigmas = forward.simulate_measurements(bank, x, noise)
    if noiseless:
        snr = ["inf"] * bank.K
    else:
        snr = [float(v) for v in forward.realized_snr_db(
            forward.apply_forward(bank, x), y)]

    out.parent.mkdir(parents=True, exist_ok=True)
    tensor.write_container(y, out)
    truth = _io(cfg, "truth", required=False) or out.with_name(
        out.stem + "_truth.civs")
    tensor.write_container(x, truth)
    bank_dir = _io(cfg, "bank", required=False) or out.with_name(
        out.stem + "_bank")
    if "bank" not in fwd or Path(fwd["bank"]).resolve() != bank_dir.resolve():
        bank.save(bank_dir)
    manifest = {
        "measurement": str(out),
        "truth": str(truth),
        "bank": str(bank_dir),
        "bank_sha256": bank.digest(),
        "K": bank.K, "S": bank.S, "N": bank.N,
        "seed": fwd.get("seed", 0),
        "snr_db_target": None if noiseless else fwd.get("snr_db", 30.0),
        "snr_db_realized": snr,
        "noise_sigma": [float(s) for s in np.atleast_1d(sigmas)],
        "noiseless": noiseless,
    }
    _write_json(_io(cfg, "manifest", required=False)
                or out.with_suffix(".manifest.json"), manifest)
    log.info("simulated %s (realized SNR %s dB)", out,
             manifest["snr_db_realized"])
    return EXIT_OK


def cmd_reconstruct(cfg, seed=None):
    y = _read_stack(_io(cfg, "measurement"), "measurement")
    bank_dir = _io(cfg, "bank", required=False)
    if bank_dir is not None:
        bank = _bank_from_config({"bank": str(bank_dir)})
    else:
        bank = _bank_from_config(cfg.get("forward", {}))
    if y.shape != (bank.K, bank.N, bank.N):
        raise ConfigError("measurement shape %s does not match bank "
                          "(K=%d, N=%d)" % (y.shape, bank.K, bank.N))
    prior_cfg = cfg.get("prior", {})
    solver = _solver_config(prior_cfg, seed)
    if solver.prior in admm.ANALYSIS_PRIORS:
        name = prior_cfg.get("transform", "dct2")
        try:
            transform = transforms.from_config(name)
        except (KeyError, ValueError) as exc:
            raise ConfigError("prior.transform: %s" % exc)
        x, report = admm.run_analysis(y, bank, transform, config=solver)
        dict_prior = None
    else:
        dict_prior = _dictionary_prior(prior_cfg, solver, bank.S, bank.N)
        x, report, dict_prior = admm.run_synthesis(y, bank, dict_prior,
                                                   solver)

    out = _io(cfg, "output")
    out.parent.mkdir(parents=True, exist_ok=True)
    tensor.write_container(x, out)
    report_path = _io(cfg, "report", required=False) or out.with_suffix(
        ".report.json")
    body = report.to_dict(timings=False)
    body["config"] = solver.to_dict()
    _write_json(report_path, body)
    timings = _io(cfg, "timings", required=False)
    if timings is not None:
        _write_json(timings, {"seconds": report.timings,
                              "total": float(sum(report.timings))})
    flags = cfg.get("report", {})
    if flags.get("csv"):
        csv_path = _io(cfg, "csv", required=False) or out.with_suffix(
            ".history.csv")
        csv_path.write_text(report.to_csv())
    truth_path = _io(cfg, "truth", required=False)
    truth = _read_stack(truth_path, "ground truth") if truth_path else None
    if truth is not None:
        m = metrics.score(truth, x)
        mpath = _io(cfg, "metrics", required=False) or out.with_suffix(
            ".metrics.json")
        mpath.write_text(m.to_json() + "\n")
    if flags.get("png"):
        from . import plotting
        fig_dir = _io(cfg, "figures", required=False) or out.parent
        fig_dir.mkdir(parents=True, exist_ok=True)
        plotting.plot_convergence(report, fig_dir / (out.stem
                                                     + "_convergence.png"),
                                  title=solver.prior)
        panels = {"adjoint": forward.apply_adjoint(bank, y),
                  "reconstruction": x}
        if truth is not None:
            panels = {"truth": truth, **panels}
        plotting.plot_slices(panels, fig_dir / (out.stem + "_slices.png"))
    if dict_prior is not None and solver.online_dict_update:
        dict_out = _io(cfg, "dictionary", required=False)
        if dict_out is not None:
            _save_dictionary(dict_prior, dict_out)
    if not report.converged:
        log.warning("stopped after %d iterations without converging",
                    report.iterations)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _save_dictionary(dict_prior, path):
    if isinstance(dict_prior, admm.PatchPrior):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        patch.save_patch_dictionary(dict_prior.D, dict_prior.geom, path)
    else:
        dict_prior.dictionary.save(path)


def cmd_train_dict(cfg, seed=None):
    tc = dict(cfg.get("train", {}))
    kind = tc.pop("kind", "conv")
    if seed is not None:
        tc["seed"] = seed
    src = _io(cfg, "training")
    stacks = [_read_stack(p, "training stack") for p in _expand(src)]
    shapes = {s.shape for s in stacks}
    if len(shapes) != 1:
        raise ConfigError("training stacks have differing shapes %s"
                          % sorted(shapes))
    out = _io(cfg, "dictionary")
    if kind == "conv":
        tc.pop("Q", None)
        tc.pop("n_atoms", None)
        known = {f.name for f in fields(convdict.TrainConfig)}
        tcfg = convdict.TrainConfig(**{k: v for k, v in tc.items()
                                       if k in known})
        dictionary, history = convdict.train_conv_dict(stacks, tcfg)
        dictionary.save(out)
        summary = {"kind": "conv", "iterations": history.iterations,
                   "objective": history.objective,
                   "restart_objectives": history.restart_objectives,
                   "seed": history.seed}
    else:
        summary = _train_patch(stacks, tc, out)
    _write_json(Path(str(out).rstrip("/") + ".train.json"), summary)
    return EXIT_OK


def _train_patch(stacks, tc, out):
    """Patch dictionary fitted by alternating codes and projected updates.

    Uses the same online loop as the reconstruction driver with the image
    fixed to the training stack.
    """
    x = stacks[0]
    S, N = x.shape[0], x.shape[1]
    geom = patch.PatchGeometry(N, S, tc.get("Q", 6), mode="per-slice")
    D = patch.random_dictionary(geom.patch_len, tc.get("n_atoms"),
                                tc.get("seed", 0))
    lam, rho, sigma = tc.get("lam", 0.05), tc.get("rho", 1.0), tc.get(
        "sigma", 1.0)
    X = np.concatenate([patch.extract_patches(s, geom) for s in stacks],
                       axis=1)
    Z = np.zeros((D.shape[1], X.shape[1]))
    t = np.zeros_like(Z)
    u = np.zeros_like(Z)
    G, E = D, np.zeros_like(D)
    iters = tc.get("max_iters", 100)
    for _ in range(iters):
        Z = patch.patch_code_update(G, X, t, u, rho)
        t = prox.soft_threshold(Z + u, lam / rho)
        u = u + Z - t
        _, G, E = patch.patch_dict_update(X, Z, G, E, sigma)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    patch.save_patch_dictionary(G, geom, out)
    return {"kind": "patch", "iterations": iters,
            "fit": float(np.linalg.norm(G @ t - X))}


def _expand(src):
    src = Path(src)
    if src.is_dir():
        files = sorted(src.glob("*.civs"))
        if not files:
            raise ConfigError("%s: no .civs files" % src)
        return files
    return [src]


def cmd_score(ref_path, est_path, out_path=None, peak=None):
    ref = _read_stack(ref_path, "reference")
    est = _read_stack(est_path, "estimate")
    try:
        report = metrics.score(ref, est, peak)
    except DimensionError as exc:
        raise ConfigError(str(exc))
    text = report.to_json()
    print(text)
    if out_path is not None:
        Path(out_path).write_text(text + "\n")
    return EXIT_OK


def cmd_export_png(stack_path, out_dir):
    from PIL import Image

    x = _read_stack(stack_path, "stack")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("%s: cannot create output directory: %s"
                          % (out_dir, exc))
    lo, hi = float(x.min()), float(x.max())
    span = hi - lo if hi > lo else 1.0
    stem = Path(stack_path).stem
    names = []
    for i, sl in enumerate(x):
        img = np.round((sl - lo) / span * 255.0).astype(np.uint8)
        name = "%s_slice%03d.png" % (stem, i)
        Image.fromarray(img, mode="L").save(out_dir / name)
        names.append(name)
    _write_json(out_dir / (stem + "_png.json"),
                {"source": str(stack_path), "min": lo, "max": hi,
                 "scaling": "linear", "files": names})
    return EXIT_OK


# ---------------------------------------------------------------- entry

def build_parser():
    ap = argparse.ArgumentParser(prog="convinv", description=__doc__.split(
        "\n\n")[0].strip())
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="override every seed in the "
                    "configuration")
    ap.add_argument("--threads", type=int, default=1,
                    help="FFT worker threads (default 1)")
    ap.add_argument("--verbose", "-v", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", help="simulate measurements")
    sub.add_parser("reconstruct", help="run an ADMM reconstruction")
    sub.add_parser("train-dict", help="train a dictionary offline")
    sc = sub.add_parser("score", help="PSNR / SSIM / SAM of two stacks")
    sc.add_argument("reference", nargs="?")
    sc.add_argument("estimate", nargs="?")
    sc.add_argument("--out", help="write the metric report here")
    sc.add_argument("--peak", type=float)
    ex = sub.add_parser("export-png", help="8-bit PNG per slice")
    ex.add_argument("stack", nargs="?")
    ex.add_argument("out_dir", nargs="?")
    return ap


def _dispatch(args):
    cfg = load_config(args.config) if args.config else {}
    if args.command in ("simulate", "reconstruct", "train-dict") \
            and not args.config:
        raise ConfigError("%s needs --config" % args.command)
    if args.seed is not None and args.seed < 0:
        raise ConfigError("--seed must be nonnegative")
    if args.command == "simulate":
        return cmd_simulate(cfg, args.seed)
    if args.command == "reconstruct":
        return cmd_reconstruct(cfg, args.seed)
    if args.command == "train-dict":
        return cmd_train_dict(cfg, args.seed)
    io = cfg.get("io", {})
    if args.command == "score":
        ref = args.reference or io.get("truth")
        est = args.estimate or io.get("output")
        if not ref or not est:
            raise ConfigError("score needs a reference and an estimate")
        return cmd_score(ref, est, args.out or io.get("metrics"), args.peak)
    stack = args.stack or io.get("output")
    out_dir = args.out_dir or io.get("figures")
    if not stack or not out_dir:
        raise ConfigError("export-png needs a stack and an output directory")
    return cmd_export_png(stack, out_dir)


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose
                        else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with scipy.fft.set_workers(max(args.threads, 1)):
            return _dispatch(args)
    except (DivergenceError, SingularBlockError, NonFiniteError,
            ArithmeticError) as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DimensionError, ContainerError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
