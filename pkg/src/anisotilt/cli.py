"""Command-line entry point.

Every invocation prints exactly one JSON run report (to stdout, or to
``--report PATH``).  Exit codes: 0 success, 2 usage/config error,
3 data error, 4 numerical failure (including ``--check`` mismatches).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from ._parallel import set_threads
from .errors import AnisotiltError, ConfigError, NumericalError
from .imageio import LEVELS, load_config, read_image, read_sequence, write_image, write_sequence
from .stats import Cn2Profile, OpticalConfig, table1_config

REPORT_SCHEMA = "anisotilt.run-report/1"

# Reference values for the six standard levels with the default optics
# (Cn2 = 0.1, 0.25, 0.5, 1.0, 1.5, 2.0 x 1e-15 m^-2/3); patch and residual
# variances use M = 100.
TABLE2 = {
    "r0_m": (0.1901, 0.1097, 0.0724, 0.0478, 0.0374, 0.0315),
    "D_over_r0": (1.0697, 1.8536, 2.8096, 4.2585, 5.4314, 6.4547),
    "theta0_px": (6.6174, 3.8188, 2.5194, 1.6622, 1.3033, 1.0966),
    "rms_tilt_px": (0.9026, 1.4272, 2.0183, 2.8543, 3.4958, 4.0367),
    "tilt_var_px2": (0.8147, 2.0368, 4.0736, 8.1473, 12.2209, 16.2946),
    "patch_var_px2": (0.5333, 1.3333, 2.6666, 5.3333, 7.9999, 10.6666),
    "residual_var_px2": (0.2154, 0.5385, 1.0770, 2.1541, 3.2311, 4.3082),
}
TABLE2_TOL = {"r0_m": 0.005}
TABLE2_DEFAULT_TOL = 0.01


class CheckFailed(NumericalError):
    """Computed values differ from the reference beyond tolerance."""


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _clean(o):
    if isinstance(o, float) and not math.isfinite(o):
        return "inf" if o > 0 else ("-inf" if o < 0 else "nan")
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (np.floating,)):
        return _clean(float(o))
    return o


def _cfg_dict(cfg: OpticalConfig):
    return {"aperture_diameter": cfg.aperture_diameter, "focal_length": cfg.focal_length,
            "wavelength": cfg.wavelength, "path_length": cfg.path_length,
            "pixel_pitch": cfg.pixel_pitch, "f_number": cfg.f_number,
            "pixel_angle": cfg.pixel_angle}


def _resolve(args):
    """Optics and Cn2 from --config, overridden by --cn2 / --level."""
    if args.config:
        cfg, profile, options = load_config(args.config)
    else:
        cfg, profile, options = table1_config(), None, {}
    if getattr(args, "level", None) is not None:
        if args.level not in LEVELS:
            raise ConfigError("--level must be 1..6")
        profile = Cn2Profile.constant(LEVELS[args.level])
    if getattr(args, "cn2", None) is not None:
        profile = Cn2Profile.constant(args.cn2)
    return cfg, profile, options


def _need_profile(profile):
    if profile is None:
        raise ConfigError("no Cn2 given (use --cn2, --level or a config cn2 key)")
    return profile


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def level_row(cfg, profile, M=100, threads=1):
    """Turbulence summary quantities for one Cn2 profile."""
    from .corr2d import build_autocorr_grid
    from .regmodel import patch_tilt_variance, residual_tilt_variance
    from .stats import fried_parameter, isoplanatic_angle_pixels
    r0 = fried_parameter(cfg, profile)
    grid = build_autocorr_grid(cfg, profile, 2 * M, threads=threads)
    var = float(grid.sigma_t2)
    return {
        "r0_m": r0,
        "D_over_r0": cfg.aperture_diameter / r0,
        "theta0_px": isoplanatic_angle_pixels(cfg, profile),
        "rms_tilt_px": math.sqrt(var),
        "tilt_var_px2": var,
        "patch_var_px2": patch_tilt_variance(cfg, profile, M, grid=grid),
        "residual_var_px2": residual_tilt_variance(cfg, profile, M, grid=grid),
    }


def cmd_stats(args):
    cfg, profile, _ = _resolve(args)
    profile = _need_profile(profile)
    out = level_row(cfg, profile, args.M, args.threads)
    out["near_field"] = cfg.check_near_field()
    if args.curve:
        from .stats import tabulate_correlations
        c = tabulate_correlations(cfg, profile, args.max_sep, step=args.step, threads=args.threads)
        _write_csv(args.curve, ["separation_px", "r_par_px2", "r_perp_px2", "r_total_px2"],
                   zip(c.separation_px, c.r_par_px, c.r_perp_px, c.r_total_px))
        out["curve"] = args.curve
    if args.grid:
        from .corr2d import build_autocorr_grid
        g = build_autocorr_grid(cfg, profile, args.grid, threads=args.threads)
        path = args.grid_out or "autocorr_grid.npz"
        np.savez(path, r_xx=g.r_xx, r_yy=g.r_yy, r_xy=g.r_xy, r_t=g.r_t,
                 half_extent=np.array(g.half_extent))
        out["grid"] = path
    return cfg, profile, out


def cmd_alpha(args):
    from .regmodel import global_alpha_map, tilt_correction_factor
    cfg, profile, _ = _resolve(args)
    profile = _need_profile(profile)
    out = {"epsilon": args.epsilon}
    if args.glob:
        am = global_alpha_map(cfg, profile, args.glob, args.epsilon)
        out.update({"M_img": args.glob, "alpha_average": am.average, "alpha_peak": am.peak})
        if args.map_out:
            np.savez(args.map_out, alpha_x=am.alpha_x, alpha_y=am.alpha_y)
            out["map"] = args.map_out
    Ms = args.M or ([] if args.glob else [1, 2, 5, 10, 20, 50, 100, 250])
    if Ms:
        from .corr2d import build_autocorr_grid
        grid = build_autocorr_grid(cfg, profile, 2 * max(Ms), threads=args.threads)
        alphas = [tilt_correction_factor(cfg, profile, M, args.epsilon, grid=grid) for M in Ms]
        out["curve"] = [{"M": M, "alpha": a} for M, a in zip(Ms, alphas)]
        if args.csv:
            _write_csv(args.csv, ["M", "alpha"], zip(Ms, alphas))
            out["csv"] = args.csv
    return cfg, profile, out


def cmd_otf(args):
    from .otf import (gaussian_tilt_otf, otf_combined, otf_diffraction, otf_short_exposure,
                      sigma_G2)
    cfg, profile, _ = _resolve(args)
    r0 = args.r0
    if r0 is None:
        from .stats import fried_parameter
        r0 = fried_parameter(cfg, _need_profile(profile))
    rho = np.linspace(0.0, cfg.cutoff_frequency, args.points)
    cols = [rho / cfg.cutoff_frequency, otf_diffraction(rho, cfg),
            otf_short_exposure(rho, cfg, r0), gaussian_tilt_otf(rho, cfg, r0, args.alpha),
            otf_combined(rho, cfg, r0, args.alpha)]
    out = {"r0_m": r0, "alpha": args.alpha, "cutoff_cycles_per_m": cfg.cutoff_frequency,
           "sigma_G_cycles_per_m": math.sqrt(sigma_G2(cfg, r0, args.alpha))}
    if args.csv:
        _write_csv(args.csv, ["rho_over_cutoff", "H_dif", "H_SE", "G_alpha", "H"], zip(*cols))
        out["csv"] = args.csv
    return cfg, profile, out


def _registration(args):
    from .regmodel import RegistrationSpec
    if args.registration == "bma":
        return RegistrationSpec("bma", args.M, args.epsilon, S=args.S)
    if args.registration == "global":
        return RegistrationSpec("global", 0, args.epsilon)
    return RegistrationSpec("none")


def cmd_estimate_r0(args):
    from .friedest import ImageSequence, estimate_r0, estimate_r0_windows
    cfg, profile, _ = _resolve(args)
    seq = ImageSequence(read_sequence(_frames_source(args.frames), args.threads), cfg)
    kw = dict(registration=_registration(args), noise_floor=args.noise_floor,
              band=(args.band_lo, args.band_hi), threads=args.threads)
    if args.alpha is not None:
        kw["alpha"] = args.alpha
    if args.window:
        res = estimate_r0_windows(seq, args.window, args.stride or args.window, **kw)
        est = [{"start": s, **r.summary()} for s, r in res]
        r0s = [e["r0_m"] for e in est]
        out = {"windows": est, "r0_m_mean": float(np.mean(r0s)), "r0_m_std": float(np.std(r0s))}
    else:
        out = estimate_r0(seq, **kw).summary()
    out.update({"frames": seq.K, "registration": args.registration})
    truth = _manifest(args.frames).get("r0_m")
    if isinstance(truth, (int, float)) and math.isfinite(truth):
        r0 = out.get("r0_m", out.get("r0_m_mean"))
        out["r0_true_m"] = truth
        out["relative_error"] = r0 / truth - 1.0
    return cfg, profile, out


def _frames_source(source):
    """A synth output directory is narrowed to its numbered frames."""
    pattern = _manifest(source).get("frame_pattern")
    return os.path.join(str(source), pattern) if pattern else source


def _manifest(frames_source):
    path = os.path.join(str(frames_source), "manifest.json")
    if os.path.isdir(str(frames_source)) and os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    return {}


def cmd_synth(args):
    from .synth import SynthConfig, degrade_sequence, synthetic_scene
    cfg, profile, _ = _resolve(args)
    profile = _need_profile(profile)
    if args.truth:
        truth = read_image(args.truth).data
    else:
        truth = synthetic_scene(args.size, args.seed)
    scfg = SynthConfig(cfg, profile, args.frames, args.noise, args.seed)
    seq = degrade_sequence(truth, scfg, threads=args.threads)
    os.makedirs(args.out, exist_ok=True)
    scale = args.intensity_scale
    paths = write_sequence(seq.frames * scale, args.out, bit_depth=16, prefix="frame")
    write_image(truth * scale, os.path.join(args.out, "truth.png"), 16)
    manifest = {**seq.metadata, "intensity_scale": scale, "optics": _cfg_dict(cfg),
                "truth": "truth.png", "frame_pattern": "frame_*.png",
                "frames_written": len(paths)}
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(_clean(manifest), fh, indent=2, default=_json_default)
    return cfg, profile, {"out": args.out, "frames": len(paths), "r0_m": seq.metadata["r0_m"],
                          "sigmaT2_px2": seq.metadata["sigmaT2_px2"]}


def cmd_mitigate(args):
    from .friedest import ImageSequence, estimate_r0
    from .metrics import psnr, ssim
    from .mitigation import MitigationConfig, bmwf
    cfg, profile, _ = _resolve(args)
    frames = read_sequence(_frames_source(args.frames), args.threads)
    man = _manifest(args.frames)
    scale = float(man.get("intensity_scale", 1.0))
    frames = frames / scale
    mcfg = MitigationConfig(M=args.M, S=args.S, gamma=args.gamma, registration=args.registration,
                            epsilon=args.epsilon)
    out = {}
    if args.r0 is not None:
        r0 = args.r0
    elif args.estimate_r0:
        est = estimate_r0(ImageSequence(frames, cfg), threads=args.threads)
        r0 = est.r0
        out["r0_estimate"] = est.summary()
    elif profile is not None:
        from .stats import fried_parameter
        r0 = fried_parameter(cfg, profile)
    else:
        raise ConfigError("give --r0, --estimate-r0 or a Cn2 value")
    res = bmwf(frames, cfg, mcfg, r0, threads=args.threads)
    write_image(res.restored * scale, args.out, 16 if scale > 1 else 8)
    out.update({"out": args.out, "r0_m": r0, "alpha": res.alpha})
    truth_path = args.truth or (os.path.join(args.frames, man["truth"]) if "truth" in man else None)
    if truth_path:
        truth = read_image(truth_path).data / scale
        peak = args.peak
        out["quality"] = {name: {"psnr": psnr(truth, img, peak), "ssim": ssim(truth, img, peak)}
                          for name, img in (("restored", res.restored), ("fused", res.fused),
                                            ("first_frame", frames[0]))}
    return cfg, profile, out


def cmd_eval(args):
    from .metrics import psnr, ssim
    a, b = read_image(args.reference), read_image(args.test)
    peak = args.peak or a.peak
    return None, None, {"psnr": psnr(a.data, b.data, peak), "ssim": ssim(a.data, b.data, peak)}


def cmd_repro_table2(args):
    cfg, _, _ = _resolve(args)
    rows, worst, failures = [], 0.0, []
    for lvl in sorted(LEVELS):
        row = level_row(cfg, Cn2Profile.constant(LEVELS[lvl]), 100, args.threads)
        diffs = {}
        for key, ref in TABLE2.items():
            rel = abs(row[key] / ref[lvl - 1] - 1.0)
            diffs[key] = rel
            tol = TABLE2_TOL.get(key, args.tol)
            if key != "r0_m":
                worst = max(worst, rel)
            if rel > tol:
                failures.append({"level": lvl, "quantity": key, "computed": row[key],
                                 "reference": ref[lvl - 1], "relative_diff": rel})
        rows.append({"level": lvl, "cn2": LEVELS[lvl], "computed": row, "relative_diff": diffs})
    out = {"levels": rows, "max_relative_diff": worst, "failures": failures}
    if args.check and failures:
        exc = CheckFailed(f"{len(failures)} value(s) outside tolerance")
        exc.outputs = out
        raise exc
    return cfg, None, out


def build_parser():
    p = argparse.ArgumentParser(prog="anisotilt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    p.add_argument("--seed", type=int, default=0, help="seed for all stochastic outputs")
    p.add_argument("--config", help="key=value optics/Cn2 config (default: built-in optics)")
    p.add_argument("--report", help="write the JSON run report here instead of stdout")
    # the same options are accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    for flag, kw in (("--threads", {"type": int}), ("--seed", {"type": int}),
                     ("--config", {}), ("--report", {})):
        common.add_argument(flag, default=argparse.SUPPRESS, help=argparse.SUPPRESS, **kw)
    sub = p.add_subparsers(dest="command", required=True)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)
    sub.add_parser = add_parser

    def turb(sp):
        sp.add_argument("--cn2", type=float, help="constant Cn2 (m^-2/3)")
        sp.add_argument("--level", type=int, help="preset level 1..6")

    s = sub.add_parser("stats", help="r0, isoplanatic angle and tilt variances")
    turb(s)
    s.add_argument("--M", type=int, default=100, help="patch half-size for patch/residual variance")
    s.add_argument("--curve", help="CSV of 1D correlations vs separation")
    s.add_argument("--max-sep", type=float, default=200.0, help="curve extent (px)")
    s.add_argument("--step", type=float, default=0.25, help="curve step (px)")
    s.add_argument("--grid", type=int, help="also build the 2D lag grid of this half-extent")
    s.add_argument("--grid-out", help="npz path for --grid")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("alpha", help="tilt correction factor curves and global maps")
    turb(s)
    s.add_argument("--M", type=int, nargs="*", help="patch half-sizes")
    s.add_argument("--epsilon", type=float, default=0.0, help="registration error-to-signal ratio")
    s.add_argument("--global", dest="glob", type=int, metavar="M_IMG",
                   help="global-registration alpha map for a (2M_IMG+1)^2 image")
    s.add_argument("--map-out", help="npz path for the global alpha map")
    s.add_argument("--csv", help="CSV of the alpha curve")
    s.set_defaults(func=cmd_alpha)

    s = sub.add_parser("otf", help="OTF component curves")
    turb(s)
    s.add_argument("--r0", type=float, help="Fried parameter (m); default from Cn2")
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--points", type=int, default=256)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_otf)

    def reg(sp, default):
        sp.add_argument("--registration", choices=("none", "global", "bma"), default=default)
        sp.add_argument("--M", type=int, default=10, help="BMA block half-size")
        sp.add_argument("--S", type=int, default=8, help="BMA search radius")
        sp.add_argument("--epsilon", type=float, default=1.0 / 12.0,
                        help="registration error-to-signal ratio")

    s = sub.add_parser("estimate-r0", help="spectral-ratio r0 estimate from frames")
    s.add_argument("frames", help="directory, glob or .npy of frames")
    reg(s, "none")
    s.add_argument("--alpha", type=float, help="override the registration-implied alpha")
    s.add_argument("--window", type=int, help="moving-window length (frames)")
    s.add_argument("--stride", type=int, help="moving-window stride (frames)")
    s.add_argument("--band-lo", type=float, default=0.02, help="fit band start (cycles/px)")
    s.add_argument("--band-hi", type=float, default=0.35, help="fit band end (cycles/px)")
    s.add_argument("--noise-floor", action="store_true", help="subtract spectral noise floor")
    s.set_defaults(func=cmd_estimate_r0)

    s = sub.add_parser("synth", help="synthesize a degraded sequence")
    turb(s)
    s.add_argument("--truth", help="truth image (default: built-in synthetic scene)")
    s.add_argument("--size", type=int, default=256, help="synthetic scene size")
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--noise", type=float, default=1.0, help="noise sigma (truth intensity units)")
    s.add_argument("--intensity-scale", type=float, default=256.0,
                   help="multiplier applied before 16-bit quantization")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("mitigate", help="register, average and Wiener-restore frames")
    s.add_argument("frames")
    turb(s)
    reg(s, "bma")
    s.add_argument("--gamma", type=float, default=1e-3, help="Wiener noise-to-signal constant")
    s.add_argument("--r0", type=float, help="Fried parameter (m)")
    s.add_argument("--estimate-r0", action="store_true", help="estimate r0 from the frames")
    s.add_argument("--truth", help="truth image for PSNR/SSIM")
    s.add_argument("--peak", type=float, default=255.0, help="PSNR/SSIM peak value")
    s.add_argument("--out", required=True, help="restored image path")
    s.set_defaults(func=cmd_mitigate)

    s = sub.add_parser("eval", help="PSNR and SSIM of an image pair")
    s.add_argument("reference")
    s.add_argument("test")
    s.add_argument("--peak", type=float, help="peak value (default: from bit depth)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("repro-table2", help="turbulence summary for the six preset levels")
    s.add_argument("--check", action="store_true", help="exit 4 on any value outside tolerance")
    s.add_argument("--tol", type=float, default=TABLE2_DEFAULT_TOL)
    s.set_defaults(func=cmd_repro_table2)
    return p


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    t0 = time.perf_counter()
    report = {"schema": REPORT_SCHEMA, "command": args.command, "seed": args.seed,
              "threads": args.threads,
              "versions": {"anisotilt": __version__, "numpy": np.__version__,
                           "python": platform.python_version()}}
    code = 0
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        set_threads(args.threads)
        cfg, profile, outputs = args.func(args)
        report["config"] = {"optics": _cfg_dict(cfg) if cfg else None,
                            "cn2": None if profile is None else
                            {"kind": profile.kind, "values": list(profile.values)}}
        report["outputs"] = outputs
        report["status"] = "ok"
    except AnisotiltError as exc:
        code = exc.exit_code
        report["status"] = "error"
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, CheckFailed):
            report["outputs"] = getattr(exc, "outputs", None)
    report["timing_s"] = time.perf_counter() - t0
    text = json.dumps(_clean(report), indent=2, default=_json_default)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text, file=stdout)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
