"""Command-line front end: configuration, experiment orchestration, report
serialization.

Subcommands: solve, diagnose, flatness, frequency, linearized, preset.
Configs are strict JSON (unknown keys rejected); shipped presets are named
configs overridable with repeated --set key=value flags.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 a required diagnostic
check failed.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .boundary import (
    TWO_PHASE,
    extract_boundaries,
    nondegeneracy_scan,
    proportionality_fit,
    write_boundary_csv,
    write_polylines,
)
from .energy import sharp_threshold
from .fields import FieldPair, GridSpec, Params, read_grid, write_grid
from .flatness import FlatnessError, flatness_decay_trace, write_flatness_csv
from .frequency import (
    cubic_height_check,
    default_radii,
    lower_bound_check,
    modified_height_trace,
    monotonicity_report,
    plant_profile,
    write_frequency_csv,
)
from .membranes import (
    complementarity_audit,
    halfdisk_spec,
    mixed_transmission_data,
    reference_signorini_pair,
    solve_transmission,
    solve_two_membrane,
    split_pair,
    write_complementarity_csv,
)
from .frequency import estimate_homogeneity
from .presets import PRESET_NAMES, preset_config, problem_from_config
from .solver import solve

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None


class ConfigError(Exception):
    pass


class DiagnosticFailure(Exception):
    pass


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}


def _obj(props, required=()):
    return {
        "type": "object",
        "additionalProperties": False,
        "properties": props,
        "required": list(required),
    }


CONFIG_SCHEMA = _obj(
    {
        "preset": {"type": "string"},
        "grid": _obj(
            {
                "nx": {"type": "integer", "minimum": 3},
                "ny": {"type": "integer", "minimum": 3},
                "h": _POS,
                "x0": _NUM,
                "y0": _NUM,
            },
            required=("nx", "ny", "h"),
        ),
        "domain": _obj(
            {
                "kind": {"enum": ["disk", "rectangle", "halfdisk"]},
                "param": _NUM,
            },
            required=("kind",),
        ),
        "params": _obj({"lambda_u": _POS, "lambda_v": _POS},
                       required=("lambda_u", "lambda_v")),
        "boundary": _obj(
            {
                "kind": {"enum": ["plane", "perturbed_plane", "one_phase",
                                  "branching", "files"]},
                "amplitude": _NUM,
                "u": {"type": "string"},
                "v": {"type": "string"},
            },
            required=("kind",),
        ),
        "solve": _obj(
            {
                "delta_schedule": {"type": "array", "items": _POS, "minItems": 1},
                "step0": _POS,
                "max_outer": {"type": "integer", "minimum": 1},
                "tol_energy": _POS,
                "tol_step": _POS,
                "relax_sweeps": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "parallel": {"type": "boolean"},
                "sharpen_cut": {"type": "number", "minimum": 0},
            },
            required=("delta_schedule", "step0"),
        ),
        "plant": _obj(
            {
                "exponents": {"type": "array", "items": _POS},
                "amplitudes": {"type": "array", "items": _POS},
            },
            required=("exponents", "amplitudes"),
        ),
        "diagnostics": _obj(
            {
                "anchor": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                "boundary": _obj({"probe_factor": _POS}),
                "proportionality": _obj({"radius": _POS, "expect_ratio": {"type": "boolean"}}),
                "nondegeneracy": _obj({"radii": {"type": "array", "items": _POS}}),
                "flatness": _obj({"r_max": _POS, "ratio": _POS, "count": {"type": "integer", "minimum": 2}}),
                "frequency": _obj({"sigma": _POS, "beta": _POS, "r_max": _POS, "ratio": _POS}),
            }
        ),
        "linearized": _obj(
            {
                "problem": {"enum": ["two_membrane", "transmission"]},
                "data": {"enum": ["signorini", "max_principle", "symmetric",
                                  "antisymmetric", "mixed"]},
                "lambda_h": _POS,
                "lambda_w": _POS,
                "radius": _POS,
                "grids": {"type": "array", "items": {"type": "integer", "minimum": 9}},
                "tol": _POS,
            },
            required=("problem", "data", "grids"),
        ),
        "output_dir": {"type": "string"},
    }
)


def validate_config(cfg: dict) -> dict:
    if jsonschema is not None:
        validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
        errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
        if errors:
            e = errors[0]
            path = ".".join(str(p) for p in e.absolute_path) or "<root>"
            raise ConfigError(f"{path}: {e.message}")
    if "params" in cfg:
        lu = cfg["params"]["lambda_u"]
        lv = cfg["params"]["lambda_v"]
        if abs(lu + lv - 1.0) > 1e-12:
            raise ConfigError(
                f"params.lambda_u: coefficients must sum to 1, got {lu} + {lv}"
            )
    if "solve" in cfg:
        ds = cfg["solve"]["delta_schedule"]
        if any(b >= a for a, b in zip(ds, ds[1:])):
            raise ConfigError("solve.delta_schedule: must decrease strictly")
    return cfg


def apply_overrides(cfg: dict, pairs):
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {p} is not an object")
        node[parts[-1]] = value
    return cfg


def resolve_config(args) -> dict:
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except FileNotFoundError as err:
            raise ConfigError(f"config file not found: {args.config}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"{args.config}: invalid JSON ({err})") from err
        if "preset" in cfg and len(cfg) > 1:
            base = preset_config(cfg["preset"])
            base.update({k: v for k, v in cfg.items() if k != "preset"})
            cfg = base
    elif args.preset:
        try:
            cfg = preset_config(args.preset)
        except ValueError as err:
            raise ConfigError(str(err)) from err
    else:
        raise ConfigError("provide --preset NAME or --config PATH")
    apply_overrides(cfg, args.set)
    if getattr(args, "threads", 0):
        cfg.setdefault("solve", {})["parallel"] = True
    return validate_config(cfg)


def output_dir(args, cfg) -> Path:
    out = args.out or cfg.get("output_dir") or os.environ.get("BIMEMBRANE_OUT") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_summary(outdir, cfg, payload):
    payload = dict(payload)
    payload["config"] = cfg
    with open(outdir / "summary.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


# --- commands ----------------------------------------------------------------


def cmd_solve(cfg, outdir) -> int:
    try:
        prob = problem_from_config(cfg)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    t0 = time.time()
    res = solve(prob.spec, prob.data, prob.params, prob.opts)
    write_grid(res.pair.u, outdir / "u.grid")
    write_grid(res.pair.v, outdir / "v.grid")
    with open(outdir / "energy_trace.csv", "w") as fh:
        fh.write(res.trace_csv())
    last = res.energy_trace[-1][2]
    _write_summary(
        outdir,
        cfg,
        {
            "converged": res.converged,
            "iterations": res.iterations,
            "runtime_sec": time.time() - t0,
            "total_smoothed": last.total_smoothed,
            "total_sharp": last.total_sharp,
        },
    )
    return 0


def _load_pair(cfg, fields) -> FieldPair:
    u = read_grid(fields[0])
    v = read_grid(fields[1])
    params = Params(cfg["params"]["lambda_u"], cfg["params"]["lambda_v"])
    return FieldPair(u, v, params)


def _check(checks, name, value, threshold, passed, required=True, status=None):
    checks.append(
        {
            "name": name,
            "value": value,
            "threshold": threshold,
            "passed": bool(passed),
            "required": required,
            "status": status or ("ok" if passed else "fail"),
        }
    )


def _vacuous(checks, name, note):
    checks.append(
        {"name": name, "value": None, "threshold": None, "passed": True,
         "required": False, "status": f"vacuous: {note}"}
    )


def _anchor_sample(bset, anchor):
    best = None
    for s in bset.samples:
        if s.phase != TWO_PHASE:
            continue
        d = math.hypot(s.location[0] - anchor[0], s.location[1] - anchor[1])
        if best is None or d < best[0]:
            best = (d, s)
    return best[1] if best else None


def cmd_diagnose(cfg, outdir, fields, only=None) -> int:
    pair = _load_pair(cfg, fields)
    diag = cfg.get("diagnostics", {})
    checks = []
    bset = extract_boundaries(
        pair, probe_factor=diag.get("boundary", {}).get("probe_factor", 4.0)
    )
    write_boundary_csv(bset, outdir / "boundary.csv")
    write_polylines(bset, outdir / "polylines.txt")

    run_boundary = only in (None, "boundary")
    run_flat = only in (None, "flatness")
    run_freq = only in (None, "frequency")

    if not bset.samples:
        for name in ("bernoulli_max_residual", "proportionality", "nondegeneracy",
                     "flatness_decay", "frequency_lower_bound"):
            _vacuous(checks, name, "empty free boundary")
        _finish_checks(outdir, cfg, checks)
        return 0

    # nodewise inclusion of the positivity sets
    tau_u = sharp_threshold(pair.u)
    tau_v = sharp_threshold(pair.v)
    bad = int(
        np.count_nonzero(
            pair.mask
            & (np.nan_to_num(pair.v.values) > tau_v)
            & ~(np.nan_to_num(pair.u.values) > tau_u)
        )
    )
    if run_boundary:
        _check(checks, "inclusion_v_in_u", bad, 0, bad == 0)

        worst = max(s.residual for s in bset.samples)
        _check(checks, "bernoulli_max_residual", worst, 0.05, worst <= 0.05)

        one_u = [s for s in bset.samples if s.phase == "OnePhaseU"]
        if one_u:
            w1 = max(s.residual for s in one_u)
            _check(checks, "one_phase_residual", w1, 0.05, w1 <= 0.05)
        else:
            _vacuous(checks, "one_phase_residual", "no one-phase samples")

        prop = diag.get("proportionality", {"radius": 0.1})
        two = [s for s in bset.samples if s.phase == TWO_PHASE]
        if two and prop.get("expect_ratio", True):
            r = prop.get("radius", 0.1)
            target = math.sqrt(pair.params.lambda_u / pair.params.lambda_v)
            worst_c, worst_rr = 0.0, 0.0
            used = 0
            for s in two:
                if math.hypot(*s.location) > 1.0 - r - 2 * pair.spec.h:
                    continue
                c, rr = proportionality_fit(pair, s.location, r)
                worst_c = max(worst_c, abs(c / target - 1.0))
                worst_rr = max(worst_rr, rr)
                used += 1
            if used:
                _check(checks, "proportionality_constant", worst_c, 0.1, worst_c <= 0.1)
                _check(checks, "proportionality_residual", worst_rr, 0.1, worst_rr <= 0.1)
            else:
                _vacuous(checks, "proportionality", "no interior two-phase samples")
        else:
            _vacuous(checks, "proportionality", "no two-phase samples")

        radii = diag.get("nondegeneracy", {}).get("radii", [0.1, 0.2])
        rows = nondegeneracy_scan(pair, bset, radii)
        with open(outdir / "nondegeneracy.csv", "w") as fh:
            fh.write("sample,x,y,r,ratio_u,ratio_v\n")
            for row in rows:
                fh.write(",".join(f"{x:.17g}" if isinstance(x, float) else str(x)
                                  for x in row) + "\n")
        ratios = [
            x for *_, ru, rv in rows for x in (ru, rv) if not math.isnan(x)
        ]
        if ratios:
            _check(checks, "nondegeneracy_min_ratio", min(ratios), 0.1, min(ratios) >= 0.1)
        else:
            _vacuous(checks, "nondegeneracy", "no usable radii")

    anchor = tuple(diag.get("anchor", (0.0, 0.0)))
    center_sample = _anchor_sample(bset, anchor)

    flat_cfg = diag.get("flatness", {})
    cert_nu = None
    if run_flat:
        if center_sample is None:
            _vacuous(checks, "flatness_decay", "no two-phase samples")
        else:
            r_max = flat_cfg.get("r_max", 0.4)
            ratio = flat_cfg.get("ratio", 0.7)
            count = flat_cfg.get("count", 3)
            radii = [r_max * ratio**k for k in range(count)]
            try:
                rep = flatness_decay_trace(pair, center_sample.location, radii, boundary=bset)
                write_flatness_csv(rep, outdir / "flatness_trace.csv")
                cert_nu = rep.certificates[0].nu
                usable = [
                    (ra, ca, cb)
                    for ra, ca, cb in zip(
                        rep.ratios, rep.certificates[:-1], rep.certificates[1:]
                    )
                    if not (ca.at_floor or cb.at_floor)
                ]
                if usable:
                    worst_ratio = max(ra for ra, *_ in usable)
                    _check(checks, "flatness_decay_ratio", worst_ratio, 1.0,
                           worst_ratio <= 1.0)
                    worst_drift = max(
                        float(np.hypot(*(cb.nu - ca.nu))) / max(ca.epsilon, 1e-12)
                        for _, ca, cb in usable
                    )
                    _check(checks, "flatness_normal_drift", worst_drift, 2.0,
                           worst_drift <= 2.0, required=False)
                else:
                    _vacuous(checks, "flatness_decay",
                             "all certificates at the discretization floor")
            except FlatnessError as err:
                _check(checks, "flatness_decay", str(err), None, False)

    if run_freq:
        if "plant" in cfg:
            _plant_frequency(cfg, outdir, checks)
        elif center_sample is None:
            _vacuous(checks, "frequency", "no two-phase samples")
        else:
            fq = diag.get("frequency", {})
            sigma = fq.get("sigma", 0.1)
            radii = default_radii(pair.spec.h, fq.get("r_max", 0.45), fq.get("ratio", 0.85))
            nu = cert_nu if cert_nu is not None else center_sample.normal
            trace = modified_height_trace(
                pair, center_sample.location, nu, radii, boundary=bset, sigma=sigma
            )
            write_frequency_csv(trace, outdir / "frequency_trace.csv")
            low = lower_bound_check(trace)
            _check(checks, "frequency_lower_bound", low["min_ntilde"], 1.4,
                   low["min_ntilde"] >= 1.4)
            try:
                cubic = cubic_height_check(trace)
                _check(checks, "cubic_height_slope", cubic["slope"], 2.7,
                       cubic["passed"])
            except ValueError as err:
                _vacuous(checks, "cubic_height_slope", str(err))
            C = monotonicity_report(trace)
            _check(checks, "monotonicity_constant", C, None, math.isfinite(C))

    return _finish_checks(outdir, cfg, checks)


def _plant_frequency(cfg, outdir, checks):
    g = cfg["grid"]
    spec = GridSpec(int(g["nx"]), int(g["ny"]), float(g["h"]),
                    float(g.get("x0", 0.0)), float(g.get("y0", 0.0)))
    params = Params(cfg["params"]["lambda_u"], cfg["params"]["lambda_v"])
    radii = default_radii(spec.h)
    worst_over_plants = 0.0
    for lam, amp in zip(cfg["plant"]["exponents"], cfg["plant"]["amplitudes"]):
        wf = plant_profile(lam, amp, params, spec)
        trace = modified_height_trace(wf, (0.0, 0.0), (0.0, 1.0), radii)
        write_frequency_csv(trace, outdir / f"frequency_plant_{lam}.csv")
        rows = [row for row in trace.rows
                if not row.truncated and 10 * spec.h <= row.r <= 0.4]
        worst = max(abs(row.Ntilde - lam) for row in rows) if rows else math.inf
        worst_over_plants = max(worst_over_plants, worst)
        low = lower_bound_check(trace)
        _check(checks, f"plant_{lam}_frequency_error", worst, 0.05, worst <= 0.05)
        if lam >= 1.5:
            _check(checks, f"plant_{lam}_lower_bound", low["min_ntilde"], 1.45,
                   low["min_ntilde"] >= 1.45, required=False)


def _finish_checks(outdir, cfg, checks) -> int:
    with open(outdir / "checks.json", "w") as fh:
        json.dump(checks, fh, indent=2)
    _write_summary(outdir, cfg, {"checks": checks})
    failed = [c for c in checks if c["required"] and not c["passed"]]
    if failed:
        names = ", ".join(c["name"] for c in failed)
        raise DiagnosticFailure(f"required checks failed: {names}")
    return 0


def cmd_linearized(cfg, outdir) -> int:
    lin = cfg["linearized"]
    lam_h = lin.get("lambda_h", 0.7)
    lam_w = lin.get("lambda_w", 0.3)
    lams = (lam_h, lam_w)
    radius = lin.get("radius", 1.0)
    tol = lin.get("tol", 1e-9)
    problem = lin["problem"]
    data_kind = lin["data"]
    checks = []
    rows = []
    last = None
    errs = []
    for n in lin["grids"]:
        spec = halfdisk_spec(int(n), radius)
        if data_kind == "signorini":
            ref = reference_signorini_pair(lams, spec, radius)
            sol = solve_two_membrane(
                np.nan_to_num(ref.h.values), np.nan_to_num(ref.w.values),
                lams, spec, radius, tol=tol,
            )
            err = max(
                float(np.nanmax(np.abs(sol.h.values - ref.h.values))),
                float(np.nanmax(np.abs(sol.w.values - ref.w.values))),
            )
        elif data_kind == "max_principle":
            sol = solve_two_membrane(
                lambda X, Y: 1.0 + 0.0 * X, lambda X, Y: 0.0 * X,
                lams, spec, radius, tol=tol,
            )
            err = math.nan
        elif data_kind == "symmetric":
            gen = lambda X, Y: X**2 - Y**2
            sol = solve_transmission(gen, gen, lams, spec, radius, tol=tol)
            X, Y = spec.meshgrid()
            err = float(np.nanmax(np.abs(sol.h.values - gen(X, Y))))
        elif data_kind == "antisymmetric":
            sol = solve_transmission(
                lambda X, Y: X * Y, lambda X, Y: -X * Y, (0.5, 0.5), spec,
                radius, tol=tol,
            )
            X, Y = spec.meshgrid()
            err = float(np.nanmax(np.abs(sol.h.values - X * Y)))
        else:  # mixed
            dh, dw = mixed_transmission_data(lam_h, lam_w)
            sol = solve_transmission(dh, dw, lams, spec, radius, tol=tol)
            X, Y = spec.meshgrid()
            err = float(np.nanmax(np.abs(sol.h.values - dh(X, Y))))
        rows.append((int(n), spec.h, err))
        errs.append(err)
        last = sol

    write_grid(last.h, outdir / "h.grid")
    write_grid(last.w, outdir / "w.grid")
    audit = complementarity_audit(last, radius)
    write_complementarity_csv(audit, outdir / "complementarity.csv")
    with open(outdir / "convergence.csv", "w") as fh:
        fh.write("n,h,sup_error\n")
        for n, h, err in rows:
            fh.write(f"{n},{h:.17g},{err:.17g}\n")

    worst = max(max(r["defect_h"], r["defect_w"]) for r in audit)
    _check(checks, "complementarity_max_defect", worst, 1e-6, worst <= 1e-6)
    if data_kind == "signorini":
        mono = all(b < a for a, b in zip(errs, errs[1:]))
        if len(errs) > 1:
            _check(checks, "recovery_error_monotone", errs, None, mono)
        w1, _ = split_pair(last)
        radii = np.linspace(0.15, 0.6, 8)
        _, lam = estimate_homogeneity(w1, (0.0, 0.0), radii)
        _check(checks, "difference_homogeneity", lam, (1.45, 1.55),
               abs(lam - 1.5) <= 0.05)
    if data_kind == "mixed" and len(errs) >= 2:
        rate = math.log2(errs[-2] / errs[-1])
        _check(checks, "self_convergence_rate", rate, 1.8, rate >= 1.8)
    if data_kind == "symmetric":
        hm = last.h.mask
        same = np.array_equal(last.h.values[hm], last.w.values[hm])
        _check(checks, "symmetric_fields_identical", bool(same), True, same)

    return _finish_checks(outdir, cfg, checks)


# --- entry point --------------------------------------------------------------


def make_parser():
    p = argparse.ArgumentParser(
        prog="bimembrane",
        description="Constrained two-phase free-boundary laboratory",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--preset", help="start from a shipped preset")
        sp.add_argument("--config", help="JSON config path")
        sp.add_argument("--set", action="append", metavar="K=V",
                        help="override a config entry (dotted path)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, default=0,
                        help="0 = sequential deterministic sweeps (default); "
                             "> 0 selects red-black ordering")

    for name in ("solve", "diagnose", "flatness", "frequency", "linearized"):
        sp = sub.add_parser(name)
        common(sp)
        if name in ("diagnose", "flatness", "frequency"):
            sp.add_argument("--fields", nargs=2, metavar=("U", "V"),
                            help="u/v grid files (default: <out>/u.grid, v.grid)")

    sp = sub.add_parser("preset")
    sp.add_argument("action", choices=["list"])
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "preset":
            for name in PRESET_NAMES:
                print(name)
            return 0
        cfg = resolve_config(args)
        outdir = output_dir(args, cfg)
        if args.command == "solve":
            return cmd_solve(cfg, outdir)
        if args.command == "linearized":
            return cmd_linearized(cfg, outdir)
        only = {"diagnose": None, "flatness": "flatness", "frequency": "frequency"}[
            args.command
        ]
        if args.command == "frequency" and "plant" in cfg:
            checks = []
            _plant_frequency(cfg, outdir, checks)
            return _finish_checks(outdir, cfg, checks)
        fields = args.fields or (outdir / "u.grid", outdir / "v.grid")
        for f in fields:
            if not Path(f).exists():
                raise OSError(f"grid file not found: {f}")
        return cmd_diagnose(cfg, outdir, fields, only=only)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except DiagnosticFailure as err:
        print(f"diagnostic failure: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
