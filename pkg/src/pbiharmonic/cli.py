"""Command-line entry point.

Subcommands::

    constants        closed-form constants and thresholds as JSON on stdout
    minimize-radial  radial minimizer, report and profile
    minimize-axisym  zonal minimizer seeded from the radial one
    stability        second-variation verdict at the radial minimizer
    sweep            lambda continuation table (sweep.csv plus .dat files)
    verify           sampled inequality and rearrangement checks

Every subcommand except ``constants`` reads an optional ``--config`` JSON
file; explicit flags override it.  Outputs are deterministic for a fixed
config; the wall-clock timestamp goes to ``metadata.json`` only.

Exit codes: 0 success, 2 bad parameters or config, 3 non-convergence,
inconclusive stability or a failed check.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from . import __version__
from .constants import critical_exponent, make_params, thresholds, weight_exponent
from .discretization import RadialProfile, build_axisym_grid, build_grid
from .errors import (
    ConfigError,
    GridError,
    ParameterError,
    ResidualTooLargeError,
    UnsupportedRegimeError,
)
from .minimizer import (
    SWEEP_HEADER,
    MinimizeOptions,
    minimize_axisym,
    minimize_radial,
    sweep_lambda,
)

log = logging.getLogger("pbiharmonic")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 2, 3

DEFAULT_CONFIG = {
    "params": {"N": 6, "p": 2.0, "q": 4.0, "lambda": 0.0},
    "grid": {"r_min": 1e-4, "r_max": 1e4, "M": 1025, "K": 16},
    "minimize": MinimizeOptions().to_dict(),
    "init": "bump",
    "output_dir": "pbiharmonic-out",
    "format": "both",
    "stability": {"tol": 1e-4, "residual_threshold": 1e-2, "profile": None},
    "axisym": {"perturb": 1e-2},
    "sweep": {"lambdas": [0.0, -5.0, -10.0, -15.0, -20.0, -25.0, -30.0], "axisym": False,
              "perturb": 1e-2},
    "verify": {"checks": ["rellich"], "n_samples": 500, "seed": 0,
               "family": "gaussian-bumps", "support": [1e-2, 1e2],
               "offsets": [3.0, 4.0, 6.0, 8.0, 12.0, 16.0], "bump_support": [1.0, 2.0],
               "rearrangement_M": 8192},
}

CHECKS = ("rellich", "ckn", "translated-bump", "rearrangement")


# ---------------------------------------------------------------------------
# config


def _merge(base, override, path=""):
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and base[key] and isinstance(val, dict):
            _merge(base[key], val, where + ".")
        else:
            base[key] = val
    return base


def load_config(path=None, overrides=None):
    """Defaults, then the JSON file, then command-line overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("the config must be a JSON object")
        _merge(cfg, doc)
    for dotted, val in (overrides or {}).items():
        section, _, key = dotted.rpartition(".")
        target = cfg[section] if section else cfg
        target[key] = val
    if cfg["format"] not in ("json", "csv", "both"):
        raise ConfigError(f"format must be json, csv or both (got {cfg['format']!r})")
    bad = set(cfg["verify"]["checks"]) - set(CHECKS)
    if bad:
        raise ConfigError(f"unknown verify checks {sorted(bad)}; choose from {CHECKS}")
    return cfg


def _params(cfg, lam=None):
    p = cfg["params"]
    return make_params(p["N"], p["p"], p["q"], p["lambda"] if lam is None else lam)


def _options(cfg):
    m = dict(cfg["minimize"])
    m["eps_schedule"] = tuple(m["eps_schedule"])
    try:
        return MinimizeOptions(**m)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _grid(cfg):
    g = cfg["grid"]
    return build_grid(g["r_min"], g["r_max"], int(g["M"]))


def _axisym_grid(cfg, N):
    g = cfg["grid"]
    return build_axisym_grid(g["r_min"], g["r_max"], int(g["M"]), int(g["K"]), N)


# ---------------------------------------------------------------------------
# output


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, tuples become lists."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return _clean(obj.item())
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


class Output:
    def __init__(self, cfg):
        self.dir = Path(cfg["output_dir"])
        self.fmt = cfg["format"]
        self.cfg = cfg
        self.dir.mkdir(parents=True, exist_ok=True)

    def write(self, name, text):
        path = self.dir / name
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
        return path

    def json(self, name, payload):
        if self.fmt in ("json", "both"):
            doc = dict(payload)
            doc["config"] = self.cfg
            self.write(name, dumps(doc))

    def csv(self, name, header, rows):
        if self.fmt in ("csv", "both"):
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])
            self.write(name, buf.getvalue())

    def dat(self, name, xs, ys, xlabel, ylabel):
        lines = [f"# {xlabel} {ylabel}"]
        lines += [f"{_cell(x)} {_cell(y)}" for x, y in zip(xs, ys)]
        self.write(name, "\n".join(lines) + "\n")

    def metadata(self, command, argv):
        self.write("metadata.json", dumps({
            "command": command,
            "argv": list(argv),
            "version": __version__,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }))


def _cell(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "nan"
    return v


def _result_dict(res):
    return {
        "status": res.status,
        "converged": res.converged,
        "iterations": res.iterations,
        "grad_norm": res.grad_norm,
        "restarts": res.restarts,
        "report": res.report.to_dict(),
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_constants(args):
    try:
        P = make_params(args.N, args.p, args.q, args.lam)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = {
        "N": P.N, "p": P.p, "q": P.q, "lambda": P.lam,
        "gamma": P.gamma,
        "rellich_constant": P.rellich_constant,
        "p_crit": critical_exponent(P.N, P.p),
        "beta": P.beta if P.is_critical else weight_exponent(P.N, P.p, P.q),
    }
    try:
        out.update(thresholds(P.N, P.p, P.q).to_dict())
    except UnsupportedRegimeError as exc:
        out.update(dict.fromkeys(("gamma1", "gamma2", "t0", "f_t0", "remark_threshold",
                                  "remark_applicable", "q_crit_remark")))
        out["note"] = str(exc)
    sys.stdout.write(dumps(out))
    return EXIT_OK


def _write_profile(out, stem, field_):
    # the versioned field record ignores extra keys, so the config rides along
    doc = json.loads(field_.to_json())
    doc["config"] = out.cfg
    out.write(f"{stem}.json", json.dumps(_clean(doc), sort_keys=True, allow_nan=False) + "\n")
    if isinstance(field_, RadialProfile):
        out.write(f"{stem}.dat", field_.to_text())


def cmd_minimize_radial(cfg, out):
    P = _params(cfg)
    res = minimize_radial(P, _grid(cfg), cfg["init"], _options(cfg))
    out.json("radial_report.json", _result_dict(res))
    out.csv("radial_history.csv", ("iteration", "quotient", "grad_norm"), res.history)
    _write_profile(out, "radial_profile", res.field)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_minimize_axisym(cfg, out):
    P = _params(cfg)
    opts = _options(cfg)
    rad = minimize_radial(P, _grid(cfg), cfg["init"], opts)
    axi = minimize_axisym(P, _axisym_grid(cfg, P.N), rad.field, opts,
                          perturb=cfg["axisym"]["perturb"])
    payload = _result_dict(axi)
    payload["radial"] = _result_dict(rad)
    payload["margin"] = rad.report.quotient_q - axi.report.quotient_q
    payload["angular_variance"] = axi.field.angular_variance()
    out.json("axisym_report.json", payload)
    _write_profile(out, "axisym_profile", axi.field)
    return EXIT_OK if (rad.converged and axi.converged) else EXIT_NONCONVERGED


def _load_profile(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read profile {path}: {exc}") from exc
    try:
        return RadialProfile.from_json(text)
    except (ValueError, KeyError, GridError) as exc:
        raise ConfigError(f"{path} is not a radial profile record: {exc}") from exc


def cmd_stability(cfg, out):
    from .functionals import denominator, quotient
    from .stability import bound_chain_check, stability_sigma

    P = _params(cfg)
    st_cfg = cfg["stability"]
    payload = {}
    if st_cfg["profile"]:
        u = _load_profile(st_cfg["profile"])
        if not any(u.values):
            raise ConfigError(f"profile {st_cfg['profile']} vanishes identically")
        # the quotient is scale invariant; the second variation wants d(u) = 1
        u = u * (1.0 / denominator(u, P, tail_tol=None) ** (1.0 / P.p))
        rep = quotient(u, P, tail_tol=None)
        converged = True
    else:
        res = minimize_radial(P, _grid(cfg), cfg["init"], _options(cfg))
        u, rep, converged = res.field, res.report, res.converged
        payload["minimizer"] = _result_dict(res)
    code = EXIT_OK if converged else EXIT_NONCONVERGED
    try:
        st = stability_sigma(u, P, tol=st_cfg["tol"],
                             residual_threshold=st_cfg["residual_threshold"], report=rep)
        payload["status"] = "ok"
    except ResidualTooLargeError as exc:
        st = exc.report
        payload["status"] = "inconclusive"
        payload["message"] = str(exc)
        code = EXIT_NONCONVERGED
    payload["stability"] = st.to_dict()
    payload["thresholds"] = thresholds(P.N, P.p, P.q).to_dict()
    payload["bound_chain"] = bound_chain_check(u, P).to_dict()
    out.json("stability_report.json", payload)
    out.csv("stability.csv", st.CSV_HEADER, [st.csv_row()])
    return code


def cmd_sweep(cfg, out):
    P = _params(cfg)
    sw = cfg["sweep"]
    agrid = _axisym_grid(cfg, P.N) if sw["axisym"] else None
    st = cfg["stability"]
    rows = sweep_lambda(P, sw["lambdas"], _grid(cfg), agrid, _options(cfg), tol=st["tol"],
                        residual_threshold=st["residual_threshold"], perturb=sw["perturb"])
    # the sweep table always goes out as CSV; it is the command's main product
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow([_cell(v) for v in r.csv_row()])
    out.write("sweep.csv", buf.getvalue())
    lams = [r.lam for r in rows]
    for name in ("S_rad", "S_axisym", "sigma"):
        out.dat(f"{name}.dat", lams, [getattr(r, name) for r in rows], "lambda", name)
    out.json("sweep_report.json", {
        "rows": [vars(r) for r in rows],
        "status": "ok" if all(r.status == "ok" for r in rows) else "partial",
    })
    return EXIT_OK if all(r.status == "ok" for r in rows) else EXIT_NONCONVERGED


def cmd_verify(cfg, out):
    from . import verifier as V

    P = _params(cfg)
    vc = cfg["verify"]
    spec = V.SampleSpec(int(vc["n_samples"]), int(vc["seed"]), vc["family"],
                        tuple(vc["support"]))
    grid = _grid(cfg)
    reports = []
    for check in vc["checks"]:
        if check == "rellich":
            rep = V.check_rellich(P, spec, grid)
        elif check == "ckn":
            rep = V.check_ckn(P.with_lambda(0.0), spec, grid=grid)
        elif check == "translated-bump":
            rep = V.translated_bump(P, V.default_bump(grid, tuple(vc["bump_support"])),
                                    vc["offsets"], K=int(cfg["grid"]["K"]))
        else:
            g = cfg["grid"]
            fine = build_grid(g["r_min"], g["r_max"], int(vc["rearrangement_M"]))
            rep = V.rearrangement_suite(P, spec, fine)
        reports.append(rep)
        out.csv(f"verify_{check}.csv", rep.header, rep.rows)
    passed = all(r.passed for r in reports)
    payload = {"passed": passed, "checks": {r.name: {"passed": r.passed, **r.summary}
                                            for r in reports}}
    # flat copy of the headline number for scripts
    for r in reports:
        if "min_quotient" in r.summary and r.name == "rellich":
            payload["min_quotient"] = r.summary["min_quotient"]
    out.json("verify_report.json", payload)
    return EXIT_OK if passed else EXIT_NONCONVERGED


COMMANDS = {
    "minimize-radial": cmd_minimize_radial,
    "minimize-axisym": cmd_minimize_axisym,
    "stability": cmd_stability,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
}


# ---------------------------------------------------------------------------
# argument parsing


def _add_run_args(sp):
    sp.add_argument("--config", help="JSON run configuration")
    sp.add_argument("--output-dir", dest="output_dir")
    sp.add_argument("--format", choices=("json", "csv", "both"))
    sp.add_argument("--N", type=int, dest="params.N")
    sp.add_argument("--p", type=float, dest="params.p")
    sp.add_argument("--q", type=float, dest="params.q")
    sp.add_argument("--lambda", type=float, dest="params.lambda")
    sp.add_argument("--M", type=int, dest="grid.M", help="radial nodes")
    sp.add_argument("--K", type=int, dest="grid.K", help="polar nodes")
    sp.add_argument("--r-min", type=float, dest="grid.r_min")
    sp.add_argument("--r-max", type=float, dest="grid.r_max")
    sp.add_argument("--max-iters", type=int, dest="minimize.max_iters")
    sp.add_argument("--seed", type=int, help="seed for every random draw")
    sp.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="pbiharmonic", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    c = sub.add_parser("constants", help="closed-form constants as JSON")
    c.add_argument("--N", type=int, required=True)
    c.add_argument("--p", type=float, required=True)
    c.add_argument("--q", type=float, required=True)
    c.add_argument("--lambda", type=float, default=0.0, dest="lam")
    for name in COMMANDS:
        sp = sub.add_parser(name)
        _add_run_args(sp)
        if name == "stability":
            sp.add_argument("--profile", dest="stability.profile",
                            help="radial profile JSON to analyse instead of minimizing")
        if name == "sweep":
            sp.add_argument("--lambdas", type=float, nargs="*", dest="sweep.lambdas")
            sp.add_argument("--axisym", action="store_const", const=True, dest="sweep.axisym")
        if name == "verify":
            sp.add_argument("--checks", nargs="+", choices=CHECKS, dest="verify.checks")
            sp.add_argument("--n-samples", type=int, dest="verify.n_samples")
            sp.add_argument("--family", dest="verify.family")
    return ap


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    if args.command == "constants":
        return cmd_constants(args)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items()
                 if v is not None and k not in ("command", "config", "verbose", "seed")}
    if args.seed is not None:
        overrides["minimize.seed"] = args.seed
        overrides["verify.seed"] = args.seed
    try:
        cfg = load_config(args.config, overrides)
        out = Output(cfg)
        out.metadata(args.command, argv)
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, GridError, ParameterError, UnsupportedRegimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
