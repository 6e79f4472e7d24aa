"""
Command-line front end.

    cosserat <command> [--config PATH] [--set KEY=VALUE ...] [--out DIR] [--seed N]

Configuration is a JSON document whose nested objects flatten to dotted
keys (``{"grid": {"n": 33}}`` is ``grid.n``); ``--set`` overrides single
keys and parses its value as JSON when possible. Every report starts with
a ``# config=`` line holding the resolved configuration.

Exit codes: 0 when the command's check passes, 1 when it fails, 2 for
configuration errors.
"""

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .algebra import AlgebraError, MaterialParams, random_unit_quat
from .analysis import (AnalysisError, equator_energy, monotonicity_profile, scan_nonexistence,
                       verify_singular)
from .analysis.kato import EPS_RULES
from .energy import EnergyError, LoadSpec, gradient_mismatch
from .fields import (GridError, GridSpec, GridState, StateFileError, build_grid, read_state, sample,
                     write_state)
from .optimize import OptimizeError, OptimizerParams, initial_state, minimize


COMMANDS = ("verify-singular", "check-gradient", "minimize", "scan-kato", "monotonicity", "equator-energy")
KATO_TARGET = 32.0 / 15.0

DEFAULTS = {
    "seed": 0,
    "grid.n": 17,
    "grid.extent": 1.0,
    "grid.shape": "cube",
    "grid.puncture_radius": 0.0,
    "grid.puncture_cells": None,
    "grid.trim": True,
    "constants.mu_e": 1.0,
    "constants.mu_c": 1.0,
    "constants.mu_0": 1.0,
    "constants.p": 2.0,
    "constants.deviator": "tracefree",
    "loads.f": None,
    "loads.M": None,
    "optimizer.max_iters": 5000,
    "optimizer.grad_tol": 1e-8,
    "optimizer.step0": 1.0,
    "optimizer.armijo_c": 1e-4,
    "optimizer.backtrack": 0.5,
    "optimizer.max_backtracks": 60,
    "fields.phi": "identity_phi",
    "fields.rot": "constant_rot",
    "fields.q0": None,
    "fields.state_file": None,
    "minimize.start": "extend",
    "minimize.perturbation": 0.0,
    "gradient.states": 10,
    "gradient.step": 1e-5,
    "gradient.tol": 1e-6,
    "gradient.phi_noise": 0.1,
    "singular.sizes": [17, 33],
    "singular.puncture_cells": 3.0,
    "singular.deviator": "literal",
    "scan.p_min": 2.0,
    "scan.p_max": 2.5,
    "scan.step": 1e-3,
    "scan.eps_rule": "closed_form",
    "monotonicity.center": [0.0, 0.0, 0.0],
    "monotonicity.radii": None,
    "monotonicity.q_tol": 1e-10,
    "equator.puncture_cells": 3.0,
    "equator.tol": 0.01,
}

# per-command starting points, applied before the config file
COMMAND_DEFAULTS = {
    "verify-singular": {"grid.shape": "ball"},
    "check-gradient": {"grid.n": 9},
    "minimize": {},
    "scan-kato": {},
    "monotonicity": {"grid.n": 33, "fields.phi": "zero_phi", "fields.rot": "singular_rot",
                     "grid.puncture_cells": 0.5},
    "equator-energy": {"grid.n": 65, "grid.shape": "ball"},
}

NAMED_FORCES = {
    "gravity": lambda x: np.broadcast_to([0.0, 0.0, -1.0], x.shape).copy(),
    "radial": lambda x: x.copy(),
}
NAMED_MOMENTS = {
    "twist": lambda x: np.broadcast_to([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
                                       (len(x), 3, 3)).copy(),
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def flatten(doc, prefix=""):
    out = {}
    for key, value in doc.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, path + "."))
        else:
            out[path] = value
    return out


def parse_override(text):
    if "=" not in text:
        raise ConfigError(f"--set expects KEY=VALUE, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def resolve_config(command, config_path=None, overrides=(), seed=None):
    cfg = dict(DEFAULTS)
    cfg.update(COMMAND_DEFAULTS[command])
    if config_path is not None:
        try:
            doc = json.loads(Path(config_path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {config_path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        _merge(cfg, flatten(doc))
    _merge(cfg, dict(parse_override(o) for o in overrides))
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def _merge(cfg, new):
    unknown = sorted(set(new) - set(cfg))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg.update(new)


def _section(cfg, name):
    pre = name + "."
    return {k[len(pre):]: v for k, v in cfg.items() if k.startswith(pre)}


def grid_spec(cfg) -> GridSpec:
    g = _section(cfg, "grid")
    cells = g.pop("puncture_cells")
    n = g["n"]
    if not isinstance(n, int):
        raise ConfigError(f"grid.n must be an integer, got {n!r}")
    if cells is not None:
        g["puncture_radius"] = float(cells) * 2.0 * float(g["extent"]) / (n - 1)
    return GridSpec(**g)


def material(cfg) -> MaterialParams:
    return MaterialParams(**_section(cfg, "constants"))


def optimizer_params(cfg) -> OptimizerParams:
    return OptimizerParams(**_section(cfg, "optimizer"))


def _load_value(value, named, what):
    if value is None:
        return None
    if isinstance(value, str):
        if value in named:
            return named[value]
        path = Path(value)
        if not path.exists():
            raise ConfigError(f"{what}: {value!r} is neither a named load {sorted(named)} nor a file")
        try:
            return np.asarray(json.loads(path.read_text()), dtype=float)
        except (json.JSONDecodeError, ValueError) as exc:
            raise ConfigError(f"{what}: cannot read {value}: {exc}") from None
    return np.asarray(value, dtype=float)


def load_spec(cfg) -> LoadSpec:
    return LoadSpec(f=_load_value(cfg["loads.f"], NAMED_FORCES, "loads.f"),
                    M=_load_value(cfg["loads.M"], NAMED_MOMENTS, "loads.M"))


def sampled_state(cfg, grid) -> GridState:
    if cfg["fields.state_file"]:
        return read_state(cfg["fields.state_file"])
    return GridState(grid, sample(cfg["fields.phi"], grid), sample(cfg["fields.rot"], grid, q0=cfg["fields.q0"]))


# ---------------------------------------------------------------------------
# reports


def fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    if value is None:
        return ""
    return str(value)


def write_csv(path, cfg, header, rows):
    buf = io.StringIO()
    buf.write("# config=" + json.dumps(cfg, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_manifest(out, command, cfg, passed, results, outputs):
    doc = {"command": command, "version": __version__, "config": cfg, "passed": bool(passed),
           "results": results, "outputs": sorted(outputs)}
    (out / "run.json").write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_verify_singular(cfg, out):
    c = material(cfg)
    if (c.mu_e, c.mu_c, c.mu_0) != (1.0, 1.0, 1.0):
        raise ConfigError("verify-singular needs constants.mu_e = mu_c = mu_0 = 1")
    c = MaterialParams(p=c.p, deviator=cfg["singular.deviator"])
    sizes = tuple(int(n) for n in cfg["singular.sizes"])
    rep = verify_singular(c.p, sizes, c, puncture_cells=float(cfg["singular.puncture_cells"]),
                          shape=cfg["grid.shape"], rng=cfg["seed"])
    keys = ("max_phi", "max_rot", "l2_phi", "l2_rot")
    rows = [["level", n, 2.0 / (n - 1)] + [norm[k] for k in keys] + [skip]
            for n, norm, skip in zip(rep.sizes, rep.common_norms, rep.skipped)]
    rows.append(["order", None, None] + [rep.orders[k] for k in keys] + [None])
    write_csv(out / "residuals.csv", cfg, ["row", "n", "h", *keys, "skipped"], rows)
    results = {"orders": rep.orders, "orthogonality": rep.orthogonality, "norms": rep.common_norms}
    msg = f"orders {', '.join(f'{k}={v:.3f}' for k, v in rep.orders.items())}; orthogonality {rep.orthogonality:.2e}"
    return rep.ok, results, ["residuals.csv"], msg


def cmd_check_gradient(cfg, out):
    c = material(cfg)
    loads = load_spec(cfg)
    grid = build_grid(grid_spec(cfg))
    rng = np.random.default_rng(cfg["seed"])
    rows = []
    for k in range(int(cfg["gradient.states"])):
        phi = grid.x + float(cfg["gradient.phi_noise"]) * rng.standard_normal(grid.x.shape)
        st = GridState(grid, phi, random_unit_quat(rng, grid.size))
        rows.append([k, gradient_mismatch(st, c, loads, float(cfg["gradient.step"]))])
    worst = max(r[1] for r in rows)
    write_csv(out / "gradient.csv", cfg, ["state", "relative_error"], rows)
    passed = worst < float(cfg["gradient.tol"])
    return passed, {"worst_relative_error": worst}, ["gradient.csv"], f"worst relative error {worst:.3e}"


def _bump(x, extent):
    return np.prod(np.cos(0.5 * np.pi * x / extent) ** 2, axis=1)


def cmd_minimize(cfg, out):
    c = material(cfg)
    loads = load_spec(cfg)
    op = optimizer_params(cfg)
    grid = build_grid(grid_spec(cfg))
    boundary = sampled_state(cfg, grid)
    grid = boundary.grid
    start = cfg["minimize.start"]
    if start == "extend":
        st = initial_state(boundary)
    elif start == "sampled":
        st = boundary.copy()
    else:
        raise ConfigError(f"minimize.start must be 'extend' or 'sampled', got {start!r}")
    amp = float(cfg["minimize.perturbation"])
    if amp:
        rng = np.random.default_rng(cfg["seed"])
        direction = rng.standard_normal(3)
        free = ~st.dirichlet
        st.phi[free] += amp * _bump(grid.x[free], grid.spec.extent)[:, None] * direction
    res = minimize(st, c, loads, op)
    rows = [[r.iteration, r.energy, r.grad_norm, r.step] for r in res.trace]
    write_csv(out / "trace.csv", cfg, ["iteration", "energy", "grad_norm", "step"], rows)
    write_state(res.state, out / "state.json")
    results = {"status": res.status, "iterations": len(res.trace) - 1,
               "initial_energy": res.trace[0].energy, "final_energy": res.trace[-1].energy,
               "final_grad_norm": res.trace[-1].grad_norm, "residual_norms": res.residual_norms}
    msg = f"{res.status} after {len(res.trace) - 1} iterations, energy {res.trace[-1].energy:.10g}"
    return res.converged, results, ["trace.csv", "state.json"], msg


def cmd_scan_kato(cfg, out):
    if cfg["scan.eps_rule"] not in EPS_RULES:
        raise ConfigError(f"scan.eps_rule must be one of {sorted(EPS_RULES)}")
    rep = scan_nonexistence(float(cfg["scan.p_min"]), float(cfg["scan.p_max"]), float(cfg["scan.step"]),
                            cfg["scan.eps_rule"])
    rows = [[r.p, r.eps_star, r.kappa, r.coeff_A, r.coeff_B, r.admissible] for r in rep.rows]
    write_csv(out / "scan.csv", cfg, ["p", "eps_star", "kappa", "coeff_A", "coeff_B", "admissible"], rows)
    thr = rep.threshold
    passed = thr is not None and thr >= KATO_TARGET - 1e-9
    return passed, {"threshold": thr, "rows": len(rows)}, ["scan.csv"], f"admissible up to p = {thr}"


def cmd_monotonicity(cfg, out):
    c = material(cfg)
    grid = build_grid(grid_spec(cfg))
    st = sampled_state(cfg, grid)
    grid = st.grid
    radii = cfg["monotonicity.radii"]
    if radii is None:
        radii = grid.h * np.arange(2, int(round(grid.spec.extent / grid.h)) + 1, 2)
    rep = monotonicity_profile(st, cfg["monotonicity.center"], radii, c)
    deficit = [None] + list(rep.deficit)
    rows = [[r, f, k, d] for r, f, k, d in zip(rep.radii, rep.phi_profile, rep.curvature_profile, deficit)]
    write_csv(out / "monotonicity.csv", cfg, ["r", "phi_profile", "curvature_profile", "deficit"], rows)
    passed = rep.q_min >= -float(cfg["monotonicity.q_tol"])
    results = {"q_min": rep.q_min, "profile_variation": rep.relative_variation(),
               "curvature_variation": rep.relative_variation("curvature_profile")}
    return passed, results, ["monotonicity.csv"], f"q_min {rep.q_min:.3e}"


def cmd_equator_energy(cfg, out):
    spec = grid_spec(cfg)
    p = float(material(cfg).p)
    numeric, closed = equator_energy(p, spec.n, float(cfg["equator.puncture_cells"]), spec.extent)
    rel = abs(numeric - closed) / closed
    write_csv(out / "equator.csv", cfg, ["p", "n", "numeric", "closed_form", "relative_error"],
              [[p, spec.n, numeric, closed, rel]])
    passed = rel < float(cfg["equator.tol"])
    return passed, {"numeric": numeric, "closed_form": closed, "relative_error": rel}, ["equator.csv"], \
        f"numeric {numeric:.10g} vs closed form {closed:.10g} (relative error {rel:.3e})"


HANDLERS = {
    "verify-singular": cmd_verify_singular,
    "check-gradient": cmd_check_gradient,
    "minimize": cmd_minimize,
    "scan-kato": cmd_scan_kato,
    "monotonicity": cmd_monotonicity,
    "equator-energy": cmd_equator_energy,
}

CONFIG_ERRORS = (ConfigError, AlgebraError, GridError, StateFileError, EnergyError, AnalysisError,
                 TypeError, ValueError)


def build_parser():
    parser = argparse.ArgumentParser(prog="cosserat", description="Cosserat energy laboratory")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", metavar="PATH")
    parser.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides")
    parser.add_argument("--out", metavar="DIR", default=".")
    parser.add_argument("--seed", type=int)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args.config, args.overrides, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        passed, results, outputs, msg = HANDLERS[args.command](cfg, out)
    except OptimizeError as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return 1
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    write_manifest(out, args.command, cfg, passed, results, outputs + ["run.json"])
    print(f"{args.command}: {'PASS' if passed else 'FAIL'} ({msg})", file=sys.stderr)
    return 0 if passed else 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
