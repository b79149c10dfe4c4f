"""Command-line front end: presets, plant files, and result persistence.

Subcommands
-----------
``run <preset>``
    Canned experiments: ``fig1a``/``fig1b``/``fig1c`` simulate the
    quadratic-integral plant under the open-loop, order-2, and order-3
    controllers; ``kernels`` builds both kernel constructions and
    cross-checks them; ``gains`` tabulates the gain functions and the
    balanced radius; ``invert-demo`` runs a contraction round trip;
    ``verify-all`` runs the property battery.
``simulate --config <file>``
    One simulation driven by a key-value config file.
``kernels --plant <file> --order N``
    Kernel construction for a user plant file.
``gains``
    Gain table for the builtin plant.
``invert --input <csv>``
    Invert a target profile read from CSV.

All artifacts land under the output root (``--output`` flag, else the
``VOLBACK_OUTPUT_ROOT`` environment variable, else ``./volback-out``).
Exit codes: 0 success, 1 verification failure, 2 usage or config error.
Metadata records carry the config echo, seeds, resolutions, and the
package version so a run can be reproduced bit-identically; nothing
time- or host-dependent is written.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from . import __version__
from .charkernels import (
    KernelNode,
    build_controller_kernels,
    pdae_closed_forms,
    pdae_plant,
)
from .gapcascade import (
    GapCoefficientFamily,
    assemble_kernel_polynomial,
    cascade,
    family_plant_kernel,
    family_to_json,
    pdae_b_family,
)
from .inversion import InversionConfig, choose_radius, invert_with_info
from .polynomial import RationalPoly
from .simplex import QuadratureRule
from .simulator import (
    SimConfig,
    SimConfigError,
    mild_solution_residual,
    simulate,
    stability_constants,
    write_metadata_json,
    write_series_csv,
    write_snapshots_csv,
)
from .verification import run_all
from .volterra import (
    GridFunction,
    VolterraKernelSeries,
    build_gains,
    gain_ell,
    gain_k,
    series_profile,
)

PRESETS = ("fig1a", "fig1b", "fig1c", "kernels", "gains", "invert-demo", "verify-all")
PRESET_CONTROLLER = {"fig1a": "open-loop", "fig1b": "order-2", "fig1c": "order-3"}
DEFAULT_SEED = 0
GAIN_RULE = QuadratureRule.gauss(12)


class ConfigError(ValueError):
    """A config or plant file failed validation."""


class PlantParseError(ConfigError):
    """A plant file entry is malformed; the message names the line."""


@dataclass
class ParsedPlant:
    """A plant in both usable forms plus its growth metadata."""

    family: GapCoefficientFamily
    series: VolterraKernelSeries
    source: str

    @property
    def n_max(self) -> int:
        orders = self.family.orders()
        return max(orders) if orders else 1


@dataclass
class ExperimentSpec:
    """One experiment: plant, controller, protocol overrides, checks."""

    plant: str = "pdae"
    controller: str = "order-3"
    overrides: Dict = field(default_factory=dict)
    output_dir: str | None = None
    check_kernels: bool = False
    check_gains: bool = False
    check_inversion: bool = False
    check_mild_solution: bool = False

    def sim_config(self) -> SimConfig:
        return SimConfig(controller=self.controller, **self.overrides)


def output_root(explicit: str | None = None) -> Path:
    root = explicit or os.environ.get("VOLBACK_OUTPUT_ROOT", "volback-out")
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def parse_plant(path: str | Path) -> ParsedPlant:
    """Read a plant coefficient table.

    Format: optional ``key = value`` metadata lines (D, rho, mu, nu),
    then one entry per line: the order n, the comma-separated gap
    multi-index P (n integers), and the coefficient polynomial in x as
    space-separated exact rationals, constant term first.  ``#`` starts
    a comment.  An empty table is the zero plant.  Orders below 2 are
    rejected with the offending line number.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"plant file {path} does not exist")
    entries: Dict[tuple[int, tuple[int, ...]], RationalPoly] = {}
    metadata: Dict[str, float] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, _, value = line.partition("=")
            try:
                metadata[key.strip()] = float(Fraction(value.strip()))
            except (ValueError, ZeroDivisionError) as exc:
                raise PlantParseError(f"line {lineno}: bad metadata value: {exc}")
            continue
        tokens = line.split()
        if len(tokens) < 3:
            raise PlantParseError(
                f"line {lineno}: expected 'n P coeffs...', got {raw!r}"
            )
        try:
            n = int(tokens[0])
        except ValueError:
            raise PlantParseError(f"line {lineno}: order {tokens[0]!r} is not an integer")
        if n < 2:
            raise PlantParseError(
                f"line {lineno}: order {n} is below 2; the series starts at second order"
            )
        try:
            p_vec = tuple(int(v) for v in tokens[1].split(","))
        except ValueError:
            raise PlantParseError(f"line {lineno}: bad multi-index {tokens[1]!r}")
        if len(p_vec) != n or any(v < 0 for v in p_vec):
            raise PlantParseError(
                f"line {lineno}: multi-index {tokens[1]!r} must be {n} nonnegative integers"
            )
        try:
            coeffs = [Fraction(tok) for tok in tokens[2:]]
        except (ValueError, ZeroDivisionError) as exc:
            raise PlantParseError(f"line {lineno}: bad coefficient: {exc}")
        poly = RationalPoly(coeffs)
        if poly.is_zero():
            continue
        key = (n, p_vec)
        entries[key] = entries[key] + poly if key in entries else poly
    family = GapCoefficientFamily(entries, "plant-b", metadata=metadata or None)
    return ParsedPlant(family, _family_series(family, metadata), str(path))


def _family_series(
    family: GapCoefficientFamily, metadata: Dict[str, float]
) -> VolterraKernelSeries:
    kernels = {n: family_plant_kernel(family, n) for n in family.orders()}
    growth = None
    if "D" in metadata and "rho" in metadata:
        growth = (metadata["D"], metadata["rho"])
    return VolterraKernelSeries(kernels, growth=growth)


def load_plant(descriptor: str) -> ParsedPlant:
    """Resolve a plant descriptor: builtin name or coefficient file."""
    if descriptor == "pdae":
        return ParsedPlant(pdae_b_family(), pdae_plant(), "builtin:pdae")
    if descriptor in ("zero", "none"):
        family = GapCoefficientFamily({}, "plant-b")
        return ParsedPlant(family, VolterraKernelSeries({}), "builtin:zero")
    if Path(descriptor).exists():
        return parse_plant(descriptor)
    raise ConfigError(
        f"unknown plant {descriptor!r}: not a builtin and not an existing file"
    )


def build_kernel_table(
    plant: ParsedPlant, n_max: int, route: str = "cascade"
) -> Dict[int, KernelNode]:
    """Controller kernels for every order 2..n_max.

    ``cascade`` assembles exact polynomials from the coefficient-family
    recursion (available whenever the plant is a finite gap table);
    ``recursion`` integrates the characteristic representation instead.
    """
    if n_max < 2:
        raise ConfigError(f"kernel order cap must be at least 2, got {n_max}")
    if route == "recursion":
        nodes = build_controller_kernels(plant.series, n_max, rule=8, closed_forms={})
        return {node.order: node for node in nodes}
    if route != "cascade":
        raise ConfigError(f"unknown kernel route {route!r}")
    a_family = cascade(plant.family, n_max)
    return {
        n: KernelNode.from_polynomial(
            assemble_kernel_polynomial(a_family, n), provenance="gap-cascade"
        )
        for n in range(2, n_max + 1)
    }


def _controller_order(controller: str, n_max_available: int) -> int | None:
    if controller == "open-loop":
        return None
    if controller == "order-2":
        cap = 2
    elif controller == "order-3":
        cap = 3
    else:
        cap = n_max_available
    if cap > n_max_available:
        raise ConfigError(
            f"controller {controller!r} needs kernels up to order {cap}, "
            f"but only {n_max_available} are available"
        )
    return cap


def run_experiment(spec: ExperimentSpec, out_dir: Path) -> Dict:
    """Simulate one spec, write artifacts, return the metadata dict."""
    plant = load_plant(spec.plant)
    cfg = spec.sim_config()
    kernel_cap = _controller_order(spec.controller, max(plant.n_max, 3))
    kernels = None
    if kernel_cap is not None:
        kernels = build_kernel_table(plant, kernel_cap)
    record = simulate(cfg, plant.series if not plant.series.is_zero() else None, kernels)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_series_csv(record, str(out_dir / "series.csv"))
    write_snapshots_csv(record, str(out_dir / "snapshots.csv"))
    extra = {
        "plant": plant.source,
        "controller": spec.controller,
        "seed": DEFAULT_SEED,
        "quadrature": {"gain_rule": GAIN_RULE.resolution, "recursion_panels": 8},
    }
    checks: Dict[str, Dict] = {}
    failures = []
    if spec.check_mild_solution and kernels is not None:
        if record.blow_up is None:
            res = mild_solution_residual(record, kernels, [0.25, 0.5, 0.75, 1.0])
            checks["mild_solution_residual"] = {"value": res}
        else:
            checks["mild_solution_residual"] = {"skipped": "blow-up record"}
    if spec.check_kernels:
        checks["kernel_cross_check"] = _kernel_cross_check(plant, kernel_cap or 3)
        if not checks["kernel_cross_check"]["passed"]:
            failures.append("kernel_cross_check")
    if checks:
        extra["checks"] = checks
    if failures:
        extra["failed_checks"] = failures
    write_metadata_json(record, str(out_dir / "metadata.json"), extra)
    meta = json.loads((out_dir / "metadata.json").read_text())
    meta["_failures"] = failures
    return meta


def _kernel_cross_check(plant: ParsedPlant, n_max: int, points: int = 200) -> Dict:
    rng = np.random.default_rng(DEFAULT_SEED)
    rec = build_kernel_table(plant, n_max, route="recursion")
    gap = build_kernel_table(plant, n_max, route="cascade")
    worst = 0.0
    for n in range(2, n_max + 1):
        pts = np.sort(rng.uniform(0.0, 1.0, size=(points, n)), axis=1)[:, ::-1]
        diff = np.max(np.abs(rec[n](1.0, pts) - gap[n](1.0, pts)))
        worst = max(worst, float(diff))
    return {"max_abs_difference": worst, "points": points, "passed": worst < 1e-6}


def _pdae_gain_data():
    plant = load_plant("pdae")
    kernels = build_kernel_table(plant, 3)
    series = VolterraKernelSeries({n: k for n, k in kernels.items()})
    gains = build_gains(series, GAIN_RULE)
    icfg = choose_radius(gains)
    return plant, kernels, series, gains, icfg


def preset_kernels(out_dir: Path) -> int:
    plant = load_plant("pdae")
    a_family = cascade(plant.family, 3)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "a_family.json").write_text(family_to_json(a_family))
    report = _kernel_cross_check(plant, 3)
    closed = pdae_closed_forms()
    rng = np.random.default_rng(DEFAULT_SEED)
    worst_closed = 0.0
    gap = build_kernel_table(plant, 3)
    for n, poly in closed.items():
        pts = np.sort(rng.uniform(0.0, 1.0, size=(200, n)), axis=1)[:, ::-1]
        diff = np.max(np.abs(poly(1.0, pts) - gap[n](1.0, pts)))
        worst_closed = max(worst_closed, float(diff))
    report["max_abs_vs_closed_form"] = worst_closed
    report["passed"] = report["passed"] and worst_closed < 1e-10
    _write_kernel_samples(gap, out_dir / "samples.csv")
    doc = {"version": __version__, "seed": DEFAULT_SEED, "consistency": report}
    (out_dir / "consistency.json").write_text(json.dumps(doc, indent=2))
    print(f"kernel consistency: max diff {report['max_abs_difference']:.3e}")
    return 0 if report["passed"] else 1


def _write_kernel_samples(table: Dict[int, KernelNode], path: Path) -> None:
    rng = np.random.default_rng(DEFAULT_SEED)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["order", "x", "xi", "value"])
        for n in sorted(table):
            pts = np.sort(rng.uniform(0.0, 1.0, size=(50, n)), axis=1)[:, ::-1]
            vals = table[n](1.0, pts)
            for row, v in zip(pts, vals):
                writer.writerow(
                    [n, "1", ";".join(f"{c:.12g}" for c in row), f"{v:.12g}"]
                )


def preset_gains(out_dir: Path) -> int:
    _, _, _, gains, icfg = _pdae_gain_data()
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "gains.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "k", "ell"])
        for s in np.linspace(0.0, 0.5, 51):
            writer.writerow(
                [f"{s:.12g}", f"{gain_k(gains, s):.12g}", f"{gain_ell(gains, s):.12g}"]
            )
    c1, c2 = stability_constants(icfg.s, 0.5, icfg.rho_L, 1.0)
    doc = {
        "s": icfg.s,
        "rho_L": icfg.rho_L,
        "ell_at_s": gain_ell(gains, icfg.s),
        "C1": c1,
        "C2": c2,
        "norms_sq": dict(zip(map(str, gains.orders), gains.norms_sq)),
        "rho_estimate": gains.rho_estimate(),
        "version": __version__,
        "quadrature": {"gain_rule": GAIN_RULE.resolution},
    }
    (out_dir / "chosen.json").write_text(json.dumps(doc, indent=2))
    print(f"balanced radius s={icfg.s:.6f}, rho_L={icfg.rho_L:.6f}, C1={c1:.4f}, C2={c2:.2f}")
    return 0


def preset_invert_demo(out_dir: Path) -> int:
    _, _, series, gains, icfg = _pdae_gain_data()
    out_dir.mkdir(parents=True, exist_ok=True)
    mesh = np.linspace(0.0, 1.0, 201)
    w = GridFunction(0.05 * np.sin(math.pi * mesh))
    _write_profile_csv(out_dir / "input.csv", mesh, {"w": w.values})
    result = invert_with_info(w, series, icfg)
    back = result.u - series_profile(series, result.u)
    residual = (back - w).l2_norm()
    _write_profile_csv(
        out_dir / "result.csv", mesh, {"u": result.u.values, "w_back": back.values}
    )
    doc = {
        "iterations": result.iterations,
        "converged": result.converged,
        "residual": residual,
        "contraction_bound": math.sqrt(gain_ell(gains, icfg.s)),
        "observed_ratios_max": max(result.contraction_ratios, default=0.0),
        "s": icfg.s,
        "rho_L": icfg.rho_L,
        "version": __version__,
    }
    (out_dir / "metadata.json").write_text(json.dumps(doc, indent=2))
    print(f"inversion round trip residual {residual:.3e} in {result.iterations} iterations")
    return 0 if result.converged and residual < 1e-8 else 1


def _write_profile_csv(path: Path, mesh: np.ndarray, columns: Dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x"] + list(columns))
        for i, x in enumerate(mesh):
            writer.writerow(
                [f"{x:.12g}"] + [f"{vals[i]:.12g}" for vals in columns.values()]
            )


def preset_verify_all(out_dir: Path) -> int:
    results = run_all(seed=DEFAULT_SEED)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = out_dir / "report.txt"
    lines = [r.line() for r in results]
    report.write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    if all(r.passed for r in results):
        print(f"all {len(results)} checks passed")
        return 0
    print(f"verification failures; report at {report}", file=sys.stderr)
    return 1


def run_preset(name: str, out_root: Path | None = None) -> int:
    """Execute one preset; returns the process exit code."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    root = out_root if out_root is not None else output_root()
    out_dir = root / name
    if name in PRESET_CONTROLLER:
        spec = ExperimentSpec(plant="pdae", controller=PRESET_CONTROLLER[name])
        meta = run_experiment(spec, out_dir)
        blow = meta.get("blow_up")
        final = meta.get("final_l2")
        print(
            f"{name}: controller={spec.controller} blow_up={blow} "
            f"final_l2={final} max_abs={meta.get('max_abs'):.4g}"
        )
        return 1 if meta["_failures"] else 0
    if name == "kernels":
        return preset_kernels(out_dir)
    if name == "gains":
        return preset_gains(out_dir)
    if name == "invert-demo":
        return preset_invert_demo(out_dir)
    return preset_verify_all(out_dir)


def parse_config(path: str | Path) -> ExperimentSpec:
    """Read a key = value experiment config."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    spec = ExperimentSpec()
    overrides: Dict = {}
    bool_keys = {
        "check_kernels",
        "check_gains",
        "check_inversion",
        "check_mild_solution",
    }
    float_keys = {"cfl", "t_end", "blow_up_threshold", "initial_scale"}
    int_keys = {"mesh_points", "snapshot_count"}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        try:
            if key == "plant":
                spec.plant = value
            elif key == "controller":
                spec.controller = value
            elif key == "output_dir":
                spec.output_dir = value
            elif key in bool_keys:
                setattr(spec, key, value.lower() in ("1", "true", "yes", "on"))
            elif key in float_keys:
                overrides[key] = float(Fraction(value))
            elif key in int_keys:
                overrides[key] = int(value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}")
    spec.overrides = overrides
    return spec


def cmd_simulate(args) -> int:
    spec = parse_config(args.config)
    root = output_root(args.output)
    out_dir = root / (spec.output_dir or "simulate")
    meta = run_experiment(spec, out_dir)
    print(
        f"simulate: controller={spec.controller} blow_up={meta.get('blow_up')} "
        f"final_l2={meta.get('final_l2')}"
    )
    return 1 if meta["_failures"] else 0


def cmd_kernels(args) -> int:
    plant = load_plant(args.plant)
    out_dir = output_root(args.output) / "kernels"
    out_dir.mkdir(parents=True, exist_ok=True)
    a_family = cascade(plant.family, args.order)
    (out_dir / "a_family.json").write_text(family_to_json(a_family))
    table = build_kernel_table(plant, args.order)
    _write_kernel_samples(table, out_dir / "samples.csv")
    report = _kernel_cross_check(plant, args.order)
    doc = {"version": __version__, "seed": DEFAULT_SEED, "consistency": report}
    (out_dir / "consistency.json").write_text(json.dumps(doc, indent=2))
    print(
        f"kernels up to order {args.order}: cross-check max diff "
        f"{report['max_abs_difference']:.3e}"
    )
    return 0 if report["passed"] else 1


def cmd_invert(args) -> int:
    rows = list(csv.reader(open(args.input)))
    if not rows or len(rows) < 3:
        raise ConfigError(f"input {args.input} has too few rows")
    header = rows[0]
    try:
        w_col = header.index("w")
    except ValueError:
        w_col = 1
    values = np.array([float(r[w_col]) for r in rows[1:]])
    w = GridFunction(values)
    _, _, series, gains, icfg = _pdae_gain_data()
    result = invert_with_info(w, series, icfg)
    out_dir = output_root(args.output) / "invert"
    out_dir.mkdir(parents=True, exist_ok=True)
    back = result.u - series_profile(series, result.u)
    _write_profile_csv(
        out_dir / "result.csv", w.mesh, {"u": result.u.values, "w_back": back.values}
    )
    residual = (back - w).l2_norm()
    doc = {
        "iterations": result.iterations,
        "converged": result.converged,
        "residual": residual,
        "version": __version__,
    }
    (out_dir / "metadata.json").write_text(json.dumps(doc, indent=2))
    print(f"invert: residual {residual:.3e} in {result.iterations} iterations")
    return 0 if result.converged else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volback",
        description="Boundary-feedback kernel construction and closed-loop simulation",
    )
    parser.add_argument(
        "--output", default=None, help="output root (else VOLBACK_OUTPUT_ROOT)"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a named preset")
    p_run.add_argument("preset", choices=PRESETS)
    p_sim = sub.add_parser("simulate", help="simulate from a config file")
    p_sim.add_argument("--config", required=True)
    p_ker = sub.add_parser("kernels", help="build kernels for a plant file")
    p_ker.add_argument("--plant", required=True)
    p_ker.add_argument("--order", type=int, default=3)
    sub.add_parser("gains", help="gain table for the builtin plant")
    p_inv = sub.add_parser("invert", help="invert a target profile from CSV")
    p_inv.add_argument("--input", required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return run_preset(args.preset, output_root(args.output))
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "kernels":
            return cmd_kernels(args)
        if args.command == "gains":
            return preset_gains(output_root(args.output) / "gains")
        if args.command == "invert":
            return cmd_invert(args)
        parser.error(f"unknown command {args.command!r}")
    except (ConfigError, SimConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
