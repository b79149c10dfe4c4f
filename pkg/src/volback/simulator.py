"""Closed-loop simulation of the controlled transport equation.

The plant is u_t = u_x + F[u] on x in [0, 1) with the boundary value
u(1, t) carrying the control.  Space is discretized on the uniform mesh
with the one-sided difference toward x = 1 (the transport runs leftward,
so that is the upwind side), time stepping is Heun's two-stage method
with dt = CFL * dx, and the boundary node is refreshed with the feedback
value at every stage so the scheme stays consistent with the
time-varying boundary condition.

Also here: the target semigroup (pure left transport with zero inflow,
which annihilates any profile in finite time 1), the closed-loop
stability constants, and the mild-solution residual that measures how
well the transformed state w = u - K[u] follows the target flow.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .charkernels import is_pdae_plant
from .simplex import QuadratureRule
from .volterra import (
    GridFunction,
    VolterraKernelSeries,
    _monomial_map,
    _order_value,
    _poly_profile,
    series_profile,
)

CONTROLLERS = ("open-loop", "order-2", "order-3", "full-N_max")


class SimConfigError(ValueError):
    """A simulation configuration failed validation."""


class MissingKernelError(ValueError):
    """The controller needs a kernel order that was not supplied."""


class NotApplicableError(ValueError):
    """The requested diagnostic is undefined for this record."""


def cubic_pulse(x: np.ndarray) -> np.ndarray:
    """The reference initial condition 140 x^3 (1 - x)."""
    return 140.0 * x**3 * (1.0 - x)


@dataclass
class SimConfig:
    """Protocol knobs of one simulation run.

    ``initial`` is either the name of a builtin profile (currently
    ``cubic-pulse``) or a callable mapping mesh coordinates to values;
    ``initial_scale`` multiplies it.  ``controller`` selects how many
    kernel orders feed the boundary value.
    """

    mesh_points: int = 201
    cfl: float = 0.5
    t_end: float = 2.0
    controller: str = "open-loop"
    blow_up_threshold: float = 1e6
    initial: str | Callable[[np.ndarray], np.ndarray] = "cubic-pulse"
    initial_scale: float = 1.0
    snapshot_count: int = 50

    def __post_init__(self) -> None:
        if self.mesh_points < 3:
            raise SimConfigError(f"need at least 3 mesh points, got {self.mesh_points}")
        if not (0.0 < self.cfl <= 1.0):
            raise SimConfigError(f"CFL must lie in (0, 1], got {self.cfl}")
        if self.blow_up_threshold <= 0:
            raise SimConfigError("blow-up threshold must be positive")
        if self.t_end <= 0:
            raise SimConfigError("horizon must be positive")
        if self.controller not in CONTROLLERS:
            raise SimConfigError(
                f"unknown controller {self.controller!r}; expected one of {CONTROLLERS}"
            )
        if self.snapshot_count < 2:
            raise SimConfigError("need at least 2 snapshot frames")

    def initial_values(self, mesh: np.ndarray) -> np.ndarray:
        if callable(self.initial):
            vals = np.asarray(self.initial(mesh), dtype=float)
        elif self.initial == "cubic-pulse":
            vals = cubic_pulse(mesh)
        else:
            raise SimConfigError(f"unknown initial profile {self.initial!r}")
        return self.initial_scale * vals

    def describe(self) -> Dict:
        return {
            "mesh_points": self.mesh_points,
            "cfl": self.cfl,
            "t_end": self.t_end,
            "controller": self.controller,
            "blow_up_threshold": self.blow_up_threshold,
            "initial": self.initial if isinstance(self.initial, str) else "custom",
            "initial_scale": self.initial_scale,
            "snapshot_count": self.snapshot_count,
        }


@dataclass
class SimulationRecord:
    """Everything a run produced, decimated where bulky."""

    times: np.ndarray
    l2_norms: np.ndarray
    sup_norms: np.ndarray
    controls: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray
    blow_up: float | None
    final_l2: float | None
    max_abs: float
    config: Dict

    def __post_init__(self) -> None:
        if np.any(self.l2_norms < 0):
            raise SimConfigError("norm series must be nonnegative")
        if self.blow_up is not None and self.blow_up > self.config["t_end"] + 1e-12:
            raise SimConfigError("blow-up time cannot exceed the horizon")

    @property
    def mesh(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.snapshots.shape[1])

    def snapshot_at(self, t: float) -> tuple[float, GridFunction]:
        """The stored frame closest to time t."""
        i = int(np.argmin(np.abs(self.snapshot_times - t)))
        return float(self.snapshot_times[i]), GridFunction(self.snapshots[i])


def _advection(values: np.ndarray, dx: float) -> np.ndarray:
    """One-sided difference toward x = 1 (backward fill at the last node)."""
    out = np.empty_like(values)
    out[:-1] = (values[1:] - values[:-1]) / dx
    out[-1] = (values[-1] - values[-2]) / dx
    return out


def rhs_pdae(u: GridFunction) -> GridFunction:
    """Right-hand side u_x + v^2/2 with v the running integral of u."""
    v = cumulative_trapezoid(u.values, dx=u.dx, initial=0.0)
    return GridFunction(_advection(u.values, u.dx) + 0.5 * v**2)


def _normalize_kernels(kernels) -> Dict[int, Callable]:
    if kernels is None:
        return {}
    if isinstance(kernels, VolterraKernelSeries):
        return dict(kernels.kernels)
    if isinstance(kernels, Mapping):
        return {int(n): k for n, k in kernels.items()}
    return {node.order: node for node in kernels}


def _mesh_tensor_value(kern: Callable, n: int, u: GridFunction) -> float:
    """Mesh-aligned nested trapezoid for a non-polynomial kernel at x = 1.

    Materializes the kernel on the full triangular mesh tensor, so it is
    only practical for n <= 3; polynomial kernels never come here.
    """
    if n > 3:
        raise MissingKernelError(
            "mesh-aligned feedback for non-polynomial kernels supports orders <= 3"
        )
    mesh = u.mesh
    m = u.size
    dx = u.dx
    wt = np.full(m, dx)
    wt[0] *= 0.5
    wt[-1] *= 0.5

    if n == 2:
        x1, x2 = np.meshgrid(mesh, mesh, indexing="ij")
        pts = np.stack([x1.ravel(), x2.ravel()], axis=1)
        kv = np.asarray(kern(1.0, pts), dtype=float).reshape(m, m)
        uu = u.values
        inner = np.zeros(m)
        for j in range(1, m):
            wrow = np.full(j + 1, dx)
            wrow[0] *= 0.5
            wrow[-1] *= 0.5
            inner[j] = float(np.dot(kv[j, : j + 1] * uu[: j + 1], wrow))
        return float(np.dot(inner * uu, wt))
    x1, x2, x3 = np.meshgrid(mesh, mesh, mesh, indexing="ij")
    pts = np.stack([x1.ravel(), x2.ravel(), x3.ravel()], axis=1)
    kv = np.asarray(kern(1.0, pts), dtype=float).reshape(m, m, m)
    uu = u.values
    total = 0.0
    for j in range(1, m):
        inner2 = np.zeros(j + 1)
        for i in range(1, j + 1):
            wrow = np.full(i + 1, dx)
            wrow[0] *= 0.5
            wrow[-1] *= 0.5
            inner2[i] = float(np.dot(kv[j, i, : i + 1] * uu[: i + 1], wrow))
        wmid = np.full(j + 1, dx)
        wmid[0] *= 0.5
        wmid[-1] *= 0.5
        outerw = wt[j]
        total += outerw * uu[j] * float(np.dot(inner2 * uu[: j + 1], wmid))
    return total


def feedback(
    u: GridFunction,
    kernels,
    order_cap: int | None = None,
    rule: QuadratureRule | None = None,
) -> float:
    """Boundary value K[u](1) summed over kernel orders up to the cap.

    Polynomial kernels are integrated by the mesh-aligned nested
    trapezoid cascade.  Every order 2..order_cap must be present in
    ``kernels`` (pass the zero kernel explicitly if an order genuinely
    vanishes).
    """
    table = _normalize_kernels(kernels)
    if order_cap is None:
        order_cap = max(table) if table else 1
    total = 0.0
    for n in range(2, order_cap + 1):
        if n not in table:
            raise MissingKernelError(f"feedback needs the order-{n} kernel")
        kern = table[n]
        mono = _monomial_map(kern)
        if mono is not None:
            total += float(_poly_profile(mono, [u.values] * n, u.mesh)[-1])
        elif rule is not None:
            total += _order_value(kern, n, u, 1.0, rule)
        else:
            total += _mesh_tensor_value(kern, n, u)
    return total


def _controller_cap(controller: str, table: Dict[int, Callable]) -> int | None:
    if controller == "open-loop":
        return None
    if controller == "order-2":
        return 2
    if controller == "order-3":
        return 3
    return max(table) if table else None


def simulate(
    cfg: SimConfig,
    plant: VolterraKernelSeries | None,
    kernels=None,
    rule: QuadratureRule | None = None,
) -> SimulationRecord:
    """Run the closed loop and record the trajectory.

    ``plant`` may be None (pure transport, the target system) or a
    kernel series; the quadratic integral example is recognised and uses
    its closed-form nonlinearity.  ``kernels`` supplies the controller
    kernels for the non-open-loop controllers.  Halts early when the sup
    norm passes the blow-up threshold or any value goes non-finite, and
    records that time.
    """
    m = cfg.mesh_points
    mesh = np.linspace(0.0, 1.0, m)
    dx = 1.0 / (m - 1)
    dt = cfg.cfl * dx
    table = _normalize_kernels(kernels)
    cap = _controller_cap(cfg.controller, table)
    if cfg.controller != "open-loop":
        if not table:
            raise MissingKernelError(
                f"controller {cfg.controller!r} needs kernels"
            )
        for n in range(2, (cap or 1) + 1):
            if n not in table:
                raise MissingKernelError(f"controller needs the order-{n} kernel")

    nonlinearity = _plant_nonlinearity(plant, rule)

    def rhs(values: np.ndarray) -> np.ndarray:
        out = _advection(values, dx)
        if nonlinearity is not None:
            out = out + nonlinearity(values)
        return out

    def boundary(values: np.ndarray) -> float:
        if cap is None:
            return 0.0
        return feedback(GridFunction(values), table, cap, rule)

    n_steps = max(1, int(math.ceil(cfg.t_end / dt - 1e-12)))
    frame_ids = set(
        int(i) for i in np.round(np.linspace(0, n_steps, cfg.snapshot_count))
    )

    u = cfg.initial_values(mesh).astype(float)
    u[-1] = boundary(u)

    times = [0.0]
    l2 = [_l2(u, dx)]
    sup = [float(np.max(np.abs(u)))]
    controls = [u[-1]]
    snap_times = [0.0]
    snaps = [u.copy()]
    blow_up: float | None = None

    t = 0.0
    for k in range(1, n_steps + 1):
        step = min(dt, cfg.t_end - t)
        f1 = rhs(u)
        pred = u + step * f1
        pred[-1] = boundary(pred)
        f2 = rhs(pred)
        nxt = u + 0.5 * step * (f1 + f2)
        nxt[-1] = boundary(nxt)
        t += step
        u = nxt
        bad = not np.all(np.isfinite(u)) or np.max(np.abs(u)) > cfg.blow_up_threshold
        if bad:
            blow_up = t
            break
        times.append(t)
        l2.append(_l2(u, dx))
        sup.append(float(np.max(np.abs(u))))
        controls.append(u[-1])
        if k in frame_ids:
            snap_times.append(t)
            snaps.append(u.copy())

    return SimulationRecord(
        times=np.asarray(times),
        l2_norms=np.asarray(l2),
        sup_norms=np.asarray(sup),
        controls=np.asarray(controls),
        snapshot_times=np.asarray(snap_times),
        snapshots=np.asarray(snaps),
        blow_up=blow_up,
        final_l2=l2[-1] if blow_up is None else None,
        max_abs=float(np.max(sup)),
        config=cfg.describe(),
    )


def _l2(values: np.ndarray, dx: float) -> float:
    return float(np.sqrt(np.trapezoid(values**2, dx=dx)))


def _plant_nonlinearity(
    plant: VolterraKernelSeries | None, rule: QuadratureRule | None
) -> Callable[[np.ndarray], np.ndarray] | None:
    if plant is None or plant.is_zero():
        return None
    if is_pdae_plant(plant):

        def quadratic(values: np.ndarray) -> np.ndarray:
            v = cumulative_trapezoid(values, dx=1.0 / (len(values) - 1), initial=0.0)
            return 0.5 * v**2

        return quadratic

    def generic(values: np.ndarray) -> np.ndarray:
        return series_profile(plant, GridFunction(values), rule).values

    return generic


def target_semigroup(w0: GridFunction, t: float) -> GridFunction:
    """Left transport with zero inflow: (S(t) w0)(x) = w0(x + t) or 0.

    Exactly the zero function for t >= 1.
    """
    if t < 0:
        raise SimConfigError(f"semigroup time must be nonnegative, got {t}")
    if t == 0.0:
        return GridFunction(w0.values.copy())
    mesh = w0.mesh
    shifted = mesh + t
    vals = np.where(shifted < 1.0, np.interp(shifted, mesh, w0.values), 0.0)
    return GridFunction(vals)


def stability_constants(
    s: float, ell_s: float, rho_l: float, lam: float
) -> tuple[float, float]:
    """Closed-loop decay constants (C1, C2) from the gain data.

    C1 bounds the admissible initial norm, C2 the overshoot:
    ||u(t)|| <= C2 exp(-lam t) ||u0|| whenever ||u0|| < C1.
    """
    if not (0.0 <= ell_s < 1.0):
        raise SimConfigError(f"ell_s must lie in [0, 1), got {ell_s}")
    if lam <= 0:
        raise SimConfigError(f"decay rate must be positive, got {lam}")
    if s < 0 or rho_l < 0:
        raise SimConfigError("radii cannot be negative")
    root = math.sqrt(ell_s)
    c1 = min(math.sqrt(s), math.sqrt(rho_l) / (1.0 + root))
    c2 = math.exp(lam) * (1.0 + root) / (1.0 - root)
    return c1, c2


def mild_solution_residual(
    record: SimulationRecord,
    kernels,
    sample_times: Sequence[float],
    rule: QuadratureRule | None = None,
) -> float:
    """Max L2 distance between w = u - K[u] and the target flow of w0.

    Uses the stored snapshots nearest to the requested times.  Undefined
    (raises) for blow-up records.
    """
    if record.blow_up is not None:
        raise NotApplicableError(
            "mild-solution residual is undefined for a blow-up record"
        )
    table = _normalize_kernels(kernels)
    series = VolterraKernelSeries(table)
    u0 = GridFunction(record.snapshots[0])
    w0 = u0 - series_profile(series, u0, rule)
    worst = 0.0
    for t in sample_times:
        t_snap, u_t = record.snapshot_at(t)
        w_t = u_t - series_profile(series, u_t, rule)
        target = target_semigroup(w0, t_snap)
        worst = max(worst, (w_t - target).l2_norm())
    return worst


def write_series_csv(record: SimulationRecord, path: str) -> None:
    """Per-step series: time, L2 norm, control value, sup norm."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "l2_norm", "control", "sup_norm"])
        for row in zip(
            record.times, record.l2_norms, record.controls, record.sup_norms
        ):
            writer.writerow([f"{v:.12g}" for v in row])


def write_snapshots_csv(record: SimulationRecord, path: str) -> None:
    """Decimated state frames; first column is time, then one per node."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"{x:.12g}" for x in record.mesh])
        for t, row in zip(record.snapshot_times, record.snapshots):
            writer.writerow([f"{t:.12g}"] + [f"{v:.12g}" for v in row])


def write_metadata_json(record: SimulationRecord, path: str, extra: Dict | None = None) -> None:
    from . import __version__

    doc = {
        "config": record.config,
        "blow_up": record.blow_up,
        "final_l2": record.final_l2,
        "max_abs": record.max_abs,
        "version": __version__,
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=float)
