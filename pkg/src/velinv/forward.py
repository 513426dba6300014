"""2D acoustic forward solver on a regular grid.

Physics (pressure-velocity form)::

    rho dv/dt = -grad p
    dp/dt     = -K div v

The solver advances the hyperbolic system with a characteristic upwind
scheme and dimensional splitting: along each axis the Riemann invariants
w+- = p +- Z*v_axis (Z = rho*cp) propagate at +-cp and are pulled back
along their characteristics with linear interpolation (first order) or a
min-mod limited reconstruction (optional second order). The transverse
velocity component is untouched by a sweep.

Boundaries: free surface on top (pressure forced to zero; this converts
the additive surface pressure source into an equivalent vertical-velocity
source) and absorbing elsewhere (incoming invariants set to zero, outgoing
pass).

Stability requires the Courant number cp*dt/dh <= 1 per axis; runs derive
dt from the acquisition Courant factor (default 0.5) and round it so that
the recording interval is an integer number of solver steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import GridSpec, MaterialFields, SeismicRecord, ShotGather, VelocityModel

ABSORBING_SIDES = ("left", "right", "bottom")


class SimulationError(Exception):
    """Numerical failure during a forward run (CFL violation, NaN field)."""


@dataclass
class WaveState:
    """Pressure and velocity fields; mutable, owned by a single simulation."""

    p: np.ndarray
    vx: np.ndarray
    vy: np.ndarray

    def __post_init__(self):
        if not (self.p.shape == self.vx.shape == self.vy.shape):
            raise ValueError("p, vx, vy must share one shape")

    def copy(self) -> "WaveState":
        return WaveState(self.p.copy(), self.vx.copy(), self.vy.copy())


def zero_state(grid: GridSpec) -> WaveState:
    shape = grid.shape
    return WaveState(np.zeros(shape), np.zeros(shape), np.zeros(shape))


@dataclass(frozen=True)
class SourceSpec:
    """Surface emitter: additive pressure pulse at one top-row cell."""

    column_index: int
    f0: float = 15.0
    amplitude: float = 1.0e6
    delay: float | None = None

    def __post_init__(self):
        if self.f0 <= 0:
            raise ValueError(f"central frequency must be positive, got {self.f0}")
        if self.delay is None:
            object.__setattr__(self, "delay", 1.2 / self.f0)

    def moved_to(self, column: int) -> "SourceSpec":
        return SourceSpec(column, self.f0, self.amplitude, self.delay)


@dataclass(frozen=True)
class AcquisitionSpec:
    emitter_columns: tuple[int, ...]
    receiver_columns: tuple[int, ...]
    t_total: float
    dt_record: float = 0.01
    cfl: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "emitter_columns", tuple(int(c) for c in self.emitter_columns))
        object.__setattr__(self, "receiver_columns", tuple(int(c) for c in self.receiver_columns))
        if not self.emitter_columns:
            raise ValueError("need at least one emitter column")
        if self.t_total <= 0:
            raise ValueError(f"t_total must be positive, got {self.t_total}")
        if self.dt_record <= 0:
            raise ValueError(f"dt_record must be positive, got {self.dt_record}")
        if not (0.0 < self.cfl <= 1.0):
            raise ValueError(f"Courant factor must be in (0, 1], got {self.cfl}")

    def validate_against(self, grid: GridSpec) -> None:
        for c in self.emitter_columns + self.receiver_columns:
            if not (0 <= c < grid.nx):
                raise ValueError(f"column {c} outside grid with nx={grid.nx}")

    @property
    def n_samples(self) -> int:
        return int(round(self.t_total / self.dt_record))


def ricker(t, f0: float):
    """Ricker wavelet (1 - 2 pi^2 f0^2 t^2) exp(-pi^2 f0^2 t^2)."""
    arg = (math.pi * f0) ** 2 * np.square(t)
    return (1.0 - 2.0 * arg) * np.exp(-arg)


def compute_dt(mat: MaterialFields, grid: GridSpec, acq: AcquisitionSpec) -> tuple[float, int]:
    """Solver step and substep count: dt = dt_record / n_sub under the CFL bound."""
    c_max = float(np.max(mat.speed))
    dt_max = acq.cfl * min(grid.dx, grid.dy) / c_max
    n_sub = max(1, math.ceil(acq.dt_record / dt_max - 1e-12))
    return acq.dt_record / n_sub, n_sub


# ---------------------------------------------------------------------------
# sweeps and boundary operators
# ---------------------------------------------------------------------------


def _shift(a: np.ndarray, axis: int, direction: int) -> np.ndarray:
    """Neighbor values with edge replication: out[i] = a[i - direction] along axis."""
    out = np.empty_like(a)
    if axis == 1:
        if direction > 0:
            out[:, 1:] = a[:, :-1]
            out[:, 0] = a[:, 0]
        else:
            out[:, :-1] = a[:, 1:]
            out[:, -1] = a[:, -1]
    else:
        if direction > 0:
            out[1:, :] = a[:-1, :]
            out[0, :] = a[0, :]
        else:
            out[:-1, :] = a[1:, :]
            out[-1, :] = a[-1, :]
    return out


def _minmod_slope(a: np.ndarray, axis: int) -> np.ndarray:
    d_bwd = a - _shift(a, axis, +1)
    d_fwd = _shift(a, axis, -1) - a
    return 0.5 * (np.sign(d_bwd) + np.sign(d_fwd)) * np.minimum(np.abs(d_bwd), np.abs(d_fwd))


def _foot_values(a: np.ndarray, alpha: np.ndarray, axis: int, direction: int,
                 order: int) -> np.ndarray:
    """Field value at the characteristic foot point, alpha cells upstream."""
    if order == 1:
        return a + alpha * (_shift(a, axis, direction) - a)
    slope = _minmod_slope(a, axis)
    near = alpha <= 0.5
    far = _shift(a, axis, direction) + _shift(slope, axis, direction) * direction * (1.0 - alpha)
    return np.where(near, a - slope * direction * alpha, far)


def _sweep(p: np.ndarray, v: np.ndarray, z: np.ndarray, alpha: np.ndarray, axis: int,
           order: int) -> None:
    """One characteristic sweep along ``axis``, updating p and v in place.

    The +direction invariant w+ = p + Z v is pulled from ``alpha`` cells
    upstream, w- from downstream, both with the target cell's impedance.
    """
    p_up = _foot_values(p, alpha, axis, +1, order)
    v_up = _foot_values(v, alpha, axis, +1, order)
    p_dn = _foot_values(p, alpha, axis, -1, order)
    v_dn = _foot_values(v, alpha, axis, -1, order)
    p[...] = 0.5 * (p_up + p_dn) + 0.5 * z * (v_up - v_dn)
    v[...] = 0.5 * (p_up - p_dn) / z + 0.5 * (v_up + v_dn)


def step_direction(state: WaveState, mat: MaterialFields, grid: GridSpec, dt: float,
                   axis: str, order: int = 1, cfl_limit: float = 1.0) -> WaveState:
    """Advance one directional sweep ('x' or 'y') by dt, in place."""
    if axis not in ("x", "y"):
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    c = mat.speed
    z = mat.impedance
    dh = grid.dx if axis == "x" else grid.dy
    c_max = float(c.max())
    if c_max * dt > cfl_limit * dh * (1.0 + 1e-12):
        raise SimulationError(
            f"CFL violated on {axis} sweep: max speed {c_max:.1f} m/s with dt {dt:.3e} s "
            f"exceeds limit {cfl_limit} * {dh} m"
        )
    alpha = c * (dt / dh)
    if axis == "x":
        _sweep(state.p, state.vx, z, alpha, axis=1, order=order)
    else:
        _sweep(state.p, state.vy, z, alpha, axis=0, order=order)
    return state


def apply_free_surface(state: WaveState, mat: MaterialFields) -> WaveState:
    """Zero-pressure condition on the top row.

    The incoming (downward) invariant is replaced with the negated outgoing
    one, so pressure vanishes exactly and the wave reflects with flipped
    pressure sign: vy[0] -= p[0]/Z, then p[0] = 0.
    """
    z_top = mat.impedance[0, :]
    state.vy[0, :] -= state.p[0, :] / z_top
    state.p[0, :] = 0.0
    return state


def apply_absorbing(state: WaveState, mat: MaterialFields,
                    sides: tuple[str, ...] = ABSORBING_SIDES) -> WaveState:
    """Zero the incoming characteristic invariant on the given boundaries."""
    z = mat.impedance
    p, vx, vy = state.p, state.vx, state.vy
    for side in sides:
        if side == "left":  # incoming w+ = p + Z vx
            w_out = p[:, 0] - z[:, 0] * vx[:, 0]
            p[:, 0] = 0.5 * w_out
            vx[:, 0] = -0.5 * w_out / z[:, 0]
        elif side == "right":  # incoming w- = p - Z vx
            w_out = p[:, -1] + z[:, -1] * vx[:, -1]
            p[:, -1] = 0.5 * w_out
            vx[:, -1] = 0.5 * w_out / z[:, -1]
        elif side == "bottom":  # incoming w- = p - Z vy
            w_out = p[-1, :] + z[-1, :] * vy[-1, :]
            p[-1, :] = 0.5 * w_out
            vy[-1, :] = 0.5 * w_out / z[-1, :]
        elif side == "top":  # incoming w+ = p + Z vy
            w_out = p[0, :] - z[0, :] * vy[0, :]
            p[0, :] = 0.5 * w_out
            vy[0, :] = -0.5 * w_out / z[0, :]
        else:
            raise ValueError(f"unknown boundary side {side!r}")
    return state


def discrete_energy(state: WaveState, mat: MaterialFields, grid: GridSpec) -> float:
    """Total field energy sum(p^2/(2K) + rho |v|^2 / 2) * dx * dy."""
    e = np.sum(state.p**2 / (2.0 * mat.bulk)) + np.sum(
        mat.rho * (state.vx**2 + state.vy**2) / 2.0
    )
    return float(e * grid.dx * grid.dy)


# ---------------------------------------------------------------------------
# shot simulation
# ---------------------------------------------------------------------------


def simulate_shot(vm: VelocityModel, mat: MaterialFields, src: SourceSpec,
                  acq: AcquisitionSpec, snapshot_times=None, order: int = 1):
    """Run one emitter and record surface vertical velocity.

    Per solver step: X sweep, Y sweep, absorbing sides/bottom, additive
    Ricker pressure injection at the source surface cell, free surface on
    top (kept last so the zero-pressure invariant holds after every step).

    Returns (ShotGather, snapshots) where snapshots is a list of
    (time, |v| magnitude field) pairs for the requested times, or None.
    """
    grid = vm.grid
    acq.validate_against(grid)
    if not (0 <= src.column_index < grid.nx):
        raise ValueError(f"source column {src.column_index} outside grid nx={grid.nx}")

    c = mat.speed
    z = mat.impedance
    dt, n_sub = compute_dt(mat, grid, acq)
    c_max = float(c.max())
    if c_max * dt > min(grid.dx, grid.dy) * (1.0 + 1e-12):
        raise SimulationError(
            f"CFL violated: max speed {c_max:.1f} m/s with dt {dt:.3e} s on "
            f"{min(grid.dx, grid.dy)} m cells"
        )
    alpha_x = c * (dt / grid.dx)
    alpha_y = c * (dt / grid.dy)

    n_samples = acq.n_samples
    receivers = np.asarray(acq.receiver_columns, dtype=np.intp)
    gather = np.zeros((len(receivers), n_samples))

    want_snaps = snapshot_times is not None
    snap_steps = {}
    snapshots = None
    if want_snaps:
        total_steps = (n_samples - 1) * n_sub
        for t_req in snapshot_times:
            snap_steps.setdefault(min(int(round(t_req / dt)), total_steps), float(t_req))
        snapshots = []
        if 0 in snap_steps:
            snapshots.append((snap_steps.pop(0), np.zeros(grid.shape, dtype=np.float32)))

    state = zero_state(grid)
    p, vx, vy = state.p, state.vx, state.vy
    step = 0
    for k in range(n_samples):
        gather[:, k] = vy[0, receivers]
        if not np.isfinite(p).all():
            raise SimulationError(f"non-finite pressure at solver step {step} (t={step * dt:.4f} s)")
        if k == n_samples - 1:
            break
        for _ in range(n_sub):
            _sweep(p, vx, z, alpha_x, axis=1, order=order)
            _sweep(p, vy, z, alpha_y, axis=0, order=order)
            apply_absorbing(state, mat)
            t_next = (step + 1) * dt
            p[0, src.column_index] += src.amplitude * float(ricker(t_next - src.delay, src.f0))
            apply_free_surface(state, mat)
            step += 1
            if want_snaps and step in snap_steps:
                snapshots.append((snap_steps[step], np.sqrt(vx**2 + vy**2).astype(np.float32)))

    shot = ShotGather.from_data(gather.astype(np.float32), acq.dt_record, src.column_index)
    return shot, snapshots


def simulate_record(vm: VelocityModel, acq: AcquisitionSpec, src_template: SourceSpec,
                    mat: MaterialFields | None = None, model_id: str = "",
                    order: int = 1) -> SeismicRecord:
    """One shot per emitter column, identical settings, ordered by column."""
    from .core import build_material_fields

    if mat is None:
        mat = build_material_fields(vm)
    shots = []
    for col in sorted(acq.emitter_columns):
        shot, _ = simulate_shot(vm, mat, src_template.moved_to(col), acq, order=order)
        shots.append(shot)
    return SeismicRecord(shots=tuple(shots), model_id=model_id)
