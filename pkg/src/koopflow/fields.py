"""Benchmark domains, manufactured exact solutions, and trajectory datasets.

Two rectangular two-region benchmarks are provided, each with a closed-form
solution of the coupled free-flow/porous-media system: a dissipative one
(every channel decays as e^-t) and a time-periodic one (every channel
oscillates as cos(2*pi*t)). A third synthetic variant reuses the periodic
spatial modes under an externally driven temporal factor with a cosine
ramp-up, used to exercise the forced latent-dynamics path.

Grids are uniform, sampled at cell centers so that no sample lands exactly
on the interface. Channels are zero-filled outside their home subdomain and
a binary region mask carries the geometry.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import sympy

from .errors import ConfigError

CHANNELS = ("u1", "u2", "p", "phi")

# free-flow channels live where mask == 1, the porous channel where mask == 0
FREE_FLOW_CHANNELS = ("u1", "u2", "p")
POROUS_CHANNELS = ("phi",)


class Example(str, enum.Enum):
    """Benchmark identifier, also used verbatim in dataset manifests."""

    SD = "sd"          # dissipative free-flow over a porous layer
    NSD = "nsd"        # time-periodic free-flow/porous benchmark
    FORCED = "forced"  # periodic spatial modes under an external driver


@dataclass(frozen=True)
class DomainSpec:
    example: Example
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    interface_y: float
    grid_h: int
    grid_w: int
    mask: np.ndarray  # [H, W]; 1 = free flow, 0 = porous

    @property
    def shape(self):
        return (self.grid_h, self.grid_w)


@dataclass(frozen=True)
class FieldSample:
    """Point values of the four physical channels."""

    u1: float
    u2: float
    p: float
    phi: float


@dataclass
class FieldSnapshot:
    """One time slice of the flow state on the grid, plus the region mask."""

    t: float
    fields: np.ndarray  # [4, H, W] in CHANNELS order
    mask: np.ndarray    # [H, W]

    @property
    def u1(self):
        return self.fields[0]

    @property
    def u2(self):
        return self.fields[1]

    @property
    def p(self):
        return self.fields[2]

    @property
    def phi(self):
        return self.fields[3]


@dataclass
class TrajectoryDataset:
    """Ordered snapshots with times, normalization stats, and geometry."""

    domain: DomainSpec
    times: np.ndarray        # [T], strictly increasing, uniform spacing
    data: np.ndarray         # [T, 4, H, W]
    dt: float
    train_horizon: float
    norm_scale: np.ndarray | None = None   # [4] per-channel max-abs, None = raw
    zero_channels: np.ndarray | None = None  # [4] bool
    forcing_freq: float | None = None
    ramp_T: float | None = None

    def __len__(self):
        return len(self.times)

    @property
    def is_normalized(self):
        return self.norm_scale is not None

    @property
    def n_train(self):
        """Number of snapshots inside the training window."""
        return int(np.sum(self.times <= self.train_horizon + 1e-9))

    def snapshot(self, i: int) -> FieldSnapshot:
        return FieldSnapshot(float(self.times[i]), self.data[i], self.domain.mask)


_GEOMETRY = {
    Example.SD: ((0.0, np.pi), (-1.0, 1.0), 0.0),
    Example.NSD: ((0.0, 1.0), (-0.25, 0.75), 0.0),
    Example.FORCED: ((0.0, 1.0), (-0.25, 0.75), 0.0),
}


def make_domain(example, grid_h: int, grid_w: int) -> DomainSpec:
    """Build the named benchmark geometry with a cell-centered region mask."""
    try:
        example = Example(example)
    except ValueError:
        raise ConfigError(f"unknown example id: {example!r}") from None
    if grid_h < 1 or grid_w < 1:
        raise ConfigError(f"degenerate grid {grid_h}x{grid_w}")
    x_range, y_range, z_if = _GEOMETRY[example]
    y = cell_centers_1d(y_range, grid_h)
    mask = np.zeros((grid_h, grid_w))
    mask[y < z_if, :] = 1.0
    return DomainSpec(example, x_range, y_range, z_if, grid_h, grid_w, mask)


def cell_centers_1d(rng, n: int) -> np.ndarray:
    lo, hi = rng
    h = (hi - lo) / n
    return lo + (np.arange(n) + 0.5) * h


def cell_centers(domain: DomainSpec):
    """(x[W], y[H]) coordinates of the cell centers."""
    return (
        cell_centers_1d(domain.x_range, domain.grid_w),
        cell_centers_1d(domain.y_range, domain.grid_h),
    )


def unit_coords(domain: DomainSpec) -> np.ndarray:
    """[H, W, 2] cell-center coordinates rescaled to [0, 1] per axis."""
    x, y = cell_centers(domain)
    xs = (x - domain.x_range[0]) / (domain.x_range[1] - domain.x_range[0])
    ys = (y - domain.y_range[0]) / (domain.y_range[1] - domain.y_range[0])
    xx, yy = np.meshgrid(xs, ys, indexing="xy")
    return np.stack([xx, yy], axis=-1)


def channel_region(mask: np.ndarray, channel: str) -> np.ndarray:
    """Boolean home-subdomain selector for one channel."""
    if channel in FREE_FLOW_CHANNELS:
        return mask > 0.5
    if channel in POROUS_CHANNELS:
        return mask < 0.5
    raise ConfigError(f"unknown channel: {channel!r}")


# ---------------------------------------------------------------------------
# Exact solutions
# ---------------------------------------------------------------------------

def _sd_raw(x, y, t, k):
    decay = np.exp(-t)
    phi = (np.exp(y) - np.exp(-y)) * np.sin(x) * decay
    u1 = (k / np.pi) * np.sin(2.0 * np.pi * y) * np.cos(x) * decay
    u2 = (-2.0 * k + (k / np.pi**2) * np.sin(np.pi * y) ** 2) * np.sin(x) * decay
    p = np.zeros_like(u1 + 0.0 * x)
    return u1, u2, p, phi


def _nsd_spatial(x, y):
    phi = (2.0 - np.pi * np.sin(np.pi * x)) * (-y + np.cos(np.pi * (1.0 - y)))
    u1 = x**2 * y**2 + np.exp(-y)
    u2 = -(2.0 / 3.0) * x * y**3 + 2.0 - np.pi * np.sin(np.pi * x)
    p = -(2.0 - np.pi * np.sin(np.pi * x)) * np.cos(2.0 * np.pi * y)
    return u1, u2, p, phi


def _nsd_raw(x, y, t):
    osc = np.cos(2.0 * np.pi * t)
    return tuple(f * osc for f in _nsd_spatial(x, y))


def ramp(t, ramp_T: float):
    """Cosine ramp-up from 0 to 1 over [0, ramp_T], then held at 1."""
    t = np.asarray(t, dtype=float)
    a = 0.5 * (1.0 - np.cos(np.pi * np.minimum(t, ramp_T) / ramp_T))
    return np.where(t >= ramp_T, 1.0, a)


def forcing_factor(t, f: float, ramp_T: float):
    """Temporal driver: ramp(t) * (1 + 0.4 sin(2 pi f t))."""
    return ramp(t, ramp_T) * (1.0 + 0.4 * np.sin(2.0 * np.pi * f * t))


def _forced_raw(x, y, t, f, ramp_T):
    fac = forcing_factor(t, f, ramp_T)
    return tuple(g * fac for g in _nsd_spatial(x, y))


def _check_domain(example: Example, x: float, y: float):
    (x0, x1), (y0, y1), _ = _GEOMETRY[example]
    tol = 1e-12
    if not (x0 - tol <= x <= x1 + tol and y0 - tol <= y <= y1 + tol):
        raise ConfigError(f"point ({x}, {y}) outside the {example.value} domain")


def _restrict(example: Example, y: float, u1, u2, p, phi) -> FieldSample:
    # velocity/pressure live below the interface, the head above;
    # exactly on the interface both sides are reported
    z = _GEOMETRY[example][2]
    if y > z:
        u1 = u2 = p = 0.0
    if y < z:
        phi = 0.0
    return FieldSample(float(u1), float(u2), float(p), float(phi))


def eval_exact_sd(x: float, y: float, t: float, k: float = 1.0) -> FieldSample:
    """Exact dissipative-benchmark fields at one point."""
    if k <= 0:
        raise ConfigError(f"conductivity k must be positive, got {k}")
    _check_domain(Example.SD, x, y)
    return _restrict(Example.SD, y, *_sd_raw(x, y, t, k))


def eval_exact_nsd(x: float, y: float, t: float) -> FieldSample:
    """Exact periodic-benchmark fields at one point."""
    _check_domain(Example.NSD, x, y)
    return _restrict(Example.NSD, y, *_nsd_raw(x, y, t))


def eval_forced_field(x: float, y: float, t: float, f: float = 2.5,
                      ramp_T: float = 0.4) -> FieldSample:
    """Periodic spatial modes under the ramped sinusoidal driver."""
    if f <= 0 or ramp_T <= 0:
        raise ConfigError("forcing frequency and ramp duration must be positive")
    _check_domain(Example.FORCED, x, y)
    return _restrict(Example.FORCED, y, *_forced_raw(x, y, t, f, ramp_T))


def eval_grid(domain: DomainSpec, t: float, k: float = 1.0,
              forcing_freq: float = 2.5, ramp_T: float = 0.4) -> np.ndarray:
    """Exact fields on the domain grid, zero-filled off the home regions.

    Returns [4, H, W] in CHANNELS order.
    """
    x, y = cell_centers(domain)
    xx, yy = np.meshgrid(x, y, indexing="xy")
    if domain.example is Example.SD:
        raw = _sd_raw(xx, yy, t, k)
    elif domain.example is Example.NSD:
        raw = _nsd_raw(xx, yy, t)
    else:
        raw = _forced_raw(xx, yy, t, forcing_freq, ramp_T)
    out = np.stack([np.broadcast_to(f, domain.shape).copy() for f in raw])
    free = domain.mask > 0.5
    out[:3][:, ~free] = 0.0
    out[3][free] = 0.0
    return out


# ---------------------------------------------------------------------------
# Dataset generation and normalization
# ---------------------------------------------------------------------------

def generate_dataset(domain: DomainSpec, t0: float, t_end: float, dt: float,
                     train_horizon: float, forcing_freq: float = 2.5,
                     ramp_T: float = 0.4) -> TrajectoryDataset:
    """Sample the exact solution at t0, t0+dt, ... up to t_end (unnormalized)."""
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if not (t0 <= train_horizon <= t_end):
        raise ConfigError(
            f"need t0 <= train_horizon <= t_end, got {t0}, {train_horizon}, {t_end}")
    span = t_end - t0
    n_steps = int(np.floor(span / dt + 1e-9))
    if abs(n_steps * dt - span) > 1e-9 * max(1.0, span):
        warnings.warn(
            f"horizon {span} is not a multiple of dt={dt}; "
            f"keeping {n_steps + 1} snapshots", stacklevel=2)
    times = t0 + dt * np.arange(n_steps + 1)
    data = np.stack([
        eval_grid(domain, t, forcing_freq=forcing_freq, ramp_T=ramp_T)
        for t in times
    ])
    is_forced = domain.example is Example.FORCED
    return TrajectoryDataset(
        domain=domain, times=times, data=data, dt=dt, train_horizon=train_horizon,
        forcing_freq=forcing_freq if is_forced else None,
        ramp_T=ramp_T if is_forced else None)


def normalize(ds: TrajectoryDataset) -> TrajectoryDataset:
    """Divide each channel by its max-abs over the training window.

    Stats are computed from the training window only and frozen, so
    extrapolation-time amplitudes may exceed 1. Identically-zero channels
    keep scale 1 and are flagged. Re-normalizing with the same horizon is a
    fixed point.
    """
    sel = ds.times <= ds.train_horizon + 1e-9
    if not np.any(sel):
        raise ConfigError("training window contains no snapshots")
    amp = np.max(np.abs(ds.data[sel]), axis=(0, 2, 3))
    zero = amp < 1e-300
    scale = np.where(zero, 1.0, amp)
    prev = ds.norm_scale if ds.norm_scale is not None else np.ones(4)
    prev_zero = ds.zero_channels if ds.zero_channels is not None else np.zeros(4, bool)
    return replace(
        ds,
        data=ds.data / scale[:, None, None],
        norm_scale=prev * scale,
        zero_channels=zero | prev_zero,
    )


# ---------------------------------------------------------------------------
# Interface physics checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualReport:
    example: Example
    t: float
    n_points: int
    flux_max: float    # max |u_S.n_S + u_D.n_D| with u_D = -k grad(phi)
    stress_max: float  # max |-n.T.n - g(phi - z)|


@lru_cache(maxsize=None)
def _interface_residual_funcs(example: Example, k_val: float):
    """Symbolic residuals of the two interface conditions, on y = z.

    Derivatives of the closed-form fields are taken symbolically so this
    check is independent of the numeric field evaluators.
    """
    x, y, t = sympy.symbols("x y t", real=True)
    k, nu, grav = sympy.Float(k_val), 1, 1
    if example is Example.SD:
        phi = (sympy.exp(y) - sympy.exp(-y)) * sympy.sin(x) * sympy.exp(-t)
        u2 = (-2 * k + (k / sympy.pi**2) * sympy.sin(sympy.pi * y) ** 2) \
            * sympy.sin(x) * sympy.exp(-t)
        p = sympy.Integer(0)
    elif example is Example.NSD:
        osc = sympy.cos(2 * sympy.pi * t)
        phi = (2 - sympy.pi * sympy.sin(sympy.pi * x)) \
            * (-y + sympy.cos(sympy.pi * (1 - y))) * osc
        u2 = (-sympy.Rational(2, 3) * x * y**3 + 2
              - sympy.pi * sympy.sin(sympy.pi * x)) * osc
        p = -(2 - sympy.pi * sympy.sin(sympy.pi * x)) \
            * sympy.cos(2 * sympy.pi * y) * osc
    else:
        raise ConfigError(f"no interface conditions defined for {example.value}")
    z = _GEOMETRY[example][2]
    # free flow sits below the interface: n_S = +e_y, n_D = -e_y
    flux = (u2 + k * sympy.diff(phi, y)).subs(y, z)
    stress = (-(2 * nu * sympy.diff(u2, y) - p) - grav * (phi - z)).subs(y, z)
    return (
        sympy.lambdify((x, t), flux, "numpy"),
        sympy.lambdify((x, t), stress, "numpy"),
    )


def interface_residuals(example, t: float, n_points: int,
                        seed: int | None = None,
                        xs=None) -> ResidualReport:
    """Max-abs residuals of flux continuity and normal-stress balance on the
    interface, sampled at n_points x-locations (evenly spaced, uniform random
    when a seed is given, or the explicit positions xs)."""
    example = Example(example)
    if n_points < 1:
        raise ConfigError(f"n_points must be >= 1, got {n_points}")
    x0, x1 = _GEOMETRY[example][0]
    if xs is not None:
        xs = np.asarray(xs, dtype=float)
    elif seed is None:
        xs = cell_centers_1d((x0, x1), n_points)
    else:
        xs = np.random.default_rng(seed).uniform(x0, x1, size=n_points)
    flux_f, stress_f = _interface_residual_funcs(example, 1.0)
    flux = np.max(np.abs(np.broadcast_to(flux_f(xs, t), xs.shape)))
    stress = np.max(np.abs(np.broadcast_to(stress_f(xs, t), xs.shape)))
    return ResidualReport(example, t, n_points, float(flux), float(stress))
