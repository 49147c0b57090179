"""Time-domain integration of the classical, noise-free linearized equations of motion.

    dq/dt  = Omega_m p
    dp/dt  = -(Omega_m + h) q - gamma_m p + (G / sqrt 2)(a + a*)
    da/dt  = -(kappa_T + i Delta) a + i (G / sqrt 2) q + sqrt(2 kappa_0) s_p exp(-i Omega t)

State vector ``(q, p, Re a, Im a)``.  The system is linear with constant coefficients,
so the classical RK4 step collapses to ``y <- P y + forcing``; ``P`` and the forcing
weights are built from the RK4 stage algebra once per run.  :func:`rk4_step` is the
literal stage-by-stage step and serves as the reference for that reduction.

Nothing here evaluates the analytic susceptibility: this module is the brute-force
cross-check of :mod:`omitlab.response`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

STEPS_PER_PERIOD = 200
MIN_STEPS_PER_PERIOD = 50
SETTLE_WIDTHS = 30.0
MIN_WINDOW_PERIODS = 20
DIVERGENCE_FACTOR = 1e12
GROWTH_BLOCK_PERIODS = 3


@dataclass(frozen=True)
class ClassicalState:
    q: float
    p: float
    a_re: float
    a_im: float


@dataclass
class Trajectory:
    """Sampled solution for one or more parameter points.

    Array fields have shape ``(points, samples)``.  ``beat_scale`` converts the
    exp(-i Omega t) component of the cavity field into the transmitted beat amplitude.
    ``check_t``/``check_norm`` hold the state norm once per mechanical period over the
    whole run, including the unrecorded settling stretch.
    """

    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    a: np.ndarray
    omega: np.ndarray
    delta: np.ndarray
    beat_scale: np.ndarray
    dt: float
    mech_period: float
    diverged: np.ndarray
    check_t: np.ndarray = None
    check_norm: np.ndarray = None

    def point(self, i):
        return Trajectory(
            self.t,
            self.q[i : i + 1],
            self.p[i : i + 1],
            self.a[i : i + 1],
            self.omega[i : i + 1],
            self.delta[i : i + 1],
            self.beat_scale[i : i + 1],
            self.dt,
            self.mech_period,
            self.diverged[i : i + 1],
            self.check_t,
            None if self.check_norm is None else self.check_norm[i : i + 1],
        )

    def state(self, i, n):
        a = self.a[i, n]
        return ClassicalState(self.q[i, n], self.p[i, n], a.real, a.imag)


@dataclass(frozen=True)
class DemodResult:
    beat_complex: complex
    residual: float
    a_minus: complex = 0j
    a_plus: complex = 0j
    diverged: bool = False


def system_matrix(sys, delta):
    """Real 4x4 generator(s) for the homogeneous part; ``delta`` may be an array."""
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    n = delta.size
    m = np.zeros((n, 4, 4))
    g = sys.g / math.sqrt(2)
    m[:, 0, 1] = sys.omega_m
    m[:, 1, 0] = -(sys.omega_m + sys.h)
    m[:, 1, 1] = -sys.gamma_m
    m[:, 1, 2] = 2 * g
    m[:, 2, 2] = -sys.kappa_t
    m[:, 2, 3] = delta
    m[:, 3, 0] = g
    m[:, 3, 2] = -delta
    m[:, 3, 3] = -sys.kappa_t
    return m


def _forcing_vector(sys, probe_amp, n):
    f = math.sqrt(2 * sys.kappa0) * probe_amp
    v = np.zeros((n, 4), dtype=complex)
    v[:, 2] = f
    v[:, 3] = -1j * f
    return v


def rk4_step(rhs, t, y, dt):
    """One classical Runge-Kutta step of dy/dt = rhs(t, y)."""
    k1 = rhs(t, y)
    k2 = rhs(t + dt / 2, y + dt / 2 * k1)
    k3 = rhs(t + dt / 2, y + dt / 2 * k2)
    k4 = rhs(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def rhs_function(sys, delta, omega, probe_amp):
    """Right-hand side of the equations of motion for a single parameter point."""
    m = system_matrix(sys, delta)[0]
    v = _forcing_vector(sys, probe_amp, 1)[0]

    def rhs(t, y):
        return m @ y + (v * np.exp(-1j * omega * t)).real

    return rhs


def rk4_propagator(m, omega, dt):
    """Fold the RK4 stages of y' = M y + Re(v exp(-i w t)) into (P, W).

    One step is then ``y_next = P y + Re(W v exp(-i w t_n))`` with ``W`` per point.
    """
    n = m.shape[0]
    eye = np.broadcast_to(np.eye(4), (n, 4, 4))
    a = dt * m
    a2 = a @ a
    a3 = a2 @ a
    a4 = a3 @ a
    prop = eye + a + a2 / 2 + a3 / 6 + a4 / 24
    c0 = eye + a + a2 / 2 + a3 / 4
    c_half = 4 * eye + 2 * a + a2 / 2
    omega = np.asarray(omega, dtype=float).reshape(n, 1, 1)
    w = dt / 6 * (c0 + c_half * np.exp(-0.5j * omega * dt) + eye * np.exp(-1j * omega * dt))
    return prop, w


def default_dt(sys, delta, omega, steps_per_period=STEPS_PER_PERIOD):
    fastest = max(sys.omega_m, sys.kappa_t, float(np.max(np.abs(delta))), float(np.max(np.abs(omega))))
    return 2 * math.pi / (steps_per_period * fastest)


def settle_time(sys, delta, widths=SETTLE_WIDTHS):
    """``widths`` mechanical relaxation times at the weakest damping along the grid."""
    c = sys.cooperativity
    delta = np.atleast_1d(delta)
    rates = [abs(sys.gamma_m * (1 + c)) if d >= 0 else abs(sys.gamma_m * (1 - c)) for d in delta]
    rate = min(rates) or sys.gamma_m
    return widths / rate


def integrate(
    sys,
    delta,
    omega,
    t_end,
    dt=None,
    probe_amp=1.0,
    y0=None,
    record_from=0.0,
    decimate=1,
):
    """Integrate from ``y0`` (default: all zero) up to ``t_end`` with fixed-step RK4.

    ``delta`` and ``omega`` may be equal-length arrays; each entry is integrated as an
    independent parameter point.  Samples before ``record_from`` are not stored.

    Divergence is flagged, not raised: once the state exceeds ``1e12`` times the drive
    scale the point is frozen and marked in ``Trajectory.diverged``.
    """
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    delta, omega = np.broadcast_arrays(delta, omega)
    n = delta.size
    limit = 2 * math.pi / (MIN_STEPS_PER_PERIOD * max(sys.omega_m, sys.kappa_t, np.max(np.abs(delta)), np.max(np.abs(omega))))
    if dt is None:
        dt = default_dt(sys, delta, omega)
    if not 0 < dt <= limit * (1 + 1e-12):
        raise DomainError(f"dt must lie in (0, {limit:.3g}] s", field="dt")
    if not t_end > 0:
        raise DomainError("t_end must be positive", field="t_end")

    prop, w = rk4_propagator(system_matrix(sys, delta), omega, dt)
    forcing = np.einsum("nij,nj->ni", w, _forcing_vector(sys, probe_amp, n))

    y = np.zeros((n, 4)) if y0 is None else np.array(np.broadcast_to(y0, (n, 4)), dtype=float)
    scale = math.sqrt(2 * sys.kappa0) * abs(probe_amp) / sys.kappa_t
    if scale == 0:
        scale = float(np.max(np.abs(y))) or 1.0
    threshold = DIVERGENCE_FACTOR * scale

    steps = int(math.ceil(t_end / dt))
    first = int(math.ceil(record_from / dt))
    keep = np.arange(first, steps + 1, decimate)
    out = np.empty((n, keep.size, 4))
    slot = 0
    diverged = np.zeros(n, dtype=bool)
    check_every = max(1, int(round(2 * math.pi / (sys.omega_m * dt))))
    check_t, check_norm = [], []

    def check(step):
        nonlocal y
        norm = np.linalg.norm(y, axis=1)
        check_t.append(step * dt)
        check_norm.append(norm)
        big = ~(norm <= threshold)
        if np.any(big & ~diverged):
            diverged[:] |= big
            y[diverged] = np.nan

    # before recording starts, advance a whole check interval at a time with the
    # k-fold composition of the same one-step map
    block_prop, block_forcing = _compose(prop, forcing, omega, dt, check_every)
    step = 0
    while step + check_every <= first and not diverged.all():
        y = _advance(block_prop, block_forcing, omega, dt, step, y)
        step += check_every
        check(step)
    if diverged.all():
        out[:] = np.nan
        step = steps
    # recording: stride ``decimate`` steps at a time from the first kept sample on
    while step < first:
        y = _advance(prop, forcing, omega, dt, step, y)
        step += 1
        if step % check_every == 0:
            check(step)
    stride_prop, stride_forcing = (prop, forcing) if decimate == 1 else _compose(prop, forcing, omega, dt, decimate)
    while step <= steps and not diverged.all():
        if slot < keep.size and keep[slot] == step:
            out[:, slot] = y
            slot += 1
        if step == steps:
            break
        k = decimate if step + decimate <= steps else 1
        if k == 1:
            y = _advance(prop, forcing, omega, dt, step, y)
        else:
            y = _advance(stride_prop, stride_forcing, omega, dt, step, y)
        before = step // check_every
        step += k
        if step // check_every != before:
            check(step)
    if diverged.all():
        out[:, slot:] = np.nan
    t = keep * dt
    beat_scale = 2 * sys.kappa2 * sys.alpha_s(delta) * (abs(probe_amp) / probe_amp if probe_amp else 1.0)
    return Trajectory(
        t=t,
        q=out[:, :, 0],
        p=out[:, :, 1],
        a=out[:, :, 2] + 1j * out[:, :, 3],
        omega=omega,
        delta=delta,
        beat_scale=np.asarray(beat_scale, dtype=complex) * np.ones(n),
        dt=dt,
        mech_period=2 * math.pi / sys.omega_m,
        diverged=diverged,
        check_t=np.array(check_t),
        check_norm=np.array(check_norm).T.reshape(n, len(check_t)),
    )


def _advance(prop, forcing, omega, dt, step, y):
    phase = np.exp(-1j * omega * (step * dt))
    return np.einsum("nij,nj->ni", prop, y) + (forcing * phase[:, None]).real


def _compose(prop, forcing, omega, dt, k):
    """k steps of ``y -> P y + Re(f exp(-i w t))`` as one map ``y -> P^k y + Re(b exp(-i w t0))``."""
    block_prop = np.broadcast_to(np.eye(4), prop.shape).copy()
    b = np.zeros_like(forcing)
    for j in range(k):
        block_prop = prop @ block_prop
        b = np.einsum("nij,nj->ni", prop, b) + forcing * np.exp(-1j * omega * (j * dt))[:, None]
    return block_prop, b


def demodulate_signal(t, signal, omega):
    """Least-squares fit of ``signal`` to c_- exp(-i w t) + c_+ exp(i w t) + c_0.

    Returns ``(c_minus, c_plus, c_0, relative_residual)``.
    """
    t = np.asarray(t, dtype=float)
    signal = np.asarray(signal, dtype=complex)
    t_rel = t - t[0]
    basis = np.stack([np.exp(-1j * omega * t_rel), np.exp(1j * omega * t_rel), np.ones_like(t_rel)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, signal, rcond=None)
    norm = np.linalg.norm(signal)
    residual = np.linalg.norm(signal - basis @ coef) / norm if norm > 0 else 0.0
    # refer the phases back to t = 0
    c_minus = coef[0] * np.exp(1j * omega * t[0])
    c_plus = coef[1] * np.exp(-1j * omega * t[0])
    return complex(c_minus), complex(c_plus), complex(coef[2]), float(residual)


def demodulate(trajectory, omega=None, window=None):
    """Extract the beat at ``omega`` from the last ``window`` seconds of a single-point run."""
    if trajectory.q.shape[0] != 1:
        raise DomainError("demodulate expects a single-point trajectory", field="trajectory")
    omega = float(trajectory.omega[0]) if omega is None else float(omega)
    if trajectory.diverged[0]:
        return DemodResult(complex(np.nan, np.nan), math.inf, diverged=True)
    t = trajectory.t
    if window is None:
        window = t[-1] - t[0]
    period = 2 * math.pi / abs(omega) if omega else math.inf
    if window < MIN_WINDOW_PERIODS * period * (1 - 1e-9) or window > t[-1] - t[0] + trajectory.dt / 2:
        raise DomainError(
            f"demodulation window {window:.3g} s must cover {MIN_WINDOW_PERIODS} periods "
            f"({MIN_WINDOW_PERIODS * period:.3g} s) and lie inside the record",
            field="window",
        )
    sel = t >= t[-1] - window - trajectory.dt / 2
    c_minus, c_plus, _, residual = demodulate_signal(t[sel], trajectory.a[0, sel], omega)
    beat = complex(trajectory.beat_scale[0] * c_minus)
    return DemodResult(beat, residual, c_minus, c_plus, False)


def _window_length(omega, sys):
    slowest = min(np.min(np.abs(omega[omega != 0])) if np.any(omega != 0) else sys.omega_m, sys.omega_m)
    return MIN_WINDOW_PERIODS * 2 * math.pi / slowest


def oracle_sweep(sys, grid, mode="locked", delta=None, probe_amp=1.0, dt=None, settle=None, workers=1, t_end=None):
    """Integrate and demodulate every grid point; same grid semantics as the analytic sweep.

    The run lasts ``settle`` (default: 30 relaxation times) plus a demodulation window of
    at least 20 periods; ``t_end`` instead fixes the total and settles for the remainder.

    Returns
    -------
    list of DemodResult
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise DomainError("sweep grid must be a non-empty 1-D sequence", field="grid")
    if mode == "locked":
        deltas = grid
    elif mode == "fixed-delta":
        if delta is None:
            raise DomainError("fixed-delta mode needs a detuning", field="delta")
        deltas = np.full_like(grid, float(delta))
    else:
        raise DomainError(f"unknown sweep mode {mode!r}", field="mode")
    if dt is None:
        # one step for the whole grid, so the split across workers cannot change results
        dt = default_dt(sys, deltas, grid)
    window = _window_length(grid, sys) + 2 * dt
    if t_end is not None:
        t_settle = t_end - window
        if t_settle < 0:
            raise DomainError(f"t_end must exceed the {window:.3g} s demodulation window", field="t_end")
    else:
        t_settle = settle_time(sys, deltas) if settle is None else settle
        t_end = t_settle + window

    def run(idx):
        traj = integrate(sys, deltas[idx], grid[idx], t_end, dt=dt, probe_amp=probe_amp, record_from=t_settle)
        results = []
        for i in range(len(idx)):
            one = traj.point(i)
            if not one.diverged[0] and envelope_diverging(one):
                one.diverged[0] = True
            results.append(demodulate(one, window=min(window, one.t[-1] - one.t[0])))
        return results

    chunks = [c for c in np.array_split(np.arange(grid.size), max(1, min(workers, grid.size))) if c.size]
    if len(chunks) == 1:
        return run(chunks[0])
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(run, chunks))
    return [r for part in parts for r in part]


def envelope_growth_rate(trajectory, start=None):
    """Exponential rate (1/s) of the mechanical amplitude sqrt(q^2 + p^2).

    Fitted by linear regression of its logarithm over the recorded samples after
    ``start``.
    """
    t = trajectory.t
    env = np.hypot(trajectory.q[0], trajectory.p[0])
    sel = np.isfinite(env) & (env > 0)
    if start is not None:
        sel &= t >= start
    slope, _ = np.polyfit(t[sel], np.log(env[sel]), 1)
    return float(slope)


def envelope_diverging(trajectory):
    """True when the block-maximum state norm grows by more than e^3 over the second half
    of the run (blocks of three mechanical periods)."""
    if trajectory.check_norm is not None and trajectory.check_t.size:
        t, norm = trajectory.check_t, trajectory.check_norm[0]
        block = GROWTH_BLOCK_PERIODS
    else:
        t = trajectory.t
        norm = np.sqrt(trajectory.q[0] ** 2 + trajectory.p[0] ** 2 + np.abs(trajectory.a[0]) ** 2)
        block = max(1, int(round(GROWTH_BLOCK_PERIODS * trajectory.mech_period / trajectory.dt)))
    if not np.all(np.isfinite(norm)):
        return True
    nblocks = norm.size // block
    if nblocks < 4:
        return False
    peaks = norm[: nblocks * block].reshape(nblocks, block).max(axis=1)
    centres = t[: nblocks * block].reshape(nblocks, block).mean(axis=1)
    half = slice(nblocks // 2, None)
    if np.any(peaks[half] <= 0):
        return False
    slope = np.polyfit(centres[half], np.log(peaks[half]), 1)[0]
    span = centres[half][-1] - centres[half][0]
    return bool(slope > 0 and slope * span > 3)
