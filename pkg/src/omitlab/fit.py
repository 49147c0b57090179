"""Least-squares estimation of coupling and linewidths from measured beat spectra.

The model is the beat amplitude normalized to its uncoupled (G = 0) value at the
bare mechanical frequency, times a free amplitude ``scale`` and a free phase offset.
Because G enters only squared, the fitter reports |G|.

Uncertainties are the square roots of the diagonal of the inverse Gauss-Newton
curvature matrix (J^T J)^-1 at the optimum, scaled by the reduced chi-square when no
per-point uncertainties are supplied.  They describe the local quadratic model of the
objective, not a full posterior.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, OmitError, SeedingError
from .model import OptomechSystem
from .response import LOCKED, beat_on_path

PARAMS = ("g", "kappa_t", "gamma_m", "scale", "phase", "omega_m")
SHARED_DEFAULT = ("kappa_t", "gamma_m", "omega_m")

MAX_ITER = 500
FTOL = 1e-10
FD_STEP = 1e-6


@dataclass(frozen=True)
class SpectrumData:
    """A measured beat spectrum along one sweep.

    ``detuning`` is Omega in rad/s (equal to Delta in locked mode).
    """

    detuning: np.ndarray
    modulus: np.ndarray
    phase: np.ndarray | None = None
    sigma: np.ndarray | None = None
    phase_sigma: np.ndarray | None = None
    mode: str = LOCKED
    delta: float | None = None

    def __post_init__(self):
        x = np.asarray(self.detuning, dtype=float)
        y = np.asarray(self.modulus, dtype=float)
        if x.ndim != 1 or x.size == 0 or x.shape != y.shape:
            raise DomainError("detuning and modulus must be equal-length 1-D arrays", field="detuning")
        if np.any(np.diff(x) <= 0):
            raise DomainError("detuning grid must be strictly increasing", field="detuning")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise DomainError("spectrum contains non-finite values", field="modulus")
        object.__setattr__(self, "detuning", x)
        object.__setattr__(self, "modulus", y)
        for name in ("phase", "sigma", "phase_sigma"):
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value, dtype=float)
                if value.shape != x.shape:
                    raise DomainError(f"{name} must match the detuning grid", field=name)
                if name != "phase" and np.any(value <= 0):
                    raise DomainError(f"{name} must be positive", field=name)
                object.__setattr__(self, name, value)


@dataclass(frozen=True)
class FitContext:
    """Quantities held fixed by the model but not fitted."""

    input_fraction: float = 0.5
    h: float = 0.0


@dataclass
class FitResult:
    params: dict
    uncertainties: dict | None
    reduced_chi2: float
    converged: bool
    iterations: int
    free: tuple
    cost_history: list = field(default_factory=list)

    @property
    def g_abs(self):
        return abs(self.params["g"])


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    jac: np.ndarray
    residual: np.ndarray
    iterations: int
    converged: bool
    history: list


def _jacobian(fun, x, step=FD_STEP):
    cols = []
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        cols.append((fun(xp) - fun(xm)) / (2 * step))
    return np.stack(cols, axis=1)


def levenberg_marquardt(fun, x0, max_iter=MAX_ITER, ftol=FTOL):
    """Minimize 0.5 * ||fun(x)||^2 with Marquardt-scaled damped Gauss-Newton steps.

    Only steps that strictly lower the objective are accepted; the damping follows the
    gain ratio between actual and predicted reduction.  Stops when an accepted step
    lowers the objective by less than ``ftol`` (relative), when no descent step exists
    at a stationary point, or after ``max_iter`` iterations (``converged`` is then False).
    """
    x = np.asarray(x0, dtype=float).copy()
    r = fun(x)
    cost = 0.5 * float(r @ r)
    history = [cost]
    lam, nu = 1e-3, 2.0
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        jac = _jacobian(fun, x)
        jtj = jac.T @ jac
        grad = jac.T @ r
        diag = np.diag(jtj).copy()
        diag[diag == 0] = 1.0
        accepted = False
        while lam <= 1e20:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam *= nu
                nu *= 2
                continue
            r_new = fun(x + step)
            cost_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                accepted = True
                break
            lam *= nu
            nu *= 2
        if not accepted:
            # no descent left: either at the noise floor of the objective or at a stationary point
            converged = cost <= 1e-20 * history[0] or _stationary(grad, jtj, cost)
            break
        predicted = 0.5 * float(step @ (lam * diag * step - grad))
        rho = (cost - cost_new) / predicted if predicted > 0 else 1.0
        change = cost - cost_new
        x, r, cost = x + step, r_new, cost_new
        history.append(cost)
        # gain-ratio damping update
        lam = max(lam * max(1 / 3, 1 - (2 * rho - 1) ** 3), 1e-15)
        nu = 2.0
        if cost == 0 or change <= ftol * cost:
            converged = True
            break
    jac = _jacobian(fun, x)
    return LMResult(x, cost, jac, r, it, converged, history)


def _stationary(grad, jtj, cost):
    """Gradient negligible against the curvature: no descent direction left."""
    scale = np.sqrt(np.maximum(np.diag(jtj), 1e-300) * max(cost, 1e-300))
    return bool(np.all(np.abs(grad) <= 1e-6 * scale))


def _reference(params, context):
    sys = _system({**params, "g": 0.0}, context)
    return abs(complex(beat_on_path(sys, params["omega_m"])))


def _system(params, context):
    kt = params["kappa_t"]
    return OptomechSystem(
        omega_m=params["omega_m"],
        gamma_m=params["gamma_m"],
        kappa0=kt * context.input_fraction,
        kappa2=kt * (1 - context.input_fraction),
        g=params["g"],
        h=context.h,
    )


def model_beat(params, detuning, mode=LOCKED, delta=None, context=FitContext()):
    """Complex model spectrum for a parameter dictionary with keys ``PARAMS``."""
    sys = _system(params, context)
    beat = beat_on_path(sys, detuning, mode, delta)
    return params["scale"] * np.exp(1j * params["phase"]) * beat / _reference(params, context)


def _residuals(params, data, context):
    model = model_beat(params, data.detuning, data.mode, data.delta, context)
    sigma = 1.0 if data.sigma is None else data.sigma
    res = [(np.abs(model) - data.modulus) / sigma]
    if data.phase is not None:
        psig = 1.0 if data.phase_sigma is None else data.phase_sigma
        res.append(np.angle(model * np.exp(-1j * data.phase)) / psig)
    return np.concatenate(res)


class _Layout:
    """Maps the internal free-parameter vector onto per-dataset parameter dictionaries.

    Sign-definite parameters live in log coordinates (so the finite-difference step is
    relative); the phase is linear.
    """

    def __init__(self, guesses, free, shared):
        self.guesses = [dict(g) for g in guesses]
        self.slots = []
        for name in PARAMS:
            if name not in free:
                continue
            owners = [None] if name in shared else list(range(len(guesses)))
            for owner in owners:
                self.slots.append((name, owner))
        self.signs = np.array([math.copysign(1.0, self._value(n, o)) for n, o in self.slots])
        self.log = np.array([n != "phase" for n, _ in self.slots])
        for (name, owner) in self.slots:
            if name != "phase" and self._value(name, owner) == 0:
                raise DomainError(f"initial {name} must be non-zero", field=name)

    def _value(self, name, owner):
        return self.guesses[0 if owner is None else owner][name]

    def x0(self):
        values = np.array([self._value(n, o) for n, o in self.slots], dtype=float)
        return np.where(self.log, np.log(np.abs(np.where(self.log, values, 1.0))), values)

    def values(self, x):
        return np.where(self.log, self.signs * np.exp(np.where(self.log, x, 0.0)), x)

    def derivative(self, x):
        """d value / d internal coordinate, per slot."""
        return np.where(self.log, self.values(x), 1.0)

    def unpack(self, x):
        out = [dict(g) for g in self.guesses]
        for (name, owner), value in zip(self.slots, self.values(x)):
            targets = range(len(out)) if owner is None else [owner]
            for i in targets:
                out[i][name] = value
        return out


def _validate_free(free, n_points, n_sets=1, shared=()):
    unknown = set(free) - set(PARAMS)
    if unknown:
        raise DomainError(f"unknown parameters {sorted(unknown)}", field="free")
    free = tuple(name for name in PARAMS if name in set(free))
    if not free:
        raise DomainError("at least one parameter must be free", field="free")
    n_free = sum(1 if name in shared else n_sets for name in free)
    if n_points < 3 * n_free:
        raise DomainError(
            f"{n_points} data points cannot support {n_free} free parameters (need 3x)",
            field="free",
        )
    return free, n_free


def _solve(datasets, guesses, free, shared, context, restarts):
    layout = _Layout(guesses, free, shared)

    def fun(x):
        params = layout.unpack(x)
        with np.errstate(all="ignore"):
            try:
                return np.concatenate([_residuals(p, d, context) for p, d in zip(params, datasets)])
            except (ArithmeticError, ValueError, OmitError):
                return np.full(n_res, np.inf)

    n_res = sum(d.detuning.size * (2 if d.phase is not None else 1) for d in datasets)
    best = None
    seeds = [1.0, 0.5, 2.0, 0.75, 1.5][: max(1, restarts)]
    for factor in seeds:
        x0 = layout.x0()
        for i, (name, _) in enumerate(layout.slots):
            if name == "g":
                x0[i] += math.log(factor)
        sol = levenberg_marquardt(fun, x0)
        if best is None or sol.cost < best.cost:
            best = sol
    return layout, best


def _package(layout, sol, datasets, free, n_free, sigma_given):
    params = layout.unpack(sol.x)
    n_points = sum(d.detuning.size * (2 if d.phase is not None else 1) for d in datasets)
    dof = max(n_points - n_free, 1)
    chi2 = 2 * sol.cost / dof
    uncert = None
    jac = sol.jac / layout.derivative(sol.x)[None, :]
    try:
        jtj = jac.T @ jac
        if np.linalg.cond(jtj) > 1e15:
            raise np.linalg.LinAlgError("ill-conditioned")
        cov = np.linalg.inv(jtj)
        if not sigma_given:
            cov = cov * chi2
        sd = np.sqrt(np.diag(cov))
        uncert = [dict() for _ in params]
        for (name, owner), s in zip(layout.slots, sd):
            for i in range(len(params)) if owner is None else [owner]:
                uncert[i][name] = float(s)
    except np.linalg.LinAlgError:
        uncert = None
    results = []
    for i, p in enumerate(params):
        p = {k: float(v) for k, v in p.items()}
        p["g"] = abs(p["g"])
        results.append(
            FitResult(p, None if uncert is None else uncert[i], chi2, sol.converged, sol.iterations, free, sol.history)
        )
    return results


def fit_spectrum(data, guess, free=("g", "gamma_m", "scale", "phase"), context=FitContext(), restarts=1):
    """Fit one spectrum.

    Parameters
    ----------
    data : SpectrumData
    guess : dict
        Starting values for every name in ``PARAMS``; non-free entries stay fixed.
    free : iterable of str
        Names of the parameters to adjust.
    restarts : int
        Up to 5 starts with the coupling seed scaled by 1, 0.5, 2, 0.75, 1.5; the
        lowest objective wins.

    Returns
    -------
    FitResult
    """
    missing = set(PARAMS) - set(guess)
    if missing:
        raise DomainError(f"initial guess lacks {sorted(missing)}", field="guess")
    n_points = data.detuning.size * (2 if data.phase is not None else 1)
    free, n_free = _validate_free(free, n_points)
    guess = {name: float(guess[name]) for name in PARAMS}
    layout, sol = _solve([data], [guess], free, (), context, restarts)
    return _package(layout, sol, [data], free, n_free, data.sigma is not None)[0]


def fit_joint(datasets, guesses, free=("g", "kappa_t", "gamma_m", "scale"), shared=SHARED_DEFAULT, context=FitContext()):
    """Simultaneous fit of several spectra sharing some parameters.

    Parameters in ``shared`` take one common value (seeded from ``guesses[0]``);
    the rest are fitted per dataset.

    Returns
    -------
    list of FitResult, one per dataset
    """
    if len(datasets) != len(guesses):
        raise DomainError("one guess per dataset is required", field="guesses")
    n_points = sum(d.detuning.size * (2 if d.phase is not None else 1) for d in datasets)
    free, n_free = _validate_free(free, n_points, len(datasets), shared)
    guesses = [{name: float(g[name]) for name in PARAMS} for g in guesses]
    layout, sol = _solve(datasets, guesses, free, shared, context, 1)
    sigma_given = all(d.sigma is not None for d in datasets)
    return _package(layout, sol, datasets, free, n_free, sigma_given)


def _robust_noise(y):
    d = np.diff(y)
    return 1.4826 * np.median(np.abs(d - np.median(d))) / math.sqrt(2)


def _half_crossing(x, p, i0, level, direction):
    i = i0
    while 0 <= i + direction < x.size:
        j = i + direction
        if (p[i] - level) * (p[j] - level) <= 0 and p[i] != p[j]:
            frac = (level - p[i]) / (p[j] - p[i])
            return abs(x[i] + frac * (x[j] - x[i]) - x[i0])
        i = j
    return None


def _estimate_kappa(x, y, center, width, gamma_m):
    """kappa_T from the baseline curvature 1/|A|^2 = a (kappa^2 + Delta^2).

    The Lorentzian window factor (d^2 + (width/2)^2) / (d^2 + (gamma_m/2)^2) is divided
    out of the wings first.
    """
    far = np.abs(x - center) > 5 * width
    if far.sum() < 3:
        return None
    d2 = (x[far] - center) ** 2
    base_sq = y[far] ** 2 * (d2 + (width / 2) ** 2) / (d2 + (gamma_m / 2) ** 2)
    slope, intercept = np.polyfit(x[far] ** 2, 1 / base_sq, 1)
    if slope <= 0 or intercept <= 0:
        return None
    kappa = math.sqrt(intercept / slope)
    return kappa if math.isfinite(kappa) else None


def initial_guess(data, gamma_m=None, kappa_t=None, context=FitContext()):
    """Seed every fit parameter from the shape of a spectrum.

    The window extremum sets the centre, its depth (dip) or height (peak) relative to
    the edges sets the cooperativity, and the full width at half power sets the
    effective damping.  ``gamma_m`` and ``kappa_t`` are used when supplied.

    Raises
    ------
    SeedingError
        If no extremum stands more than 3 noise standard deviations off the baseline.
    """
    x, y = data.detuning, data.modulus
    n_edge = max(2, x.size // 20)
    base = float(np.median(np.concatenate([y[:n_edge], y[-n_edge:]])))
    noise = _robust_noise(y)
    i_min, i_max = int(np.argmin(y)), int(np.argmax(y))
    dip, peak = base - y[i_min], y[i_max] - base
    dev = max(dip, peak)
    if dev <= 3 * noise or dev <= 1e-9 * abs(base) or base <= 0:
        raise SeedingError("spectrum has no feature above the noise to seed from", field="modulus")
    is_dip = dip >= peak
    i0 = i_min if is_dip else i_max
    ext = y[i0]
    power = y**2
    level = 0.5 * (ext**2 + base**2)
    left = _half_crossing(x, power, i0, level, -1)
    right = _half_crossing(x, power, i0, level, +1)
    halves = [h for h in (left, right) if h is not None]
    if not halves:
        raise SeedingError("window edges not found inside the spectrum", field="modulus")
    fwhm = 2 * halves[0] if len(halves) == 1 else left + right
    if is_dip:
        c = base / ext - 1 if ext > 0 else 1e6
    else:
        c = min(1 - base / ext, 0.99)
    if gamma_m is None:
        gamma_m = fwhm / (1 + c) if is_dip else fwhm / (1 - c)
        ratio = c
    else:
        ratio = fwhm / gamma_m - 1 if is_dip else 1 - fwhm / gamma_m
        ratio = max(ratio, 1e-6)
    center = float(x[i0])
    if kappa_t is None:
        kappa_t = _estimate_kappa(x, y, center, fwhm, gamma_m)
        if kappa_t is None:
            raise SeedingError("baseline too flat to estimate kappa_t; supply it", field="kappa_t")
    g = math.sqrt(ratio * 2 * kappa_t * gamma_m)
    omega_m = abs(center)
    phase = 0.0
    if data.phase is not None:
        edges = np.concatenate([data.phase[:n_edge], data.phase[-n_edge:]])
        phase = float(np.angle(np.mean(np.exp(1j * edges))))
    guess = {
        "g": g,
        "kappa_t": float(kappa_t),
        "gamma_m": float(gamma_m),
        "scale": 1.0,
        "phase": phase,
        "omega_m": omega_m,
    }
    # match the uncoupled baseline level at the data edges
    edge_model = np.abs(model_beat({**guess, "g": 0.0}, x[[0, -1]], data.mode, data.delta, context))
    guess["scale"] = base / float(np.mean(edge_model))
    guess["branch"] = "dip" if is_dip else "gain"
    return guess


def replica_rng(seed, index):
    """Independent, reproducible stream for Monte-Carlo replica ``index``."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def monte_carlo(truth, detuning, n_reps, noise=0.01, seed=0, free=("g", "gamma_m", "scale"),
                with_phase=False, phase_noise=None, workers=1, context=FitContext()):
    """Refit noisy synthetic spectra; multiplicative Gaussian noise of relative size ``noise``.

    Returns
    -------
    list of FitResult, in replica order
    """
    clean = model_beat(truth, detuning, context=context)

    def one(i):
        rng = replica_rng(seed, i)
        mod = np.abs(clean) * (1 + noise * rng.standard_normal(clean.size))
        phase = psig = None
        if with_phase:
            psig_value = noise if phase_noise is None else phase_noise
            phase = np.angle(clean) + psig_value * rng.standard_normal(clean.size)
            psig = np.full(clean.size, psig_value)
        data = SpectrumData(detuning, mod, phase, np.abs(clean) * noise, psig)
        guess = initial_guess(data, kappa_t=truth["kappa_t"], context=context)
        for name in PARAMS:
            if name not in free:
                guess[name] = truth[name]
        return fit_spectrum(data, guess, free, context)

    if workers <= 1:
        return [one(i) for i in range(n_reps)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(n_reps)))
