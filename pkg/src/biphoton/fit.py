"""Weighted least-squares estimation of correlation-model parameters from histograms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import AlignmentError, DegenerateFitError, InvalidInputError
from .model import (
    MIN_T_D,
    TWO_PI,
    CorrelationCurve,
    DetectionParams,
    InterferometerConfig,
    Regime,
    SourceParams,
    gamma_ave,
    integrate_bins,
    phase_weights,
    visibility,
)
from .sim import CoincidenceHistogram

PARAMETERS = ("c1", "c2", "theta", "tau_0", "tau_r", "delta_omega_opo", "t_d", "T", "delta")
SHAPE_PARAMETERS = ("tau_0", "tau_r", "delta_omega_opo", "t_d", "T")

# finite-difference scale for parameters sitting at zero
_TYPICAL = {
    "c1": 1.0, "c2": 1.0, "theta": 1.0, "tau_0": 1e-9, "tau_r": 1e-9,
    "delta_omega_opo": 1e7, "t_d": 1e-10, "T": 1e-10, "delta": 1e-2,
}

REL_STEP = 1e-6
MAX_ITER = 200
CHI2_RTOL = 1e-8
LAMBDA_MAX = 1e16
MAX_PHASE_STEP = 0.25  # rad per iteration; keeps theta on the branch it started on


@dataclass
class FitSpec:
    """Which parameters are free, their starting/fixed values and bounds.

    ``values`` must hold every name in ``PARAMETERS``; free ones are initial
    guesses.  Missing bounds default to :func:`default_bounds`.  A ``theta``
    bound of ``(0, 2 pi)`` (the default) is treated as periodic.
    """

    regime: Regime
    free: Tuple[str, ...]
    values: Dict[str, float]
    bounds: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        self.regime = Regime.parse(self.regime)
        self.free = tuple(self.free)
        unknown = set(self.free) - set(PARAMETERS)
        if unknown:
            raise InvalidInputError(f"unknown parameters {sorted(unknown)}")
        if len(set(self.free)) != len(self.free) or not self.free:
            raise InvalidInputError("free parameters must be a non-empty set")
        missing = set(PARAMETERS) - set(self.values)
        if missing:
            raise InvalidInputError(f"no value for {sorted(missing)}")
        self.values = {k: float(self.values[k]) for k in PARAMETERS}
        bounds = default_bounds()
        bounds.update({k: (float(lo), float(hi)) for k, (lo, hi) in self.bounds.items()})
        self.bounds = bounds
        lo, hi = self.bounds["theta"]
        if lo < 0 or hi > TWO_PI:
            raise InvalidInputError("theta bounds must lie within [0, 2 pi]")
        for name in self.free:
            lo, hi = self.bounds[name]
            v = self.values[name]
            if name == "theta" and self.theta_periodic:
                self.values[name] = v % TWO_PI
            elif not lo <= v <= hi:
                raise InvalidInputError(f"initial {name}={v!r} outside bounds ({lo}, {hi})")

    @property
    def theta_periodic(self) -> bool:
        return self.bounds["theta"] == (0.0, TWO_PI)

    @classmethod
    def from_models(cls, src: SourceParams, det: DetectionParams, cfg: InterferometerConfig,
                    free: Iterable[str] = ("c1", "c2", "theta"),
                    bounds: Optional[Mapping[str, Tuple[float, float]]] = None,
                    **overrides: float) -> "FitSpec":
        values = {
            "c1": cfg.c1, "c2": cfg.c2, "theta": cfg.theta,
            "tau_0": det.tau_0, "tau_r": src.tau_r,
            "delta_omega_opo": src.delta_omega_opo, "t_d": det.t_d,
            "T": cfg.delay, "delta": src.delta,
        }
        values.update(overrides)
        return cls(cfg.regime, tuple(free), values, dict(bounds or {}))


def default_bounds() -> Dict[str, Tuple[float, float]]:
    inf = math.inf
    return {
        "c1": (0.0, inf), "c2": (-inf, inf), "theta": (0.0, TWO_PI),
        "tau_0": (-inf, inf), "tau_r": (1e-15, inf), "delta_omega_opo": (1.0, inf),
        "t_d": (MIN_T_D, inf), "T": (0.0, inf), "delta": (0.0, 0.999),
    }


@dataclass
class FitResult:
    params: Dict[str, float]
    errors: Dict[str, float]
    chi2: float
    dof: int
    status: str
    iterations: int
    residuals: np.ndarray
    free: Tuple[str, ...]
    regime: Regime
    mask: np.ndarray
    chi2_history: list = field(default_factory=list)
    grad_norm: float = 0.0
    covariance: Optional[np.ndarray] = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def chi2_per_dof(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else math.nan

    @property
    def theta_canonical(self) -> float:
        return canonical_phase(self.params["theta"], self.regime)

    @property
    def ambiguity(self) -> str:
        return phase_ambiguity(self.regime)

    def report(self) -> str:
        lines = [
            f"regime           {self.regime.value}",
            f"status           {self.status} after {self.iterations} iterations",
            f"chi2             {self.chi2:.6g}",
            f"dof              {self.dof}",
            f"chi2/dof      {self.chi2_per_dof:.6g}",
        ]
        for name in PARAMETERS:
            v = self.params[name]
            if name in self.free:
                lines.append(f"{name:<17}{v:.10g} +/- {self.errors[name]:.3g}")
            else:
                lines.append(f"{name:<17}{v:.10g} (fixed)")
        if "theta" in self.free:
            lines.append(f"theta_canon      {self.theta_canonical:.10g}")
            lines.append(f"ambiguity        {self.ambiguity}")
        return "\n".join(lines)

    def as_dict(self) -> Dict[str, Union[float, int, str]]:
        out: Dict[str, Union[float, int, str]] = {
            "regime": self.regime.value, "status": self.status,
            "iterations": self.iterations, "chi2": self.chi2, "dof": self.dof,
            "free": ",".join(self.free),
        }
        for name in PARAMETERS:
            out[name] = self.params[name]
            if name in self.free:
                out[f"{name}_err"] = self.errors[name]
        if "theta" in self.free:
            out["theta_canonical"] = self.theta_canonical
        return out


def canonical_phase(theta: float, regime: Regime) -> float:
    """Representative of the phases a regime's model cannot tell apart.

    The unbalanced and roughly balanced models see only cos^2, so theta is
    folded into [0, pi/2]; the perfectly balanced model sees cos, giving [0, pi].
    """
    t = theta % TWO_PI
    if Regime.parse(regime) is Regime.PERFECT_BALANCED:
        return TWO_PI - t if t > math.pi else t
    t = t % math.pi
    return math.pi - t if t > math.pi / 2 else t


def phase_ambiguity(regime: Regime) -> str:
    if Regime.parse(regime) is Regime.PERFECT_BALANCED:
        return "theta and 2pi - theta give identical histograms"
    return "theta, pi - theta, pi + theta and 2pi - theta give identical histograms"


# --------------------------------------------------------------------------
# binned model
# --------------------------------------------------------------------------


class BinnedModel:
    """Bin-averaged correlation model on a fixed histogram grid, in counts per bin.

    Comb bases are cached per shape-parameter tuple, so fits that only move
    c1, c2, theta or delta reuse a single evaluation.
    """

    def __init__(self, edges: np.ndarray, regime: Regime):
        self.edges = np.asarray(edges, dtype=float)
        self.widths = np.diff(self.edges)
        self.regime = Regime.parse(regime)
        self._cache: Dict[tuple, Tuple[np.ndarray, np.ndarray]] = {}

    def _bases(self, p: Mapping[str, float]):
        key = tuple(p[k] for k in SHAPE_PARAMETERS)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        lo, hi = float(self.edges[0]), float(self.edges[-1])
        src = SourceParams(p["delta_omega_opo"], p["tau_r"], 0.0)
        det = DetectionParams(p["t_d"], p["tau_0"], float(self.widths[0]),
                              (min(lo, p["tau_0"]), max(hi, p["tau_0"])))
        T = p["T"]
        center = integrate_bins(lambda t: gamma_ave(t, src, det), self.edges) / self.widths
        if self.regime is Regime.UNBALANCED:
            shifted = integrate_bins(
                lambda t: gamma_ave(t - T, src, det) + gamma_ave(t + T, src, det), self.edges
            ) / self.widths
        else:
            shifted = np.zeros_like(center)
        if len(self._cache) > 256:
            self._cache.clear()
        self._cache[key] = (center, shifted)
        return center, shifted

    def __call__(self, p: Mapping[str, float]) -> np.ndarray:
        center, shifted = self._bases(p)
        w = phase_weights(self.regime, p["theta"], p["delta"])
        return p["c1"] * (w.center * center + w.shifted * shifted + w.flat) + p["c2"]


def model_histogram(edges, src: SourceParams, det: DetectionParams,
                    cfg: InterferometerConfig) -> CoincidenceHistogram:
    """Noiseless histogram: the bin-averaged model with float counts."""
    spec = FitSpec.from_models(src, det, cfg)
    counts = BinnedModel(edges, cfg.regime)(spec.values)
    return CoincidenceHistogram(edges, counts, int(round(float(counts.sum()))))


# --------------------------------------------------------------------------
# damped least squares
# --------------------------------------------------------------------------


def _degenerate_names(A: np.ndarray, names: Sequence[str]) -> Optional[Tuple[str, ...]]:
    d = np.diag(A)
    zero = [n for n, v in zip(names, d) if not v > 0]
    if zero:
        return tuple(zero)
    s = np.sqrt(d)
    corr = A / np.outer(s, s)
    evals, evecs = np.linalg.eigh(corr)
    if evals[0] > 1e-13 * max(evals[-1], 1.0):
        return None
    vec = np.abs(evecs[:, 0])
    return tuple(n for n, c in zip(names, vec) if c > 0.1 * vec.max())


def fit(hist: CoincidenceHistogram, spec: FitSpec, max_iter: int = MAX_ITER) -> FitResult:
    """Minimize sum (counts - model)^2 / max(counts, 1) over ``spec.free``.

    Multiplicatively damped Gauss-Newton steps with a central-difference
    Jacobian; a step is accepted only if it lowers chi^2.  Bounded parameters
    are projected onto their bounds; a full-period theta is left free and
    wrapped into [0, 2 pi) on output.

    Raises
    ------
    DegenerateFitError
        The normal matrix is singular; the exception names the parameters.
    """
    counts = np.asarray(hist.counts, dtype=float)
    sigma = np.sqrt(np.maximum(counts, 1.0))
    model = BinnedModel(hist.bin_edges, spec.regime)
    names = spec.free
    values = dict(spec.values)
    lower = np.array([spec.bounds[n][0] for n in names])
    upper = np.array([spec.bounds[n][1] for n in names])
    periodic = np.array([n == "theta" and spec.theta_periodic for n in names])
    lower[periodic], upper[periodic] = -np.inf, np.inf

    def params_of(x):
        p = dict(values)
        p.update(zip(names, map(float, x)))
        return p

    x = np.array([values[n] for n in names])
    first = model(params_of(x))
    if "c2" not in names and values["c2"] == 0.0:
        mask = first >= 1e-3 * first.max()
    else:
        mask = np.ones(counts.size, dtype=bool)
    if mask.sum() < len(names) + 1:
        raise InvalidInputError(f"{mask.sum()} usable bins for {len(names)} free parameters")

    def resid(x):
        return ((counts - model(params_of(x))) / sigma)[mask]

    def jacobian(x):
        J = np.empty((int(mask.sum()), x.size))
        for j in range(x.size):
            h = REL_STEP * max(abs(x[j]), _TYPICAL[names[j]])
            up, dn = x.copy(), x.copy()
            up[j] = min(x[j] + h, upper[j])
            dn[j] = max(x[j] - h, lower[j])
            J[:, j] = (resid(up) - resid(dn)) / (up[j] - dn[j])
        return J

    def inert(x, j):
        # a zero derivative is structural only if a finite move changes nothing
        base = resid(x)
        h = 1e-2 * max(abs(x[j]), _TYPICAL[names[j]])
        for sign in (1.0, -1.0):
            y = x.copy()
            y[j] = np.clip(x[j] + sign * h, lower[j], upper[j])
            if y[j] != x[j] and not np.array_equal(resid(y), base):
                return False
        return True

    def check(A, x):
        bad = _degenerate_names(A, names)
        if bad and all(not inert(x, names.index(n)) for n in bad) \
                and all(np.diag(A)[names.index(n)] == 0 for n in bad):
            return [names.index(n) for n in bad]  # stationary, not degenerate
        if bad:
            raise DegenerateFitError(f"collinear or inert parameters: {', '.join(bad)}", bad)
        return []

    theta_idx = names.index("theta") if "theta" in names else None
    J = jacobian(x)
    for j in check(J.T @ J, x):
        # starting exactly on a stationary point: step off it
        h = 1e-3 * max(abs(x[j]), _TYPICAL[names[j]])
        x[j] = x[j] + h if x[j] + h <= upper[j] else x[j] - h
    r = resid(x)
    chi2 = float(r @ r)
    history = [chi2]
    lam = 1e-3
    status = "max-iterations"
    it = 0
    J = jacobian(x)
    while it < max_iter:
        it += 1
        A = J.T @ J
        g = J.T @ r
        if check(A, x):
            status = "converged"  # landed on a stationary point
            break
        damp = np.diag(np.diag(A))
        while True:
            try:
                step = np.linalg.solve(A + lam * damp, -g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(A + lam * damp, -g, rcond=None)[0]
            if theta_idx is not None and abs(step[theta_idx]) > MAX_PHASE_STEP:
                step *= MAX_PHASE_STEP / abs(step[theta_idx])
            x_new = np.clip(x + step, lower, upper)
            r_new = resid(x_new)
            chi2_new = float(r_new @ r_new)
            if chi2_new < chi2:
                break
            lam *= 10.0
            if lam > LAMBDA_MAX:
                break
        if lam > LAMBDA_MAX:
            status = "converged"  # no descent direction left at machine precision
            break
        drop = (chi2 - chi2_new) / max(chi2, 1e-300)
        x, r, chi2 = x_new, r_new, chi2_new
        history.append(chi2)
        lam = max(lam / 10.0, 1e-12)
        if drop < CHI2_RTOL:
            status = "converged"
            break
        J = jacobian(x)

    J = jacobian(x)
    A = J.T @ J
    flat = check(A, x)
    n_used = int(mask.sum())
    dof = n_used - len(names)
    live = [j for j in range(len(names)) if j not in flat]
    cov = np.full((len(names), len(names)), np.nan)
    cov[np.ix_(live, live)] = np.linalg.inv(A[np.ix_(live, live)])
    cov[flat, flat] = np.inf
    if dof > 0 and chi2 / dof > 1.0:
        cov = cov * (chi2 / dof)
    errs = np.sqrt(np.maximum(np.diag(cov), 0.0))
    scale = np.sqrt(np.diag(A))
    grad_norm = float(np.linalg.norm((J.T @ r) / np.where(scale > 0, scale, 1.0)))

    params = params_of(x)
    if "theta" in names:
        params["theta"] = params["theta"] % TWO_PI
        if params["theta"] >= TWO_PI:
            params["theta"] = 0.0
    full = np.zeros(counts.size)
    full[mask] = r
    return FitResult(
        params=params,
        errors=dict(zip(names, map(float, errs))),
        chi2=chi2,
        dof=dof,
        status=status,
        iterations=it,
        residuals=full,
        free=names,
        regime=spec.regime,
        mask=mask,
        chi2_history=history,
        grad_norm=grad_norm,
        covariance=cov,
    )


def linear_scale_guess(hist: CoincidenceHistogram, spec: FitSpec) -> Tuple[float, float]:
    """Unweighted least-squares (c1, c2) for the spec's other values."""
    model = BinnedModel(hist.bin_edges, spec.regime)
    p = dict(spec.values, c1=1.0, c2=0.0)
    shape = model(p)
    X = np.column_stack([shape, np.ones_like(shape)])
    (c1, c2), *_ = np.linalg.lstsq(X, np.asarray(hist.counts, dtype=float), rcond=None)
    return max(float(c1), 0.0), float(c2)


def fit_phase(hist: CoincidenceHistogram, regime, src: SourceParams, det: DetectionParams,
              delta_l: float = 0.0, theta_guess: float = math.pi / 4,
              fold: bool = True) -> Tuple[float, float]:
    """Fit ``c1``, ``c2`` and ``theta`` with the shape parameters held fixed.

    Scale and background start from a linear least-squares guess.  With
    ``fold`` the phase is mapped into the regime's identifiable interval (see
    :func:`canonical_phase`); otherwise the optimum nearest ``theta_guess`` is
    returned in [0, 2 pi).
    """
    cfg = InterferometerConfig(delta_l, theta_guess, Regime.parse(regime))
    spec = FitSpec.from_models(src, det, cfg)
    c1, c2 = linear_scale_guess(hist, spec)
    spec.values.update(c1=c1, c2=c2)
    res = fit(hist, spec)
    theta = res.theta_canonical if fold else res.params["theta"]
    return theta, res.errors["theta"]


# --------------------------------------------------------------------------
# goodness of fit and sweeps
# --------------------------------------------------------------------------


def goodness(hist: CoincidenceHistogram, model, n_free: int = 0) -> Tuple[float, int, float]:
    """Pearson chi^2 of ``hist`` against expected counts, variance max(counts, 1).

    ``model`` is a histogram of expected counts on the same bins, a
    :class:`CorrelationCurve` sampled at the bin centres, or a plain array.
    """
    counts = np.asarray(hist.counts, dtype=float)
    if isinstance(model, CoincidenceHistogram):
        if model.bin_edges.shape != hist.bin_edges.shape or not np.allclose(
                model.bin_edges, hist.bin_edges, rtol=0, atol=1e-6 * hist.widths.min()):
            raise AlignmentError("model and histogram bin edges differ")
        expected = np.asarray(model.counts, dtype=float)
    elif isinstance(model, CorrelationCurve):
        if model.tau_grid.shape != counts.shape or not np.allclose(
                model.tau_grid, hist.centers, rtol=0, atol=1e-6 * hist.widths.min()):
            raise AlignmentError("curve grid is not the histogram's bin centres")
        expected = model.values
    else:
        expected = np.asarray(model, dtype=float)
        if expected.shape != counts.shape:
            raise AlignmentError(f"{expected.size} model values for {counts.size} bins")
    chi2 = float(np.sum((counts - expected) ** 2 / np.maximum(counts, 1.0)))
    dof = counts.size - n_free
    return chi2, dof, chi2 / dof if dof > 0 else math.nan


def integrated_counts(hist: CoincidenceHistogram, tau_window) -> float:
    lo, hi = tau_window
    c = hist.centers
    return float(np.asarray(hist.counts)[(c >= lo) & (c < hi)].sum())


def sweep_visibility(histograms, tau_window) -> Tuple[float, np.ndarray]:
    """Visibility of window-integrated counts across a phase sweep.

    ``histograms`` is a mapping or sequence of ``(theta, histogram)`` pairs.
    """
    items = histograms.items() if isinstance(histograms, Mapping) else histograms
    rows = np.array([(float(th), integrated_counts(h, tau_window)) for th, h in items])
    if rows.shape[0] < 2:
        raise InvalidInputError("need at least two phases")
    rows = rows[np.argsort(rows[:, 0], kind="stable")]
    return visibility(rows), rows
