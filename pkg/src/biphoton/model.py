"""Closed-form two-photon correlation functions of a multimode OPO pair source.

All quantities are SI (seconds, metres, rad/s, radians).  Each comb peak of
``gamma_ave`` is normalized to 1 before the envelope factor, so the physical
count scale lives entirely in ``c1`` (and ``c2`` for a flat background).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError, RegimeError, UndefinedVisibilityError

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact
LN2 = math.log(2.0)

#: zero-delay correlation in the unit-peak normalization
GAMMA_ZERO = 1.0

#: envelope decay, in units of 1/delta_omega_opo, beyond which terms are dropped
ENVELOPE_CUT = 30.0

#: jitter-kernel argument beyond which (1 + x) exp(-x) < 1e-24
KERNEL_CUT = 60.0

MIN_T_D = 1e-12

#: single-photon coherence length of the paper's source, m
COHERENCE_LENGTH = 90e-6

TWO_PI = 2.0 * math.pi


class Regime(str, Enum):
    UNBALANCED = "unbalanced"
    PERFECT_BALANCED = "perfect-balanced"
    ROUGH_BALANCED = "rough-balanced"

    @classmethod
    def parse(cls, value) -> "Regime":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {
            "unbalanced": cls.UNBALANCED,
            "perfect-balanced": cls.PERFECT_BALANCED,
            "perfectbalanced": cls.PERFECT_BALANCED,
            "perfect": cls.PERFECT_BALANCED,
            "rough-balanced": cls.ROUGH_BALANCED,
            "roughbalanced": cls.ROUGH_BALANCED,
            "rough": cls.ROUGH_BALANCED,
        }
        try:
            return aliases[key]
        except KeyError:
            raise InvalidInputError(f"unknown regime {value!r}") from None


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise InvalidInputError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class SourceParams:
    """OPO comb parameters: linewidth (rad/s), round-trip time (s), relative gain."""

    delta_omega_opo: float
    tau_r: float
    delta: float = 0.0

    def __post_init__(self):
        dw = _finite("delta_omega_opo", self.delta_omega_opo)
        tr = _finite("tau_r", self.tau_r)
        d = _finite("delta", self.delta)
        if dw <= 0 or tr <= 0:
            raise InvalidInputError("delta_omega_opo and tau_r must be positive")
        if not 0.0 <= d < 1.0:
            raise InvalidInputError(f"delta must lie in [0, 1), got {d}")
        if dw * tr >= 1.0:
            warnings.warn(
                f"delta_omega_opo * tau_r = {dw * tr:.3g} >= 1: modes are not resolved "
                "as a comb",
                RuntimeWarning,
                stacklevel=3,
            )
        object.__setattr__(self, "delta_omega_opo", dw)
        object.__setattr__(self, "tau_r", tr)
        object.__setattr__(self, "delta", d)


@dataclass(frozen=True)
class DetectionParams:
    """Detector jitter scale, electric delay, histogram binning and window (all s)."""

    t_d: float
    tau_0: float
    bin_width: float
    window: Tuple[float, float]

    def __post_init__(self):
        t_d = _finite("t_d", self.t_d)
        tau_0 = _finite("tau_0", self.tau_0)
        bw = _finite("bin_width", self.bin_width)
        lo, hi = (_finite("window", w) for w in self.window)
        if t_d < MIN_T_D:
            raise InvalidInputError(
                f"t_d must be at least {MIN_T_D:g} s, got {t_d:g} (jitter kernel degenerates)"
            )
        if bw <= 0:
            raise InvalidInputError("bin_width must be positive")
        if not lo < hi:
            raise InvalidInputError(f"empty window ({lo}, {hi})")
        if not lo <= tau_0 <= hi:
            raise InvalidInputError("window must contain tau_0")
        object.__setattr__(self, "t_d", t_d)
        object.__setattr__(self, "tau_0", tau_0)
        object.__setattr__(self, "bin_width", bw)
        object.__setattr__(self, "window", (lo, hi))

    @property
    def span(self) -> float:
        return self.window[1] - self.window[0]

    def bin_edges(self) -> np.ndarray:
        """Left-closed bins of ``bin_width`` starting at the window's left edge.

        The last bin is dropped if it would extend past the window.
        """
        n = int(math.floor(self.span / self.bin_width * (1 + 1e-12)))
        if n < 1:
            raise InvalidInputError("window is narrower than one bin")
        return self.window[0] + self.bin_width * np.arange(n + 1)


@dataclass(frozen=True)
class InterferometerConfig:
    """Arm path difference (m), phase (rad), regime, scale and flat background."""

    delta_l: float
    theta: float
    regime: Regime
    c1: float = 1.0
    c2: float = 0.0

    def __post_init__(self):
        dl = _finite("delta_l", self.delta_l)
        if dl < 0:
            raise InvalidInputError("delta_l must be non-negative")
        theta = _finite("theta", self.theta) % TWO_PI
        if theta >= TWO_PI:  # -tiny % 2pi rounds up to 2pi
            theta = 0.0
        object.__setattr__(self, "delta_l", dl)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "regime", Regime.parse(self.regime))
        object.__setattr__(self, "c1", _finite("c1", self.c1))
        object.__setattr__(self, "c2", _finite("c2", self.c2))

    @property
    def delay(self) -> float:
        return delay_from_path(self.delta_l)


@dataclass(frozen=True)
class CorrelationCurve:
    tau_grid: np.ndarray
    values: np.ndarray
    meta: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        tau = np.asarray(self.tau_grid, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if tau.shape != vals.shape or tau.ndim != 1:
            raise InvalidInputError("tau_grid and values must be 1-D of equal length")
        if tau.size > 1 and not np.all(np.diff(tau) > 0):
            raise InvalidInputError("tau_grid must be strictly increasing")
        if np.any(vals < 0):
            raise InvalidInputError("correlation values must be non-negative")
        object.__setattr__(self, "tau_grid", tau)
        object.__setattr__(self, "values", vals)


# --------------------------------------------------------------------------
# comb kernel
# --------------------------------------------------------------------------


def jitter_rate(t_d: float) -> float:
    """Decay rate 2 ln2 / T_D of the jitter kernel (1 + a|u|) exp(-a|u|)."""
    return 2.0 * LN2 / t_d


def default_n_max(src: SourceParams, det: DetectionParams) -> int:
    return int(math.ceil((det.span + ENVELOPE_CUT / src.delta_omega_opo) / src.tau_r))


def _comb_sum(u: np.ndarray, tau_r: float, a: float, n_max: int) -> np.ndarray:
    # Only peaks within k_span of the nearest one are summed; the rest are
    # below 1e-24 of the local value.  Terms are added in (-k, +k) pairs so
    # the result is bit-for-bit even in u.
    k_span = min(int(math.ceil(KERNEL_CUT / (a * tau_r))) + 1, 2 * n_max)
    offsets = np.arange(-k_span, k_span + 1, dtype=float)
    n_near = np.clip(np.rint(u / tau_r), -n_max, n_max)
    out = np.empty_like(u)
    chunk = 1 << 15
    for start in range(0, u.size, chunk):
        uu = u[start:start + chunk, None]
        n = n_near[start:start + chunk, None] + offsets
        x = a * np.abs(uu - n * tau_r)
        terms = np.where(np.abs(n) <= n_max, (1.0 + x) * np.exp(-x), 0.0)
        pairs = terms[:, :k_span][:, ::-1] + terms[:, k_span + 1:]
        out[start:start + chunk] = terms[:, k_span] + pairs.sum(axis=1)
    return out


def gamma_ave(tau, src: SourceParams, det: DetectionParams, n_max: Optional[int] = None):
    """Jitter-broadened comb correlation averaged over detector timing.

    ``exp(-dw |tau - tau_0|) * sum_n (1 + a|u_n|) exp(-a|u_n|)`` with
    ``u_n = tau - n tau_r - tau_0``, ``a = 2 ln2 / T_D`` and ``|n| <= n_max``.

    Parameters
    ----------
    tau : float or array_like
        Delay(s) in seconds.
    n_max : int, optional
        Truncation of the peak sum; defaults to :func:`default_n_max`.

    Returns
    -------
    float or ndarray
        Same shape as ``tau``.
    """
    tau_arr = np.asarray(tau, dtype=float)
    if not np.all(np.isfinite(tau_arr)):
        raise InvalidInputError("tau must be finite")
    if n_max is None:
        n_max = default_n_max(src, det)
    n_max = int(n_max)
    if n_max < 0:
        raise InvalidInputError("n_max must be non-negative")
    u = np.atleast_1d(tau_arr - det.tau_0).ravel()
    out = _comb_sum(u, src.tau_r, jitter_rate(det.t_d), n_max)
    out *= np.exp(-src.delta_omega_opo * np.abs(u))
    if tau_arr.ndim == 0:
        return float(out[0])
    return out.reshape(tau_arr.shape)


# --------------------------------------------------------------------------
# regime correlation functions
# --------------------------------------------------------------------------


def _require(cfg: InterferometerConfig, regime: Regime):
    if cfg.regime is not regime:
        raise RegimeError(f"config is {cfg.regime.value}, expected {regime.value}")


def gamma_unbalanced(tau, cfg: InterferometerConfig, src: SourceParams,
                     det: DetectionParams, n_max: Optional[int] = None):
    """C1 [4 G(tau) cos^2(theta) + G(tau - T) + G(tau + T)] + C2, G = gamma_ave."""
    _require(cfg, Regime.UNBALANCED)
    tau = np.asarray(tau, dtype=float)
    T = cfg.delay
    central = gamma_ave(tau, src, det, n_max)
    shifted = gamma_ave(tau - T, src, det, n_max) + gamma_ave(tau + T, src, det, n_max)
    return cfg.c1 * (4.0 * central * math.cos(cfg.theta) ** 2 + shifted) + cfg.c2


def gamma_balanced_perfect(tau, cfg: InterferometerConfig, src: SourceParams,
                           det: DetectionParams, n_max: Optional[int] = None):
    """(C1/4) [(1 + delta) G(tau) + delta G0] (cos(theta) + 1)^2 + C2.

    With ``delta = 0``, ``c1 = 1`` and ``c2 = 0`` this is G(tau) (cos(theta) + 1)^2 / 4.
    """
    _require(cfg, Regime.PERFECT_BALANCED)
    g = gamma_ave(tau, src, det, n_max)
    d = src.delta
    factor = (math.cos(cfg.theta) + 1.0) ** 2 / 4.0
    return cfg.c1 * factor * ((1.0 + d) * g + d * GAMMA_ZERO) + cfg.c2


def gamma_balanced_rough(tau, cfg: InterferometerConfig, src: SourceParams,
                         det: DetectionParams, n_max: Optional[int] = None):
    """(C1/4) [G(tau) (cos^2(theta) + (1 + 3 delta)/2) + delta G0] + C2.

    For ``delta = 0`` the phase factor is cos(2 theta)/2 + 1.
    """
    _require(cfg, Regime.ROUGH_BALANCED)
    g = gamma_ave(tau, src, det, n_max)
    d = src.delta
    phase = math.cos(cfg.theta) ** 2 + (1.0 + 3.0 * d) / 2.0
    return cfg.c1 * (g * phase + d * GAMMA_ZERO) / 4.0 + cfg.c2


_REGIME_FUNCS = {
    Regime.UNBALANCED: gamma_unbalanced,
    Regime.PERFECT_BALANCED: gamma_balanced_perfect,
    Regime.ROUGH_BALANCED: gamma_balanced_rough,
}


def correlation(tau, cfg: InterferometerConfig, src: SourceParams,
                det: DetectionParams, n_max: Optional[int] = None):
    """Dispatch to the correlation function of ``cfg.regime``."""
    return _REGIME_FUNCS[cfg.regime](tau, cfg, src, det, n_max)


class PhaseWeights(NamedTuple):
    """Coefficients of G(tau), G(tau - T) + G(tau + T) and G0 inside the C1 bracket."""

    center: float
    shifted: float
    flat: float

    @property
    def total(self) -> float:
        return self.center + self.shifted + self.flat


def phase_weights(regime: Regime, theta: float, delta: float = 0.0,
                  sigma: float = 0.0) -> PhaseWeights:
    """Phase-dependent weights of each comb family, optionally averaged over
    Gaussian phase noise of standard deviation ``sigma``.

    Uses <cos> = cos(theta) e^{-s^2/2} and <cos^2> = (1 + cos(2 theta) e^{-2 s^2}) / 2.
    """
    regime = Regime.parse(regime)
    if sigma < 0:
        raise InvalidInputError("sigma must be non-negative")
    if sigma == 0.0:
        c = math.cos(theta)
        cos1, cos2 = c, c * c
    else:
        cos1 = math.cos(theta) * math.exp(-0.5 * sigma**2)
        cos2 = 0.5 * (1.0 + math.cos(2.0 * theta) * math.exp(-2.0 * sigma**2))
    if regime is Regime.UNBALANCED:
        return PhaseWeights(4.0 * cos2, 1.0, 0.0)
    if regime is Regime.PERFECT_BALANCED:
        f = (cos2 + 2.0 * cos1 + 1.0) / 4.0
        return PhaseWeights((1.0 + delta) * f, 0.0, delta * GAMMA_ZERO * f)
    return PhaseWeights((cos2 + (1.0 + 3.0 * delta) / 2.0) / 4.0, 0.0,
                        delta * GAMMA_ZERO / 4.0)


def delay_from_path(delta_l: float) -> float:
    """Relative delay T = delta_l / c of the two arms (delta_l in metres)."""
    delta_l = _finite("delta_l", delta_l)
    if delta_l < 0:
        raise InvalidInputError("delta_l must be non-negative")
    return delta_l / SPEED_OF_LIGHT


def classify_regime(delta_l: float, coherence_length: float = COHERENCE_LENGTH,
                    src: Optional[SourceParams] = None) -> Regime:
    """Pick the regime for a given path difference.

    Perfectly balanced below the single-photon coherence length, roughly
    balanced while delta_l / c < tau_r / 10, unbalanced beyond.
    """
    if delta_l < coherence_length:
        return Regime.PERFECT_BALANCED
    if src is None:
        raise InvalidInputError("source parameters are needed beyond the coherence length")
    if delay_from_path(delta_l) < src.tau_r / 10.0:
        return Regime.ROUGH_BALANCED
    return Regime.UNBALANCED


# --------------------------------------------------------------------------
# integration, sweeps and visibility
# --------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def integrate_bins(func: Callable[[np.ndarray], np.ndarray], edges) -> np.ndarray:
    """Integral of ``func`` over each interval of ``edges`` (8-point Gauss-Legendre)."""
    edges = np.asarray(edges, dtype=float)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    pts = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = np.asarray(func(pts.ravel()), dtype=float).reshape(pts.shape)
    return half * (vals @ _GL_WEIGHTS)


def _fine_edges(tau_window, det: DetectionParams) -> np.ndarray:
    lo, hi = tau_window
    n = max(int(math.ceil((hi - lo) / (det.t_d / 4.0))), 1)
    return np.linspace(lo, hi, n + 1)


def family_integrals(tau_window, cfg: InterferometerConfig, src: SourceParams,
                     det: DetectionParams) -> Tuple[float, float, float]:
    """Integrals over ``tau_window`` of G(tau), G(tau - T) + G(tau + T) and 1."""
    lo, hi = (float(w) for w in tau_window)
    if not lo < hi:
        raise InvalidInputError(f"empty window ({lo}, {hi})")
    edges = _fine_edges((lo, hi), det)
    T = cfg.delay
    center = integrate_bins(lambda t: gamma_ave(t, src, det), edges).sum()
    if cfg.regime is Regime.UNBALANCED:
        shifted = integrate_bins(
            lambda t: gamma_ave(t - T, src, det) + gamma_ave(t + T, src, det), edges
        ).sum()
    else:
        shifted = 0.0
    return float(center), float(shifted), hi - lo


def phase_sweep(regime, tau_window, theta_grid: Sequence[float], src: SourceParams,
                det: DetectionParams, cfg: InterferometerConfig) -> np.ndarray:
    """Correlation integrated over ``tau_window`` for each phase.

    Returns an ``(n, 2)`` array of ``(theta, integral)`` rows; ``cfg`` supplies
    the path difference, ``c1`` and ``c2`` (its own phase is ignored).
    """
    regime = Regime.parse(regime)
    thetas = np.asarray(theta_grid, dtype=float).ravel()
    if thetas.size == 0:
        raise InvalidInputError("theta grid is empty")
    cfg = InterferometerConfig(cfg.delta_l, 0.0, regime, cfg.c1, cfg.c2)
    center, shifted, width = family_integrals(tau_window, cfg, src, det)
    out = np.empty((thetas.size, 2))
    out[:, 0] = thetas
    for i, th in enumerate(thetas):
        w = phase_weights(regime, th, src.delta)
        out[i, 1] = cfg.c1 * (w.center * center + w.shifted * shifted + w.flat * width) \
            + cfg.c2 * width
    return out


def _sweep_values(sweep) -> np.ndarray:
    arr = np.asarray(sweep, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 2:
        return arr[:, 1]
    if arr.ndim == 1:
        return arr
    raise InvalidInputError("sweep must be an (n, 2) array of (theta, value)")


def visibility(sweep) -> float:
    """(max - min) / (max + min) of the sweep values."""
    vals = _sweep_values(sweep)
    if vals.size < 2:
        raise InvalidInputError("visibility needs at least two phase points")
    hi, lo = float(vals.max()), float(vals.min())
    if hi + lo <= 0.0:
        raise UndefinedVisibilityError("sweep is identically zero")
    return (hi - lo) / (hi + lo)


def fringe_count(sweep) -> int:
    """Number of local maxima of a sweep taken as periodic over its theta range."""
    arr = np.asarray(sweep, dtype=float)
    arr = arr[np.argsort(arr[:, 0])]
    v = arr[:, 1]
    tol = 1e-12 * float(np.max(np.abs(v))) if v.size else 0.0
    prev, nxt = np.roll(v, 1), np.roll(v, -1)
    return int(np.count_nonzero((v - prev > tol) & (v - nxt >= -tol)))


def time_grid(window: Tuple[float, float], resolution: float) -> np.ndarray:
    """Grid tau_min + k * resolution on an integer femtosecond lattice.

    Grids of commensurate resolutions share their common points exactly.
    """
    lo_fs = int(round(window[0] * 1e15))
    hi_fs = int(round(window[1] * 1e15))
    step = int(round(resolution * 1e15))
    if step <= 0:
        raise InvalidInputError("resolution must be at least 1 fs")
    return np.arange(lo_fs, hi_fs + 1, step, dtype=np.int64) * 1e-15


def model_curve(cfg: InterferometerConfig, src: SourceParams, det: DetectionParams,
                resolution: float) -> CorrelationCurve:
    tau = time_grid(det.window, resolution)
    values = np.maximum(correlation(tau, cfg, src, det), 0.0)
    return CorrelationCurve(tau, values, meta=(src, det, cfg))
