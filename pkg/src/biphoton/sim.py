"""Seeded Monte Carlo generation of coincidence delays, time tags and histograms.

Random streams come from numpy's Philox4x64-10 counter-based generator.  Every
block of ``BLOCK_SIZE`` events owns a stream keyed by ``SeedSequence(seed,
spawn_key=(0, block))``, so the output does not depend on how blocks are
grouped into chunks or which worker runs them.

Delays and time tags are digitized on a 1 fs lattice (``TAG_RESOLUTION``),
which keeps start/stop differencing exact.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import EmptyDensityError, InvalidInputError
from .model import (
    DetectionParams,
    InterferometerConfig,
    Regime,
    SourceParams,
    default_n_max,
    family_integrals,
    gamma_ave,
    integrate_bins,
    jitter_rate,
    phase_weights,
)

BLOCK_SIZE = 1 << 16
TAG_RESOLUTION = 1e-15  # s per tick
_FS_PER_S = 10**15

_STREAM_SAMPLER = 0
_STREAM_TIMETAGS = 1
_STREAM_SWEEP = 2


@dataclass(frozen=True)
class SimConfig:
    n_pairs: int
    accidental_fraction: float = 0.0
    seed: int = 0
    phase_jitter_sigma: float = 0.0
    pair_rate: float = 1e4  # s^-1, time-tag mode only

    def __post_init__(self):
        if int(self.n_pairs) != self.n_pairs or self.n_pairs <= 0:
            raise InvalidInputError(f"n_pairs must be a positive integer, got {self.n_pairs}")
        if not 0.0 <= self.accidental_fraction < 1.0:
            raise InvalidInputError("accidental_fraction must lie in [0, 1)")
        if not (math.isfinite(self.phase_jitter_sigma) and self.phase_jitter_sigma >= 0):
            raise InvalidInputError("phase_jitter_sigma must be non-negative")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")
        if not (math.isfinite(self.pair_rate) and self.pair_rate > 0):
            raise InvalidInputError("pair_rate must be positive")
        object.__setattr__(self, "n_pairs", int(self.n_pairs))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True, eq=False)
class CoincidenceHistogram:
    """Binned start-stop delays.

    ``total_events`` counts every event offered to the histogram; those
    outside the bins are in ``dropped``.  ``config`` is a plain dict snapshot
    of whatever produced the histogram.
    """

    bin_edges: np.ndarray
    counts: np.ndarray
    total_events: int
    dropped: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        counts = np.asarray(self.counts)
        if edges.ndim != 1 or counts.shape != (edges.size - 1,):
            raise InvalidInputError("need len(counts) == len(bin_edges) - 1")
        if np.any(np.diff(edges) <= 0):
            raise InvalidInputError("bin edges must be strictly increasing")
        if np.any(counts < 0):
            raise InvalidInputError("counts must be non-negative")
        if np.issubdtype(counts.dtype, np.integer) and counts.sum() > self.total_events:
            raise InvalidInputError("histogram holds more counts than total_events")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    def __eq__(self, other):
        if not isinstance(other, CoincidenceHistogram):
            return NotImplemented
        return (
            np.array_equal(self.bin_edges, other.bin_edges)
            and np.array_equal(self.counts, other.counts)
            and self.total_events == other.total_events
            and self.dropped == other.dropped
            and self.config == other.config
        )

    def __add__(self, other: "CoincidenceHistogram") -> "CoincidenceHistogram":
        if not np.array_equal(self.bin_edges, other.bin_edges):
            raise InvalidInputError("cannot add histograms with different bins")
        return CoincidenceHistogram(
            self.bin_edges,
            self.counts + other.counts,
            self.total_events + other.total_events,
            self.dropped + other.dropped,
            dict(self.config),
        )


@dataclass(frozen=True, eq=False)
class TimeTagStream:
    """Two channels of sorted arrival times in integer femtosecond ticks."""

    start: np.ndarray
    stop: np.ndarray
    labels: Tuple[str, str] = ("start", "stop")
    duration: int = 0  # ticks

    def __post_init__(self):
        start = np.sort(np.asarray(self.start, dtype=np.int64))
        stop = np.sort(np.asarray(self.stop, dtype=np.int64))
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "stop", stop)
        object.__setattr__(self, "labels", tuple(self.labels))
        hi = max(start[-1] if start.size else 0, stop[-1] if stop.size else 0)
        if self.duration < hi:
            object.__setattr__(self, "duration", int(hi))
        if (start.size and start[0] < 0) or (stop.size and stop[0] < 0):
            raise InvalidInputError("time tags must be non-negative")

    def times_s(self, channel: int) -> np.ndarray:
        return (self.start, self.stop)[channel] * TAG_RESOLUTION

    def __eq__(self, other):
        if not isinstance(other, TimeTagStream):
            return NotImplemented
        return (
            np.array_equal(self.start, other.start)
            and np.array_equal(self.stop, other.stop)
            and self.labels == other.labels
            and self.duration == other.duration
        )


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def derived_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1, np.uint64)[0])


def quantize(t) -> np.ndarray:
    return np.rint(np.asarray(t, dtype=float) * _FS_PER_S) / _FS_PER_S


# --------------------------------------------------------------------------
# pair delay sampling
# --------------------------------------------------------------------------


class _Plan:
    """Proposal for mixture-rejection sampling of one regime's correlated density.

    The density is c1 [w_c G(tau) + w_s (G(tau - T) + G(tau + T)) + w_f G0] over
    the window.  Each comb family is proposed as peak n with probability
    ~ exp(-dw |n| tau_r) and offset v ~ (1 + a|v|) exp(-(a - dw)|v|), an exact
    Gamma(1)/Gamma(2) mixture; accepting with exp(-dw (|u| + |v| - |n| tau_r))
    restores the exact envelope.  With phase jitter, each candidate draws its
    own phase and is accepted with w(phase) / w_max for its family.
    """

    def __init__(self, sim: SimConfig, src: SourceParams, det: DetectionParams,
                 cfg: InterferometerConfig):
        self.src, self.det, self.cfg = src, det, cfg
        self.sigma = sim.phase_jitter_sigma
        self.a = jitter_rate(det.t_d)
        self.b = self.a - src.delta_omega_opo
        if self.b <= 0:
            raise InvalidInputError("jitter kernel narrower than envelope is required")
        self.n_max = default_n_max(src, det)
        n = np.arange(-self.n_max, self.n_max + 1)
        pn = np.exp(-src.delta_omega_opo * src.tau_r * np.abs(n))
        self.peak_cdf = np.cumsum(pn) / pn.sum()
        self.p_gamma1 = self.b / (self.a + self.b)
        comb_mass = pn.sum() * 2.0 * (1.0 / self.b + self.a / self.b**2)

        if self.sigma > 0:
            # every family weight peaks at theta = 0
            w = phase_weights(cfg.regime, 0.0, src.delta)
        else:
            w = phase_weights(cfg.regime, cfg.theta, src.delta)
        masses = np.array([w.center * comb_mass, w.shifted * 2.0 * comb_mass,
                           w.flat * det.span])
        self.w_prop = w
        self.family_p = masses / masses.sum() if masses.sum() > 0 else masses

        expected = phase_weights(cfg.regime, cfg.theta, src.delta, self.sigma)
        self.empty = expected.total <= 0.0

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        out: List[np.ndarray] = []
        got = 0
        lo, hi = self.det.window
        tau_r, dw = self.src.tau_r, self.src.delta_omega_opo
        T = self.cfg.delay
        while got < n:
            m = max(2 * (n - got) + 256, 1024)
            family = np.searchsorted(np.cumsum(self.family_p), rng.random(m), side="right")
            family = np.minimum(family, 2)
            keep = np.ones(m, dtype=bool)
            if self.sigma > 0:
                phi = self.cfg.theta + self.sigma * rng.standard_normal(m)
                ratio = np.ones(m)
                for f, wmax in enumerate(self.w_prop):
                    sel = family == f
                    if wmax > 0 and np.any(sel):
                        wf = _family_weight(self.cfg.regime, f, phi[sel], self.src.delta)
                        ratio[sel] = wf / wmax
                keep &= rng.random(m) < ratio
            peak = np.searchsorted(self.peak_cdf, rng.random(m), side="right") - self.n_max
            shape = np.where(rng.random(m) < self.p_gamma1, 1.0, 2.0)
            r = rng.standard_gamma(shape) / self.b
            v = np.where(rng.random(m) < 0.5, -r, r)
            u = peak * tau_r + v
            env = np.exp(-dw * (np.abs(u) + r - np.abs(peak) * tau_r))
            shift = np.where(rng.random(m) < 0.5, -T, T) * (family == 1)
            flat = lo + (hi - lo) * rng.random(m)
            accept_env = rng.random(m) < env
            tau = np.where(family == 2, flat, self.det.tau_0 + shift + u)
            keep &= (family == 2) | accept_env
            keep &= (tau >= lo) & (tau < hi)
            acc = tau[keep]
            out.append(acc[: n - got])
            got += min(acc.size, n - got)
        return np.concatenate(out) if out else np.empty(0)


def _family_weight(regime: Regime, family: int, phi: np.ndarray, delta: float) -> np.ndarray:
    c = np.cos(phi)
    if regime is Regime.UNBALANCED:
        return 4.0 * c * c if family == 0 else np.ones_like(phi)
    if regime is Regime.PERFECT_BALANCED:
        f = (c + 1.0) ** 2 / 4.0
        return (1.0 + delta) * f if family == 0 else delta * f
    if family == 0:
        return (c * c + (1.0 + 3.0 * delta) / 2.0) / 4.0
    return np.full_like(phi, delta / 4.0)


def _sample_block(plan: _Plan, sim: SimConfig, block: int, size: int,
                  with_flags: bool):
    rng = _rng(sim.seed, _STREAM_SAMPLER, block)
    lo, hi = plan.det.window
    if plan.empty:
        is_acc = np.ones(size, dtype=bool)
    else:
        is_acc = rng.random(size) < sim.accidental_fraction
    n_acc = int(is_acc.sum())
    out = np.empty(size)
    out[is_acc] = lo + (hi - lo) * rng.random(n_acc)
    out[~is_acc] = plan.sample(size - n_acc, rng)
    out = quantize(out)
    # rounding may land on the open right edge
    out[out >= hi] = quantize(hi) - TAG_RESOLUTION
    return (out, is_acc) if with_flags else out


def sample_pair_delays(sim: SimConfig, src: SourceParams, det: DetectionParams,
                       cfg: InterferometerConfig, chunks: int = 1, workers: int = 1,
                       return_flags: bool = False):
    """Draw ``sim.n_pairs`` start-stop delays (s) from the regime's correlation.

    Correlated events follow Gamma(tau) - C2 over ``det.window``; each event is
    instead a uniform accidental with probability ``accidental_fraction``.  If
    the correlated density vanishes, every event is accidental.

    Parameters
    ----------
    chunks, workers : int
        Blocks are grouped into ``chunks`` contiguous jobs executed on
        ``workers`` threads.  Neither affects the result.
    return_flags : bool
        Also return a boolean mask marking accidental events.

    Raises
    ------
    EmptyDensityError
        The correlated density is zero and ``accidental_fraction`` is 0.
    """
    plan = _Plan(sim, src, det, cfg)
    if plan.empty:
        if sim.accidental_fraction == 0.0:
            raise EmptyDensityError(
                f"{cfg.regime.value} correlation vanishes at theta={cfg.theta:.6g} "
                "and there is no accidental floor"
            )
        warnings.warn("correlated density is zero; all events are accidentals",
                      RuntimeWarning, stacklevel=2)
    n_blocks = -(-sim.n_pairs // BLOCK_SIZE)
    sizes = [min(BLOCK_SIZE, sim.n_pairs - b * BLOCK_SIZE) for b in range(n_blocks)]
    chunks = max(1, min(int(chunks), n_blocks))
    bounds = np.linspace(0, n_blocks, chunks + 1).astype(int)

    def run(c):
        return [_sample_block(plan, sim, b, sizes[b], return_flags)
                for b in range(bounds[c], bounds[c + 1])]

    if workers > 1 and chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = [p for chunk in pool.map(run, range(chunks)) for p in chunk]
    else:
        parts = [p for c in range(chunks) for p in run(c)]
    if return_flags:
        return (np.concatenate([p[0] for p in parts]),
                np.concatenate([p[1] for p in parts]))
    return np.concatenate(parts)


# --------------------------------------------------------------------------
# time tags
# --------------------------------------------------------------------------


def emit_timetags(delays, sim: SimConfig, det: DetectionParams) -> TimeTagStream:
    """Place pair start tags as a Poisson process at ``sim.pair_rate``; the stop
    tag of each pair follows its start by the pair's delay."""
    delays = np.asarray(delays, dtype=float)
    if delays.size and det.span * sim.pair_rate > 1.0:
        warnings.warn("mean pair spacing is shorter than the histogram window; "
                      "start-stop pairing will pile up", RuntimeWarning, stacklevel=2)
    rng = _rng(sim.seed, _STREAM_TIMETAGS)
    gaps = np.maximum(np.rint(rng.exponential(_FS_PER_S / sim.pair_rate, delays.size)), 1)
    d_fs = np.rint(delays * _FS_PER_S).astype(np.int64)
    offset = max(0, -int(d_fs.min())) if d_fs.size else 0
    start = np.cumsum(gaps.astype(np.int64)) + offset
    stop = start + d_fs
    return TimeTagStream(start, stop)


def stream_delays(stream: TimeTagStream, window: Tuple[float, float]) -> np.ndarray:
    """All stop - start differences (s) falling in ``[window[0], window[1])``,
    ordered by start tag."""
    lo = int(math.ceil(window[0] * _FS_PER_S - 1e-6))
    hi = int(math.ceil(window[1] * _FS_PER_S - 1e-6))
    j_lo = np.searchsorted(stream.stop, stream.start + lo, side="left")
    j_hi = np.searchsorted(stream.stop, stream.start + hi, side="left")
    n = j_hi - j_lo
    owner = np.repeat(np.arange(stream.start.size), n)
    first = np.repeat(j_lo, n)
    rank = np.arange(owner.size) - np.repeat(np.cumsum(n) - n, n)
    diff = stream.stop[first + rank] - stream.start[owner]
    return diff / _FS_PER_S


# --------------------------------------------------------------------------
# histogramming
# --------------------------------------------------------------------------


def histogram(data: Union[np.ndarray, Sequence[float], TimeTagStream],
              det: DetectionParams, config: Optional[dict] = None) -> CoincidenceHistogram:
    """Bin delays (or a time-tag stream's start-stop differences) into
    left-closed, right-open bins of ``det.bin_width`` over ``det.window``."""
    if isinstance(data, TimeTagStream):
        delays = stream_delays(data, det.window)
    else:
        delays = np.asarray(data, dtype=float).ravel()
    edges = det.bin_edges()
    idx = np.searchsorted(edges, delays, side="right") - 1
    inside = (idx >= 0) & (idx < edges.size - 1)
    counts = np.bincount(idx[inside], minlength=edges.size - 1).astype(np.int64)
    return CoincidenceHistogram(edges, counts, int(delays.size),
                                int(delays.size - inside.sum()), dict(config or {}))


def expected_counts(edges, sim: SimConfig, src: SourceParams, det: DetectionParams,
                    cfg: InterferometerConfig, n_events: Optional[float] = None) -> np.ndarray:
    """Mean bin counts of :func:`sample_pair_delays` output, from the phase-averaged
    closed form (independent of the sampler's per-event rejection)."""
    edges = np.asarray(edges, dtype=float)
    n = sim.n_pairs if n_events is None else n_events
    f = sim.accidental_fraction
    w = phase_weights(cfg.regime, cfg.theta, src.delta, sim.phase_jitter_sigma)
    T = cfg.delay
    center_i, shifted_i, width = family_integrals(det.window, cfg, src, det)
    total = w.center * center_i + w.shifted * shifted_i + w.flat * width
    uniform = np.diff(edges) / width
    if total <= 0:
        return n * uniform

    def density(t):
        out = w.center * gamma_ave(t, src, det) + w.flat
        if w.shifted:
            out = out + w.shifted * (gamma_ave(t - T, src, det) + gamma_ave(t + T, src, det))
        return out

    return n * ((1.0 - f) * integrate_bins(density, edges) / total + f * uniform)


# --------------------------------------------------------------------------
# phase sweeps
# --------------------------------------------------------------------------


def simulate_sweep(theta_grid: Sequence[float], sim: SimConfig, src: SourceParams,
                   det: DetectionParams, cfg: InterferometerConfig
                   ) -> List[Tuple[float, CoincidenceHistogram]]:
    """Histograms for each locked phase with count rates following the phase.

    ``sim.n_pairs`` is the mean number of events at the brightest phase of the
    grid and ``accidental_fraction`` the accidental share there; the
    accidental rate itself is phase independent.  Per-phase event numbers are
    Poisson distributed.
    """
    thetas = np.asarray(theta_grid, dtype=float).ravel()
    if thetas.size == 0:
        raise InvalidInputError("theta grid is empty")
    center_i, shifted_i, width = family_integrals(det.window, cfg, src, det)
    signal = np.array([
        (lambda w: w.center * center_i + w.shifted * shifted_i + w.flat * width)(
            phase_weights(cfg.regime, th, src.delta, sim.phase_jitter_sigma))
        for th in thetas
    ])
    s_max = signal.max()
    f = sim.accidental_fraction
    acc = f / (1.0 - f) * s_max
    if s_max + acc <= 0:
        raise EmptyDensityError("no correlated signal at any phase and no accidental floor")
    out = []
    for i, th in enumerate(thetas):
        rng = _rng(sim.seed, _STREAM_SWEEP, i)
        n = int(rng.poisson(sim.n_pairs * (signal[i] + acc) / (s_max + acc)))
        cfg_i = InterferometerConfig(cfg.delta_l, th, cfg.regime, cfg.c1, cfg.c2)
        snap = {"theta": float(th)}
        if n == 0:
            out.append((float(th), histogram(np.empty(0), det, snap)))
            continue
        f_i = acc / (signal[i] + acc) if signal[i] + acc > 0 else 0.0
        sim_i = SimConfig(n, min(f_i, np.nextafter(1.0, 0.0)),
                          derived_seed(sim.seed, _STREAM_SWEEP, i),
                          sim.phase_jitter_sigma, sim.pair_rate)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            delays = sample_pair_delays(sim_i, src, det, cfg_i)
        out.append((float(th), histogram(delays, det, snap)))
    return out
