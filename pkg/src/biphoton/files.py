"""Text file formats: histogram CSV, correlation-curve CSV, time tags, sweeps, fit reports.

Times are written in ns.  Values on the femtosecond lattice are written as
exact decimals, and metadata floats use ``repr``, so every file reads back to
an equal in-memory object.
"""

from __future__ import annotations

import json
import math
import sys
from decimal import Decimal
from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union

import numpy as np

from .errors import InvalidInputError
from .model import CorrelationCurve
from .sim import CoincidenceHistogram, TimeTagStream

PathLike = Union[str, Path]

HIST_HEADER = "# tau_ns,counts"
CURVE_HEADER = "# tau_ns,gamma"
TAGS_HEADER = "# channel,time_ns"
SWEEP_HEADER = "# theta_rad,value"


class FormatError(InvalidInputError):
    """A data file does not follow the expected layout."""


def fs_to_ns(fs: int) -> str:
    fs = int(fs)
    sign = "-" if fs < 0 else ""
    q, r = divmod(abs(fs), 10**6)
    return f"{sign}{q}.{r:06d}"


def ns_to_fs(text: str) -> int:
    value = Decimal(text.strip()).scaleb(6)
    if value != value.to_integral_value():
        raise FormatError(f"time {text!r} is finer than 1 fs")
    return int(value)


def _split(path: PathLike, header: str) -> Tuple[Dict[str, str], List[str]]:
    meta: Dict[str, str] = {}
    rows: List[str] = []
    seen_header = False
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if line.replace(" ", "") == header.replace(" ", ""):
                    seen_header = True
                elif "=" in body:
                    key, _, val = body.partition("=")
                    meta[key.strip()] = val.strip()
                continue
            rows.append(line)
    if not seen_header:
        raise FormatError(f"{path}: missing header line {header!r}")
    return meta, rows


def _write(path: PathLike, lines: Iterable[str]):
    text = "\n".join(lines) + "\n"
    if str(path) == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# --------------------------------------------------------------------------
# histograms
# --------------------------------------------------------------------------


def _uniform_step(edges: np.ndarray):
    """Bin width that regenerates ``edges`` as ``lo + w * arange(n + 1)``, or None."""
    n = edges.size - 1
    d = float(edges[1] - edges[0])
    for w in (float(f"{d:.12g}"), d, float((edges[-1] - edges[0]) / n)):
        if np.array_equal(edges, edges[0] + w * np.arange(n + 1)):
            return w
    return None


def histogram_lines(hist: CoincidenceHistogram) -> List[str]:
    edges = hist.bin_edges
    lines = ["# biphoton coincidence histogram"]
    w = _uniform_step(edges)
    if w is not None:
        lines.append(f"# edges_uniform_s = {float(edges[0])!r}, {w!r}, {edges.size - 1}")
    else:
        lines.append("# edges_s = " + ", ".join(repr(float(e)) for e in edges))
    lines.append(f"# total_events = {hist.total_events}")
    lines.append(f"# dropped = {hist.dropped}")
    lines.append(f"# config = {json.dumps(hist.config, sort_keys=True)}")
    lines.append(HIST_HEADER)
    integer = np.issubdtype(np.asarray(hist.counts).dtype, np.integer)
    for c, n in zip(hist.centers, hist.counts):
        count = str(int(n)) if integer else repr(float(n))
        lines.append(f"{c * 1e9:.6f},{count}")
    return lines


def write_histogram(path: PathLike, hist: CoincidenceHistogram):
    _write(path, histogram_lines(hist))


def read_histogram(path: PathLike) -> CoincidenceHistogram:
    meta, rows = _split(path, HIST_HEADER)
    try:
        cols = [r.split(",") for r in rows]
        centers_ns = np.array([float(c[0]) for c in cols])
        raw = [c[1].strip() for c in cols]
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: bad data row ({exc})") from None
    if all(t.lstrip("-").isdigit() for t in raw):
        counts = np.array([int(t) for t in raw], dtype=np.int64)
    else:
        counts = np.array([float(t) for t in raw])
    if "edges_uniform_s" in meta:
        lo, w, n = (s.strip() for s in meta["edges_uniform_s"].split(","))
        edges = float(lo) + float(w) * np.arange(int(n) + 1)
    elif "edges_s" in meta:
        edges = np.array([float(s) for s in meta["edges_s"].split(",")])
    else:
        # bare two-column file: assume uniform bins around the centres
        if centers_ns.size < 2:
            raise FormatError(f"{path}: cannot infer bins from fewer than two rows")
        w = float(np.median(np.diff(centers_ns))) * 1e-9
        edges = centers_ns[0] * 1e-9 - w / 2 + w * np.arange(centers_ns.size + 1)
    if edges.size != counts.size + 1:
        raise FormatError(f"{path}: {counts.size} rows for {edges.size - 1} bins")
    total = int(meta.get("total_events", int(np.sum(counts))))
    dropped = int(meta.get("dropped", 0))
    config = json.loads(meta["config"]) if "config" in meta else {}
    return CoincidenceHistogram(edges, counts, total, dropped, config)


# --------------------------------------------------------------------------
# model curves
# --------------------------------------------------------------------------


def write_curve(path: PathLike, curve: CorrelationCurve):
    fs = np.rint(curve.tau_grid * 1e15).astype(np.int64)
    if not np.array_equal(fs * 1e-15, curve.tau_grid):
        raise InvalidInputError("curve grid is not on the femtosecond lattice")
    lines = ["# biphoton correlation curve", CURVE_HEADER]
    lines += [f"{fs_to_ns(t)},{float(v)!r}" for t, v in zip(fs, curve.values)]
    _write(path, lines)


def read_curve(path: PathLike) -> CorrelationCurve:
    _, rows = _split(path, CURVE_HEADER)
    try:
        fs = np.array([ns_to_fs(r.split(",")[0]) for r in rows], dtype=np.int64)
        vals = np.array([float(r.split(",")[1]) for r in rows])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: bad data row ({exc})") from None
    return CorrelationCurve(fs * 1e-15, vals)


# --------------------------------------------------------------------------
# time tags
# --------------------------------------------------------------------------


def write_timetags(path: PathLike, stream: TimeTagStream):
    ch = np.concatenate([np.zeros(stream.start.size, np.int8), np.ones(stream.stop.size, np.int8)])
    t = np.concatenate([stream.start, stream.stop])
    order = np.lexsort((ch, t))
    lines = [
        "# biphoton time tags",
        f"# labels = {stream.labels[0]},{stream.labels[1]}",
        f"# duration_ns = {fs_to_ns(stream.duration)}",
        TAGS_HEADER,
    ]
    lines += [f"{stream.labels[ch[i]]},{fs_to_ns(t[i])}" for i in order]
    _write(path, lines)


def read_timetags(path: PathLike) -> TimeTagStream:
    meta, rows = _split(path, TAGS_HEADER)
    labels = tuple(s.strip() for s in meta.get("labels", "start,stop").split(","))
    if len(labels) != 2:
        raise FormatError(f"{path}: need exactly two channel labels")
    chans: Tuple[List[int], List[int]] = ([], [])
    for r in rows:
        name, _, t = r.partition(",")
        name = name.strip()
        if name not in labels:
            raise FormatError(f"{path}: unknown channel {name!r}")
        chans[labels.index(name)].append(ns_to_fs(t))
    duration = ns_to_fs(meta["duration_ns"]) if "duration_ns" in meta else 0
    return TimeTagStream(np.array(chans[0], np.int64), np.array(chans[1], np.int64),
                         labels, duration)


# --------------------------------------------------------------------------
# sweeps and fit results
# --------------------------------------------------------------------------


def write_sweep(path: PathLike, sweep: np.ndarray, vis: float = math.nan):
    lines = ["# biphoton phase sweep", f"# visibility = {float(vis)!r}", SWEEP_HEADER]
    lines += [f"{float(th)!r},{float(v)!r}" for th, v in np.asarray(sweep)]
    _write(path, lines)


def read_sweep(path: PathLike) -> np.ndarray:
    _, rows = _split(path, SWEEP_HEADER)
    try:
        return np.array([[float(x) for x in r.split(",")] for r in rows]).reshape(-1, 2)
    except ValueError as exc:
        raise FormatError(f"{path}: bad data row ({exc})") from None


def write_kv(path: PathLike, values: Dict[str, object]):
    lines = []
    for k, v in values.items():
        lines.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
    _write(path, lines)


def read_kv(path: PathLike) -> Dict[str, object]:
    out: Dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise FormatError(f"{path}: expected key = value, got {line.strip()!r}")
            val = val.strip()
            for conv in (int, float):
                try:
                    out[key.strip()] = conv(val)
                    break
                except ValueError:
                    continue
            else:
                out[key.strip()] = val
    return out
