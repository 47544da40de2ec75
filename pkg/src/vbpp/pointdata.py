"""Observation domains, event sets and the inhomogeneous-Poisson log-likelihood."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class PointDataError(ValueError):
    """Raised for malformed event files or points outside the domain."""


@dataclass(frozen=True)
class Domain:
    """Hyper-rectangular observation window in R^R.

    Parameters
    ----------
    lo, hi : array-like, shape (R,)
        Per-dimension lower / upper boundaries.  hi[r] > lo[r] is required
        in every dimension.
    """

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise PointDataError("domain bounds must be 1-D arrays of equal length")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise PointDataError("domain bounds must be finite")
        if not (hi > lo).all():
            bad = int(np.argmin(hi - lo))
            raise PointDataError(f"domain has non-positive extent in dimension {bad}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        self.lo.setflags(write=False)
        self.hi.setflags(write=False)

    @property
    def dims(self) -> int:
        return self.lo.shape[0]

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of rows lying inside the closed hyper-rectangle."""
        pts = np.atleast_2d(points)
        return np.logical_and(pts >= self.lo, pts <= self.hi).all(axis=1)


@dataclass(frozen=True)
class EventSet:
    """A set of N observed points, one per row.  N = 0 is valid."""

    points: np.ndarray = field(default_factory=lambda: np.empty((0, 1)))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise PointDataError("event points must form an N x R matrix")
        if pts.size and not np.isfinite(pts).all():
            raise PointDataError("event coordinates must be finite")
        object.__setattr__(self, "points", pts)
        self.points.setflags(write=False)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dims(self) -> int:
        return self.points.shape[1]


def domain_measure(d: Domain) -> float:
    """Lebesgue measure |T| of the hyper-rectangle: the product of extents."""
    return float(np.prod(d.extent))


def _check_in_domain(points: np.ndarray, d: Domain, origin: str = "point") -> None:
    pts = np.atleast_2d(points)
    below = pts < d.lo
    above = pts > d.hi
    bad = below | above
    if bad.any():
        i, r = np.argwhere(bad)[0]
        raise PointDataError(
            f"{origin} {i}: coordinate {r} = {pts[i, r]:g} outside "
            f"[{d.lo[r]:g}, {d.hi[r]:g}]"
        )


def load_events(path, d: Domain) -> EventSet:
    """Load events from a CSV file, one point per row, R comma-separated columns.

    Whitespace around fields is trimmed and a single non-numeric header row is
    skipped.  Every point must lie inside ``d`` (boundaries inclusive).
    """
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = [f.strip() for f in line.split(",")]
            try:
                vals = [float(f) for f in fields]
            except ValueError:
                if lineno == 1:
                    continue  # header row
                raise PointDataError(f"{path}: malformed row {lineno}: {line!r}") from None
            if len(vals) != d.dims:
                raise PointDataError(
                    f"{path}: row {lineno} has {len(vals)} columns, expected {d.dims}"
                )
            rows.append(vals)
    pts = np.asarray(rows, dtype=float) if rows else np.empty((0, d.dims))
    if pts.size:
        _check_in_domain(pts, d, origin=f"{path}: row")
    return EventSet(pts)


def save_events(events: EventSet, path) -> None:
    """Write an event set as bare CSV (no header), round-trippable by load_events."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in events.points:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def poisson_log_likelihood(log_rates_at_events, integrated_rate: float) -> float:
    """Inhomogeneous-Poisson log-density of the observed events.

    log p(D | lambda) = -integral(lambda) + sum_n log lambda(x_n), where the
    caller supplies the integral of the rate over the domain and the log-rates
    at the events.
    """
    log_rates = np.asarray(log_rates_at_events, dtype=float)
    if not np.isfinite(integrated_rate) or integrated_rate < 0:
        raise PointDataError(f"integrated rate must be finite and >= 0, got {integrated_rate}")
    if log_rates.size and not np.isfinite(log_rates).all():
        raise PointDataError("log rates at events must be finite")
    return float(-integrated_rate + log_rates.sum())


def coal_style_dataset() -> tuple[EventSet, Domain]:
    """Bundled 1-D example: 190 event times on the window [1851, 1962].

    A synthetic record with a smoothly declining rate, shipped in-repo so the
    examples and evaluation scripts run without any download step.
    """
    from importlib.resources import files

    d = Domain([1851.0], [1962.0])
    with files("vbpp.data").joinpath("coal_style.csv").open("r") as fh:
        pts = np.array([float(line) for line in fh if not line[:1].isalpha()])
    return EventSet(pts[:, None]), d


def split_events(events: EventSet, p: float, seed: int) -> tuple[EventSet, EventSet]:
    """Allocate each event independently to (train, test) with P(train) = p.

    Deterministic in ``seed``; used for held-out evaluation protocols.
    """
    rng = np.random.Generator(np.random.Philox(key=[seed, 0x5BB1]))
    mask = rng.random(events.n) < p
    return EventSet(events.points[mask]), EventSet(events.points[~mask])
