"""Stopped norms, first hitting times and ladder diagnostics on trajectory records.

For a ladder rung ``j`` the spaces are ``U = W^{j-1,2}``, ``H = W^{j,2}``,
``V = W^{j+1,2}``, and

    ||u||_{UH,s}^2 = sup_{r<=s} ||u_r||_U^2 + int_0^s ||u_r||_H^2 dr
    ||u||_{HV,s}^2 = sup_{r<=s} ||u_r||_H^2 + int_0^s ||u_r||_V^2 dr.

On the time grid the sup is a running maximum and the integral a left-endpoint
Riemann sum (trapezoid on request). Between grid points the series is linearly
interpolated, which keeps it continuous and non-decreasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from gspde.integrator import TrajectoryRecord

QUADRATURES = ("left", "trapezoid")

#: Slack on "s beyond the record" comparisons, relative to dt.
_TIME_EPS = 1e-9


@dataclass(frozen=True)
class LadderSpec:
    j: int

    def __post_init__(self):
        if int(self.j) != self.j or self.j < 1:
            raise ValueError(f"ladder index j must be an integer >= 1, got {self.j!r}")

    @property
    def u_order(self) -> int:
        return self.j - 1

    @property
    def h_order(self) -> int:
        return self.j

    @property
    def v_order(self) -> int:
        return self.j + 1

    def up(self) -> "LadderSpec":
        return LadderSpec(self.j + 1)


@dataclass(frozen=True)
class HittingTimeResult:
    tau: float
    crossed: bool
    threshold: float
    crossing_step: int | None
    uh_at_tau: float


@dataclass(frozen=True)
class RungReport:
    j: int
    max_uh: float
    finite: bool
    divergence_time: float | None


@dataclass(frozen=True)
class BlowupReport:
    rungs: tuple[RungReport, ...]
    stop_time: float
    verdict: str  # "regular" | "numerical divergence" | "ladder violation"
    violations: tuple[str, ...] = field(default_factory=tuple)

    @property
    def ladder_ok(self) -> bool:
        return self.verdict != "ladder violation"


# ---------------------------------------------------------------------------
# Stopped norms
# ---------------------------------------------------------------------------


def stopped_series(
    times: np.ndarray, lower: np.ndarray, upper: np.ndarray, quadrature: str = "left"
) -> np.ndarray:
    """Grid values of ``sup_{r<=t_i} lower(r) + int_0^{t_i} upper(r) dr``."""
    if quadrature not in QUADRATURES:
        raise ValueError(f"quadrature must be one of {QUADRATURES}, got {quadrature!r}")
    times = np.asarray(times, dtype=np.float64)
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    sup = np.maximum.accumulate(lower)
    dt = np.diff(times)
    if quadrature == "left":
        inc = upper[:-1] * dt
    else:
        inc = 0.5 * (upper[:-1] + upper[1:]) * dt
    integral = np.concatenate(([0.0], np.cumsum(inc)))
    return sup + integral


def _orders_available(rec: TrajectoryRecord, *orders: int):
    if max(orders) > rec.m_max:
        raise ValueError(f"record stores orders 0..{rec.m_max}, need {max(orders)}")


def uh_series(rec: TrajectoryRecord, ladder: LadderSpec, quadrature: str = "left") -> np.ndarray:
    _orders_available(rec, ladder.u_order, ladder.h_order)
    ns = rec.norm_series
    return stopped_series(rec.times, ns[:, ladder.u_order], ns[:, ladder.h_order], quadrature)


def hv_series(rec: TrajectoryRecord, ladder: LadderSpec, quadrature: str = "left") -> np.ndarray:
    return uh_series(rec, ladder.up(), quadrature)


def _evaluate(times: np.ndarray, series: np.ndarray, s: float) -> float:
    if s < -_TIME_EPS:
        raise ValueError(f"time {s} is negative")
    dt = times[1] - times[0] if len(times) > 1 else 1.0
    if s > times[-1] + _TIME_EPS * dt:
        raise ValueError(f"time {s} beyond record horizon {times[-1]}")
    i = int(np.searchsorted(times, s, side="right")) - 1
    i = min(max(i, 0), len(times) - 1)
    if i == len(times) - 1 or s <= times[i]:
        return float(series[i])
    a, b = series[i], series[i + 1]
    w = (s - times[i]) / (times[i + 1] - times[i])
    if not np.isfinite(b):
        return float(a) if w == 0.0 else float(b)
    return float(a + (b - a) * w)


def uh_norm_sq(rec: TrajectoryRecord, ladder: LadderSpec, s: float, quadrature: str = "left") -> float:
    """``||u||_{UH,s}^2`` on the record, non-decreasing in ``s``."""
    return _evaluate(rec.times, uh_series(rec, ladder, quadrature), s)


def hv_norm_sq(rec: TrajectoryRecord, ladder: LadderSpec, s: float, quadrature: str = "left") -> float:
    """``||u||_{HV,s}^2``; equals ``uh_norm_sq`` one rung up."""
    return _evaluate(rec.times, hv_series(rec, ladder, quadrature), s)


# ---------------------------------------------------------------------------
# Hitting times
# ---------------------------------------------------------------------------


def first_crossing(
    times: np.ndarray, series: np.ndarray, threshold: float, t: float
) -> HittingTimeResult:
    """``t ^ inf{s : series(s) >= threshold}`` with linear interpolation between steps."""
    dt = times[1] - times[0] if len(times) > 1 else 1.0
    if t > times[-1] + _TIME_EPS * dt:
        raise ValueError(f"t={t} beyond record horizon {times[-1]}")
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    hit = np.nonzero(series >= threshold)[0]
    if hit.size:
        i = int(hit[0])
        if i == 0:
            tau = float(times[0])
        elif not np.isfinite(series[i]):
            tau = float(times[i])
        else:
            a, b = series[i - 1], series[i]
            tau = float(times[i - 1] + (threshold - a) / (b - a) * (times[i] - times[i - 1]))
            tau = min(max(tau, float(times[i - 1])), float(times[i]))
        if tau <= t:
            return HittingTimeResult(tau, True, threshold, i, _evaluate(times, series, tau))
    t = min(t, float(times[-1]))
    return HittingTimeResult(t, False, threshold, None, _evaluate(times, series, t))


def hitting_time(
    rec: TrajectoryRecord,
    ladder: LadderSpec,
    M: float,
    t: float,
    quadrature: str = "left",
) -> HittingTimeResult:
    """First time the running UH norm reaches ``M + ||u_0||_U^2``, capped at ``t``."""
    if not M > 1:
        raise ValueError(f"M must exceed 1, got {M}")
    threshold = M + float(rec.norm_series[0, ladder.u_order])
    return first_crossing(rec.times, uh_series(rec, ladder, quadrature), threshold, t)


def absolute_hitting_time(
    rec: TrajectoryRecord, ladder: LadderSpec, R: float, t: float, quadrature: str = "left"
) -> HittingTimeResult:
    """First time the running UH norm reaches the fixed level ``R``, capped at ``t``."""
    if not R > 0:
        raise ValueError(f"R must be positive, got {R}")
    return first_crossing(rec.times, uh_series(rec, ladder, quadrature), R, t)


# ---------------------------------------------------------------------------
# Ladder scan
# ---------------------------------------------------------------------------


def blowup_scan(
    records: TrajectoryRecord | Sequence[TrajectoryRecord],
    rungs: Sequence[LadderSpec],
    stop_time: float | None = None,
    ceiling: float = np.inf,
    quadrature: str = "left",
) -> BlowupReport:
    """Finiteness of the UH norm on each rung up to ``stop_time`` and the ladder verdict.

    Higher norms dominate lower ones, so divergence at rung ``j`` must show at every
    higher rung; finiteness at rung ``j`` is expected to carry over to ``j + 1``.
    Any mixed outcome is reported as a ladder violation (a discretization artefact,
    not evidence about the continuous equation). ``ceiling`` treats very large
    finite values as divergent.
    """
    rungs = list(rungs)
    if not rungs:
        raise ValueError("at least one rung is required")
    js = [r.j for r in rungs]
    if js != list(range(js[0], js[0] + len(js))):
        raise ValueError(f"rungs must be consecutive and ascending, got {js}")
    if isinstance(records, TrajectoryRecord):
        records = [records] * len(rungs)
    records = list(records)
    if len(records) != len(rungs):
        raise ValueError("need one record per rung")
    ref = records[0]
    for r in records[1:]:
        if r.seed != ref.seed or r.dt != ref.dt or r.horizon != ref.horizon:
            raise ValueError("records must share seed, dt and horizon")
    stop = ref.horizon if stop_time is None else float(stop_time)

    reports = []
    for rec, rung in zip(records, rungs):
        series = uh_series(rec, rung, quadrature)
        window = rec.times <= stop + _TIME_EPS * rec.dt
        vals = series[window]
        bad = ~np.isfinite(vals) | (vals > ceiling)
        finite = not bool(np.any(bad))
        div_time = None if finite else float(rec.times[window][int(np.argmax(bad))])
        good = vals[~bad]
        reports.append(RungReport(rung.j, float(good.max()) if good.size else float("nan"), finite, div_time))

    violations = []
    for lo, hi in zip(reports, reports[1:]):
        if lo.finite and not hi.finite:
            violations.append(f"rung {lo.j} finite but rung {hi.j} diverged at t={hi.divergence_time}")
        if not lo.finite and not hi.finite and hi.divergence_time > lo.divergence_time:
            violations.append(f"rung {hi.j} diverged after rung {lo.j}")
        if not lo.finite and hi.finite:
            violations.append(f"rung {lo.j} diverged but higher rung {hi.j} stayed finite")
    if violations:
        verdict = "ladder violation"
    elif all(r.finite for r in reports):
        verdict = "regular"
    else:
        verdict = "numerical divergence"
    return BlowupReport(tuple(reports), stop, verdict, tuple(violations))


# ---------------------------------------------------------------------------
# Equicontinuity
# ---------------------------------------------------------------------------


def equicontinuity_samples(
    records: Sequence[TrajectoryRecord],
    ladder: LadderSpec,
    M: float,
    t: float,
    theta: float,
    deltas: Sequence[float],
    quadrature: str = "left",
) -> np.ndarray:
    """Per-record increments ``||u||_{UH,(theta+d)^tau}^2 - ||u||_{UH,theta^tau}^2``, shape ``(records, deltas)``."""
    records = list(records)
    if not records:
        raise ValueError("empty record list")
    deltas = [float(d) for d in deltas]
    if any(d < 0 for d in deltas):
        raise ValueError("deltas must be non-negative")
    if theta < 0 or theta + max(deltas, default=0.0) > t + _TIME_EPS:
        raise ValueError(f"need 0 <= theta and theta + max(deltas) <= t (theta={theta}, t={t})")
    out = np.empty((len(records), len(deltas)))
    for r, rec in enumerate(records):
        series = uh_series(rec, ladder, quadrature)
        tau = hitting_time(rec, ladder, M, t, quadrature).tau
        base = _evaluate(rec.times, series, min(theta, tau))
        for c, d in enumerate(deltas):
            out[r, c] = _evaluate(rec.times, series, min(theta + d, tau)) - base
    return out


def equicontinuity_stat(
    records: Sequence[TrajectoryRecord],
    ladder: LadderSpec,
    M: float,
    t: float,
    theta: float,
    deltas: Sequence[float],
    quadrature: str = "left",
) -> np.ndarray:
    """Monte-Carlo mean of the stopped UH increment for each ``delta``."""
    return equicontinuity_samples(records, ladder, M, t, theta, deltas, quadrature).mean(axis=0)
