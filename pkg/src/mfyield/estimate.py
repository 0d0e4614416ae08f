"""Point and variance estimators, single-frame baselines and comparison metrics.

Sums over observations use :func:`math.fsum`, which is correctly rounded and
therefore independent of summation order; reordering frames, psus or units
leaves every result bit-identical.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from collections.abc import Hashable, Iterable, Mapping, Sequence
from dataclasses import dataclass, replace
from typing import Literal, Optional

from mfyield.design import DesignSpec, FrameSample, SampleDraw
from mfyield.frames import Population
from mfyield.weights import WeightMode, WeightTable, compute_weights, population_weights

WithinFactor = Literal["derived", "printed"]
"""``derived`` uses (1 - f2) on the within-psu term; ``printed`` uses (1 - f2**2)."""

HGEWY = 3660.0


class EstimationError(ValueError):
    """Raised when an estimator cannot be evaluated on its input."""


class VarianceUndefined(EstimationError):
    """Between-psu variance needs at least two sampled psus."""


@dataclass(frozen=True)
class PsuZ:
    psu_id: Hashable
    z: tuple[float, ...]
    zbar: float
    s2_w: float
    m: int
    M: int


@dataclass(frozen=True)
class ZStats:
    frame_id: int
    psus: tuple[PsuZ, ...]
    zbarbar: float
    s2_b: float
    n: int
    N: int

    @property
    def zbar(self) -> tuple[float, ...]:
        return tuple(p.zbar for p in self.psus)

    @property
    def s2_w(self) -> tuple[float, ...]:
        return tuple(p.s2_w for p in self.psus)


@dataclass(frozen=True)
class MfEstimate:
    mean: float
    var_est: float
    se: float


@dataclass(frozen=True)
class SfEstimate:
    mean: float
    s2_between: float
    s2_within: tuple[float, ...]
    var: float
    se: float
    negative: bool = False


def _within_factor(f2: float, within: WithinFactor) -> float:
    if within == "derived":
        return 1.0 - f2
    if within == "printed":
        return 1.0 - f2 * f2
    raise ValueError(f"unknown within factor {within!r}")


def _mean_square(values: Sequence[float], centre: float) -> float:
    if len(values) < 2:
        return 0.0
    return math.fsum((v - centre) ** 2 for v in values) / (len(values) - 1)


def _check_cover(sample: SampleDraw, weights: WeightTable) -> None:
    keys = {(a, i, u) for a, i, u, _ in sample.observations()}
    missing = keys - set(weights.entries)
    if missing:
        raise EstimationError(f"no weight for observations {sorted(map(str, missing))[:3]}")
    extra = set(weights.entries) - keys
    if extra:
        raise EstimationError(f"weights for {len(extra)} observations not in the sample")


def mf_mean(sample: SampleDraw, weights: WeightTable) -> float:
    """Weighted sum of every observation over every frame."""
    _check_cover(sample, weights)
    return _weighted_sum(sample, weights)


def _weighted_sum(sample: SampleDraw, weights: WeightTable) -> float:
    w = weights.entries
    return math.fsum(w[(a, i, u)] * y for a, i, u, y in sample.observations())


def zstats(sample: SampleDraw, weights: WeightTable, frame_id: int) -> ZStats:
    """Sample z = w*y statistics for one frame.

    The grand mean of the psu means is weighted by the m_i, i.e.
    ``sum(m_i * zbar_i) / sum(m_i)``.
    """
    fs = sample.frames[frame_id]
    w, yields = weights.entries, sample.yields
    psus = []
    for ps in fs.psus:
        z = tuple(w[(frame_id, ps.psu_id, uid)] * yields[uid] for uid in ps.unit_ids)
        zbar = math.fsum(z) / ps.m
        psus.append(PsuZ(ps.psu_id, z, zbar, _mean_square(z, zbar), ps.m, ps.M))
    if not psus:
        raise EstimationError(f"frame {frame_id} has no sampled psus")
    zbarbar = math.fsum(p.m * p.zbar for p in psus) / math.fsum(p.m for p in psus)
    s2_b = _mean_square([p.zbar for p in psus], zbarbar)
    return ZStats(frame_id, tuple(psus), zbarbar, s2_b, fs.n, fs.N)


def _frame_variance_term(fs: FrameSample, zs: ZStats, within: WithinFactor) -> float:
    between = fs.mbar * (1.0 - fs.f1) * zs.s2_b
    inner = math.fsum(_within_factor(p.m / p.M, within) * p.s2_w for p in zs.psus)
    return math.fsum([between, (fs.n / fs.N) * inner])


def mf_variance_est(
    sample: SampleDraw, weights: WeightTable, *, within: WithinFactor = "derived"
) -> float:
    """Sample-based variance estimate, summed frame by frame.

    Per frame: ``mbar*(1-f1)*s2_b + (n/N) * sum_i (1-f2_i) * s2_w_i``.  Psus
    with a single sampled ssu contribute zero within-psu variance.
    """
    _check_cover(sample, weights)
    return _variance_terms(sample, weights, within)


def _variance_terms(sample: SampleDraw, weights: WeightTable, within: WithinFactor) -> float:
    terms = []
    for frame_id in sample.frame_ids:
        fs = sample.frames[frame_id]
        if fs.n < 2:
            raise VarianceUndefined(
                f"frame {frame_id}: between-psu variance undefined with n={fs.n} sampled psus"
            )
        terms.append(_frame_variance_term(fs, zstats(sample, weights, frame_id), within))
    return math.fsum(terms)


def mf_estimate(sample: SampleDraw, weights: WeightTable, *, within: WithinFactor = "derived") -> MfEstimate:
    _check_cover(sample, weights)
    mean = _weighted_sum(sample, weights)
    var = _variance_terms(sample, weights, within)
    return MfEstimate(mean, var, math.sqrt(var))


def population_zstats(population: Population, frame_id: int, weights: Mapping[Hashable, float]) -> ZStats:
    frame = population.frame(frame_id)
    psus = []
    for psu in frame.psus:
        if len(psu.ssu_ids) != psu.M:
            raise EstimationError(f"frame {frame_id}, psu {psu.psu_id!r} is not fully enumerated")
        z = tuple(weights[uid] * population.yield_of(uid) for uid in psu.ssu_ids)
        zbar = math.fsum(z) / psu.M
        psus.append(PsuZ(psu.psu_id, z, zbar, _mean_square(z, zbar), psu.M, psu.M))
    zbarbar = math.fsum(p.M * p.zbar for p in psus) / frame.M0
    s2_b = _mean_square([p.zbar for p in psus], zbarbar)
    return ZStats(frame_id, tuple(psus), zbarbar, s2_b, frame.N, frame.N)


def mf_variance_population(
    population: Population,
    design: DesignSpec,
    weights: Optional[Mapping[Hashable, float]] = None,
    *,
    within: WithinFactor = "derived",
    mode: WeightMode = "star",
) -> float:
    """Design variance from full-population values, frame by frame.

    ``mbar*(1-f1)*S2_b + (n/N) * sum_{i=1..N} (1-f2_i) * S2_w_i`` with z = w*Y.
    ``mbar`` is the average design m over all psus of the frame.
    """
    design.validate(population)
    if weights is None:
        weights = population_weights(population, design, mode=mode)
    terms = []
    for frame_id in sorted(design.frames):
        frame = population.frame(frame_id)
        fd = design[frame_id]
        zs = population_zstats(population, frame_id, weights)
        ms = [fd.m_for(frame, k) for k in range(frame.N)]
        mbar = math.fsum(ms) / frame.N
        between = mbar * (1.0 - fd.n / frame.N) * zs.s2_b
        inner = math.fsum(
            _within_factor(m / p.M, within) * p.s2_w for m, p in zip(ms, zs.psus)
        )
        terms.append(math.fsum([between, (fd.n / frame.N) * inner]))
    return math.fsum(terms)


# -- conventional single-frame two-stage estimator ---------------------------------


@dataclass(frozen=True)
class PsuSummary:
    M: int
    m: int
    ybar: float
    s2w: float = 0.0


@dataclass(frozen=True)
class FrameSummary:
    """Summary statistics of one frame's two-stage sample."""

    N: int
    n: int
    Mbar: float
    psus: tuple[PsuSummary, ...]
    s2b: Optional[float] = None
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "psus", tuple(self.psus))
        if self.n != len(self.psus):
            raise EstimationError(f"{self.name or 'frame'}: n={self.n} but {len(self.psus)} psu rows")

    def between_mean_square(self) -> float:
        if self.s2b is not None:
            return self.s2b
        u = [p.M * p.ybar / self.Mbar for p in self.psus]
        return _mean_square(u, math.fsum(u) / len(u))


def sf_two_stage_mean(summary: FrameSummary) -> float:
    """``sum_i M_i * ybar_i / (n * Mbar)``."""
    if summary.n == 0:
        raise EstimationError("no sampled psus")
    return math.fsum(p.M * p.ybar for p in summary.psus) / (summary.n * summary.Mbar)


def sf_two_stage_variance(summary: FrameSummary) -> float:
    """``(1/n - 1/N) s2b + 1/(n N) sum_i (M_i/Mbar)(1/m_i - 1/M_i) s2w_i``."""
    n, N = summary.n, summary.N
    if n < 2:
        raise VarianceUndefined(f"{summary.name or 'frame'}: need n >= 2, got {n}")
    first = (1.0 / n - 1.0 / N) * summary.between_mean_square()
    second = math.fsum(
        (p.M / summary.Mbar) * (1.0 / p.m - 1.0 / p.M) * (p.s2w if p.m > 1 else 0.0)
        for p in summary.psus
    )
    return math.fsum([first, second / (n * N)])


def sf_from_summary(summary: FrameSummary) -> SfEstimate:
    mean = sf_two_stage_mean(summary)
    var = sf_two_stage_variance(summary)
    s2w = tuple(p.s2w if p.m > 1 else 0.0 for p in summary.psus)
    negative = var < 0
    return SfEstimate(mean, summary.between_mean_square(), s2w, var, math.sqrt(max(var, 0.0)), negative)


def summarize_frame(population: Population, fs: FrameSample, yields: Mapping[Hashable, float]) -> FrameSummary:
    """Collapse one frame of a unit-level sample into summary statistics."""
    frame = population.frame(fs.frame_id)
    rows = []
    for ps in fs.psus:
        ys = [yields[u] for u in ps.unit_ids]
        ybar = math.fsum(ys) / len(ys)
        rows.append(PsuSummary(ps.M, ps.m, ybar, _mean_square(ys, ybar)))
    return FrameSummary(frame.N, fs.n, frame.Mbar, tuple(rows), None, frame.name)


# -- comparison metrics --------------------------------------------------------------


def relative_efficiency(se_list: Sequence[float]) -> list[float]:
    """``min(se) / se`` for each entry."""
    if not se_list:
        raise EstimationError("no standard errors given")
    if any(not se > 0 for se in se_list):
        raise EstimationError("standard errors must be positive")
    best = min(se_list)
    return [best / se for se in se_list]


def percentage_deviation(estimate: float, reference: float = HGEWY) -> float:
    """``(estimate / reference) * 100 - 100``; positive means over-estimation."""
    if not reference > 0:
        raise EstimationError(f"reference yield must be positive, got {reference}")
    return estimate / reference * 100.0 - 100.0


@dataclass(frozen=True)
class ComparisonRow:
    combination: tuple[int, ...]
    label: str
    mean: float = math.nan
    var: float = math.nan
    se: float = math.nan
    re: float = math.nan
    pd: float = math.nan
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[ComparisonRow, ...]
    reference: float = HGEWY
    best: Optional[int] = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["combination", "mean", "se", "re", "pd"])
        for r in self.rows:
            if r.ok:
                writer.writerow([r.label, f"{r.mean:.15g}", f"{r.se:.15g}", f"{r.re:.15g}", f"{r.pd:.15g}"])
            else:
                writer.writerow([r.label, "failed", "failed", "failed", "failed"])
        return buf.getvalue()

    def to_text(self) -> str:
        head = ("Criteria", "Frame combination", "Mean (kg/ha)", "S.E. (kg/ha)", "R.E.", "PD (%)")
        lines = []
        for r in self.rows:
            crit = {1: "Single frame", 2: "Dual frame"}.get(len(r.combination), "Multiple-frame")
            if r.ok:
                lines.append((crit, r.label, f"{r.mean:.2f}", f"{r.se:.3f}", f"{r.re:.5f}", f"{r.pd:.5f}"))
            else:
                lines.append((crit, r.label, "failed", "-", "-", r.error or ""))
        widths = [max(len(row[k]) for row in [head, *lines]) for k in range(len(head))]
        out = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
        out.append("  ".join("-" * w for w in widths))
        out += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in lines]
        out.append(f"PD reference yield: {self.reference:g} kg/ha")
        return "\n".join(out) + "\n"


def frame_combinations(frame_ids: Iterable[int]) -> list[tuple[int, ...]]:
    """All non-empty subsets, singles first, then pairs, and so on."""
    ids = sorted(frame_ids)
    return [c for k in range(1, len(ids) + 1) for c in itertools.combinations(ids, k)]


def compare_combinations(
    sample: SampleDraw,
    population: Population,
    design: Optional[DesignSpec] = None,
    *,
    reference: float = HGEWY,
    combinations: Optional[Sequence[tuple[int, ...]]] = None,
    mode: WeightMode = "star",
    within: WithinFactor = "derived",
) -> ComparisonReport:
    """Estimate the mean under every frame combination and rank by S.E.

    Each combination restricts the sample to its frames and recomputes weights
    from those frames only.  A combination that cannot be estimated is kept as
    a failed row; relative efficiency is computed over the successful rows.
    """
    combos = list(combinations) if combinations is not None else frame_combinations(sample.frame_ids)
    if not combos:
        raise EstimationError("no frame combinations to compare")
    names = {f.frame_id: f.name for f in population.frames}
    rows: list[ComparisonRow] = []
    for combo in combos:
        label = " + ".join(names.get(a, str(a)) for a in combo)
        sub = sample.restrict(combo)
        try:
            w = compute_weights(sub, population, design, mode=mode)
            est = mf_estimate(sub, w, within=within)
        except (EstimationError, ValueError) as exc:
            rows.append(ComparisonRow(tuple(combo), label, error=str(exc)))
            continue
        rows.append(
            ComparisonRow(tuple(combo), label, est.mean, est.var_est, est.se,
                          pd=percentage_deviation(est.mean, reference))
        )
    good = [k for k, r in enumerate(rows) if r.ok and r.se > 0]
    best = None
    if good:
        res = relative_efficiency([rows[k].se for k in good])
        for k, re in zip(good, res):
            rows[k] = replace(rows[k], re=re)
        best = min(good, key=lambda k: (rows[k].se, k))
    return ComparisonReport(tuple(rows), reference, best)
