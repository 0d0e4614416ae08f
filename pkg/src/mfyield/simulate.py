"""Synthetic populations and design-based verification.

:func:`unbiasedness_oracle` walks the complete sample space of a small design
and computes the exact expectation and variance of the estimator;
:func:`monte_carlo` does the same by repeated seeded draws.
"""

from __future__ import annotations

import configparser
import math
from collections.abc import Hashable, Mapping
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from mfyield.cluster import ClusterModel, Georef, Raster, build_satellite_frame, kmeans
from mfyield.design import (
    DEFAULT_ENUMERATION_CAP,
    DesignError,
    DesignSpec,
    FrameDesign,
    draw_sample,
    enumerate_samples,
)
from mfyield.estimate import (
    EstimationError,
    WithinFactor,
    mf_mean,
    mf_variance_est,
    mf_variance_population,
)
from mfyield.frames import Population, UnitRecord, build_population
from mfyield.rng import substream
from mfyield.weights import WeightMode, compute_weights

SYNTH_KEY = 0x5E


@dataclass(frozen=True)
class SatSpec:
    name: str
    bands: int
    K: int
    window: Optional[tuple[int, int, int, int]] = None
    """``(col0, row0, width, height)`` of the covered sub-grid; ``None`` covers everything."""


@dataclass(frozen=True)
class SynthSpec:
    width: int = 24
    height: int = 18
    list_psus: int = 12
    ssu_min: int = 30
    ssu_max: int = 42
    base_yield: float = 3000.0
    trend: float = 600.0
    noise: float = 150.0
    band_noise: float = 0.05
    satellites: tuple[SatSpec, ...] = (
        SatSpec("sat-coarse", 2, 6),
        SatSpec("sat-fine", 4, 8, (0, 0, 12, 18)),
    )
    list_n: int = 3
    list_m: int = 6
    epsilon: float = 1e-6
    max_iter: int = 300
    seed: int = 20240601

    @property
    def units(self) -> int:
        return self.width * self.height

    @property
    def shared_size(self) -> int:
        return self.list_n * self.list_m

    def validate(self) -> None:
        if min(self.width, self.height, self.list_psus, self.ssu_min, self.list_n, self.list_m) < 1:
            raise ValueError("all counts must be at least 1")
        if self.list_psus > self.units:
            raise ValueError(f"{self.list_psus} psus for {self.units} units")
        if not self.list_psus * self.ssu_min <= self.units <= self.list_psus * self.ssu_max:
            raise ValueError(
                f"{self.units} units cannot be split into {self.list_psus} psus of "
                f"{self.ssu_min}..{self.ssu_max} ssus"
            )
        if self.list_n > self.list_psus or self.list_m > self.ssu_min:
            raise ValueError("list-frame design exceeds the psu counts")
        if self.shared_size > self.units:
            raise ValueError("shared sample larger than the population")

    def design(self) -> DesignSpec:
        frames = {1: FrameDesign(self.list_n, self.list_m)}
        frames.update({k + 2: FrameDesign() for k in range(len(self.satellites))})
        return DesignSpec(frames, self.seed)

    # flat config-section round trip

    def to_section(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            if f.name == "satellites":
                continue
            out[f.name] = str(getattr(self, f.name))
        for k, s in enumerate(self.satellites, start=2):
            out[f"frame.{k}.name"] = s.name
            out[f"frame.{k}.bands"] = str(s.bands)
            out[f"frame.{k}.k"] = str(s.K)
            if s.window is not None:
                out[f"frame.{k}.window"] = ",".join(str(v) for v in s.window)
        return out

    @classmethod
    def from_section(cls, section: Mapping[str, str]) -> "SynthSpec":
        kw: dict = {}
        sats: dict[int, dict[str, str]] = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, value in section.items():
            if key.startswith("frame."):
                _, k, attr = key.split(".")
                sats.setdefault(int(k), {})[attr] = value
            elif key in types:
                kw[key] = float(value) if types[key] in ("float", float) else int(value)
            else:
                raise ValueError(f"unknown synth key {key!r}")
        if sats:
            kw["satellites"] = tuple(
                SatSpec(
                    s.get("name", f"frame{k}"),
                    int(s["bands"]),
                    int(s["k"]),
                    tuple(int(v) for v in s["window"].split(",")) if "window" in s else None,
                )
                for k, s in sorted(sats.items())
            )
        return cls(**kw)


@dataclass
class SynthWorld:
    population: Population
    rasters: dict[int, Raster]
    models: dict[int, ClusterModel]
    design: DesignSpec


def _list_sizes(spec: SynthSpec, rng: np.random.Generator) -> list[int]:
    sizes = [spec.ssu_min] * spec.list_psus
    remaining = spec.units - sum(sizes)
    while remaining:
        k = int(rng.integers(spec.list_psus))
        if sizes[k] < spec.ssu_max:
            sizes[k] += 1
            remaining -= 1
    return sizes


def yield_field(spec: SynthSpec, rng: np.random.Generator, noise: Optional[float] = None) -> np.ndarray:
    """Smooth spatial trend plus independent noise, one value per grid cell."""
    rows, cols = np.mgrid[0:spec.height, 0:spec.width]
    u, v = cols / spec.width, rows / spec.height
    trend = (np.sin(2.2 * np.pi * u) + np.cos(1.7 * np.pi * v) + 0.8 * (u - v)) / 2.0
    sd = spec.noise if noise is None else noise
    y = spec.base_yield + spec.trend * trend + sd * rng.standard_normal(trend.shape)
    return np.maximum(y, 0.0).ravel()


def generate_population(spec: SynthSpec, seed: Optional[int] = None, *, noise: Optional[float] = None) -> SynthWorld:
    """Deterministic synthetic world: yields, list frame, rasters and satellite frames.

    Units are grid cells.  The list frame cuts the grid row-major into
    contiguous districts.  Every satellite raster carries bands that are affine
    in yield plus noise, is clustered with k-means, and its clusters become
    that frame's psus.
    """
    spec.validate()
    seed = spec.seed if seed is None else seed
    y = yield_field(spec, substream(seed, SYNTH_KEY, 1), noise)
    ids = [f"u{k:05d}" for k in range(spec.units)]
    locations = {uid: ((k % spec.width) + 0.5, (k // spec.width) + 0.5) for k, uid in enumerate(ids)}

    sizes = _list_sizes(spec, substream(seed, SYNTH_KEY, 2))
    partitions: dict[int, list[tuple]] = {1: []}
    memberships: dict[Hashable, dict[int, Hashable]] = {uid: {} for uid in ids}
    start = 0
    for d, size in enumerate(sizes, start=1):
        psu_id = f"d{d:02d}"
        members = ids[start:start + size]
        partitions[1].append((psu_id, tuple(members)))
        for uid in members:
            memberships[uid][1] = psu_id
        start += size

    scaled = (y - spec.base_yield) / max(spec.trend, 1.0)
    rasters, models, names = {}, {}, {1: "list"}
    for k, sat in enumerate(spec.satellites, start=2):
        rng = substream(seed, SYNTH_KEY, 3, k)
        c0, r0, w, h = sat.window or (0, 0, spec.width, spec.height)
        cells = [(r0 + r) * spec.width + (c0 + c) for r in range(h) for c in range(w)]
        slopes = 1.0 + rng.random(sat.bands)
        offsets = rng.random(sat.bands)
        bands = offsets + np.outer(scaled[cells], slopes) + spec.band_noise * rng.standard_normal((len(cells), sat.bands))
        raster = Raster(w, h, bands, Georef(float(c0), float(r0), 1.0, 1.0))
        model = kmeans(raster, sat.K, spec.epsilon, spec.max_iter, seed + k)
        points = [UnitRecord(ids[c], {}, locations[ids[c]]) for c in cells]
        sf = build_satellite_frame(points, raster, model, k, sat.name)
        partitions[k] = [(p.psu_id, p.ssu_ids) for p in sf.frame.psus]
        for uid, psu_id in sf.memberships.items():
            memberships[uid][k] = psu_id
        rasters[k], models[k], names[k] = raster, model, sat.name

    units = [UnitRecord(uid, memberships[uid], locations[uid], float(y[k])) for k, uid in enumerate(ids)]
    pop = build_population(units, partitions.items(), frame_names=names)
    pop = Population(pop.units, pop.frames, pop.census_mean(), {"spec": spec, "seed": seed})
    return SynthWorld(pop, rasters, models, spec.design())


# -- oracle reports ------------------------------------------------------------------


@dataclass(frozen=True)
class OracleReport:
    kind: str
    draws: int
    population_mean: float
    expected_estimate: float
    relative_error: float
    exact_variance: Optional[float] = None
    empirical_variance: Optional[float] = None
    analytic_variance: Optional[float] = None
    varest_mean: Optional[float] = None
    varest_undefined: int = 0
    se_of_mean: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def reference_variance(self) -> Optional[float]:
        return self.exact_variance if self.exact_variance is not None else self.empirical_variance

    @property
    def analytic_ratio(self) -> Optional[float]:
        return _ratio(self.analytic_variance, self.reference_variance)

    @property
    def varest_ratio(self) -> Optional[float]:
        return _ratio(self.varest_mean, self.reference_variance)

    def as_dict(self) -> dict:
        d = asdict(self)
        extra = d.pop("extra")
        d["analytic_ratio"] = self.analytic_ratio
        d["varest_ratio"] = self.varest_ratio
        d.update(extra)
        return d

    def to_keyvalue(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.as_dict().items())

    def csv_header(self) -> str:
        return ",".join(self.as_dict()) + "\n"

    def csv_row(self) -> str:
        return ",".join(_fmt(v) for v in self.as_dict().values()) + "\n"


def _ratio(a: Optional[float], b: Optional[float]) -> Optional[float]:
    if a is None or b is None:
        return None
    if b == 0:
        return 1.0 if a == 0 else math.inf
    return a / b


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _truth(population: Population) -> float:
    return population.true_mean if population.true_mean is not None else population.census_mean()


def _rel(expected: float, truth: float) -> float:
    return abs(expected - truth) / abs(truth) if truth != 0 else abs(expected)


def _analytic(population: Population, design: DesignSpec, mode: WeightMode, within: WithinFactor) -> Optional[float]:
    try:
        return mf_variance_population(population, design, mode=mode, within=within)
    except (DesignError, EstimationError):
        return None


def unbiasedness_oracle(
    population: Population,
    design: DesignSpec,
    *,
    mode: WeightMode = "star",
    within: WithinFactor = "derived",
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> OracleReport:
    """Exact expectation and variance of the estimator over the full sample space.

    Weights are recomputed for every draw.  The sample-based variance estimate
    is averaged over the draws where it is defined (every frame with n >= 2);
    the number of other draws is reported as ``varest_undefined``.
    """
    probs, means, v_probs, v_vals = [], [], [], []
    undefined = 0
    for draw, p in enumerate_samples(population, design, cap):
        w = compute_weights(draw, population, design, mode=mode)
        probs.append(p)
        means.append(mf_mean(draw, w))
        try:
            v_vals.append(mf_variance_est(draw, w, within=within))
            v_probs.append(p)
        except EstimationError:
            undefined += 1
    total_p = math.fsum(probs)
    expected = math.fsum(p * y for p, y in zip(probs, means))
    exact_var = math.fsum(p * (y - expected) ** 2 for p, y in zip(probs, means))
    varest = None
    if v_vals:
        varest = math.fsum(p * v for p, v in zip(v_probs, v_vals)) / math.fsum(v_probs)
    truth = _truth(population)
    return OracleReport(
        "enumeration",
        len(probs),
        truth,
        expected,
        _rel(expected, truth),
        exact_variance=exact_var,
        analytic_variance=_analytic(population, design, mode, within),
        varest_mean=varest,
        varest_undefined=undefined,
        extra={"probability_mass": total_p},
    )


def replicate(
    population: Population,
    design: DesignSpec,
    seed: int,
    start: int,
    stop: int,
    *,
    mode: WeightMode = "star",
    within: WithinFactor = "derived",
) -> tuple[list[float], list[Optional[float]]]:
    """Estimates and variance estimates for replications ``start..stop-1``.

    The variance estimate is ``None`` where it is undefined.
    """
    means: list[float] = []
    varest: list[Optional[float]] = []
    for r in range(start, stop):
        draw = draw_sample(population, design, seed, replication=r)
        w = compute_weights(draw, population, design, mode=mode)
        means.append(mf_mean(draw, w))
        try:
            varest.append(mf_variance_est(draw, w, within=within))
        except EstimationError:
            varest.append(None)
    return means, varest


def _replicate_block(args) -> tuple[list[float], list[Optional[float]]]:
    population, design, seed, lo, hi, mode, within = args
    return replicate(population, design, seed, lo, hi, mode=mode, within=within)


def monte_carlo(
    population: Population,
    design: DesignSpec,
    replications: int,
    seed: Optional[int] = None,
    *,
    mode: WeightMode = "star",
    within: WithinFactor = "derived",
    workers: int = 1,
) -> OracleReport:
    """Repeated independent draws; replication ``r`` always uses substream ``r``.

    ``se_of_mean`` is the standard error of the mean estimate, for 3-sigma
    checks against the population mean.
    """
    if replications < 2:
        raise ValueError("need at least two replications")
    seed = design.seed if seed is None else seed
    blocks = max(1, workers) * 4
    step = math.ceil(replications / blocks)
    jobs = [
        (population, design, seed, lo, min(lo + step, replications), mode, within)
        for lo in range(0, replications, step)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_replicate_block, jobs))
    else:
        parts = [_replicate_block(j) for j in jobs]
    means = [y for m, _ in parts for y in m]
    varest = [v for _, e in parts for v in e]
    mean = math.fsum(means) / len(means)
    var = math.fsum((y - mean) ** 2 for y in means) / (len(means) - 1)
    defined = [v for v in varest if v is not None]
    truth = _truth(population)
    return OracleReport(
        "monte_carlo",
        replications,
        truth,
        mean,
        _rel(mean, truth),
        empirical_variance=var,
        analytic_variance=_analytic(population, design, mode, within),
        varest_mean=math.fsum(defined) / len(defined) if defined else None,
        varest_undefined=len(varest) - len(defined),
        se_of_mean=math.sqrt(var / len(means)),
        extra={"seed": seed},
    )


def load_synth_config(path) -> tuple[SynthSpec, Optional[DesignSpec]]:
    """Read ``[synth]`` and optional ``[design]`` sections."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if not cp.read(path):
        raise FileNotFoundError(path)
    spec = SynthSpec.from_section(dict(cp["synth"])) if cp.has_section("synth") else SynthSpec()
    design = DesignSpec.from_mapping(dict(cp["design"])) if cp.has_section("design") else None
    return spec, design
