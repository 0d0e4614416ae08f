"""Two-stage srswor sampling design per frame.

A frame's design is either *fixed* (first-stage size ``n`` and per-psu
second-stage sizes ``m``) or *realized*: its sample is induced by a shared
sample drawn elsewhere, with ``n`` the number of psus the shared units fall
into and ``m_i`` the count in each.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Hashable, Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Optional, Union

from mfyield.frames import Frame, Population, Psu
from mfyield.rng import srswor, substream

REALIZED = "realized"
DEFAULT_ENUMERATION_CAP = 10**6


class DesignError(ValueError):
    """Raised for an inadmissible design or draw request."""


@dataclass(frozen=True)
class FrameDesign:
    n: Optional[int] = None
    m: Union[int, tuple[int, ...], str] = REALIZED

    def __post_init__(self) -> None:
        if isinstance(self.m, str):
            if self.m != REALIZED:
                raise DesignError(f"unknown m policy {self.m!r}")
        elif not isinstance(self.m, int):
            object.__setattr__(self, "m", tuple(int(v) for v in self.m))
        if not self.realized and self.n is None:
            raise DesignError("a fixed design needs n")

    @property
    def realized(self) -> bool:
        return self.m == REALIZED

    def m_for(self, frame: Frame, index: int) -> int:
        if self.realized:
            raise DesignError(f"frame {frame.frame_id}: m is realized, not fixed")
        if isinstance(self.m, int):
            return self.m
        return self.m[index]

    def validate(self, frame: Frame, *, drawable: bool = False) -> None:
        """Check the design bounds; ``drawable`` also requires m listed ssus per psu."""
        if self.realized:
            return
        if not 1 <= self.n <= frame.N:
            raise DesignError(f"frame {frame.frame_id}: need 1 <= n <= N={frame.N}, got n={self.n}")
        if isinstance(self.m, tuple) and len(self.m) != frame.N:
            raise DesignError(
                f"frame {frame.frame_id}: {len(self.m)} m values for {frame.N} psus"
            )
        for k, psu in enumerate(frame.psus):
            m = self.m_for(frame, k)
            if not 1 <= m <= psu.M:
                raise DesignError(
                    f"frame {frame.frame_id}, psu {psu.psu_id!r}: need 1 <= m <= M={psu.M}, got {m}"
                )
            if drawable and m > len(psu.ssu_ids):
                raise DesignError(
                    f"frame {frame.frame_id}, psu {psu.psu_id!r}: only {len(psu.ssu_ids)} ssus enumerated"
                )


@dataclass(frozen=True)
class DesignSpec:
    frames: Mapping[int, FrameDesign]
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", dict(self.frames))

    def __getitem__(self, frame_id: int) -> FrameDesign:
        try:
            return self.frames[frame_id]
        except KeyError:
            raise DesignError(f"no design for frame {frame_id}") from None

    @property
    def fixed_frames(self) -> tuple[int, ...]:
        return tuple(sorted(a for a, d in self.frames.items() if not d.realized))

    @property
    def realized_frames(self) -> tuple[int, ...]:
        return tuple(sorted(a for a, d in self.frames.items() if d.realized))

    def validate(self, population: Population, *, drawable: bool = False) -> None:
        for frame_id, fd in self.frames.items():
            fd.validate(population.frame(frame_id), drawable=drawable)

    @classmethod
    def from_mapping(cls, section: Mapping[str, str]) -> "DesignSpec":
        """Parse flat keys ``frame.<id>.n``, ``frame.<id>.m`` and ``seed``."""
        raw: dict[int, dict[str, str]] = {}
        seed = 0
        for key, value in section.items():
            parts = key.split(".")
            if parts == ["seed"]:
                seed = int(value)
            elif len(parts) == 3 and parts[0] == "frame" and parts[2] in ("n", "m"):
                raw.setdefault(int(parts[1]), {})[parts[2]] = value.strip()
            else:
                raise DesignError(f"unknown design key {key!r}")
        frames = {}
        for frame_id, kv in raw.items():
            m_text = kv.get("m", REALIZED)
            if m_text == REALIZED:
                m: Union[int, tuple[int, ...], str] = REALIZED
            else:
                values = tuple(int(v) for v in m_text.split(","))
                m = values[0] if len(values) == 1 else values
            n = int(kv["n"]) if kv.get("n") else None
            frames[frame_id] = FrameDesign(n, m)
        return cls(frames, seed)

    def to_mapping(self) -> dict[str, str]:
        out = {"seed": str(self.seed)}
        for frame_id in sorted(self.frames):
            fd = self.frames[frame_id]
            if fd.n is not None:
                out[f"frame.{frame_id}.n"] = str(fd.n)
            if isinstance(fd.m, tuple):
                out[f"frame.{frame_id}.m"] = ",".join(str(v) for v in fd.m)
            else:
                out[f"frame.{frame_id}.m"] = str(fd.m)
        return out


@dataclass(frozen=True)
class PsuSample:
    psu_id: Hashable
    M: int
    unit_ids: tuple

    @property
    def m(self) -> int:
        return len(self.unit_ids)

    @property
    def f2(self) -> float:
        return self.m / self.M


@dataclass(frozen=True)
class FrameSample:
    frame_id: int
    N: int
    M0: int
    psus: tuple[PsuSample, ...]
    realized: bool = False

    @property
    def n(self) -> int:
        return len(self.psus)

    @property
    def f1(self) -> float:
        return self.n / self.N

    @property
    def mbar(self) -> float:
        return sum(p.m for p in self.psus) / self.n

    def psu(self, psu_id: Hashable) -> Optional[PsuSample]:
        for p in self.psus:
            if p.psu_id == psu_id:
                return p
        return None


@dataclass(frozen=True)
class SampleDraw:
    frames: Mapping[int, FrameSample]
    yields: Mapping[Hashable, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", dict(self.frames))
        object.__setattr__(self, "yields", dict(self.yields))

    @property
    def frame_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.frames))

    def observations(self) -> Iterator[tuple[int, Hashable, Hashable, float]]:
        """Yield ``(frame_id, psu_id, unit_id, y)`` for every observation."""
        for frame_id in self.frame_ids:
            for ps in self.frames[frame_id].psus:
                for uid in ps.unit_ids:
                    yield frame_id, ps.psu_id, uid, self.yields[uid]

    def unit_ids(self) -> set:
        return {uid for fs in self.frames.values() for ps in fs.psus for uid in ps.unit_ids}

    def restrict(self, frame_ids: Iterable[int]) -> "SampleDraw":
        keep = {a: self.frames[a] for a in frame_ids}
        units = {uid for fs in keep.values() for ps in fs.psus for uid in ps.unit_ids}
        return SampleDraw(keep, {u: self.yields[u] for u in units})

    def with_yields(self, yields: Mapping[Hashable, float]) -> "SampleDraw":
        return SampleDraw(self.frames, {u: yields[u] for u in self.yields})


def probability(n: int, N: int, m: int, M: int) -> float:
    """Two-stage srswor inclusion probability (n/N)(m/M)."""
    return (n / N) * (m / M)


def inclusion_probability(frame: Frame, psu: Psu, design: Union[DesignSpec, FrameDesign, FrameSample]) -> float:
    """P(psu selected and a given ssu of it selected) = (n/N)(m/M).

    ``design`` may be a fixed design or a realized :class:`FrameSample`, whose
    counts then stand in for n and m.
    """
    if psu.psu_id not in frame.psu_index:
        raise DesignError(f"psu {psu.psu_id!r} is not in frame {frame.frame_id}")
    if isinstance(design, FrameSample):
        ps = design.psu(psu.psu_id)
        if ps is None:
            raise DesignError(f"frame {frame.frame_id}: psu {psu.psu_id!r} was not sampled")
        return probability(design.n, frame.N, ps.m, psu.M)
    fd = design[frame.frame_id] if isinstance(design, DesignSpec) else design
    fd.validate(frame)
    return probability(fd.n, frame.N, fd.m_for(frame, frame.psu_index[psu.psu_id]), psu.M)


def _yields(population: Population, unit_ids: Iterable[Hashable]) -> dict[Hashable, float]:
    return {uid: population.yield_of(uid) for uid in unit_ids}


def _fixed_frame_sample(frame: Frame, fd: FrameDesign, seed: int, replication: int) -> FrameSample:
    first = srswor(substream(seed, replication, frame.frame_id, 1), frame.N, fd.n)
    psus = []
    for k in first:
        psu = frame.psus[k]
        m = fd.m_for(frame, k)
        picks = srswor(substream(seed, replication, frame.frame_id, 2, k), len(psu.ssu_ids), m)
        psus.append(PsuSample(psu.psu_id, psu.M, tuple(psu.ssu_ids[j] for j in picks)))
    return FrameSample(frame.frame_id, frame.N, frame.M0, tuple(psus))


def _induced_frame_sample(population: Population, frame: Frame, shared: Iterable[Hashable]) -> FrameSample:
    wanted = set(shared)
    psus = []
    for psu in frame.psus:
        hit = tuple(uid for uid in psu.ssu_ids if uid in wanted)
        if hit:
            psus.append(PsuSample(psu.psu_id, psu.M, hit))
    return FrameSample(frame.frame_id, frame.N, frame.M0, tuple(psus), realized=True)


def _complete_with_realized(
    population: Population, design: DesignSpec, fixed: dict[int, FrameSample]
) -> SampleDraw:
    frames = dict(fixed)
    drawn = {uid for fs in fixed.values() for ps in fs.psus for uid in ps.unit_ids}
    for frame_id in design.realized_frames:
        frame = population.frame(frame_id)
        members = [uid for uid in drawn if frame_id in population.unit(uid).memberships]
        frames[frame_id] = _induced_frame_sample(population, frame, members)
    units = {uid for fs in frames.values() for ps in fs.psus for uid in ps.unit_ids}
    return SampleDraw(frames, _yields(population, units))


def draw_sample(
    population: Population, design: DesignSpec, seed: Optional[int] = None, *, replication: int = 0
) -> SampleDraw:
    """Draw srswor at both stages independently in every fixed frame.

    Realized frames, if any, are induced from the union of units drawn in the
    fixed frames that they contain.
    """
    design.validate(population, drawable=True)
    if not design.fixed_frames:
        raise DesignError("draw_sample needs at least one frame with a fixed design")
    seed = design.seed if seed is None else seed
    fixed = {
        a: _fixed_frame_sample(population.frame(a), design[a], seed, replication)
        for a in design.fixed_frames
    }
    return _complete_with_realized(population, design, fixed)


def impose_shared_sample(
    population: Population,
    shared_unit_ids: Sequence[Hashable],
    frame_ids: Optional[Iterable[int]] = None,
) -> SampleDraw:
    """Treat one shared set of units as a two-stage sample of each frame."""
    frame_ids = population.frame_ids if frame_ids is None else tuple(frame_ids)
    shared = list(dict.fromkeys(shared_unit_ids))
    for uid in shared:
        unit = population.unit(uid)
        missing = [a for a in frame_ids if a not in unit.memberships]
        if missing:
            raise DesignError(f"shared unit {uid!r} has no membership in frames {missing}")
    frames = {a: _induced_frame_sample(population, population.frame(a), shared) for a in frame_ids}
    return SampleDraw(frames, _yields(population, shared))


def induce_sample(population: Population, unit_ids: Iterable[Hashable]) -> SampleDraw:
    """Per-frame samples induced by one set of units on incomplete frames.

    Each frame receives the units it contains; a frame containing none of them
    is left out of the draw.
    """
    shared = list(dict.fromkeys(unit_ids))
    if not shared:
        raise DesignError("no units to induce a sample from")
    frames = {}
    for frame in population.frames:
        members = [uid for uid in shared if frame.frame_id in population.unit(uid).memberships]
        if members:
            frames[frame.frame_id] = _induced_frame_sample(population, frame, members)
    return SampleDraw(frames, _yields(population, shared))


def _frame_outcomes(frame: Frame, fd: FrameDesign) -> Iterator[tuple[FrameSample, float]]:
    p_first = 1.0 / math.comb(frame.N, fd.n)
    for chosen in itertools.combinations(range(frame.N), fd.n):
        per_psu = []
        for k in chosen:
            psu = frame.psus[k]
            m = fd.m_for(frame, k)
            p = 1.0 / math.comb(len(psu.ssu_ids), m)
            per_psu.append([(PsuSample(psu.psu_id, psu.M, sub), p) for sub in itertools.combinations(psu.ssu_ids, m)])
        for combo in itertools.product(*per_psu):
            prob = p_first
            for _, p in combo:
                prob *= p
            yield FrameSample(frame.frame_id, frame.N, frame.M0, tuple(ps for ps, _ in combo)), prob


def frame_space_size(frame: Frame, fd: FrameDesign) -> int:
    total = 0
    for chosen in itertools.combinations(range(frame.N), fd.n):
        total += math.prod(math.comb(len(frame.psus[k].ssu_ids), fd.m_for(frame, k)) for k in chosen)
    return total


def sample_space_size(population: Population, design: DesignSpec) -> int:
    design.validate(population, drawable=True)
    return math.prod(frame_space_size(population.frame(a), design[a]) for a in design.fixed_frames)


def enumerate_samples(
    population: Population, design: DesignSpec, cap: int = DEFAULT_ENUMERATION_CAP
) -> Iterator[tuple[SampleDraw, float]]:
    """Every two-stage srswor outcome with its selection probability."""
    if not design.fixed_frames:
        raise DesignError("enumeration needs at least one frame with a fixed design")
    size = sample_space_size(population, design)
    if size > cap:
        raise DesignError(f"sample space has {size} draws, above the cap of {cap}")
    per_frame = [list(_frame_outcomes(population.frame(a), design[a])) for a in design.fixed_frames]
    for combo in itertools.product(*per_frame):
        prob = 1.0
        for _, p in combo:
            prob *= p
        fixed = {fs.frame_id: fs for fs, _ in combo}
        yield _complete_with_realized(population, design, fixed), prob
