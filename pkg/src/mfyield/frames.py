"""Finite population, overlapping frames and the psu/ssu hierarchy.

A unit is a physical observation (a crop-cutting plot, a village, a pixel)
identified by a global ``unit_id``.  Each frame partitions the units it covers
into primary units; the same unit therefore sits under a different psu in
every frame that contains it.
"""

from __future__ import annotations

import math
from collections.abc import Hashable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Optional


class FrameError(ValueError):
    """Raised when a population or frame fails validation."""


@dataclass(frozen=True)
class UnitRecord:
    unit_id: Hashable
    memberships: Mapping[int, Hashable]
    location: Optional[tuple[float, float]] = None
    y: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "memberships", dict(self.memberships))
        if self.location is not None:
            object.__setattr__(self, "location", (float(self.location[0]), float(self.location[1])))
        if self.y is not None:
            object.__setattr__(self, "y", float(self.y))


@dataclass(frozen=True)
class Psu:
    """A primary unit.

    ``size`` declares M when the psu is only partly enumerated (e.g. a
    district of 147 villages of which only the sampled ones are listed).  When
    omitted, M is the number of listed ssus.
    """

    psu_id: Hashable
    ssu_ids: tuple
    size: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "ssu_ids", tuple(self.ssu_ids))
        if self.size is not None and self.size < len(self.ssu_ids):
            raise FrameError(
                f"psu {self.psu_id!r}: declared size {self.size} < {len(self.ssu_ids)} listed ssus"
            )
        if self.M < 1:
            raise FrameError(f"psu {self.psu_id!r} is empty")

    @property
    def M(self) -> int:
        return len(self.ssu_ids) if self.size is None else int(self.size)


@dataclass(frozen=True)
class Frame:
    frame_id: int
    psus: tuple[Psu, ...]
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "psus", tuple(self.psus))
        if not self.name:
            object.__setattr__(self, "name", f"frame{self.frame_id}")

    @property
    def N(self) -> int:
        return len(self.psus)

    @cached_property
    def M0(self) -> int:
        return sum(p.M for p in self.psus)

    @property
    def Mbar(self) -> float:
        return self.M0 / self.N

    @cached_property
    def psu_index(self) -> dict[Hashable, int]:
        return {p.psu_id: k for k, p in enumerate(self.psus)}

    def psu(self, psu_id: Hashable) -> Psu:
        try:
            return self.psus[self.psu_index[psu_id]]
        except KeyError:
            raise FrameError(f"psu {psu_id!r} is not in frame {self.frame_id}") from None


@dataclass(frozen=True)
class DomainKey:
    frame_set: frozenset[int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "frame_set", frozenset(self.frame_set))
        if not self.frame_set:
            raise FrameError("a domain needs at least one frame")

    def __str__(self) -> str:
        return "{" + ",".join(str(a) for a in sorted(self.frame_set)) + "}"


@dataclass(frozen=True)
class Population:
    units: tuple[UnitRecord, ...]
    frames: tuple[Frame, ...]
    true_mean: Optional[float] = None
    meta: Mapping[str, Any] = field(default_factory=dict, compare=False)

    @cached_property
    def unit_map(self) -> dict[Hashable, UnitRecord]:
        return {u.unit_id: u for u in self.units}

    @cached_property
    def frame_map(self) -> dict[int, Frame]:
        return {f.frame_id: f for f in self.frames}

    @property
    def frame_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.frame_map))

    @property
    def A(self) -> int:
        return len(self.frames)

    def unit(self, unit_id: Hashable) -> UnitRecord:
        try:
            return self.unit_map[unit_id]
        except KeyError:
            raise FrameError(f"unknown unit {unit_id!r}") from None

    def frame(self, frame_id: int) -> Frame:
        try:
            return self.frame_map[frame_id]
        except KeyError:
            raise FrameError(f"unknown frame {frame_id}") from None

    def yield_of(self, unit_id: Hashable) -> float:
        y = self.unit(unit_id).y
        if y is None:
            raise FrameError(f"unit {unit_id!r} has no yield")
        return y

    def census_mean(self) -> float:
        """Mean yield over all units, each counted once."""
        ys = [u.y for u in self.units]
        if any(y is None for y in ys):
            raise FrameError("census mean needs a yield on every unit")
        return math.fsum(ys) / len(ys)

    def domains(self) -> dict[DomainKey, list[Hashable]]:
        out: dict[DomainKey, list[Hashable]] = {}
        for u in self.units:
            out.setdefault(domain_of(u), []).append(u.unit_id)
        return out


def build_population(
    units: Iterable[UnitRecord],
    frame_specs: Iterable[tuple],
    *,
    frame_names: Optional[Mapping[int, str]] = None,
    true_mean: Optional[float] = None,
) -> Population:
    """Validate units against per-frame psu partitions.

    Each frame spec is ``(frame_id, partition)`` where ``partition`` is a
    sequence of ``(psu_id, ssu_ids)`` or ``(psu_id, ssu_ids, declared_size)``.
    """
    units = tuple(units)
    unit_map: dict[Hashable, UnitRecord] = {}
    for u in units:
        if u.unit_id in unit_map:
            raise FrameError(f"duplicate unit id {u.unit_id!r}")
        if not u.memberships:
            raise FrameError(f"unit {u.unit_id!r} belongs to no frame")
        unit_map[u.unit_id] = u

    frames = []
    seen_frames: set[int] = set()
    for frame_id, partition in frame_specs:
        frame_id = int(frame_id)
        if frame_id in seen_frames:
            raise FrameError(f"duplicate frame id {frame_id}")
        seen_frames.add(frame_id)
        psus = []
        owner: dict[Hashable, Hashable] = {}
        for entry in partition:
            psu_id, ssu_ids = entry[0], tuple(entry[1])
            size = entry[2] if len(entry) > 2 else None
            for uid in ssu_ids:
                if uid in owner:
                    raise FrameError(
                        f"frame {frame_id}: unit {uid!r} listed in psus {owner[uid]!r} and {psu_id!r}"
                    )
                owner[uid] = psu_id
                unit = unit_map.get(uid)
                if unit is None:
                    raise FrameError(f"frame {frame_id}: psu {psu_id!r} lists unknown unit {uid!r}")
                if unit.memberships.get(frame_id) != psu_id:
                    raise FrameError(
                        f"frame {frame_id}: unit {uid!r} is listed in psu {psu_id!r} "
                        f"but its membership says {unit.memberships.get(frame_id)!r}"
                    )
            psus.append(Psu(psu_id, ssu_ids, size))
        if len({p.psu_id for p in psus}) != len(psus):
            raise FrameError(f"frame {frame_id}: duplicate psu id")
        if not psus:
            raise FrameError(f"frame {frame_id} has no psus")
        name = (frame_names or {}).get(frame_id, "")
        frames.append(Frame(frame_id, tuple(psus), name))

    frame_map = {f.frame_id: f for f in frames}
    for u in units:
        for frame_id, psu_id in u.memberships.items():
            frame = frame_map.get(frame_id)
            if frame is None:
                raise FrameError(f"unit {u.unit_id!r} claims unknown frame {frame_id}")
            if psu_id not in frame.psu_index or u.unit_id not in frame.psu(psu_id).ssu_ids:
                raise FrameError(
                    f"unit {u.unit_id!r} is declared in frame {frame_id} but absent from its psus"
                )
    return Population(units, tuple(frames), true_mean)


def population_from_partitions(
    yields: Mapping[Hashable, Optional[float]],
    partitions: Mapping[int, Sequence[tuple]],
    *,
    locations: Optional[Mapping[Hashable, tuple[float, float]]] = None,
    frame_names: Optional[Mapping[int, str]] = None,
    true_mean: Optional[float] = None,
) -> Population:
    """Build a population when memberships follow directly from the partitions."""
    memberships: dict[Hashable, dict[int, Hashable]] = {uid: {} for uid in yields}
    for frame_id, partition in partitions.items():
        for entry in partition:
            for uid in entry[1]:
                if uid not in memberships:
                    raise FrameError(f"frame {frame_id}: unknown unit {uid!r}")
                memberships[uid][int(frame_id)] = entry[0]
    locations = locations or {}
    units = [UnitRecord(uid, memberships[uid], locations.get(uid), y) for uid, y in yields.items()]
    return build_population(
        units, partitions.items(), frame_names=frame_names, true_mean=true_mean
    )


def domain_of(unit: UnitRecord) -> DomainKey:
    return DomainKey(frozenset(unit.memberships))
