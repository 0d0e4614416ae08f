"""Multiple-frame observation weights.

Each observation of unit ``u`` gets the raw weight ``1 / sum(pi*_a(u))`` where
the sum runs over every frame ``a`` (among those in the sample) that contains
``u`` and ``pi*_a(u) = (1/M_a0) * (n_a/N_a) * (m_ai/M_ai)``.  Raw weights are
then divided by their grand total so that the weights of all observations sum
to one.  The same unit observed under several frames contributes one entry per
frame, each with the same raw weight.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Hashable, Iterator, Mapping
from dataclasses import dataclass
from typing import Literal, Optional, Union

from mfyield.design import (
    DesignError,
    DesignSpec,
    FrameDesign,
    FrameSample,
    SampleDraw,
    inclusion_probability,
    probability,
)
from mfyield.frames import Frame, Population, Psu

WeightMode = Literal["star", "plain"]
"""``star`` scales each inclusion probability by 1/M_a0; ``plain`` sums the bare probabilities."""

ObsKey = tuple[int, Hashable, Hashable]


@dataclass(frozen=True)
class StarProbability:
    value: float

    def __float__(self) -> float:
        return self.value


def star_probability(frame: Frame, psu: Psu, design: Union[DesignSpec, FrameDesign, FrameSample]) -> StarProbability:
    return StarProbability(inclusion_probability(frame, psu, design) / frame.M0)


@dataclass(frozen=True)
class WeightTable:
    entries: Mapping[ObsKey, float]
    raw: Mapping[ObsKey, float]
    pi_sum: Mapping[ObsKey, float]
    norm: float
    mode: str = "star"

    def __post_init__(self) -> None:
        for name in ("entries", "raw", "pi_sum"):
            object.__setattr__(self, name, dict(getattr(self, name)))

    def __getitem__(self, key: ObsKey) -> float:
        return self.entries[key]

    def __len__(self) -> int:
        return len(self.entries)

    def total(self) -> float:
        return math.fsum(self.entries.values())

    def rows(self) -> Iterator[tuple[int, Hashable, Hashable, float, float, float]]:
        for key in sorted(self.entries, key=lambda k: (k[0], str(k[1]), str(k[2]))):
            yield (*key, self.pi_sum[key], self.raw[key], self.entries[key])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["frame", "psu", "unit", "pi_star_sum", "raw_weight", "weight"])
        for frame_id, psu_id, uid, s, r, w in self.rows():
            writer.writerow([frame_id, psu_id, uid, repr(s), repr(r), repr(w)])
        return buf.getvalue()


def _frame_term(
    population: Population,
    frame_id: int,
    psu_id: Hashable,
    unit_id: Hashable,
    sample: SampleDraw,
    design: Optional[DesignSpec],
    mode: WeightMode,
) -> float:
    frame = population.frame(frame_id)
    psu = frame.psu(psu_id)
    fd = design.frames.get(frame_id) if design is not None else None
    if fd is not None and not fd.realized:
        pi = probability(fd.n, frame.N, fd.m_for(frame, frame.psu_index[psu_id]), psu.M)
    else:
        fs = sample.frames[frame_id]
        ps = fs.psu(psu_id)
        if ps is None:
            raise DesignError(
                f"unit {unit_id!r}: its psu {psu_id!r} in frame {frame_id} has no realized m"
            )
        pi = probability(fs.n, frame.N, ps.m, psu.M)
    return pi / frame.M0 if mode == "star" else pi


def compute_weights(
    sample: SampleDraw,
    population: Population,
    design: Optional[DesignSpec] = None,
    *,
    mode: WeightMode = "star",
) -> WeightTable:
    """Normalised weights for every observation in ``sample``.

    Only frames present in ``sample`` enter the probability sums, so restricting
    a sample to a subset of frames yields that combination's weights.  For a
    frame with a fixed design, n and m come from ``design`` (so a unit whose psu
    was not drawn in that frame still gets its design probability); otherwise
    the realized counts of ``sample`` are used.
    """
    if mode not in ("star", "plain"):
        raise ValueError(f"unknown weight mode {mode!r}")
    frames_in = set(sample.frame_ids)
    if design is not None:
        for a, fd in design.frames.items():
            if a in frames_in:
                fd.validate(population.frame(a))
    terms: dict[tuple[int, Hashable], float] = {}
    unit_sum: dict[Hashable, float] = {}
    pi_sum: dict[ObsKey, float] = {}
    raw: dict[ObsKey, float] = {}
    for frame_id, psu_id, uid, _ in sample.observations():
        if uid not in unit_sum:
            parts = []
            for a, i in sorted(population.unit(uid).memberships.items()):
                if a not in frames_in:
                    continue
                if (a, i) not in terms:
                    terms[a, i] = _frame_term(population, a, i, uid, sample, design, mode)
                parts.append(terms[a, i])
            unit_sum[uid] = math.fsum(parts)
        key = (frame_id, psu_id, uid)
        pi_sum[key] = unit_sum[uid]
        raw[key] = 1.0 / unit_sum[uid]
    if not raw:
        raise DesignError("sample has no observations")
    norm = math.fsum(raw.values())
    entries = {k: r / norm for k, r in raw.items()}
    return WeightTable(entries, raw, pi_sum, norm, mode)


def population_weights(
    population: Population, design: DesignSpec, *, mode: WeightMode = "star"
) -> dict[Hashable, float]:
    """Per-unit weights for evaluating population-level variance terms.

    Every frame must have a fixed design.  Raw weights are normalised by their
    design expectation ``sum_a sum_{u in a} pi_a(u) * raw(u)`` so that the
    expected total weight of a draw is one.
    """
    design.validate(population)
    if design.realized_frames:
        raise DesignError("population-level weights need fixed designs in every frame")
    terms: dict[Hashable, list[float]] = {}
    pis: dict[Hashable, list[float]] = {}
    for frame in population.frames:
        fd = design[frame.frame_id]
        for k, psu in enumerate(frame.psus):
            pi = (fd.n / frame.N) * (fd.m_for(frame, k) / psu.M)
            for uid in psu.ssu_ids:
                terms.setdefault(uid, []).append(pi / frame.M0 if mode == "star" else pi)
                pis.setdefault(uid, []).append(pi)
    raw = {uid: 1.0 / math.fsum(v) for uid, v in terms.items()}
    expected = math.fsum(math.fsum(pis[uid]) * raw[uid] for uid in raw)
    return {uid: r / expected for uid, r in raw.items()}
