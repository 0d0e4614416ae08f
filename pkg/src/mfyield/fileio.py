"""Comma-separated file formats for populations, points and summary tables.

Population directory layout::

    units.csv             unit_id,x,y_coord,yield
    frame_<a>.csv         unit_id,psu_id          (one per frame a)
    frame_<a>_psus.csv    psu_id,M                (optional declared psu sizes)
    frames.csv            frame_id,name           (optional)

Unit and psu ids are kept as strings.  Empty ``x``/``y_coord``/``yield``
cells mean "unknown".
"""

from __future__ import annotations

import csv
import math
import re
from collections.abc import Hashable, Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from mfyield.estimate import FrameSummary, PsuSummary
from mfyield.frames import FrameError, Population, UnitRecord, build_population

_FRAME_FILE = re.compile(r"^frame_(\d+)\.csv$")


class FormatError(ValueError):
    pass


def _read_rows(path: Path, required: Sequence[str]) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in reader.fieldnames or []]
        missing = [c for c in required if c not in header]
        if missing:
            raise FormatError(f"{path}: missing columns {missing}")
        reader.fieldnames = header
        return [{k: (v or "").strip() for k, v in row.items() if k is not None} for row in reader]


def _opt_float(text: str) -> Optional[float]:
    return float(text) if text != "" else None


def _num(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- population directory ------------------------------------------------------------


def read_population(directory: Path) -> Population:
    directory = Path(directory)
    rows = _read_rows(directory / "units.csv", ["unit_id", "x", "y_coord", "yield"])
    frame_files = sorted(
        (int(m.group(1)), p) for p in directory.iterdir() if (m := _FRAME_FILE.match(p.name))
    )
    if not frame_files:
        raise FormatError(f"{directory}: no frame_<id>.csv files")
    names: dict[int, str] = {}
    if (directory / "frames.csv").exists():
        for r in _read_rows(directory / "frames.csv", ["frame_id", "name"]):
            names[int(r["frame_id"])] = r["name"]

    memberships: dict[str, dict[int, str]] = {}
    for r in rows:
        if r["unit_id"] in memberships:
            raise FrameError(f"duplicate unit id {r['unit_id']!r}")
        memberships[r["unit_id"]] = {}
    specs = []
    for frame_id, path in frame_files:
        listing: dict[str, list[str]] = {}
        for r in _read_rows(path, ["unit_id", "psu_id"]):
            uid = r["unit_id"]
            if uid not in memberships:
                raise FrameError(f"{path.name}: unknown unit {uid!r}")
            if frame_id in memberships[uid]:
                raise FrameError(f"{path.name}: unit {uid!r} listed twice")
            memberships[uid][frame_id] = r["psu_id"]
            listing.setdefault(r["psu_id"], []).append(uid)
        sizes: dict[str, int] = {}
        size_file = directory / f"frame_{frame_id}_psus.csv"
        if size_file.exists():
            for r in _read_rows(size_file, ["psu_id", "M"]):
                sizes[r["psu_id"]] = int(r["M"])
                listing.setdefault(r["psu_id"], [])
        specs.append((frame_id, [(pid, tuple(uids), sizes.get(pid)) for pid, uids in listing.items()]))

    units = []
    for r in rows:
        loc = None
        if r["x"] != "" and r["y_coord"] != "":
            loc = (float(r["x"]), float(r["y_coord"]))
        units.append(UnitRecord(r["unit_id"], memberships[r["unit_id"]], loc, _opt_float(r["yield"])))
    return build_population(units, specs, frame_names=names)


def write_population(population: Population, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_csv(
        directory / "units.csv",
        ["unit_id", "x", "y_coord", "yield"],
        (
            [u.unit_id, *(("", "") if u.location is None else map(repr, u.location)), _num(u.y)]
            for u in population.units
        ),
    )
    write_csv(directory / "frames.csv", ["frame_id", "name"], ([f.frame_id, f.name] for f in population.frames))
    for f in population.frames:
        write_csv(
            directory / f"frame_{f.frame_id}.csv",
            ["unit_id", "psu_id"],
            ([uid, p.psu_id] for p in f.psus for uid in p.ssu_ids),
        )
        if any(p.size is not None for p in f.psus):
            write_csv(directory / f"frame_{f.frame_id}_psus.csv", ["psu_id", "M"], ([p.psu_id, p.M] for p in f.psus))


# -- ground points -------------------------------------------------------------------


@dataclass(frozen=True)
class Point:
    unit_id: str
    x: float
    y: float
    yield_: float
    list_psu_id: str


def read_points(path: Path) -> list[Point]:
    rows = _read_rows(path, ["unit_id", "x", "y", "yield", "list_psu_id"])
    out, seen = [], set()
    for r in rows:
        if r["unit_id"] in seen:
            raise FormatError(f"{path}: duplicate unit id {r['unit_id']!r}")
        seen.add(r["unit_id"])
        y = float(r["yield"])
        if not y >= 0:
            raise FormatError(f"{path}: unit {r['unit_id']!r} has negative yield")
        out.append(Point(r["unit_id"], float(r["x"]), float(r["y"]), y, r["list_psu_id"]))
    return out


def read_psu_sizes(path: Path) -> dict[str, int]:
    return {r["psu_id"]: int(r["M"]) for r in _read_rows(path, ["psu_id", "M"])}


def read_unit_ids(path: Path) -> list[str]:
    """One id per line, or a csv with a ``unit_id`` column."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if lines and lines[0].split(",")[0] == "unit_id":
        return [r["unit_id"] for r in _read_rows(path, ["unit_id"])]
    return lines


def points_as_units(points: Iterable[Point]) -> list[UnitRecord]:
    return [UnitRecord(p.unit_id, {}, (p.x, p.y), p.yield_) for p in points]


# -- summary and comparison tables ---------------------------------------------------

SUMMARY_COLUMNS = ("kind", "frame", "name", "N", "n", "Mbar", "M0", "M_i", "m_i", "ybar_i", "s2w_i", "s2b")


@dataclass(frozen=True)
class SummaryEntry:
    frame_id: int
    summary: FrameSummary
    printed_Mbar: Optional[float]
    reported_mean: Optional[float]
    reported_se: Optional[float]
    mean_tol: Optional[float]
    se_tol: Optional[float]
    se_status: str
    """``assert`` to check the S.E. against ``se_tol``; ``discrepant`` to flag it."""


def read_summary(path: Path) -> list[SummaryEntry]:
    """Frame rows followed by their psu rows.

    ``Mbar`` is taken as ``M0/N`` when ``M0`` is given; the printed ``Mbar``
    is kept for display.
    """
    rows = _read_rows(path, SUMMARY_COLUMNS)
    if not rows:
        raise FormatError(f"{path}: empty summary")
    frames: list[dict] = []
    for k, r in enumerate(rows, start=2):
        kind = r["kind"].lower()
        if kind == "frame":
            frames.append({"row": r, "psus": []})
        elif kind == "psu":
            if not frames or r["frame"] != frames[-1]["row"]["frame"]:
                raise FormatError(f"{path}:{k}: psu row outside its frame block")
            frames[-1]["psus"].append(
                PsuSummary(int(r["M_i"]), int(r["m_i"]), float(r["ybar_i"]), float(r["s2w_i"] or 0.0))
            )
        else:
            raise FormatError(f"{path}:{k}: unknown row kind {r['kind']!r}")
    out = []
    for f in frames:
        r = f["row"]
        try:
            N = int(r["N"])
            printed = _opt_float(r["Mbar"])
            M0 = _opt_float(r["M0"])
            Mbar = M0 / N if M0 is not None else printed
            if Mbar is None:
                raise FormatError(f"{path}: frame {r['frame']} needs Mbar or M0")
            summary = FrameSummary(N, int(r["n"]), Mbar, tuple(f["psus"]), _opt_float(r["s2b"]), r["name"])
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}: frame {r['frame']}: {exc}") from None
        out.append(
            SummaryEntry(
                int(r["frame"]),
                summary,
                printed,
                _opt_float(r.get("reported_mean", "")),
                _opt_float(r.get("reported_se", "")),
                _opt_float(r.get("mean_tol", "")),
                _opt_float(r.get("se_tol", "")),
                (r.get("se_status") or "assert").lower(),
            )
        )
    return out


@dataclass(frozen=True)
class ReportedRow:
    combination: str
    mean: float
    se: float
    re: float
    pd: float


def read_comparison(path: Path) -> list[ReportedRow]:
    rows = _read_rows(path, ["combination", "mean", "se", "re", "pd"])
    if not rows:
        raise FormatError(f"{path}: empty comparison table")
    out = []
    for r in rows:
        vals = [float(r[c]) for c in ("mean", "se", "re", "pd")]
        if not all(math.isfinite(v) for v in vals):
            raise FormatError(f"{path}: non-finite value in row {r['combination']!r}")
        out.append(ReportedRow(r["combination"], *vals))
    return out


def allocation_rows(allocation: Mapping[Hashable, int], sizes: Mapping[Hashable, int]) -> list[tuple]:
    return [(pid, sizes[pid], m) for pid, m in allocation.items() if m > 0]
