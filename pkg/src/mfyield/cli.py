"""Command-line pipeline driver.

Every subcommand reads an optional sectioned config file (``--config``) and
accepts overrides of any key as ``--<section>.<key> VALUE``, for example
``--design.frame.1.n 3`` or ``--cluster.k=6``.  Relative paths in a config
file resolve against the file's directory.

Exit status: 0 on success, 1 when an asserted check fails, 2 on errors.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from collections.abc import Sequence
from importlib import resources
from pathlib import Path
from typing import Optional

from mfyield import cluster as cl
from mfyield import fileio
from mfyield.design import (
    DEFAULT_ENUMERATION_CAP,
    DesignSpec,
    draw_sample,
    induce_sample,
)
from mfyield.estimate import (
    HGEWY,
    compare_combinations,
    percentage_deviation,
    relative_efficiency,
    sf_from_summary,
)
from mfyield.frames import FrameError, Population, UnitRecord, build_population
from mfyield.simulate import (
    SynthSpec,
    generate_population,
    monte_carlo,
    unbiasedness_oracle,
)
from mfyield.weights import compute_weights

log = logging.getLogger("mfyield")

COMMANDS = ("cluster", "frames", "assign", "estimate", "oracle", "simulate", "reproduce")
LIST_FRAME = 1


class CheckFailed(Exception):
    """An asserted check did not hold; reported with exit status 1."""


def bundled(name: str) -> Path:
    return Path(str(resources.files("mfyield") / "data" / name))


class RunConfig:
    """Sectioned key-value configuration with command-line overrides."""

    def __init__(self, parser: configparser.ConfigParser, base: Path) -> None:
        self.cp = parser
        self.base = base
        self.cli_paths: set[str] = set()

    @classmethod
    def load(cls, path: Optional[str], overrides: Sequence[tuple[str, str, str]] = ()) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        base = Path.cwd()
        if path:
            p = Path(path)
            if not cp.read(p):
                raise FileNotFoundError(f"config file {p} not found")
            base = p.resolve().parent
        cfg = cls(cp, base)
        for section, key, value in overrides:
            if not cp.has_section(section):
                cp.add_section(section)
            cp[section][key] = value
            if section == "paths":
                # command-line paths are relative to the working directory
                cfg.cli_paths.add(key)
        return cfg

    def get(self, section: str, key: str, default: Optional[str] = None) -> Optional[str]:
        if self.cp.has_section(section) and key in self.cp[section]:
            return self.cp[section][key]
        return default

    def getfloat(self, section: str, key: str, default: float) -> float:
        v = self.get(section, key)
        return default if v is None else float(v)

    def getint(self, section: str, key: str, default: int) -> int:
        v = self.get(section, key)
        return default if v is None else int(v)

    def getbool(self, section: str, key: str, default: bool) -> bool:
        v = self.get(section, key)
        if v is None:
            return default
        return v.strip().lower() in ("1", "yes", "true", "on")

    def section(self, name: str) -> dict[str, str]:
        return dict(self.cp[name]) if self.cp.has_section(name) else {}

    def path(self, key: str, default: Optional[Path] = None) -> Optional[Path]:
        v = self.get("paths", key)
        if v is None:
            return default
        if v.startswith("bundled:"):
            return bundled(v[len("bundled:"):])
        p = Path(v)
        if p.is_absolute() or key in self.cli_paths:
            return p
        return self.base / p

    def require(self, key: str) -> Path:
        p = self.path(key)
        if p is None:
            raise ValueError(f"missing required setting paths.{key}")
        if not p.exists():
            raise FileNotFoundError(f"paths.{key}: {p} does not exist")
        return p

    def out_dir(self) -> Path:
        out = self.path("out", Path.cwd())
        out.mkdir(parents=True, exist_ok=True)
        return out

    def label_paths(self) -> dict[int, Path]:
        out = {}
        for key in self.section("paths"):
            if key.startswith("labels."):
                out[int(key.split(".", 1)[1])] = self.require(key)
        return dict(sorted(out.items()))

    def design(self) -> Optional[DesignSpec]:
        sec = self.section("design")
        return DesignSpec.from_mapping(sec) if sec else None


def _split_overrides(extra: Sequence[str]) -> list[tuple[str, str, str]]:
    out = []
    k = 0
    while k < len(extra):
        arg = extra[k]
        if not arg.startswith("--") or "." not in arg:
            raise SystemExit(f"unrecognized argument {arg!r}")
        name = arg[2:]
        if "=" in name:
            name, value = name.split("=", 1)
        else:
            if k + 1 >= len(extra):
                raise SystemExit(f"{arg} needs a value")
            k += 1
            value = extra[k]
        section, key = name.split(".", 1)
        out.append((section, key, value))
        k += 1
    return out


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


# -- population sources --------------------------------------------------------------


def _population(cfg: RunConfig) -> tuple[Population, Optional[DesignSpec]]:
    """Population from ``paths.population`` or generated from ``[synth]``."""
    design = cfg.design()
    pop_dir = cfg.path("population")
    if pop_dir is not None:
        if not pop_dir.exists():
            raise FileNotFoundError(f"paths.population: {pop_dir} does not exist")
        return fileio.read_population(pop_dir), design
    if cfg.cp.has_section("synth"):
        spec = SynthSpec.from_section(cfg.section("synth"))
        world = generate_population(spec)
        return world.population, design or world.design
    raise ValueError("set paths.population or provide a [synth] section")


# -- subcommands ---------------------------------------------------------------------


def cmd_cluster(cfg: RunConfig) -> int:
    raster_path = cfg.require("raster")
    raster = cl.read_raster(raster_path)
    try:
        model = cl.kmeans(
            raster,
            cfg.getint("cluster", "k", 2),
            cfg.getfloat("cluster", "epsilon", 1e-6),
            cfg.getint("cluster", "max_iter", 100),
            cfg.getint("cluster", "seed", 0),
            init=cfg.get("cluster", "init", "random"),
            standardize=cfg.getbool("cluster", "standardize", False),
        )
    except cl.ClusterError as exc:
        raise cl.ClusterError(f"{raster_path}: {exc}") from None
    out = cfg.out_dir()
    cl.write_labels(out / "labels.txt", raster, model)
    fileio.write_csv(
        out / "centers.csv",
        ["cluster", "size", *(f"band_{b + 1}" for b in range(raster.bands))],
        ([k + 1, int(model.sizes[k]), *(repr(float(v)) for v in model.centers[k])] for k in range(model.K)),
    )
    fileio.write_csv(out / "sse_log.csv", ["iteration", "sse"], enumerate(map(repr, model.history), start=1))
    print(f"K = {model.K}, iterations = {model.iterations}, converged = {model.converged}")
    print(f"SSE = {_fmt(model.sse)} (band units)^2")
    return 0


def _points_and_labels(cfg: RunConfig):
    points = fileio.read_points(cfg.require("points"))
    labels = {a: cl.read_labels(p) for a, p in cfg.label_paths().items()}
    return points, labels


def _covered(units: list[UnitRecord], raster: cl.Raster, frame_id: int) -> list[UnitRecord]:
    inside = [u for u in units if raster.contains(*u.location)]
    if len(inside) < len(units):
        print(f"frame {frame_id}: {len(units) - len(inside)} points outside the raster extent are not in this frame")
    return inside


def cmd_assign(cfg: RunConfig) -> int:
    points, labels = _points_and_labels(cfg)
    if not labels:
        raise ValueError("no label rasters given (paths.labels.<frame> = file)")
    out = cfg.out_dir()
    units = fileio.points_as_units(points)
    for a, (raster, lab) in labels.items():
        inside = _covered(units, raster, a)
        sf = cl.frame_from_labels(inside, raster, lab, a)
        covered = {u.unit_id for u in inside}
        rows = []
        for p in points:
            if p.unit_id not in covered:
                continue
            idx = cl.locate((p.x, p.y), raster)
            rows.append([p.unit_id, repr(p.x), repr(p.y), idx, int(lab[idx])])
        fileio.write_csv(out / f"assignment_{a}.csv", ["unit_id", "x", "y", "pixel", "cluster"], rows)
        sizes = {q.psu_id: q.M for q in sf.frame.psus}
        fileio.write_csv(out / f"allocation_{a}.csv", ["psu_id", "M", "m"], fileio.allocation_rows(sf.allocation, sizes))
        ms = [m for m in sf.allocation.values() if m > 0]
        print(f"frame {a}: {sf.sampled_psus} sampled clusters of {sf.frame.N}, m = {tuple(ms)}")
    return 0


def cmd_frames(cfg: RunConfig) -> int:
    points, labels = _points_and_labels(cfg)
    names = {int(k.split(".")[1]): v for k, v in cfg.section("frames").items() if k.endswith(".name")}
    units = fileio.points_as_units(points)
    memberships = {p.unit_id: {LIST_FRAME: p.list_psu_id} for p in points}
    listing: dict[str, list[str]] = {}
    for p in points:
        listing.setdefault(p.list_psu_id, []).append(p.unit_id)
    sizes = fileio.read_psu_sizes(cfg.require("list_sizes")) if cfg.path("list_sizes") else {}
    unknown = sorted(set(listing) - set(sizes)) if sizes else []
    if unknown:
        raise FrameError(f"list psus {unknown} have no declared size")
    partition = [(pid, tuple(listing.get(pid, ())), sizes.get(pid)) for pid in (sizes or listing)]
    specs = [(LIST_FRAME, partition)]
    for a, (raster, lab) in labels.items():
        if a == LIST_FRAME:
            raise ValueError("frame 1 is the list frame; number satellite frames from 2")
        sf = cl.frame_from_labels(_covered(units, raster, a), raster, lab, a)
        specs.append((a, [(q.psu_id, q.ssu_ids, q.size) for q in sf.frame.psus]))
        for uid, psu_id in sf.memberships.items():
            memberships[uid][a] = psu_id
    records = [UnitRecord(u.unit_id, memberships[u.unit_id], u.location, u.y) for u in units]
    names.setdefault(LIST_FRAME, "list")
    pop = build_population(records, specs, frame_names=names)
    target = cfg.out_dir() / "population"
    fileio.write_population(pop, target)
    for f in pop.frames:
        print(f"frame {f.frame_id} ({f.name}): N = {f.N}, M0 = {f.M0}, Mbar = {_fmt(f.Mbar)}")
    print(f"population written to {target}")
    return 0


def _reference(cfg: RunConfig, pop: Population) -> float:
    ref = cfg.get("estimate", "reference", str(HGEWY))
    if ref.strip().lower() == "truth":
        if pop.true_mean is None:
            raise ValueError("estimate.reference = truth needs a population with known mean")
        return pop.true_mean
    return float(ref)


def cmd_estimate(cfg: RunConfig) -> int:
    pop, design = _population(cfg)
    sample_file = cfg.path("sample")
    if sample_file is not None or design is None:
        if sample_file is not None:
            ids = fileio.read_unit_ids(sample_file)
        else:
            ids = [u.unit_id for u in pop.units if u.y is not None]
        sample = induce_sample(pop, ids)
        design = None
    else:
        sample = draw_sample(pop, design, cfg.getint("design", "seed", design.seed))
    mode = cfg.get("estimate", "mode", "star")
    report = compare_combinations(
        sample,
        pop,
        design,
        reference=_reference(cfg, pop),
        mode=mode,
        within=cfg.get("estimate", "within", "derived"),
    )
    out = cfg.out_dir()
    _write(out / "comparison.csv", report.to_csv())
    _write(out / "comparison.txt", report.to_text())
    _write(out / "weights.csv", compute_weights(sample, pop, design, mode=mode).to_csv())
    print(report.to_text(), end="")
    return 0


def cmd_oracle(cfg: RunConfig) -> int:
    pop, design = _population(cfg)
    if design is None:
        raise ValueError("oracle needs a [design] section")
    mode = cfg.get("oracle", "mode", "star")
    within = cfg.get("oracle", "within", "derived")
    out = cfg.out_dir()
    exact = unbiasedness_oracle(pop, design, mode=mode, within=within, cap=cfg.getint("oracle", "cap", DEFAULT_ENUMERATION_CAP))
    _write(out / "oracle_exact.txt", exact.to_keyvalue())
    reports = [exact]
    R = cfg.getint("oracle", "replications", 2000)
    if R >= 2:
        mc = monte_carlo(pop, design, R, cfg.getint("oracle", "seed", design.seed), mode=mode, within=within)
        _write(out / "oracle_mc.txt", mc.to_keyvalue())
        reports.append(mc)
    _write(out / "oracle.csv", reports[0].csv_header() + "\n" + "".join(r.csv_row() + "\n" for r in reports))
    for r in reports:
        print(r.to_keyvalue())
    tol = cfg.getfloat("oracle", "tolerance", 1e-10)
    if cfg.getbool("oracle", "assert_unbiased", False):
        ok = exact.relative_error <= tol
        print(f"check unbiasedness: relative error {exact.relative_error:.3e} <= {tol:g}: {'PASS' if ok else 'FAIL'}")
        if not ok:
            raise CheckFailed("unbiasedness check failed")
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    spec = SynthSpec.from_section(cfg.section("synth"))
    world = generate_population(spec, cfg.getint("synth", "seed", spec.seed))
    pop = world.population
    design = cfg.design() or world.design
    out = cfg.out_dir()
    fileio.write_population(pop, out / "population")
    for a, raster in world.rasters.items():
        cl.write_raster(out / f"raster_{a}.txt", raster)
        cl.write_labels(out / f"labels_{a}.txt", raster, world.models[a])
    # ground points: the units of one list-frame draw, as a field crew would record them
    draw = draw_sample(pop, design, design.seed)
    fileio.write_csv(
        out / "points.csv",
        ["unit_id", "x", "y", "yield", "list_psu_id"],
        (
            [uid, repr(u.location[0]), repr(u.location[1]), repr(u.y), u.memberships[LIST_FRAME]]
            for uid in sorted(draw.unit_ids())
            for u in [pop.unit(uid)]
        ),
    )
    list_frame = pop.frame(LIST_FRAME)
    fileio.write_csv(out / "list_sizes.csv", ["psu_id", "M"], ([p.psu_id, p.M] for p in list_frame.psus))
    for f in pop.frames:
        print(f"frame {f.frame_id} ({f.name}): N = {f.N}, M0 = {f.M0}")
    print(f"population mean = {_fmt(pop.true_mean)} kg/ha over {len(pop.units)} units")
    R = cfg.getint("simulate", "replications", 0)
    if R >= 2:
        mc = monte_carlo(pop, design, R, design.seed,
                         mode=cfg.get("estimate", "mode", "star"), within=cfg.get("estimate", "within", "derived"))
        _write(out / "monte_carlo.txt", mc.to_keyvalue())
        print(mc.to_keyvalue())
    return 0


def _dev(value: float, reported: float) -> float:
    return abs(value - reported) / abs(reported)


def reproduce_summary(path: Path) -> tuple[str, bool]:
    """Recompute each frame's mean and S.E. from the summary statistics."""
    entries = fileio.read_summary(path)
    lines = [
        f"{'frame':<12} {'quantity':<10} {'recomputed':>18} {'reported':>10} {'deviation':>10}  status",
    ]
    ok = True
    for e in entries:
        est = sf_from_summary(e.summary)
        name = e.summary.name or str(e.frame_id)
        checks = [("mean", est.mean, e.reported_mean, e.mean_tol, "assert"),
                  ("S.E.", est.se, e.reported_se, e.se_tol, e.se_status)]
        for label, value, reported, tol, status in checks:
            if reported is None:
                lines.append(f"{name:<12} {label:<10} {value:>18.12g} {'-':>10} {'-':>10}  (not reported)")
                continue
            dev = _dev(value, reported)
            if status == "discrepant":
                verdict = "DISCREPANT (expected)"
            elif tol is None:
                verdict = "info"
            elif dev <= tol:
                verdict = f"PASS (tol {tol:.2%})"
            else:
                verdict = f"FAIL (tol {tol:.2%})"
                ok = False
            lines.append(f"{name:<12} {label:<10} {value:>18.12g} {reported:>10g} {dev:>10.4%}  {verdict}")
        lines.append(
            f"{'':<12} Mbar = {_fmt(e.summary.Mbar)} (printed {e.printed_Mbar:g}), "
            f"s2b = {_fmt(est.s2_between)} (kg/ha)^2, variance = {_fmt(est.var)} (kg/ha)^2"
        )
    lines.append("means and S.E. in kg/ha")
    return "\n".join(lines) + "\n", ok


def reproduce_metrics(path: Path, reference: float = HGEWY, re_tol: float = 1e-4, pd_tol: float = 1e-3) -> tuple[str, bool]:
    """Recompute R.E. from the reported S.E. column and PD from the means."""
    rows = fileio.read_comparison(path)
    res = relative_efficiency([r.se for r in rows])
    width = max(len(r.combination) for r in rows)
    lines = [f"{'combination':<{width}} {'R.E.':>10} {'reported':>9} {'PD (%)':>10} {'reported':>10}  status"]
    ok = True
    for r, re in zip(rows, res):
        pd = percentage_deviation(r.mean, reference)
        good = abs(re - r.re) <= re_tol and abs(pd - r.pd) <= pd_tol
        ok &= good
        lines.append(f"{r.combination:<{width}} {re:>10.5f} {r.re:>9.5f} {pd:>10.5f} {r.pd:>10.5f}  {'PASS' if good else 'FAIL'}")
    lines.append(f"PD reference yield {reference:g} kg/ha; tolerances R.E. {re_tol:g}, PD {pd_tol:g}")
    return "\n".join(lines) + "\n", ok


def cmd_reproduce(cfg: RunConfig, what: str) -> int:
    if what == "summary":
        text, ok = reproduce_summary(cfg.path("summary", bundled("wheat_summary.csv")))
    else:
        text, ok = reproduce_metrics(
            cfg.path("comparison", bundled("wheat_comparison.csv")),
            cfg.getfloat("estimate", "reference", HGEWY),
        )
    print(text, end="")
    if cfg.get("paths", "out") is not None:
        _write(cfg.out_dir() / f"reproduce_{what}.txt", text)
    if not ok:
        raise CheckFailed(f"reproduce {what}: asserted values out of tolerance")
    return 0


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mfyield",
        description="Multiple-frame crop yield estimation from list and satellite frames.",
        epilog="Any config key can be overridden with --<section>.<key> VALUE.",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "cluster": "k-means cluster a raster into a label raster",
        "frames": "build a population directory from points, list sizes and label rasters",
        "assign": "place points in clusters and report realized allocations",
        "estimate": "estimate the mean under every frame combination",
        "oracle": "exhaustive unbiasedness oracle and Monte Carlo run",
        "simulate": "generate the synthetic population, rasters and labels",
        "reproduce": "recompute published summary figures from bundled tables",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", help="sectioned key-value config file")
        sp.add_argument("--out", help="output directory (same as --paths.out)")
        if name == "reproduce":
            sp.add_argument("what", choices=("summary", "metrics"))
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        overrides = _split_overrides(extra)
        if args.out:
            overrides.append(("paths", "out", args.out))
        cfg = RunConfig.load(args.config, overrides)
        if args.command == "reproduce":
            return cmd_reproduce(cfg, args.what)
        handler = {
            "cluster": cmd_cluster,
            "frames": cmd_frames,
            "assign": cmd_assign,
            "estimate": cmd_estimate,
            "oracle": cmd_oracle,
            "simulate": cmd_simulate,
        }[args.command]
        return handler(cfg)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
