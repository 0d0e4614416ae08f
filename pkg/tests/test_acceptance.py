"""Acceptance criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the terminal
summary) or ``python tests/test_acceptance.py``.  Criteria whose recorded
expectation does not hold on the shipped fixtures are reported as FAIL and the
corresponding test fails; nothing here is relaxed to make them pass.
"""

from __future__ import annotations

import csv
import sys
import time
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from conftest import (
    FIXTURES,
    THREE_FRAME_PARTS,
    THREE_FRAME_SHARED,
    THREE_FRAME_YIELDS,
    desk_instance,
    record_acceptance,
)

from mfyield.cli import RunConfig, bundled, main, reproduce_metrics, reproduce_summary
from mfyield.cluster import Raster, kmeans, sse
from mfyield.design import (
    DesignSpec,
    SampleDraw,
    draw_sample,
    enumerate_samples,
    induce_sample,
)
from mfyield.estimate import (
    HGEWY,
    mf_estimate,
    mf_variance_population,
    percentage_deviation,
    relative_efficiency,
    sf_from_summary,
)
from mfyield.fileio import read_comparison, read_summary
from mfyield.frames import population_from_partitions
from mfyield.simulate import (
    SynthSpec,
    generate_population,
    monte_carlo,
    replicate,
    unbiasedness_oracle,
)
from mfyield.weights import compute_weights

UNBIASED_INSTANCES = ("two_complete", "three_complete", "overlap_census")
ALL_INSTANCES = (*UNBIASED_INSTANCES, "single_frame", "unequal_general")


def _report(number: int, ok: bool, detail: str) -> None:
    record_acceptance(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def _ratio(v) -> str:
    return "NA" if v is None else f"{v:.4f}"


def _dev(value: float, target: float) -> float:
    return abs(value - target) / abs(target)


def test_criterion_1_summary_reproduction():
    entries = read_summary(bundled("wheat_summary.csv"))
    est = {e.frame_id: sf_from_summary(e.summary) for e in entries}
    checks = [
        ("list mean", _dev(est[1].mean, 2151), 0.005),
        ("list S.E.", _dev(est[1].se, 626), 0.01),
        ("WiFS mean", _dev(est[2].mean, 2372), 0.005),
        ("LISS mean", _dev(est[3].mean, 2084), 0.01),
    ]
    text, _ = reproduce_summary(bundled("wheat_summary.csv"))
    flagged = [ln for ln in text.splitlines() if "DISCREPANT" in ln]
    ok = all(d <= tol for _, d, tol in checks) and len(flagged) == 2
    detail = ", ".join(f"{label} off by {d:.3%}" for label, d, _ in checks)
    _report(1, ok, f"{detail}; WiFS/LISS S.E. {est[2].se:.1f}/{est[3].se:.1f} flagged DISCREPANT")
    assert ok


def test_criterion_2_metric_arithmetic():
    rows = read_comparison(bundled("wheat_comparison.csv"))
    res = relative_efficiency([r.se for r in rows])
    re_dev = max(abs(a - r.re) for a, r in zip(res, rows))
    pd_dev = max(abs(percentage_deviation(r.mean, HGEWY) - r.pd) for r in rows)
    ok = len(rows) == 7 and re_dev <= 1e-4 and pd_dev <= 1e-3 and reproduce_metrics(bundled("wheat_comparison.csv"))[1]
    _report(2, ok, f"max R.E. deviation {re_dev:.2e}, max PD deviation {pd_dev:.2e} over {len(rows)} rows")
    assert ok


def test_criterion_3_synthetic_combinations(tmp_path, capsys):
    code = main(["estimate", "--config", str(bundled("synthetic.ini")), "--out", str(tmp_path)])
    capsys.readouterr()
    assert code == 0
    with open(tmp_path / "comparison.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    singles = [float(r["se"]) for r in rows if "+" not in r["combination"]]
    triple = [float(r["se"]) for r in rows if r["combination"].count("+") == 2]
    ok = len(rows) == 7 and len(triple) == 1 and triple[0] <= min(singles)
    _report(3, ok, f"{len(rows)} combinations; triple-frame S.E. {triple[0]:.3f} vs min single-frame S.E. {min(singles):.3f}")
    assert ok


def test_criterion_4_exhaustive_unbiasedness():
    parts, ok = [], True
    for name in UNBIASED_INSTANCES:
        pop, design = desk_instance(name)
        r = unbiasedness_oracle(pop, design)
        ok &= r.draws <= 10**5 and r.relative_error <= 1e-10
        parts.append(f"{name} ({len(pop.frames)} frames, {r.draws} draws) rel err {r.relative_error:.1e}")
    _report(4, ok, "; ".join(parts))
    assert ok


def test_criterion_5_weight_contract():
    worst = 0.0
    count = 0
    for name in ALL_INSTANCES:
        pop, design = desk_instance(name)
        for draw, _ in enumerate_samples(pop, design):
            worst = max(worst, abs(compute_weights(draw, pop, design).total() - 1.0))
            count += 1
    cfg = RunConfig.load(str(bundled("synthetic.ini")))
    world = generate_population(SynthSpec.from_section(cfg.section("synth")))
    design = cfg.design()
    for r in range(50):
        draw = draw_sample(world.population, design, replication=r)
        worst = max(worst, abs(compute_weights(draw, world.population, design).total() - 1.0))
        count += 1

    pop = population_from_partitions(THREE_FRAME_YIELDS, THREE_FRAME_PARTS)
    w = compute_weights(induce_sample(pop, THREE_FRAME_SHARED), pop)
    with open(FIXTURES / "weights_3frame.csv", newline="") as fh:
        hand = {(int(r["frame"]), r["psu"], r["unit"]): float(Fraction(r["weight"])) for r in csv.DictReader(fh)}
    hand_dev = max(abs(w.entries[k] - v) for k, v in hand.items())
    worst = max(worst, abs(w.total() - 1.0))
    ok = worst <= 1e-12 and hand_dev <= 1e-12 and set(hand) == set(w.entries)
    _report(5, ok, f"{count + 1} weight tables, max |sum w - 1| {worst:.1e}; hand table max deviation {hand_dev:.1e}")
    assert ok


def test_criterion_6_variance_oracle():
    pop, design = desk_instance("single_frame")
    exact = unbiasedness_oracle(pop, design).exact_variance
    analytic = mf_variance_population(pop, design)
    rel = _dev(analytic, exact)
    info = []
    for name in ALL_INSTANCES:
        if name == "single_frame":
            continue
        r = unbiasedness_oracle(*desk_instance(name))
        info.append(f"{name} analytic/exact {_ratio(r.analytic_ratio)}, mean-estimate/exact {_ratio(r.varest_ratio)}")
    ok = rel <= 1e-9
    _report(6, ok, f"single frame analytic {analytic:.6g} vs exact {exact:.6g} (rel {rel:.1e}); " + "; ".join(info))
    assert ok


def test_criterion_7_monte_carlo():
    cfg = RunConfig.load(str(bundled("synthetic.ini")))
    world = generate_population(SynthSpec.from_section(cfg.section("synth")))
    pop, design = world.population, cfg.design()
    R = cfg.getint("simulate", "replications", 100_000)
    t0 = time.perf_counter()
    r = monte_carlo(pop, design, R)
    elapsed = time.perf_counter() - t0
    head, _ = replicate(pop, design, design.seed, 0, 500)
    again, _ = replicate(pop, design, design.seed, 0, 500)
    deterministic = head == again and monte_carlo(pop, design, 500) == monte_carlo(pop, design, 500)
    z = (r.expected_estimate - r.population_mean) / r.se_of_mean
    ok = abs(z) <= 3 and deterministic
    _report(
        7,
        ok,
        f"R={R}: mean estimate {r.expected_estimate:.3f} vs truth {r.population_mean:.3f}, "
        f"{z:+.1f} standard errors ({r.se_of_mean:.3f}); deterministic {deterministic}; {elapsed:.0f} s",
    )
    assert ok


def test_criterion_8_kmeans():
    with open(FIXTURES / "two_blob.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    blob = Raster(5, 4, np.array([[float(r["band1"]), float(r["band2"])] for r in rows]))
    optimum = np.array([int(r["group"]) for r in rows])
    m = kmeans(blob, 2, seed=3)
    labels = m.assignment - 1
    optimal = np.array_equal(labels, optimum) or np.array_equal(1 - labels, optimum)

    rng = np.random.default_rng(11)
    rasters = [blob, Raster(12, 9, rng.normal(size=(108, 3))), Raster(20, 15, rng.gamma(2.0, size=(300, 4)))]
    monotone, same = True, True
    for raster in rasters:
        for K, seed in ((2, 0), (3, 1), (5, 2)):
            a, b = kmeans(raster, K, seed=seed), kmeans(raster, K, seed=seed)
            monotone &= all(y <= x for x, y in zip(a.history, a.history[1:]))
            monotone &= a.sse == pytest.approx(sse(raster, a), rel=1e-12)
            same &= a.assignment.tobytes() == b.assignment.tobytes()
    k1 = kmeans(rasters[2], 1)
    k1_dev = float(np.max(np.abs(k1.centers[0] - rasters[2].pixels.mean(axis=0))))
    ok = optimal and monotone and same and k1_dev <= 1e-12
    _report(8, ok, f"SSE non-increasing {monotone}; two-blob optimal {optimal}; K=1 center deviation {k1_dev:.1e}; seeded labels identical {same}")
    assert ok


def _permuted(pop, design, draw):
    """The same population, design and draw with frame ids reversed."""
    ids = pop.frame_ids
    relabel = dict(zip(ids, reversed(ids)))
    parts = {relabel[f.frame_id]: [(p.psu_id, p.ssu_ids) for p in f.psus] for f in pop.frames}
    ys = {u.unit_id: u.y for u in pop.units}
    pop2 = population_from_partitions(ys, dict(sorted(parts.items())))
    design2 = DesignSpec({relabel[a]: fd for a, fd in design.frames.items()}, design.seed)
    frames = {relabel[a]: replace(fs, frame_id=relabel[a]) for a, fs in draw.frames.items()}
    return pop2, design2, SampleDraw(frames, draw.yields)


def test_criterion_9_estimator_algebra():
    pop, design = desk_instance("three_complete")
    worst = {"scale mean": 0.0, "scale var": 0.0, "shift mean": 0.0}
    bitwise = True
    for r in range(20):
        draw = draw_sample(pop, design, replication=r)
        w = compute_weights(draw, pop, design)
        base = mf_estimate(draw, w)
        scaled = mf_estimate(draw.with_yields({u: 10.0 * y for u, y in draw.yields.items()}), w)
        shifted = mf_estimate(draw.with_yields({u: y + 500.0 for u, y in draw.yields.items()}), w)
        worst["scale mean"] = max(worst["scale mean"], _dev(scaled.mean, 10.0 * base.mean))
        worst["scale var"] = max(worst["scale var"], _dev(scaled.var_est, 100.0 * base.var_est))
        worst["shift mean"] = max(worst["shift mean"], _dev(shifted.mean, base.mean + 500.0))
        pop2, design2, draw2 = _permuted(pop, design, draw)
        bitwise &= mf_estimate(draw2, compute_weights(draw2, pop2, design2)) == base
    eps = sys.float_info.epsilon
    ok = all(v <= 8 * eps for v in worst.values()) and bitwise
    detail = ", ".join(f"{k} rel {v:.1e}" for k, v in worst.items())
    _report(9, ok, f"{detail} (limit {8 * eps:.1e}); frame permutation bit-identical {bitwise}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
