import pytest

from mfyield.frames import (
    DomainKey,
    FrameError,
    Psu,
    UnitRecord,
    build_population,
    domain_of,
    population_from_partitions,
)


def test_counts_on_small_frame():
    pop = population_from_partitions(
        {"a": 1.0, "b": 2.0, "c": 3.0, "d": 4.0}, {1: [("p1", ("a", "b")), ("p2", ("c", "d"))]}
    )
    f = pop.frame(1)
    assert (f.N, f.M0, f.Mbar) == (2, 4, 2.0)
    assert [p.M for p in f.psus] == [2, 2]


def test_declared_sizes_give_fractional_mbar():
    sizes = [147, 247] + [355] * 18
    sizes[-1] += 6749 - sum(sizes)
    parts = [(f"d{k}", (f"v{k}",), s) for k, s in enumerate(sizes)]
    pop = population_from_partitions({f"v{k}": 1.0 for k in range(20)}, {1: parts})
    assert pop.frame(1).M0 == 6749
    assert pop.frame(1).Mbar == pytest.approx(337.45, abs=1e-12)


def test_listed_unit_must_agree_with_membership():
    units = [UnitRecord("a", {1: "p1"}), UnitRecord("b", {1: "p1"})]
    with pytest.raises(FrameError, match="membership says"):
        build_population(units, [(1, [("p1", ("a", "b"))]), (2, [("q1", ("b",))])])


def test_unit_declared_in_frame_but_unlisted():
    units = [UnitRecord("a", {1: "p1", 2: "q1"}), UnitRecord("b", {1: "p1", 2: "q1"})]
    with pytest.raises(FrameError, match="absent from its psus"):
        build_population(units, [(1, [("p1", ("a", "b"))]), (2, [("q1", ("a",), 3)])])


@pytest.mark.parametrize(
    "units, specs, message",
    [
        ([UnitRecord("a", {1: "p"}), UnitRecord("a", {1: "p"})], [(1, [("p", ("a",))])], "duplicate unit"),
        ([UnitRecord("a", {})], [(1, [("p", ("a",))])], "no frame"),
        (
            [UnitRecord("a", {1: "p"}), UnitRecord("b", {1: "q"})],
            [(1, [("p", ("a",)), ("q", ("b", "a"))])],
            "listed in psus",
        ),
        ([UnitRecord("a", {1: "p"})], [(1, [("p", ("a",))]), (1, [("p", ("a",))])], "duplicate frame"),
    ],
)
def test_validation_errors(units, specs, message):
    with pytest.raises(FrameError, match=message):
        build_population(units, specs)


def test_psu_declared_size_cannot_undercount():
    with pytest.raises(FrameError):
        Psu("p", ("a", "b"), 1)


def test_domains(three_frame):
    assert domain_of(three_frame.unit("u1")) == DomainKey({1, 2, 3})
    assert domain_of(three_frame.unit("u8")) == DomainKey({1, 2})
    doms = three_frame.domains()
    assert len(doms) <= 2 ** 3 - 1
    covered = sorted(u for us in doms.values() for u in us)
    assert covered == sorted(u.unit_id for u in three_frame.units)


def test_domain_of_single_frame_unit():
    pop = population_from_partitions({"a": 1.0, "b": 2.0}, {1: [("p", ("a", "b"))], 2: [("q", ("b",))]})
    assert domain_of(pop.unit("a")).frame_set == {1}
    assert str(domain_of(pop.unit("b"))) == "{1,2}"


def test_domain_key_stable_under_frame_reordering():
    parts = {1: [("p", ("a", "b"))], 2: [("q", ("b",))]}
    fwd = population_from_partitions({"a": 1.0, "b": 2.0}, parts)
    rev = population_from_partitions({"a": 1.0, "b": 2.0}, dict(reversed(list(parts.items()))))
    assert fwd.domains() == rev.domains()


def test_m0_is_sum_of_psu_sizes(three_frame):
    for f in three_frame.frames:
        assert f.M0 == sum(p.M for p in f.psus)
