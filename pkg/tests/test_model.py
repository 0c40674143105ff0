import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpmrf.model import (
    CliqueTableSet,
    Dataset,
    DomainError,
    DomainSpec,
    ModelStructure,
    StructureError,
    config_assignment,
    config_index,
    log_density,
    log_likelihood,
    margin,
    shared_margin_gap,
    sufficient_statistics,
)


def test_config_index_examples():
    assert config_index((3, 3), (0, 0)) == 0
    assert config_index((3, 3), (2, 2)) == 8
    assert config_index((3, 3), (1, 2)) == 5


def test_config_index_rejects_out_of_range():
    with pytest.raises(DomainError):
        config_index((3, 3), (3, 0))
    with pytest.raises(DomainError):
        config_index((3, 3), (0,))


@given(st.lists(st.integers(1, 4), min_size=1, max_size=4).flatmap(
    lambda shape: st.tuples(st.just(tuple(shape)), st.integers(0, int(np.prod(shape)) - 1))))
def test_config_index_roundtrip(case):
    shape, idx = case
    assert config_index(shape, config_assignment(shape, idx)) == idx


def test_structure_validation():
    dom = DomainSpec.uniform(3, 2)
    with pytest.raises(StructureError):
        ModelStructure(dom, ((),))
    with pytest.raises(StructureError):
        ModelStructure(dom, ((0, 3),))
    with pytest.raises(StructureError):
        ModelStructure(dom, ((0, 1), (0, 1)))
    with pytest.raises(StructureError):
        ModelStructure(dom, ((1, 0),))
    with pytest.raises(DomainError):
        DomainSpec((2, 0))


def test_layout_and_edges():
    s = ModelStructure(DomainSpec((2, 3, 4)), ((0, 1), (1, 2), (2,)))
    assert s.dim == 6 + 12 + 4
    assert list(s.offsets) == [0, 6, 18, 22]
    assert s.edges() == {(0, 1), (1, 2)}
    assert s.clique_key(1) == "1-2"


def test_sufficient_statistics_examples():
    s = ModelStructure(DomainSpec.uniform(2, 2), ((0, 1),))
    n = sufficient_statistics(Dataset(np.array([[0, 0], [0, 1]])), s)
    assert n.values.tolist() == [1, 1, 0, 0]

    s3 = ModelStructure(DomainSpec.uniform(3, 2), ((0, 1), (1, 2), (0, 2)))
    n = sufficient_statistics(Dataset(np.array([[1, 0, 1]]), weights=np.array([1 / 3])), s3)
    assert np.allclose(n.totals(), 1 / 3)


def test_sufficient_statistics_rejects_bad_records():
    s = ModelStructure(DomainSpec.uniform(2, 2), ((0, 1),))
    with pytest.raises(DomainError):
        sufficient_statistics(Dataset(np.array([[0, 2]])), s)
    with pytest.raises(DomainError):
        sufficient_statistics(Dataset(np.array([[0, 1, 0]])), s)
    with pytest.raises(DomainError):
        Dataset(np.array([[0, 1]]), weights=np.array([-1.0]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_counts_are_in_the_polytope(seed):
    rng = np.random.default_rng(seed)
    s = ModelStructure(DomainSpec((2, 3, 2, 3)), ((0, 1), (1, 2), (2, 3), (1,)))
    recs = np.column_stack([rng.integers(0, c, size=40) for c in s.domain.cardinalities])
    n = sufficient_statistics(Dataset(recs), s)
    n.check()
    assert np.allclose(n.totals(), 40)
    assert shared_margin_gap(n) == 0


def test_table_roles_are_checked():
    s = ModelStructure(DomainSpec.uniform(2, 2), ((0,), (0, 1)))
    bad = CliqueTableSet(s, np.array([0.5, 0.5, 0.7, 0.0, 0.0, 0.3]), "marginal")
    with pytest.raises(DomainError):
        bad.check()
    with pytest.raises(ValueError):
        CliqueTableSet(s, np.zeros(6), "unknown")
    with pytest.raises(DomainError):
        CliqueTableSet(s, np.zeros(5), "counts")


def test_margin():
    t = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(margin(t, (2, 5), (5,)), t.sum(axis=0))
    assert np.array_equal(margin(t, (2, 5), (2, 5)), t)


def test_uniform_model_density():
    s = ModelStructure(DomainSpec.uniform(2, 2), ((0, 1),))
    for x in [(0, 0), (1, 0), (1, 1)]:
        assert log_density(x, np.zeros(4), np.log(4.0), s) == pytest.approx(-np.log(4))


def test_log_likelihood_uses_table_total():
    s = ModelStructure(DomainSpec.uniform(2, 2), ((0, 1),))
    n = CliqueTableSet(s, np.array([3.0, 1, 0, 0]), "counts")
    theta = np.array([0.5, 0, 0, 0])
    assert log_likelihood(n, theta, 2.0) == pytest.approx(1.5 - 4 * 2.0)
