import numpy as np
import pytest

from nn.params import BIAS, WEIGHT, Batch, GradSet, LayoutError, ParamSet, zeros_like


def make_set(cls=ParamSet):
    return cls.from_arrays([
        (0, WEIGHT, np.arange(6).reshape(2, 3)),
        (0, BIAS, [1.0, 2.0, 3.0]),
    ])


def test_from_arrays_casts_to_float32():
    p = make_set()
    assert all(e.value.dtype == np.float32 for e in p)
    assert p.layout() == ((0, WEIGHT, (2, 3)), (0, BIAS, (3,)))
    assert p.num_elements() == 9
    assert p.get(0, BIAS).tolist() == [1.0, 2.0, 3.0]
    assert p.get(1, WEIGHT) is None


def test_unknown_role_rejected():
    with pytest.raises(LayoutError):
        ParamSet.from_arrays([(0, 'gamma', [1.0])])


def test_check_layout_names_the_mismatch():
    a = make_set()
    b = ParamSet.from_arrays([(0, WEIGHT, np.zeros((3, 2))), (0, BIAS, np.zeros(3))])
    with pytest.raises(LayoutError, match='entry 0'):
        a.check_layout(b)
    with pytest.raises(LayoutError):
        a.zip_map(ParamSet.from_arrays([(0, WEIGHT, np.zeros((2, 3)))]), np.add)


def test_map_and_zip_map_keep_layout_and_class():
    g = make_set(GradSet)
    doubled = g.map(lambda v: v * 2)
    assert isinstance(doubled, GradSet)
    assert doubled.layout() == g.layout()
    diff = doubled.zip_map(g, np.subtract)
    assert diff.equals(g)
    assert isinstance(zeros_like(g), GradSet)
    assert zeros_like(g).l2_norm() == 0.0


def test_l2_norm_is_global():
    g = GradSet.from_arrays([(0, WEIGHT, [[3.0]]), (0, BIAS, [4.0])])
    assert g.l2_norm() == pytest.approx(5.0)
    assert g.flat().tolist() == [3.0, 4.0]


def test_equals_is_bit_exact():
    a = make_set()
    b = a.map(lambda v: v + np.float32(1e-7))
    assert a.equals(a.map(lambda v: v.copy()))
    assert not a.equals(b)


def test_batch_targets_one_hot_and_soft():
    b = Batch.of(np.zeros((2, 1, 2, 2)), [0, 2])
    assert b.targets(3).tolist() == [[1, 0, 0], [0, 0, 1]]
    soft = Batch.of(np.zeros((1, 4)), [1], soft_targets=[[0.25, 0.75]])
    assert soft.targets(2).tolist() == [[0.25, 0.75]]


def test_batch_validation():
    with pytest.raises(ValueError):
        Batch.of(np.zeros((2, 4)), [0])
    with pytest.raises(ValueError, match='labels must lie'):
        Batch.of(np.zeros((1, 4)), [5]).targets(3)
    sub = Batch.of(np.arange(12).reshape(3, 4), [0, 1, 2]).subset([2, 0])
    assert sub.labels.tolist() == [2, 0]
    assert sub.inputs[0, 0] == 8
