import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from momderiv.data import DataError, Dataset, IndexInterval, load_csv, write_csv


def _write(path, text):
    path.write_text(text)
    return path


def test_load_with_intercept(tmp_path):
    f = _write(tmp_path / "a.csv", "y,x1\n1,2\n3,4\n5,7\n")
    d = load_csv(f, "y", intercept=True)
    assert (d.n, d.p) == (3, 2)
    assert np.all(d.x[:, 0] == 1)
    assert d.column_names == ("(Intercept)", "x1")
    np.testing.assert_array_equal(d.y, [1, 3, 5])


def test_blank_cell_names_row(tmp_path):
    f = _write(tmp_path / "a.csv", "y,x1\n1,2\n3,\n")
    with pytest.raises(DataError, match="row 3"):
        load_csv(f, "y")


def test_collinear_columns(tmp_path):
    f = _write(tmp_path / "a.csv", "y,x1,x2\n1,2,1\n3,4,2\n5,6,3\n2,8,4\n")
    with pytest.raises(DataError, match="x1.*x2|x2.*x1"):
        load_csv(f, "y", intercept=True)


def test_other_errors(tmp_path):
    with pytest.raises(DataError):
        load_csv(tmp_path / "missing.csv", "y")
    f = _write(tmp_path / "a.csv", "y,x1\n1,abc\n")
    with pytest.raises(DataError, match="column 'x1'"):
        load_csv(f, "y")
    f = _write(tmp_path / "b.csv", "y,x1\n1,2\n")
    with pytest.raises(DataError, match="response column"):
        load_csv(f, "z")
    with pytest.raises(DataError):
        Dataset([1.0], np.ones((1, 2)))
    with pytest.raises(DataError):
        Dataset([1.0, np.nan], np.ones((2, 1)))


def test_arrays_are_read_only():
    d = Dataset([1.0, 2.0], [[1.0], [1.0]])
    with pytest.raises(ValueError):
        d.y[0] = 5.0


def test_interval():
    assert IndexInterval(0, 1).contains(0.5)
    with pytest.raises(ValueError):
        IndexInterval(1, 1)


@given(arrays(np.float64, (12, 3), elements=st.floats(-1e6, 1e6, allow_subnormal=False)))
def test_round_trip_bit_exact(tmp_path_factory, m):
    x = np.column_stack([np.ones(12), m[:, 1:], np.arange(12.0) ** 2])
    try:
        d = Dataset(m[:, 0], x, ("(Intercept)", "a", "b", "c"))
    except DataError:
        return
    f = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(d, f, intercept=True)
    back = load_csv(f, "y", intercept=True)
    np.testing.assert_array_equal(back.x, d.x)
    np.testing.assert_array_equal(back.y, d.y)
    assert back.column_names == d.column_names
