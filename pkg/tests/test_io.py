import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from orim.errors import PreconditionError
from orim.io import (
    read_config,
    read_matrix,
    read_pgm,
    read_vector,
    write_config,
    write_csv,
    write_mtx,
    write_pgm,
)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_csv_roundtrip_exact(m, n, seed):
    import tempfile
    from pathlib import Path
    M = np.random.default_rng(seed).standard_normal((m, n)) * 10.0 ** np.random.default_rng(seed).integers(-20, 20)
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "m.csv"
        write_csv(p, M)
        assert np.array_equal(read_matrix(p), M)


def test_mtx_roundtrip(tmp_path):
    M = sp.random(20, 15, density=0.2, random_state=0, format="csr")
    write_mtx(tmp_path / "a.mtx", M)
    back = read_matrix(tmp_path / "a.mtx")
    assert sp.issparse(back)
    assert np.array_equal(back.toarray(), M.toarray())


def test_read_vector(tmp_path):
    np.savetxt(tmp_path / "v.csv", np.arange(4.0)[:, None], delimiter=",")
    assert np.array_equal(read_vector(tmp_path / "v.csv"), np.arange(4.0))
    np.savetxt(tmp_path / "m.csv", np.ones((2, 2)), delimiter=",")
    with pytest.raises(PreconditionError):
        read_vector(tmp_path / "m.csv")


def test_missing_and_malformed(tmp_path):
    with pytest.raises(PreconditionError):
        read_matrix(tmp_path / "nope.csv")
    (tmp_path / "bad.csv").write_text("1,2\n3,x\n")
    with pytest.raises(PreconditionError):
        read_matrix(tmp_path / "bad.csv")
    (tmp_path / "inf.csv").write_text("1,inf\n")
    with pytest.raises(PreconditionError):
        read_matrix(tmp_path / "inf.csv")


@pytest.mark.parametrize("binary", [True, False])
def test_pgm_roundtrip(tmp_path, binary):
    img = np.random.default_rng(1).integers(0, 256, (7, 5)) / 255.0
    write_pgm(tmp_path / "i.pgm", img, binary=binary)
    assert np.allclose(read_pgm(tmp_path / "i.pgm"), img)


def test_pgm_16bit_and_clipping(tmp_path):
    img = np.array([[-1.0, 0.5], [2.0, 0.25]])
    write_pgm(tmp_path / "i.pgm", img, maxval=65535)
    back = read_pgm(tmp_path / "i.pgm")
    assert np.allclose(back, np.clip(img, 0, 1), atol=1e-4)


def test_pgm_header_comment(tmp_path):
    (tmp_path / "c.pgm").write_text("P2\n# a comment\n2 1\n# another\n4\n0 4\n")
    assert np.allclose(read_pgm(tmp_path / "c.pgm"), [[0.0, 1.0]])


def test_pgm_malformed(tmp_path):
    (tmp_path / "b.pgm").write_text("P2\n2 2\n255\n1 2 3\n")
    with pytest.raises(PreconditionError):
        read_pgm(tmp_path / "b.pgm")
    (tmp_path / "p6.pgm").write_text("P6\n1 1\n255\n0 0 0\n")
    with pytest.raises(PreconditionError):
        read_pgm(tmp_path / "p6.pgm")


def test_config_roundtrip(tmp_path):
    vals = {"a": "1", "b": "x y", "c": "0.1"}
    write_config(tmp_path / "c.txt", vals)
    assert read_config(tmp_path / "c.txt") == vals


def test_config_comments_and_errors(tmp_path):
    (tmp_path / "c.txt").write_text("# header\na = 1  # trailing\n\nb=2\n")
    assert read_config(tmp_path / "c.txt") == {"a": "1", "b": "2"}
    (tmp_path / "d.txt").write_text("a=1\na=2\n")
    with pytest.raises(PreconditionError, match="duplicate"):
        read_config(tmp_path / "d.txt")
    (tmp_path / "e.txt").write_text("just words\n")
    with pytest.raises(PreconditionError):
        read_config(tmp_path / "e.txt")
