"""Flat parameter vectors and the FLSIM1 checkpoint format."""
import struct

import numpy as np
import pytest

from fedsim.params import (
    MAGIC,
    FormatError,
    ParameterVector,
    layout_size,
    load_params,
    save_params,
    zeros,
)

LAYOUT = (("W", (3, 2)), ("b", (3,)))


def test_layout_size():
    assert layout_size(LAYOUT) == 9
    assert layout_size((("s", ()),)) == 1
    assert layout_size(()) == 0


def test_vector_checks_length():
    ParameterVector(np.arange(9.0), LAYOUT)
    with pytest.raises(ValueError):
        ParameterVector(np.arange(8.0), LAYOUT)


def test_unpack_views_into_flat_storage():
    pv = ParameterVector(np.arange(9.0), LAYOUT)
    parts = pv.unpack()
    assert parts["W"].shape == (3, 2)
    assert parts["b"].shape == (3,)
    parts["b"][0] = 42.0
    assert pv.values[6] == 42.0


def test_arithmetic():
    a = ParameterVector(np.arange(9.0), LAYOUT)
    b = ParameterVector(np.ones(9), LAYOUT)
    assert np.array_equal((a + b).values, np.arange(9.0) + 1)
    assert np.array_equal((a - b).values, np.arange(9.0) - 1)
    assert np.array_equal((2 * a).values, (a * 2).values)
    assert np.array_equal((-a).values, -np.arange(9.0))
    assert len(a) == 9
    assert a.norm() == pytest.approx(np.linalg.norm(np.arange(9)))


def test_mixed_layouts_rejected():
    a = ParameterVector(np.arange(9.0), LAYOUT)
    b = ParameterVector(np.arange(4.0), (("W", (2, 2)),))
    with pytest.raises(ValueError):
        a + b
    with pytest.raises(ValueError):
        a - b


def test_copy_is_independent():
    a = zeros(LAYOUT)
    c = a.copy()
    c.values[0] = 5.0
    assert a.values[0] == 0.0


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    layout = (("W1", (4, 3)), ("b1", (4,)), ("scalar", ()))
    pv = ParameterVector(rng.standard_normal(layout_size(layout)), layout)
    path = tmp_path / "model.ckpt"
    save_params(pv, path)
    back = load_params(path)
    assert back.layout == pv.layout
    assert np.array_equal(back.values, pv.values)


def test_golden_bytes(tmp_path):
    # hand-assembled checkpoint: one entry "w" of shape (2,)
    golden = (
        MAGIC
        + struct.pack("<I", 1)
        + struct.pack("<I", 1) + b"w"
        + struct.pack("<I", 1) + struct.pack("<I", 2)
        + np.array([1.0, -2.0], dtype="<f8").tobytes()
    )
    path = tmp_path / "golden.ckpt"
    path.write_bytes(golden)
    pv = load_params(path)
    assert pv.layout == (("w", (2,)),)
    assert np.array_equal(pv.values, [1.0, -2.0])

    out = tmp_path / "rewritten.ckpt"
    save_params(pv, out)
    assert out.read_bytes() == golden


def test_bad_magic_offset(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE01" + b"\x00" * 16)
    with pytest.raises(FormatError) as err:
        load_params(path)
    assert err.value.offset == 0


def test_truncated_entry_count(tmp_path):
    path = tmp_path / "trunc.ckpt"
    path.write_bytes(MAGIC + b"\x01")
    with pytest.raises(FormatError) as err:
        load_params(path)
    assert err.value.offset == len(MAGIC)


def test_truncated_name(tmp_path):
    data = MAGIC + struct.pack("<I", 1) + struct.pack("<I", 5) + b"ab"
    path = tmp_path / "name.ckpt"
    path.write_bytes(data)
    with pytest.raises(FormatError) as err:
        load_params(path)
    assert err.value.offset == len(MAGIC) + 8


def test_truncated_values(tmp_path):
    pv = ParameterVector(np.arange(9.0), LAYOUT)
    path = tmp_path / "cut.ckpt"
    save_params(pv, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(FormatError, match="truncated values"):
        load_params(path)


def test_trailing_bytes(tmp_path):
    pv = ParameterVector(np.arange(9.0), LAYOUT)
    path = tmp_path / "extra.ckpt"
    save_params(pv, path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError, match="trailing"):
        load_params(path)
