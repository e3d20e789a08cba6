import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from crac.checkpoint import CheckpointError, from_bytes, load, save, to_bytes

f32 = st.floats(-1e6, 1e6, width=32)


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=12), arrays(np.float32, array_shapes(min_dims=0, max_dims=4, max_side=4), elements=f32), max_size=5))
def test_roundtrip_is_exact(tensors):
    back = from_bytes(to_bytes(tensors))
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].tobytes() == tensors[k].tobytes()


def test_file_roundtrip_and_errors(tmp_path):
    t = {"w": np.arange(6, dtype=np.float32).reshape(2, 3), "step": np.array(3)}
    save(t, tmp_path / "a.crck")
    back = load(tmp_path / "a.crck")
    np.testing.assert_array_equal(back["w"], t["w"])
    assert int(back["step"]) == 3
    buf = to_bytes(t)
    with pytest.raises(CheckpointError):
        from_bytes(b"NOPE" + buf[4:])
    with pytest.raises(CheckpointError):
        from_bytes(buf[:-1])
    with pytest.raises(CheckpointError):
        from_bytes(buf + b"\x00")
