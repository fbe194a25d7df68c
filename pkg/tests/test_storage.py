import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cstyle import storage
from cstyle.datagen import default_family, generate_dataset
from cstyle.desknet import DeskNet
from cstyle.errors import FormatError, MissingArtifactError
from cstyle.style_stats import GaussianStyle
from cstyle.unified import UnifiedDomain


def test_header_layout():
    buf = storage.encode_tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert buf[:4] == b"CSTN"
    assert buf[4] == 1
    assert struct.unpack("<III", buf[5:17]) == (2, 2, 3)
    assert np.frombuffer(buf[17:], dtype="<f4").tolist() == [0, 1, 2, 3, 4, 5]
    assert storage.payload_offset((2, 3)) == 17


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.lists(st.integers(0, 4), min_size=0, max_size=4).map(tuple),
              elements=st.floats(width=32, allow_nan=False)))
def test_round_trip_bit_exact(arr):
    back = storage.decode_tensor(storage.encode_tensor(arr))
    assert back.dtype == np.float32
    assert back.shape == arr.shape
    assert back.tobytes() == np.ascontiguousarray(arr).tobytes()


def test_float64_input_rounded_once():
    x = np.array([0.1, 1 / 3])
    back = storage.decode_tensor(storage.encode_tensor(x))
    np.testing.assert_array_equal(back, x.astype(np.float32))
    assert storage.encode_tensor(back) == storage.encode_tensor(x)


@pytest.mark.parametrize("buf", [b"", b"XXXX\x01\x00\x00\x00\x00", b"CSTN\x02\x00\x00\x00\x00",
                                 b"CSTN\x01\x01\x00\x00\x00\x03\x00\x00\x00" + b"\x00" * 8])
def test_malformed(buf):
    with pytest.raises(FormatError):
        storage.decode_tensor(buf)


def test_missing_file(tmp_path):
    with pytest.raises(MissingArtifactError):
        storage.read_tensor(tmp_path / "nope.cstn")


def test_dataset_round_trip(tmp_path):
    data = generate_dataset(default_family(0), 4, 3, seed=5)
    storage.save_dataset(tmp_path, data)
    back = storage.load_dataset(tmp_path)
    assert back.inputs.tobytes() == data.inputs.tobytes()
    np.testing.assert_array_equal(back.labels, data.labels)
    np.testing.assert_array_equal(back.domains, data.domains)
    assert back.specs == data.specs
    assert back.n_classes == 4 and back.seed == 5
    # manifest offsets point at each sample's bytes
    raw = (tmp_path / "inputs.cstn").read_bytes()
    for row in storage.read_csv(tmp_path / "manifest.csv")[:5]:
        i, off = int(row["sample_id"]), int(row["file_offset"])
        chunk = np.frombuffer(raw, dtype="<f4", count=3 * 16 * 16, offset=off).reshape(3, 16, 16)
        np.testing.assert_array_equal(chunk, data.inputs[i])


def test_model_and_unified_round_trip(tmp_path):
    net = DeskNet(4, seed=3)
    net.params = storage.quantize(net.params)
    rng = np.random.default_rng(0)
    a = rng.standard_normal((16, 16))
    unified = UnifiedDomain(GaussianStyle(rng.standard_normal(16), a @ a.T), "barycenter", 7, 1e-11, True)
    storage.save_model(tmp_path, net, {"mode": "conststyle"}, unified, net.params[:10])
    net2, info, uni2, initial = storage.load_model(tmp_path)
    np.testing.assert_array_equal(net2.params, net.params)
    assert info == {"mode": "conststyle"}
    np.testing.assert_array_equal(uni2.mean, storage.quantize(unified.mean))
    np.testing.assert_array_equal(uni2.cov, storage.quantize(unified.cov))
    assert (uni2.method, uni2.iterations, uni2.residual, uni2.converged) == ("barycenter", 7, 1e-11, True)
    np.testing.assert_array_equal(initial, net.params[:10])
    # saving what was loaded reproduces every file byte for byte
    first = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    out = tmp_path / "again"
    storage.save_model(out, net2, info, uni2, initial)
    for p in out.iterdir():
        assert p.read_bytes() == first[p.name], p.name


def test_csv_format(tmp_path):
    storage.write_csv(tmp_path / "a.csv", ("a", "b", "c", "d"), [(1, 0.1, True, float("nan"))])
    assert (tmp_path / "a.csv").read_bytes() == b"a,b,c,d\n1,0.1,1,nan\n"
