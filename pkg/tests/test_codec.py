import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedgrid.codec import decode_message, encode_message, format_float, messages_equal
from fedgrid.errors import DecodeError, VersionError
from fedgrid.nn import GradientStep, LayerSpec, ModelWeights
from fedgrid.protocol import GradientReport, WeightBroadcast

finite = st.floats(allow_nan=False, allow_infinity=False)


@st.composite
def messages(draw):
    dims = draw(st.lists(st.integers(1, 5), min_size=2, max_size=4))
    ws, bs = [], []
    for i, o in zip(dims[:-1], dims[1:]):
        ws.append(np.array(draw(st.lists(finite, min_size=i * o, max_size=i * o))).reshape(o, i))
        bs.append(np.array(draw(st.lists(finite, min_size=o, max_size=o))))
    rnd = draw(st.integers(0, 10**6))
    if draw(st.booleans()):
        return WeightBroadcast(rnd, ModelWeights(tuple(ws), tuple(bs)))
    return GradientReport(rnd, draw(st.integers(0, 5000)), GradientStep(tuple(ws), tuple(bs)),
                          draw(finite.filter(lambda x: x >= 0)))


@settings(max_examples=150, deadline=None)
@given(messages())
def test_round_trip(m):
    assert messages_equal(decode_message(encode_message(m)), m)


@settings(max_examples=200)
@given(finite)
def test_float_format_is_fixed_width_and_exact(x):
    s = format_float(x)
    assert len(s) == 24
    assert float(s) == x


def sample_report():
    w = ModelWeights((np.ones((3, 2)), np.ones((1, 3))), (np.zeros(3), np.zeros(1)))
    return GradientReport(2, 1, GradientStep(w.weights, w.biases), 0.5)


def test_frame_layout():
    data = encode_message(sample_report())
    (n,) = struct.unpack("<I", data[:4])
    assert n == len(data) - 4
    assert data[4:].startswith(b'{"v":1,"type":"report","round":2,')


@pytest.mark.parametrize("cut", [0, 2, 10, -1])
def test_truncated_payload_raises(cut):
    data = encode_message(sample_report())
    with pytest.raises(DecodeError):
        decode_message(data[:cut] if cut >= 0 else data[:-1])


def test_malformed_json_reports_offset():
    body = b'{"v":1,"type":"report" "round":0}'
    with pytest.raises(DecodeError) as e:
        decode_message(struct.pack("<I", len(body)) + body)
    assert e.value.offset == 4 + body.index(b'"round"')


def test_version_mismatch():
    body = b'{"v":2,"type":"broadcast","round":0,"payload":{}}'
    with pytest.raises(VersionError):
        decode_message(struct.pack("<I", len(body)) + body)


def test_bad_layer_shapes():
    body = b'{"v":1,"type":"broadcast","round":0,"payload":{"layers":[{"shape":[2,2],"w":[1],"b":[0,0]}]}}'
    with pytest.raises(DecodeError):
        decode_message(struct.pack("<I", len(body)) + body)
