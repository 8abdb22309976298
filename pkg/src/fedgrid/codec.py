"""Wire format for protocol messages.

A frame is a 4-byte little-endian body length followed by a UTF-8 JSON
body ``{"v": 1, "type": ..., "round": ..., "payload": {...}}``.  Floats
are written with 17 significant digits and a fixed-width exponent, so
a report's byte length depends only on the layer shapes.
"""
from __future__ import annotations

import json
import math
import struct

import numpy as np

from .errors import DecodeError, VersionError
from .nn import GradientStep, LayerArrays, ModelWeights
from .protocol import GradientReport, WeightBroadcast

VERSION = 1
_HEADER = struct.Struct("<I")


def format_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot encode non-finite value {x}")
    # space instead of "+": JSON numbers cannot carry a plus sign
    mantissa, exponent = f"{x: .16e}".split("e")
    return f"{mantissa}e{int(exponent):+04d}"


def layers_json(arr: LayerArrays) -> str:
    parts = []
    for w, b in zip(arr.weights, arr.biases):
        ws = ",".join(format_float(v) for v in w.ravel())
        bs = ",".join(format_float(v) for v in b)
        parts.append(f'{{"shape":[{w.shape[0]},{w.shape[1]}],"w":[{ws}],"b":[{bs}]}}')
    return "[" + ",".join(parts) + "]"


def encode_message(m: WeightBroadcast | GradientReport) -> bytes:
    if isinstance(m, WeightBroadcast):
        payload = f'{{"layers":{layers_json(m.weights)}}}'
        kind = "broadcast"
    elif isinstance(m, GradientReport):
        payload = (f'{{"federate":{int(m.federate)},"loss":{format_float(m.loss)},'
                   f'"layers":{layers_json(m.step)}}}')
        kind = "report"
    else:
        raise TypeError(f"not a protocol message: {type(m).__name__}")
    body = f'{{"v":{VERSION},"type":"{kind}","round":{int(m.round)},"payload":{payload}}}'
    raw = body.encode("utf-8")
    return _HEADER.pack(len(raw)) + raw


def parse_layers(layers, cls, offset):
    try:
        ws, bs = [], []
        for layer in layers:
            rows, cols = layer["shape"]
            ws.append(np.array(layer["w"], dtype=np.float64).reshape(rows, cols))
            bs.append(np.array(layer["b"], dtype=np.float64).reshape(rows))
        return cls(tuple(ws), tuple(bs))
    except (KeyError, TypeError, ValueError) as exc:
        raise DecodeError(offset, f"bad layer payload ({exc})") from None


def decode_message(data: bytes) -> WeightBroadcast | GradientReport:
    if len(data) < _HEADER.size:
        raise DecodeError(len(data), "truncated length prefix")
    (length,) = _HEADER.unpack_from(data)
    end = _HEADER.size + length
    if len(data) < end:
        raise DecodeError(len(data), f"truncated body: prefix announces {length} bytes, "
                                     f"{len(data) - _HEADER.size} present")
    if len(data) > end:
        raise DecodeError(end, "trailing bytes after message body")
    try:
        text = data[_HEADER.size:end].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError(_HEADER.size + exc.start, "invalid UTF-8") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DecodeError(_HEADER.size + exc.pos, exc.msg) from None
    if not isinstance(obj, dict):
        raise DecodeError(_HEADER.size, "body is not a JSON object")
    if obj.get("v") != VERSION:
        raise VersionError(f"unsupported message version {obj.get('v')!r} (expected {VERSION})")
    try:
        kind, rnd, payload = obj["type"], int(obj["round"]), obj["payload"]
    except (KeyError, TypeError, ValueError):
        raise DecodeError(_HEADER.size, "missing type/round/payload") from None
    if kind == "broadcast":
        return WeightBroadcast(rnd, parse_layers(payload.get("layers"), ModelWeights, _HEADER.size))
    if kind == "report":
        try:
            fed, loss = int(payload["federate"]), float(payload["loss"])
        except (KeyError, TypeError, ValueError):
            raise DecodeError(_HEADER.size, "report lacks federate/loss") from None
        step = parse_layers(payload.get("layers"), GradientStep, _HEADER.size)
        return GradientReport(rnd, fed, step, loss)
    raise DecodeError(_HEADER.size, f"unknown message type {kind!r}")


def messages_equal(a, b) -> bool:
    if type(a) is not type(b) or a.round != b.round:
        return False
    if isinstance(a, WeightBroadcast):
        return a.weights.equals(b.weights)
    return a.federate == b.federate and a.loss == b.loss and a.step.equals(b.step)
