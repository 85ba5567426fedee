"""Weight file serialization and seeded weight generation.

File layout (little-endian):
    "FWS1"                      4-byte magic
    u32 layer_count
    per layer:
        u32 in_channels
        u32 out_channels
        u8  requant_shift, 3 pad bytes
        i8  weights, out-major / in-major / row / col  (out*in*9 bytes)
        i32 biases (out * 4 bytes)
"""

import struct

import numpy as np

from .nncore import KERNEL, LayerSpec, NetworkSpec, QuantParams, WeightSet

MAGIC = b"FWS1"
WEIGHT_LO, WEIGHT_HI = -64, 63  # generated weights stay well clear of i8 extremes
BIAS_LO, BIAS_HI = -2048, 2047


class WeightFileError(ValueError):
    pass


def save_weights(path, net: NetworkSpec, weights: WeightSet) -> None:
    weights.check_matches(net)
    parts = [MAGIC, struct.pack("<I", net.num_layers)]
    for spec, q, w, b in zip(net.layers, net.quant, weights.weights, weights.biases):
        parts.append(struct.pack("<IIB3x", spec.in_channels, spec.out_channels, q.requant_shift))
        parts.append(np.ascontiguousarray(w).tobytes())
        parts.append(b.astype("<i4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def _network_from_chain(in_out: list, shifts: list) -> NetworkSpec:
    """Rebuild the network a weight file describes: ReLU on every layer but
    the last, which carries the residual add."""
    layers = []
    for i, (cin, cout) in enumerate(in_out):
        last = i == len(in_out) - 1
        layers.append(LayerSpec(cin, cout, has_relu=not last, has_residual_add=last))
    s2, rem = divmod(in_out[-1][1], in_out[0][0])
    s = int(round(s2**0.5))
    if rem or s * s != s2:
        raise WeightFileError(
            f"cannot infer upscale factor from channels {in_out[0][0]} -> {in_out[-1][1]}"
        )
    return NetworkSpec(tuple(layers), s, tuple(QuantParams(x) for x in shifts))


def load_weights(path, expected_net: NetworkSpec = None):
    """Returns (NetworkSpec, WeightSet); validates against expected_net if given."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise WeightFileError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < 8:
        raise WeightFileError("file too short for a layer count")
    (count,) = struct.unpack_from("<I", buf, 4)
    if expected_net is not None and count != expected_net.num_layers:
        raise WeightFileError(
            f"file has {count} layers, expected {expected_net.num_layers}"
        )
    pos = 8
    in_out, shifts, ws, bs = [], [], [], []
    for i in range(count):
        if pos + 12 > len(buf):
            raise WeightFileError(f"layer {i}: truncated header at offset {pos}")
        cin, cout, shift = struct.unpack_from("<IIB", buf, pos)
        pos += 12
        wn = cout * cin * KERNEL * KERNEL
        if pos + wn + 4 * cout > len(buf):
            raise WeightFileError(
                f"layer {i}: need {wn + 4 * cout} payload bytes at offset {pos}, "
                f"file has {len(buf) - pos}"
            )
        w = np.frombuffer(buf, dtype=np.int8, count=wn, offset=pos).reshape(
            cout, cin, KERNEL, KERNEL
        )
        pos += wn
        b = np.frombuffer(buf, dtype="<i4", count=cout, offset=pos).astype(np.int32)
        pos += 4 * cout
        in_out.append((cin, cout))
        shifts.append(shift)
        ws.append(w.copy())
        bs.append(b)
    if pos != len(buf):
        raise WeightFileError(f"{len(buf) - pos} trailing bytes after layer {count - 1}")
    net = _network_from_chain(in_out, shifts)
    weights = WeightSet(ws, bs)
    if expected_net is not None:
        weights.check_matches(expected_net)
        if tuple(q.requant_shift for q in net.quant) != tuple(
            q.requant_shift for q in expected_net.quant
        ):
            raise WeightFileError("requant shifts in file differ from the expected network")
    return net, weights


def gen_weights(seed: int, net: NetworkSpec) -> WeightSet:
    """Deterministic random weights: numpy PCG64 streams are stable across
    platforms and versions, weights uniform in [-64, 63], biases small i32."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for spec in net.layers:
        ws.append(
            rng.integers(
                WEIGHT_LO,
                WEIGHT_HI + 1,
                size=(spec.out_channels, spec.in_channels, KERNEL, KERNEL),
                dtype=np.int8,
            )
        )
        bs.append(
            rng.integers(BIAS_LO, BIAS_HI + 1, size=spec.out_channels, dtype=np.int32)
        )
    return WeightSet(ws, bs)


def gen_image(seed: int, channels: int, height: int, width: int):
    """Deterministic random u8 image for seeded runs."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(channels, height, width), dtype=np.uint8)
