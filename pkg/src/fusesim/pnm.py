"""Binary PPM (P6) / PGM (P5) reader and writer, 8-bit only.

Chosen over compressed formats so the image path stays bit-exact with no
decoder in the loop.  Parse errors carry the byte offset where the header
or payload went wrong.
"""

import numpy as np

from .nncore import PlanarTensor


class PnmError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _next_token(buf: bytes, pos: int):
    """Skip whitespace and '#' comments, return (token, new_pos)."""
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PnmError("unexpected end of header", start)
    return buf[start:pos], pos


def decode(buf: bytes) -> PlanarTensor:
    magic, pos = _next_token(buf, 0)
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise PnmError(f"unsupported magic {magic!r}; need binary P5 or P6", 0)
    fields = []
    for name in ("width", "height", "maxval"):
        tok, pos = _next_token(buf, pos)
        if not tok.isdigit():
            raise PnmError(f"bad {name} field {tok!r}", pos - len(tok))
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise PnmError(f"only 8-bit images supported, maxval is {maxval}", pos)
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PnmError("missing single whitespace after maxval", pos)
    pos += 1
    expected = width * height * channels
    payload = buf[pos : pos + expected]
    if len(payload) != expected:
        raise PnmError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}", pos
        )
    raster = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return PlanarTensor(np.ascontiguousarray(raster.transpose(2, 0, 1)))


def encode(image: PlanarTensor) -> bytes:
    if image.kind != "activation":
        raise ValueError("can only encode u8 activation tensors")
    if image.channels == 3:
        magic = b"P6"
    elif image.channels == 1:
        magic = b"P5"
    else:
        raise ValueError(f"PNM supports 1 or 3 channels, got {image.channels}")
    header = b"%s\n%d %d\n255\n" % (magic, image.width, image.height)
    return header + image.data.transpose(1, 2, 0).tobytes()


def load_image(path) -> PlanarTensor:
    with open(path, "rb") as f:
        return decode(f.read())


def save_image(path, image: PlanarTensor) -> None:
    with open(path, "wb") as f:
        f.write(encode(image))
