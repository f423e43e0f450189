"""On-disk media formats: ASCII PLY, OBJ subset, DEPTH grids, PPM, PGM.

All writers are byte-deterministic for identical inputs. Readers validate
headers strictly and raise FormatError on anything malformed, so round
trips are bit-exact: PLY/OBJ coordinates are quantized to float32 and
printed with 9 significant digits (enough to round-trip binary32 exactly),
images and masks are 8-bit.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import DepthMap, Frame, Image, Mask, PointCloud, TriangleMesh

PLY_PROPERTIES = ["x", "y", "z"]


def _fmt9(value: float) -> str:
    return f"{value:.9g}"


def write_ply(cloud: PointCloud, path) -> None:
    """Write a point cloud as ASCII PLY with float32 precision."""
    pts = cloud.points.astype(np.float32)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    body = [" ".join(_fmt9(c) for c in row) for row in pts.astype(np.float64)]
    Path(path).write_bytes(("\n".join(lines + body) + "\n").encode("ascii"))


def read_ply(path, frame: Frame = Frame.METRIC) -> PointCloud:
    """Read the ASCII PLY subset written by write_ply."""
    try:
        text = Path(path).read_bytes().decode("ascii")
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot read PLY {path}: {exc}") from exc
    lines = text.split("\n")
    expected_head = ["ply", "format ascii 1.0"]
    if lines[:2] != expected_head:
        raise FormatError(f"{path}: bad PLY header {lines[:2]!r}")
    if len(lines) < 7 or not lines[2].startswith("element vertex "):
        raise FormatError(f"{path}: missing 'element vertex' line")
    try:
        count = int(lines[2].split()[2])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: unparseable vertex count") from exc
    for i, prop in enumerate(PLY_PROPERTIES):
        if lines[3 + i] != f"property float {prop}":
            raise FormatError(f"{path}: expected 'property float {prop}'")
    if lines[6] != "end_header":
        raise FormatError(f"{path}: missing end_header")
    body = [ln for ln in lines[7:] if ln]
    if len(body) != count:
        raise FormatError(f"{path}: header declares {count} vertices, found {len(body)}")
    try:
        pts = np.array([[float(tok) for tok in ln.split()] for ln in body], dtype=np.float32)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric vertex line") from exc
    if count and pts.shape != (count, 3):
        raise FormatError(f"{path}: vertex lines are not 'x y z' triples")
    if count == 0:
        pts = np.zeros((0, 3), dtype=np.float32)
    return PointCloud(pts.astype(np.float64), frame)


def write_obj(mesh: TriangleMesh, path) -> None:
    """Write a mesh using only 'v' and triangulated 'f' lines (1-based)."""
    verts = mesh.vertices.astype(np.float32).astype(np.float64)
    out = []
    for v in verts:
        out.append(f"v {_fmt9(v[0])} {_fmt9(v[1])} {_fmt9(v[2])}")
    for t in mesh.triangles:
        out.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    Path(path).write_bytes(("\n".join(out) + "\n").encode("ascii"))


def read_obj(path) -> TriangleMesh:
    """Strict OBJ subset reader: any line that is not v/f is a parse error."""
    try:
        text = Path(path).read_bytes().decode("ascii")
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot read OBJ {path}: {exc}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()  # trailing newline
    verts, tris = [], []
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens:
            raise FormatError(f"{path}:{lineno}: blank line not allowed")
        if tokens[0] == "v" and len(tokens) == 4:
            try:
                verts.append([float(t) for t in tokens[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad vertex coordinates") from exc
        elif tokens[0] == "f" and len(tokens) == 4:
            try:
                idx = [int(t) for t in tokens[1:]]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad face indices") from exc
            if any(i < 1 for i in idx):
                raise FormatError(f"{path}:{lineno}: face indices must be 1-based positive")
            tris.append([i - 1 for i in idx])
        else:
            raise FormatError(f"{path}:{lineno}: unsupported line {line!r}")
    if not verts:
        raise FormatError(f"{path}: no vertices")
    vert_arr = np.array(verts, dtype=np.float32).astype(np.float64)
    return TriangleMesh(vert_arr, np.array(tris, dtype=np.int64))


def write_depth(depth: DepthMap, path) -> None:
    """DEPTH grid file: ASCII header then row-major little-endian float32."""
    header = f"DEPTH {depth.width} {depth.height}\n".encode("ascii")
    payload = depth.values.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_depth(path) -> DepthMap:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read depth file {path}: {exc}") from exc
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing DEPTH header line")
    parts = raw[:nl].split(b" ")
    if len(parts) != 3 or parts[0] != b"DEPTH":
        raise FormatError(f"{path}: bad DEPTH header {raw[:nl]!r}")
    try:
        width, height = int(parts[1]), int(parts[2])
    except ValueError as exc:
        raise FormatError(f"{path}: non-integer dimensions") from exc
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: dimensions must be positive")
    payload = raw[nl + 1 :]
    expected = width * height * 4
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    vals = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    return DepthMap(vals.astype(np.float64))


def _read_pnm_header(raw: bytes, magic: bytes, path) -> tuple[int, int, int]:
    """Parse 'P5\\n<w> <h>\\n255\\n' style headers; returns (w, h, offset)."""
    if not raw.startswith(magic + b"\n"):
        raise FormatError(f"{path}: expected {magic.decode()} magic")
    second = raw.find(b"\n", len(magic) + 1)
    third = raw.find(b"\n", second + 1)
    if second < 0 or third < 0:
        raise FormatError(f"{path}: truncated header")
    dims = raw[len(magic) + 1 : second].split(b" ")
    if len(dims) != 2:
        raise FormatError(f"{path}: bad dimension line")
    try:
        width, height = int(dims[0]), int(dims[1])
    except ValueError as exc:
        raise FormatError(f"{path}: non-integer dimensions") from exc
    if raw[second + 1 : third] != b"255":
        raise FormatError(f"{path}: maxval must be 255")
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: dimensions must be positive")
    return width, height, third + 1


def write_ppm(image: Image, path) -> None:
    """Binary PPM (P6, maxval 255); channels are rounded to 8 bits."""
    data = np.rint(image.pixels * 255.0).astype(np.uint8)
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes(order="C"))


def read_ppm(path) -> Image:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read PPM {path}: {exc}") from exc
    width, height, offset = _read_pnm_header(raw, b"P6", path)
    expected = width * height * 3
    payload = raw[offset:]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Image(data.astype(np.float64) / 255.0)


def write_pgm(mask: Mask, path) -> None:
    """Binary PGM (P5, maxval 255): 0 background, 255 foreground."""
    data = np.where(mask.values, 255, 0).astype(np.uint8)
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes(order="C"))


def read_pgm(path) -> Mask:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read PGM {path}: {exc}") from exc
    width, height, offset = _read_pnm_header(raw, b"P5", path)
    expected = width * height
    payload = raw[offset:]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    bad = ~np.isin(data, (0, 255))
    if bad.any():
        raise FormatError(f"{path}: mask pixels must be 0 or 255")
    return Mask(data == 255)


CHECKPOINT_MAGIC = b"MFPCKPT1"


def write_checkpoint_blob(header: dict, arrays: list[np.ndarray], path) -> None:
    """Low-level checkpoint writer: magic, length-prefixed JSON, raw f32.

    ``header`` must already contain the parameter names/shapes/offsets;
    callers build it via build_checkpoint_header so offsets always agree
    with the payload layout.
    """
    import json

    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_checkpoint_blob(path) -> tuple[dict, list[np.ndarray]]:
    """Inverse of write_checkpoint_blob; validates magic, sizes and shapes."""
    import json

    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {raw[:8]!r}")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated checkpoint")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    header_end = 16 + header_len
    if header_end > len(raw):
        raise FormatError(f"{path}: header length exceeds file size")
    try:
        header = json.loads(raw[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header") from exc
    if "parameters" not in header:
        raise FormatError(f"{path}: header lacks 'parameters'")
    payload = raw[header_end:]
    arrays = []
    for entry in header["parameters"]:
        shape = tuple(entry["shape"])
        offset = entry["offset"]
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + nbytes > len(payload):
            raise FormatError(
                f"{path}: parameter {entry['name']!r} declares shape {shape} "
                f"but payload is too short"
            )
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype="<f4").reshape(shape)
        arrays.append(arr.copy())
    used = sum(
        int(np.prod(tuple(e["shape"]), dtype=np.int64)) * 4 for e in header["parameters"]
    )
    if used != len(payload):
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes but header accounts for {used}"
        )
    return header, arrays


def build_checkpoint_header(names_shapes: list[tuple[str, tuple[int, ...]]], meta: dict) -> dict:
    """Assemble a checkpoint header with byte offsets in declaration order."""
    params = []
    offset = 0
    for name, shape in names_shapes:
        params.append({"name": name, "shape": list(shape), "offset": offset})
        offset += int(np.prod(shape)) * 4
    header = dict(meta)
    header["parameters"] = params
    return header
