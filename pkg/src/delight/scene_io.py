"""Scene data model and file I/O.

Defines the four shared data types (linear radiance images, pinhole camera
poses, triangle meshes, capture metadata) and the on-disk project layout:

    project/
      cameras.json   {"images": [{"file","fx","fy","cx","cy","R":[9],"t":[3]}]}
      meta.json      {"latitude","longitude","timestamp_utc"}
      mesh.obj       (or mesh.ply, binary little-endian)
      *.pfm / *.exr  linear radiance rasters referenced by cameras.json

Images are kept in linear radiometric space end to end.  PFM is the native
format (little-endian, scale < 0); single-part uncompressed scanline EXR is
supported as an alternative.  Gamma-encoded or integer formats (PNG, JPEG,
TIFF) are rejected: downstream radiometry assumes pixel values proportional
to scene radiance, which those formats do not provide.  Convert RAW/DNG
captures to linear PFM or EXR with an external tool before loading.

World frame is East-North-Up with z pointing up.  Camera poses are
world-to-camera: x_cam = R @ x_world + t, camera looks down +z, pixel
(row i, col j) has its center at (j + 0.5, i + 0.5).

All types are immutable after load and safe to share across workers.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

__all__ = [
    "CameraPose",
    "CaptureMeta",
    "LinearImage",
    "TriangleMesh",
    "SceneIOError",
    "compute_vertex_normals",
    "load_linear_image",
    "load_mesh",
    "load_project",
    "read_pfm",
    "write_linear_image",
    "write_mesh_obj",
    "write_pfm",
]


class SceneIOError(ValueError):
    """Raised for malformed files, schema mismatches, or invariant violations."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearImage:
    """Floating-point RGB raster in linear radiometric space.

    ``pixels`` is (height, width, 3) float32 with finite values >= 0.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3:
            raise SceneIOError(f"expected (H, W, 3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise SceneIOError("zero-sized image")
        if not np.all(np.isfinite(px)):
            raise SceneIOError("image contains non-finite values")
        if px.min() < 0.0:
            raise SceneIOError("image contains negative radiance")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class CameraPose:
    """Pinhole camera: intrinsics in pixels, world-to-camera extrinsics."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray    # (3, 3) world-to-camera
    translation: np.ndarray  # (3,) meters

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise SceneIOError("focal lengths must be positive")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9:
            raise SceneIOError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise SceneIOError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def pixel_rays(self, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
        """Unit world-space ray directions through every pixel center.

        Returns (origins (H*W, 3) all equal to the camera center,
        directions (H*W, 3) unit length), row-major pixel order.
        """
        jj, ii = np.meshgrid(np.arange(width), np.arange(height))
        x = (jj.ravel() + 0.5 - self.cx) / self.fx
        y = (ii.ravel() + 0.5 - self.cy) / self.fy
        d_cam = np.stack([x, y, np.ones_like(x)], axis=1)
        d_world = d_cam @ self.rotation  # == R.T @ d per row
        d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
        origins = np.broadcast_to(self.center, d_world.shape).copy()
        return origins, d_world

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project world points to pixel coordinates; returns ((N,2) xy, (N,) depth)."""
        p = np.atleast_2d(points) @ self.rotation.T + self.translation
        z = p[:, 2]
        u = self.fx * p[:, 0] / z + self.cx
        v = self.fy * p[:, 1] / z + self.cy
        return np.stack([u, v], axis=1), z


@dataclass(frozen=True)
class TriangleMesh:
    """Triangle mesh in world frame (meters, z-up) with unit vertex normals."""

    vertices: np.ndarray        # (V, 3) float64
    faces: np.ndarray           # (F, 3) int32
    vertex_normals: np.ndarray  # (V, 3) float64, unit length

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int32).reshape(-1, 3))
        n = np.ascontiguousarray(np.asarray(self.vertex_normals, dtype=np.float64).reshape(-1, 3))
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise SceneIOError("face index out of range")
        if n.shape != v.shape:
            raise SceneIOError("vertex_normals shape must match vertices")
        lens = np.linalg.norm(n, axis=1)
        if len(n) and np.abs(lens - 1.0).max() > 1e-6:
            raise SceneIOError("vertex normals must be unit length")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "vertex_normals", n)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def diagonal(self) -> float:
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))


@dataclass(frozen=True)
class CaptureMeta:
    """Geotag and UTC capture time driving the solar ephemeris."""

    latitude: float
    longitude: float
    timestamp_utc: datetime
    frame_convention: str = "ENU"

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise SceneIOError(f"latitude {self.latitude} out of [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise SceneIOError(f"longitude {self.longitude} out of [-180, 180]")
        ts = self.timestamp_utc
        if ts.tzinfo is None:
            ts = ts.replace(tzinfo=timezone.utc)
            object.__setattr__(self, "timestamp_utc", ts)
        if not 1900 <= ts.year <= 2100:
            raise SceneIOError(f"timestamp year {ts.year} outside 1900-2100")


def compute_vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals.

    Per-face cross products have magnitude proportional to face area, so
    accumulating them unnormalized and normalizing at the end is exactly
    area weighting.  Vertices with no (or only degenerate) incident faces
    get the up vector so the unit-length invariant always holds.
    """
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    n = np.zeros_like(v)
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    for k in range(3):
        np.add.at(n, f[:, k], fn)
    lens = np.linalg.norm(n, axis=1)
    degenerate = lens < 1e-20
    n[degenerate] = (0.0, 0.0, 1.0)
    lens[degenerate] = 1.0
    return n / lens[:, None]


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------

def read_pfm(path) -> np.ndarray:
    """Read a PFM file; returns float32 (H, W, 3) for 'PF' or (H, W) for 'Pf'.

    Rows in the file are stored bottom-to-top; the returned array is
    top-to-bottom.  Both endiannesses are accepted (scale sign).
    """
    path = Path(path)
    with open(path, "rb") as f:
        data = f.read()
    tokens, offset = [], 0
    while len(tokens) < 4:
        # header tokens separated by arbitrary whitespace, '#' comments allowed
        end = offset
        while end < len(data) and data[end:end + 1] not in b" \t\r\n":
            end += 1
        tok = data[offset:end]
        if tok.startswith(b"#"):
            nl = data.find(b"\n", offset)
            offset = nl + 1
            continue
        if tok:
            tokens.append(tok)
        offset = end + 1
        if offset > len(data):
            raise SceneIOError(f"{path}: truncated PFM header")
    magic, w_s, h_s, scale_s = tokens
    if magic == b"PF":
        channels = 3
    elif magic == b"Pf":
        channels = 1
    else:
        raise SceneIOError(f"{path}: not a PFM file (magic {magic!r})")
    width, height, scale = int(w_s), int(h_s), float(scale_s)
    if width < 1 or height < 1:
        raise SceneIOError(f"{path}: bad PFM dimensions {width}x{height}")
    count = width * height * channels
    dtype = "<f4" if scale < 0 else ">f4"
    raw = data[offset:offset + 4 * count]
    if len(raw) != 4 * count:
        raise SceneIOError(f"{path}: PFM pixel data truncated")
    img = np.frombuffer(raw, dtype=dtype).astype(np.float32)
    img = img.reshape(height, width, channels) if channels == 3 else img.reshape(height, width)
    return np.ascontiguousarray(img[::-1])


def write_pfm(path, image: np.ndarray) -> None:
    """Write float32 data as little-endian PFM ('PF' for 3-channel, 'Pf' for 1)."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    elif arr.ndim == 2:
        magic = b"Pf"
    else:
        raise SceneIOError(f"cannot write array of shape {arr.shape} as PFM")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise SceneIOError("zero-sized image")
    height, width = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n")
        f.write(f"{width} {height}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# EXR (single-part, scanline, uncompressed)
# ---------------------------------------------------------------------------

_EXR_MAGIC = 20000630
_EXR_HALF, _EXR_FLOAT = 1, 2


def _read_exr_attrs(data: bytes, pos: int) -> tuple[dict, int]:
    attrs = {}
    while True:
        end = data.index(b"\0", pos)
        name = data[pos:end].decode("latin-1")
        pos = end + 1
        if name == "":
            return attrs, pos
        end = data.index(b"\0", pos)
        atype = data[pos:end].decode("latin-1")
        pos = end + 1
        size = struct.unpack_from("<i", data, pos)[0]
        pos += 4
        attrs[name] = (atype, data[pos:pos + size])
        pos += size


def read_exr(path) -> np.ndarray:
    """Read a single-part uncompressed scanline EXR with R, G, B channels.

    Supports HALF and FLOAT pixel types, increasing-Y line order, no
    subsampling.  Returns float32 (H, W, 3).
    """
    path = Path(path)
    with open(path, "rb") as f:
        data = f.read()
    magic, version = struct.unpack_from("<ii", data, 0)
    if magic != _EXR_MAGIC:
        raise SceneIOError(f"{path}: not an EXR file")
    if version & 0x200:
        raise SceneIOError(f"{path}: tiled EXR not supported (scanline only)")
    if version & (0x800 | 0x1000):
        raise SceneIOError(f"{path}: deep/multi-part EXR not supported")
    attrs, pos = _read_exr_attrs(data, 8)
    try:
        compression = attrs["compression"][1][0]
        xmin, ymin, xmax, ymax = struct.unpack("<4i", attrs["dataWindow"][1])
        chdata = attrs["channels"][1]
    except KeyError as e:
        raise SceneIOError(f"{path}: missing EXR attribute {e}") from None
    if compression != 0:
        raise SceneIOError(f"{path}: compressed EXR not supported (compression={compression})")
    if "lineOrder" in attrs and attrs["lineOrder"][1][0] != 0:
        raise SceneIOError(f"{path}: only increasing-Y line order supported")
    width, height = xmax - xmin + 1, ymax - ymin + 1

    channels = []  # (name, pixel_type) in file order (alphabetical by spec)
    cpos = 0
    while chdata[cpos] != 0:
        cend = chdata.index(b"\0", cpos)
        cname = chdata[cpos:cend].decode("latin-1")
        ptype, _plin, xs, ys = struct.unpack_from("<iBxxxii", chdata, cend + 1)
        if xs != 1 or ys != 1:
            raise SceneIOError(f"{path}: subsampled channels not supported")
        if ptype not in (_EXR_HALF, _EXR_FLOAT):
            raise SceneIOError(f"{path}: unsupported pixel type {ptype} (integer EXR?)")
        channels.append((cname, ptype))
        cpos = cend + 1 + 16
    names = [c[0] for c in channels]
    if not {"R", "G", "B"} <= set(names):
        raise SceneIOError(f"{path}: need R,G,B channels, found {names}")

    pos += 8 * height  # skip line-offset table; chunks follow contiguously
    planes = {n: np.empty((height, width), np.float32) for n, _ in channels}
    for _ in range(height):
        y, nbytes = struct.unpack_from("<ii", data, pos)
        pos += 8
        row = y - ymin
        for cname, ptype in channels:
            itemsize = 2 if ptype == _EXR_HALF else 4
            dt = "<f2" if ptype == _EXR_HALF else "<f4"
            vals = np.frombuffer(data, dtype=dt, count=width, offset=pos)
            planes[cname][row] = vals.astype(np.float32)
            pos += itemsize * width
    return np.stack([planes["R"], planes["G"], planes["B"]], axis=2)


def write_exr(path, image: np.ndarray) -> None:
    """Write float32 (H, W, 3) as an uncompressed scanline EXR (FLOAT channels)."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise SceneIOError(f"cannot write array of shape {arr.shape} as RGB EXR")
    height, width = arr.shape[:2]
    if height < 1 or width < 1:
        raise SceneIOError("zero-sized image")

    def attr(name: str, atype: str, payload: bytes) -> bytes:
        return name.encode() + b"\0" + atype.encode() + b"\0" + struct.pack("<i", len(payload)) + payload

    chlist = b""
    for cname in ("B", "G", "R"):  # alphabetical, as required by the format
        chlist += cname.encode() + b"\0" + struct.pack("<iBxxxii", _EXR_FLOAT, 0, 1, 1)
    chlist += b"\0"
    box = struct.pack("<4i", 0, 0, width - 1, height - 1)
    header = (
        struct.pack("<ii", _EXR_MAGIC, 2)
        + attr("channels", "chlist", chlist)
        + attr("compression", "compression", b"\0")
        + attr("dataWindow", "box2i", box)
        + attr("displayWindow", "box2i", box)
        + attr("lineOrder", "lineOrder", b"\0")
        + attr("pixelAspectRatio", "float", struct.pack("<f", 1.0))
        + attr("screenWindowCenter", "v2f", struct.pack("<2f", 0.0, 0.0))
        + attr("screenWindowWidth", "float", struct.pack("<f", 1.0))
        + b"\0"
    )
    row_bytes = 8 + 3 * 4 * width
    table_start = len(header)
    data_start = table_start + 8 * height
    offsets = struct.pack(f"<{height}Q", *(data_start + row_bytes * y for y in range(height)))
    with open(path, "wb") as f:
        f.write(header)
        f.write(offsets)
        for y in range(height):
            f.write(struct.pack("<ii", y, 3 * 4 * width))
            f.write(arr[y, :, 2].astype("<f4").tobytes())
            f.write(arr[y, :, 1].astype("<f4").tobytes())
            f.write(arr[y, :, 0].astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# Linear image entry points
# ---------------------------------------------------------------------------

_NONLINEAR_MAGICS = [
    (b"\x89PNG", "PNG"),
    (b"\xff\xd8\xff", "JPEG"),
    (b"II*\x00", "TIFF"),
    (b"MM\x00*", "TIFF"),
    (b"BM", "BMP"),
    (b"GIF8", "GIF"),
    (b"P5", "PGM"),
    (b"P6", "PPM"),
]


def load_linear_image(path) -> LinearImage:
    """Load a linear RGB image (PFM or uncompressed scanline EXR).

    Integer/gamma-encoded formats are rejected: non-linear encoding rejected.
    """
    path = Path(path)
    if not path.is_file():
        raise SceneIOError(f"image file not found: {path}")
    with open(path, "rb") as f:
        head = f.read(8)
    for magic, fmt in _NONLINEAR_MAGICS:
        if head.startswith(magic):
            raise SceneIOError(
                f"{path}: {fmt} input: non-linear encoding rejected "
                "(convert to linear PFM or EXR first)")
    if head.startswith(b"PF"):
        return LinearImage(read_pfm(path))
    if head.startswith(b"Pf"):
        raise SceneIOError(f"{path}: single-channel PFM, expected RGB")
    if head[:4] == struct.pack("<i", _EXR_MAGIC):
        return LinearImage(read_exr(path))
    raise SceneIOError(f"{path}: unrecognized image format")


def write_linear_image(img: LinearImage, path) -> None:
    """Write a LinearImage; format chosen by extension (.pfm default, .exr)."""
    path = Path(path)
    if path.suffix.lower() == ".exr":
        write_exr(path, img.pixels)
    else:
        write_pfm(path, img.pixels)


# ---------------------------------------------------------------------------
# Meshes
# ---------------------------------------------------------------------------

def _load_obj(path: Path) -> TriangleMesh:
    verts, norms, faces = [], [], []
    with open(path, "r") as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vn":
                norms.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise SceneIOError(f"{path}: non-triangle face ({len(parts) - 1} vertices)")
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f_arr = np.asarray(faces, dtype=np.int32).reshape(-1, 3)
    if len(norms) == len(verts) and len(norms) > 0:
        n = np.asarray(norms, dtype=np.float64)
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-20)
    else:
        n = compute_vertex_normals(v, f_arr)
    return TriangleMesh(v, f_arr, n)


def _load_ply(path: Path) -> TriangleMesh:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"ply"):
        raise SceneIOError(f"{path}: not a PLY file")
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("latin-1").splitlines()
    fmt = next((ln.split()[1] for ln in header if ln.startswith("format")), "")
    if fmt != "binary_little_endian":
        raise SceneIOError(f"{path}: only binary little-endian PLY supported, got {fmt!r}")

    ply_types = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
                 "uchar": "u1", "uint8": "u1", "int": "<i4", "int32": "<i4",
                 "uint": "<u4", "uint32": "<u4"}
    elements = []  # (name, count, [(prop_name, dtype) or ("list", count_dt, item_dt, name)])
    for ln in header:
        parts = ln.split()
        if parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if parts[1] == "list":
                elements[-1][2].append(("list", ply_types[parts[2]], ply_types[parts[3]], parts[4]))
            else:
                elements[-1][2].append(("scalar", ply_types[parts[1]], None, parts[2]))

    pos = end
    verts = norms = faces = None
    for name, count, props in elements:
        if name == "vertex":
            dt = np.dtype([(p[3], p[1]) for p in props])
            arr = np.frombuffer(data, dtype=dt, count=count, offset=pos)
            pos += dt.itemsize * count
            verts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
            if all(k in dt.names for k in ("nx", "ny", "nz")):
                norms = np.stack([arr["nx"], arr["ny"], arr["nz"]], axis=1).astype(np.float64)
        elif name == "face":
            lst = props[0]
            if lst[0] != "list":
                raise SceneIOError(f"{path}: face element without list property")
            cnt_dt, item_dt = np.dtype(lst[1]), np.dtype(lst[2])
            out = np.empty((count, 3), dtype=np.int32)
            for i in range(count):
                n = int(np.frombuffer(data, dtype=cnt_dt, count=1, offset=pos)[0])
                pos += cnt_dt.itemsize
                if n != 3:
                    raise SceneIOError(f"{path}: non-triangle face with {n} vertices")
                out[i] = np.frombuffer(data, dtype=item_dt, count=3, offset=pos)
                pos += item_dt.itemsize * 3
            faces = out
        else:
            raise SceneIOError(f"{path}: unsupported PLY element {name!r}")
    if verts is None:
        raise SceneIOError(f"{path}: PLY without vertex element")
    if faces is None:
        faces = np.empty((0, 3), dtype=np.int32)
    if norms is not None:
        lens = np.linalg.norm(norms, axis=1, keepdims=True)
        norms = norms / np.maximum(lens, 1e-20)
    else:
        norms = compute_vertex_normals(verts, faces)
    return TriangleMesh(verts, faces, norms)


def load_mesh(path) -> TriangleMesh:
    """Load an OBJ or binary PLY triangle mesh; computes normals if absent."""
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return _load_obj(path)
    if path.suffix.lower() == ".ply":
        return _load_ply(path)
    raise SceneIOError(f"unsupported mesh format: {path}")


def write_mesh_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w") as f:
        for v in mesh.vertices:
            f.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for n in mesh.vertex_normals:
            f.write(f"vn {float(n[0])!r} {float(n[1])!r} {float(n[2])!r}\n")
        for a, b, c in mesh.faces + 1:
            f.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")


# ---------------------------------------------------------------------------
# Project loading
# ---------------------------------------------------------------------------

_CAMERA_KEYS = {"file", "fx", "fy", "cx", "cy", "R", "t"}


def parse_timestamp(text: str) -> datetime:
    ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def load_capture_meta(path) -> CaptureMeta:
    with open(path) as f:
        doc = json.load(f)
    try:
        return CaptureMeta(
            latitude=float(doc["latitude"]),
            longitude=float(doc["longitude"]),
            timestamp_utc=parse_timestamp(doc["timestamp_utc"]),
            frame_convention=str(doc.get("frame_convention", "ENU")),
        )
    except KeyError as e:
        raise SceneIOError(f"{path}: missing key {e}") from None


def load_cameras_manifest(path) -> list[tuple[str, CameraPose]]:
    with open(path) as f:
        doc = json.load(f)
    if not isinstance(doc, dict) or "images" not in doc:
        raise SceneIOError(f"{path}: expected top-level object with 'images'")
    entries = []
    for i, rec in enumerate(doc["images"]):
        unknown = set(rec) - _CAMERA_KEYS
        if unknown:
            raise SceneIOError(f"{path}: entry {i} has unknown keys {sorted(unknown)}")
        missing = _CAMERA_KEYS - set(rec)
        if missing:
            raise SceneIOError(f"{path}: entry {i} missing keys {sorted(missing)}")
        R = np.asarray(rec["R"], dtype=np.float64)
        if R.size != 9:
            raise SceneIOError(f"{path}: entry {i}: R must have 9 values")
        pose = CameraPose(fx=float(rec["fx"]), fy=float(rec["fy"]),
                          cx=float(rec["cx"]), cy=float(rec["cy"]),
                          rotation=R.reshape(3, 3), translation=np.asarray(rec["t"], dtype=np.float64))
        entries.append((str(rec["file"]), pose))
    return entries


def write_cameras_manifest(path, entries: list[tuple[str, CameraPose]]) -> None:
    doc = {"images": [
        {"file": name, "fx": p.fx, "fy": p.fy, "cx": p.cx, "cy": p.cy,
         "R": [float(x) for x in p.rotation.ravel()],
         "t": [float(x) for x in p.translation]}
        for name, p in entries]}
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)


def load_project(directory) -> tuple[list[tuple[LinearImage, CameraPose]], TriangleMesh, CaptureMeta]:
    """Load a complete project: images with poses, mesh, capture metadata.

    Deterministic: images come back in manifest order, and two loads of the
    same directory produce identical structures.
    """
    directory = Path(directory)
    cams_path = directory / "cameras.json"
    meta_path = directory / "meta.json"
    if not cams_path.is_file():
        raise SceneIOError(f"missing cameras manifest: {cams_path}")
    if not meta_path.is_file():
        raise SceneIOError(f"missing metadata file: {meta_path}")
    mesh_path = None
    for cand in ("mesh.obj", "mesh.ply"):
        if (directory / cand).is_file():
            mesh_path = directory / cand
            break
    if mesh_path is None:
        raise SceneIOError(f"no mesh.obj or mesh.ply in {directory}")

    meta = load_capture_meta(meta_path)
    mesh = load_mesh(mesh_path)
    if len(mesh.faces) == 0:
        raise SceneIOError(f"{mesh_path}: mesh has no faces")

    views = []
    for name, pose in load_cameras_manifest(cams_path):
        img_path = directory / name
        if not img_path.is_file():
            raise SceneIOError(f"cameras.json references missing image: {name}")
        views.append((load_linear_image(img_path), pose))
    return views, mesh, meta
