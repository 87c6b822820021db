"""On-disk formats and degradation synthesis.

Images: raw little-endian float32 payload, band-sequential (row-major
within each band), with a text sidecar ``<path>.hdr``::

    width=<int>
    height=<int>
    bands=<int>
    dtype=f32
    range=<lo>,<hi>
    order=bsq

Parameter sets and network weights share one binary container: magic
``VBGS``, a u16 format version, a u32 section count, then sections of
(4-byte tag, u32 byte length, body).  A Gaussian set uses sections META
(counts + value range), RAWP (the raw parameter classes in declared order,
float32) and FBAS (the base feature grid).  Weight files hold one ``SDEW``
section per tensor (u16 name length, name, u8 ndim, u32 dims, float32
payload).  Round-trips are bit-exact at single precision.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigError, FileFormatError, ShapeMismatchError
from .gaussians import GaussianSet, RawGaussianParams
from .image import ImageMeta, MultiBandImage
from .resample import resize
from .sde import Mlp, SdeWeights

MAGIC = b"VBGS"
FORMAT_VERSION = 1
HEADER_SUFFIX = ".hdr"


# ---------------------------------------------------------------------------
# raw image format

def write_image(path, img: MultiBandImage):
    meta = img.meta
    lo, hi = meta.value_range
    header = (
        f"width={meta.width}\n"
        f"height={meta.height}\n"
        f"bands={meta.bands}\n"
        f"dtype=f32\n"
        f"range={lo!r},{hi!r}\n"
        f"order=bsq\n"
    )
    with open(str(path) + HEADER_SUFFIX, "w") as fh:
        fh.write(header)
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(img.data, dtype="<f4").tobytes())


def _parse_header(path) -> dict:
    fields = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise FileFormatError(f"{path}: malformed header line {line!r}")
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    return fields


def read_image(path) -> MultiBandImage:
    header_path = str(path) + HEADER_SUFFIX
    fields = _parse_header(header_path)
    try:
        w = int(fields["width"])
        h = int(fields["height"])
        b = int(fields["bands"])
        lo_s, _, hi_s = fields["range"].partition(",")
        lo, hi = float(lo_s), float(hi_s)
        dtype = fields["dtype"]
        order = fields["order"]
    except (KeyError, ValueError) as exc:
        raise FileFormatError(f"{header_path}: missing or invalid field ({exc})") from exc
    if dtype != "f32":
        raise FileFormatError(f"{header_path}: unsupported dtype {dtype!r}")
    if order != "bsq":
        raise FileFormatError(f"{header_path}: unsupported order {order!r}")
    if w < 1 or h < 1 or b < 1:
        raise FileFormatError(f"{header_path}: non-positive dimensions")
    with open(path, "rb") as fh:
        payload = fh.read()
    expected = 4 * w * h * b
    if len(payload) != expected:
        raise FileFormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(b, h, w)
    return MultiBandImage(ImageMeta(w, h, b, (lo, hi)), data)


# ---------------------------------------------------------------------------
# section container

def _write_container(path, sections):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", FORMAT_VERSION, len(sections)))
        for tag, body in sections:
            if len(tag) != 4:
                raise FileFormatError(f"section tag must be 4 bytes, got {tag!r}")
            fh.write(tag)
            fh.write(struct.pack("<I", len(body)))
            fh.write(body)


def _read_container(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FileFormatError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported format version {version}")
    sections = []
    offset = 10
    for _ in range(count):
        if offset + 8 > len(blob):
            raise FileFormatError(f"{path}: truncated section header")
        tag = blob[offset:offset + 4]
        (length,) = struct.unpack_from("<I", blob, offset + 4)
        offset += 8
        if offset + length > len(blob):
            raise FileFormatError(f"{path}: truncated section {tag!r}")
        sections.append((tag, blob[offset:offset + length]))
        offset += length
    return sections


def _f32_bytes(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def write_gaussian_set(path, raw: RawGaussianParams, meta: ImageMeta, f_base: np.ndarray):
    n, b = raw.count, raw.bands
    if n != meta.npixels or b != meta.bands:
        raise ShapeMismatchError("raw parameters do not match the image meta")
    lo, hi = meta.value_range
    meta_body = struct.pack("<IIIIff", meta.width, meta.height, meta.bands, n, lo, hi)
    rawp_body = b"".join([
        _f32_bytes(raw.x_off), _f32_bytes(raw.y_off),
        _f32_bytes(raw.sigma_x_raw), _f32_bytes(raw.sigma_y_raw),
        _f32_bytes(raw.rho_raw), _f32_bytes(raw.feat_off),
        _f32_bytes(np.array([raw.gamma])),
    ])
    fbas_body = _f32_bytes(f_base)
    _write_container(path, [(b"META", meta_body), (b"RAWP", rawp_body),
                            (b"FBAS", fbas_body)])


def save_gaussian_set(path, gs: GaussianSet):
    write_gaussian_set(path, gs.raw, gs.meta, gs.f_base)


def read_gaussian_set(path):
    """Returns (raw, meta, f_base); values are the stored float32 widened to float64."""
    sections = dict(_read_container(path))
    for tag in (b"META", b"RAWP", b"FBAS"):
        if tag not in sections:
            raise FileFormatError(f"{path}: missing section {tag.decode()}")
    w, h, b, n, lo, hi = struct.unpack("<IIIIff", sections[b"META"])
    if n != w * h:
        raise FileFormatError(f"{path}: count {n} does not equal {w}x{h}")
    meta = ImageMeta(w, h, b, (float(lo), float(hi)))
    body = np.frombuffer(sections[b"RAWP"], dtype="<f4")
    expected = 5 * n + n * b + 1
    if body.size != expected:
        raise FileFormatError(f"{path}: RAWP holds {body.size} values, expected {expected}")
    parts = np.split(body.astype(np.float64), [n, 2 * n, 3 * n, 4 * n, 5 * n, 5 * n + n * b])
    raw = RawGaussianParams(
        x_off=parts[0], y_off=parts[1], sigma_x_raw=parts[2], sigma_y_raw=parts[3],
        rho_raw=parts[4], feat_off=parts[5].reshape(n, b), gamma=float(parts[6][0]),
    )
    f_base = np.frombuffer(sections[b"FBAS"], dtype="<f4")
    if f_base.size != n * b:
        raise FileFormatError(f"{path}: FBAS holds {f_base.size} values, expected {n * b}")
    return raw, meta, f_base.astype(np.float64).reshape(n, b)


def source_image_from_base(meta: ImageMeta, f_base: np.ndarray) -> MultiBandImage:
    """Rebuild the stored source image from the base feature grid."""
    data = f_base.T.reshape(meta.bands, meta.height, meta.width)
    return MultiBandImage(meta, np.ascontiguousarray(data))


# ---------------------------------------------------------------------------
# SDE weight sections

def _sdew_section(name: str, arr: np.ndarray) -> bytes:
    encoded = name.encode()
    parts = [struct.pack("<H", len(encoded)), encoded,
             struct.pack("<B", arr.ndim)]
    parts.extend(struct.pack("<I", d) for d in arr.shape)
    parts.append(_f32_bytes(arr))
    return b"".join(parts)


def _parse_sdew(body: bytes):
    (name_len,) = struct.unpack_from("<H", body, 0)
    name = body[2:2 + name_len].decode()
    pos = 2 + name_len
    (ndim,) = struct.unpack_from("<B", body, pos)
    pos += 1
    dims = struct.unpack_from(f"<{ndim}I", body, pos)
    pos += 4 * ndim
    arr = np.frombuffer(body[pos:], dtype="<f4").astype(np.float64)
    if arr.size != int(np.prod(dims)):
        raise FileFormatError(f"tensor {name!r}: payload does not match shape {dims}")
    return name, arr.reshape(dims)


def _weight_tensors(weights: SdeWeights):
    out = []
    for layer, mlp in enumerate(weights.spatial, start=1):
        prefix = f"spa{layer}"
        out += [(f"{prefix}.w1", mlp.w1), (f"{prefix}.b1", mlp.b1),
                (f"{prefix}.w2", mlp.w2), (f"{prefix}.b2", mlp.b2)]
    for layer, mlp in enumerate(weights.spectral, start=1):
        prefix = f"spe{layer}"
        out += [(f"{prefix}.w1", mlp.w1), (f"{prefix}.b1", mlp.b1),
                (f"{prefix}.w2", mlp.w2), (f"{prefix}.b2", mlp.b2)]
    out += [("fuse.w1", weights.fuse.w1), ("fuse.b1", weights.fuse.b1),
            ("fuse.w2", weights.fuse.w2), ("fuse.b2", weights.fuse.b2)]
    return out


def write_sde_weights(path, weights: SdeWeights):
    weights.validate()
    sections = [(b"SDEW", _sdew_section(name, arr))
                for name, arr in _weight_tensors(weights)]
    _write_container(path, sections)


def read_sde_weights(path) -> SdeWeights:
    tensors = {}
    for tag, body in _read_container(path):
        if tag != b"SDEW":
            continue
        name, arr = _parse_sdew(body)
        tensors[name] = arr

    def mlp(prefix):
        try:
            return Mlp(tensors[f"{prefix}.w1"], tensors[f"{prefix}.b1"],
                       tensors[f"{prefix}.w2"], tensors[f"{prefix}.b2"])
        except KeyError as exc:
            raise FileFormatError(f"{path}: missing weight tensor {exc}") from exc

    spatial = [mlp("spa1"), mlp("spa2")]
    spectral = [mlp("spe1"), mlp("spe2")]
    fuse = mlp("fuse")
    p2 = spatial[0].w2.shape[0]
    patch = int(round(np.sqrt(p2)))
    if patch * patch != p2:
        raise FileFormatError(f"{path}: token count {p2} is not a square patch")
    weights = SdeWeights(spatial=spatial, spectral=spectral, fuse=fuse,
                         patch=patch, channels=spectral[0].w2.shape[0],
                         hidden=spatial[0].w1.shape[0])
    weights.validate()
    return weights


# ---------------------------------------------------------------------------
# degradation synthesis

def synth_degrade(hr: MultiBandImage, r: float, noise_sigma: float, seed: int = 0,
                  noise_scale: float = 255.0) -> MultiBandImage:
    """Bicubic downsample by r, then add seeded Gaussian noise.

    The noise level is interpreted on the ``noise_scale`` grey-level scale
    (default 255, i.e. "level 10" means sigma = 10/255 of the value range)
    and the result is clamped to the value range.
    """
    if not (r > 1.0):
        raise ConfigError(f"degradation requires a scale > 1, got {r}")
    lw = int(hr.meta.width / r)
    lh = int(hr.meta.height / r)
    if lw < 1 or lh < 1:
        raise ConfigError(f"scale {r} collapses {hr.meta.width}x{hr.meta.height} to nothing")
    down = resize(hr, lh, lw, kernel="bicubic")
    lo, hi = hr.meta.value_range
    sigma = noise_sigma / noise_scale * (hi - lo)
    data = down.data
    if sigma > 0.0:
        rng = np.random.default_rng(seed)
        data = data + rng.normal(0.0, sigma, data.shape)
    data = np.clip(data, lo, hi)
    return MultiBandImage(down.meta, data)


# ---------------------------------------------------------------------------
# portable graymap ingestion

def _read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens = []
    pos = 0

    def next_token():
        nonlocal pos
        while pos < len(blob):
            ch = blob[pos:pos + 1]
            if ch == b"#":
                while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                start = pos
                while pos < len(blob) and not blob[pos:pos + 1].isspace():
                    pos += 1
                return blob[start:pos]
        raise FileFormatError(f"{path}: truncated graymap header")

    magic = next_token()
    if magic not in (b"P2", b"P5"):
        raise FileFormatError(f"{path}: not a graymap (magic {magic!r})")
    w = int(next_token())
    h = int(next_token())
    maxval = int(next_token())
    if maxval <= 0 or maxval > 65535:
        raise FileFormatError(f"{path}: invalid maxval {maxval}")
    if magic == b"P2":
        values = np.array(blob[pos:].split(), dtype=np.float64)
        if values.size != w * h:
            raise FileFormatError(f"{path}: expected {w * h} samples, got {values.size}")
        img = values.reshape(h, w)
    else:
        pos += 1  # single whitespace after maxval
        dtype = ">u2" if maxval > 255 else "u1"
        count = w * h
        img = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
        img = img.astype(np.float64).reshape(h, w)
    return img / maxval


def read_pgm_stack(paths, value_range=(0.0, 1.0)) -> MultiBandImage:
    """Stack per-band graymap files (P2/P5) into one image, scaled to the range."""
    bands = [_read_pgm(p) for p in paths]
    shape = bands[0].shape
    for p, band in zip(paths, bands):
        if band.shape != shape:
            raise ShapeMismatchError(f"{p}: band shape {band.shape} differs from {shape}")
    lo, hi = value_range
    data = lo + (hi - lo) * np.stack(bands, axis=0)
    h, w = shape
    return MultiBandImage(ImageMeta(w, h, len(bands), tuple(value_range)), data)
