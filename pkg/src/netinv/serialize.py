"""On-disk formats: NINV checkpoints, PGM/PPM image grids, CSV reports."""

import csv
import io
import json
import struct
import zlib

import numpy as np

from .errors import ContractError, FormatError
from .models import Classifier, ClassifierSpec, Generator, GeneratorSpec

MAGIC = b"NINV"
FORMAT_VERSION = 1


def _descriptor(model, seed=0, meta=None):
    if isinstance(model, Classifier):
        kind, spec = "classifier", model.spec
        fields = dict(kind=spec.kind, in_shape=list(spec.in_shape),
                      hidden=list(spec.hidden), conv_channels=list(spec.conv_channels),
                      conv_hidden=spec.conv_hidden, classes=spec.classes)
    elif isinstance(model, Generator):
        kind, spec = "generator", model.spec
        fields = dict(z_dim=spec.z_dim, cond_mode=spec.cond_mode,
                      cond_dim=spec.cond_dim, classes=spec.classes,
                      dropout=spec.dropout, hidden=list(spec.hidden),
                      out_shape=list(spec.out_shape), cond_seed=spec.cond_seed)
    else:
        raise ContractError(f"cannot serialize object of type {type(model).__name__}")
    return json.dumps({"model": kind, "spec": fields, "seed": seed,
                       "meta": meta or {}}, sort_keys=True)


def _model_from_descriptor(desc):
    info = json.loads(desc)
    fields = info["spec"]
    if info["model"] == "classifier":
        spec = ClassifierSpec(kind=fields["kind"], in_shape=tuple(fields["in_shape"]),
                              hidden=tuple(fields["hidden"]),
                              conv_channels=tuple(fields["conv_channels"]),
                              conv_hidden=fields["conv_hidden"], classes=fields["classes"])
        return Classifier(spec), info
    if info["model"] == "generator":
        spec = GeneratorSpec(z_dim=fields["z_dim"], cond_mode=fields["cond_mode"],
                             cond_dim=fields["cond_dim"], classes=fields["classes"],
                             dropout=fields["dropout"], hidden=tuple(fields["hidden"]),
                             out_shape=tuple(fields["out_shape"]),
                             cond_seed=fields["cond_seed"])
        return Generator(spec), info
    raise FormatError(f"unknown model kind {info['model']!r} in checkpoint")


def save_checkpoint(model, path, seed=0, meta=None):
    """Binary layout: magic, version, descriptor, tensors, trailing CRC32."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    desc = _descriptor(model, seed=seed, meta=meta).encode("utf-8")
    buf.write(struct.pack("<I", len(desc)))
    buf.write(desc)
    params = model.params
    buf.write(struct.pack("<I", len(params)))
    for name, tensor in params.items():
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        data = np.asarray(tensor.data, dtype="<f4")
        buf.write(struct.pack("<I", data.ndim))
        for dim in data.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(data.tobytes())
    payload = buf.getvalue()
    with open(path, "wb") as f:
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_checkpoint(path):
    """-> (model, info dict). Distinct errors for magic, version and CRC."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12:
        raise FormatError(f"checkpoint {path} truncated ({len(blob)} bytes)")
    payload, crc_bytes = blob[:-4], blob[-4:]
    want_crc, = struct.unpack("<I", crc_bytes)
    got_crc = zlib.crc32(payload) & 0xFFFFFFFF
    if got_crc != want_crc:
        raise FormatError(f"checkpoint CRC mismatch: stored 0x{want_crc:08x}, "
                          f"computed 0x{got_crc:08x}")
    buf = io.BytesIO(payload)
    magic = buf.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r} (expected {MAGIC!r})")
    version, = struct.unpack("<I", buf.read(4))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    dlen, = struct.unpack("<I", buf.read(4))
    desc = buf.read(dlen).decode("utf-8")
    model, info = _model_from_descriptor(desc)
    count, = struct.unpack("<I", buf.read(4))
    loaded = {}
    for _ in range(count):
        nlen, = struct.unpack("<I", buf.read(4))
        name = buf.read(nlen).decode("utf-8")
        rank, = struct.unpack("<I", buf.read(4))
        shape = struct.unpack(f"<{rank}I", buf.read(4 * rank))
        n_vals = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(buf.read(4 * n_vals), dtype="<f4").reshape(shape)
        loaded[name] = data.copy()
    if set(loaded) != set(model.params):
        raise FormatError(f"checkpoint tensors {sorted(loaded)} do not match "
                          f"architecture parameters {sorted(model.params)}")
    for name, data in loaded.items():
        model.params[name].data = data
    return model, info


# ---------------------------------------------------------------------------


def write_pgm_grid(images, cols, path):
    """Tile images row-major into one binary PGM (P5) / PPM (P6) file."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ContractError(f"expected [N,C,H,W] images, got shape {images.shape}")
    N, C, H, W = images.shape
    if C not in (1, 3):
        raise ContractError("grids support 1 (PGM) or 3 (PPM) channels")
    cols = min(cols, N)
    rows = -(-N // cols)
    gh = rows * H + (rows - 1)
    gw = cols * W + (cols - 1)
    grid = np.zeros((C, gh, gw))
    for i in range(N):
        r, c = divmod(i, cols)
        grid[:, r * (H + 1):r * (H + 1) + H, c * (W + 1):c * (W + 1) + W] = images[i]
    pixels = np.clip(np.rint(grid * 255.0), 0, 255).astype(np.uint8)
    try:
        with open(path, "wb") as f:
            if C == 1:
                f.write(f"P5\n{gw} {gh}\n255\n".encode("ascii"))
                f.write(pixels[0].tobytes())
            else:
                f.write(f"P6\n{gw} {gh}\n255\n".encode("ascii"))
                f.write(pixels.transpose(1, 2, 0).tobytes())
    except OSError as exc:
        raise FormatError(f"failed writing image grid to {path}: {exc}") from exc


def read_pgm(path):
    """Minimal P5/P6 reader (round-trip checks); returns float array in [0, 1]."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"P5", b"P6"):
            raise FormatError(f"not a binary PGM/PPM file: {magic!r}")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(f.readline())
        channels = 1 if magic == b"P5" else 3
        data = np.frombuffer(f.read(w * h * channels), dtype=np.uint8)
    img = data.astype(np.float64).reshape(h, w, channels) / maxval
    return img.transpose(2, 0, 1)


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def write_csv(rows, header, path):
    """Header + rows with RFC-4180 quoting and 9-significant-digit floats."""
    ncol = len(header)
    for i, row in enumerate(rows):
        if len(row) != ncol:
            raise ContractError(f"row {i} has {len(row)} fields, header has {ncol}")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
