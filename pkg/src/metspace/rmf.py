"""Reader and writer for ``.rmf`` field files.

Layout::

    RMF1 dim=2 shape=4,5 spacing=0.25,0.25 origin=0.0,0.0 periodic=0,0 kind=metric\\n
    <float64 little-endian payload, node-major>
    <one mask byte per node>
    <CRC32 of payload and mask bytes, uint32 little-endian>

Metric nodes store the upper triangle in row order, ell nodes the full
matrix in row order, scalar nodes one value. An optional ``label=`` token
carries a percent-encoded label.
"""

import struct
import zlib
from urllib.parse import quote, unquote

import numpy as np

from .errors import ChecksumMismatch, FormatError
from .fields import SING_FRACTION_MAX, EllField, GridChart, MetricField, ScalarField

MAGIC = "RMF1"
KINDS = ("metric", "ell", "scalar")
_REQUIRED = ("dim", "shape", "spacing", "origin", "periodic", "kind")


def _kind_of(field):
    if isinstance(field, MetricField):
        return "metric"
    if isinstance(field, EllField):
        return "ell"
    if isinstance(field, ScalarField):
        return "scalar"
    raise TypeError(f"cannot serialise {type(field).__name__}")


def _per_node(kind, dim):
    return {"metric": dim * (dim + 1) // 2, "ell": dim * dim, "scalar": 1}[kind]


def _join(xs):
    return ",".join(repr(float(x)) for x in xs)


def encode(field):
    """Serialise a field to bytes."""
    kind = _kind_of(field)
    chart = field.chart
    d = chart.dim
    header = (
        f"{MAGIC} dim={d} shape={','.join(str(s) for s in chart.shape)} "
        f"spacing={_join(chart.spacing)} origin={_join(chart.origin)} "
        f"periodic={','.join('1' if p else '0' for p in chart.periodic)} kind={kind}"
    )
    label = getattr(field, "label", "")
    if label:
        header += f" label={quote(label, safe='')}"
    vals = np.asarray(field.values, dtype=float)
    if kind == "metric":
        iu = np.triu_indices(d)
        flat = vals[:, iu[0], iu[1]]
    else:
        flat = vals.reshape(chart.n_nodes, -1)
    payload = np.ascontiguousarray(flat, dtype="<f8").tobytes()
    mask = np.asarray(field.singular_mask, dtype=np.uint8).tobytes()
    crc = zlib.crc32(payload + mask) & 0xFFFFFFFF
    return (header + "\n").encode("utf-8") + payload + mask + struct.pack("<I", crc)


def _parse_list(text, conv, key, offset):
    try:
        return tuple(conv(t) for t in text.split(","))
    except ValueError as exc:
        raise FormatError(f"bad value for {key}: {text!r}", offset) from exc


def _parse_header(data):
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError("missing header terminator", len(data))
    try:
        line = data[:nl].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("header is not UTF-8", exc.start) from exc
    tokens = line.split(" ")
    if tokens[0] != MAGIC:
        raise FormatError(f"unknown magic/version {tokens[0]!r}", 0)
    fields = {}
    pos = len(tokens[0]) + 1
    for tok in tokens[1:]:
        key, sep, val = tok.partition("=")
        if not sep or key in fields:
            raise FormatError(f"malformed header token {tok!r}", pos)
        fields[key] = (val, pos)
        pos += len(tok) + 1
    for key in _REQUIRED:
        if key not in fields:
            raise FormatError(f"header lacks {key}=", nl)
    dim_text, off = fields["dim"]
    if not dim_text.isdigit():
        raise FormatError(f"bad dim {dim_text!r}", off)
    dim = int(dim_text)
    kind, off = fields["kind"]
    if kind not in KINDS:
        raise FormatError(f"unknown kind {kind!r}", off)
    shape = _parse_list(fields["shape"][0], int, "shape", fields["shape"][1])
    spacing = _parse_list(fields["spacing"][0], float, "spacing", fields["spacing"][1])
    origin = _parse_list(fields["origin"][0], float, "origin", fields["origin"][1])
    periodic_raw = _parse_list(fields["periodic"][0], int, "periodic", fields["periodic"][1])
    if any(p not in (0, 1) for p in periodic_raw):
        raise FormatError("periodic flags must be 0 or 1", fields["periodic"][1])
    if not (len(shape) == len(spacing) == len(origin) == len(periodic_raw) == dim):
        raise FormatError("axis lists disagree with dim", fields["dim"][1])
    try:
        chart = GridChart(origin, spacing, shape, tuple(bool(p) for p in periodic_raw))
    except ValueError as exc:
        raise FormatError(f"invalid chart: {exc}", 0) from exc
    label = unquote(fields["label"][0]) if "label" in fields else ""
    return chart, kind, label, nl + 1


def decode(data):
    """Parse bytes produced by :func:`encode`."""
    chart, kind, label, start = _parse_header(data)
    d = chart.dim
    n = chart.n_nodes
    n_payload = 8 * n * _per_node(kind, d)
    end_payload = start + n_payload
    end_mask = end_payload + n
    total = end_mask + 4
    if len(data) < end_payload:
        raise FormatError(f"payload truncated: expected {n_payload} bytes", len(data))
    if len(data) < total:
        raise FormatError(f"file truncated: expected {total} bytes", len(data))
    if len(data) > total:
        raise FormatError("trailing bytes after checksum", total)
    payload = data[start:end_payload]
    mask_bytes = data[end_payload:end_mask]
    (crc,) = struct.unpack("<I", data[end_mask:total])
    if zlib.crc32(payload + mask_bytes) & 0xFFFFFFFF != crc:
        raise ChecksumMismatch("CRC32 mismatch", end_mask)
    mask_arr = np.frombuffer(mask_bytes, dtype=np.uint8)
    bad = np.flatnonzero(mask_arr > 1)
    if bad.size:
        raise FormatError("mask bytes must be 0 or 1", end_payload + int(bad[0]))
    mask = mask_arr.astype(bool)
    flat = np.frombuffer(payload, dtype="<f8").astype(float).reshape(n, -1)
    if kind == "scalar":
        return ScalarField(chart, flat[:, 0], mask)
    if kind == "ell":
        return EllField(chart, flat.reshape(n, d, d), mask)
    vals = np.empty((n, d, d))
    iu = np.triu_indices(d)
    vals[:, iu[0], iu[1]] = flat
    vals[:, iu[1], iu[0]] = flat
    # the cap is a construction check; a stored mask is taken as given
    cap = max(SING_FRACTION_MAX, float(mask.mean()))
    try:
        return MetricField(chart, vals, mask, label, cap)
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"payload is not a valid metric field: {exc}", start) from exc


def write_field(field, path):
    with open(path, "wb") as fh:
        fh.write(encode(field))


def read_field(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
