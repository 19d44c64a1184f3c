"""Matrix persistence (MEQ1, NPY v1.0 subset) and CSV/SVG result emission."""

from __future__ import annotations

import ast
import csv
import io as _io
import math
import struct
from pathlib import Path

import numpy as np

from muoneq.equilibrate import MODE_ORDER
from muoneq.exceptions import FormatError
from muoneq.linalg import as_matrix

MEQ1_MAGIC = b"MEQ1"
_U32_MAX = 2**32 - 1


def meq1_bytes(A) -> bytes:
    A = as_matrix(A, "A")
    r, c = A.shape
    if r > _U32_MAX or c > _U32_MAX:
        raise FormatError(f"dimension overflow: {r}x{c} does not fit in u32")
    return MEQ1_MAGIC + struct.pack("<II", r, c) + np.ascontiguousarray(A, dtype="<f8").tobytes()


def meq1_write(path, A) -> None:
    Path(path).write_bytes(meq1_bytes(A))


def meq1_parse(data: bytes) -> np.ndarray:
    if len(data) < 4 or data[:4] != MEQ1_MAGIC:
        raise FormatError("bad magic: expected b'MEQ1'")
    if len(data) < 12:
        raise FormatError("truncated header: need 12 bytes")
    r, c = struct.unpack("<II", data[4:12])
    if r == 0 or c == 0:
        raise FormatError(f"invalid dimensions {r}x{c}")
    count = r * c
    if count > (2**63 - 1) // 8:
        raise FormatError(f"dimension overflow: {r}x{c}")
    need = 12 + 8 * count
    if len(data) < need:
        have = (len(data) - 12) // 8
        raise FormatError(f"truncated payload: declared {r}x{c} ({count} values), found {have}")
    if len(data) > need:
        raise FormatError(f"trailing bytes: expected {need} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=12, count=count).astype(np.float64).reshape(r, c)


def meq1_read(path) -> np.ndarray:
    return meq1_parse(Path(path).read_bytes())


NPY_MAGIC = b"\x93NUMPY"


def npy_parse(data: bytes) -> np.ndarray:
    """Decode an NPY v1.0 file holding a 2-D little-endian float64 C-order array."""
    if data[:6] != NPY_MAGIC:
        raise FormatError("malformed header: missing NPY magic")
    if len(data) < 10:
        raise FormatError("malformed header: truncated preamble")
    major, minor = data[6], data[7]
    if (major, minor) != (1, 0):
        raise FormatError(f"unsupported NPY version {major}.{minor}; only 1.0 is read")
    (hlen,) = struct.unpack("<H", data[8:10])
    if len(data) < 10 + hlen:
        raise FormatError("malformed header: truncated header text")
    text = data[10 : 10 + hlen].decode("latin1")
    try:
        header = ast.literal_eval(text.strip())
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"malformed header: {exc}") from None
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"malformed header: {text.strip()!r}")
    if header["descr"] != "<f8":
        raise FormatError(f"unsupported element type {header['descr']!r}; only '<f8' is read")
    if header["fortran_order"] is not False:
        raise FormatError("unsupported layout: only C order is read")
    shape = header["shape"]
    if not isinstance(shape, tuple) or len(shape) != 2:
        raise FormatError(f"unsupported rank: shape {shape!r} is not 2-D")
    r, c = shape
    if not (isinstance(r, int) and isinstance(c, int)) or r < 1 or c < 1:
        raise FormatError(f"unsupported shape {shape!r}")
    start = 10 + hlen
    need = 8 * r * c
    if len(data) - start < need:
        raise FormatError("truncated payload")
    A = np.frombuffer(data, dtype="<f8", offset=start, count=r * c).astype(np.float64).reshape(r, c)
    return as_matrix(A, "npy payload")


def npy_read(path) -> np.ndarray:
    return npy_parse(Path(path).read_bytes())


def read_matrix(path) -> np.ndarray:
    """Dispatch on the leading magic bytes (MEQ1 or NPY)."""
    data = Path(path).read_bytes()
    if data[:6] == NPY_MAGIC:
        return npy_parse(data)
    return meq1_parse(data)


def fmt_float(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


_MODE_RANK = {m.value: i for i, m in enumerate(MODE_ORDER)}


def _sort_key(rec):
    mode = str(rec.get("mode", ""))
    return (
        rec.get("matrix_id", 0),
        _MODE_RANK.get(mode, len(_MODE_RANK)),
        mode,
        rec.get("k", 0),
    )


def emit_csv(records, columns=None) -> bytes:
    """Rectangular CSV with 17-significant-digit floats.

    Records carrying ``matrix_id``/``mode``/``k`` are ordered by matrix id, then
    mode (RC < R < C < None), then ``k``; other records keep their order.
    """
    records = list(records)
    if not records:
        raise ValueError("emit_csv needs at least one record")
    if columns is None:
        columns = list(records[0])
        for rec in records[1:]:
            for key in rec:
                if key not in columns:
                    columns.append(key)
    if any(k in records[0] for k in ("matrix_id", "mode", "k")):
        records = sorted(records, key=_sort_key)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        w.writerow([fmt_float(rec.get(c, "")) for c in columns])
    return buf.getvalue().encode("utf-8")


def parse_csv(data: bytes) -> list[dict]:
    return list(csv.DictReader(_io.StringIO(data.decode("utf-8"))))


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        if a == b:
            b = a + 1
        return [float(e) for e in range(a, b + 1)], a, b
    if hi <= lo:
        hi = lo + 1.0
    step = 10 ** math.floor(math.log10((hi - lo) / 4))
    for mult in (1, 2, 5, 10):
        if (hi - lo) / (step * mult) <= 6:
            step *= mult
            break
    start = math.floor(lo / step) * step
    ticks = []
    v = start
    while v <= hi + step * 1e-9:
        ticks.append(v)
        v += step
    return ticks, ticks[0], ticks[-1]


def _label(v, log):
    if log:
        return f"1e{int(v)}"
    return format(v, ".6g")


def emit_svg(series, axes=None) -> bytes:
    """Deterministic self-contained SVG line chart.

    ``series`` maps a legend label to ``(x, y)`` sequences. ``axes`` may set
    ``xlog``/``ylog`` (bool), ``xlabel``, ``ylabel`` and ``title``. Points with
    nonpositive values are dropped on a log axis.
    """
    axes = dict(axes or {})
    if not series:
        raise ValueError("emit_svg needs at least one series")
    xlog, ylog = bool(axes.get("xlog")), bool(axes.get("ylog"))
    prepared = []
    for name, (xs, ys) in series.items():
        pts = []
        for x, y in zip(xs, ys):
            x, y = float(x), float(y)
            if not (math.isfinite(x) and math.isfinite(y)):
                continue
            if (xlog and x <= 0) or (ylog and y <= 0):
                continue
            pts.append((math.log10(x) if xlog else x, math.log10(y) if ylog else y))
        prepared.append((str(name), pts))
    allp = [p for _, pts in prepared for p in pts]
    if not allp:
        raise ValueError("emit_svg: no plottable points")
    xt, x0, x1 = _ticks(min(p[0] for p in allp), max(p[0] for p in allp), xlog)
    yt, y0, y1 = _ticks(min(p[1] for p in allp), max(p[1] for p in allp), ylog)
    W, H, L, R, T, B = 640, 420, 70, 170, 40, 50
    pw, ph = W - L - R, H - T - B

    def sx(v):
        return L + (v - x0) / ((x1 - x0) or 1.0) * pw

    def sy(v):
        return T + ph - (v - y0) / ((y1 - y0) or 1.0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for v in xt:
        X = sx(v)
        out.append(f'<line x1="{X:.2f}" y1="{T + ph}" x2="{X:.2f}" y2="{T + ph + 5}" stroke="black"/>')
        out.append(
            f'<text x="{X:.2f}" y="{T + ph + 18}" font-size="11" text-anchor="middle">{_label(v, xlog)}</text>'
        )
    for v in yt:
        Y = sy(v)
        out.append(f'<line x1="{L - 5}" y1="{Y:.2f}" x2="{L}" y2="{Y:.2f}" stroke="black"/>')
        out.append(
            f'<text x="{L - 8}" y="{Y + 4:.2f}" font-size="11" text-anchor="end">{_label(v, ylog)}</text>'
        )
    for i, (name, pts) in enumerate(prepared):
        color = _PALETTE[i % len(_PALETTE)]
        if pts:
            path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = T + 14 + 18 * i
        out.append(f'<line x1="{L + pw + 12}" y1="{ly}" x2="{L + pw + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{L + pw + 38}" y="{ly + 4}" font-size="11">{_esc(name)}</text>')
    if axes.get("title"):
        out.append(f'<text x="{W / 2:.1f}" y="22" font-size="14" text-anchor="middle">{_esc(axes["title"])}</text>')
    if axes.get("xlabel"):
        out.append(
            f'<text x="{L + pw / 2:.1f}" y="{H - 10}" font-size="12" text-anchor="middle">{_esc(axes["xlabel"])}</text>'
        )
    if axes.get("ylabel"):
        out.append(
            f'<text x="16" y="{T + ph / 2:.1f}" font-size="12" text-anchor="middle" '
            f'transform="rotate(-90 16 {T + ph / 2:.1f})">{_esc(axes["ylabel"])}</text>'
        )
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode("utf-8")


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")
