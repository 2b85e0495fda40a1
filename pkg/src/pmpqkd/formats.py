"""Click interchange files, truth sidecars and run reports.

CSV (canonical)::

    #pmpqkd-clicks v1 slot,detector,a_int,a_phase,b_int,b_phase
    1042,0,mu,3,o,12

The label columns are optional (header ``slot,detector``); intensities are
written as ``mu``/``nu``/``o`` and phases as indices 0-15. A truth sidecar
carries the labels for an unlabelled click file, one row per click::

    #pmpqkd-truth v1 slot,a_int,a_phase,b_int,b_phase

Binary: a 16-byte header (8-byte magic, u32 version, u32 flags) followed by
16-byte little-endian records ``i8 slot, u1 detector, u1 a_int, u1 a_phase,
u1 b_int, u1 b_phase, 3 pad bytes``; 255 marks a missing label. Flag bit 0
says every record is labelled.
"""

from __future__ import annotations

import io
import json
import math
import struct
from importlib import resources
from pathlib import Path
from typing import Iterator, Optional, Union

import jsonschema
import numpy as np

from .core import N_PHASES, NO_LABEL, ClickBatch, PMPError

PathLike = Union[str, Path]

CSV_MAGIC = "#pmpqkd-clicks v1"
TRUTH_MAGIC = "#pmpqkd-truth v1"
CLICK_COLUMNS = "slot,detector"
LABEL_COLUMNS = "a_int,a_phase,b_int,b_phase"
BIN_MAGIC = b"PMPQKDCK"
BIN_VERSION = 1
FLAG_LABELLED = 1
HEADER = struct.Struct("<8sII")
RECORD = np.dtype(
    [
        ("slot", "<i8"),
        ("detector", "u1"),
        ("a_int", "u1"),
        ("a_phase", "u1"),
        ("b_int", "u1"),
        ("b_phase", "u1"),
        ("pad", "V3"),
    ]
)
assert RECORD.itemsize == 16

_SYMBOLS = ("o", "nu", "mu")
_SYMBOL_CODE = {s: i for i, s in enumerate(_SYMBOLS)}


class FormatError(PMPError, ValueError):
    """Malformed interchange input; ``where`` is ``path:line`` or ``path@offset``."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


# -- CSV ---------------------------------------------------------------------


def _label_fields(a_int, a_phase, b_int, b_phase) -> str:
    return f"{_SYMBOLS[a_int]},{a_phase},{_SYMBOLS[b_int]},{b_phase}"


class CsvClickWriter:
    """Streams batches to a CSV click file and an optional truth sidecar."""

    def __init__(self, path: PathLike, *, labelled: bool = True, truth_path: Optional[PathLike] = None):
        self.labelled = labelled
        self._f = open(path, "w", newline="\n")
        cols = f"{CLICK_COLUMNS},{LABEL_COLUMNS}" if labelled else CLICK_COLUMNS
        self._f.write(f"{CSV_MAGIC} {cols}\n")
        self._truth = None
        if truth_path is not None:
            self._truth = open(truth_path, "w", newline="\n")
            self._truth.write(f"{TRUTH_MAGIC} slot,{LABEL_COLUMNS}\n")

    def write(self, batch: ClickBatch) -> None:
        if len(batch) == 0:
            return
        needs_labels = self.labelled or self._truth is not None
        if needs_labels and not batch.has_truth:
            raise ValueError("batch lacks labels for a labelled output")
        rows = []
        truth_rows = []
        for s, d, ai, ap, bi, bp in zip(
            batch.slot.tolist(),
            batch.detector.tolist(),
            batch.a_int.tolist(),
            batch.a_phase.tolist(),
            batch.b_int.tolist(),
            batch.b_phase.tolist(),
        ):
            if needs_labels:
                labels = _label_fields(ai, ap, bi, bp)
            rows.append(f"{s},{d},{labels}\n" if self.labelled else f"{s},{d}\n")
            if self._truth is not None:
                truth_rows.append(f"{s},{labels}\n")
        self._f.write("".join(rows))
        if self._truth is not None:
            self._truth.write("".join(truth_rows))

    def __call__(self, batch: ClickBatch) -> None:
        self.write(batch)

    def close(self) -> None:
        self._f.close()
        if self._truth is not None:
            self._truth.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _parse_int(text: str, where: str, what: str, lo: int, hi: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise FormatError(where, f"{what} {text!r} is not an integer") from None
    if not lo <= value <= hi:
        raise FormatError(where, f"{what} {value} outside [{lo}, {hi}]")
    return value


def _parse_labels(fields: list[str], where: str) -> tuple[int, int, int, int]:
    a_int, a_phase, b_int, b_phase = fields
    out = []
    for sym, phase, who in ((a_int, a_phase, "a"), (b_int, b_phase, "b")):
        if sym not in _SYMBOL_CODE:
            raise FormatError(where, f"{who}_int {sym!r} is not one of mu, nu, o")
        out.append(_SYMBOL_CODE[sym])
        out.append(_parse_int(phase, where, f"{who}_phase", 0, N_PHASES - 1))
    return tuple(out)


def _read_lines(path: PathLike, magic: str, columns: tuple[str, ...]) -> tuple[Iterator, str, str]:
    name = str(path)
    with open(path, "r", newline="") as f:
        text = f.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError(f"{name}:1", "missing header")
    header = lines[0]
    if not header.startswith(magic + " "):
        raise FormatError(f"{name}:1", f"expected header starting {magic!r}")
    cols = header[len(magic) + 1 :]
    if cols not in columns:
        raise FormatError(f"{name}:1", f"unsupported columns {cols!r}")
    return enumerate(lines[1:], start=2), cols, name


def read_clicks_csv(path: PathLike) -> ClickBatch:
    """Parse a CSV click file, rejecting malformed or unsorted rows."""
    rows, cols, name = _read_lines(path, CSV_MAGIC, (CLICK_COLUMNS, f"{CLICK_COLUMNS},{LABEL_COLUMNS}"))
    labelled = cols != CLICK_COLUMNS
    width = 6 if labelled else 2
    slots, dets, labels = [], [], []
    prev = -1
    for lineno, line in rows:
        where = f"{name}:{lineno}"
        fields = line.split(",")
        if len(fields) != width:
            raise FormatError(where, f"expected {width} fields, found {len(fields)}")
        slot = _parse_int(fields[0], where, "slot", 0, 2**63 - 1)
        if slot <= prev:
            raise FormatError(where, f"slot {slot} not after {prev}")
        prev = slot
        slots.append(slot)
        dets.append(_parse_int(fields[1], where, "detector", 0, 1))
        if labelled:
            labels.append(_parse_labels(fields[2:], where))
    batch = ClickBatch(np.array(slots, np.int64), np.array(dets, np.uint8))
    if labelled and labels:
        arr = np.array(labels, np.uint8)
        batch = ClickBatch(batch.slot, batch.detector, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
    return batch


def read_truth_csv(path: PathLike) -> ClickBatch:
    rows, _, name = _read_lines(path, TRUTH_MAGIC, (f"slot,{LABEL_COLUMNS}",))
    slots, labels = [], []
    prev = -1
    for lineno, line in rows:
        where = f"{name}:{lineno}"
        fields = line.split(",")
        if len(fields) != 5:
            raise FormatError(where, f"expected 5 fields, found {len(fields)}")
        slot = _parse_int(fields[0], where, "slot", 0, 2**63 - 1)
        if slot <= prev:
            raise FormatError(where, f"slot {slot} not after {prev}")
        prev = slot
        slots.append(slot)
        labels.append(_parse_labels(fields[1:], where))
    arr = np.array(labels, np.uint8).reshape(-1, 4)
    return ClickBatch(np.array(slots, np.int64), np.zeros(len(slots), np.uint8), *arr.T)


def attach_truth(clicks: ClickBatch, truth: ClickBatch, where: str = "truth") -> ClickBatch:
    """Copy sidecar labels onto an unlabelled click stream (matched by slot)."""
    if len(truth) != len(clicks):
        raise FormatError(where, f"{len(truth)} truth rows for {len(clicks)} clicks")
    mismatch = np.flatnonzero(truth.slot != clicks.slot)
    if len(mismatch):
        i = int(mismatch[0])
        raise FormatError(where, f"row {i + 1} has slot {truth.slot[i]}, click has {clicks.slot[i]}")
    return ClickBatch(clicks.slot, clicks.detector, truth.a_int, truth.a_phase, truth.b_int, truth.b_phase)


# -- binary ------------------------------------------------------------------


class BinaryClickWriter:
    """Streams batches to the fixed-record binary format."""

    def __init__(self, path: PathLike, *, labelled: bool = True):
        self.labelled = labelled
        self._f = open(path, "wb")
        self._f.write(HEADER.pack(BIN_MAGIC, BIN_VERSION, FLAG_LABELLED if labelled else 0))

    def write(self, batch: ClickBatch) -> None:
        if len(batch) == 0:
            return
        rec = np.zeros(len(batch), RECORD)
        rec["slot"] = batch.slot
        rec["detector"] = batch.detector
        for name in ("a_int", "a_phase", "b_int", "b_phase"):
            rec[name] = getattr(batch, name) if self.labelled else NO_LABEL
        if self.labelled and not batch.has_truth:
            raise ValueError("batch lacks labels for a labelled output")
        self._f.write(rec.tobytes())

    def __call__(self, batch: ClickBatch) -> None:
        self.write(batch)

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _check_records(rec: np.ndarray, name: str, base_offset: int, prev: int) -> None:
    def fail(i: int, msg: str):
        raise FormatError(f"{name}@{base_offset + i * RECORD.itemsize}", msg)

    if len(rec) == 0:
        return
    slots = rec["slot"]
    if slots[0] <= prev:
        fail(0, f"slot {slots[0]} not after {prev}")
    bad = np.flatnonzero(np.diff(slots) <= 0)
    if len(bad):
        i = int(bad[0]) + 1
        fail(i, f"slot {slots[i]} not after {slots[i - 1]}")
    if slots[0] < 0:
        fail(0, "negative slot")
    bad = np.flatnonzero(rec["detector"] > 1)
    if len(bad):
        fail(int(bad[0]), f"detector {rec['detector'][bad[0]]} not 0 or 1")
    for name_, hi in (("a_int", 2), ("b_int", 2), ("a_phase", N_PHASES - 1), ("b_phase", N_PHASES - 1)):
        col = rec[name_]
        bad = np.flatnonzero((col > hi) & (col != NO_LABEL))
        if len(bad):
            fail(int(bad[0]), f"{name_} {col[bad[0]]} out of range")


def iter_read_binary(path: PathLike, chunk_records: int = 1 << 22) -> Iterator[ClickBatch]:
    """Yield validated ClickBatch chunks from a binary click file."""
    name = str(path)
    size = Path(path).stat().st_size
    with open(path, "rb") as f:
        head = f.read(HEADER.size)
        if len(head) < HEADER.size:
            raise FormatError(f"{name}@0", "truncated header")
        magic, version, flags = HEADER.unpack(head)
        if magic != BIN_MAGIC:
            raise FormatError(f"{name}@0", "not a pmpqkd binary click file")
        if version != BIN_VERSION:
            raise FormatError(f"{name}@8", f"unsupported version {version}")
        body = size - HEADER.size
        if body % RECORD.itemsize:
            whole = body // RECORD.itemsize
            raise FormatError(
                f"{name}@{HEADER.size + whole * RECORD.itemsize}", "truncated record at end of file"
            )
        offset = HEADER.size
        prev = -1
        while True:
            rec = np.fromfile(f, dtype=RECORD, count=chunk_records)
            if len(rec) == 0:
                break
            _check_records(rec, name, offset, prev)
            prev = int(rec["slot"][-1])
            offset += len(rec) * RECORD.itemsize
            yield ClickBatch(
                rec["slot"].astype(np.int64),
                rec["detector"].copy(),
                rec["a_int"].copy(),
                rec["a_phase"].copy(),
                rec["b_int"].copy(),
                rec["b_phase"].copy(),
            )


def read_clicks_binary(path: PathLike) -> ClickBatch:
    return ClickBatch.concat(list(iter_read_binary(path)))


def is_binary(path: PathLike) -> bool:
    with open(path, "rb") as f:
        return f.read(len(BIN_MAGIC)) == BIN_MAGIC


def read_clicks(path: PathLike, truth_path: Optional[PathLike] = None) -> ClickBatch:
    """Read either format (sniffed from the first bytes), merging a sidecar."""
    clicks = read_clicks_binary(path) if is_binary(path) else read_clicks_csv(path)
    if truth_path is not None:
        clicks = attach_truth(clicks, read_truth_csv(truth_path), str(truth_path))
    return clicks


def write_clicks(path: PathLike, batch: ClickBatch, *, binary: bool = False, truth_path=None) -> None:
    labelled = batch.has_truth if len(batch) else truth_path is None
    if binary:
        with BinaryClickWriter(path, labelled=labelled) as w:
            w.write(batch)
    else:
        labelled = labelled and truth_path is None
        with CsvClickWriter(path, labelled=labelled, truth_path=truth_path) as w:
            w.write(batch)


# -- run reports -------------------------------------------------------------


def report_schema() -> dict:
    text = resources.files("pmpqkd").joinpath("schemas/report.schema.json").read_text()
    return json.loads(text)


def _clean(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def validate_report(report: dict) -> None:
    jsonschema.validate(report, report_schema())


def dump_report(report: dict) -> str:
    clean = _clean(report)
    validate_report(clean)
    buf = io.StringIO()
    json.dump(clean, buf, indent=2, sort_keys=True)
    buf.write("\n")
    return buf.getvalue()


def write_report(path: PathLike, report: dict) -> None:
    Path(path).write_text(dump_report(report))


__all__ = [
    "FormatError",
    "CsvClickWriter",
    "BinaryClickWriter",
    "read_clicks",
    "read_clicks_csv",
    "read_clicks_binary",
    "iter_read_binary",
    "read_truth_csv",
    "attach_truth",
    "write_clicks",
    "is_binary",
    "dump_report",
    "write_report",
    "validate_report",
    "report_schema",
]
