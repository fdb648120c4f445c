"""Record ingestion and writing: CSV and a WFDB subset.

CSV: first row holds lead names, one sample row per time step, values in mV.
The sampling rate comes from a ``<stem>.meta.json`` sidecar or an explicit
argument.

WFDB subset: single-segment records, one ``.hea`` plus one ``.dat``, signal
format 16 (16-bit little-endian two's complement, sample-interleaved).
Anything else is rejected loudly.  Physical units are millivolts after
applying the per-signal gain and baseline.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ParseError, RecordError
from .records import EcgRecord, infer_lead_config

FORMATS = ("csv", "wfdb_subset")


def load_record(path, format: str, sampling_rate_hz: Optional[float] = None) -> EcgRecord:
    """Load a record from ``path`` in the declared ``format``."""
    if format == "csv":
        return load_csv(path, sampling_rate_hz=sampling_rate_hz)
    if format == "wfdb_subset":
        return load_wfdb(path)
    raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")


# ---------------------------------------------------------------------------
# CSV

def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def load_csv(path, sampling_rate_hz: Optional[float] = None) -> EcgRecord:
    path = Path(path)
    if sampling_rate_hz is None:
        sidecar = _sidecar_path(path)
        if not sidecar.exists():
            raise ParseError(
                "sampling rate not given and no sidecar found "
                f"(expected {sidecar.name})", path=path)
        meta = json.loads(sidecar.read_text())
        try:
            sampling_rate_hz = float(meta["sampling_rate_hz"])
        except (KeyError, TypeError, ValueError):
            raise ParseError("sidecar missing numeric 'sampling_rate_hz'",
                             path=sidecar) from None

    lines = path.read_text().splitlines()
    if not lines:
        raise ParseError("empty file", path=path, location="line 1")
    names = [c.strip() for c in lines[0].split(",")]
    if any(not n for n in names):
        raise ParseError("blank lead name in header", path=path, location="line 1")
    if len(set(names)) != len(names):
        raise ParseError("duplicate lead name in header", path=path, location="line 1")

    columns: list[list[float]] = [[] for _ in names]
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(names):
            raise ParseError(
                f"row has {len(cells)} values, header declares {len(names)} leads "
                "(lead length mismatch)", path=path, location=f"line {lineno}")
        for col, cell in zip(columns, cells):
            try:
                value = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric sample {cell.strip()!r}",
                                 path=path, location=f"line {lineno}") from None
            if not np.isfinite(value):
                raise ParseError(f"non-finite sample {cell.strip()!r}",
                                 path=path, location=f"line {lineno}")
            col.append(value)
    if not columns[0]:
        raise ParseError("no sample rows", path=path, location="line 2")

    leads = [(name, np.asarray(col, dtype=np.float64)) for name, col in zip(names, columns)]
    try:
        return EcgRecord.build(path.stem, sampling_rate_hz, leads)
    except RecordError as exc:
        raise ParseError(str(exc), path=path) from None


def write_csv(record: EcgRecord, path, write_sidecar: bool = True) -> Path:
    """Write a record as CSV (+ sidecar).  Values keep 6 decimals (≤ 5e-7 mV error)."""
    path = Path(path)
    rows = [",".join(record.lead_names)]
    matrix = np.column_stack([samples for _, samples in record.leads])
    for row in matrix:
        rows.append(",".join(f"{v:.6f}" for v in row))
    path.write_text("\n".join(rows) + "\n")
    if write_sidecar:
        _sidecar_path(path).write_text(json.dumps(
            {"record_id": record.record_id,
             "sampling_rate_hz": record.sampling_rate_hz}, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# WFDB subset

_WFDB_FORMAT = "16"


def load_wfdb(path) -> EcgRecord:
    """Load from a ``.hea`` path (or a basename with ``.hea`` alongside)."""
    hea_path = Path(path)
    if hea_path.suffix != ".hea":
        hea_path = hea_path.with_suffix(".hea")
    lines = [ln for ln in hea_path.read_text().splitlines()
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ParseError("empty header", path=hea_path, location="line 1")

    head = lines[0].split()
    if len(head) < 4:
        raise ParseError(
            "record line needs 'name n_signals sampling_rate n_samples'",
            path=hea_path, location="line 1")
    record_name = head[0]
    if "/" in record_name:
        raise ParseError("multi-segment records are not supported",
                         path=hea_path, location="line 1")
    try:
        n_sig = int(head[1])
        fs = float(head[2])
        n_samples = int(head[3])
    except ValueError:
        raise ParseError("non-numeric record line fields", path=hea_path,
                         location="line 1") from None
    if fs <= 0 or n_sig <= 0 or n_samples <= 0:
        raise ParseError("record line fields must be positive",
                         path=hea_path, location="line 1")
    if len(lines) - 1 != n_sig:
        raise ParseError(
            f"header declares {n_sig} signals but has {len(lines) - 1} signal lines",
            path=hea_path, location="line 1")

    dat_names = set()
    gains, baselines, names = [], [], []
    for idx, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if len(tokens) < 9:
            raise ParseError("signal line needs 9 fields "
                             "(file format gain adcres adczero init checksum blocksize name)",
                             path=hea_path, location=f"line {idx}")
        dat_names.add(tokens[0])
        if tokens[1] != _WFDB_FORMAT:
            raise ParseError(f"unsupported signal format {tokens[1]!r} (only format 16)",
                             path=hea_path, location=f"line {idx}")
        gain_spec = tokens[2]
        units = "mV"
        if "/" in gain_spec:
            gain_spec, units = gain_spec.split("/", 1)
        baseline = 0
        if "(" in gain_spec:
            if not gain_spec.endswith(")"):
                raise ParseError(f"malformed gain spec {tokens[2]!r}",
                                 path=hea_path, location=f"line {idx}")
            gain_spec, baseline_spec = gain_spec[:-1].split("(", 1)
            try:
                baseline = int(baseline_spec)
            except ValueError:
                raise ParseError(f"malformed baseline in {tokens[2]!r}",
                                 path=hea_path, location=f"line {idx}") from None
        try:
            gain = float(gain_spec)
        except ValueError:
            raise ParseError(f"malformed gain {tokens[2]!r}",
                             path=hea_path, location=f"line {idx}") from None
        if gain == 0:
            gain = 200.0  # WFDB default for unspecified gain
        if units != "mV":
            raise ParseError(f"unsupported units {units!r} (only mV)",
                             path=hea_path, location=f"line {idx}")
        gains.append(gain)
        baselines.append(baseline)
        names.append(" ".join(tokens[8:]) or f"sig{idx - 2}")

    if len(dat_names) != 1:
        raise ParseError(f"expected a single .dat file, header names {sorted(dat_names)}",
                         path=hea_path)
    dat_path = hea_path.parent / dat_names.pop()
    raw = dat_path.read_bytes()
    expected = n_samples * n_sig * 2
    if len(raw) != expected:
        raise ParseError(
            f"data file holds {len(raw)} bytes, header implies {expected}",
            path=dat_path, location=f"byte {min(len(raw), expected)}")
    adc = np.frombuffer(raw, dtype="<i2").reshape(n_samples, n_sig)

    checksums = [int(lines[1 + i].split()[6]) for i in range(n_sig)]
    for i, declared in enumerate(checksums):
        actual = int(np.sum(adc[:, i], dtype=np.int64) % 65536)
        if actual >= 32768:
            actual -= 65536
        if actual != declared:
            raise ParseError(
                f"checksum mismatch for signal {names[i]!r}: "
                f"header {declared}, data {actual}",
                path=dat_path, location=f"byte {2 * i}")

    leads = []
    for i, name in enumerate(names):
        physical = (adc[:, i].astype(np.float64) - baselines[i]) / gains[i]
        leads.append((name, physical))
    try:
        return EcgRecord.build(record_name, fs, leads)
    except RecordError as exc:
        raise ParseError(str(exc), path=hea_path) from None


def write_wfdb(record: EcgRecord, directory, gain: float = 1000.0) -> Path:
    """Write ``record`` as ``<record_id>.hea`` + ``.dat``; returns the header path.

    Samples are digitized as round(mV * gain); values already on that grid
    round-trip bit-exactly.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n_sig = len(record.leads)
    dat_name = f"{record.record_id}.dat"

    adc = np.column_stack([
        np.round(samples * gain).astype(np.int64) for _, samples in record.leads
    ])
    if adc.max() > 32767 or adc.min() < -32768:
        raise RecordError(
            f"samples exceed int16 range at gain {gain}; reduce gain")
    adc = adc.astype("<i2")

    header_lines = [
        f"{record.record_id} {n_sig} {_format_rate(record.sampling_rate_hz)} {record.n_samples}"
    ]
    for i, (name, _) in enumerate(record.leads):
        checksum = int(np.sum(adc[:, i], dtype=np.int64) % 65536)
        if checksum >= 32768:
            checksum -= 65536
        init = int(adc[0, i])
        header_lines.append(
            f"{dat_name} 16 {_format_rate(gain)}(0)/mV 16 0 {init} {checksum} 0 {name}")

    hea_path = directory / f"{record.record_id}.hea"
    hea_path.write_text("\n".join(header_lines) + "\n")
    (directory / dat_name).write_bytes(adc.tobytes())
    return hea_path


def _format_rate(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))
