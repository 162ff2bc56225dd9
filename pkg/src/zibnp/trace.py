"""Binary trace files.

Layout (little endian)::

    header   b"ZIBNP1" | u16 version | u64 record count | u32 p | u32 C_max
    record   u32 payload length | payload

    payload  i32 iteration | i32 C | f64 log_joint | f64 sigma_e2 | f64 tau2
             | f64 tau_lambda2 | i64 ars_evals | i64 ars_rejections
             | i32[p] allocations | f64[p] taxon non-DA prob
             | f64[C] cluster non-DA prob | i8[C] cluster status

A JSON sidecar (``<trace>.json``) carries the configuration and metadata.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"ZIBNP1"
VERSION = 1
_HEADER = struct.Struct("<6sHQII")
_FIXED = struct.Struct("<iiddddqq")


class TraceFormatError(ValueError):
    pass


@dataclass
class TraceRecord:
    iteration: int
    C: int
    log_joint: float
    sigma_e2: float
    tau2: float
    tau_lambda2: float
    ars_evals: int
    ars_rejections: int
    c: np.ndarray
    taxon_nonda: np.ndarray
    cluster_nonda: np.ndarray
    status: np.ndarray

    def pack(self) -> bytes:
        body = _FIXED.pack(self.iteration, self.C, self.log_joint, self.sigma_e2, self.tau2,
                           self.tau_lambda2, self.ars_evals, self.ars_rejections)
        body += np.asarray(self.c, dtype="<i4").tobytes()
        body += np.asarray(self.taxon_nonda, dtype="<f8").tobytes()
        body += np.asarray(self.cluster_nonda, dtype="<f8").tobytes()
        body += np.asarray(self.status, dtype="<i1").tobytes()
        return struct.pack("<I", len(body)) + body

    @classmethod
    def unpack(cls, body: bytes, p: int) -> "TraceRecord":
        fixed = _FIXED.unpack_from(body, 0)
        off = _FIXED.size
        c = np.frombuffer(body, dtype="<i4", count=p, offset=off).astype(np.int64)
        off += 4 * p
        tn = np.frombuffer(body, dtype="<f8", count=p, offset=off).copy()
        off += 8 * p
        C = fixed[1]
        cn = np.frombuffer(body, dtype="<f8", count=C, offset=off).copy()
        off += 8 * C
        st = np.frombuffer(body, dtype="<i1", count=C, offset=off).astype(np.int64)
        if off + C != len(body):
            raise TraceFormatError("record length mismatch")
        return cls(*fixed, c=c, taxon_nonda=tn, cluster_nonda=cn, status=st)


@dataclass
class Trace:
    p: int
    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    log_joint_history: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def C_max(self) -> int:
        return max((r.C for r in self.records), default=0)

    def taxon_nonda(self) -> np.ndarray:
        return np.array([r.taxon_nonda for r in self.records])

    def scalar(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


class TraceWriter:
    """Append-only writer; the header counts are patched on close."""

    def __init__(self, path, p: int):
        self.path = path
        self.p = p
        self.count = 0
        self.C_max = 0
        self._fh = open(path, "wb")
        self._fh.write(_HEADER.pack(MAGIC, VERSION, 0, p, 0))

    def append(self, rec: TraceRecord):
        if len(rec.c) != self.p:
            raise TraceFormatError("allocation vector has wrong length")
        self._fh.write(rec.pack())
        self.count += 1
        self.C_max = max(self.C_max, rec.C)

    def close(self):
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._fh.write(_HEADER.pack(MAGIC, VERSION, self.count, self.p, self.C_max))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_trace(trace: Trace, path, sidecar=True):
    with TraceWriter(path, trace.p) as w:
        for rec in trace.records:
            w.append(rec)
    if sidecar:
        write_sidecar(trace, path)


def write_sidecar(trace: Trace, path):
    meta = dict(trace.meta)
    meta["log_joint_history"] = list(trace.log_joint_history)
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_trace(path) -> Trace:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise TraceFormatError(f"{path}: truncated header")
        magic, version, count, p, _cmax = _HEADER.unpack(head)
        if magic != MAGIC:
            raise TraceFormatError(f"{path}: not a trace file")
        if version != VERSION:
            raise TraceFormatError(f"{path}: unsupported version {version}")
        records = []
        for _ in range(count):
            prefix = fh.read(4)
            if len(prefix) != 4:
                raise TraceFormatError(f"{path}: truncated record")
            (size,) = struct.unpack("<I", prefix)
            body = fh.read(size)
            if len(body) != size:
                raise TraceFormatError(f"{path}: truncated record")
            records.append(TraceRecord.unpack(body, p))
    trace = Trace(p=p, records=records)
    try:
        with open(str(path) + ".json") as fh:
            meta = json.load(fh)
        trace.log_joint_history = meta.pop("log_joint_history", [])
        trace.meta = meta
    except FileNotFoundError:
        pass
    return trace


def write_trace_csv(trace: Trace, path):
    cols = ["iteration", "C", "log_joint", "sigma_e2", "tau2", "tau_lambda2",
            "ars_evals", "ars_rejections"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols + ["mean_taxon_nonda"])
        for r in trace.records:
            w.writerow([getattr(r, k) for k in cols] + [float(np.mean(r.taxon_nonda))])
