"""Readers and writers for every on-disk format.

Text formats are TAB-separated with ``#`` header lines. Binary formats are
little-endian. Layouts:

contacts (text)
    ``#contacts v1 chain=<id> length=<L>`` then ``a<TAB>b<TAB>score`` lines,
    0-based ``a < b``.
embeddings (binary, ``<chain>.emb``)
    ``EMB1``, u32 L, u32 D, then L*D float32 row-major.
labels (text)
    ``chain<TAB>index<TAB>binding<TAB>metal`` with metal an id 0-10 or ``-``.
graph bundle (binary)
    ``MBGB``, u32 version, u32 n_graphs, u32 D, u8 has_labels, then per
    graph: u16 chain-id length + utf-8 bytes, u32 n_nodes, u32 n_edges,
    u32[n] residue indices, n ASCII amino-acid bytes, u32[2E] edges,
    float32[n*D] features, and (if labeled) int8[n] metal ids (-1 for
    non-binders). Trailing u32 CRC-32 of all preceding bytes.
checkpoint (binary)
    ``MBGN``, u32 version, config block (u32 n_layers, d_in, d_hidden,
    n_classes; u8 bias, u8 aggregate, u8 task; i64 seed), u32 M, then per
    model: per layer W1 and W2 as (u32 rows, u32 cols, float64 data) and the
    bias as (u32 length, float64 data; length 0 when absent, which is every
    layer but the last, or all of them when bias is disabled); per
    batch-norm (u32 length, gamma, beta, running mean, running var as
    float64; float64 momentum, float64 epsilon); float64 best validation F1;
    u32 best epoch. Trailing u32 CRC-32 of all preceding bytes.
"""

from __future__ import annotations

import io
import math
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import numcore as nc
from .errors import CheckpointError, InputError
from .gnn import ModelConfig, SageLayer, SageModel
from .metrics import METAL_TYPES
from .netbuild import CoevNetwork, ContactRecord, EmbeddingTable, ResidueRef, validate_sequence

BUNDLE_MAGIC = b"MBGB"
CHECKPOINT_MAGIC = b"MBGN"
EMBEDDING_MAGIC = b"EMB1"
FORMAT_VERSION = 1
TASK_CODES = {"binding": 0, "type": 1}


def _fmt_float(x: float) -> str:
    return repr(float(x))


# --- contacts ---------------------------------------------------------------


def write_contacts(path, chain_id: str, length: int, contacts: Iterable[ContactRecord]):
    lines = [f"#contacts v1 chain={chain_id} length={length}"]
    for rec in sorted(contacts):
        lines.append(f"{rec.a}\t{rec.b}\t{_fmt_float(rec.score)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_header(line: str, where: str, tag: str) -> dict[str, str]:
    parts = line.split()
    if len(parts) < 2 or parts[0] != tag or parts[1] != "v1":
        raise InputError(f"{where}: expected header '{tag} v1 ...'")
    fields = {}
    for p in parts[2:]:
        key, sep, val = p.partition("=")
        if not sep:
            raise InputError(f"{where}: malformed header field {p!r}")
        fields[key] = val
    return fields


def read_contacts(path) -> tuple[str, int, list[ContactRecord]]:
    """Return ``(chain_id, length, contacts)``."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise InputError(f"{path}: empty contact file")
    head = _parse_header(lines[0], f"{path}:1", "#contacts")
    try:
        chain_id, length = head["chain"], int(head["length"])
    except (KeyError, ValueError):
        raise InputError(f"{path}:1: header needs chain=<id> and integer length=<L>") from None
    out = []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        where = f"{path}:{lineno}"
        parts = line.split("\t")
        if len(parts) != 3:
            raise InputError(f"{where}: expected 3 TAB-separated fields")
        try:
            a, b, score = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise InputError(f"{where}: cannot parse {line!r}") from None
        if not a < b:
            raise InputError(f"{where}: indices must satisfy a < b")
        if b >= length:
            raise InputError(f"{where}: index {b} >= chain length {length}")
        if not (math.isfinite(score) and 0.0 <= score <= 1.0):
            raise InputError(f"{where}: score {score} outside [0, 1]")
        if (a, b) in seen:
            raise InputError(f"{where}: duplicate pair ({a}, {b})")
        seen.add((a, b))
        out.append(ContactRecord(a, b, score))
    return chain_id, length, out


# --- sequences ----------------------------------------------------------------


def write_fasta(path, records: Sequence[tuple[str, str]]):
    lines = []
    for chain_id, seq in records:
        lines.append(f">{chain_id}")
        lines.extend(seq[i : i + 60] for i in range(0, len(seq), 60))
    Path(path).write_text("\n".join(lines) + "\n")


def read_fasta(path) -> dict[str, str]:
    path = Path(path)
    out: dict[str, list[str]] = {}
    current = None
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            current = line[1:].split()[0] if line[1:].strip() else ""
            if not current:
                raise InputError(f"{path}:{lineno}: empty record name")
            if current in out:
                raise InputError(f"{path}:{lineno}: duplicate record {current!r}")
            out[current] = []
        elif current is None:
            raise InputError(f"{path}:{lineno}: sequence data before first '>' header")
        else:
            out[current].append(line.upper())
    seqs = {}
    for k, parts in out.items():
        seq = "".join(parts)
        try:
            validate_sequence(seq)
        except InputError as exc:
            raise InputError(f"{path}: record {k!r}: {exc}") from None
        seqs[k] = seq
    return seqs


# --- embeddings -----------------------------------------------------------------


def write_embedding(path, data: np.ndarray):
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2:
        raise InputError("embedding matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<II", *data.shape))
        fh.write(data.tobytes())


def read_embedding(path, chain_id: str | None = None) -> EmbeddingTable:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != EMBEDDING_MAGIC:
        raise InputError(f"{path}: bad magic, expected EMB1")
    if len(raw) < 12:
        raise InputError(f"{path}: truncated header")
    length, dim = struct.unpack_from("<II", raw, 4)
    expected = 12 + 4 * length * dim
    if len(raw) != expected:
        raise InputError(f"{path}: {len(raw)} bytes, expected {expected} for L={length} D={dim}")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(length, dim).astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise InputError(f"{path}: non-finite embedding values")
    if chain_id is None:
        chain_id = path.name[: -len(".emb")] if path.name.endswith(".emb") else path.stem
    return EmbeddingTable(chain_id, data)


# --- labels ---------------------------------------------------------------------


def write_labels(path, labels: dict[str, dict[int, int]]):
    """``labels[chain][index]`` is a metal id, or -1 for a non-binder."""
    lines = ["#labels v1"]
    for chain in sorted(labels):
        for idx in sorted(labels[chain]):
            m = labels[chain][idx]
            lines.append(f"{chain}\t{idx}\t{1 if m >= 0 else 0}\t{m if m >= 0 else '-'}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_labels(path) -> dict[str, dict[int, int]]:
    path = Path(path)
    out: dict[str, dict[int, int]] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        where = f"{path}:{lineno}"
        parts = line.split("\t")
        if len(parts) != 4:
            raise InputError(f"{where}: expected 4 TAB-separated fields")
        chain, idx_s, bind_s, metal_s = parts
        try:
            idx = int(idx_s)
        except ValueError:
            raise InputError(f"{where}: bad residue index {idx_s!r}") from None
        if idx < 0:
            raise InputError(f"{where}: negative residue index")
        if bind_s not in ("0", "1"):
            raise InputError(f"{where}: binding flag must be 0 or 1")
        if bind_s == "1":
            try:
                metal = int(metal_s)
            except ValueError:
                raise InputError(f"{where}: binder needs a metal id, got {metal_s!r}") from None
            if not 0 <= metal < len(METAL_TYPES):
                raise InputError(f"{where}: metal id {metal} outside 0-10")
        else:
            if metal_s != "-":
                raise InputError(f"{where}: non-binder must have metal '-'")
            metal = -1
        chain_labels = out.setdefault(chain, {})
        if idx in chain_labels:
            raise InputError(f"{where}: duplicate label for {chain}:{idx}")
        chain_labels[idx] = metal
    return out


# --- CRC-framed binary helpers ----------------------------------------------------------


class _Reader:
    def __init__(self, buf: bytes, what: str, error=InputError):
        self.buf = buf
        self.pos = 0
        self.what = what
        self.error = error

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise self.error(f"{self.what}: truncated at offset {self.pos}")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals if len(vals) > 1 else vals[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        size = dt.itemsize * count
        if self.pos + size > len(self.buf):
            raise self.error(f"{self.what}: truncated at offset {self.pos}")
        arr = np.frombuffer(self.buf, dtype=dt, count=count, offset=self.pos).copy()
        self.pos += size
        return arr

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise self.error(f"{self.what}: truncated at offset {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out


def _unframe(raw: bytes, magic: bytes, what: str, error) -> bytes:
    if len(raw) < 12 or raw[:4] != magic:
        raise error(f"{what}: bad magic, expected {magic.decode()}")
    payload, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) != crc:
        raise error(f"{what}: CRC mismatch (file corrupted)")
    return payload


def _frame(payload: bytes) -> bytes:
    return payload + struct.pack("<I", zlib.crc32(payload))


# --- graph bundle -----------------------------------------------------------------


def write_bundle(path, networks: Sequence[CoevNetwork], dim: int | None = None):
    if dim is None:
        dim = networks[0].features.shape[1] if networks else 0
    labeled = bool(networks) and all(n.metal is not None for n in networks)
    buf = io.BytesIO()
    buf.write(BUNDLE_MAGIC)
    buf.write(struct.pack("<IIIB", FORMAT_VERSION, len(networks), dim, 1 if labeled else 0))
    for net in networks:
        if net.features is None or net.features.shape != (net.n_nodes, dim):
            raise InputError("bundle networks need features of the declared dimension")
        cid = net.chain_id.encode()
        buf.write(struct.pack("<H", len(cid)))
        buf.write(cid)
        buf.write(struct.pack("<II", net.n_nodes, len(net.edges)))
        buf.write(np.asarray(net.indices, dtype="<u4").tobytes())
        buf.write("".join(r.amino_acid for r in net.nodes).encode("ascii"))
        buf.write(np.asarray(net.edges, dtype="<u4").reshape(-1).tobytes())
        buf.write(np.ascontiguousarray(net.features, dtype="<f4").tobytes())
        if labeled:
            buf.write(np.asarray(net.metal, dtype="i1").tobytes())
    Path(path).write_bytes(_frame(buf.getvalue()))


def read_bundle(path) -> tuple[list[CoevNetwork], bool]:
    """Return ``(networks, labeled)``; features widen to float64."""
    what = str(path)
    payload = _unframe(Path(path).read_bytes(), BUNDLE_MAGIC, what, InputError)
    r = _Reader(payload, what)
    r.raw(4)
    version, n_graphs, dim, labeled = r.take("<IIIB")
    if version != FORMAT_VERSION:
        raise InputError(f"{what}: unsupported bundle version {version}")
    nets = []
    for _ in range(n_graphs):
        cid = r.raw(r.take("<H")).decode()
        n, e = r.take("<II")
        idx = r.array("<u4", n).astype(np.int64)
        aas = r.raw(n).decode("ascii")
        edges = r.array("<u4", 2 * e).astype(np.int64).reshape(e, 2)
        feats = r.array("<f4", n * dim).reshape(n, dim).astype(np.float64)
        nodes = [ResidueRef(cid, int(i), a) for i, a in zip(idx, aas)]
        net = CoevNetwork(cid, nodes, [(int(u), int(v)) for u, v in edges], feats)
        if labeled:
            metal = r.array("i1", n).astype(np.int64)
            net.metal = metal
            net.binding = (metal >= 0).astype(np.int64)
        net.validate(allow_singleton=True)
        nets.append(net)
    if r.pos != len(payload):
        raise InputError(f"{what}: {len(payload) - r.pos} trailing bytes")
    return nets, bool(labeled)


# --- checkpoint -------------------------------------------------------------------


def checkpoint_bytes(ck) -> bytes:
    cfg = ck.model_config
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(
        struct.pack(
            "<IIIIBBBq",
            cfg.n_layers, cfg.d_in, cfg.d_hidden, cfg.n_classes,
            int(cfg.bias), int(cfg.aggregate), TASK_CODES[ck.task], cfg.seed,
        )
    )
    buf.write(struct.pack("<I", ck.m))

    def mat(a):
        a = np.asarray(a, dtype="<f8")
        buf.write(struct.pack("<II", *a.shape))
        buf.write(a.tobytes())

    def vec(a):
        a = np.asarray(a, dtype="<f8")
        buf.write(struct.pack("<I", a.shape[0]))
        buf.write(a.tobytes())

    for model, f1, epoch in zip(ck.models, ck.val_f1, ck.best_epoch):
        for layer in model.layers:
            mat(layer.w1.value)
            mat(layer.w2.value)
            vec(layer.bias.value if layer.bias is not None else np.zeros(0))
        for bn in model.bns:
            buf.write(struct.pack("<I", bn.n_features))
            for a in (bn.gamma.value, bn.beta.value, bn.running_mean, bn.running_var):
                buf.write(np.asarray(a, dtype="<f8").tobytes())
            buf.write(struct.pack("<dd", bn.momentum, bn.epsilon))
        buf.write(struct.pack("<dI", f1, epoch))
    return _frame(buf.getvalue())


def write_checkpoint(path, ck):
    Path(path).write_bytes(checkpoint_bytes(ck))


def read_checkpoint(path):
    return checkpoint_from_bytes(Path(path).read_bytes(), str(path))


def checkpoint_from_bytes(raw: bytes, what: str = "checkpoint"):
    from .trainer import EnsembleCheckpoint

    payload = _unframe(raw, CHECKPOINT_MAGIC, what, CheckpointError)
    r = _Reader(payload, what, CheckpointError)
    r.raw(4)
    version = r.take("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{what}: unsupported checkpoint version {version}")
    n_layers, d_in, d_hidden, n_classes, bias, aggregate, task, seed = r.take("<IIIIBBBq")
    tasks = {v: k for k, v in TASK_CODES.items()}
    if task not in tasks:
        raise CheckpointError(f"{what}: unknown task code {task}")
    try:
        cfg = ModelConfig(n_layers, d_in, d_hidden, n_classes, bool(bias), seed, bool(aggregate))
    except InputError as exc:
        raise CheckpointError(f"{what}: invalid config: {exc}") from None
    m = r.take("<I")
    models, f1s, epochs = [], [], []
    dims = cfg.dims()

    def mat(shape):
        rows, cols = r.take("<II")
        if (rows, cols) != shape:
            raise CheckpointError(f"{what}: matrix {rows}x{cols} where config implies {shape[0]}x{shape[1]}")
        return r.array("<f8", rows * cols).reshape(rows, cols)

    for _ in range(m):
        layers = []
        for li, (d_i, d_o) in enumerate(dims):
            w1 = mat((d_o, d_i))
            w2 = mat((d_o, d_i))
            blen = r.take("<I")
            if blen != (d_o if cfg.has_bias(li) else 0):
                raise CheckpointError(f"{what}: bias length {blen} inconsistent with config")
            b = r.array("<f8", blen)
            layers.append(SageLayer(nc.Parameter(w1), nc.Parameter(w2), nc.Parameter(b) if cfg.has_bias(li) else None))
        bns = []
        for _ in range(n_layers - 1):
            k = r.take("<I")
            if k != d_hidden:
                raise CheckpointError(f"{what}: batch-norm width {k} != hidden size {d_hidden}")
            g, be, rm, rv = (r.array("<f8", k) for _ in range(4))
            mom, eps = r.take("<dd")
            bns.append(nc.BatchNormState(nc.Parameter(g), nc.Parameter(be), rm, rv, mom, eps))
        f1, epoch = r.take("<dI")
        models.append(SageModel(layers, bns, cfg))
        f1s.append(f1)
        epochs.append(epoch)
    if r.pos != len(payload):
        raise CheckpointError(f"{what}: {len(payload) - r.pos} trailing bytes")
    return EnsembleCheckpoint(models, cfg, tasks[task], f1s, epochs)


# --- prediction report ------------------------------------------------------------


REPORT_COLUMNS = "chain\tindex\taa\tp_binding\tcall\tmetal\tp_metal"


def format_report(reports) -> str:
    """Text form of one or more :class:`~mbgnn.pipeline.PredictionReport`."""
    lines = ["#mbgnn-report v1", "#" + REPORT_COLUMNS]
    for rep in reports:
        n_pos = sum(c.call for c in rep.binding_calls)
        lines.append(
            f"#chain={rep.chain_id} length={rep.length} networks={len(rep.networks)} "
            f"calls={len(rep.binding_calls)} positives={n_pos} stage2_networks={len(rep.stage2)}"
        )
        if rep.reason:
            lines.append(f"#reason={rep.reason}")
        types = rep.type_for()
        for c in rep.binding_calls:
            t = types.get(c.residue.index)
            metal = t.metal_name if t else "-"
            p_metal = f"{t.prob:.6f}" if t else "-"
            lines.append(
                f"{rep.chain_id}\t{c.residue.index}\t{c.residue.amino_acid}\t{c.prob_binding:.6f}\t"
                f"{int(c.call)}\t{metal}\t{p_metal}"
            )
        lines.append(f"#networks chain={rep.chain_id}")
        for stage, nets in (("stage1", rep.networks), ("stage2", rep.stage2)):
            for k, net in enumerate(nets.networks):
                res = ",".join(str(i) for i in net.indices)
                edges = ",".join(f"{net.nodes[u].index}-{net.nodes[v].index}" for u, v in net.edges) or "-"
                lines.append(f"{stage}\t{rep.chain_id}\t{k}\t{res}\t{edges}")
    return "\n".join(lines) + "\n"


@dataclass
class ReportRow:
    chain: str
    index: int
    amino_acid: str
    p_binding: float
    call: int
    metal: int  # -1 when no metal assigned
    p_metal: float | None


def parse_report(path) -> tuple[list[ReportRow], set[str]]:
    """Residue rows and the set of chains covered by the report."""
    path = Path(path)
    rows = []
    chains = set()
    names = {n: i for i, n in enumerate(METAL_TYPES)}
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "#mbgnn-report v1":
        raise InputError(f"{path}:1: expected header '#mbgnn-report v1'")
    for lineno, line in enumerate(lines, start=1):
        where = f"{path}:{lineno}"
        if line.startswith("#chain="):
            chains.add(line.split()[0][len("#chain=") :])
            continue
        if not line.strip() or line.startswith("#") or line.startswith("stage"):
            continue
        parts = line.split("\t")
        if len(parts) != 7:
            raise InputError(f"{where}: expected 7 TAB-separated fields")
        chain, idx, aa, pb, call, metal, pm = parts
        try:
            row = ReportRow(
                chain, int(idx), aa, float(pb), int(call),
                -1 if metal == "-" else names[metal],
                None if pm == "-" else float(pm),
            )
        except (ValueError, KeyError):
            raise InputError(f"{where}: cannot parse report row {line!r}") from None
        if row.call not in (0, 1):
            raise InputError(f"{where}: call must be 0 or 1")
        rows.append(row)
        chains.add(chain)
    return rows, chains


def atomic_write_text(path, text: str):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
