"""Durable, versioned policy files with exact round-tripping.

One schema, two encodings: a structured-text form (`.tmdp.json`) for diffs
and small policies, and a length-prefixed binary form (`.tmdp.bin`) for
large tables. Both carry the same header and the same canonical entry
order -- (total, N_A, n_a, n_b) ascending -- so identical policies always
serialize to identical bytes.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import InvalidConfigError, SolverConfig
from .solver import LevelSlice, Policy, arm_split, enumerate_levels

FORMAT_VERSION = 1
TEXT_SUFFIX = ".tmdp.json"
BINARY_SUFFIX = ".tmdp.bin"
_MAGIC = b"TMDPBIN\x00"

_RECORD_DTYPE = np.dtype([
    ("n_assigned_a", "<u2"),
    ("n_success_a", "<u2"),
    ("n_assigned_b", "<u2"),
    ("n_success_b", "<u2"),
    ("block_size", "<u2"),
    ("alloc_index", "<u2"),
    ("value", "<f8"),
])


class UnsupportedVersionError(ValueError):
    """File declares a format version this reader does not speak."""


class CorruptPolicyError(ValueError):
    """File is structurally invalid; message names the first offense."""


@dataclass(frozen=True)
class PolicyFileInfo:
    path: Path
    format: str  # "text" | "binary"
    entry_count: int
    byte_size: int


def header_dict(policy: Policy) -> dict:
    """Header fields shared by both encodings (and the service metadata)."""
    cfg = policy.config
    return {
        "format_version": FORMAT_VERSION,
        "n_patients": cfg.n_patients,
        "failure_weight": cfg.failure_weight,
        "block_cost": cfg.block_cost,
        "allocation_set": list(cfg.allocation_set),
        "min_block": cfg.min_block,
        "block_increment": cfg.block_increment,
        "smoothing": list(cfg.smoothing),
        "entry_count": policy.entry_count,
    }


def detect_format(path: Path) -> str:
    name = str(path)
    if name.endswith(BINARY_SUFFIX):
        return "binary"
    if name.endswith(TEXT_SUFFIX):
        return "text"
    raise InvalidConfigError(f"cannot infer policy format from {path} (use {TEXT_SUFFIX} or {BINARY_SUFFIX})")


def _entry_rows(policy: Policy):
    for state, action, value in policy.entries():
        yield (
            state.n_assigned_a, state.n_success_a,
            state.n_assigned_b, state.n_success_b,
            action.block_size,
            policy.config.allocation_set.index(action.allocation),
            value,
        )


def _encode_text(policy: Policy) -> bytes:
    doc = header_dict(policy)
    doc["entries"] = [list(row) for row in _entry_rows(policy)]
    return (json.dumps(doc, separators=(",", ":")) + "\n").encode("ascii")


def _encode_binary(policy: Policy) -> bytes:
    header = json.dumps(header_dict(policy), separators=(",", ":")).encode("ascii")
    records = np.array(list(_entry_rows(policy)), dtype=_RECORD_DTYPE)
    return b"".join([
        _MAGIC,
        FORMAT_VERSION.to_bytes(4, "little"),
        len(header).to_bytes(4, "little"),
        header,
        records.tobytes(),
    ])


def save(policy: Policy, destination: str | Path, fmt: str | None = None) -> PolicyFileInfo:
    """Serialize canonically and write atomically (temp file + rename)."""
    path = Path(destination)
    fmt = fmt or detect_format(path)
    if policy.config.n_patients >= 1 << 16:
        raise InvalidConfigError("policy files store counts as 16-bit integers; n_patients too large")
    payload = _encode_text(policy) if fmt == "text" else _encode_binary(policy)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise OSError(f"failed to write policy file {path}: {exc}") from exc
    return PolicyFileInfo(path=path, format=fmt, entry_count=policy.entry_count, byte_size=len(payload))


# ---------------------------------------------------------------------------
# Loading and validation
# ---------------------------------------------------------------------------

def _config_from_header(header: dict) -> SolverConfig:
    try:
        return SolverConfig(
            n_patients=int(header["n_patients"]),
            failure_weight=float(header["failure_weight"]),
            block_cost=float(header["block_cost"]),
            allocation_set=tuple(float(p) for p in header["allocation_set"]),
            min_block=int(header["min_block"]),
            block_increment=int(header["block_increment"]),
            smoothing=tuple(float(g) for g in header["smoothing"]),
        )
    except (KeyError, TypeError, ValueError, InvalidConfigError) as exc:
        raise CorruptPolicyError(f"invalid config echo in header: {exc}") from exc


def _check_version(version) -> None:
    if not isinstance(version, int) or version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported policy format version {version!r}")


def _policy_from_rows(header: dict, rows) -> Policy:
    _check_version(header.get("format_version"))
    cfg = _config_from_header(header)
    declared = header.get("entry_count")
    if declared != len(rows):
        raise CorruptPolicyError(f"header declares {declared} entries, file carries {len(rows)}")
    schedule = enumerate_levels(cfg)
    allowed = set(schedule.levels)
    n_alloc = len(cfg.allocation_set)

    grouped: dict[tuple[int, int], list] = {}
    prev_key = None
    for i, row in enumerate(rows):
        n_arm_a, n_a, n_arm_b, n_b, block, alloc_idx = (int(v) for v in row[:6])
        value = float(row[6])
        where = f"entry {i} {tuple(row[:6])}"
        total = n_arm_a + n_arm_b
        if n_a > n_arm_a or n_b > n_arm_b or min(n_arm_a, n_a, n_arm_b, n_b) < 0:
            raise CorruptPolicyError(f"{where}: malformed contingency counts")
        if total not in allowed or total >= cfg.n_patients:
            raise CorruptPolicyError(f"{where}: total {total} is not an allowed non-terminal level")
        if alloc_idx >= n_alloc:
            raise CorruptPolicyError(f"{where}: allocation index {alloc_idx} out of range")
        target = total + block
        if block < cfg.min_block or target not in allowed or target not in schedule.viable:
            raise CorruptPolicyError(f"{where}: block size {block} is infeasible at total {total}")
        if min(arm_split(block, cfg.allocation_set[alloc_idx])) < 1:
            raise CorruptPolicyError(f"{where}: action leaves an arm empty")
        key = (total, n_arm_a, n_a, n_b)
        if prev_key is not None and key <= prev_key:
            raise CorruptPolicyError(f"{where}: entries out of canonical order or duplicated")
        prev_key = key
        grouped.setdefault((total, n_arm_a), []).append((n_a, n_b, block, alloc_idx, value))

    tables: dict[int, dict[int, LevelSlice]] = {}
    for (total, n_arm_a), cells in grouped.items():
        n_arm_b = total - n_arm_a
        shape = (n_arm_a + 1, n_arm_b + 1)
        if len(cells) != shape[0] * shape[1]:
            raise CorruptPolicyError(
                f"slice (total={total}, N_A={n_arm_a}) has {len(cells)} entries, expected {shape[0] * shape[1]}"
            )
        values = np.empty(shape)
        blocks = np.empty(shape, dtype=np.int32)
        allocs = np.empty(shape, dtype=np.int16)
        for n_a, n_b, block, alloc_idx, value in cells:
            values[n_a, n_b] = value
            blocks[n_a, n_b] = block
            allocs[n_a, n_b] = alloc_idx
        tables.setdefault(total, {})[n_arm_a] = LevelSlice(values, blocks, allocs)

    interior = [lv for lv in schedule.levels if 0 < lv < cfg.n_patients]
    from .core import count_states  # local import avoids a cycle at module load

    return Policy(
        config=cfg,
        schedule=schedule,
        tables=tables,
        allocated_states=1 + sum(count_states(i) for i in interior),
    )


def _decode_text(raw: bytes) -> Policy:
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptPolicyError(f"not a structured-text policy file: {exc}") from exc
    if not isinstance(doc, dict) or "entries" not in doc:
        raise CorruptPolicyError("text policy file lacks an entries list")
    entries = doc["entries"]
    if not isinstance(entries, list) or not all(isinstance(e, list) and len(e) == 7 for e in entries):
        raise CorruptPolicyError("entries must be 7-field lists")
    return _policy_from_rows(doc, entries)


def _decode_binary(raw: bytes) -> Policy:
    if len(raw) < len(_MAGIC) + 8 or raw[: len(_MAGIC)] != _MAGIC:
        raise CorruptPolicyError("missing binary policy magic")
    version = int.from_bytes(raw[8:12], "little")
    _check_version(version)
    header_len = int.from_bytes(raw[12:16], "little")
    body = raw[16:]
    if header_len > len(body):
        raise CorruptPolicyError("truncated header")
    try:
        header = json.loads(body[:header_len].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptPolicyError(f"unreadable binary header: {exc}") from exc
    blob = body[header_len:]
    if len(blob) % _RECORD_DTYPE.itemsize != 0:
        raise CorruptPolicyError("truncated entry records")
    records = np.frombuffer(blob, dtype=_RECORD_DTYPE)
    rows = [
        (
            int(r["n_assigned_a"]), int(r["n_success_a"]),
            int(r["n_assigned_b"]), int(r["n_success_b"]),
            int(r["block_size"]), int(r["alloc_index"]), float(r["value"]),
        )
        for r in records
    ]
    return _policy_from_rows(header, rows)


def load(source: str | Path) -> Policy:
    """Read and validate a policy file; failures raise typed errors."""
    path = Path(source)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"failed to read policy file {path}: {exc}") from exc
    if raw[: len(_MAGIC)] == _MAGIC:
        return _decode_binary(raw)
    return _decode_text(raw)


def read_header(source: str | Path) -> dict:
    """Header fields only (cheap metadata peek, same validation of version)."""
    path = Path(source)
    raw = path.read_bytes()
    if raw[: len(_MAGIC)] == _MAGIC:
        header_len = int.from_bytes(raw[12:16], "little")
        _check_version(int.from_bytes(raw[8:12], "little"))
        try:
            return json.loads(raw[16:16 + header_len].decode("ascii"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptPolicyError(f"unreadable binary header: {exc}") from exc
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptPolicyError(f"not a policy file: {exc}") from exc
    _check_version(doc.get("format_version"))
    doc.pop("entries", None)
    return doc
