"""Live trial sessions: state, append-only persistence, and replay.

Each session is one JSON-lines file. A mutation is appended and fsynced
before the in-memory view changes, so a crash never loses an acknowledged
block entry; startup replays every file in the session directory.
"""

from __future__ import annotations

import json
import os
import secrets
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .core import ContingencyState, EMPTY_STATE


class SessionStoreError(RuntimeError):
    """Session log file that cannot be parsed or replayed."""


@dataclass(frozen=True)
class BlockEntry:
    stratum: ContingencyState
    action: dict | None  # {"block_size", "allocation"} when the block matched a recommendation
    timestamp: str


@dataclass
class TrialSession:
    session_id: str
    policy_id: str
    n_patients: int
    created_at: str
    block_log: list[BlockEntry] = field(default_factory=list)

    @property
    def current_state(self) -> ContingencyState:
        state = EMPTY_STATE
        for entry in self.block_log:
            state = state.add(entry.stratum)
        return state

    @property
    def status(self) -> str:
        return "complete" if self.current_state.total >= self.n_patients else "active"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _stratum_dict(stratum: ContingencyState) -> dict:
    return {
        "n_assigned_A": stratum.n_assigned_a,
        "n_success_A": stratum.n_success_a,
        "n_assigned_B": stratum.n_assigned_b,
        "n_success_B": stratum.n_success_b,
    }


def _stratum_from_dict(doc: dict) -> ContingencyState:
    return ContingencyState(
        int(doc["n_assigned_A"]), int(doc["n_success_A"]),
        int(doc["n_assigned_B"]), int(doc["n_success_B"]),
    )


class SessionStore:
    """In-memory sessions backed by one append-only log file each."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, TrialSession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()
        for path in sorted(self.directory.glob("*.jsonl")):
            session = self._replay(path)
            self._sessions[session.session_id] = session
            self._locks[session.session_id] = threading.Lock()

    def _path(self, session_id: str) -> Path:
        return self.directory / f"{session_id}.jsonl"

    def _replay(self, path: Path) -> TrialSession:
        session: TrialSession | None = None
        try:
            with open(path) as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    if record["type"] == "created":
                        session = TrialSession(
                            session_id=record["session_id"],
                            policy_id=record["policy_id"],
                            n_patients=int(record["n_patients"]),
                            created_at=record["at"],
                        )
                    elif record["type"] == "block":
                        if session is None:
                            raise SessionStoreError(f"{path}: block record before creation")
                        session.block_log.append(BlockEntry(
                            stratum=_stratum_from_dict(record["stratum"]),
                            action=record.get("action"),
                            timestamp=record["at"],
                        ))
                    else:
                        raise SessionStoreError(f"{path}: unknown record type {record['type']!r}")
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise SessionStoreError(f"cannot replay session log {path}: {exc}") from exc
        if session is None:
            raise SessionStoreError(f"{path}: no creation record")
        return session

    def _append(self, session_id: str, record: dict) -> None:
        with open(self._path(session_id), "a") as fh:
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def create(self, policy_id: str, n_patients: int) -> TrialSession:
        session_id = secrets.token_hex(16)
        created_at = _now()
        self._append(session_id, {
            "type": "created",
            "session_id": session_id,
            "policy_id": policy_id,
            "n_patients": n_patients,
            "at": created_at,
        })
        session = TrialSession(session_id, policy_id, n_patients, created_at)
        with self._registry_lock:
            self._sessions[session_id] = session
            self._locks[session_id] = threading.Lock()
        return session

    def get(self, session_id: str) -> TrialSession | None:
        return self._sessions.get(session_id)

    def all_sessions(self) -> list[TrialSession]:
        return sorted(self._sessions.values(), key=lambda s: (s.created_at, s.session_id))

    def lock(self, session_id: str) -> threading.Lock:
        return self._locks[session_id]

    def append_block(self, session: TrialSession, stratum: ContingencyState, action: dict | None) -> BlockEntry:
        """Persist first, then mutate; caller holds the session lock."""
        timestamp = _now()
        self._append(session.session_id, {
            "type": "block",
            "stratum": _stratum_dict(stratum),
            "action": action,
            "at": timestamp,
        })
        entry = BlockEntry(stratum=stratum, action=action, timestamp=timestamp)
        session.block_log.append(entry)
        return entry
