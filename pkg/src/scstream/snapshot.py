"""Versioned, checksummed binary snapshots of an engine.

Layout (little endian)::

    b"SDPM"  u32 version  u32 n_sections
    n_sections x ( u16 name_len, name (utf-8), u64 payload_len, payload )
    32-byte SHA-256 of everything above

Sections: ``state`` (JSON: config, prior, clocks, RNG state and cluster
metadata) and ``stats`` (raw float64 rows of every history entry, in the
order the JSON lists them).
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict

import numpy as np

from .errors import FormatError
from .history import HistoryEntry, HistoryRecord

MAGIC = b"SDPM"
VERSION = 1


def _pack(sections: dict[str, bytes]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(sections))]
    for name, payload in sections.items():
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<Q", len(payload)))
        out.append(payload)
    body = b"".join(out)
    return body + hashlib.sha256(body).digest()


def _unpack(data: bytes) -> dict[str, bytes]:
    if len(data) < 44 or data[:4] != MAGIC:
        raise FormatError("not a snapshot (bad magic)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise FormatError("snapshot checksum mismatch")
    version, n = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise FormatError(f"unsupported snapshot version {version}")
    pos = 12
    sections = {}
    try:
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", body, pos)
            name = body[pos + 2:pos + 2 + ln].decode()
            pos += 2 + ln
            (size,) = struct.unpack_from("<Q", body, pos)
            pos += 8
            sections[name] = body[pos:pos + size]
            pos += size
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"truncated snapshot: {exc}") from None
    if pos != len(body):
        raise FormatError("trailing bytes in snapshot")
    return sections


def _history_meta(h: HistoryRecord, rows: list) -> list:
    meta = []
    for e in h.entries:
        meta.append([e.t, e.n])
        rows.append(e.stats)
    return meta


def dump_state(engine) -> bytes:
    rows: list[np.ndarray] = []
    clusters = []
    for c in engine.clusters:
        clusters.append({
            "id": c.id,
            "weight": c.weight,
            "sub_weights": [float(w) for w in c.sub_weights],
            "history": _history_meta(c.history, rows),
            "sub_history": [_history_meta(h, rows) for h in c.sub_history],
        })
    state = {
        "config": asdict(engine.config),
        "prior": engine.family.prior_dict(),
        "t_now": engine.t_now,
        "n_batches": engine.n_batches,
        "next_id": engine.ids.next_id,
        "rng": engine.rng.bit_generator.state,
        "stat_dim": engine.family.stat_dim,
        "clusters": clusters,
    }
    stats = (np.stack(rows) if rows else np.zeros((0, engine.family.stat_dim))).astype("<f8")
    return _pack({"state": json.dumps(state).encode(), "stats": stats.tobytes()})


def family_from_prior(prior: dict):
    from .gaussian import GaussianNIW, NiwPrior
    from .multinomial import DirichletPrior, MultinomialDirichlet

    kind = prior.get("family")
    if kind == "gaussian":
        return GaussianNIW(NiwPrior(prior["kappa"], np.array(prior["m"]), prior["nu"],
                                    np.array(prior["psi"])))
    if kind == "multinomial":
        return MultinomialDirichlet(DirichletPrior(np.array(prior["d"])))
    raise FormatError(f"unknown family {kind!r}")


def load_state(data: bytes):
    from .engine import EngineConfig, ScStream
    from .sampler import Cluster

    sections = _unpack(bytes(data))
    try:
        state = json.loads(sections["state"])
        P = int(state["stat_dim"])
        stats = np.frombuffer(sections["stats"], dtype="<f8").reshape(-1, P)
        family = family_from_prior(state["prior"])
        engine = ScStream(family, EngineConfig(**state["config"]))
        row = 0

        def history(meta):
            nonlocal row
            entries = []
            for t, n in meta:
                s = stats[row].copy()
                s.setflags(write=False)
                entries.append(HistoryEntry(t, s, n))
                row += 1
            return HistoryRecord(P, entries)

        clusters = []
        for c in state["clusters"]:
            clusters.append(Cluster(c["id"], history(c["history"]),
                                    [history(h) for h in c["sub_history"]],
                                    c["weight"], np.array(c["sub_weights"])))
        if row != len(stats):
            raise FormatError("statistic rows do not match the cluster metadata")
        engine.clusters = clusters
        engine.t_now = state["t_now"]
        engine.n_batches = state["n_batches"]
        engine.ids.next_id = state["next_id"]
        engine.rng.bit_generator.state = state["rng"]
    except FormatError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"malformed snapshot contents: {exc}") from None
    return engine
