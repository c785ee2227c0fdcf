"""Run provenance: canonical config digests and output manifests."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field

__all__ = ["canonical_json", "config_digest", "RunManifest"]


def _plain(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _plain(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if hasattr(obj, "item"):  # numpy scalars
        return obj.item()
    return obj


def canonical_json(obj) -> str:
    """JSON with sorted keys and no whitespace variance; digest-stable."""
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def config_digest(obj) -> str:
    """Stable hex digest of a config; identical for semantically equal configs."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


@dataclass
class RunManifest:
    """Everything needed to re-run a command bit-identically (plus wall clock)."""

    command: str
    config_digest: str
    master_seed: int
    software_version: str
    wall_clock_s: float = 0.0
    method_iters: dict = field(default_factory=dict)
    started_unix: float = field(default_factory=time.time)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)
