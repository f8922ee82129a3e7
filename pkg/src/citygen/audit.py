"""Data-access audit log.

Every dataset read is tagged with (city, split, kind, stage).  The benchmark
uses this to prove the zero-label contract: while any synthesis-pipeline stage
is active, no target-city mask and no target-city test frame may be touched.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class AccessRecord:
    path: str
    city: str
    split: str
    kind: str  # "frame" | "mask" | "scene"
    stage: str


@dataclass
class AccessAudit:
    records: list[AccessRecord] = field(default_factory=list)
    stage: str = "idle"

    def set_stage(self, stage: str) -> None:
        self.stage = stage

    def note(self, path, city: str, split: str, kind: str) -> None:
        self.records.append(AccessRecord(str(path), city, split, kind, self.stage))

    def violations(self, target_city: str, stage_prefix: str) -> list[AccessRecord]:
        """Target-city mask reads or test-frame reads inside matching stages."""
        bad = []
        for r in self.records:
            if not r.stage.startswith(stage_prefix) or r.city != target_city:
                continue
            if r.kind == "mask" or (r.kind == "frame" and r.split == "test"):
                bad.append(r)
        return bad

    def summary(self) -> dict:
        counts: dict[str, int] = {}
        for r in self.records:
            key = f"{r.stage}:{r.city}:{r.split}:{r.kind}"
            counts[key] = counts.get(key, 0) + 1
        return counts
