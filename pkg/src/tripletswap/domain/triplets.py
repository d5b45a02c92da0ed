# src/tripletswap/domain/triplets.py
"""
Records flowing between data generation, triplet construction and training.

A TripletRecord stores the factors of every role (A1 source, B donor,
B~ pseudo target, A2 ground truth) so the supervision can be audited at the
factor level; the image paths point at the rendered PNGs.
"""
from __future__ import annotations

import hashlib
import json
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from tripletswap.domain.factors import FactorVector

ROLES = ("source", "pseudo_target", "ground_truth", "donor")
ControlTransform = Literal["preserve_glasses", "transfer_face_shape"]

# CLI spelling -> transform name
TRANSFORM_ALIASES: dict[str, ControlTransform | None] = {
    "none": None,
    "glasses": "preserve_glasses",
    "preserve_glasses": "preserve_glasses",
    "shape": "transfer_face_shape",
    "transfer_face_shape": "transfer_face_shape",
}


def _canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class SampleRecord(BaseModel):
    """One line of the face dataset manifest."""

    model_config = ConfigDict(frozen=True)

    id_key: str
    image_path: str
    identity: tuple[float, ...]
    attributes: tuple[float, ...]
    seed: int

    @property
    def factors(self) -> FactorVector:
        return FactorVector(identity=self.identity, attributes=self.attributes)


class TripletRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    pair_seed: int
    donor_seed: int
    repeat: int = 0
    source: FactorVector
    pseudo_target: FactorVector
    ground_truth: FactorVector
    donor: FactorVector
    proxy_name: str
    proxy_seed: int = 0
    control_transform: ControlTransform | None = None
    paths: dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _shared_identity(self) -> TripletRecord:
        if self.source.identity != self.ground_truth.identity:
            raise ValueError("source and ground_truth must share identity factors")
        return self

    @property
    def dedup_key(self) -> tuple[int, int, int]:
        return (self.pair_seed, self.donor_seed, self.repeat)

    def factors_for(self, role: str) -> FactorVector:
        if role not in ROLES:
            raise KeyError(f"unknown role {role!r}")
        return getattr(self, role)

    def with_pseudo_target(self, pseudo_target: FactorVector, transform: ControlTransform) -> TripletRecord:
        return self.model_copy(update={"pseudo_target": pseudo_target, "control_transform": transform})

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "proxy_name": self.proxy_name,
            "transform": self.control_transform,
            "seeds": {"pair": self.pair_seed, "donor": self.donor_seed, "proxy": self.proxy_seed, "repeat": self.repeat},
        }
        for role in ROLES:
            f = self.factors_for(role)
            rec[f"{role}_path"] = self.paths.get(role)
            rec[f"{role}_identity"] = list(f.identity)
            rec[f"{role}_attributes"] = list(f.attributes)
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> TripletRecord:
        seeds = rec["seeds"]
        roles = {
            role: FactorVector(identity=rec[f"{role}_identity"], attributes=rec[f"{role}_attributes"])
            for role in ROLES
        }
        paths = {role: rec[f"{role}_path"] for role in ROLES if rec.get(f"{role}_path")}
        return cls(
            pair_seed=int(seeds["pair"]),
            donor_seed=int(seeds["donor"]),
            proxy_seed=int(seeds.get("proxy", 0)),
            repeat=int(seeds.get("repeat", 0)),
            proxy_name=rec["proxy_name"],
            control_transform=rec.get("transform"),
            paths=paths,
            **roles,
        )

    def record_hash(self) -> str:
        payload = self.to_record()
        for role in ROLES:
            payload.pop(f"{role}_path", None)
        return hashlib.sha256(_canonical(payload).encode()).hexdigest()


class DatasetManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int
    proxy: dict[str, Any]
    transform: ControlTransform | None = None
    counts: dict[str, int] = Field(default_factory=dict)
    records: tuple[TripletRecord, ...] = ()

    @property
    def proxy_name(self) -> str:
        return str(self.proxy.get("name", ""))

    def header(self) -> dict[str, Any]:
        return {"seed": self.seed, "proxy": self.proxy, "transform": self.transform, "counts": self.counts}

    def to_jsonl(self) -> str:
        return "".join(_canonical(r.to_record()) + "\n" for r in self.records)

    @classmethod
    def parse(cls, header: dict[str, Any], jsonl: str) -> DatasetManifest:
        records = tuple(
            TripletRecord.from_record(json.loads(line)) for line in jsonl.splitlines() if line.strip()
        )
        return cls(records=records, **header)
