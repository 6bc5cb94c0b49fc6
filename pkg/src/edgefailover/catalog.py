"""Model catalog: families of interchangeable model variants.

A family groups variants of one architecture that can stand in for each
other. Accuracy is normalized per family at ingest so the most accurate
variant scores exactly 1.0; the rest of the package only ever looks at the
normalized value.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

CATALOG_SCHEMA_VERSION = 1

DEFAULT_SIZE_THRESHOLDS_MIB = (50.0, 300.0)

# two measured (size MiB, load ms) points the default load-time line goes through
LOAD_TIME_ANCHORS = ((158.0, 441.0), (806.0, 2105.0))


class CatalogError(ValueError):
    """Raised when catalog input is malformed or inconsistent."""


class SizeClass(str, enum.Enum):
    SMALL = "Small"
    MEDIUM = "Medium"
    LARGE = "Large"


@dataclass(frozen=True)
class ModelVariant:
    variant_id: str
    family_id: str
    raw_accuracy: float
    norm_accuracy: float
    mem_demand: float  # MiB
    compute_demand: float  # fraction of one accelerator
    service_latency: Mapping[str, float] = field(default_factory=dict, hash=False)

    def latency_on(self, server_class: str) -> float:
        try:
            return self.service_latency[server_class]
        except KeyError:
            if "default" in self.service_latency:
                return self.service_latency["default"]
            raise CatalogError(
                f"variant {self.variant_id} has no latency profile for server class {server_class!r}"
            ) from None


@dataclass(frozen=True)
class ModelFamily:
    family_id: str
    variants: tuple[ModelVariant, ...]
    size_class: SizeClass

    @property
    def smallest(self) -> ModelVariant:
        return self.variants[0]

    @property
    def largest(self) -> ModelVariant:
        return self.variants[-1]

    @property
    def demand_spread(self) -> float:
        return self.variants[-1].mem_demand - self.variants[0].mem_demand

    def variant(self, variant_id: str) -> ModelVariant:
        for v in self.variants:
            if v.variant_id == variant_id:
                return v
        raise CatalogError(f"family {self.family_id} has no variant {variant_id!r}")

    def index_of(self, variant_id: str) -> int:
        for i, v in enumerate(self.variants):
            if v.variant_id == variant_id:
                return i
        raise CatalogError(f"family {self.family_id} has no variant {variant_id!r}")


@dataclass(frozen=True)
class LoadTimeModel:
    """Linear load time in milliseconds as a function of memory footprint.

    ``measured`` maps variant ids to measured load times that take precedence
    over the line.
    """

    intercept: float
    slope: float
    measured: Mapping[str, float] = field(default_factory=dict, hash=False)

    def __post_init__(self) -> None:
        if self.slope <= 0:
            raise CatalogError("load-time slope must be positive")
        if self.intercept < 0:
            raise CatalogError("load-time intercept must be non-negative")

    @classmethod
    def fit(cls, points: Sequence[tuple[float, float]]) -> "LoadTimeModel":
        """Least-squares line through (mem MiB, ms) points."""
        if len(points) < 2:
            raise CatalogError("need at least two points to fit a load-time line")
        n = len(points)
        mx = sum(p[0] for p in points) / n
        my = sum(p[1] for p in points) / n
        sxx = sum((p[0] - mx) ** 2 for p in points)
        if sxx == 0:
            raise CatalogError("load-time points need distinct sizes")
        slope = sum((p[0] - mx) * (p[1] - my) for p in points) / sxx
        return cls(intercept=my - slope * mx, slope=slope)

    def __call__(self, mem_mib: float) -> float:
        return self.intercept + self.slope * mem_mib

    def for_variant(self, variant: ModelVariant) -> float:
        ms = self.measured.get(variant.variant_id)
        if ms is not None:
            return ms
        return self(variant.mem_demand)


DEFAULT_LOAD_TIME = LoadTimeModel.fit(LOAD_TIME_ANCHORS)


def load_time(variant: ModelVariant, model: LoadTimeModel = DEFAULT_LOAD_TIME) -> float:
    return model.for_variant(variant)


def normalize_family(raw_accuracies: Sequence[float]) -> list[float]:
    """Scale accuracies so the best one becomes 1.0."""
    if len(raw_accuracies) == 0:
        raise CatalogError("cannot normalize an empty family")
    for a in raw_accuracies:
        if not (0.0 < a <= 1.0) or math.isnan(a):
            raise CatalogError(f"accuracy {a!r} outside (0, 1]")
    best = max(raw_accuracies)
    return [a / best for a in raw_accuracies]


def classify_family(
    family: ModelFamily | float,
    thresholds: tuple[float, float] = DEFAULT_SIZE_THRESHOLDS_MIB,
) -> SizeClass:
    """Bucket a family by the memory gap between its largest and smallest variant.

    Accepts a family or a bare spread in MiB.
    """
    t_small, t_large = thresholds
    if not t_small < t_large:
        raise CatalogError(f"size thresholds must be increasing, got {thresholds}")
    spread = family.demand_spread if isinstance(family, ModelFamily) else float(family)
    if spread < t_small:
        return SizeClass.SMALL
    if spread > t_large:
        return SizeClass.LARGE
    return SizeClass.MEDIUM


def build_family(
    family_id: str,
    rows: Iterable[Mapping],
    thresholds: tuple[float, float] = DEFAULT_SIZE_THRESHOLDS_MIB,
) -> ModelFamily:
    """Ingest raw variant rows into a normalized, size-ordered family."""
    rows = sorted(rows, key=lambda r: r["mem_demand_mib"])
    if not rows:
        raise CatalogError(f"family {family_id} has no variants")
    mems = [r["mem_demand_mib"] for r in rows]
    for a, b in zip(mems, mems[1:]):
        if a == b:
            raise CatalogError(f"family {family_id}: two variants share mem_demand {a} MiB")
    for r in rows:
        if r["mem_demand_mib"] <= 0:
            raise CatalogError(f"variant {r['variant_id']}: mem_demand must be positive")
        if not 0.0 <= r["compute_fraction"] <= 1.0:
            raise CatalogError(f"variant {r['variant_id']}: compute_fraction outside [0, 1]")
    norm = normalize_family([r["raw_accuracy"] for r in rows])
    variants = tuple(
        ModelVariant(
            variant_id=r["variant_id"],
            family_id=family_id,
            raw_accuracy=r["raw_accuracy"],
            norm_accuracy=n,
            mem_demand=float(r["mem_demand_mib"]),
            compute_demand=float(r["compute_fraction"]),
            service_latency=dict(r.get("service_latency_ms") or {}),
        )
        for r, n in zip(rows, norm)
    )
    fam = ModelFamily(family_id, variants, SizeClass.SMALL)
    return ModelFamily(family_id, variants, classify_family(fam, thresholds))


# file schema ----------------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class _VariantRow(_Strict):
    variant_id: str
    raw_accuracy: float = Field(gt=0.0, le=1.0)
    mem_demand_mib: float = Field(gt=0.0)
    compute_fraction: float = Field(ge=0.0, le=1.0)
    service_latency_ms: dict[str, float] = Field(default_factory=dict)
    load_time_ms: float | None = Field(default=None, gt=0.0)


class _FamilyRow(_Strict):
    family_id: str
    variants: list[_VariantRow] = Field(min_length=1)


class _LoadTimeRow(_Strict):
    intercept_ms: float
    slope_ms_per_mib: float


class _CatalogFile(_Strict):
    schema_version: int
    load_time: _LoadTimeRow | None = None
    size_class_thresholds_mib: tuple[float, float] | None = None
    families: list[_FamilyRow] = Field(min_length=1)


class Catalog:
    """Immutable collection of model families plus the load-time model."""

    def __init__(
        self,
        families: Iterable[ModelFamily],
        load_model: LoadTimeModel = DEFAULT_LOAD_TIME,
        thresholds: tuple[float, float] = DEFAULT_SIZE_THRESHOLDS_MIB,
    ) -> None:
        self.families: dict[str, ModelFamily] = {}
        self._variants: dict[str, ModelVariant] = {}
        for fam in families:
            if fam.family_id in self.families:
                raise CatalogError(f"duplicate family {fam.family_id}")
            self.families[fam.family_id] = fam
            for v in fam.variants:
                if v.variant_id in self._variants:
                    raise CatalogError(f"duplicate variant id {v.variant_id}")
                self._variants[v.variant_id] = v
        self.load_model = load_model
        self.thresholds = tuple(thresholds)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Catalog):
            return NotImplemented
        return (
            self.families == other.families
            and self.load_model == other.load_model
            and dict(self.load_model.measured) == dict(other.load_model.measured)
            and self.thresholds == other.thresholds
        )

    def family(self, family_id: str) -> ModelFamily:
        try:
            return self.families[family_id]
        except KeyError:
            raise CatalogError(f"unknown family {family_id!r}") from None

    def variant(self, variant_id: str) -> ModelVariant:
        try:
            return self._variants[variant_id]
        except KeyError:
            raise CatalogError(f"unknown variant {variant_id!r}") from None

    def load_time(self, variant: ModelVariant) -> float:
        return self.load_model.for_variant(variant)

    def by_size_class(self, size_class: SizeClass) -> list[ModelFamily]:
        return [f for f in self.families.values() if f.size_class == size_class]

    # serialization

    def to_dict(self) -> dict:
        fams = []
        for fam in self.families.values():
            rows = []
            for v in fam.variants:
                row = {
                    "variant_id": v.variant_id,
                    "raw_accuracy": v.raw_accuracy,
                    "mem_demand_mib": v.mem_demand,
                    "compute_fraction": v.compute_demand,
                    "service_latency_ms": dict(v.service_latency),
                }
                if v.variant_id in self.load_model.measured:
                    row["load_time_ms"] = self.load_model.measured[v.variant_id]
                rows.append(row)
            fams.append({"family_id": fam.family_id, "variants": rows})
        return {
            "schema_version": CATALOG_SCHEMA_VERSION,
            "load_time": {
                "intercept_ms": self.load_model.intercept,
                "slope_ms_per_mib": self.load_model.slope,
            },
            "size_class_thresholds_mib": list(self.thresholds),
            "families": fams,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Catalog":
        try:
            doc = _CatalogFile.model_validate(data)
        except ValidationError as exc:
            raise CatalogError(f"invalid catalog: {exc}") from exc
        if doc.schema_version != CATALOG_SCHEMA_VERSION:
            raise CatalogError(f"unsupported catalog schema_version {doc.schema_version}")
        thresholds = tuple(doc.size_class_thresholds_mib or DEFAULT_SIZE_THRESHOLDS_MIB)
        measured = {}
        families = []
        for f in doc.families:
            for v in f.variants:
                if v.load_time_ms is not None:
                    measured[v.variant_id] = v.load_time_ms
            rows = [v.model_dump(exclude={"load_time_ms"}) for v in f.variants]
            families.append(build_family(f.family_id, rows, thresholds))
        if doc.load_time is None:
            load_model = LoadTimeModel(DEFAULT_LOAD_TIME.intercept, DEFAULT_LOAD_TIME.slope, measured)
        else:
            load_model = LoadTimeModel(
                doc.load_time.intercept_ms, doc.load_time.slope_ms_per_mib, measured
            )
        return cls(families, load_model, thresholds)

    @classmethod
    def load(cls, path: str | Path) -> "Catalog":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


def default_catalog() -> Catalog:
    """The bundled five-family image-classification catalog."""
    return Catalog.load(Path(__file__).parent / "data" / "catalog.yaml")
