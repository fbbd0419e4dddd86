"""Sample manifests: loading, validation, and subgroup resolution.

The manifest is a UTF-8 CSV with a header of `id,image_path`, one 0/1
column per class, then one column per declared attribute. Attribute cells
may be empty, which records the value as unknown; unknown values exclude a
sample from any subgroup keyed on that attribute.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from .config import DatasetSchema, SubgroupDef
from .errors import ConfigError, ManifestError

__all__ = [
    "SampleRecord",
    "Dataset",
    "SubgroupPartition",
    "ValidationReport",
    "load_manifest",
    "save_manifest",
    "resolve_subgroups",
    "validate",
]

AttrValue = "str | float | None"


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_path: str
    labels: tuple[int, ...]
    attributes: dict  # attr name -> str | float | None (None = unknown)


@dataclass(frozen=True)
class Dataset:
    name: str
    class_names: tuple[str, ...]
    samples: tuple[SampleRecord, ...]
    base_dir: Path | None = None
    rejected_rows: tuple[int, ...] = ()  # 1-based data-row numbers dropped for missing labels

    def __len__(self) -> int:
        return len(self.samples)

    def attribute_names(self) -> tuple[str, ...]:
        if not self.samples:
            return ()
        return tuple(self.samples[0].attributes.keys())

    def resolved_path(self, sample: SampleRecord) -> Path:
        p = Path(sample.image_path)
        if p.is_absolute() or self.base_dir is None:
            return p
        return self.base_dir / p

    def labels_column(self, class_index: int) -> list[int]:
        return [s.labels[class_index] for s in self.samples]


@dataclass(frozen=True)
class SubgroupPartition:
    """Resolved sample indices per subgroup plus the implicit 'All' group."""

    groups: dict  # name -> tuple[int, ...]
    excluded_unknown: dict  # name -> count of samples skipped for unknown attribute

    def names(self) -> tuple[str, ...]:
        return tuple(self.groups.keys())


def load_manifest(path: str | Path, schema: DatasetSchema, name: str | None = None) -> Dataset:
    """Parse a manifest CSV against the declared schema.

    Rows with an empty label cell are dropped (their row numbers are kept
    for reporting); any other malformed cell is an error naming the row.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    expected = ["id", "image_path", *schema.class_names, *schema.attribute_names()]
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest") from None
        if header != expected:
            raise ManifestError(
                f"{path}: header does not match schema; expected {expected}, got {header}"
            )
        samples: list[SampleRecord] = []
        seen_ids: set[str] = set()
        rejected: list[int] = []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(expected):
                raise ManifestError(f"{path} row {row_no}: expected {len(expected)} cells, got {len(row)}")
            sid, image_path = row[0], row[1]
            if not sid:
                raise ManifestError(f"{path} row {row_no}: empty id")
            if sid in seen_ids:
                raise ManifestError(f"{path} row {row_no}: duplicate id {sid!r}")
            label_cells = row[2 : 2 + len(schema.class_names)]
            if any(cell == "" for cell in label_cells):
                rejected.append(row_no)
                continue
            labels: list[int] = []
            for cls, cell in zip(schema.class_names, label_cells):
                if cell not in ("0", "1"):
                    raise ManifestError(
                        f"{path} row {row_no}: label for {cls!r} must be 0 or 1, got {cell!r}"
                    )
                labels.append(int(cell))
            attrs: dict = {}
            for decl, cell in zip(schema.attributes, row[2 + len(schema.class_names) :]):
                if cell == "":
                    attrs[decl.name] = None
                elif decl.type == "number":
                    try:
                        attrs[decl.name] = float(cell)
                    except ValueError:
                        raise ManifestError(
                            f"{path} row {row_no}: attribute {decl.name!r} must be numeric, got {cell!r}"
                        ) from None
                else:
                    attrs[decl.name] = cell
            seen_ids.add(sid)
            samples.append(SampleRecord(id=sid, image_path=image_path, labels=tuple(labels), attributes=attrs))
    return Dataset(
        name=name if name is not None else path.stem,
        class_names=schema.class_names,
        samples=tuple(samples),
        base_dir=path.parent,
        rejected_rows=tuple(rejected),
    )


def _format_attr(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def save_manifest(ds: Dataset, path: str | Path) -> Path:
    """Write a dataset back to manifest form; reloading yields an equal dataset."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    attr_names = ds.attribute_names()
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "image_path", *ds.class_names, *attr_names])
        for s in ds.samples:
            writer.writerow(
                [s.id, s.image_path, *[str(v) for v in s.labels], *[_format_attr(s.attributes[a]) for a in attr_names]]
            )
    return path


def resolve_subgroups(defs: list[SubgroupDef] | tuple[SubgroupDef, ...], ds: Dataset) -> SubgroupPartition:
    """Evaluate each predicate over the dataset; unknown attributes exclude."""
    attr_names = ds.attribute_names()
    groups: dict = {"All": tuple(range(len(ds.samples)))}
    excluded: dict = {}
    for d in defs:
        if ds.samples and d.attr not in attr_names:
            raise ConfigError(f"subgroup {d.name!r}", f"references undeclared attribute {d.attr!r}")
        idx: list[int] = []
        unknown = 0
        for i, s in enumerate(ds.samples):
            v = s.attributes.get(d.attr)
            if v is None:
                unknown += 1
                continue
            if d.matches(v):
                idx.append(i)
        groups[d.name] = tuple(idx)
        excluded[d.name] = unknown
    return SubgroupPartition(groups=groups, excluded_unknown=excluded)


@dataclass(frozen=True)
class ValidationReport:
    n_samples: int
    positives_per_class: dict  # class name -> count
    attribute_histograms: dict  # attr -> {value repr: count}, unknowns under ""
    missing_files: tuple[str, ...]
    rejected_rows: tuple[int, ...]
    warnings: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "positives_per_class": self.positives_per_class,
            "attribute_histograms": self.attribute_histograms,
            "missing_files": list(self.missing_files),
            "rejected_rows": list(self.rejected_rows),
            "warnings": list(self.warnings),
        }


def validate(ds: Dataset, check_files: bool = False) -> ValidationReport:
    """Summarize label balance and attribute coverage; flags degenerate classes."""
    warnings: list[str] = []
    positives: dict = {}
    n = len(ds.samples)
    for ci, cls in enumerate(ds.class_names):
        pos = sum(s.labels[ci] for s in ds.samples)
        positives[cls] = pos
        if pos == 0:
            warnings.append(f"class {cls!r} has no positive samples; AUC/TPR will be undefined")
        elif pos == n and n > 0:
            warnings.append(f"class {cls!r} has no negative samples; AUC/FPR will be undefined")
    histograms: dict = {}
    for attr in ds.attribute_names():
        hist: dict = {}
        for s in ds.samples:
            key = _format_attr(s.attributes.get(attr))
            hist[key] = hist.get(key, 0) + 1
        histograms[attr] = hist
    missing: list[str] = []
    if check_files:
        for s in ds.samples:
            if not ds.resolved_path(s).exists():
                missing.append(s.image_path)
    if ds.rejected_rows:
        warnings.append(f"{len(ds.rejected_rows)} manifest rows dropped for missing labels")
    return ValidationReport(
        n_samples=n,
        positives_per_class=positives,
        attribute_histograms=histograms,
        missing_files=tuple(missing),
        rejected_rows=ds.rejected_rows,
        warnings=tuple(warnings),
    )
