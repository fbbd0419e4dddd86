"""Declarative JSON config: dataset schema, subgroup definitions, suite table.

A single config file drives a run. Every section is optional; missing
sections fall back to defaults (suite) or are simply absent (schema,
subgroups). Validation errors carry the dotted path of the bad field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .perturb import PerturbationKind, SeverityTable, SuiteConfig

__all__ = [
    "AttributeDecl",
    "DatasetSchema",
    "SubgroupDef",
    "AppConfig",
    "load_config",
    "parse_config",
    "parse_suite",
    "parse_subgroups",
    "parse_schema",
]

ATTRIBUTE_TYPES = ("string", "number")


@dataclass(frozen=True)
class AttributeDecl:
    name: str
    type: str  # "string" | "number"


@dataclass(frozen=True)
class DatasetSchema:
    """Declares the manifest layout: class columns plus typed attribute columns."""

    class_names: tuple[str, ...]
    attributes: tuple[AttributeDecl, ...]

    def attribute_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def attribute_type(self, name: str) -> str | None:
        for a in self.attributes:
            if a.name == name:
                return a.type
        return None


@dataclass(frozen=True)
class SubgroupDef:
    """Named predicate over one attribute: equality or a numeric range.

    Range bounds may be open on either side; inclusivity is explicit so
    bins like `39 <= age <= 59` and `age < 39` can coexist without overlap.
    """

    name: str
    attr: str
    equals: str | float | None = None
    range_min: float | None = None
    range_max: float | None = None
    min_inclusive: bool = True
    max_inclusive: bool = True

    @property
    def is_range(self) -> bool:
        return self.equals is None

    def matches(self, value) -> bool:
        if value is None:
            return False
        if not self.is_range:
            return value == self.equals
        v = float(value)
        if self.range_min is not None:
            if v < self.range_min or (v == self.range_min and not self.min_inclusive):
                return False
        if self.range_max is not None:
            if v > self.range_max or (v == self.range_max and not self.max_inclusive):
                return False
        return True


@dataclass(frozen=True)
class AppConfig:
    schema: DatasetSchema | None = None
    subgroups: tuple[SubgroupDef, ...] = ()
    suite: SuiteConfig = field(default_factory=SuiteConfig)
    raw: dict = field(default_factory=dict, repr=False)


def _expect(obj, types, path: str, what: str):
    if not isinstance(obj, types):
        raise ConfigError(path, f"expected {what}, got {type(obj).__name__}")
    return obj


def parse_schema(node: dict, path: str = "") -> DatasetSchema:
    classes = _expect(node.get("classes"), list, f"{path}classes", "a list of class names")
    if not classes:
        raise ConfigError(f"{path}classes", "must not be empty")
    names: list[str] = []
    for i, c in enumerate(classes):
        _expect(c, str, f"{path}classes[{i}]", "a string")
        if c in names:
            raise ConfigError(f"{path}classes[{i}]", f"duplicate class name {c!r}")
        names.append(c)
    attrs: list[AttributeDecl] = []
    for i, a in enumerate(node.get("attributes", [])):
        apath = f"{path}attributes[{i}]"
        _expect(a, dict, apath, "an object")
        name = _expect(a.get("name"), str, f"{apath}.name", "a string")
        atype = a.get("type", "string")
        if atype not in ATTRIBUTE_TYPES:
            raise ConfigError(f"{apath}.type", f"must be one of {ATTRIBUTE_TYPES}, got {atype!r}")
        if any(d.name == name for d in attrs):
            raise ConfigError(f"{apath}.name", f"duplicate attribute {name!r}")
        attrs.append(AttributeDecl(name=name, type=atype))
    return DatasetSchema(class_names=tuple(names), attributes=tuple(attrs))


def parse_subgroups(node: list, schema: DatasetSchema | None, path: str = "subgroups") -> tuple[SubgroupDef, ...]:
    _expect(node, list, path, "a list")
    defs: list[SubgroupDef] = []
    for i, g in enumerate(node):
        gpath = f"{path}[{i}]"
        _expect(g, dict, gpath, "an object")
        name = _expect(g.get("name"), str, f"{gpath}.name", "a string")
        if name == "All":
            raise ConfigError(f"{gpath}.name", "'All' is reserved for the implicit full group")
        if any(d.name == name for d in defs):
            raise ConfigError(f"{gpath}.name", f"duplicate subgroup {name!r}")
        attr = _expect(g.get("attr"), str, f"{gpath}.attr", "an attribute name")
        if schema is not None and attr not in schema.attribute_names():
            raise ConfigError(f"{gpath}.attr", f"attribute {attr!r} is not declared in the schema")
        has_eq = "equals" in g
        has_range = "range" in g
        if has_eq == has_range:
            raise ConfigError(gpath, "exactly one of 'equals' or 'range' is required")
        if has_eq:
            eq = g["equals"]
            if not isinstance(eq, (str, int, float)) or isinstance(eq, bool):
                raise ConfigError(f"{gpath}.equals", "must be a string or number")
            if isinstance(eq, (int, float)):
                eq = float(eq)
            defs.append(SubgroupDef(name=name, attr=attr, equals=eq))
            continue
        r = _expect(g["range"], dict, f"{gpath}.range", "an object")
        if schema is not None and schema.attribute_type(attr) == "string":
            raise ConfigError(f"{gpath}.range", f"attribute {attr!r} is a string; ranges need numbers")
        lo, hi = r.get("min"), r.get("max")
        if lo is None and hi is None:
            raise ConfigError(f"{gpath}.range", "at least one of 'min'/'max' is required")
        for key, v in (("min", lo), ("max", hi)):
            if v is not None and (not isinstance(v, (int, float)) or isinstance(v, bool)):
                raise ConfigError(f"{gpath}.range.{key}", "must be a number")
        defs.append(
            SubgroupDef(
                name=name,
                attr=attr,
                range_min=None if lo is None else float(lo),
                range_max=None if hi is None else float(hi),
                min_inclusive=bool(r.get("min_inclusive", True)),
                max_inclusive=bool(r.get("max_inclusive", True)),
            )
        )
    return tuple(defs)


_BASE_KEYS = {
    "gamma": "gamma_base",
    "contrast": "contrast_base",
    "brightness": "brightness_base",
    "sharpness": "sharpness_base",
}


def parse_suite(node: dict, path: str = "suite") -> SuiteConfig:
    _expect(node, dict, path, "an object")
    table_kwargs = {}
    bases = node.get("bases", {})
    _expect(bases, dict, f"{path}.bases", "an object")
    for key, value in bases.items():
        if key not in _BASE_KEYS:
            raise ConfigError(f"{path}.bases.{key}", f"unknown kind; expected one of {sorted(_BASE_KEYS)}")
        if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 1.0:
            raise ConfigError(f"{path}.bases.{key}", f"must be a number > 1, got {value!r}")
        table_kwargs[_BASE_KEYS[key]] = float(value)
    step = node.get("blur_sigma_step")
    if step is not None:
        if not isinstance(step, (int, float)) or isinstance(step, bool) or not step > 0:
            raise ConfigError(f"{path}.blur_sigma_step", f"must be a number > 0, got {step!r}")
        table_kwargs["blur_sigma_step"] = float(step)
    table = SeverityTable(**table_kwargs)

    levels: dict[PerturbationKind, tuple[int, ...]] = {}
    for key, value in node.get("levels", {}).items():
        lpath = f"{path}.levels.{key}"
        try:
            kind = PerturbationKind(key)
        except ValueError:
            raise ConfigError(lpath, f"unknown kind {key!r}") from None
        if kind is PerturbationKind.BLUR:
            raise ConfigError(lpath, "blur levels go under 'blur_levels'")
        levels[kind] = _parse_level_list(value, lpath, lo=-3, hi=3, allow_zero=False)
    blur_levels = node.get("blur_levels")
    if blur_levels is not None:
        levels[PerturbationKind.BLUR] = _parse_level_list(
            blur_levels, f"{path}.blur_levels", lo=1, hi=6, allow_zero=False
        )
    return SuiteConfig(table=table, levels=levels)


def _parse_level_list(value, path: str, lo: int, hi: int, allow_zero: bool) -> tuple[int, ...]:
    _expect(value, list, path, "a list of integers")
    if not value:
        raise ConfigError(path, "must not be empty")
    out: list[int] = []
    for i, v in enumerate(value):
        if not isinstance(v, int) or isinstance(v, bool):
            raise ConfigError(f"{path}[{i}]", f"must be an integer, got {v!r}")
        if v == 0 and not allow_zero:
            raise ConfigError(f"{path}[{i}]", "level 0 is the identity and is excluded")
        if not lo <= v <= hi:
            raise ConfigError(f"{path}[{i}]", f"level {v} outside {lo}..{hi}")
        if v in out:
            raise ConfigError(f"{path}[{i}]", f"duplicate level {v}")
        out.append(v)
    return tuple(out)


def parse_config(raw: dict) -> AppConfig:
    _expect(raw, dict, "<root>", "a JSON object")
    schema = None
    if "classes" in raw:
        schema = parse_schema(raw)
    subgroups: tuple[SubgroupDef, ...] = ()
    if "subgroups" in raw:
        subgroups = parse_subgroups(raw["subgroups"], schema)
    suite = parse_suite(raw["suite"]) if "suite" in raw else SuiteConfig()
    return AppConfig(schema=schema, subgroups=subgroups, suite=suite, raw=raw)


def load_config(path: str | Path) -> AppConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(str(path), "config file not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), f"invalid JSON: {e}") from None
    return parse_config(raw)
