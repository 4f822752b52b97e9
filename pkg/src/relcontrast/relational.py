"""Relational databases: schemas, typed rows, integrity checks and pruning.

Cell values are plain Python objects whose meaning is fixed by the column's
semantic type:

=================  ==========================
semantic type      Python value
=================  ==========================
numerical          ``float``
categorical        ``str``
multi_categorical  ``frozenset[str]``
text               ``str``
timestamp          ``int`` (epoch seconds)
primary/foreign    ``str`` (non-empty)
any, when missing  ``None``
=================  ==========================

A row is a tuple aligned with ``TableSchema.attributes``.
"""
from __future__ import annotations

import csv
import enum
import json
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import (
    IntegrityError,
    IoError,
    KeyColumnNotAllowed,
    ParseError,
    SchemaError,
    UnknownColumn,
)

Row = tuple


class SType(enum.Enum):
    NUMERICAL = "numerical"
    CATEGORICAL = "categorical"
    MULTI_CATEGORICAL = "multi_categorical"
    TEXT = "text"
    TIMESTAMP = "timestamp"
    PRIMARY_KEY = "primary_key"
    FOREIGN_KEY = "foreign_key"

    @property
    def is_key(self) -> bool:
        return self in (SType.PRIMARY_KEY, SType.FOREIGN_KEY)


@dataclass(frozen=True)
class Attribute:
    name: str
    stype: SType
    nullable: bool = True
    target: str | None = None  # referenced table, foreign keys only


@dataclass(frozen=True)
class TableSchema:
    name: str
    attributes: tuple[Attribute, ...]
    time_attribute: str | None = None

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError(f"table {self.name!r}: duplicate attribute names")
        pks = [a for a in self.attributes if a.stype is SType.PRIMARY_KEY]
        if len(pks) != 1:
            raise SchemaError(
                f"table {self.name!r}: expected exactly one primary key, found {len(pks)}"
            )
        for a in self.attributes:
            if a.stype is SType.FOREIGN_KEY and not a.target:
                raise SchemaError(f"{self.name}.{a.name}: foreign key without target table")
        if self.time_attribute is not None:
            if self.time_attribute not in names:
                raise SchemaError(
                    f"table {self.name!r}: unknown time attribute {self.time_attribute!r}"
                )
            if self.attribute(self.time_attribute).stype is not SType.TIMESTAMP:
                raise SchemaError(f"table {self.name!r}: time attribute must be a timestamp")

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def index(self, name: str) -> int:
        for i, a in enumerate(self.attributes):
            if a.name == name:
                return i
        raise UnknownColumn(f"{self.name}.{name}")

    def attribute(self, name: str) -> Attribute:
        return self.attributes[self.index(name)]

    @property
    def primary_key(self) -> str:
        return next(a.name for a in self.attributes if a.stype is SType.PRIMARY_KEY)

    @property
    def foreign_keys(self) -> list[Attribute]:
        return [a for a in self.attributes if a.stype is SType.FOREIGN_KEY]

    @property
    def feature_attributes(self) -> list[Attribute]:
        """Non-key attributes, in schema order."""
        return [a for a in self.attributes if not a.stype.is_key]


@dataclass(frozen=True)
class DatabaseSchema:
    tables: tuple[TableSchema, ...]

    def __post_init__(self):
        names = [t.name for t in self.tables]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate table names")
        known = set(names)
        for t in self.tables:
            for fk in t.foreign_keys:
                if fk.target not in known:
                    raise SchemaError(
                        f"{t.name}.{fk.name} references unknown table {fk.target!r}"
                    )

    def table(self, name: str) -> TableSchema:
        for t in self.tables:
            if t.name == name:
                return t
        raise SchemaError(f"unknown table {name!r}")

    @property
    def table_names(self) -> list[str]:
        return [t.name for t in self.tables]

    def to_dict(self) -> dict:
        out = []
        for t in self.tables:
            entry: dict[str, Any] = {
                "name": t.name,
                "attributes": [
                    {"name": a.name, "stype": a.stype.value, "nullable": a.nullable}
                    for a in t.attributes
                ],
                "primary_key": t.primary_key,
                "foreign_keys": [
                    {"column": a.name, "target_table": a.target} for a in t.foreign_keys
                ],
            }
            if t.time_attribute is not None:
                entry["time_attribute"] = t.time_attribute
            out.append(entry)
        return {"tables": out}


def schema_from_dict(doc: Mapping) -> DatabaseSchema:
    try:
        tables = []
        for tdoc in doc["tables"]:
            name = tdoc["name"]
            fk_targets = {}
            for fk in tdoc.get("foreign_keys", []):
                if fk["column"] in fk_targets:
                    raise SchemaError(f"{name}.{fk['column']}: foreign key declared twice")
                fk_targets[fk["column"]] = fk["target_table"]
            declared_pk = tdoc.get("primary_key")
            attrs = []
            for adoc in tdoc["attributes"]:
                try:
                    stype = SType(adoc["stype"])
                except ValueError:
                    raise ParseError(f"{name}.{adoc['name']}: unknown stype {adoc['stype']!r}")
                aname = adoc["name"]
                if aname in fk_targets and stype is not SType.FOREIGN_KEY:
                    raise SchemaError(f"{name}.{aname}: listed as foreign key but stype is {stype.value}")
                if stype is SType.FOREIGN_KEY and aname not in fk_targets:
                    raise SchemaError(f"{name}.{aname}: foreign key without foreign_keys entry")
                if stype is SType.PRIMARY_KEY and declared_pk not in (None, aname):
                    raise SchemaError(f"{name}: primary_key {declared_pk!r} disagrees with {aname!r}")
                nullable = bool(adoc.get("nullable", True))
                if stype is SType.PRIMARY_KEY:
                    nullable = False
                attrs.append(Attribute(aname, stype, nullable, fk_targets.get(aname)))
            missing = set(fk_targets) - {a.name for a in attrs}
            if missing:
                raise SchemaError(f"{name}: foreign keys on unknown columns {sorted(missing)}")
            tables.append(TableSchema(name, tuple(attrs), tdoc.get("time_attribute")))
        return DatabaseSchema(tuple(tables))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed schema document: {exc!r}") from exc


def load_schema(path: str | os.PathLike) -> DatabaseSchema:
    """Read a JSON schema file (see README for the layout)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return schema_from_dict(doc)


def save_schema(schema: DatabaseSchema, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n", encoding="utf-8")


# --- cell parsing ---------------------------------------------------------

def parse_timestamp(text: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def parse_cell(text: str, attr: Attribute):
    if text == "":
        return None
    st = attr.stype
    if st is SType.NUMERICAL:
        x = float(text)
        if not math.isfinite(x):
            raise ValueError(f"non-finite number {text!r}")
        return x
    if st is SType.MULTI_CATEGORICAL:
        return frozenset(tok.strip() for tok in text.split(";") if tok.strip())
    if st is SType.TIMESTAMP:
        return parse_timestamp(text)
    return text


def format_cell(value, attr: Attribute) -> str:
    if value is None:
        return ""
    st = attr.stype
    if st is SType.NUMERICAL:
        return repr(float(value))
    if st is SType.MULTI_CATEGORICAL:
        return ";".join(sorted(value))
    if st is SType.TIMESTAMP:
        return str(int(value))
    return str(value)


# --- database -------------------------------------------------------------

@dataclass(frozen=True)
class Database:
    schema: DatabaseSchema
    tables: Mapping[str, tuple[Row, ...]]

    def rows(self, table: str) -> tuple[Row, ...]:
        return self.tables[table]

    def num_rows(self) -> int:
        return sum(len(r) for r in self.tables.values())

    @cached_property
    def pk_index(self) -> dict[str, dict[str, int]]:
        """Table -> primary key value -> row position (first occurrence)."""
        out = {}
        for t in self.schema.tables:
            i = t.index(t.primary_key)
            idx: dict[str, int] = {}
            for pos, row in enumerate(self.tables[t.name]):
                idx.setdefault(row[i], pos)
            out[t.name] = idx
        return out

    def column(self, table: str, attribute: str) -> list:
        i = self.schema.table(table).index(attribute)
        return [row[i] for row in self.tables[table]]


@dataclass
class IntegrityReport:
    duplicate_pks: list[tuple[str, str, int]] = field(default_factory=list)
    dangling_fks: list[tuple[str, str, int, str]] = field(default_factory=list)
    null_keys: list[tuple[str, str, int]] = field(default_factory=list)

    @property
    def is_clean(self) -> bool:
        return not (self.duplicate_pks or self.dangling_fks or self.null_keys)

    def __len__(self) -> int:
        return len(self.duplicate_pks) + len(self.dangling_fks) + len(self.null_keys)

    def lines(self) -> list[str]:
        out = [f"duplicate primary key {k!r} in {t} (row {r})" for t, k, r in self.duplicate_pks]
        out += [f"dangling foreign key {t}.{c}={v!r} (row {r})" for t, c, r, v in self.dangling_fks]
        out += [f"null primary key in {t}.{c} (row {r})" for t, c, r in self.null_keys]
        return out


def validate_integrity(db: Database) -> IntegrityReport:
    """List every duplicated primary key and every dangling foreign key.

    The first occurrence of a key is treated as the owner; each later row
    carrying the same key is one duplicate entry.
    """
    report = IntegrityReport()
    pk_sets: dict[str, set] = {}
    for t in db.schema.tables:
        i = t.index(t.primary_key)
        seen: set = set()
        for pos, row in enumerate(db.tables[t.name]):
            key = row[i]
            if key is None:
                report.null_keys.append((t.name, t.primary_key, pos))
            elif key in seen:
                report.duplicate_pks.append((t.name, key, pos))
            else:
                seen.add(key)
        pk_sets[t.name] = seen
    for t in db.schema.tables:
        for fk in t.foreign_keys:
            i = t.index(fk.name)
            targets = pk_sets[fk.target]
            for pos, row in enumerate(db.tables[t.name]):
                v = row[i]
                if v is not None and v not in targets:
                    report.dangling_fks.append((t.name, fk.name, pos, v))
    return report


def make_database(schema: DatabaseSchema, tables: Mapping[str, Iterable[Sequence]], check: bool = True) -> Database:
    """Build a Database from in-memory rows, optionally enforcing integrity."""
    frozen = {}
    for t in schema.tables:
        rows = tuple(tuple(r) for r in tables.get(t.name, ()))
        for pos, r in enumerate(rows):
            if len(r) != len(t.attributes):
                raise ParseError(f"{t.name} row {pos}: expected {len(t.attributes)} values, got {len(r)}")
        frozen[t.name] = rows
    db = Database(schema, frozen)
    if check:
        report = validate_integrity(db)
        if not report.is_clean:
            raise IntegrityError("; ".join(report.lines()[:10]))
    return db


def load_database(schema: DatabaseSchema, directory: str | os.PathLike, check: bool = True) -> Database:
    directory = Path(directory)
    tables = {}
    for t in schema.tables:
        path = directory / f"{t.name}.csv"
        try:
            fh = open(path, newline="", encoding="utf-8")
        except OSError as exc:
            raise IoError(str(exc)) from exc
        with fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ParseError(f"{path}: empty file (missing header)")
            if header != t.names:
                raise ParseError(f"{path}: header {header} does not match schema {t.names}")
            rows = []
            for lineno, raw in enumerate(reader, start=2):
                if len(raw) != len(header):
                    raise ParseError(f"{path}:{lineno}: expected {len(header)} cells, got {len(raw)}")
                values = []
                for attr, cell in zip(t.attributes, raw):
                    try:
                        v = parse_cell(cell, attr)
                    except ValueError as exc:
                        raise ParseError(
                            f"{path}:{lineno} column {attr.name!r}: cannot parse {cell!r} as {attr.stype.value} ({exc})"
                        ) from None
                    if v is None and not attr.nullable:
                        raise ParseError(f"{path}:{lineno} column {attr.name!r}: empty cell in non-nullable column")
                    values.append(v)
                rows.append(tuple(values))
        tables[t.name] = rows
    return make_database(schema, tables, check=check)


def write_database(db: Database, directory: str | os.PathLike) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t in db.schema.tables:
        with open(directory / f"{t.name}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(t.names)
            for row in db.tables[t.name]:
                w.writerow([format_cell(v, a) for v, a in zip(row, t.attributes)])


@dataclass(frozen=True)
class ColumnMarginal:
    table: str
    attribute: str
    observed_values: tuple


def column_marginal(db: Database, table: str, attribute: str) -> ColumnMarginal:
    tschema = db.schema.table(table) if table in db.tables else None
    if tschema is None:
        raise UnknownColumn(f"{table}.{attribute}")
    attr = tschema.attribute(attribute)
    if attr.stype.is_key:
        raise KeyColumnNotAllowed(f"{table}.{attribute} is a key column")
    # dict preserves first-occurrence order
    seen = dict.fromkeys(v for v in db.column(table, attribute) if v is not None)
    return ColumnMarginal(table, attribute, tuple(seen))


def table_marginals(db: Database, table: str) -> dict[str, ColumnMarginal]:
    return {
        a.name: column_marginal(db, table, a.name)
        for a in db.schema.table(table).feature_attributes
    }


def temporal_prune(db: Database, cutoff: int) -> Database:
    """Drop rows stamped after ``cutoff`` and, recursively, rows referencing them."""
    keep = {}
    for t in db.schema.tables:
        rows = db.tables[t.name]
        if t.time_attribute is None:
            keep[t.name] = list(rows)
        else:
            i = t.index(t.time_attribute)
            # rows without a timestamp are treated as always available
            keep[t.name] = [r for r in rows if r[i] is None or r[i] <= cutoff]
    changed = True
    while changed:
        changed = False
        pks = {}
        for t in db.schema.tables:
            i = t.index(t.primary_key)
            pks[t.name] = {r[i] for r in keep[t.name]}
        for t in db.schema.tables:
            fks = [(t.index(a.name), a.target) for a in t.foreign_keys]
            if not fks:
                continue
            before = len(keep[t.name])
            keep[t.name] = [
                r for r in keep[t.name]
                if all(r[i] is None or r[i] in pks[target] for i, target in fks)
            ]
            if len(keep[t.name]) != before:
                changed = True
    return Database(db.schema, {k: tuple(v) for k, v in keep.items()})
