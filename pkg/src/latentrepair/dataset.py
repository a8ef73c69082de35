"""Categorical datasets, attribute roles, and configuration indexing.

A :class:`Dataset` stores one integer code vector per attribute.  Codes index
into a :class:`CategoricalDomain` whose labels are sorted lexicographically,
so the encoding of a CSV file does not depend on its row order.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

CODE_DTYPE = np.int32
_KEY_LIMIT = 2**62

ROLE_KEYS = ("sensitive", "inadmissible", "admissible", "additional", "label")


@dataclass(frozen=True)
class CategoricalDomain:
    attribute_name: str
    codes: tuple[str, ...]

    def __post_init__(self):
        if len(self.codes) < 1:
            raise DataError(f"attribute {self.attribute_name!r} has an empty domain")
        if len(set(self.codes)) != len(self.codes):
            raise DataError(f"attribute {self.attribute_name!r} has duplicate labels")

    @property
    def size(self) -> int:
        return len(self.codes)

    def code_of(self, label: str) -> int:
        try:
            return self.codes.index(label)
        except ValueError:
            raise DataError(f"label {label!r} not in domain of {self.attribute_name!r}") from None


class Dataset:
    """Immutable column-oriented table of categorical codes.

    Parameters
    ----------
    domains : sequence of CategoricalDomain
        One per column, in schema order.
    columns : sequence of 1-D integer arrays
        Code vectors, all of the same length.
    """

    __slots__ = ("_domains", "_data", "_index")

    def __init__(self, domains: Sequence[CategoricalDomain], columns: Sequence[np.ndarray] | np.ndarray,
                 n_records: int | None = None):
        domains = tuple(domains)
        names = [d.attribute_name for d in domains]
        if len(set(names)) != len(names):
            raise DataError("duplicate attribute names")
        if len(columns) != len(domains):
            raise DataError(f"{len(columns)} columns for {len(domains)} domains")
        if len(domains) == 0:
            data = np.zeros((0, 0 if n_records is None else n_records), dtype=CODE_DTYPE)
        else:
            data = np.ascontiguousarray(np.stack([np.asarray(c) for c in columns]), dtype=CODE_DTYPE)
            if data.ndim != 2:
                raise DataError("columns must be one-dimensional")
            for i, dom in enumerate(domains):
                col = data[i]
                if col.size and (col.min() < 0 or col.max() >= dom.size):
                    raise DataError(f"codes of {dom.attribute_name!r} outside [0, {dom.size})")
        data.setflags(write=False)
        self._domains = domains
        self._data = data
        self._index = {n: i for i, n in enumerate(names)}

    # --- basic accessors -------------------------------------------------
    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.attribute_name for d in self._domains)

    @property
    def domains(self) -> tuple[CategoricalDomain, ...]:
        return self._domains

    @property
    def n_records(self) -> int:
        return int(self._data.shape[1])

    @property
    def n_attributes(self) -> int:
        return len(self._domains)

    @property
    def codes(self) -> np.ndarray:
        """Read-only ``(n_attributes, n_records)`` code matrix."""
        return self._data

    def __len__(self) -> int:
        return self.n_records

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def position(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DataError(f"unknown attribute {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self._data[self.position(name)]

    def domain(self, name: str) -> CategoricalDomain:
        return self._domains[self.position(name)]

    def size(self, name: str) -> int:
        return self._domains[self.position(name)].size

    def sizes(self, names: Iterable[str]) -> list[int]:
        return [self.size(n) for n in names]

    def schema_order(self, names: Iterable[str]) -> list[str]:
        """``names`` sorted by column position (unknown names raise)."""
        return sorted(set(names), key=self.position)

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """``(n_records, len(names))`` code matrix for the named columns."""
        if not names:
            return np.zeros((self.n_records, 0), dtype=CODE_DTYPE)
        return self._data[[self.position(n) for n in names]].T

    def take(self, rows: np.ndarray) -> Dataset:
        """Records at the given row indices (with repetition), same schema."""
        return Dataset(self._domains, [c[rows] for c in self._data], n_records=len(rows))

    def decode(self) -> list[list[str]]:
        labels = [np.asarray(d.codes, dtype=object) for d in self._domains]
        cols = [lab[c] for lab, c in zip(labels, self._data)]
        return [list(r) for r in zip(*cols)] if cols else [[] for _ in range(self.n_records)]

    def equals(self, other: Dataset) -> bool:
        return self._domains == other._domains and np.array_equal(self._data, other._data)

    def __repr__(self) -> str:
        return f"Dataset(n_records={self.n_records}, attributes={list(self.names)})"


@dataclass(frozen=True)
class RoleSpec:
    sensitive: tuple[str, ...] = ()
    inadmissible: tuple[str, ...] = ()
    admissible: tuple[str, ...] = ()
    additional: tuple[str, ...] = ()
    label: str = ""

    @classmethod
    def from_mapping(cls, doc: Mapping) -> RoleSpec:
        if not isinstance(doc, Mapping):
            raise DataError("roles document must be a mapping")
        unknown = set(doc) - set(ROLE_KEYS)
        if unknown:
            raise DataError(f"unknown roles key(s): {sorted(unknown)}")
        if "label" not in doc:
            raise DataError("roles document has no 'label'")
        label = doc["label"]
        if not isinstance(label, str):
            raise DataError("'label' must be a single attribute name")
        groups = {}
        for key in ROLE_KEYS[:-1]:
            vals = doc.get(key, [])
            if isinstance(vals, str) or not all(isinstance(v, str) for v in vals):
                raise DataError(f"'{key}' must be a list of attribute names")
            groups[key] = tuple(vals)
        return cls(label=label, **groups)

    def to_dict(self) -> dict:
        return {
            "sensitive": list(self.sensitive),
            "inadmissible": list(self.inadmissible),
            "admissible": list(self.admissible),
            "additional": list(self.additional),
            "label": self.label,
        }

    def role_of(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for key in ROLE_KEYS[:-1]:
            for name in getattr(self, key):
                out.setdefault(name, key)
        return out

    def validate(self, ds: Dataset) -> RoleSpec:
        """Check the roles against ``ds`` and return them in schema order."""
        seen: dict[str, str] = {}
        for key in ROLE_KEYS[:-1]:
            for name in getattr(self, key):
                if name in seen:
                    raise DataError(f"attribute {name!r} assigned twice ({seen[name]}, {key})")
                seen[name] = key
        if self.label in seen:
            raise DataError(f"label {self.label!r} also assigned to {seen[self.label]}")
        seen[self.label] = "label"
        for name in seen:
            if name not in ds:
                raise DataError(f"roles mention unknown attribute {name!r}")
        missing = [n for n in ds.names if n not in seen]
        if missing:
            raise DataError(f"unassigned attribute(s): {missing}")
        if ds.size(self.label) < 2:
            raise DataError(f"label {self.label!r} has fewer than two values")
        order = ds.schema_order
        return RoleSpec(
            sensitive=tuple(order(self.sensitive)),
            inadmissible=tuple(order(self.inadmissible)),
            admissible=tuple(order(self.admissible)),
            additional=tuple(order(self.additional)),
            label=self.label,
        )


# --- CSV / roles IO --------------------------------------------------------

def read_csv_columns(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Header and column-major string cells of a CSV file."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or all(h == "" for h in header):
            raise DataError(f"{path}: missing header")
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        cols: list[list[str]] = [[] for _ in header]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for j, cell in enumerate(row):
                if cell == "":
                    raise DataError(f"{path}:{lineno}: missing value in column {header[j]!r}")
                cols[j].append(cell)
    return header, cols


def encode_columns(header: Sequence[str], cols: Sequence[Sequence[str]]) -> Dataset:
    domains, codes = [], []
    n = len(cols[0]) if cols else 0
    for name, col in zip(header, cols):
        if n == 0:
            raise DataError("dataset has no records")
        labels, inv = np.unique(np.asarray(col, dtype=str), return_inverse=True)
        domains.append(CategoricalDomain(name, tuple(str(x) for x in labels)))
        codes.append(inv.reshape(-1).astype(CODE_DTYPE))
    return Dataset(domains, codes, n_records=n)


def equal_frequency_bin(values: Sequence[str], k: int) -> list[str]:
    """Replace numeric strings by ``k`` equal-frequency bin labels ``q00, q01, ...``."""
    if k < 1:
        raise DataError("bin count must be positive")
    try:
        x = np.asarray([float(v) for v in values])
    except ValueError as exc:
        raise DataError(f"cannot bin non-numeric value: {exc}") from None
    edges = np.unique(np.quantile(x, np.linspace(0, 1, k + 1)[1:-1]))
    idx = np.searchsorted(edges, x, side="right")
    width = max(2, len(str(k - 1)))
    return [f"q{i:0{width}d}" for i in idx]


def load_roles(path: str | Path) -> RoleSpec:
    """Parse a JSON roles document (see README for the format)."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from None
    return RoleSpec.from_mapping(doc)


def load_dataset(csv_path: str | Path, roles_path: str | Path,
                 bins: Mapping[str, int] | None = None) -> tuple[Dataset, RoleSpec]:
    header, cols = read_csv_columns(csv_path)
    if bins:
        for name, k in bins.items():
            if name not in header:
                raise DataError(f"--bin names unknown column {name!r}")
            j = header.index(name)
            cols[j] = equal_frequency_bin(cols[j], k)
    ds = encode_columns(header, cols)
    roles = load_roles(roles_path).validate(ds)
    return ds, roles


def write_csv(ds: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names)
        w.writerows(ds.decode())


def write_roles(roles: RoleSpec, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(roles.to_dict(), fh, indent=2)
        fh.write("\n")


# --- projection and configuration indices -----------------------------------

def project(ds: Dataset, attrs: Sequence[str]) -> Dataset:
    pos = [ds.position(a) for a in attrs]
    return Dataset([ds.domains[p] for p in pos], [ds.codes[p] for p in pos], n_records=ds.n_records)


def _row_major(mat: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    key = np.zeros(mat.shape[0], dtype=np.int64)
    for j, k in enumerate(sizes):
        key *= k
        key += mat[:, j]
    return key


def _fits(sizes: Sequence[int]) -> bool:
    return math.prod(int(s) for s in sizes) < _KEY_LIMIT


def joint_config_index(ds: Dataset, attrs: Sequence[str]) -> np.ndarray:
    """Per-record index of the joint value over ``attrs``.

    Row-major in the listed order whenever the product domain fits in 62 bits
    (e.g. sizes (2,3,2), record (1,2,0) -> 10).  Larger products fall back to
    an injective index built by re-compacting after each column.
    """
    if not attrs:
        raise DataError("joint_config_index needs at least one attribute")
    sizes = ds.sizes(attrs)
    mat = ds.matrix(list(attrs))
    if _fits(sizes):
        return _row_major(mat, sizes)
    key = np.zeros(ds.n_records, dtype=np.int64)
    span = 1
    for j, k in enumerate(sizes):
        if span * k >= _KEY_LIMIT:
            uniq, key = np.unique(key, return_inverse=True)
            key = key.reshape(-1).astype(np.int64)
            span = len(uniq)
        key = key * k + mat[:, j]
        span *= k
    return key


def factorize_rows(mat: np.ndarray, sizes: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Compact ids for the distinct rows of ``mat``.

    Returns ``(ids, uniq)`` where ``uniq`` lists the distinct rows in
    lexicographic order and ``ids[i]`` is the position of row ``i`` in it.
    """
    n, c = mat.shape
    if c == 0:
        return np.zeros(n, dtype=np.int64), np.zeros((1, 0), dtype=CODE_DTYPE)
    if _fits(sizes):
        keys, ids = np.unique(_row_major(mat, sizes), return_inverse=True)
        uniq = np.empty((len(keys), c), dtype=CODE_DTYPE)
        rem = keys.copy()
        for j in range(c - 1, -1, -1):
            uniq[:, j] = rem % sizes[j]
            rem //= sizes[j]
        return ids.reshape(-1).astype(np.int64), uniq
    uniq, ids = np.unique(np.ascontiguousarray(mat, dtype=CODE_DTYPE), axis=0, return_inverse=True)
    return ids.reshape(-1).astype(np.int64), uniq


def lookup_rows(uniq: np.ndarray, mat: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    """Position of each row of ``mat`` within ``uniq`` (as from :func:`factorize_rows`), or -1."""
    n, c = mat.shape
    if c == 0:
        return np.zeros(n, dtype=np.int64)
    if _fits(sizes):
        ref = _row_major(uniq, sizes)
        key = _row_major(mat, sizes)
        pos = np.searchsorted(ref, key)
        pos = np.minimum(pos, len(ref) - 1)
        return np.where(ref[pos] == key, pos, -1).astype(np.int64)
    both = np.concatenate([np.asarray(uniq, dtype=CODE_DTYPE), np.asarray(mat, dtype=CODE_DTYPE)])
    _, inv = np.unique(both, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    to_ref = np.full(inv.max() + 1, -1, dtype=np.int64)
    to_ref[inv[: len(uniq)]] = np.arange(len(uniq))
    return to_ref[inv[len(uniq):]]


def strata(ds: Dataset, attrs: Sequence[str]) -> tuple[np.ndarray, int]:
    """Stratum id per record for the joint value of ``attrs`` plus an upper bound on ids.

    Small product domains keep the row-major index (empty strata are cheap);
    larger ones are compacted to the realized configurations.
    """
    if not attrs:
        return np.zeros(ds.n_records, dtype=np.int64), 1
    sizes = ds.sizes(attrs)
    total = math.prod(sizes)
    if total <= max(4 * ds.n_records, 1024):
        return _row_major(ds.matrix(list(attrs)), sizes), total
    ids, uniq = factorize_rows(ds.matrix(list(attrs)), sizes)
    return ids, len(uniq)


def align_codes(reference: Dataset, other: Dataset, names: Sequence[str]) -> np.ndarray:
    """Recode ``other``'s columns into ``reference``'s domains; unseen labels become -1."""
    out = np.empty((other.n_records, len(names)), dtype=np.int64)
    for j, name in enumerate(names):
        ref = {lab: i for i, lab in enumerate(reference.domain(name).codes)}
        table = np.array([ref.get(lab, -1) for lab in other.domain(name).codes], dtype=np.int64)
        out[:, j] = table[other.column(name)]
    return out
