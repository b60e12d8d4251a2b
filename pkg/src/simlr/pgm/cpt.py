"""Conditional probability tables and their YAML config format."""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

ROW_ATOL = 1e-9
TRINARY = (-1, 0, 1)


class ConfigError(ValueError):
    """A probability table or model file is malformed."""


@dataclass(frozen=True)
class Cpt:
    """Tabular P(child | parents).

    ``table`` maps a tuple of parent states to a probability vector over
    ``child_states``. ``bins`` is only used by nodes whose single parent is a
    binned count (lower edges, last bin open-ended).
    """

    node: str
    parents: tuple[str, ...]
    parent_states: tuple[tuple[int, ...], ...]
    child_states: tuple[int, ...]
    table: Mapping[tuple[int, ...], np.ndarray] = field(repr=False)
    bins: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.parents) != len(self.parent_states):
            raise ConfigError(f"{self.node}: parent names and state lists differ in length")
        width = len(self.child_states)
        for key in itertools.product(*self.parent_states):
            if key not in self.table:
                raise ConfigError(f"{self.node}: missing row for parents {key}")
        for key, row in self.table.items():
            row = np.asarray(row, dtype=float)
            if row.shape != (width,):
                raise ConfigError(f"{self.node}{key}: expected {width} probabilities, got {row.shape}")
            if np.any(row < 0) or np.any(row > 1):
                raise ConfigError(f"{self.node}{key}: probabilities outside [0, 1]: {row}")
            if abs(row.sum() - 1.0) > ROW_ATOL:
                raise ConfigError(f"{self.node}{key}: row sums to {row.sum()!r}, not 1")
        if self.bins is not None:
            if len(self.parents) != 1 or tuple(self.bins) != tuple(self.parent_states[0]):
                raise ConfigError(f"{self.node}: bins must match the single parent's states")
            if list(self.bins) != sorted(self.bins):
                raise ConfigError(f"{self.node}: bins must be increasing")

    @property
    def arity(self) -> tuple[tuple[int, ...], int]:
        return tuple(len(s) for s in self.parent_states), len(self.child_states)

    def row(self, *parent_values: int) -> np.ndarray:
        key = tuple(int(v) for v in parent_values)
        try:
            return np.array(self.table[key], dtype=float)
        except KeyError:
            raise ConfigError(f"{self.node}: no row for parents {key}") from None

    def bin_of(self, count: int) -> int:
        if self.bins is None:
            raise ConfigError(f"{self.node} has no bins")
        if count < self.bins[0]:
            raise ConfigError(f"{self.node}: {count} is below the first bin {self.bins[0]}")
        return max(edge for edge in self.bins if edge <= count)

    @classmethod
    def from_rows(
        cls,
        node: str,
        parents: Sequence[str],
        parent_states: Sequence[Sequence[int]],
        child_states: Sequence[int],
        rows: Mapping[tuple[int, ...], Sequence[float]],
        bins: Sequence[int] | None = None,
    ) -> "Cpt":
        return cls(
            node=node,
            parents=tuple(parents),
            parent_states=tuple(tuple(int(s) for s in ps) for ps in parent_states),
            child_states=tuple(int(s) for s in child_states),
            table={tuple(int(k) for k in key): np.asarray(p, dtype=float) for key, p in rows.items()},
            bins=None if bins is None else tuple(int(b) for b in bins),
        )

    def to_spec(self) -> dict[str, Any]:
        spec: dict[str, Any] = {
            "parents": list(self.parents),
            "parent_states": [list(s) for s in self.parent_states],
            "states": list(self.child_states),
            "rows": [
                {"given": list(key), "p": [float(x) for x in self.table[key]]}
                for key in itertools.product(*self.parent_states)
            ],
        }
        if self.bins is not None:
            spec["bins"] = list(self.bins)
        return spec


def _cpt_from_spec(node: str, spec: Mapping[str, Any]) -> Cpt:
    try:
        rows = {}
        for entry in spec["rows"]:
            key = tuple(int(k) for k in entry["given"])
            if key in rows:
                raise ConfigError(f"{node}: duplicate row for parents {key}")
            rows[key] = entry["p"]
        return Cpt.from_rows(
            node,
            spec["parents"],
            spec["parent_states"],
            spec["states"],
            rows,
            spec.get("bins"),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{node}: malformed table spec ({exc!r})") from exc


@dataclass(frozen=True)
class CptSet:
    """The three tabular nodes of the policy graph plus the source checksum."""

    ct: Cpt
    o: Cpt
    cp: Cpt
    checksum: str = ""

    def __post_init__(self) -> None:
        if self.ct.arity != ((3, 3, 3), 3) or self.ct.child_states != TRINARY:
            raise ConfigError("CT must have three trinary parents and states (-1, 0, 1)")
        if len(self.o.parents) != 1 or self.o.bins is None or self.o.child_states != (0, 1):
            raise ConfigError("O must have one binned parent and states (0, 1)")
        if self.cp.parent_states != ((0, 1), TRINARY) or self.cp.child_states != TRINARY:
            raise ConfigError("CP must have parents O in (0, 1), U in (-1, 0, 1)")

    def to_yaml(self) -> str:
        doc = {
            "version": 1,
            "nodes": {"CT": self.ct.to_spec(), "O": self.o.to_spec(), "CP": self.cp.to_spec()},
        }
        return yaml.safe_dump(doc, sort_keys=False)


def parse_cpts(text: str, expected_sha256: str | None = None) -> CptSet:
    checksum = hashlib.sha256(text.encode("utf-8")).hexdigest()
    if expected_sha256 is not None and expected_sha256 != checksum:
        raise ConfigError(f"CPT checksum mismatch: expected {expected_sha256}, got {checksum}")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"CPT file is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != 1 or "nodes" not in doc:
        raise ConfigError("CPT file must be a mapping with version: 1 and nodes")
    nodes = doc["nodes"]
    missing = {"CT", "O", "CP"} - set(nodes)
    if missing:
        raise ConfigError(f"CPT file is missing nodes: {sorted(missing)}")
    return CptSet(
        ct=_cpt_from_spec("CT", nodes["CT"]),
        o=_cpt_from_spec("O", nodes["O"]),
        cp=_cpt_from_spec("CP", nodes["CP"]),
        checksum=checksum,
    )


def load_cpts(path: str | Path, expected_sha256: str | None = None) -> CptSet:
    return parse_cpts(Path(path).read_text(encoding="utf-8"), expected_sha256)


def default_cpts() -> CptSet:
    text = resources.files("simlr").joinpath("data/default_cpts.yaml").read_text(encoding="utf-8")
    return parse_cpts(text)


def ct_distribution(lags: Sequence[int], cpt: Cpt) -> np.ndarray:
    """P(CT[t+1] | CP[t-3], CP[t-2], CP[t-1]); ``lags`` oldest first."""
    if len(lags) != 3:
        raise ValueError("CT needs exactly three policy-change lags")
    return cpt.row(*lags)


def willingness_distribution(weeks_since_change: int, cpt: Cpt) -> np.ndarray:
    """P(O | W) over (0, 1) after binning the weeks since the last change."""
    if weeks_since_change < 0:
        raise ValueError("weeks_since_change must be non-negative")
    return cpt.row(cpt.bin_of(int(weeks_since_change)))


def cp_distribution(o: int, u: int, cpt: Cpt) -> np.ndarray:
    """P(CP[t+1] | O[t], U[t]) over (-1, 0, 1)."""
    return cpt.row(o, u)
