"""Finitary model specifications and the transforms applied to them.

A specification is a finite list of probability-weighted atoms. Each atom
fixes the vertex type, the ``R x T`` in/out weight matrices (row = impact
level ``r``, column = counterparty type), the capital and the per-atom shock
probability of the institutions it describes.

Indices are 0-based in code; ``vtype`` and the textual coordinate notation
``"r,a,b"`` are 1-based, matching the JSON format.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

MASS_TOL = 1e-12


class SpecError(ValueError):
    """Base class for specification validation errors."""


class NonUnitMass(SpecError):
    pass


class ShapeMismatch(SpecError):
    pass


class NegativeValue(SpecError):
    pass


class EmptyAtomList(SpecError):
    pass


class TypeCollision(SpecError):
    pass


class MassOverflow(SpecError):
    pass


@dataclass(frozen=True)
class Atom:
    prob: float
    vtype: int
    in_weights: np.ndarray
    out_weights: np.ndarray
    capital: float  # non-negative integer or math.inf
    shock_prob: float = 0.0
    importance: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "in_weights", _frozen(self.in_weights))
        object.__setattr__(self, "out_weights", _frozen(self.out_weights))

    def __eq__(self, other):
        if not isinstance(other, Atom):
            return NotImplemented
        return (
            self.prob == other.prob
            and self.vtype == other.vtype
            and np.array_equal(self.in_weights, other.in_weights)
            and np.array_equal(self.out_weights, other.out_weights)
            and self.capital == other.capital
            and self.shock_prob == other.shock_prob
            and self.importance == other.importance
        )

    __hash__ = None

    def replace(self, **changes) -> "Atom":
        return dataclasses.replace(self, **changes)


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ModelSpec:
    R: int
    T: int
    atoms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))

    # -- array views used by the analytic and graph code ---------------------

    @property
    def probs(self) -> np.ndarray:
        return np.array([a.prob for a in self.atoms], dtype=float)

    @property
    def vtypes(self) -> np.ndarray:
        """0-based type index per atom."""
        return np.array([a.vtype - 1 for a in self.atoms], dtype=int)

    @property
    def in_w(self) -> np.ndarray:
        return np.stack([a.in_weights for a in self.atoms]) if self.atoms else np.zeros((0, self.R, self.T))

    @property
    def out_w(self) -> np.ndarray:
        return np.stack([a.out_weights for a in self.atoms]) if self.atoms else np.zeros((0, self.R, self.T))

    @property
    def capitals(self) -> np.ndarray:
        return np.array([a.capital for a in self.atoms], dtype=float)

    @property
    def importances(self) -> np.ndarray:
        return np.array([a.importance for a in self.atoms], dtype=float)

    @property
    def c_max(self) -> int:
        finite = [int(a.capital) for a in self.atoms if math.isfinite(a.capital)]
        return max(finite, default=0)

    @property
    def total_mass(self) -> float:
        return math.fsum(a.prob for a in self.atoms)

    def initial_default_mass(self) -> float:
        """P(C = 0), ignoring shock probabilities."""
        return math.fsum(a.prob for a in self.atoms if a.capital == 0)

    def type_mass(self, vtype: int) -> float:
        return math.fsum(a.prob for a in self.atoms if a.vtype == vtype)

    def with_shock(self, q: float) -> "ModelSpec":
        """Same system with every atom's shock probability set to ``q``."""
        return ModelSpec(self.R, self.T, [a.replace(shock_prob=q) for a in self.atoms])

    def without_shock(self) -> "ModelSpec":
        return self.with_shock(0.0)

    def digest(self) -> str:
        """Stable content hash (sha256 of the canonical JSON form)."""
        text = json.dumps(spec_to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def validate_spec(spec: ModelSpec) -> ModelSpec:
    """Check every invariant and return the spec with probabilities normalized.

    Raises one of :class:`NonUnitMass`, :class:`ShapeMismatch`,
    :class:`NegativeValue` or :class:`EmptyAtomList`.
    """
    if spec.R < 1 or spec.T < 1:
        raise ShapeMismatch(f"R and T must be positive, got R={spec.R}, T={spec.T}")
    if not spec.atoms:
        raise EmptyAtomList("spec has no atoms")
    for k, a in enumerate(spec.atoms):
        for name in ("in_weights", "out_weights"):
            w = getattr(a, name)
            if w.shape != (spec.R, spec.T):
                raise ShapeMismatch(f"atom {k}: {name} has shape {w.shape}, expected {(spec.R, spec.T)}")
            if not np.all(np.isfinite(w)):
                raise NegativeValue(f"atom {k}: {name} has non-finite entries")
            if np.any(w < 0):
                raise NegativeValue(f"atom {k}: {name} has negative entries")
        if not 1 <= a.vtype <= spec.T:
            raise ShapeMismatch(f"atom {k}: vtype {a.vtype} outside 1..{spec.T}")
        if not (a.prob >= 0 and math.isfinite(a.prob)):
            raise NegativeValue(f"atom {k}: prob {a.prob}")
        if not (a.capital == math.inf or (a.capital >= 0 and float(a.capital).is_integer())):
            raise NegativeValue(f"atom {k}: capital must be a non-negative integer or inf, got {a.capital}")
        if not 0.0 <= a.shock_prob <= 1.0:
            raise NegativeValue(f"atom {k}: shock_prob {a.shock_prob} outside [0, 1]")
        if not (a.importance >= 0 and math.isfinite(a.importance)):
            raise NegativeValue(f"atom {k}: importance {a.importance}")
    total = spec.total_mass
    if abs(total - 1.0) > MASS_TOL:
        raise NonUnitMass(f"atom probabilities sum to {total!r}, not 1")
    # rescale only when off by more than rounding, so validation is idempotent
    scale = 1.0 if abs(total - 1.0) <= 8 * np.finfo(float).eps else total
    atoms = [a.replace(prob=a.prob / scale, capital=_capital(a.capital)) for a in spec.atoms]
    return ModelSpec(spec.R, spec.T, atoms)


def _capital(c) -> float:
    return math.inf if c == math.inf else int(c)


def apply_shock(spec: ModelSpec) -> ModelSpec:
    """Realize the per-atom ex-post shocks as explicit capital-0 atoms.

    An atom with shock probability ``q > 0`` and positive capital is split
    into a defaulted part of mass ``prob * q`` and a solvent part of mass
    ``prob * (1 - q)``. The output carries no shock probabilities.
    """
    atoms = []
    for a in spec.atoms:
        q = a.shock_prob
        if q > 0 and a.capital != 0:
            if q < 1:
                atoms.append(a.replace(prob=a.prob * (1.0 - q), shock_prob=0.0))
            atoms.append(a.replace(prob=a.prob * q, capital=0, shock_prob=0.0))
        else:
            atoms.append(a.replace(shock_prob=0.0))
    return ModelSpec(spec.R, spec.T, atoms)


def embed_subsystem(sub: ModelSpec, host_fraction: float, new_type: int, target: ModelSpec) -> ModelSpec:
    """Insert a one-type system into ``target`` as type ``new_type``.

    The embedded atoms carry mass ``prob * host_fraction``. Their out-weights
    toward their own type are divided by ``host_fraction`` so the subsystem
    keeps its edge density after the population is diluted; all cross-type
    weights start at zero. ``target`` may be partial (mass below one).
    """
    if sub.T != 1:
        raise ShapeMismatch(f"subsystem must have exactly one type, has {sub.T}")
    if sub.R != target.R:
        raise ShapeMismatch(f"subsystem has R={sub.R}, target has R={target.R}")
    if not 1 <= new_type <= target.T:
        raise ShapeMismatch(f"new_type {new_type} outside 1..{target.T}")
    if any(a.vtype == new_type and a.prob > 0 for a in target.atoms):
        raise TypeCollision(f"type {new_type} is already populated in the target")
    remaining = 1.0 - target.total_mass
    if not 0 < host_fraction <= remaining + MASS_TOL:
        raise MassOverflow(f"host_fraction {host_fraction} exceeds remaining mass {remaining}")

    col = new_type - 1
    atoms = list(target.atoms)
    for a in sub.atoms:
        w_in = np.zeros((target.R, target.T))
        w_out = np.zeros((target.R, target.T))
        w_in[:, col] = a.in_weights[:, 0]
        w_out[:, col] = a.out_weights[:, 0] / host_fraction
        atoms.append(Atom(a.prob * host_fraction, new_type, w_in, w_out, a.capital, a.shock_prob, a.importance))
    return ModelSpec(target.R, target.T, atoms)


# -- coordinates ---------------------------------------------------------------


def all_coordinates(R: int, T: int) -> frozenset:
    """The full coordinate set as 0-based ``(r, alpha, beta)`` triples."""
    return frozenset((r, a, b) for r in range(R) for a in range(T) for b in range(T))


def parse_coordinates(text: str, R: int, T: int) -> frozenset:
    """Parse ``"r,a,b;r,a,b"`` (1-based) into 0-based triples."""
    out = set()
    for chunk in text.replace(" ", "").split(";"):
        if not chunk:
            continue
        parts = chunk.split(",")
        if len(parts) != 3:
            raise ValueError(f"bad coordinate {chunk!r}; expected 'r,alpha,beta'")
        r, a, b = (int(p) for p in parts)
        if not (1 <= r <= R and 1 <= a <= T and 1 <= b <= T):
            raise ValueError(f"coordinate {chunk!r} out of range for R={R}, T={T}")
        out.add((r - 1, a - 1, b - 1))
    return frozenset(out)


def format_coordinates(coords: Iterable) -> str:
    return ";".join(f"{r + 1},{a + 1},{b + 1}" for r, a, b in sorted(coords))


def coordinate_mask(coords: Iterable, R: int, T: int) -> np.ndarray:
    mask = np.zeros((R, T, T), dtype=bool)
    for r, a, b in coords:
        mask[r, a, b] = True
    return mask


# -- JSON ------------------------------------------------------------------------


def spec_from_dict(data: dict) -> ModelSpec:
    R, T = int(data["R"]), int(data["T"])
    atoms = []
    for k, raw in enumerate(data.get("atoms", [])):
        cap = raw.get("capital", 0)
        if isinstance(cap, str):
            if cap.lower() not in ("inf", "infinity"):
                raise SpecError(f"atom {k}: capital {cap!r} is not an integer or 'inf'")
            cap = math.inf
        atoms.append(
            Atom(
                prob=float(raw["prob"]),
                vtype=int(raw.get("vtype", 1)),
                in_weights=_matrix(raw["in_weights"], k, "in_weights"),
                out_weights=_matrix(raw["out_weights"], k, "out_weights"),
                capital=cap,
                shock_prob=float(raw.get("shock_prob", 0.0)),
                importance=float(raw.get("importance", 1.0)),
            )
        )
    return ModelSpec(R, T, atoms)


def _matrix(raw, k, name) -> np.ndarray:
    try:
        arr = np.array(raw, dtype=float)
    except ValueError as exc:
        raise ShapeMismatch(f"atom {k}: {name} is ragged") from exc
    if arr.ndim != 2:
        raise ShapeMismatch(f"atom {k}: {name} must be a matrix")
    return arr


def spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "R": spec.R,
        "T": spec.T,
        "atoms": [
            {
                "prob": a.prob,
                "vtype": a.vtype,
                "in_weights": a.in_weights.tolist(),
                "out_weights": a.out_weights.tolist(),
                "capital": "inf" if a.capital == math.inf else int(a.capital),
                "shock_prob": a.shock_prob,
                "importance": a.importance,
            }
            for a in spec.atoms
        ],
    }


def load_spec(path, validate: bool = True) -> ModelSpec:
    with open(path) as fh:
        data = json.load(fh)
    if "spec" in data and "atoms" not in data:
        data = data["spec"]
    spec = spec_from_dict(data)
    return validate_spec(spec) if validate else spec


def save_spec(spec: ModelSpec, path) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2) + "\n")
