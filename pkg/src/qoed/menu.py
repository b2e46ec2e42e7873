"""Discretised experiment space.

An experiment is a product preparation, a product two-outcome-per-qubit
measurement and a duration.  Single-qubit directions are given by Bloch
angles ``(phi, theta)`` with ``phi`` the polar angle, i.e. the pure state
``cos(phi/2)|0> + exp(i theta) sin(phi/2)|1>``.

Menus store angles as the primary data (so files round-trip bit-exactly);
vectors are derived from them.  Gate errors are represented by per-experiment
contraction factors of the preparation and measurement Bloch vectors.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ContractError, InvalidStateError
from .linalg import PAULI

MENU_FORMAT_VERSION = 1
NORM_TOL = 1e-12

CHI = float(np.arccos(1.0 / np.sqrt(3.0)))
PI = float(np.pi)

# (polar angle, [azimuths]) rows of the 26-point constellation, in listing order
_CONSTELLATION_ROWS = (
    (0.0, (0.0,)),
    (PI / 4, (0.0, PI / 2, PI, 3 * PI / 2)),
    (CHI, (PI / 4, 3 * PI / 4, 5 * PI / 4, 7 * PI / 4)),
    (PI / 2, (0.0, PI / 4, PI / 2, 3 * PI / 4, PI, 5 * PI / 4, 3 * PI / 2, 7 * PI / 4)),
    (PI - CHI, (PI / 4, 3 * PI / 4, 5 * PI / 4, 7 * PI / 4)),
    (3 * PI / 4, (0.0, PI / 2, PI, 3 * PI / 2)),
    (PI, (0.0,)),
)


def angles_to_vectors(angles) -> np.ndarray:
    """Unit vectors for an array of ``(..., 2)`` Bloch angles.

    Components below 1e-15 in magnitude are snapped to exactly zero so that
    symmetric points compare cleanly.
    """
    angles = np.asarray(angles, dtype=float)
    phi, theta = angles[..., 0], angles[..., 1]
    v = np.stack([np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)], axis=-1)
    v[np.abs(v) < 1e-15] = 0.0
    return v


def vectors_to_angles(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(v, axis=-1)
    safe = np.where(r > 0, r, 1.0)
    phi = np.arccos(np.clip(v[..., 2] / safe, -1.0, 1.0))
    theta = np.mod(np.arctan2(v[..., 1], v[..., 0]), 2 * np.pi)
    return np.stack([phi, theta], axis=-1)


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if self.norm > 1.0 + NORM_TOL:
            raise InvalidStateError(f"Bloch vector norm {self.norm:.15g} exceeds 1")

    @classmethod
    def from_angles(cls, phi: float, theta: float, scale: float = 1.0) -> "BlochVector":
        v = angles_to_vectors([phi, theta]) * scale
        return cls(*map(float, v))

    @classmethod
    def from_array(cls, v) -> "BlochVector":
        return cls(*map(float, np.asarray(v, dtype=float)))

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.x * self.x + self.y * self.y + self.z * self.z))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def angles(self) -> tuple[float, float]:
        phi, theta = vectors_to_angles(self.as_array())
        return float(phi), float(theta)

    def scaled(self, factor: float) -> "BlochVector":
        return BlochVector(self.x * factor, self.y * factor, self.z * factor)

    def __neg__(self) -> "BlochVector":
        return BlochVector(-self.x, -self.y, -self.z)

    def isclose(self, other: "BlochVector", tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.as_array() - other.as_array())) <= tol)


def _single_qubit(v, sign: float = 1.0) -> np.ndarray:
    return 0.5 * (np.eye(2) + sign * np.tensordot(np.asarray(v, dtype=float), PAULI, axes=1))


def product_state(v1: BlochVector, v2: BlochVector) -> np.ndarray:
    """Density matrix ``(I + v1.s)/2 (x) (I + v2.s)/2``."""
    for v in (v1, v2):
        if v.norm > 1.0 + NORM_TOL:
            raise InvalidStateError(f"Bloch vector norm {v.norm:.15g} exceeds 1")
    return np.kron(_single_qubit(v1.as_array()), _single_qubit(v2.as_array()))


def product_povm(a1: BlochVector, a2: BlochVector, scale: float = 1.0) -> list[np.ndarray]:
    """The four product effects, ordered (++, +-, -+, --).

    ``scale`` < 1 contracts both axes (imperfect measurement); the effects then
    remain positive and complete but are no longer projectors.
    """
    for a in (a1, a2):
        if abs(a.norm - 1.0) > NORM_TOL:
            raise InvalidStateError(f"measurement axis must be a unit vector, norm is {a.norm:.15g}")
    if not 0.0 <= scale <= 1.0:
        raise ContractError(f"measurement contraction {scale} outside [0, 1]")
    v1, v2 = a1.as_array() * scale, a2.as_array() * scale
    return [
        np.kron(_single_qubit(v1, s1), _single_qubit(v2, s2))
        for s1, s2 in ((1, 1), (1, -1), (-1, 1), (-1, -1))
    ]


def constellation_angles() -> np.ndarray:
    return np.array([(phi, th) for phi, thetas in _CONSTELLATION_ROWS for th in thetas])


def constellation26() -> list[BlochVector]:
    return [BlochVector.from_array(v) for v in angles_to_vectors(constellation_angles())]


def _axis_angles() -> np.ndarray:
    angles = constellation_angles()
    vecs = angles_to_vectors(angles)
    keep = []
    for i, v in enumerate(vecs):
        if any(np.allclose(v, -vecs[j], atol=1e-12) or np.allclose(v, vecs[j], atol=1e-12) for j in keep):
            continue
        # among an antipodal pair keep the member with the larger (z, y, x)
        anti = [j for j in range(len(vecs)) if np.allclose(vecs[j], -v, atol=1e-12)]
        if anti and tuple(np.round(-v[::-1], 12)) > tuple(np.round(v[::-1], 12)):
            keep.append(anti[0])
        else:
            keep.append(i)
    return angles[keep]


def axes13() -> list[BlochVector]:
    """Measurement axes: the constellation modulo ``v ~ -v``."""
    return [BlochVector.from_array(v) for v in angles_to_vectors(_axis_angles())]


@dataclass(frozen=True)
class Experiment:
    prep: tuple[BlochVector, BlochVector]
    meas_axes: tuple[BlochVector, BlochVector]
    t: float
    id: int = 0
    meas_scale: float = 1.0

    def __post_init__(self):
        for a in self.meas_axes:
            if abs(a.norm - 1.0) > NORM_TOL:
                raise InvalidStateError("measurement axes must be unit vectors")

    def rho(self) -> np.ndarray:
        return product_state(*self.prep)

    def povm(self) -> list[np.ndarray]:
        return product_povm(*self.meas_axes, scale=self.meas_scale)


@dataclass(frozen=True, eq=False)
class ExperimentMenu:
    """Indexed experiments; experiment ``i`` has id ``i``.

    Arrays: ``prep_angles`` and ``meas_angles`` are ``(n, 2, 2)`` (qubit,
    (phi, theta)); ``times``, ``prep_scale`` and ``meas_scale`` are ``(n,)``.
    """

    prep_angles: np.ndarray
    meas_angles: np.ndarray
    times: np.ndarray
    prep_scale: np.ndarray = None
    meas_scale: np.ndarray = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.times)
        object.__setattr__(self, "prep_angles", np.asarray(self.prep_angles, dtype=float).reshape(n, 2, 2))
        object.__setattr__(self, "meas_angles", np.asarray(self.meas_angles, dtype=float).reshape(n, 2, 2))
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float).reshape(n))
        for name in ("prep_scale", "meas_scale"):
            val = getattr(self, name)
            val = np.ones(n) if val is None else np.broadcast_to(np.asarray(val, dtype=float), (n,)).copy()
            if np.any(val < 0) or np.any(val > 1):
                raise ContractError(f"{name} must lie in [0, 1]")
            object.__setattr__(self, name, val)
        if not np.all(np.isfinite(self.times)):
            raise ContractError("experiment times must be finite")
        for arr in (self.prep_angles, self.meas_angles, self.times, self.prep_scale, self.meas_scale):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def ids(self) -> np.ndarray:
        return np.arange(len(self))

    @cached_property
    def prep_vectors(self) -> np.ndarray:
        return angles_to_vectors(self.prep_angles) * self.prep_scale[:, None, None]

    @cached_property
    def meas_vectors(self) -> np.ndarray:
        """Unit measurement axes (contraction is kept separately)."""
        return angles_to_vectors(self.meas_angles)

    def __getitem__(self, i: int) -> Experiment:
        i = int(i)
        if not 0 <= i < len(self):
            raise IndexError(f"experiment id {i} outside menu of {len(self)}")
        p, m = self.prep_vectors[i], self.meas_vectors[i]
        return Experiment(
            prep=(BlochVector.from_array(p[0]), BlochVector.from_array(p[1])),
            meas_axes=(BlochVector.from_array(m[0]), BlochVector.from_array(m[1])),
            t=float(self.times[i]),
            id=i,
            meas_scale=float(self.meas_scale[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, ids) -> "ExperimentMenu":
        """New menu holding ``ids`` in the given order (re-indexed from 0)."""
        ids = np.asarray(ids, dtype=int)
        prov = dict(self.provenance)
        prov["subset_of"] = self.provenance.get("generator", "menu")
        prov["parent_ids"] = [int(i) for i in ids]
        return ExperimentMenu(
            self.prep_angles[ids], self.meas_angles[ids], self.times[ids],
            self.prep_scale[ids], self.meas_scale[ids], prov,
        )

    def with_times(self, times) -> "ExperimentMenu":
        """Every experiment repeated at each of ``times`` (experiment-major order)."""
        times = np.asarray(times, dtype=float).ravel()
        if times.size == 0:
            raise ContractError("times must be non-empty")
        n, k = len(self), times.size
        idx = np.repeat(np.arange(n), k)
        prov = dict(self.provenance)
        prov["times"] = [float(t) for t in times]
        return ExperimentMenu(
            self.prep_angles[idx], self.meas_angles[idx], np.tile(times, n),
            self.prep_scale[idx], self.meas_scale[idx], prov,
        )

    def same_as(self, other: "ExperimentMenu") -> bool:
        return len(self) == len(other) and all(
            np.array_equal(getattr(self, a), getattr(other, a))
            for a in ("prep_angles", "meas_angles", "times", "prep_scale", "meas_scale")
        )

    # -- file format -----------------------------------------------------------------
    def to_json(self, extra: dict | None = None) -> dict:
        experiments = []
        for i in range(len(self)):
            rec = {
                "id": i,
                "prep": self.prep_angles[i].tolist(),
                "meas": self.meas_angles[i].tolist(),
                "t": float(self.times[i]),
            }
            if self.prep_scale[i] != 1.0:
                rec["prep_scale"] = float(self.prep_scale[i])
            if self.meas_scale[i] != 1.0:
                rec["meas_scale"] = float(self.meas_scale[i])
            experiments.append(rec)
        doc = {"version": MENU_FORMAT_VERSION, "provenance": self.provenance}
        if extra:
            doc.update(extra)
        doc["experiments"] = experiments
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentMenu":
        exps = doc.get("experiments")
        if not exps:
            raise ContractError("menu has no experiments")
        ids = [e["id"] for e in exps]
        if ids != list(range(len(exps))):
            raise ContractError("menu ids must be 0..n-1 in order")
        return cls(
            np.array([e["prep"] for e in exps], dtype=float),
            np.array([e["meas"] for e in exps], dtype=float),
            np.array([e["t"] for e in exps], dtype=float),
            np.array([e.get("prep_scale", 1.0) for e in exps], dtype=float),
            np.array([e.get("meas_scale", 1.0) for e in exps], dtype=float),
            dict(doc.get("provenance", {})),
        )

    def save(self, path, extra: dict | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_json(extra)))

    @classmethod
    def load(cls, path) -> "ExperimentMenu":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ContractError(f"{path}: not a JSON menu ({exc})") from exc
        return cls.from_json(doc)


def build_full_menu(times=(1.0,)) -> ExperimentMenu:
    """All product preparations x product axes x times.

    Ordering is lexicographic in (prep 1, prep 2, axis 1, axis 2, t).
    """
    times = np.asarray(times, dtype=float).ravel()
    if times.size == 0:
        raise ContractError("times must be non-empty")
    c, a = constellation_angles(), _axis_angles()
    i1, i2, j1, j2, k = np.meshgrid(
        np.arange(len(c)), np.arange(len(c)), np.arange(len(a)), np.arange(len(a)),
        np.arange(times.size), indexing="ij",
    )
    i1, i2, j1, j2, k = (x.ravel() for x in (i1, i2, j1, j2, k))
    prov = {"generator": "full", "times": [float(t) for t in times]}
    return ExperimentMenu(
        np.stack([c[i1], c[i2]], axis=1), np.stack([a[j1], a[j2]], axis=1), times[k], provenance=prov,
    )


def _menu_from_rows(rows, generator: str, t: float = 1.0) -> ExperimentMenu:
    rows = np.asarray(rows, dtype=float)
    return ExperimentMenu(rows[:, :4], rows[:, 4:], np.full(len(rows), t), provenance={"generator": generator})


def suboptimal_menu() -> ExperimentMenu:
    """Twelve axis-aligned configurations at t = 1.

    Four preparations (|uu>, |du>, |-x,+x>, |z,+x>) each measured along z, y
    and x on both qubits.  Row order: measurement basis major, preparation
    minor.
    """
    z, mz, x, mx = (0.0, 0.0), (PI, 0.0), (PI / 2, 0.0), (-PI / 2, 0.0)
    y = (PI / 2, PI / 2)
    preps = ((z, z), (mz, z), (mx, x), (z, x))
    rows = [(*p1, *p2, *m, *m) for m in (z, y, x) for p1, p2 in preps]
    return _menu_from_rows(rows, "suboptimal")


def optimal_pair_menu() -> ExperimentMenu:
    """The two configurations carrying the optimal design at (F, G) = (1, 1)."""
    rows = [
        ((3 * PI / 4, 3 * PI / 2), (CHI, PI / 4), (PI / 4, 0.0), (PI / 4, PI)),
        ((PI - CHI, 7 * PI / 4), (CHI, PI / 4), (PI / 4, 0.0), (CHI, 5 * PI / 4)),
    ]
    return _menu_from_rows([[a for pair in r for a in pair] for r in rows], "optimal-pair")


OPTIMAL_PAIR_WEIGHTS = (0.2, 0.8)


def apply_gate_error(menu: ExperimentMenu, eps_prep: float, eps_meas: float) -> ExperimentMenu:
    """Contract preparation vectors by ``1 - eps_prep`` and measurement axes by ``1 - eps_meas``."""
    for name, eps in (("eps_prep", eps_prep), ("eps_meas", eps_meas)):
        if not 0.0 <= eps < 1.0:
            raise ContractError(f"{name}={eps} outside [0, 1)")
    prov = dict(menu.provenance)
    prov["gate_error"] = {"eps_prep": float(eps_prep), "eps_meas": float(eps_meas)}
    return ExperimentMenu(
        menu.prep_angles, menu.meas_angles, menu.times,
        menu.prep_scale * (1.0 - eps_prep), menu.meas_scale * (1.0 - eps_meas), prov,
    )


MENU_NAMES = ("full", "suboptimal", "optimal-pair", "table3")


def menu_by_name(name: str, times=(1.0,)) -> ExperimentMenu:
    """Built-in menus; ``table3`` is an alias of ``optimal-pair``."""
    if name == "full":
        return build_full_menu(times)
    if name == "suboptimal":
        return suboptimal_menu()
    if name in ("optimal-pair", "table3"):
        return optimal_pair_menu()
    raise ContractError(f"unknown menu source {name!r}")


def is_symmetric_constellation(vectors, tol: float = 1e-12) -> bool:
    arr = np.array([v.as_array() for v in vectors])
    for flip in itertools.product((1, -1), repeat=3):
        flipped = arr * np.array(flip)
        if not all(np.min(np.max(np.abs(arr - f), axis=1)) <= tol for f in flipped):
            return False
    return True
