"""Programmable neural objectives over voxel regions.

An objective is a signed, weighted sum of region means of the predicted
response r:

    L(r) = sum_i c_i * mean_{v in R_i} r_v,   c_i = -w_i (activate) or +w_i (suppress)

so a single "+R" term maximizes the region mean, "-R" suppresses it, and
multi-term objectives co-activate or trade regions off against each other.

Text grammar (whitespace-separated terms):

    objective := term (ws term)*
    term      := ('+' | '-') NAME (':' POSITIVE_DECIMAL)?
    NAME      := [A-Za-z0-9_]+
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

ACTIVATE = "activate"
SUPPRESS = "suppress"

_NAME_RE = re.compile(r"[A-Za-z0-9_]+")
_WEIGHT_RE = re.compile(r"[0-9]+(\.[0-9]+)?")


class ObjectiveParseError(ValueError):
    """Objective text rejected; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class RegionError(ValueError):
    """Atlas or compile-time region problem (unknown name, bad indices)."""


@dataclass(frozen=True)
class ObjectiveTerm:
    region: str
    sign: str
    weight: float = 1.0

    def __post_init__(self):
        if self.sign not in (ACTIVATE, SUPPRESS):
            raise ValueError(f"sign must be '{ACTIVATE}' or '{SUPPRESS}', got {self.sign!r}")
        if not _NAME_RE.fullmatch(self.region):
            raise ValueError(f"region name must match [A-Za-z0-9_]+, got {self.region!r}")
        if not self.weight > 0:
            raise ValueError(f"term weight must be positive, got {self.weight}")

    @property
    def coefficient(self) -> float:
        """Signed loss coefficient: -weight to activate, +weight to suppress."""
        return -self.weight if self.sign == ACTIVATE else self.weight


def parse_objective(text: str) -> list[ObjectiveTerm]:
    """Parse objective text into terms; raises ObjectiveParseError with offset."""
    terms: list[ObjectiveTerm] = []
    pos = 0
    n = len(text)
    while True:
        while pos < n and text[pos].isspace():
            pos += 1
        if pos >= n:
            break
        sign_char = text[pos]
        if sign_char not in "+-":
            raise ObjectiveParseError(
                f"expected '+' or '-' before region name, got {sign_char!r}", pos
            )
        pos += 1
        m = _NAME_RE.match(text, pos)
        if m is None:
            raise ObjectiveParseError("expected region name after sign", pos)
        name = m.group(0)
        pos = m.end()
        weight = 1.0
        if pos < n and text[pos] == ":":
            pos += 1
            wm = _WEIGHT_RE.match(text, pos)
            if wm is None:
                raise ObjectiveParseError("expected decimal weight after ':'", pos)
            weight = float(wm.group(0))
            if not weight > 0:
                raise ObjectiveParseError(f"weight must be positive, got {wm.group(0)}", pos)
            pos = wm.end()
        if pos < n and not text[pos].isspace():
            raise ObjectiveParseError(f"unexpected character {text[pos]!r}", pos)
        sign = ACTIVATE if sign_char == "+" else SUPPRESS
        terms.append(ObjectiveTerm(name, sign, weight))
    if not terms:
        raise ObjectiveParseError("empty objective", 0)
    return terms


def format_objective(terms: list[ObjectiveTerm]) -> str:
    """Render terms back to objective text; round-trips through parse_objective."""
    parts = []
    for t in terms:
        sign = "+" if t.sign == ACTIVATE else "-"
        if t.weight == 1.0:
            parts.append(f"{sign}{t.region}")
        else:
            # positional decimal so the grammar can re-read it exactly
            parts.append(f"{sign}{t.region}:{np.format_float_positional(t.weight, unique=True, trim='-')}")
    return " ".join(parts)


class RoiAtlas:
    """Named voxel-index sets. Regions may overlap; indices are sorted and unique."""

    def __init__(self, regions: dict[str, np.ndarray]):
        self.regions: dict[str, np.ndarray] = {}
        for name, idx in regions.items():
            if not _NAME_RE.fullmatch(name):
                raise RegionError(f"region name must match [A-Za-z0-9_]+, got {name!r}")
            arr = np.unique(np.asarray(idx, dtype=np.int64))
            if arr.size == 0:
                raise RegionError(f"region {name!r} is empty")
            if arr[0] < 0:
                raise RegionError(f"region {name!r} has negative voxel index {arr[0]}")
            arr.flags.writeable = False
            self.regions[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self.regions

    def names(self) -> list[str]:
        return list(self.regions)

    def validate(self, n_voxels: int) -> None:
        for name, idx in self.regions.items():
            if idx[-1] >= n_voxels:
                raise RegionError(
                    f"region {name!r} index {idx[-1]} out of range for {n_voxels} voxels"
                )


@dataclass(frozen=True)
class NeuralObjective:
    """A compiled objective: terms with resolved voxel masks, bound to n_voxels."""

    terms: tuple[ObjectiveTerm, ...]
    masks: tuple[np.ndarray, ...]
    n_voxels: int
    text: str = field(compare=False, default="")

    def region_names(self) -> list[str]:
        """Distinct region names in term order."""
        seen: list[str] = []
        for t in self.terms:
            if t.region not in seen:
                seen.append(t.region)
        return seen

    def loss(self, response: np.ndarray) -> float:
        response = _check_response(response, self.n_voxels)
        total = 0.0
        for term, mask in zip(self.terms, self.masks):
            total += term.coefficient * float(response[mask].mean())
        return total

    def cotangent(self, response: np.ndarray) -> np.ndarray:
        """dL/dresponse: c_i / |R_i| summed over terms containing each voxel."""
        response = _check_response(response, self.n_voxels)
        cot = np.zeros(self.n_voxels)
        for term, mask in zip(self.terms, self.masks):
            cot[mask] += term.coefficient / mask.size
        return cot


def compile_objective(
    terms: list[ObjectiveTerm], atlas: RoiAtlas, n_voxels: int
) -> NeuralObjective:
    """Resolve term region names against the atlas and bind voxel masks."""
    atlas.validate(n_voxels)
    masks = []
    for t in terms:
        if t.region not in atlas:
            raise RegionError(
                f"unknown region {t.region!r}; atlas has {sorted(atlas.regions)}"
            )
        masks.append(atlas.regions[t.region])
    return NeuralObjective(
        terms=tuple(terms),
        masks=tuple(masks),
        n_voxels=n_voxels,
        text=format_objective(terms),
    )


def region_means(atlas: RoiAtlas, response: np.ndarray) -> dict[str, float]:
    """Arithmetic mean of the response over every atlas region."""
    n = np.asarray(response).shape[-1]
    atlas.validate(n)
    response = _check_response(response, n)
    return {name: float(response[idx].mean()) for name, idx in atlas.regions.items()}


def _check_response(response: np.ndarray, n_voxels: int) -> np.ndarray:
    response = np.asarray(response, dtype=np.float64)
    if response.ndim != 1 or response.shape[0] != n_voxels:
        raise ValueError(
            f"response length mismatch: expected {n_voxels}, got {response.shape}"
        )
    return response
