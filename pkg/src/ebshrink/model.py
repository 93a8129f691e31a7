"""Shared data model: observations, prior family specs, fitted priors, results.

All types are immutable after construction and safe to share across threads.
Fitted priors serialize to a fixed JSON schema (see ``prior_to_json``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np


class DataError(ValueError):
    """Invalid input data or malformed prior/file contents."""


PARAMETRIC_FAMILIES = (
    "normal",
    "point_normal",
    "point_laplace",
    "point_exponential",
)

NONPARAMETRIC_FAMILIES = (
    "normal_scale_mixture",
    "unimodal_symmetric",
    "unimodal",
    "unimodal_nonnegative",
    "unimodal_nonpositive",
    "npmle",
)

ALL_FAMILIES = PARAMETRIC_FAMILIES + NONPARAMETRIC_FAMILIES

# Families whose mode may be estimated rather than fixed.
MODE_ESTIMATION_FAMILIES = ("normal", "point_normal", "point_laplace")

MIXTURE_KINDS = ("point_mass", "normal", "uniform")


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ObservationSet:
    """Observations x_i with standard deviations s_i (s broadcast to len(x))."""

    x: np.ndarray
    s: np.ndarray

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def is_homoskedastic(self, rtol: float = 1e-12) -> bool:
        s0 = self.s[0]
        return bool(np.all(np.abs(self.s - s0) <= rtol * s0))


def validate_observations(x, s) -> ObservationSet:
    """Validate and broadcast raw inputs into an ObservationSet.

    ``s`` may be a positive scalar (homoskedastic) or a vector matching ``x``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or x.shape[0] < 1:
        raise DataError("observations must be a nonempty 1-d vector")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite observation")
    s = np.asarray(s, dtype=float)
    if s.ndim == 0:
        s = np.full(x.shape, float(s))
    if s.shape != x.shape:
        raise DataError(
            f"length mismatch: {x.shape[0]} observations, {s.shape[0]} standard errors"
        )
    if not np.all(np.isfinite(s)):
        raise DataError("non-finite standard error")
    if np.any(s <= 0):
        raise DataError("nonpositive standard error")
    return ObservationSet(x=_frozen_array(x), s=_frozen_array(s))


@dataclass(frozen=True)
class PriorFamilySpec:
    """What to fit: a prior family plus mode/scale/initialization options.

    ``mode`` is either a real number (fixed mode location) or the string
    ``"estimate"``. ``scale`` is None (choose automatically), a positive
    number (fixed parametric scale), or a sequence of grid values
    (nonparametric families only).
    """

    family: str
    mode: Union[float, str] = 0.0
    scale: Union[None, float, tuple] = None
    g_init: Union["ParametricPrior", "MixturePrior", None] = None
    fix_g: bool = False

    def __post_init__(self):
        if self.family not in ALL_FAMILIES:
            raise DataError(f"unknown prior family {self.family!r}")
        if isinstance(self.mode, str):
            if self.mode != "estimate":
                raise DataError(f"mode must be a number or 'estimate', got {self.mode!r}")
            if self.family not in MODE_ESTIMATION_FAMILIES:
                raise DataError(f"mode estimation is not supported for family {self.family!r}")
        else:
            object.__setattr__(self, "mode", float(self.mode))
            if not np.isfinite(self.mode):
                raise DataError("mode must be finite")
        if self.scale is not None:
            if np.isscalar(self.scale):
                if not (np.isfinite(self.scale) and self.scale > 0):
                    raise DataError("fixed scale must be a positive finite number")
                object.__setattr__(self, "scale", float(self.scale))
            else:
                grid = tuple(float(v) for v in self.scale)
                if self.family in PARAMETRIC_FAMILIES:
                    raise DataError("scale grids are only valid for nonparametric families")
                if len(grid) == 0 or not all(np.isfinite(v) for v in grid):
                    raise DataError("scale grid must be nonempty and finite")
                object.__setattr__(self, "scale", grid)
        if self.fix_g and self.g_init is None:
            raise DataError("fix_g requires g_init")

    @property
    def is_parametric(self) -> bool:
        return self.family in PARAMETRIC_FAMILIES


@dataclass(frozen=True)
class ParametricPrior:
    """Spike-and-slab record: pi0 * delta(mu) + (1 - pi0) * slab(scale).

    ``scale`` is the slab variance for a normal slab and the rate for
    Laplace/exponential slabs. The pure normal family is stored with
    pi0 = 0; a degenerate point mass is canonicalized to pi0 = 1, scale = 0.
    """

    family: str
    mu: float
    pi0: float
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "pi0", float(self.pi0))
        object.__setattr__(self, "scale", float(self.scale))
        if self.family not in PARAMETRIC_FAMILIES:
            raise DataError(f"not a parametric family: {self.family!r}")
        if not np.isfinite(self.mu):
            raise DataError("mode must be finite")
        if not (0.0 <= self.pi0 <= 1.0):
            raise DataError(f"pi0 out of [0, 1]: {self.pi0}")
        if not (np.isfinite(self.scale) and self.scale >= 0.0):
            raise DataError(f"scale must be finite and nonnegative: {self.scale}")

    @property
    def is_point_mass(self) -> bool:
        return self.pi0 >= 1.0 or self.scale == 0.0


def point_mass_prior(family: str, mu: float) -> ParametricPrior:
    """Canonical degenerate fit: all mass at ``mu``."""
    return ParametricPrior(family=family, mu=mu, pi0=1.0, scale=0.0)


@dataclass(frozen=True)
class MixturePrior:
    """Finite mixture over a fixed component grid.

    ``kind`` selects the component form; each entry of ``components`` is
    a tuple of parameters: ``(loc,)`` for point masses, ``(mean, var)``
    for normals, ``(left, right)`` for uniforms. A zero-width uniform
    denotes a point mass. Components are kept sorted ascending by
    location/scale for deterministic output.
    """

    family: str
    kind: str
    components: tuple
    weights: tuple

    def __post_init__(self):
        if self.kind not in MIXTURE_KINDS:
            raise DataError(f"unknown mixture kind {self.kind!r}")
        comps = tuple(tuple(float(v) for v in c) for c in self.components)
        w = tuple(float(v) for v in self.weights)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)
        if len(comps) != len(w) or len(comps) == 0:
            raise DataError("components and weights must be nonempty and equal length")
        width = {"point_mass": 1, "normal": 2, "uniform": 2}[self.kind]
        for c in comps:
            if len(c) != width or not all(np.isfinite(v) for v in c):
                raise DataError(f"bad {self.kind} component {c!r}")
            if self.kind == "uniform" and c[0] > c[1]:
                raise DataError(f"uniform interval with left > right: {c!r}")
            if self.kind == "normal" and c[1] < 0:
                raise DataError(f"negative normal component variance: {c!r}")
        if any(v < 0 for v in w):
            raise DataError("negative mixture weight")
        if abs(sum(w) - 1.0) > 1e-12:
            raise DataError(f"mixture weights sum to {sum(w)!r}, not 1")

    @property
    def ncomp(self) -> int:
        return len(self.components)


FittedPrior = Union[ParametricPrior, MixturePrior]


def sort_mixture_components(kind: str, components, weights):
    """Deterministic component order: ascending by location/scale."""
    if kind == "point_mass":
        key = lambda cw: (cw[0][0],)
    elif kind == "normal":
        key = lambda cw: (cw[0][1], cw[0][0])
    else:  # uniform: narrow first, then left endpoint
        key = lambda cw: (cw[0][1] - cw[0][0], cw[0][0])
    pairs = sorted(zip(components, weights), key=key)
    comps = tuple(tuple(float(v) for v in c) for c, _ in pairs)
    w = tuple(float(v) for _, v in pairs)
    return comps, w


@dataclass(frozen=True)
class PosteriorSummary:
    """Per-observation posterior mean, SD, second moment, and lfsr."""

    mean: np.ndarray
    sd: np.ndarray
    second_moment: np.ndarray
    lfsr: np.ndarray


@dataclass(frozen=True)
class EbnmResult:
    """Bundle of fitted prior, data log-likelihood, posterior, and sampler."""

    fitted_prior: FittedPrior
    log_likelihood: float
    posterior: PosteriorSummary
    sampler: Callable


def prior_to_json(prior: FittedPrior) -> str:
    """Serialize a fitted prior to its JSON wire format.

    Schema: {"family", "type", "parametric": {"mu","pi0","scale"}} or
    {"family", "type", "mixture": {"kind","components","weights"}}, with
    field order fixed as listed and full float precision.
    """
    if isinstance(prior, ParametricPrior):
        doc = {
            "family": prior.family,
            "type": "parametric",
            "parametric": {"mu": prior.mu, "pi0": prior.pi0, "scale": prior.scale},
        }
    elif isinstance(prior, MixturePrior):
        doc = {
            "family": prior.family,
            "type": "mixture",
            "mixture": {
                "kind": prior.kind,
                "components": [list(c) for c in prior.components],
                "weights": list(prior.weights),
            },
        }
    else:
        raise DataError(f"not a fitted prior: {type(prior).__name__}")
    return json.dumps(doc)


def prior_from_json(text: str) -> FittedPrior:
    """Inverse of ``prior_to_json``; round-trips all fields exactly."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"invalid prior JSON: {e}") from e
    if not isinstance(doc, dict) or "family" not in doc or "type" not in doc:
        raise DataError("prior JSON must carry 'family' and 'type'")
    if doc["type"] == "parametric":
        rec = doc.get("parametric")
        if not isinstance(rec, dict):
            raise DataError("missing 'parametric' record")
        return ParametricPrior(
            family=doc["family"], mu=rec["mu"], pi0=rec["pi0"], scale=rec["scale"]
        )
    if doc["type"] == "mixture":
        rec = doc.get("mixture")
        if not isinstance(rec, dict):
            raise DataError("missing 'mixture' record")
        return MixturePrior(
            family=doc["family"],
            kind=rec["kind"],
            components=tuple(tuple(c) for c in rec["components"]),
            weights=tuple(rec["weights"]),
        )
    raise DataError(f"unknown prior type {doc['type']!r}")
