"""Breeding-rate profiles ``c: N -> [0, inf)``.

A profile is a finite nonincreasing table ``c(0..K)`` followed by a constant
tail, which is enough for every family used here (BRW, CP, step, truncations).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RateProfile:
    values: tuple[float, ...]
    tail: float

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "tail", float(self.tail))
        if not vals:
            raise ValueError("profile table is empty")
        if not vals[0] > 0:
            raise ValueError("c(0) must be positive")
        seq = vals + (self.tail,)
        if any(v < 0 or not np.isfinite(v) for v in seq):
            raise ValueError("rates must be finite and nonnegative")
        if any(a < b for a, b in zip(seq, seq[1:])):
            raise ValueError("profile must be nonincreasing")

    @property
    def lam(self) -> float:
        return self.values[0]

    @property
    def c_inf(self) -> float:
        return self.tail

    @property
    def K(self) -> int:
        """Last tabulated index."""
        return len(self.values) - 1

    def __call__(self, k: int) -> float:
        if k < 0:
            raise ValueError("occupancy must be nonnegative")
        return self.values[k] if k < len(self.values) else self.tail

    def table(self, length: int | None = None) -> np.ndarray:
        """Rates ``c(0..length-1)`` as an array (tail filled in)."""
        n = len(self.values) if length is None else length
        return np.array([self(k) for k in range(n)], dtype=float)

    def to_dict(self) -> dict:
        return {"kind": "table", "table": list(self.values), "tail": self.tail}


def make_profile(kind: str, **params) -> RateProfile:
    """Build ``constant`` (BRW), ``cp``, ``step`` or ``table`` profiles.

    ``step`` takes ``high`` (= c(0)), ``threshold`` and ``low``: the rate is
    ``high`` below the threshold occupancy and ``low`` from it on.
    """
    if kind == "constant":
        lam = float(params["lam"])
        return RateProfile((lam,), lam)
    if kind == "cp":
        return RateProfile((float(params["lam"]),), 0.0)
    if kind == "step":
        thr = int(params["threshold"])
        if thr < 1:
            raise ValueError("step threshold must be >= 1")
        return RateProfile((float(params["high"]),) * thr, float(params["low"]))
    if kind == "table":
        table = tuple(params["table"])
        return RateProfile(table, float(params.get("tail", 0.0)))
    raise ValueError(f"unknown profile kind {kind!r}")


def profile_from_config(spec: dict) -> RateProfile:
    spec = dict(spec)
    kind = spec.pop("kind")
    if "lambda" in spec:
        spec["lam"] = spec.pop("lambda")
    return make_profile(kind, **spec)


def truncate(profile: RateProfile, n: int) -> RateProfile:
    """``c_n = c * 1_{[0, n-1]}``."""
    if n < 1:
        raise ValueError("truncation level must be >= 1")
    return RateProfile(tuple(profile(k) for k in range(n)), 0.0)


def dominated_from(lower: RateProfile, upper: RateProfile, start: int) -> list[int]:
    """Indices ``j >= start`` where ``lower(j) > upper(j)``.

    Both profiles are constant beyond their tables, so indices past the first
    common tail index are not listed: they repeat the verdict of the last one.
    """
    stop = max(lower.K + 1, upper.K + 1, start)
    return [j for j in range(start, stop + 1) if lower(j) > upper(j)]
