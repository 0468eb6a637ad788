"""Elementwise preprocessing functions applied to phaseless measurements."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

KINDS = ("identity", "exp", "optimal", "trunc")


@dataclass(frozen=True)
class Preprocessor:
    """One of ``identity``, ``exp:GAMMA``, ``optimal:DELTA`` or ``trunc:TAU``.

    * exp      y -> exp(-gamma y), gamma > 0
    * optimal  y -> (y - 1) / (y + sqrt(delta) - 1), delta > 1
    * trunc    y -> y if y <= tau else 0
    """

    kind: str = "identity"
    param: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown preprocessor {self.kind!r}")
        if self.kind == "identity":
            if self.param is not None:
                raise InputError("identity preprocessing takes no parameter")
            return
        if self.param is None or not np.isfinite(self.param):
            raise InputError(f"{self.kind} preprocessing needs a finite parameter")
        if self.kind == "optimal" and not self.param > 1:
            raise InputError(f"optimal preprocessing needs delta > 1, got {self.param}")
        if self.kind in ("exp", "trunc") and not self.param > 0:
            raise InputError(f"{self.kind} preprocessing needs a positive parameter, got {self.param}")

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def exponential(cls, gamma: float):
        return cls("exp", float(gamma))

    @classmethod
    def optimal(cls, delta: float):
        return cls("optimal", float(delta))

    @classmethod
    def truncate(cls, tau: float):
        return cls("trunc", float(tau))

    @classmethod
    def parse(cls, text: str) -> "Preprocessor":
        text = text.strip()
        if text == "identity":
            return cls()
        kind, sep, value = text.partition(":")
        if not sep or kind not in KINDS or kind == "identity":
            raise InputError(f"bad preprocessor {text!r} (identity | exp:GAMMA | optimal:DELTA | trunc:TAU)")
        try:
            param = float(value)
        except ValueError:
            raise InputError(f"bad parameter in preprocessor {text!r}") from None
        return cls(kind, param)

    def __str__(self):
        if self.kind == "identity":
            return "identity"
        return f"{self.kind}:{self.param:g}"

    def __call__(self, y):
        return apply(self, y)


def apply(p: Preprocessor, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if p.kind == "identity":
        return y.copy()
    if p.kind == "exp":
        return np.exp(-p.param * y)
    if p.kind == "trunc":
        return np.where(y <= p.param, y, 0.0)
    offset = np.sqrt(p.param) - 1.0
    denom = y + offset
    if np.any(np.abs(denom) <= 1e-12):
        raise InputError(f"measurement hits the pole of optimal preprocessing at y = {-offset:g}")
    return (y - 1.0) / denom
