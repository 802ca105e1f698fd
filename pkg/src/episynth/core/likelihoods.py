"""Observation models binding a data node's stream to its functional parent.

A functional value is either an array indexed by age (``index="age"``), by
time and age (``index="time_age"``) or a scalar (``index="scalar"``), with any
number of leading batch axes. Each likelihood picks the entries named by the
stream's rows and sums the per-row log densities, keeping batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping

import numpy as np

from episynth.core import kernels
from episynth.core.streams import DataStream
from episynth.errors import ConfigurationError

_INDEXES = ("age", "time_age", "scalar")


def _pick(arr, stream: DataStream, index: str):
    arr = np.asarray(arr, dtype=float)
    if index == "scalar":
        return arr[..., None] * np.ones(len(stream))
    if index == "age":
        return arr[..., stream.age_index]
    return arr[..., stream.time_index, stream.age_index]


@dataclass(frozen=True)
class Likelihood:
    index: str = "age"

    def __post_init__(self):
        if self.index not in _INDEXES:
            raise ConfigurationError(f"likelihood index must be one of {_INDEXES}")

    def terms(self, psi: Any, stream: DataStream) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, psi: Any, *streams: DataStream):
        (stream,) = streams
        out = np.sum(self.terms(psi, stream), axis=-1)
        return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Binomial(Likelihood):
    """``y ~ Binomial(n, p)``.

    ``psi`` is either the probability (sizes from the stream's denominator
    column) or a mapping with ``"size"`` and ``"prob"`` entries, as in the
    detection terms where the size is a latent count.
    """

    def terms(self, psi, stream):
        if isinstance(psi, Mapping):
            n = _pick(psi["size"], stream, self.index)
            p = _pick(psi["prob"], stream, self.index)
        else:
            n = stream.denominator
            p = _pick(psi, stream, self.index)
        return kernels.binomial_logpmf(stream.value, n, p, strict=False)


@dataclass(frozen=True)
class NegBinomial(Likelihood):
    """``y ~ NegBin(mean, size)``; ``psi`` is the mean or ``{"mean", "size"}``."""

    size: float = np.inf

    def terms(self, psi, stream):
        if isinstance(psi, Mapping):
            mean = _pick(psi["mean"], stream, self.index)
            size = psi["size"]
            size = np.asarray(size, dtype=float)
            if size.ndim and size.shape[-1] != 1:
                size = size[..., None]
        else:
            mean = _pick(psi, stream, self.index)
            size = self.size
        return kernels.negbin_logpmf(stream.value, mean, size, strict=False)


@dataclass(frozen=True)
class Poisson(Likelihood):
    def terms(self, psi, stream):
        return kernels.poisson_logpmf(stream.value, _pick(psi, stream, self.index))


@dataclass(frozen=True)
class LogNormalPoint(Likelihood):
    """Log-scale point estimate ``y_hat ~ Normal(log N, sd)``, sd from the denominator column."""

    def terms(self, psi, stream):
        n = _pick(psi, stream, self.index)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = kernels.normal_logpdf(stream.value, np.log(n), stream.denominator)
        return np.where(n > 0, out, -np.inf)


@dataclass(frozen=True)
class Normal(Likelihood):
    """``y ~ Normal(psi, sd)`` with sd from the denominator column."""

    def terms(self, psi, stream):
        return kernels.normal_logpdf(stream.value, _pick(psi, stream, self.index), stream.denominator)


@dataclass(frozen=True)
class Custom(Likelihood):
    """Wrap an arbitrary ``fn(psi, *streams) -> log density`` (batch axes kept)."""

    fn: Callable[..., Any] = None  # type: ignore[assignment]

    def __call__(self, psi, *streams):
        return self.fn(psi, *streams)
