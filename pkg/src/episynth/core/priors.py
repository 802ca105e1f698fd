"""Prior specifications for basic parameters and their sampling transforms."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import special

from episynth.core.kernels import LOG_2PI
from episynth.errors import ConfigurationError

FAMILIES = ("uniform", "beta", "normal", "lognormal", "gamma", "logit_normal")

# hyperparameter names and defaults; ``None`` means required
_HYPER = {
    "uniform": {"lower": 0.0, "upper": 1.0},
    "beta": {"a": None, "b": None},
    "normal": {"mean": 0.0, "sd": None},
    "lognormal": {"meanlog": 0.0, "sdlog": None},
    "gamma": {"shape": None, "rate": None},
    "logit_normal": {"mean": 0.0, "sd": None},
}

# families whose location may be taken from another node's value
_CENTERABLE = ("normal", "lognormal", "logit_normal")


@dataclass(frozen=True)
class Transform:
    """Map between the unconstrained sampling scale and the parameter scale."""

    kind: str  # "identity", "log" or "interval"
    lower: float = 0.0
    upper: float = 1.0

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "identity":
                return x
            if self.kind == "log":
                return np.log(x)
            u = (x - self.lower) / (self.upper - self.lower)
            return special.logit(u)

    def inverse(self, z):
        """Return ``(x, log|dx/dz|)``."""
        z = np.asarray(z, dtype=float)
        if self.kind == "identity":
            return z, np.zeros_like(z)
        if self.kind == "log":
            return np.exp(z), z
        width = self.upper - self.lower
        x = self.lower + width * special.expit(z)
        ljac = np.log(width) - np.logaddexp(0.0, z) - np.logaddexp(0.0, -z)
        return x, ljac


@dataclass(frozen=True)
class PriorSpec:
    """Distribution family plus hyperparameters for one basic node.

    ``center`` names another basic node whose value supplies the location
    (on the family's natural scale): this is how wave-3 probabilities are
    centred on their wave-2 counterparts and how random-walk priors chain.
    """

    family: str
    params: dict[str, float] = field(default_factory=dict)
    center: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown prior family {self.family!r}")
        if self.center is not None and self.family not in _CENTERABLE:
            raise ConfigurationError(f"prior family {self.family!r} cannot be centred on a node")
        full = {}
        for key, default in _HYPER[self.family].items():
            val = self.params.get(key, default)
            if val is None:
                raise ConfigurationError(f"{self.family} prior requires {key!r}")
            full[key] = float(val)
        extra = set(self.params) - set(full)
        if extra:
            raise ConfigurationError(f"unexpected hyperparameters {sorted(extra)} for {self.family}")
        bad = {
            "uniform": full.get("upper", 1) <= full.get("lower", 0),
            "beta": min(full.get("a", 1), full.get("b", 1)) <= 0,
            "normal": full.get("sd", 1) <= 0,
            "lognormal": full.get("sdlog", 1) <= 0,
            "gamma": min(full.get("shape", 1), full.get("rate", 1)) <= 0,
            "logit_normal": full.get("sd", 1) <= 0,
        }[self.family]
        if bad:
            raise ConfigurationError(f"invalid hyperparameters {full} for {self.family}")
        object.__setattr__(self, "params", full)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PriorSpec":
        d = dict(d)
        family = d.pop("family")
        center = d.pop("center", None)
        return cls(family, d, center)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"family": self.family, **self.params}
        if self.center is not None:
            out["center"] = self.center
        return out

    @property
    def transform(self) -> Transform:
        if self.family in ("normal",):
            return Transform("identity")
        if self.family in ("lognormal", "gamma"):
            return Transform("log")
        if self.family == "uniform":
            return Transform("interval", self.params["lower"], self.params["upper"])
        return Transform("interval", 0.0, 1.0)

    def _location(self, center_value):
        if self.center is None:
            return self.params.get("mean", self.params.get("meanlog"))
        c = np.asarray(center_value, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.family == "lognormal":
                return np.log(c)
            if self.family == "logit_normal":
                return special.logit(c)
        return c

    def logpdf(self, x, center_value=None):
        """Log density on the parameter scale; ``-inf`` outside the support."""
        x = np.asarray(x, dtype=float)
        p = self.params
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.family == "uniform":
                inside = (x >= p["lower"]) & (x <= p["upper"])
                return np.where(inside, -np.log(p["upper"] - p["lower"]), -np.inf)
            if self.family == "beta":
                out = (
                    special.xlogy(p["a"] - 1, x) + special.xlog1py(p["b"] - 1, -x)
                    - special.betaln(p["a"], p["b"])
                )
                out = np.where((x >= 0) & (x <= 1), out, -np.inf)
            elif self.family == "gamma":
                k, rate = p["shape"], p["rate"]
                out = special.xlogy(k - 1, x) - rate * x + k * np.log(rate) - special.gammaln(k)
                out = np.where(x >= 0, out, -np.inf)
            elif self.family == "normal":
                z = (x - self._location(center_value)) / p["sd"]
                out = -0.5 * LOG_2PI - np.log(p["sd"]) - 0.5 * z * z
            elif self.family == "lognormal":
                z = (np.log(x) - self._location(center_value)) / p["sdlog"]
                out = -0.5 * LOG_2PI - np.log(p["sdlog"]) - 0.5 * z * z - np.log(x)
            else:
                lx = special.logit(x)
                z = (lx - self._location(center_value)) / p["sd"]
                out = -0.5 * LOG_2PI - np.log(p["sd"]) - 0.5 * z * z - np.log(x) - np.log1p(-x)
        out = np.asarray(out, dtype=float)
        return np.where(np.isnan(out), -np.inf, out)

    def sample(self, rng: np.random.Generator, size=None, center_value=None):
        p = self.params
        if self.family == "uniform":
            return rng.uniform(p["lower"], p["upper"], size)
        if self.family == "beta":
            return rng.beta(p["a"], p["b"], size)
        if self.family == "gamma":
            return rng.gamma(p["shape"], 1.0 / p["rate"], size)
        loc = self._location(center_value)
        if self.family == "normal":
            return rng.normal(loc, p["sd"], size)
        if self.family == "lognormal":
            return np.exp(rng.normal(loc, p["sdlog"], size))
        return special.expit(rng.normal(loc, p["sd"], size))
