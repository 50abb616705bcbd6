"""Noise laws and the linear structural model shared by the simulator and the deciders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("gaussian", "laplace", "uniform")


@dataclass(frozen=True)
class NoiseLaw:
    """Location-scale noise.

    ``scale`` is the standard deviation for gaussian, the diversity ``b`` for
    laplace, and the half-width ``s`` of ``U[loc - s, loc + s]`` for uniform.
    """

    family: str = "gaussian"
    scale: float = 1.0
    loc: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}; expected one of {FAMILIES}")
        if not self.scale > 0:
            raise ValueError("noise scale must be positive")

    @property
    def variance(self) -> float:
        if self.family == "gaussian":
            return self.scale ** 2
        if self.family == "laplace":
            return 2.0 * self.scale ** 2
        return self.scale ** 2 / 3.0

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.family == "gaussian":
            return rng.normal(self.loc, self.scale, n)
        if self.family == "laplace":
            return rng.laplace(self.loc, self.scale, n)
        return rng.uniform(self.loc - self.scale, self.loc + self.scale, n)

    @classmethod
    def parse(cls, text: str) -> "NoiseLaw":
        """Parse ``family:scale`` or ``family:scale:loc``."""
        parts = text.split(":")
        if len(parts) not in (2, 3):
            raise ValueError(f"noise law must look like 'laplace:0.4', got {text!r}")
        loc = float(parts[2]) if len(parts) == 3 else 0.0
        return cls(parts[0], float(parts[1]), loc)

    def __str__(self) -> str:
        return f"{self.family}:{self.scale:g}" + (f":{self.loc:g}" if self.loc else "")


@dataclass(frozen=True)
class LinearScm:
    """``X = qA + E_X``, ``H = bA + E_H``, ``Y = cX + dH + E_Y`` with H unobserved."""

    q: float
    b: float
    c: float
    d: float
    e_x: NoiseLaw = NoiseLaw()
    e_h: NoiseLaw = NoiseLaw()
    e_y: NoiseLaw = NoiseLaw()

    @property
    def var_ex(self) -> float:
        return self.e_x.variance

    @property
    def var_e(self) -> float:
        """Variance of the combined noise ``E = E_Y + d * E_H``."""
        return self.e_y.variance + self.d ** 2 * self.e_h.variance

    @property
    def is_gaussian(self) -> bool:
        return all(law.family == "gaussian" for law in (self.e_x, self.e_h, self.e_y))

    def check_theorem_hypotheses(self) -> None:
        if self.c == 0:
            raise ValueError("X must influence Y (c != 0)")
        if self.q * self.c + self.b * self.d == 0:
            raise ValueError("A and Y must be dependent (qc + bd != 0)")


TABLE2_SCM = LinearScm(0.7, 0.6, 0.9, 0.6, NoiseLaw("uniform", 0.2), NoiseLaw("uniform", 0.2),
                       NoiseLaw("uniform", 0.1))
TABLE3_SCM = LinearScm(0.7, 0.6, 0.9, 0.6, NoiseLaw("laplace", 0.4), NoiseLaw("laplace", 0.4),
                       NoiseLaw("laplace", 0.2))
