from dataclasses import dataclass, field

import numpy as np

LPC_ORDER = 16


@dataclass(frozen=True)
class LpcModel:
    """All-pole model s_t = sum_tau a_tau s_{t-tau} + gain * e_t for one frame.

    ``rms`` is the square root of the autocorrelation at lag 0, the level the
    model's output should reach.
    """

    coefficients: np.ndarray
    gain: float
    reflection: np.ndarray
    rms: float = 0.0

    def __post_init__(self) -> None:
        if self.coefficients.shape != (LPC_ORDER,) or self.reflection.shape != (LPC_ORDER,):
            raise ValueError(f"LPC models have order {LPC_ORDER}")
        if self.gain < 0:
            raise ValueError("LPC gain must be non-negative")
        if np.any(np.abs(self.reflection) >= 1.0):
            raise ValueError("unstable LPC model: a reflection coefficient has magnitude >= 1")

    @property
    def denominator(self) -> np.ndarray:
        """Filter denominator [1, -a_1, ..., -a_T] in scipy.signal convention."""

        return np.concatenate([[1.0], -self.coefficients])


@dataclass
class SynthState:
    """Last LPC_ORDER output samples (oldest first) and the excitation pulse phase."""

    history: np.ndarray = field(default_factory=lambda: np.zeros(LPC_ORDER))
    next_pulse: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    @classmethod
    def seeded(cls, seed: int) -> "SynthState":
        return cls(rng=np.random.default_rng(seed))
