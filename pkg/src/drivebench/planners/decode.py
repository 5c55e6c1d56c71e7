"""Temperature and nucleus (top-p) token selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DecodeParams:
    temperature: float = 0.0
    top_p: float = 0.75

    def __post_init__(self):
        if not self.temperature >= 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")


def nucleus(logits, decode: DecodeParams) -> tuple[np.ndarray, np.ndarray]:
    """Token indices of the nucleus (most probable first) and their renormalized probabilities."""
    z = np.asarray(logits, dtype=float) / decode.temperature
    z = z - z.max()
    probs = np.exp(z)
    probs /= probs.sum()
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    # smallest prefix whose mass reaches top_p
    k = int(np.searchsorted(cum, decode.top_p, side="left")) + 1
    k = min(k, len(order))
    keep = order[:k]
    return keep, probs[keep] / probs[keep].sum()


def decode_token(logits, decode: DecodeParams, rng: np.random.Generator) -> int:
    """Pick one token index; temperature 0 is greedy with ties going to the lowest index."""
    arr = np.asarray(logits, dtype=float)
    if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)):
        raise ValueError("logits must be a non-empty finite vector")
    if decode.temperature == 0:
        return int(np.argmax(arr))
    keep, probs = nucleus(arr, decode)
    return int(keep[rng.choice(len(keep), p=probs)])
