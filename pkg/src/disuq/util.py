"""Seeded random substreams and recorded noise draws.

All randomness in a run flows from one 64-bit seed through named
substreams, so any stage (generation, init, shuffling, sampling) can be
reproduced in isolation.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ContractError

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _token(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & _MASK64
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream_rng(seed, *parts) -> np.random.Generator:
    """Independent generator for a named substream of one run seed."""
    return np.random.default_rng([_token(seed)] + [_token(p) for p in parts])


class NoiseBank:
    """Named standard-normal draws for one stochastic forward pass.

    In recording mode every site name must be drawn at most once; the
    drawn blocks are kept so that ``freeze()`` can hand out a replaying
    bank that returns bit-identical noise. Frozen banks are what make
    finite-difference gradient checks of a stochastic graph possible.
    """

    def __init__(self, rng: np.random.Generator | None = None,
                 frozen: dict[str, np.ndarray] | None = None):
        if rng is None and frozen is None:
            raise ContractError("NoiseBank needs either an rng or a frozen store")
        self._rng = rng
        self._frozen = frozen is not None
        self._store: dict[str, np.ndarray] = dict(frozen) if frozen else {}

    def normal(self, name: str, shape) -> np.ndarray:
        shape = tuple(int(s) for s in shape)
        if self._frozen:
            if name not in self._store:
                raise ContractError(f"frozen noise bank has no site '{name}'")
            arr = self._store[name]
            if arr.shape != shape:
                raise ContractError(
                    f"noise site '{name}' recorded shape {arr.shape}, requested {shape}")
            return arr
        if name in self._store:
            raise ContractError(f"noise site '{name}' drawn twice in one pass")
        arr = self._rng.standard_normal(shape)
        self._store[name] = arr
        return arr

    def freeze(self) -> "NoiseBank":
        """Replaying copy of everything drawn so far."""
        return NoiseBank(frozen=self._store)

    @property
    def sites(self) -> dict[str, np.ndarray]:
        return dict(self._store)
