"""Invertible affine coupling stacks for auxiliary-variable posteriors.

Each step splits the coordinates with a binary mask, feeds the masked
half through a one-hidden-layer tanh net, and applies an affine map to
the other half. Masks alternate between steps so every coordinate is
transformed when two or more steps are used. Log-scales are tanh-capped
so a step can never collapse or explode, the log-det-Jacobian is exact
(the sum of the active log-scales), and inversion is closed-form.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError


class AffineCouplingFlow:
    """Stack of masked affine coupling steps acting on vectors.

    The final layers of the scale and shift nets start at zero, so a
    freshly built flow is exactly the identity with zero log-det.
    """

    def __init__(self, dim: int, num_steps: int = 2, hidden: int = 50, *,
                 rng: np.random.Generator, name: str = "flow"):
        if dim < 1:
            raise ContractError("flow dimension must be >= 1")
        self.dim = int(dim)
        self.num_steps = int(num_steps)
        self.hidden = int(hidden)
        self.name = name
        self.masks = [((np.arange(self.dim) + k) % 2 == 0).astype(np.float64)
                      for k in range(self.num_steps)]
        bound = 1.0 / np.sqrt(self.dim)
        self.steps = []
        for k in range(self.num_steps):
            self.steps.append({
                "w1": Tensor(rng.uniform(-bound, bound, size=(self.dim, self.hidden)),
                             requires_grad=True),
                "b1": Tensor(np.zeros(self.hidden), requires_grad=True),
                "ws": Tensor(np.zeros((self.hidden, self.dim)), requires_grad=True),
                "bs": Tensor(np.zeros(self.dim), requires_grad=True),
                "wt": Tensor(np.zeros((self.hidden, self.dim)), requires_grad=True),
                "bt": Tensor(np.zeros(self.dim), requires_grad=True),
            })

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for k, step in enumerate(self.steps):
            for key, tensor in step.items():
                out[f"{self.name}.step{k}.{key}"] = tensor
        return out

    def _scale_shift(self, z_masked: Tensor, step, unmask: np.ndarray):
        h = ad.tanh(ad.matmul(z_masked, step["w1"]) + step["b1"])
        s = ad.tanh(ad.matmul(h, step["ws"]) + step["bs"]) * unmask
        t = (ad.matmul(h, step["wt"]) + step["bt"]) * unmask
        return s, t

    def forward(self, z: Tensor | np.ndarray) -> tuple[Tensor, Tensor]:
        """Transform z; returns (z_out, log_det_jacobian).

        Accepts a vector of length dim or a batch (n, dim); the log-det
        is per vector (scalar for a vector, length-n for a batch).
        """
        z = z if isinstance(z, Tensor) else Tensor(z)
        if z.shape[-1] != self.dim:
            raise ContractError(f"flow expects last dim {self.dim}, got {z.shape}")
        log_det = Tensor(np.zeros(z.shape[:-1]))
        for mask, step in zip(self.masks, self.steps):
            unmask = 1.0 - mask
            s, t = self._scale_shift(z * mask, step, unmask)
            z = z * ad.exp(s) + t
            log_det = log_det + ad.reduce_sum(s, axis=-1)
        return z, log_det

    def inverse(self, z_values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Exact inverse on plain arrays; returns (z_in, log_det_of_inverse)."""
        z = np.asarray(z_values, dtype=np.float64)
        log_det = np.zeros(z.shape[:-1])
        for mask, step in zip(reversed(self.masks), reversed(self.steps)):
            unmask = 1.0 - mask
            h = np.tanh((z * mask) @ step["w1"].values + step["b1"].values)
            s = np.tanh(h @ step["ws"].values + step["bs"].values) * unmask
            t = (h @ step["wt"].values + step["bt"].values) * unmask
            z = (z - t) * np.exp(-s)
            log_det = log_det - s.sum(axis=-1)
        return z, log_det
