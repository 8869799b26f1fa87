"""Bayesian dense layer with a multiplicative-flow approximate posterior.

The weight posterior is a fully factorized Gaussian whose means are
scaled, per input row, by an auxiliary variable z. z starts from a
factorized Gaussian and is enriched by an affine coupling flow; an
inverse model r(z|W), itself a coupling flow over a weight-conditioned
Gaussian base, keeps the variational bound tight.

The forward pass uses local reparameterization: instead of sampling a
weight matrix it samples the (Gaussian) pre-activations directly, with
one z per call and independent noise per batch element. The full weight
matrix is materialized only once per KL evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DisuqError
from .flows import AffineCouplingFlow
from .util import NoiseBank

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class SampleCtx:
    """Auxiliary draw shared between a forward pass and its KL estimate."""

    z0: Tensor
    z: Tensor
    log_det_q: Tensor
    version: int


class MnfDenseLayer:
    """Dense layer with multiplicative-flow posterior over its weights.

    With ``deterministic_z=True`` the auxiliary variable is pinned to the
    base mean (no sampling) and the KL reduces to the closed-form
    mean-field Gaussian term; this is the degenerate configuration used
    for equivalence checks against an ordinary dense layer.
    """

    def __init__(self, in_dim: int, out_dim: int, *,
                 flow_steps: int = 2, flow_hidden: int = 50,
                 rng: np.random.Generator, name: str = "mnf",
                 logvar_init: float = -9.0, deterministic_z: bool = False,
                 trainable: bool = True):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.name = name
        self.deterministic_z = bool(deterministic_z)
        self.param_version = 0

        bound = 1.0 / np.sqrt(self.in_dim)
        grad = trainable
        mnf_grad = trainable and not deterministic_z
        self.w = Tensor(rng.uniform(-bound, bound, size=(self.in_dim, self.out_dim)),
                        requires_grad=grad)
        self.b = Tensor(np.zeros(self.out_dim), requires_grad=grad)
        self.w_logvar = Tensor(np.full((self.in_dim, self.out_dim), logvar_init),
                               requires_grad=mnf_grad)
        self.b_logvar = Tensor(np.full(self.out_dim, logvar_init), requires_grad=mnf_grad)
        self.qz0_mean = Tensor(np.ones(self.in_dim), requires_grad=mnf_grad)
        self.qz0_logvar = Tensor(np.full(self.in_dim, logvar_init), requires_grad=mnf_grad)
        self.q_flow = AffineCouplingFlow(self.in_dim, flow_steps, flow_hidden,
                                         rng=rng, name=f"{name}.q_flow")
        self.r_flow = AffineCouplingFlow(self.in_dim, flow_steps, flow_hidden,
                                         rng=rng, name=f"{name}.r_flow")
        self.aux_c = Tensor(rng.uniform(-bound, bound, size=self.in_dim),
                            requires_grad=mnf_grad)
        self.aux_b1 = Tensor(np.zeros(self.out_dim), requires_grad=mnf_grad)
        self.aux_b2 = Tensor(np.zeros(self.out_dim), requires_grad=mnf_grad)
        if not mnf_grad:
            for t in {**self.q_flow.parameters(), **self.r_flow.parameters()}.values():
                t.requires_grad = False

    # -- parameter access ---------------------------------------------------

    def named_tensors(self) -> dict[str, Tensor]:
        out = {
            f"{self.name}.w": self.w,
            f"{self.name}.b": self.b,
            f"{self.name}.w_logvar": self.w_logvar,
            f"{self.name}.b_logvar": self.b_logvar,
            f"{self.name}.qz0_mean": self.qz0_mean,
            f"{self.name}.qz0_logvar": self.qz0_logvar,
            f"{self.name}.aux_c": self.aux_c,
            f"{self.name}.aux_b1": self.aux_b1,
            f"{self.name}.aux_b2": self.aux_b2,
        }
        out.update(self.q_flow.parameters())
        out.update(self.r_flow.parameters())
        return out

    def parameters(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.named_tensors().items() if t.requires_grad}

    def mark_updated(self) -> None:
        self.param_version += 1

    # -- sampling and forward ----------------------------------------------

    def draw_sample_ctx(self, bank: NoiseBank, prefix: str) -> SampleCtx:
        """Draw the auxiliary variable for one forward/KL pair.

        The noise site is named, so a frozen bank replays the same z; at
        inference a (batch, in_dim) site gives each row its own z.
        """
        if self.deterministic_z:
            z0 = self.qz0_mean
        else:
            eps = bank.normal(f"{prefix}.z", (self.in_dim,))
            z0 = ad.gaussian_sample(self.qz0_mean, ad.exp(0.5 * self.qz0_logvar), eps)
        z, log_det_q = self.q_flow.forward(z0)
        return SampleCtx(z0=z0, z=z, log_det_q=log_det_q, version=self.param_version)

    def forward(self, x: Tensor, ctx: SampleCtx, bank: NoiseBank, prefix: str) -> Tensor:
        """Locally reparameterized pre-activations for a (batch, in) input."""
        if x.shape[-1] != self.in_dim:
            raise ContractError(f"{self.name}: expected input dim {self.in_dim}, "
                                f"got {x.shape}")
        m = ad.matmul(x * ctx.z, self.w) + self.b
        v = ad.matmul(ad.square(x), ad.exp(self.w_logvar)) + ad.exp(self.b_logvar)
        if np.any(v.values <= 0.0):
            raise DisuqError(f"{self.name}: non-positive pre-activation variance")
        eps = bank.normal(f"{prefix}.eps", m.shape)
        return ad.gaussian_sample(m, ad.sqrt(v), eps)

    # -- KL estimator --------------------------------------------------------

    def kl_term(self, ctx: SampleCtx, bank: NoiseBank, prefix: str) -> Tensor:
        """Single-sample estimate of the posterior-prior penalty.

        Three parts: (a) closed-form Gaussian KL between the z-scaled
        weight posterior and the standard-normal prior, over weights and
        biases; (b) minus the inverse-model log-density of z given one
        materialized weight sample; (c) plus the flow log-density of z.
        Parts (b) and (c) vanish in the deterministic-z configuration.
        The result is a positive penalty to add to the loss.
        """
        if ctx.version != self.param_version:
            raise ContractError(f"{self.name}: stale sample context; draw a fresh z "
                                "after each parameter update")
        z_col = ad.reshape(ctx.z, (self.in_dim, 1))
        w_mean = z_col * self.w
        w_var = ad.exp(self.w_logvar)
        kl_w = 0.5 * ad.reduce_sum(ad.square(w_mean) + w_var - 1.0 - self.w_logvar)
        kl_b = 0.5 * ad.reduce_sum(ad.square(self.b) + ad.exp(self.b_logvar)
                                   - 1.0 - self.b_logvar)
        term_a = kl_w + kl_b
        if self.deterministic_z:
            return term_a

        eps_w = bank.normal(f"{prefix}.kl_w", (self.in_dim, self.out_dim))
        w_sample = ad.gaussian_sample(w_mean, ad.sqrt(w_var), eps_w)
        xi = ad.tanh(ad.matmul(self.aux_c, w_sample))
        zb, log_det_r = self.r_flow.forward(ctx.z)
        r_mean = ad.matmul(self.aux_b1, xi)
        r_logvar = ad.matmul(self.aux_b2, xi)
        d = float(self.in_dim)
        log_r = (-0.5 * d * LOG_2PI - 0.5 * d * r_logvar
                 - 0.5 * ad.exp(-r_logvar) * ad.reduce_sum(ad.square(zb - r_mean))
                 + log_det_r)
        log_q0 = (-0.5 * d * LOG_2PI - 0.5 * ad.reduce_sum(self.qz0_logvar)
                  - 0.5 * ad.reduce_sum(ad.square(ctx.z0 - self.qz0_mean)
                                        * ad.exp(-self.qz0_logvar)))
        log_q = log_q0 - ctx.log_det_q
        return term_a - log_r + log_q
