"""Frequency-wise normalization layers over (N, C, F, T) tensors.

Five variants, each shape-preserving and differentiable:

* ``ifn``    -- per-utterance, per-frequency standardization with statistics
                pooled over channels and time;
* ``ln``     -- per-utterance standardization over channels, frequencies and
                time jointly;
* ``rfn``    -- convex blend ``lam * ln + (1 - lam) * ifn``;
* ``wrfn``   -- rfn with learned per-frequency sigmoid-squashed weights on
                each branch;
* ``bwrfn``  -- wrfn whose weight vector carries a diagonal Gaussian
                variational posterior, sampled with the reparametrization
                trick.

Layers are stateless given their parameters; sampling takes an explicit RNG
(no hidden global state).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class RelaxationConfig:
    """Degree of relaxation and the variance-stabilizing constant."""

    lam: float = 0.5
    epsilon: float = 1e-5

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")
        if self.epsilon <= 0.0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class DeterministicWeights:
    """Per-frequency logit weights for the two normalization branches."""

    w1: Parameter
    w2: Parameter

    def __post_init__(self):
        if self.w1.data.shape != self.w2.data.shape or self.w1.data.ndim != 1:
            raise ShapeError("w1 and w2 must be vectors of equal length")

    @property
    def num_freqs(self) -> int:
        return self.w1.data.shape[0]


@dataclass
class VariationalWeights:
    """Diagonal Gaussian posterior over the stacked weight vector [w1; w2].

    ``mu`` and ``log_sigma`` have length 2F; the first F coordinates weight
    the layer-norm branch, the last F the instance-frequency branch.
    sigma = exp(log_sigma) is positive by construction.
    """

    mu: Parameter
    log_sigma: Parameter

    def __post_init__(self):
        if self.mu.data.shape != self.log_sigma.data.shape or self.mu.data.ndim != 1:
            raise ShapeError("mu and log_sigma must be vectors of equal length")
        if self.mu.data.shape[0] % 2 != 0:
            raise ShapeError("variational weight vector must have even length 2F")

    @property
    def num_freqs(self) -> int:
        return self.mu.data.shape[0] // 2

    def params(self) -> list[Parameter]:
        return [self.mu, self.log_sigma]

    @classmethod
    def init(cls, num_freqs: int, name: str, rng: np.random.Generator,
             mu_scale: float = 0.1, sigma_init: float = 0.1) -> "VariationalWeights":
        mu = Parameter(rng.normal(0.0, mu_scale, size=2 * num_freqs),
                       name=f"{name}.mu", decay=False)
        log_sigma = Parameter(np.full(2 * num_freqs, np.log(sigma_init)),
                              name=f"{name}.log_sigma", decay=False)
        return cls(mu=mu, log_sigma=log_sigma)


class NoiseMode:
    """How a variational layer realizes its weight vector.

    ``Sample(rng)`` draws fresh standard-normal noise, ``Fixed(eps)`` uses a
    supplied noise vector (for deterministic gradient checks), ``Mean`` uses
    the posterior mean exactly.
    """

    kind: str

    def __init__(self, kind: str, rng=None, noise=None):
        self.kind = kind
        self.rng = rng
        if noise is None or isinstance(noise, dict):
            # a network forward may carry one fixed vector per insertion site
            self.noise = noise
        else:
            self.noise = np.asarray(noise, dtype=np.float64)

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "NoiseMode":
        return cls("sample", rng=rng)

    @classmethod
    def fixed(cls, noise) -> "NoiseMode":
        return cls("fixed", noise=noise)

    @classmethod
    def mean(cls) -> "NoiseMode":
        return cls("mean")


def _check_rank4(x: Tensor):
    if x.data.ndim != 4:
        raise ShapeError(f"expected rank-4 (N, C, F, T) input, got rank {x.data.ndim}")


def _standardize(x: Tensor, axes: tuple[int, ...], epsilon: float) -> Tensor:
    mean = ad.reduce_mean(x, axes, keepdims=True)
    var = ad.reduce_var(x, axes, keepdims=True)
    return ad.div(ad.sub(x, mean), ad.sqrt(ad.add(var, epsilon)))


def ifn(x: Tensor, epsilon: float = 1e-5) -> Tensor:
    """Standardize each (n, f) slice using statistics over channels and time."""
    _check_rank4(x)
    return _standardize(x, (1, 3), epsilon)


def ln(x: Tensor, epsilon: float = 1e-5) -> Tensor:
    """Standardize each utterance over channels, frequencies and time."""
    _check_rank4(x)
    return _standardize(x, (1, 2, 3), epsilon)


def rfn(x: Tensor, cfg: RelaxationConfig) -> Tensor:
    """Convex combination lam * LN(x) + (1 - lam) * IFN(x)."""
    _check_rank4(x)
    return ad.add(
        ad.mul(ln(x, cfg.epsilon), cfg.lam),
        ad.mul(ifn(x, cfg.epsilon), 1.0 - cfg.lam),
    )


def _weighted_blend(x: Tensor, cfg: RelaxationConfig, w1, w2) -> Tensor:
    ln_branch = ad.mul(ad.mul(ln(x, cfg.epsilon), cfg.lam), ad.sigmoid(w1))
    ifn_branch = ad.mul(ad.mul(ifn(x, cfg.epsilon), 1.0 - cfg.lam), ad.sigmoid(w2))
    return ad.add(ln_branch, ifn_branch)


def wrfn(x: Tensor, cfg: RelaxationConfig, dw: DeterministicWeights) -> Tensor:
    """rfn with sigmoid-squashed per-frequency weights on each branch.

    Weights broadcast over batch, channel and time axes. The two branch
    weights are not renormalized to sum to one; the following convolution
    can compensate.
    """
    _check_rank4(x)
    if dw.num_freqs != x.data.shape[2]:
        raise ShapeError(
            f"weight length {dw.num_freqs} != frequency dim {x.data.shape[2]}"
        )
    return _weighted_blend(x, cfg, dw.w1, dw.w2)


def sample_weights(vw: VariationalWeights, mode: NoiseMode) -> Tensor:
    """Realize the 2F weight vector w = mu + sigma * eps.

    Gradients flow to mu and log_sigma through the reparametrization path.
    """
    if mode.kind == "mean":
        return ad.add(vw.mu, 0.0)
    if mode.kind == "sample":
        eps = mode.rng.standard_normal(vw.mu.data.shape[0])
    elif mode.kind == "fixed":
        eps = mode.noise
        if eps is None or eps.shape != vw.mu.data.shape:
            raise ShapeError(
                f"fixed noise must have shape {vw.mu.data.shape}, got "
                f"{None if eps is None else eps.shape}"
            )
    else:
        raise ConfigError(f"unknown noise mode {mode.kind!r}")
    sigma = ad.exp(vw.log_sigma)
    return ad.add(vw.mu, ad.mul(sigma, eps))


def bwrfn(x: Tensor, cfg: RelaxationConfig, vw: VariationalWeights,
          mode: NoiseMode) -> Tensor:
    """wrfn with the weight vector drawn from the variational posterior."""
    _check_rank4(x)
    f = x.data.shape[2]
    if vw.num_freqs != f:
        raise ShapeError(f"posterior covers {vw.num_freqs} freqs, input has {f}")
    w = sample_weights(vw, mode)
    w1 = ad.narrow(w, 0, 0, f)
    w2 = ad.narrow(w, 0, f, f)
    return _weighted_blend(x, cfg, w1, w2)


def kl_to_standard_normal(vw: VariationalWeights) -> Tensor:
    """Closed-form KL(q || N(0, I)) summed over all 2F coordinates.

    KL = -1/2 * sum_j [1 + ln sigma_j^2 - sigma_j^2 - mu_j^2], always >= 0,
    and 0 exactly when mu = 0 and sigma = 1.
    """
    sigma_sq = ad.exp(ad.mul(vw.log_sigma, 2.0))
    inner = ad.sub(
        ad.add(1.0, ad.mul(vw.log_sigma, 2.0)),
        ad.add(sigma_sq, ad.mul(vw.mu, vw.mu)),
    )
    return ad.mul(ad.reduce_sum(inner), -0.5)
