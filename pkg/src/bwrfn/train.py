"""ELBO training: Monte Carlo cross-entropy data term plus KL regularizer,
optimized with momentum SGD and a step learning-rate schedule.

Minimizing ``elbo_minibatch_loss`` maximizes a minibatch-scaled evidence
lower bound: the data term is the batch-mean cross-entropy averaged over K
weight samples, the KL term is weighted so that one epoch sees the full KL
exactly once in aggregate (per-example mode) or at unit weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import norm
from .autodiff import Parameter, Tape, Tensor
from .errors import ConfigError, DataError, NumericError
from .network import Network
from .rng import substream


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr_init: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_decay_every_epochs: int = 10
    mc_samples: int = 1
    kl_scale_mode: str = "per-example"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.mc_samples < 1:
            raise ConfigError("epochs, batch_size and mc_samples must be >= 1")
        if self.lr_init <= 0 or self.lr_decay_every_epochs < 1:
            raise ConfigError("lr_init and lr_decay_every_epochs must be positive")
        if self.kl_scale_mode not in ("per-example", "unit"):
            raise ConfigError(f"unknown kl_scale_mode {self.kl_scale_mode!r}")


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)  # name -> ndarray
    lr: float = 0.0
    epoch: int = 0


def kl_weight(mode: str, dataset_size: int, batch_size: int) -> float:
    """Per-minibatch KL weight against a batch-mean data term.

    "per-example" spreads the single full-dataset KL of the ELBO across an
    epoch's minibatches (weight B/N = 1/num_batches for equal batches);
    "unit" applies the full KL every step.
    """
    if dataset_size < batch_size or batch_size < 1:
        raise ConfigError("need dataset_size >= batch_size >= 1")
    if mode == "per-example":
        return batch_size / dataset_size
    if mode == "unit":
        return 1.0
    raise ConfigError(f"unknown kl_scale_mode {mode!r}")


def elbo_minibatch_loss(net: Network, x: Tensor, labels, k: int = 1,
                        kl_wt: float = 0.0, modes=None, rng=None) -> Tensor:
    """Negative minibatch ELBO: MC-averaged cross-entropy + kl_wt * KL.

    ``modes`` may supply one NoiseMode per sample (deterministic tests);
    otherwise fresh Sample modes are drawn from ``rng``, or Mean mode is
    used when the net has no variational sites.
    """
    if k < 1:
        raise ConfigError("need K >= 1")
    if modes is None:
        if rng is not None:
            modes = [norm.NoiseMode.sample(rng) for _ in range(k)]
        else:
            modes = [norm.NoiseMode.mean()] * k
    if len(modes) != k:
        raise ConfigError(f"expected {k} noise modes, got {len(modes)}")
    data_term = None
    for mode in modes:
        logits = net.forward_logits(x, mode)
        ce = ad.cross_entropy_with_logits(logits, labels)
        data_term = ce if data_term is None else ad.add(data_term, ce)
    loss = ad.mul(data_term, 1.0 / k)
    if kl_wt != 0.0:
        loss = ad.add(loss, ad.mul(net.kl_total(), kl_wt))
    return loss


def sgd_step(params: list[Parameter], state: OptimizerState,
             momentum: float, weight_decay: float) -> None:
    """v <- momentum*v + grad + wd*param; param <- param - lr*v.

    Variational parameters (decay=False) are exempt from weight decay; their
    prior is already enforced by the KL term. A non-finite gradient aborts
    the step.
    """
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in parameter {p.name!r}")
    for p in params:
        g = p.grad
        if weight_decay != 0.0 and p.decay:
            g = g + weight_decay * p.data
        v = state.velocity.get(p.name)
        v = g if v is None else momentum * v + g
        state.velocity[p.name] = v
        p.data = p.data - state.lr * v


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr_init * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every_epochs)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    mean_loss: float
    mean_kl: float
    train_acc: float

    def line(self) -> str:
        return (f"{self.epoch}\t{self.lr:.6g}\t{self.mean_loss:.6f}\t"
                f"{self.mean_kl:.6f}\t{self.train_acc:.4f}")


def train(net: Network, features: np.ndarray, labels: np.ndarray,
          cfg: TrainConfig) -> list[EpochStats]:
    """Minibatch SGD over (n, C, F, T) features with int speaker labels.

    Deterministic given cfg.seed: batch order comes from the "data"
    substream, sampling noise from "training-noise".
    """
    n = len(features)
    if n == 0:
        raise DataError("empty training set")
    labels = np.asarray(labels, dtype=np.int64)
    s = net.config.num_speakers
    if labels.min() < 0 or labels.max() >= s:
        raise DataError(f"label outside [0, {s})")
    data_rng = substream(cfg.seed, "data")
    noise_rng = substream(cfg.seed, "training-noise")
    has_bayes = any(isinstance(w, norm.VariationalWeights)
                    for w in net.norm_sites.values())
    params = net.params()
    state = OptimizerState()
    log: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        state.lr = lr_schedule(epoch, cfg)
        state.epoch = epoch
        order = data_rng.permutation(n)
        losses, kls, correct = [], [], 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = Tensor(features[idx])
            yb = labels[idx]
            kw = kl_weight(cfg.kl_scale_mode, n, len(idx)) if has_bayes else 0.0
            rng = noise_rng if has_bayes else None
            for p in params:
                p.grad = np.zeros_like(p.data)
            with Tape():
                modes = (
                    [norm.NoiseMode.sample(rng) for _ in range(cfg.mc_samples)]
                    if rng is not None
                    else [norm.NoiseMode.mean()] * cfg.mc_samples
                )
                data_term = None
                pred = None
                for mode in modes:
                    logits = net.forward_logits(xb, mode)
                    if pred is None:
                        pred = logits.data.argmax(axis=1)
                    ce = ad.cross_entropy_with_logits(logits, yb)
                    data_term = ce if data_term is None else ad.add(data_term, ce)
                loss = ad.mul(data_term, 1.0 / cfg.mc_samples)
                if kw != 0.0:
                    loss = ad.add(loss, ad.mul(net.kl_total(), kw))
                loss_val = loss.item()
                ad.backward(loss)
            try:
                sgd_step(params, state, cfg.momentum, cfg.weight_decay)
            except NumericError as exc:
                raise NumericError(
                    f"epoch {epoch}, batch at index {start}: {exc}"
                ) from exc
            losses.append(loss_val)
            kls.append(net.kl_total().item() if has_bayes else 0.0)
            correct += int((pred == yb).sum())
        log.append(
            EpochStats(
                epoch=epoch,
                lr=state.lr,
                mean_loss=float(np.mean(losses)),
                mean_kl=float(np.mean(kls)),
                train_acc=correct / n,
            )
        )
    return log
