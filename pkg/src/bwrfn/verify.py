"""Finite-difference gradient verification suite.

Checks every normalization layer, the KL term, and a tiny full network
against central differences. Stochastic layers run in fixed-noise mode so
every check is deterministic. Used by the ``gradcheck`` CLI subcommand and
the acceptance tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import norm
from .autodiff import GradCheckReport, Parameter, Tensor, gradcheck
from .network import NetworkConfig, build
from .rng import substream

LAYER_TOL = 1e-4
KL_TOL = 1e-6


@dataclass
class SuiteResult:
    name: str
    tol: float
    report: GradCheckReport

    @property
    def ok(self) -> bool:
        return self.report.passed(self.tol)

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        worst = max(self.report.checks, key=lambda c: c.max_rel_err)
        return (f"{status}\t{self.name}\ttol={self.tol:g}\t"
                f"max_rel_err={self.report.max_error():.3e}\t"
                f"worst_param={worst.name}{worst.worst_index}\t"
                f"analytic={worst.analytic:.9g}\tnumeric={worst.numeric:.9g}")


def _projected_sum(y: Tensor, proj: np.ndarray) -> Tensor:
    """Fixed random projection to a scalar so gradients are non-degenerate."""
    return ad.reduce_sum(ad.mul(y, proj))


def run_suite(seed: int = 0, tol_layers: float = LAYER_TOL,
              tol_kl: float = KL_TOL) -> list[SuiteResult]:
    rng = substream(seed, "gradcheck")
    shape = (2, 2, 4, 5)
    f = shape[2]
    proj = rng.normal(size=shape)
    eps = 1e-5
    results: list[SuiteResult] = []

    def layer_check(name, make_loss, params, tol=tol_layers):
        results.append(SuiteResult(name, tol, gradcheck(make_loss, params)))

    x = Parameter(rng.normal(size=shape), "x")
    layer_check("ifn", lambda: _projected_sum(norm.ifn(x, eps), proj), [x])
    layer_check("ln", lambda: _projected_sum(norm.ln(x, eps), proj), [x])
    for lam in (0.0, 0.5, 1.0):
        cfg = norm.RelaxationConfig(lam=lam, epsilon=eps)
        layer_check(
            f"rfn(lambda={lam})",
            lambda cfg=cfg: _projected_sum(norm.rfn(x, cfg), proj),
            [x],
        )

    cfg = norm.RelaxationConfig(lam=0.5, epsilon=eps)
    dw = norm.DeterministicWeights(
        w1=Parameter(rng.normal(size=f), "w1"),
        w2=Parameter(rng.normal(size=f), "w2"),
    )
    layer_check(
        "wrfn",
        lambda: _projected_sum(norm.wrfn(x, cfg, dw), proj),
        [x, dw.w1, dw.w2],
    )

    vw = norm.VariationalWeights(
        mu=Parameter(rng.normal(0.0, 0.3, size=2 * f), "mu", decay=False),
        log_sigma=Parameter(rng.normal(-2.0, 0.2, size=2 * f), "log_sigma", decay=False),
    )
    noise = rng.standard_normal(2 * f)
    mode = norm.NoiseMode.fixed(noise)
    layer_check(
        "bwrfn(fixed-noise)",
        lambda: _projected_sum(norm.bwrfn(x, cfg, vw, mode), proj),
        [x, vw.mu, vw.log_sigma],
    )

    layer_check("kl", lambda: norm.kl_to_standard_normal(vw),
                [vw.mu, vw.log_sigma], tol=tol_kl)

    results.append(SuiteResult("network(fixed-noise)", tol_layers, network_gradcheck(seed)))
    return results


def network_gradcheck(seed: int = 0) -> GradCheckReport:
    """Full forward + ELBO loss through a tiny bwrfn network, fixed noise."""
    rng = substream(seed, "gradcheck-net")
    config = NetworkConfig(
        num_speakers=3,
        in_freq=8,
        norm_variant="bwrfn",
        insertion_points=("pre-conv", "L2"),
        channels=(4, 4, 4, 4),
        embedding_dim=6,
    )
    net = build(config, rng)
    x = Tensor(rng.normal(size=(2, 1, 8, 10)))
    labels = np.array([0, 2])
    noise = {
        site: rng.standard_normal(2 * net.site_freqs[site])
        for site in net.norm_sites
    }
    mode = norm.NoiseMode.fixed(noise)

    def loss():
        logits = net.forward_logits(x, mode)
        ce = ad.cross_entropy_with_logits(logits, labels)
        return ad.add(ce, ad.mul(net.kl_total(), 0.1))

    return gradcheck(loss, net.params())
