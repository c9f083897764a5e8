"""Normal-Inverse-Gamma evidential regression: constraints, losses, variance, gradients.

All functions broadcast elementwise over arrays of lookaheads / frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, expit, gammaln

EPS = 1e-6
ALPHA_LOSS = 1000.0
SIGMA_SCALE = 1.0 / 15.0


@dataclass
class EvidentialParams:
    gamma: np.ndarray
    nu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.gamma, self.nu, self.alpha, self.beta = np.broadcast_arrays(
            *(np.asarray(v, dtype=np.float64) for v in (self.gamma, self.nu, self.alpha, self.beta)))

    def validate(self) -> None:
        for name in ("gamma", "nu", "alpha", "beta"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite {name}")
        if np.any(self.nu <= 0) or np.any(self.beta <= 0) or np.any(self.alpha <= 1):
            raise ValueError("require nu > 0, alpha > 1, beta > 0")


@dataclass
class LossWeights:
    alpha_loss: float = ALPHA_LOSS
    sigma_scale: float = SIGMA_SCALE

    def __post_init__(self):
        if self.alpha_loss <= 0 or self.sigma_scale <= 0:
            raise ValueError("loss weights must be positive")


def softplus(x):
    return np.logaddexp(0.0, x)


def constrain(raw) -> EvidentialParams:
    """Map raw (..., 4) pre-activations to valid NIG parameters."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != 4:
        raise ValueError(f"raw evidential output must end in 4 channels, got {raw.shape}")
    return EvidentialParams(
        gamma=raw[..., 0],
        nu=softplus(raw[..., 1]) + EPS,
        alpha=softplus(raw[..., 2]) + 1.0 + EPS,
        beta=softplus(raw[..., 3]) + EPS,
    )


def nll_loss(e: EvidentialParams, y) -> np.ndarray:
    """Negative log marginal likelihood (Student-t) of y under the NIG prior."""
    r = np.asarray(y, dtype=np.float64) - e.gamma
    omega = 2.0 * e.beta * (1.0 + e.nu)
    return (0.5 * np.log(np.pi / e.nu) - e.alpha * np.log(omega)
            + (e.alpha + 0.5) * np.log(r * r * e.nu + omega)
            + gammaln(e.alpha) - gammaln(e.alpha + 0.5))


def reg_loss(e: EvidentialParams, y) -> np.ndarray:
    """Evidence regularizer |y - gamma| (2 alpha + nu)."""
    return np.abs(np.asarray(y, dtype=np.float64) - e.gamma) * (2.0 * e.alpha + e.nu)


def scale_factor(y, sigma_scale: float = SIGMA_SCALE) -> np.ndarray:
    if sigma_scale <= 0:
        raise ValueError("sigma_scale must be positive")
    y = np.asarray(y, dtype=np.float64)
    return 1.0 + np.exp(-y * y / (2.0 * sigma_scale ** 2))


def epistemic_variance(e: EvidentialParams) -> np.ndarray:
    if np.any(e.alpha <= 1):
        raise ValueError("epistemic variance undefined for alpha <= 1")
    return e.beta / (e.nu * (e.alpha - 1.0))


def loss_terms(x, e: EvidentialParams | None, y, w: LossWeights = LossWeights()) -> dict:
    """Scale-weighted sums of the three loss terms."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"prediction shape {x.shape} != label shape {y.shape}")
    s = scale_factor(y, w.sigma_scale)
    terms = {"mae": float(np.sum(s * w.alpha_loss * np.abs(x - y))), "nll": 0.0, "r": 0.0}
    if e is not None:
        if e.gamma.shape != y.shape:
            raise ValueError(f"evidential shape {e.gamma.shape} != label shape {y.shape}")
        terms["nll"] = float(np.sum(s * nll_loss(e, y)))
        terms["r"] = float(np.sum(s * reg_loss(e, y)))
    return terms


def total_loss(x, e: EvidentialParams | None, y, w: LossWeights = LossWeights()) -> float:
    """Sum over lookaheads of scale(y) * (alpha_loss |x - y| + NLL + R); e=None drops NLL and R."""
    t = loss_terms(x, e, y, w)
    return t["mae"] + t["nll"] + t["r"]


def _chain_raw(e_raw, d_gamma, d_nu, d_alpha, d_beta):
    """Push NIG-parameter partials back through ``constrain``."""
    de = np.empty_like(e_raw)
    de[..., 0] = d_gamma
    de[..., 1] = d_nu * expit(e_raw[..., 1])
    de[..., 2] = d_alpha * expit(e_raw[..., 2])
    de[..., 3] = d_beta * expit(e_raw[..., 3])
    return de


def nll_gradient(e_raw, y) -> np.ndarray:
    """d NLL / d raw, elementwise (no scale factor)."""
    e_raw = np.asarray(e_raw, dtype=np.float64)
    e = constrain(e_raw)
    g, nu, a, b = e.gamma, e.nu, e.alpha, e.beta
    r = np.asarray(y, dtype=np.float64) - g
    omega = 2.0 * b * (1.0 + nu)
    big = r * r * nu + omega
    return _chain_raw(
        e_raw,
        (a + 0.5) * (-2.0 * r * nu) / big,
        -0.5 / nu - 2.0 * a * b / omega + (a + 0.5) * (r * r + 2.0 * b) / big,
        -np.log(omega) + np.log(big) + digamma(a) - digamma(a + 0.5),
        -a / b + (a + 0.5) * 2.0 * (1.0 + nu) / big,
    )


def reg_gradient(e_raw, y) -> np.ndarray:
    """d R / d raw, elementwise (no scale factor); the subgradient at a zero residual is 0."""
    e_raw = np.asarray(e_raw, dtype=np.float64)
    e = constrain(e_raw)
    r = np.asarray(y, dtype=np.float64) - e.gamma
    zero = np.zeros_like(r)
    return _chain_raw(e_raw, -np.sign(r) * (2.0 * e.alpha + e.nu), np.abs(r), 2.0 * np.abs(r), zero)


def loss_gradients(x, e_raw, y, w: LossWeights = LossWeights()):
    """Total loss and its gradients w.r.t. x and the raw evidential outputs.

    Returns ``(loss, dx, de_raw)``; ``de_raw`` is None when ``e_raw`` is None.
    The MAE and R subgradients at a zero residual are taken as 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    s = scale_factor(y, w.sigma_scale)
    dx = s * w.alpha_loss * np.sign(x - y)
    if e_raw is None:
        return total_loss(x, None, y, w), dx, None
    e_raw = np.asarray(e_raw, dtype=np.float64)
    loss = total_loss(x, constrain(e_raw), y, w)
    de = s[..., None] * (nll_gradient(e_raw, y) + reg_gradient(e_raw, y))
    return loss, dx, de
