"""Loss terms: latent distances, self-supervision, GAN, cycle consistency,
and the weighted total."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from itertools import combinations

import torch

from .errors import ConfigError, InvalidInputError

# clamp keeps log() finite even if a score saturates numerically
_SCORE_EPS = 1e-12


@dataclass
class LossWeights:
    """Objective weights.  lambda4..6 carry the tuned cycle-consistency
    weighting (the w2=10 optimum folded in), so w1 = w2 = 1 by default."""

    lambda0: float = 5.0
    lambda1: float = 0.5
    lambda2: float = 0.5
    lambda3: float = 1.0
    lambda4: float = 10.0
    lambda5: float = 10.0
    lambda6: float = 10.0
    alpha: float = 1.4
    w1: float = 1.0
    w2: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        for name in ("lambda0", "lambda1", "lambda2", "lambda3", "lambda4",
                     "lambda5", "lambda6", "w1", "w2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class LossReport:
    """Per-step loss components.  total must equal the weighted combination."""

    step: int
    ss: float
    gan_y: float
    gan_z: float
    cc_x: float
    cc_y: float
    cc_z: float
    total: float
    d_scores: dict

    CSV_HEADER = "step,ss,gan_y,gan_z,cc_x,cc_y,cc_z,total,d_scores"

    def check_consistency(self, w: LossWeights, tol: float = 1e-6) -> None:
        expect = (
            w.w1 * self.ss
            + self.gan_y
            + self.gan_z
            + w.w2 * (self.cc_x + self.cc_y + self.cc_z)
        )
        if abs(expect - self.total) > tol * max(1.0, abs(self.total)):
            raise InvalidInputError(
                f"loss report inconsistent: total={self.total}, expected {expect}"
            )

    def csv_row(self) -> str:
        scores = ";".join(f"{k}={v:.6f}" for k, v in sorted(self.d_scores.items()))
        return (
            f"{self.step},{self.ss:.8g},{self.gan_y:.8g},{self.gan_z:.8g},"
            f"{self.cc_x:.8g},{self.cc_y:.8g},{self.cc_z:.8g},{self.total:.8g},"
            f"{scores}"
        )


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def d_phi(a, b):
    """Mean absolute difference between two latent codes."""
    _check_same_shape(a, b)
    return (a - b).abs().mean()


def d_psi(a, b, alpha: float):
    """Squashed inter-latent distance: sigmoid of the mean-abs difference,
    shifted so the midpoint sits at alpha * e^alpha."""
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    _check_same_shape(a, b)
    dist = (a - b).abs().mean()
    g = -(dist - alpha * math.exp(alpha)) / (alpha * alpha)
    return 1.0 / (1.0 + torch.exp(g))


def loss_ss(fy_x, fy_y, fz_x, fz_z, w: LossWeights):
    """Two-stream self-supervision: pull same-domain codes together, push the
    two streams' codes on x apart."""
    return loss_ss_n([fy_x, fz_x], [fy_y, fz_z], w)


def loss_ss_n(codes_x, codes_same, w: LossWeights):
    """N-stream self-supervision.

    codes_x[i] is stream i's encoding of the blended input; codes_same[i] is
    stream i's encoding of a real layer sample from its own domain.  The
    inter-domain term averages over all stream pairs so lambda3 is
    n-independent.
    """
    if len(codes_x) != len(codes_same) or len(codes_x) < 2:
        raise InvalidInputError("need matching code lists for >= 2 streams")
    intra_w = [w.lambda1] + [w.lambda2] * (len(codes_x) - 1)
    total = 0.0
    for lam, fx, fs in zip(intra_w, codes_x, codes_same):
        total = total + lam * d_phi(fs, fx)
    pairs = list(combinations(range(len(codes_x)), 2))
    inter = 0.0
    for i, j in pairs:
        inter = inter + (1.0 - d_psi(codes_x[i], codes_x[j], w.alpha))
    total = total + w.lambda3 * (inter / len(pairs))
    return total


def _check_score(s):
    vals = s if torch.is_tensor(s) else torch.as_tensor(s)
    if ((vals <= 0) | (vals >= 1)).any():
        raise InvalidInputError("discriminator scores must lie strictly in (0,1)")
    return vals


def _safe_log(t):
    return torch.log(torch.clamp(t, min=_SCORE_EPS))


def loss_gan_discriminator(d_real, d_fake, lambda0: float):
    """-lambda0 * [log D(real) + log(1 - D(fake))], averaged over the batch."""
    d_real = _check_score(d_real)
    d_fake = _check_score(d_fake)
    return -lambda0 * (_safe_log(d_real).mean() + _safe_log(1.0 - d_fake).mean())


def loss_gan_generator(d_fake, lambda0: float):
    """Non-saturating generator loss: -lambda0 * log D(fake)."""
    d_fake = _check_score(d_fake)
    return -lambda0 * _safe_log(d_fake).mean()


def loss_cc(x, layers_pred, layers_re, w: LossWeights):
    """Cycle consistency (mean-abs reductions).

    cc_x:   the recomposed layers must reproduce x;
    cc_i:   re-separating the recomposition must reproduce each layer.
    Returns (cc_x, [cc per layer]).
    """
    if len(layers_pred) != len(layers_re) or len(layers_pred) < 2:
        raise InvalidInputError("need >= 2 predicted and re-separated layers")
    recon = layers_pred[0]
    for p in layers_pred[1:]:
        recon = recon + p
    _check_same_shape(recon, x)
    cc_x = w.lambda4 * (recon - x).abs().mean()
    layer_w = [w.lambda5] + [w.lambda6] * (len(layers_pred) - 1)
    cc_layers = []
    for lam, p, r in zip(layer_w, layers_pred, layers_re):
        _check_same_shape(p, r)
        cc_layers.append(lam * (r - p).abs().mean())
    return cc_x, cc_layers


def total_loss(ss, gan_terms, cc_terms, w1: float, w2: float):
    """w1 * L_SS + L_GAN + w2 * L_CC; reduces to the plain sum at w1=w2=1."""
    gan = sum(gan_terms)
    cc = sum(cc_terms)
    return w1 * ss + gan + w2 * cc
