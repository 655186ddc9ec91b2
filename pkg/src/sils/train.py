"""Alternating min-max training: generator phase, then discriminator phase
with gradient penalization, plus checkpointing, logging, and inference-time
separation."""

from __future__ import annotations

import copy
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .data import AugmentConfig, augment, sample_batch
from .errors import CheckpointError, ConfigError, NonFiniteError
from .imaging import (
    ADDITIVE_CLIPPED,
    ADDITIVE_UNCLIPPED,
    LOG,
    LOG_ADDITIVE,
    UNIT,
    CompositeOp,
    Image,
    LayerSet,
    to_log_domain,
)
from .networks import (
    DiscriminatorProfile,
    RealProfile,
    SyntheticProfile,
    build_networks,
    load_checkpoint,
    profile_descriptor,
    profile_from_dict,
    save_checkpoint,
)
from .render import LAYER_DOMAINS


@dataclass
class TrainConfig:
    profile: str = "synthetic"  # synthetic | real
    image_size: int = 128
    n_layers: int = 2
    learning_rate: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    batch_size: int = 1
    max_steps: int = 20000
    gp_coefficient: float = 10.0
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 1
    composite: str = ADDITIVE_UNCLIPPED  # loss-side blend; log-additive for intrinsic
    encoder_widths: tuple = (16, 32, 64, 128, 256)
    disc_widths: tuple = (32, 64, 128, 32)
    n_disc_branches: int = None  # default: 1 synthetic, 3 real
    real_width_scale: float = 1.0
    real_n_blocks: int = 5
    augment_enabled: bool = False
    log_epsilon: float = 1e-4

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.n_layers < 2:
            raise ConfigError("n_layers must be >= 2")
        if self.gp_coefficient < 0:
            raise ConfigError("gp_coefficient must be >= 0")
        if self.profile not in ("synthetic", "real"):
            raise ConfigError(f"unknown profile {self.profile!r}")
        if isinstance(self.weights, dict):
            self.weights = L.LossWeights(**self.weights)
        self.encoder_widths = tuple(self.encoder_widths)
        self.disc_widths = tuple(self.disc_widths)

    @property
    def domains(self):
        return LAYER_DOMAINS[: self.n_layers]

    @property
    def log_domain(self) -> bool:
        return self.composite == LOG_ADDITIVE

    def gen_profile(self):
        import math

        out_range = "log" if self.log_domain else "unit"
        log_floor = math.log(self.log_epsilon)
        if self.profile == "synthetic":
            return SyntheticProfile(
                widths=self.encoder_widths, out_range=out_range, log_floor=log_floor
            )
        return RealProfile(
            width_scale=self.real_width_scale,
            n_blocks=self.real_n_blocks,
            out_range=out_range,
            log_floor=log_floor,
        )

    def disc_profile(self):
        n = self.n_disc_branches
        if n is None:
            n = 1 if self.profile == "synthetic" else 3
        return DiscriminatorProfile(n_branches=n, widths=self.disc_widths)

    def to_dict(self):
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        return d


def gradient_penalty(disc, real, coefficient: float):
    """Zero-centered penalty on real samples: coefficient times the mean (over
    the batch) squared L2 norm of d score / d input."""
    if coefficient == 0:
        return torch.zeros((), dtype=real.dtype)
    real = real.detach().requires_grad_(True)
    score = disc(real)
    (grad,) = torch.autograd.grad(score.sum(), real, create_graph=True)
    return coefficient * grad.pow(2).flatten(1).sum(dim=1).mean()


def _images_to_tensor(images, dtype=torch.float32):
    arr = np.stack([im.data for im in images]).transpose(0, 3, 1, 2)
    return torch.as_tensor(np.ascontiguousarray(arr), dtype=dtype)


def _tensor_to_image(t, range_tag) -> Image:
    arr = t.detach().cpu().double().numpy().transpose(1, 2, 0)
    if range_tag == UNIT:
        arr = np.clip(arr, 0.0, 1.0)
    return Image(arr, range_tag)


class Trainer:
    """Owns the networks, the two optimizers, and the alternating update."""

    def __init__(self, cfg: TrainConfig, networks: dict = None):
        self.cfg = cfg
        self.weights = cfg.weights
        self.descriptor = profile_descriptor(
            cfg.gen_profile(), cfg.disc_profile(), cfg.n_layers
        )
        torch.manual_seed(cfg.seed)
        self.nets = networks or build_networks(
            cfg.gen_profile(), cfg.disc_profile(), cfg.n_layers, cfg.seed
        )
        self.domains = list(cfg.domains)
        gen_params = []
        disc_params = []
        for dom in self.domains:
            gen_params += list(self.nets[f"enc_{dom}"].parameters())
            gen_params += list(self.nets[f"dec_{dom}"].parameters())
            disc_params += list(self.nets[f"disc_{dom}"].parameters())
        betas = (cfg.beta1, cfg.beta2)
        self.opt_g = torch.optim.Adam(gen_params, lr=cfg.learning_rate, betas=betas)
        self.opt_d = torch.optim.Adam(disc_params, lr=cfg.learning_rate, betas=betas)
        self.step = 0

    # ------------------------------------------------------------------ util

    def _check_finite(self, value, name):
        if not torch.isfinite(value).all():
            raise NonFiniteError(f"non-finite value in {name} at step {self.step}")

    def _forward_separation(self, x):
        preds, codes = {}, {}
        for dom in self.domains:
            latent, skips = self.nets[f"enc_{dom}"](x)
            preds[dom] = self.nets[f"dec_{dom}"](latent, skips)
            codes[dom] = latent
        return preds, codes

    def batch_tensors(self, batches):
        """Convert sampled Batch(es) into training tensors, handling the
        log-domain conversion for intrinsic-style runs."""
        if not isinstance(batches, (list, tuple)):
            batches = [batches]

        def prep(img):
            if self.cfg.log_domain:
                img = to_log_domain(img, self.cfg.log_epsilon)
            return img

        x = _images_to_tensor([prep(b.x) for b in batches])
        reals = {
            dom: _images_to_tensor([prep(b.layers[dom]) for b in batches])
            for dom in self.domains
        }
        return x, reals

    # ---------------------------------------------------------------- phases

    def generator_phase(self, x, reals):
        """Update encoders/decoders with discriminators frozen."""
        w = self.weights
        preds, codes_x = self._forward_separation(x)
        codes_same = []
        for dom in self.domains:
            codes_same.append(self.nets[f"enc_{dom}"](reals[dom])[0])
        ss = L.loss_ss_n([codes_x[d] for d in self.domains], codes_same, w)
        gan = {}
        for dom in self.domains:
            score = self.nets[f"disc_{dom}"](preds[dom])
            gan[dom] = L.loss_gan_generator(score, w.lambda0)
        layer_preds = [preds[d] for d in self.domains]
        recon = sum(layer_preds)
        re_preds = []
        for dom in self.domains:
            latent, skips = self.nets[f"enc_{dom}"](recon)
            re_preds.append(self.nets[f"dec_{dom}"](latent, skips))
        cc_x, cc_layers = L.loss_cc(x, layer_preds, re_preds, w)
        total = L.total_loss(ss, list(gan.values()), [cc_x] + cc_layers, w.w1, w.w2)
        for name, val in [("ss", ss), ("cc_x", cc_x), ("total", total)] + [
            (f"gan_{d}", g) for d, g in gan.items()
        ] + [(f"cc_{d}", c) for d, c in zip(self.domains, cc_layers)]:
            self._check_finite(val, name)
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        for p in self.opt_g.param_groups[0]["params"]:
            if p.grad is not None:
                self._check_finite(p.grad, "generator gradient")
        self.opt_g.step()
        parts = {
            "ss": float(ss.detach()),
            "cc_x": float(cc_x.detach()),
            "total": float(total.detach()),
        }
        for d, g in gan.items():
            parts[f"gan_{d}"] = float(g.detach())
        for d, c in zip(self.domains, cc_layers):
            parts[f"cc_{d}"] = float(c.detach())
        return parts

    def discriminator_phase(self, x, reals):
        """Update discriminators (with gradient penalty) with generators
        frozen."""
        w = self.weights
        with torch.no_grad():
            preds, _ = self._forward_separation(x)
        total = 0.0
        scores = {}
        for dom in self.domains:
            disc = self.nets[f"disc_{dom}"]
            d_real = disc(reals[dom])
            d_fake = disc(preds[dom].detach())
            loss = L.loss_gan_discriminator(d_real, d_fake, w.lambda0)
            gp = gradient_penalty(disc, reals[dom], self.cfg.gp_coefficient)
            self._check_finite(loss, f"disc loss ({dom})")
            self._check_finite(gp, f"gradient penalty ({dom})")
            total = total + loss + gp
            scores[f"real_{dom}"] = float(d_real.detach().mean())
            scores[f"fake_{dom}"] = float(d_fake.detach().mean())
        self.opt_d.zero_grad(set_to_none=True)
        if torch.is_tensor(total):
            total.backward()
            for p in self.opt_d.param_groups[0]["params"]:
                if p.grad is not None:
                    self._check_finite(p.grad, "discriminator gradient")
        self.opt_d.step()
        return scores

    def train_step(self, batch) -> L.LossReport:
        x, reals = self.batch_tensors(batch)
        parts = self.generator_phase(x, reals)
        scores = self.discriminator_phase(x, reals)
        self.step += 1
        return self._report(parts, scores)

    def _report(self, parts, scores) -> L.LossReport:
        # for n > 2 layers the z columns aggregate all streams past the first
        gan_z = sum(v for k, v in parts.items()
                    if k.startswith("gan_") and k != "gan_y")
        cc_z = sum(v for k, v in parts.items()
                   if k.startswith("cc_") and k not in ("cc_x", "cc_y"))
        report = L.LossReport(
            step=self.step,
            ss=parts["ss"],
            gan_y=parts["gan_y"],
            gan_z=gan_z,
            cc_x=parts["cc_x"],
            cc_y=parts["cc_y"],
            cc_z=cc_z,
            total=parts["total"],
            d_scores=scores,
        )
        report.check_consistency(self.weights)
        return report

    # ------------------------------------------------------------- train loop

    def _step_batch(self, pools):
        batches = []
        for k in range(self.cfg.batch_size):
            seed = np.random.SeedSequence((self.cfg.seed, self.step, k))
            batch = sample_batch(pools, seed)
            if self.cfg.augment_enabled:
                aug_cfg = AugmentConfig(target_size=self.cfg.image_size)
                child = np.random.SeedSequence((self.cfg.seed, self.step, k, 1))
                rngs = child.spawn(1 + len(batch.layers))
                batch.x = augment(batch.x, rngs[0], aug_cfg)
                for i, dom in enumerate(sorted(batch.layers)):
                    batch.layers[dom] = augment(
                        batch.layers[dom], rngs[1 + i], aug_cfg
                    )
            batches.append(batch)
        return batches

    def train(self, pools, out_dir, resume_from=None):
        """Run max_steps of train_step, logging one CSV row per step and
        checkpointing periodically.  Returns the final checkpoint path."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.csv"
        if resume_from is not None:
            self.load(resume_from)
            log_mode = "a"
        else:
            log_mode = "w"
        final_path = out_dir / "checkpoint_final.pt"
        with open(log_path, log_mode) as log:
            if log_mode == "w":
                log.write(L.LossReport.CSV_HEADER + "\n")
            while self.step < self.cfg.max_steps:
                batch = self._step_batch(pools)
                report = self.train_step(batch)
                if self.step % self.cfg.log_every == 0:
                    log.write(report.csv_row() + "\n")
                if self.cfg.checkpoint_every and (
                    self.step % self.cfg.checkpoint_every == 0
                ):
                    self.save(out_dir / f"checkpoint_{self.step:08d}.pt")
        self.save(final_path)
        return final_path

    # ------------------------------------------------------------ persistence

    def save(self, path):
        extra = {
            "step": self.step,
            "config": self.cfg.to_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
        }
        save_checkpoint(path, self.nets, self.descriptor, extra)

    def load(self, path):
        nets, descriptor, extra = load_checkpoint(path, self.descriptor)
        for name, net in nets.items():
            self.nets[name].load_state_dict(net.state_dict())
        self.opt_g.load_state_dict(extra["opt_g"])
        self.opt_d.load_state_dict(extra["opt_d"])
        self.step = extra["step"]

    @classmethod
    def from_checkpoint(cls, path) -> "Trainer":
        _, descriptor, extra = load_checkpoint(path)
        if "config" not in extra:
            raise CheckpointError(f"checkpoint {path} carries no train config")
        cfg = TrainConfig(**_coerce_cfg(extra["config"]))
        trainer = cls(cfg)
        trainer.load(path)
        return trainer

    # -------------------------------------------------------------- inference

    def separate(self, img: Image) -> dict:
        """Separate one image into its layers plus the recomposition.

        Returns {"layers": {domain: Image}, "recon": Image}.
        """
        if self.cfg.log_domain and img.range_tag == UNIT:
            img = to_log_domain(img, self.cfg.log_epsilon)
        range_tag = LOG if self.cfg.log_domain else UNIT
        x = _images_to_tensor([img])
        with torch.no_grad():
            preds, _ = self._forward_separation(x)
        layers = {d: _tensor_to_image(preds[d][0], range_tag) for d in self.domains}
        op = CompositeOp(LOG_ADDITIVE if self.cfg.log_domain else ADDITIVE_CLIPPED)
        from .imaging import compose

        recon = compose(LayerSet(list(layers.values()), op))
        return {"layers": layers, "recon": recon}


def _coerce_cfg(d: dict) -> dict:
    d = copy.deepcopy(d)
    for key in ("encoder_widths", "disc_widths"):
        if key in d and d[key] is not None:
            d[key] = tuple(d[key])
    return d


def separate(checkpoint_path, img: Image) -> dict:
    """Convenience wrapper: load a checkpoint and separate one image."""
    trainer = Trainer.from_checkpoint(checkpoint_path)
    return trainer.separate(img)
