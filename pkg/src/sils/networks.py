"""Network profiles: the two-stream encoder/decoder generators and the
multi-branch discriminators.

Two generator profiles exist: a small strided conv stack with mirror-link
skips for synthetic shape data, and a VGG-19-topology encoder with a dilated
fully-convolutional decoder for real images.  Streams never share parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CheckpointError, ConfigError, ShapeError

LEAKY_SLOPE = 0.2
CHECKPOINT_VERSION = 1

# logits are clamped so sigmoid stays strictly inside (0,1) in float32
_LOGIT_CLAMP = 14.0

OUT_UNIT = "unit"
OUT_LOG = "log"


@dataclass
class SyntheticProfile:
    kind: str = "synthetic"
    widths: tuple = (16, 32, 64, 128, 256)
    in_channels: int = 3
    out_channels: int = 3
    out_range: str = OUT_UNIT
    log_floor: float = math.log(1e-4)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.kind != "synthetic":
            raise ConfigError(f"bad kind {self.kind!r} for SyntheticProfile")
        if len(self.widths) < 2:
            raise ConfigError("synthetic profile needs at least 2 conv layers")

    @property
    def n_down(self) -> int:
        return len(self.widths)


@dataclass
class RealProfile:
    kind: str = "real"
    n_blocks: int = 5  # VGG-19 has 5 conv blocks
    width_scale: float = 1.0
    in_channels: int = 3
    out_channels: int = 3
    out_range: str = OUT_UNIT
    log_floor: float = math.log(1e-4)

    def __post_init__(self):
        if self.kind != "real":
            raise ConfigError(f"bad kind {self.kind!r} for RealProfile")
        if not 3 <= self.n_blocks <= 5:
            raise ConfigError("real profile supports 3..5 encoder blocks")

    @property
    def n_down(self) -> int:
        # pooling happens after every block except the last
        return self.n_blocks - 1


@dataclass
class DiscriminatorProfile:
    n_branches: int = 1
    widths: tuple = (32, 64, 128, 32)
    in_channels: int = 3

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.n_branches < 1:
            raise ConfigError("discriminator needs at least one branch")


def _out_activation(raw, out_range: str, log_floor: float):
    sig = torch.sigmoid(raw)
    if out_range == OUT_UNIT:
        return sig
    # log-domain images live in [log_floor, 0]
    return log_floor * (1.0 - sig)


def _check_divisible(size, factor, where):
    h, w = size
    if h % factor or w % factor:
        raise ShapeError(
            f"{where}: input {h}x{w} not divisible by the stride product {factor}"
        )


class SyntheticEncoder(nn.Module):
    """Strided 4x4 convs with batch norm and leaky ReLU; returns the latent
    plus per-scale skip features."""

    def __init__(self, profile: SyntheticProfile):
        super().__init__()
        self.profile = profile
        layers = []
        prev = profile.in_channels
        for w in profile.widths:
            layers.append(
                nn.Sequential(
                    nn.Conv2d(prev, w, 4, stride=2, padding=1),
                    nn.BatchNorm2d(w, track_running_stats=False),
                    nn.LeakyReLU(LEAKY_SLOPE),
                )
            )
            prev = w
        self.blocks = nn.ModuleList(layers)

    def forward(self, x):
        skips = []
        h = x
        for i, block in enumerate(self.blocks):
            if h.shape[-2] % 2 or h.shape[-1] % 2:
                raise ShapeError(
                    f"encoder conv{i + 1}: odd input {tuple(h.shape[-2:])} "
                    "cannot be strided by 2"
                )
            h = block(h)
            skips.append(h)
        return h, skips


class SyntheticDecoder(nn.Module):
    """Mirror of the encoder with skip concatenation at matching scales."""

    def __init__(self, profile: SyntheticProfile):
        super().__init__()
        self.profile = profile
        widths = profile.widths
        ups = []
        n = len(widths)
        for j in range(n - 1, 0, -1):
            in_ch = widths[j] * (1 if j == n - 1 else 2)
            ups.append(
                nn.Sequential(
                    nn.ConvTranspose2d(in_ch, widths[j - 1], 4, stride=2, padding=1),
                    nn.BatchNorm2d(widths[j - 1], track_running_stats=False),
                    nn.LeakyReLU(LEAKY_SLOPE),
                )
            )
        self.ups = nn.ModuleList(ups)
        self.head = nn.ConvTranspose2d(widths[0] * 2, profile.out_channels, 4, 2, 1)

    def forward(self, latent, skips):
        widths = self.profile.widths
        if len(skips) != len(widths):
            raise ShapeError(
                f"expected {len(widths)} skip features, got {len(skips)}"
            )
        h = latent
        n = len(widths)
        for i, up in enumerate(self.ups):
            j = n - 1 - i  # index of the skip at the *output* resolution
            h = up(h)
            skip = skips[j - 1]
            if skip.shape[-2:] != h.shape[-2:] or skip.shape[1] != widths[j - 1]:
                raise ShapeError(
                    f"skip {j - 1} has shape {tuple(skip.shape[1:])}, expected "
                    f"({widths[j - 1]}, {tuple(h.shape[-2:])})"
                )
            h = torch.cat([h, skip], dim=1)
        raw = self.head(h)
        return _out_activation(raw, self.profile.out_range, self.profile.log_floor)


# VGG-19 conv topology: filters per block and convs per block
_VGG_WIDTHS = (64, 128, 256, 512, 512)
_VGG_DEPTHS = (2, 2, 4, 4, 4)


class RealEncoder(nn.Module):
    """VGG-19 conv topology (trained from scratch) with skip taps at
    conv1_2, conv2_2 and conv3_2."""

    def __init__(self, profile: RealProfile):
        super().__init__()
        self.profile = profile
        s = profile.width_scale
        self.block_widths = [max(1, int(round(w * s))) for w in _VGG_WIDTHS]
        blocks = []
        prev = profile.in_channels
        for b in range(profile.n_blocks):
            convs = []
            for _ in range(_VGG_DEPTHS[b]):
                convs.append(nn.Conv2d(prev, self.block_widths[b], 3, padding=1))
                convs.append(nn.LeakyReLU(LEAKY_SLOPE))
                prev = self.block_widths[b]
            blocks.append(nn.Sequential(*convs))
        self.blocks = nn.ModuleList(blocks)

    @property
    def latent_channels(self):
        return self.block_widths[self.profile.n_blocks - 1]

    @property
    def skip_channels(self):
        return self.block_widths[:3]

    def forward(self, x):
        factor = 2**self.profile.n_down
        _check_divisible(x.shape[-2:], factor, "real encoder")
        skips = []
        h = x
        for b, block in enumerate(self.blocks):
            h = block(h)
            if b < 3:
                skips.append(h)  # conv{b+1}_2 tap (pre-pool)
            if b < self.profile.n_blocks - 1:
                h = F.max_pool2d(h, 2)
        return h, skips


class RealDecoder(nn.Module):
    """Upsampling conv blocks followed by a dilated fully-convolutional tail.

    The encoder skip taps are resized to the latent resolution and
    concatenated as input to the first block.
    """

    DILATIONS = (2, 4, 8, 16, 32, 1)

    def __init__(self, profile: RealProfile, latent_channels: int, skip_channels):
        super().__init__()
        self.profile = profile
        s = profile.width_scale
        n_up = profile.n_down
        block_out = [max(1, int(round(w * s))) for w in (256, 128, 64, 64)][-n_up:]
        tail_w = max(1, int(round(64 * s)))
        in_ch = latent_channels + sum(skip_channels)
        ups = []
        for out_ch in block_out:
            ups.append(
                nn.Sequential(
                    nn.Conv2d(in_ch, out_ch, 3, padding=1),
                    nn.InstanceNorm2d(out_ch),
                    nn.LeakyReLU(LEAKY_SLOPE),
                    nn.Upsample(scale_factor=2, mode="nearest"),
                )
            )
            in_ch = out_ch
        self.ups = nn.ModuleList(ups)
        tail = []
        for d in self.DILATIONS:
            tail.append(nn.Conv2d(in_ch, tail_w, 3, padding=d, dilation=d))
            tail.append(nn.InstanceNorm2d(tail_w))
            tail.append(nn.LeakyReLU(LEAKY_SLOPE))
            in_ch = tail_w
        self.tail = nn.Sequential(*tail)
        self.head = nn.Conv2d(tail_w, profile.out_channels, 1)
        self._expected_skips = list(skip_channels)

    def forward(self, latent, skips):
        if len(skips) != len(self._expected_skips):
            raise ShapeError(
                f"expected {len(self._expected_skips)} skips, got {len(skips)}"
            )
        for i, (skip, ch) in enumerate(zip(skips, self._expected_skips)):
            if skip.shape[1] != ch:
                raise ShapeError(
                    f"skip {i} has {skip.shape[1]} channels, expected {ch}"
                )
        resized = [
            F.interpolate(s, size=latent.shape[-2:], mode="bilinear",
                          align_corners=False)
            for s in skips
        ]
        h = torch.cat([latent] + resized, dim=1)
        for up in self.ups:
            h = up(h)
        h = self.tail(h)
        raw = self.head(h)
        return _out_activation(raw, self.profile.out_range, self.profile.log_floor)


class MultiBranchDiscriminator(nn.Module):
    """Branch i sees the input average-pooled i-1 times; branch logits are
    spatially mean-pooled, averaged across branches, then squashed."""

    def __init__(self, profile: DiscriminatorProfile):
        super().__init__()
        self.profile = profile
        branches = []
        for _ in range(profile.n_branches):
            layers = []
            prev = profile.in_channels
            for w in profile.widths:
                layers.append(nn.Conv2d(prev, w, 4, stride=2, padding=1))
                layers.append(nn.LeakyReLU(LEAKY_SLOPE))
                prev = w
            layers.append(nn.Conv2d(prev, 1, 1))
            branches.append(nn.Sequential(*layers))
        self.branches = nn.ModuleList(branches)

    def min_input_size(self) -> int:
        return 2 ** (len(self.profile.widths) + self.profile.n_branches - 1)

    def forward(self, img):
        h, w = img.shape[-2:]
        need = self.min_input_size()
        if min(h, w) < need:
            raise ShapeError(
                f"discriminator with {self.profile.n_branches} branches needs "
                f"inputs >= {need}px, got {h}x{w}"
            )
        logits = []
        inp = img
        for i, branch in enumerate(self.branches):
            if i > 0:
                inp = F.avg_pool2d(inp, 2)
            logits.append(branch(inp).mean(dim=(1, 2, 3)))
        logit = torch.stack(logits, dim=0).mean(dim=0)
        return torch.sigmoid(logit.clamp(-_LOGIT_CLAMP, _LOGIT_CLAMP))


def init_params(module: nn.Module, generator: torch.Generator) -> None:
    """Normal(0, 0.02) conv weights, zero biases, unit norm gains."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.copy_(
                    torch.randn(m.weight.shape, generator=generator) * 0.02
                )
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, (nn.BatchNorm2d, nn.InstanceNorm2d)):
            if m.weight is not None:
                with torch.no_grad():
                    m.weight.fill_(1.0)
                    m.bias.zero_()


def build_generator(profile):
    if isinstance(profile, SyntheticProfile):
        enc = SyntheticEncoder(profile)
        dec = SyntheticDecoder(profile)
    elif isinstance(profile, RealProfile):
        enc = RealEncoder(profile)
        dec = RealDecoder(profile, enc.latent_channels, enc.skip_channels)
    else:
        raise ConfigError(f"unknown generator profile {profile!r}")
    return enc, dec


def profile_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "synthetic":
        return SyntheticProfile(**d)
    if kind == "real":
        return RealProfile(**d)
    raise ConfigError(f"unknown profile kind {kind!r}")


def build_networks(gen_profile, disc_profile: DiscriminatorProfile,
                   n_layers: int, init_seed: int) -> dict:
    """Build n independent encoder/decoder/discriminator streams.

    Streams share no parameters; identical seeds give identical weights.
    """
    if n_layers < 2:
        raise ConfigError(f"n_layers must be >= 2, got {n_layers}")
    from .render import LAYER_DOMAINS

    if n_layers > len(LAYER_DOMAINS):
        raise ConfigError(f"at most {len(LAYER_DOMAINS)} layers supported")
    nets = {}
    for i, dom in enumerate(LAYER_DOMAINS[:n_layers]):
        gen = torch.Generator().manual_seed(int(init_seed) * 1000 + i)
        enc, dec = build_generator(gen_profile)
        disc = MultiBranchDiscriminator(disc_profile)
        init_params(enc, gen)
        init_params(dec, gen)
        init_params(disc, gen)
        nets[f"enc_{dom}"] = enc
        nets[f"dec_{dom}"] = dec
        nets[f"disc_{dom}"] = disc
    return nets


def profile_descriptor(gen_profile, disc_profile, n_layers) -> dict:
    return {
        "generator": asdict(gen_profile),
        "discriminator": asdict(disc_profile),
        "n_layers": int(n_layers),
    }


def save_checkpoint(path, networks: dict, descriptor: dict, extra: dict = None):
    state = {
        "version": CHECKPOINT_VERSION,
        "profile": descriptor,
        "networks": {k: v.state_dict() for k, v in networks.items()},
        "extra": extra or {},
    }
    torch.save(state, str(path))


def load_checkpoint(path, expected_descriptor: dict = None):
    """Load a checkpoint and rebuild its networks.

    Returns (networks, descriptor, extra).  A descriptor mismatch is an error.
    """
    try:
        state = torch.load(str(path), map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if state.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {state.get('version')} != {CHECKPOINT_VERSION}"
        )
    descriptor = state["profile"]
    if expected_descriptor is not None and descriptor != expected_descriptor:
        raise CheckpointError(
            "checkpoint profile does not match the requested profile:\n"
            f"  checkpoint: {descriptor}\n  requested:  {expected_descriptor}"
        )
    gen_profile = profile_from_dict(dict(descriptor["generator"]))
    disc_profile = DiscriminatorProfile(**descriptor["discriminator"])
    nets = build_networks(gen_profile, disc_profile, descriptor["n_layers"], 0)
    for name, net in nets.items():
        if name not in state["networks"]:
            raise CheckpointError(f"checkpoint is missing network {name!r}")
        net.load_state_dict(state["networks"][name])
    return nets, descriptor, state["extra"]


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
