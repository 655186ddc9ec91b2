"""Latent-space analysis: export encoder codes, project them to 2D with PCA,
and measure intra/inter cluster separation."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidInputError

# closed tag set: each encoder applied to the blend and to its own domain
TAGS = ("EY(x)", "EY(y)", "EZ(x)", "EZ(z)")


@dataclass
class LatentDump:
    vectors: np.ndarray  # (N, D)
    tags: list
    scene_ids: list

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise InvalidInputError("latent dump must be a 2D (N, D) array")
        if len(self.tags) != len(self.vectors) or len(self.scene_ids) != len(
            self.vectors
        ):
            raise InvalidInputError("tags/scene_ids must match the vector count")
        bad = set(self.tags) - set(TAGS)
        if bad:
            raise InvalidInputError(f"unknown latent tags: {sorted(bad)}")

    def write_csv(self, path):
        dim = self.vectors.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tag", "scene_id"] + [f"v{i}" for i in range(dim)])
            for tag, sid, vec in zip(self.tags, self.scene_ids, self.vectors):
                writer.writerow([tag, sid] + [f"{v:.8g}" for v in vec])


def export_latents(trainer, pools, n_samples: int = 200, seed: int = 0) -> LatentDump:
    """Encode n_samples images per tag with a trained model.

    Tags pair each encoder with the blend domain and with its own layer
    domain: EY(x), EY(y), EZ(x), EZ(z).  Deterministic per seed.
    """
    doms = trainer.domains[:2]
    needed = {"x": n_samples, doms[0]: n_samples, doms[1]: n_samples}
    for dom, count in needed.items():
        if dom not in pools or len(pools[dom]) < 1:
            raise InvalidInputError(
                f"pool {dom!r} missing or empty (need {count} draws)"
            )
    rng = np.random.default_rng(seed)
    from .train import _images_to_tensor

    def encode(dom_encoder, sample):
        img = sample.load()
        if trainer.cfg.log_domain:
            from .imaging import to_log_domain

            img = to_log_domain(img, trainer.cfg.log_epsilon)
        x = _images_to_tensor([img])
        with torch.no_grad():
            latent, _ = trainer.nets[f"enc_{dom_encoder}"](x)
        return latent[0].double().numpy().ravel()

    vectors, tags, scene_ids = [], [], []
    for _ in range(n_samples):
        xs = pools["x"].draw(rng)
        ys = pools[doms[0]].draw(rng)
        zs = pools[doms[1]].draw(rng)
        for tag, enc_dom, sample in (
            ("EY(x)", doms[0], xs),
            ("EY(y)", doms[0], ys),
            ("EZ(x)", doms[1], xs),
            ("EZ(z)", doms[1], zs),
        ):
            vectors.append(encode(enc_dom, sample))
            tags.append(tag)
            scene_ids.append(sample.scene_id)
    return LatentDump(np.stack(vectors), tags, scene_ids)


def project_2d(dump: LatentDump):
    """Project the dump onto its top-2 principal components.

    Components are unit length with the sign fixed so each component's
    largest-magnitude loading is positive.  Returns (coords (N,2),
    components (2,D)).
    """
    x = dump.vectors
    if len(x) < 3:
        raise InvalidInputError("need at least 3 rows for a 2D projection")
    centered = x - x.mean(axis=0, keepdims=True)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    if (svals > 1e-12 * max(1.0, svals[0])).sum() < 2:
        raise InvalidInputError("latent dump has rank < 2; cannot project to 2D")
    comps = vt[:2]
    for i in range(2):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    coords = centered @ comps.T
    return coords, comps


def _mean_pairwise_l1(a: np.ndarray, b: np.ndarray = None) -> float:
    """Mean of mean-abs distances over all (unordered within-set, or all
    cross-set) pairs."""
    if b is None:
        n = len(a)
        if n < 2:
            raise InvalidInputError("need >= 2 points for intra distances")
        dists = [
            np.mean(np.abs(a[i] - a[j])) for i in range(n) for j in range(i + 1, n)
        ]
    else:
        dists = [np.mean(np.abs(p - q)) for p in a for q in b]
    return float(np.mean(dists))


def cluster_separation(dump: LatentDump) -> dict:
    """Intra-cluster distances within {EY(x), EY(y)} and {EZ(x), EZ(z)}, the
    inter-cluster distance between them (mean-abs metric throughout), and the
    inter/intra ratio."""
    present = set(dump.tags)
    missing = set(TAGS) - present
    if missing:
        raise InvalidInputError(f"latent dump missing tags: {sorted(missing)}")
    tags = np.asarray(dump.tags)
    cluster_y = dump.vectors[(tags == "EY(x)") | (tags == "EY(y)")]
    cluster_z = dump.vectors[(tags == "EZ(x)") | (tags == "EZ(z)")]
    intra_y = _mean_pairwise_l1(cluster_y)
    intra_z = _mean_pairwise_l1(cluster_z)
    inter = _mean_pairwise_l1(cluster_y, cluster_z)
    mean_intra = 0.5 * (intra_y + intra_z)
    return {
        "intra_y": intra_y,
        "intra_z": intra_z,
        "inter": inter,
        "ratio": inter / mean_intra if mean_intra > 0 else float("inf"),
    }


def write_projection_csv(path, dump: LatentDump, coords: np.ndarray):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tag", "scene_id", "pc1", "pc2"])
        for tag, sid, (u, v) in zip(dump.tags, dump.scene_ids, coords):
            writer.writerow([tag, sid, f"{u:.8g}", f"{v:.8g}"])


def render_scatter(path, dump: LatentDump, coords: np.ndarray):
    """Save a 2D scatter of the projected codes, one color per tag."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 5))
    for tag, marker in zip(TAGS, ("o", "s", "^", "v")):
        sel = np.asarray(dump.tags) == tag
        ax.scatter(coords[sel, 0], coords[sel, 1], s=14, marker=marker,
                   label=tag, alpha=0.7)
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.legend()
    ax.set_title("latent codes, top-2 PCA projection")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
