"""Evaluation metrics: MSE (optionally x100), locally scale-invariant MSE,
PSNR and SSIM, plus whole-dataset evaluation of a trained checkpoint."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .errors import ConfigError, InvalidInputError
from .imaging import UNIT, Image, as_image, from_log_domain

PSNR_CAP_DB = 99.0
_ZERO_MSE = 1e-12


def _pair(pred, gt):
    pred = as_image(pred)
    gt = as_image(gt)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.range_tag != gt.range_tag:
        raise InvalidInputError(
            f"range_tag mismatch: {pred.range_tag} vs {gt.range_tag}"
        )
    return pred.data, gt.data


def mse(pred, gt, scale100: bool = False) -> float:
    """Mean squared error; x100 when flagged (the synthetic-benchmark
    convention)."""
    p, g = _pair(pred, gt)
    val = float(np.mean((p - g) ** 2))
    return val * 100.0 if scale100 else val


def lmse(pred, gt, window: int = 20, stride: int = 10) -> float:
    """Locally scale-invariant MSE over sliding windows.

    Within each window the prediction is rescaled by the least-squares-optimal
    scalar before squared error; the summed window errors are normalized by
    the summed window energy of the ground truth (the MIT-intrinsic
    convention).  Channels are rescaled independently.
    """
    p, g = _pair(pred, gt)
    h, w_, c = g.shape
    if window > h or window > w_:
        raise InvalidInputError(f"window {window} exceeds image dims {h}x{w_}")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    ssq = 0.0
    total = 0.0
    rows = list(range(0, h - window + 1, stride))
    cols = list(range(0, w_ - window + 1, stride))
    for ch in range(c):
        pc = p[:, :, ch]
        gc = g[:, :, ch]
        for i in rows:
            for j in cols:
                pw = pc[i : i + window, j : j + window]
                gw = gc[i : i + window, j : j + window]
                denom = np.sum(pw * pw)
                alpha = np.sum(gw * pw) / denom if denom > _ZERO_MSE else 0.0
                ssq += np.sum((gw - alpha * pw) ** 2)
                total += np.sum(gw * gw)
    if total <= _ZERO_MSE:
        return 0.0
    return float(ssq / total)


def psnr(pred, gt, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE), capped for (near-)zero error."""
    if peak <= 0:
        raise ConfigError(f"peak must be positive, got {peak}")
    p, g = _pair(pred, gt)
    err = float(np.mean((p - g) ** 2))
    if err < _ZERO_MSE:
        return PSNR_CAP_DB
    return float(10.0 * math.log10(peak * peak / err))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(ax**2) / (2.0 * sigma**2))
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def ssim(pred, gt, window: int = 11, sigma: float = 1.5, peak: float = 1.0) -> float:
    """Mean local SSIM with a Gaussian window, evaluated on valid (fully
    interior) windows only; channels averaged."""
    if peak <= 0:
        raise ConfigError(f"peak must be positive, got {peak}")
    p, g = _pair(pred, gt)
    h, w_, c = g.shape
    if h < window or w_ < window:
        raise InvalidInputError(f"image {h}x{w_} smaller than window {window}")
    kern = _gaussian_kernel(window, sigma)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    vals = []
    for ch in range(c):
        a = p[:, :, ch]
        b = g[:, :, ch]
        mu_a = convolve2d(a, kern, mode="valid")
        mu_b = convolve2d(b, kern, mode="valid")
        var_a = convolve2d(a * a, kern, mode="valid") - mu_a**2
        var_b = convolve2d(b * b, kern, mode="valid") - mu_b**2
        cov = convolve2d(a * b, kern, mode="valid") - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


METRIC_FNS = {
    "mse": lambda p, g: mse(p, g),
    "mse100": lambda p, g: mse(p, g, scale100=True),
    "lmse": lambda p, g: lmse(p, g),
    "psnr": lambda p, g: psnr(p, g),
    "ssim": lambda p, g: ssim(p, g),
}


@dataclass
class MetricsReport:
    """Aggregated metric values: per layer domain and averaged across
    layers, with the per-sample values retained."""

    metrics: list
    domains: list
    per_sample: list = field(default_factory=list)  # rows of dicts
    skipped: int = 0

    def averages(self) -> dict:
        out = {}
        for m in self.metrics:
            per_dom = {}
            for dom in self.domains:
                vals = [r[f"{m}_{dom}"] for r in self.per_sample]
                per_dom[dom] = float(np.mean(vals)) if vals else float("nan")
            per_dom["avg"] = float(np.mean(list(per_dom.values())))
            out[m] = per_dom
        return out

    @property
    def sample_count(self) -> int:
        return len(self.per_sample)

    def to_json(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "skipped": self.skipped,
            "metrics": self.averages(),
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    def write_csv(self, path):
        cols = ["scene_id"] + [
            f"{m}_{d}" for m in self.metrics for d in self.domains
        ]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for row in self.per_sample:
                writer.writerow({k: row[k] for k in cols})

    def console_table(self) -> str:
        avg = self.averages()
        lines = [f"{'metric':<8}" + "".join(f"{d:>12}" for d in self.domains)
                 + f"{'avg':>12}"]
        for m in self.metrics:
            row = f"{m:<8}"
            for d in self.domains + ["avg"]:
                row += f"{avg[m][d]:>12.4f}"
            lines.append(row)
        lines.append(f"samples: {self.sample_count}   skipped: {self.skipped}")
        return "\n".join(lines)


def evaluate_dataset(trainer, test_entries, root, metric_names=("mse",)) -> MetricsReport:
    """Score a trained separator on test scenes that carry ground-truth
    layers.

    ``test_entries`` are manifest entries with files for x and each layer
    domain.  Entries missing any ground-truth layer are skipped (counted).
    Log-domain predictions are mapped back to image space before scoring.
    """
    from .imaging import load_png

    if not test_entries:
        raise InvalidInputError("test pool is empty")
    for m in metric_names:
        if m not in METRIC_FNS:
            raise ConfigError(f"unknown metric {m!r}")
    domains = trainer.domains
    report = MetricsReport(metrics=list(metric_names), domains=list(domains))
    from pathlib import Path

    root = Path(root)
    for entry in test_entries:
        files = entry["files"]
        if any(d not in files for d in domains):
            warnings.warn(f"scene {entry['scene_id']} lacks ground-truth layers")
            report.skipped += 1
            continue
        x = load_png(root / files["x"])
        result = trainer.separate(x)
        row = {"scene_id": entry["scene_id"]}
        for dom in domains:
            gt = load_png(root / files[dom])
            pred = result["layers"][dom]
            if pred.range_tag != UNIT:
                pred = from_log_domain(pred)
            for m in metric_names:
                row[f"{m}_{dom}"] = METRIC_FNS[m](pred, gt)
        report.per_sample.append(row)
    return report
