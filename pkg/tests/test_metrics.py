import math

import numpy as np
import pytest

from sils.data import manifest_pools
from sils.errors import ConfigError, InvalidInputError
from sils.imaging import Image
from sils.metrics import (
    MetricsReport,
    evaluate_dataset,
    lmse,
    mse,
    psnr,
    ssim,
)
from sils.render import RenderConfig, render_dataset
from sils.train import TrainConfig, Trainer


def rand_pair(seed, size=16, channels=3):
    rng = np.random.default_rng(seed)
    return (Image(rng.uniform(0, 1, (size, size, channels))),
            Image(rng.uniform(0, 1, (size, size, channels))))


# ---------------------------------------------------------------- oracles

def mse_oracle(p, g):
    total = 0.0
    n = 0
    for v1, v2 in zip(p.data.ravel(), g.data.ravel()):
        total += (v1 - v2) ** 2
        n += 1
    return total / n


def lmse_oracle(p, g, window, stride):
    """Plain-loop windowed least-squares reference."""
    ssq = total = 0.0
    h, w, c = g.shape
    for ch in range(c):
        for i in range(0, h - window + 1, stride):
            for j in range(0, w - window + 1, stride):
                pw = p.data[i:i + window, j:j + window, ch].ravel()
                gw = g.data[i:i + window, j:j + window, ch].ravel()
                denom = float(pw @ pw)
                alpha = float(gw @ pw) / denom if denom > 1e-12 else 0.0
                ssq += float(((gw - alpha * pw) ** 2).sum())
                total += float((gw**2).sum())
    return ssq / total if total > 1e-12 else 0.0


def ssim_oracle(p, g, window=11, sigma=1.5, peak=1.0):
    """Per-pixel explicit Gaussian-window local statistics."""
    ax = np.arange(window) - (window - 1) / 2.0
    k1 = np.exp(-(ax**2) / (2 * sigma**2))
    kern = np.outer(k1, k1)
    kern /= kern.sum()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    h, w, c = g.shape
    vals = []
    for ch in range(c):
        a = p.data[:, :, ch]
        b = g.data[:, :, ch]
        local = []
        for i in range(h - window + 1):
            for j in range(w - window + 1):
                wa = a[i:i + window, j:j + window]
                wb = b[i:i + window, j:j + window]
                mu_a = (kern * wa).sum()
                mu_b = (kern * wb).sum()
                va = (kern * wa * wa).sum() - mu_a**2
                vb = (kern * wb * wb).sum() - mu_b**2
                cov = (kern * wa * wb).sum() - mu_a * mu_b
                local.append(
                    ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                    / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2))
                )
        vals.append(np.mean(local))
    return float(np.mean(vals))


# ------------------------------------------------------------------ tests

class TestMse:
    def test_identity(self):
        p, _ = rand_pair(0)
        assert mse(p, p) == 0.0

    def test_constant_offset(self):
        a = Image(np.full((8, 8, 3), 0.4))
        b = Image(np.full((8, 8, 3), 0.5))
        assert mse(a, b) == pytest.approx(0.01, rel=1e-12)
        assert mse(a, b, scale100=True) == pytest.approx(1.0, rel=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(InvalidInputError):
            mse(Image(np.zeros((4, 4, 3))), Image(np.zeros((5, 5, 3))))

    def test_matches_oracle(self):
        for seed in range(10):
            p, g = rand_pair(seed)
            assert mse(p, g) == pytest.approx(mse_oracle(p, g), abs=1e-12)


class TestLmse:
    def test_identity(self):
        p, _ = rand_pair(1)
        assert lmse(p, p, window=8, stride=4) == pytest.approx(0.0, abs=1e-12)

    def test_global_scale_absorbed(self):
        _, g = rand_pair(2)
        half = Image(0.5 * g.data)
        assert lmse(half, g, window=8, stride=4) == pytest.approx(0.0, abs=1e-12)
        for k in (0.1, 3.0):
            scaled = Image(np.clip(k * g.data, 0, None), "linear")
            glin = Image(g.data.copy(), "linear")
            assert lmse(scaled, glin, window=8, stride=4) == pytest.approx(
                0.0, abs=1e-10
            )

    def test_zero_gt_window_contributes_zero(self):
        g = Image(np.zeros((8, 8, 1)))
        p = Image(np.random.default_rng(0).uniform(0, 1, (8, 8, 1)))
        assert lmse(p, g, window=4, stride=4) == 0.0

    def test_matches_oracle_random_pairs(self):
        for seed in range(8):
            p, g = rand_pair(seed, size=8, channels=1)
            got = lmse(p, g, window=4, stride=2)
            want = lmse_oracle(p, g, window=4, stride=2)
            assert got == pytest.approx(want, abs=1e-9)

    def test_window_too_big(self):
        p, g = rand_pair(3, size=8)
        with pytest.raises(InvalidInputError):
            lmse(p, g, window=16)


class TestPsnr:
    def test_known_value_255_peak(self):
        # MSE of 1 on a peak-255 scale: 10 log10(255^2) = 48.1308 dB
        g = Image(np.zeros((4, 4, 1)), "linear")
        p = Image(np.ones((4, 4, 1)), "linear")
        want = 10 * math.log10(255.0**2)
        assert psnr(p, g, peak=255.0) == pytest.approx(want, abs=1e-9)
        assert want == pytest.approx(48.1308, abs=1e-4)

    def test_identity_hits_cap(self):
        p, _ = rand_pair(4)
        assert psnr(p, p) == 99.0

    def test_double_energy_drops_3dB(self):
        g = Image(np.zeros((4, 4, 1)), "linear")
        a = Image(np.full((4, 4, 1), 0.1), "linear")
        b = Image(np.full((4, 4, 1), 0.1 * math.sqrt(2)), "linear")
        drop = psnr(a, g) - psnr(b, g)
        assert drop == pytest.approx(10 * math.log10(2), abs=1e-9)

    def test_bad_peak(self):
        p, g = rand_pair(5)
        with pytest.raises(ConfigError):
            psnr(p, g, peak=0.0)


class TestSsim:
    def test_self_similarity(self):
        p, _ = rand_pair(6)
        assert ssim(p, p) == pytest.approx(1.0, abs=1e-12)

    def test_symmetry(self):
        p, g = rand_pair(7)
        assert ssim(p, g) == pytest.approx(ssim(g, p), abs=1e-12)

    def test_matches_oracle(self):
        for seed in range(5):
            p, g = rand_pair(seed, size=16, channels=1)
            assert ssim(p, g) == pytest.approx(ssim_oracle(p, g), abs=1e-6)

    def test_too_small_image(self):
        p, g = rand_pair(8, size=8)
        with pytest.raises(InvalidInputError):
            ssim(p, g, window=11)


class TestPermutationInvariance:
    def test_sample_order_does_not_change_averages(self):
        rows = []
        for seed in range(6):
            p, g = rand_pair(seed)
            rows.append({"scene_id": f"s{seed}", "mse_y": mse(p, g),
                         "mse_z": mse(g, p)})
        r1 = MetricsReport(metrics=["mse"], domains=["y", "z"], per_sample=rows)
        r2 = MetricsReport(metrics=["mse"], domains=["y", "z"],
                           per_sample=list(reversed(rows)))
        assert r1.averages() == r2.averages()

    def test_averages_recompute_from_dump(self):
        rows = [{"scene_id": f"s{i}", "mse_y": float(i), "mse_z": 2.0 * i}
                for i in range(5)]
        rep = MetricsReport(metrics=["mse"], domains=["y", "z"], per_sample=rows)
        avg = rep.averages()["mse"]
        assert avg["y"] == pytest.approx(np.mean([r["mse_y"] for r in rows]),
                                         abs=1e-9)
        assert avg["z"] == pytest.approx(np.mean([r["mse_z"] for r in rows]),
                                         abs=1e-9)


@pytest.fixture(scope="module")
def setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("eval_ds")
    cfg = RenderConfig(image_size=32, n_train=4, n_test=3,
                       size_range=(6, 16), seed=2)
    manifest = render_dataset(cfg, root)
    trainer = Trainer(TrainConfig(
        profile="synthetic", image_size=32, encoder_widths=(8, 16, 32, 64),
        disc_widths=(8, 8, 8, 8), n_disc_branches=1, max_steps=0,
    ))
    return root, manifest, trainer


class TestEvaluateDataset:
    def test_empty_pool_errors(self, setup):
        root, _, trainer = setup
        with pytest.raises(InvalidInputError):
            evaluate_dataset(trainer, [], root)

    def test_identity_oracle_scores_perfectly(self, setup):
        # feeding ground-truth layers as predictions: errors 0, SSIM 1
        root, manifest, trainer = setup

        class IdentityTrainer:
            domains = ("y", "z")

            def __init__(self):
                self._current = None

            def separate(self, x):
                return self._current

        from sils.imaging import load_png

        ident = IdentityTrainer()
        rows = []
        for entry in manifest["splits"]["test"]:
            ident._current = {
                "layers": {
                    "y": load_png(root / entry["files"]["y"]),
                    "z": load_png(root / entry["files"]["z"]),
                }
            }
            rep = evaluate_dataset(ident, [entry], root,
                                   metric_names=("mse", "lmse", "psnr", "ssim"))
            rows.extend(rep.per_sample)
        for row in rows:
            for dom in ("y", "z"):
                assert row[f"mse_{dom}"] == 0.0
                assert row[f"lmse_{dom}"] == pytest.approx(0.0, abs=1e-12)
                assert row[f"psnr_{dom}"] == 99.0
                assert row[f"ssim_{dom}"] == pytest.approx(1.0, abs=1e-9)

    def test_missing_ground_truth_skipped_with_count(self, setup):
        root, manifest, trainer = setup
        entries = [dict(e) for e in manifest["splits"]["test"]]
        entries[0] = dict(entries[0], files={"x": entries[0]["files"]["x"]})
        with pytest.warns(UserWarning):
            rep = evaluate_dataset(trainer, entries, root)
        assert rep.skipped == 1
        assert rep.sample_count == len(entries) - 1

    def test_report_serialization(self, setup, tmp_path):
        root, manifest, trainer = setup
        rep = evaluate_dataset(trainer, manifest["splits"]["test"], root,
                               metric_names=("mse", "mse100"))
        rep.write_json(tmp_path / "report.json")
        rep.write_csv(tmp_path / "per_sample.csv")
        assert (tmp_path / "report.json").exists()
        lines = (tmp_path / "per_sample.csv").read_text().splitlines()
        assert len(lines) == rep.sample_count + 1
        assert "mse100" in rep.console_table()
