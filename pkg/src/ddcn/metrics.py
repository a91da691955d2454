"""Y-channel PSNR and SSIM, plus the per-frame CSV report."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ddcn.errors import DimensionError
from ddcn.video import rgb_to_y

PSNR_CAP = 100.0
PEAK = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _luma_pair(a, b, crop_border: int):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"metric operands differ in shape: {a.shape} vs {b.shape}")
    ya, yb = rgb_to_y(a)[0], rgb_to_y(b)[0]
    if crop_border:
        c = crop_border
        ya, yb = ya[c:-c, c:-c], yb[c:-c, c:-c]
    return ya, yb


def psnr_y(a, b, crop_border: int = 0) -> float:
    ya, yb = _luma_pair(a, b, crop_border)
    mse = float(np.mean((ya - yb) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(PEAK ** 2 / mse))


def ssim_window() -> np.ndarray:
    r = SSIM_WINDOW // 2
    k = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-k * k / (2 * SSIM_SIGMA ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    view = sliding_window_view(img, win.shape)
    return np.tensordot(view, win, axes=([2, 3], [0, 1]))


def ssim_luma(ya: np.ndarray, yb: np.ndarray) -> float:
    if min(ya.shape) < SSIM_WINDOW:
        raise DimensionError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {ya.shape}")
    c1, c2 = (K1 * PEAK) ** 2, (K2 * PEAK) ** 2
    win = ssim_window()
    mu1, mu2 = _filter_valid(ya, win), _filter_valid(yb, win)
    s11 = _filter_valid(ya * ya, win) - mu1 * mu1
    s22 = _filter_valid(yb * yb, win) - mu2 * mu2
    s12 = _filter_valid(ya * yb, win) - mu1 * mu2
    num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def ssim_y(a, b, crop_border: int = 0) -> float:
    """Single-scale SSIM on BT.601 luma: 11x11 Gaussian (sigma 1.5), valid windows only."""
    ya, yb = _luma_pair(a, b, crop_border)
    return ssim_luma(ya, yb)


@dataclass
class MetricReport:
    sequence: str
    frames: list[str] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)

    def add(self, frame: str, pred, truth, crop_border: int = 0) -> None:
        self.frames.append(frame)
        self.psnr.append(psnr_y(pred, truth, crop_border))
        self.ssim.append(ssim_y(pred, truth, crop_border))

    @property
    def psnr_db(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))


def write_report_csv(reports: list[MetricReport], path) -> None:
    """Per-frame rows plus a closing mean row; ``path`` may be an open text stream."""
    all_psnr = [v for r in reports for v in r.psnr]
    all_ssim = [v for r in reports for v in r.ssim]
    if hasattr(path, "write"):
        _write_rows(reports, path, all_psnr, all_ssim)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(reports, fh, all_psnr, all_ssim)


def _write_rows(reports, fh, all_psnr, all_ssim) -> None:
    w = csv.writer(fh)
    w.writerow(["sequence", "frame", "psnr_db", "ssim"])
    for r in reports:
        for name, p, s in zip(r.frames, r.psnr, r.ssim):
            w.writerow([r.sequence, name, f"{p:.6f}", f"{s:.6f}"])
    w.writerow(["mean", "", f"{np.mean(all_psnr):.6f}", f"{np.mean(all_ssim):.6f}"])
