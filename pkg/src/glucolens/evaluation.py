"""Regression metrics, Clarke Error Grid zoning, holdout split, SVG plots."""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

ZONES = ("A", "B", "C", "D", "E")
CEG_MAX = 400.0


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    mae: float
    mape: float
    n: int


def compute_metrics(refs, preds) -> MetricReport:
    r = np.asarray(refs, dtype=np.float64).reshape(-1)
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    if len(r) != len(p):
        raise ValueError(f"length mismatch: {len(r)} references vs {len(p)} predictions")
    if len(r) == 0:
        raise ValueError("no reference/prediction pairs")
    if np.any(r == 0):
        raise ValueError("MAPE undefined: zero reference value")
    err = p - r
    return MetricReport(
        rmse=float(np.sqrt(np.mean(err**2))),
        mae=float(np.mean(np.abs(err))),
        mape=float(100.0 * np.mean(np.abs(err) / np.abs(r))),
        n=len(r),
    )


# ---------------------------------------------------------- Clarke grid


def _check_range(ref, pred):
    if not (0.0 <= ref <= CEG_MAX and 0.0 <= pred <= CEG_MAX):
        raise ValueError(f"Clarke grid defined on [0, 400] mg/dL, got ({ref}, {pred})")


def ceg_zone(ref: float, pred: float) -> str:
    """Clarke zone for one (reference, prediction) pair in mg/dL."""
    _check_range(ref, pred)
    if (ref <= 70 and pred <= 70) or abs(pred - ref) <= 0.2 * ref:
        return "A"
    if (ref >= 180 and pred <= 70) or (ref <= 70 and pred >= 180):
        return "E"
    if (70 <= ref <= 290 and pred >= ref + 110) or (130 <= ref <= 180 and pred <= (7 / 5) * ref - 182):
        return "C"
    if (
        (ref >= 240 and 70 <= pred <= 180)
        or (ref <= 175 / 3 and 70 <= pred <= 180)
        or (175 / 3 <= ref <= 70 and pred >= (6 / 5) * ref)
    ):
        return "D"
    return "B"


def zone_predicates(ref, pred) -> dict[str, np.ndarray]:
    """Each zone's defining region evaluated on its own (regions may overlap)."""
    r = np.asarray(ref, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    a = ((r <= 70) & (p <= 70)) | (np.abs(p - r) <= 0.2 * r)
    e = ((r >= 180) & (p <= 70)) | ((r <= 70) & (p >= 180))
    c = ((r >= 70) & (r <= 290) & (p >= r + 110)) | ((r >= 130) & (r <= 180) & (p <= (7 / 5) * r - 182))
    d = (
        ((r >= 240) & (p >= 70) & (p <= 180))
        | ((r <= 175 / 3) & (p >= 70) & (p <= 180))
        | ((r >= 175 / 3) & (r <= 70) & (p >= (6 / 5) * r))
    )
    return {"A": a, "E": e, "C": c, "D": d}


def ceg_zones(refs, preds) -> np.ndarray:
    """Vectorized :func:`ceg_zone`; returns an array of zone letters."""
    r = np.asarray(refs, dtype=np.float64).reshape(-1)
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    if r.shape != p.shape:
        raise ValueError("refs and preds must have the same length")
    if r.size and (r.min() < 0 or p.min() < 0 or r.max() > CEG_MAX or p.max() > CEG_MAX):
        raise ValueError("Clarke grid defined on [0, 400] mg/dL")
    pred_masks = zone_predicates(r, p)
    out = np.full(r.shape, "B", dtype="<U1")
    claimed = np.zeros(r.shape, dtype=bool)
    for z in ("A", "E", "C", "D"):
        hit = pred_masks[z] & ~claimed
        out[hit] = z
        claimed |= hit
    return out


@dataclass(frozen=True)
class CegOutcome:
    zones: tuple
    percentages: dict

    def summary(self, label: str = "") -> str:
        parts = [f"{self.percentages[z]:.1f}% Zone {z}" for z in ZONES if self.percentages[z] > 0]
        if len(parts) == 1:
            text = f"{self.percentages[self.zones[0]]:.1f}% in Zone {self.zones[0]}"
        else:
            text = ", ".join(parts)
        return f"{label}: {text}" if label else text


def ceg_report(refs, preds) -> CegOutcome:
    zones = ceg_zones(refs, preds)
    if zones.size == 0:
        raise ValueError("Clarke report needs at least one pair")
    pct = {z: 100.0 * float(np.count_nonzero(zones == z)) / zones.size for z in ZONES}
    return CegOutcome(tuple(zones.tolist()), pct)


# ------------------------------------------------------------------ split


def split_train_test(items, ratio: float = 0.7, seed: int = 42):
    """Seeded shuffle, then the first ``round(ratio * N)`` items train."""
    items = list(items)
    n = len(items)
    if n < 2:
        raise ValueError(f"need at least 2 items to split, got {n}")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    n_train = min(n - 1, max(1, int(math.floor(ratio * n + 0.5))))
    order = np.random.default_rng(seed).permutation(n)
    return [items[i] for i in order[:n_train]], [items[i] for i in order[n_train:]]


# -------------------------------------------------------------------- SVG

ZONE_COLORS = {"A": "#2a9d3f", "B": "#1f6fd1", "C": "#e0a100", "D": "#d9480f", "E": "#9c1c1c"}


def ceg_boundaries() -> list[list[tuple[float, float]]]:
    """Zone boundary polylines in (reference, prediction) coordinates."""
    return [
        [(0.0, 70.0), (175 / 3, 70.0), (400 / 1.2, 400.0)],
        [(70.0, 84.0), (70.0, 400.0)],
        [(0.0, 180.0), (70.0, 180.0), (290.0, 400.0)],
        [(70.0, 0.0), (70.0, 56.0), (400.0, 320.0)],
        [(180.0, 0.0), (180.0, 70.0), (400.0, 70.0)],
        [(240.0, 70.0), (240.0, 180.0), (400.0, 180.0)],
        [(130.0, 0.0), (180.0, 70.0)],
    ]


def render_ceg_svg(refs, preds, zones=None, title: str = "Clarke Error Grid") -> str:
    r = np.asarray(refs, dtype=np.float64).reshape(-1)
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    if r.size == 0:
        raise ValueError("nothing to plot")
    zones = ceg_zones(r, p) if zones is None else np.asarray(zones)
    size, margin = 480.0, 60.0
    scale = size / CEG_MAX

    def sx(v):
        return margin + v * scale

    def sy(v):
        return margin + size - v * scale

    w = h = size + 2 * margin
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:g}" height="{h + 40:g}" '
        f'viewBox="0 0 {w:g} {h + 40:g}">',
        f'<title>{escape(title)}</title>',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<rect class="frame" x="{sx(0):g}" y="{sy(CEG_MAX):g}" width="{size:g}" height="{size:g}" '
        'fill="none" stroke="black"/>',
    ]
    for tick in range(0, 401, 50):
        out.append(
            f'<text x="{sx(tick):g}" y="{sy(0) + 16:g}" font-size="10" text-anchor="middle">{tick}</text>'
        )
        out.append(f'<text x="{sx(0) - 6:g}" y="{sy(tick) + 3:g}" font-size="10" text-anchor="end">{tick}</text>')
    out.append(
        f'<text x="{sx(200):g}" y="{sy(0) + 34:g}" font-size="12" text-anchor="middle">'
        "Reference glucose (mg/dL)</text>"
    )
    out.append(
        f'<text x="14" y="{sy(200):g}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {sy(200):g})">Predicted glucose (mg/dL)</text>'
    )
    out.append(
        f'<line class="identity" x1="{sx(0):g}" y1="{sy(0):g}" x2="{sx(400):g}" y2="{sy(400):g}" '
        'stroke="gray" stroke-dasharray="4 3"/>'
    )
    for line in ceg_boundaries():
        data = " ".join(f"{a:.6g},{b:.6g}" for a, b in line)
        pts = " ".join(f"{sx(a):.3f},{sy(b):.3f}" for a, b in line)
        out.append(f'<polyline class="boundary" data-points="{data}" points="{pts}" fill="none" stroke="black"/>')
    for label, x, y in (("A", 30, 15), ("B", 370, 260), ("B", 280, 370), ("C", 160, 370),
                        ("C", 160, 15), ("D", 30, 140), ("D", 370, 120), ("E", 30, 370), ("E", 370, 15)):
        out.append(f'<text class="zone-label" x="{sx(x):g}" y="{sy(y):g}" font-size="14">{label}</text>')
    for a, b, z in zip(r, p, zones):
        out.append(
            f'<circle class="marker zone-{z}" cx="{sx(a):.3f}" cy="{sy(b):.3f}" r="2.5" '
            f'fill="{ZONE_COLORS[str(z)]}" fill-opacity="0.8"/>'
        )
    pct = {zz: 100.0 * float(np.count_nonzero(zones == zz)) / len(zones) for zz in ZONES}
    ly = h + 10
    for k, zz in enumerate(ZONES):
        x = margin + k * 96
        out.append(f'<rect x="{x:g}" y="{ly:g}" width="10" height="10" fill="{ZONE_COLORS[zz]}"/>')
        out.append(f'<text class="legend" x="{x + 14:g}" y="{ly + 9:g}" font-size="11">Zone {zz}: {pct[zz]:.1f}%</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
