"""Static PNG figures: permittivity panels, masks, line plots, snapshot grids.

Pixels are computed here with numpy; Pillow only draws text/lines and
encodes the file, so identical inputs give identical bytes.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .geometry import ContrastMap

# a perceptually ordered dark-blue -> teal -> yellow ramp (viridis control points)
_RAMP = np.array([
    [68, 1, 84], [72, 40, 120], [62, 73, 137], [49, 104, 142], [38, 130, 142],
    [31, 158, 137], [53, 183, 121], [109, 205, 89], [180, 222, 44], [253, 231, 37],
], dtype=float)

PANEL = 256
PAD = 28
BAR = 14
WHITE = (255, 255, 255)
BLACK = (0, 0, 0)
SERIES_COLORS = [(31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40),
                 (148, 103, 189), (140, 86, 75), (227, 119, 194), (127, 127, 127)]


def colorize(values: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    """Map a 2-D array to uint8 RGB through the ramp, clipping to [vmin, vmax]."""
    span = vmax - vmin if vmax > vmin else 1.0
    t = np.clip((np.asarray(values, float) - vmin) / span, 0.0, 1.0) * (len(_RAMP) - 1)
    lo = np.floor(t).astype(int)
    hi = np.minimum(lo + 1, len(_RAMP) - 1)
    w = (t - lo)[..., None]
    return np.round(_RAMP[lo] * (1 - w) + _RAMP[hi] * w).astype(np.uint8)


def _upscale(rgb: np.ndarray, size: int) -> Image.Image:
    return Image.fromarray(rgb, "RGB").resize((size, size), Image.NEAREST)


def _font():
    return ImageFont.load_default()


def _panel(draw, canvas, x0, y0, values, vrange, label):
    canvas.paste(_upscale(colorize(values, *vrange), PANEL), (x0, y0))
    draw.text((x0, y0 - 16), label, fill=BLACK, font=_font())
    bar = colorize(np.linspace(vrange[1], vrange[0], PANEL)[:, None].repeat(BAR, 1), *vrange)
    canvas.paste(Image.fromarray(bar, "RGB"), (x0 + PANEL + 6, y0))
    draw.text((x0 + PANEL + 6 + BAR + 3, y0 - 4), f"{vrange[1]:g}", fill=BLACK, font=_font())
    draw.text((x0 + PANEL + 6 + BAR + 3, y0 + PANEL - 10), f"{vrange[0]:g}", fill=BLACK, font=_font())


def render_map(cmap: ContrastMap, path, re_range=(1.0, 3.0), im_range=(0.0, 1.5),
               title: str | None = None) -> Path:
    """Side-by-side Re(eps_r) and Im(eps_r) panels with fixed color ranges."""
    eps = cmap.eps_r
    width = 2 * (PANEL + 6 + BAR + 40) + 3 * PAD
    height = PANEL + 2 * PAD + (18 if title else 0)
    canvas = Image.new("RGB", (width, height), WHITE)
    draw = ImageDraw.Draw(canvas)
    top = PAD + (18 if title else 0)
    if title:
        draw.text((PAD, 6), title, fill=BLACK, font=_font())
    _panel(draw, canvas, PAD, top, eps.real, re_range, "Re(eps_r)")
    _panel(draw, canvas, 2 * PAD + PANEL + 6 + BAR + 40, top, eps.imag, im_range, "Im(eps_r)")
    path = Path(path)
    canvas.save(path, format="PNG")
    return path


def render_mask(mask: np.ndarray, path) -> Path:
    """Binary mask as black (background) / white (active) cells."""
    img = np.where(np.asarray(mask, bool), 255, 0).astype(np.uint8)
    Image.fromarray(img, "L").resize((PANEL, PANEL), Image.NEAREST).save(path, format="PNG")
    return Path(path)


def snapshot_grid(maps: list, labels: list, path, re_range=(1.0, 3.0), part: str = "real") -> Path:
    """One row of small panels, e.g. reconstructions every few hundred iterations."""
    size = 128
    width = len(maps) * (size + 8) + 8
    canvas = Image.new("RGB", (width, size + 30), WHITE)
    draw = ImageDraw.Draw(canvas)
    for k, (m, lab) in enumerate(zip(maps, labels)):
        eps = m.eps_r.real if part == "real" else m.eps_r.imag
        x = 8 + k * (size + 8)
        canvas.paste(_upscale(colorize(eps, *re_range), size), (x, 22))
        draw.text((x, 4), str(lab), fill=BLACK, font=_font())
    canvas.save(path, format="PNG")
    return Path(path)


def line_plot(x, series: dict, path, xlabel: str = "", ylabel: str = "",
              size=(480, 320)) -> Path:
    """Polyline plot of one or more y series over shared x, with axis ticks."""
    W, H = size
    left, right, top, bottom = 56, 16, 16, 40
    canvas = Image.new("RGB", (W, H), WHITE)
    draw = ImageDraw.Draw(canvas)
    x = np.asarray(x, float)
    ys = [np.asarray(v, float) for v in series.values()]
    finite = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.array([0.0])
    y0, y1 = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    if y1 <= y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    x0, x1 = (x.min(), x.max()) if x.size and x.max() > x.min() else (0.0, 1.0)

    def px(xv, yv):
        return (left + (xv - x0) / (x1 - x0) * (W - left - right),
                H - bottom - (yv - y0) / (y1 - y0) * (H - top - bottom))

    draw.rectangle([left, top, W - right, H - bottom], outline=BLACK)
    for t in np.linspace(y0, y1, 5):
        _, py = px(x0, t)
        draw.line([left - 4, py, left, py], fill=BLACK)
        draw.text((4, py - 6), f"{t:.3g}", fill=BLACK, font=_font())
    for t in np.linspace(x0, x1, 5):
        pxx, _ = px(t, y0)
        draw.line([pxx, H - bottom, pxx, H - bottom + 4], fill=BLACK)
        draw.text((pxx - 10, H - bottom + 6), f"{t:.3g}", fill=BLACK, font=_font())
    draw.text((W // 2 - 3 * len(xlabel), H - 14), xlabel, fill=BLACK, font=_font())
    draw.text((4, 2), ylabel, fill=BLACK, font=_font())
    for k, (name, y) in enumerate(zip(series, ys)):
        color = SERIES_COLORS[k % len(SERIES_COLORS)]
        pts = [px(a, b) for a, b in zip(x, y) if np.isfinite(b)]
        if len(pts) > 1:
            draw.line(pts, fill=color, width=2)
        for p in pts:
            draw.ellipse([p[0] - 2, p[1] - 2, p[0] + 2, p[1] + 2], fill=color)
        draw.text((W - right - 110, top + 4 + 12 * k), str(name), fill=color, font=_font())
    canvas.save(path, format="PNG")
    return Path(path)


def read_map_csv(stem) -> ContrastMap:
    """Load ``<stem>_real.csv`` / ``<stem>_imag.csv``; a bare real CSV path also works."""
    stem = Path(stem)
    if stem.suffix == ".csv":
        name = stem.stem
        for suffix in ("_real", "_imag"):
            if name.endswith(suffix):
                return ContrastMap.from_csv(stem.with_name(name[: -len(suffix)]))
        re = np.loadtxt(stem, delimiter=",", ndmin=2)
        return ContrastMap(re - 1.0)
    return ContrastMap.from_csv(stem)
