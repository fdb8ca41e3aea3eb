"""Disagreement rasters (single model vs ensemble) and performance-diagram SVGs."""
from __future__ import annotations

import json
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .metrics import DiagramSpec


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class DiffClass:
    code: int  # 4*label + 2*single + ensemble
    name: str
    color: tuple[int, int, int]


DIFF_CLASSES = (
    DiffClass(0b000, "background", (0, 0, 0)),
    DiffClass(0b001, "false alarm ensemble", (0, 0, 255)),
    DiffClass(0b010, "false alarm single", (255, 0, 0)),
    DiffClass(0b011, "false alarm both", (255, 0, 255)),
    DiffClass(0b100, "missed by both", (0, 160, 0)),
    DiffClass(0b101, "single missed, ensemble correct", (0, 255, 255)),
    DiffClass(0b110, "single correct, ensemble missed", (255, 255, 0)),
    DiffClass(0b111, "both correct", (255, 255, 255)),
)
INVALID_COLOR = (64, 64, 64)

_PALETTE = np.array([c.color for c in DIFF_CLASSES] + [INVALID_COLOR], dtype=np.uint8)
assert len(_PALETTE) == _kernels.INVALID_CODE + 1


def diff_codes(label, single_bin, ensemble_bin, valid=None) -> np.ndarray:
    arrs = [np.asarray(a) for a in (label, single_bin, ensemble_bin)]
    if valid is None:
        valid = np.ones(arrs[0].shape, np.uint8)
    valid = np.asarray(valid)
    shapes = {a.shape for a in (*arrs, valid)}
    if len(shapes) != 1:
        raise RenderError(f"shape mismatch among inputs: {sorted(shapes)}")
    return _kernels.diff_codes(*(a != 0 for a in arrs), valid != 0)


def diff_map(label, single_bin, ensemble_bin, valid=None) -> np.ndarray:
    """(H, W, 3) uint8 raster coloring each pixel by its (label, single, ensemble) triple."""
    return _PALETTE[diff_codes(label, single_bin, ensemble_bin, valid)]


def legend() -> dict:
    entries = [
        {"code": format(c.code, "03b"), "label": c.code >> 2 & 1, "single": c.code >> 1 & 1, "ensemble": c.code & 1, "name": c.name, "rgb": list(c.color)}
        for c in DIFF_CLASSES
    ]
    entries.append({"code": "invalid", "name": "invalid pixel", "rgb": list(INVALID_COLOR)})
    return {"encoding": "code = 4*label + 2*single + ensemble", "classes": entries}


def write_diff_png(rgb: np.ndarray, path: str | os.PathLike) -> Path:
    """Write the raster as PNG and its legend to ``<stem>.legend.json``."""
    from PIL import Image

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")
        path.with_suffix(".legend.json").write_text(json.dumps(legend(), indent=2))
    except OSError as exc:
        raise RenderError(f"cannot write {path}: {exc}") from exc
    return path


# --------------------------------------------------------------------------
# performance diagram

_SIZE = 480
_MARGIN = 60
_MARKER_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _xy(p: float, r: float) -> tuple[float, float]:
    """Diagram coordinates (precision, recall) to SVG pixels."""
    return _MARGIN + p * _SIZE, _MARGIN + (1.0 - r) * _SIZE


def _polyline(parent, pts: np.ndarray, **attrs) -> ET.Element:
    coords = " ".join(f"{x:.3f},{y:.3f}" for x, y in (_xy(p, r) for p, r in pts))
    return ET.SubElement(parent, "polyline", points=coords, fill="none", **attrs)


def render_diagram(diagram: DiagramSpec, out_path: str | os.PathLike, title: str = "") -> Path:
    """Precision (x) vs recall (y) with F1 isolines, bias rays and one marker per point."""
    total = _SIZE + 2 * _MARGIN
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(total), height=str(total), viewBox=f"0 0 {total} {total}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(total), height=str(total), fill="white")
    if title:
        t = ET.SubElement(svg, "text", x=str(total / 2), y="25", attrib={"text-anchor": "middle", "font-size": "16"})
        t.text = title

    axes = ET.SubElement(svg, "g", id="axes", stroke="black")
    x0, y0 = _xy(0, 0)
    x1, y1 = _xy(1, 1)
    ET.SubElement(axes, "rect", x=f"{x0}", y=f"{y1}", width=f"{x1 - x0}", height=f"{y0 - y1}", fill="none")
    for i in range(11):
        v = i / 10
        tx, _ = _xy(v, 0)
        _, ty = _xy(0, v)
        ET.SubElement(axes, "line", x1=f"{tx}", y1=f"{y0}", x2=f"{tx}", y2=f"{y0 + 5}")
        ET.SubElement(axes, "line", x1=f"{x0 - 5}", y1=f"{ty}", x2=f"{x0}", y2=f"{ty}")
        lx = ET.SubElement(axes, "text", x=f"{tx}", y=f"{y0 + 20}", stroke="none", attrib={"text-anchor": "middle", "font-size": "11"})
        lx.text = f"{v:.1f}"
        ly = ET.SubElement(axes, "text", x=f"{x0 - 8}", y=f"{ty + 4}", stroke="none", attrib={"text-anchor": "end", "font-size": "11"})
        ly.text = f"{v:.1f}"
    xl = ET.SubElement(axes, "text", x=f"{(x0 + x1) / 2}", y=f"{y0 + 42}", stroke="none", attrib={"text-anchor": "middle", "font-size": "13"})
    xl.text = "Precision"
    yl = ET.SubElement(
        axes, "text", x="18", y=f"{(y0 + y1) / 2}", stroke="none",
        attrib={"text-anchor": "middle", "font-size": "13", "transform": f"rotate(-90 18 {(y0 + y1) / 2})"},
    )
    yl.text = "Recall"

    iso = ET.SubElement(svg, "g", id="f1-isolines", stroke="#888888", attrib={"stroke-width": "1"})
    for f, pts in sorted(diagram.isolines.items()):
        _polyline(iso, np.asarray(pts), attrib={"data-f1": f"{f:g}"})
        lx, ly = _xy(*np.asarray(pts)[-1])
        lab = ET.SubElement(iso, "text", x=f"{lx + 3}", y=f"{ly + 4}", stroke="none", attrib={"font-size": "10", "fill": "#555555"})
        lab.text = f"{f:g}"

    rays = ET.SubElement(svg, "g", id="bias-rays", stroke="#888888", attrib={"stroke-dasharray": "4 3", "stroke-width": "1"})
    for b, pts in sorted(diagram.bias_rays.items()):
        _polyline(rays, np.asarray(pts), attrib={"data-bias": f"{b:g}"})
        lx, ly = _xy(*np.asarray(pts)[-1])
        lab = ET.SubElement(rays, "text", x=f"{lx + 2}", y=f"{ly - 3}", stroke="none", attrib={"font-size": "10", "fill": "#555555"})
        lab.text = f"{b:g}"

    markers = ET.SubElement(svg, "g", id="markers")
    for i, pt in enumerate(diagram.points):
        cx, cy = _xy(float(pt["precision"]), float(pt["recall"]))
        color = _MARKER_COLORS[i % len(_MARKER_COLORS)]
        ET.SubElement(
            markers, "circle", cx=f"{cx:.3f}", cy=f"{cy:.3f}", r="5", fill=color, stroke="black",
            attrib={
                "class": "marker",
                "data-name": str(pt.get("name", "")),
                "data-precision": repr(float(pt["precision"])),
                "data-recall": repr(float(pt["recall"])),
            },
        )
        lab = ET.SubElement(markers, "text", x=f"{cx + 7:.3f}", y=f"{cy - 7:.3f}", attrib={"font-size": "11", "fill": color})
        lab.text = str(pt.get("name", ""))

    path = Path(out_path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        ET.ElementTree(svg).write(path, encoding="utf-8", xml_declaration=True)
    except OSError as exc:
        raise RenderError(f"cannot write {path}: {exc}") from exc
    return path


def marker_positions(svg_path: str | os.PathLike) -> list[tuple[str, float, float]]:
    """Read back ``(name, precision, recall)`` from the rendered marker pixels."""
    ns = {"s": "http://www.w3.org/2000/svg"}
    root = ET.parse(svg_path).getroot()
    out = []
    for c in root.iterfind(".//s:circle[@class='marker']", ns):
        cx, cy = float(c.get("cx")), float(c.get("cy"))
        out.append((c.get("data-name", ""), (cx - _MARGIN) / _SIZE, 1.0 - (cy - _MARGIN) / _SIZE))
    return out
