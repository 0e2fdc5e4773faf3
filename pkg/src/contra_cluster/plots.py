"""SVG scatter plots, CSV dumps and prototype tile images."""
from __future__ import annotations

import colorsys
import csv
import os
import xml.etree.ElementTree as ET

import numpy as np
from PIL import Image

from .evaluate import fit_label_map

# tab10 followed by its lighter companions
_PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5",
    "#c49c94", "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5",
]


def palette(n):
    if n <= len(_PALETTE):
        return _PALETTE[:n]
    out = []
    for i in range(n):
        r, g, b = colorsys.hsv_to_rgb(i / n, 0.65, 0.85)
        out.append(f"#{int(r * 255):02x}{int(g * 255):02x}{int(b * 255):02x}")
    return out


def scatter_svg(coords, labels, path, title="", size=600, radius=2.5):
    """Write a standalone SVG scatter plot with one color per distinct label."""
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    colors = dict(zip(classes.tolist(), palette(len(classes))))
    margin, legend_w = 30, 90
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    xy = margin + (coords - lo) / span * (size - 2 * margin)
    svg = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(size + legend_w),
        height=str(size),
        viewBox=f"0 0 {size + legend_w} {size}",
    )
    ET.SubElement(svg, "rect", width="100%", height="100%", fill="white")
    if title:
        t = ET.SubElement(svg, "text", x=str(margin), y="18", attrib={"font-family": "sans-serif", "font-size": "14"})
        t.text = title
    for (x, y), lab in zip(xy, labels.tolist()):
        ET.SubElement(
            svg, "circle", cx=f"{x:.2f}", cy=f"{size - y:.2f}", r=str(radius), fill=colors[lab], attrib={"fill-opacity": "0.8"}
        )
    for i, lab in enumerate(classes.tolist()):
        y = margin + 16 * i
        ET.SubElement(svg, "rect", x=str(size + 10), y=str(y - 9), width="10", height="10", fill=colors[lab])
        t = ET.SubElement(svg, "text", x=str(size + 26), y=str(y), attrib={"font-family": "sans-serif", "font-size": "11"})
        t.text = str(lab)
    ET.ElementTree(svg).write(path, encoding="utf-8", xml_declaration=True)
    return path


def export_plots(coords, labels, cluster_labels, out_dir, mapped_labels=None, prefix=""):
    """Scatter plots colored by real, cluster and mapped labels, plus a CSV of everything.

    When ``mapped_labels`` is omitted each cluster is mapped to the modal
    real label of its members.
    """
    coords = np.asarray(coords)
    labels = np.asarray(labels, dtype=np.int64)
    cluster_labels = np.asarray(cluster_labels, dtype=np.int64)
    if not len(coords) == len(labels) == len(cluster_labels):
        raise ValueError("coords, labels and cluster labels differ in length")
    if mapped_labels is None:
        lm = fit_label_map(cluster_labels, labels, int(cluster_labels.max()) + 1)
        mapped_labels = lm.lookup(cluster_labels)
    mapped_labels = np.asarray(mapped_labels, dtype=np.int64)
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "real": scatter_svg(coords, labels, os.path.join(out_dir, f"{prefix}real_labels.svg"), "real labels"),
        "cluster": scatter_svg(coords, cluster_labels, os.path.join(out_dir, f"{prefix}cluster_labels.svg"), "cluster labels"),
        "mapped": scatter_svg(
            coords, mapped_labels, os.path.join(out_dir, f"{prefix}mapped_labels.svg"), "cluster labels mapped to real labels"
        ),
    }
    csv_path = os.path.join(out_dir, f"{prefix}embedding.csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "label", "cluster", "mapped"])
        for (x, y), a, b, c in zip(coords.tolist(), labels.tolist(), cluster_labels.tolist(), mapped_labels.tolist()):
            w.writerow([repr(x), repr(y), a, b, c])
    paths["csv"] = csv_path
    return paths


def save_tiles(images, path, cols=None, pad=2):
    """Tile (k, H, W) images in [0, 1] into one grayscale PNG."""
    images = np.asarray(images, dtype=np.float64)
    k, h, w = images.shape
    cols = cols or int(np.ceil(np.sqrt(k)))
    rows = int(np.ceil(k / cols))
    canvas = np.ones((rows * (h + pad) + pad, cols * (w + pad) + pad))
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        y0, x0 = pad + r * (h + pad), pad + c * (w + pad)
        canvas[y0 : y0 + h, x0 : x0 + w] = img
    Image.fromarray(np.clip(np.rint(canvas * 255), 0, 255).astype(np.uint8), mode="L").save(path)
    return path
