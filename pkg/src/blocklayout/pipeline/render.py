"""Hand-built SVG 1.1 output: blocks as outlines, buildings filled.

One SVG user unit equals one meter; the y axis is flipped so north
stays up.  Colors encode the fitted shape taxonomy.
"""

from __future__ import annotations

from ..shapefit import ShapeType

SHAPE_FILLS = {
    ShapeType.RECT: "#4e79a7",
    ShapeType.L: "#f28e2b",
    ShapeType.U: "#59a14c",
    ShapeType.X: "#e15759",
}
BLOCK_STROKE = "#444444"
MARGIN_M = 10.0


def _path_data(ring, flip_y=True) -> str:
    sign = -1.0 if flip_y else 1.0
    parts = ["M %s %s" % (_num(ring[0][0]), _num(sign * ring[0][1]))]
    for x, y in ring[1:]:
        parts.append("L %s %s" % (_num(x), _num(sign * y)))
    parts.append("Z")
    return " ".join(parts)


def _num(value) -> str:
    text = "%.3f" % float(value)
    text = text.rstrip("0").rstrip(".")
    return text if text not in ("", "-") else "0"


def render_svg(scenes, path):
    """Write one SVG document for a list of scenes.

    Each scene is a dict: {"block": Polygon or None,
    "buildings": [(Polygon, ShapeType), ...], "label": str or None}.
    """
    elements = []
    xs, ys = [], []

    def visit(ring):
        for x, y in ring:
            xs.append(float(x))
            ys.append(float(-y))

    for scene in scenes:
        block = scene.get("block")
        group = ["<g>"]
        if scene.get("label"):
            group[0] = '<g data-label="%s">' % scene["label"]
        if block is not None:
            visit(block.ring)
            group.append(
                '<path d="%s" fill="none" stroke="%s" stroke-width="1"/>'
                % (_path_data(block.ring), BLOCK_STROKE))
        for footprint, tag in scene.get("buildings", ()):
            visit(footprint.ring)
            group.append(
                '<path d="%s" fill="%s" stroke="#222222" '
                'stroke-width="0.3"/>'
                % (_path_data(footprint.ring),
                   SHAPE_FILLS.get(tag, "#bab0ac")))
        group.append("</g>")
        elements.append("\n".join(group))

    if xs:
        min_x, max_x = min(xs) - MARGIN_M, max(xs) + MARGIN_M
        min_y, max_y = min(ys) - MARGIN_M, max(ys) + MARGIN_M
    else:
        min_x = min_y = 0.0
        max_x = max_y = 1.0
    width = max_x - min_x
    height = max_y - min_y
    doc = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        'viewBox="%s %s %s %s" width="%s" height="%s">'
        % (_num(min_x), _num(min_y), _num(width), _num(height),
           _num(width), _num(height)),
    ]
    doc.extend(elements)
    doc.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(doc))
        fh.write("\n")
