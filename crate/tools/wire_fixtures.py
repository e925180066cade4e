#!/usr/bin/env python3
"""Writes the wire-protocol JSON fixtures used by the loopback tests.

Response masks are encoded with Pillow so the client is exercised against
PNG bytes it did not produce itself.

Usage: python3 tools/wire_fixtures.py [output_dir]
"""

import base64
import io
import json
import os
import sys

from PIL import Image

# 7x5, rows top to bottom
MASK = [
    "#......",
    ".##....",
    ".###...",
    "....#..",
    "......#",
]


def compact(obj):
    return json.dumps(obj, separators=(",", ":"))


def png_b64(rows):
    h, w = len(rows), len(rows[0])
    img = Image.new("L", (w, h))
    img.putdata([255 if c == "#" else 0 for row in rows for c in row])
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def main():
    root = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
        os.path.dirname(__file__), "..", "crates", "core", "tests", "fixtures", "wire")
    os.makedirs(root, exist_ok=True)
    files = {
        "request_uri.json": compact({
            "episode_id": "pascal5i_f0_c3_2008_000123_s0_0007",
            "image": {"uri": "/data/VOC2012/JPEGImages/2008_000123.jpg"},
            "prompts": {"mode": "mixed", "point": {"x": 3.25, "y": 2.0, "label": 1},
                        "box": {"x1": 0, "y1": 0, "x2": 6, "y2": 4}},
        }),
        "request_png.json": compact({
            "episode_id": "inline",
            "image": {"png_b64": base64.b64encode(bytes([137, 80, 78, 71, 13, 10, 26, 10])).decode()},
            "prompts": {"mode": "box", "point": None, "box": {"x1": 1, "y1": 1, "x2": 3, "y2": 2}},
        }),
        "response.json": compact({"mask_png_b64": png_b64(MASK), "score": 0.875, "width": 7, "height": 5}),
        "response_mismatch.json": compact({"mask_png_b64": png_b64(MASK), "score": 0.5, "width": 9, "height": 5}),
        "health.json": compact({"status": "ok", "model_id": "stub-vit-b"}),
        "mask.txt": "\n".join(MASK),
    }
    for name, text in files.items():
        with open(os.path.join(root, name), "w") as f:
            f.write(text + "\n")
    print("wire fixtures written to", root)


if __name__ == "__main__":
    main()
