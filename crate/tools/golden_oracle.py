#!/usr/bin/env python3
"""Builds the checked-in golden fixture set and its expected report.

The fixture is a small fold-0 dataset of 64x64 masks: ground truth, FSS
predictions, and per-prompt-mode precomputed segmenter outputs. Expected
values are computed here by per-pixel enumeration with exact fractions,
independently of the Rust implementation, and written to golden.json.

Usage: python3 tools/golden_oracle.py [output_dir]
"""

import json
import os
import random
import sys
from fractions import Fraction

from PIL import Image

W = H = 64
N_EPISODES = 20
CLASS_COUNT = 12
FOLD_CLASSES = [1, 2, 3]
MODES = ["point", "box", "mixed"]
GRID = [Fraction(0), Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), Fraction(1)]
RUN_T = Fraction(3, 4)
EMPTY_FSS_EPISODE = 7
MISSING_BOX_EPISODE = 12


# ---------------------------------------------------------------- fixtures

def blank():
    return [[0] * W for _ in range(H)]


def rect(x0, y0, x1, y1):
    m = blank()
    for y in range(max(0, y0), min(H, y1 + 1)):
        for x in range(max(0, x0), min(W, x1 + 1)):
            m[y][x] = 1
    return m


def ellipse(cx, cy, rx, ry):
    m = blank()
    for y in range(H):
        for x in range(W):
            if ((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 <= 1.0:
                m[y][x] = 1
    return m


def shift(m, dx, dy):
    out = blank()
    for y in range(H):
        for x in range(W):
            sx, sy = x - dx, y - dy
            if 0 <= sx < W and 0 <= sy < H:
                out[y][x] = m[sy][sx]
    return out


def flip_noise(m, rng, count):
    out = [row[:] for row in m]
    for _ in range(count):
        x, y = rng.randrange(W), rng.randrange(H)
        out[y][x] ^= 1
    return out


def random_object(rng):
    if rng.random() < 0.5:
        x0, y0 = rng.randrange(2, 36), rng.randrange(2, 36)
        return rect(x0, y0, x0 + rng.randrange(8, 26), y0 + rng.randrange(8, 26))
    return ellipse(rng.randrange(14, 50), rng.randrange(14, 50),
                   rng.randrange(5, 14), rng.randrange(5, 14))


def boosted(gt, fss, rng):
    roll = rng.random()
    if roll < 0.55:
        # close to the object
        return flip_noise(shift(gt, rng.randrange(-1, 2), rng.randrange(-1, 2)), rng, rng.randrange(0, 15))
    if roll < 0.75:
        # close to the coarse prediction
        return flip_noise(fss, rng, rng.randrange(5, 40))
    if roll < 0.9:
        # a different object
        return random_object(rng)
    return shift(gt, rng.randrange(-8, 9), rng.randrange(-8, 9))


def save(mask, path):
    img = Image.new("L", (W, H))
    img.putdata([255 if v else 0 for row in mask for v in row])
    img.save(path)


def load(path):
    img = Image.open(path)
    assert img.mode == "L"
    px = img.tobytes()
    return [[1 if px[y * W + x] else 0 for x in range(W)] for y in range(H)]


def build(root):
    rng = random.Random(20240917)
    for sub in ["gt", "images", "fss"] + [os.path.join("sam", m) for m in MODES]:
        os.makedirs(os.path.join(root, sub), exist_ok=True)

    entries, episodes = [], []
    for i in range(N_EPISODES):
        cls = FOLD_CLASSES[i % 3]
        gt = random_object(rng)
        save(gt, os.path.join(root, "gt", f"q{i:02}.png"))
        save(gt, os.path.join(root, "images", f"q{i:02}.png"))
        entries.append({"image_ref": f"images/q{i:02}.png", "gt_mask_ref": f"gt/q{i:02}.png", "class_id": cls})

    for i in range(N_EPISODES):
        cls = FOLD_CLASSES[i % 3]
        eid = f"golden_e{i:02}"
        same = [j for j in range(N_EPISODES) if FOLD_CLASSES[j % 3] == cls and j != i]
        sup = same[rng.randrange(len(same))]
        episodes.append({
            "id": eid, "fold": 0, "class_id": cls, "shots": 1,
            "query": {"image_ref": entries[i]["image_ref"], "gt_mask_ref": entries[i]["gt_mask_ref"]},
            "supports": [{"image_ref": entries[sup]["image_ref"], "mask_ref": entries[sup]["gt_mask_ref"]}],
            "fss_mask_ref": f"{eid}.png",
        })
        gt = load(os.path.join(root, "gt", f"q{i:02}.png"))
        if i == EMPTY_FSS_EPISODE:
            fss = blank()
        else:
            fss = flip_noise(shift(gt, rng.randrange(-4, 5), rng.randrange(-4, 5)), rng, rng.randrange(0, 30))
        save(fss, os.path.join(root, "fss", f"{eid}.png"))
        for mode in MODES:
            if mode == "box" and i == MISSING_BOX_EPISODE:
                continue
            save(boosted(gt, fss, rng), os.path.join(root, "sam", mode, f"{eid}.png"))

    manifest = {"name": "custom", "class_count": CLASS_COUNT, "split_scheme": "contiguous", "entries": entries}
    with open(os.path.join(root, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
        f.write("\n")
    with open(os.path.join(root, "episodes.jsonl"), "w") as f:
        for e in episodes:
            f.write(json.dumps(e, separators=(",", ":")) + "\n")
    for mode in MODES:
        # every episode is listed, including the one whose file is absent
        shapes = {e["id"]: {"width": W, "height": H} for e in episodes}
        with open(os.path.join(root, "sam", mode, "manifest.json"), "w") as f:
            json.dump(shapes, f, indent=1, sort_keys=True)
            f.write("\n")
    return episodes


# ------------------------------------------------------------------ oracle

def counts(pred, gt):
    fi = fu = bi = bu = 0
    for y in range(H):
        for x in range(W):
            p, g = pred[y][x], gt[y][x]
            fi += p and g
            fu += p or g
            bi += (not p) and (not g)
            bu += (not p) or (not g)
    return [int(fi), int(fu), int(bi), int(bu)]


def ratio(i, u):
    return Fraction(1) if u == 0 else Fraction(i, u)


def score(preds, gts, classes):
    per_class = {c: [0, 0] for c in FOLD_CLASSES}
    tot = [0, 0, 0, 0]
    for pred, gt, c in zip(preds, gts, classes):
        k = counts(pred, gt)
        per_class[c][0] += k[0]
        per_class[c][1] += k[1]
        tot = [a + b for a, b in zip(tot, k)]
    miou = sum(ratio(*per_class[c]) for c in FOLD_CLASSES) / len(FOLD_CLASSES)
    fb = (ratio(tot[0], tot[1]) + ratio(tot[2], tot[3])) / 2
    return {
        "miou": float(miou),
        "fb_miou": float(fb),
        "totals": tot,
        "per_class": {str(c): per_class[c] for c in FOLD_CLASSES},
    }


def evaluate(episodes, root, mode, thresholds):
    gts, fss, classes, sams = [], [], [], []
    for i, e in enumerate(episodes):
        gts.append(load(os.path.join(root, e["query"]["gt_mask_ref"])))
        f = load(os.path.join(root, "fss", e["fss_mask_ref"]))
        fss.append(f)
        classes.append(e["class_id"])
        if not any(any(r) for r in f):
            sams.append("empty")
            continue
        path = os.path.join(root, "sam", mode, e["id"] + ".png")
        sams.append(load(path) if os.path.exists(path) else "error")

    rows = {}
    for t in thresholds:
        chosen, sources = [], []
        groups = {k: [0, 0, 0] for k in ("improved", "degraded", "unchanged")}
        for f, s, gt in zip(fss, sams, gts):
            if s == "empty" or s == "error":
                chosen.append(f)
                sources.append("FSS_fallback_" + s)
                sit, fin = "unchanged", f
            else:
                k = counts(s, f)
                iou_fs = ratio(k[0], k[1])
                take = iou_fs > t
                fin = s if take else f
                chosen.append(fin)
                sources.append("SAM" if take else "FSS")
                sit = "unchanged"
                if take:
                    cs, cf = counts(s, gt), counts(f, gt)
                    a, b = ratio(cs[0], cs[1]), ratio(cf[0], cf[1])
                    sit = "improved" if a > b else "degraded" if a < b else "unchanged"
            c = counts(fin, gt)
            g = groups[sit]
            g[0] += 1
            g[1] += c[0]
            g[2] += c[1]
        si = sum(g[1] for g in groups.values())
        su = sum(g[2] for g in groups.values())
        rows[str(float(t))] = {
            "selected": score(chosen, gts, classes),
            "sources": {k: sources.count(v) for k, v in (
                ("sam", "SAM"), ("fss", "FSS"),
                ("fallback_empty", "FSS_fallback_empty"), ("fallback_error", "FSS_fallback_error"))},
            "situations": groups,
            "fb_miou_s": float(Fraction(si, su)),
        }
    without = [f if isinstance(s, str) else s for f, s in zip(fss, sams)]
    return {
        "base": score(fss, gts, classes),
        "without_selection": score(without, gts, classes),
        "thresholds": rows,
    }


def main():
    root = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
        os.path.dirname(__file__), "..", "crates", "core", "tests", "fixtures", "golden")
    root = os.path.abspath(root)
    episodes = build(root)
    golden = {
        "run": {"prompt_mode": "box", "threshold": float(RUN_T),
                **evaluate(episodes, root, "box", [RUN_T])},
        "sweep": {"prompt_mode": "box", **evaluate(episodes, root, "box", GRID)},
        "ablate": {"threshold": float(RUN_T),
                   "modes": {m: evaluate(episodes, root, m, [RUN_T]) for m in MODES}},
    }
    with open(os.path.join(root, "golden.json"), "w") as f:
        json.dump(golden, f, indent=1, sort_keys=True)
        f.write("\n")
    print("golden fixture written to", root)


if __name__ == "__main__":
    main()
