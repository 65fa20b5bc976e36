"""Small shared writers: PGM heatmaps, CSV matrices, detection records."""

from __future__ import annotations

import csv

import numpy as np


def write_pgm(path, values):
    """8-bit binary PGM; ``values`` must already be scaled into [0, 1]."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"PGM wants a matrix, got shape {arr.shape}")
    pixels = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def write_matrix_csv(path, matrix):
    """Matrix as CSV with shortest-roundtrip float text (bit-exact reload)."""
    arr = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.atleast_2d(arr):
            writer.writerow([repr(float(x)) for x in row])


def read_matrix_csv(path):
    with open(path, newline="") as fh:
        rows = [[float(x) for x in row] for row in csv.reader(fh) if row]
    return np.asarray(rows, dtype=np.float64)


def write_detections(path, records):
    """Line-delimited detection/ground-truth records.

    Each record: image-id, class, score, then 8 box coordinates
    (human x0 y0 x1 y1, object x0 y0 x1 y1), comma separated.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for rec in records:
            image_id, class_id, score, hbox, obox = rec
            writer.writerow([image_id, class_id, repr(float(score))]
                            + [repr(float(v)) for v in hbox]
                            + [repr(float(v)) for v in obox])


def read_detections(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            if len(row) != 11:
                raise ValueError(f"detection record needs 11 fields, got {len(row)}")
            image_id = row[0]
            class_id = int(row[1])
            score = float(row[2])
            coords = [float(v) for v in row[3:]]
            out.append((image_id, class_id, score,
                        tuple(coords[:4]), tuple(coords[4:])))
    return out
