"""Image and observation file formats.

Images go to a 16-bit binary PGM (values in ``[vmin, vmax]`` mapped
linearly onto ``0..65535``) plus a ``.txt`` sidecar with the exact floats,
one image row per line.  Observations are CSV tables with one row per ray.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

__all__ = ["write_pgm16", "read_pgm16", "read_sidecar", "write_image",
           "write_observation_csv", "read_observation_csv"]

OBSERVATION_COLUMNS = ("angle_index", "detector_index", "count", "log_sino", "weight")


def write_pgm16(path, image, vmin=0.0, vmax=1.0):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM needs a 2-D image")
    scaled = np.clip((img - vmin) / (vmax - vmin), 0.0, 1.0)
    data = np.round(scaled * 65535).astype(">u2")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm16(path):
    """Return the raw 16-bit samples of a binary PGM as a ``uint16`` array."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end].decode("ascii"))
        pos = end
    if tokens[0] != "P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(raw[pos + 1:], dtype=dtype, count=w * h)
    return data.reshape(h, w).astype(np.uint16)


def read_sidecar(path):
    return np.loadtxt(path, ndmin=2)


def write_image(stem, image, vmin=0.0, vmax=1.0):
    """Write ``stem.pgm`` and ``stem.txt``; returns both paths."""
    stem = Path(stem)
    pgm, txt = stem.with_suffix(".pgm"), stem.with_suffix(".txt")
    write_pgm16(pgm, image, vmin, vmax)
    np.savetxt(txt, np.asarray(image, dtype=np.float64), fmt="%.17g")
    return pgm, txt


def write_observation_csv(path, geom, obs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(OBSERVATION_COLUMNS)
        for a in range(geom.num_angles):
            for j in range(geom.num_detectors):
                i = geom.ray_index(a, j)
                w.writerow([a, j, int(obs.counts[i]), repr(float(obs.log_sino[i])),
                            repr(float(obs.weights[i]))])


def read_observation_csv(path):
    """Return a dict of column arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    for c in OBSERVATION_COLUMNS:
        kind = int if c in ("angle_index", "detector_index", "count") else float
        out[c] = np.array([kind(r[c]) for r in rows])
    return out
