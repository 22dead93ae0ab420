#!/usr/bin/env python3
"""Convert MATLAB .mat hyperspectral scenes to the bacnn HSC1/LBL1 containers.

    python3 tools/convert_mat.py Indian_pines_corrected.mat Indian_pines_gt.mat out/
    python3 tools/convert_mat.py KSC.mat KSC_gt.mat out/ --cube-key KSC --labels-key KSC_gt

Without --cube-key/--labels-key the single non-metadata array in each file is used.
"""

import argparse
import pathlib
import sys

import numpy as np
import scipy.io


def only_array(mat, key, path):
    if key is not None:
        return np.asarray(mat[key])
    keys = [k for k in mat if not k.startswith("__")]
    if len(keys) != 1:
        sys.exit(f"{path}: several arrays ({', '.join(keys)}); pick one with a --*-key option")
    return np.asarray(mat[keys[0]])


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("cube_mat")
    ap.add_argument("labels_mat")
    ap.add_argument("out_dir")
    ap.add_argument("--cube-key")
    ap.add_argument("--labels-key")
    args = ap.parse_args()

    cube = only_array(scipy.io.loadmat(args.cube_mat), args.cube_key, args.cube_mat)
    labels = only_array(scipy.io.loadmat(args.labels_mat), args.labels_key, args.labels_mat)
    if cube.ndim != 3 or labels.ndim != 2 or cube.shape[:2] != labels.shape:
        sys.exit(f"shape mismatch: cube {cube.shape}, labels {labels.shape}")
    if labels.min() < 0 or labels.max() > 65535:
        sys.exit("labels must fit in uint16")

    h, w, c = cube.shape
    k = int(labels.max())
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "cube.hsc", "wb") as f:
        f.write(f"HSC1 {h} {w} {c}\n".encode())
        f.write(np.ascontiguousarray(cube, dtype="<f4").tobytes())
    with open(out / "labels.lbl", "wb") as f:
        f.write(f"LBL1 {h} {w} {k}\n".encode())
        f.write(np.ascontiguousarray(labels, dtype="<u2").tobytes())
    print(f"{h}x{w}x{c} cube, {k} classes, {int((labels > 0).sum())} labeled pixels -> {out}")


if __name__ == "__main__":
    main()
