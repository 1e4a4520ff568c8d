"""Smoke test for the parecon extension module.

Covers the forward/adjoint pair, the LUT and DAS, the solvers, metrics and
the on-disk dataset and golden-tensor formats the trainer reads.
"""

import json
import sys
import tempfile
from pathlib import Path

import numpy as np

import parecon


def check(cond, what):
    print(("ok    " if cond else "FAIL  ") + what)
    if not cond:
        sys.exit(1)


def read_bin(path, shape):
    data = np.fromfile(path, dtype="<f4")
    return data.reshape(shape)


def main():
    geo = parecon.ArrayGeometry(element_count=32)
    acq = parecon.AcquisitionParams(sample_count=512)
    grid = parecon.GridSpec(nz=64, nx=32, z_res=0.1e-3, x_res=0.1e-3)
    op = parecon.ForwardOperator(grid, geo, acq)

    rng = np.random.default_rng(0)
    x = rng.standard_normal(grid.shape)
    y = rng.standard_normal((acq.sample_count, geo.element_count))
    lhs = np.vdot(op.apply(x), y)
    rhs = np.vdot(x, op.adjoint(y))
    check(abs(lhs - rhs) <= 1e-6 * max(abs(lhs), abs(rhs)), "adjoint identity")

    img = np.zeros(grid.shape)
    img[30, 16] = 1.0
    frame = op.apply(img)
    lut = parecon.DelayLut(grid, geo, acq)
    t = lut.apply(frame)
    check(t.shape == (64, 32, 32), "delay tensor shape")
    das = parecon.das(t, geo, grid)
    peak = np.unravel_index(np.argmax(das), das.shape)
    check(abs(peak[0] - 30) <= 2 and abs(peak[1] - 16) <= 1, f"DAS peak at {peak}")

    mv, wsum = parecon.minimum_variance(t, geo, grid, subarray_length=16)
    check(np.allclose(wsum, 1.0, atol=1e-8), "MV unity gain")
    check(np.all(np.isfinite(parecon.dmas(t, geo, grid))), "DMAS finite")

    rec, obj = parecon.ista(frame, op, max_iters=10)
    check(rec.shape == grid.shape and all(b <= a * (1 + 1e-12) for a, b in zip(obj, obj[1:])),
          "ISTA objective non-increasing")
    check(parecon.kspace(frame, geo, acq, grid).shape == grid.shape, "k-space shape")

    check(abs(parecon.psnr(img, img * 0.9, 1.0) - 20 * np.log10(1 / np.sqrt(0.01 / img.size))) < 1e-9,
          "PSNR closed form")
    check(abs(parecon.ssim(das, das) - 1.0) < 1e-12, "SSIM identity")

    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "set"
        parecon.generate_dataset(str(out), 4, op, noise_std=1.0, seed=3)
        manifest = json.loads((out / "manifest.json").read_text())
        records = parecon.read_dataset(str(out))
        check(len(records) == 4, "dataset record count")
        first = manifest["records"][0]
        gt = read_bin(out / first["ground_truth"]["file"], first["ground_truth"]["shape"])
        check(np.allclose(gt, records[0]["ground_truth"].astype(np.float32)),
              "manifest + little-endian f32 layout")
        check(abs(np.mean([np.mean(r["ground_truth"] ** 2) for r in records]) - 1.0) < 1e-5,
              "unit mean ground-truth power")

    print("all checks passed")


if __name__ == "__main__":
    main()
