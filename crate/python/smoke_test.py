#!/usr/bin/env python3
"""Smoke test for the scwt Python extension.

Builds nothing itself: it locates the compiled cdylib under target/ (run
`cargo build -p scwt-python` first, or pass the path as argv[1]), loads it,
and exercises the main operations end to end on tiny inputs.
"""

import json
import math
import os
import shutil
import sys
import tempfile

import numpy as np


def load_module():
    here = os.path.dirname(os.path.abspath(__file__))
    root = os.path.dirname(here)
    candidates = []
    if len(sys.argv) > 1:
        candidates.append(sys.argv[1])
    for profile in ("release", "debug"):
        candidates.append(os.path.join(root, "target", profile, "libscwt.so"))
        candidates.append(os.path.join(root, "target", profile, "scwt.dll"))
        candidates.append(os.path.join(root, "target", profile, "libscwt.dylib"))
    lib = next((c for c in candidates if os.path.exists(c)), None)
    if lib is None:
        sys.exit("libscwt not found; run `cargo build -p scwt-python` first")
    stage_dir = tempfile.mkdtemp(prefix="scwt_py_")
    target = os.path.join(stage_dir, "scwt.so")
    shutil.copyfile(lib, target)
    sys.path.insert(0, stage_dir)
    import scwt

    return scwt


def main():
    scwt = load_module()
    checks = 0

    def ok(name, condition):
        nonlocal checks
        if not condition:
            sys.exit(f"FAIL: {name}")
        checks += 1
        print(f"ok {checks}: {name}")

    # average reference operator
    h = scwt.average_reference_operator(4)
    ok("H rows sum to zero", np.allclose(h.sum(axis=1), 0.0))
    ok("H idempotent", np.allclose(h @ h, h))

    # spherical lead field and localization round trip
    radius = 0.09
    rng = np.random.default_rng(5)
    sources, orients = [], []
    while len(sources) < 12:
        p = rng.uniform(-0.06, 0.06, 3)
        if np.linalg.norm(p) < 0.06:
            sources.append(p.tolist())
            q = rng.normal(size=3)
            orients.append((q / np.linalg.norm(q)).tolist())
    golden = (1 + 5 ** 0.5) / 2
    electrodes = []
    for i in range(16):
        z = 1 - 2 * (i + 0.5) / 16
        rho = math.sqrt(1 - z * z)
        phi = 2 * math.pi * ((i / golden) % 1.0)
        electrodes.append([radius * rho * math.cos(phi), radius * rho * math.sin(phi), radius * z])
    geometry = {
        "sphere_radius": radius,
        "conductivity": 0.33,
        "electrode_positions": electrodes,
        "source_positions": sources,
        "source_orientations": orients,
    }
    gain = scwt.build_lead_field(json.dumps(geometry))
    ok("lead field shape", gain.shape == (16, 12))

    lam = scwt.regularization_parameter(gain, 1e3)
    kernel = scwt.min_norm_kernel(gain, lam, standardized=True)
    ok("kernel shape", kernel.shape == (12, 16))
    truth = 7
    estimate = kernel @ gain[:, truth]
    ok("planted dipole localized", int(np.argmax(np.abs(estimate))) == truth)

    # Morlet scalogram: peak scale tracks the sine frequency
    fs = 512.0
    t = np.arange(128) / fs
    x = np.sin(2 * math.pi * 12.0 * t)
    scalogram = scwt.cwt_scalogram(x, fs)
    ok("scalogram shape", scalogram.shape == (128, 128))
    scales = np.array(scwt.wavelet_scales(fs))
    peak_row = int(np.argmax((scalogram ** 2).sum(axis=1)))
    expected_row = int(np.argmin(np.abs(scales - 6.0 / (2 * math.pi * 12.0))))
    ok("peak scale within one bin", abs(peak_row - expected_row) <= 1)

    # epoch to left/right images
    epoch = rng.normal(size=(128, 6))
    left, right = scwt.epoch_to_images(epoch)
    ok("image shapes", left.shape == (128, 128, 3) and right.shape == (128, 128, 3))
    ok("images normalized", 0.0 <= left.min() and left.max() <= 1.0)

    # class weights reproduce the reported values
    w = scwt.compute_class_weights([15408, 12048, 21648])
    ok("class weights", abs(w[0] - 1.405) < 1e-3 and abs(w[1] - 1.797) < 1e-3 and w[2] == 1.0)

    # fusion arithmetic
    pred, _ = scwt.fuse_product([0.6, 0.3, 0.1], [0.2, 0.5, 0.3])
    ok("product fusion picks class 1", pred == 1)
    pred, scores = scwt.fuse_sum([0.6, 0.3, 0.1], [0.6, 0.3, 0.1])
    ok("sum fusion agreement", pred == 0 and abs(scores[0] - 0.6) < 1e-12)
    fused = scwt.tensor_fusion_vector([1.0, 2.0], [3.0, 4.0])
    ok("tensor fusion vector", fused == [3.0, 4.0, 1.0, 6.0, 8.0, 2.0, 3.0, 4.0, 1.0])

    # tensor container round trip
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "vec.scwt")
        data = rng.normal(size=32)
        scwt.write_tensor(path, data)
        back = scwt.read_tensor(path)
        ok("container round trip", np.array_equal(back, data))

    # a couple of pipeline stages end to end
    config = {
        "geometry": {"n_electrodes": 20, "sources_per_region": 2, "n_background_sources": 6},
        "cohort": {"subjects_per_class": 1, "duration_s": 1.0, "noise_sigma": 0.0},
    }
    with tempfile.TemporaryDirectory() as d:
        for stage in ("simulate", "preprocess", "localize", "scout", "epoch"):
            scwt.run_pipeline_stage(stage, d, json.dumps(config))
        manifest = json.load(open(os.path.join(d, "epoch", "epochs.json")))
        ok("pipeline epochs", all(s["n_epochs"] == 4 for s in manifest["subjects"]))

    print(f"\nsmoke test passed: {checks} checks")


if __name__ == "__main__":
    main()
