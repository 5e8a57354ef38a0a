#!/usr/bin/env python3
"""Smoke test for the `snh` extension module.

Builds the cdylib if needed, imports it, and runs a tiny end-to-end
pipeline: synthesize -> fit -> answer -> save/load -> baseline.
"""

import shutil
import subprocess
import sys
import sysconfig
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def locate_or_build_cdylib() -> Path:
    candidates = [
        REPO / "target" / profile / name
        for profile in ("debug", "release")
        for name in ("libsnh.so", "libsnh.dylib", "snh.dll")
    ]
    for c in candidates:
        if c.exists():
            return c
    subprocess.run(["cargo", "build", "-p", "snh-py"], cwd=REPO, check=True)
    for c in candidates:
        if c.exists():
            return c
    raise SystemExit("could not find the built snh cdylib")


def import_snh():
    lib = locate_or_build_cdylib()
    tmp = Path(tempfile.mkdtemp(prefix="snh-py-"))
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    shutil.copy(lib, tmp / f"snh{suffix}")
    sys.path.insert(0, str(tmp))
    import snh  # noqa: E402

    return snh


def main() -> None:
    snh = import_snh()

    region = snh.Region(0.0, 0.0, 800.0)
    assert region.side == 800.0

    data = snh.Dataset.uniform(2000, region, seed=7)
    assert len(data) == 2000

    model, audit = snh.fit_model(
        data, epsilon=1.0, rho=200.0, k=2, depth=2, width=8, epochs=50, seed=3
    )
    assert audit["point_reads"] == 2000
    assert audit["post_collection_reads"] == 0
    assert audit["compliant"]

    est = model.answer(300.0, 300.0, 100.0)
    assert est >= 0.0
    truth = data.true_count(300.0, 300.0, 100.0)
    err = snh.relative_error(est, float(truth), psi=0.001 * len(data))
    assert err >= 0.0

    with tempfile.TemporaryDirectory() as d:
        model.save(d)
        loaded = snh.Model.load(d)
        for q in [(0.0, 0.0, 50.0), (300.0, 300.0, 100.0), (700.0, 650.0, 75.0)]:
            assert loaded.answer(*q) == model.answer(*q)

    baseline = snh.fit_grid_baseline(data, epsilon=1.0, seed=5)
    assert baseline.cells_per_side >= 1
    assert baseline.answer(300.0, 300.0, 100.0) >= 0.0

    mix = snh.Dataset.gaussian_mixture(1000, region, components=3, sigma=60.0, seed=1)
    assert len(mix) == 1000

    print("smoke test ok: fit, answer, save/load, baseline all behave")


if __name__ == "__main__":
    main()
