#!/usr/bin/env python3
"""Smoke test for the icrt_py extension module.

Builds nothing itself: expects `cargo build --release -p icrt-py` to have
produced target/release/libicrt_py.so. Copies the shared object next to a
temp dir so `import icrt_py` works, then exercises geometry, the simulator,
the scripted expert, and dataset generation.
"""

import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module():
    candidates = [
        os.path.join(ROOT, "target", "release", "libicrt_py.so"),
        os.path.join(ROOT, "target", "debug", "libicrt_py.so"),
    ]
    src = next((c for c in candidates if os.path.exists(c)), None)
    if src is None:
        sys.exit("libicrt_py.so not found; run: cargo build --release -p icrt-py")
    stage = tempfile.mkdtemp(prefix="icrt_py_")
    shutil.copy(src, os.path.join(stage, "icrt_py.so"))
    sys.path.insert(0, stage)
    import icrt_py

    return icrt_py


def approx(a, b, tol=1e-9):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    m = load_module()

    # geometry round trip
    r6 = m.rot6d_from_matrix([[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    assert r6 == [1, 0, 0, 0, 1, 0], r6
    back = m.matrix_from_rot6d([2, 0, 0, 1, 1, 0])
    assert approx(back[0], [1, 0, 0]) and approx(back[2], [0, 0, 1]), back

    # schedule endpoints
    assert m.lr_at(1e-3, 100, 1100, 100) == 1e-3
    assert m.lr_at(1e-3, 100, 1100, 1100) == 0.0
    mid = m.lr_at(1e-3, 100, 1100, 600)
    assert abs(mid - 0.5e-3) < 1e-12, mid

    # deterministic scenes and rendering
    s1 = m.Scene("poke:yellow_sphere", 3, 42)
    s2 = m.Scene("poke:yellow_sphere", 3, 42)
    assert s1.render("side") == s2.render("side")
    assert len(s1.render("wrist")) == m.IMG_SIZE * m.IMG_SIZE * 3

    # expert rollout reaches success
    scene = m.Scene("pick_place:red_cube>gray_bowl", 2, 7)
    for _ in range(120):
        if scene.expert_done():
            break
        proprio, done = scene.step(scene.expert_action())
        assert len(proprio) == 10
        if done:
            break
    assert scene.score() == 1.0, f"expert score {scene.score()}"

    # dataset generation + info
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "smoke.bin")
        sha = m.generate_dataset(path, demos_per_task=4, seed=9)
        assert len(sha) == 64
        info = m.dataset_info(path)
        assert len(info) == 10 and all(n == 4 for _, n in info), info

    # gripper proprio layout sanity: [t(3) | rot6d(6) | gripper]
    p = scene.proprio()
    assert abs(p[3] - 1.0) < 1e-6 and 0.0 <= p[9] <= 1.0

    print("smoke test: all checks passed")


if __name__ == "__main__":
    main()
