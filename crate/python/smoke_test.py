"""Smoke test for the gsdiff Python extension.

Build first:
    cargo build --release -p gsdiff-py --features extension-module
then run this script; it finds the built library under target/.
"""

import json
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def import_gsdiff():
    try:
        import gsdiff  # noqa: F401
        return gsdiff
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = os.path.join(ROOT, "target", profile, "libgsdiff_py.so")
        if os.path.exists(lib):
            stage = tempfile.mkdtemp()
            shutil.copy(lib, os.path.join(stage, "gsdiff.so"))
            sys.path.insert(0, stage)
            import gsdiff
            return gsdiff
    sys.exit("gsdiff extension not built")


def main():
    gs = import_gsdiff()

    cam = gs.Camera.look_at([0.0, -1.0, -4.0], [0.0, 0.0, 0.0], 40.0, 32, 24)
    assert (cam.width, cam.height) == (32, 24)

    g = gs.Gaussian([0.0, 0.0, 0.0], [math.log(0.3)] * 3, [1.0, 0.0, 0.0, 0.0], 2.0, [1.0, 0.5, -0.5])
    out = gs.render([g], cam)
    assert len(out["color"]) == 32 * 24 * 3 and len(out["depth"]) == 32 * 24
    assert max(out["color"]) > 0.1
    empty = gs.render([], cam, background=[0.2, 0.4, 0.6])
    assert empty["color"][:3] == [0.2, 0.4, 0.6]

    assert gs.psnr(out["color"], out["color"], 32, 24) == math.inf
    assert abs(gs.ssim(out["color"], out["color"], 32, 24) - 1.0) < 1e-12

    keys = [[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, float(i)] for i in range(3)]
    mid = gs.interpolate_pose(keys, 1.5)
    assert abs(mid[6] - 1.5) < 1e-9

    try:
        gs.Gaussian([0.0] * 3, [0.0] * 3, [0.0] * 4, 0.0, [0.0] * 3)
        raise AssertionError("zero quaternion accepted")
    except ValueError:
        pass

    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, "scene")
        gs.synthesize(data, gaussians=30, views=5, size=24, held_out=[2])
        config = json.dumps({"iterations": 10, "model": "direct", "seed": 3})
        tr = gs.Trainer(data, config, oracle="gt")
        steps = tr.train(10)
        assert len(steps) == 10 and tr.iteration == 10
        assert all(math.isfinite(s["total"]) for s in steps)
        scores = tr.evaluate()
        assert list(scores) == ["view_002"]

        ckpt = os.path.join(tmp, "model.gsdf")
        tr.save(ckpt)
        back = gs.Trainer.load(ckpt, data)
        a = tr.render(tr.cameras()[0])["color"]
        b = back.render(back.cameras()[0])["color"]
        assert a == b

        try:
            gs.Trainer(data, json.dumps({"bogus": 1}))
            raise AssertionError("unknown config key accepted")
        except ValueError:
            pass

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
