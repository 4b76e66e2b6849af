"""Smoke test for the `linknet` Python extension.

Imports an installed `linknet` module if there is one; otherwise builds the
extension with cargo and loads it from a temporary directory.
"""

import math
import os
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def import_linknet(tmp):
    try:
        import linknet  # noqa: F401

        return linknet
    except ImportError:
        pass
    subprocess.run(
        ["cargo", "build", "--release", "-p", "linknet-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = "liblinknet.dylib" if sys.platform == "darwin" else "liblinknet.so"
    shutil.copy(os.path.join(ROOT, "target", "release", lib), os.path.join(tmp, "linknet.so"))
    sys.path.insert(0, tmp)
    import linknet

    return linknet


def main():
    with tempfile.TemporaryDirectory() as tmp:
        ln = import_linknet(tmp)

        full = ln.LinkNet(20, 512, 1024)
        assert full.param_count() == 11_535_764, full.param_count()
        blocks = {name: (i[0], o[0]) for name, i, o, _ in full.summary()}
        assert blocks["enc4"] == (256, 512) and blocks["dec4"] == (512, 256), blocks
        assert ln.LinkNet(20, 512, 1024, bypass=False).param_count() == full.param_count()
        h, w = ln.padded_size(360, 640)
        assert (h, w) == (384, 640)
        cost = ln.LinkNet(20, h, w).cost()
        assert cost["flops"] == 2 * cost["macs"]
        print("params", full.param_count(), "GFLOPs", cost["flops"] / 1e9)

        try:
            ln.LinkNet(4, 100, 64)
        except ValueError as e:
            assert "multiples of 32" in str(e)
        else:
            raise AssertionError("indivisible size accepted")

        w0, w1 = ln.class_weights([0.0, 1.0])
        assert abs(w0 - 1 / math.log(1.02)) < 1e-12 and abs(w1 - 1 / math.log(2.02)) < 1e-12

        per_class, miou = ln.iou([0, 0, 1, 1], [0, 1, 1, 1], 2)
        assert per_class == [0.5, 2 / 3] and abs(miou - (0.5 + 2 / 3) / 2) < 1e-12

        checks = ln.gradcheck(0)
        assert all(ok for _, _, ok in checks), checks

        data = os.path.join(tmp, "toy")
        ln.make_toy_data(data, 8, 32, 32, 3, seed=1)
        model = ln.LinkNet(3, 32, 32, width_divisor=8, seed=2)
        log = model.fit(data, epochs=2, seed=2)
        assert len(log) == 2 and all(math.isfinite(loss) for _, loss, _ in log)
        miou, _ = model.evaluate(data)
        assert miou == log[-1][2], (miou, log)

        path = os.path.join(tmp, "m.lkpt")
        model.save(path)
        again = ln.LinkNet.load(path)
        x = [0.5] * (2 * 3 * 32 * 32)
        assert model.logits(x, [2, 3, 32, 32]) == again.logits(x, [2, 3, 32, 32])
        labels, shape = again.predict(x, [2, 3, 32, 32])
        assert shape == [2, 32, 32] and set(labels) <= {0, 1, 2}
        print(repr(again))
    print("python smoke test passed")


if __name__ == "__main__":
    main()
