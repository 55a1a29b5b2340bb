"""Smoke test for the `cgssl` extension module.

Build and run from the repository root:

    cargo build -p cgssl-py --release --features extension-module
    cp target/release/libcgssl_py.so python/cgssl.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import cgssl  # noqa: E402


def close(a, b, tol=1e-9):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    p = cgssl.softmax([1000.0, 0.0, -1000.0])
    assert close(p, [1.0, 0.0, 0.0]) and math.isclose(sum(p), 1.0)

    t = cgssl.compute_threshold([float(v) for v in range(1, 9)])
    assert math.isclose(t["gamma"], t["q1"] - 1.5 * t["iqr"])

    s = cgssl.sharpen([0.6, 0.4], 0.5)
    assert close(s, [0.36 / 0.52, 0.16 / 0.52])

    total, l_x, l_u = cgssl.mixmatch_loss([[0.0, 0.0]], [[1.0, 0.0]], [[0.0, 0.0]], [[1.0, 0.0]], 100.0)
    assert math.isclose(l_u, 0.25) and math.isclose(total, l_x + 25.0)

    _, targets, lambdas = cgssl.mixup([[1.0]], [[1.0, 0.0]], [[0.0]], [[0.0, 1.0]], 0.5, 3)
    assert lambdas[0] >= 0.5 and math.isclose(targets[0][0], lambdas[0])

    pixels, labels, ids = cgssl.toy_dataset(4, 5, 16, 0)
    assert len(pixels) == 20 and len(pixels[0]) == 16 * 16 * 3 and sorted(set(labels)) == [0, 1, 2, 3]
    d_l, d_v, d_ref = cgssl.toy_split(4, 5, 16, 0)
    assert (len(d_l), len(d_v), len(d_ref)) == (12, 4, 4)
    assert sorted(d_l + d_v + d_ref) == sorted(ids)

    cfg = cgssl.PipelineConfig.toy()
    cfg.set("mixmatch.beta=10")
    assert json.loads(cfg.to_json())["mixmatch"]["beta"] == 10
    try:
        cfg.set("mixmatch.no_such_key=1")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")

    with tempfile.TemporaryDirectory() as run_dir:
        assert cgssl.cli_main(["report", "--run-dir", run_dir]) == 1
        assert cgssl.cli_main(["no-such-command"]) == 2

    print("smoke test passed")


if __name__ == "__main__":
    main()
