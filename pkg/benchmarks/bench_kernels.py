"""Compiled kernels vs the numpy fallback.

Times each hot kernel at the shapes the default classifier sees with batch 32,
then one full training step (forward + backward + update) per backend.  The
step timing runs in a subprocess per backend, since the backend is fixed at
import time.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from stylemix import _fallback

try:
    from stylemix import _kernels
except ImportError:
    _kernels = None

# (B, C, H, W, stride) at the input of each conv of the default network
CONV_SHAPES = [(32, 3, 32, 32, 2), (32, 8, 16, 16, 2), (32, 16, 8, 8, 2), (32, 32, 4, 4, 1)]
MOMENT_SHAPES = [(32, 8, 16, 16), (32, 16, 8, 8), (32, 32, 4, 4)]

STEP_SNIPPET = """
import json, sys, timeit
import numpy as np
from stylemix import kernels
from stylemix import autodiff as ad, layers
from stylemix.config import ExperimentConfig
from stylemix.nets import build_classifier
from stylemix.trainer import sgd_step
cfg = ExperimentConfig()
model = build_classifier(cfg.classifier_config(), 0)
params = list(model.params.values())
vel = [np.zeros_like(p.value) for p in params]
rng = np.random.default_rng(0)
x = rng.random((32, 3, 32, 32)) - 0.5
y = rng.integers(0, 5, 32)
def step():
    loss = layers.softmax_cross_entropy(model.forward(x, training=True, rng=rng), y)
    sgd_step(params, ad.backward(loss, params), vel, 0.01, 0.9, 5e-4)
best = min(timeit.repeat(step, number=5, repeat=int(sys.argv[1]))) / 5
print(json.dumps({"backend": kernels.BACKEND, "step_ms": 1e3 * best}))
"""


def best_ms(fn, repeat):
    fn()
    return 1e3 * min(timeit.repeat(fn, number=10, repeat=repeat)) / 10


def step_time(pure: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("STYLEMIX_PURE_PYTHON", None)
    if pure:
        env["STYLEMIX_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET, str(repeat)], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34}{'cython ms':>11}{'numpy ms':>11}{'speedup':>9}")
    for B, C, H, W, s in CONV_SHAPES:
        x = rng.random((B, C, H, W))
        fast = best_ms(lambda: _kernels.im2col(x, 3, s, 1), args.repeat)
        slow = best_ms(lambda: _fallback.im2col(x, 3, s, 1), args.repeat)
        print(f"{f'im2col {(B, C, H, W)} s{s}':<34}{fast:11.3f}{slow:11.3f}{slow / fast:9.2f}")
        cols = _fallback.im2col(x, 3, s, 1)
        fast = best_ms(lambda: _kernels.col2im(cols, x.shape, 3, s, 1), args.repeat)
        slow = best_ms(lambda: _fallback.col2im(cols, x.shape, 3, s, 1), args.repeat)
        print(f"{f'col2im {(B, C, H, W)} s{s}':<34}{fast:11.3f}{slow:11.3f}{slow / fast:9.2f}")
    for shape in MOMENT_SHAPES:
        x = rng.random(shape)
        fast = best_ms(lambda: _kernels.spatial_moments(x), args.repeat)
        slow = best_ms(lambda: _fallback.spatial_moments(x), args.repeat)
        print(f"{f'moments {shape}':<34}{fast:11.3f}{slow:11.3f}{slow / fast:9.2f}")
    fast, slow = step_time(False, args.repeat), step_time(True, args.repeat)
    assert fast["backend"] == "cython" and slow["backend"] == "python"
    print(f"{'train step, B=32':<34}{fast['step_ms']:11.3f}{slow['step_ms']:11.3f}{slow['step_ms'] / fast['step_ms']:9.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
