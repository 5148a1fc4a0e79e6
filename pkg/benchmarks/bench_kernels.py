"""Compare the compiled kernels with the numpy fallback.

Times the two hot kernels at the sizes the sampler uses, plus one full Gibbs
sweep on the desk-scale scenario under each backend, and checks that both
backends agree numerically.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from supplyshare._kernels import _pykernels

try:
    from supplyshare._kernels import _ckernels
except ImportError:
    _ckernels = None


def _blocks(P=12, D=11, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((P, D, D))
    prec = a @ np.swapaxes(a, 1, 2) + D * np.eye(D)
    lin = rng.standard_normal((P, D))
    z = rng.standard_normal((P, D))
    c = np.zeros((P, D))
    c[:, 1:] = 1.0
    return prec, lin, z, c


def _basis_inputs():
    knots = np.concatenate([[1990.0] * 4, np.arange(1995.0, 2030.0, 5.0), [2030.0] * 4])
    return knots, 3, np.arange(1990.0, 2031.0)


def bench_kernels(repeat):
    prec, lin, z, c = _blocks()
    knots, degree, x = _basis_inputs()
    cases = {
        "sample_blocks (12 blocks, D=11)": lambda m: m.sample_blocks(prec, lin, z),
        "sample_blocks + constraint": lambda m: m.sample_blocks(prec, lin, z, c),
        "bspline_basis (41 years, 11 fns)": lambda m: m.bspline_basis(knots, degree, x),
    }
    print(f"{'kernel':36s} {'python (us)':>12s} {'cython (us)':>12s} {'speed-up':>9s}")
    for name, fn in cases.items():
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=repeat, repeat=5)) / repeat * 1e6
        if _ckernels is None:
            print(f"{name:36s} {t_py:12.1f} {'n/a':>12s}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=repeat, repeat=5)) / repeat * 1e6
        np.testing.assert_allclose(fn(_ckernels), fn(_pykernels), rtol=1e-10, atol=1e-12)
        print(f"{name:36s} {t_py:12.1f} {t_c:12.1f} {t_py / t_c:8.1f}x")


SWEEP_SCRIPT = """
import time
from supplyshare._kernels import BACKEND
from supplyshare.simulation import desk_truth, simulate
from supplyshare.sampler import SamplerConfig, run_chains
res = simulate(desk_truth(seed=1))
cfg = SamplerConfig(iterations=2200, burn_in=200, thin=20, chains=1)
t = time.perf_counter()
run_chains("multivariate_intercept", res.logit_data, cfg)
print(BACKEND, (time.perf_counter() - t) / cfg.iterations * 1e3)
"""


def bench_sweep():
    print("\nfull Gibbs sweep, desk-scale scenario (ms per sweep)")
    for pure in ("0", "1"):
        env = dict(os.environ, SUPPLYSHARE_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", SWEEP_SCRIPT], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"  {out[0]:8s} {float(out[1]):.3f}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--repeat", type=int, default=2000)
    args = parser.parse_args()
    bench_kernels(args.repeat)
    bench_sweep()


if __name__ == "__main__":
    main()
