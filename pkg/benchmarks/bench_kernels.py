"""Race the numba-compiled integration kernels against the numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--steps N] [--batch M] [--repeats R]

The compiled lane times the public kernels in this process; the fallback lane
re-runs the same workloads in a subprocess with ANTHRACTL_BACKEND=numpy, so
each side is exactly what a user of that backend gets (backend selection is
frozen at import time).  The subprocess also returns its output arrays, and
the table reports the worst elementwise disagreement per kernel, so the race
doubles as a backend consistency check.  Without numba only the fallback lane
is timed.
"""

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time

import numpy as np

from anthractl import _kernels as K


# ---------------------------------------------------------------------------
#  Workloads
# ---------------------------------------------------------------------------

def _single_args(n_steps: int):
    # seasonal-burst forcing, sampled control on 11 knots
    u_t = np.linspace(0.0, 1.0, 11)
    u_v = 0.3 + 0.4 * np.sin(np.pi * u_t)
    return (0.2, 0.5, 0.0, 0.0, 1.0 / n_steps, n_steps,
            0.6, 1.0, 1.0,
            K.FORCING_SEASONAL, 4.0, 0.75, 0.2,
            K.FORCING_CONST, 0.5, 0.0, 0.0,
            K.FORCING_PROPORTIONAL, 0.1, 0.0, 0.0,
            1.0, u_t, u_v)


def _batch_args(m: int, n_steps: int):
    rng = np.random.default_rng(7)
    x0 = np.column_stack([np.full(m, 0.2),
                          rng.uniform(0.2, 0.6, m),
                          np.zeros(m)])
    scal = np.column_stack([rng.uniform(0.1, 0.8, m),      # theta1
                            np.full(m, 1.0),               # theta2
                            np.full(m, 1.0)])              # v_max
    codes = np.zeros((m, 3), dtype=np.int64)
    codes[:, 0] = np.where(rng.random(m) < 0.5,
                           K.FORCING_CONST, K.FORCING_SEASONAL)
    codes[:, 2] = K.FORCING_PROPORTIONAL
    q = np.zeros((m, 3, 3))
    q[:, 0, 0] = rng.uniform(0.5, 3.0, m)   # alpha amplitude
    q[:, 0, 1] = rng.uniform(0.0, 1.0, m)   # seasonal center
    q[:, 0, 2] = rng.uniform(0.2, 1.0, m)   # seasonal period
    q[:, 1, 0] = rng.uniform(0.1, 0.8, m)   # beta
    q[:, 2, 0] = rng.uniform(0.0, 0.1, m)   # gamma
    eta0 = np.full(m, 1.0)
    u_t = np.linspace(0.0, 1.0, 11)
    u_vals = rng.uniform(0.0, 1.0, (m, 11))
    return (x0, 0.0, 1.0 / n_steps, n_steps, scal, codes, q, eta0, u_t, u_vals)


def _coupled_args(n_steps: int):
    dummy = np.zeros(1)
    return (0.2, 0.76, 0.0, 1.0 / n_steps, n_steps, 0.6, 1.0,
            K.FORCING_SEASONAL, 4.0, 0.75, 0.2, dummy, dummy)


def _workloads(args):
    return [
        ("host_rk4_single", K.host_rk4_single,
         _single_args(args.steps), f"{args.steps} steps"),
        ("host_rk4_batch", K.host_rk4_batch,
         _batch_args(args.batch, args.batch_steps),
         f"{args.batch} scenarios x {args.batch_steps} steps"),
        ("coupled_rk4", K.coupled_rk4,
         _coupled_args(args.steps), f"{args.steps} steps, event location"),
    ]


# ---------------------------------------------------------------------------
#  Timing
# ---------------------------------------------------------------------------

def _best_of(fn, call_args, repeats: int) -> float:
    fn(*call_args)  # warmup: JIT compilation / allocator effects off the clock
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*call_args)
        best = min(best, time.perf_counter() - t0)
    return best


def _run_lane(args):
    """Time every workload on the active backend; return times and outputs."""
    times, outputs = {}, {}
    for name, fn, call_args, _ in _workloads(args):
        times[name] = _best_of(fn, call_args, args.repeats)
        outputs[name] = [np.asarray(a, dtype=float) for a in fn(*call_args)]
    return times, outputs


def _fallback_lane_via_subprocess(args, npz_path: str):
    env = dict(os.environ, ANTHRACTL_BACKEND="numpy")
    cmd = [sys.executable, os.path.abspath(__file__),
           "--steps", str(args.steps), "--batch", str(args.batch),
           "--batch-steps", str(args.batch_steps),
           "--repeats", str(args.repeats),
           "--dump", npz_path]
    subprocess.run(cmd, check=True, env=env,
                   stdout=subprocess.DEVNULL, stderr=None)
    with np.load(npz_path, allow_pickle=False) as data:
        times = json.loads(str(data["times_json"]))
        outputs = {}
        for name in times:
            arrs = []
            i = 0
            while f"{name}_{i}" in data:
                arrs.append(data[f"{name}_{i}"])
                i += 1
            outputs[name] = arrs
    return times, outputs


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=20_000,
                    help="time steps per trajectory (default 20000)")
    ap.add_argument("--batch", type=int, default=256,
                    help="scenarios in the batched sweep (default 256)")
    ap.add_argument("--batch-steps", type=int, default=1_000,
                    help="time steps in the batched sweep (default 1000)")
    ap.add_argument("--repeats", type=int, default=5,
                    help="timing repeats, best-of (default 5)")
    ap.add_argument("--dump", metavar="NPZ", default=None,
                    help=argparse.SUPPRESS)  # internal: write lane results
    args = ap.parse_args()

    times, outputs = _run_lane(args)

    if args.dump is not None:
        payload = {"times_json": json.dumps(times)}
        for name, arrs in outputs.items():
            for i, a in enumerate(arrs):
                payload[f"{name}_{i}"] = a
        np.savez(args.dump, **payload)
        return

    print(f"backend: {K.backend_name()} (numba importable: {K.HAVE_NUMBA})")
    header = (f"{'kernel':<18} {'workload':<34} {'numba':>10} "
              f"{'numpy':>10} {'speedup':>8} {'agree':>9}")
    if K.backend_name() != "numba":
        # already on the fallback: nothing to race against
        print("numba lane unavailable; fallback timings only\n")
        print(f"{'kernel':<18} {'workload':<34} {'numpy':>10}")
        for name, _, _, workload in _workloads(args):
            print(f"{name:<18} {workload:<34} {times[name] * 1e3:>8.1f}ms")
        return

    with tempfile.TemporaryDirectory() as tmp:
        fb_times, fb_outputs = _fallback_lane_via_subprocess(
            args, os.path.join(tmp, "fallback.npz"))

    print(header)
    print("-" * len(header))
    for name, _, _, workload in _workloads(args):
        agree = max(float(np.max(np.abs(a - b)))
                    for a, b in zip(outputs[name], fb_outputs[name]))
        t_nb, t_np = times[name], fb_times[name]
        print(f"{name:<18} {workload:<34} {t_nb * 1e3:>8.1f}ms "
              f"{t_np * 1e3:>8.1f}ms {t_np / t_nb:>7.1f}x {agree:>9.1e}")


if __name__ == "__main__":
    main()
