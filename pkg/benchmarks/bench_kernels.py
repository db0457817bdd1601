"""Compare the numba kernels with the interpreted fallback.

Each workload runs once in a child process with numba enabled and once with
``LEVYFLUID_DISABLE_NUMBA=1``.  The child reports its wall time (after a
warm-up call, so compilation is excluded) and a checksum of the result; the
checksums must agree because both paths consume the same random stream.

    python3 benchmarks/bench_kernels.py [--scale 0.1]
"""

import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from levyfluid import _accel
from levyfluid.levy_core import JumpDistribution as J, NetInputModel
from levyfluid.queue_sim import QueueModel, make_rng, stationary_samples, killed_sample, kella_whitt_batch, simulate_first_passage

scale = float(sys.argv[1])
net = NetInputModel(0.0, 0.5, J.exponential(1.0), 1.0)
model = QueueModel(net, failure_rate=0.2, repair_law=J.exponential(2.0), vacation_law=J.deterministic(1.0))

work = {
    "stationary_samples": lambda n, rng: np.asarray(stationary_samples(model, n, rng)),
    "killed_sample": lambda n, rng: killed_sample(model, 1.0, 0.5, rng, size=n),
    "kella_whitt_batch": lambda n, rng: kella_whitt_batch(model, [0.5, 1.0, 2.0], [1.0, 10.0], n, rng),
    "first_passage": lambda n, rng: simulate_first_passage(net, 1.0, rng, size=n),
}
sizes = {"stationary_samples": 20000, "killed_sample": 50000, "kella_whitt_batch": 5000, "first_passage": 50000}
out = {"numba": _accel.NUMBA_ENABLED}
for name, fn in work.items():
    n = max(int(sizes[name] * scale), 10)
    fn(10, make_rng(0))  # compile / warm up
    start = time.perf_counter()
    res = fn(n, make_rng(1))
    out[name] = {"n": n, "seconds": time.perf_counter() - start, "checksum": float(np.sum(res))}
print(json.dumps(out))
"""


def run_child(scale, disable):
    env = dict(os.environ)
    if disable:
        env["LEVYFLUID_DISABLE_NUMBA"] = "1"
    else:
        env.pop("LEVYFLUID_DISABLE_NUMBA", None)
    proc = subprocess.run(
        [sys.executable, "-c", CHILD, str(scale)], env=env, capture_output=True, text=True, check=True
    )
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scale", type=float, default=0.1, help="fraction of the full workload sizes")
    args = parser.parse_args(argv)
    fast = run_child(args.scale, disable=False)
    slow = run_child(args.scale, disable=True)
    print(f"{'kernel':<20} {'n':>7} {'numba [s]':>10} {'python [s]':>11} {'speedup':>8}  checksums")
    status = 0
    for name in ("stationary_samples", "killed_sample", "kella_whitt_batch", "first_passage"):
        a, b = fast[name], slow[name]
        same = a["checksum"] == b["checksum"]
        status |= not same
        print(
            f"{name:<20} {a['n']:>7} {a['seconds']:>10.4f} {b['seconds']:>11.4f} "
            f"{b['seconds'] / a['seconds']:>7.1f}x  {'equal' if same else 'DIFFER'}"
        )
    if not fast["numba"]:
        print("note: numba unavailable, both columns ran interpreted")
    return status


if __name__ == "__main__":
    sys.exit(main())
