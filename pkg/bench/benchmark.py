"""Benchmark the compiled kernels against the interpreted fallback.

Runs the same workload twice in subprocesses, once with numba enabled and
once with XFERFM_DISABLE_NUMBA=1, and reports wall times for batch scoring
and SGD training epochs.  The fallback executes identical Python code
interpreted, so the ratio is the numba speedup.

Usage: python bench/benchmark.py [--events N] [--epochs N]
"""

import argparse
import json
import os
import subprocess
import sys
import textwrap

WORKLOAD = textwrap.dedent("""
    import json, time
    import numpy as np
    from xferfm.backend import NUMBA_ENABLED
    from xferfm.fm import score_packed
    from xferfm.synth import GenConfig, generate
    from xferfm.training import HyperParams, JOINT, MODE_JOINT, init_params, sgd_epoch

    events = {events}
    epochs = {epochs}
    cfg = GenConfig(seed=0, n_users=2000, n_publishers=500, n_ads=50,
                    n_web_events=events, n_ads_events=max(events // 25, 100))
    d_web, d_ads, space, _ = generate(cfg)
    hyper = HyperParams(alpha=0.5, eta=1.0, K=8, epochs=epochs, seed=0,
                        sigma2_w_web=1e4, sigma2_V_web=1e4,
                        sigma2_w_d=1e4, sigma2_V_d=1e4,
                        sigma2_w_ads_a=1e4, sigma2_V_ads_a=1e4)
    jm = init_params(space, hyper)

    # warm-up triggers numba compilation so it is not timed below
    score_packed(jm.web, d_web.packed())
    sgd_epoch(jm, d_web, d_ads, MODE_JOINT, epoch=0)

    t0 = time.perf_counter()
    for _ in range(5):
        score_packed(jm.web, d_web.packed())
    t_score = (time.perf_counter() - t0) / 5

    jm = init_params(space, hyper)
    t0 = time.perf_counter()
    for epoch in range(epochs):
        sgd_epoch(jm, d_web, d_ads, MODE_JOINT, epoch)
    t_sgd = (time.perf_counter() - t0) / epochs

    print(json.dumps({{"numba": NUMBA_ENABLED,
                       "score_s": t_score, "sgd_epoch_s": t_sgd,
                       "instances": len(d_web) + len(d_ads)}}))
""")


def run(disable_numba, events, epochs):
    env = dict(os.environ, XFERFM_DISABLE_NUMBA="1" if disable_numba else "0")
    code = WORKLOAD.format(events=events, epochs=epochs)
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=50_000,
                    help="CF events in the benchmark dataset")
    ap.add_argument("--epochs", type=int, default=3,
                    help="SGD epochs to time (fallback is slow; keep small)")
    args = ap.parse_args()

    print(f"workload: {args.events} CF events, K=8, {args.epochs} epochs")
    fast = run(False, args.events, args.epochs)
    if not fast["numba"]:
        print("warning: numba unavailable; both runs use the fallback")
    slow = run(True, args.events, args.epochs)

    n = fast["instances"]
    print(f"{'':18s}{'numba':>12s}{'fallback':>12s}{'speedup':>10s}")
    for key, label in (("score_s", "batch score"), ("sgd_epoch_s", "sgd epoch")):
        ratio = slow[key] / fast[key]
        print(f"{label:18s}{fast[key]:>11.4f}s{slow[key]:>11.4f}s{ratio:>9.1f}x")
    print(f"sgd throughput: {n / fast['sgd_epoch_s']:,.0f} (numba) vs "
          f"{n / slow['sgd_epoch_s']:,.0f} (fallback) instance-steps/s")


if __name__ == "__main__":
    main()
