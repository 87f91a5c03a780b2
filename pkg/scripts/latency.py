"""Steady-state step latency at two output lengths, with the per-step
window size and denoised-frame histograms.

    python3 scripts/latency.py --cache .cache --steps 2000
    python3 scripts/latency.py --untrained
"""

import argparse
import json

from floodstream.config import RunConfig
from floodstream.denoiser import Denoiser, PromptVocab
from floodstream.metrics import latency_bench
from floodstream.numeric import Rng
from floodstream.pipeline import train_all
from floodstream.vae import CausalVAE


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--cache", default=".cache")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--untrained", action="store_true", help="time freshly initialised models")
    ap.add_argument("--out", help="write both reports here as JSON")
    args = ap.parse_args()

    cfg = RunConfig()
    if args.untrained:
        vae = CausalVAE(cfg.vae_config(), Rng(0))
        den = Denoiser(cfg.denoiser_config(), PromptVocab(cfg.data.classes), Rng(0))
    else:
        m = train_all(cfg, args.cache)
        vae, den = m.vae, m.denoiser
    reports = {}
    for steps in (args.steps, 2 * args.steps):
        rep = latency_bench(den, vae, steps=steps, budget_ms=cfg.frame_budget_ms)
        reports[steps] = rep.to_json()
        j = reports[steps]
        print(f"{steps:6d} steps: p50 {j['p50_ms']:.2f} ms  p99 {j['p99_ms']:.2f} ms  max {j['max_ms']:.2f} ms  "
              f"violations {j['violations']}  window sizes {j['window_sizes']}  denoised {j['denoised_counts']}")
    r = reports[2 * args.steps]["p50_ms"] / reports[args.steps]["p50_ms"]
    print(f"p50 ratio at doubled length: {r:.3f}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump(reports, f, indent=2)


if __name__ == "__main__":
    main()
