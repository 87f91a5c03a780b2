"""Paired ablations on the same seed and budget: bidirectional vs causal
window attention, and triangular vs random per-frame noise levels.

    python3 scripts/ablations.py --cache .cache --out runs/ablations.json
"""

import argparse
import json
from pathlib import Path

from floodstream.config import RunConfig
from floodstream.pipeline import EVAL_FRAMES, EVAL_SCHEDULE, evaluate_streams, generate_streams, train_all


def variants():
    base = RunConfig()
    causal = RunConfig()
    causal.denoiser.attn_mode = "causal_window"
    rand = RunConfig()
    rand.schedule.kind = "random"
    return {"bidirectional_triangular": base, "causal_window": causal, "random_schedule": rand}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--cache", default=".cache")
    ap.add_argument("--out", default="runs/ablations.json")
    ap.add_argument("--streams", type=int, default=8)
    args = ap.parse_args()

    results = {}
    for name, cfg in variants().items():
        models = train_all(cfg, args.cache)
        streams = generate_streams(models, EVAL_SCHEDULE, EVAL_FRAMES, range(1000, 1000 + args.streams))
        results[name] = evaluate_streams(streams, EVAL_SCHEDULE)
        r = results[name]
        print(f"{name:26s} toy-FID {r['toy_fid']:.4f}  frame acc {r['frame_accuracy']:.3f}  PJ {r['pj']:.1f}")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(results, indent=2) + "\n")


if __name__ == "__main__":
    main()
