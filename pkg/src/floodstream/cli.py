"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 training divergence, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, json_schema
from .denoiser import Denoiser, PromptVocab
from .errors import ConfigError, DivergenceError, MotionFormatError, PromptError
from .metrics import area_under_jerk, iis_som, jerk_profile, latency_bench, peak_jerk, toy_fid
from .motion import read_motion, read_prompt_schedule, write_motion
from .numeric import Rng, load_checkpoint
from .pipeline import build_dataset, make_denoiser_trainer
from .streaming import StreamEngine, run_stream
from .training import LatentPool
from .vae import CausalVAE, VaeTrainer

log = logging.getLogger("floodstream")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
MANIFEST = "manifest.json"


class IOFailure(Exception):
    pass


# ---------------------------------------------------------------- helpers

def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    cfg.with_env()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    for flag, (section, key) in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(getattr(cfg, section) if section else cfg, key, value)
    cfg.validate()
    return cfg


_OVERRIDES = {
    "steps_vae": ("vae", "steps"),
    "steps_denoiser": ("denoiser", "steps"),
    "per_class": ("data", "per_class"),
    "classes": ("data", "classes"),
    "attn_mode": ("denoiser", "attn_mode"),
    "schedule_kind": ("schedule", "kind"),
    "n_s": ("schedule", "n_s"),
    "dt": ("schedule", "dt"),
    "budget_ms": (None, "frame_budget_ms"),
}


def load_dataset(data_dir) -> list:
    data_dir = Path(data_dir)
    manifest = data_dir / MANIFEST
    if not manifest.exists():
        raise IOFailure(f"dataset not found: {manifest} is missing (run `floodstream gen-data --out {data_dir}`)")
    entries = json.loads(manifest.read_text())["files"]
    return [read_motion(data_dir / e["file"]) for e in entries]


def read_dir(path) -> list:
    path = Path(path)
    if not path.is_dir():
        raise IOFailure(f"not a directory: {path}")
    files = sorted(path.glob("*.fsmo"))
    if not files:
        raise IOFailure(f"no .fsmo files in {path}")
    return [read_motion(f) for f in files]


def write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    print(text)


def load_models(args):
    for p in (args.vae, args.denoiser):
        if not Path(p).exists():
            raise IOFailure(f"checkpoint not found: {p}")
    vae, _, _ = CausalVAE.load(args.vae)
    den, _, _ = Denoiser.load(args.denoiser)
    return vae, den


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    cfg = load_config(args)
    out = Path(args.out)
    seqs = build_dataset(cfg, Rng(cfg.seed).fork("data"))
    files = []
    for i, seq in enumerate(seqs):
        name = f"clip_{i:05d}_{seq.prompts[0][1]}.fsmo"
        write_motion(seq, out / name)
        files.append({"file": name, "prompts": [list(e) for e in seq.prompts], "n_frames": len(seq)})
    (out / MANIFEST).write_text(json.dumps({"seed": cfg.seed, "files": files}, indent=1) + "\n")
    cfg.dump(out / "config.json")
    print(f"wrote {len(files)} sequences to {out}")
    return EXIT_OK


def cmd_train_vae(args) -> int:
    cfg = load_config(args)
    dataset = load_dataset(args.data)
    rng = Rng(cfg.seed).fork("vae")
    if args.resume:
        vae, meta, tensors = CausalVAE.load(args.resume)
    else:
        vae, meta, tensors = CausalVAE(cfg.vae_config(), rng.fork("init")), None, None
    trainer = VaeTrainer(vae, rng.fork("train"), lr=cfg.vae.lr, batch=cfg.vae.batch, clip_len=cfg.vae.clip_len)
    if meta is not None:
        trainer.restore(meta, tensors)
    remaining = max(0, cfg.vae.steps - trainer.step)
    trainer.run(dataset, remaining)
    if trainer.step:
        vae.fit_latent_stats(dataset)
    trainer.save(args.out)
    trainer.log.write_csv(Path(args.out).with_suffix(".csv"))
    print(f"VAE trained to step {trainer.step}; saved {args.out}")
    return EXIT_OK


def cmd_train_denoiser(args) -> int:
    cfg = load_config(args)
    dataset = load_dataset(args.data)
    if not Path(args.vae).exists():
        raise IOFailure(f"checkpoint not found: {args.vae}")
    vae, _, _ = CausalVAE.load(args.vae)
    vocab = PromptVocab(cfg.data.classes)
    pool = LatentPool.from_sequences(vae, dataset, vocab, cfg.schedule.K)
    trainer = make_denoiser_trainer(cfg, vocab)
    if args.resume:
        tensors, meta = load_checkpoint(args.resume)
        trainer.model.p.load(tensors)
        trainer.restore(meta, tensors)
    trainer.run(pool, max(0, cfg.denoiser.steps - trainer.step))
    trainer.save(args.out)
    trainer.log.write_csv(Path(args.out).with_suffix(".csv"))
    print(f"denoiser trained to step {trainer.step}; saved {args.out}")
    return EXIT_OK


def cmd_stream(args) -> int:
    cfg = load_config(args)
    vae, den = load_models(args)
    schedule = read_prompt_schedule(args.schedule)
    missing = [p for _, p in schedule.entries if p not in den.vocab]
    if missing:
        raise PromptError(f"schedule uses prompts {missing} outside the vocabulary {den.vocab.prompts}")
    engine = StreamEngine(den, vae, n_s=cfg.schedule.n_s, dt=cfg.schedule.dt, seed=cfg.seed,
                          frame_budget_ms=cfg.frame_budget_ms)
    seq, latency = run_stream(engine, schedule, args.frames)
    write_motion(seq, args.out)
    report = latency.to_json()
    write_json(report, args.report or str(Path(args.out).with_suffix(".latency.json")))
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["frame", "prompt"] + [f"c{c}" for c in range(seq.D)])
            for i, row in enumerate(seq.frames):
                w.writerow([i, schedule.prompt_at(i), *map(float, row)])
    return EXIT_OK


def cmd_eval(args) -> int:
    load_config(args)
    samples, reference = read_dir(args.samples), read_dir(args.reference)
    if samples[0].D != reference[0].D:
        raise ConfigError(f"channel count differs: samples D={samples[0].D}, reference D={reference[0].D}")
    fid = toy_fid(samples, reference)
    pj = float(np.mean([peak_jerk(jerk_profile(s)) for s in samples]))
    auj = float(np.mean([area_under_jerk(jerk_profile(s)) for s in samples]))
    write_json({"toy_fid": fid, "pj": pj, "auj": auj, "iis_som": iis_som(fid, pj),
                "n_samples": len(samples), "n_reference": len(reference)}, args.out)
    return EXIT_OK


def cmd_bench_latency(args) -> int:
    cfg = load_config(args)
    if args.untrained:
        vae = CausalVAE(cfg.vae_config(), Rng(cfg.seed).fork("vae"))
        den = Denoiser(cfg.denoiser_config(), PromptVocab(cfg.data.classes), Rng(cfg.seed).fork("denoiser"))
    else:
        if not (args.vae and args.denoiser):
            raise ConfigError("bench-latency needs --vae and --denoiser, or --untrained")
        vae, den = load_models(args)
    report = latency_bench(den, vae, steps=args.steps, n_s=cfg.schedule.n_s, dt=cfg.schedule.dt,
                           budget_ms=cfg.frame_budget_ms, seed=cfg.seed)
    write_json(report.to_json(), args.out)
    return EXIT_OK


def cmd_schema(args) -> int:
    write_json(json_schema(), args.out)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="floodstream", description="Streaming text-steered motion generation (toy scale).")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run config; flags override its values")
        sp.add_argument("--seed", type=int, help="random seed (beats FLOOD_SEED, which beats the config file)")

    sp = sub.add_parser("gen-data", help="write a procedural dataset")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--per-class", type=int, help="sequences per class")
    sp.add_argument("--classes", nargs="*", help="class names to generate")
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train-vae", help="train the causal VAE")
    common(sp)
    sp.add_argument("--data", required=True, help="dataset directory from gen-data")
    sp.add_argument("--out", required=True, help="checkpoint path (log CSV goes next to it)")
    sp.add_argument("--steps", dest="steps_vae", type=int, help="total optimizer steps")
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.set_defaults(fn=cmd_train_vae)

    sp = sub.add_parser("train-denoiser", help="train the latent denoiser")
    common(sp)
    sp.add_argument("--data", required=True, help="dataset directory from gen-data")
    sp.add_argument("--vae", required=True, help="trained VAE checkpoint")
    sp.add_argument("--out", required=True, help="checkpoint path (metrics CSV goes next to it)")
    sp.add_argument("--steps", dest="steps_denoiser", type=int, help="total optimizer steps")
    sp.add_argument("--attn-mode", choices=["bidirectional_window", "causal_window"])
    sp.add_argument("--schedule-kind", choices=["triangular", "random", "chunk"])
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.set_defaults(fn=cmd_train_denoiser)

    sp = sub.add_parser("stream", help="generate motion following a prompt schedule")
    common(sp)
    sp.add_argument("--vae", required=True)
    sp.add_argument("--denoiser", required=True)
    sp.add_argument("--schedule", required=True, help="JSON-lines prompt schedule")
    sp.add_argument("--frames", type=int, required=True, help="motion frames to emit")
    sp.add_argument("--out", required=True, help="output .fsmo file")
    sp.add_argument("--report", help="latency report JSON (default: next to --out)")
    sp.add_argument("--csv", help="optional per-frame channel trace CSV")
    sp.add_argument("--n-s", type=float, help="frames per unit time on the ramp")
    sp.add_argument("--dt", type=float, help="solver step")
    sp.add_argument("--budget-ms", type=float, help="per-step latency budget")
    sp.set_defaults(fn=cmd_stream)

    sp = sub.add_parser("eval", help="toy-FID, jerk metrics and somatic score")
    common(sp)
    sp.add_argument("--samples", required=True, help="directory of generated .fsmo files")
    sp.add_argument("--reference", required=True, help="directory of reference .fsmo files")
    sp.add_argument("--out", help="report JSON path")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("bench-latency", help="time steady-state streaming steps")
    common(sp)
    sp.add_argument("--vae")
    sp.add_argument("--denoiser")
    sp.add_argument("--untrained", action="store_true", help="use freshly initialised models")
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--budget-ms", type=float)
    sp.add_argument("--n-s", type=float)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--out", help="report JSON path")
    sp.set_defaults(fn=cmd_bench_latency)

    sp = sub.add_parser("config-schema", help="print the JSON schema of --config files")
    sp.add_argument("--out", help="write the schema here as well")
    sp.set_defaults(fn=cmd_schema)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, PromptError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (IOFailure, OSError, MotionFormatError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
