"""Command-line entry point.

Subcommands: synth, train, extract, eval, gradcheck. All randomness flows
from one config seed through named substreams, so two runs with the same
config produce byte-identical primary outputs.

Exit codes: 0 success, 1 usage/config, 2 data/format, 3 numeric.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import struct
import sys

import numpy as np

from . import metrics, synth
from .autodiff import Tensor
from .errors import (BwrfnError, ConfigError, DataError, DomainError,
                     FormatError, MetricError, NumericError, ShapeError,
                     UsageError)
from .frontend import read_feature_cache
from .network import NetworkConfig, build, load_checkpoint, save_checkpoint
from .norm import NoiseMode
from .rng import substream
from .train import TrainConfig, train
from .verify import run_suite

DEFAULT_CONFIG = {
    "version": 1,
    "seed": 1234,
    "synth": {
        "num_speakers": 20,
        "num_domains": 4,
        "utts_per_pair": 3,
        "freq_bins": 40,
        "frames": 32,
        "noise_level": 0.1,
        "offset_std": 1.5,
        "scale_log_std": 0.4,
        "offset_spread": 0.5,
        "scale_log_spread": 0.15,
        "num_trials": 200,
    },
    "network": {
        "norm_variant": "none",
        "insertion_points": [],
        "channels": [4, 8, 16, 32],
        "embedding_dim": 32,
        "lam": 0.5,
        "epsilon": 1e-5,
    },
    "train": {
        "epochs": 30,
        "batch_size": 30,
        "lr_init": 0.05,
        "momentum": 0.9,
        "weight_decay": 1e-4,
        "lr_decay_factor": 0.1,
        "lr_decay_every_epochs": 10,
        "mc_samples": 1,
        "kl_scale_mode": "per-example",
    },
    "dcf": {"p_target": 0.05, "c_miss": 1.0, "c_fa": 1.0},
}


def _merge_strict(defaults: dict, overrides: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in overrides.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            out[key] = _merge_strict(defaults[key], value, path + key + ".")
        else:
            out[key] = value
    return out


def load_run_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    if doc.get("version") != 1:
        raise ConfigError(f"unsupported config version {doc.get('version')!r}")
    return _merge_strict(DEFAULT_CONFIG, doc)


# -- embedding files -----------------------------------------------------

def write_embedding(path: str, utt_id: str, vec: np.ndarray) -> None:
    name = utt_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(name)))
        fh.write(name)
        fh.write(struct.pack("<I", vec.size))
        fh.write(np.asarray(vec, dtype="<f8").tobytes())


def read_embedding(path: str) -> tuple[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    (nlen,) = struct.unpack_from("<I", raw, 0)
    utt_id = raw[4 : 4 + nlen].decode("utf-8")
    (dim,) = struct.unpack_from("<I", raw, 4 + nlen)
    vec = np.frombuffer(raw, dtype="<f8", count=dim, offset=8 + nlen)
    return utt_id, vec.copy()


# -- subcommands ---------------------------------------------------------

def cmd_synth(config: dict, out_dir: str) -> int:
    sc = config["synth"]
    dataset = synth.gen_dataset(
        num_speakers=sc["num_speakers"],
        num_domains=sc["num_domains"],
        utts_per_pair=sc["utts_per_pair"],
        freq_bins=sc["freq_bins"],
        frames=sc["frames"],
        seed=config["seed"],
        noise_level=sc["noise_level"],
        offset_std=sc["offset_std"],
        scale_log_std=sc["scale_log_std"],
        offset_spread=sc["offset_spread"],
        scale_log_spread=sc["scale_log_spread"],
    )
    os.makedirs(out_dir, exist_ok=True)
    manifest = synth.write_dataset(dataset, out_dir)
    for split in ("seen", "unseen", "overall"):
        trials = synth.make_trials(dataset, split, sc["num_trials"], config["seed"])
        synth.write_trials(os.path.join(out_dir, f"trials_{split}.txt"), trials)
    print(f"utterances\t{len(dataset.utterances)}")
    print(f"speakers\t{sc['num_speakers']}")
    print(f"domains\t{sc['num_domains']} (unseen: {sorted(dataset.unseen_domains)})")
    print(f"manifest\t{manifest}")
    return 0


def _load_split(config: dict, manifest_path: str, which: str):
    entries = synth.read_manifest(manifest_path)
    unseen = config["synth"]["num_domains"] - 1
    if which == "seen":
        entries = [e for e in entries if e.domain_id != unseen]
    elif which == "unseen":
        entries = [e for e in entries if e.domain_id == unseen]
    feats = np.stack([read_feature_cache(e.cache_path) for e in entries])
    return entries, feats[:, None, :, :]


def _network_config(config: dict, num_speakers: int, in_freq: int) -> NetworkConfig:
    nc = config["network"]
    return NetworkConfig(
        num_speakers=num_speakers,
        in_freq=in_freq,
        norm_variant=nc["norm_variant"],
        insertion_points=tuple(nc["insertion_points"]),
        channels=tuple(nc["channels"]),
        embedding_dim=nc["embedding_dim"],
        lam=nc["lam"],
        epsilon=nc["epsilon"],
    )


def cmd_train(config: dict, manifest_path: str, out_ckpt: str) -> int:
    entries, feats = _load_split(config, manifest_path, "seen")
    if not entries:
        raise DataError("no seen-domain utterances in manifest")
    speakers = sorted({e.speaker_id for e in entries})
    label_of = {s: i for i, s in enumerate(speakers)}
    labels = np.array([label_of[e.speaker_id] for e in entries])
    net_cfg = _network_config(config, len(speakers), feats.shape[2])
    tc = config["train"]
    train_cfg = TrainConfig(seed=config["seed"], **tc)
    net = build(net_cfg, substream(config["seed"], "init"))
    log = train(net, feats, labels, train_cfg)
    save_checkpoint(net, out_ckpt)
    with open(out_ckpt + ".log", "w", encoding="utf-8") as fh:
        for stats in log:
            line = stats.line()
            print(line)
            fh.write(line + "\n")
    return 0


def cmd_extract(config: dict, ckpt_path: str, manifest_path: str,
                out_dir: str, mode: str) -> int:
    net = load_checkpoint(ckpt_path)
    entries = synth.read_manifest(manifest_path)
    os.makedirs(out_dir, exist_ok=True)
    if mode == "mean":
        mc_k = 0
    elif mode.startswith("mc:"):
        mc_k = int(mode[3:])
        if mc_k < 1:
            raise ConfigError("mc:K needs K >= 1")
    else:
        raise ConfigError(f"unknown extract mode {mode!r}, want mean or mc:K")
    rng = substream(config["seed"], "extract")
    for e in entries:
        feats = read_feature_cache(e.cache_path)[None, None, :, :]
        if feats.shape[2] != net.config.in_freq:
            raise FormatError(
                f"{e.utt_id}: feature dim {feats.shape[2]} != network F {net.config.in_freq}"
            )
        x = Tensor(feats)
        if mc_k:
            emb = net.extract_embedding_mc(x, mc_k, rng)[0]
        else:
            emb = net.extract_embedding(x, NoiseMode.mean())[0]
        write_embedding(os.path.join(out_dir, f"{e.utt_id}.emb"), e.utt_id, emb)
    print(f"embeddings\t{len(entries)}\t{out_dir}")
    return 0


def evaluate_trials(emb_dir: str, trials: list[metrics.Trial],
                    dcf: metrics.DcfParams):
    cache: dict[str, np.ndarray] = {}

    def emb(utt_id: str) -> np.ndarray:
        if utt_id not in cache:
            path = os.path.join(emb_dir, f"{utt_id}.emb")
            if not os.path.exists(path):
                raise DataError(f"no embedding for trial id {utt_id!r}")
            _, vec = read_embedding(path)
            cache[utt_id] = vec
        return cache[utt_id]

    scored = [
        metrics.ScoredTrial(t, metrics.cosine_score(emb(t.enroll_id), emb(t.test_id)))
        for t in trials
    ]
    eer, eer_thr = metrics.compute_eer(scored)
    min_dcf, dcf_thr = metrics.compute_min_dcf(scored, dcf)
    return scored, eer, eer_thr, min_dcf, dcf_thr


def cmd_eval(config: dict, emb_dir: str, trials_path: str, out_scores: str | None) -> int:
    dcf = metrics.DcfParams(**config["dcf"])
    trials = metrics.parse_trials(trials_path)
    scored, eer, eer_thr, min_dcf, dcf_thr = evaluate_trials(emb_dir, trials, dcf)
    if out_scores:
        metrics.write_scores(out_scores, scored)
    print(f"EER%\t{eer * 100:.2f}\tthreshold\t{eer_thr:.6f}")
    print(f"minDCF\t{min_dcf:.4f}\tthreshold\t{dcf_thr:.6f}")
    return 0


def cmd_gradcheck(config: dict, tol: float | None, tol_kl: float | None) -> int:
    results = run_suite(
        seed=config["seed"],
        tol_layers=tol if tol is not None else 1e-4,
        tol_kl=tol_kl if tol_kl is not None else 1e-6,
    )
    ok = True
    for r in results:
        print(r.line())
        ok = ok and r.ok
    return 0 if ok else 3


# -- argument parsing ----------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bwrfn", description=__doc__.splitlines()[0])
    p.add_argument("--config", metavar="PATH", help="JSON run config (version 1)")
    p.add_argument("--seed", type=int, metavar="U64", help="override the config seed")
    p.add_argument("--out", metavar="PATH", help="output path (per subcommand)")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", help="generate a synthetic multi-domain dataset")

    pt = sub.add_parser("train", help="train a network on seen-domain utterances")
    pt.add_argument("--data", required=True, metavar="MANIFEST")

    pe = sub.add_parser("extract", help="extract one embedding per utterance")
    pe.add_argument("--ckpt", required=True)
    pe.add_argument("--data", required=True, metavar="MANIFEST")
    pe.add_argument("--mode", default="mean", metavar="mean|mc:K")

    pv = sub.add_parser("eval", help="score a trial list and report EER/minDCF")
    pv.add_argument("--emb", required=True, metavar="DIR")
    pv.add_argument("--trials", required=True, metavar="PATH")
    pv.add_argument("--scores", metavar="PATH", help="write per-trial score file")

    pg = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    pg.add_argument("--tol", type=float, help="relative tolerance for layers/network")
    pg.add_argument("--tol-kl", type=float, help="relative tolerance for the KL term")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = load_run_config(args.config)
        if args.seed is not None:
            config["seed"] = args.seed
        if args.command == "synth":
            if not args.out:
                raise UsageError("synth requires --out DIR")
            return cmd_synth(config, args.out)
        if args.command == "train":
            if not args.out:
                raise UsageError("train requires --out CHECKPOINT")
            return cmd_train(config, args.data, args.out)
        if args.command == "extract":
            if not args.out:
                raise UsageError("extract requires --out DIR")
            return cmd_extract(config, args.ckpt, args.data, args.out, args.mode)
        if args.command == "eval":
            return cmd_eval(config, args.emb, args.trials, args.scores)
        if args.command == "gradcheck":
            return cmd_gradcheck(config, args.tol, args.tol_kl)
        raise UsageError(f"unknown command {args.command!r}")
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FormatError, ShapeError, MetricError, DomainError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except BwrfnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
