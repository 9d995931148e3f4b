"""Seeded synthetic multi-domain speaker data.

Domain identity is injected along the frequency axis: each domain applies a
per-frequency affine map (offset + scale) to a fixed per-speaker spectral
template carrying per-utterance temporal modulation, plus white noise. The
affine form is the simplest effect that instance frequency-wise
normalization provably removes and plain layer normalization does not. The
last domain is reserved as the unseen split.

Manifest format: one line per utterance, tab-separated:
utt_id, speaker_id, domain_id, feature-cache path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .metrics import Trial
from .rng import substream


@dataclass
class DomainSpec:
    domain_id: int
    offset: np.ndarray  # (F,) domain-mean additive offset
    scale: np.ndarray   # (F,) domain-mean multiplicative scale, positive
    noise_level: float
    offset_spread: float = 0.0  # per-utterance offset std around the mean
    scale_log_spread: float = 0.0  # per-utterance log-scale std around the mean

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        if np.any(self.scale <= 0):
            raise ConfigError("domain scales must be positive")


@dataclass
class Utterance:
    utt_id: str
    speaker_id: int
    domain_id: int
    features: np.ndarray  # (1, F, T)


@dataclass
class DomainDataset:
    utterances: list[Utterance]
    domains: list[DomainSpec]
    seen_domains: frozenset
    unseen_domains: frozenset

    def __post_init__(self):
        if self.seen_domains & self.unseen_domains:
            raise ConfigError("seen and unseen domains must be disjoint")

    def split(self, which: str) -> list[Utterance]:
        if which == "seen":
            keep = self.seen_domains
        elif which == "unseen":
            keep = self.unseen_domains
        elif which == "overall":
            keep = self.seen_domains | self.unseen_domains
        else:
            raise ConfigError(f"unknown split {which!r}")
        return [u for u in self.utterances if u.domain_id in keep]


def gen_dataset(num_speakers: int, num_domains: int, utts_per_pair: int,
                freq_bins: int, frames: int, seed: int,
                noise_level: float = 0.1, offset_std: float = 2.0,
                scale_log_std: float = 0.5, offset_spread: float = 1.0,
                scale_log_spread: float = 0.3,
                domain_specs: list[DomainSpec] | None = None) -> DomainDataset:
    """Generate utterances for every (speaker, domain) pair, seeded.

    Speaker identity is a fixed spectral template; each utterance modulates
    it with a random smooth temporal envelope. A domain is a distribution
    over per-utterance affine frequency maps: each utterance draws an
    offset/scale around the domain mean (think recording sessions of one
    device class), then white noise is added. Instance frequency-wise
    normalization removes any per-utterance affine map exactly; networks
    without it must learn robustness from the seen domains alone.
    """
    if num_domains < 2 or num_speakers < 2:
        raise ConfigError("need at least 2 speakers and 2 domains")
    if utts_per_pair < 1:
        raise ConfigError("need at least 1 utterance per (speaker, domain) pair")
    dom_rng = substream(seed, "domains")
    spk_rng = substream(seed, "speakers")
    utt_rng = substream(seed, "utterances")

    if domain_specs is None:
        domain_specs = []
        for d in range(num_domains):
            domain_specs.append(
                DomainSpec(
                    domain_id=d,
                    offset=dom_rng.normal(0.0, offset_std, size=freq_bins),
                    scale=np.exp(dom_rng.normal(0.0, scale_log_std, size=freq_bins)),
                    noise_level=noise_level,
                    offset_spread=offset_spread,
                    scale_log_spread=scale_log_spread,
                )
            )
    elif len(domain_specs) != num_domains:
        raise ConfigError("domain_specs length must equal num_domains")

    templates = spk_rng.normal(0.0, 1.0, size=(num_speakers, freq_bins))
    utterances: list[Utterance] = []
    for spk in range(num_speakers):
        for d, spec in enumerate(domain_specs):
            for u in range(utts_per_pair):
                mod_freq = utt_rng.uniform(0.5, 3.0)
                phase = utt_rng.uniform(0.0, 2.0 * np.pi)
                env = 1.0 + 0.3 * np.sin(
                    2.0 * np.pi * mod_freq * np.arange(frames) / frames + phase
                )
                base = templates[spk][:, None] * env[None, :]
                offset_u = spec.offset
                scale_u = spec.scale
                if spec.offset_spread > 0:
                    offset_u = offset_u + utt_rng.normal(
                        0.0, spec.offset_spread, size=freq_bins
                    )
                if spec.scale_log_spread > 0:
                    scale_u = scale_u * np.exp(
                        utt_rng.normal(0.0, spec.scale_log_spread, size=freq_bins)
                    )
                x = offset_u[:, None] + scale_u[:, None] * base
                if spec.noise_level > 0:
                    x = x + utt_rng.normal(0.0, spec.noise_level, size=x.shape)
                utterances.append(
                    Utterance(
                        utt_id=f"s{spk:03d}_d{d}_u{u:02d}",
                        speaker_id=spk,
                        domain_id=d,
                        features=x[None, :, :],
                    )
                )
    return DomainDataset(
        utterances=utterances,
        domains=domain_specs,
        seen_domains=frozenset(range(num_domains - 1)),
        unseen_domains=frozenset({num_domains - 1}),
    )


def make_trials(dataset: DomainDataset, split: str, num_trials: int,
                seed: int) -> list[Trial]:
    """Balanced target/nontarget pairs within a split; no self-pairs."""
    utts = dataset.split(split)
    if not utts:
        raise DataError(f"split {split!r} is empty")
    rng = substream(seed, f"trials:{split}")
    by_speaker: dict[int, list[Utterance]] = {}
    for u in utts:
        by_speaker.setdefault(u.speaker_id, []).append(u)
    multi = [s for s, us in by_speaker.items() if len(us) >= 2]
    if not multi or len(by_speaker) < 2:
        raise DataError(f"split {split!r} too small for target and nontarget trials")
    n_target = num_trials // 2
    n_nontarget = num_trials - n_target
    trials: list[Trial] = []
    for _ in range(n_target):
        spk = multi[rng.integers(len(multi))]
        a, b = rng.choice(len(by_speaker[spk]), size=2, replace=False)
        trials.append(Trial(by_speaker[spk][a].utt_id, by_speaker[spk][b].utt_id, True))
    speakers = sorted(by_speaker)
    for _ in range(n_nontarget):
        sa, sb = rng.choice(len(speakers), size=2, replace=False)
        ua = by_speaker[speakers[sa]][rng.integers(len(by_speaker[speakers[sa]]))]
        ub = by_speaker[speakers[sb]][rng.integers(len(by_speaker[speakers[sb]]))]
        trials.append(Trial(ua.utt_id, ub.utt_id, False))
    return trials


def write_dataset(dataset: DomainDataset, out_dir) -> str:
    """Write feature caches plus the manifest; returns the manifest path."""
    import os

    from .frontend import write_feature_cache

    cache_dir = os.path.join(str(out_dir), "caches")
    os.makedirs(cache_dir, exist_ok=True)
    manifest = os.path.join(str(out_dir), "manifest.tsv")
    with open(manifest, "w", encoding="utf-8") as fh:
        for u in dataset.utterances:
            path = os.path.join(cache_dir, f"{u.utt_id}.bwf")
            write_feature_cache(path, u.features[0])
            fh.write(f"{u.utt_id}\t{u.speaker_id}\t{u.domain_id}\t{path}\n")
    return manifest


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    speaker_id: int
    domain_id: int
    cache_path: str


def read_manifest(path: str) -> list[ManifestEntry]:
    from .errors import FormatError

    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise FormatError(f"{path}: malformed manifest line {lineno}")
            entries.append(
                ManifestEntry(parts[0], int(parts[1]), int(parts[2]), parts[3])
            )
    return entries


def write_trials(path: str, trials: list[Trial]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            label = "target" if t.target else "nontarget"
            fh.write(f"{t.enroll_id} {t.test_id} {label}\n")
