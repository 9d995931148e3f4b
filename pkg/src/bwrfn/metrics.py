"""Trial scoring and detection metrics: cosine backend, EER, minDCF.

EER is computed at the crossing of the false-acceptance and false-rejection
step curves, with linear interpolation between the two bracketing operating
points. minDCF is the minimum normalized detection cost over all thresholds.
Both are invariant to strictly increasing transforms of the scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, FormatError, MetricError


@dataclass(frozen=True)
class Trial:
    enroll_id: str
    test_id: str
    target: bool

    def __post_init__(self):
        if not self.enroll_id or not self.test_id:
            raise FormatError("trial ids must be non-empty")


@dataclass(frozen=True)
class ScoredTrial:
    trial: Trial
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise DomainError(f"non-finite score for trial {self.trial}")


@dataclass(frozen=True)
class DcfParams:
    p_target: float = 0.05
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p_target < 1.0:
            raise ConfigError("p_target must be in (0, 1)")
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise ConfigError("costs must be positive")


def cosine_score(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError(f"embedding dims differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cannot score a zero-norm embedding")
    return float(np.dot(a, b) / (na * nb))


def _split_scores(scored: list[ScoredTrial]):
    tar = np.array([s.score for s in scored if s.trial.target], dtype=np.float64)
    non = np.array([s.score for s in scored if not s.trial.target], dtype=np.float64)
    if len(tar) == 0 or len(non) == 0:
        raise MetricError("need at least one target and one nontarget trial")
    return tar, non


def _rates_at(thresholds: np.ndarray, tar: np.ndarray, non: np.ndarray):
    """FRR/FAR step curves with the accept rule score >= threshold."""
    tar_sorted = np.sort(tar)
    non_sorted = np.sort(non)
    frr = np.searchsorted(tar_sorted, thresholds, side="left") / len(tar)
    far = 1.0 - np.searchsorted(non_sorted, thresholds, side="left") / len(non)
    return frr, far


def _operating_points(tar: np.ndarray, non: np.ndarray):
    """Thresholds at score midpoints plus extremes, ascending."""
    scores = np.unique(np.concatenate([tar, non]))
    mids = (scores[:-1] + scores[1:]) / 2.0
    lo = scores[0] - 1.0
    hi = scores[-1] + 1.0
    return np.concatenate(([lo], mids, [hi]))


def compute_eer(scored: list[ScoredTrial]) -> tuple[float, float]:
    """EER and its threshold via interpolation where FRR crosses FAR."""
    tar, non = _split_scores(scored)
    th = _operating_points(tar, non)
    frr, far = _rates_at(th, tar, non)
    diff = frr - far
    # diff is non-decreasing in the threshold; find the first sign change
    idx = int(np.searchsorted(diff > 0, True))
    if idx == 0:
        return float(frr[0]), float(th[0])
    if diff[idx - 1] == 0.0:
        return float(frr[idx - 1]), float(th[idx - 1])
    d0, d1 = diff[idx - 1], diff[idx]
    t = d0 / (d0 - d1)  # d0 < 0 <= d1
    eer = frr[idx - 1] + t * (frr[idx] - frr[idx - 1])
    thr = th[idx - 1] + t * (th[idx] - th[idx - 1])
    return float(eer), float(thr)


def compute_min_dcf(scored: list[ScoredTrial],
                    params: DcfParams = DcfParams()) -> tuple[float, float]:
    """Minimum normalized detection cost over all thresholds."""
    tar, non = _split_scores(scored)
    th = _operating_points(tar, non)
    frr, far = _rates_at(th, tar, non)
    c_miss = params.c_miss * params.p_target
    c_fa = params.c_fa * (1.0 - params.p_target)
    dcf = (c_miss * frr + c_fa * far) / min(c_miss, c_fa)
    idx = int(np.argmin(dcf))
    return float(dcf[idx]), float(th[idx])


def parse_trials(path: str) -> list[Trial]:
    """One trial per line: "<enroll_id> <test_id> <target|nontarget>"."""
    trials: list[Trial] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[2] not in ("target", "nontarget"):
                raise FormatError(f"{path}: malformed trial on line {lineno}: {line.rstrip()!r}")
            trials.append(Trial(parts[0], parts[1], parts[2] == "target"))
    return trials


def write_scores(path: str, scored: list[ScoredTrial]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in scored:
            fh.write(f"{s.trial.enroll_id} {s.trial.test_id} {s.score:.6f}\n")
