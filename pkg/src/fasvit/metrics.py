"""Presentation-attack detection metrics.

Convention: bona fide is the positive class and a sample is accepted as live
iff ``score >= threshold``. Candidate thresholds are the observed scores
plus the midpoints between consecutive distinct scores.
"""

from __future__ import annotations

import csv
import enum
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

BONA_FIDE = 1
ATTACK = 0


class Split(str, enum.Enum):
    TRAIN = "TRAIN"
    DEV = "DEV"
    TEST = "TEST"


@dataclass
class ScoreSet:
    ids: list[str]
    labels: np.ndarray  # 1 = bona fide, 0 = attack
    scores: np.ndarray
    split: Split = Split.TEST

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.ids = [str(i) for i in self.ids]
        if not (len(self.ids) == self.labels.size == self.scores.size):
            raise ValueError("ids, labels and scores must have equal length")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("sample ids must be unique within a split")
        if not set(np.unique(self.labels)) <= {0, 1}:
            raise ValueError("labels must be 0 (attack) or 1 (bona fide)")

    @classmethod
    def from_arrays(cls, labels, scores, split: Split = Split.TEST) -> "ScoreSet":
        labels = np.asarray(labels)
        return cls([f"{i}" for i in range(labels.size)], labels, scores, split)

    @property
    def attack_scores(self) -> np.ndarray:
        return self.scores[self.labels == ATTACK]

    @property
    def bona_scores(self) -> np.ndarray:
        return self.scores[self.labels == BONA_FIDE]

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(("id", "label", "score"))
            for i, l, s in zip(self.ids, self.labels, self.scores):
                wr.writerow((i, "BONA_FIDE" if l == BONA_FIDE else "ATTACK", repr(float(s))))

    @classmethod
    def load(cls, path, split: Split = Split.TEST) -> "ScoreSet":
        ids, labels, scores = [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                lab = row["label"].strip().upper()
                if lab in ("BONA_FIDE", "1", "LIVE"):
                    labels.append(BONA_FIDE)
                elif lab in ("ATTACK", "0", "SPOOF"):
                    labels.append(ATTACK)
                else:
                    raise ValueError(f"{path}: unknown label {row['label']!r}")
                ids.append(row["id"])
                scores.append(float(row["score"]))
        return cls(ids, np.array(labels), np.array(scores), split)


def _split_scores(scores) -> tuple[np.ndarray, np.ndarray]:
    if not isinstance(scores, ScoreSet):
        raise TypeError("expected a ScoreSet")
    att, bona = scores.attack_scores, scores.bona_scores
    if att.size == 0 or bona.size == 0:
        raise ValueError("score set must contain both bona fide and attack samples")
    return att, bona


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    u = np.unique(np.asarray(scores, dtype=np.float64))
    mids = (u[:-1] + u[1:]) / 2.0
    return np.unique(np.concatenate([u, mids]))


def apcer_bpcer(scores: ScoreSet, threshold: float) -> tuple[float, float]:
    """(attacks accepted / attacks, bona fide rejected / bona fide)."""
    att, bona = _split_scores(scores)
    apcer = np.count_nonzero(att >= threshold) / att.size
    bpcer = np.count_nonzero(bona < threshold) / bona.size
    return float(apcer), float(bpcer)


def _rates(att: np.ndarray, bona: np.ndarray, thresholds: np.ndarray):
    """Vectorized APCER/BPCER for many thresholds via sorted counts."""
    a = np.sort(att)
    b = np.sort(bona)
    apcer = (a.size - np.searchsorted(a, thresholds, side="left")) / a.size
    bpcer = np.searchsorted(b, thresholds, side="left") / b.size
    return apcer, bpcer


def eer_threshold(dev: ScoreSet) -> float:
    """Threshold minimizing |APCER - BPCER|; ties -> lower BPCER, then lower threshold."""
    att, bona = _split_scores(dev)
    cand = candidate_thresholds(dev.scores)
    apcer, bpcer = _rates(att, bona, cand)
    # compare |APCER - BPCER| on integer counts so exact ties stay ties
    n_att = np.rint(apcer * att.size).astype(np.int64)
    n_bona = np.rint(bpcer * bona.size).astype(np.int64)
    gap = np.abs(n_att * bona.size - n_bona * att.size)
    order = np.lexsort((cand, n_bona, gap))
    return float(cand[order[0]])


def eer(dev: ScoreSet) -> float:
    """(APCER + BPCER) / 2 at the EER threshold."""
    ap, bp = apcer_bpcer(dev, eer_threshold(dev))
    return (ap + bp) / 2.0


@dataclass
class BpcerThreshold:
    threshold: float
    bpcer: float
    warning: bool


def bpcer_target_threshold(dev: ScoreSet, target: float) -> BpcerThreshold:
    """Operating point for a BPCER budget.

    Among candidate thresholds (plus a boundary just above the top score),
    take the largest BPCER not exceeding ``target`` and return the smallest
    threshold that reaches it. When the score granularity cannot resolve a
    positive target (target below 1 / #bona fide) the lowest candidate is
    returned with ``warning=True``.
    """
    att, bona = _split_scores(dev)
    if not 0.0 <= target <= 1.0:
        raise ValueError("target BPCER must lie in [0, 1]")
    cand = candidate_thresholds(dev.scores)
    top = cand[-1]
    cand = np.append(cand, np.nextafter(top, np.inf))
    _, bpcer = _rates(att, bona, cand)
    feasible = bpcer <= target + 1e-15
    best = bpcer[feasible].max()
    idx = np.flatnonzero(feasible & (bpcer == best))[0]
    warn = bool(0.0 < target < 1.0 / bona.size)
    if warn:
        warnings.warn(
            f"BPCER target {target} below score granularity 1/{bona.size}; using boundary threshold",
            stacklevel=2,
        )
    return BpcerThreshold(float(cand[idx]), float(bpcer[idx]), warn)


def hter(test: ScoreSet, threshold: float) -> float:
    far, frr = apcer_bpcer(test, threshold)
    return (far + frr) / 2.0


def tpr_at_fpr(test: ScoreSet, fpr_target: float) -> float:
    """Best TPR (bona fide acceptance) over thresholds whose FPR (attack acceptance) <= target."""
    att, bona = _split_scores(test)
    cand = candidate_thresholds(test.scores)
    cand = np.append(cand, np.nextafter(cand[-1], np.inf))
    apcer, _ = _rates(att, bona, cand)
    accepted = bona.size - np.searchsorted(np.sort(bona), cand, side="left")
    ok = apcer <= fpr_target
    return float(accepted[ok].max() / bona.size)


@dataclass
class MetricReport:
    threshold: float
    apcer: float
    bpcer: float
    acer: float
    hter: float
    eer: float
    tpr_at_fpr: float
    fpr_target: float

    def as_percentages(self) -> dict:
        d = asdict(self)
        for k in ("apcer", "bpcer", "acer", "hter", "eer", "tpr_at_fpr"):
            d[k] = 100.0 * d[k]
        return d


def threshold_from_dev(dev: ScoreSet, policy: str = "eer", bpcer_target: float = 0.01) -> float:
    policy = policy.lower()
    if policy == "eer":
        return eer_threshold(dev)
    if policy == "bpcer":
        return bpcer_target_threshold(dev, bpcer_target).threshold
    raise ValueError(f"unknown threshold policy {policy!r} (eer | bpcer)")


def evaluate(
    test: ScoreSet,
    dev: ScoreSet | None = None,
    policy: str = "eer",
    bpcer_target: float = 0.01,
    fpr_target: float = 1e-2,
) -> MetricReport:
    """Metrics on ``test`` at a threshold fixed on ``dev`` (``test`` itself when no dev set)."""
    ref = dev if dev is not None else test
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t = threshold_from_dev(ref, policy, bpcer_target)
    ap, bp = apcer_bpcer(test, t)
    return MetricReport(
        threshold=t,
        apcer=ap,
        bpcer=bp,
        acer=(ap + bp) / 2.0,
        hter=hter(test, t),
        eer=eer(test),
        tpr_at_fpr=tpr_at_fpr(test, fpr_target),
        fpr_target=fpr_target,
    )


def save_report(path, report: MetricReport) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        for k, v in asdict(report).items():
            wr.writerow((k, repr(float(v))))


def load_report(path) -> dict:
    with open(Path(path), newline="") as fh:
        return {k: float(v) for k, v in csv.reader(fh)}
