"""Equal error rate and DET operating points over scored trials.

Conventions: a trial is accepted when its score is >= the threshold.
FAR(th) is the fraction of different-speaker trials accepted, FRR(th) the
fraction of same-speaker trials rejected.  The EER is linearly interpolated
between the two adjacent operating points where FAR - FRR changes sign, so
reported numbers are reproducible to the digit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ScoredTrial:
    enrol_id: str
    test_id: str
    score: float
    label: int  # 1 same speaker, 0 different


def _rates(scores, labels):
    """FAR/FRR at each candidate threshold, descending in threshold.

    Thresholds are the unique scores plus one sentinel above the maximum
    (reject everything), so the sweep covers FAR from 0 to 1.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_same = int((labels == 1).sum())
    n_diff = int((labels == 0).sum())
    if n_same == 0 or n_diff == 0:
        raise ValueError("EER needs at least one same and one different trial")
    uniq = np.unique(scores)
    thresholds = np.concatenate([[uniq[-1] + 1.0], uniq[::-1]])
    # accepted counts at threshold th: #scores >= th, via sorted positions
    far = np.empty(len(thresholds))
    frr = np.empty(len(thresholds))
    same_sorted = np.sort(scores[labels == 1])
    diff_sorted = np.sort(scores[labels == 0])
    for i, th in enumerate(thresholds):
        far[i] = (n_diff - np.searchsorted(diff_sorted, th, side="left")) / n_diff
        frr[i] = np.searchsorted(same_sorted, th, side="left") / n_same
    return thresholds, far, frr


def compute_eer(trials):
    """Return (eer, threshold) for a list of ScoredTrial.

    The threshold sweep runs from strict (accept nothing) to permissive;
    FAR rises while FRR falls, and the EER sits at their crossing.
    """
    scores = [t.score for t in trials]
    labels = [t.label for t in trials]
    thresholds, far, frr = _rates(scores, labels)
    d = far - frr
    # first index where FAR >= FRR (d starts at -FRR_max <= 0 and ends at +1)
    idx = int(np.argmax(d >= 0))
    if d[idx] == 0.0:
        return float(far[idx]), float(thresholds[idx])
    if idx == 0:
        return float(far[0]), float(thresholds[0])
    d0, d1 = d[idx - 1], d[idx]
    w = -d0 / (d1 - d0)
    eer = (1.0 - w) * far[idx - 1] + w * far[idx]
    threshold = (1.0 - w) * thresholds[idx - 1] + w * thresholds[idx]
    return float(eer), float(threshold)


def det_points(trials):
    """Monotone staircase of (FAR, FRR) operating points over all thresholds."""
    scores = [t.score for t in trials]
    labels = [t.label for t in trials]
    _, far, frr = _rates(scores, labels)
    return list(zip(far.tolist(), frr.tolist()))
