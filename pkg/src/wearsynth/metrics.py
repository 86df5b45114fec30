"""Stress-positive F1 and accuracy, both in percent."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class Score(NamedTuple):
    """Unpacks as (f1, accuracy, ...) with extra confusion counts."""

    f1: float
    accuracy: float
    degenerate: bool = False     # no predicted positives, or no true positives
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0


def confusion(preds, truths) -> tuple[int, int, int, int]:
    preds, truths = np.asarray(preds).ravel(), np.asarray(truths).ravel()
    if preds.shape != truths.shape:
        raise ValueError(f"length mismatch: {preds.size} predictions, {truths.size} truths")
    p, t = preds == 1, truths == 1
    return int((p & t).sum()), int((p & ~t).sum()), int((~p & t).sum()), int((~p & ~t).sum())


def f1_accuracy(preds, truths) -> Score:
    """F1 = 2PR/(P+R) with stress as the positive class.

    With no predicted positives (or no true positives) precision or recall is
    undefined; F1 is reported as 0 and the score is flagged.
    """
    tp, fp, fn, tn = confusion(preds, truths)
    n = tp + fp + fn + tn
    acc = 100.0 * (tp + tn) / n if n else 0.0
    if tp + fp == 0 or tp + fn == 0:
        return Score(0.0, acc, True, tp, fp, fn, tn)
    prec, rec = tp / (tp + fp), tp / (tp + fn)
    f1 = 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
    return Score(100.0 * f1, acc, False, tp, fp, fn, tn)
