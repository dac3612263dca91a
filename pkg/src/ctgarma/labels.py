"""Composite outcome labels from cord pH and 5-minute Apgar."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional

from .ingest import Outcomes

NORMAL_PH = 7.15
NORMAL_APGAR = 9
AT_RISK_PH = 7.0
AT_RISK_APGAR = 6


class Label(enum.Enum):
    NORMAL = "normal"
    AT_RISK = "at_risk"
    EXCLUDED = "excluded"

    @property
    def target(self) -> Optional[int]:
        return {Label.NORMAL: 0, Label.AT_RISK: 1}.get(self)


def assign_label(outcomes: Outcomes) -> Label:
    """At-risk if pH <= 7.0 or Apgar5 <= 6; normal if pH >= 7.15 and Apgar5 >= 9.

    A patient is at-risk as soon as either known value crosses its threshold,
    even if the other is absent. Normal needs both values.
    """
    ph, apgar = outcomes.ph, outcomes.apgar5
    if (ph is not None and ph <= AT_RISK_PH) or (apgar is not None and apgar <= AT_RISK_APGAR):
        return Label.AT_RISK
    if ph is not None and apgar is not None and ph >= NORMAL_PH and apgar >= NORMAL_APGAR:
        return Label.NORMAL
    return Label.EXCLUDED


@dataclass(frozen=True)
class CohortSummary:
    normal: int = 0
    at_risk: int = 0
    excluded: int = 0
    quality_excluded: int = 0

    def as_tuple(self) -> tuple[int, int, int]:
        return self.normal, self.at_risk, self.excluded


def cohort_summary(labels: Iterable[Label],
                   quality_excluded: Optional[Iterable[bool]] = None) -> CohortSummary:
    """Counts per label class.

    When ``quality_excluded`` flags are given, label counts cover only the
    patients that pass the quality rule and the rest are reported separately.
    """
    labels = list(labels)
    flags = [False] * len(labels) if quality_excluded is None else list(quality_excluded)
    if len(flags) != len(labels):
        raise ValueError("one quality flag per label required")
    counts = {lab: 0 for lab in Label}
    dropped = 0
    for lab, bad in zip(labels, flags):
        if bad:
            dropped += 1
        else:
            counts[lab] += 1
    return CohortSummary(counts[Label.NORMAL], counts[Label.AT_RISK],
                         counts[Label.EXCLUDED], dropped)
