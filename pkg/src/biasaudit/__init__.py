"""Threshold-agnostic unintended-bias metrics for binary classifiers."""

from __future__ import annotations

from .metrics import (
    BiasMetricsRow,
    BinaryLabel,
    ClassPolarity,
    LabeledExample,
    SubgroupPartition,
    aeg,
    auc,
    bias_rows,
    bias_suite,
    bnsp_auc,
    bpsn_auc,
    mwu_u,
    partition,
    subgroup_auc,
)

__version__ = "0.1.0"

__all__ = [
    "BiasMetricsRow",
    "BinaryLabel",
    "ClassPolarity",
    "LabeledExample",
    "SubgroupPartition",
    "aeg",
    "auc",
    "bias_rows",
    "bias_suite",
    "bnsp_auc",
    "bpsn_auc",
    "mwu_u",
    "partition",
    "subgroup_auc",
    "__version__",
]
