"""Threshold-agnostic unintended-bias metrics.

Every metric here is a pair-counting rank statistic over two of the four
score samples that a subgroup induces on a labeled, scored dataset:

    D-   background negatives      Dg-  subgroup negatives
    D+   background positives      Dg+  subgroup positives

The background of a subgroup is every example that does *not* carry the
subgroup's tag.  Ties between two scores count one half everywhere.

All counts are accumulated as exact integers (twice the U statistic), so a
metric depends only on the relative order of the scores: any strictly
increasing transform of the scores leaves every value bit-identical.
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptySample, MetricUndefined, MissingScore, NonFiniteScore, UnknownSubgroup

__all__ = [
    "BinaryLabel",
    "ClassPolarity",
    "LabeledExample",
    "SubgroupPartition",
    "RateCurve",
    "BiasMetricsRow",
    "METRIC_NAMES",
    "as_sample",
    "mwu_u",
    "auc",
    "partition",
    "subgroup_auc",
    "bpsn_auc",
    "bnsp_auc",
    "aeg",
    "rate_curve",
    "aeg_by_integral",
    "equality_gap",
    "bias_suite",
    "bias_rows",
]


class BinaryLabel(enum.IntEnum):
    NEGATIVE = 0
    POSITIVE = 1


class ClassPolarity(enum.Enum):
    """Which class an equality-gap style metric looks at.

    ``POSITIVE`` compares true positive rates (scores of positive examples),
    ``NEGATIVE`` compares true negative rates (scores of negative examples).
    """

    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class LabeledExample:
    """One scored (or not yet scored) item of an evaluation set."""

    id: str
    score: Optional[float]
    label: BinaryLabel
    subgroups: frozenset[str] = frozenset()
    char_length: Optional[int] = None
    text: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("example id must be nonempty")
        if self.char_length is not None and self.char_length < 0:
            raise ValueError("char_length must be nonnegative")


def as_sample(values: Iterable[float] | np.ndarray, name: str = "sample") -> np.ndarray:
    """Return ``values`` as a 1-D float64 array, rejecting NaN and infinities."""
    arr = np.asarray(values if not isinstance(values, (set, frozenset)) else list(values), dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size and not np.isfinite(arr).all():
        raise NonFiniteScore(f"{name} contains NaN or infinite scores")
    return arr


@dataclass(frozen=True)
class SubgroupPartition:
    """The four score samples induced by one subgroup.

    ``ids`` optionally carries the example ids of each cell, in the order
    ``(d_neg, d_pos, dg_neg, dg_pos)``; :func:`partition` fills it in.
    """

    subgroup_id: str
    d_neg: np.ndarray
    d_pos: np.ndarray
    dg_neg: np.ndarray
    dg_pos: np.ndarray
    ids: Optional[tuple[tuple[str, ...], ...]] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        for name in ("d_neg", "d_pos", "dg_neg", "dg_pos"):
            object.__setattr__(self, name, as_sample(getattr(self, name), name))

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        return (self.d_neg.size, self.d_pos.size, self.dg_neg.size, self.dg_pos.size)

    def cells(self, polarity: ClassPolarity) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(background, subgroup)`` samples of one class."""
        if polarity is ClassPolarity.POSITIVE:
            return self.d_pos, self.dg_pos
        return self.d_neg, self.dg_neg


@dataclass(frozen=True)
class RateCurve:
    """Empirical rate curve of subgroup and background over all thresholds.

    ``thresholds`` is ascending and starts at ``-inf`` and ends at ``+inf``.
    For ``POSITIVE`` the rates are the fraction of scores ``> t`` (true
    positive rates); for ``NEGATIVE`` the fraction ``<= t`` (true negative
    rates).
    """

    polarity: ClassPolarity
    thresholds: np.ndarray
    subgroup_rate: np.ndarray
    background_rate: np.ndarray

    def __len__(self) -> int:
        return self.thresholds.size

    def at(self, t: float) -> tuple[float, float]:
        """``(subgroup_rate, background_rate)`` of the step curve at threshold ``t``."""
        i = int(np.searchsorted(self.thresholds, t, side="right")) - 1
        return float(self.subgroup_rate[i]), float(self.background_rate[i])

    @property
    def breakpoints(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.subgroup_rate.tolist(), self.background_rate.tolist()))


METRIC_NAMES = ("subgroup_auc", "bpsn_auc", "bnsp_auc", "negative_aeg", "positive_aeg")


@dataclass(frozen=True)
class BiasMetricsRow:
    """The five-metric suite for one subgroup.  ``None`` marks an absent metric."""

    subgroup_id: str
    n_bg_neg: int
    n_bg_pos: int
    n_sg_neg: int
    n_sg_pos: int
    subgroup_auc: Optional[float]
    bpsn_auc: Optional[float]
    bnsp_auc: Optional[float]
    negative_aeg: Optional[float]
    positive_aeg: Optional[float]

    def metric(self, name: str) -> Optional[float]:
        if name not in METRIC_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    @property
    def n_subgroup(self) -> int:
        return self.n_sg_neg + self.n_sg_pos

    def to_dict(self) -> dict:
        d = asdict(self)
        d["subgroup"] = d.pop("subgroup_id")
        return {"subgroup": d.pop("subgroup"), **d}

    @classmethod
    def from_dict(cls, d: Mapping) -> "BiasMetricsRow":
        def opt(key):
            v = d.get(key)
            return None if v is None or v == "" else float(v)

        return cls(
            subgroup_id=str(d["subgroup"]),
            n_bg_neg=int(d["n_bg_neg"]),
            n_bg_pos=int(d["n_bg_pos"]),
            n_sg_neg=int(d["n_sg_neg"]),
            n_sg_pos=int(d["n_sg_pos"]),
            **{name: opt(name) for name in METRIC_NAMES},
        )


# ---------------------------------------------------------------------------
# pair counting


def _doubled_u_sorted(a: np.ndarray, b_sorted: np.ndarray) -> int:
    """Twice the U statistic of ``a`` over an already sorted ``b``.

    For each s in a, #(b < s) + #(b <= s) equals twice the number of b-values
    it beats, counting ties as one half.
    """
    lo = np.searchsorted(b_sorted, a, side="left")
    hi = np.searchsorted(b_sorted, a, side="right")
    return int(lo.sum(dtype=np.int64) + hi.sum(dtype=np.int64))


def _require(sample: np.ndarray, name: str) -> None:
    if sample.size == 0:
        raise EmptySample(f"sample {name} is empty")


def mwu_u(a, b) -> float:
    """Mann-Whitney U of ``a`` over ``b``.

    Counts pairs ``(s, t)`` with ``s`` from ``a`` and ``t`` from ``b`` where
    ``s > t``, with ties counting one half.  Runs in O((n + m) log m).
    """
    a = as_sample(a, "a")
    b = as_sample(b, "b")
    _require(a, "a")
    _require(b, "b")
    return _doubled_u_sorted(a, np.sort(b)) / 2.0


def _auc_from_doubled(u2: int, n_pos: int, n_neg: int) -> float:
    return u2 / (2.0 * n_pos * n_neg)


def _aeg_from_doubled(u2_bg_over_sg: int, n_bg: int, n_sg: int) -> float:
    return 0.5 - u2_bg_over_sg / (2.0 * n_bg * n_sg)


def auc(neg, pos) -> float:
    """Probability that a random positive outscores a random negative."""
    neg = as_sample(neg, "neg")
    pos = as_sample(pos, "pos")
    _require(neg, "neg")
    _require(pos, "pos")
    return _auc_from_doubled(_doubled_u_sorted(pos, np.sort(neg)), pos.size, neg.size)


# ---------------------------------------------------------------------------
# partitioning


def partition(dataset: Iterable[LabeledExample], subgroup_id: str, *, strict: bool = True) -> SubgroupPartition:
    """Route every example to one of the four cells for ``subgroup_id``.

    Raises :class:`UnknownSubgroup` when no example carries the tag, unless
    ``strict`` is false, in which case the partition with empty subgroup
    cells is returned.
    """
    scores: list[list[float]] = [[], [], [], []]
    ids: list[list[str]] = [[], [], [], []]
    seen = False
    n = 0
    for ex in dataset:
        n += 1
        if ex.score is None:
            raise MissingScore(f"example {ex.id!r} has no score")
        member = subgroup_id in ex.subgroups
        seen = seen or member
        cell = 2 * member + int(ex.label)
        scores[cell].append(ex.score)
        ids[cell].append(ex.id)
    if n == 0:
        raise EmptySample("dataset is empty")
    if strict and not seen:
        raise UnknownSubgroup(f"no example is tagged {subgroup_id!r}")
    return SubgroupPartition(
        subgroup_id,
        np.array(scores[0], dtype=np.float64),
        np.array(scores[1], dtype=np.float64),
        np.array(scores[2], dtype=np.float64),
        np.array(scores[3], dtype=np.float64),
        ids=tuple(tuple(c) for c in ids),
    )


# ---------------------------------------------------------------------------
# the five metrics


def _pair(name: str, x: np.ndarray, x_name: str, y: np.ndarray, y_name: str) -> None:
    if x.size == 0:
        raise MetricUndefined(name, x_name)
    if y.size == 0:
        raise MetricUndefined(name, y_name)


def subgroup_auc(p: SubgroupPartition) -> float:
    _pair("subgroup_auc", p.dg_neg, "dg_neg", p.dg_pos, "dg_pos")
    return auc(p.dg_neg, p.dg_pos)


def bpsn_auc(p: SubgroupPartition) -> float:
    """AUC of background positives against subgroup negatives.

    Low values mean subgroup negatives score like background positives,
    i.e. likely false positives for the subgroup.
    """
    _pair("bpsn_auc", p.dg_neg, "dg_neg", p.d_pos, "d_pos")
    return auc(p.dg_neg, p.d_pos)


def bnsp_auc(p: SubgroupPartition) -> float:
    """AUC of subgroup positives against background negatives."""
    _pair("bnsp_auc", p.d_neg, "d_neg", p.dg_pos, "dg_pos")
    return auc(p.d_neg, p.dg_pos)


def _aeg_name(polarity: ClassPolarity) -> str:
    return f"{polarity.value}_aeg"


def aeg(p: SubgroupPartition, polarity: ClassPolarity) -> float:
    """Average equality gap, ``1/2 - P(background score > subgroup score)``.

    Computed within one class.  Positive values mean the subgroup's scores
    sit higher than the background's; the range is [-0.5, 0.5].
    """
    bg, sg = p.cells(polarity)
    prefix = "d_pos" if polarity is ClassPolarity.POSITIVE else "d_neg"
    _pair(_aeg_name(polarity), bg, prefix, sg, prefix.replace("d_", "dg_"))
    return _aeg_from_doubled(_doubled_u_sorted(bg, np.sort(sg)), bg.size, sg.size)


def _rate(sorted_scores: np.ndarray, t, polarity: ClassPolarity):
    below_or_equal = np.searchsorted(sorted_scores, t, side="right")
    if polarity is ClassPolarity.POSITIVE:
        return (sorted_scores.size - below_or_equal) / sorted_scores.size
    return below_or_equal / sorted_scores.size


def rate_curve(p: SubgroupPartition, polarity: ClassPolarity) -> RateCurve:
    """Subgroup and background rates at every distinct observed score.

    An example is predicted positive iff its score is strictly greater than
    the threshold.
    """
    bg, sg = p.cells(polarity)
    prefix = "d_pos" if polarity is ClassPolarity.POSITIVE else "d_neg"
    _pair(_aeg_name(polarity), bg, prefix, sg, prefix.replace("d_", "dg_"))
    bg_sorted = np.sort(bg)
    sg_sorted = np.sort(sg)
    t = np.concatenate(([-np.inf], np.unique(np.concatenate((bg_sorted, sg_sorted))), [np.inf]))
    return RateCurve(polarity, t, _rate(sg_sorted, t, polarity), _rate(bg_sorted, t, polarity))


def aeg_by_integral(p: SubgroupPartition, polarity: ClassPolarity) -> float:
    """Average equality gap as a signed area between the rate curve and y = x.

    The curve ``(x(t), y(t))`` of subgroup rate against background rate is
    integrated with the trapezoid rule, which is exact for the piecewise
    linear empirical curve (a tied subgroup/background step becomes a
    diagonal segment, i.e. a half-count).  The orientation is chosen so the
    sign agrees with :func:`aeg`: for true negative rates the area is
    ``int (y - x) dx``, for true positive rates ``int (x - y) dx``.
    """
    curve = rate_curve(p, polarity)
    x, y = curve.subgroup_rate, curve.background_rate
    if polarity is ClassPolarity.POSITIVE:
        # ascending thresholds walk x from 1 down to 0
        x, y = x[::-1], y[::-1]
        gap = x - y
    else:
        gap = y - x
    return float(np.sum(np.diff(x) * (gap[:-1] + gap[1:])) / 2.0)


def equality_gap(p: SubgroupPartition, polarity: ClassPolarity, t: float) -> float:
    """Subgroup rate minus background rate at threshold ``t``."""
    if not np.isfinite(t):
        raise NonFiniteScore("threshold must be finite")
    bg, sg = p.cells(polarity)
    prefix = "d_pos" if polarity is ClassPolarity.POSITIVE else "d_neg"
    _pair(f"{polarity.value}_equality_gap", bg, prefix, sg, prefix.replace("d_", "dg_"))
    return float(_rate(np.sort(sg), t, polarity) - _rate(np.sort(bg), t, polarity))


def bias_suite(p: SubgroupPartition) -> BiasMetricsRow:
    """All five metrics for one partition; a metric is ``None`` when undefined."""

    def attempt(fn, *args):
        try:
            return fn(p, *args)
        except MetricUndefined:
            return None

    return BiasMetricsRow(
        p.subgroup_id,
        *p.sizes,
        subgroup_auc=attempt(subgroup_auc),
        bpsn_auc=attempt(bpsn_auc),
        bnsp_auc=attempt(bnsp_auc),
        negative_aeg=attempt(aeg, ClassPolarity.NEGATIVE),
        positive_aeg=attempt(aeg, ClassPolarity.POSITIVE),
    )


# ---------------------------------------------------------------------------
# many subgroups over one columnar dataset


class _ComplementCounter:
    """Pair counts against the background without materializing it.

    The background of a subgroup is "everything of that class" minus "the
    subgroup's members of that class", so counts against the background are
    counts against the globally sorted class scores minus counts against the
    sorted subgroup cell.  The global sorts happen once per dataset.
    """

    def __init__(self, scores: np.ndarray, labels: np.ndarray):
        self.neg = np.sort(scores[~labels])
        self.pos = np.sort(scores[labels])

    @staticmethod
    def doubled_u_over_complement(a: np.ndarray, everything: np.ndarray, members: np.ndarray) -> int:
        # U(a, everything \ members), doubled
        return _doubled_u_sorted(a, everything) - _doubled_u_sorted(a, members)


def bias_rows(
    scores: np.ndarray,
    labels: np.ndarray,
    memberships: Mapping[str, np.ndarray],
    *,
    subgroups: Optional[Sequence[str]] = None,
    executor=None,
) -> list[BiasMetricsRow]:
    """Compute :func:`bias_suite` rows for many subgroups of one dataset.

    ``memberships`` maps a subgroup id to a boolean mask (or an index array)
    over ``scores``.  Results are identical, bit for bit, to building each
    :class:`SubgroupPartition` and calling :func:`bias_suite`, but the cost
    per subgroup is O(k log N) for a subgroup of size k.  ``executor`` may be
    a :class:`concurrent.futures.Executor`; output order follows
    ``subgroups`` (default: sorted membership keys).
    """
    scores = as_sample(scores, "scores")
    labels = np.asarray(labels, dtype=bool)
    if labels.shape != scores.shape:
        raise ValueError("scores and labels differ in length")
    counter = _ComplementCounter(scores, labels)
    names = sorted(memberships) if subgroups is None else list(subgroups)

    def one(name: str) -> BiasMetricsRow:
        if name not in memberships:
            raise UnknownSubgroup(f"no membership for subgroup {name!r}")
        member = np.asarray(memberships[name])
        if member.dtype != bool:
            mask = np.zeros(scores.size, dtype=bool)
            mask[member] = True
            member = mask
        sg_labels = labels[member]
        sg_scores = scores[member]
        sg_neg = np.sort(sg_scores[~sg_labels])
        sg_pos = np.sort(sg_scores[sg_labels])
        n_bg_neg = counter.neg.size - sg_neg.size
        n_bg_pos = counter.pos.size - sg_pos.size
        n_sg_neg, n_sg_pos = sg_neg.size, sg_pos.size

        sub = bpsn = bnsp = neg_aeg = pos_aeg = None
        if n_sg_neg and n_sg_pos:
            sub = _auc_from_doubled(_doubled_u_sorted(sg_pos, sg_neg), n_sg_pos, n_sg_neg)
        if n_sg_neg and n_bg_pos:
            # U(bg_pos, sg_neg) = |bg_pos||sg_neg| - U(sg_neg, bg_pos)
            u2 = 2 * n_bg_pos * n_sg_neg - counter.doubled_u_over_complement(sg_neg, counter.pos, sg_pos)
            bpsn = _auc_from_doubled(u2, n_bg_pos, n_sg_neg)
        if n_bg_neg and n_sg_pos:
            u2 = counter.doubled_u_over_complement(sg_pos, counter.neg, sg_neg)
            bnsp = _auc_from_doubled(u2, n_sg_pos, n_bg_neg)
        if n_bg_neg and n_sg_neg:
            u2 = 2 * n_bg_neg * n_sg_neg - counter.doubled_u_over_complement(sg_neg, counter.neg, sg_neg)
            neg_aeg = _aeg_from_doubled(u2, n_bg_neg, n_sg_neg)
        if n_bg_pos and n_sg_pos:
            u2 = 2 * n_bg_pos * n_sg_pos - counter.doubled_u_over_complement(sg_pos, counter.pos, sg_pos)
            pos_aeg = _aeg_from_doubled(u2, n_bg_pos, n_sg_pos)
        return BiasMetricsRow(name, n_bg_neg, n_bg_pos, n_sg_neg, n_sg_pos, sub, bpsn, bnsp, neg_aeg, pos_aeg)

    if executor is None:
        return [one(name) for name in names]
    return list(executor.map(one, names))
