"""Synthetic score distributions that exhibit known kinds of bias.

A :class:`ScenarioSpec` describes four independent truncated-normal score
distributions, one per partition cell.  :func:`sample_scenario` realizes it
as labeled examples; subgroup members carry the tag ``synthetic_subgroup``.

Random numbers come from numpy's PCG64 bit generator.  Each cell draws from
its own stream, ``SeedSequence(seed, spawn_key=(k,))`` with ``k`` the cell's
index in ``CELLS``, so a cell's draws do not depend on the other cells or on
generation order.  Uniforms are mapped to scores by the truncated-normal
inverse CDF.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import InvalidSpec
from .metrics import BiasMetricsRow, BinaryLabel, LabeledExample, SubgroupPartition, bias_suite

SUBGROUP_TAG = "synthetic_subgroup"
CELLS = ("bg_neg", "bg_pos", "sg_neg", "sg_pos")


@dataclass(frozen=True)
class ComponentDist:
    """Normal(mean, stddev) truncated to ``[lower, upper]``."""

    mean: float
    stddev: float
    lower: float = 0.0
    upper: float = 1.0

    def validate(self, name: str = "component") -> None:
        values = (self.mean, self.stddev, self.lower, self.upper)
        if not all(np.isfinite(values)):
            raise InvalidSpec(f"{name}: parameters must be finite")
        if self.stddev <= 0:
            raise InvalidSpec(f"{name}: stddev must be positive")
        if not self.lower < self.upper:
            raise InvalidSpec(f"{name}: lower must be below upper")

    def mirrored(self) -> "ComponentDist":
        """The reflection of this distribution through 0.5."""
        return ComponentDist(1.0 - self.mean, self.stddev, 1.0 - self.upper, 1.0 - self.lower)

    def ppf(self, u: np.ndarray) -> np.ndarray:
        """Inverse CDF at uniforms ``u`` in [0, 1)."""
        a = (self.lower - self.mean) / self.stddev
        b = (self.upper - self.mean) / self.stddev
        if a > 0:
            # right tail: work with survival probabilities to keep precision
            sa, sb = ndtr(-a), ndtr(-b)
            z = -ndtri(sa - u * (sa - sb))
        else:
            fa, fb = ndtr(a), ndtr(b)
            z = ndtri(fa + u * (fb - fa))
        return np.clip(self.mean + self.stddev * z, self.lower, self.upper)


@dataclass(frozen=True)
class ScenarioSpec:
    bg_neg: ComponentDist
    bg_pos: ComponentDist
    sg_neg: ComponentDist
    sg_pos: ComponentDist
    n_bg_neg: int = 1
    n_bg_pos: int = 1
    n_sg_neg: int = 1
    n_sg_pos: int = 1

    def validate(self) -> None:
        for cell in CELLS:
            dist = getattr(self, cell)
            if not isinstance(dist, ComponentDist):
                raise InvalidSpec(f"{cell}: expected a ComponentDist")
            dist.validate(cell)
            n = getattr(self, f"n_{cell}")
            if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
                raise InvalidSpec(f"n_{cell} must be a positive integer, got {n!r}")

    def counts(self) -> tuple[int, int, int, int]:
        return tuple(getattr(self, f"n_{c}") for c in CELLS)

    def scaled(self, scale: int) -> "ScenarioSpec":
        if scale < 1:
            raise InvalidSpec("scale must be a positive integer")
        return replace(self, **{f"n_{c}": getattr(self, f"n_{c}") * scale for c in CELLS})

    def mirrored(self) -> "ScenarioSpec":
        """Reflect scores through 0.5 and swap the class roles."""
        return ScenarioSpec(
            bg_neg=self.bg_pos.mirrored(),
            bg_pos=self.bg_neg.mirrored(),
            sg_neg=self.sg_pos.mirrored(),
            sg_pos=self.sg_neg.mirrored(),
            n_bg_neg=self.n_bg_pos,
            n_bg_pos=self.n_bg_neg,
            n_sg_neg=self.n_sg_pos,
            n_sg_pos=self.n_sg_neg,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioSpec":
        try:
            spec = cls(
                **{c: ComponentDist(**d[c]) for c in CELLS},
                **{f"n_{c}": d.get(f"n_{c}", 1) for c in CELLS},
            )
        except (KeyError, TypeError) as exc:
            raise InvalidSpec(f"malformed scenario spec: {exc}") from exc
        spec.validate()
        return spec

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioSpec":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


class ScenarioId(str, enum.Enum):
    A = "A"  # small right score shift
    B = "B"  # large right score shift
    C = "C"  # large shift with 4:1 positive skew in the subgroup
    D = "D"  # large left score shift
    E = "E"  # low subgroup separability
    F = "F"  # wide subgroup score range, no overlap
    G = "G"  # wider subgroup score range, with overlap

    @property
    def description(self) -> str:
        return DESCRIPTIONS[self]


DESCRIPTIONS = {
    ScenarioId.A: "Small right score shift",
    ScenarioId.B: "Large right score shift",
    ScenarioId.C: "Score shift and size skew (more positive)",
    ScenarioId.D: "Large left score shift",
    ScenarioId.E: "Low subgroup separability",
    ScenarioId.F: "Wide subgroup score range without overlap",
    ScenarioId.G: "Wide subgroup score range with overlap",
}

# Shared background: class means 0.25 / 0.75, cut at three standard
# deviations so the subgroup cells of B and D can sit on disjoint supports.
BASE_SD = 0.05
BG_NEG = ComponentDist(0.25, BASE_SD, 0.10, 0.40)
BG_POS = ComponentDist(0.75, BASE_SD, 0.60, 0.90)

# Frozen output of `biasaudit calibrate` (seed 0, scale 100_000).
PRESET_PARAMS: dict[str, float] = {
    "A_shift": 0.1,
    "B_shift": 0.45,
    "E_shift": 0.1975,
    "F_stddev": 0.10,
    "G_stddev": 0.2275,
}

SKEW_C = 4  # positives per negative in the scenario C subgroup


def build_preset(scenario: ScenarioId | str, params: Mapping[str, float] = PRESET_PARAMS) -> ScenarioSpec:
    """Construct a scenario from its tunable parameters.

    Each scenario has one knob: A, B shift both subgroup classes right; E
    moves subgroup positives left and negatives right; F, G widen both
    subgroup classes.  C reuses B's distributions and D mirrors B.
    """
    sid = ScenarioId(scenario)
    if sid is ScenarioId.A:
        d = params["A_shift"]
        sg_neg = ComponentDist(BG_NEG.mean + d, BASE_SD)
        sg_pos = ComponentDist(BG_POS.mean + d, BASE_SD)
    elif sid in (ScenarioId.B, ScenarioId.C, ScenarioId.D):
        d = params["B_shift"]
        # supports start where the matching background cell ends
        sg_neg = ComponentDist(BG_NEG.mean + d, BASE_SD, BG_NEG.upper, 1.0)
        sg_pos = ComponentDist(BG_POS.mean + d, BASE_SD, BG_POS.upper, 1.0)
    elif sid is ScenarioId.E:
        d = params["E_shift"]
        sg_neg = ComponentDist(BG_NEG.mean + d, BASE_SD)
        sg_pos = ComponentDist(BG_POS.mean - d, BASE_SD)
    elif sid is ScenarioId.F:
        sd = params["F_stddev"]
        sg_neg = ComponentDist(BG_NEG.mean, sd, 0.0, 0.5)
        sg_pos = ComponentDist(BG_POS.mean, sd, 0.5, 1.0)
    else:
        sd = params["G_stddev"]
        sg_neg = ComponentDist(BG_NEG.mean, sd)
        sg_pos = ComponentDist(BG_POS.mean, sd)

    spec = ScenarioSpec(BG_NEG, BG_POS, sg_neg, sg_pos)
    if sid is ScenarioId.C:
        spec = replace(spec, n_sg_pos=SKEW_C)
    elif sid is ScenarioId.D:
        spec = spec.mirrored()
    return spec


def preset(scenario: ScenarioId | str) -> ScenarioSpec:
    """The calibrated built-in spec for one scenario, one example per cell."""
    return build_preset(scenario)


def _check_seed(seed: int) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or not 0 <= seed < 2**64:
        raise InvalidSpec(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)


def sample_cell(dist: ComponentDist, n: int, seed: int, cell: str) -> np.ndarray:
    """Draw ``n`` scores for one cell from that cell's own stream."""
    stream = np.random.SeedSequence(_check_seed(seed), spawn_key=(CELLS.index(cell),))
    u = np.random.Generator(np.random.PCG64(stream)).random(n)
    return dist.ppf(u)


def sample_cells(spec: ScenarioSpec, seed: int) -> dict[str, np.ndarray]:
    """Draw every cell of ``spec``; keys are ``CELLS``."""
    spec.validate()
    return {c: sample_cell(getattr(spec, c), getattr(spec, f"n_{c}"), seed, c) for c in CELLS}


def sample_scenario(spec: ScenarioSpec, seed: int) -> list[LabeledExample]:
    """Realize ``spec`` as labeled examples, cell by cell in ``CELLS`` order.

    Ids are ``"<cell>-<index>"``.  The same ``(spec, seed)`` always yields
    bit-identical scores.
    """
    cells = sample_cells(spec, seed)
    tagged = frozenset({SUBGROUP_TAG})
    out = []
    for cell in CELLS:
        label = BinaryLabel.POSITIVE if cell.endswith("pos") else BinaryLabel.NEGATIVE
        tags = tagged if cell.startswith("sg") else frozenset()
        width = len(str(max(len(cells[cell]) - 1, 0)))
        out.extend(
            LabeledExample(f"{cell}-{i:0{width}d}", s, label, tags) for i, s in enumerate(cells[cell].tolist())
        )
    return out


def spec_metrics(spec: ScenarioSpec, seed: int) -> BiasMetricsRow:
    cells = sample_cells(spec, seed)
    p = SubgroupPartition(SUBGROUP_TAG, cells["bg_neg"], cells["bg_pos"], cells["sg_neg"], cells["sg_pos"])
    return bias_suite(p)


def scenario_metrics(scenario: ScenarioId | str, seed: int, scale: int) -> BiasMetricsRow:
    """Sample a preset at ``scale`` examples per unit count and score it."""
    return spec_metrics(preset(scenario).scaled(scale), seed)
