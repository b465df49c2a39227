"""Exception hierarchy shared by every biasaudit module.

All library errors derive from :class:`BiasAuditError` so the CLI can map
them to exit status 1 with a one-line diagnostic.
"""

from __future__ import annotations


class BiasAuditError(Exception):
    """Base class for data and computation errors."""


class EmptySample(BiasAuditError, ValueError):
    pass


class NonFiniteScore(BiasAuditError, ValueError):
    pass


class MetricUndefined(BiasAuditError):
    """A metric was requested but one of its two required samples is empty."""

    def __init__(self, metric: str, missing: str):
        self.metric = metric
        self.missing = missing
        super().__init__(f"{metric} is undefined: sample {missing} is empty")


class UnknownSubgroup(BiasAuditError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0]) if self.args else "unknown subgroup"


class InvalidSpec(BiasAuditError, ValueError):
    pass


class MissingColumn(BiasAuditError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing column"


class MalformedRow(BiasAuditError, ValueError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class MissingLength(BiasAuditError, ValueError):
    pass


class BadTemplate(BiasAuditError, ValueError):
    pass


class MissingScore(BiasAuditError, ValueError):
    pass


class NoQualifyingSubgroups(BiasAuditError):
    pass


class ScoreCoverageGap(BiasAuditError):
    def __init__(self, model: str, ids: list[str]):
        self.model = model
        self.ids = ids
        shown = ", ".join(ids[:5]) + (" ..." if len(ids) > 5 else "")
        super().__init__(f"model {model!r} has no score for {len(ids)} example(s): {shown}")


class UnsupportedFormat(BiasAuditError, ValueError):
    pass


class ScorerError(BiasAuditError):
    """Base class for scoring-endpoint failures."""


class AuthError(ScorerError):
    pass


class SchemaError(ScorerError):
    pass


class RateLimited(ScorerError):
    pass
