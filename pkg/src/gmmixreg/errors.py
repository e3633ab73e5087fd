"""Exception hierarchy."""


class MixregError(Exception):
    """Base class for every error raised by gmmixreg."""


class DomainError(MixregError, ValueError):
    """Non-finite or otherwise invalid numeric input."""


class InvalidDimensionsError(MixregError, ValueError):
    pass


class DegenerateScatterError(MixregError):
    """Scatter matrix is singular; robust distances are undefined."""


class ComponentCollapseError(MixregError):
    """A mixture component lost all its mass or its weighted Gram matrix became singular."""

    def __init__(self, component: int, reason: str):
        self.component = component
        self.reason = reason
        super().__init__(f"component {component} collapsed: {reason}")


class FitFailedError(MixregError):
    """Every EM start failed."""

    def __init__(self, causes: list[str]):
        self.causes = list(causes)
        lines = "\n".join(f"  start {i}: {c}" for i, c in enumerate(self.causes))
        super().__init__(f"all {len(self.causes)} starts failed:\n{lines}")


class NonIdentifiableError(MixregError):
    """Jacobian of the estimating equations is singular at the fitted parameters."""


class PlanFailedError(MixregError):
    def __init__(self, estimator: str):
        self.estimator = estimator
        super().__init__(f"every replication failed for estimator {estimator!r}")
