"""Exception types shared across the package."""


class ScenarioError(ValueError):
    """A scenario config or input structure is invalid (bad file, bad graph,
    dimension mismatch, violated precondition)."""


class NoUniqueEquilibriumError(ArithmeticError):
    """The steady-state solve is singular or too ill-conditioned to trust;
    the network has no unique equilibrium (typically: some regular agent is
    unreachable from the stubborn set)."""


class ZeroRewardError(ArithmeticError):
    """An agent observed zero total reward and no previous influence row is
    available to fall back on."""
