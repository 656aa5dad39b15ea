"""Exception types shared by the engine and the CLI (each maps to an exit code)."""


class OptimizerFailure(RuntimeError):
    """An optimization phase failed or produced inconsistent suprema."""


class WeightDegeneracy(RuntimeError):
    """Importance weights are all zero or not finite."""


class McmcFailure(RuntimeError):
    """The random-walk sampler stopped accepting moves."""


class DataError(ValueError):
    """Input data does not match the model schema."""


class ConfigError(ValueError):
    """Run configuration is invalid."""
