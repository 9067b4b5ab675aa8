"""Exception hierarchy shared across the package."""


class DeepIcfError(Exception):
    """Base class for all errors raised by this package."""


class DataError(DeepIcfError):
    """Malformed input data or an impossible split request."""


class ConfigError(DeepIcfError):
    """Invalid configuration file or inconsistent hyper-parameters."""


class ModelError(DeepIcfError):
    """Invalid model state or out-of-range user/item indices."""


class CheckpointError(DeepIcfError):
    """Corrupt or incompatible checkpoint file."""


class EvalError(DeepIcfError):
    """Evaluation failure, e.g. a scorer produced a non-finite score."""


class TrainingDiverged(DeepIcfError):
    """Training produced a non-finite loss.

    Carries enough context to diagnose the offending instance and, when
    raised from the epoch driver, a snapshot of the last finite parameters.
    """

    def __init__(self, message, *, epoch=None, instance=None, logit=None,
                 last_params=None):
        super().__init__(message)
        self.epoch = epoch
        self.instance = instance
        self.logit = logit
        self.last_params = last_params
