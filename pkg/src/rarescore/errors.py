"""Error types shared across modules."""


class FormatError(ValueError):
    """A persisted file is malformed: bad magic, truncation, version skew,
    or contents that violate the format's invariants."""


class UndefinedScoreError(ValueError):
    """Commonality score is undefined: the predicted class never activated
    any neuron while the activation matrix was built."""
