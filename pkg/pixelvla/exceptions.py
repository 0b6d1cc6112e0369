"""
Exceptions raised by pixelvla.
"""


class PixelVLAError(Exception):
    """
    An umbrella exception to catch all errors raised by pixelvla.
    """
    pass  # pylint: disable=unnecessary-pass


class DimensionError(PixelVLAError):
    """
    Operand shapes do not conform.
    """


class GradientError(PixelVLAError):
    """
    An analytic gradient is not finite.
    """


class ConfigurationError(PixelVLAError):
    """
    A component was configured with values it cannot work with.
    """


class ValidationError(PixelVLAError):
    """
    A value violates the documented precondition of an operation.
    """


class FormatError(PixelVLAError):
    """
    A file does not follow the expected binary or text format.
    """


class EpisodeIOError(FormatError, IOError):
    """
    An episode file ended before the record was complete.
    """


class CheckpointError(FormatError):
    """
    A checkpoint cannot be read or does not match the model it is loaded into.
    """


class DegenerateStatsError(PixelVLAError):
    """
    Normalization statistics cannot be computed for a constant action dimension.
    """


class EmptyMaskError(PixelVLAError):
    """
    A mask has no support at the resolution it is pooled at.
    """


class ContractError(PixelVLAError):
    """
    A sequence layout does not provide what a consumer requires.
    """


class ProposalError(PixelVLAError):
    """
    A region proposal cannot be derived from a degenerate box.
    """


class PromptError(PixelVLAError):
    """
    Visual prompts cannot be derived from the given mask.
    """


class PipelineError(PixelVLAError):
    """
    The annotation pipeline cannot continue.
    """


class BackendError(PixelVLAError):
    """
    A perception or reasoning backend failed or answered out of protocol.
    """


class TrainingError(PixelVLAError):
    """
    A training run broke one of its contracts.
    """
