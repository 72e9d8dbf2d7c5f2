"""Exception classes for diffaug."""


class DiffaugError(Exception):
    """Base exception for diffaug."""
    pass


class ConfigError(DiffaugError):
    """Configuration could not be parsed or validated."""
    pass


class ShapeError(DiffaugError):
    """Operand shapes disagree.

    Attributes:
        left: Shape of the first operand.
        right: Shape of the second operand.
    """

    def __init__(self, message: str, left: tuple[int, ...], right: tuple[int, ...]):
        super().__init__(f"{message}: {left} vs {right}")
        self.left = left
        self.right = right


class UnsupportedOperationError(DiffaugError):
    """An operation outside the recorded primitive set touched a tape variable."""
    pass


class NonFiniteError(DiffaugError):
    """A NaN or infinity appeared where only finite values are allowed."""
    pass


class ScheduleError(DiffaugError):
    """Invalid noise schedule parameters or out-of-range time / lambda."""
    pass


class TrainingError(DiffaugError):
    """Training aborted (empty data, non-finite loss)."""
    pass


class LabelError(DiffaugError):
    """Class label outside [0, num_classes], where num_classes is the null label."""
    pass


class UnsupportedDistributionError(DiffaugError):
    """Closed-form computation requested for a data law without one."""
    pass


class SelectionError(DiffaugError):
    """Invalid top-k selection request or discriminator data."""
    pass


class DSPError(DiffaugError):
    """Invalid signal-processing parameters or inputs."""
    pass


class FormatError(DiffaugError):
    """A file does not follow its binary or text format."""
    pass


class WavFormatError(FormatError):
    """Malformed RIFF/WAVE file.

    Attributes:
        offset: Byte offset at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnsupportedCodecError(FormatError):
    """WAV codec or bit depth the reader does not decode."""
    pass


class SpectrogramFormatError(FormatError):
    """Malformed SGRM spectrogram file."""
    pass


class NotASpectrogramError(SpectrogramFormatError):
    """Magic bytes do not identify a spectrogram file."""
    pass


class SpectrogramSizeError(SpectrogramFormatError):
    """Payload length disagrees with the header."""
    pass


class CheckpointError(FormatError):
    """Malformed or mismatched model checkpoint."""
    pass


class ManifestError(FormatError):
    """Manifest CSV rows are missing columns or out of range."""
    pass
