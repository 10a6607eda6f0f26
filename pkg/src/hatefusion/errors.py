"""Exception hierarchy shared across the pipeline."""


class HateFusionError(Exception):
    """Base class for every error raised by this package."""


# corpus
class MissingFile(HateFusionError, FileNotFoundError):
    pass


class DuplicateIndex(HateFusionError):
    def __init__(self, index):
        super().__init__(f"duplicate index {index!r}")
        self.index = index


class UnreadableImage(HateFusionError):
    def __init__(self, index, detail=""):
        msg = f"unreadable image for {index!r}"
        super().__init__(f"{msg}: {detail}" if detail else msg)
        self.index = index


class MalformedRow(HateFusionError):
    def __init__(self, line, detail=""):
        super().__init__(f"malformed row at line {line}: {detail}")
        self.line = line


class UnlabeledSample(HateFusionError):
    def __init__(self, index):
        super().__init__(f"sample {index!r} has no label")
        self.index = index


class EmptyManifest(HateFusionError):
    pass


class EmptyClass(HateFusionError):
    pass


class BadFractions(HateFusionError):
    pass


# ocr
class EngineUnavailable(HateFusionError):
    pass


class EngineFailure(HateFusionError):
    def __init__(self, status, stderr=""):
        super().__init__(f"OCR engine exited with status {status}: {stderr[:200]}")
        self.status = status
        self.stderr = stderr


class Timeout(HateFusionError):
    def __init__(self, seconds):
        super().__init__(f"OCR engine timed out after {seconds}s")
        self.seconds = seconds


class CacheWriteFailure(HateFusionError):
    pass


# encoders / model
class ShapeMismatch(HateFusionError):
    pass


class RoleMismatch(HateFusionError):
    pass


class BackboneMismatch(HateFusionError):
    pass


class ConfigError(HateFusionError):
    pass


class NonFiniteLogits(HateFusionError):
    pass


class MissingText(HateFusionError):
    def __init__(self, index):
        super().__init__(f"sample {index!r} has no OCR text")
        self.index = index


# trainer
class EmptyBatch(HateFusionError):
    pass


class NonFiniteLoss(HateFusionError):
    def __init__(self, epoch, batch):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class FingerprintMismatch(HateFusionError):
    pass


class CorruptCheckpoint(HateFusionError):
    pass


# evaluator
class LengthMismatch(HateFusionError):
    pass


class EmptyInput(HateFusionError):
    pass


class EmptyMatrix(HateFusionError):
    pass


class UnknownVariant(HateFusionError):
    pass


class DuplicateVariant(UnknownVariant):
    pass


class EmptyHistory(HateFusionError):
    pass


class UnwritableDirectory(HateFusionError):
    pass


class UnsupportedColorSpace(HateFusionError):
    pass
