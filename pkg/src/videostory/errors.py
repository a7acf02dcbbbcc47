"""Exception types raised across the package.

Every error derives from :class:`VideoStoryError` so callers (and the CLI)
can separate data/model problems from programming errors.
"""


class VideoStoryError(Exception):
    """Base class for all data, model and parameter errors."""


class EmptyCorpus(VideoStoryError):
    pass


class IdMismatch(VideoStoryError):
    pass


class TooFewVideos(VideoStoryError):
    pass


class RankTooLarge(VideoStoryError):
    pass


class ShapeMismatch(VideoStoryError):
    pass


class NonFinite(VideoStoryError):
    pass


class Diverged(VideoStoryError):
    def __init__(self, epoch, step):
        super().__init__(f"parameters became non-finite at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step


class BadParam(VideoStoryError):
    pass


class BadAlpha(BadParam):
    pass


class BadWeight(BadParam):
    pass


class BadSpec(BadParam):
    pass


class EmptyQuery(VideoStoryError):
    pass


class EmptyQueryWarning(UserWarning):
    """An event definition shares no terms with the vocabulary."""


class NoPositives(VideoStoryError):
    pass


class Empty(VideoStoryError):
    pass


class TooFewEligible(VideoStoryError):
    pass


class Singular(VideoStoryError):
    pass


class FormatError(VideoStoryError):
    """A file does not follow its declared on-disk format."""
