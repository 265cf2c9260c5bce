"""Exception hierarchy for the word spotting package."""


class WordSpotError(Exception):
    """Base class for all package errors."""


class EmptyWord(WordSpotError, ValueError):
    pass


class MalformedImage(WordSpotError, ValueError):
    pass


class BadArchitecture(WordSpotError, ValueError):
    pass


class GeometryMismatch(WordSpotError, ValueError):
    pass


class LengthMismatch(WordSpotError, ValueError):
    pass


class ShapeMismatch(WordSpotError, ValueError):
    pass


class EmptyDataset(WordSpotError, ValueError):
    pass


class VersionMismatch(WordSpotError, ValueError):
    pass


class ChecksumMismatch(WordSpotError, ValueError):
    pass


class ZeroVector(WordSpotError, ValueError):
    pass


class MixedMeasures(WordSpotError, ValueError):
    pass


class EmptyLexicon(WordSpotError, ValueError):
    pass


class EmptyGallery(WordSpotError, ValueError):
    pass


class NoRelevant(WordSpotError, ValueError):
    pass


class NoQueries(WordSpotError, ValueError):
    pass


class EmptyCorpus(WordSpotError, ValueError):
    pass
