"""Exception hierarchy shared by all pipeline stages."""


class ScrollmatError(Exception):
    """Base class; the CLI turns these into JSON error records."""

    code = "error"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class DecodeError(ScrollmatError):
    code = "decode_error"


class MaskError(ScrollmatError):
    code = "mask_error"


class ClusteringError(ScrollmatError):
    code = "clustering_error"


class EmptyMaskError(ScrollmatError):
    code = "empty_mask"


class FragmentTooSmallError(ScrollmatError):
    code = "fragment_too_small"


class FillError(ScrollmatError):
    code = "fill_error"

    def __init__(self, message: str, remaining: int = 0):
        super().__init__(message)
        self.remaining = remaining

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["remaining_pixels"] = self.remaining
        return d


class FeatureError(ScrollmatError):
    code = "feature_error"


class DictionaryError(ScrollmatError):
    code = "dictionary_error"


class DegenerateEvaluationError(ScrollmatError):
    code = "degenerate_evaluation"


class ManifestError(ScrollmatError):
    code = "manifest_error"
