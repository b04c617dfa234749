from __future__ import annotations


class PoseDecodingError(Exception):
    pass


class ShapeError(PoseDecodingError):
    pass


class BoundsError(PoseDecodingError):
    pass


class DomainError(PoseDecodingError):
    pass


class PreconditionError(PoseDecodingError):
    pass


class SkeletonError(PoseDecodingError):
    pass


class GenerationError(PoseDecodingError):
    pass


class MetricError(PoseDecodingError):
    pass


class AlignmentError(MetricError):
    pass


class MapFormatError(PoseDecodingError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class DecodeError(PoseDecodingError):
    def __init__(self, message: str, person_id: int | None = None) -> None:
        prefix = f"person {person_id}: " if person_id is not None else ""
        super().__init__(f"{prefix}{message}")
        self.person_id = person_id


class EmptyPoseError(DecodeError):
    pass
