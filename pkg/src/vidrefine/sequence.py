from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import BoxGeometry


@dataclass
class VideoSequence:
    """T pseudo-label frames plus ground truth on the annotated frame indices.

    Training only needs the final frame annotated; synthetic sequences carry
    ground truth on every frame.
    """

    seq_id: str
    pseudo: np.ndarray  # (T, D)
    ground_truth: dict[int, list[tuple[int, BoxGeometry]]] = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.pseudo.shape[0]

    @property
    def final_objects(self) -> list[tuple[int, BoxGeometry]]:
        try:
            return self.ground_truth[self.T - 1]
        except KeyError:
            raise ValueError(f"sequence {self.seq_id!r} has no ground truth on its final frame") from None

    def __eq__(self, other):
        if not isinstance(other, VideoSequence):
            return NotImplemented
        return (
            self.seq_id == other.seq_id
            and self.pseudo.shape == other.pseudo.shape
            and np.array_equal(self.pseudo, other.pseudo)
            and self.ground_truth == other.ground_truth
        )
