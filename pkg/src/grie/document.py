"""Document record: text segments, quadrilateral boxes, page raster, gold tags."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Document:
    """One OCR-like page.

    segments: N non-empty strings.
    boxes: N quadrilaterals, each 4 (x, y) vertices in pixel units ordered
        top-left, top-right, bottom-right, bottom-left.
    image: greyscale page raster, uint8, shape (H, W).
    gold_tags: optional per-segment list of per-character BIO tag names.
    """

    doc_id: int
    segments: list
    boxes: list
    image: np.ndarray
    gold_tags: list | None = None
    page_size: tuple = field(default=None)  # (W, H)

    def __post_init__(self):
        if self.page_size is None:
            h, w = self.image.shape
            self.page_size = (w, h)
        self.validate()

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    def validate(self):
        n = len(self.segments)
        if n < 1:
            raise ValueError("document needs at least one segment")
        if len(self.boxes) != n:
            raise ValueError(f"{n} segments but {len(self.boxes)} boxes")
        if self.gold_tags is not None and len(self.gold_tags) != n:
            raise ValueError(f"{n} segments but {len(self.gold_tags)} tag lists")
        w, h = self.page_size
        for i, (text, box) in enumerate(zip(self.segments, self.boxes)):
            if not text:
                raise ValueError(f"segment {i} is empty")
            quad = np.asarray(box, dtype=np.float64)
            if quad.shape != (4, 2):
                raise ValueError(f"box {i} must be 4 (x,y) vertices, got shape {quad.shape}")
            if quad[:, 0].min() < 0 or quad[:, 0].max() > w or quad[:, 1].min() < 0 or quad[:, 1].max() > h:
                raise ValueError(f"box {i} leaves the {w}x{h} page: {box}")
            if self.gold_tags is not None and len(self.gold_tags[i]) != len(text):
                raise ValueError(
                    f"segment {i}: {len(text)} chars but {len(self.gold_tags[i])} tags"
                )


def normalize_boxes(doc: Document) -> np.ndarray:
    """Scale pixel vertices onto the [0, 100] x [0, 100] page square."""
    w, h = doc.page_size
    if w <= 0 or h <= 0:
        raise ValueError(f"page size must be positive, got {doc.page_size}")
    quads = np.asarray(doc.boxes, dtype=np.float64)
    out = np.empty_like(quads)
    out[:, :, 0] = 100.0 * quads[:, :, 0] / w
    out[:, :, 1] = 100.0 * quads[:, :, 1] / h
    return out


def reading_order(norm_boxes: np.ndarray) -> list:
    """Segment indices sorted top to bottom, then left to right, ties by index."""
    keys = [
        (float(q[:, 1].min()), float(q[:, 0].min()), i)
        for i, q in enumerate(np.asarray(norm_boxes))
    ]
    return [i for _, _, i in sorted(keys)]
