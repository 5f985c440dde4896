"""Synthetic visually-rich pages: layout templates, glyph rendering, dataset IO.

Every page carries four entity classes (company, address, date, total) plus
unlabeled numeric decoy segments. The date and total slots sit in fixed
columns inside a shared vertical band whose jitter randomizes their reading
order; the decoys mimic the same text format, ink intensity, and pixel
alignment at positions that vary per page. Text alone therefore cannot
separate the numeric classes from each other or from the decoys: layout has
to carry that signal, which is exactly the property the ablation study
measures. All slot positions are multiples of 4 so identical text renders
with identical sub-sampling phase under a stride-4 feature map.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .document import Document
from .rand import substream

PAGE_W = 160
PAGE_H = 192

GLYPH_COLS = 5
GLYPH_ROWS = 7
DOT = 2  # pixels per glyph dot
CHAR_ADVANCE = GLYPH_COLS * DOT + 2
CHAR_HEIGHT = GLYPH_ROWS * DOT

# grey ink level per class; date/total/other share one level on purpose so
# the visual branch cannot tell the numeric slots apart
CLASS_INK = {"company": 110, "address": 50, "date": 0, "total": 0, "other": 0}

VOCAB_CHARS = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ $./"
ENTITY_CLASSES = ("address", "company", "date", "total")
NUMERIC_CLASSES = ("date", "total")

_FONT_SEED = 0xF047


def glyph(ch: str) -> np.ndarray:
    """Deterministic 7x5 dot pattern for a character; space is blank."""
    if ch == " ":
        return np.zeros((GLYPH_ROWS, GLYPH_COLS), dtype=bool)
    rng = substream(_FONT_SEED, "glyph", ord(ch))
    while True:
        pattern = rng.random((GLYPH_ROWS, GLYPH_COLS)) < 0.45
        if 6 <= pattern.sum() <= 27:
            return pattern


# ---------------------------------------------------------------------------
# templates


@dataclass
class Slot:
    cls: str  # entity class or "other"
    gen: str  # text-corpus generator id
    x: int
    y_choices: list
    lines: int = 1
    line_step: int = 20
    group: str | None = None  # slots sharing a group share zone flip and text


@dataclass
class LayoutTemplate:
    template_id: str
    slots: list
    # paired y-choice sets for grouped slots; one coin flip picks a zone
    group_zones: dict = field(default_factory=dict)


def default_template() -> LayoutTemplate:
    pair_band = [124, 128, 132, 136]
    decoy_zone_a = [84, 88, 92]
    decoy_zone_b = [168, 172, 176]
    return LayoutTemplate(
        template_id="receipt",
        slots=[
            Slot("company", "company_name", x=8, y_choices=[8]),
            Slot("address", "street_address", x=8, y_choices=[32], lines=2),
            Slot("other", "slashed_number", x=8, y_choices=[], group="decoys"),
            Slot("other", "slashed_number", x=96, y_choices=[], group="decoys"),
            Slot("date", "slashed_number", x=8, y_choices=pair_band),
            Slot("total", "amount", x=96, y_choices=pair_band),
        ],
        group_zones={"decoys": [decoy_zone_a, decoy_zone_b]},
    )


def header_only_template() -> LayoutTemplate:
    """A template with no numeric pair; ineligible for ambiguity injection."""
    return LayoutTemplate(
        template_id="header-only",
        slots=[
            Slot("company", "company_name", x=8, y_choices=[8]),
            Slot("address", "street_address", x=8, y_choices=[48], lines=2),
        ],
    )


TEMPLATES = {"receipt": default_template, "header-only": header_only_template}

_LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
_DIGITS = "0123456789"


def _word(rng, lo, hi):
    n = int(rng.integers(lo, hi + 1))
    return "".join(_LETTERS[rng.integers(0, 26)] for _ in range(n))


def _digits(rng, n):
    return "".join(_DIGITS[rng.integers(0, 10)] for _ in range(n))


def sample_text(gen: str, rng) -> list:
    """Sample the line(s) of text for one slot from its corpus generator."""
    if gen == "company_name":
        return [_word(rng, 6, 10)]
    if gen == "street_address":
        return [f"{_digits(rng, 3)} {_word(rng, 4, 7)}", f"{_word(rng, 4, 6)} {_word(rng, 2, 3)}"]
    if gen == "slashed_number":
        return [f"{_digits(rng, 2)}/{_digits(rng, 2)}"]
    if gen == "amount":
        return [f"${_digits(rng, 1)}.{_digits(rng, 2)}"]
    raise ValueError(f"unknown text generator {gen!r}")


def _snap4(x: int) -> int:
    return int(x) & ~3


def _box_for(x: int, y: int, text: str) -> list:
    w = CHAR_ADVANCE * len(text) - 2
    h = CHAR_HEIGHT
    return [[x, y], [x + w, y], [x + w, y + h], [x, y + h]]


def _tags_for(cls: str, text: str, continuation: bool) -> list:
    if cls == "other":
        return ["O"] * len(text)
    first = f"I-{cls}" if continuation else f"B-{cls}"
    return [first] + [f"I-{cls}"] * (len(text) - 1)


# ---------------------------------------------------------------------------
# generation


def gen_document(template: LayoutTemplate, rng, doc_id: int = 0, page_size=(PAGE_W, PAGE_H)) -> Document:
    """Instantiate one page from a template with seeded jitter and text."""
    page_w, page_h = page_size
    zone_pick = {}
    for group, zones in template.group_zones.items():
        zone_pick[group] = zones[int(rng.integers(0, len(zones)))]
    group_text = {}

    segments, boxes, tags = [], [], []
    for slot in template.slots:
        if slot.group is not None and slot.group in group_text:
            lines = group_text[slot.group]
        else:
            lines = sample_text(slot.gen, rng)
            if slot.group is not None:
                group_text[slot.group] = lines
        y_choices = zone_pick.get(slot.group, slot.y_choices) or slot.y_choices
        y = int(y_choices[int(rng.integers(0, len(y_choices)))])
        for line_no, text in enumerate(lines):
            x, ly = slot.x, y + line_no * slot.line_step
            for _ in range(10):
                if x + CHAR_ADVANCE * len(text) - 2 <= page_w and ly + CHAR_HEIGHT <= page_h:
                    break
                text = sample_text(slot.gen, rng)[line_no]
            else:
                x = _snap4(page_w - (CHAR_ADVANCE * len(text) - 2))
                ly = min(ly, _snap4(page_h - CHAR_HEIGHT))
            segments.append(text)
            boxes.append(_box_for(x, ly, text))
            tags.append(_tags_for(slot.cls, text, continuation=line_no > 0))

    doc = Document(
        doc_id=doc_id,
        segments=segments,
        boxes=boxes,
        image=np.full((page_h, page_w), 255, dtype=np.uint8),
        gold_tags=tags,
        page_size=(page_w, page_h),
    )
    doc.image = render(doc)
    return doc


def _segment_class(tag_list) -> str:
    for t in tag_list:
        if t != "O":
            return t[2:]
    return "other"


def inject_ambiguity(doc: Document, rng, rate: float) -> tuple:
    """With probability ``rate``, give two distinct numeric classes one text.

    Returns (document, injected flag, eligible flag). Ineligible documents
    (fewer than two distinct numeric-class slots) pass through unchanged.
    """
    starts = {}
    for i, tag_list in enumerate(doc.gold_tags):
        cls = _segment_class(tag_list)
        if cls in NUMERIC_CLASSES and tag_list[0].startswith("B-") and cls not in starts:
            starts[cls] = i
    eligible = len(starts) >= 2
    roll = rng.random()
    if not eligible or roll >= rate:
        return doc, False, eligible

    others = {t for j, t in enumerate(doc.segments) if j not in starts.values()}
    shared = sample_text("slashed_number", rng)[0]
    while shared in others:
        shared = sample_text("slashed_number", rng)[0]

    segments = list(doc.segments)
    boxes = [list(map(list, b)) for b in doc.boxes]
    tags = [list(t) for t in doc.gold_tags]
    for cls, idx in starts.items():
        segments[idx] = shared
        x, y = boxes[idx][0]
        boxes[idx] = _box_for(int(x), int(y), shared)
        tags[idx] = _tags_for(cls, shared, continuation=False)
    out = Document(
        doc_id=doc.doc_id,
        segments=segments,
        boxes=boxes,
        image=doc.image,
        gold_tags=tags,
        page_size=doc.page_size,
    )
    out.image = render(out)
    return out, True, True


def render(doc: Document) -> np.ndarray:
    """Draw dot-matrix glyphs onto a white page; ink level depends on class."""
    w, h = doc.page_size
    img = np.full((h, w), 255, dtype=np.uint8)
    for text, box, tag_list in zip(doc.segments, doc.boxes, doc.gold_tags or [["O"] * len(t) for t in doc.segments]):
        ink = CLASS_INK[_segment_class(tag_list)]
        x0, y0 = int(box[0][0]), int(box[0][1])
        for k, ch in enumerate(text):
            pattern = glyph(ch)
            gx = x0 + k * CHAR_ADVANCE
            for r in range(GLYPH_ROWS):
                for c in range(GLYPH_COLS):
                    if pattern[r, c]:
                        img[y0 + DOT * r : y0 + DOT * (r + 1), gx + DOT * c : gx + DOT * (c + 1)] = ink
    return img


# ---------------------------------------------------------------------------
# manifest and dataset


def make_manifest(
    seed: int,
    n_train: int,
    n_val: int,
    n_test: int = 0,
    ambiguity_rate: float = 0.0,
    template_mix=None,
) -> dict:
    return {
        "seed": int(seed),
        "counts": {"train": int(n_train), "val": int(n_val), "test": int(n_test)},
        "page_size": [PAGE_W, PAGE_H],
        "template_mix": dict(template_mix or {"receipt": 1.0}),
        "ambiguity_rate": float(ambiguity_rate),
        "vocabulary": VOCAB_CHARS,
        "tag_classes": list(ENTITY_CLASSES),
    }


def generate_dataset(manifest: dict) -> tuple:
    """All documents for a manifest, plus generation stats."""
    counts = manifest["counts"]
    total = counts["train"] + counts["val"] + counts["test"]
    names = sorted(manifest["template_mix"])
    weights = np.array([manifest["template_mix"][t] for t in names], dtype=np.float64)
    weights = weights / weights.sum()
    page_size = tuple(manifest["page_size"])
    rate = manifest["ambiguity_rate"]

    docs = []
    stats = {"injected": 0, "ineligible": 0}
    for i in range(total):
        rng = substream(manifest["seed"], "synth", i)
        name = names[int(rng.choice(len(names), p=weights))]
        doc = gen_document(TEMPLATES[name](), rng, doc_id=i, page_size=page_size)
        doc, injected, eligible = inject_ambiguity(doc, rng, rate)
        stats["injected"] += int(injected)
        stats["ineligible"] += int(not eligible)
        docs.append(doc)
    return docs, stats


def split_dataset(docs: list, manifest: dict) -> dict:
    c = manifest["counts"]
    a, b = c["train"], c["train"] + c["val"]
    return {"train": docs[:a], "val": docs[a:b], "test": docs[b:]}


# ---------------------------------------------------------------------------
# files


def save_pgm(path, img: np.ndarray):
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def load_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if not blob.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":  # comment line
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    data = blob[pos:]
    if len(data) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixel bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_dataset(docs: list, manifest: dict, out_dir, stats: dict | None = None):
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    manifest = dict(manifest)
    if stats is not None:
        manifest["stats"] = stats
    (out / "manifest.json").write_text(_canonical(manifest) + "\n")
    with open(out / "annotations.jsonl", "w") as f:
        for doc in docs:
            image_rel = f"images/{doc.doc_id:05d}.pgm"
            save_pgm(out / image_rel, doc.image)
            record = {
                "id": doc.doc_id,
                "segments": [
                    {
                        "text": text,
                        "box": [[int(v[0]), int(v[1])] for v in box],
                        "tags": list(tags),
                    }
                    for text, box, tags in zip(doc.segments, doc.boxes, doc.gold_tags)
                ],
                "image": image_rel,
            }
            f.write(_canonical(record) + "\n")


def load_dataset(data_dir) -> tuple:
    """Read a dataset directory back into (documents, manifest)."""
    root = Path(data_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    page_size = tuple(manifest["page_size"])
    docs = []
    with open(root / "annotations.jsonl") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"annotations.jsonl line {line_no}: {err}") from err
            image_path = root / record["image"]
            if not image_path.exists():
                raise FileNotFoundError(f"annotations.jsonl line {line_no}: missing image {image_path}")
            docs.append(
                Document(
                    doc_id=record["id"],
                    segments=[s["text"] for s in record["segments"]],
                    boxes=[s["box"] for s in record["segments"]],
                    image=load_pgm(image_path),
                    gold_tags=[s["tags"] for s in record["segments"]],
                    page_size=page_size,
                )
            )
    return docs, manifest


def dataset_hash(data_dir) -> str:
    """sha256 over manifest, annotations, and images in stable order."""
    root = Path(data_dir)
    digest = hashlib.sha256()
    paths = [root / "manifest.json", root / "annotations.jsonl"]
    paths += sorted((root / "images").glob("*.pgm"))
    for p in paths:
        digest.update(p.name.encode())
        digest.update(p.read_bytes())
    return digest.hexdigest()
