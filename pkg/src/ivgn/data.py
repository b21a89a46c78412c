"""Studies, vocabulary, manifest I/O, the synthetic glyph corpus, and batching."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
from PIL import Image

from ivgn.errors import DataError
from ivgn.metrics.text import tokenize

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
SPLITS = ("train", "val", "test")
IMAGE_MEAN, IMAGE_STD = 0.5, 0.5


@dataclass
class Study:
    id: str
    images: List[str]
    report: str
    split: str
    pixels: Optional[List[np.ndarray]] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.images:
            raise DataError(f"study {self.id!r} has no images")
        if self.split not in SPLITS:
            raise DataError(f"study {self.id!r} has unknown split {self.split!r}")


class Vocabulary:
    def __init__(self, tokens: Sequence[str], min_freq: int = 1):
        self.itos: List[str] = list(RESERVED) + list(tokens)
        self.stoi: Dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise DataError("vocabulary tokens must be unique and disjoint from reserved tokens")
        self.min_freq = min_freq

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, text) -> List[int]:
        toks = tokenize(text) if isinstance(text, str) else text
        return [self.stoi.get(t, UNK) for t in toks]

    def decode(self, ids) -> List[str]:
        return [self.itos[i] for i in ids if i not in (PAD, BOS, EOS)]

    def to_text(self, ids) -> str:
        return " ".join(self.decode(ids))

    def to_list(self) -> List[str]:
        return self.itos[len(RESERVED):]

    @classmethod
    def from_list(cls, tokens: Sequence[str], min_freq: int = 1) -> "Vocabulary":
        return cls(tokens, min_freq)


def build_vocab(studies: Sequence[Study], min_freq: int = 1) -> Vocabulary:
    """Tokens with frequency >= min_freq, ordered by (frequency desc, token asc)."""
    counts = Counter()
    for s in studies:
        counts.update(tokenize(s.report))
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocabulary([t for t in kept if t not in RESERVED], min_freq)


# --- manifest ------------------------------------------------------------
def load_manifest(path) -> List[Study]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot parse manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("studies"), list):
        raise DataError(f"{path}: expected an object with a 'studies' list")
    root = path.parent
    studies, seen = [], set()
    for i, entry in enumerate(doc["studies"]):
        try:
            sid, images, report, split = (entry["id"], entry["images"], entry["report"], entry["split"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: study #{i} missing field {exc}") from exc
        sid = str(sid)
        if sid in seen:
            raise DataError(f"{path}: duplicate study id {sid!r}")
        seen.add(sid)
        if split not in SPLITS:
            raise DataError(f"{path}: study {sid!r} has unknown split {split!r}")
        if not isinstance(images, list) or not images:
            raise DataError(f"{path}: study {sid!r} lists no images")
        resolved = []
        for img in images:
            p = Path(img)
            p = p if p.is_absolute() else root / p
            if not p.is_file():
                raise DataError(f"{path}: study {sid!r} references missing image {p}")
            resolved.append(str(p))
        if split in ("train", "val") and not str(report).strip():
            raise DataError(f"{path}: study {sid!r} has an empty report")
        studies.append(Study(sid, resolved, str(report), split))
    return studies


def write_manifest(studies: Sequence[Study], out_dir) -> Path:
    """Write studies (and in-memory pixels, if any) under ``out_dir``; returns manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in studies:
        rel = []
        for v, img in enumerate(s.images):
            if s.pixels is not None:
                target = out / img
                target.parent.mkdir(parents=True, exist_ok=True)
                Image.fromarray(s.pixels[v], mode="L").save(target, format="PNG")
            rel.append(img)
        entries.append({"id": s.id, "images": rel, "report": s.report, "split": s.split})
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"studies": entries}, indent=1) + "\n", encoding="utf-8")
    return manifest


def assign_splits(count: int, seed: int) -> List[str]:
    """7:1:2 train/val/test tags in a seeded random order."""
    n_train = int(round(0.7 * count))
    n_val = int(round(0.1 * count))
    tags = ["train"] * n_train + ["val"] * n_val + ["test"] * (count - n_train - n_val)
    order = np.random.default_rng(seed).permutation(count)
    out = [""] * count
    for tag, idx in zip(tags, order):
        out[int(idx)] = tag
    return out


# --- synthetic corpus ----------------------------------------------------
GLYPH_KINDS = ("disk", "ring", "bar", "cross", "blob", "wedge")
BASE_CLAUSE = "the lungs are clear . no acute cardiopulmonary abnormality ."
DEFAULT_GRAMMAR: Dict[str, str] = {
    "disk": "there is a right pleural effusion .",
    "ring": "the heart is enlarged with mild cardiomegaly .",
    "bar": "a support tube is in place .",
    "cross": "there is a small left pneumothorax .",
    "blob": "there is focal consolidation in the left lower lobe .",
    "wedge": "there is basilar atelectasis .",
}


@dataclass
class Glyph:
    kind: str
    cx: float
    cy: float
    size: float
    intensity: float


@dataclass
class SyntheticScene:
    side: int
    glyphs: List[Glyph]
    seed: int

    @property
    def findings(self) -> List[str]:
        return [g.kind for g in self.glyphs if g.kind != "frame"]


def _glyph_mask(kind: str, side: int, cx: float, cy: float, size: float) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) + 0.5
    dx, dy = xx - cx, yy - cy
    r = size / 2.0
    dist = np.hypot(dx, dy)
    if kind == "frame":
        m = 2.0
        return ((xx < m) | (yy < m) | (xx > side - m) | (yy > side - m)).astype(np.float64)
    if kind == "disk":
        return (dist <= r).astype(np.float64)
    if kind == "ring":
        return ((dist <= r) & (dist >= r * 0.55)).astype(np.float64)
    if kind == "bar":
        return ((np.abs(dx) <= r) & (np.abs(dy) <= r * 0.3)).astype(np.float64)
    if kind == "cross":
        arm = r * 0.28
        return (((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= r))
                ).astype(np.float64)
    if kind == "blob":
        return np.exp(-(dist**2) / (2 * (r * 0.5) ** 2))
    if kind == "wedge":
        # upward-pointing triangle inside the glyph's bounding box
        top = cy - r
        frac = (yy - top) / (2 * r)
        return ((frac >= 0) & (frac <= 1) & (np.abs(dx) <= frac * r)).astype(np.float64)
    raise DataError(f"unknown glyph kind {kind!r}")


def make_scene(rng: np.random.Generator, side: int, seed: int, kinds=GLYPH_KINDS) -> SyntheticScene:
    n_opt = int(rng.integers(0, 4))
    chosen = sorted(rng.choice(len(kinds), size=n_opt, replace=False).tolist())
    cells = rng.permutation(4)[:n_opt]
    half = side / 2.0
    glyphs = [Glyph("frame", half, half, side, 0.3)]
    for k, cell in zip(chosen, cells):
        ox, oy = (cell % 2) * half, (cell // 2) * half
        size = float(rng.uniform(0.55, 0.8) * half)
        slack = (half - size) / 2.0
        cx = ox + half / 2 + float(rng.uniform(-slack, slack))
        cy = oy + half / 2 + float(rng.uniform(-slack, slack))
        glyphs.append(Glyph(kinds[k], cx, cy, size, float(rng.uniform(0.7, 1.0))))
    return SyntheticScene(side, glyphs, seed)


def render_scene(scene: SyntheticScene, view: int = 0) -> np.ndarray:
    """8-bit grayscale canvas; deterministic in (scene, view)."""
    canvas = np.full((scene.side, scene.side), 0.08)
    for g in scene.glyphs:
        canvas = np.maximum(canvas, g.intensity * _glyph_mask(g.kind, scene.side, g.cx, g.cy, g.size))
    noise = np.random.default_rng([scene.seed, view]).normal(0.0, 0.03, canvas.shape)
    canvas = np.clip(canvas + noise, 0.0, 1.0)
    if view % 2 == 1:
        canvas = canvas[:, ::-1]
    return np.round(canvas * 255).astype(np.uint8)


def scene_report(scene: SyntheticScene, grammar: Dict[str, str] = DEFAULT_GRAMMAR) -> str:
    found = set(scene.findings)
    clauses = [grammar[k] for k in grammar if k in found]
    return " ".join(clauses) if clauses else BASE_CLAUSE


def findings_from_report(report: str, grammar: Dict[str, str] = DEFAULT_GRAMMAR) -> List[str]:
    """Inverse of ``scene_report``: the glyph kinds whose clauses make up ``report``."""
    toks = tokenize(report)
    if toks == tokenize(BASE_CLAUSE):
        return []
    kinds, pos = [], 0
    for kind, clause in grammar.items():
        ct = tokenize(clause)
        if toks[pos : pos + len(ct)] == ct:
            kinds.append(kind)
            pos += len(ct)
    if pos != len(toks):
        raise DataError(f"report not generated by the grammar: {report!r}")
    return kinds


def generate_synthetic(count: int, seed: int = 0, grammar: Dict[str, str] = DEFAULT_GRAMMAR,
                       side: int = 32, views: int = 1) -> List[Study]:
    if count < 1:
        raise DataError(f"synthetic corpus needs count >= 1, got {count}")
    kinds = tuple(grammar)
    splits = assign_splits(count, seed)
    studies = []
    for i in range(count):
        scene_seed = int(np.random.default_rng([seed, i]).integers(2**31))
        scene = make_scene(np.random.default_rng(scene_seed), side, scene_seed, kinds)
        pixels = [render_scene(scene, v) for v in range(views)]
        sid = f"syn{i:05d}"
        studies.append(Study(
            sid, [f"images/{sid}_{v}.png" for v in range(views)], scene_report(scene, grammar),
            splits[i], pixels,
        ))
    return studies


# --- batching ------------------------------------------------------------
@dataclass
class Batch:
    images: np.ndarray  # B x views x 3 x side x side
    tokens: np.ndarray  # B x T, BOS ... EOS PAD*
    mask: np.ndarray  # B x T, True on BOS..EOS
    ids: List[str]


class ImageCache:
    def __init__(self):
        self._store: Dict[tuple, np.ndarray] = {}

    def study_images(self, study: Study, views: int, side: int) -> np.ndarray:
        key = (study.id, tuple(study.images), views, side)
        if key not in self._store:
            self._store[key] = load_study_images(study, views, side)
        return self._store[key]


def _to_channels(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        return np.repeat(arr[None], 3, axis=0)
    return np.transpose(arr[..., :3], (2, 0, 1))


def load_study_images(study: Study, views: int, side: int) -> np.ndarray:
    """``views x 3 x side x side`` float array standardized with mean/std 0.5."""
    out = []
    for v in range(views):
        idx = min(v, len(study.images) - 1)
        if study.pixels is not None:
            img = Image.fromarray(study.pixels[idx])
        else:
            try:
                img = Image.open(study.images[idx])
                img.load()
            except OSError as exc:
                raise DataError(f"cannot read image {study.images[idx]}: {exc}") from exc
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        if img.size != (side, side):
            img = img.resize((side, side), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float64) / 255.0
        out.append((_to_channels(arr) - IMAGE_MEAN) / IMAGE_STD)
    return np.stack(out)


def encode_reports(reports: Sequence[str], vocab: Vocabulary):
    rows = [[BOS] + vocab.encode(r) + [EOS] for r in reports]
    width = max(len(r) for r in rows)
    tokens = np.full((len(rows), width), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        tokens[i, : len(r)] = r
    return tokens, tokens != PAD


def batch_iter(studies: Sequence[Study], vocab: Vocabulary, batch_size: int, image_side: int,
               shuffle_seed: Optional[int] = None, views: int = 1,
               cache: Optional[ImageCache] = None) -> Iterator[Batch]:
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(studies))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(studies))
    cache = cache or ImageCache()
    for start in range(0, len(order), batch_size):
        chunk = [studies[int(i)] for i in order[start : start + batch_size]]
        images = np.stack([cache.study_images(s, views, image_side) for s in chunk])
        tokens, mask = encode_reports([s.report for s in chunk], vocab)
        yield Batch(images, tokens, mask, [s.id for s in chunk])


def split_studies(studies: Sequence[Study], split: str) -> List[Study]:
    return [s for s in studies if s.split == split]
