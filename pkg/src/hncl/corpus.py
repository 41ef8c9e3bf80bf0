"""Synthetic paired corpus generation, JSONL ingestion, and coverage stats.

Scenes hold one or two entities (object, color, size) plus a relation word
when there are two. Captions are rendered from fixed templates using only
builtin lexicon vocabulary, so every keyword-substitution operation applies
to them. Image features encode attribute binding through an object x color
outer product per entity; swapping the colors of two entities changes the
feature vector even though every per-color and per-object marginal is
unchanged, which is exactly the case a bag-of-features model cannot split.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from hncl.lexicon import (
    COLOR_WORDS,
    LOCATION_PAIRS,
    OBJECT_WORDS,
    Concept,
    ConceptLexicon,
    builtin_lexicon,
    find_keyword_spans,
)

__all__ = [
    "SIZE_NAMES",
    "RELATION_WORDS",
    "Entity",
    "SceneSpec",
    "CorpusConfig",
    "PairedSample",
    "JsonlError",
    "feature_dim",
    "render_caption",
    "featurize_scene",
    "sample_scene",
    "generate_corpus",
    "ingest_jsonl",
    "write_corpus_jsonl",
    "write_manifest",
    "corpus_stats",
]

log = logging.getLogger(__name__)

SIZE_NAMES = ("small", "large")  # size scalar -1 / +1

# Relation vocabulary: the location pair inventory, flattened in declaration order.
RELATION_WORDS = tuple(w for pair in LOCATION_PAIRS for w in pair)

N_COLORS = len(COLOR_WORDS)


class JsonlError(ValueError):
    """Schema or parse failure in a JSONL corpus, with the offending line."""

    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


@dataclass(frozen=True)
class Entity:
    object_id: int
    color_id: int
    size_id: int  # index into SIZE_NAMES


@dataclass(frozen=True)
class SceneSpec:
    """One or two attributed entities; relation present iff two entities."""

    entities: tuple[Entity, ...]
    relation: Optional[int] = None

    def __post_init__(self) -> None:
        if not 1 <= len(self.entities) <= 2:
            raise ValueError("scene needs 1 or 2 entities")
        if (len(self.entities) == 2) != (self.relation is not None):
            raise ValueError("relation must be present iff the scene has 2 entities")
        if self.relation is not None and not 0 <= self.relation < len(RELATION_WORDS):
            raise ValueError(f"relation id {self.relation} out of range")


@dataclass(frozen=True)
class CorpusConfig:
    n_samples: int
    object_vocab: int = 12
    binding_critical_fraction: float = 0.5
    noise_sigma: float = 0.05
    seed: int = 0
    two_entity_prob: float = 0.75  # for samples outside swapped pairs

    def __post_init__(self) -> None:
        if self.n_samples <= 0:
            raise ValueError("n_samples must be positive")
        if not 1 <= self.object_vocab <= len(OBJECT_WORDS):
            raise ValueError("object_vocab out of range")
        if not 0.0 <= self.binding_critical_fraction <= 1.0:
            raise ValueError("binding_critical_fraction must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.two_entity_prob <= 1.0:
            raise ValueError("two_entity_prob must be in [0, 1]")


@dataclass
class PairedSample:
    id: str
    caption: str
    image_features: np.ndarray
    concepts_present: frozenset[Concept] = field(default_factory=frozenset)
    scene: Optional[SceneSpec] = None

    def __post_init__(self) -> None:
        if not self.caption or not self.caption.split():
            raise ValueError(f"sample {self.id!r} has an empty caption")


def feature_dim(object_vocab: int) -> int:
    """Two entity blocks (object x color outer product + size scalar) plus the
    relation one-hot."""
    return 2 * (object_vocab * N_COLORS + 1) + len(RELATION_WORDS)


def render_caption(scene: SceneSpec) -> str:
    """Template captions: "a {size} {color} {object}" per entity, joined by the
    relation word for two-entity scenes."""
    parts = []
    for ent in scene.entities:
        parts.append(
            f"a {SIZE_NAMES[ent.size_id]} {COLOR_WORDS[ent.color_id]} {OBJECT_WORDS[ent.object_id]}"
        )
    if len(parts) == 1:
        return parts[0]
    return f"{parts[0]} {RELATION_WORDS[scene.relation]} {parts[1]}"


def featurize_scene(
    scene: SceneSpec,
    object_vocab: int,
    sigma: float,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Deterministic block layout plus optional per-coordinate Gaussian noise.

    Entity blocks are laid out in caption order; single-entity scenes leave
    the second block and the relation one-hot at zero.
    """
    block = object_vocab * N_COLORS + 1
    out = np.zeros(feature_dim(object_vocab), dtype=np.float64)
    for slot, ent in enumerate(scene.entities):
        if not 0 <= ent.object_id < object_vocab:
            raise ValueError(f"object_id {ent.object_id} outside vocab {object_vocab}")
        if not 0 <= ent.color_id < N_COLORS:
            raise ValueError(f"color_id {ent.color_id} out of range")
        base = slot * block
        out[base + ent.object_id * N_COLORS + ent.color_id] = 1.0
        out[base + block - 1] = -1.0 if ent.size_id == 0 else 1.0
    if scene.relation is not None:
        out[2 * block + scene.relation] = 1.0
    if sigma > 0:
        if rng is None:
            raise ValueError("rng is required when sigma > 0")
        out += rng.normal(0.0, sigma, size=out.shape)
    return out


def _random_entity(rng: np.random.Generator, object_vocab: int) -> Entity:
    return Entity(
        object_id=int(rng.integers(object_vocab)),
        color_id=int(rng.integers(N_COLORS)),
        size_id=int(rng.integers(2)),
    )


def sample_scene(
    rng: np.random.Generator, object_vocab: int, two_entity_prob: float
) -> SceneSpec:
    """Draw a random scene; attribute fields sampled uniformly."""
    if rng.random() < two_entity_prob:
        return SceneSpec(
            entities=(_random_entity(rng, object_vocab), _random_entity(rng, object_vocab)),
            relation=int(rng.integers(len(RELATION_WORDS))),
        )
    return SceneSpec(entities=(_random_entity(rng, object_vocab),))


def _swapped_pair(rng: np.random.Generator, object_vocab: int) -> tuple[SceneSpec, SceneSpec]:
    """Two-entity scene plus its color-swapped twin: identical token multiset,
    different attribute assignment."""
    o1 = int(rng.integers(object_vocab))
    o2 = int(rng.integers(object_vocab - 1))
    o2 = o2 if o2 < o1 else o2 + 1
    c1 = int(rng.integers(N_COLORS))
    c2 = int(rng.integers(N_COLORS - 1))
    c2 = c2 if c2 < c1 else c2 + 1
    s1, s2 = int(rng.integers(2)), int(rng.integers(2))
    rel = int(rng.integers(len(RELATION_WORDS)))
    scene = SceneSpec((Entity(o1, c1, s1), Entity(o2, c2, s2)), rel)
    twin = SceneSpec((Entity(o1, c2, s1), Entity(o2, c1, s2)), rel)
    return scene, twin


def _concepts_present(caption: str) -> frozenset[Concept]:
    return frozenset(
        c for c in Concept if find_keyword_spans(caption, builtin_lexicon(c))
    )


def generate_corpus(config: CorpusConfig) -> list[PairedSample]:
    """Generate the synthetic paired corpus; deterministic for a fixed seed.

    ``binding_critical_fraction`` of the samples come in adjacent
    attribute-swapped pairs; remaining samples are independent scenes.
    """
    rng = np.random.default_rng(config.seed)
    n = config.n_samples
    n_pairs = int(n * config.binding_critical_fraction) // 2
    blocks: list[str] = ["pair"] * n_pairs + ["single"] * (n - 2 * n_pairs)
    rng.shuffle(blocks)

    samples: list[PairedSample] = []
    idx = 0
    for kind in blocks:
        if kind == "pair":
            scene, twin = _swapped_pair(rng, config.object_vocab)
            scenes = (scene, twin)
        else:
            scenes = (sample_scene(rng, config.object_vocab, config.two_entity_prob),)
        for scene in scenes:
            caption = render_caption(scene)
            features = featurize_scene(scene, config.object_vocab, config.noise_sigma, rng)
            samples.append(
                PairedSample(
                    id=f"s{idx:06d}",
                    caption=caption,
                    image_features=features,
                    concepts_present=_concepts_present(caption),
                    scene=scene,
                )
            )
            idx += 1
    return samples


def corpus_stats(
    samples: Sequence[PairedSample], lexicons: Iterable[ConceptLexicon]
) -> dict[Concept, int]:
    """Per concept, the number of samples whose caption has at least one
    keyword span; these counts define the concept-filtered training subsets."""
    counts: dict[Concept, int] = {}
    for lex in lexicons:
        counts[lex.concept] = sum(
            1 for s in samples if find_keyword_spans(s.caption, lex)
        )
    return counts


def filter_by_concept(
    samples: Sequence[PairedSample], lexicon: ConceptLexicon
) -> list[PairedSample]:
    """Samples whose caption contains at least one lexicon keyword."""
    return [s for s in samples if find_keyword_spans(s.caption, lexicon)]


# ---------------------------------------------------------------------------
# JSONL and manifest I/O


def _float_list(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("features must be a flat numeric array")
    return arr


def ingest_jsonl(path: Union[str, Path]) -> list[PairedSample]:
    """Parse a JSONL corpus; fail fast with the offending line number.

    Each line must hold an object with ``id`` and ``caption``; ``features``
    (flat numeric array) and ``concepts`` are optional. Missing concepts are
    recomputed from the builtin lexicons.
    """
    path = Path(path)
    if not path.exists():
        raise JsonlError(path, 0, "file not found")
    samples: list[PairedSample] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise JsonlError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise JsonlError(path, lineno, "line is not a JSON object")
            if "id" not in obj or not isinstance(obj["id"], str):
                raise JsonlError(path, lineno, "missing or non-string 'id'")
            if "caption" not in obj or not isinstance(obj["caption"], str) or not obj["caption"].strip():
                raise JsonlError(path, lineno, "missing or empty 'caption'")
            try:
                features = (
                    _float_list(obj["features"])
                    if "features" in obj and obj["features"] is not None
                    else np.zeros(0, dtype=np.float64)
                )
            except (TypeError, ValueError) as exc:
                raise JsonlError(path, lineno, f"bad 'features': {exc}") from None
            if "concepts" in obj and obj["concepts"] is not None:
                try:
                    concepts = frozenset(Concept(c) for c in obj["concepts"])
                except ValueError as exc:
                    raise JsonlError(path, lineno, f"bad 'concepts': {exc}") from None
            else:
                concepts = _concepts_present(obj["caption"])
            samples.append(
                PairedSample(
                    id=obj["id"],
                    caption=obj["caption"],
                    image_features=features,
                    concepts_present=concepts,
                )
            )
    return samples


def write_corpus_jsonl(samples: Sequence[PairedSample], path: Union[str, Path]) -> str:
    """Write samples as JSONL and return the content's sha256 hex digest."""
    path = Path(path)
    digest = hashlib.sha256()
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            record = {
                "id": s.id,
                "caption": s.caption,
                "features": [float(x) for x in s.image_features],
                "concepts": sorted(c.value for c in s.concepts_present),
            }
            line = json.dumps(record, separators=(",", ":")) + "\n"
            digest.update(line.encode("utf-8"))
            fh.write(line)
    return digest.hexdigest()


def write_manifest(
    config: CorpusConfig, content_sha256: str, path: Union[str, Path]
) -> None:
    """Record the generating config, seed, and corpus content hash."""
    manifest = {
        "format": "hncl-corpus-manifest",
        "version": 1,
        "config": {
            "n_samples": config.n_samples,
            "object_vocab": config.object_vocab,
            "binding_critical_fraction": config.binding_critical_fraction,
            "noise_sigma": config.noise_sigma,
            "seed": config.seed,
            "two_entity_prob": config.two_entity_prob,
        },
        "content_sha256": content_sha256,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
