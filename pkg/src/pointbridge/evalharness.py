"""Retrieval evaluation: ground truth from box annotations, precision at K,
seeded synthetic corpora with known positives, and fusion ablation grids.

The synthetic corpus assigns each sample a subset of orthonormal "concept"
directions; its image and lidar embeddings are the normalized concept mixture
plus seeded per-coordinate gaussian noise. In complementary mode the noise
budget hits the image embeddings of one half of the corpus and the lidar
embeddings of the other half, so neither modality is reliable everywhere but
their combination is.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fusion import FusionStrategy, JointQuery, joint_query
from .retrieval import PromptSet
from .store import Embedding, EmbeddingStore, Modality

CATEGORIES = ("Car", "Truck", "Bus", "Pedestrian", "Cyclist")
PERIODS = ("day", "night")
WEATHERS = ("sunny", "rainy")
DEFAULT_NEARBY_THRESHOLD = 15.0

# Complementary corpora still apply this fraction of the noise budget to the
# "clean" modality, so single-modality rankings stay imperfect on both halves.
CLEAN_NOISE_FRACTION = 0.6


class EvalError(ValueError):
    pass


@dataclass
class Box:
    category: str
    center: tuple

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise EvalError(f"unknown category {self.category!r}")
        center = tuple(float(c) for c in self.center)
        if len(center) != 3 or not all(math.isfinite(c) for c in center):
            raise EvalError("box center must be three finite coordinates")
        self.center = center

    @property
    def ground_distance(self) -> float:
        # camera-frustum frame: x right, z forward; y is height
        return math.hypot(self.center[0], self.center[2])


@dataclass
class Annotation:
    sample_id: str
    boxes: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.sample_id:
            raise EvalError("annotation needs a sample id")
        self.boxes = [b if isinstance(b, Box) else Box(**b) for b in self.boxes]
        period = self.meta.get("period")
        if period is not None and period not in PERIODS:
            raise EvalError(f"unknown period {period!r}")
        weather = self.meta.get("weather")
        if weather is not None and weather not in WEATHERS:
            raise EvalError(f"unknown weather {weather!r}")


def read_annotations(path) -> list:
    """One JSON annotation per line."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            out.append(Annotation(doc["sample_id"], doc.get("boxes", []), doc.get("meta", {})))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise EvalError(f"{path}:{lineno}: malformed annotation: {exc}") from exc
    return out


@dataclass
class GroundTruth:
    positives: dict  # label -> set of sample ids
    corpus_ids: list

    @property
    def prevalence(self) -> dict:
        n = len(self.corpus_ids)
        return {label: len(ids) / n for label, ids in self.positives.items()} if n else {}

    def labels(self):
        return sorted(self.positives)


def build_ground_truth(
    annotations,
    nearby_threshold: float = DEFAULT_NEARBY_THRESHOLD,
    allow_any_threshold: bool = False,
) -> GroundTruth:
    """Positive sets per object class, per nearby class (strict ground-plane
    distance < threshold), and per scene-condition label."""
    if not allow_any_threshold and not 10.0 <= nearby_threshold <= 25.0:
        raise EvalError(
            f"nearby threshold {nearby_threshold} outside [10, 25] m "
            "(pass allow_any_threshold=True to override)"
        )
    positives = {c: set() for c in CATEGORIES}
    positives.update({f"nearby {c}": set() for c in CATEGORIES})
    seen_conditions = set()
    corpus_ids = []
    for ann in annotations:
        corpus_ids.append(ann.sample_id)
        for box in ann.boxes:
            positives[box.category].add(ann.sample_id)
            if box.ground_distance < nearby_threshold:
                positives[f"nearby {box.category}"].add(ann.sample_id)
        for key in ("period", "weather"):
            value = ann.meta.get(key)
            if value is not None:
                positives.setdefault(value, set()).add(ann.sample_id)
                seen_conditions.add(value)
    if len(set(corpus_ids)) != len(corpus_ids):
        raise EvalError("duplicate sample ids in annotations")
    return GroundTruth(positives, sorted(corpus_ids))


def _ranked_ids(ranked) -> list:
    return [item if isinstance(item, str) else item.id for item in ranked]


def precision_at_k(ranked, positives, k: int) -> float:
    """Fraction of the first min(k, len) ranked ids that are positives."""
    if k < 1:
        raise EvalError(f"k must be >= 1, got {k}")
    ids = _ranked_ids(ranked)
    if not ids:
        raise EvalError("precision is undefined for an empty ranking")
    if len(set(ids)) != len(ids):
        raise EvalError("ranking contains duplicate ids")
    cut = ids[: min(k, len(ids))]
    hits = sum(1 for id in cut if id in positives)
    return hits / len(cut)


def random_baseline_precision(corpus_ids, positives, k: int, n_trials: int, seed: int) -> float:
    """Mean P@K over uniformly random rankings; converges to the prevalence."""
    rng = np.random.default_rng(seed)
    ids = np.array(sorted(corpus_ids))
    total = 0.0
    for _ in range(n_trials):
        perm = rng.permutation(ids)
        total += precision_at_k(list(perm), positives, k)
    return total / n_trials


def concept_label(index: int) -> str:
    return f"concept-{index:02d}"


@dataclass
class SyntheticCorpus:
    store: EmbeddingStore
    ground_truth: GroundTruth
    prompt_sets: dict  # label -> PromptSet
    memberships: dict  # sample id -> tuple of concept indices
    concepts: np.ndarray  # (n_concepts, d) orthonormal rows


def generate_synthetic_corpus(
    seed: int,
    n_samples: int,
    n_concepts: int,
    noise: float,
    complementary: bool = False,
    d: int = 64,
    membership_rate: float = 0.3,
    n_templates: int = 8,
    text_noise: float = 0.02,
) -> SyntheticCorpus:
    """Seeded corpus of paired image/lidar embeddings with known positives.

    Concepts are orthonormal directions; every sample mixes the concepts it
    belongs to. Text prompt templates are noisy copies of the concept vectors.
    """
    if n_concepts < 2:
        raise EvalError("need at least 2 concepts")
    if noise < 0:
        raise EvalError("noise must be >= 0")
    if d < n_concepts:
        raise EvalError("embedding dimension must be >= n_concepts")
    rng = np.random.default_rng(seed)

    basis, _ = np.linalg.qr(rng.standard_normal((d, n_concepts)))
    concepts = basis.T  # orthonormal rows

    memberships = {}
    store = EmbeddingStore()
    half = n_samples // 2
    for i in range(n_samples):
        sample_id = f"sample-{i:04d}"
        member = np.flatnonzero(rng.random(n_concepts) < membership_rate)
        if member.size == 0:
            member = np.array([rng.integers(0, n_concepts)])
        memberships[sample_id] = tuple(int(m) for m in member)
        mixture = concepts[member].sum(axis=0)
        mixture /= np.linalg.norm(mixture)
        if complementary:
            image_sigma = noise if i < half else noise * CLEAN_NOISE_FRACTION
            lidar_sigma = noise * CLEAN_NOISE_FRACTION if i < half else noise
        else:
            image_sigma = lidar_sigma = noise
        image = mixture + image_sigma * rng.standard_normal(d)
        lidar = mixture + lidar_sigma * rng.standard_normal(d)
        store.put(Embedding(sample_id, Modality.IMAGE, image.astype(np.float32)))
        store.put(Embedding(sample_id, Modality.LIDAR, lidar.astype(np.float32)))

    prompt_sets = {}
    for c in range(n_concepts):
        templates = concepts[c] + text_noise * rng.standard_normal((n_templates, d))
        label = concept_label(c)
        prompt_sets[label] = PromptSet(label, templates)
        for t in range(n_templates):
            store.put(Embedding(f"prompt:{label}:{t}", Modality.TEXT,
                                templates[t].astype(np.float32)))

    positives = {
        concept_label(c): {id for id, member in memberships.items() if c in member}
        for c in range(n_concepts)
    }
    gt = GroundTruth(positives, sorted(memberships))
    return SyntheticCorpus(store, gt, prompt_sets, memberships, concepts)


def synthetic_cloud(seed: int, sample_index: int, member_concepts, n_concepts: int, enc_cfg):
    """Deterministic point cloud whose geometry encodes concept membership.

    Each concept owns an anchor location inside the configured range and
    contributes a small point cluster with a concept-specific reflectance;
    a shared scatter of background points covers the rest of the range.
    """
    from .geometry import Frame, PointCloud  # local import keeps module deps one-way

    rng = np.random.default_rng((seed, sample_index))
    lo = np.array(enc_cfg.pc_range[:3])
    hi = np.array(enc_cfg.pc_range[3:])
    span = hi - lo

    rows = []
    n_background = 40
    bg_xyz = lo + rng.random((n_background, 3)) * span
    bg_int = rng.uniform(0.05, 0.15, n_background)
    rows.append(np.column_stack([bg_xyz, bg_int]))

    grid_cols = max(1, int(math.ceil(math.sqrt(n_concepts))))
    for c in member_concepts:
        col = c % grid_cols
        row = c // grid_cols
        anchor = lo + span * np.array([
            (col + 0.5) / grid_cols,
            (row + 0.5) / math.ceil(n_concepts / grid_cols),
            0.5,
        ])
        cluster = anchor + rng.normal(0.0, 0.04, (24, 3)) * span
        cluster = np.clip(cluster, lo, hi - 1e-9 * span)
        reflect = np.full(24, (c + 1.0) / (n_concepts + 1.0))
        reflect = np.clip(reflect + rng.normal(0.0, 0.02, 24), 0.0, 1.0)
        rows.append(np.column_stack([cluster, reflect]))

    return PointCloud(np.vstack(rows), Frame.CAMERA)


@dataclass(frozen=True)
class MetricRow:
    label: str
    method: str
    k: int
    precision: float


@dataclass
class MetricReport:
    corpus_size: int
    config_digest: str
    rows: list
    schema_version: int = 1

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: (r.label, r.method, r.k))
        for row in self.rows:
            if not 0.0 <= row.precision <= 1.0:
                raise EvalError(f"precision {row.precision} outside [0, 1]")

    def precision(self, label: str, method: str, k: int) -> float:
        for row in self.rows:
            if (row.label, row.method, row.k) == (label, method, k):
                return row.precision
        raise KeyError((label, method, k))

    def mean_precision(self, method: str, k: int) -> float:
        vals = [r.precision for r in self.rows if r.method == method and r.k == k]
        if not vals:
            raise KeyError((method, k))
        return sum(vals) / len(vals)

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": self.schema_version,
            "corpus_size": self.corpus_size,
            "config_digest": self.config_digest,
            "rows": [
                {"label": r.label, "method": r.method, "k": r.k, "precision": r.precision}
                for r in self.rows
            ],
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        doc = json.loads(text)
        rows = [MetricRow(r["label"], r["method"], int(r["k"]), float(r["precision"]))
                for r in doc["rows"]]
        return cls(int(doc["corpus_size"]), doc["config_digest"], rows,
                   schema_version=int(doc["schema_version"]))

    def render_table(self) -> str:
        """Aligned text table: one row per method, P@K columns per label."""
        labels = sorted({r.label for r in self.rows})
        methods = sorted({r.method for r in self.rows})
        ks = sorted({r.k for r in self.rows})
        header = ["method"] + [f"{label} P@{k}" for label in labels for k in ks]
        lines = []
        for method in methods:
            cells = [method]
            for label in labels:
                for k in ks:
                    try:
                        cells.append(f"{self.precision(label, method, k):.3f}")
                    except KeyError:
                        cells.append("-")
            lines.append(cells)
        widths = [max(len(row[i]) for row in [header] + lines) for i in range(len(header))]
        def fmt(row):
            return "  ".join(cell.ljust(w) for cell, w in zip(row, widths))
        return "\n".join([fmt(header)] + [fmt(row) for row in lines])


def ablation_digest(spec: dict) -> str:
    return hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()[:16]


def desk_scale_encoder_config():
    """Encoder sized for synthetic-corpus training runs: coarse voxels so the
    concept anchor clusters land in distinct cells, two layers, 64-d output."""
    from .encoder import EncoderConfig

    return EncoderConfig(
        voxel_size=(4.0, 4.0, 6.0),
        window_shape=(5, 5, 1),
        pc_range=(0.0, -20.0, -2.0, 40.0, 20.0, 4.0),
        num_layers=2,
        d_model=32,
        d_ff=64,
        pool_heads=4,
        d_out=64,
    )


def loss_ablation(
    seed: int,
    n_samples: int = 256,
    n_concepts: int = 8,
    noise: float = 0.5,
    total_steps: int = 960,
    batch_size: int = 16,
    max_lr: float = 1e-2,
    k: int = 10,
) -> dict:
    """Train one encoder per loss kind on synthetic cloud/embedding pairs from
    identical initialization, then score lidar-only retrieval at P@k.

    Returns {"mse": p@k, "cosine": p@k, "reports": {kind: MetricReport}}.
    """
    from .distill import TrainConfig, make_batches, train
    from .encoder import EncoderParams, encode, voxelize

    enc_cfg = desk_scale_encoder_config()
    corpus = generate_synthetic_corpus(seed, n_samples, n_concepts, noise, complementary=False)
    ids = sorted(corpus.memberships)
    grids = {
        sid: voxelize(synthetic_cloud(seed, i, corpus.memberships[sid], n_concepts, enc_cfg), enc_cfg)
        for i, sid in enumerate(ids)
    }
    pairs = [
        (grids[sid], corpus.store.get(sid, Modality.IMAGE).vector.astype(np.float64))
        for sid in ids
    ]
    batches = make_batches(pairs, batch_size)
    init = EncoderParams.init_random(enc_cfg, seed=seed)

    out = {"reports": {}}
    for kind in ("mse", "cosine"):
        cfg = TrainConfig(total_steps=total_steps, batch_size=batch_size,
                          max_lr=max_lr, loss_kind=kind, seed=seed)
        params, _ = train(batches, init, enc_cfg, cfg)
        lidar_store = EmbeddingStore()
        for sid in ids:
            z = encode(grids[sid], params, enc_cfg)
            lidar_store.put(Embedding(sid, Modality.LIDAR, z.astype(np.float32)))
        report = run_ablation(
            lidar_store, corpus.ground_truth, corpus.prompt_sets,
            [FusionStrategy.LIDAR_ONLY], [k],
            extra_digest_fields={"seed": seed, "loss": kind, "steps": total_steps},
        )
        out["reports"][kind] = report
        out[kind] = report.mean_precision(FusionStrategy.LIDAR_ONLY.value, k)
    return out


def run_ablation(
    store: EmbeddingStore,
    ground_truth: GroundTruth,
    prompt_sets: dict,
    methods,
    ks,
    labels=None,
    candidate_k: int = 100,
    extra_digest_fields: dict | None = None,
) -> MetricReport:
    """P@K over the full (label x method x k) grid.

    Every method queries with the label's prompt set on both modalities, so
    single- and joint-modality strategies see identical query evidence.
    """
    labels = sorted(labels if labels is not None else prompt_sets)
    methods = [FusionStrategy(m) for m in methods]
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise EvalError("ks must be positive")
    corpus_size = len(ground_truth.corpus_ids)
    digest = ablation_digest({
        "labels": labels,
        "methods": [m.value for m in methods],
        "ks": ks,
        "candidate_k": candidate_k,
        "corpus_size": corpus_size,
        **(extra_digest_fields or {}),
    })
    rows = []
    k_max = max(ks)
    for label in labels:
        prompts = prompt_sets[label]
        positives = ground_truth.positives.get(label, set())
        for method in methods:
            query = JointQuery(
                method,
                k=k_max,
                image_prompts=prompts,
                lidar_prompts=prompts,
                candidate_k=max(candidate_k, k_max),
            )
            ranked = joint_query(query, store)
            for k in ks:
                rows.append(MetricRow(label, method.value, k,
                                      precision_at_k(ranked, positives, k)))
    return MetricReport(corpus_size, digest, rows)
