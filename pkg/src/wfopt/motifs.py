"""Structural pattern library: motif storage, similarity scoring, clustering.

Motifs are unit-length non-negative directions in operator-histogram space,
kept per problem category. The library starts from seeded baseline templates
and is periodically refined by spherical k-means over observed histograms;
a frozen library (test-time) rejects refinement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import WorkflowState

LIBRARY_FORMAT_VERSION = 1


class FrozenLibraryError(RuntimeError):
    """Refinement was attempted on a frozen (test-time) library."""


class MotifInitError(RuntimeError):
    """Template generation could not satisfy the separation requirement."""


@dataclass(frozen=True)
class Motif:
    category: str
    vector: tuple[float, ...]   # unit Euclidean length, non-negative entries
    origin: str                 # "baseline_template" | "clustered"


@dataclass(frozen=True)
class MotifLibrary:
    motifs: tuple[Motif, ...]
    registry_ops: tuple[str, ...]
    refinement_period: int = 3
    cluster_count_per_category: int = 20
    min_separation: float = 0.3
    max_per_category: int = 30
    frozen: bool = False

    def in_category(self, category: str) -> tuple[Motif, ...]:
        return tuple(m for m in self.motifs if m.category == category)

    def categories(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for m in self.motifs:
            seen.setdefault(m.category, None)
        return tuple(seen)

    def freeze(self) -> "MotifLibrary":
        return replace(self, frozen=True)


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    av = np.asarray(a, dtype=float)
    bv = np.asarray(b, dtype=float)
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.dot(av, bv) / (na * nb))


def cosine_distance(a: Sequence[float], b: Sequence[float]) -> float:
    return 1.0 - cosine_similarity(a, b)


def _normalize(vec: np.ndarray) -> np.ndarray:
    return vec / np.linalg.norm(vec)


def histogram_vector(state: WorkflowState, registry_ops: Sequence[str]) -> np.ndarray:
    return np.array([float(state.operator_histogram.get(op, 0)) for op in registry_ops])


def score_pattern(state: WorkflowState, category: str, lib: MotifLibrary) -> float:
    """Best cosine match against the category's motifs; 0.5 with no evidence."""
    motifs = lib.in_category(category)
    if not motifs:
        return 0.5
    hist = histogram_vector(state, lib.registry_ops)
    if not hist.any():
        return 0.5
    hist = _normalize(hist)
    best = max(float(np.dot(hist, np.asarray(m.vector))) for m in motifs)
    return min(1.0, max(0.0, best))


def init_templates(
    categories: Sequence[str],
    templates_per_category: int,
    *,
    registry_ops: Sequence[str],
    seed: int = 42,
    refinement_period: int = 3,
    cluster_count_per_category: int = 20,
    min_separation: float = 0.3,
    max_per_category: int = 30,
) -> MotifLibrary:
    """Seeded generation of well-spread baseline template directions."""
    if not 10 <= templates_per_category <= 15:
        raise ValueError("templates_per_category must lie in [10, 15]")
    dim = len(registry_ops)
    rng = np.random.default_rng(seed)
    motifs: list[Motif] = []
    for category in categories:
        accepted: list[np.ndarray] = []
        attempts = 0
        while len(accepted) < templates_per_category:
            attempts += 1
            if attempts > 2000 * templates_per_category:
                raise MotifInitError(
                    f"cannot place {templates_per_category} templates at "
                    f"separation {min_separation} in dimension {dim}"
                )
            support = int(rng.integers(1, dim + 1))
            idx = rng.choice(dim, size=support, replace=False)
            vec = np.zeros(dim)
            vec[idx] = rng.random(support) + 0.05
            vec = _normalize(vec)
            if all(1.0 - float(np.dot(vec, prev)) >= min_separation for prev in accepted):
                accepted.append(vec)
        motifs.extend(
            Motif(category, tuple(float(x) for x in vec), "baseline_template")
            for vec in accepted
        )
    return MotifLibrary(
        motifs=tuple(motifs),
        registry_ops=tuple(registry_ops),
        refinement_period=refinement_period,
        cluster_count_per_category=cluster_count_per_category,
        min_separation=min_separation,
        max_per_category=max_per_category,
    )


def _farthest_point_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [int(rng.integers(len(points)))]
    while len(centers) < k:
        sims = points @ points[centers].T            # (n, chosen)
        min_dist = 1.0 - sims.max(axis=1)
        min_dist[centers] = -1.0
        centers.append(int(np.argmax(min_dist)))
    return points[centers].copy()


def _kmeans_cosine(
    points: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iter: int = 50,
) -> tuple[np.ndarray, np.ndarray]:
    """Spherical k-means on unit vectors; returns (centers, cluster sizes)."""
    centers = _farthest_point_init(points, k, rng)
    labels = np.full(len(points), -1)
    for _ in range(max_iter):
        sims = points @ centers.T
        new_labels = np.argmax(sims, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = points[labels == j]
            if len(members):
                mean = members.mean(axis=0)
                norm = np.linalg.norm(mean)
                if norm > 0:
                    centers[j] = mean / norm
    sizes = np.bincount(labels, minlength=k)
    return centers, sizes


def refine(
    lib: MotifLibrary,
    observed_histograms: Iterable[tuple[str, Sequence[float]]],
    round_index: int,
    seed: int,
) -> MotifLibrary:
    """Cluster observed histograms per category and merge centroids.

    Centroids are merged greedily in cluster-size order. A centroid within
    min_separation of an existing clustered motif is discarded; baselines it
    crowds out are replaced. Returns a new library value.
    """
    if lib.frozen:
        raise FrozenLibraryError("refine called on a frozen motif library")
    if round_index % lib.refinement_period != 0:
        raise ValueError(
            f"round {round_index} is not on the refinement schedule "
            f"(period {lib.refinement_period})"
        )

    by_category: dict[str, list[np.ndarray]] = {}
    for category, vec in observed_histograms:
        arr = np.asarray(vec, dtype=float)
        if arr.shape != (len(lib.registry_ops),):
            raise ValueError("histogram dimension does not match the registry")
        norm = np.linalg.norm(arr)
        if norm == 0.0:
            continue
        by_category.setdefault(category, []).append(arr / norm)

    motifs = list(lib.motifs)
    rng = np.random.default_rng(seed)
    for category in sorted(by_category):
        samples = np.stack(by_category[category])
        k = min(lib.cluster_count_per_category, len(samples))
        centers, sizes = _kmeans_cosine(samples, k, rng)
        order = sorted(range(k), key=lambda j: (-int(sizes[j]), j))
        for j in order:
            if sizes[j] == 0:
                continue
            candidate = centers[j]
            kept = [m for m in motifs if m.category == category]
            if len(kept) >= lib.max_per_category and not any(
                m.origin == "baseline_template"
                and 1.0 - float(np.dot(candidate, np.asarray(m.vector))) < lib.min_separation
                for m in kept
            ):
                continue
            clustered_close = any(
                m.origin == "clustered"
                and 1.0 - float(np.dot(candidate, np.asarray(m.vector))) < lib.min_separation
                for m in kept
            )
            if clustered_close:
                continue
            displaced = [
                m for m in kept
                if m.origin == "baseline_template"
                and 1.0 - float(np.dot(candidate, np.asarray(m.vector))) < lib.min_separation
            ]
            for m in displaced:
                motifs.remove(m)
            motifs.append(Motif(category, tuple(float(x) for x in candidate), "clustered"))
    return replace(lib, motifs=tuple(motifs))


# ---------------------------------------------------------------------------
# Persistence.
# ---------------------------------------------------------------------------

def library_to_dict(lib: MotifLibrary) -> dict:
    categories = []
    for category in lib.categories():
        categories.append(
            {
                "name": category,
                "motifs": [
                    {"vector": list(m.vector), "origin": m.origin}
                    for m in lib.in_category(category)
                ],
            }
        )
    return {
        "version": LIBRARY_FORMAT_VERSION,
        "registry": list(lib.registry_ops),
        "categories": categories,
        "frozen": lib.frozen,
        "params": {
            "refinement_period": lib.refinement_period,
            "cluster_count_per_category": lib.cluster_count_per_category,
            "min_separation": lib.min_separation,
            "max_per_category": lib.max_per_category,
        },
    }


def library_from_dict(data: Mapping) -> MotifLibrary:
    if data.get("version") != LIBRARY_FORMAT_VERSION:
        raise ValueError(f"unsupported library version {data.get('version')!r}")
    params = data.get("params", {})
    motifs = []
    for cat in data["categories"]:
        for m in cat["motifs"]:
            motifs.append(Motif(cat["name"], tuple(float(x) for x in m["vector"]), m["origin"]))
    return MotifLibrary(
        motifs=tuple(motifs),
        registry_ops=tuple(data["registry"]),
        refinement_period=int(params.get("refinement_period", 3)),
        cluster_count_per_category=int(params.get("cluster_count_per_category", 20)),
        min_separation=float(params.get("min_separation", 0.3)),
        max_per_category=int(params.get("max_per_category", 30)),
        frozen=bool(data["frozen"]),
    )


def save_library(lib: MotifLibrary, path: str | Path) -> None:
    Path(path).write_text(json.dumps(library_to_dict(lib), sort_keys=True, indent=2) + "\n")


def load_library(path: str | Path) -> MotifLibrary:
    return library_from_dict(json.loads(Path(path).read_text()))
