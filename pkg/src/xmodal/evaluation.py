"""Retrieval evaluation: distance matrix, CMC curve, mAP, gallery protocols.

Rankings sort gallery items by ascending distance; ties are broken by
ascending gallery index, so results are deterministic. The gallery is
drawn per identity (``shots`` RGB images each, 1 for single-shot) and
results are averaged over a configurable number of gallery re-draws.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import IR, RGB, Dataset


def _workers() -> int:
    env = os.environ.get("XMODAL_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def distance_matrix(query: np.ndarray, gallery: np.ndarray,
                    workers: int | None = None) -> np.ndarray:
    """Entry (i, j) = 0.5 * ||q_i - g_j||^2. Row blocks may be computed on
    several threads; the result does not depend on the thread count."""
    query = np.asarray(query, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if query.ndim != 2 or gallery.ndim != 2 or query.shape[1] != gallery.shape[1]:
        raise ValueError(f"descriptor shapes {query.shape} and {gallery.shape} are incompatible")
    workers = _workers() if workers is None else max(1, workers)
    gs = (gallery * gallery).sum(axis=1)

    def block(rows):
        q = query[rows]
        d = 0.5 * ((q * q).sum(axis=1)[:, None] + gs[None, :]) - q @ gallery.T
        return np.maximum(d, 0.0)

    if workers == 1 or query.shape[0] < 2 * workers:
        return block(slice(None))
    chunks = np.array_split(np.arange(query.shape[0]), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(block, chunks))
    return np.vstack(parts)


def _ranked_matches(dist_row: np.ndarray, gallery_ids: np.ndarray, qid: int) -> np.ndarray:
    order = np.argsort(dist_row, kind="stable")  # stable sort = ascending-index tie-break
    return gallery_ids[order] == qid


def cmc_curve(distances: np.ndarray, query_ids, gallery_ids) -> np.ndarray:
    """cmc[r-1] = fraction of queries whose first relevant gallery item
    appears within the top r."""
    query_ids = np.asarray(query_ids)
    gallery_ids = np.asarray(gallery_ids)
    nq, ng = distances.shape
    hits = np.zeros(ng, dtype=np.float64)
    for q in range(nq):
        matches = _ranked_matches(distances[q], gallery_ids, query_ids[q])
        rel = np.flatnonzero(matches)
        if rel.size == 0:
            raise ValueError(f"query {q} (id {query_ids[q]}) has no relevant gallery item")
        hits[rel[0]] += 1.0
    return np.cumsum(hits) / nq


def average_precisions(distances: np.ndarray, query_ids, gallery_ids) -> np.ndarray:
    """Per-query AP: mean over relevant items of precision at their ranks."""
    query_ids = np.asarray(query_ids)
    gallery_ids = np.asarray(gallery_ids)
    nq = distances.shape[0]
    aps = np.zeros(nq, dtype=np.float64)
    for q in range(nq):
        matches = _ranked_matches(distances[q], gallery_ids, query_ids[q])
        rel = np.flatnonzero(matches)
        if rel.size == 0:
            raise ValueError(f"query {q} (id {query_ids[q]}) has no relevant gallery item")
        precisions = (np.arange(rel.size) + 1.0) / (rel + 1.0)
        aps[q] = precisions.mean()
    return aps


def mean_ap(distances: np.ndarray, query_ids, gallery_ids) -> float:
    return float(average_precisions(distances, query_ids, gallery_ids).mean())


@dataclass
class RetrievalResult:
    mode: str
    shots: int
    redraws: int
    seed: int
    cmc: np.ndarray
    map: float
    per_query_ap: np.ndarray
    distances: np.ndarray | None = None
    direction: str = "ir2rgb"
    extras: dict = field(default_factory=dict)

    def rank(self, r: int) -> float:
        return float(self.cmc[r - 1])

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "shots": self.shots,
            "redraws": self.redraws,
            "seed": self.seed,
            "direction": self.direction,
            "cmc": [float(v) for v in self.cmc],
            "map": float(self.map),
            **self.extras,
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rank", "cmc"])
            for r, v in enumerate(self.cmc, start=1):
                writer.writerow([r, f"{float(v):.10g}"])


def evaluate_descriptors(q_desc, q_ids, g_desc, g_ids, workers=None):
    dist = distance_matrix(q_desc, g_desc, workers)
    cmc = cmc_curve(dist, q_ids, g_ids)
    aps = average_precisions(dist, q_ids, g_ids)
    return dist, cmc, aps


def evaluate(model, dataset: Dataset, mode: str = "single_shot", shots: int = 1,
             redraws: int = 1, rng: np.random.Generator | None = None,
             direction: str = "ir2rgb", keep_distances: bool = False) -> RetrievalResult:
    """Gallery protocol: queries are every image of the query modality;
    the gallery holds ``shots`` randomly drawn images of the other
    modality per identity (1 in single_shot mode). CMC/mAP are averaged
    over ``redraws`` independent gallery draws."""
    if mode not in ("single_shot", "multi_shot"):
        raise ValueError(f"mode must be 'single_shot' or 'multi_shot', got '{mode}'")
    if direction not in ("ir2rgb", "rgb2ir"):
        raise ValueError(f"direction must be 'ir2rgb' or 'rgb2ir', got '{direction}'")
    rng = rng if rng is not None else np.random.default_rng(0)
    shots = 1 if mode == "single_shot" else shots

    q_mod = IR if direction == "ir2rgb" else RGB
    g_mod = RGB if direction == "ir2rgb" else IR
    q_rows = np.flatnonzero(dataset.mods == q_mod)
    index = dataset.indices_by_id_mod()

    all_rows = np.arange(len(dataset))
    descriptors = model.descriptors(dataset.images[all_rows], dataset.mods[all_rows])
    q_desc = descriptors[q_rows]
    q_ids = dataset.ids[q_rows]

    cmc_sum = None
    ap_sum = None
    last_dist = None
    g_ids_last = None
    for _ in range(redraws):
        g_rows = []
        for pid in range(dataset.spec.num_identities):
            pool = index.get((pid, g_mod))
            if pool is None or len(pool) == 0:
                raise ValueError(f"identity {pid} has no gallery images in modality {g_mod}")
            take = min(shots, len(pool))
            g_rows.append(rng.choice(pool, size=take, replace=False))
        g_rows = np.concatenate(g_rows)
        g_ids = dataset.ids[g_rows]
        dist, cmc, aps = evaluate_descriptors(q_desc, q_ids, descriptors[g_rows], g_ids)
        cmc_sum = cmc if cmc_sum is None else cmc_sum + cmc
        ap_sum = aps if ap_sum is None else ap_sum + aps
        last_dist, g_ids_last = dist, g_ids

    cmc_avg = cmc_sum / redraws
    aps_avg = ap_sum / redraws
    return RetrievalResult(
        mode=mode,
        shots=shots,
        redraws=redraws,
        seed=0,
        cmc=cmc_avg,
        map=float(aps_avg.mean()),
        per_query_ap=aps_avg,
        distances=last_dist if keep_distances else None,
        direction=direction,
        extras={"num_query": int(len(q_rows)), "num_gallery": int(len(g_ids_last))},
    )
