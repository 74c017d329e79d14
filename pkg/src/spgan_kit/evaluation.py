"""Single-query cross-camera retrieval evaluation (CMC rank-k and mAP)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DISTRACTOR = -2
RANKS = (1, 5, 10, 20)


@dataclass(frozen=True)
class RetrievalProtocol:
    """Gallery items sharing identity *and* camera with the query are removed
    (junk); items labelled ``DISTRACTOR`` stay in the ranking but never match."""

    drop_same_camera_matches: bool = True
    distractor_id: int = DISTRACTOR


@dataclass(frozen=True)
class EvalResult:
    rank_k: dict[int, float]
    mAP: float
    n_queries_evaluated: int
    cmc: np.ndarray = field(repr=False, default=None)

    def row(self) -> dict[str, float]:
        out = {f"rank-{k}": v for k, v in self.rank_k.items()}
        out["mAP"] = self.mAP
        return out


def euclidean_distances(q: np.ndarray, g: np.ndarray) -> np.ndarray:
    q = q.astype(np.float64)
    g = g.astype(np.float64)
    d2 = (q**2).sum(1)[:, None] + (g**2).sum(1)[None, :] - 2.0 * q @ g.T
    return np.sqrt(np.maximum(d2, 0.0))


def _query_ranking(dist_row, q_id, q_cam, g_ids, g_cams, protocol):
    # stable argsort = ascending distance, ties broken by gallery row index
    order = np.argsort(dist_row, kind="stable")
    ids, cams = g_ids[order], g_cams[order]
    junk = (ids == q_id) & (cams == q_cam) if protocol.drop_same_camera_matches else np.zeros(len(ids), bool)
    keep = ~junk
    matches = (ids[keep] == q_id) & (ids[keep] != protocol.distractor_id)
    return matches


def evaluate(
    query_features: np.ndarray,
    query_ids,
    query_cams,
    gallery_features: np.ndarray,
    gallery_ids,
    gallery_cams,
    protocol: RetrievalProtocol = RetrievalProtocol(),
    ranks=RANKS,
) -> EvalResult:
    """Rank the gallery for every query by Euclidean distance and score it.

    Queries without any valid cross-camera match are skipped.  AP is the mean
    precision at each true match of the filtered ranking.
    """
    qf = np.asarray(query_features)
    gf = np.asarray(gallery_features)
    if qf.ndim != 2 or gf.ndim != 2 or qf.shape[1] != gf.shape[1]:
        raise ValueError(f"feature dimension mismatch: query {qf.shape} vs gallery {gf.shape}")
    q_ids, q_cams = np.asarray(query_ids), np.asarray(query_cams)
    g_ids, g_cams = np.asarray(gallery_ids), np.asarray(gallery_cams)
    dist = euclidean_distances(qf, gf)
    n_gallery = gf.shape[0]
    cmc = np.zeros(n_gallery)
    aps = []
    for qi in range(qf.shape[0]):
        if q_ids[qi] == protocol.distractor_id:
            continue
        matches = _query_ranking(dist[qi], q_ids[qi], q_cams[qi], g_ids, g_cams, protocol)
        if not matches.any():
            continue
        hit_pos = np.flatnonzero(matches)
        cmc[hit_pos[0]:] += 1
        aps.append(np.mean(np.arange(1, len(hit_pos) + 1) / (hit_pos + 1)))
    if not aps:
        raise ValueError("no query has a valid cross-camera match")
    n = len(aps)
    cmc /= n
    rank_k = {k: float(cmc[min(k, n_gallery) - 1]) for k in ranks}
    return EvalResult(rank_k=rank_k, mAP=float(np.mean(aps)), n_queries_evaluated=n, cmc=cmc)
