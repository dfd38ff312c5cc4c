"""Retrieval and generation metrics: Acc@q, ARP, FID, and the
discriminator-consistency analysis, plus the ablation grid harness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import retrieval as ret


@dataclass
class RankTable:
    """Per-query true-match ranks (1-indexed) against a gallery of size n."""

    query_ids: list
    ranks: np.ndarray
    gallery_size: int

    def __post_init__(self):
        self.ranks = np.asarray(self.ranks, dtype=np.int64)
        if self.ranks.size and not ((self.ranks >= 1) & (self.ranks <= self.gallery_size)).all():
            raise ValueError("ranks must lie in [1, gallery size]")


def compute_ranks(query_embeddings: np.ndarray, query_ids, gallery_embeddings: np.ndarray, gallery_ids, true_ids=None) -> RankTable:
    """Rank each query's true match (same id unless ``true_ids`` remaps)."""
    true_ids = list(true_ids) if true_ids is not None else list(query_ids)
    ranks = []
    for q, true_id in zip(query_embeddings, true_ids):
        order = ret.rank_gallery(q, gallery_embeddings, list(gallery_ids))
        ranks.append(order.index(true_id) + 1)
    return RankTable(list(query_ids), np.array(ranks), len(gallery_ids))


def acc_at_q(table: RankTable, q: int) -> float:
    """Fraction of queries whose true match ranks in the top q."""
    if not (1 <= q <= table.gallery_size):
        raise ValueError(f"q={q} outside [1, {table.gallery_size}]")
    return float(np.mean(table.ranks <= q))


def arp(table: RankTable) -> float:
    """Average ranking percentile in [0, 1]: mean of (N - rank) / (N - 1)."""
    n = table.gallery_size
    if n < 2:
        raise ValueError("ARP needs a gallery of at least 2")
    return float(np.mean((n - table.ranks) / (n - 1)))


def fid(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 sqrt(S1 S2)), with the matrix square
    root computed by symmetric eigendecomposition (sqrt(S1) S2 sqrt(S1) has
    the same spectrum as S1 S2); tiny negative eigenvalues are clamped to 0.
    """
    features_a = np.asarray(features_a, dtype=np.float64)
    features_b = np.asarray(features_b, dtype=np.float64)
    d = features_a.shape[1]
    if features_a.shape[0] <= d or features_b.shape[0] <= d:
        raise ValueError(f"need more than d'={d} samples per side for a full-rank covariance")
    if not (np.isfinite(features_a).all() and np.isfinite(features_b).all()):
        raise ValueError("non-finite features")

    mu_a = features_a.mean(axis=0)
    mu_b = features_b.mean(axis=0)
    cov_a = np.cov(features_a, rowvar=False).reshape(d, d)
    cov_b = np.cov(features_b, rowvar=False).reshape(d, d)

    root_a = _psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    tr_sqrt = np.sum(np.sqrt(np.clip(np.linalg.eigvalsh((inner + inner.T) / 2.0), 0.0, None)))
    value = float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return value


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def penultimate_features(model: ret.EmbeddingNet, images_nchw: np.ndarray, batch: int = 64) -> np.ndarray:
    """Default FID feature extractor: the retrieval model's pooled activations."""
    from . import autograd as ag

    outs = []
    with ag.no_grad():
        for i in range(0, images_nchw.shape[0], batch):
            outs.append(model.pooled(images_nchw[i : i + batch]).data)
    return np.concatenate(outs, axis=0)


def certainty_consistency(scores: np.ndarray, per_pair_arp: np.ndarray):
    """Bin pseudo pairs by discriminator score into 10 levels of width 0.1.

    Returns a list of populated-bin dicts: bin index, [lo, hi) edges, count,
    and the mean ARP of the pairs falling in the bin (score 1.0 joins the
    last bin).
    """
    scores = np.asarray(scores, dtype=np.float64)
    per_pair_arp = np.asarray(per_pair_arp, dtype=np.float64)
    idx = np.minimum(np.floor(scores * 10.0).astype(np.int64), 9)
    table = []
    for b in range(10):
        members = idx == b
        if members.any():
            table.append(
                {
                    "bin": b,
                    "lo": b / 10.0,
                    "hi": (b + 1) / 10.0,
                    "count": int(members.sum()),
                    "mean_arp": float(per_pair_arp[members].mean()),
                }
            )
    return table


def consistency_spearman(table) -> float:
    """Spearman rank correlation between bin index and mean ARP."""
    from scipy import stats

    bins = [row["bin"] for row in table]
    arps = [row["mean_arp"] for row in table]
    if len(bins) < 2:
        raise ValueError("need at least two populated bins")
    rho = stats.spearmanr(bins, arps).statistic
    return float(rho)


# ---------------------------------------------------------------------------
# ablation grid
# ---------------------------------------------------------------------------

NAMED_VARIANTS = {
    "full": {},
    "no-iw": {"iw": False},
    "no-tr": {"tr": False},
    "attn-1d": {"at": False},
    "no-jt": {"jt": False},
    "vanilla": {"iw": False, "tr": False, "jt": False},
    "supervised": {"iw": False, "tr": False, "at": True, "jt": False, "use_unlabeled": False},
}


def ablation_grid(base_cfg, corpus, variants, run_dir=None):
    """Run the joint training pipeline once per requested variant.

    ``variants`` is a list of names from :data:`NAMED_VARIANTS` or
    (name, overrides) tuples. The all-flags-off combination maps to the
    supervised baseline (no unlabeled influence). Returns one result row
    per variant with retrieval Acc@1/Acc@10 and generation Acc@1/Acc@10.
    """
    from dataclasses import replace

    from . import trainer  # local import: the grid drives the trainer

    rows = []
    for entry in variants:
        if isinstance(entry, str):
            name, overrides = entry, dict(NAMED_VARIANTS[entry])
        else:
            name, overrides = entry[0], dict(entry[1])
        if not any(overrides.get(f, True) for f in ("iw", "tr", "at", "jt")):
            overrides["use_unlabeled"] = False  # all flags off = supervised baseline
        cfg = replace(base_cfg, **overrides)
        out = None if run_dir is None else f"{run_dir}/{name}"
        result = trainer.run_pipeline(corpus, cfg, out_dir=out)
        rows.append({"variant": name, **{k: v for k, v in overrides.items()}, **result["metrics"]})
    return rows
