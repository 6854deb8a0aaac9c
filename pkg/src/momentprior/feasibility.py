"""Relation-refinement feasibility studies on concept embeddings.

The pieces here are:

* triplet classification (paired concepts vs. an outlier),
* concept-dependent random vectors standing in for non-textual embeddings,
* random zeroing ("distortion") of those vectors,
* weighted fusion ``(1 - alpha) * text + alpha * nontext``,
* a Monte-Carlo check that fusion scales expected similarity by ``(1 - alpha)**2``,
* pluggable refiners (identity, a toy self-attention stack, an external process),
* a grid runner counting improved / deteriorated triplets per ``(alpha, p)``.
"""

from __future__ import annotations

import hashlib
import json
import math
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .embedstore import EmbeddingTable, load_table, normalize, save_table


class StudyError(RuntimeError):
    """A refine-study cell failed (refiner crash, timeout or contract violation)."""


@dataclass(frozen=True)
class Triplet:
    paired: tuple[str, str]
    outlier: str

    def __post_init__(self):
        object.__setattr__(self, "paired", tuple(self.paired))
        if len(self.paired) != 2:
            raise ValueError("a triplet needs exactly two paired labels")
        if len({*self.paired, self.outlier}) != 3:
            raise ValueError(f"triplet labels must be distinct: {self.labels}")

    @property
    def labels(self) -> tuple[str, str, str]:
        return (self.paired[0], self.paired[1], self.outlier)


@dataclass(frozen=True)
class TripletVerdict:
    reasonable: bool
    paired_sim: float
    max_unpaired_sim: float


@dataclass(frozen=True)
class FusionConfig:
    alpha: float
    distortion_p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.distortion_p <= 1.0:
            raise ValueError(f"distortion_p must be in [0, 1], got {self.distortion_p}")


@dataclass(frozen=True)
class RefineReport:
    alpha: float
    p: float
    n_triplets: int
    n_unreasonable_before: int
    n_improved: int
    n_deteriorated: int

    @property
    def improved_proportion(self) -> float:
        if self.n_unreasonable_before == 0:
            return 0.0
        return self.n_improved / self.n_unreasonable_before

    @property
    def deteriorated_proportion(self) -> float:
        n_reasonable = self.n_triplets - self.n_unreasonable_before
        if n_reasonable == 0:
            return 0.0
        return self.n_deteriorated / n_reasonable

    def as_dict(self) -> dict:
        d = asdict(self)
        d["improved_proportion"] = self.improved_proportion
        d["deteriorated_proportion"] = self.deteriorated_proportion
        return d


# -- seeding ---------------------------------------------------------------


def derive_seed(seed: int, *keys) -> int:
    """Stable 64-bit seed from a base seed and any number of keys."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for key in keys:
        h.update(b"\x1f")
        h.update(str(key).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


# -- triplets ----------------------------------------------------------------


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = math.sqrt(float(u @ u))
    nv = math.sqrt(float(v @ v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v) / (nu * nv)


def classify_triplet(table: EmbeddingTable, t: Triplet) -> TripletVerdict:
    """Reasonable iff the paired similarity strictly beats both unpaired ones.

    Rows are compared by cosine, so they need not be stored normalized.
    A zero row has similarity 0 with everything.
    """
    a, b, o = (table.row(label) for label in t.labels)
    paired = _cosine(a, b)
    unpaired = max(_cosine(a, o), _cosine(b, o))
    return TripletVerdict(paired > unpaired, paired, unpaired)


def classify_all(table: EmbeddingTable, triplets: Sequence[Triplet]) -> np.ndarray:
    """Boolean "reasonable" flag per triplet (vectorized ``classify_triplet``)."""
    if not triplets:
        return np.zeros(0, dtype=bool)
    idx = np.array([[table.index(label) for label in t.labels] for t in triplets])
    rows = table.rows
    norms = np.linalg.norm(rows, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = np.where(norms[:, None] > 0, rows / safe[:, None], 0.0)
    a, b, o = unit[idx[:, 0]], unit[idx[:, 1]], unit[idx[:, 2]]
    paired = np.einsum("ij,ij->i", a, b)
    unpaired = np.maximum(np.einsum("ij,ij->i", a, o), np.einsum("ij,ij->i", b, o))
    return paired > unpaired


def validate_triplets(table: EmbeddingTable, triplets: Iterable[Triplet]) -> None:
    for i, t in enumerate(triplets):
        for label in t.labels:
            if label not in table._index_map:
                raise KeyError(f"triplet {i}: label {label!r} not in table")


def load_triplets(path) -> list[Triplet]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    items = doc["triplets"] if isinstance(doc, dict) else doc
    return [Triplet(tuple(item["paired"]), item["outlier"]) for item in items]


def save_triplets(triplets: Sequence[Triplet], path) -> None:
    lines = [json.dumps({"paired": list(t.paired), "outlier": t.outlier}) for t in triplets]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write('{"version": 1, "triplets": [\n' + ",\n".join(lines) + "\n]}\n")


def fixture_triplets() -> list[Triplet]:
    """The shipped 200 hand-picked concept triplets."""
    with resources.as_file(resources.files("momentprior") / "data" / "triplets.json") as p:
        return load_triplets(p)


def fixture_table() -> EmbeddingTable:
    """Embeddings for the shipped triplets (see ``synth_triplet_table``)."""
    with resources.as_file(resources.files("momentprior") / "data" / "concepts.emb") as p:
        return load_table(p)


def synth_triplet_table(
    triplets: Sequence[Triplet],
    dim: int = 64,
    unreasonable_fraction: float = 0.3,
    seed: int = 0,
) -> EmbeddingTable:
    """Build unit embeddings whose triplet geometry is known in advance.

    Exactly ``round(unreasonable_fraction * len(triplets))`` triplets come out
    unreasonable. Each triplet lives in its own random 3-D orthonormal frame,
    so labels must not be shared between triplets.
    """
    if dim < 3:
        raise ValueError("dim must be at least 3")
    n = len(triplets)
    labels = [label for t in triplets for label in t.labels]
    if len(set(labels)) != len(labels):
        raise ValueError("synth_triplet_table needs disjoint triplets")
    rng = np.random.default_rng(derive_seed(seed, "triplet-geometry"))
    n_bad = int(round(unreasonable_fraction * n))
    bad = np.zeros(n, dtype=bool)
    bad[rng.permutation(n)[:n_bad]] = True

    rows = np.empty((3 * n, dim))
    for i in range(n):
        frame, _ = np.linalg.qr(rng.standard_normal((dim, 3)))
        e1, e2, e3 = frame.T
        if bad[i]:
            rho = rng.uniform(0.2, 0.4)
            s_near = rng.uniform(rho + 0.1, rho + 0.25)
            s_far = rng.uniform(0.0, rho)
        else:
            rho = rng.uniform(0.55, 0.8)
            s_near = rng.uniform(0.05, 0.35)
            s_far = rng.uniform(0.0, s_near)
        a = e1
        b = rho * e1 + math.sqrt(1 - rho**2) * e2
        x = s_near
        y = (s_far - rho * s_near) / math.sqrt(1 - rho**2)
        o = x * e1 + y * e2 + math.sqrt(max(0.0, 1 - x * x - y * y)) * e3
        if rng.random() < 0.5:
            a, b = b, a
        rows[3 * i : 3 * i + 3] = (a, b, o)
    return EmbeddingTable(tuple(labels), rows)


# -- non-textual simulation ---------------------------------------------------


def label_vector(label: str, dim: int, seed: int) -> np.ndarray:
    """Unit vector that depends only on ``(label, seed)``."""
    rng = np.random.default_rng(derive_seed(seed, "nontextual", label))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def synth_nontextual(labels: Sequence[str], dim: int, seed: int) -> EmbeddingTable:
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    rows = np.array([label_vector(label, dim, seed) for label in labels]).reshape(len(labels), dim)
    return EmbeddingTable(tuple(labels), rows)


def distort(table: EmbeddingTable, p: float, seed: int) -> EmbeddingTable:
    """Zero each entry independently with probability ``p``; no renormalization."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    if p == 0.0:
        return table
    rng = np.random.default_rng(derive_seed(seed, "distort"))
    keep = rng.random(table.rows.shape) >= p
    return table.with_rows(np.where(keep, table.rows, 0.0))


def fuse(text: EmbeddingTable, nontext: EmbeddingTable, alpha: float) -> EmbeddingTable:
    if text.labels != nontext.labels:
        raise ValueError("fuse needs tables with identical labels in identical order")
    if text.dim != nontext.dim:
        raise ValueError(f"dimension mismatch: {text.dim} vs {nontext.dim}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return text.with_rows((1.0 - alpha) * text.rows + alpha * nontext.rows)


def _unit_in_subspace(rng: np.random.Generator, n: int, dim: int, k: int) -> np.ndarray:
    """Random unit vectors of R^dim written in a 4-D orthonormal frame.

    The first ``k`` coordinates are the components along an already-fixed
    frame; coordinate ``k`` carries the norm of the remaining
    ``dim - k`` components (chi-distributed), which by rotation invariance can
    be assigned to the next frame vector.
    """
    out = np.zeros((n, 4))
    out[:, :k] = rng.standard_normal((n, k))
    out[:, k] = np.sqrt(rng.chisquare(dim - k, n))
    return out / np.sqrt(np.einsum("ij,ij->i", out, out))[:, None]


def expectation_scaling_check(
    dim: int,
    alpha: float,
    n_pairs: int,
    seed: int = 0,
    rho: float = 0.5,
) -> dict:
    """Monte-Carlo ratio of mean fused similarity to mean base similarity.

    Base pairs are ``c1`` uniform on the sphere and
    ``c2 = normalize(rho * c1 + sqrt(1 - rho**2) * eps)`` with ``eps`` another
    random unit vector, so the mean base similarity stays near ``rho``.
    Each concept also gets an independent random unit vector ``c'``; the fused
    vectors are ``(1 - alpha) * c + alpha * c'`` and similarity is the raw
    inner product. The expected ratio is ``(1 - alpha)**2``.

    Only inner products matter, so the four vectors of a pair are drawn
    directly in the 4-D subspace they span (exact in distribution).
    """
    if n_pairs < 1000:
        raise ValueError("n_pairs must be at least 1000")
    if dim < 4:
        raise ValueError("dim must be at least 4")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    rng = np.random.default_rng(derive_seed(seed, "scaling", dim))
    c1 = np.zeros((n_pairs, 4))
    c1[:, 0] = 1.0
    eps = _unit_in_subspace(rng, n_pairs, dim, 1)
    c1p = _unit_in_subspace(rng, n_pairs, dim, 2)
    c2p = _unit_in_subspace(rng, n_pairs, dim, 3)
    c2 = rho * c1 + math.sqrt(1.0 - rho * rho) * eps
    c2 /= np.sqrt(np.einsum("ij,ij->i", c2, c2))[:, None]
    f1 = (1.0 - alpha) * c1 + alpha * c1p
    f2 = (1.0 - alpha) * c2 + alpha * c2p
    base_mean = math.fsum(np.einsum("ij,ij->i", c1, c2)) / n_pairs
    fused_mean = math.fsum(np.einsum("ij,ij->i", f1, f2)) / n_pairs
    if abs(base_mean) < 0.05:
        raise ValueError(
            f"mean base similarity {base_mean:.4g} is too close to 0 for a stable ratio; "
            "use a sampler with correlated pairs (rho > 0)"
        )
    return {
        "empirical_ratio": fused_mean / base_mean,
        "predicted": (1.0 - alpha) ** 2,
        "mean_base_similarity": base_mean,
        "mean_fused_similarity": fused_mean,
        "n_pairs": n_pairs,
    }


# -- refiners ---------------------------------------------------------------


Refiner = Callable[[EmbeddingTable], EmbeddingTable]


def identity_refiner(table: EmbeddingTable) -> EmbeddingTable:
    return table


@dataclass(frozen=True)
class AttentionLayer:
    """Weights of one single-head self-attention block with a residual path.

    ``wq``, ``wk``: ``(dim, d_k)``; ``wv``: ``(dim, d_v)``; ``wo``: ``(d_v, dim)``.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    def check(self, dim: int) -> None:
        if self.wq.shape[0] != dim or self.wk.shape[0] != dim or self.wv.shape[0] != dim:
            raise ValueError(f"attention input projections must have {dim} rows")
        if self.wq.shape[1] != self.wk.shape[1]:
            raise ValueError("query and key projections must share their output size")
        if self.wo.shape != (self.wv.shape[1], dim):
            raise ValueError(f"output projection must be ({self.wv.shape[1]}, {dim}), got {self.wo.shape}")


def toy_attention_refine(table: EmbeddingTable, weights: Sequence[AttentionLayer] | AttentionLayer) -> EmbeddingTable:
    """Run rows (as tokens) through stacked scaled-dot-product self-attention.

    Each layer computes ``x + softmax(x Wq (x Wk)^T / sqrt(d_k)) x Wv Wo``.
    """
    layers = [weights] if isinstance(weights, AttentionLayer) else list(weights)
    x = table.rows
    for layer in layers:
        layer.check(table.dim)
        if len(x) == 0:
            continue
        q = x @ layer.wq
        k = x @ layer.wk
        logits = q @ k.T / math.sqrt(q.shape[1])
        logits -= logits.max(axis=1, keepdims=True)
        attn = np.exp(logits)
        attn /= attn.sum(axis=1, keepdims=True)
        x = x + attn @ (x @ layer.wv) @ layer.wo
    return table.with_rows(x)


class ToyAttentionRefiner:
    def __init__(self, layers: Sequence[AttentionLayer]):
        self.layers = list(layers)

    def __call__(self, table: EmbeddingTable) -> EmbeddingTable:
        return toy_attention_refine(table, self.layers)

    @classmethod
    def random(cls, dim: int, depth: int = 1, seed: int = 0, scale: float = 0.1, d_k: int | None = None):
        d_k = d_k or dim
        rng = np.random.default_rng(derive_seed(seed, "toy-attention", dim, depth))
        layers = []
        for _ in range(depth):
            layers.append(
                AttentionLayer(
                    wq=rng.standard_normal((dim, d_k)) / math.sqrt(dim),
                    wk=rng.standard_normal((dim, d_k)) / math.sqrt(dim),
                    wv=rng.standard_normal((dim, d_k)) * scale / math.sqrt(dim),
                    wo=rng.standard_normal((d_k, dim)) / math.sqrt(d_k),
                )
            )
        return cls(layers)

    @classmethod
    def load(cls, path) -> "ToyAttentionRefiner":
        """Load from an ``.npz`` holding ``layer{i}_wq`` / ``_wk`` / ``_wv`` / ``_wo``."""
        with np.load(path) as data:
            depth = len({key.split("_")[0] for key in data.files})
            layers = [
                AttentionLayer(*(np.asarray(data[f"layer{i}_{name}"], dtype=np.float64) for name in ("wq", "wk", "wv", "wo")))
                for i in range(depth)
            ]
        return cls(layers)

    def save(self, path) -> None:
        arrays = {}
        for i, layer in enumerate(self.layers):
            for name in ("wq", "wk", "wv", "wo"):
                arrays[f"layer{i}_{name}"] = getattr(layer, name)
        np.savez(path, **arrays)


class ExternalRefiner:
    """Delegate refinement to another process.

    The table is written to ``input.emb`` in a scratch directory and the
    command is run as ``<cmd> <input.emb> <output.emb>``. The output is read
    back and checked by the caller.
    """

    def __init__(self, command: str | Sequence[str], timeout: float = 300.0):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout

    def __call__(self, table: EmbeddingTable) -> EmbeddingTable:
        with tempfile.TemporaryDirectory(prefix="mp-refine-") as tmp:
            src = Path(tmp) / "input.emb"
            dst = Path(tmp) / "output.emb"
            save_table(table, src, "binary")
            try:
                proc = subprocess.run(
                    [*self.command, str(src), str(dst)],
                    capture_output=True,
                    timeout=self.timeout,
                )
            except subprocess.TimeoutExpired:
                raise StudyError(f"external refiner timed out after {self.timeout} s") from None
            except OSError as exc:
                raise StudyError(f"external refiner could not start: {exc}") from None
            if proc.returncode != 0:
                stderr = proc.stderr.decode("utf-8", "replace").strip()
                raise StudyError(f"external refiner exited with status {proc.returncode}: {stderr}")
            try:
                return load_table(dst, "binary")
            except (OSError, ValueError) as exc:
                raise StudyError(f"external refiner output unreadable: {exc}") from None


def check_refiner_contract(before: EmbeddingTable, after: EmbeddingTable) -> None:
    if after.labels != before.labels:
        if sorted(after.labels) == sorted(before.labels):
            raise StudyError("refiner contract violation: label order changed")
        raise StudyError("refiner contract violation: labels changed")
    if after.rows.shape != before.rows.shape:
        raise StudyError(
            f"refiner contract violation: shape changed from {before.rows.shape} to {after.rows.shape}"
        )
    if not np.all(np.isfinite(after.rows)):
        raise StudyError("refiner contract violation: non-finite output")


# -- the study grid -----------------------------------------------------------


def run_cell(
    text: EmbeddingTable,
    nontext: EmbeddingTable,
    triplets: Sequence[Triplet],
    refiner: Refiner,
    alpha: float,
    p: float,
    seed: int,
) -> RefineReport:
    distorted = distort(nontext, p, seed)
    fused = fuse(text, distorted, alpha)
    before = classify_all(fused, triplets)
    try:
        refined = refiner(fused)
        check_refiner_contract(fused, refined)
    except StudyError as exc:
        raise StudyError(f"cell alpha={alpha:g} p={p:g}: {exc}") from None
    after = classify_all(refined, triplets)
    return RefineReport(
        alpha=alpha,
        p=p,
        n_triplets=len(triplets),
        n_unreasonable_before=int((~before).sum()),
        n_improved=int((~before & after).sum()),
        n_deteriorated=int((before & ~after).sum()),
    )


def run_refine_study(
    text: EmbeddingTable,
    triplets: Sequence[Triplet],
    refiner: Refiner,
    alphas: Sequence[float],
    ps: Sequence[float],
    seed: int = 0,
    threads: int = 1,
) -> list[RefineReport]:
    """Evaluate every ``(alpha, p)`` cell, alphas outermost.

    The non-textual vectors depend only on ``(label, seed)`` and are shared by
    all cells; the distortion mask of each cell is seeded by the cell index, so
    results do not depend on ``threads``.
    """
    validate_triplets(text, triplets)
    labels = sorted({label for t in triplets for label in t.labels})
    text = normalize(text.select(labels))
    nontext = synth_nontextual(labels, text.dim, seed)
    cells = [(a, p) for a in alphas for p in ps]

    def work(i):
        a, p = cells[i]
        return run_cell(text, nontext, triplets, refiner, float(a), float(p), derive_seed(seed, "cell", i))

    if threads <= 1:
        return [work(i) for i in range(len(cells))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, range(len(cells))))
