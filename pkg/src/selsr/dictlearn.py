"""Coupled low/high-resolution dictionary training, one (class, role) pair.

High-resolution pixel patches and their low-resolution feature vectors are
trained jointly: each sample is the stacked vector [sqrt(s)*high; low] with
s = p_low/p_high so neither block dominates the reconstruction error, and
each dictionary atom keeps unit l2 norm. Training alternates minibatch
sparse coding against the current atoms with a block-coordinate atom update
on the accumulated sufficient statistics (online-style A = sum a a^T,
B = sum z a^T). Atoms never activated in an epoch are replaced by the
worst-reconstructed sample.

On disk (magic SSRDICT1) the two blocks are stored separately with the low
block rescaled to unit columns and the high block co-scaled by the same
per-atom factor, so coding features against D_low and synthesizing with
D_high stays consistent.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, TrainingError
from .sparse import lasso_batch

_DICT_MAGIC = b"SSRDICT1"
_ACTIVITY_EPS = 1e-12


@dataclass
class TrainingConfig:
    n_atoms: int = 1024
    patches_per_role: int = 50000
    lambda_int: float = 0.15
    epochs: int = 10
    minibatch: int = 256
    rng_seed: int = 0
    patch_size: int = 3
    magnification: int = 3

    def __post_init__(self):
        if self.n_atoms < 1 or self.epochs < 1 or self.minibatch < 1:
            raise ValueError("n_atoms, epochs, minibatch must be positive")
        if self.lambda_int <= 0:
            raise ValueError("lambda_int must be > 0")
        if self.patches_per_role < self.n_atoms:
            raise ValueError("patches_per_role must be at least n_atoms")


@dataclass
class TrainHistory:
    """Objective trace kept alongside a trained dictionary (not serialized)."""

    initial_objective: float = 0.0
    final_objective: float = 0.0
    epoch_objectives: list = field(default_factory=list)  # eval-subset mean per epoch
    joint_norms: np.ndarray | None = None


@dataclass
class CoupledDictionary:
    """Paired feature/pixel atom matrices for one (class, role)."""

    class_name: str
    role: str  # 'fg' | 'bg'
    D_low: np.ndarray   # (p_low, n), unit-norm columns
    D_high: np.ndarray  # (p_high, n), co-scaled with D_low
    scaling: float      # weight s applied to the high block during training
    patch_size: int
    magnification: int
    version: int = 1
    history: TrainHistory | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.role not in ("fg", "bg"):
            raise ValueError(f"role must be 'fg' or 'bg', got {self.role!r}")
        self.D_low = np.asarray(self.D_low, dtype=np.float64)
        self.D_high = np.asarray(self.D_high, dtype=np.float64)
        if self.D_low.ndim != 2 or self.D_high.ndim != 2 \
                or self.D_low.shape[1] != self.D_high.shape[1]:
            raise ValueError("D_low and D_high must share the atom count")

    @property
    def n_atoms(self) -> int:
        return self.D_low.shape[1]


@dataclass
class DictionaryStats:
    cluster_count: int
    fg_counts: np.ndarray
    bg_counts: np.ndarray


def _stack_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    pairs = [tuple(s) for s in samples]  # TrainingSample or plain 2-tuples
    feats = np.stack([np.asarray(f, dtype=np.float64).ravel() for f, _ in pairs])
    highs = np.stack([np.asarray(h, dtype=np.float64).ravel() for _, h in pairs])
    return feats, highs


def joint_objective(Z: np.ndarray, D: np.ndarray, lam: float) -> float:
    """Mean per-sample coding objective 0.5||z - Da||^2 + lam*||a||_1."""
    alpha, _ = lasso_batch(Z.T, D, lam, tol=1e-4, max_iter=60, kkt_check=False)
    R = Z.T - D @ alpha
    per = 0.5 * (R * R).sum(axis=0) + lam * np.abs(alpha).sum(axis=0)
    return float(per.mean())


def train_coupled_dictionary(samples, cfg: TrainingConfig,
                             class_name: str = "object", role: str = "fg") -> CoupledDictionary:
    """Train one coupled dictionary from (feature, high-patch) sample pairs.

    Deterministic for a fixed seed and sample list. The history records the
    mean coding objective on a fixed 10% evaluation subset after each epoch
    and the full-set objective at initialization and after training.
    """
    m = len(samples)
    if m < cfg.n_atoms:
        raise ValueError(f"need at least n_atoms={cfg.n_atoms} samples, got {m}")
    feats, highs = _stack_samples(samples)
    p_low, p_high = feats.shape[1], highs.shape[1]
    s = p_low / p_high
    Z = np.concatenate([np.sqrt(s) * highs, feats], axis=1)  # (m, p_joint)

    znorm = np.linalg.norm(Z, axis=1)
    nonzero = np.nonzero(znorm > 0)[0]
    if len(nonzero) == 0:
        raise TrainingError("all training samples are zero")
    if len(nonzero) < cfg.n_atoms:
        raise TrainingError(
            f"only {len(nonzero)} nonzero samples for {cfg.n_atoms} atoms"
        )

    rng = np.random.default_rng(cfg.rng_seed)
    init_idx = rng.choice(nonzero, size=cfg.n_atoms, replace=False)
    D = Z[init_idx].T / znorm[init_idx]

    n_eval = max(1, m // 10)
    eval_idx = rng.choice(m, size=n_eval, replace=False)
    history = TrainHistory(initial_objective=joint_objective(Z, D, cfg.lambda_int))

    resid = np.zeros(m)
    codes = np.zeros((cfg.n_atoms, m), dtype=np.float32)  # epoch warm starts
    for _ in range(cfg.epochs):
        perm = rng.permutation(m)
        A = np.zeros((cfg.n_atoms, cfg.n_atoms))
        B = np.zeros((Z.shape[1], cfg.n_atoms))
        for start in range(0, m, cfg.minibatch):
            batch = perm[start:start + cfg.minibatch]
            Yb = Z[batch].T
            alpha, _ = lasso_batch(Yb, D, cfg.lambda_int, tol=1e-4, max_iter=50,
                                   init=codes[:, batch].astype(np.float64),
                                   kkt_check=False)
            codes[:, batch] = alpha.astype(np.float32)
            resid[batch] = np.linalg.norm(Yb - D @ alpha, axis=0)
            A += alpha @ alpha.T
            B += Yb @ alpha.T
            for j in range(cfg.n_atoms):
                if A[j, j] <= _ACTIVITY_EPS:
                    continue
                u = (B[:, j] - D @ A[:, j]) / A[j, j] + D[:, j]
                nu = np.linalg.norm(u)
                if nu > 0:
                    D[:, j] = u / nu
        dead = np.nonzero(np.diag(A) <= _ACTIVITY_EPS)[0]
        if len(dead):
            worst = np.argsort(-resid)
            picked = [i for i in worst if znorm[i] > 0][:len(dead)]
            for j, i in zip(dead, picked):
                D[:, j] = Z[i] / znorm[i]
        history.epoch_objectives.append(joint_objective(Z[eval_idx], D, cfg.lambda_int))

    history.final_objective = joint_objective(Z, D, cfg.lambda_int)
    history.joint_norms = np.linalg.norm(D, axis=0)

    high_block = D[:p_high] / np.sqrt(s)
    low_block = D[p_high:]
    gamma = np.maximum(np.linalg.norm(low_block, axis=0), 1e-12)
    return CoupledDictionary(
        class_name=class_name,
        role=role,
        D_low=low_block / gamma,
        D_high=high_block / gamma,
        scaling=s,
        patch_size=cfg.patch_size,
        magnification=cfg.magnification,
        history=history,
    )


# ---------------------------------------------------------------------------
# Dictionary statistics (atom clustering)
# ---------------------------------------------------------------------------

def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    chosen = np.zeros(n, dtype=bool)
    first = int(rng.integers(n))
    centers[0] = points[first]
    chosen[first] = True
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            remaining = np.nonzero(~chosen)[0]
            pick = int(remaining[rng.integers(len(remaining))])
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centers[i] = points[pick]
        chosen[pick] = True
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
            iters: int = 100) -> np.ndarray:
    centers = _kmeans_pp_init(points, k, rng)
    assign = np.full(len(points), -1, dtype=np.int64)
    for _ in range(iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        if (new_assign == assign).all():
            break
        assign = new_assign
        for c in range(k):
            members = points[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return assign


def dictionary_stats(fg: CoupledDictionary, bg: CoupledDictionary,
                     clusters: int = 20, rng_seed: int = 0) -> DictionaryStats:
    """Cluster the union of both dictionaries' feature atoms and count the
    fg/bg membership per cluster (k-means++, 100 Lloyd iterations)."""
    if fg.D_low.shape[0] != bg.D_low.shape[0]:
        raise ValueError("dictionaries have mismatched feature dims")
    total = fg.n_atoms + bg.n_atoms
    if clusters > total:
        raise ValueError(f"clusters={clusters} exceeds total atoms {total}")
    points = np.concatenate([fg.D_low.T, bg.D_low.T], axis=0)
    assign = _kmeans(points, clusters, np.random.default_rng(rng_seed))
    fg_counts = np.bincount(assign[:fg.n_atoms], minlength=clusters)
    bg_counts = np.bincount(assign[fg.n_atoms:], minlength=clusters)
    return DictionaryStats(clusters, fg_counts, bg_counts)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_dictionary(d: CoupledDictionary, path) -> None:
    """Binary SSRDICT1 file; round-trips bitwise on all numeric fields."""
    name = d.class_name.encode("utf-8")
    p_low, n = d.D_low.shape
    p_high = d.D_high.shape[0]
    with open(path, "wb") as fh:
        fh.write(_DICT_MAGIC)
        fh.write(struct.pack("<8i", d.version, n, p_low, p_high,
                             d.patch_size, d.magnification,
                             1 if d.role == "fg" else 0, len(name)))
        fh.write(name)
        fh.write(d.D_low.astype("<f8").tobytes(order="F"))
        fh.write(d.D_high.astype("<f8").tobytes(order="F"))
        fh.write(struct.pack("<d", d.scaling))


def load_dictionary(path) -> CoupledDictionary:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _DICT_MAGIC:
        raise FormatError(f"{path}: bad magic, expected {_DICT_MAGIC.decode()}")
    if len(blob) < 8 + 32:
        raise FormatError(f"{path}: truncated header")
    version, n, p_low, p_high, patch_size, magnification, role_flag, name_len = \
        struct.unpack("<8i", blob[8:40])
    if version != 1:
        raise FormatError(f"{path}: unsupported version {version}")
    if min(n, p_low, p_high, patch_size, magnification) <= 0 or name_len < 0 \
            or role_flag not in (0, 1):
        raise FormatError(f"{path}: inconsistent header fields")
    need = 40 + name_len + 8 * (p_low * n + p_high * n) + 8
    if len(blob) != need:
        raise FormatError(f"{path}: size mismatch (expected {need} bytes, got {len(blob)})")
    at = 40
    name = blob[at:at + name_len].decode("utf-8")
    at += name_len
    D_low = np.frombuffer(blob[at:at + 8 * p_low * n], dtype="<f8").reshape(
        (p_low, n), order="F").copy()
    at += 8 * p_low * n
    D_high = np.frombuffer(blob[at:at + 8 * p_high * n], dtype="<f8").reshape(
        (p_high, n), order="F").copy()
    at += 8 * p_high * n
    (scaling,) = struct.unpack("<d", blob[at:at + 8])
    return CoupledDictionary(
        class_name=name,
        role="fg" if role_flag == 1 else "bg",
        D_low=D_low,
        D_high=D_high,
        scaling=scaling,
        patch_size=patch_size,
        magnification=magnification,
        version=version,
    )
