"""Two-layer GCN, its activation-free surrogate, and incremental updates of A_hat^2.

Full model:      Z  = softmax(A_hat relu(A_hat X W1) W2)
Surrogate:       Z' = A_hat^2 X W'   with W' = W1 W2
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ShapeError, StateError
from .graph import ADD, REMOVE, AttributedGraph, DataSplit, EdgeFlip, LabelSet

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- A_hat


@dataclass(frozen=True)
class NormalizedAdjacency:
    a_hat: sp.csr_matrix
    a_hat_sq: sp.csr_matrix
    d_tilde: np.ndarray
    adjacency: sp.csr_matrix


def _normalize(adjacency):
    n = adjacency.shape[0]
    a_tilde = (adjacency + sp.identity(n, format="csr")).tocsr()
    d_tilde = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv_sqrt = sp.diags(1.0 / np.sqrt(d_tilde))
    return (inv_sqrt @ a_tilde @ inv_sqrt).tocsr(), d_tilde


def build_normalized(graph: AttributedGraph) -> NormalizedAdjacency:
    a_hat, d_tilde = _normalize(graph.adjacency.astype(float))
    a_sq = (a_hat @ a_hat).tocsr()
    a_sq.sort_indices()
    return NormalizedAdjacency(a_hat, a_sq, d_tilde, graph.adjacency)


def _eq7_block(norm: NormalizedAdjacency, k: int, m: int, rows: np.ndarray, cols: np.ndarray):
    """New A_hat^2 values on rows x cols after toggling edge (k, m).

    Element-wise update from the old A_hat^2 and the degree/edge changes. On
    the diagonal the self-loop term appears once, so the direct-adjustment
    bracket is halved there.
    """
    a = norm.adjacency
    a_km = float(a[k, m])
    s = 1.0 - 2.0 * a_km
    d = norm.d_tilde
    d_new = d.copy()
    d_new[[k, m]] += s

    a_rc = a[rows][:, cols].toarray()
    eye_rc = (rows[:, None] == cols[None, :]).astype(float)
    a_rc_new = a_rc.copy()
    hit = ((rows[:, None] == k) & (cols[None, :] == m)) | ((rows[:, None] == m) & (cols[None, :] == k))
    a_rc_new[hit] = 1.0 - a_km
    at_rc, at_rc_new = a_rc + eye_rc, a_rc_new + eye_rc

    di, dj = d[rows][:, None], d[cols][None, :]
    di_new, dj_new = d_new[rows][:, None], d_new[cols][None, :]
    old_sq = norm.a_hat_sq[rows][:, cols].toarray()

    direct = at_rc_new / di_new - at_rc / di + at_rc_new / dj_new - at_rc / dj
    direct = np.where(eye_rc > 0, 0.5 * direct, direct)

    indirect = np.zeros_like(old_sq)
    for hub in (k, m):
        col_old = a[rows, hub].toarray().ravel()
        row_old = a[hub, cols].toarray().ravel()
        col_new, row_new = col_old.copy(), row_old.copy()
        other = m if hub == k else k
        col_new[rows == other] = 1.0 - a_km
        row_new[cols == other] = 1.0 - a_km
        indirect += np.outer(col_new, row_new) / d_new[hub] - np.outer(col_old, row_old) / d[hub]

    return (np.sqrt(di * dj) * old_sq + direct + indirect) / np.sqrt(di_new * dj_new)


def _two_hop(adjacency, nodes):
    reach = sp.csr_matrix((np.ones(len(nodes)), (np.zeros(len(nodes)), nodes)), shape=(1, adjacency.shape[0]))
    one = reach + reach @ adjacency
    two = one + one @ adjacency
    return np.flatnonzero(np.asarray(two.todense()).ravel())


def incremental_a2_update(norm: NormalizedAdjacency, flip: EdgeFlip) -> NormalizedAdjacency:
    """A_hat'^2 after ``flip`` via the element-wise update rule.

    Only rows and columns of nodes adjacent to (or equal to) the flipped
    endpoints are recomputed; every other entry is carried over untouched.
    """
    k, m = flip.u, flip.v
    present = bool(norm.adjacency[k, m])
    if present != (flip.action == REMOVE):
        raise StateError(f"cannot {flip.action} ({k},{m}): edge {'present' if present else 'absent'}")
    n = norm.a_hat.shape[0]
    delta = sp.csr_matrix(([flip.sign, flip.sign], ([k, m], [m, k])), shape=(n, n))
    adj_new = (norm.adjacency + delta).tocsr()
    adj_new.eliminate_zeros()

    touched = np.union1d(np.union1d(norm.adjacency[[k, m]].indices, adj_new[[k, m]].indices), [k, m])
    cols = np.union1d(_two_hop(norm.adjacency, touched), _two_hop(adj_new, touched))
    block = _eq7_block(norm, k, m, touched, cols)

    old = norm.a_hat_sq.tocoo()
    is_touched = np.zeros(n, dtype=bool)
    is_touched[touched] = True
    keep = ~(is_touched[old.row] | is_touched[old.col])
    br, bc = np.nonzero(block)
    rows_new, cols_new = touched[br], cols[bc]
    vals = block[br, bc]
    mirror = ~is_touched[cols_new]
    r = np.concatenate([old.row[keep], rows_new, cols_new[mirror]])
    c = np.concatenate([old.col[keep], cols_new, rows_new[mirror]])
    v = np.concatenate([old.data[keep], vals, vals[mirror]])
    a_sq = sp.csr_matrix((v, (r, c)), shape=(n, n))
    a_sq.sort_indices()

    a_hat, d_tilde = _normalize(adj_new.astype(float))
    return NormalizedAdjacency(a_hat, a_sq, d_tilde, adj_new)


def a2_row_after_flip(norm: NormalizedAdjacency, flip: EdgeFlip, row: int) -> np.ndarray:
    """Dense row ``row`` of A_hat'^2 after ``flip``, via the element-wise rule."""
    n = norm.a_hat.shape[0]
    return _eq7_block(norm, flip.u, flip.v, np.array([row]), np.arange(n))[0]


def candidate_surrogate_scores(graph: AttributedGraph, y: np.ndarray, v: int, us: np.ndarray) -> np.ndarray:
    """Row v of A_hat'^2 Y for each single flip (v, u), u in ``us``.

    ``y`` is X W' (n x c). Returns a (len(us), c) array. This is the row-v
    restriction of the element-wise update, evaluated for all candidates at
    once from the current graph.
    """
    a = graph.adjacency
    us = np.asarray(us, dtype=np.int64)
    d = graph.degrees.astype(float) + 1.0
    q = y / np.sqrt(d)[:, None]
    aq = a @ q

    # row v of S = A_tilde D_tilde^-1 A_tilde
    a_tv = np.zeros(len(d))
    a_tv[graph.neighbors(v)] = 1.0
    a_tv[v] = 1.0
    s_row = (sp.csr_matrix(a_tv / d) @ (a + sp.identity(len(d), format="csr"))).toarray().ravel()
    base = s_row @ q

    av = a_tv.copy()
    av[v] = 0.0
    au = av[us]  # current a_vu
    s = 1.0 - 2.0 * au
    an = 1.0 - au
    dv, du = d[v], d[us]
    dv_n, du_n = dv + s, du + s
    ddv = (dv_n ** -0.5 - dv ** -0.5)[:, None]
    ddu = (du_n ** -0.5 - du ** -0.5)[:, None]
    dS_vv = (1.0 / dv_n - 1.0 / dv) + (an / du_n - au / du)
    dS_vu = an * (1.0 / dv_n + 1.0 / du_n) - au * (1.0 / dv + 1.0 / du)
    g_v = (1.0 / dv_n - 1.0 / dv)[:, None]
    g_u = (an / du_n - au / du)[:, None]

    total = (
        base[None, :]
        + s_row[v] * ddv * y[v][None, :]
        + s_row[us][:, None] * ddu * y[us]
        + dS_vv[:, None] * (dv_n ** -0.5)[:, None] * y[v][None, :]
        + dS_vu[:, None] * (du_n ** -0.5)[:, None] * y[us]
        + g_v * (aq[v][None, :] - au[:, None] * q[us])
        + g_u * (aq[us] - au[:, None] * q[v][None, :])
    )
    return total * (dv_n ** -0.5)[:, None]


# ---------------------------------------------------------------- model


@dataclass(frozen=True)
class GcnModel:
    w1: np.ndarray
    w2: np.ndarray
    trained_for: str = "target"
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.w2.shape[1]

    @property
    def w_prime(self) -> np.ndarray:
        return self.w1 @ self.w2


def _as_dense(x):
    return x.toarray() if sp.issparse(x) else np.asarray(x, dtype=float)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(a_hat, ax, w1, w2):
    pre = ax @ w1
    h = np.maximum(pre, 0.0)
    ah = a_hat @ h
    logits = ah @ w2
    return pre, ah, logits


def loss_and_grads(a_hat, ax, w1, w2, idx, y, weight_decay=5e-4):
    """Mean cross-entropy over ``idx`` plus (weight_decay / 2) ||W1||^2, and its gradients."""
    pre, ah, logits = _forward(a_hat, ax, w1, w2)
    z = softmax(logits[idx])
    n = len(idx)
    loss = -np.log(z[np.arange(n), y] + 1e-300).mean() + 0.5 * weight_decay * np.sum(w1 * w1)
    dlog = np.zeros_like(logits)
    g = z.copy()
    g[np.arange(n), y] -= 1.0
    dlog[idx] = g / n
    g2 = ah.T @ dlog
    dah = dlog @ w2.T
    dh = a_hat.T @ dah
    dpre = dh * (pre > 0)
    g1 = ax.T @ dpre + weight_decay * w1
    return loss, g1, g2


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def train_gcn(
    graph: AttributedGraph,
    labels: LabelSet,
    split: DataSplit,
    which: str = "target",
    hidden_dim: int = 16,
    epochs: int = 200,
    seed: int = 0,
    lr: float = 0.01,
    weight_decay: float = 5e-4,
    norm: Optional[NormalizedAdjacency] = None,
) -> GcnModel:
    """Full-batch Adam training with selection of the best validation epoch."""
    y_all = labels.for_task(which)
    train = np.asarray([i for i in split.train if y_all[i] >= 0], dtype=np.int64)
    if len(train) == 0:
        raise ConfigError(f"no labelled training nodes for task {which!r}")
    val = np.asarray([i for i in split.validation if y_all[i] >= 0], dtype=np.int64)
    n_classes = max(int(y_all.max()) + 1, 2)

    norm = norm or build_normalized(graph)
    x = _as_dense(graph.features).astype(float)
    ax = norm.a_hat @ x
    rng = np.random.default_rng(seed)
    params = [_glorot(rng, x.shape[1], hidden_dim), _glorot(rng, hidden_dim, n_classes)]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8

    best = (-1.0, -np.inf)
    best_params = [p.copy() for p in params]
    best_epoch = 0
    y_train = y_all[train]
    for epoch in range(1, epochs + 1):
        _, g1, g2 = loss_and_grads(norm.a_hat, ax, params[0], params[1], train, y_train, weight_decay)
        for i, g in enumerate((g1, g2)):
            m[i] = b1 * m[i] + (1 - b1) * g
            v[i] = b2 * v[i] + (1 - b2) * g * g
            mhat = m[i] / (1 - b1 ** epoch)
            vhat = v[i] / (1 - b2 ** epoch)
            params[i] = params[i] - lr * mhat / (np.sqrt(vhat) + eps)
        if len(val):
            _, _, logits = _forward(norm.a_hat, ax, params[0], params[1])
            zv = softmax(logits[val])
            acc = float((zv.argmax(axis=1) == y_all[val]).mean())
            nll = float(-np.log(zv[np.arange(len(val)), y_all[val]] + 1e-300).mean())
            score = (acc, -nll)
        else:
            score = (0.0, float(epoch))
        if score >= best:
            best, best_epoch = score, epoch
            best_params = [p.copy() for p in params]

    return GcnModel(
        best_params[0],
        best_params[1],
        trained_for=which,
        seed=seed,
        meta={"best_epoch": best_epoch, "val_acc": best[0], "epochs": epochs, "lr": lr, "weight_decay": weight_decay},
    )


def predict_full(model: GcnModel, norm: NormalizedAdjacency, x) -> np.ndarray:
    x = _as_dense(x)
    if x.shape[1] != model.w1.shape[0] or x.shape[0] != norm.a_hat.shape[0]:
        raise ShapeError(f"features {x.shape} incompatible with model {model.w1.shape} / graph {norm.a_hat.shape}")
    _, _, logits = _forward(norm.a_hat, norm.a_hat @ x, model.w1, model.w2)
    return softmax(logits)


def predict_surrogate(model: GcnModel, norm: NormalizedAdjacency, x) -> np.ndarray:
    return norm.a_hat_sq @ (_as_dense(x) @ model.w_prime)


def classification_margin(z: np.ndarray, node: int, true_label: int) -> float:
    row = z[node]
    others = np.delete(row, true_label)
    return float(row[true_label] - others.max())


def margins(z: np.ndarray, true_labels: np.ndarray) -> np.ndarray:
    """Vectorized classification margin for every row."""
    idx = np.arange(len(z))
    true = z[idx, true_labels]
    masked = z.copy()
    masked[idx, true_labels] = -np.inf
    return true - masked.max(axis=1)


def perturb_feature_experimental(model: GcnModel, norm: NormalizedAdjacency, x, k: int, l: int) -> np.ndarray:
    """Change of the surrogate scores (all nodes) from flipping feature l of node k."""
    x = _as_dense(x)
    h = 1.0 - 2.0 * x[k, l]
    col = norm.a_hat_sq[:, k].toarray().ravel()
    return np.outer(col, h * model.w_prime[l])


# ---------------------------------------------------------------- checkpoints


def save_model(model: GcnModel, stem) -> dict:
    """Write ``<stem>.json`` (header) plus raw little-endian float64 weight dumps."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, w in (("w1", model.w1), ("w2", model.w2)):
        path = stem.with_name(f"{stem.name}.{name}.bin")
        np.ascontiguousarray(w, dtype="<f8").tofile(path)
        files[name] = {"file": path.name, "shape": list(w.shape)}
    header = {"format": "netfense-gcn/1", "task": model.trained_for, "seed": model.seed, "weights": files, "meta": model.meta}
    with open(stem.with_name(f"{stem.name}.json"), "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
    return header


def load_model(stem) -> GcnModel:
    stem = Path(stem)
    with open(stem.with_name(f"{stem.name}.json")) as fh:
        header = json.load(fh)
    ws = {}
    for name, spec in header["weights"].items():
        ws[name] = np.fromfile(stem.parent / spec["file"], dtype="<f8").reshape(spec["shape"])
    return GcnModel(ws["w1"], ws["w2"], trained_for=header["task"], seed=header["seed"], meta=header.get("meta", {}))
