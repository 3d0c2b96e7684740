"""Feed-forward and graph networks in plain numpy with explicit backprop.

Both networks end in two raw outputs ``(u, v)`` per job, decoded by
:class:`~tokencurve.models.data.ParamScales` into ``a = -sigma_a * exp(u)``
and ``b = exp(sigma_logb * v)``; any weights give a < 0 < b.

Graph network: GCN layers over the symmetrised, self-looped,
degree-normalised operator adjacency; a context vector ``tanh(mean(U) @ Wc)``;
per-node attention ``sigmoid(u_n . c)``; attention-weighted sum pooling;
then a dense head.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ..errors import ShapeError

Params = dict[str, np.ndarray]


def _he(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / max(fan_in, 1)), size=(fan_in, fan_out))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# MLP


def init_mlp(rng: np.random.Generator, in_dim: int, hidden: Sequence[int]) -> Params:
    params: Params = {}
    dims = [in_dim, *hidden]
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"W{i}"] = _he(rng, a, b)
        params[f"b{i}"] = np.zeros(b)
    k = len(hidden)
    params[f"W{k}"] = rng.normal(0.0, 0.01, size=(dims[-1], 2))
    params[f"b{k}"] = np.zeros(2)
    return params


def _n_dense(params: Params, prefix: str = "W") -> int:
    return sum(1 for k in params if k.startswith(prefix) and k[len(prefix):].isdigit())


def mlp_forward(params: Params, X: np.ndarray):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != params["W0"].shape[0]:
        raise ShapeError(f"expected {params['W0'].shape[0]} input features, got {X.shape[1]}")
    n = _n_dense(params)
    acts = [X]
    h = X
    for i in range(n):
        z = h @ params[f"W{i}"] + params[f"b{i}"]
        h = np.maximum(z, 0.0) if i < n - 1 else z
        acts.append(h)
    return h, acts


def mlp_backward(params: Params, acts: list[np.ndarray], dout: np.ndarray) -> tuple[Params, np.ndarray]:
    """Parameter gradients and the gradient with respect to the input rows."""
    n = _n_dense(params)
    grads: Params = {}
    d = dout
    for i in reversed(range(n)):
        grads[f"W{i}"] = acts[i].T @ d
        grads[f"b{i}"] = d.sum(axis=0)
        d = d @ params[f"W{i}"].T
        if i > 0:
            d = d * (acts[i] > 0)
    return grads, d


# ---------------------------------------------------------------------------
# GNN


def normalized_adjacency(A: np.ndarray) -> sp.csr_matrix:
    """D^-1/2 (sym(A) + I) D^-1/2 with sym(A) the undirected version of the DAG."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError("adjacency must be square")
    S = ((A + A.T) > 0).astype(float)
    np.fill_diagonal(S, 1.0)
    d = 1.0 / np.sqrt(S.sum(axis=1))
    return sp.csr_matrix(S * d[:, None] * d[None, :])


@dataclass
class GraphBatch:
    X: np.ndarray            # stacked node features, graphs contiguous
    A: sp.csr_matrix         # block-diagonal normalised adjacency
    offsets: np.ndarray      # first node of each graph
    counts: np.ndarray       # nodes per graph
    seg: np.ndarray          # graph index of each node

    @classmethod
    def from_graphs(cls, graphs: Sequence[tuple[np.ndarray, sp.csr_matrix]]) -> GraphBatch:
        counts = np.array([g[0].shape[0] for g in graphs], dtype=np.int64)
        if np.any(counts == 0):
            raise ShapeError("every graph needs at least one node")
        for X, A in graphs:
            if A.shape != (X.shape[0], X.shape[0]):
                raise ShapeError("adjacency does not match node count")
        offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
        return cls(
            X=np.vstack([g[0] for g in graphs]),
            A=sp.block_diag([g[1] for g in graphs], format="csr"),
            offsets=offsets,
            counts=counts,
            seg=np.repeat(np.arange(len(graphs)), counts),
        )


def init_gnn(rng: np.random.Generator, in_dim: int, gcn_dims: Sequence[int], head_dims: Sequence[int]) -> Params:
    params: Params = {}
    dims = [in_dim, *gcn_dims]
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"G{i}"] = _he(rng, a, b)
        params[f"g{i}"] = np.zeros(b)
    emb = dims[-1]
    params["Wc"] = rng.normal(0.0, np.sqrt(1.0 / emb), size=(emb, emb))
    hdims = [emb, *head_dims]
    for i, (a, b) in enumerate(zip(hdims[:-1], hdims[1:])):
        params[f"W{i}"] = _he(rng, a, b)
        params[f"b{i}"] = np.zeros(b)
    k = len(head_dims)
    params[f"W{k}"] = rng.normal(0.0, 0.01, size=(hdims[-1], 2))
    params[f"b{k}"] = np.zeros(2)
    return params


def _head(params: Params) -> Params:
    return {k: v for k, v in params.items() if k[0] in "Wb" and k[1:].isdigit()}


def gnn_forward(params: Params, batch: GraphBatch):
    if batch.X.shape[1] != params["G0"].shape[0]:
        raise ShapeError(f"expected {params['G0'].shape[0]} node features, got {batch.X.shape[1]}")
    n_gcn = _n_dense(params, "G")
    H = batch.X
    gcn_in, gcn_out = [], []
    for i in range(n_gcn):
        AH = batch.A @ H
        Z = AH @ params[f"G{i}"] + params[f"g{i}"]
        H = np.maximum(Z, 0.0)
        gcn_in.append(AH)
        gcn_out.append(H)
    U = H
    M = np.add.reduceat(U, batch.offsets, axis=0) / batch.counts[:, None]
    C = np.tanh(M @ params["Wc"])
    s = np.sum(U * C[batch.seg], axis=1)
    alpha = _sigmoid(s)
    E = np.add.reduceat(alpha[:, None] * U, batch.offsets, axis=0)
    out, head_acts = mlp_forward(_head(params), E)
    cache = dict(gcn_in=gcn_in, gcn_out=gcn_out, M=M, C=C, alpha=alpha, head_acts=head_acts)
    return out, cache


def gnn_backward(params: Params, batch: GraphBatch, cache: dict, dout: np.ndarray) -> Params:
    grads, dE = mlp_backward(_head(params), cache["head_acts"], dout)
    U = cache["gcn_out"][-1]
    C, alpha, M, seg = cache["C"], cache["alpha"], cache["M"], batch.seg
    dU = alpha[:, None] * dE[seg]
    dalpha = np.sum(U * dE[seg], axis=1)
    ds = dalpha * alpha * (1.0 - alpha)
    dU += ds[:, None] * C[seg]
    dC = np.add.reduceat(ds[:, None] * U, batch.offsets, axis=0)
    dP = dC * (1.0 - C * C)
    grads["Wc"] = M.T @ dP
    dM = dP @ params["Wc"].T
    dU += (dM / batch.counts[:, None])[seg]
    dH = dU
    for i in reversed(range(_n_dense(params, "G"))):
        dZ = dH * (cache["gcn_out"][i] > 0)
        grads[f"G{i}"] = cache["gcn_in"][i].T @ dZ
        grads[f"g{i}"] = dZ.sum(axis=0)
        if i > 0:
            dH = batch.A.T @ (dZ @ params[f"G{i}"].T)
    return grads


def parameter_count(params: Params) -> int:
    return int(sum(v.size for v in params.values()))


class Adam:
    def __init__(self, params: Params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
