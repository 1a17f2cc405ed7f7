"""Attention interpolation branch: learned time embeddings plus multi-head
time attention that re-represents irregular series on the reference grid.

Both the numeric-series variant and the note-embedding variant share one
time-embedding bank (the same parameter tensors), while their projection
weights stay separate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .imputation import ReferenceGrid
from .tensor import Tensor, concat, masked_softmax, matmul, narrow, reshape, sin, swapaxes

__all__ = [
    "Time2VecParams",
    "Time2VecBank",
    "MtandParams",
    "init_time2vec_bank",
    "init_mtand_params",
    "bank_head",
    "time2vec",
    "time2vec_heads",
    "time_attention",
    "mtand_ts",
    "mtand_txt",
]

log = logging.getLogger(__name__)


@dataclass
class Time2VecParams:
    """One time-embedding head: dimension 0 is linear in time, the rest sinusoidal."""

    omega: Tensor  # [d_v] frequencies (index 0: linear slope)
    phi: Tensor  # [d_v] phases (index 0: linear intercept)


@dataclass
class Time2VecBank:
    """V heads stacked row-wise; rows are the per-head omega/phi vectors."""

    omega: Tensor  # [V x d_v]
    phi: Tensor  # [V x d_v]

    @property
    def n_heads(self) -> int:
        return self.omega.shape[0]

    @property
    def d_v(self) -> int:
        return self.omega.shape[1]


@dataclass
class MtandParams:
    """One interpolation branch: shared bank plus per-head projections."""

    bank: Time2VecBank
    w_query: Tensor  # [V x d_v x d_v]
    w_key: Tensor  # [V x d_v x d_v]
    w_out: Tensor  # [(V*d_in) x d_h]
    b_out: Tensor  # [d_h]


def init_time2vec_bank(rng: np.random.Generator, n_heads: int, d_v: int) -> Time2VecBank:
    """Periodic dims cover 1-10 cycles per unit window; linear dim starts as identity."""
    if d_v < 2:
        raise ValueError(f"time embedding needs >= 2 dims (linear + periodic), got {d_v}")
    omega = rng.uniform(2.0 * np.pi, 20.0 * np.pi, size=(n_heads, d_v))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=(n_heads, d_v))
    omega[:, 0] = 1.0
    phi[:, 0] = 0.0
    return Time2VecBank(omega=Tensor(omega), phi=Tensor(phi))


def init_mtand_params(
    rng: np.random.Generator, bank: Time2VecBank, d_in: int, d_h: int
) -> MtandParams:
    v, d_v = bank.n_heads, bank.d_v
    return MtandParams(
        bank=bank,
        w_query=Tensor(rng.normal(0.0, d_v**-0.5, size=(v, d_v, d_v))),
        w_key=Tensor(rng.normal(0.0, d_v**-0.5, size=(v, d_v, d_v))),
        w_out=Tensor(rng.normal(0.0, (v * d_in) ** -0.5, size=(v * d_in, d_h))),
        b_out=Tensor(np.zeros(d_h)),
    )


def bank_head(bank: Time2VecBank, v: int) -> Time2VecParams:
    """View of head v; gradients flow back into the bank tensors."""
    d_v = bank.d_v
    return Time2VecParams(
        omega=reshape(narrow(bank.omega, 0, v, 1), (d_v,)),
        phi=reshape(narrow(bank.phi, 0, v, 1), (d_v,)),
    )


def time2vec(times: np.ndarray, params: Time2VecParams) -> Tensor:
    """Embed times: column 0 = omega[0]*t + phi[0], columns i>=1 = sin(omega[i]*t + phi[i])."""
    t_col = np.asarray(times, dtype=np.float64).reshape(-1, 1)
    theta = params.omega * t_col + params.phi  # [n x d_v] by broadcast
    d_v = params.omega.shape[0]
    linear = narrow(theta, 1, 0, 1)
    periodic = sin(narrow(theta, 1, 1, d_v - 1))
    return concat([linear, periodic], axis=1)


def time2vec_heads(times: np.ndarray, bank: Time2VecBank) -> Tensor:
    """All V heads at once: [V x n x d_v]."""
    n = np.asarray(times).size
    t_mid = np.asarray(times, dtype=np.float64).reshape(1, n, 1)
    v, d_v = bank.n_heads, bank.d_v
    omega = reshape(bank.omega, (v, 1, d_v))
    phi = reshape(bank.phi, (v, 1, d_v))
    theta = omega * t_mid + phi  # [V x n x d_v]
    linear = narrow(theta, 2, 0, 1)
    periodic = sin(narrow(theta, 2, 1, d_v - 1))
    return concat([linear, periodic], axis=2)


def time_attention(
    grid: ReferenceGrid,
    key_times: np.ndarray,
    values,
    params: MtandParams,
    head: int,
) -> Tensor:
    """One head's interpolation: grid queries attend over observation keys.

    values is [l x c] (Tensor or array). l = 0 returns zeros: with nothing to
    attend over, the head contributes nothing.
    """
    key_times = np.asarray(key_times, dtype=np.float64)
    values_data = values.data if isinstance(values, Tensor) else np.asarray(values, dtype=np.float64)
    if key_times.size == 0:
        return Tensor(np.zeros((grid.n_points, values_data.shape[1] if values_data.ndim == 2 else 1)))
    d_v = params.bank.d_v
    head_params = bank_head(params.bank, head)
    w_q = reshape(narrow(params.w_query, 0, head, 1), (d_v, d_v))
    w_k = reshape(narrow(params.w_key, 0, head, 1), (d_v, d_v))
    q = matmul(time2vec(grid.points, head_params), w_q)  # [alpha x d_v]
    k = matmul(time2vec(key_times, head_params), w_k)  # [l x d_v]
    scores = matmul(q, swapaxes(k, 0, 1)) * (d_v**-0.5)
    weights, _ = masked_softmax(scores, None)
    return matmul(weights, values)


def _attention_all_heads(
    grid_emb: Tensor,  # [V x alpha x d_v] precomputed grid time embeddings
    key_times: np.ndarray,
    values: np.ndarray,  # [l x c], attended as constants
    params: MtandParams,
) -> Tensor:
    """All heads at once: [V x alpha x c]."""
    d_v = params.bank.d_v
    q = matmul(grid_emb, params.w_query)  # [V x alpha x d_v]
    k = matmul(time2vec_heads(key_times, params.bank), params.w_key)  # [V x l x d_v]
    scores = matmul(q, swapaxes(k, 1, 2)) * (d_v**-0.5)
    weights, _ = masked_softmax(scores, None)
    return matmul(weights, values)


def _project_heads(stacked: Tensor, params: MtandParams) -> Tensor:
    """[V x alpha x d_in] -> concat head outputs per grid row -> [alpha x d_h]."""
    v, alpha, d_in = stacked.shape
    flat = reshape(swapaxes(stacked, 0, 1), (alpha, v * d_in))
    return matmul(flat, params.w_out) + params.b_out


def mtand_ts(
    feature_series: list[tuple[np.ndarray, np.ndarray]],
    grid: ReferenceGrid,
    params: MtandParams,
) -> Tensor:
    """Interpolate each feature's own (times, values) onto the grid, all heads,
    then project the concatenated head outputs to [alpha x d_h]."""
    v, alpha = params.bank.n_heads, grid.n_points
    grid_emb = time2vec_heads(grid.points, params.bank)
    columns: list[Tensor] = []
    for j, (times, vals) in enumerate(feature_series):
        if times.size == 0:
            log.debug("feature %d has no observations; contributing zero column", j)
            columns.append(Tensor(np.zeros((v, alpha, 1))))
            continue
        columns.append(_attention_all_heads(grid_emb, times, vals.reshape(-1, 1), params))
    return _project_heads(concat(columns, axis=2), params)


def mtand_txt(
    note_times: np.ndarray,
    note_embeddings: np.ndarray,
    grid: ReferenceGrid,
    params: MtandParams,
) -> Tensor:
    """Interpolate note embeddings (all dims share the note times) onto the grid."""
    if np.asarray(note_times).size == 0:
        raise ValueError("mtand_txt needs at least one note")
    grid_emb = time2vec_heads(grid.points, params.bank)
    stacked = _attention_all_heads(grid_emb, note_times, note_embeddings, params)
    return _project_heads(stacked, params)
