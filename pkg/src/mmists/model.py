"""Model assembly: run configuration, parameter construction, episode
preparation, and the forward passes for fused and single-modality variants.

Each component's parameters are initialized from a generator seeded by
(run seed, component id), so components shared between model variants start
bit-identical regardless of which other components a variant instantiates.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .data import DataError, Episode, NormalizationStats, embed_notes, group_by_feature, note_matrix, truncate_notes
from .fusion import (
    ClassifierParams,
    FusionLayerParams,
    LayerNormParams,
    SingleLayerParams,
    classify,
    classify_single,
    fusion_stack,
    init_classifier,
    init_fusion_layer,
    init_layer_norm,
    init_single_layer,
    single_stack,
)
from .gating import GATE_LEVELS, GateParams, compute_gate, init_gate_params, utde_embed
from .imputation import ReferenceGrid, conv_embed, discretize, impute
from .mtand import (
    MtandParams,
    Time2VecBank,
    init_mtand_params,
    init_time2vec_bank,
    mtand_ts,
    mtand_txt,
)
from .tensor import Tensor, concat, layer_norm, matmul

__all__ = [
    "ConfigError",
    "RunConfig",
    "ModelParams",
    "PreparedEpisode",
    "init_model",
    "prepare_episode",
    "forward",
    "forward_fused",
    "single_modality_forward",
    "ts_embedding",
    "TS_EMBEDS",
    "MODALITIES",
]


class ConfigError(ValueError):
    """Invalid run configuration."""


TS_EMBEDS = ("utde", "imputation", "mtand")
MODALITIES = ("fused", "ts", "txt")
TASKS = ("binary", "multilabel")


@dataclass
class RunConfig:
    """Everything a run needs: architecture, optimization, and file locations."""

    seed: int = 0
    task: str = "binary"
    n_classes: int = 1
    modality: str = "fused"  # fused | ts | txt
    ts_embed: str = "utde"  # utde | imputation | mtand
    gate_level: str = "patient"
    text_irregularity: bool = True  # False: pad raw projected notes instead of interpolating
    alpha: int = 24  # reference grid points
    n_features: int = 4
    text_dim: int = 16
    d_hidden: int = 64
    d_timeembed: int = 64
    time_heads: int = 8
    fusion_layers: int = 3
    heads: int = 4
    conv_kernel: int = 1
    note_budget: int = 5
    text_encoder_seed: int = 0
    alpha_hours: float = 24.0
    batch_size: int = 32
    lr: float = 4e-4
    epochs: int | None = None  # None resolves to 20 for ts-only runs, 6 otherwise
    grad_clip: float | None = None
    pos_weight: float = 1.0
    train_path: str | None = None
    val_path: str | None = None
    test_path: str | None = None
    stats_path: str | None = None
    checkpoint_path: str | None = None

    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 20 if self.modality == "ts" else 6

    def validate(self) -> "RunConfig":
        c = self
        positive = {
            "n_classes": c.n_classes,
            "alpha": c.alpha,
            "n_features": c.n_features,
            "text_dim": c.text_dim,
            "d_hidden": c.d_hidden,
            "d_timeembed": c.d_timeembed,
            "time_heads": c.time_heads,
            "fusion_layers": c.fusion_layers,
            "heads": c.heads,
            "conv_kernel": c.conv_kernel,
            "note_budget": c.note_budget,
            "batch_size": c.batch_size,
        }
        for name, value in positive.items():
            if value < 1:
                raise ConfigError(f"{name} must be positive, got {value}")
        if c.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {c.task!r}")
        if c.task == "binary" and c.n_classes != 1:
            raise ConfigError("binary task requires n_classes = 1")
        if c.task == "multilabel" and c.n_classes < 2:
            raise ConfigError("multilabel task requires n_classes >= 2")
        if c.modality not in MODALITIES:
            raise ConfigError(f"modality must be one of {MODALITIES}, got {c.modality!r}")
        if c.ts_embed not in TS_EMBEDS:
            raise ConfigError(f"ts_embed must be one of {TS_EMBEDS}, got {c.ts_embed!r}")
        if c.gate_level not in GATE_LEVELS:
            raise ConfigError(f"gate_level must be one of {GATE_LEVELS}, got {c.gate_level!r}")
        if c.d_hidden % c.heads != 0:
            raise ConfigError(f"heads ({c.heads}) must divide d_hidden ({c.d_hidden})")
        if c.d_timeembed < 2:
            raise ConfigError("d_timeembed needs a linear dim plus at least one periodic dim")
        if c.lr <= 0:
            raise ConfigError(f"lr must be positive, got {c.lr}")
        if c.epochs is not None and c.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {c.epochs}")
        if c.alpha_hours <= 0:
            raise ConfigError(f"alpha_hours must be positive, got {c.alpha_hours}")
        if not c.text_irregularity and c.note_budget > c.alpha:
            raise ConfigError("padded-note mode needs note_budget <= alpha")
        if c.pos_weight <= 0:
            raise ConfigError(f"pos_weight must be positive, got {c.pos_weight}")
        if c.grad_clip is not None and c.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive, got {c.grad_clip}")
        return c


@dataclass
class ModelParams:
    """All parameters for every variant; unused components simply receive zero gradients."""

    bank: Time2VecBank  # shared time-embedding bank (listed first so it owns its flat names)
    conv_kernel: Tensor
    conv_bias: Tensor
    ts_interp: MtandParams
    txt_interp: MtandParams
    gate: GateParams
    note_proj_w: Tensor
    note_proj_b: Tensor
    fusion_layers: list[FusionLayerParams]
    fused_ln_ts: LayerNormParams
    fused_ln_txt: LayerNormParams
    fused_head: ClassifierParams
    ts_stack: list[SingleLayerParams]
    ts_ln: LayerNormParams
    ts_head: ClassifierParams
    txt_stack: list[SingleLayerParams]
    txt_ln: LayerNormParams
    txt_head: ClassifierParams

    def flat(self) -> dict[str, Tensor]:
        """Stable name -> Tensor map; shared tensors appear once, under their first name."""
        out: dict[str, Tensor] = {}
        seen: set[int] = set()

        def walk(obj, prefix: str):
            if isinstance(obj, Tensor):
                if id(obj) not in seen:
                    seen.add(id(obj))
                    out[prefix] = obj
            elif dataclasses.is_dataclass(obj):
                for f in dataclasses.fields(obj):
                    value = getattr(obj, f.name)
                    if isinstance(value, (Tensor, list)) or dataclasses.is_dataclass(value):
                        walk(value, f"{prefix}.{f.name}" if prefix else f.name)
            elif isinstance(obj, list):
                for i, item in enumerate(obj):
                    walk(item, f"{prefix}.{i}")

        walk(self, "")
        return out


_COMPONENT_IDS = {
    "bank": 1,
    "conv": 2,
    "ts_interp": 3,
    "txt_interp": 4,
    "gate": 5,
    "note_proj": 6,
    "fusion": 7,
    "fused_head": 8,
    "ts_stack": 9,
    "ts_head": 10,
    "txt_stack": 11,
    "txt_head": 12,
}


def _component_rng(seed: int, component: str) -> np.random.Generator:
    return np.random.default_rng([seed, _COMPONENT_IDS[component]])


def init_model(config: RunConfig) -> ModelParams:
    c = config.validate()
    bank = init_time2vec_bank(_component_rng(c.seed, "bank"), c.time_heads, c.d_timeembed)
    conv_rng = _component_rng(c.seed, "conv")
    kernel = Tensor(
        conv_rng.normal(0.0, (c.conv_kernel * c.n_features) ** -0.5, size=(c.conv_kernel, c.n_features, c.d_hidden))
    )
    note_rng = _component_rng(c.seed, "note_proj")
    fusion_rng = _component_rng(c.seed, "fusion")
    ts_rng = _component_rng(c.seed, "ts_stack")
    txt_rng = _component_rng(c.seed, "txt_stack")
    return ModelParams(
        bank=bank,
        conv_kernel=kernel,
        conv_bias=Tensor(np.zeros(c.d_hidden)),
        ts_interp=init_mtand_params(_component_rng(c.seed, "ts_interp"), bank, c.n_features, c.d_hidden),
        txt_interp=init_mtand_params(_component_rng(c.seed, "txt_interp"), bank, c.text_dim, c.d_hidden),
        gate=init_gate_params(_component_rng(c.seed, "gate"), c.gate_level, c.d_hidden),
        note_proj_w=Tensor(note_rng.normal(0.0, c.text_dim**-0.5, size=(c.text_dim, c.d_hidden))),
        note_proj_b=Tensor(np.zeros(c.d_hidden)),
        fusion_layers=[init_fusion_layer(fusion_rng, c.d_hidden) for _ in range(c.fusion_layers)],
        fused_ln_ts=init_layer_norm(c.d_hidden),
        fused_ln_txt=init_layer_norm(c.d_hidden),
        fused_head=init_classifier(_component_rng(c.seed, "fused_head"), 2 * c.d_hidden, c.d_hidden, c.n_classes),
        ts_stack=[init_single_layer(ts_rng, c.d_hidden) for _ in range(c.fusion_layers)],
        ts_ln=init_layer_norm(c.d_hidden),
        ts_head=init_classifier(_component_rng(c.seed, "ts_head"), c.d_hidden, c.d_hidden, c.n_classes),
        txt_stack=[init_single_layer(txt_rng, c.d_hidden) for _ in range(c.fusion_layers)],
        txt_ln=init_layer_norm(c.d_hidden),
        txt_head=init_classifier(_component_rng(c.seed, "txt_head"), c.d_hidden, c.d_hidden, c.n_classes),
    )


@dataclass
class PreparedEpisode:
    """Everything a forward pass reads, precomputed from a normalized episode."""

    episode_id: str
    label: np.ndarray  # float [n_classes]
    feature_series: list[tuple[np.ndarray, np.ndarray]]
    imputed: np.ndarray  # [alpha x d_m]
    note_times: np.ndarray  # [l]
    note_embs: np.ndarray  # [l x d_t]


def prepare_episode(ep: Episode, config: RunConfig, stats: NormalizationStats) -> PreparedEpisode:
    """Truncate/encode notes and precompute the model-facing arrays.

    The episode must already be normalized (times and values in [0,1]).
    """
    if ep.label.shape[0] != config.n_classes:
        raise DataError(
            f"episode {ep.episode_id}: label length {ep.label.shape[0]} != {config.n_classes}"
        )
    ep = truncate_notes(ep, config.note_budget)
    ep = embed_notes(ep, config.text_dim, seed=config.text_encoder_seed)
    note_times, note_embs = note_matrix(ep)
    if note_embs.shape[1] != config.text_dim:
        raise DataError(
            f"episode {ep.episode_id}: note embedding width {note_embs.shape[1]} != {config.text_dim}"
        )
    grid = ReferenceGrid(config.alpha)
    series = group_by_feature(ep, config.n_features)
    imputed = impute(discretize(ep, grid, config.n_features), _prep_stats(config, stats)).data
    return PreparedEpisode(
        episode_id=ep.episode_id,
        label=ep.label.astype(np.float64),
        feature_series=series,
        imputed=imputed,
        note_times=note_times,
        note_embs=note_embs,
    )


def _prep_stats(config: RunConfig, stats: NormalizationStats) -> NormalizationStats:
    if stats.global_mean.shape[0] != config.n_features:
        raise DataError(
            f"stats cover {stats.global_mean.shape[0]} features, config expects {config.n_features}"
        )
    return stats


def ts_embedding(
    prep: PreparedEpisode,
    params: ModelParams,
    config: RunConfig,
    gate_override: float | None = None,
) -> Tensor:
    """The time-series stream: imputation-only, interpolation-only, or gated blend."""
    grid = ReferenceGrid(config.alpha)
    if config.ts_embed == "imputation":
        return conv_embed(Tensor(prep.imputed), params.conv_kernel, params.conv_bias)
    if config.ts_embed == "mtand":
        return mtand_ts(prep.feature_series, grid, params.ts_interp)
    e_imp = conv_embed(Tensor(prep.imputed), params.conv_kernel, params.conv_bias)
    e_attn = mtand_ts(prep.feature_series, grid, params.ts_interp)
    if gate_override is None:
        g = compute_gate(e_imp, e_attn, params.gate)
    else:
        g = Tensor(np.full((1, 1), float(gate_override)))
    return utde_embed(e_imp, e_attn, g)


def _txt_stream(
    prep: PreparedEpisode, params: ModelParams, config: RunConfig
) -> tuple[Tensor, np.ndarray | None, int]:
    """Text stream plus its key mask and the row holding the last real note state."""
    grid = ReferenceGrid(config.alpha)
    if config.text_irregularity:
        return mtand_txt(prep.note_times, prep.note_embs, grid, params.txt_interp), None, config.alpha - 1
    l = prep.note_times.shape[0]
    if l > config.alpha:
        raise DataError(f"{l} notes exceed the {config.alpha}-row grid in padded-note mode")
    proj = matmul(Tensor(prep.note_embs), params.note_proj_w) + params.note_proj_b
    if l < config.alpha:
        proj = concat([proj, Tensor(np.zeros((config.alpha - l, config.d_hidden)))], axis=0)
    mask = np.arange(config.alpha) < l
    return proj, mask, l - 1


def forward_fused(
    prep: PreparedEpisode,
    params: ModelParams,
    config: RunConfig,
    gate_override: float | None = None,
) -> Tensor:
    z_ts = ts_embedding(prep, params, config, gate_override)
    z_txt, txt_mask, txt_row = _txt_stream(prep, params, config)
    z_ts, z_txt = fusion_stack(z_ts, z_txt, params.fusion_layers, config.heads, txt_key_mask=txt_mask)
    z_ts = layer_norm(z_ts, params.fused_ln_ts.gain, params.fused_ln_ts.bias)
    z_txt = layer_norm(z_txt, params.fused_ln_txt.gain, params.fused_ln_txt.bias)
    return classify(z_ts, z_txt, params.fused_head, ts_row=config.alpha - 1, txt_row=txt_row)


def single_modality_forward(
    modality: str,
    prep: PreparedEpisode,
    params: ModelParams,
    config: RunConfig,
    gate_override: float | None = None,
) -> Tensor:
    """Self-attention-only backbone on one stream, classifier on its last state."""
    if modality == "ts":
        z = ts_embedding(prep, params, config, gate_override)
        h = single_stack(z, params.ts_stack, config.heads)
        h = layer_norm(h, params.ts_ln.gain, params.ts_ln.bias)
        return classify_single(h, params.ts_head, row=config.alpha - 1)
    if modality == "txt":
        z, mask, row = _txt_stream(prep, params, config)
        h = single_stack(z, params.txt_stack, config.heads, key_mask=mask)
        h = layer_norm(h, params.txt_ln.gain, params.txt_ln.bias)
        return classify_single(h, params.txt_head, row=row)
    raise ConfigError(f"single-modality forward needs 'ts' or 'txt', got {modality!r}")


def forward(
    prep: PreparedEpisode,
    params: ModelParams,
    config: RunConfig,
    gate_override: float | None = None,
) -> Tensor:
    """Dispatch on config.modality; returns logits [n_classes]."""
    if config.modality == "fused":
        return forward_fused(prep, params, config, gate_override)
    return single_modality_forward(config.modality, prep, params, config, gate_override)
