"""Model assembly: config validation, seeded init, preparation, forward variants."""

import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mmists.data import DataError, GenConfig, generate_synthetic, normalize
from mmists.model import (
    ConfigError,
    ModelParams,
    RunConfig,
    forward,
    forward_fused,
    init_model,
    prepare_episode,
    single_modality_forward,
    ts_embedding,
)
from mmists.tensor import Tape, Tensor, bce_with_logits

SMALL = dict(
    alpha=6, n_features=3, text_dim=8, d_hidden=8, d_timeembed=4,
    time_heads=2, fusion_layers=2, heads=2, note_budget=3,
)


def small_config(**overrides):
    kw = dict(SMALL, seed=5)
    kw.update(overrides)
    return RunConfig(**kw).validate()


@pytest.fixture(scope="module")
def prepared():
    cfg = small_config()
    eps = generate_synthetic(GenConfig(n_episodes=4, n_features=3, text_dim=8, seed=17))
    neps, stats = normalize(eps, alpha_hours=24.0)
    return [prepare_episode(ep, cfg, stats) for ep in neps], cfg, stats


class TestConfig:
    def test_defaults_validate(self):
        c = RunConfig(seed=1).validate()
        assert (c.d_hidden, c.d_timeembed, c.time_heads, c.fusion_layers) == (64, 64, 8, 3)
        assert (c.batch_size, c.lr) == (32, 4e-4)

    def test_epoch_defaults_depend_on_modality(self):
        assert RunConfig(seed=0, modality="ts").resolved_epochs() == 20
        assert RunConfig(seed=0, modality="fused").resolved_epochs() == 6
        assert RunConfig(seed=0, modality="txt").resolved_epochs() == 6
        assert RunConfig(seed=0, modality="ts", epochs=3).resolved_epochs() == 3

    @pytest.mark.parametrize(
        "overrides",
        [
            dict(alpha=0),
            dict(task="regression"),
            dict(task="binary", n_classes=2),
            dict(task="multilabel", n_classes=1),
            dict(modality="both"),
            dict(ts_embed="gru"),
            dict(gate_level="batch"),
            dict(d_hidden=10, heads=4),
            dict(d_timeembed=1),
            dict(lr=0.0),
            dict(epochs=-1),
            dict(text_irregularity=False, note_budget=30, alpha=24),
            dict(pos_weight=0.0),
            dict(grad_clip=-1.0),
        ],
    )
    def test_bad_configs_rejected(self, overrides):
        kw = dict(SMALL)
        kw.update(overrides)
        with pytest.raises(ConfigError):
            RunConfig(seed=0, **kw).validate()


class TestInit:
    def test_same_seed_is_bit_identical(self):
        a = init_model(small_config()).flat()
        b = init_model(small_config()).flat()
        assert a.keys() == b.keys()
        for k in a:
            assert_array_equal(a[k].data, b[k].data)

    def test_different_seeds_differ(self):
        a = init_model(small_config()).flat()
        b = init_model(small_config(seed=6)).flat()
        assert any(not np.array_equal(a[k].data, b[k].data) for k in a)

    def test_bank_is_shared_and_flattened_once(self):
        params = init_model(small_config())
        assert params.ts_interp.bank.omega is params.bank.omega
        assert params.txt_interp.bank.omega is params.bank.omega
        flat = params.flat()
        bank_names = [k for k in flat if flat[k] is params.bank.omega]
        assert bank_names == ["bank.omega"]
        assert "ts_interp.bank.omega" not in flat

    def test_component_init_is_independent_of_other_components(self):
        # growing the fusion stack must not disturb the shared embedding branches
        a = init_model(small_config(fusion_layers=1)).flat()
        b = init_model(small_config(fusion_layers=3)).flat()
        for k in a:
            if k.split(".")[0] in ("bank", "conv_kernel", "conv_bias", "ts_interp", "txt_interp", "gate"):
                assert_array_equal(a[k].data, b[k].data)

    def test_flat_covers_every_tensor_field(self):
        params = init_model(small_config())
        flat = params.flat()
        assert len(flat) > 50
        assert all(isinstance(t, Tensor) for t in flat.values())
        # a representative of each component family
        for name in ("bank.omega", "conv_kernel", "ts_interp.w_query", "txt_interp.w_out",
                     "gate.w_hidden", "note_proj_w", "fusion_layers.0.ts_cross.w_q",
                     "fused_head.w_out", "ts_stack.1.ffn.w_in", "txt_head.b_out"):
            assert name in flat, name


class TestPrepare:
    def test_shapes(self, prepared):
        preps, cfg, _ = prepared
        p = preps[0]
        assert p.imputed.shape == (cfg.alpha, cfg.n_features)
        assert p.note_embs.shape[1] == cfg.text_dim
        assert p.note_times.shape[0] == p.note_embs.shape[0] <= cfg.note_budget
        assert p.label.shape == (1,)
        assert len(p.feature_series) == cfg.n_features

    def test_label_length_mismatch_rejected(self, prepared):
        _, cfg, stats = prepared
        eps = generate_synthetic(GenConfig(n_episodes=1, n_features=3, text_dim=8, seed=18))
        neps, _ = normalize(eps, stats=stats)
        bad = dataclasses.replace(neps[0], label=np.array([1, 0]))
        with pytest.raises(DataError):
            prepare_episode(bad, cfg, stats)

    def test_stats_width_mismatch_rejected(self, prepared):
        preps, cfg, stats = prepared
        eps = generate_synthetic(GenConfig(n_episodes=1, n_features=3, text_dim=8, seed=18))
        neps, _ = normalize(eps, stats=stats)
        wrong = dataclasses.replace(stats, global_mean=np.array([0.5]))
        with pytest.raises(DataError):
            prepare_episode(neps[0], cfg, wrong)


class TestForward:
    def test_logit_shapes_per_modality(self, prepared):
        preps, cfg, _ = prepared
        params = init_model(cfg)
        for modality in ("fused", "ts", "txt"):
            c = small_config(modality=modality)
            logits = forward(preps[0], params, c)
            assert logits.shape == (1,)

    def test_forward_is_deterministic(self, prepared):
        preps, cfg, _ = prepared
        params = init_model(cfg)
        a = forward_fused(preps[0], params, cfg).data
        b = forward_fused(preps[0], params, cfg).data
        assert_array_equal(a, b)

    def test_padded_note_mode_runs_and_masks(self, prepared):
        preps, _, _ = prepared
        cfg = small_config(text_irregularity=False)
        params = init_model(cfg)
        logits = forward_fused(preps[0], params, cfg)
        assert logits.shape == (1,)
        out_txt = single_modality_forward("txt", preps[0], params, cfg)
        assert out_txt.shape == (1,)

    def test_ts_embed_variants_differ(self, prepared):
        preps, cfg, _ = prepared
        params = init_model(cfg)
        outs = {
            v: ts_embedding(preps[0], params, small_config(ts_embed=v)).data
            for v in ("utde", "imputation", "mtand")
        }
        assert not np.allclose(outs["imputation"], outs["mtand"])
        assert not np.array_equal(outs["utde"], outs["imputation"])

    def test_gate_override_reproduces_branches_exactly(self, prepared):
        preps, cfg, _ = prepared
        params = init_model(cfg)
        imp = ts_embedding(preps[0], params, small_config(ts_embed="imputation")).data
        att = ts_embedding(preps[0], params, small_config(ts_embed="mtand")).data
        forced_imp = ts_embedding(preps[0], params, cfg, gate_override=1.0).data
        forced_att = ts_embedding(preps[0], params, cfg, gate_override=0.0).data
        assert_array_equal(forced_imp, imp)
        assert_array_equal(forced_att, att)

    def test_note_perturbation_moves_fused_logits(self, prepared):
        preps, cfg, _ = prepared
        params = init_model(cfg)
        base = forward_fused(preps[0], params, cfg).data
        bumped = dataclasses.replace(preps[0], note_embs=preps[0].note_embs + 1e-3)
        moved = forward_fused(bumped, params, cfg).data
        assert not np.allclose(base, moved)

    def test_backward_reaches_all_active_components(self, prepared):
        preps, cfg, _ = prepared
        params = init_model(cfg)
        flat = params.flat()
        with Tape() as tape:
            logits = forward_fused(preps[0], params, cfg)
            tape.backward(bce_with_logits(logits, preps[0].label))
        active = {k: tape.grad(t) for k, t in flat.items()}
        for k in ("bank.omega", "conv_kernel", "ts_interp.w_query", "txt_interp.w_key",
                  "gate.w_out", "fusion_layers.0.ts_self.w_q", "fused_head.w_hidden"):
            assert np.any(active[k] != 0.0), k
        # single-modality stacks are inactive in the fused pass
        assert not np.any(active["ts_head.w_out"])
        assert not np.any(active["txt_stack.0.ffn.w_in"])
