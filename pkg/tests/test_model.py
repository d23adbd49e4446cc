"""Whole-pipeline tests: gradient flow, equivariance, batching, persistence."""

import numpy as np
import pytest

from poseforge import autograd as ag
from poseforge.config import toy_config
from poseforge.model import DockingModel
from poseforge.train import batch_losses, make_batch, synth_complex


@pytest.fixture(scope="module")
def toy_model():
    return DockingModel(toy_config(seed=11))


@pytest.fixture(scope="module")
def complexes():
    return [synth_complex(100 + k, n_min=4, n_max=6, m_min=6, m_max=8) for k in range(3)]


def full_loss(model, batch, phase=2):
    result = model.forward(batch.lig, batch.poc, decode=(phase == 2))
    return batch_losses(result, batch, phase=phase)


class TestForward:
    def test_shapes_and_finiteness(self, toy_model, complexes):
        batch = make_batch(complexes[:2], toy_model.config)
        result = toy_model.forward(batch.lig, batch.poc)
        n, m = batch.lig.max_atoms, batch.poc.max_atoms
        assert result.intra_sym.shape == (2, n, n)
        assert result.dist.inter.shape == (2, n, m)
        assert result.pose.final.shape == (2, n, 3)
        for t in (result.intra_sym, result.dist.inter, result.pose.final,
                  result.conf_logits_intra, result.conf_logits_inter):
            assert np.isfinite(t.data).all()

    def test_deterministic(self, toy_model, complexes):
        batch = make_batch(complexes[:1], toy_model.config)
        a = toy_model.forward(batch.lig, batch.poc).pose.final.data
        b = toy_model.forward(batch.lig, batch.poc).pose.final.data
        np.testing.assert_array_equal(a, b)

    def test_batch_size_independence(self, toy_model, complexes):
        cfg = toy_model.config
        solo_batches = [make_batch([c], cfg) for c in complexes]
        joint = make_batch(complexes, cfg)
        joint_result = toy_model.forward(joint.lig, joint.poc)
        for k, solo in enumerate(solo_batches):
            solo_result = toy_model.forward(solo.lig, solo.poc)
            n = complexes[k].ligand.n_atoms
            m = complexes[k].pocket.n_atoms
            np.testing.assert_allclose(
                joint_result.pose.final.data[k, :n],
                solo_result.pose.final.data[0, :n], atol=1e-6,
            )
            np.testing.assert_allclose(
                joint_result.intra_sym.data[k, :n, :n],
                solo_result.intra_sym.data[0, :n, :n], atol=1e-6,
            )
            np.testing.assert_allclose(
                joint_result.dist.inter.data[k, :n, :m],
                solo_result.dist.inter.data[0, :n, :m], atol=1e-6,
            )

    def test_ligand_permutation_equivariance(self, toy_model, complexes):
        from poseforge.molio import MoleculeGraph

        cfg = toy_model.config
        c = complexes[0]
        batch = make_batch([c], cfg)
        base = toy_model.forward(batch.lig, batch.poc)

        rng = np.random.default_rng(5)
        n = c.ligand.n_atoms
        perm = rng.permutation(n)
        inv = np.argsort(perm)
        permuted = MoleculeGraph(
            atom_types=c.ligand.atom_types[perm],
            coords=c.ligand.coords[perm],
            bonds=[(int(inv[i]), int(inv[j]), t) for i, j, t in c.ligand.bonds],
            elements=[c.ligand.elements[k] for k in perm],
        )
        permuted_complex = type(c)(
            ligand=permuted, pocket=c.pocket, gt_coords=c.gt_coords[perm],
            gt_intra=c.gt_intra[perm][:, perm], gt_inter=c.gt_inter[perm], seed=c.seed,
        )
        pbatch = make_batch([permuted_complex], cfg)
        out = toy_model.forward(pbatch.lig, pbatch.poc)
        np.testing.assert_allclose(out.pose.final.data[0],
                                   base.pose.final.data[0, perm], atol=1e-9)
        np.testing.assert_allclose(out.intra_sym.data[0],
                                   base.intra_sym.data[0][perm][:, perm], atol=1e-9)
        np.testing.assert_allclose(out.dist.inter.data[0],
                                   base.dist.inter.data[0][perm], atol=1e-9)

    def test_ablation_configs_run(self, complexes):
        for flags in ({"use_gpe": False}, {"use_2d": False},
                      {"use_talking_head": False}, {"use_2d": False, "use_gpe": False}):
            model = DockingModel(toy_config(seed=3, **flags))
            batch = make_batch(complexes[:1], model.config)
            result = model.forward(batch.lig, batch.poc)
            assert np.isfinite(result.pose.final.data).all()


class TestGradients:
    def test_every_parameter_group_receives_gradient(self, toy_model, complexes):
        batch = make_batch(complexes[:2], toy_model.config)
        loss, _ = full_loss(toy_model, batch, phase=2)
        toy_model.params.zero_grads()
        ag.backward(loss)
        groups = ("enc_lig/", "enc_poc/", "binding/", "structure/", "conf/")
        norms = {g: 0.0 for g in groups}
        for name, tensor in toy_model.params.items():
            for g in groups:
                if name.startswith(g) and tensor.grad is not None:
                    norms[g] += float(np.abs(tensor.grad).sum())
        for g, norm in norms.items():
            assert norm > 0.0, f"no gradient reached group {g}"

    def test_phase1_leaves_structure_untouched(self, toy_model, complexes):
        batch = make_batch(complexes[:1], toy_model.config)
        loss, _ = full_loss(toy_model, batch, phase=1)
        toy_model.params.zero_grads()
        ag.backward(loss)
        for name, tensor in toy_model.params.items():
            if name.startswith("structure/"):
                assert tensor.grad is None

    def test_sampled_finite_difference_check(self, complexes):
        # Sampled-component finite differences across parameter tensors of
        # every group; h=1e-5 keeps truncation below the 1e-3 gate.
        model = DockingModel(toy_config(seed=7))
        batch = make_batch(complexes[:1], model.config)
        loss, _ = full_loss(model, batch, phase=2)
        model.params.zero_grads()
        ag.backward(loss)

        rng = np.random.default_rng(0)
        h = 1e-5
        names = [n for n in sorted(model.params.names())]
        picked = [names[i] for i in rng.choice(len(names), size=12, replace=False)]
        for name in picked:
            tensor = model.params[name]
            flat = tensor.data.reshape(-1)
            idx = int(rng.integers(flat.size))
            analytic = (tensor.grad.reshape(-1)[idx]
                        if tensor.grad is not None else 0.0)
            orig = flat[idx]
            flat[idx] = orig + h
            up, _ = full_loss(model, batch, phase=2)
            flat[idx] = orig - h
            down, _ = full_loss(model, batch, phase=2)
            flat[idx] = orig
            numeric = (float(up.data) - float(down.data)) / (2 * h)
            denom = max(abs(analytic), abs(numeric), 1e-3)
            assert abs(analytic - numeric) / denom < 1e-3, (
                f"{name}[{idx}]: analytic {analytic}, numeric {numeric}"
            )


class TestPersistence:
    def test_save_load_identical_forward(self, toy_model, complexes, tmp_path):
        path = tmp_path / "model.pfw"
        toy_model.save(path)
        loaded = DockingModel.load(path)
        assert loaded.config == toy_model.config
        batch = make_batch(complexes[:1], toy_model.config)
        a = toy_model.forward(batch.lig, batch.poc).pose.final.data
        b = loaded.forward(batch.lig, batch.poc).pose.final.data
        np.testing.assert_array_equal(a, b)

    def test_raw_decoder_runs(self, complexes):
        model = DockingModel(toy_config(seed=9, end_to_end_decode=False))
        batch = make_batch(complexes[:1], model.config)
        result = model.forward(batch.lig, batch.poc, decode=True)
        assert result.pose is None
        from poseforge.geometry import FitParams

        coords = model.decode_distance_fit(
            result, [complexes[0].ligand], [complexes[0].pocket], FitParams(max_iter=5)
        )
        assert coords[0].shape == (complexes[0].ligand.n_atoms, 3)


class TestConfigValidation:
    def test_width_must_divide_heads(self):
        with pytest.raises(ValueError, match="divisible"):
            toy_config(d=30, H=4)

    def test_layer_counts_positive(self):
        with pytest.raises(ValueError, match="layer counts"):
            toy_config(L_e=0)

    def test_heads_even(self):
        with pytest.raises(ValueError, match="even"):
            toy_config(d=33, H=3)

    def test_sinusoid_width_divisible_by_six(self):
        with pytest.raises(ValueError, match="divisible by 6"):
            toy_config(d_sin=40)

    def test_paper_preset_layer_counts(self):
        from poseforge.config import paper_config

        cfg = paper_config()
        assert (cfg.L_e, cfg.L_b, cfg.L_s) == (15, 4, 8)

    def test_train_config_guards(self):
        from poseforge.config import TrainConfig

        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(patience=0)
        assert TrainConfig().lr == 1e-4 and TrainConfig().patience == 20
