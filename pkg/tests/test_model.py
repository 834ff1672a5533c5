import math

import numpy as np
import pytest
from sklearn.base import clone

from manifold_dwi.losses import LossWeights
from manifold_dwi.metrics import compare_fields, summarize_field
from manifold_dwi.spd import eig_sym3, fa
from manifold_dwi._validation import mat_to_sym6, sym6_to_mat
from manifold_dwi.synth import (
    ManifoldCycleGAN,
    TrainConfig,
    TrainingDivergedError,
    phantom_gen,
    train_toy,
)
from manifold_dwi.synth.model import TRACE_COLUMNS, prepare_data
from manifold_dwi.volume import Volume
from manifold_dwi.volume_ops import audit_validity

SMALL = dict(patch_size=8, batch_size=2, widths=(4, 6, 8), epochs=1)


@pytest.fixture(scope="module")
def phantom():
    return phantom_gen(geometry="straight", dims=(16, 16, 16), radius=4.0, seed=0)


class _Float64GAN(ManifoldCycleGAN):
    _dtype = np.float64


def _ready(model, phantom):
    """Build and initialize a model as ``fit`` does, without training."""
    cfg = model._config()
    data = [prepare_data(phantom, cfg)]
    model._build(np.random.RandomState(cfg.seed))
    model._init_heads(data)
    return data


def _generator_objective(model, batch):
    parts, grads, _, _ = model._generator_pass(batch)
    return sum(parts.values()), grads


@pytest.mark.parametrize("kind", ["tensor", "odf"])
def test_generator_gradients_match_finite_differences(kind, phantom):
    model = _Float64GAN(kind=kind, **SMALL)
    data = _ready(model, phantom)
    batch = next(model._batches(data, np.random.RandomState(0)))
    _, grads = _generator_objective(model, batch)
    rng = np.random.default_rng(0)
    h = 1e-6
    for net_name, net in (("g_y", model.g_y_), ("g_x", model.g_x_)):
        for pname in ("head.b", "enc1.W", "dec1.W"):
            p = net.parameters()[pname].reshape(-1)
            g = grads[net_name][pname].reshape(-1)
            for idx in rng.choice(p.size, size=min(3, p.size), replace=False):
                old = p[idx]
                p[idx] = old + h
                fp = _generator_objective(model, batch)[0]
                p[idx] = old - h
                fm = _generator_objective(model, batch)[0]
                p[idx] = old
                num = (fp - fm) / (2 * h)
                assert g[idx] == pytest.approx(num, rel=1e-4, abs=1e-7), (net_name, pname, idx)


def test_zero_epochs_reports_the_initial_network(phantom):
    model = train_toy([phantom], TrainConfig(**{**SMALL, "epochs": 0}))
    assert len(model.trace_) == 1
    row = model.trace_[0]
    assert row["epoch"] == 0
    ev = model.evaluate(phantom)
    for k in ("fa_mse", "cosine_0.2", "cosine_0.5", "geodesic"):
        assert row[k] == ev[k]
    for k in ("d_x", "d_y", "g_x", "g_y", "cycle", "prior", "objective"):
        assert math.isnan(row[k])


def test_training_keeps_outputs_valid(phantom):
    model = train_toy([phantom], TrainConfig(**{**SMALL, "epochs": 2}))
    assert model.n_invalid_ == 0
    assert [r["n_invalid"] for r in model.trace_] == [0, 0, 0]
    out = model.predict(phantom.t1)
    assert out.space == "tensor" and out.shape == phantom.t1.shape
    assert audit_validity(out).n_invalid == 0


def test_odf_training_keeps_outputs_valid(phantom):
    model = train_toy([phantom], TrainConfig(**{**SMALL, "kind": "odf"}))
    assert model.n_invalid_ == 0
    out = model.predict(phantom.t1)
    assert out.space == "sh" and audit_validity(out).n_invalid == 0


def _random_generator_invalid(kind, manifold, seed=0):
    """Invalid voxels from a randomly initialized generator on a random T1 volume."""
    model = ManifoldCycleGAN(kind=kind, manifold=manifold, widths=(4, 6, 8))
    model._build(np.random.RandomState(seed))
    t1 = np.random.default_rng(seed).random((16, 16, 16))
    return model._generate(t1).n_invalid


@pytest.mark.parametrize("kind", ["tensor", "odf"])
def test_euclidean_ablation_produces_invalid_outputs(kind):
    assert _random_generator_invalid(kind, manifold=False) > 0
    assert _random_generator_invalid(kind, manifold=True) == 0


def test_training_is_deterministic(phantom):
    cfg = TrainConfig(**SMALL, seed=7)
    a = train_toy([phantom], cfg).trace_csv()
    b = train_toy([phantom], cfg).trace_csv()
    assert a == b
    assert a.splitlines()[0].split(",") == list(TRACE_COLUMNS)


def test_seed_changes_the_trace(phantom):
    a = train_toy([phantom], TrainConfig(**SMALL, seed=1)).trace_csv()
    b = train_toy([phantom], TrainConfig(**SMALL, seed=2)).trace_csv()
    assert a != b


def test_divergence_aborts_with_trace(phantom):
    class Exploding(ManifoldCycleGAN):
        def _step(self, b):
            return {"cycle": float("nan")}, 0

    with pytest.raises(TrainingDivergedError) as info:
        Exploding(**SMALL).fit([phantom])
    assert len(info.value.trace) == 1


def test_sklearn_clone_and_params():
    model = ManifoldCycleGAN(lr=2e-4, epochs=3, weights=LossWeights(prior_x=1.0))
    twin = clone(model)
    assert twin.get_params() == model.get_params()
    assert not hasattr(twin, "trace_")


def test_unfitted_model_refuses_to_predict(phantom):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        ManifoldCycleGAN().predict(phantom.t1)


def test_save_writes_both_generators(phantom, tmp_path):
    model = train_toy([phantom], TrainConfig(**{**SMALL, "epochs": 0}))
    path = tmp_path / "weights.npz"
    model.save(path)
    with np.load(path) as z:
        names = set(z.files)
    assert {k.split(".", 1)[0] for k in names} == {"g_y", "g_x"}
    assert "g_y.head.W" in names


def test_fit_rejects_empty_input_and_bad_patch_size(phantom):
    with pytest.raises(ValueError):
        ManifoldCycleGAN(**SMALL).fit([])
    with pytest.raises(ValueError):
        ManifoldCycleGAN(**{**SMALL, "patch_size": 24}).fit([phantom])


def test_train_config_from_mapping():
    cfg = TrainConfig.from_mapping({
        "lr": "0.0002", "batch-size": "3", "manifold": "false", "widths": "(4, 8, 16)",
        "lambda_cyc_x": "2.5", "prior_y": "0", "kind": "'odf'",
    })
    assert cfg.lr == 2e-4 and cfg.batch_size == 3 and cfg.manifold is False
    assert cfg.widths == (4, 8, 16) and cfg.kind == "odf"
    assert cfg.weights == LossWeights(cyc_x=2.5, cyc_y=0.25, prior_x=10.0, prior_y=0.0)
    with pytest.raises(ValueError, match="unknown config key"):
        TrainConfig.from_mapping({"learning_rate": "1"})


def test_train_config_defaults_follow_the_published_optimizer():
    cfg = TrainConfig()
    assert (cfg.lr, cfg.beta1, cfg.beta2) == (1e-4, 0.5, 0.999)
    assert cfg.weights == LossWeights()
    assert ManifoldCycleGAN.from_config(cfg)._config() == cfg


@pytest.mark.parametrize("bad", [{"lr": 0.0}, {"kind": "dwi"}, {"epochs": -1}, {"factor": 3}])
def test_train_config_rejects_invalid_values(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_ground_truth_oracle_scores_perfectly(phantom):
    ref = summarize_field(phantom.tensors)
    out = compare_fields(summarize_field(phantom.tensors), ref)
    assert out["fa_mse"] == 0.0
    assert out["cosine_0.2"] == pytest.approx(1.0, abs=1e-12)
    assert out["cosine_0.5"] == pytest.approx(1.0, abs=1e-12)
    assert out["geodesic"] == pytest.approx(0.0, abs=1e-12)


def test_isotropic_output_fa_mse_is_mean_squared_reference_fa(phantom):
    iso = Volume(np.broadcast_to(mat_to_sym6(np.eye(3)), phantom.tensors.data.shape).copy(),
                 space="tensor")
    out = compare_fields(summarize_field(iso), summarize_field(phantom.tensors))
    ref_fa = fa(eig_sym3(sym6_to_mat(phantom.tensors.data)).eigenvalues)
    assert out["fa_mse"] == pytest.approx(float(np.mean(ref_fa**2)), rel=1e-12)
