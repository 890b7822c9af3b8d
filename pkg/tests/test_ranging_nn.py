import json

import numpy as np
import pytest

from src import autodiff as ad
from src.errors import ConfigurationError, DatasetError
from src.ranging_nn import (
    DEFAULT_D_BAR,
    DEFAULT_HIDDEN,
    DEFAULT_S_BAR,
    Normalization,
    RangingModule,
    collect_gradients,
    fit_passthrough,
    flatten_params,
    forward,
    forward_batch,
    init_params,
    load_model,
    module_leaves,
    normalize,
    predict,
    save_model,
    unflatten_params,
)

INPUTS = np.array([
    [12.3, 0.4, -62.0],
    [3.1, 1.7, -41.5],
    [55.0, 0.9, -85.0],
])


class TestShapes:
    def test_default_architecture(self):
        module = init_params(rng=np.random.default_rng(0))
        assert module.hidden == DEFAULT_HIDDEN == (100, 100)
        assert module.params["W1"].shape == (100, 3)
        assert module.params["W2"].shape == (100, 100)
        assert module.params["w_d"].shape == (100,)
        assert module.n_params == 3 * 100 + 100 + 100 * 100 + 100 + 2 * (100 + 1)

    def test_biases_start_at_zero(self, small_module):
        for name in ("b1", "b2", "b_d", "b_s"):
            assert not np.any(small_module.params[name])

    def test_same_seed_same_parameters(self):
        a = init_params((6, 5), np.random.default_rng(3))
        b = init_params((6, 5), np.random.default_rng(3))
        for name in a.param_names():
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_wrong_shape_rejected(self, small_module):
        broken = small_module.copy()
        broken.params["W2"] = np.zeros((5, 5))
        with pytest.raises(ConfigurationError, match="W2"):
            broken.validate()


class TestForward:
    def test_outputs_are_bounded(self, small_module):
        extreme = np.array([[0.0, 0.0, -120.0], [1e4, 1e3, 0.0], [-50.0, -5.0, 50.0]])
        d, s = predict(small_module, extreme)
        assert np.all((d >= 0) & (d <= DEFAULT_D_BAR))
        assert np.all((s >= 0) & (s <= DEFAULT_S_BAR))

    def test_taped_and_plain_values_agree(self, small_module):
        plain = forward_batch(INPUTS, small_module)
        taped = forward_batch(INPUTS, small_module, ad.Tape())
        for (d0, s0), (d1, s1) in zip(plain, taped):
            assert d1.value == pytest.approx(d0, rel=1e-12)
            assert s1.value == pytest.approx(s0, rel=1e-12)

    def test_scalar_and_batch_paths_agree(self, small_module):
        tape = ad.Tape()
        leaves = module_leaves(small_module, tape)
        d, s = forward(INPUTS[0], small_module, tape, leaves)
        d_ref, s_ref = predict(small_module, INPUTS[:1])
        assert d.value == pytest.approx(d_ref[0], rel=1e-10)
        assert s.value == pytest.approx(s_ref[0], rel=1e-10)

    def test_input_dimension_checked(self, small_module):
        with pytest.raises(ConfigurationError):
            forward([1.0, 2.0], small_module)

    def test_normalization_is_affine(self):
        norm = Normalization()
        h = norm.apply(INPUTS)
        np.testing.assert_allclose(h[:, 0], INPUTS[:, 0] / 100.0)
        np.testing.assert_allclose(norm.invert(h), INPUTS)


class TestGradients:
    def _fused_gradients(self, module, weights):
        tape = ad.Tape()
        outputs = forward_batch(INPUTS, module, tape)
        cost = ad.total(weights[0] * d + weights[1] * ad.square(s) for d, s in outputs)
        return tape.backward(cost).params

    def test_fused_matches_scalar_graph(self, small_module):
        weights = (0.3, -0.05)
        fused = self._fused_gradients(small_module, weights)

        tape = ad.Tape()
        leaves = module_leaves(small_module, tape)
        terms = []
        for x in INPUTS:
            d, s = forward(x, small_module, tape, leaves)
            terms.append(weights[0] * d + weights[1] * ad.square(s))
        scalar = collect_gradients(tape.backward(ad.total(terms)), leaves)

        for name in small_module.param_names():
            np.testing.assert_allclose(fused[name], scalar[name], rtol=1e-8, atol=1e-12)

    def test_fused_matches_finite_differences(self, small_module):
        weights = (0.3, -0.05)
        fused = self._fused_gradients(small_module, weights)

        def cost(module):
            d, s = predict(module, INPUTS)
            return float(np.sum(weights[0] * d + weights[1] * s * s))

        rng = np.random.default_rng(0)
        h = 1e-6
        for name in small_module.param_names():
            idx = tuple(int(rng.integers(n)) for n in small_module.params[name].shape)
            up, down = small_module.copy(), small_module.copy()
            up.params[name][idx] += h
            down.params[name][idx] -= h
            numeric = (cost(up) - cost(down)) / (2 * h)
            assert fused[name][idx] == pytest.approx(numeric, rel=1e-5, abs=1e-7)


class TestPassthroughFit:
    @pytest.fixture
    def inputs(self, rng):
        d = rng.uniform(1.0, 60.0, size=300)
        return np.column_stack([d, rng.uniform(0.0, 2.0, size=300), -40.0 - 0.6 * d])

    def test_tracks_raw_distance(self, inputs):
        module = init_params(hidden=(20, 20), rng=np.random.default_rng(0))
        fitted = fit_passthrough(module, inputs)
        d, s = predict(fitted, inputs)
        assert np.mean(np.abs(d - inputs[:, 0])) < 1.0
        assert np.mean(np.abs(s - 2.0)) < 0.5

    def test_leaves_input_module_untouched(self, inputs, small_module):
        before = flatten_params(small_module)
        fit_passthrough(small_module, inputs, max_iter=5)
        np.testing.assert_array_equal(flatten_params(small_module), before)

    def test_deterministic(self, inputs, small_module):
        a = fit_passthrough(small_module, inputs, max_iter=20)
        b = fit_passthrough(small_module, inputs, max_iter=20)
        np.testing.assert_array_equal(flatten_params(a), flatten_params(b))

    def test_flat_vector_round_trip(self, small_module):
        theta = flatten_params(small_module)
        assert theta.size == small_module.n_params
        rebuilt = unflatten_params(small_module, theta * 2.0)
        np.testing.assert_array_equal(rebuilt.params["W2"], small_module.params["W2"] * 2.0)
        with pytest.raises(ConfigurationError):
            unflatten_params(small_module, theta[:-1])

    def test_rejects_bad_arguments(self, small_module):
        with pytest.raises(DatasetError):
            fit_passthrough(small_module, np.empty((0, 3)))
        with pytest.raises(ConfigurationError):
            fit_passthrough(small_module, INPUTS, s_target=DEFAULT_S_BAR)


class TestModelFile:
    def test_save_and_load(self, small_module, tmp_path):
        path = tmp_path / "model.json"
        save_model(small_module, path)
        loaded = load_model(path)
        assert loaded.hidden == small_module.hidden
        np.testing.assert_array_equal(predict(loaded, INPUTS)[0], predict(small_module, INPUTS)[0])

    def test_file_layout(self, small_module):
        data = small_module.to_dict()
        assert data["shape"] == {"input": 3, "hidden": [6, 5]}
        assert data["bounds"] == {"d_bar": 100.0, "s_bar": 10.0}
        assert list(data["parameters"]) == small_module.param_names()

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="absent.json"):
            load_model(tmp_path / "absent.json")

    def test_shape_mismatch(self, small_module, tmp_path):
        data = small_module.to_dict()
        data["shape"]["hidden"] = [7, 5]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(data))
        with pytest.raises(ConfigurationError):
            load_model(path)

    def test_not_json(self, tmp_path):
        path = tmp_path / "garbage.json"
        path.write_text("{not json")
        with pytest.raises(ConfigurationError):
            load_model(path)

    def test_from_dict_requires_parameters(self):
        with pytest.raises(ConfigurationError):
            RangingModule.from_dict({"shape": {"input": 3, "hidden": [2]}})


class TestDocumentedValues:
    @pytest.fixture
    def zero_module(self, small_module):
        module = small_module.copy()
        for name in module.param_names():
            module.params[name] = np.zeros_like(module.params[name])
        return module

    def test_zero_parameters_give_half_bounds(self, zero_module):
        d, s = predict(zero_module, INPUTS)
        np.testing.assert_allclose(d, 50.0)
        np.testing.assert_allclose(s, 5.0)

    def test_head_bias_gradient_at_zero(self, zero_module):
        tape = ad.Tape()
        d, _ = forward_batch(INPUTS[:1], zero_module, tape)[0]
        grads = tape.backward(d)
        assert grads.params["b_d"][0] == pytest.approx(25.0)

    def test_glorot_bound_first_layer(self):
        module = init_params(rng=np.random.default_rng(1))
        assert np.max(np.abs(module.params["W1"])) <= np.sqrt(6.0 / 103.0)

    @pytest.mark.parametrize("x, expected", [
        ((100.0, 10.0, -20.0), (1.0, 1.0, 1.0)),
        ((0.0, 0.0, -100.0), (0.0, 0.0, 0.0)),
    ])
    def test_normalization_endpoints(self, x, expected):
        np.testing.assert_allclose(normalize(x, Normalization()), expected)

    def test_normalization_round_trips_through_file(self, small_module, tmp_path):
        module = small_module.copy()
        module.normalization = Normalization(d_scale=80.0, s_scale=7.5, p_offset=95.0, p_scale=70.0)
        save_model(module, tmp_path / "m.json")
        assert load_model(tmp_path / "m.json").normalization == module.normalization

    def test_bounds_hold_for_extreme_inputs(self, small_module):
        corners = np.array([[a, b, c] for a in (-1e6, 1e6) for b in (-1e6, 1e6) for c in (-1e6, 1e6)])
        d, s = predict(small_module, corners)
        assert np.all((d >= 0) & (d <= 100.0))
        assert np.all((s >= 0) & (s <= 10.0))
