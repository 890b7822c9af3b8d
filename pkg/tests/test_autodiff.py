import math

import numpy as np
import pytest

from src import autodiff as ad
from src.alignment import TrajectoryPair, aligned_cost
from src.errors import NumericDomainError
from src.ftm_sim import FtmMeasurement
from src.positioning import run_trajectory
from src.ranging_nn import init_params
from src.scenario import default_site


def _composite(x, y):
    r = ad.sqrt(ad.square(x) + ad.square(y) + 1.0)
    return ad.sigmoid(x * y) * r / (2.0 + ad.square(y)) - ad.max0(x - 0.3)


def _numeric_grad(f, point, h=1e-6):
    grads = []
    for i in range(len(point)):
        up = list(point)
        down = list(point)
        up[i] += h
        down[i] -= h
        grads.append((f(*up) - f(*down)) / (2 * h))
    return grads


class TestTape:
    def test_floats_pass_through(self):
        assert ad.add(1.0, 2.0) == 3.0
        assert isinstance(ad.mul(2.0, 3.0), float)
        assert ad.total([1.0, 2.0, 3.5]) == 6.5

    def test_simple_partials(self):
        tape = ad.Tape()
        x, y = tape.leaves([3.0, 4.0])
        f = x * y + x
        grads = tape.backward(f)
        assert grads[x] == 5.0
        assert grads[y] == 3.0

    def test_composite_matches_finite_differences(self):
        point = (0.7, -1.3)
        tape = ad.Tape()
        x, y = tape.leaves(point)
        grads = tape.backward(_composite(x, y))
        expected = _numeric_grad(lambda a, b: _composite(a, b), point)
        assert grads[x] == pytest.approx(expected[0], rel=1e-6)
        assert grads[y] == pytest.approx(expected[1], rel=1e-6)

    def test_parents_precede_children(self):
        tape = ad.Tape()
        x, y = tape.leaves([0.5, 2.0])
        _composite(x, y)
        for i, parents in enumerate(tape._parents):
            assert all(p < i for p in parents)

    def test_unused_leaf_has_zero_gradient(self):
        tape = ad.Tape()
        x, unused = tape.leaves([1.0, 2.0])
        grads = tape.backward(ad.square(x))
        assert grads[unused] == 0.0

    def test_total_is_one_node(self):
        tape = ad.Tape()
        xs = tape.leaves([1.0, 2.0, 3.0])
        before = len(tape)
        s = ad.total(xs)
        assert len(tape) == before + 1
        assert tape.kind(s) == "sum"
        grads = tape.backward(s)
        assert [grads[v] for v in xs] == [1.0, 1.0, 1.0]

    def test_max0_kink_has_zero_subgradient(self):
        tape = ad.Tape()
        x = tape.leaf(0.0)
        assert tape.backward(ad.max0(x))[x] == 0.0

    def test_sigmoid_is_stable_for_large_inputs(self):
        assert ad.sigmoid(-800.0) == 0.0
        assert ad.sigmoid(800.0) == 1.0


GRAPH_OPS = ("avg", "diff", "gate", "squash", "ratio", "radial", "dot", "norm", "mean3")


def _graph_plan(rng, n_leaves, n_ops):
    """Random op sequence; each op reads four earlier nodes by index."""
    return [
        (GRAPH_OPS[int(rng.integers(len(GRAPH_OPS)))], tuple(int(i) for i in rng.integers(0, n_leaves + k, size=4)))
        for k in range(n_ops)
    ]


def _build_graph(plan, leaves):
    """Every op maps values in [-2, 2] back into [-2, 2] and is smooth everywhere."""
    nodes = list(leaves)
    for op, (i, j, k, l) in plan:
        a, b, c, d = nodes[i], nodes[j], nodes[k], nodes[l]
        if op == "avg":
            out = 0.5 * (a + b)
        elif op == "diff":
            out = 0.5 * (a - b)
        elif op == "gate":
            out = ad.sigmoid(a) * b
        elif op == "squash":
            out = ad.sigmoid(a)
        elif op == "ratio":
            out = a / (1.0 + ad.square(b))
        elif op == "radial":
            out = 0.5 * ad.sqrt(ad.square(a) + ad.square(b) + 1.0)
        elif op == "dot":
            out = 0.25 * ad.dot2((a, b), (c, d))
        elif op == "norm":
            out = 0.25 * ad.norm2sq((a, b))
        else:
            out = ad.total([a, b, c]) / 3.0
        nodes.append(out)
    return ad.total(nodes[-12:])


class TestRandomGraphs:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_every_leaf_matches_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        point = rng.uniform(-1.5, 1.5, size=12).tolist()
        plan = _graph_plan(rng, len(point), 150)
        tape = ad.Tape()
        leaves = tape.leaves(point)
        root = _build_graph(plan, leaves)
        assert len(tape) >= 200
        grads = tape.backward(root)
        expected = _numeric_grad(lambda *xs: _build_graph(plan, xs), point, h=1e-5)
        for leaf, numeric in zip(leaves, expected):
            assert grads[leaf] == pytest.approx(numeric, rel=1e-4, abs=1e-8)

    @pytest.mark.parametrize("alpha, beta", [(1.0, 1.0), (2.5, -0.75), (0.0, 3.0)])
    def test_gradient_is_linear_in_the_root(self, alpha, beta):
        rng = np.random.default_rng(11)
        point = rng.uniform(-1.5, 1.5, size=8).tolist()
        plan_f = _graph_plan(rng, len(point), 60)
        plan_g = _graph_plan(rng, len(point), 60)
        tape = ad.Tape()
        leaves = tape.leaves(point)
        f = _build_graph(plan_f, leaves)
        g = _build_graph(plan_g, leaves)
        combined = tape.backward(alpha * f + beta * g)
        grads_f = tape.backward(f)
        grads_g = tape.backward(g)
        for leaf in leaves:
            assert combined[leaf] == pytest.approx(alpha * grads_f[leaf] + beta * grads_g[leaf], rel=1e-9, abs=1e-12)


class TestDomainErrors:
    def test_sqrt_of_zero_on_tape(self):
        tape = ad.Tape()
        x = tape.leaf(0.0)
        with pytest.raises(NumericDomainError, match="node"):
            ad.sqrt(x)

    def test_sqrt_of_negative(self):
        with pytest.raises(NumericDomainError):
            ad.sqrt(-1.0)

    def test_division_by_zero(self):
        tape = ad.Tape()
        x = tape.leaf(1.0)
        with pytest.raises(NumericDomainError):
            x / ad.sub(x, 1.0)

    def test_non_finite_value(self):
        tape = ad.Tape()
        x = tape.leaf(1e200)
        with pytest.raises(NumericDomainError) as info:
            x * 1e200
        assert info.value.node == len(tape)

    def test_mixed_tapes_rejected(self):
        a = ad.Tape().leaf(1.0)
        b = ad.Tape().leaf(2.0)
        with pytest.raises(ValueError):
            a + b


class TestFusedBlocks:
    def test_vjp_receives_output_adjoints(self):
        tape = ad.Tape()
        weights = np.array([2.0, -1.0])

        def vjp(seeds):
            return {"w": seeds * np.array([10.0, 20.0])}

        out = tape.fused(weights * np.array([10.0, 20.0]), vjp)
        f = 3.0 * out[0] + ad.square(out[1])
        grads = tape.backward(f)
        np.testing.assert_allclose(grads.params["w"], [3.0 * 10.0, 2.0 * out[1].value * 20.0])

    def test_block_off_the_path_is_skipped(self):
        tape = ad.Tape()
        calls = []
        tape.fused(np.array([1.0]), lambda s: calls.append(s) or {"w": s})
        x = tape.leaf(2.0)
        grads = tape.backward(ad.square(x))
        assert calls == []
        assert grads.params == {}


class TestNodeBudget:
    def test_full_dataset_graph_fits(self, rng):
        site = default_site()
        aps = site.ap_positions()
        module = init_params(rng=rng)
        steps = []
        for k in range(100):
            step = []
            for ap_id in sorted(aps):
                step.append((ap_id, FtmMeasurement(float(rng.uniform(1, 60)), 0.5, -60.0)))
            steps.append(step)
        tape = ad.Tape()
        trajectory = run_trajectory(steps, aps, module, tape, center=site.center)
        pdr = [(0.7 * k, 0.0) for k in range(100)]
        cost = aligned_cost(TrajectoryPair(trajectory, pdr))
        assert len(tape) < ad.NODE_BUDGET_PER_DATASET
        assert math.isfinite(cost.value)


class TestDocumentedDerivatives:
    def test_sigmoid_at_zero(self):
        tape = ad.Tape()
        x = tape.leaf(0.0)
        y = ad.sigmoid(x)
        assert y.value == 0.5
        assert tape.backward(y)[x] == pytest.approx(0.25)

    def test_square(self):
        tape = ad.Tape()
        x = tape.leaf(3.0)
        assert tape.backward(ad.square(x))[x] == 6.0

    def test_radical_of_gamma_terms(self):
        tape = ad.Tape()
        g, gt = tape.leaves([3.0, 4.0])
        r = ad.sqrt(ad.square(g) + ad.square(gt))
        grads = tape.backward(r)
        assert r.value == 5.0
        assert grads[g] == pytest.approx(0.6)
        assert grads[gt] == pytest.approx(0.8)
