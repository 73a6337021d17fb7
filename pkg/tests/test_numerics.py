"""Tensor ops, reverse-mode gradients vs finite differences, optimizer,
clipping, dropout, derived RNG, and the checkpoint format."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import numeric_gradients, relative_errors
from sgsum import numerics as nm
from sgsum.numerics import (
    CheckpointError,
    NumericsError,
    ParamStore,
    ShapeError,
    Tape,
    Tensor,
    adam_step,
    backward,
    clip_global_norm,
    derive_rng,
    load_tensors,
    save_tensors,
)


class TestCoreOps:
    def test_softmax_uniform(self):
        out = nm.softmax_rows(Tensor([[0.0, 0.0]]))
        assert out.data.tolist() == [[0.5, 0.5]]

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(5, 7)) * 10)
        out = nm.softmax_rows(x)
        assert np.allclose(out.data.sum(axis=1), 1.0, atol=1e-9)

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 6))
        base = nm.softmax_rows(Tensor(x)).data
        shifted = nm.softmax_rows(Tensor(x + 3.7)).data
        assert np.allclose(base, shifted, atol=1e-12)

    def test_cosine_self(self):
        x = Tensor([1.0, -2.0, 3.0])
        assert nm.cosine_similarity(x, x).item() == pytest.approx(1.0, abs=1e-12)

    def test_cosine_zero_vector_fails(self):
        with pytest.raises(NumericsError, match="zero"):
            nm.cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))

    def test_layer_norm_constant_row(self):
        # zero variance: eps keeps it finite and the normalized row is 0,
        # so the output is exactly the bias
        x = Tensor([[3.0, 3.0, 3.0]])
        out = nm.layer_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)))
        assert np.allclose(out.data, 0.0, atol=1e-12)
        out2 = nm.layer_norm(x, Tensor(np.ones(3)), Tensor([1.0, 2.0, 3.0]))
        assert np.allclose(out2.data, [[1.0, 2.0, 3.0]], atol=1e-12)

    def test_shape_errors_carry_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            nm.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))
        with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
            nm.add(Tensor(np.zeros(2)), Tensor(np.zeros(3)))

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_non_finite_is_checked(self):
        big = Tensor(np.full((2, 2), 1e308))
        with pytest.raises(NumericsError, match="non-finite"):
            nm.mul(big, big)

    def test_log_domain(self):
        with pytest.raises(NumericsError, match="positive"):
            nm.log(Tensor([0.0, 1.0]))

    def test_relu_sigmoid_values(self):
        assert nm.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]
        assert nm.sigmoid(Tensor([0.0])).data[0] == 0.5
        s = nm.sigmoid(Tensor([-30.0, 30.0])).data
        assert 0.0 < s[0] < 1e-12 and 1.0 - 1e-12 < s[1] < 1.0


class TestBackward:
    def test_sum_gradient_is_ones(self):
        tape = Tape()
        w = tape.leaf("w", np.array([[1.0, 2.0], [3.0, 4.0]]))
        grads = tape.backward(nm.sum_all(w))
        assert np.array_equal(grads["w"], np.ones((2, 2)))

    def test_cosine_gradient_at_maximum(self):
        tape = Tape()
        w = tape.leaf("w", np.array([1.0, 2.0, -1.0]))
        c = Tensor(np.array([1.0, 2.0, -1.0]))
        grads = tape.backward(nm.cosine_similarity(w, c))
        assert np.allclose(grads["w"], 0.0, atol=1e-12)

    def test_non_scalar_loss_rejected(self):
        tape = Tape()
        w = tape.leaf("w", np.ones((2, 2)))
        with pytest.raises(NumericsError, match="scalar"):
            tape.backward(nm.scale(w, 2.0))

    def test_untaped_loss_rejected(self):
        with pytest.raises(NumericsError):
            backward(Tensor(1.0))

    def test_mixed_tapes_rejected(self):
        t1, t2 = Tape(), Tape()
        a = t1.leaf("a", np.ones(2))
        b = t2.leaf("b", np.ones(2))
        with pytest.raises(NumericsError, match="tapes"):
            nm.add(a, b)

    def test_unreached_leaf_gets_zeros(self):
        tape = Tape()
        a = tape.leaf("a", np.ones(3))
        tape.leaf("unused", np.ones((2, 2)))
        grads = tape.backward(nm.sum_all(a))
        assert np.array_equal(grads["unused"], np.zeros((2, 2)))

    def test_repeated_leaf_accumulates(self):
        tape = Tape()
        w = tape.leaf("w", np.array([2.0]))
        again = tape.leaf("w", np.array([2.0]))
        assert again is w
        loss = nm.sum_all(nm.mul(w, w))  # d/dw w^2 = 2w
        grads = tape.backward(loss)
        assert grads["w"][0] == pytest.approx(4.0, abs=1e-12)

    def test_identical_taped_passes_are_bit_identical(self):
        def run():
            tape = Tape()
            w = tape.leaf("w", np.linspace(-1, 1, 12).reshape(3, 4))
            b = tape.leaf("b", np.zeros(4))
            h = nm.relu(nm.affine(Tensor(np.arange(6.0).reshape(2, 3)), w, b))
            return tape.backward(nm.sum_all(nm.sigmoid(h)))
        g1, g2 = run(), run()
        assert all(np.array_equal(g1[k], g2[k]) for k in g1)

    def test_three_layer_network_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        params = {
            "w1": rng.normal(size=(5, 6)) * 0.5,
            "b1": rng.normal(size=6) * 0.1,
            "w2": rng.normal(size=(6, 4)) * 0.5,
            "b2": rng.normal(size=4) * 0.1,
            "w3": rng.normal(size=(4, 2)) * 0.5,
            "b3": rng.normal(size=2) * 0.1,
        }
        x = rng.normal(size=(3, 5))

        def forward(tape):
            def p(name):
                return tape.leaf(name, params[name]) if tape else Tensor(params[name])
            h1 = nm.relu(nm.affine(Tensor(x), p("w1"), p("b1")))
            h2 = nm.sigmoid(nm.affine(h1, p("w2"), p("b2")))
            out = nm.softmax_rows(nm.affine(h2, p("w3"), p("b3")))
            return nm.sum_all(nm.mul(out, out))

        tape = Tape()
        analytic = tape.backward(forward(tape))
        numeric = numeric_gradients(lambda: forward(None).item(), params)
        for name in params:
            errs = relative_errors(analytic[name], numeric[name])
            assert np.quantile(errs, 0.99) <= 1e-4, name
            assert errs.max() <= 1e-3, name

    def test_composite_op_gradients(self):
        # layer_norm, softmax_rows, gather/stack/slice/concat/reshape,
        # mean_rows and cosine together, against finite differences
        rng = np.random.default_rng(3)
        params = {
            "table": rng.normal(size=(6, 4)),
            "gain": 1.0 + 0.1 * rng.normal(size=4),
            "bias": 0.1 * rng.normal(size=4),
            "vec": rng.normal(size=4),
        }

        def forward(tape):
            def p(name):
                return tape.leaf(name, params[name]) if tape else Tensor(params[name])
            rows = nm.gather_rows(p("table"), [0, 2, 2, 5])
            normed = nm.layer_norm(rows, p("gain"), p("bias"))
            attn = nm.softmax_rows(nm.matmul(normed, nm.transpose(normed)))
            mixed = nm.matmul(attn, normed)
            left = nm.slice_cols(mixed, 0, 2)
            right = nm.slice_cols(mixed, 2, 4)
            merged = nm.concat([left, right], axis=1)
            pooled = nm.mean_rows(nm.slice_rows(merged, 0, 3))
            stacked = nm.stack_rows([pooled, nm.mean_rows(merged)])
            flat = nm.reshape(stacked, (8,))
            half = nm.slice_rows(nm.reshape(flat, (2, 4)), 0, 1)
            return nm.cosine_similarity(nm.reshape(half, (4,)), p("vec"))

        tape = Tape()
        analytic = tape.backward(forward(tape))
        numeric = numeric_gradients(lambda: forward(None).item(), params)
        for name in params:
            errs = relative_errors(analytic[name], numeric[name])
            assert errs.max() <= 1e-3, name
            assert np.quantile(errs, 0.99) <= 1e-4, name


class TestClipGlobalNorm:
    def test_halves_when_double(self):
        grads = {"a": np.array([2.0, 2.0]), "b": np.array([2.0, 2.0])}  # norm 4
        clipped = clip_global_norm(grads, 2.0)
        assert np.allclose(clipped["a"], [1.0, 1.0])
        assert np.allclose(clipped["b"], [1.0, 1.0])

    def test_identity_under_threshold(self):
        grads = {"a": np.array([0.6, 0.8])}  # norm 1
        clipped = clip_global_norm(grads, 2.0)
        assert np.array_equal(clipped["a"], grads["a"])

    def test_zero_gradients_unchanged(self):
        grads = {"a": np.zeros(3)}
        assert np.array_equal(clip_global_norm(grads, 2.0)["a"], np.zeros(3))

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=8),
           st.floats(0.1, 3.0))
    @settings(max_examples=200)
    def test_never_grows_and_keeps_direction(self, values, max_norm):
        g = np.asarray(values)
        grads = {"g": g}
        clipped = clip_global_norm(grads, max_norm)["g"]
        before = float(np.linalg.norm(g))
        after = float(np.linalg.norm(clipped))
        assert after <= max(before, max_norm) + 1e-12
        assert after <= before + 1e-12
        if before > max_norm and before > 0:
            cos = float(g @ clipped) / (before * after)
            assert cos == pytest.approx(1.0, abs=1e-12)

    def test_bad_max_norm(self):
        with pytest.raises(ValueError):
            clip_global_norm({"a": np.ones(2)}, 0.0)


def _reference_adam(w0, grad_fn, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    """Direct transcription of the update rule, independent of ParamStore."""
    w, m, v = w0, 0.0, 0.0
    trajectory = []
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        w = w - lr * mhat / (math.sqrt(vhat) + eps)
        trajectory.append(w)
    return trajectory


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        store = ParamStore()
        store.add("w", np.array([1.0, -2.0]))
        adam_step(store, {"w": np.zeros(2)}, lr=0.1)
        assert np.array_equal(store["w"], np.array([1.0, -2.0]))
        assert store.step == 1

    def test_first_step_unit_gradient(self):
        store = ParamStore()
        store.add("w", np.array([0.0]))
        adam_step(store, {"w": np.array([1.0])}, lr=0.1)
        # bias-corrected mhat/sqrt(vhat) = 1, so the update is lr/(1 + eps)
        assert store["w"][0] == pytest.approx(-0.1, abs=1e-8)

    def test_trajectory_matches_reference(self):
        store = ParamStore()
        store.add("w", np.array([1.0]))
        ours = []
        for _ in range(10):
            g = 2.0 * store["w"][0]  # d/dw of w^2
            adam_step(store, {"w": np.array([g])}, lr=0.05)
            ours.append(store["w"][0])
        expected = _reference_adam(1.0, lambda w: 2.0 * w, lr=0.05, steps=10)
        assert np.allclose(ours, expected, atol=1e-12)

    def test_missing_gradient_treated_as_zero(self):
        store = ParamStore()
        store.add("w", np.array([3.0]))
        adam_step(store, {}, lr=0.1)
        assert store["w"][0] == 3.0

    def test_shape_mismatch_rejected(self):
        store = ParamStore()
        store.add("w", np.ones(2))
        with pytest.raises(ShapeError):
            adam_step(store, {"w": np.ones(3)}, lr=0.1)

    def test_store_copy_is_deep(self):
        store = ParamStore()
        store.add("w", np.ones(2))
        dup = store.copy()
        store.params["w"][0] = 99.0
        assert dup["w"][0] == 1.0


class TestDropout:
    def test_p_zero_identity(self):
        x = Tensor(np.ones(5))
        assert nm.dropout(x, 0.0, "train", derive_rng(0)) is x
        assert nm.dropout(x, 0.0, "eval", None) is x

    def test_eval_identity(self):
        x = Tensor(np.ones(5))
        assert nm.dropout(x, 0.9, "eval", None) is x

    def test_train_mean_preserved(self):
        x = Tensor(np.ones(100_000))
        out = nm.dropout(x, 0.5, "train", derive_rng(1234))
        assert out.data.mean() == pytest.approx(1.0, rel=0.01)
        kept = out.data != 0.0
        assert np.allclose(out.data[kept], 2.0)  # inverted scaling

    def test_mask_reproducible(self):
        x = Tensor(np.ones(64))
        a = nm.dropout(x, 0.3, "train", derive_rng(7, "d", 1)).data
        b = nm.dropout(x, 0.3, "train", derive_rng(7, "d", 1)).data
        assert np.array_equal(a, b)

    def test_invalid_p(self):
        with pytest.raises(NumericsError):
            nm.dropout(Tensor(np.ones(2)), 1.0, "train", derive_rng(0))

    def test_invalid_mode(self):
        with pytest.raises(NumericsError):
            nm.dropout(Tensor(np.ones(2)), 0.5, "test", derive_rng(0))


class TestDeriveRng:
    def test_deterministic_and_salted(self):
        a = derive_rng(1, "x", 2).random(4)
        b = derive_rng(1, "x", 2).random(4)
        c = derive_rng(1, "x", 3).random(4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestCheckpointFormat:
    def _sample(self):
        rng = np.random.default_rng(0)
        return {
            "embed/token": rng.normal(size=(5, 3)),
            "scalar": np.asarray(2.5),
            "vector": rng.normal(size=4),
        }

    def test_round_trip_bit_exact(self, tmp_path):
        tensors = self._sample()
        path = tmp_path / "model.sgs"
        save_tensors(path, tensors)
        loaded = load_tensors(path)
        assert set(loaded) == set(tensors)
        for name in tensors:
            assert loaded[name].shape == np.asarray(tensors[name]).shape
            assert np.array_equal(loaded[name], tensors[name])

    def test_save_load_save_identical_bytes(self, tmp_path):
        p1 = tmp_path / "a.sgs"
        p2 = tmp_path / "b.sgs"
        save_tensors(p1, self._sample())
        save_tensors(p2, load_tensors(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "model.sgs"
        save_tensors(path, self._sample())
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 9])
        with pytest.raises(CheckpointError, match="truncated"):
            load_tensors(path)

    def test_foreign_magic_rejected(self, tmp_path):
        path = tmp_path / "model.sgs"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(CheckpointError, match="magic"):
            load_tensors(path)

    def test_version_mismatch_rejected(self, tmp_path):
        path = tmp_path / "model.sgs"
        save_tensors(path, self._sample())
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_tensors(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "model.sgs"
        save_tensors(path, self._sample())
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(CheckpointError, match="trailing"):
            load_tensors(path)

    def test_no_temp_files_left(self, tmp_path):
        path = tmp_path / "model.sgs"
        save_tensors(path, self._sample())
        assert [p.name for p in tmp_path.iterdir()] == ["model.sgs"]
