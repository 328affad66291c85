"""Autodiff engine, Adam, checkpoints, finite-difference checker."""

import numpy as np
import pytest

from banditseq import diffcore as dc
from banditseq.errors import ContractViolation, NumericError


def _store_with(name, arr):
    store = dc.ParamStore()
    store.add(name, np.asarray(arr, dtype=np.float64))
    return store


class TestBackwardBasics:
    def test_grad_of_sum_is_ones(self):
        store = _store_with("p", [2.0, -1.0, 0.5])
        dc.backward(dc.sum_all(store.node("p")))
        np.testing.assert_array_equal(store.grad("p"), [1.0, 1.0, 1.0])

    def test_grad_of_square_scalar(self):
        store = _store_with("p", [3.0])
        p = store.node("p")
        dc.backward(dc.sum_all(dc.mul(p, p)))
        np.testing.assert_allclose(store.grad("p"), [6.0])

    def test_log_softmax_pick_symmetric(self):
        store = _store_with("z", [0.0, 0.0])
        root = dc.pick(dc.log(dc.softmax(store.node("z"))), 0)
        dc.backward(root)
        np.testing.assert_allclose(store.grad("z"), [0.5, -0.5], atol=1e-12)

    def test_non_scalar_root_rejected(self):
        store = _store_with("p", [1.0, 2.0])
        with pytest.raises(ContractViolation):
            dc.backward(store.node("p"))

    def test_nan_root_rejected(self):
        store = _store_with("p", [0.5])
        bad = dc.Node(np.float64("nan"), (), None, "bad")
        with pytest.raises(NumericError):
            dc.backward(bad)

    def test_grads_accumulate_across_calls(self):
        store = _store_with("p", [1.0, 4.0])
        dc.backward(dc.sum_all(store.node("p")))
        dc.backward(dc.sum_all(store.node("p")))
        np.testing.assert_array_equal(store.grad("p"), [2.0, 2.0])

    def test_backward_is_linear(self):
        # grad(a*f + b*g) == a*grad(f) + b*grad(g)
        rng = dc.seeded_rng(7)
        vals = rng.normal(size=4)
        a, b = 2.5, -1.25

        def f(p):
            return dc.sum_all(dc.mul(p, p))

        def g(p):
            return dc.sum_all(dc.tanh(p))

        store = _store_with("p", vals)
        dc.backward(dc.add(dc.affine(f(store.node("p")), a),
                           dc.affine(g(store.node("p")), b)))
        combined = store.grad("p").copy()

        store.zero_grads()
        dc.backward(f(store.node("p")))
        gf = store.grad("p").copy()
        store.zero_grads()
        dc.backward(g(store.node("p")))
        gg = store.grad("p").copy()
        np.testing.assert_allclose(combined, a * gf + b * gg, rtol=1e-12)

    def test_seed_scales_gradient(self):
        store = _store_with("p", [1.0, -2.0])
        dc.backward(dc.sum_all(dc.mul(store.node("p"), store.node("p"))), seed=0.5)
        np.testing.assert_allclose(store.grad("p"), [1.0, -2.0])

    def test_debug_checks_catch_nonfinite_forward(self):
        dc.set_debug_checks(True)
        try:
            big = dc.constant(np.array([1e308, 1e308]))
            with np.errstate(over="ignore"), pytest.raises(NumericError):
                dc.add(big, big)
        finally:
            dc.set_debug_checks(False)


def _primitive_cases(rng):
    """(name, loss builder over a single param vector/matrix) pairs."""
    v5 = rng.normal(size=5)
    v5pos = np.abs(rng.normal(size=5)) + 0.5
    m34 = rng.normal(size=(3, 4))
    m42 = rng.normal(size=(4, 2))
    v4 = rng.normal(size=4)
    v3 = rng.normal(size=3)
    mix = rng.normal(size=5)

    def weighted(x):
        # fixed projection to scalar so gradients are not uniform
        return dc.sum_all(dc.mul(x, dc.constant(mix[:x.val.shape[0]])))

    return [
        ("add", v5, lambda p: weighted(dc.add(p, dc.constant(v5)))),
        ("add_n", v5, lambda p: weighted(dc.add_n([p, p, dc.constant(v5)]))),
        ("mul", v5, lambda p: weighted(dc.mul(p, dc.constant(v5 + 2.0)))),
        ("affine", v5, lambda p: weighted(dc.affine(p, -1.7, 0.3))),
        ("square", v5, lambda p: weighted(dc.square(p))),
        ("tanh", v5, lambda p: weighted(dc.tanh(p))),
        ("sigmoid", v5, lambda p: weighted(dc.sigmoid(p))),
        ("log", v5pos, lambda p: weighted(dc.log(p))),
        ("softmax", v5, lambda p: weighted(dc.softmax(p))),
        ("log_softmax", v5, lambda p: weighted(dc.log_softmax(p))),
        ("pick", v5, lambda p: dc.pick(p, 3)),
        ("vslice", v5, lambda p: weighted(dc.vslice(p, 1, 4))),
        ("concat", v5, lambda p: weighted(dc.concat([dc.vslice(p, 2, 5), dc.vslice(p, 0, 2)]))),
        ("sum", v5, lambda p: dc.sum_all(p)),
        ("matmul_mv", m34, lambda p: weighted(dc.matmul(p, dc.constant(v4)))),
        ("matmul_mm", m34, lambda p: dc.sum_all(dc.matmul(p, dc.constant(m42)))),
        ("matmul_dot", v5, lambda p: dc.matmul(p, dc.constant(v5 - 1.0))),
        ("matvec_t", m34, lambda p: weighted(dc.matvec_t(p, dc.constant(v3)))),
        ("row", m34, lambda p: weighted(dc.row(p, 1))),
        ("stack_rows", v4, lambda p: dc.sum_all(dc.matmul(
            dc.stack_rows([p, dc.affine(p, 2.0)]), dc.constant(v4)))),
    ]


class TestPrimitiveGradients:
    @pytest.mark.parametrize("case", _primitive_cases(dc.seeded_rng(123)),
                             ids=lambda c: c[0])
    def test_matches_central_differences(self, case):
        name, init, build = case
        store = _store_with("p", init)
        report = dc.finite_diff_check(lambda s: build(s.node("p")), store,
                                      h=1e-5, tol=1e-6)
        assert report.ok, f"{name}: {report}"

    def test_fused_lstm_matches_composed(self):
        rng = dc.seeded_rng(11)
        hdim = 3
        x = rng.normal(size=2)
        wih = rng.normal(size=(4 * hdim, 2))
        whh = rng.normal(size=(4 * hdim, hdim))
        b = rng.normal(size=4 * hdim)
        h0 = rng.normal(size=hdim)
        c0 = rng.normal(size=hdim)

        def fused(s):
            gates = dc.lstm_gates(dc.constant(x), s.node("h0"), dc.constant(wih),
                                  dc.constant(whh), dc.constant(b))
            c1 = dc.lstm_c(gates, dc.constant(c0))
            return dc.sum_all(dc.lstm_h(gates, c1))

        def composed(s):
            gates = dc.add(dc.add(dc.matmul(dc.constant(wih), dc.constant(x)),
                                  dc.matmul(dc.constant(whh), s.node("h0"))),
                           dc.constant(b))
            i = dc.sigmoid(dc.vslice(gates, 0, hdim))
            f = dc.sigmoid(dc.vslice(gates, hdim, 2 * hdim))
            g = dc.tanh(dc.vslice(gates, 2 * hdim, 3 * hdim))
            o = dc.sigmoid(dc.vslice(gates, 3 * hdim, 4 * hdim))
            c1 = dc.add(dc.mul(f, dc.constant(c0)), dc.mul(i, g))
            return dc.sum_all(dc.mul(o, dc.tanh(c1)))

        sa = _store_with("h0", h0)
        sb = _store_with("h0", h0)
        fa, fb = fused(sa), composed(sb)
        np.testing.assert_allclose(fa.val, fb.val, rtol=1e-14)
        dc.backward(fa)
        dc.backward(fb)
        np.testing.assert_allclose(sa.grad("h0"), sb.grad("h0"), rtol=1e-12)

    def test_fused_lstm_finite_diff(self):
        rng = dc.seeded_rng(21)
        hdim = 3
        store = dc.ParamStore()
        store.add("wih", rng.normal(size=(4 * hdim, 2)) * 0.4)
        store.add("whh", rng.normal(size=(4 * hdim, hdim)) * 0.4)
        store.add("b", rng.normal(size=4 * hdim) * 0.4)
        x = rng.normal(size=2)
        h0 = rng.normal(size=hdim)
        c0 = rng.normal(size=hdim)

        def loss(s):
            gates = dc.lstm_gates(dc.constant(x), dc.constant(h0), s.node("wih"),
                                  s.node("whh"), s.node("b"))
            c1 = dc.lstm_c(gates, dc.constant(c0))
            h1 = dc.lstm_h(gates, c1)
            # run a second step so c1/h1 fan out like a real recurrence
            gates2 = dc.lstm_gates(dc.constant(x), h1, s.node("wih"),
                                   s.node("whh"), s.node("b"))
            c2 = dc.lstm_c(gates2, c1)
            return dc.sum_all(dc.square(dc.lstm_h(gates2, c2)))

        assert dc.finite_diff_check(loss, store, h=1e-5, tol=1e-6).ok

    def test_attend_matches_composed_and_finite_diff(self):
        rng = dc.seeded_rng(31)
        hdim, src = 4, 3
        store = dc.ParamStore()
        store.add("wa", rng.normal(size=(hdim, hdim)) * 0.5)
        store.add("h", rng.normal(size=hdim))
        mem = rng.normal(size=(src, hdim))

        def fused(s):
            return dc.sum_all(dc.square(dc.attend(dc.constant(mem), s.node("h"), s.node("wa"))))

        def composed(s):
            q = dc.matvec_t(s.node("wa"), s.node("h"))
            weights = dc.softmax(dc.matmul(dc.constant(mem), q))
            ctx = dc.matvec_t(dc.constant(mem), weights)
            return dc.sum_all(dc.square(ctx))

        assert abs(float(fused(store).val) - float(composed(store).val)) < 1e-12
        assert dc.finite_diff_check(fused, store, h=1e-5, tol=1e-6).ok

        # gradient w.r.t. the memory matrix as well
        store2 = _store_with("mem", mem)

        def loss_mem(s):
            ctx = dc.attend(s.node("mem"), dc.constant(store["h"]), dc.constant(store["wa"]))
            return dc.sum_all(dc.square(ctx))

        assert dc.finite_diff_check(loss_mem, store2, h=1e-5, tol=1e-6).ok

    def test_attention_weights_are_a_distribution(self):
        rng = dc.seeded_rng(41)
        node = dc.attend(dc.constant(rng.normal(size=(6, 4))),
                         dc.constant(rng.normal(size=4)),
                         dc.constant(rng.normal(size=(4, 4))))
        assert np.all(node.weights >= 0)
        assert abs(node.weights.sum() - 1.0) < 1e-12

    def test_single_row_memory_gets_weight_one(self):
        rng = dc.seeded_rng(43)
        node = dc.attend(dc.constant(rng.normal(size=(1, 4))),
                         dc.constant(rng.normal(size=4)),
                         dc.constant(rng.normal(size=(4, 4))))
        assert node.weights.shape == (1,)
        assert node.weights[0] == 1.0


class TestAdam:
    def test_first_step_is_a_sign_step(self):
        store = _store_with("p", [1.0])
        opt = dc.Adam(store, alpha=0.001)
        store.grad("p")[0] = 0.37
        opt.step()
        assert store["p"][0] == pytest.approx(1.0 - 0.001, abs=1e-8)

    def test_zero_gradient_is_identity(self):
        store = _store_with("p", [1.5, -2.5])
        opt = dc.Adam(store, alpha=0.1)
        opt.step()
        np.testing.assert_array_equal(store["p"], [1.5, -2.5])
        assert opt.t == 1

    def test_two_constant_grad_steps_match_recurrence(self):
        # hand-rolled Adam recurrence for two steps with constant gradient
        g, alpha, b1, b2, eps = 0.2, 0.01, 0.9, 0.999, 1e-8
        m = v = 0.0
        expected = []
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            expected.append(alpha * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps))

        store = _store_with("p", [0.0])
        opt = dc.Adam(store, alpha=alpha)
        prev = 0.0
        steps = []
        for _ in range(2):
            store.grad("p")[0] = g
            opt.step()
            steps.append(prev - store["p"][0])
            prev = store["p"][0]
        np.testing.assert_allclose(steps, expected, rtol=1e-12)
        # constant gradient: displacement magnitudes stay within 1%
        assert abs(steps[1] - steps[0]) / steps[0] < 0.01

    def test_grads_zeroed_after_step(self):
        store = _store_with("p", [1.0])
        opt = dc.Adam(store)
        store.grad("p")[0] = 3.0
        opt.step()
        assert store.grad("p")[0] == 0.0

    def test_grad_scale_averages_batch(self):
        a = _store_with("p", [1.0])
        b = _store_with("p", [1.0])
        oa, ob = dc.Adam(a, alpha=0.05), dc.Adam(b, alpha=0.05)
        a.grad("p")[0] = 4.0
        oa.step(grad_scale=0.25)
        b.grad("p")[0] = 1.0
        ob.step()
        assert a["p"][0] == b["p"][0]

    def test_clip_norm_rescales(self):
        store = _store_with("p", [0.0, 0.0])
        opt = dc.Adam(store, alpha=1.0)
        store.grad("p")[:] = [3.0, 4.0]  # norm 5
        opt.step(clip_norm=1.0)
        ref = _store_with("p", [0.0, 0.0])
        ropt = dc.Adam(ref, alpha=1.0)
        ref.grad("p")[:] = [0.6, 0.8]
        ropt.step()
        np.testing.assert_allclose(store["p"], ref["p"], rtol=1e-12)

    def test_nan_grad_raises(self):
        store = _store_with("p", [1.0])
        opt = dc.Adam(store)
        store.grad("p")[0] = np.nan
        with pytest.raises(NumericError):
            opt.step()


class TestParamStore:
    def test_duplicate_name_rejected(self):
        store = _store_with("p", [1.0])
        with pytest.raises(ContractViolation):
            store.add("p", np.zeros(2))

    def test_checkpoint_roundtrip_bit_exact(self, tmp_path):
        rng = dc.seeded_rng(99)
        store = dc.ParamStore()
        store.add("alpha", rng.normal(size=(3, 5)))
        store.add("beta", rng.normal(size=7))
        store.add("gamma", np.array([np.pi]))
        p1 = tmp_path / "a.bsq"
        p2 = tmp_path / "b.bsq"
        store.save(p1)
        loaded = dc.ParamStore.load(p1)
        loaded.save(p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert loaded.names() == store.names()
        for name in store.names():
            np.testing.assert_array_equal(loaded[name], store[name])

    def test_checkpoint_header_layout(self, tmp_path):
        store = _store_with("w", np.arange(6, dtype=np.float64).reshape(2, 3))
        path = tmp_path / "c.bsq"
        store.save(path)
        raw = path.read_bytes()
        assert raw[:4] == b"BSQ1"
        assert int.from_bytes(raw[4:8], "little") == 1  # version
        assert int.from_bytes(raw[8:12], "little") == 1  # entry count
        assert int.from_bytes(raw[12:16], "little") == 1  # name length
        assert raw[16:17] == b"w"
        assert int.from_bytes(raw[17:21], "little") == 2  # rank
        assert int.from_bytes(raw[21:25], "little") == 2  # dim 0
        assert int.from_bytes(raw[25:29], "little") == 3  # dim 1
        np.testing.assert_array_equal(
            np.frombuffer(raw[29:], dtype="<f8"), np.arange(6.0))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bsq"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ContractViolation):
            dc.ParamStore.load(path)


class TestFiniteDiffCheck:
    def test_quadratic_is_exact(self):
        store = _store_with("p", dc.seeded_rng(5).normal(size=6))
        report = dc.finite_diff_check(
            lambda s: dc.sum_all(dc.square(s.node("p"))), store, h=1e-5, tol=1e-8)
        assert report.ok
        assert report.worst < 1e-8

    def test_flags_a_wrong_gradient(self):
        store = _store_with("p", [0.7])

        def wrong(s):
            p = s.node("p")
            # claims d/dp = 3 while computing p^2
            return dc.Node(p.val[0] ** 2, (p,), lambda g: (np.array([3.0 * g]),), "lie")

        report = dc.finite_diff_check(wrong, store, h=1e-4, tol=1e-4)
        assert not report.ok
        assert "p" in report.flagged

    def test_nondeterministic_loss_rejected(self):
        store = _store_with("p", [1.0])
        state = {"n": 0}

        def noisy(s):
            state["n"] += 1
            return dc.constant(float(state["n"]))

        with pytest.raises(ContractViolation):
            dc.finite_diff_check(noisy, store)

    def test_out_of_range_h_rejected(self):
        store = _store_with("p", [1.0])
        with pytest.raises(ContractViolation):
            dc.finite_diff_check(lambda s: dc.sum_all(s.node("p")), store, h=0.1)
