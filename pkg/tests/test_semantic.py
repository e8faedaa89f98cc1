import math

import numpy as np
import pytest
import torch

from blc.semantic_flow import FlowFuser, FlowState, flow_states, fuse, init_flow, stage_scores_with_flow
from blc.semantic_head import (
    SemanticBranch, ShapeError, compose_projection, fb_scores, logits_from_projection, semantic_scores,
)

N, d, v, s = 8, 4, 6, 3


def loop_matmul(a, b):
    """Plain triple loop, independent of BLAS."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            out[i, j] = sum(a[i, q] * b[q, j] for q in range(a.shape[1]))
    return out


def loop_softmax(z):
    m = max(z)
    e = [math.exp(t - m) for t in z]
    return np.array([t / sum(e) for t in e])


def oracle_scores(W, M, D, T, x):
    """c = softmax(tanh(W^T M^T D^T T^T) x), evaluated term by term."""
    chain = loop_matmul(loop_matmul(loop_matmul(W.T, M.T), D.T), T.T)
    P = np.tanh(chain)
    return loop_softmax(loop_matmul(P, x[:, None])[:, 0])


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def t64(a):
    return torch.as_tensor(np.asarray(a), dtype=torch.float64)


class TestComposeProjection:
    def test_range_and_shape(self, rng):
        W, M, D, T = (rng.normal(size=sh) for sh in [(d, s + 1), (v, d), (d, v), (N, d)])
        P = compose_projection(t64(W), t64(M), t64(D), t64(T))
        assert P.shape == (s + 1, N)
        assert torch.all(P.abs() < 1)

    def test_identity_chain(self):
        eye = torch.eye(5, dtype=torch.float64)
        assert torch.equal(compose_projection(eye, eye, eye, eye), torch.tanh(eye))

    def test_random_vs_loop_oracle(self, rng):
        W, M, D, T = (rng.normal(size=sh) for sh in [(d, s + 1), (v, d), (d, v), (N, d)])
        P = compose_projection(t64(W), t64(M), t64(D), t64(T)).numpy()
        expected = np.tanh(loop_matmul(loop_matmul(loop_matmul(W.T, M.T), D.T), T.T))
        assert np.max(np.abs(P - expected)) <= 1e-12

    def test_shape_error_names_pair(self, rng):
        with pytest.raises(ShapeError, match=r"M\(6, 4\) with D\(4, 5\)"):
            compose_projection(t64(np.ones((d, 2))), t64(np.ones((v, d))), t64(np.ones((d, 5))), t64(np.ones((N, d))))


class TestSemanticScores:
    def test_zero_projection_uniform(self):
        p = semantic_scores(torch.zeros(4, N, dtype=torch.float64), torch.randn(N, dtype=torch.float64))
        assert torch.allclose(p, torch.full((4,), 0.25, dtype=torch.float64), atol=0)

    def test_normalized(self, rng):
        P = t64(rng.uniform(-1, 1, size=(5, N)))
        p = semantic_scores(P, t64(rng.normal(size=(7, N))))
        assert torch.all(p >= 0)
        assert torch.allclose(p.sum(-1), torch.ones(7, dtype=torch.float64), atol=1e-6)

    def test_end_to_end_vs_oracle(self, rng):
        W, D, x = rng.normal(size=(d, s + 1)), rng.normal(size=(d, v)), rng.normal(size=N)
        br = SemanticBranch(N, d, v, torch.Generator().manual_seed(0), dtype=torch.float64)
        got = torch.softmax(br(t64(x), t64(W), t64(D)), -1).detach().numpy()
        ref = oracle_scores(W, br.M.detach().numpy(), D, br.T.detach().numpy(), x)
        assert np.max(np.abs(got - ref)) <= 1e-9

    def test_non_finite_feature(self):
        x = torch.zeros(N, dtype=torch.float64)
        x[2] = float("nan")
        with pytest.raises(ValueError, match="non-finite"):
            semantic_scores(torch.zeros(3, N, dtype=torch.float64), x)

    def test_scaling_preserves_argmax(self, rng):
        P, x = t64(rng.uniform(-1, 1, size=(4, N))), t64(rng.normal(size=N))
        z = logits_from_projection(P, x)
        for lam in (0.1, 3.0, 17.0):
            assert torch.allclose(logits_from_projection(P, lam * x), lam * z, atol=1e-12)
            assert semantic_scores(P, lam * x).argmax() == z.argmax()


class TestFbScores:
    def test_two_way(self, rng):
        br = SemanticBranch(N, d, v, torch.Generator().manual_seed(1), dtype=torch.float64)
        p = fb_scores(br, t64(rng.normal(size=(d, 2))), t64(rng.normal(size=(d, v))), t64(rng.normal(size=N)))
        assert p.shape == (2,) and abs(float(p.detach().sum()) - 1) <= 1e-12

    def test_symmetric_columns_give_half(self, rng):
        col = rng.normal(size=(d, 1))
        br = SemanticBranch(N, d, v, torch.Generator().manual_seed(1), dtype=torch.float64)
        p = fb_scores(br, t64(np.hstack([col, col])), t64(rng.normal(size=(d, v))), t64(rng.normal(size=N)))
        assert torch.equal(p, torch.tensor([0.5, 0.5], dtype=torch.float64))

    def test_vs_oracle(self, rng):
        W_fb, D, x = rng.normal(size=(d, 2)), rng.normal(size=(d, v)), rng.normal(size=N)
        br = SemanticBranch(N, d, v, torch.Generator().manual_seed(2), dtype=torch.float64)
        got = fb_scores(br, t64(W_fb), t64(D), t64(x)).detach().numpy()
        ref = oracle_scores(W_fb, br.M.detach().numpy(), D, br.T.detach().numpy(), x)
        assert np.max(np.abs(got - ref)) <= 1e-9

    def test_wrong_width(self, rng):
        br = SemanticBranch(N, d, v, dtype=torch.float64)
        with pytest.raises(ShapeError):
            fb_scores(br, t64(np.ones((d, 3))), t64(np.ones((d, v))), t64(np.ones(N)))


class TestBranchGradients:
    def test_ce_gradients_vs_finite_differences(self, rng):
        W, D = t64(rng.normal(size=(d, s + 1))), t64(rng.normal(size=(d, v)))
        x = t64(rng.normal(size=(3, N)))
        y = torch.tensor([0, 2, 3])
        br = SemanticBranch(N, d, v, torch.Generator().manual_seed(3), dtype=torch.float64)

        def loss():
            return torch.nn.functional.cross_entropy(br(x, W, D), y)

        loss().backward()
        for p in (br.T, br.M):
            analytic = p.grad.clone()
            numeric = torch.zeros_like(p)
            h = 1e-4
            with torch.no_grad():
                for idx in np.ndindex(*p.shape):
                    old = p[idx].item()
                    p[idx] = old + h
                    up = loss().item()
                    p[idx] = old - h
                    down = loss().item()
                    p[idx] = old
                    numeric[idx] = (up - down) / (2 * h)
            rel = (analytic - numeric).norm() / max(analytic.norm(), numeric.norm())
            assert rel <= 1e-3

    def test_uniform_init_bounds(self):
        br = SemanticBranch(100, 8, 16, torch.Generator().manual_seed(0))
        assert br.T.abs().max() <= 1 / math.sqrt(100)
        assert br.M.abs().max() <= 1 / math.sqrt(16)


class TestFlow:
    def test_init_identity(self):
        eye = torch.eye(4, dtype=torch.float64)
        st = init_flow(eye, eye)
        assert torch.equal(st.f, eye) and st.stage_index == 1

    def test_init_shape_and_oracle(self, rng):
        D, M1 = rng.normal(size=(d, v)), rng.normal(size=(v, d))
        st = init_flow(t64(D), t64(M1))
        assert st.f.shape == (d, d)
        assert np.max(np.abs(st.f.numpy() - loop_matmul(D, M1))) <= 1e-12

    def test_init_shape_error(self):
        with pytest.raises(ShapeError):
            init_flow(torch.ones(d, v), torch.ones(v + 1, d))

    def test_zero_fuser_reduces_to_local(self, rng):
        D, M2 = t64(rng.normal(size=(d, v))), t64(rng.normal(size=(v, d)))
        fz = FlowFuser(d, dtype=torch.float64)
        with torch.no_grad():
            fz.A.zero_()
        st = fuse(FlowState(t64(rng.normal(size=(d, d))), 1), D, M2, fz)
        assert torch.equal(st.f, D @ M2) and st.stage_index == 2

    def test_identity_fuser_zero_input(self, rng):
        D, M2 = t64(rng.normal(size=(d, v))), t64(rng.normal(size=(v, d)))
        fz = FlowFuser(d, dtype=torch.float64)
        with torch.no_grad():
            fz.A.copy_(torch.eye(d))
            fz.B.copy_(torch.eye(d))
        assert torch.equal(fuse(FlowState(torch.zeros(d, d, dtype=torch.float64), 1), D, M2, fz).f, D @ M2)

    def test_fuse_vs_oracle(self, rng):
        D, M2, prev = rng.normal(size=(d, v)), rng.normal(size=(v, d)), rng.normal(size=(d, d))
        fz = FlowFuser(d, generator=torch.Generator().manual_seed(4), dtype=torch.float64)
        A, B = fz.A.detach().numpy(), fz.B.detach().numpy()
        got = fuse(FlowState(t64(prev), 1), t64(D), t64(M2), fz).f.detach().numpy()
        ref = loop_matmul(A, loop_matmul(B, prev)) + loop_matmul(D, M2)
        assert np.max(np.abs(got - ref)) <= 1e-12

    def test_recursion_applies_two_fusers(self, rng):
        D = t64(rng.normal(size=(d, v)))
        Ms = [t64(rng.normal(size=(v, d))) for _ in range(3)]
        calls = []

        class Counting(FlowFuser):
            def forward(self, f):
                calls.append(1)
                return super().forward(f)

        states = flow_states(D, Ms, [Counting(d, dtype=torch.float64) for _ in range(2)])
        assert [st.stage_index for st in states] == [1, 2, 3]
        assert len(calls) == 2
        with pytest.raises(ValueError):
            flow_states(D, Ms, [])

    def test_scores_with_local_semantics_match_no_flow(self, rng):
        W, D, x = t64(rng.normal(size=(d, s + 1))), t64(rng.normal(size=(d, v))), t64(rng.normal(size=N))
        br = SemanticBranch(N, d, v, torch.Generator().manual_seed(5), dtype=torch.float64)
        a = stage_scores_with_flow(W, FlowState(D @ br.M, 1), br.T, x)
        b = torch.softmax(br(x, W, D), -1)
        assert torch.equal(a, b)
        assert abs(float(a.detach().sum()) - 1) <= 1e-12

    def test_flow_scores_vs_oracle(self, rng):
        W, D, x = rng.normal(size=(d, s + 1)), rng.normal(size=(d, v)), rng.normal(size=N)
        Ms = [rng.normal(size=(v, d)) for _ in range(3)]
        T3 = rng.normal(size=(N, d)) * 0.3
        fusers = [FlowFuser(d, generator=torch.Generator().manual_seed(6 + i), dtype=torch.float64) for i in range(2)]
        st = flow_states(t64(D), [t64(m) for m in Ms], fusers)[-1]
        got = stage_scores_with_flow(t64(W), st, t64(T3), t64(x)).detach().numpy()
        f = loop_matmul(D, Ms[0])
        for Mt, fz in zip(Ms[1:], fusers):
            f = loop_matmul(fz.A.detach().numpy(), loop_matmul(fz.B.detach().numpy(), f)) + loop_matmul(D, Mt)
        P = np.tanh(loop_matmul(loop_matmul(W.T, f.T), T3.T))
        ref = loop_softmax(loop_matmul(P, x[:, None])[:, 0])
        assert np.max(np.abs(got - ref)) <= 1e-9

    def test_gradient_through_recursion(self, rng):
        W, D, x = t64(rng.normal(size=(d, s + 1))), t64(rng.normal(size=(d, v))), t64(rng.normal(size=N))
        Ms = [torch.nn.Parameter(t64(rng.normal(size=(v, d)) * 0.3)) for _ in range(3)]
        fusers = [FlowFuser(d, generator=torch.Generator().manual_seed(9 + i), dtype=torch.float64) for i in range(2)]
        T3 = t64(rng.normal(size=(N, d)) * 0.3)

        def loss():
            st = flow_states(D, Ms, fusers)[-1]
            return -torch.log(stage_scores_with_flow(W, st, T3, x)[1])

        loss().backward()
        M1 = Ms[0]
        numeric = torch.zeros_like(M1)
        with torch.no_grad():
            for idx in np.ndindex(*M1.shape):
                old = M1[idx].item()
                M1[idx] = old + 1e-4
                up = loss().item()
                M1[idx] = old - 1e-4
                down = loss().item()
                M1[idx] = old
                numeric[idx] = (up - down) / 2e-4
        rel = (M1.grad - numeric).norm() / max(M1.grad.norm(), numeric.norm())
        assert rel <= 1e-3

    @pytest.mark.parametrize("act", ["relu", "tanh"])
    def test_activation_flag(self, act):
        fz = FlowFuser(d, act, torch.Generator().manual_seed(0), dtype=torch.float64)
        f = torch.randn(d, d, dtype=torch.float64)
        h = fz.B @ f
        h = torch.relu(h) if act == "relu" else torch.tanh(h)
        assert torch.equal(fz(f), fz.A @ h)
        with pytest.raises(ValueError):
            FlowFuser(d, "gelu")
