import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from horace import tensor as tn
from horace.contrast import (
    ContrastConfig,
    MixupPlan,
    ProjectionHead,
    critic,
    info_nce,
    make_plans,
    negative_bank,
    sample_mixup,
    synthesize_negatives,
    total_objective,
)
from horace.encoder import EncoderOutput, HeteroEncoder
from horace.structure import build_candidates
from horace.tensor import Tensor

from conftest import max_grad_error


def cos(a, b):
    return a @ b / (np.linalg.norm(a) * np.linalg.norm(b))


def nce_reference(anchor, positive, negatives, tau):
    s = [cos(anchor, positive)] + [cos(anchor, h) for h in negatives]
    s = np.array(s) / tau
    return np.log(np.exp(s).sum()) - s[0]


def enc_output(views, H):
    return EncoderOutput([tn.tensor(v) for v in views], tn.tensor(H), Tensor(np.full(len(views), 1 / len(views))))


def explicit_objective(views, H, plans, tau, head=None):
    """Per-anchor loop over the bank definition; numpy only."""
    g = (lambda x: x) if head is None else (lambda x: head(Tensor(x)).data)
    views, H = [np.asarray(v) for v in views], np.asarray(H)
    n = H.shape[0]
    total = 0.0
    for p, hp in enumerate(views):
        pool = np.vstack([hp, H])
        for i in range(n):
            synth = []
            if plans[p] is not None:
                for a, b, lam in zip(plans[p].first[i], plans[p].second[i], plans[p].weights[i]):
                    synth.append(lam * pool[a] + (1 - lam) * pool[b])
            others = [j for j in range(n) if j != i]
            fwd_bank = [g(hp[j]) for j in others] + [g(H[j]) for j in others] + [g(s) for s in synth]
            total += nce_reference(g(hp[i]), g(H[i]), fwd_bank, tau)
            total += nce_reference(g(H[i]), g(hp[i]), fwd_bank, tau)
    return total / (2 * n * len(views))


class TestCritic:
    def test_self_similarity(self, rng):
        u = rng.normal(size=6)
        assert critic(u, u, ProjectionHead(6, rng=1)).item() == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_projections(self):
        head = ProjectionHead.identity(2)
        assert critic([1.0, 0.0], [0.0, 1.0], head).item() == pytest.approx(0.0, abs=1e-15)

    def test_identity_head_is_plain_cosine(self, rng):
        # elu is the identity on the positive orthant
        u, v = rng.uniform(0.1, 2, 5), rng.uniform(0.1, 2, 5)
        assert critic(u, v, ProjectionHead.identity(5)).item() == pytest.approx(cos(u, v), abs=1e-12)
        x, y = rng.normal(size=5), rng.normal(size=5)
        assert critic(x, y).item() == pytest.approx(cos(x, y), abs=1e-12)

    def test_range(self, rng):
        head = ProjectionHead(4, rng=0)
        for _ in range(20):
            assert -1.0 <= critic(rng.normal(size=4), rng.normal(size=4), head).item() <= 1.0

    def test_zero_projection(self):
        with pytest.raises(ValueError, match="zero-norm"):
            critic([0.0, 0.0], [1.0, 0.0])


class TestSynthesis:
    def test_midpoint(self):
        out = synthesize_negatives([0, 1], np.eye(2), 1, weights=0.5, rng=0)
        np.testing.assert_allclose(out.data, [[0.5, 0.5]])

    def test_weight_one_copies_an_endpoint(self, rng):
        emb = rng.normal(size=(6, 3))
        cands = np.array([1, 4, 5])
        out = synthesize_negatives(cands, emb, 10, weights=1.0, rng=0).data
        for row in out:
            assert any(np.array_equal(row, emb[c]) for c in cands)

    def test_outputs_lie_on_a_candidate_segment(self, rng):
        emb = rng.normal(size=(10, 4))
        cands = np.array([2, 3, 7, 9])
        out = synthesize_negatives(cands, emb, 25, alpha=0.7, rng=3).data
        for row in out:
            best = np.inf
            for a, b in itertools.permutations(cands, 2):
                d = emb[a] - emb[b]
                lam = np.clip(d @ (row - emb[b]) / (d @ d), 0.0, 1.0)
                best = min(best, np.abs(lam * emb[a] + (1 - lam) * emb[b] - row).max())
            assert best < 1e-10

    def test_deterministic_given_seed(self, rng):
        emb = rng.normal(size=(5, 2))
        a = synthesize_negatives([0, 1, 2], emb, 4, rng=9).data
        b = synthesize_negatives([0, 1, 2], emb, 4, rng=9).data
        np.testing.assert_array_equal(a, b)

    def test_needs_two_candidates(self):
        with pytest.raises(ValueError, match="2 candidates"):
            synthesize_negatives([3], np.eye(4), 2)

    def test_gradient_reaches_only_endpoints(self, rng):
        emb = Tensor(rng.normal(size=(8, 3)), requires_grad=True)
        cands = np.array([1, 6])
        out = synthesize_negatives(cands, emb, 5, rng=2)
        tn.backward(tn.sum(out * rng.normal(size=(5, 3))))
        touched = np.flatnonzero(np.abs(emb.grad).sum(1))
        assert set(touched) <= {1, 6}

    def test_sample_mixup_endpoints(self, rng):
        lists = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
        plan = sample_mixup(lists, 50, 1.0, np.random.default_rng(0))
        assert plan.first.shape == plan.second.shape == (4, 50)
        assert np.all(plan.first != plan.second)
        for i in range(4):
            assert set(plan.first[i]) | set(plan.second[i]) <= set(lists[i])
        assert np.all((plan.weights >= 0) & (plan.weights <= 1))

    def test_bank_pool_excludes_anchor_and_positive(self):
        n = 5
        plan = sample_mixup(None, 200, 1.0, np.random.default_rng(1), pool="bank", n_nodes=n)
        for i in range(n):
            ids = set(plan.first[i]) | set(plan.second[i])
            assert i not in ids and n + i not in ids
            assert ids == set(range(2 * n)) - {i, n + i}

    def test_mixing_matrix_rows_are_convex(self, rng):
        plan = sample_mixup(np.array([[1, 2], [0, 2], [0, 1]]), 3, 1.0, rng)
        m = plan.mixing_matrix().toarray()
        assert m.shape == (9, 6)
        np.testing.assert_allclose(m.sum(1), 1.0)
        assert np.all(m >= 0)


class TestInfoNCE:
    def test_uniform_similarities(self):
        v = np.array([1.0, 2.0])
        loss = info_nce(v, v, np.tile(v, (3, 1)), tau=0.5)
        assert abs(loss.item() - np.log(4)) < 1e-10

    @pytest.mark.parametrize("size", [1, 7, 20])
    def test_uniform_general_bank(self, size, rng):
        v = rng.normal(size=3)
        loss = info_nce(v, v, np.tile(v, (size, 1)), tau=0.3, head=ProjectionHead(3, rng=0))
        assert abs(loss.item() - np.log(size + 1)) < 1e-10

    def test_perfect_alignment_limit(self):
        a = np.array([1.0, 0.0, 0.0])
        negs = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        losses = [info_nce(a, a, negs, tau).item() for tau in (1.0, 0.1, 0.02)]
        assert losses[0] > losses[1] > losses[2]
        assert losses[2] < 1e-20

    def test_five_node_brute_force(self, rng):
        h = rng.normal(size=(5, 4))
        hp = rng.normal(size=(5, 4))
        head = ProjectionHead(4, rng=5)
        g = lambda x: head(Tensor(x)).data
        for i in range(5):
            bank = negative_bank(i, hp, h)
            got = info_nce(hp[i], h[i], bank, 0.5, head).item()
            want = nce_reference(g(hp[i]), g(h[i]), [g(x) for x in bank.stacked().data], 0.5)
            assert abs(got - want) < 1e-10

    def test_positive(self, rng):
        x = rng.normal(size=(4, 3))
        assert info_nce(x[0], x[1], x[2:], 1.0).item() > 0

    def test_errors(self):
        with pytest.raises(ValueError, match="tau"):
            info_nce([1.0], [1.0], [[1.0]], 0.0)
        with pytest.raises(ValueError, match="empty"):
            info_nce([1.0], [1.0], np.zeros((0, 1)), 1.0)

    def test_raising_a_negative_score_increases_loss(self, rng):
        a, pos = rng.normal(size=3), rng.normal(size=3)
        negs = rng.normal(size=(4, 3))
        base = info_nce(a, pos, negs, 0.5).item()
        closer = negs.copy()
        closer[2] = 0.5 * negs[2] + 0.5 * a / np.linalg.norm(a) * np.linalg.norm(negs[2])
        assert cos(a, closer[2]) > cos(a, negs[2])
        assert info_nce(a, pos, closer, 0.5).item() > base
        assert info_nce(a, pos, np.vstack([negs, a]), 0.5).item() > base


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 12), m=st.integers(0, 10), seed=st.integers(0, 10_000))
def test_bank_size_law(n, m, seed):
    rng = np.random.default_rng(seed)
    hp, h = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    synth = rng.normal(size=(m, 3)) if m else None
    for i in range(n):
        bank = negative_bank(i, hp, h, synth)
        assert bank.size == 2 * (n - 1) + m == bank.stacked().shape[0]
        rows = bank.stacked().data[: 2 * (n - 1)]
        assert not any(np.array_equal(r, hp[i]) or np.array_equal(r, h[i]) for r in rows)


class TestObjective:
    def instance(self, rng, n=6, n_views=2, d=4):
        views = [rng.normal(size=(n, d)) for _ in range(n_views)]
        H = rng.normal(size=(n, d))
        return views, H

    def test_matches_per_anchor_loop(self, rng):
        views, H = self.instance(rng)
        head = ProjectionHead(4, rng=0)
        lists = [np.array([[j for j in range(6) if j != i][:3] for i in range(6)])] * 2
        cfg = ContrastConfig(tau=0.7, n_synth=4, variant="ppr", top_t=3)
        out = enc_output(views, H)
        plans = make_plans(out, cfg, lists, rng=1)
        got = total_objective(out, head, cfg, plans=plans).item()
        assert abs(got - explicit_objective(views, H, plans, 0.7, head)) < 1e-10

    def test_bank_pool_matches_loop(self, rng):
        views, H = self.instance(rng, n=5)
        cfg = ContrastConfig(tau=0.5, n_synth=3, variant="pe", pool="bank")
        out = enc_output(views, H)
        plans = make_plans(out, cfg, rng=2)
        head = ProjectionHead(4, rng=4)
        got = total_objective(out, head, cfg, plans=plans).item()
        assert abs(got - explicit_objective(views, H, plans, 0.5, head)) < 1e-10

    def test_no_synthesis_equals_none(self, rng):
        views, H = self.instance(rng)
        head = ProjectionHead(4, rng=0)
        out = enc_output(views, H)
        none = total_objective(out, head, ContrastConfig(variant="none", n_synth=5)).item()
        empty = total_objective(out, head, ContrastConfig(variant="pe", n_synth=0)).item()
        assert none == empty
        assert abs(none - explicit_objective(views, H, [None, None], 0.5, head)) < 1e-10

    def test_two_nodes_one_view_by_hand(self):
        hp = np.array([[1.0, 0.0], [0.0, 1.0]])
        H = np.array([[1.0, 1.0], [1.0, -1.0]])
        tau = 0.5
        c = lambda a, b: np.exp(cos(a, b) / tau)
        terms = []
        for i, j in ((0, 1), (1, 0)):
            fwd = -np.log(c(hp[i], H[i]) / (c(hp[i], H[i]) + c(hp[i], hp[j]) + c(hp[i], H[j])))
            rev = -np.log(c(H[i], hp[i]) / (c(H[i], hp[i]) + c(H[i], hp[j]) + c(H[i], H[j])))
            terms.append(0.5 * (fwd + rev))
        want = np.mean(terms)
        identity = lambda x: x
        got = total_objective(enc_output([hp], H), identity, ContrastConfig(tau=tau, variant="none")).item()
        assert abs(got - want) < 1e-12

    def test_direction_average_is_order_invariant(self, rng):
        views, H = self.instance(rng, n_views=1)
        head = ProjectionHead(4, rng=3)
        cfg = ContrastConfig(variant="none")
        a = total_objective(enc_output(views, H), head, cfg).item()
        b = total_objective(enc_output([H], views[0]), head, cfg).item()
        assert abs(a - b) < 1e-12

    def test_sem_ranks_by_current_embeddings(self, rng):
        views, H = self.instance(rng)
        out = enc_output(views, H)
        cfg = ContrastConfig(variant="sem", n_synth=6, top_t=2)
        plans = make_plans(out, cfg, rng=0)
        for p, hp in enumerate(views):
            s = hp @ hp.T
            np.fill_diagonal(s, -np.inf)
            top2 = np.argsort(-s, axis=1, kind="stable")[:, :2]
            for i in range(6):
                assert set(plans[p].first[i]) | set(plans[p].second[i]) <= set(top2[i])

    def test_structural_variant_needs_lists(self, rng):
        views, H = self.instance(rng)
        with pytest.raises(ValueError, match="candidate"):
            make_plans(enc_output(views, H), ContrastConfig(variant="pe", n_synth=2), None, rng=0)

    def test_config_validation(self):
        for kw in (dict(tau=0), dict(n_synth=-1), dict(alpha=0), dict(variant="x"), dict(pool="queue")):
            with pytest.raises(ValueError):
                ContrastConfig(**kw)

    @pytest.mark.parametrize("variant", ["none", "pe", "ppr", "sem"])
    def test_full_objective_gradient(self, variant):
        rng = np.random.default_rng(11)
        n = 6
        masks = [(rng.random((n, n)) < 0.4) | np.eye(n, dtype=bool) for _ in range(2)]
        masks = [m | m.T for m in masks]
        X = rng.normal(size=(n, 3))
        enc = HeteroEncoder(2, 3, n_heads=2, dim=4, att_dim=3, rng=0)
        head = ProjectionHead(4, rng=1)
        cfg = ContrastConfig(tau=0.5, n_synth=3, variant=variant, top_t=3)
        lists = [build_candidates(m.astype(float), "ppr", top_t=3).lists for m in masks]
        plans = make_plans(enc(masks, X), cfg, lists, rng=2)
        params = enc.parameters() + head.parameters()
        err = max_grad_error(lambda: total_objective(enc(masks, X), head, cfg, plans=plans), params)
        assert err < 1e-4

    def test_plan_is_a_fixed_draw(self, rng):
        views, H = self.instance(rng)
        cfg = ContrastConfig(n_synth=2, variant="ppr", top_t=3)
        lists = [np.tile(np.arange(1, 4), (6, 1))] * 2
        a = make_plans(enc_output(views, H), cfg, lists, rng=5)
        b = make_plans(enc_output(views, H), cfg, lists, rng=5)
        for x, y in zip(a, b):
            assert isinstance(x, MixupPlan)
            np.testing.assert_array_equal(x.weights, y.weights)
