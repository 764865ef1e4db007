import numpy as np
import pytest

from clue_ada.numerics import softmax_rows
from clue_ada.sampling import (
    STRATEGIES,
    AcquisitionRequest,
    StrategyConfig,
    badge_gradient_embeddings,
    select,
    select_aada,
    select_badge,
    select_clue,
    select_coreset,
    select_entropy,
    select_margin,
    select_uniform,
)
from clue_ada.uncertainty import entropy_rows


def make_request(embeddings, probs=None, logits=None, budget=1, indices=None, seed=0):
    emb = np.asarray(embeddings, dtype=np.float64)
    n = emb.shape[0]
    if logits is None and probs is None:
        logits = np.zeros((n, 2))
    if probs is None:
        probs = softmax_rows(logits, 1.0)
    if logits is None:
        logits = np.log(np.maximum(np.asarray(probs, dtype=np.float64), 1e-300))
    if indices is None:
        indices = np.arange(n)
    return AcquisitionRequest(
        budget=budget,
        embeddings=emb,
        probs=np.asarray(probs, dtype=np.float64),
        logits=np.asarray(logits, dtype=np.float64),
        unlabeled_indices=np.asarray(indices, dtype=np.int64),
        rng_seed=seed,
    )


def random_request(rng, n=30, c=4, d=3, budget=5, seed=0, offset=0):
    emb = rng.normal(size=(n, d))
    logits = rng.normal(size=(n, c)) * 2
    return make_request(
        emb, probs=softmax_rows(logits, 1.0), logits=logits, budget=budget,
        indices=np.arange(n) + offset, seed=seed,
    )


class TestRequestValidation:
    def test_budget_bounds(self):
        with pytest.raises(ValueError, match="budget"):
            make_request(np.zeros((3, 2)), budget=4)

    def test_duplicate_indices(self):
        with pytest.raises(ValueError, match="duplicates"):
            make_request(np.zeros((2, 2)), indices=[5, 5])

    def test_row_alignment(self):
        with pytest.raises(ValueError, match="aligned"):
            AcquisitionRequest(
                budget=1,
                embeddings=np.zeros((2, 2)),
                probs=np.full((3, 2), 0.5),
                logits=np.zeros((2, 2)),
                unlabeled_indices=np.array([0, 1]),
            )


class TestStrategyContracts:
    @pytest.mark.parametrize("name", STRATEGIES)
    def test_distinct_budget_indices_and_determinism(self, name):
        rng = np.random.default_rng(hash(name) % 2**32)
        cfg = StrategyConfig(name=name)
        for trial in range(30):
            req = random_request(rng, budget=4, seed=trial, offset=100)
            labeled = rng.normal(size=(3, 3)) if name == "coreset" else None
            got = select(req, cfg, labeled_embeddings=labeled)
            again = select(req, cfg, labeled_embeddings=labeled)
            assert got == again
            assert len(got) == 4 == len(set(got))
            assert set(got) <= set(req.unlabeled_indices.tolist())


class TestSelectEntropy:
    def test_budget_equals_pool(self):
        req = make_request(np.zeros((3, 1)), probs=np.full((3, 2), 0.5), budget=3)
        assert sorted(select_entropy(req)) == [0, 1, 2]

    def test_picks_uniform_row(self):
        probs = np.array([[1.0, 0.0], [0.5, 0.5], [0.6, 0.4]])
        req = make_request(np.zeros((3, 1)), probs=probs, budget=1)
        assert select_entropy(req) == [1]

    def test_order_by_entropy(self):
        probs = np.array([[1.0, 0.0], [0.5, 0.5], [0.6, 0.4]])
        h = entropy_rows(probs)
        assert h[1] > h[2] > h[0]
        req = make_request(np.zeros((3, 1)), probs=probs, budget=2)
        assert select_entropy(req) == [1, 2]

    def test_tie_breaks_to_lower_index(self):
        probs = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
        req = make_request(np.zeros((3, 1)), probs=probs, budget=2, indices=[7, 3, 5])
        assert select_entropy(req) == [3, 5]


class TestSelectMargin:
    def test_one_hot_tie_break(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        req = make_request(np.zeros((2, 1)), probs=probs, budget=1)
        assert select_margin(req) == [0]

    def test_picks_smallest_margin(self):
        probs = np.array([[0.9, 0.1], [0.5, 0.5]])
        req = make_request(np.zeros((2, 1)), probs=probs, budget=1)
        assert select_margin(req) == [1]

    def test_two_smallest(self):
        probs = np.array([[0.6, 0.4], [0.75, 0.25], [0.55, 0.45]])  # margins .2/.5/.1
        req = make_request(np.zeros((3, 1)), probs=probs, budget=2)
        assert select_margin(req) == [2, 0]

    def test_agrees_with_entropy_for_two_classes(self):
        rng = np.random.default_rng(5)
        for trial in range(20):
            p0 = rng.uniform(0.01, 0.99, size=12)
            probs = np.stack([p0, 1 - p0], axis=1)
            req = make_request(np.zeros((12, 1)), probs=probs, budget=5, seed=trial)
            assert select_entropy(req) == select_margin(req)


class TestSelectCoreset:
    def setup_method(self):
        self.points = np.array([[0.0], [1.0], [9.0], [10.0]])

    def test_farthest_from_labeled(self):
        req = make_request(self.points[1:], indices=[1, 2, 3], budget=1)
        assert select_coreset(req, labeled_embeddings=self.points[:1]) == [3]

    def test_second_pick_tie_to_lower_index(self):
        req = make_request(self.points[1:], indices=[1, 2, 3], budget=2)
        # After 10 is taken, min-dist(1)=1 (to 0), min-dist(9)=1 (to 10): tie -> index 1.
        assert select_coreset(req, labeled_embeddings=self.points[:1]) == [3, 1]

    def test_degenerate_full_coverage(self):
        req = make_request(self.points, budget=3)
        got = select_coreset(req, labeled_embeddings=self.points.copy())
        assert got == [0, 1, 2]  # all min-dists 0, index order

    def test_cold_start_uses_pool_mean(self):
        # Mean is 5; points 0 and 10 tie at distance 25, so the lower index
        # wins the first pick and 10 follows as the farthest from {0}.
        req = make_request(self.points, budget=2)
        assert select_coreset(req, labeled_embeddings=None) == [0, 3]


class TestBadgeGradientEmbeddings:
    def test_confident_one_hot_is_zero(self):
        g = badge_gradient_embeddings([[1.0, 0.0]], [[2.0, 3.0]])
        assert np.allclose(g, 0.0)

    def test_tied_row_formula(self):
        g = badge_gradient_embeddings([[0.5, 0.5]], [[1.0]])
        assert np.allclose(g, [[-0.5, 0.5]])

    def test_matches_finite_difference(self):
        rng = np.random.default_rng(3)
        c, d = 4, 3
        w = rng.normal(size=(c, d))
        b = rng.normal(size=c)
        phi = rng.normal(size=d)

        def ce_of(weight):
            logits = weight @ phi + b
            z = logits - logits.max()
            logp = z - np.log(np.exp(z).sum())
            yhat = int(np.argmax((w @ phi + b)))  # pseudo-label fixed at base point
            return -logp[yhat]

        probs = softmax_rows((w @ phi + b)[None, :], 1.0)
        analytic = badge_gradient_embeddings(probs, phi[None, :]).reshape(c, d)
        h = 1e-6
        for i in range(c):
            for j in range(d):
                wp, wm = w.copy(), w.copy()
                wp[i, j] += h
                wm[i, j] -= h
                fd = (ce_of(wp) - ce_of(wm)) / (2 * h)
                denom = max(abs(fd), abs(analytic[i, j]), 1e-8)
                assert abs(fd - analytic[i, j]) / denom < 1e-4


class TestSelectBadge:
    def test_first_seed_proportional_to_grad_norm(self):
        # Three instances with distinct gradient masses; B=1 draws should
        # follow ||g||^2 proportions across seeds (chi-square, fixed seeds).
        probs = np.array([[0.5, 0.5], [0.75, 0.25], [0.9, 0.1]])
        emb = np.array([[2.0], [2.0], [2.0]])
        g = badge_gradient_embeddings(probs, emb)
        mass = (g * g).sum(axis=1)
        expected = mass / mass.sum()
        counts = np.zeros(3)
        draws = 4000
        for seed in range(draws):
            req = make_request(emb, probs=probs, budget=1, seed=seed)
            counts[select_badge(req)[0]] += 1
        chi2 = float((((counts - draws * expected) ** 2) / (draws * expected)).sum())
        assert chi2 < 13.8  # dof=2, p=0.001

    def test_identical_embeddings_degenerate(self):
        probs = np.full((6, 2), 0.5)
        emb = np.ones((6, 1))
        req = make_request(emb, probs=probs, budget=3, seed=11)
        got = select_badge(req)
        assert len(set(got)) == 3
        assert got == select_badge(req)

    def test_two_gradient_clusters_covered(self):
        # Groups with |phi| ratio 100 -> gradient clusters far apart.
        emb = np.concatenate([np.full((5, 1), 0.01), np.full((5, 1), 1.0)])
        probs = np.tile([[0.6, 0.4]], (10, 1))
        hits = 0
        runs = 1000
        for seed in range(runs):
            req = make_request(emb, probs=probs, budget=2, seed=seed)
            got = select_badge(req)
            if min(got) < 5 <= max(got):
                hits += 1
        assert hits / runs >= 0.99


class TestSelectAada:
    def test_all_one_hot_degenerates_to_uniform_over_candidates(self):
        probs = np.eye(4)
        req = make_request(np.zeros((4, 1)), probs=probs, budget=2, seed=3)
        got = select_aada(req, StrategyConfig(name="aada", aada_top_fraction=1.0))
        assert len(set(got)) == 2
        assert got == select_aada(req, StrategyConfig(name="aada", aada_top_fraction=1.0))

    def test_unique_uncertain_row_wins(self):
        probs = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
        req = make_request(np.zeros((3, 1)), probs=probs, budget=1, seed=9)
        got = select_aada(req, StrategyConfig(name="aada", aada_top_fraction=0.01))
        assert got == [1]

    def test_entropy_increase_never_lowers_rank(self):
        rng = np.random.default_rng(7)
        base = rng.dirichlet(np.ones(3), size=8)
        cfg = StrategyConfig(name="aada", aada_top_fraction=1.0)

        def score_rank(probs, row):
            t = entropy_rows(probs) / np.log(3)
            s = (t / (1 - t + 1e-8)) * entropy_rows(probs)
            return int((s > s[row]).sum())

        for row in range(8):
            perturbed = base.copy()
            perturbed[row] = 0.5 * perturbed[row] + 0.5 / 3  # strictly higher entropy
            assert score_rank(perturbed, row) <= score_rank(base, row)


class TestSelectUniform:
    def test_full_budget_returns_everything(self):
        req = make_request(np.zeros((5, 1)), probs=np.full((5, 2), 0.5), budget=5)
        assert sorted(select_uniform(req)) == [0, 1, 2, 3, 4]

    def test_deterministic(self):
        req = make_request(np.zeros((10, 1)), probs=np.full((10, 2), 0.5), budget=3, seed=77)
        assert select_uniform(req) == select_uniform(req)

    def test_single_draw_frequencies(self):
        counts = np.zeros(4)
        draws = 10000
        emb = np.zeros((4, 1))
        probs = np.full((4, 2), 0.5)
        for seed in range(draws):
            req = make_request(emb, probs=probs, budget=1, seed=seed)
            counts[select_uniform(req)[0]] += 1
        sigma = np.sqrt(draws * 0.25 * 0.75)
        assert np.all(np.abs(counts - draws * 0.25) <= 3 * sigma)


class TestSelectClue:
    def test_budget_one_is_nearest_to_weighted_mean(self):
        rng = np.random.default_rng(1)
        emb = rng.normal(size=(12, 2))
        logits = rng.normal(size=(12, 3))
        probs = softmax_rows(logits, 1.0)
        req = make_request(emb, probs=probs, logits=logits, budget=1, seed=4)
        got = select_clue(req, StrategyConfig(name="clue"))
        h = entropy_rows(probs)
        mu = (h[:, None] * emb).sum(axis=0) / h.sum()
        expected = int(np.argmin(((emb - mu) ** 2).sum(axis=1)))
        assert got == [expected]

    def test_three_separated_clusters_one_pick_each(self):
        rng = np.random.default_rng(2)
        centers = np.array([[0.0, 0.0], [50.0, 0.0], [0.0, 50.0]])
        emb = np.concatenate([c + rng.normal(scale=0.5, size=(6, 2)) for c in centers])
        req = make_request(emb, probs=np.full((18, 4), 0.25), budget=3, seed=0)
        got = select_clue(req, StrategyConfig(name="clue", clue_weight_kind="uniform"))
        assert {i // 6 for i in got} == {0, 1, 2}

    def test_entropy_weighting_focuses_uncertain_cluster(self):
        # Two tight clusters; one has ~zero entropy, the other near-maximal,
        # so with entropy weights both picks land in the uncertain cluster.
        rng = np.random.default_rng(3)
        emb = np.concatenate(
            [np.array([0.0, 0.0]) + 0.1 * rng.normal(size=(10, 2)),
             np.array([8.0, 0.0]) + 0.1 * rng.normal(size=(10, 2))]
        )
        confident = np.tile([[1.0 - 1e-9, 1e-9]], (10, 1))
        uncertain = np.tile([[0.5, 0.5]], (10, 1))
        probs = np.concatenate([confident, uncertain])
        req = make_request(emb, probs=probs, budget=2, seed=5)
        got = select_clue(req, StrategyConfig(name="clue", clue_weight_kind="entropy"))
        assert all(i >= 10 for i in got)

    def test_uniform_kind_equals_plain_kmeans_pipeline(self):
        from clue_ada.clustering import ClusterConfig, nearest_to_centroids, weighted_kmeans
        from clue_ada.uncertainty import UncertaintyWeights

        rng = np.random.default_rng(8)
        emb = rng.normal(size=(20, 2))
        req = make_request(emb, probs=np.full((20, 3), 1 / 3), budget=4, seed=21)
        got = select_clue(req, StrategyConfig(name="clue", clue_weight_kind="uniform"))
        state = weighted_kmeans(
            emb, UncertaintyWeights(np.ones(20), "uniform"), ClusterConfig(k=4, seed=21)
        )
        assert got == nearest_to_centroids(state, emb, range(20))
