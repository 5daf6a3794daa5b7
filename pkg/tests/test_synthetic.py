"""Synthetic dataset generator: funnel structure, balance, determinism."""

import numpy as np
import pytest

from mbrec.data import Behavior, prepare_dataset, temporal_split
from mbrec.synthetic import TIME_LO, synthetic_log

SMALL = dict(
    num_users=60,
    num_items=100,
    num_groups=10,
    num_distractors=20,
    purchases_per_user=(3, 5),
    extra_adds=(0, 1),
    distractor_views=(6, 8),
    distractor_buyers=3,
)


def edges_by_behavior(log):
    out = [set() for _ in range(3)]
    for u, v, k in zip(log.user, log.item, log.behavior):
        out[int(k)].add((int(u), int(v)))
    return out


class TestStructure:
    def test_shapes_and_id_ranges(self):
        log = synthetic_log(**SMALL, seed=1)
        assert log.num_users == 60
        assert log.num_items == 100
        assert log.user.max() < 60
        assert log.item.max() < 100
        assert set(np.unique(log.behavior)) == {0, 1, 2}

    def test_funnel_containment_on_block_items(self):
        """Inside a user's block: every purchase is added, every add viewed."""
        log = synthetic_log(**SMALL, seed=2)
        block_items = 100 - 20
        views, adds, purchases = (
            edges_by_behavior(log)[0],
            edges_by_behavior(log)[1],
            edges_by_behavior(log)[2],
        )
        for u, v in purchases:
            if v < block_items:
                assert (u, v) in adds
        for u, v in adds:
            assert (u, v) in views

    def test_purchases_stay_in_the_users_block(self):
        log = synthetic_log(**SMALL, seed=3)
        block_items = 100 - 20
        block_size = block_items // 10
        for u, v, k, t in zip(log.user, log.item, log.behavior, log.timestamp):
            if k == Behavior.PURCHASE and v < block_items:
                assert v // block_size == u % 10

    def test_distractors_are_viewed_widely_but_rarely_bought(self):
        log = synthetic_log(**SMALL, seed=4)
        views, _, purchases = edges_by_behavior(log)
        block_items = 100 - 20
        for v in range(block_items, 100):
            viewers = sum(1 for _, vv in views if vv == v)
            buyers = sum(1 for _, vv in purchases if vv == v)
            assert buyers == 3
            assert viewers > 3 * buyers

    def test_stray_distractor_purchases_predate_the_funnel(self):
        log = synthetic_log(**SMALL, seed=5)
        block_items = 100 - 20
        for v, k, t in zip(log.item, log.behavior, log.timestamp):
            if k == Behavior.PURCHASE:
                if v >= block_items:
                    assert t < TIME_LO
                else:
                    assert t >= TIME_LO

    def test_heldout_items_are_always_block_items(self):
        log = synthetic_log(**SMALL, seed=6)
        split = temporal_split(log)
        block_items = 100 - 20
        assert len(split.test) == 60
        for mapping in (split.test, split.valid):
            assert all(v < block_items for v in mapping.values())


class TestBalance:
    def test_view_share_tracks_the_requested_multiplier(self):
        log = synthetic_log(**SMALL, seed=7, views_per_nonview=3.0)
        counts = log.counts_by_behavior()
        ratio = counts["view"] / sum(counts.values())
        assert abs(ratio - 0.75) < 0.03

    def test_scalar_multiplier_is_exact_per_user(self):
        log = synthetic_log(**SMALL, seed=8, views_per_nonview=3.0)
        views, adds, purchases = edges_by_behavior(log)
        block_items = 100 - 20
        for u in range(60):
            n_v = sum(1 for uu, _ in views if uu == u)
            n_p = sum(1 for uu, vv in purchases if uu == u and vv < block_items)
            n_a = sum(1 for uu, _ in adds if uu == u)
            assert n_v == round(3.0 * (n_p + n_a))

    def test_range_multiplier_spreads_per_user_intensity(self):
        log = synthetic_log(**SMALL, seed=9, views_per_nonview=(1.0, 5.0))
        views, adds, purchases = edges_by_behavior(log)
        block_items = 100 - 20
        ratios = []
        for u in range(60):
            n_v = sum(1 for uu, _ in views if uu == u)
            n_p = sum(1 for uu, vv in purchases if uu == u and vv < block_items)
            n_a = sum(1 for uu, _ in adds if uu == u)
            ratios.append(n_v / (n_p + n_a))
        assert np.std(ratios) > 0.5
        assert min(ratios) < 2.0 < 4.0 < max(ratios)


class TestDeterminism:
    def test_same_seed_reproduces_the_log(self):
        a = synthetic_log(**SMALL, seed=11)
        b = synthetic_log(**SMALL, seed=11)
        assert np.array_equal(a.user, b.user)
        assert np.array_equal(a.item, b.item)
        assert np.array_equal(a.behavior, b.behavior)
        assert np.array_equal(a.timestamp, b.timestamp)

    def test_different_seeds_differ(self):
        a = synthetic_log(**SMALL, seed=11)
        b = synthetic_log(**SMALL, seed=12)
        assert (len(a) != len(b)) or not np.array_equal(a.item, b.item)


class TestValidation:
    def test_rejects_too_many_distractors(self):
        with pytest.raises(ValueError, match="more items"):
            synthetic_log(num_items=20, num_distractors=20)

    def test_rejects_uneven_blocks(self):
        with pytest.raises(ValueError, match="evenly"):
            synthetic_log(num_items=105, num_groups=10, num_distractors=20)

    def test_rejects_overfull_blocks(self):
        with pytest.raises(ValueError, match="block too small"):
            synthetic_log(
                num_users=10,
                num_items=30,
                num_groups=10,
                num_distractors=10,
                purchases_per_user=(2, 2),
                extra_adds=(1, 1),
            )


class TestDefaultCorpus:
    def test_default_dataset_is_eval_ready(self):
        """The stock generator output splits cleanly for every user."""
        log = synthetic_log(seed=0)
        prepared = prepare_dataset(log, apply_filter=False)
        assert prepared.stats["num_users"] == 500
        assert prepared.stats["num_items"] == 200
        assert prepared.stats["eval_users"] == 500
        assert prepared.stats["skipped_users"] == 0
        assert abs(prepared.stats["view_ratio"] - 0.75) < 0.03
        # purchase frequency covers distractors through the stray buys
        purchase_row = prepared.freq.counts[int(Behavior.PURCHASE)]
        assert np.all(purchase_row[180:] > 0)
