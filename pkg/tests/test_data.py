"""Dataset ingestion, deduplication, filtering and the temporal split."""

import numpy as np
import pytest

from conftest import make_log, random_log
from mbrec.data import (
    Behavior,
    ColumnSchema,
    DatasetError,
    EmptyDatasetError,
    ParseError,
    SchemaError,
    behavior_frequency,
    deduplicate,
    filter_activity,
    load_indexed_interactions,
    load_interactions,
    prepare_dataset,
    load_prepared,
    save_prepared,
    temporal_split,
    write_interactions,
)


class TestBehaviorEnum:
    def test_parse_accepts_any_case(self):
        assert Behavior.parse("view") is Behavior.VIEW
        assert Behavior.parse("  ADD ") is Behavior.ADD
        assert Behavior.parse("Purchase") is Behavior.PURCHASE

    def test_parse_rejects_unknown_label(self):
        with pytest.raises(SchemaError, match="unknown behavior label"):
            Behavior.parse("click")

    def test_labels_round_trip(self):
        for b in Behavior:
            assert Behavior.parse(b.label) is b


class TestLoadInteractions:
    def test_reindexes_ids_by_first_appearance(self, tmp_path):
        path = tmp_path / "raw.tsv"
        path.write_text(
            "u9\ti7\tview\t5\n"
            "u2\ti7\tpurchase\t6\n"
            "u9\ti1\tadd\t7\n"
        )
        log = load_interactions(path)
        assert log.user.tolist() == [0, 1, 0]
        assert log.item.tolist() == [0, 0, 1]
        assert log.user_ids == ["u9", "u2"]
        assert log.item_ids == ["i7", "i1"]
        assert log.num_users == 2 and log.num_items == 2
        assert log.counts_by_behavior() == {"view": 1, "add": 1, "purchase": 1}

    def test_blank_lines_are_skipped(self, tmp_path):
        path = tmp_path / "raw.tsv"
        path.write_text("\nu1\ti1\tview\t3\n   \nu1\ti2\tadd\t4\n")
        log = load_interactions(path)
        assert len(log) == 2

    def test_bad_timestamp_reports_line_number(self, tmp_path):
        path = tmp_path / "raw.tsv"
        path.write_text("u1\ti1\tview\t3\nu1\ti2\tadd\tnope\n")
        with pytest.raises(ParseError, match="line 2"):
            load_interactions(path)

    def test_too_few_columns_is_an_error(self, tmp_path):
        path = tmp_path / "raw.tsv"
        path.write_text("u1\ti1\tview\n")
        with pytest.raises(DatasetError):
            load_interactions(path)

    def test_custom_column_order(self, tmp_path):
        path = tmp_path / "raw.tsv"
        path.write_text("7\tpurchase\tu1\ti1\n")
        schema = ColumnSchema(user=2, item=3, behavior=1, timestamp=0)
        log = load_interactions(path, schema=schema)
        assert len(log) == 1
        assert log.behavior.tolist() == [int(Behavior.PURCHASE)]
        assert log.timestamp.tolist() == [7]

    def test_round_trip_through_write(self, tmp_path):
        rng = np.random.default_rng(11)
        log = random_log(rng, num_users=6, num_items=9, num_events=40)
        path = tmp_path / "out.tsv"
        write_interactions(log, path)
        back = load_indexed_interactions(path, log.num_users, log.num_items)
        assert back.user.tolist() == log.user.tolist()
        assert back.item.tolist() == log.item.tolist()
        assert back.behavior.tolist() == log.behavior.tolist()
        assert back.timestamp.tolist() == log.timestamp.tolist()


class TestValidate:
    def test_out_of_range_user_rejected(self):
        log = make_log([(0, 0, 0, 1)], num_users=1, num_items=1)
        log.user[0] = 5
        with pytest.raises(DatasetError, match="user index"):
            log.validate()

    def test_mismatched_arrays_rejected(self):
        log = make_log([(0, 0, 0, 1), (0, 0, 1, 2)])
        log.item = log.item[:1]
        with pytest.raises(DatasetError, match="mismatched"):
            log.validate()


class TestDeduplicate:
    def test_keeps_latest_timestamp_per_edge(self):
        log = make_log(
            [
                (0, 0, 0, 5),
                (0, 0, 0, 9),
                (0, 0, 0, 2),
                (0, 0, 1, 3),
                (1, 0, 0, 4),
            ]
        )
        out = deduplicate(log)
        assert out.deduplicated
        assert len(out) == 3
        kept = {
            (int(u), int(v), int(k)): int(t)
            for u, v, k, t in zip(out.user, out.item, out.behavior, out.timestamp)
        }
        assert kept[(0, 0, 0)] == 9
        assert kept[(0, 0, 1)] == 3
        assert kept[(1, 0, 0)] == 4

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        log = random_log(rng, num_users=5, num_items=4, num_events=60)
        once = deduplicate(log)
        twice = deduplicate(once)
        assert len(once) == len(twice)
        assert np.array_equal(once.user, twice.user)
        assert np.array_equal(once.timestamp, twice.timestamp)

    def test_matches_brute_force_on_random_logs(self):
        rng = np.random.default_rng(17)
        for trial in range(20):
            log = random_log(rng, 6, 5, 50, ensure_purchases=False)
            out = deduplicate(log)
            expect = {}
            for u, v, k, t in zip(log.user, log.item, log.behavior, log.timestamp):
                key = (int(u), int(v), int(k))
                expect[key] = max(expect.get(key, -1), int(t))
            got = {
                (int(u), int(v), int(k)): int(t)
                for u, v, k, t in zip(out.user, out.item, out.behavior, out.timestamp)
            }
            assert got == expect, f"trial {trial}"


class TestFilterActivity:
    def test_drops_below_threshold_entities(self):
        # user 2 touches only one item; item 3 is touched by one user
        rows = []
        for u in range(2):
            for v in range(3):
                rows.append((u, v, 0, 10 + v))
                rows.append((u, v, 2, 20 + v))
        rows.append((2, 0, 0, 5))
        rows.append((0, 3, 0, 6))
        log = make_log(rows)
        out = filter_activity(log, min_interactions=2, min_purchases=1)
        assert out.num_users == 2
        assert out.num_items == 3

    def test_cascade_reaches_fixpoint(self):
        """Removing one item can strand a user; both must end up gone."""
        rows = []
        # core: users 0-2 x items 0-2, dense views plus purchases
        for u in range(3):
            for v in range(3):
                rows.append((u, v, 0, 100))
                rows.append((u, v, 2, 200))
        # user 3 clears the bar only while item 3 is still alive
        rows.append((3, 3, 0, 10))
        rows.append((3, 3, 2, 11))
        rows.append((3, 0, 0, 12))
        log = make_log(rows)
        out = filter_activity(log, min_interactions=2, min_purchases=1)
        assert out.num_users == 3
        assert out.num_items == 3
        survivors = {
            (int(u), int(v)) for u, v in zip(out.user, out.item)
        }
        assert all(u < 3 and v < 3 for u, v in survivors)

    def test_survivors_keep_ascending_order(self):
        rows = []
        for u in (0, 2, 4):
            for v in (1, 3, 5):
                rows.append((u, v, 0, 50))
                rows.append((u, v, 2, 60))
        # sparse extras that will be dropped
        rows.append((1, 0, 0, 1))
        rows.append((3, 2, 0, 1))
        log = make_log(rows)
        out = filter_activity(log, min_interactions=2, min_purchases=2)
        # old users (0, 2, 4) -> new (0, 1, 2); old items (1, 3, 5) likewise
        assert out.num_users == 3 and out.num_items == 3
        assert sorted(set(out.user.tolist())) == [0, 1, 2]
        assert sorted(set(out.item.tolist())) == [0, 1, 2]

    def test_wiping_everything_raises(self):
        log = make_log([(0, 0, 0, 1), (1, 1, 2, 2)])
        with pytest.raises(EmptyDatasetError):
            filter_activity(log, min_interactions=10, min_purchases=5)

    def test_counts_are_distinct_edges_not_raw_events(self):
        # one edge repeated five times still counts once
        rows = [(0, 0, 0, t) for t in range(5)]
        rows += [(0, 0, 2, 9)]
        log = make_log(rows)
        with pytest.raises(EmptyDatasetError):
            filter_activity(log, min_interactions=2, min_purchases=1)


class TestTemporalSplit:
    def test_last_purchase_to_test_previous_to_valid(self):
        rows = [
            (0, 0, 0, 1),
            (0, 1, 2, 10),
            (0, 2, 2, 20),
            (0, 3, 2, 30),
        ]
        split = temporal_split(make_log(rows))
        assert split.test == {0: 3}
        assert split.valid == {0: 2}
        # held-out events leave the train log
        train_purchases = [
            int(v)
            for v, k in zip(split.train.item, split.train.behavior)
            if k == Behavior.PURCHASE
        ]
        assert train_purchases == [1]

    def test_timestamp_ties_break_by_item_id(self):
        """Equal stamps: the larger item id takes the later (test) slot."""
        rows = [
            (0, 5, 2, 7),
            (0, 9, 2, 7),
            (0, 2, 2, 7),
            (0, 0, 0, 1),
        ]
        split = temporal_split(make_log(rows))
        assert split.test == {0: 9}
        assert split.valid == {0: 5}

    def test_users_with_one_purchase_are_skipped(self):
        rows = [
            (0, 0, 2, 1),
            (0, 1, 2, 2),
            (0, 2, 0, 0),
            (1, 0, 2, 3),
            (1, 2, 0, 4),
        ]
        split = temporal_split(make_log(rows))
        assert 1 not in split.test
        assert split.skipped_users == 1
        # user 1 keeps everything in train
        u1_events = (split.train.user == 1).sum()
        assert u1_events == 2

    def test_user_left_without_train_events_is_dropped(self):
        rows = [
            (0, 0, 2, 1),
            (0, 1, 2, 2),
            (1, 0, 0, 1),
            (1, 0, 2, 2),
            (1, 1, 2, 3),
        ]
        with pytest.warns(UserWarning, match="no train events"):
            split = temporal_split(make_log(rows))
        assert 0 not in split.test and 0 not in split.valid
        assert 1 in split.test

    def test_split_properties_on_random_logs(self):
        """Held-out items are purchases, removed from train, one per slot."""
        rng = np.random.default_rng(29)
        for trial in range(10):
            log = random_log(rng, num_users=8, num_items=12, num_events=80)
            split = temporal_split(log)
            dedup = deduplicate(log)
            train_edges = set(
                zip(split.train.user.tolist(), split.train.item.tolist(),
                    split.train.behavior.tolist())
            )
            for u, v in split.test.items():
                assert (u, v, int(Behavior.PURCHASE)) not in train_edges
            for u, v in split.valid.items():
                assert (u, v, int(Behavior.PURCHASE)) not in train_edges
            assert set(split.test) == set(split.valid)
            # train plus holdout recovers the deduplicated log
            assert len(split.train) + 2 * len(split.test) == len(dedup)

    def test_holdout_picks_the_two_latest_purchases(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            log = deduplicate(random_log(rng, 6, 10, 60))
            split = temporal_split(log)
            for u in split.test:
                purchases = [
                    (int(t), int(v))
                    for uu, v, k, t in zip(log.user, log.item, log.behavior,
                                           log.timestamp)
                    if uu == u and k == Behavior.PURCHASE
                ]
                purchases.sort()
                assert split.test[u] == purchases[-1][1]
                assert split.valid[u] == purchases[-2][1]


class TestBehaviorFrequency:
    def test_counts_distinct_users_per_item(self):
        rows = [
            (0, 0, 0, 1),
            (0, 0, 0, 2),   # duplicate edge, still one user
            (1, 0, 0, 3),
            (1, 1, 2, 4),
            (2, 1, 2, 5),
            (0, 1, 1, 6),
        ]
        freq = behavior_frequency(make_log(rows))
        assert freq.counts[int(Behavior.VIEW)].tolist() == [2, 0]
        assert freq.counts[int(Behavior.ADD)].tolist() == [0, 1]
        assert freq.counts[int(Behavior.PURCHASE)].tolist() == [0, 2]
        assert freq.totals.tolist() == [2, 1, 2]


class TestPrepareDataset:
    def test_stats_describe_the_split(self):
        rng = np.random.default_rng(5)
        log = random_log(rng, num_users=10, num_items=12, num_events=150)
        prepared = prepare_dataset(log, apply_filter=False)
        assert prepared.stats["num_users"] == 10
        assert prepared.stats["num_items"] == 12
        assert prepared.stats["eval_users"] == len(prepared.test)
        assert sum(prepared.stats["events"].values()) == len(prepared.train)
        assert 0.0 <= prepared.stats["view_ratio"] <= 1.0
        assert prepared.freq.counts.shape == (3, 12)

    def test_frequency_comes_from_train_only(self):
        rows = [
            (0, 0, 0, 1),
            (0, 1, 2, 10),
            (0, 2, 2, 20),
            (0, 3, 2, 30),
        ]
        prepared = prepare_dataset(make_log(rows), apply_filter=False)
        # held-out purchases of items 2 and 3 must not be counted
        assert prepared.freq.counts[int(Behavior.PURCHASE)].tolist() == [0, 1, 0, 0]

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(77)
        log = random_log(rng, num_users=9, num_items=11, num_events=120)
        prepared = prepare_dataset(log, apply_filter=False)
        save_prepared(prepared, tmp_path)
        back = load_prepared(tmp_path)
        assert back.valid == prepared.valid
        assert back.test == prepared.test
        assert np.array_equal(back.freq.counts, prepared.freq.counts)
        assert back.stats == prepared.stats
        assert np.array_equal(back.train.user, prepared.train.user)
        assert np.array_equal(back.train.timestamp, prepared.train.timestamp)
