import gzip
import filecmp
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ials
from ials import (
    EmptyDataset,
    InputError,
    InsufficientUsers,
    InteractionSet,
    ParseError,
    UserTooSparse,
    leave_one_out_split,
    load_interactions,
    strong_generalization_split,
)
from conftest import make_interactions


class TestFromPairs:
    def test_adjacency_both_directions(self):
        data = InteractionSet.from_pairs([0, 0, 1, 2], [2, 0, 1, 0])
        assert data.num_users == 3 and data.num_items == 3
        assert data.items_of(0).tolist() == [0, 2]
        assert data.items_of(1).tolist() == [1]
        assert data.users_of(0).tolist() == [0, 2]
        assert data.users_of(2).tolist() == [0]

    def test_counts(self):
        data = InteractionSet.from_pairs([0, 0, 1], [0, 1, 1])
        assert data.user_counts.tolist() == [2, 1]
        assert data.item_counts.tolist() == [1, 2]
        assert data.num_pairs == 3

    def test_duplicates_collapse_keeping_latest_timestamp(self):
        data = InteractionSet.from_pairs(
            [0, 0, 0], [1, 1, 1], timestamps=[5.0, 9.0, 7.0])
        assert data.num_pairs == 1
        assert data.timestamps_of(0).tolist() == [9.0]

    def test_duplicates_without_timestamps(self):
        data = InteractionSet.from_pairs([1, 1, 0], [0, 0, 0])
        assert data.num_pairs == 2

    def test_explicit_shape_keeps_empty_entities(self):
        data = InteractionSet.from_pairs([0], [0], num_users=4, num_items=5)
        assert data.num_users == 4 and data.num_items == 5
        assert data.items_of(3).size == 0
        assert data.user_counts.tolist() == [1, 0, 0, 0]

    def test_out_of_range_rejected(self):
        with pytest.raises(InputError):
            InteractionSet.from_pairs([0, 5], [0, 0], num_users=2, num_items=2)

    def test_negative_rejected(self):
        with pytest.raises(InputError):
            InteractionSet.from_pairs([0, -1], [0, 0])

    def test_pairs_round_trip(self, rng):
        data = make_interactions(rng, n_users=10, n_items=7)
        users, items = data.pairs()
        again = InteractionSet.from_pairs(users, items, num_users=10, num_items=7)
        assert np.array_equal(again.user_ptr, data.user_ptr)
        assert np.array_equal(again.user_items, data.user_items)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 7)), max_size=60))
    def test_transpose_consistency(self, pairs):
        users = [u for u, _ in pairs]
        items = [i for _, i in pairs]
        data = InteractionSet.from_pairs(users, items, num_users=10, num_items=8)
        for u in range(10):
            for i in data.items_of(u):
                assert u in data.users_of(i)
        for i in range(8):
            for u in data.users_of(i):
                assert i in data.items_of(u)
        assert data.num_pairs == len(set(pairs))


class TestLoadInteractions:
    def _write(self, tmp_path, text, name="data.csv"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    def test_basic_csv(self, tmp_path):
        path = self._write(tmp_path, "a,x,5,100\nb,y,3,200\na,y,4,300\n")
        data = load_interactions(path)
        assert data.num_users == 2 and data.num_items == 2
        assert data.num_pairs == 3
        # first-appearance order: a -> 0, b -> 1; x -> 0, y -> 1
        assert list(data.user_ids) == ["a", "b"]
        assert list(data.item_ids) == ["x", "y"]
        assert data.timestamps is not None

    def test_multichar_delimiter(self, tmp_path):
        path = self._write(tmp_path, "1::10::4::978300760\n1::11::5::978302109\n")
        data = load_interactions(path, delimiter="::")
        assert data.num_pairs == 2

    def test_tsv_default_tab(self, tmp_path):
        path = self._write(tmp_path, "u\ti\t1\t2\n", name="data.tsv")
        assert load_interactions(path).num_pairs == 1

    def test_gzip(self, tmp_path):
        path = tmp_path / "data.csv.gz"
        with gzip.open(path, "wt", encoding="utf-8") as fh:
            fh.write("u,i,5,1\nv,j,4,2\n")
        assert load_interactions(path).num_pairs == 2

    def test_header_auto_skipped(self, tmp_path):
        path = self._write(tmp_path, "user,item,rating,time\na,x,5,1\n")
        data = load_interactions(path)
        assert data.num_pairs == 1
        assert list(data.user_ids) == ["a"]

    def test_explicit_skip_header(self, tmp_path):
        # header that would parse as data must be skippable by hand
        path = self._write(tmp_path, "u0,i0\na,x\n")
        data = load_interactions(path, columns="user,item", skip_header=True)
        assert list(data.user_ids) == ["a"]

    def test_min_rating_filters(self, tmp_path):
        path = self._write(tmp_path, "a,x,5,1\na,y,2,2\nb,x,4,3\n")
        data = load_interactions(path, min_rating=4.0)
        assert data.num_pairs == 2
        assert list(data.item_ids) == ["x"]  # y never passes the threshold

    def test_columns_with_skip(self, tmp_path):
        path = self._write(tmp_path, "junk,a,x\njunk,b,x\n")
        data = load_interactions(path, columns="skip,user,item")
        assert data.num_users == 2 and data.num_items == 1

    def test_parse_error_carries_line_number(self, tmp_path):
        path = self._write(tmp_path, "a,x,5,1\nb,y,bad,2\n")
        with pytest.raises(ParseError, match="line 2"):
            load_interactions(path, min_rating=3.0)

    def test_short_row_rejected(self, tmp_path):
        path = self._write(tmp_path, "a,x,1,1\nonlyonefield\n")
        with pytest.raises(ParseError, match="line 2"):
            load_interactions(path)

    def test_empty_file(self, tmp_path):
        path = self._write(tmp_path, "")
        with pytest.raises(EmptyDataset):
            load_interactions(path)

    def test_all_filtered_out(self, tmp_path):
        path = self._write(tmp_path, "a,x,1,1\n")
        with pytest.raises(EmptyDataset):
            load_interactions(path, min_rating=5.0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_interactions(tmp_path / "nope.csv")

    def test_bad_column_name(self, tmp_path):
        path = self._write(tmp_path, "a,x\n")
        with pytest.raises(InputError):
            load_interactions(path, columns="user,thing")

    def test_duplicate_pairs_merge(self, tmp_path):
        path = self._write(tmp_path, "a,x,5,1\na,x,5,9\nb,x,5,2\n")
        assert load_interactions(path).num_pairs == 2


class TestStrongGeneralizationSplit:
    def test_eval_users_leave_train(self, rng):
        data = make_interactions(rng, n_users=30, n_items=12, min_deg=5)
        val, test = strong_generalization_split(data, 5, 4, seed=7)
        eval_users = {hu.user for hu in val.users} | {hu.user for hu in test.users}
        assert len(eval_users) == 9
        for u in eval_users:
            assert val.train.items_of(u).size == 0
        # non-eval users keep their full history
        for u in set(range(30)) - eval_users:
            assert np.array_equal(val.train.items_of(u), data.items_of(u))

    def test_fold_in_fraction_ceil(self, rng):
        data = make_interactions(rng, n_users=20, n_items=15, min_deg=5, max_deg=5)
        _, test = strong_generalization_split(data, 6, 0, fold_in_fraction=0.8, seed=1)
        for hu in test.users:
            # ceil(0.8 * 5) = 4 revealed, 1 target (before vocab filtering)
            assert hu.fold_in.size + hu.target.size <= 5
            assert hu.target.size >= 1

    def test_fold_in_target_disjoint_and_complete(self, rng):
        data = make_interactions(rng, n_users=25, n_items=10, min_deg=5)
        val, test = strong_generalization_split(data, 6, 3, seed=3)
        for hu in list(val.users) + list(test.users):
            combined = set(hu.fold_in) | set(hu.target)
            assert not set(hu.fold_in) & set(hu.target)
            assert combined <= set(data.items_of(hu.user).tolist())

    def test_same_seed_identical(self, rng):
        data = make_interactions(rng, n_users=30, n_items=12, min_deg=5)
        a_val, a_test = strong_generalization_split(data, 5, 5, seed=11)
        b_val, b_test = strong_generalization_split(data, 5, 5, seed=11)
        assert [hu.user for hu in a_test.users] == [hu.user for hu in b_test.users]
        for x, y in zip(a_test.users, b_test.users):
            assert np.array_equal(x.fold_in, y.fold_in)
            assert np.array_equal(x.target, y.target)

    def test_different_seed_differs(self, rng):
        data = make_interactions(rng, n_users=40, n_items=12, min_deg=5)
        _, a = strong_generalization_split(data, 8, 0, seed=1)
        _, b = strong_generalization_split(data, 8, 0, seed=2)
        assert {hu.user for hu in a.users} != {hu.user for hu in b.users}

    def test_min_interactions_respected(self):
        # users 0-2 have 5 interactions, users 3-7 have 8
        users = [u for u in range(3) for _ in range(5)] + \
                [u for u in range(3, 8) for _ in range(8)]
        items = [i for _ in range(3) for i in range(5)] + \
                [i for _ in range(3, 8) for i in range(8)]
        data = InteractionSet.from_pairs(users, items)
        _, test = strong_generalization_split(data, 3, 0, min_user_interactions=6, seed=0)
        for hu in test.users:
            assert data.items_of(hu.user).size >= 6

    def test_insufficient_users(self, rng):
        data = make_interactions(rng, n_users=5, n_items=8, min_deg=5)
        with pytest.raises(InsufficientUsers):
            strong_generalization_split(data, 4, 2, seed=0)

    def test_bad_fraction(self, small_data):
        with pytest.raises(InputError):
            strong_generalization_split(small_data, 1, 0, fold_in_fraction=1.0)

    def test_sparse_users_never_sampled(self):
        # a 1-interaction user cannot yield a non-empty target at f=0.8
        users = [0] + [u for u in range(1, 12) for _ in range(6)]
        items = [0] + [i for _ in range(1, 12) for i in range(6)]
        data = InteractionSet.from_pairs(users, items)
        for seed in range(5):
            _, test = strong_generalization_split(data, 3, 0, seed=seed)
            assert all(hu.user != 0 for hu in test.users)


class TestLeaveOneOutSplit:
    def test_latest_timestamp_held_out(self):
        data = InteractionSet.from_pairs(
            [0, 0, 0, 1, 1], [0, 1, 2, 0, 2],
            timestamps=[3.0, 9.0, 1.0, 5.0, 2.0], num_items=6)
        split = leave_one_out_split(data, n_negatives=1, seed=0)
        assert split.holdout[0] == 1
        assert split.holdout[1] == 0

    def test_holdout_removed_from_train(self, rng):
        data = make_interactions(rng, n_users=12, n_items=10, min_deg=3,
                                 max_deg=5, with_timestamps=True)
        split = leave_one_out_split(data, n_negatives=4, seed=1)
        for u in range(12):
            held = int(split.holdout[u])
            assert not split.train.has_pair(u, held)
            assert split.train.items_of(u).size == data.items_of(u).size - 1

    def test_negatives_exclude_seen_by_default(self, rng):
        data = make_interactions(rng, n_users=10, n_items=20, min_deg=3, max_deg=6)
        split = leave_one_out_split(data, n_negatives=8, seed=2)
        for u in range(10):
            seen = set(data.items_of(u).tolist())
            assert not (set(split.negatives[u].tolist()) & seen)
            assert len(set(split.negatives[u].tolist())) == 8

    def test_allow_seen_negatives_only_blocks_holdout(self, rng):
        # with 3 items and 2 negatives, sampling must dip into seen items
        data = InteractionSet.from_pairs([0, 0, 0], [0, 1, 2],
                                         timestamps=[1.0, 2.0, 3.0])
        split = leave_one_out_split(data, n_negatives=2, seed=0,
                                    allow_seen_negatives=True)
        assert int(split.holdout[0]) == 2
        assert set(split.negatives[0].tolist()) == {0, 1}

    def test_too_few_candidates(self):
        data = InteractionSet.from_pairs([0, 0], [0, 1], num_items=3)
        with pytest.raises(InputError):
            leave_one_out_split(data, n_negatives=5, seed=0)

    def test_user_too_sparse(self):
        data = InteractionSet.from_pairs([0, 1], [0, 1], num_items=5)
        with pytest.raises(UserTooSparse) as exc_info:
            leave_one_out_split(data, n_negatives=1, seed=0)
        assert 0 in exc_info.value.users and 1 in exc_info.value.users

    def test_deterministic(self, rng):
        data = make_interactions(rng, n_users=15, n_items=12, min_deg=2, max_deg=5)
        a = leave_one_out_split(data, n_negatives=3, seed=9)
        b = leave_one_out_split(data, n_negatives=3, seed=9)
        assert np.array_equal(a.holdout, b.holdout)
        assert np.array_equal(a.negatives, b.negatives)


class TestSplitDirIO:
    def test_strong_gen_round_trip(self, rng, tmp_path):
        data = make_interactions(rng, n_users=25, n_items=10, min_deg=5)
        val, test = strong_generalization_split(data, 5, 3, seed=4)
        out = tmp_path / "sg"
        ials.save_strong_generalization(out, val, test)
        for name in ials.dataset.STRONG_GEN_FILES:
            assert (out / name).exists()

        val2, test2 = ials.load_strong_generalization(out)
        assert np.array_equal(test2.train.user_items, test.train.user_items)
        assert [hu.user for hu in val2.users] == sorted(hu.user for hu in val.users)
        by_user = {hu.user: hu for hu in test.users}
        for hu in test2.users:
            assert np.array_equal(hu.fold_in, by_user[hu.user].fold_in)
            assert np.array_equal(hu.target, by_user[hu.user].target)

    def test_loo_round_trip(self, rng, tmp_path):
        data = make_interactions(rng, n_users=10, n_items=12, min_deg=2, max_deg=6)
        split = leave_one_out_split(data, n_negatives=5, seed=6)
        out = tmp_path / "loo"
        ials.save_leave_one_out(out, split)
        loaded = ials.load_leave_one_out(out)
        assert np.array_equal(loaded.users, split.users)
        assert np.array_equal(loaded.holdout, split.holdout)
        assert np.array_equal(loaded.negatives, split.negatives)
        assert np.array_equal(loaded.train.user_items, split.train.user_items)

    def test_same_seed_byte_identical(self, rng, tmp_path):
        data = make_interactions(rng, n_users=25, n_items=10, min_deg=5)
        for sub in ("a", "b"):
            val, test = strong_generalization_split(data, 5, 3, seed=4)
            ials.save_strong_generalization(tmp_path / sub, val, test)
        for name in ials.dataset.STRONG_GEN_FILES:
            assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name,
                               shallow=False), name

    def test_missing_test_files(self, tmp_path):
        (tmp_path / "train.csv").write_text("0,0\n")
        with pytest.raises(InputError):
            ials.load_strong_generalization(tmp_path)

    def test_loo_user_mismatch(self, tmp_path):
        (tmp_path / "train.csv").write_text("0,0\n1,1\n")
        (tmp_path / "test_holdout.csv").write_text("0,1\n")
        (tmp_path / "test_negatives.csv").write_text("1,0\n")
        with pytest.raises(InputError):
            ials.load_leave_one_out(tmp_path)

    def test_ragged_negatives(self, tmp_path):
        (tmp_path / "train.csv").write_text("0,0\n1,0\n")
        (tmp_path / "test_holdout.csv").write_text("0,1\n1,2\n")
        (tmp_path / "test_negatives.csv").write_text("0,2,3\n1,2\n")
        with pytest.raises(InputError):
            ials.load_leave_one_out(tmp_path)

    def test_id_maps_written(self, rng, tmp_path):
        path = tmp_path / "raw.csv"
        path.write_text("a,x,5,1\nb,y,4,2\n")
        data = ials.load_interactions(path)
        ials.dataset.write_id_maps(tmp_path, data)
        lines = (tmp_path / "user_map.csv").read_text().splitlines()
        assert lines == ["a,0", "b,1"]
