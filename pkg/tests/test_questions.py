"""Sample builders, vocabulary, and pixel-level label verification."""

import numpy as np
import pytest

from pyramidqa.data.questions import (MC_DIRECTIONS, PAD, Sample, Vocab,
                                      build_sample, build_vocab,
                                      candidate_phrase, encode_sample,
                                      sample_token_seqs, verify_label)
from pyramidqa.data.scenes import PALETTE, render, trajectory_in_bounds
from pyramidqa.errors import InputError
from pyramidqa.rng import Rng


class TestBuildSample:
    def test_color_answers_are_stratified(self):
        labels = [build_sample("open_ended", i, Rng(0, 2, i)).aux for i in range(16)]
        assert labels == [i % 8 for i in range(16)]

    def test_count_targets_cycle_one_to_five(self):
        labels = [build_sample("count", i, Rng(0, 2, i)).label for i in range(10)]
        assert labels == [float(i % 5 + 1) for i in range(10)]

    def test_choice_true_direction_is_stratified(self):
        dirs = [build_sample("multi_choice", i, Rng(0, 2, i)).aux for i in range(8)]
        assert dirs == [i % 4 for i in range(8)]

    def test_choice_label_points_at_true_phrase(self):
        for i in range(12):
            s = build_sample("multi_choice", i, Rng(0, 2, i))
            assert s.candidates[int(s.label)][-1] == MC_DIRECTIONS[i % 4]

    def test_choice_candidates_cover_all_directions(self):
        s = build_sample("multi_choice", 3, Rng(0, 2, 3))
        named = sorted(c[-1] for c in s.candidates)
        assert named == sorted(MC_DIRECTIONS)

    def test_movers_stay_on_canvas(self):
        for task in ("open_ended", "multi_choice"):
            for i in range(20):
                s = build_sample(task, i, Rng(0, 2, i))
                for shape in s.scene.shapes:
                    assert trajectory_in_bounds(shape)

    def test_count_scene_has_k_disjoint_circles(self):
        for i in range(10):
            s = build_sample("count", i, Rng(0, 2, i))
            assert len(s.scene.shapes) == i % 5 + 1
            frames = render(s.scene)
            lit = int(np.any(frames[0] != 0, axis=-1).sum())
            per_circle = lit / len(s.scene.shapes)
            assert 25 <= per_circle <= 31

    def test_unknown_task_rejected(self):
        with pytest.raises(InputError):
            build_sample("retrieval", 0, Rng(0))


class TestLabelVerification:
    @pytest.mark.parametrize("task", ["open_ended", "count", "multi_choice"])
    def test_many_samples_verify_from_pixels(self, task):
        for i in range(40):
            s = build_sample(task, i, Rng(0, 2, i))
            assert verify_label(task, s), f"{task} sample {i} label mismatch"

    def test_lying_generator_is_caught(self):
        s = build_sample("count", 4, Rng(0, 2, 4))
        lie = Sample(s.scene, s.question, s.candidates, s.label + 1.0, s.aux)
        assert not verify_label("count", lie)

    def test_wrong_color_claim_is_caught(self):
        s = build_sample("open_ended", 0, Rng(0, 2, 0))
        wrong = (int(s.label) + 1) % len(PALETTE)
        lie = Sample(s.scene, s.question, s.candidates, float(wrong), wrong)
        assert not verify_label("open_ended", lie)


class TestVocab:
    def test_pad_required_first(self):
        with pytest.raises(InputError, match="pad token"):
            Vocab(["what", PAD])

    def test_duplicates_rejected(self):
        with pytest.raises(InputError, match="duplicate"):
            Vocab([PAD, "what", "what"])

    def test_build_orders_by_frequency_then_alphabet(self):
        seqs = [("b", "b", "c"), ("a", "c"), ("c",)]
        v = build_vocab(seqs, cap=8)
        assert v.tokens == (PAD, "c", "b", "a")

    def test_cap_truncates_rare_tokens(self):
        seqs = [tuple(f"w{i}" for i in range(10))]
        v = build_vocab(seqs, cap=4)
        assert len(v) == 4
        assert v.tokens[0] == PAD

    def test_encode_pads_to_length(self):
        v = Vocab([PAD, "how", "many"])
        ids = v.encode(("how", "many"), 5)
        np.testing.assert_array_equal(ids, [1, 2, 0, 0, 0])

    def test_encode_rejects_overflow_and_unknowns(self):
        v = Vocab([PAD, "how"])
        with pytest.raises(InputError, match="exceeds"):
            v.encode(("how",) * 3, 2)
        with pytest.raises(InputError, match="not in vocabulary"):
            v.encode(("what",), 4)


class TestEncodeSample:
    def test_flat_question_row(self):
        s = build_sample("open_ended", 0, Rng(0, 2, 0))
        v = build_vocab(sample_token_seqs(s))
        ids = encode_sample(s, v, 8)
        assert ids.shape == (8,)
        assert ids.dtype == np.int64

    def test_choice_rows_pair_question_with_candidate(self):
        s = build_sample("multi_choice", 1, Rng(0, 2, 1))
        v = build_vocab(sample_token_seqs(s))
        ids = encode_sample(s, v, 10)
        assert ids.shape == (4, 10)
        qlen = len(s.question)
        for row, cand in zip(ids, s.candidates):
            np.testing.assert_array_equal(row[:qlen], v.encode(s.question, qlen))
            assert v.tokens[row[qlen + len(cand) - 1]] == cand[-1]

    def test_candidate_phrase_shape(self):
        assert candidate_phrase("left") == ("the", "square", "moves", "left")
