import pytest

from mixlab.core import PreferenceSpec
from mixlab.errors import AllTiesError
from mixlab.evaluate import (
    Method,
    Verdict,
    judge_dimension,
    judge_pair,
    run_eval,
    win_rate,
)
from mixlab.rewards import RewardOracle


def const_oracle(dim, value_by_response):
    return RewardOracle(dim, f"o{dim}", lambda x, y: value_by_response[y])


class TestJudgeDimension:
    def test_equal_responses_tie(self, tb16):
        x = tb16.train_prompts[0][1]
        y = (2, 3, 1)
        assert judge_dimension(tb16.oracles[2], x, y, y) is Verdict.TIE

    def test_clear_win(self):
        o = const_oracle(0, {(1,): 0.8, (2,): 0.2})
        assert judge_dimension(o, (0,), (1,), (2,)) is Verdict.WIN
        assert judge_dimension(o, (0,), (2,), (1,)) is Verdict.LOSE

    def test_inside_tie_band(self):
        delta = 1e-6
        o = const_oracle(0, {(1,): 0.5 + delta / 2, (2,): 0.5})
        assert judge_dimension(o, (0,), (1,), (2,), delta) is Verdict.TIE


class TestJudgePair:
    def _oracles(self, scores_a, scores_b):
        return {
            d: const_oracle(d, {(1,): scores_a[d], (2,): scores_b[d]})
            for d in range(3)
        }

    def test_exact_cancellation_is_tie(self):
        oracles = self._oracles([1.0, 0.5, 0.0], [0.0, 0.5, 1.0])
        spec = PreferenceSpec(dims=(0, 1, 2))
        assert judge_pair((0,), (1,), (2,), spec, oracles) is Verdict.TIE

    def test_majority_wins(self):
        oracles = self._oracles([1.0, 1.0, 0.0], [0.0, 0.0, 1.0])
        spec = PreferenceSpec(dims=(0, 1, 2))
        assert judge_pair((0,), (1,), (2,), spec, oracles) is Verdict.WIN

    def test_single_dim_equals_dimension_verdict(self):
        oracles = self._oracles([1.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        spec = PreferenceSpec(dims=(0,))
        assert judge_pair((0,), (1,), (2,), spec, oracles) is Verdict.WIN

    def test_dimension_order_invariant(self):
        oracles = self._oracles([1.0, 0.0, 0.3], [0.0, 1.0, 0.6])
        a = judge_pair((0,), (1,), (2,), PreferenceSpec(dims=(0, 1, 2)), oracles)
        b = judge_pair((0,), (1,), (2,), PreferenceSpec(dims=(2, 0, 1)), oracles)
        assert a is b


class TestWinRate:
    def test_hand_computed_fixture(self):
        vs = [Verdict.WIN] * 3 + [Verdict.LOSE] + [Verdict.TIE] * 2
        assert win_rate(vs) == 75.0

    def test_all_wins(self):
        assert win_rate([Verdict.WIN] * 5) == 100.0

    def test_all_ties_undefined(self):
        with pytest.raises(AllTiesError):
            win_rate([Verdict.TIE, Verdict.TIE])


class TestRunEval:
    def _methods(self):
        # two deterministic canned generators over a tiny fixture
        gen_a = Method("A", lambda p, k, s: (2, 1))
        gen_b = Method("B", lambda p, k, s: (3, 1))
        return gen_a, gen_b

    def _oracles(self):
        scores = {0: {(2, 1): 0.9, (3, 1): 0.1}, 1: {(2, 1): 0.2, (3, 1): 0.6}}
        return {d: const_oracle(d, table) for d, table in scores.items()}

    def test_two_methods_complementary_cells(self):
        a, b = self._methods()
        report = run_eval([a, b], [(0, (0,))], [("X", PreferenceSpec(dims=(0,)))],
                          self._oracles())
        assert report.matrix[0][1] == 100.0
        assert report.matrix[1][0] == 0.0
        assert report.matrix[0][0] is None

    def test_antisymmetry(self, tb16):
        from mixlab.harness import build_task, load_run_config, method_single_expert, method_uniform
        from mixlab.mixer import MergeSpace

        cfg = load_run_config(None)
        cfg["testbed"]["max_len"] = 16
        _, task = build_task(cfg)
        methods = [method_uniform(task, MergeSpace.PROBABILITY),
                   method_uniform(task, MergeSpace.LOGIT),
                   method_single_expert(task, 0)]
        report = run_eval(methods, task.heldout_prompts, task.specs, task.oracles)
        for i in range(3):
            for j in range(i + 1, 3):
                a, b = report.matrix[i][j], report.matrix[j][i]
                if a is None or b is None:
                    assert a is None and b is None
                else:
                    assert a + b == pytest.approx(100.0, abs=1e-9)

    def test_self_comparison_diagonal_dash(self):
        a, b = self._methods()
        report = run_eval([a, b], [(0, (0,))], [("X", PreferenceSpec(dims=(0,)))],
                          self._oracles())
        text = report.to_text()
        assert "—" in text

    def test_average_is_row_mean(self):
        a, b = self._methods()
        report = run_eval([a, b], [(0, (0,))], [("X", PreferenceSpec(dims=(0,)))],
                          self._oracles())
        assert report.averages[0] == 100.0
        assert report.averages[1] == 0.0

    def test_verdicts_audit_records(self):
        a, b = self._methods()
        report = run_eval([a, b], [(0, (0,))], [("X", PreferenceSpec(dims=(0,)))],
                          self._oracles())
        lines = report.verdicts_jsonl().splitlines()
        assert len(lines) == 2  # both orientations of one comparison
