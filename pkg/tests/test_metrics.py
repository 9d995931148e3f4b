import numpy as np
import pytest

from bwrfn.errors import DomainError, FormatError, MetricError
from bwrfn.metrics import (
    DcfParams,
    ScoredTrial,
    Trial,
    compute_eer,
    compute_min_dcf,
    cosine_score,
    parse_trials,
    write_scores,
)
from helpers import scan_eer, scan_min_dcf

RNG = np.random.default_rng(77)


def scored(targets, nontargets):
    out = []
    for i, s in enumerate(targets):
        out.append(ScoredTrial(Trial(f"t{i}a", f"t{i}b", True), float(s)))
    for i, s in enumerate(nontargets):
        out.append(ScoredTrial(Trial(f"n{i}a", f"n{i}b", False), float(s)))
    return out


class TestCosine:
    def test_parallel_is_one(self):
        assert cosine_score([1.0, 2.0], [2.0, 4.0]) == pytest.approx(1.0)

    def test_orthogonal_is_zero(self):
        assert cosine_score([1.0, 0.0], [0.0, 3.0]) == pytest.approx(0.0)

    def test_antiparallel_is_minus_one(self):
        assert cosine_score([1.0, -1.0], [-2.0, 2.0]) == pytest.approx(-1.0)

    def test_hand_value(self):
        # cos angle between (3,4) and (4,3) = 24/25
        assert cosine_score([3.0, 4.0], [4.0, 3.0]) == pytest.approx(24.0 / 25.0)

    def test_zero_norm_raises(self):
        with pytest.raises(DomainError):
            cosine_score([0.0, 0.0], [1.0, 2.0])

    def test_dim_mismatch_raises(self):
        with pytest.raises(DomainError):
            cosine_score([1.0, 2.0], [1.0, 2.0, 3.0])


class TestEer:
    def test_perfect_separation_zero(self):
        eer, _ = compute_eer(scored([0.8, 0.9, 0.95], [0.1, 0.2, 0.3]))
        assert eer == pytest.approx(0.0, abs=1e-12)

    def test_fully_swapped_is_one(self):
        eer, _ = compute_eer(scored([0.1, 0.2], [0.8, 0.9]))
        assert eer == pytest.approx(1.0, abs=1e-12)

    def test_six_trial_example(self):
        tar = [0.6, 0.7, 0.2]
        non = [0.1, 0.5, 0.65]
        eer, _ = compute_eer(scored(tar, non))
        assert eer == pytest.approx(scan_eer(tar, non), abs=1e-12)

    def test_threshold_separates_at_reported_rate(self):
        tar = list(RNG.normal(1.0, 0.5, size=40))
        non = list(RNG.normal(0.0, 0.5, size=40))
        eer, thr = compute_eer(scored(tar, non))
        frr = np.mean(np.asarray(tar) < thr)
        far = np.mean(np.asarray(non) >= thr)
        # the interpolated threshold lands between the bracketing step rates
        assert min(frr, far) - 1e-9 <= eer <= max(frr, far) + 1e-9

    @pytest.mark.parametrize("seed", range(50))
    def test_random_sets_match_scan_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n_tar = int(rng.integers(1, 500))
        n_non = int(rng.integers(1, 500))
        # duplicate-heavy grids exercise the tie handling
        tar = list(np.round(rng.normal(0.5, 1.0, size=n_tar), 2))
        non = list(np.round(rng.normal(0.0, 1.0, size=n_non), 2))
        eer, _ = compute_eer(scored(tar, non))
        assert eer == pytest.approx(scan_eer(tar, non), abs=1e-9)

    def test_invariant_to_increasing_transform(self):
        tar = list(RNG.normal(0.5, 1.0, size=30))
        non = list(RNG.normal(0.0, 1.0, size=30))
        e1, _ = compute_eer(scored(tar, non))
        f = lambda xs: [float(np.tanh(x) * 2 + 5) for x in xs]
        e2, _ = compute_eer(scored(f(tar), f(non)))
        assert e1 == pytest.approx(e2, abs=1e-9)

    def test_needs_both_classes(self):
        with pytest.raises(MetricError):
            compute_eer(scored([0.5], []))


class TestMinDcf:
    def test_perfect_separation_zero(self):
        dcf, _ = compute_min_dcf(scored([0.9, 0.8], [0.1, 0.2]))
        assert dcf == pytest.approx(0.0, abs=1e-12)

    def test_never_exceeds_one_plus_slack(self):
        # rejecting everything gives normalized cost c_miss p / min(...) bound
        for seed in range(10):
            rng = np.random.default_rng(seed)
            tar = list(rng.normal(0.2, 1.0, size=50))
            non = list(rng.normal(0.0, 1.0, size=50))
            p = DcfParams(p_target=0.05)
            dcf, _ = compute_min_dcf(scored(tar, non), p)
            bound = min(p.c_miss * p.p_target, p.c_fa * (1 - p.p_target))
            assert dcf <= p.c_miss * p.p_target / bound + 1e-12

    @pytest.mark.parametrize("seed", range(25))
    def test_random_sets_match_scan_oracle(self, seed):
        rng = np.random.default_rng(1000 + seed)
        tar = list(np.round(rng.normal(0.5, 1.0, size=int(rng.integers(1, 300))), 2))
        non = list(np.round(rng.normal(0.0, 1.0, size=int(rng.integers(1, 300))), 2))
        params = DcfParams(p_target=0.05, c_miss=1.0, c_fa=1.0)
        dcf, _ = compute_min_dcf(scored(tar, non), params)
        assert dcf == pytest.approx(
            scan_min_dcf(tar, non, 0.05, 1.0, 1.0), abs=1e-9
        )

    def test_asymmetric_costs_vs_oracle(self):
        rng = np.random.default_rng(9)
        tar = list(rng.normal(0.6, 0.8, size=80))
        non = list(rng.normal(0.0, 0.8, size=120))
        params = DcfParams(p_target=0.01, c_miss=10.0, c_fa=1.0)
        dcf, _ = compute_min_dcf(scored(tar, non), params)
        assert dcf == pytest.approx(
            scan_min_dcf(tar, non, 0.01, 10.0, 1.0), abs=1e-9
        )


class TestIo:
    def test_parse_round_trip(self, tmp_path):
        path = str(tmp_path / "trials.txt")
        with open(path, "w") as fh:
            fh.write("a b target\nc d nontarget\n\ne f target\n")
        trials = parse_trials(path)
        assert [t.target for t in trials] == [True, False, True]
        assert trials[1].enroll_id == "c" and trials[1].test_id == "d"

    def test_parse_bad_label(self, tmp_path):
        path = str(tmp_path / "bad.txt")
        with open(path, "w") as fh:
            fh.write("a b yes\n")
        with pytest.raises(FormatError, match="line 1"):
            parse_trials(path)

    def test_parse_wrong_field_count(self, tmp_path):
        path = str(tmp_path / "bad2.txt")
        with open(path, "w") as fh:
            fh.write("a b target\nonly two\n")
        with pytest.raises(FormatError, match="line 2"):
            parse_trials(path)

    def test_write_scores_format(self, tmp_path):
        path = str(tmp_path / "scores.txt")
        write_scores(path, scored([0.123456789], [-0.5]))
        lines = open(path).read().splitlines()
        assert lines[0] == "t0a t0b 0.123457"
        assert lines[1] == "n0a n0b -0.500000"

    def test_non_finite_score_rejected(self):
        with pytest.raises(DomainError):
            ScoredTrial(Trial("a", "b", True), float("nan"))
