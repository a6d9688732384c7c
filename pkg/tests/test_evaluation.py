import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpad.errors import (InsufficientDataError, InvalidDataError, ManifestError,
                         MissingStreamError, ProtocolInfeasibleError)
from fpad.evaluation import (COTS_LBP, FUSION_CLBP, LIVE, MANIFEST_FIELDS, SPOOF, EvalReport,
                             SampleRecord, class_rate_table, experiment_units, load_manifest,
                             make_folds, mean_std, pair_streams, per_class_rates, summary_table,
                             tdr_at_fdr, write_manifest, write_reports)

from oracles import sweep_tdr_at_fdr


def _live(i, subject, stream="FTIR"):
    return SampleRecord(f"l{i}_{stream.lower()}", f"img/l{i}.png", stream, LIVE,
                        subject_id=subject)


def _spoof(i, material, instance=None, stream="FTIR"):
    return SampleRecord(f"s{i}_{stream.lower()}", f"img/s{i}.png", stream, SPOOF,
                        material=material, spoof_instance_id=instance)


def random_manifest(rng):
    n_subjects = int(rng.integers(5, 16))
    records = []
    for i in range(int(rng.integers(n_subjects, 120))):
        subject = f"p{i % n_subjects:02d}" if i < n_subjects else f"p{rng.integers(n_subjects):02d}"
        records.append(_live(i, subject))
    for m in range(int(rng.integers(1, 6))):
        for j in range(int(rng.integers(5, 60))):
            records.append(_spoof(1000 * m + j, f"mat{m}", f"mat{m}_k{j % 4}"))
    order = rng.permutation(len(records))
    return [records[i] for i in order]


# --- manifests -------------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    recs = [_live(0, "a"), _spoof(1, "gelatin", "g1"),
            SampleRecord("x", "p.png", "DIRECT", LIVE, subject_id="b", finger_id="b_f1",
                         impression_index=3)]
    write_manifest(tmp_path / "m.csv", recs)
    assert load_manifest(tmp_path / "m.csv") == recs
    header = (tmp_path / "m.csv").read_text().splitlines()[0]
    assert header == ",".join(MANIFEST_FIELDS)


def test_empty_manifest_is_empty(tmp_path):
    (tmp_path / "m.csv").write_text("")
    assert load_manifest(tmp_path / "m.csv") == []


def test_manifest_reports_every_problem(tmp_path):
    rows = [",".join(MANIFEST_FIELDS),
            "a,a.png,FTIR,LIVE,gelatin,s1,,,",
            "b,b.png,FTIR,SPOOF,,,,,",
            "a,c.png,SIDE,LIVE,,s2,,,",
            "d,d.png,FTIR,LIVE,,s3,,,notanumber"]
    (tmp_path / "m.csv").write_text("\n".join(rows) + "\n")
    with pytest.raises(ManifestError) as err:
        load_manifest(tmp_path / "m.csv")
    text = "\n".join(err.value.problems)
    for needle in ("cannot carry a material", "needs a material", "duplicate id", "stream must",
                   ":5:"):
        assert needle in text


def test_manifest_missing_columns(tmp_path):
    (tmp_path / "m.csv").write_text("id,image_path\na,b\n")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "m.csv")


def test_acquisition_id_strips_stream_suffix():
    assert _live(3, "a", "DIRECT").acquisition_id == "l3"
    assert SampleRecord("odd", "x", "FTIR", LIVE, subject_id="a").acquisition_id == "odd"


# --- fold protocol ---------------------------------------------------------

def check_protocol(records, splits, k):
    """Exhaustive check of subject-disjointness and per-material test shares."""
    by_id = {r.id: r for r in records}
    all_ids = set(by_id)
    seen_test = []
    for s in splits:
        train, test = set(s.train_ids), set(s.test_ids)
        assert train | test == all_ids and not train & test
        train_subjects = {by_id[i].subject_id for i in train if by_id[i].label == LIVE}
        test_subjects = {by_id[i].subject_id for i in test if by_id[i].label == LIVE}
        assert not train_subjects & test_subjects
        materials = {r.material for r in records if r.label == SPOOF}
        for m in materials:
            n_m = sum(1 for r in records if r.material == m)
            n_test = sum(1 for i in test if by_id[i].material == m)
            if m in s.train_only_materials:
                assert n_test == 0
            else:
                assert abs(n_test - n_m / k) <= 1
                assert abs((n_m - n_test) - n_m * (k - 1) / k) <= 1
        seen_test.extend(test)
    # every live sample and every non-train-only spoof is tested exactly once
    testable = [r.id for r in records if not (r.label == SPOOF
                                              and r.material in splits[0].train_only_materials)]
    assert sorted(seen_test) == sorted(testable)


@pytest.mark.parametrize("seed", range(50))
def test_folds_on_random_manifests(seed):
    rng = np.random.default_rng(seed)
    records = random_manifest(rng)
    splits = make_folds(records, k=5, seed=seed)
    assert len(splits) == 5
    check_protocol(records, splits, 5)


def test_fifteen_subjects_give_three_per_fold():
    records = [_live(i, f"p{i // 4:02d}") for i in range(60)] + [_spoof(i, "m") for i in range(10)]
    for s in make_folds(records, 5, seed=1):
        assert len({r.subject_id for r in records if r.id in s.test_ids and r.label == LIVE}) == 3


def test_folds_are_seed_deterministic():
    records = random_manifest(np.random.default_rng(3))
    assert make_folds(records, 5, 7) == make_folds(records, 5, 7)
    assert make_folds(records, 5, 7) != make_folds(records, 5, 8)


def test_small_material_is_train_only():
    records = [_live(i, f"p{i}") for i in range(10)]
    records += [_spoof(i, "rare") for i in range(3)] + [_spoof(100 + i, "common") for i in range(10)]
    splits = make_folds(records, 5, 0)
    assert all(s.train_only_materials == ("rare",) for s in splits)
    check_protocol(records, splits, 5)


def test_instance_disjoint_keeps_instances_together():
    records = [_live(i, f"p{i}") for i in range(10)]
    records += [_spoof(i, "m", f"k{i % 5}") for i in range(25)]
    for s in make_folds(records, 5, 0, instance_disjoint=True):
        test_instances = {r.spoof_instance_id for r in records if r.id in s.test_ids and r.material}
        train_instances = {r.spoof_instance_id for r in records if r.id in s.train_ids and r.material}
        assert len(test_instances) == 1 and not test_instances & train_instances


def test_fold_errors():
    records = [_live(i, f"p{i}") for i in range(10)]
    with pytest.raises(ProtocolInfeasibleError):
        make_folds(records, k=1)
    with pytest.raises(ProtocolInfeasibleError):
        make_folds(records[:3], k=5)


# --- metrics ---------------------------------------------------------------

def test_tdr_matches_exhaustive_sweep_on_1000_sets():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        n_live, n_spoof = int(rng.integers(1, 40)), int(rng.integers(1, 40))
        if trial % 3 == 0:
            # coarse scores force many ties
            live = rng.integers(0, 6, n_live) / 5.0
            spoof = rng.integers(0, 6, n_spoof) / 5.0
        else:
            live = rng.beta(2, 5, n_live)
            spoof = rng.beta(5, 2, n_spoof)
        target = float(rng.choice([0.0, 0.001, 0.01, 0.05, 0.1, 0.5, 1.0]))
        got = tdr_at_fdr(live, spoof, target)
        ref = sweep_tdr_at_fdr(live.tolist(), spoof.tolist(), target)
        assert got == ref, (trial, got, ref)


@settings(max_examples=200)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30),
       st.lists(st.floats(0, 1), min_size=1, max_size=30),
       st.floats(0, 1), st.floats(0, 1))
def test_tdr_is_monotone_in_target(live, spoof, a, b):
    lo, hi = min(a, b), max(a, b)
    assert tdr_at_fdr(live, spoof, lo)[0] <= tdr_at_fdr(live, spoof, hi)[0]


def test_tdr_examples():
    assert tdr_at_fdr([0.1, 0.2, 0.3], [0.4, 0.5], 0.0) == (1.0, 0.4)
    tdr, thr = tdr_at_fdr([0.9], [0.9, 0.8], 0.0)
    assert tdr == 0.0 and thr > 1.0
    assert tdr_at_fdr([0.2, 0.6], [0.5, 0.7], 0.5) == (1.0, 0.5)
    assert tdr_at_fdr([0.2, 0.6], [0.5, 0.7], 0.4) == (0.5, 0.7)
    with pytest.raises(InsufficientDataError):
        tdr_at_fdr([], [0.5])
    with pytest.raises(InvalidDataError):
        tdr_at_fdr([0.5], [0.5], 1.5)


def test_per_class_rates_at_the_boundary():
    rates = per_class_rates({LIVE: [0.5, 0.49, 0.1], "gelatin": [0.5, 0.2]})
    assert rates == {LIVE: pytest.approx(2 / 3), "gelatin": 0.5}
    with pytest.raises(InsufficientDataError):
        per_class_rates({LIVE: []})


@given(st.lists(st.floats(0, 1), min_size=2, max_size=10))
def test_mean_std_is_sample_statistics(values):
    m, s = mean_std(values)
    assert abs(m - statistics.fmean(values)) < 1e-12
    ref = math.sqrt(sum((v - m) ** 2 for v in values) / (len(values) - 1))
    assert abs(s - ref) < 1e-12


def test_mean_std_single_value():
    assert mean_std([0.7]) == (0.7, 0.0)


# --- experiment plumbing ---------------------------------------------------

def test_fusion_requires_partner_stream():
    ftir = [_live(i, f"p{i}", "FTIR") for i in range(5)]
    with pytest.raises(MissingStreamError):
        experiment_units(ftir, FUSION_CLBP)
    partial = ftir + [_live(i, f"p{i}", "DIRECT") for i in range(4)]
    with pytest.raises(MissingStreamError):
        pair_streams(partial)
    full = ftir + [_live(i, f"p{i}", "DIRECT") for i in range(5)]
    units, needed = experiment_units(full, FUSION_CLBP)
    assert len(units) == 5 and len(needed) == 10
    with pytest.raises(MissingStreamError):
        experiment_units(full, COTS_LBP)


def _report(exp=FUSION_CLBP):
    return EvalReport(experiment=exp, k=5, fdr_target=0.01, seed=0,
                      fold_tdr=[1.0, 0.9, 1.0, 1.0, 0.95], fold_threshold=[0.5] * 5,
                      fold_C=[1.0] * 5, tdr_mean=0.97, tdr_std=0.0447, timing_ms=12.0,
                      class_rates={LIVE: {"folds": [1.0] * 5, "mean": 1.0, "std": 0.0}},
                      fold_scores=[{"live": [0.1], "spoof": [0.9]}] * 5)


def test_report_outputs(tmp_path):
    paths = write_reports([_report()], tmp_path)
    text = paths["text"].read_text()
    assert "Fusion + CLBP" in text and "97.00% +- 4.47" in text and "Detection Time" in text
    import json
    back = EvalReport.from_dict(json.loads(paths["json"].read_text())[0])
    assert back == _report()
    assert summary_table([]) == ""
    assert "LIVE" in class_rate_table(_report())
