"""Manifests, the live/spoof fold protocol, PAD metrics and the experiment harness."""
from __future__ import annotations

import csv
import json
import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import classifier
from .errors import (
    InsufficientDataError,
    InvalidDataError,
    InvalidSpaceError,
    ManifestError,
    MissingStreamError,
    ProtocolInfeasibleError,
)
from .imaging import GRAY, RGB, read_image, rgb_to_hsv, to_grayscale
from .texture import (
    CLBP_486,
    FUSED_972,
    GRAY_LBP_54,
    FeatureVector,
    clbp_feature,
    fuse_features,
    grayscale_lbp_feature,
)

log = logging.getLogger(__name__)

LIVE = "LIVE"
SPOOF = "SPOOF"
LABELS = (LIVE, SPOOF)
RECORD_STREAMS = ("COTS", "FTIR", "DIRECT")

MANIFEST_FIELDS = ("id", "image_path", "stream", "label", "material", "subject_id",
                   "spoof_instance_id", "finger_id", "impression_index")


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_path: str
    stream: str
    label: str
    material: Optional[str] = None
    subject_id: Optional[str] = None
    spoof_instance_id: Optional[str] = None
    finger_id: Optional[str] = None
    impression_index: Optional[int] = None

    def problems(self) -> List[str]:
        out = []
        if not self.id:
            out.append("empty id")
        if not self.image_path:
            out.append("empty image_path")
        if self.stream not in RECORD_STREAMS:
            out.append(f"stream must be one of {RECORD_STREAMS}, got {self.stream!r}")
        if self.label not in LABELS:
            out.append(f"label must be LIVE or SPOOF, got {self.label!r}")
        if self.label == LIVE:
            if not self.subject_id:
                out.append("LIVE record needs a subject_id")
            if self.material:
                out.append("LIVE record cannot carry a material")
        if self.label == SPOOF and not self.material:
            out.append("SPOOF record needs a material")
        return out

    @property
    def acquisition_id(self) -> str:
        """Shared prefix of the FTIR/DIRECT pair captured together."""
        suffix = "_" + self.stream.lower()
        return self.id[: -len(suffix)] if self.id.endswith(suffix) else self.id

    @property
    def y(self) -> int:
        return classifier.SPOOF if self.label == SPOOF else classifier.LIVE

    @property
    def class_name(self) -> str:
        return LIVE if self.label == LIVE else self.material


def _blank(value: str) -> Optional[str]:
    value = (value or "").strip()
    return value or None


def load_manifest(path) -> List[SampleRecord]:
    """Read and validate a manifest CSV; every problem is reported at once."""
    records, problems, seen = [], [], {}
    with open(path, newline="") as fh:
        text = fh.read()
    if not text.strip():
        return []
    reader = csv.DictReader(text.splitlines())
    missing = [f for f in MANIFEST_FIELDS if f not in (reader.fieldnames or [])]
    if missing:
        raise ManifestError([f"{path}:1: missing columns {missing}"])
    for lineno, row in enumerate(reader, 2):
        try:
            idx = _blank(row["impression_index"])
            rec = SampleRecord(
                id=(row["id"] or "").strip(),
                image_path=(row["image_path"] or "").strip(),
                stream=(row["stream"] or "").strip().upper(),
                label=(row["label"] or "").strip().upper(),
                material=_blank(row["material"]),
                subject_id=_blank(row["subject_id"]),
                spoof_instance_id=_blank(row["spoof_instance_id"]),
                finger_id=_blank(row["finger_id"]),
                impression_index=None if idx is None else int(idx),
            )
        except (ValueError, TypeError, AttributeError) as exc:
            problems.append(f"{path}:{lineno}: {exc}")
            continue
        for msg in rec.problems():
            problems.append(f"{path}:{lineno}: {msg}")
        if rec.id in seen:
            problems.append(f"{path}:{lineno}: duplicate id {rec.id!r} (first on line {seen[rec.id]})")
        seen.setdefault(rec.id, lineno)
        records.append(rec)
    if problems:
        raise ManifestError(problems)
    return records


def write_manifest(path, records: Sequence[SampleRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for r in records:
            writer.writerow(["" if getattr(r, f) is None else getattr(r, f) for f in MANIFEST_FIELDS])


# --------------------------------------------------------------------------
# fold protocol


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_ids: Tuple[str, ...]
    test_ids: Tuple[str, ...]
    train_only_materials: Tuple[str, ...] = ()


def make_folds(records: Sequence[SampleRecord], k: int = 5, seed: int = 0,
               instance_disjoint: bool = False) -> List[FoldSplit]:
    """Subject-disjoint live split plus per-material spoof rotation.

    Live subjects are shuffled and dealt into ``k`` near-equal groups; group
    ``f`` is the test side of fold ``f``. Spoof impressions of each material
    are shuffled and cut into ``k`` chunks so every impression is tested
    exactly once. With ``instance_disjoint`` the chunks are cut over spoof
    instances instead. Materials with fewer than ``k`` units stay on the
    training side of every fold and are reported in ``train_only_materials``.
    """
    if k < 2:
        raise ProtocolInfeasibleError("cross-validation needs k >= 2")
    rng = np.random.default_rng(seed)
    test_sets: List[set] = [set() for _ in range(k)]

    live = [r for r in records if r.label == LIVE]
    subjects = sorted({r.subject_id for r in live})
    if len(subjects) < k:
        raise ProtocolInfeasibleError(f"{len(subjects)} live subjects cannot fill {k} folds")
    groups = np.array_split(rng.permutation(len(subjects)), k)
    fold_of_subject = {subjects[i]: f for f, g in enumerate(groups) for i in g}
    for r in live:
        test_sets[fold_of_subject[r.subject_id]].add(r.id)

    train_only = []
    by_material: Dict[str, List[SampleRecord]] = {}
    for r in records:
        if r.label == SPOOF:
            by_material.setdefault(r.material, []).append(r)
    for material in sorted(by_material):
        recs = sorted(by_material[material], key=lambda r: r.id)
        if instance_disjoint:
            units = sorted({r.spoof_instance_id or r.id for r in recs})
        else:
            units = [r.id for r in recs]
        if len(units) < k:
            log.warning("material %r has %d units (< %d folds); training only",
                        material, len(units), k)
            train_only.append(material)
            continue
        chunks = np.array_split(rng.permutation(len(units)), k)
        fold_of_unit = {units[i]: f for f, c in enumerate(chunks) for i in c}
        for r in recs:
            unit = (r.spoof_instance_id or r.id) if instance_disjoint else r.id
            test_sets[fold_of_unit[unit]].add(r.id)

    order = [r.id for r in records]
    splits = []
    for f in range(k):
        test = tuple(i for i in order if i in test_sets[f])
        train = tuple(i for i in order if i not in test_sets[f])
        splits.append(FoldSplit(f, train, test, tuple(train_only)))
    return splits


# --------------------------------------------------------------------------
# metrics


def tdr_at_fdr(live_scores, spoof_scores, fdr_target: float = 0.001) -> Tuple[float, float]:
    """True detection rate at the smallest threshold meeting ``fdr_target``.

    A sample is flagged as spoof when its score is >= the threshold. The
    candidate thresholds are the observed scores plus one point above all of
    them, so the target is always reachable.
    """
    live = np.sort(np.asarray(live_scores, dtype=np.float64))
    spoof = np.sort(np.asarray(spoof_scores, dtype=np.float64))
    if live.size == 0 or spoof.size == 0:
        raise InsufficientDataError("tdr_at_fdr needs live and spoof scores")
    if not 0.0 <= fdr_target <= 1.0:
        raise InvalidDataError(f"fdr_target must lie in [0, 1], got {fdr_target}")
    top = max(1.0, float(live[-1]), float(spoof[-1]))
    candidates = np.append(np.unique(np.concatenate([live, spoof])), np.nextafter(top, np.inf))
    fdr = (live.size - np.searchsorted(live, candidates, side="left")) / live.size
    first = int(np.flatnonzero(fdr <= fdr_target)[0])
    t = float(candidates[first])
    tdr = (spoof.size - np.searchsorted(spoof, t, side="left")) / spoof.size
    return float(tdr), t


def per_class_rates(scores_by_class: Mapping[str, Sequence[float]],
                    threshold: float = 0.5) -> Dict[str, float]:
    """Correct-detection rate per class: LIVE below threshold, spoof materials at or above."""
    out = {}
    for name, values in scores_by_class.items():
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise InsufficientDataError(f"class {name!r} has no scores")
        correct = values < threshold if name == LIVE else values >= threshold
        out[name] = float(np.mean(correct))
    return out


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample standard deviation (zero for a single value)."""
    values = [float(v) for v in values]
    if not values:
        return float("nan"), float("nan")
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return statistics.fmean(values), std


# --------------------------------------------------------------------------
# experiments

COTS_LBP = "COTS_LBP"
FTIR_CLBP = "FTIR_CLBP"
DIRECT_CLBP = "DIRECT_CLBP"
FUSION_CLBP = "FUSION_CLBP"
EXPERIMENTS = (COTS_LBP, FTIR_CLBP, DIRECT_CLBP, FUSION_CLBP)
EXPERIMENT_LABELS = {
    COTS_LBP: "COTS + LBP",
    FTIR_CLBP: "FTIR + CLBP",
    DIRECT_CLBP: "Direct + CLBP",
    FUSION_CLBP: "Fusion + CLBP",
}
EXPERIMENT_DESCRIPTORS = {COTS_LBP: GRAY_LBP_54, FTIR_CLBP: CLBP_486,
                          DIRECT_CLBP: CLBP_486, FUSION_CLBP: FUSED_972}
_PRIMARY_STREAM = {COTS_LBP: "COTS", FTIR_CLBP: "FTIR", DIRECT_CLBP: "DIRECT", FUSION_CLBP: "FTIR"}

TIMING_NOTE = "median per-image feature extraction + scoring; excludes calibration warp"


@dataclass(frozen=True)
class ExperimentConfig:
    k: int = 5
    seed: int = 0
    fdr_target: float = 0.001
    C: Optional[float] = None
    c_grid: Tuple[float, ...] = classifier.DEFAULT_C_GRID
    inner_k: int = 5
    tolerance: float = 1e-6
    workers: int = 1
    instance_disjoint: bool = False


@dataclass
class EvalReport:
    experiment: str
    k: int
    fdr_target: float
    seed: int
    fold_tdr: List[float]
    fold_threshold: List[float]
    fold_C: List[float]
    tdr_mean: float
    tdr_std: float
    class_rates: Dict[str, Dict[str, object]]
    timing_ms: float
    timing_note: str = TIMING_NOTE
    n_live: int = 0
    n_spoof: int = 0
    fold_scores: List[Dict[str, List[float]]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(**doc)


def image_feature(record: SampleRecord, root=None) -> FeatureVector:
    """Feature of one record: gray LBP on COTS, HSV color LBP on FTIR/DIRECT."""
    path = Path(record.image_path)
    if root is not None and not path.is_absolute():
        path = Path(root) / path
    img = read_image(path)
    if record.stream == "COTS":
        if img.space == RGB:
            img = to_grayscale(img)
        return grayscale_lbp_feature(img, "COTS", record.id)
    if img.space != RGB:
        raise InvalidSpaceError(f"{record.id}: {record.stream} images must be RGB")
    return clbp_feature(rgb_to_hsv(img), record.stream, record.id)


def _timed_feature(args):
    record, root = args
    t0 = time.perf_counter()
    fv = image_feature(record, root)
    return fv, (time.perf_counter() - t0) * 1e3


def extract_many(records: Sequence[SampleRecord], root=None,
                 workers: int = 1) -> List[Tuple[FeatureVector, float]]:
    """Features and per-image extraction milliseconds, in input order."""
    jobs = [(r, root) for r in records]
    if workers <= 1 or len(jobs) < 2:
        return [_timed_feature(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_timed_feature, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def pair_streams(records: Sequence[SampleRecord]) -> List[Tuple[SampleRecord, SampleRecord]]:
    """(FTIR, DIRECT) record pairs sharing an acquisition id, in FTIR order."""
    direct = {r.acquisition_id: r for r in records if r.stream == "DIRECT"}
    pairs = []
    missing = []
    for r in records:
        if r.stream != "FTIR":
            continue
        partner = direct.get(r.acquisition_id)
        if partner is None:
            missing.append(r.id)
        else:
            pairs.append((r, partner))
    if missing:
        raise MissingStreamError(
            f"{len(missing)} FTIR record(s) lack a DIRECT partner, e.g. {missing[:3]}")
    return pairs


def experiment_units(records: Sequence[SampleRecord], experiment: str):
    """Records the experiment folds over, and the records whose features it needs."""
    if experiment not in EXPERIMENTS:
        raise InvalidDataError(f"unknown experiment {experiment!r}")
    stream = _PRIMARY_STREAM[experiment]
    units = [r for r in records if r.stream == stream]
    if experiment == FUSION_CLBP:
        if not any(r.stream == "DIRECT" for r in records):
            raise MissingStreamError("fusion needs DIRECT images and the manifest has none")
        pairs = pair_streams(records)
        needed = [r for pair in pairs for r in pair]
    else:
        needed = units
    if not units:
        raise MissingStreamError(f"{experiment} needs {stream} images and the manifest has none")
    return units, needed


def _unit_feature(unit: SampleRecord, experiment: str, cache, partners) -> Tuple[np.ndarray, float]:
    if experiment == FUSION_CLBP:
        (fa, ta), (fb, tb) = cache[unit.id], cache[partners[unit.acquisition_id].id]
        return fuse_features(fa, fb, unit.acquisition_id).values, ta + tb
    fv, ms = cache[unit.id]
    return fv.values, ms


def run_experiment(records: Sequence[SampleRecord], experiment: str,
                   cfg: Optional[ExperimentConfig] = None, root=None,
                   cache: Optional[dict] = None) -> EvalReport:
    """Five-fold live/spoof evaluation of one descriptor/stream combination.

    ``cache`` maps record id to ``(FeatureVector, extraction_ms)`` and is
    filled in place so several experiments can share extracted features.
    """
    cfg = cfg or ExperimentConfig()
    units, needed = experiment_units(records, experiment)
    cache = {} if cache is None else cache
    todo = [r for r in needed if r.id not in cache]
    if todo:
        log.info("%s: extracting %d feature(s)", experiment, len(todo))
        for r, result in zip(todo, extract_many(todo, root, cfg.workers)):
            cache[r.id] = result
    partners = {r.acquisition_id: r for r in records if r.stream == "DIRECT"}

    feats = [_unit_feature(u, experiment, cache, partners) for u in units]
    X = np.stack([f for f, _ in feats])
    extract_ms = np.array([ms for _, ms in feats])
    y = np.array([u.y for u in units], dtype=np.float64)
    index = {u.id: i for i, u in enumerate(units)}
    descriptor = EXPERIMENT_DESCRIPTORS[experiment]

    splits = make_folds(units, cfg.k, cfg.seed, cfg.instance_disjoint)
    fold_tdr, fold_thr, fold_C, fold_scores = [], [], [], []
    rates: Dict[str, List[float]] = {}
    unit_ms = []
    for split in splits:
        tr = np.array([index[i] for i in split.train_ids])
        te = np.array([index[i] for i in split.test_ids])
        fold_seed = int(np.random.SeedSequence([cfg.seed, split.fold_index]).generate_state(1)[0])
        tcfg = classifier.TrainConfig(C=cfg.C or classifier.DEFAULT_C, c_grid=cfg.c_grid,
                                      tolerance=cfg.tolerance, seed=fold_seed)
        C = cfg.C if cfg.C is not None else classifier.select_C(X[tr], y[tr], tcfg, cfg.inner_k)
        model = classifier.train_l2svm(X[tr], y[tr], tcfg, C=C, descriptor=descriptor)
        model = classifier.calibrate(model, X[tr], y[tr])

        test_scores = np.empty(len(te))
        for n, i in enumerate(te):
            t0 = time.perf_counter()
            test_scores[n] = classifier.score(model, X[i])
            unit_ms.append(extract_ms[i] + (time.perf_counter() - t0) * 1e3)
        live_mask = y[te] < 0
        tdr, thr = tdr_at_fdr(test_scores[live_mask], test_scores[~live_mask], cfg.fdr_target)
        by_class: Dict[str, List[float]] = {}
        for n, i in enumerate(te):
            by_class.setdefault(units[i].class_name, []).append(test_scores[n])
        for name, rate in per_class_rates(by_class).items():
            rates.setdefault(name, []).append(rate)
        fold_tdr.append(tdr)
        fold_thr.append(thr)
        fold_C.append(float(C))
        fold_scores.append({"live": test_scores[live_mask].tolist(),
                            "spoof": test_scores[~live_mask].tolist()})
        log.info("%s fold %d: C=%g TDR=%.4f @ threshold %.4f", experiment,
                 split.fold_index, C, tdr, thr)

    mean, std = mean_std(fold_tdr)
    class_rates = {}
    for name in sorted(rates, key=lambda n: (n != LIVE, n)):
        m, s = mean_std(rates[name])
        class_rates[name] = {"folds": rates[name], "mean": m, "std": s}
    return EvalReport(
        experiment=experiment, k=cfg.k, fdr_target=cfg.fdr_target, seed=cfg.seed,
        fold_tdr=fold_tdr, fold_threshold=fold_thr, fold_C=fold_C,
        tdr_mean=mean, tdr_std=std, class_rates=class_rates,
        timing_ms=float(np.median(unit_ms)),
        n_live=int(np.sum(y < 0)), n_spoof=int(np.sum(y > 0)),
        fold_scores=fold_scores,
    )


# --------------------------------------------------------------------------
# report output


def summary_table(reports: Sequence[EvalReport]) -> str:
    """Fixed-width summary: method, TDR at the FDR target, detection time."""
    if not reports:
        return ""
    fdr = reports[0].fdr_target
    head = ("Method", f"TDR @ FDR = {fdr * 100:g}% (mean +- std)", "Detection Time (msecs)")
    rows = [(EXPERIMENT_LABELS[r.experiment],
             f"{r.tdr_mean * 100:.2f}% +- {r.tdr_std * 100:.2f}",
             f"{r.timing_ms:.0f}") for r in reports]
    widths = [max(len(row[c]) for row in [head, *rows]) for c in range(3)]
    line = "+" + "+".join("-" * (w + 2) for w in widths) + "+"

    def fmt(row):
        return "| " + " | ".join(cell.ljust(w) for cell, w in zip(row, widths)) + " |"

    out = [line, fmt(head), line.replace("-", "=")]
    for row in rows:
        out += [fmt(row), line]
    out.append(f"{reports[0].k} folds; {TIMING_NOTE}")
    return "\n".join(out) + "\n"


def class_rate_table(report: EvalReport) -> str:
    """Per-class correct-detection rates at the 0.5 score threshold."""
    head = ("Finger Type", "Correct Detection Rate (mean +- std)")
    rows = [(name, f"{v['mean'] * 100:.2f}% +- {v['std'] * 100:.2f}")
            for name, v in report.class_rates.items()]
    w0 = max(len(r[0]) for r in [head, *rows])
    w1 = max(len(r[1]) for r in [head, *rows])
    out = [f"{EXPERIMENT_LABELS[report.experiment]}",
           f"{head[0].ljust(w0)} | {head[1]}", f"{'-' * w0}-+-{'-' * w1}"]
    out += [f"{a.ljust(w0)} | {b}" for a, b in rows]
    return "\n".join(out) + "\n"


def write_reports(reports: Sequence[EvalReport], out_dir) -> Dict[str, Path]:
    """Write ``report.json`` and ``report.txt`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    txt_path = out_dir / "report.txt"
    json_path.write_text(json.dumps([r.to_dict() for r in reports], indent=1) + "\n")
    text = summary_table(reports) + "\n" + "\n".join(class_rate_table(r) for r in reports)
    txt_path.write_text(text)
    return {"json": json_path, "text": txt_path}
