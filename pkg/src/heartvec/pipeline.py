"""End-to-end training and scoring: MFCC -> UBM -> T -> i-vector -> reduction -> back end."""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import container
from .dataset import (
    Label,
    LabelTable,
    SplitSpec,
    cumulative_folds,
    list_wavs,
    load_reference,
    load_wav,
    split_train_eval,
)
from .errors import HeartvecError, IncompatibleBundleError, InvalidConfigError, InvalidInputError
from .evaluation import EvalWeights, TRAINING_WEIGHTS, sweep_curve
from .gmm import Gmm, GmmPair, em_fit, train_class_gmms
from .ivector import TotalVariabilityModel, accumulate_stats, extract_ivector, train_tv
from .mfcc import MfccConfig, extract_mfcc
from .pca import PcaModel, pca_fit
from .svm import SvmModel, svm_train
from .vae import VaeModel, vae_fit

log = logging.getLogger(__name__)

REDUCTIONS = ("none", "pca", "vae")
CLASSIFIERS = ("gmm", "svm")
BUNDLE_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    sample_rate_hz: int = 2000
    pre_emphasis: float = 0.97
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 64
    n_filters: int = 20
    n_ceps: int = 12
    ubm_components: int = 2048
    ubm_iterations: int = 10
    ubm_max_frames: int = 0  # 0 keeps every frame
    ivector_rank: int = 100
    tv_iterations: int = 10
    reduction: str = "pca"
    reduced_dim: int = 40
    classifier: str = "gmm"
    class_gmm_components: int = 128
    class_gmm_iterations: int = 20
    svm_c: float = 1.0
    svm_sigma: float = 0.0  # 0 selects the median heuristic
    svm_tolerance: float = 1e-3
    svm_max_passes: int = 200
    vae_hidden: int = 64
    vae_epochs: int = 200
    vae_learning_rate: float = 0.01
    vae_batch_size: int = 32
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        counts = (
            "ubm_components", "ubm_iterations", "ivector_rank", "tv_iterations", "reduced_dim",
            "class_gmm_components", "class_gmm_iterations", "svm_max_passes", "vae_hidden",
            "vae_epochs", "vae_batch_size", "workers",
        )
        for name in counts:
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.ubm_max_frames < 0:
            raise InvalidConfigError("ubm_max_frames must be >= 0")
        if self.reduction not in REDUCTIONS:
            raise InvalidConfigError(f"reduction must be one of {REDUCTIONS}, got {self.reduction!r}")
        if self.classifier not in CLASSIFIERS:
            raise InvalidConfigError(f"classifier must be one of {CLASSIFIERS}, got {self.classifier!r}")
        if self.reduction != "none" and self.reduced_dim > self.ivector_rank:
            raise InvalidConfigError(
                f"reduced_dim={self.reduced_dim} exceeds ivector_rank={self.ivector_rank}"
            )
        if self.svm_c <= 0 or self.svm_sigma < 0 or self.vae_learning_rate <= 0:
            raise InvalidConfigError("svm_c and vae_learning_rate must be positive, svm_sigma >= 0")
        self.mfcc  # validates the front-end settings

    @property
    def mfcc(self) -> MfccConfig:
        return MfccConfig(
            pre_emphasis=self.pre_emphasis,
            frame_ms=self.frame_ms,
            hop_ms=self.hop_ms,
            fft_size=self.fft_size,
            n_filters=self.n_filters,
            n_ceps=self.n_ceps,
            sample_rate_hz=self.sample_rate_hz,
        )

    @property
    def output_dim(self) -> int:
        return self.ivector_rank if self.reduction == "none" else self.reduced_dim

    def updated(self, **changes) -> PipelineConfig:
        return replace(self, **changes)

    @classmethod
    def coerce(cls, values: dict) -> dict:
        """Convert string values to the field types; unknown keys are an error."""
        types = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in types:
                raise InvalidConfigError(f"unknown config key {key!r}")
            kind = types[key]
            try:
                out[key] = raw if not isinstance(raw, str) else (
                    int(raw) if kind == "int" else float(raw) if kind == "float" else raw.strip()
                )
            except ValueError as exc:
                raise InvalidConfigError(f"bad value for {key}: {raw!r}") from exc
        return out

    @classmethod
    def from_text(cls, text: str, **overrides) -> PipelineConfig:
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfigError(f"config line {lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key] = value
        values.update(overrides)
        return cls(**cls.coerce(values))

    @classmethod
    def from_file(cls, path, **overrides) -> PipelineConfig:
        return cls.from_text(Path(path).read_text(), **overrides)

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())


class StageError(HeartvecError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _pmap(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def featurize_dir(data_dir, config: PipelineConfig) -> dict[str, np.ndarray]:
    """MFCC matrices of every ``*.wav`` in ``data_dir``, keyed by record id."""
    paths = list_wavs(data_dir)
    mcfg = config.mfcc
    feats = _pmap(lambda p: extract_mfcc(load_wav(p), mcfg), paths, config.workers)
    return {p.stem: f for p, f in zip(paths, feats)}


@dataclass
class FrontEnd:
    ubm: Gmm
    tv: TotalVariabilityModel

    def ivectors(self, features: list, workers: int = 1) -> np.ndarray:
        return np.array(_pmap(lambda f: extract_ivector(self.tv, accumulate_stats(self.ubm, f)), features, workers))


@dataclass
class TrainedSystem:
    config: PipelineConfig
    front: FrontEnd
    reducer: PcaModel | VaeModel | None
    backend: GmmPair | SvmModel
    diagnostics: dict = field(default_factory=dict)

    def reduce(self, ivecs: np.ndarray) -> np.ndarray:
        return ivecs if self.reducer is None else self.reducer.transform(ivecs)

    def score_features(self, features: list) -> np.ndarray:
        if not features:
            return np.zeros(0)
        ivecs = self.front.ivectors(features, self.config.workers)
        return self.backend.score(self.reduce(ivecs))


def _ubm_frames(features: list, config: PipelineConfig) -> np.ndarray:
    frames = np.concatenate(features, axis=0)
    if config.ubm_max_frames and frames.shape[0] > config.ubm_max_frames:
        rng = np.random.default_rng(config.seed)
        keep = np.sort(rng.choice(frames.shape[0], config.ubm_max_frames, replace=False))
        frames = frames[keep]
    return frames


def train_front_end(features: list, config: PipelineConfig) -> tuple[FrontEnd, np.ndarray, dict]:
    """UBM and total-variability training; returns the training i-vectors too."""
    with stage("ubm"):
        ubm = em_fit(_ubm_frames(features, config), config.ubm_components, config.ubm_iterations, config.seed)
    with stage("stats"):
        stats = _pmap(lambda f: accumulate_stats(ubm, f), features, config.workers)
    with stage("total-variability"):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            tv = train_tv(ubm, stats, config.ivector_rank, config.tv_iterations, config.seed)
        ivecs = np.array([extract_ivector(tv, s) for s in stats])
    diag = {
        "ubm_loglik_trace": list(ubm.trace),
        "ubm_component_resets": ubm.resets,
        "tv_residual_trace": list(tv.residuals),
        "tv_warnings": [str(w.message) for w in caught],
    }
    return FrontEnd(ubm, tv), ivecs, diag


def train_back_end(ivecs: np.ndarray, labels: list, config: PipelineConfig):
    """Reduction plus classifier on top of fixed i-vectors."""
    diag = {}
    with stage("reduction"):
        if config.reduction == "pca":
            reducer = pca_fit(ivecs, config.reduced_dim)
        elif config.reduction == "vae":
            reducer = vae_fit(
                ivecs,
                config.reduced_dim,
                config.vae_hidden,
                config.vae_epochs,
                config.vae_learning_rate,
                config.seed,
                config.vae_batch_size,
            )
            diag["vae_elbo_trace"] = list(reducer.trace)
        else:
            reducer = None
        reduced = ivecs if reducer is None else reducer.transform(ivecs)

    is_normal = np.array([lab is Label.NORMAL for lab in labels])
    with stage("classifier"):
        if config.classifier == "gmm":
            normal, abnormal = train_class_gmms(
                reduced[is_normal],
                reduced[~is_normal],
                config.class_gmm_components,
                config.class_gmm_iterations,
                config.seed,
            )
            backend = GmmPair(normal, abnormal)
            diag["class_gmm_normal_trace"] = list(normal.trace)
            diag["class_gmm_abnormal_trace"] = list(abnormal.trace)
        else:
            backend = svm_train(
                reduced,
                np.where(is_normal, 1.0, -1.0),
                C=config.svm_c,
                sigma=config.svm_sigma or None,
                tolerance=config.svm_tolerance,
                max_passes=config.svm_max_passes,
                seed=config.seed,
            )
            diag["svm_support_vectors"] = int(backend.dual_coeffs.size)
            diag["svm_converged"] = bool(backend.converged)
            diag["svm_sigma"] = backend.sigma
    return reducer, backend, diag


def _labels_for(ids, table: LabelTable) -> list:
    missing = [rid for rid in ids if rid not in table]
    if missing:
        raise InvalidInputError(f"no label for record(s): {', '.join(sorted(missing))}")
    return [table.label(rid) for rid in ids]


def train_system(features: dict, table: LabelTable, config: PipelineConfig) -> TrainedSystem:
    ids = sorted(features)
    if not ids:
        raise InvalidInputError("no training records")
    with stage("labels"):
        labels = _labels_for(ids, table)
        if len(set(labels)) < 2:
            raise InvalidInputError("training data must contain both normal and abnormal records")
    feats = [features[rid] for rid in ids]
    front, ivecs, diag = train_front_end(feats, config)
    reducer, backend, back_diag = train_back_end(ivecs, labels, config)
    diag.update(back_diag)
    diag["n_train_records"] = len(ids)
    return TrainedSystem(config, front, reducer, backend, diag)


# -- bundle on disk --------------------------------------------------------

_FILES = {"ubm": "ubm.model", "tv": "tv.model", "reduction": "reduction.model", "classifier": "classifier.model"}


def save_bundle(system: TrainedSystem, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"ubm": _FILES["ubm"], "tv": _FILES["tv"], "classifier": _FILES["classifier"]}
    container.save_model(system.front.ubm, out / files["ubm"])
    container.save_model(system.front.tv, out / files["tv"])
    if system.reducer is not None:
        files["reduction"] = _FILES["reduction"]
        container.save_model(system.reducer, out / files["reduction"])
    container.save_model(system.backend, out / files["classifier"])
    manifest = {
        "format": "heartvec-bundle",
        "version": BUNDLE_VERSION,
        "seed": system.config.seed,
        "config": asdict(system.config),
        "config_text": system.config.to_text(),
        "files": files,
        "kinds": {k: container.peek_kind(out / v) for k, v in files.items()},
        "dims": {
            "features": system.front.ubm.dim,
            "ubm_components": system.front.ubm.n_components,
            "ivector": system.front.tv.rank,
            "classifier_input": system.config.output_dim,
        },
        "diagnostics": system.diagnostics,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_bundle(bundle_dir) -> TrainedSystem:
    root = Path(bundle_dir)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise IncompatibleBundleError(f"{root}: no manifest.json") from exc
    if manifest.get("format") != "heartvec-bundle" or manifest.get("version") != BUNDLE_VERSION:
        raise IncompatibleBundleError(f"{root}: unsupported bundle format/version")
    files = manifest["files"]
    config = PipelineConfig(**manifest["config"])
    ubm = container.load_model(root / files["ubm"], Gmm)
    tv = container.load_model(root / files["tv"], TotalVariabilityModel)
    reducer = None
    if config.reduction != "none":
        if "reduction" not in files:
            raise IncompatibleBundleError(f"{root}: config asks for {config.reduction} but no reduction model saved")
        reducer = container.load_model(root / files["reduction"], PcaModel if config.reduction == "pca" else VaeModel)
    backend = container.load_model(root / files["classifier"], GmmPair if config.classifier == "gmm" else SvmModel)
    system = TrainedSystem(config, FrontEnd(ubm, tv), reducer, backend, manifest.get("diagnostics", {}))
    check_consistency(system)
    return system


def check_consistency(system: TrainedSystem) -> None:
    ubm, tv, cfg = system.front.ubm, system.front.tv, system.config
    problems = []
    if ubm.dim != cfg.n_ceps:
        problems.append(f"UBM dimension {ubm.dim} != n_ceps {cfg.n_ceps}")
    if (tv.n_components, tv.feature_dim) != (ubm.n_components, ubm.dim):
        problems.append(f"T built for C={tv.n_components}, D={tv.feature_dim}; UBM has C={ubm.n_components}, D={ubm.dim}")
    elif not (np.array_equal(tv.ubm_means, ubm.means.ravel()) and np.array_equal(tv.ubm_variances, ubm.variances.ravel())):
        problems.append("T model was trained against a different UBM")
    width = tv.rank
    if system.reducer is not None:
        if system.reducer.input_dim != tv.rank:
            problems.append(f"reduction expects {system.reducer.input_dim}-dim input, i-vectors have {tv.rank}")
        width = system.reducer.output_dim
    if system.backend.dim != width:
        problems.append(f"classifier expects {system.backend.dim}-dim input, receives {width}")
    if problems:
        raise IncompatibleBundleError("; ".join(problems))


def score_dir(data_dir, system: TrainedSystem) -> dict[str, float]:
    features = featurize_dir(data_dir, system.config)
    if not features:
        warnings.warn(f"no WAV files found in {data_dir}", UserWarning, stacklevel=2)
        return {}
    ids = sorted(features)
    scores = system.score_features([features[rid] for rid in ids])
    return dict(zip(ids, (float(s) for s in scores)))


def write_scores(scores: dict, path) -> None:
    with open(path, "w") as fh:
        fh.write("record_id,score\n")
        for rid in sorted(scores):
            fh.write(f"{rid},{scores[rid]!r}\n")


def read_scores(path) -> dict[str, float]:
    scores = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or (lineno == 1 and line.startswith("record_id")):
                continue
            rid, _, value = line.partition(",")
            try:
                scores[rid.strip()] = float(value)
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: bad score {value!r}") from exc
    return scores


# -- training-size ablation ------------------------------------------------


@dataclass
class AblationCell:
    fraction: float
    reduction: str
    classifier: str
    Se: float | None = None
    Sp: float | None = None
    MAcc: float | None = None
    error: str | None = None


def run_ablation(
    features: dict,
    table: LabelTable,
    config: PipelineConfig,
    folds: int = 5,
    reductions=REDUCTIONS,
    classifiers=("gmm",),
    train_fraction: float = 0.8,
    weights: EvalWeights = TRAINING_WEIGHTS,
) -> list[AblationCell]:
    """Grow the training set fold by fold and score a fixed held-out split.

    Each cell reports Se/Sp/MAcc at the MAcc-maximising threshold on the
    held-out records. A failing cell is recorded and the run continues.
    """
    if folds < 2:
        raise InvalidConfigError("ablation needs at least 2 folds")
    labelled = table.subset([rid for rid in table.ids() if rid in features])
    train_table, eval_table = split_train_eval(labelled, SplitSpec(train_fraction, config.seed, folds))
    eval_ids = eval_table.ids()
    eval_feats = [features[rid] for rid in eval_ids]
    cells = []
    for k, subset in enumerate(cumulative_folds(train_table, SplitSpec(train_fraction, config.seed, folds)), start=1):
        fraction = k / folds
        ids = subset.ids()
        try:
            front, ivecs, _ = train_front_end([features[rid] for rid in ids], config)
            eval_ivecs = front.ivectors(eval_feats, config.workers)
            front_error = None
        except Exception as exc:  # noqa: BLE001 - reported in the grid
            front_error = f"{type(exc).__name__}: {exc}"
        labels = [subset.label(rid) for rid in ids]
        for reduction in reductions:
            for classifier in classifiers:
                cell = AblationCell(fraction, reduction, classifier)
                cells.append(cell)
                if front_error:
                    cell.error = front_error
                    continue
                try:
                    cfg = config.updated(reduction=reduction, classifier=classifier)
                    reducer, backend, _ = train_back_end(ivecs, labels, cfg)
                    reduced = eval_ivecs if reducer is None else reducer.transform(eval_ivecs)
                    scores = dict(zip(eval_ids, (float(s) for s in backend.score(reduced))))
                    report = sweep_curve(scores, eval_table, weights)
                    cell.Se, cell.Sp, cell.MAcc = report.Se, report.Sp, report.MAcc
                except Exception as exc:  # noqa: BLE001
                    cell.error = f"{type(exc).__name__}: {exc}"
                    log.warning("ablation cell %.0f%%/%s/%s failed: %s", 100 * fraction, reduction, classifier, exc)
    return cells


def write_ablation(cells, path) -> None:
    with open(path, "w") as fh:
        fh.write("train_fraction,reduction,classifier,Se,Sp,MAcc\n")
        for c in cells:
            if c.error:
                fh.write(f"{c.fraction:.2f},{c.reduction},{c.classifier},error,error,error\n")
            else:
                fh.write(f"{c.fraction:.2f},{c.reduction},{c.classifier},{c.Se:.4f},{c.Sp:.4f},{c.MAcc:.4f}\n")


def load_corpus(data_dir, labels_file, config: PipelineConfig) -> tuple[dict, LabelTable]:
    """Features for every WAV in ``data_dir``; every WAV must have a label."""
    table = load_reference(labels_file)
    with stage("labels"):
        unlabelled = [p.stem for p in list_wavs(data_dir) if p.stem not in table]
        if unlabelled:
            raise InvalidInputError(f"no label for record(s): {', '.join(unlabelled)}")
    with stage("features"):
        features = featurize_dir(data_dir, config)
    return features, table
