"""Staged training: source-language pretraining, cross-lingual transfer,
target-domain fine-tuning, the baselines, ablations and the extractor swap
experiment"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from os.path import abspath, dirname, exists, isabs, join, relpath
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from hdx.utilities.loader import load_yaml
from hdx.utilities.saver import save_yaml

from . import config_hash, derive_seed
from .corpus import CorpusStats, Manifest, compute_stats, load_manifest, save_manifest
from .dsp import AugmentationRecipe, apply_recipe, load_noise_pool, load_rir_pool
from .evaluation import (
    EvaluationResult,
    evaluate,
    render_table,
    write_records,
)
from .features import (
    FeatureConfig,
    SpeakerEmbeddingExtractor,
    featurize,
    load_extractor,
    save_extractor,
    train_embedding_extractor,
)
from .nnet import (
    AcousticModel,
    LayerSpec,
    TrainConfig,
    TrainingExample,
    TrainingLog,
    desk_scale_layers,
    init_model,
    layers_from_pattern,
    load_checkpoint,
    save_checkpoint,
    train,
    transfer_full,
    transfer_hidden,
)
from .synthbench import BenchmarkLayout, load_lexicon, load_phone_set

logger = logging.getLogger(__name__)

STAGE1 = "Stage1"
STAGE2 = "Stage2"
STAGE3 = "Stage3"
SCRATCH = "Scratch"
STAGE_NAMES = (STAGE1, STAGE2, STAGE3, SCRATCH)
TRANSFER_NONE = "none"
TRANSFER_HIDDEN = "hidden"
TRANSFER_FULL = "full"
EXTRACTOR_NEW = "train-new"
EXTRACTOR_INHERIT = "inherit"
STAGE3_LR_DIVISOR = 100.0
BASELINE_SETUP = "baseline_target"


class PipelineError(Exception):
    pass


def _resolve(path: Optional[str], base_dir: str) -> Optional[str]:
    if path is None or isabs(path):
        return path
    return abspath(join(base_dir, path))


def _relative(path: Optional[str], base_dir: Optional[str]) -> Optional[str]:
    if path is None or base_dir is None:
        return path
    return relpath(path, base_dir)


@dataclass(frozen=True)
class StageConfig:
    """One training stage

    Args:
        name (str): Stage1, Stage2, Stage3 or Scratch
        manifest (str): Training manifest
        phones (str): Phone list of the output layer
        train (TrainConfig): Training configuration
        recipe (AugmentationRecipe): Augmentation. Defaults to no augmentation.
        transfer (str): none, hidden or full. Defaults to none.
        extractor (str): train-new or inherit. Defaults to train-new.
    """

    name: str
    manifest: str
    phones: str
    train: TrainConfig
    recipe: AugmentationRecipe = AugmentationRecipe()
    transfer: str = TRANSFER_NONE
    extractor: str = EXTRACTOR_NEW

    def __post_init__(self) -> None:
        if self.name not in STAGE_NAMES:
            raise PipelineError(f"Unknown stage {self.name}!")
        if self.transfer not in (TRANSFER_NONE, TRANSFER_HIDDEN, TRANSFER_FULL):
            raise PipelineError(f"Unknown transfer mode {self.transfer}!")
        if self.extractor not in (EXTRACTOR_NEW, EXTRACTOR_INHERIT):
            raise PipelineError(f"Unknown extractor mode {self.extractor}!")
        if self.name in (STAGE1, SCRATCH) and self.transfer != TRANSFER_NONE:
            raise PipelineError(f"{self.name} cannot transfer weights!")
        if self.name == STAGE3 and self.transfer == TRANSFER_NONE:
            raise PipelineError("Stage3 must transfer weights!")

    def to_dict(self, base_dir: Optional[str] = None) -> Dict:
        return {
            "name": self.name,
            "manifest": _relative(self.manifest, base_dir),
            "phones": _relative(self.phones, base_dir),
            "train": self.train.to_dict(),
            "recipe": self.recipe.to_dict(),
            "transfer": self.transfer,
            "extractor": self.extractor,
        }

    @classmethod
    def from_dict(cls, data: Dict, base_dir: str) -> "StageConfig":
        try:
            return cls(
                name=data["name"],
                manifest=_resolve(data["manifest"], base_dir),
                phones=_resolve(data["phones"], base_dir),
                train=TrainConfig.from_dict(data["train"]),
                recipe=AugmentationRecipe.from_dict(data.get("recipe")),
                transfer=data.get("transfer", TRANSFER_NONE),
                extractor=data.get("extractor", EXTRACTOR_NEW),
            )
        except KeyError as e:
            raise PipelineError(f"Stage configuration lacks {e}!") from e


@dataclass
class PipelineConfig:
    """Stages in order plus everything shared by them

    Args:
        stages (List[StageConfig]): Stages in order
        seed (int): Global seed
        output_dir (str): Output directory
        test_sets (Dict[str, str]): Test set name to manifest
        lexicon (str): Lexicon of the target language
        rir_pool (Optional[str]): RIR pool directory. Defaults to None.
        noise_pool (Optional[str]): Noise pool directory. Defaults to None.
        features (FeatureConfig): Front-end. Defaults to FeatureConfig().
        layers (List[LayerSpec]): Hidden layers. Defaults to desk_scale_layers().
        extractor_max_utterances (Optional[int]): Extractor training subset. Defaults to 400.
        jobs (int): Worker threads for per-utterance work. Defaults to 1.
    """

    stages: List[StageConfig]
    seed: int
    output_dir: str
    test_sets: Dict[str, str]
    lexicon: str
    rir_pool: Optional[str] = None
    noise_pool: Optional[str] = None
    features: FeatureConfig = FeatureConfig()
    layers: List[LayerSpec] = field(default_factory=desk_scale_layers)
    extractor_max_utterances: Optional[int] = 400
    jobs: int = 1

    def __post_init__(self) -> None:
        if not self.stages:
            raise PipelineError("Pipeline has no stages!")
        if not self.test_sets:
            raise PipelineError("Pipeline has no test sets!")
        if self.stages[0].transfer != TRANSFER_NONE:
            raise PipelineError(f"First stage {self.stages[0].name} has no predecessor!")
        if self.stages[0].extractor == EXTRACTOR_INHERIT:
            raise PipelineError(
                f"First stage {self.stages[0].name} cannot inherit an extractor!"
            )

    def stage(self, name: str) -> StageConfig:
        for stage in self.stages:
            if stage.name == name:
                return stage
        raise PipelineError(f"Pipeline has no stage {name}!")

    def validate_phone_sets(self) -> None:
        """Full transfer must keep the phone set of its predecessor"""
        previous = None
        for stage in self.stages:
            phones = load_phone_set(stage.phones)
            if stage.transfer == TRANSFER_FULL and phones != previous:
                raise PipelineError(
                    f"{stage.name} uses full transfer but changes the phone set!"
                )
            previous = phones

    def to_dict(self, base_dir: Optional[str] = None) -> Dict:
        return {
            "seed": self.seed,
            "output_dir": _relative(self.output_dir, base_dir),
            "test_sets": {
                name: _relative(path, base_dir) for name, path in self.test_sets.items()
            },
            "lexicon": _relative(self.lexicon, base_dir),
            "pools": {
                "rir": _relative(self.rir_pool, base_dir),
                "noise": _relative(self.noise_pool, base_dir),
            },
            "features": self.features.to_dict(),
            "layers": [spec.to_dict() for spec in self.layers],
            "extractor_max_utterances": self.extractor_max_utterances,
            "jobs": self.jobs,
            "stages": [stage.to_dict(base_dir) for stage in self.stages],
        }

    @classmethod
    def from_dict(cls, data: Dict, base_dir: str) -> "PipelineConfig":
        model = data.get("model")
        if "layers" in data:
            layers = [LayerSpec.from_dict(spec) for spec in data["layers"]]
        elif model:
            layers = layers_from_pattern(
                model.get("pattern", "TTL"),
                model.get("tdnn_dim", 64),
                model.get("cell_dim", 64),
                model.get("projection_dim", 32),
                model.get("activation", "relu"),
            )
        else:
            layers = desk_scale_layers()
        pools = data.get("pools") or {}
        try:
            return cls(
                stages=[
                    StageConfig.from_dict(stage, base_dir) for stage in data["stages"]
                ],
                seed=int(data.get("seed", 0)),
                output_dir=_resolve(data.get("output_dir", "runs"), base_dir),
                test_sets={
                    name: _resolve(path, base_dir)
                    for name, path in data["test_sets"].items()
                },
                lexicon=_resolve(data["lexicon"], base_dir),
                rir_pool=_resolve(pools.get("rir"), base_dir),
                noise_pool=_resolve(pools.get("noise"), base_dir),
                features=FeatureConfig.from_dict(data.get("features")),
                layers=layers,
                extractor_max_utterances=data.get("extractor_max_utterances", 400),
                jobs=int(data.get("jobs", 1)),
            )
        except KeyError as e:
            raise PipelineError(f"Pipeline configuration lacks {e}!") from e


def load_pipeline_config(
    path: str, seed: Optional[int] = None, output_dir: Optional[str] = None
) -> PipelineConfig:
    """
    Load a pipeline configuration from YAML. Relative paths resolve against
    the directory of the file.

    Args:
        path (str): Configuration file
        seed (Optional[int]): Override of the global seed. Defaults to None.
        output_dir (Optional[str]): Override of the output directory. Defaults to None.

    Returns:
        PipelineConfig: Configuration
    """
    if not exists(path):
        raise PipelineError(f"Configuration {path} does not exist!")
    data = load_yaml(path)
    if not isinstance(data, dict):
        raise PipelineError(f"Configuration {path} is not a mapping!")
    cfg = PipelineConfig.from_dict(data, dirname(abspath(path)))
    if seed is not None:
        cfg.seed = seed
    if output_dir is not None:
        cfg.output_dir = abspath(output_dir)
    return cfg


@dataclass
class StageResult:
    """Outcome of a stage: trained model, its extractor and training log"""

    name: str
    key: str
    transfer: str
    model: AcousticModel
    extractor: SpeakerEmbeddingExtractor
    log: TrainingLog
    stage_dir: str
    override_fingerprint: bool = False

    @property
    def checkpoint(self) -> str:
        return join(self.stage_dir, "model.ckpt")

    @property
    def initial_checkpoint(self) -> str:
        return join(self.stage_dir, "init.ckpt")

    def summary(self) -> Dict:
        return {
            "name": self.name,
            "key": self.key,
            "transfer": self.transfer,
            "fingerprint": self.model.fingerprint,
            "extractor": self.extractor.fingerprint,
            "override_fingerprint": self.override_fingerprint,
            "initial_lr": self.log.initial_lr,
            "final_lr": self.log.final_lr,
            "dropout_rate": self.log.dropout_rate,
            "losses": self.log.losses,
        }


def _atomic_save_yaml(data: Dict, path: str) -> None:
    temporary = f"{path}.tmp"
    save_yaml(data, temporary)
    os.replace(temporary, path)


def _atomic_save_extractor(extractor: SpeakerEmbeddingExtractor, path: str) -> None:
    temporary = f"{path}.tmp"
    save_extractor(extractor, temporary)
    os.replace(temporary, path)


def _pools(cfg: PipelineConfig, recipe: AugmentationRecipe):
    rir_pool = noise_pool = None
    if any(copy.reverb for copy in recipe.copies):
        if not cfg.rir_pool:
            raise PipelineError("Recipe needs reverberation but no RIR pool configured!")
        rir_pool = load_rir_pool(cfg.rir_pool)
    if any(copy.noise for copy in recipe.copies):
        if not cfg.noise_pool:
            raise PipelineError("Recipe needs noise but no noise pool configured!")
        noise_pool = load_noise_pool(cfg.noise_pool)
    return rir_pool, noise_pool


def augment_manifest(
    manifest: Manifest, recipe: AugmentationRecipe, cfg: PipelineConfig
) -> Manifest:
    """
    Apply a recipe once per (manifest, recipe) and reuse the result
    afterwards

    Args:
        manifest (Manifest): Clean manifest
        recipe (AugmentationRecipe): Recipe
        cfg (PipelineConfig): Pipeline configuration

    Returns:
        Manifest: Expanded manifest
    """
    if recipe.is_identity:
        return manifest
    key = config_hash(
        {
            "ids": manifest.ids,
            "name": manifest.name,
            "recipe": recipe.to_dict(),
            "features": cfg.features.to_dict(),
        }
    )
    data_dir = join(cfg.output_dir, "data", f"{manifest.name}-{key}")
    path = join(data_dir, "manifest.jsonl")
    if exists(path):
        logger.info(f"Reusing augmented {manifest.name} in {data_dir}")
        return load_manifest(path, f"{manifest.name}_aug")
    rir_pool, noise_pool = _pools(cfg, recipe)
    expanded = apply_recipe(
        manifest,
        recipe,
        data_dir,
        rir_pool,
        noise_pool,
        cfg.features.window,
        cfg.features.shift,
        cfg.jobs,
    )
    temporary = f"{path}.tmp"
    save_manifest(expanded, temporary)
    os.replace(temporary, path)
    return expanded


def featurize_manifest(
    manifest: Manifest,
    extractor: SpeakerEmbeddingExtractor,
    features: FeatureConfig,
    expected_fingerprint: str,
    override_fingerprint: bool = False,
    jobs: int = 1,
) -> List[TrainingExample]:
    """
    Network inputs and frame labels of every utterance in manifest order.
    Inputs are kept in single precision.

    Args:
        manifest (Manifest): Manifest with frame labels
        extractor (SpeakerEmbeddingExtractor): Extractor
        features (FeatureConfig): Front-end
        expected_fingerprint (str): Fingerprint of the model to train
        override_fingerprint (bool): Allow a mismatching extractor. Defaults to False.
        jobs (int): Worker threads. Defaults to 1.

    Returns:
        List[TrainingExample]: Training examples
    """

    def example(utterance) -> TrainingExample:
        if utterance.labels is None:
            raise PipelineError(f"Utterance {utterance.id} has no frame labels!")
        inputs = featurize(
            utterance,
            extractor,
            features,
            expected_fingerprint,
            override_fingerprint,
        )
        return TrainingExample(
            utterance.id, inputs.data.astype(np.float32), utterance.load_labels()
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            return list(executor.map(example, manifest))
    return [example(utterance) for utterance in manifest]


def input_normalisation(
    examples: Sequence[TrainingExample],
) -> Tuple[np.ndarray, np.ndarray]:
    frames = np.concatenate([example.inputs for example in examples]).astype(
        np.float64
    )
    return frames.mean(axis=0), np.maximum(frames.std(axis=0), 1e-3)


def stage3_train_config(train_cfg: TrainConfig, predecessor_final_lr: float) -> TrainConfig:
    """
    Fine-tuning schedule: the initial learning rate is the predecessor's
    final one divided by 100, the configured decay ratio is kept and dropout
    is off

    Args:
        train_cfg (TrainConfig): Configured training
        predecessor_final_lr (float): Last learning rate of the predecessor

    Returns:
        TrainConfig: Training configuration to use
    """
    initial = predecessor_final_lr / STAGE3_LR_DIVISOR
    ratio = train_cfg.final_lr / train_cfg.initial_lr
    return replace(
        train_cfg, initial_lr=initial, final_lr=initial * ratio, dropout_rate=0.0
    )


def _stage_key(
    stage: StageConfig,
    predecessor: Optional[StageResult],
    cfg: PipelineConfig,
    extractor: Optional[SpeakerEmbeddingExtractor],
    override_fingerprint: bool,
) -> str:
    return config_hash(
        {
            "stage": stage.to_dict(),
            "predecessor": predecessor.key if predecessor else None,
            "seed": cfg.seed,
            "features": cfg.features.to_dict(),
            "layers": [spec.to_dict() for spec in cfg.layers],
            "extractor_max_utterances": cfg.extractor_max_utterances,
            "extractor": extractor.fingerprint if extractor else None,
            "override_fingerprint": override_fingerprint,
        }
    )


def _load_stage(
    stage: StageConfig, key: str, stage_dir: str, override_fingerprint: bool
) -> StageResult:
    record = load_yaml(join(stage_dir, "log.yaml"))
    logger.info(f"Reusing {stage.name} {key} from {stage_dir}")
    return StageResult(
        name=stage.name,
        key=key,
        transfer=record["transfer"],
        model=load_checkpoint(join(stage_dir, "model.ckpt")),
        extractor=load_extractor(join(stage_dir, "extractor.bin")),
        log=TrainingLog.from_dict(record["log"]),
        stage_dir=stage_dir,
        override_fingerprint=override_fingerprint,
    )


def run_stage(
    stage: StageConfig,
    predecessor: Optional[StageResult],
    cfg: PipelineConfig,
    extractor: Optional[SpeakerEmbeddingExtractor] = None,
    override_fingerprint: bool = False,
) -> StageResult:
    """
    Run one stage: augment its data, train or inherit the extractor,
    featurize, build the initial model by its transfer mode and train. The
    result is stored under a directory named by the hash of everything the
    stage depends on, and reused when present.

    Args:
        stage (StageConfig): Stage
        predecessor (Optional[StageResult]): Preceding stage
        cfg (PipelineConfig): Pipeline configuration
        extractor (Optional[SpeakerEmbeddingExtractor]): Extractor to use instead of the stage's own. Defaults to None.
        override_fingerprint (bool): Allow the model and extractor fingerprints to differ. Defaults to False.

    Returns:
        StageResult: Trained stage
    """
    if stage.transfer != TRANSFER_NONE and predecessor is None:
        raise PipelineError(f"{stage.name} transfers weights but has no predecessor!")
    if stage.extractor == EXTRACTOR_INHERIT and predecessor is None and extractor is None:
        raise PipelineError(f"{stage.name} inherits an extractor but has no predecessor!")
    key = _stage_key(stage, predecessor, cfg, extractor, override_fingerprint)
    stage_dir = join(cfg.output_dir, "stages", f"{stage.name.lower()}-{key}")
    if exists(join(stage_dir, "log.yaml")):
        return _load_stage(stage, key, stage_dir, override_fingerprint)
    os.makedirs(stage_dir, exist_ok=True)
    seed = derive_seed(cfg.seed, key)
    manifest = load_manifest(stage.manifest)
    phones = load_phone_set(stage.phones)

    if extractor is None:
        if stage.extractor == EXTRACTOR_NEW:
            extractor = train_embedding_extractor(
                manifest,
                cfg.features,
                seed=seed,
                max_utterances=cfg.extractor_max_utterances,
            )
        else:
            extractor = predecessor.extractor

    if stage.transfer == TRANSFER_NONE:
        fingerprint = extractor.fingerprint
    else:
        fingerprint = predecessor.model.fingerprint
        if stage.transfer == TRANSFER_FULL and tuple(phones) != predecessor.model.phone_set:
            raise PipelineError(
                f"{stage.name} uses full transfer but changes the phone set!"
            )
    if fingerprint != extractor.fingerprint and not override_fingerprint:
        raise PipelineError(
            f"{stage.name}: extractor {extractor.fingerprint} does not match model fingerprint {fingerprint}!"
        )

    data = augment_manifest(manifest, stage.recipe, cfg)
    examples = featurize_manifest(
        data, extractor, cfg.features, fingerprint, override_fingerprint, cfg.jobs
    )
    if stage.transfer == TRANSFER_NONE:
        shift, scale = input_normalisation(examples)
        model = init_model(
            cfg.features.input_dim,
            cfg.layers,
            phones,
            fingerprint,
            seed,
            shift,
            scale,
        )
    elif stage.transfer == TRANSFER_HIDDEN:
        model = transfer_hidden(predecessor.model, phones, seed)
    else:
        model = transfer_full(predecessor.model)

    train_cfg = replace(stage.train, seed=seed)
    if stage.name == STAGE3:
        if stage.train.dropout_rate != 0:
            logger.warning(
                f"Stage3 dropout {stage.train.dropout_rate} replaced by 0"
            )
        train_cfg = stage3_train_config(train_cfg, predecessor.log.last_lr)
    logger.info(
        f"{stage.name} {key}: {stage.transfer} transfer, {len(examples)} utterances, lr {train_cfg.initial_lr:.3g} to {train_cfg.final_lr:.3g}, dropout {train_cfg.dropout_rate}"
    )
    save_checkpoint(model, join(stage_dir, "init.ckpt"))
    model, log = train(model, examples, train_cfg)
    save_checkpoint(model, join(stage_dir, "model.ckpt"))
    _atomic_save_extractor(extractor, join(stage_dir, "extractor.bin"))
    result = StageResult(
        name=stage.name,
        key=key,
        transfer=stage.transfer,
        model=model,
        extractor=extractor,
        log=log,
        stage_dir=stage_dir,
        override_fingerprint=override_fingerprint,
    )
    _atomic_save_yaml(
        {
            **result.summary(),
            "predecessor": predecessor.key if predecessor else None,
            "stage": stage.to_dict(),
            "train": train_cfg.to_dict(),
            "log": log.to_dict(),
        },
        join(stage_dir, "log.yaml"),
    )
    return result


@dataclass(frozen=True)
class AblationSpec:
    """Setup of the comparison table: which of the three stages run

    Args:
        name (str): Setup name
        stages (Tuple[int, ...]): Included stage numbers out of 1, 2 and 3
    """

    name: str
    stages: Tuple[int, ...]

    def __post_init__(self) -> None:
        stages = tuple(sorted(set(self.stages)))
        if not stages:
            raise PipelineError(f"Setup {self.name} includes no stage!")
        if any(stage not in (1, 2, 3) for stage in stages):
            raise PipelineError(f"Setup {self.name} has unknown stages {stages}!")
        object.__setattr__(self, "stages", stages)


PRESETS = {
    "baseline_broadcast": AblationSpec("baseline_broadcast", (2,)),
    "baseline_target": AblationSpec("baseline_target", (3,)),
    "remove_stage1": AblationSpec("remove_stage1", (2, 3)),
    "remove_stage2": AblationSpec("remove_stage2", (1, 3)),
    "remove_stage3": AblationSpec("remove_stage3", (1, 2)),
    "proposed": AblationSpec("proposed", (1, 2, 3)),
}


def get_presets(names: Sequence[str]) -> List[AblationSpec]:
    """
    Look up setups by name; "all" gives the six setups in table order

    Args:
        names (Sequence[str]): Setup names

    Returns:
        List[AblationSpec]: Setups
    """
    if list(names) == ["all"]:
        return list(PRESETS.values())
    specs = []
    for name in names:
        spec = PRESETS.get(name)
        if spec is None:
            raise PipelineError(
                f"Unknown setup {name}! Choose from {', '.join(PRESETS)} or all."
            )
        specs.append(spec)
    return specs


def plan_setup(base: PipelineConfig, spec: AblationSpec) -> List[StageConfig]:
    """
    Stages of a setup. The first included stage starts from scratch with its
    own extractor; a Stage3 in that position becomes a Scratch stage on the
    target data with Stage2's training configuration. Later stages inherit
    the extractor and transfer the hidden layers when the phone set changes,
    the whole model otherwise.

    Args:
        base (PipelineConfig): Configuration holding Stage1, Stage2 and Stage3
        spec (AblationSpec): Setup

    Returns:
        List[StageConfig]: Planned stages
    """
    stages = {1: base.stage(STAGE1), 2: base.stage(STAGE2), 3: base.stage(STAGE3)}
    planned = []
    previous_phones = None
    for number in spec.stages:
        stage = stages[number]
        phones = load_phone_set(stage.phones)
        if not planned:
            if number == 3:
                stage = replace(
                    stage,
                    name=SCRATCH,
                    train=stages[2].train,
                    transfer=TRANSFER_NONE,
                    extractor=EXTRACTOR_NEW,
                )
            else:
                stage = replace(
                    stage, transfer=TRANSFER_NONE, extractor=EXTRACTOR_NEW
                )
        else:
            transfer = TRANSFER_FULL if phones == previous_phones else TRANSFER_HIDDEN
            stage = replace(stage, transfer=transfer, extractor=EXTRACTOR_INHERIT)
        planned.append(stage)
        previous_phones = phones
    return planned


@dataclass
class RunReport:
    """Stage logs and test results of one setup"""

    setup: str
    included: Tuple[int, ...]
    stages: List[Dict]
    results: List[EvaluationResult]
    test_stats: Dict[str, CorpusStats]

    def result(self, test_set: str) -> EvaluationResult:
        for result in self.results:
            if result.test_set == test_set:
                return result
        raise PipelineError(f"Report {self.setup} has no test set {test_set}!")

    def setup_row(self) -> List[str]:
        return ["x" if number in self.included else "" for number in (1, 2, 3)]

    def to_dict(self) -> Dict:
        return {
            "setup": self.setup,
            "included": list(self.included),
            "stages": self.stages,
            "results": [result.to_record() for result in self.results],
            "test_stats": {
                name: {
                    "total_length_min": stats.total_length_min,
                    "avg_segment_length_s": stats.avg_segment_length_s,
                    "avg_words_per_segment": stats.avg_words_per_segment,
                    "avg_words_per_second": stats.avg_words_per_second,
                }
                for name, stats in self.test_stats.items()
            },
        }


def evaluate_all(
    model: AcousticModel,
    extractor: SpeakerEmbeddingExtractor,
    cfg: PipelineConfig,
    override_fingerprint: bool = False,
) -> List[EvaluationResult]:
    """
    Evaluate a model on every configured test set in configuration order

    Args:
        model (AcousticModel): Model
        extractor (SpeakerEmbeddingExtractor): Extractor
        cfg (PipelineConfig): Pipeline configuration
        override_fingerprint (bool): Allow a mismatching extractor. Defaults to False.

    Returns:
        List[EvaluationResult]: One result per test set
    """
    lexicon = load_lexicon(cfg.lexicon)
    return [
        evaluate(
            model,
            extractor,
            load_manifest(path, name),
            cfg.features,
            lexicon,
            override_fingerprint=override_fingerprint,
            jobs=cfg.jobs,
        )
        for name, path in cfg.test_sets.items()
    ]


def _run_stages(
    cfg: PipelineConfig,
    stages: Sequence[StageConfig],
    setup: str,
    included: Tuple[int, ...],
) -> RunReport:
    predecessor = None
    results = []
    for stage in stages:
        predecessor = run_stage(stage, predecessor, cfg)
        results.append(predecessor)
    evaluations = evaluate_all(predecessor.model, predecessor.extractor, cfg)
    test_stats = {
        name: compute_stats(load_manifest(path, name))
        for name, path in cfg.test_sets.items()
    }
    return RunReport(
        setup,
        included,
        [result.summary() for result in results],
        evaluations,
        test_stats,
    )


def _included(stages: Sequence[StageConfig]) -> Tuple[int, ...]:
    numbers = {STAGE1: 1, STAGE2: 2, STAGE3: 3, SCRATCH: 3}
    return tuple(sorted({numbers[stage.name] for stage in stages}))


def run_pipeline(cfg: PipelineConfig, setup: str = "pipeline") -> RunReport:
    """
    Run the configured stages in order, threading model and extractor from
    stage to stage, and evaluate the final model on all test sets

    Args:
        cfg (PipelineConfig): Pipeline configuration
        setup (str): Name of the run in the report. Defaults to "pipeline".

    Returns:
        RunReport: Report
    """
    cfg.validate_phone_sets()
    return _run_stages(cfg, cfg.stages, setup, _included(cfg.stages))


def run_ablation(
    base: PipelineConfig, specs: Sequence[AblationSpec]
) -> List[RunReport]:
    """
    Run each setup. Stages shared between setups hash to the same directory
    and are trained once.

    Args:
        base (PipelineConfig): Configuration holding Stage1, Stage2 and Stage3
        specs (Sequence[AblationSpec]): Setups

    Returns:
        List[RunReport]: One report per setup
    """
    if not specs:
        raise PipelineError("No setups to run!")
    reports = []
    for spec in specs:
        logger.info(f"Running setup {spec.name} with stages {spec.stages}")
        reports.append(
            _run_stages(base, plan_setup(base, spec), spec.name, spec.stages)
        )
    return reports


def relative_improvement(baseline: float, value: float) -> float:
    """Relative WER reduction in percent against a baseline"""
    if baseline == 0:
        return 0.0
    return 100.0 * (baseline - value) / baseline


def render_ablation_table(
    reports: Sequence[RunReport], baseline: str = BASELINE_SETUP
) -> str:
    """
    Comparison table with one row per setup: stage marks, WER in percent per
    test set and the relative improvement on the first test set against the
    baseline setup when it was run

    Args:
        reports (Sequence[RunReport]): Reports
        baseline (str): Setup to compare against. Defaults to "baseline_target".

    Returns:
        str: Table
    """
    if not reports:
        raise PipelineError("No reports to render!")
    test_sets = [result.test_set for result in reports[0].results]
    base = next((report for report in reports if report.setup == baseline), None)
    header = ["Setup", "Stage 1", "Stage 2", "Stage 3"] + test_sets
    if base is not None:
        header.append("Rel. impr. %")
    rows = []
    for report in reports:
        row = [report.setup] + report.setup_row()
        row += [100.0 * report.result(name).report.wer for name in test_sets]
        if base is not None:
            row.append(
                relative_improvement(
                    base.result(test_sets[0]).report.wer,
                    report.result(test_sets[0]).report.wer,
                )
            )
        rows.append(row)
    return render_table(header, rows)


def write_reports(reports: Sequence[RunReport], out_dir: str) -> None:
    """
    Write report.txt (comparison table), report.jsonl (one record per
    setup and test set) and report.yaml (everything)

    Args:
        reports (Sequence[RunReport]): Reports
        out_dir (str): Output directory

    Returns:
        None
    """
    os.makedirs(out_dir, exist_ok=True)
    with open(join(out_dir, "report.txt"), "w", encoding="utf-8", newline="\n") as fp:
        fp.write(render_ablation_table(reports))
    records = []
    for report in reports:
        for result in report.results:
            records.append({"setup": report.setup, **result.to_record()})
    write_records(join(out_dir, "report.jsonl"), records)
    save_yaml([report.to_dict() for report in reports], join(out_dir, "report.yaml"))


RANDOM_INIT = "random"
TRANSFERRED_INIT = "transferred"


@dataclass
class SwapReport:
    """Four combinations of model initialisation and extractor training
    language, plus frame accuracy of the transferred model evaluated with
    its own and with the other extractor"""

    cells: Dict[Tuple[str, str], List[EvaluationResult]]
    matched_frame_accuracy: float
    mismatched_frame_accuracy: float
    extractors: Dict[str, str]

    def render(self) -> str:
        columns = [
            (init, language)
            for init in (RANDOM_INIT, TRANSFERRED_INIT)
            for language in ("A", "B")
        ]
        header = ["Test set"] + [f"{init}/{language}" for init, language in columns]
        test_sets = [result.test_set for result in self.cells[columns[0]]]
        rows = []
        for number, name in enumerate(test_sets):
            rows.append(
                [name]
                + [100.0 * self.cells[column][number].report.wer for column in columns]
            )
        return render_table(header, rows)

    def to_dict(self) -> Dict:
        return {
            "cells": [
                {
                    "init": init,
                    "extractor": language,
                    "results": [result.to_record() for result in results],
                }
                for (init, language), results in self.cells.items()
            ],
            "probe": {
                "matched_frame_accuracy": self.matched_frame_accuracy,
                "mismatched_frame_accuracy": self.mismatched_frame_accuracy,
            },
            "extractors": self.extractors,
        }


def extractor_swap_experiment(cfg: PipelineConfig) -> SwapReport:
    """
    Train target-language models on Stage2 data from random or transferred
    initialisation, each with the extractor trained on the source language
    (A) and on the target language (B). The transferred model with the B
    extractor runs with the fingerprint check overridden.

    Args:
        cfg (PipelineConfig): Configuration holding Stage1 and Stage2

    Returns:
        SwapReport: Report
    """
    stage1 = plan_setup(cfg, AblationSpec("stage1", (1,)))[0]
    source = run_stage(stage1, None, cfg)
    stage2 = cfg.stage(STAGE2)
    scratch2 = replace(stage2, transfer=TRANSFER_NONE, extractor=EXTRACTOR_NEW)
    extractor_b = train_embedding_extractor(
        load_manifest(stage2.manifest),
        cfg.features,
        seed=derive_seed(cfg.seed, "swap", STAGE2),
        max_utterances=cfg.extractor_max_utterances,
    )
    if extractor_b.fingerprint == source.extractor.fingerprint:
        raise PipelineError("Both extractors share one fingerprint!")
    extractors = {"A": source.extractor, "B": extractor_b}
    transferred2 = replace(
        stage2, transfer=TRANSFER_HIDDEN, extractor=EXTRACTOR_INHERIT
    )
    cells = {}
    matched = None
    for language, extractor in extractors.items():
        random_result = run_stage(scratch2, None, cfg, extractor)
        cells[(RANDOM_INIT, language)] = evaluate_all(
            random_result.model, extractor, cfg
        )
        override = language != "A"
        transferred = run_stage(transferred2, source, cfg, extractor, override)
        cells[(TRANSFERRED_INIT, language)] = evaluate_all(
            transferred.model, extractor, cfg, override
        )
        if language == "A":
            matched = transferred
    probe_set = next(iter(cfg.test_sets))
    matched_result = evaluate_all(matched.model, extractors["A"], cfg)[0]
    mismatched_result = evaluate_all(matched.model, extractors["B"], cfg, True)[0]
    logger.info(
        f"Extractor probe on {probe_set}: frame accuracy {matched_result.frame_accuracy:.4f} matched, {mismatched_result.frame_accuracy:.4f} mismatched"
    )
    return SwapReport(
        cells,
        matched_result.frame_accuracy,
        mismatched_result.frame_accuracy,
        {language: extractor.fingerprint for language, extractor in extractors.items()},
    )


def benchmark_config(layout: BenchmarkLayout, seed: int = 7) -> Dict:
    """
    Pipeline configuration of a prepared benchmark with paths relative to its
    root. Stage 1 and 2 expand their data with reverberant noisy copies
    only, Stage 3 with speed perturbation.

    Args:
        layout (BenchmarkLayout): Prepared benchmark
        seed (int): Global seed. Defaults to 7.

    Returns:
        Dict: Configuration
    """
    root = layout.root

    def rel(path: str) -> str:
        return relpath(path, root)

    train12 = {
        "initial_lr": 0.3,
        "final_lr": 0.03,
        "epochs": 3,
        "batch": 32,
        "bptt_chunk": 40,
        "dropout_rate": 0.1,
        "max_grad_norm": 5.0,
    }
    return {
        "seed": seed,
        "output_dir": "runs",
        "test_sets": {
            "target_domain": rel(layout.domain_test_manifest),
            "broadcast": rel(layout.target_test_manifest),
        },
        "lexicon": rel(layout.target_lexicon),
        "pools": {"rir": rel(layout.rir_dir), "noise": rel(layout.noise_dir)},
        "features": FeatureConfig().to_dict(),
        "model": {
            "pattern": "TTL",
            "tdnn_dim": 64,
            "cell_dim": 64,
            "projection_dim": 32,
            "activation": "relu",
        },
        "extractor_max_utterances": 400,
        "jobs": 1,
        "stages": [
            {
                "name": STAGE1,
                "manifest": rel(layout.source_manifest),
                "phones": rel(layout.source_phones),
                "recipe": {
                    "copies": [{"reverb": True, "snr": [5.0, 10.0]}],
                    "speed_factors": [],
                    "seed": seed,
                },
                "train": {**train12, "epochs": 2},
                "transfer": TRANSFER_NONE,
                "extractor": EXTRACTOR_NEW,
            },
            {
                "name": STAGE2,
                "manifest": rel(layout.target_manifest),
                "phones": rel(layout.target_phones),
                "recipe": {
                    "copies": [
                        {"reverb": True},
                        {"reverb": True, "snr": [10.0, 20.0]},
                    ],
                    "speed_factors": [],
                    "seed": seed,
                },
                "train": train12,
                "transfer": TRANSFER_HIDDEN,
                "extractor": EXTRACTOR_INHERIT,
            },
            {
                "name": STAGE3,
                "manifest": rel(layout.domain_train_manifest),
                "phones": rel(layout.target_phones),
                "recipe": {"copies": [], "speed_factors": [0.9, 1.1], "seed": seed},
                "train": {**train12, "epochs": 4, "dropout_rate": 0.0},
                "transfer": TRANSFER_FULL,
                "extractor": EXTRACTOR_INHERIT,
            },
        ],
    }


def write_benchmark_config(layout: BenchmarkLayout, seed: int = 7) -> str:
    """
    Write pipeline.yaml into the benchmark root

    Args:
        layout (BenchmarkLayout): Prepared benchmark
        seed (int): Global seed. Defaults to 7.

    Returns:
        str: Path of the configuration
    """
    path = join(layout.root, "pipeline.yaml")
    save_yaml(benchmark_config(layout, seed), path)
    return path
