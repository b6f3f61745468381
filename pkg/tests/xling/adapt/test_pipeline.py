"""Pipeline Tests"""

from dataclasses import replace
from os.path import exists, join

import pytest

from hdx.utilities.loader import load_yaml
from hdx.utilities.path import temp_dir
from xling.adapt.corpus import load_manifest
from xling.adapt.features import train_embedding_extractor
from xling.adapt.nnet import TrainConfig, load_checkpoint
from xling.adapt.pipeline import (
    PRESETS,
    AblationSpec,
    PipelineConfig,
    PipelineError,
    StageConfig,
    benchmark_config,
    extractor_swap_experiment,
    get_presets,
    load_pipeline_config,
    plan_setup,
    relative_improvement,
    render_ablation_table,
    run_ablation,
    run_pipeline,
    run_stage,
    stage3_train_config,
    write_benchmark_config,
    write_reports,
)
from xling.adapt.synthbench import BenchmarkLayout, prepare_benchmark


def same_arrays(first, second, hidden_only=False):
    if hidden_only:
        pairs = zip(first.hidden_parameters(), second.hidden_parameters())
    else:
        pairs = zip(first.parameters(), second.parameters())
    return all(
        name == other and mine.tobytes() == theirs.tobytes()
        for (name, mine), (other, theirs) in pairs
    )


class TestPipeline:
    @pytest.fixture(scope="class")
    def cfg(self, tiny_benchmark):
        _, config_path = tiny_benchmark
        return load_pipeline_config(config_path)

    def test_config(self, tiny_benchmark, cfg):
        folder, _ = tiny_benchmark
        assert [stage.name for stage in cfg.stages] == ["Stage1", "Stage2", "Stage3"]
        assert cfg.output_dir == join(folder, "runs")
        assert cfg.stage("Stage1").manifest == join(folder, "lang_a", "a_train.jsonl")
        assert cfg.features.input_dim == 13 * 5 + 4
        assert [spec.output_dim for spec in cfg.layers] == [16, 16, 8]
        assert cfg.stage("Stage2").recipe.expansion == 2
        assert cfg.extractor_max_utterances == 50
        again = PipelineConfig.from_dict(cfg.to_dict(folder), folder)
        assert again.stages == cfg.stages
        assert again.layers == cfg.layers
        assert again.test_sets == cfg.test_sets
        cfg.validate_phone_sets()
        with pytest.raises(PipelineError):
            cfg.stage("Scratch")
        overridden = load_pipeline_config(
            join(folder, "pipeline.yaml"), seed=11, output_dir=join(folder, "other")
        )
        assert overridden.seed == 11
        assert overridden.output_dir == join(folder, "other")
        with pytest.raises(PipelineError):
            load_pipeline_config(join(folder, "missing.yaml"))

    def test_config_errors(self, tiny_benchmark, tiny_config):
        folder, _ = tiny_benchmark
        data = tiny_config()
        data["stages"] = data["stages"][1:]
        with pytest.raises(PipelineError):
            PipelineConfig.from_dict(data, folder)
        data = tiny_config()
        data["stages"][2]["transfer"] = "none"
        with pytest.raises(PipelineError):
            PipelineConfig.from_dict(data, folder)
        data = tiny_config()
        data["stages"][0]["name"] = "Stage0"
        with pytest.raises(PipelineError):
            PipelineConfig.from_dict(data, folder)
        data = tiny_config()
        del data["lexicon"]
        with pytest.raises(PipelineError):
            PipelineConfig.from_dict(data, folder)
        data = tiny_config()
        data["stages"][1]["transfer"] = "full"
        cfg = PipelineConfig.from_dict(data, folder)
        with pytest.raises(PipelineError):
            cfg.validate_phone_sets()

    def test_stage3_train_config(self):
        configured = TrainConfig(0.3, 0.03, 4, dropout_rate=0.1)
        fine_tune = stage3_train_config(configured, 0.05)
        assert fine_tune.initial_lr == pytest.approx(0.0005)
        assert fine_tune.final_lr == pytest.approx(0.00005)
        assert fine_tune.dropout_rate == 0.0
        assert fine_tune.epochs == 4

    def test_presets(self):
        specs = get_presets(["all"])
        assert [spec.name for spec in specs] == [
            "baseline_broadcast",
            "baseline_target",
            "remove_stage1",
            "remove_stage2",
            "remove_stage3",
            "proposed",
        ]
        assert PRESETS["proposed"].stages == (1, 2, 3)
        assert get_presets(["proposed"]) == [PRESETS["proposed"]]
        with pytest.raises(PipelineError):
            get_presets(["nonsense"])
        with pytest.raises(PipelineError):
            AblationSpec("empty", ())
        with pytest.raises(PipelineError):
            AblationSpec("four", (4,))

    def test_plan_setup(self, cfg):
        def plan(name):
            return [
                (stage.name, stage.transfer, stage.extractor)
                for stage in plan_setup(cfg, PRESETS[name])
            ]

        assert plan("proposed") == [
            ("Stage1", "none", "train-new"),
            ("Stage2", "hidden", "inherit"),
            ("Stage3", "full", "inherit"),
        ]
        assert plan("baseline_broadcast") == [("Stage2", "none", "train-new")]
        assert plan("baseline_target") == [("Scratch", "none", "train-new")]
        assert plan("remove_stage1") == [
            ("Stage2", "none", "train-new"),
            ("Stage3", "full", "inherit"),
        ]
        assert plan("remove_stage2") == [
            ("Stage1", "none", "train-new"),
            ("Stage3", "hidden", "inherit"),
        ]
        assert plan("remove_stage3") == [
            ("Stage1", "none", "train-new"),
            ("Stage2", "hidden", "inherit"),
        ]
        scratch = plan_setup(cfg, PRESETS["baseline_target"])[0]
        assert scratch.manifest == cfg.stage("Stage3").manifest
        assert scratch.recipe == cfg.stage("Stage3").recipe
        assert scratch.train == cfg.stage("Stage2").train

    def test_run_pipeline(self, cfg):
        report = run_pipeline(cfg)
        stage1, stage2, stage3 = report.stages
        assert [s["name"] for s in report.stages] == ["Stage1", "Stage2", "Stage3"]
        assert report.included == (1, 2, 3)
        assert stage3["initial_lr"] == pytest.approx(0.05 / 100)
        assert stage3["dropout_rate"] == 0.0
        assert stage2["dropout_rate"] == 0.1
        assert stage1["extractor"] == stage2["extractor"] == stage3["extractor"]
        assert stage3["fingerprint"] == stage1["extractor"]

        def stage_dir(summary):
            return join(cfg.output_dir, "stages", f"{summary['name'].lower()}-{summary['key']}")

        for summary in report.stages:
            folder = stage_dir(summary)
            for filename in ("init.ckpt", "model.ckpt", "extractor.bin", "log.yaml"):
                assert exists(join(folder, filename))
        record = load_yaml(join(stage_dir(stage3), "log.yaml"))
        assert record["train"]["initial_lr"] == pytest.approx(0.0005)
        assert record["predecessor"] == stage2["key"]

        source = load_checkpoint(join(stage_dir(stage1), "model.ckpt"))
        hidden = load_checkpoint(join(stage_dir(stage2), "init.ckpt"))
        assert same_arrays(hidden, source, hidden_only=True)
        assert hidden.phone_set != source.phone_set
        target = load_checkpoint(join(stage_dir(stage2), "model.ckpt"))
        full = load_checkpoint(join(stage_dir(stage3), "init.ckpt"))
        assert same_arrays(full, target)
        assert full.input_shift.tobytes() == source.input_shift.tobytes()

        assert [result.test_set for result in report.results] == [
            "target_domain",
            "broadcast",
        ]
        for result in report.results:
            assert result.report.wer >= 0
            assert 0 <= result.frame_accuracy <= 1
        assert report.test_stats["broadcast"].total_length_min > 0

        again = run_pipeline(cfg)
        assert again.stages == report.stages
        assert again.result("broadcast").report == report.result("broadcast").report

    def test_stage_determinism(self, tiny_benchmark, cfg):
        folder, _ = tiny_benchmark
        first = run_stage(cfg.stage("Stage1"), None, cfg)
        other = replace(cfg, output_dir=join(folder, "runs_again"))
        second = run_stage(other.stage("Stage1"), None, other)
        assert first.key == second.key
        with open(first.checkpoint, "rb") as fp:
            first_bytes = fp.read()
        with open(second.checkpoint, "rb") as fp:
            assert fp.read() == first_bytes

    def test_fingerprint_mismatch(self, cfg):
        source = run_stage(cfg.stage("Stage1"), None, cfg)
        other = train_embedding_extractor(
            load_manifest(cfg.stage("Stage2").manifest), cfg.features, seed=99
        )
        with pytest.raises(PipelineError):
            run_stage(cfg.stage("Stage2"), source, cfg, other)
        with pytest.raises(PipelineError):
            run_stage(cfg.stage("Stage2"), None, cfg)

    def test_ablation(self, tiny_benchmark, cfg):
        folder, _ = tiny_benchmark
        reports = run_ablation(cfg, get_presets(["baseline_target", "remove_stage2"]))
        baseline, removed = reports
        assert [s["name"] for s in baseline.stages] == ["Scratch"]
        assert baseline.stages[0]["dropout_rate"] == 0.1
        assert baseline.setup_row() == ["", "", "x"]
        assert [s["name"] for s in removed.stages] == ["Stage1", "Stage3"]
        assert removed.stages[1]["transfer"] == "hidden"
        assert removed.stages[1]["dropout_rate"] == 0.0
        assert removed.setup_row() == ["x", "", "x"]
        stage1, stage3 = [
            join(cfg.output_dir, "stages", f"{s['name'].lower()}-{s['key']}")
            for s in removed.stages
        ]
        source = load_checkpoint(join(stage1, "model.ckpt"))
        transferred = load_checkpoint(join(stage3, "init.ckpt"))
        assert same_arrays(transferred, source, hidden_only=True)
        assert len(transferred.hidden_parameters()) == len(source.hidden_parameters())
        assert transferred.phone_set != source.phone_set
        table = render_ablation_table(reports)
        lines = table.splitlines()
        assert lines[0].split(" | ")[-1].strip() == "Rel. impr. %"
        assert lines[2].startswith("baseline_target")
        assert lines[2].rstrip().endswith("0.00")
        out_dir = join(folder, "ablation")
        write_reports(reports, out_dir)
        for filename in ("report.txt", "report.jsonl", "report.yaml"):
            assert exists(join(out_dir, filename))
        with open(join(out_dir, "report.jsonl")) as fp:
            assert len(fp.readlines()) == 4
        with pytest.raises(PipelineError):
            run_ablation(cfg, [])

    def test_extractor_swap(self, cfg):
        report = extractor_swap_experiment(cfg)
        assert sorted(report.cells) == [
            ("random", "A"),
            ("random", "B"),
            ("transferred", "A"),
            ("transferred", "B"),
        ]
        assert report.extractors["A"] != report.extractors["B"]
        assert 0 <= report.matched_frame_accuracy <= 1
        assert 0 <= report.mismatched_frame_accuracy <= 1
        table = report.render()
        assert "transferred/B" in table.splitlines()[0]
        assert len(table.splitlines()) == 4
        assert len(report.to_dict()["cells"]) == 4

    def test_relative_improvement(self):
        assert relative_improvement(0.4, 0.3) == pytest.approx(25.0)
        assert relative_improvement(0.0, 0.3) == 0.0

    def test_benchmark_config(self):
        layout = BenchmarkLayout(
            root="/bench",
            rir_dir="/bench/pools/rir",
            noise_dir="/bench/pools/noise",
            source_dir="/bench/lang_a",
            target_dir="/bench/lang_b",
            domain_dir="/bench/target_domain",
            source_manifest="/bench/lang_a/a_train.jsonl",
            target_manifest="/bench/lang_b/b_train.jsonl",
            target_test_manifest="/bench/lang_b/b_test.jsonl",
            domain_train_manifest="/bench/target_domain/domain_train.jsonl",
            domain_test_manifest="/bench/target_domain/domain_test.jsonl",
        )
        data = benchmark_config(layout, seed=7)
        assert list(data["test_sets"]) == ["target_domain", "broadcast"]
        assert data["stages"][2]["recipe"]["speed_factors"] == [0.9, 1.1]
        assert data["stages"][2]["train"]["dropout_rate"] == 0.0
        cfg = PipelineConfig.from_dict(data, "/bench")
        assert cfg.stage("Stage2").transfer == "hidden"
        assert cfg.stage("Stage3").transfer == "full"
        assert cfg.stage("Stage1").manifest == "/bench/lang_a/a_train.jsonl"
        assert cfg.stage("Stage2").recipe.expansion == 3
        assert [spec.output_dim for spec in cfg.layers] == [64, 64, 32]
        assert isinstance(cfg.stages[0], StageConfig)

    @pytest.mark.slow
    def test_default_benchmark(self):
        with temp_dir(
            "test_default_benchmark", delete_on_success=True, delete_on_failure=False
        ) as folder:
            layout = prepare_benchmark(folder, seed=7)
            cfg = load_pipeline_config(write_benchmark_config(layout, seed=7))
            reports = run_ablation(
                cfg, get_presets(["baseline_target", "remove_stage2", "proposed"])
            )
            baseline, removed, proposed = (
                report.result("target_domain").report.wer for report in reports
            )
            assert relative_improvement(baseline, proposed) >= 15.0
            assert relative_improvement(baseline, removed) >= 10.0

            swap = extractor_swap_experiment(cfg)
            assert swap.mismatched_frame_accuracy < swap.matched_frame_accuracy
