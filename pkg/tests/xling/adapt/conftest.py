from os.path import join

import pytest

from hdx.utilities.path import temp_dir
from hdx.utilities.saver import save_yaml
from xling.adapt.dsp import SnrRange, synthesize_noise_pool, synthesize_rir_pool
from xling.adapt.synthbench import (
    DomainShiftSpec,
    SynthLanguageSpec,
    generate_corpus,
    make_inventories,
    make_lexicon,
)

TINY_SEED = 3


def tiny_train(epochs=1, dropout_rate=0.1):
    return {
        "initial_lr": 0.2,
        "final_lr": 0.05,
        "epochs": epochs,
        "batch": 8,
        "bptt_chunk": 20,
        "dropout_rate": dropout_rate,
        "max_grad_norm": 5.0,
    }


def tiny_config():
    return {
        "seed": 5,
        "output_dir": "runs",
        "test_sets": {
            "target_domain": "domain/domain_test.jsonl",
            "broadcast": "lang_b/b_test.jsonl",
        },
        "lexicon": "lang_b/lexicon.json",
        "pools": {"rir": "pools/rir", "noise": "pools/noise"},
        "features": {"mfcc_dim": 13, "embedding_dim": 4},
        "model": {
            "pattern": "TTL",
            "tdnn_dim": 16,
            "cell_dim": 12,
            "projection_dim": 8,
        },
        "extractor_max_utterances": 50,
        "stages": [
            {
                "name": "Stage1",
                "manifest": "lang_a/a_train.jsonl",
                "phones": "lang_a/phones.txt",
                "recipe": {"copies": [{"reverb": True, "snr": [5.0, 10.0]}], "seed": 5},
                "train": tiny_train(),
            },
            {
                "name": "Stage2",
                "manifest": "lang_b/b_train.jsonl",
                "phones": "lang_b/phones.txt",
                "recipe": {"copies": [{"reverb": True}], "seed": 5},
                "train": tiny_train(),
                "transfer": "hidden",
                "extractor": "inherit",
            },
            {
                "name": "Stage3",
                "manifest": "domain/domain_train.jsonl",
                "phones": "lang_b/phones.txt",
                "recipe": {"speed_factors": [1.1], "seed": 5},
                "train": tiny_train(),
                "transfer": "full",
                "extractor": "inherit",
            },
        ],
    }


@pytest.fixture(scope="session")
def tiny_benchmark():
    """Two small languages, a shifted target domain and the pipeline.yaml
    that trains on them"""
    with temp_dir(
        "xling-adapt-tiny", delete_on_success=True, delete_on_failure=False
    ) as folder:
        rirs = synthesize_rir_pool(
            join(folder, "pools", "rir"),
            no_rooms=3,
            positions_per_room=2,
            seed=TINY_SEED,
            rt60_range=(0.1, 0.3),
        )
        noise = synthesize_noise_pool(
            join(folder, "pools", "noise"), no_clips=3, duration_s=1.0, seed=TINY_SEED
        )
        source_inventory, target_inventory = make_inventories(
            source_size=10, target_size=8, shared=4, seed=TINY_SEED
        )
        source = SynthLanguageSpec(
            "A",
            source_inventory,
            make_lexicon(source_inventory, 30, seed=TINY_SEED, prefix="a"),
            speaker_count=6,
            seed=TINY_SEED,
        )
        target = SynthLanguageSpec(
            "B",
            target_inventory,
            make_lexicon(target_inventory, 25, seed=TINY_SEED, prefix="b"),
            speaker_count=6,
            seed=TINY_SEED,
        )
        generate_corpus(source, 0.015, join(folder, "lang_a"), "a_train", TINY_SEED)
        generate_corpus(target, 0.008, join(folder, "lang_b"), "b_train", TINY_SEED)
        generate_corpus(
            target,
            0.003,
            join(folder, "lang_b"),
            "b_test",
            TINY_SEED,
            speaker_offset=100,
        )
        shift = DomainShiftSpec(
            rir_rooms=("room02",), snr_range_db=SnrRange(10.0, 20.0), tilt_offset=-3.0
        )
        for name, hours, offset in (
            ("domain_train", 0.004, 200),
            ("domain_test", 0.003, 300),
        ):
            generate_corpus(
                target,
                hours,
                join(folder, "domain"),
                name,
                TINY_SEED,
                shift=shift,
                rir_pool=rirs,
                noise_pool=noise,
                speaker_offset=offset,
            )
        config_path = join(folder, "pipeline.yaml")
        save_yaml(tiny_config(), config_path)
        yield folder, config_path


@pytest.fixture(name="tiny_config")
def tiny_config_fixture():
    return tiny_config
