import csv
import json

import numpy as np
import pytest

from contramatch import cli
from contramatch.entity_graph import derive_entity_labels
from contramatch.experiment import (ConfigError, Variant, expand_variants, load_config,
                                    reference_config, run_experiment)
from contramatch.neural import ModelConfig, init_state
from contramatch.records import save_corpus_json
from contramatch.synthetic import generate_synthetic_corpus
from contramatch.training import FinetuneConfig, evaluate, finetune


def tiny_config(**over):
    cfg = {
        "corpus": {"kind": "synthetic", "synthetic": {"num_entities": 16, "seed": 3}},
        "model": {"vocab_size": 2048, "embed_dim": 8, "hidden_dim": 16, "proj_dim": 4},
        "pretrain": {"batch_size": 4, "epochs": 2, "lr": 0.01},
        "finetune": {"max_epochs": 3, "patience": 2, "lr": 0.001, "head_lr": 0.1},
        "augmentation": {"lexicon": "synthetic"},
        "variants": [{"objective": "supcon"}, {"objective": "none", "encoder": "unfrozen"},
                     {"objective": "simclr", "sampling": "pooled", "augment": True}],
        "repetitions": 3,
    }
    cfg.update(over)
    return cfg


def test_schema_errors_carry_field_paths():
    bad = tiny_config(finetune={"lr": -1}, variants=[{"objective": "byol"}])
    bad["pretrain"]["tau"] = 1
    with pytest.raises(ConfigError) as err:
        load_config(bad)
    msg = str(err.value)
    assert "finetune.lr" in msg and "variants.0.objective" in msg and "pretrain" in msg
    with pytest.raises(ConfigError, match="corpus"):
        load_config({"corpus": {"kind": "two_table"}})
    with pytest.raises(ConfigError, match="patience"):
        load_config(tiny_config(finetune={"max_epochs": 3, "patience": 5}))
    with pytest.raises(ConfigError, match="seeds"):
        load_config(tiny_config(seeds=[1, 2]))


def test_defaults_filled():
    cfg, _ = load_config({"corpus": {"kind": "synthetic"}})
    assert cfg["seeds"] == [1, 2, 3] and cfg["labels"]["match_fraction"] == 0.8
    assert cfg["variants"] == "grid" and cfg["threshold"] == 0.5


def test_grid_expansion():
    variants = expand_variants("grid")
    assert len(variants) == 18  # 2 x 2 x 2 x 2 pre-trained + none(F) + none(UF)
    assert Variant("none", "frozen", True, "pooled") == Variant("none", "frozen")
    assert {v.name for v in variants} >= {"supcon(F)-source_aware", "none(UF)",
                                         "simclr(UF)-pooled+aug"}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    return run_experiment(tiny_config(), out), out


def test_outputs_written(tiny_run):
    metrics, out = tiny_run
    assert len(metrics["runs"]) == 9
    for name in ("metrics.json", "aggregate.csv", "timings.json"):
        assert (out / name).is_file()
    assert (out / "runs" / "supcon_F-source_aware" / "seed2.json").is_file()
    assert (out / "curves" / "supcon_F-source_aware_seed1_pretrain.csv").is_file()
    assert (out / "curves" / "none_UF_seed3_finetune.csv").is_file()
    assert not (out / "curves" / "none_UF_seed3_pretrain.csv").exists()
    assert "time" not in (out / "metrics.json").read_text()


def test_aggregate_is_mean_over_seeds(tiny_run):
    metrics, out = tiny_run
    rows = list(csv.DictReader(open(out / "aggregate.csv")))
    assert [r["variant"] for r in rows] == ["supcon(F)-source_aware", "none(UF)",
                                           "simclr(F)-pooled+aug"]
    for row in rows:
        f1s = [r["test"]["f1"] for r in metrics["runs"] if r["variant"] == row["variant"]]
        assert len(f1s) == 3 and row["repetitions"] == "3"
        assert float(row["mean_f1"]) == float(np.mean(f1s))


def test_none_variant_is_plain_finetune_from_init(tiny_run):
    metrics, _ = tiny_run
    run = next(r for r in metrics["runs"] if r["variant"] == "none(UF)" and r["seed"] == 2)
    cfg = tiny_config()
    corpus = generate_synthetic_corpus(num_entities=16, seed=3).corpus
    state = init_state(ModelConfig(**cfg["model"]), 2)
    tuned, best, _ = finetune(corpus, state, FinetuneConfig(**cfg["finetune"],
                                                            encoder_frozen=False, seed=2))
    assert best == run["best_epoch"]
    assert evaluate(corpus, "test", tuned).to_dict() == run["test"]


def test_withholding_recorded(tiny_run):
    metrics, _ = tiny_run
    corpus = generate_synthetic_corpus(num_entities=16, seed=3).corpus
    _, report = derive_entity_labels(corpus, 0.8, seed=1)
    run = next(r for r in metrics["runs"] if r["seed"] == 1)
    assert run["withheld_pairs"] == len(report.withheld_pairs) > 0


def test_file_corpus_kinds(tmp_path):
    sc = generate_synthetic_corpus(num_entities=12, seed=1)
    save_corpus_json(sc.corpus, tmp_path / "c.json")
    cfg = tiny_config(corpus={"kind": "json", "path": "c.json"}, variants=[{"objective": "none"}],
                      repetitions=1, augmentation={})
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    m = run_experiment(tmp_path / "cfg.json")
    assert m["corpus"]["offers"] == len(sc.corpus.offers)


def test_reference_config_is_valid():
    cfg, _ = load_config(reference_config())
    assert cfg["corpus"]["synthetic"]["annotation_fraction"] == 0.5
    assert len(cfg["corpus"]["synthetic"]["sources"]) == 3 and cfg["seeds"] == [1, 2, 3]


# command line ---------------------------------------------------------------

def test_cli_end_to_end(tmp_path, capsys):
    c = tmp_path / "corpus"
    assert cli.main(["synth", "--out-dir", str(c), "--num-entities", "12"]) == 0
    assert cli.main(["synth", "--out-dir", str(tmp_path / "ms"), "--num-entities", "12",
                     "--format", "multi_source"]) == 0
    assert cli.main(["prepare", "--corpus", str(tmp_path / "ms"), "--out-dir",
                     str(tmp_path / "prep")]) == 0
    assert (tmp_path / "prep" / "datasets.json").is_file()
    cfgp = tmp_path / "cfg.json"
    cfgp.write_text(json.dumps(tiny_config()))
    assert cli.main(["pretrain", "--corpus", str(tmp_path / "ms"), "--config", str(cfgp),
                     "--labels", str(tmp_path / "prep" / "labels.csv"),
                     "--out-dir", str(tmp_path / "pt_ms")]) == 0
    assert (tmp_path / "pt_ms" / "pretrain_loss.csv").is_file()
    assert cli.main(["pretrain", "--corpus", str(c / "corpus.json"), "--config", str(cfgp),
                     "--augment", "--lexicon", str(c / "lexicon.tsv"),
                     "--out-dir", str(tmp_path / "pt")]) == 0
    assert cli.main(["finetune", "--corpus", str(c / "corpus.json"), "--config", str(cfgp),
                     "--checkpoint", str(tmp_path / "pt" / "pretrained.npz"),
                     "--out-dir", str(tmp_path / "ft")]) == 0
    assert cli.main(["evaluate", "--corpus", str(c / "corpus.json"), "--checkpoint",
                     str(tmp_path / "ft" / "finetuned.npz"), "--split", "valid"]) == 0
    assert cli.main(["augment-preview", "--corpus", str(c / "corpus.json"), "--limit", "2",
                     "--kind", "swap", "--word-prob", "1"]) == 0
    assert cli.main(["experiment", "--config", str(cfgp), "--seed", "7", "--repetitions", "1",
                     "--out-dir", str(tmp_path / "exp")]) == 0
    m = json.loads((tmp_path / "exp" / "metrics.json").read_text())
    assert [r["seed"] for r in m["runs"]] == [7, 7, 7]
    out = capsys.readouterr().out
    assert "mean F1" in out and "[COL]" in out


def test_cli_reports_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"corpus": {"kind": "json"}}))
    assert cli.main(["experiment", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert "corpus" in capsys.readouterr().err
