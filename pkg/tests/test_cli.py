import json
from pathlib import Path

import numpy as np
import pytest

from ctxnas.bench import SpaceSpec, make_annotated, sample_space, write_dataset
from ctxnas.cli import load_config, main
from ctxnas.encoder import encoder_to_json, load_checkpoint
from ctxnas.pretrain import PretrainConfig, init_pretrain_encoders


def write_config(path: Path, **overrides) -> Path:
    doc = {
        "seed": 7,
        "out_dir": str(path.parent / "out"),
        "data": {"corpus_size": 40, "dataset_size": 60},
        "pretrain": {"epochs": 1, "batch_size": 16, "embed_dim": 8, "num_layers": 2},
        "finetune": {"epochs": 2, "embed_dim": 8, "num_layers": 2},
        "split": {"n_train": 10, "n_val": 10, "n_test": 20},
        "eval_runs": 2,
        "search": {"budget": 25, "population": 10, "tournament": 4, "n_train": 8, "top_k": 5, "space_size": 40},
    }
    for key, value in overrides.items():
        if isinstance(value, dict):
            doc.setdefault(key, {}).update(value)
        else:
            doc[key] = value
    path.write_text(json.dumps(doc))
    return path


def strip_comments(path: Path) -> str:
    return "\n".join(l for l in path.read_text().splitlines() if not l.startswith("#"))


def strip_meta(path: Path) -> list[str]:
    lines = path.read_text().splitlines()
    return [l for l in lines if json.loads(l).get("kind") != "meta"]


class TestConfig:
    def test_missing_file_exits_2(self, capsys):
        rc = main(["pretrain", "/nonexistent/config.json"])
        assert rc == 2
        assert "/nonexistent/config.json" in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"seeed": 3}))
        assert main(["pretrain", str(p)]) == 2
        assert "seeed" in capsys.readouterr().err

    def test_bad_nested_value_names_section(self, tmp_path, capsys):
        p = write_config(tmp_path / "c.json", pretrain={"context_radius": 1})
        assert main(["pretrain", str(p)]) == 2
        assert "pretrain" in capsys.readouterr().err

    def test_load_config_defaults(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"seed": 3}))
        cfg = load_config(str(p))
        assert cfg.seed == 3
        assert cfg.pretrain_cfg.central_radius == 2
        assert cfg.pretrain_cfg.context_radius == 3
        assert cfg.split_sizes == (100, 200, None)
        assert cfg.space.num_nodes is None


class TestPretrainCommand:
    def test_writes_checkpoint_and_history(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        assert main(["pretrain", str(cfg)]) == 0
        out = tmp_path / "out"
        doc = load_checkpoint(str(out / "pretrain_checkpoint.json"), "pretrain")
        assert doc["seed"] == 7
        assert "aux_encoder" in doc and "adam" in doc
        lines = (out / "pretrain_history.csv").read_text().splitlines()
        assert lines[2] == "epoch,mean_loss,pos_sim_mean,neg_sim_mean"

    def test_zero_epochs_equals_fresh_init(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", pretrain={"epochs": 0, "embed_dim": 8, "num_layers": 2})
        assert main(["pretrain", str(cfg)]) == 0
        doc = load_checkpoint(str(tmp_path / "out" / "pretrain_checkpoint.json"), "pretrain")
        ref_cfg = PretrainConfig(epochs=0, seed=7, embed_dim=8, num_layers=2, batch_size=16)
        ref_main, ref_aux = init_pretrain_encoders(5, ref_cfg)
        assert doc["encoder"] == encoder_to_json(ref_main)
        assert doc["aux_encoder"] == encoder_to_json(ref_aux)

    def test_rerun_is_byte_identical_modulo_timestamps(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        assert main(["pretrain", str(cfg), "--out", str(tmp_path / "a")]) == 0
        assert main(["pretrain", str(cfg), "--out", str(tmp_path / "b")]) == 0
        for name in ("pretrain_checkpoint.json", "pretrain_history.csv"):
            a, b = tmp_path / "a" / name, tmp_path / "b" / name
            if name.endswith(".csv"):
                assert strip_comments(a) == strip_comments(b)
            else:
                assert a.read_bytes() == b.read_bytes()


class TestRankCommand:
    @pytest.fixture
    def pretrained_ckpt(self, tmp_path):
        cfg = write_config(tmp_path / "pre.json")
        main(["pretrain", str(cfg), "--out", str(tmp_path / "pre_out")])
        return tmp_path / "pre_out" / "pretrain_checkpoint.json"

    def test_scratch_and_pretrained_pair_on_identical_splits(self, tmp_path, pretrained_ckpt):
        cfg = write_config(tmp_path / "c.json")
        assert main(["rank", str(cfg), "--scratch", "--out", str(tmp_path / "s")]) == 0
        assert main(["rank", str(cfg), "--pretrained", str(pretrained_ckpt), "--out", str(tmp_path / "p")]) == 0
        rows_s = strip_comments(tmp_path / "s" / "rank_runs.csv").splitlines()
        rows_p = strip_comments(tmp_path / "p" / "rank_runs.csv").splitlines()
        assert rows_s[0] == "seed,n_train,n_val,n_test,tau"
        # same run seeds and split sizes, different taus
        seeds_s = [r.split(",")[0] for r in rows_s[1:]]
        seeds_p = [r.split(",")[0] for r in rows_p[1:]]
        assert seeds_s == seeds_p

    def test_taus_in_range(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        assert main(["rank", str(cfg), "--scratch"]) == 0
        rows = strip_comments(tmp_path / "out" / "rank_runs.csv").splitlines()[1:]
        for row in rows:
            tau = float(row.split(",")[4])
            assert -1.0 <= tau <= 1.0

    def test_split_too_large_fails_before_training(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", split={"n_train": 50, "n_val": 10, "n_test": 20})
        assert main(["rank", str(cfg), "--scratch"]) == 2
        assert "60" in capsys.readouterr().err  # dataset holds only 60

    def test_requires_source_flag(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        with pytest.raises(SystemExit) as exc:
            main(["rank", str(cfg)])
        assert exc.value.code == 2


class TestSearchCommand:
    def test_random_trace_has_budget_records(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", search={"budget": 150})
        assert main(["search", str(cfg), "--strategy", "random"]) == 0
        out = tmp_path / "out"
        records = [json.loads(l) for l in strip_meta(out / "search_trace.jsonl")]
        assert len(records) == 150
        assert all(r["kind"] == "query" for r in records)

    def test_summary_best_equals_trace_max(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        assert main(["search", str(cfg), "--strategy", "random"]) == 0
        out = tmp_path / "out"
        records = [json.loads(l) for l in strip_meta(out / "search_trace.jsonl")]
        best = max(r["accuracy"] for r in records)
        summary = strip_comments(out / "search_summary.csv").splitlines()
        assert summary[0] == "strategy,seed,budget,best_accuracy"
        assert float(summary[1].split(",")[3]) == best

    def test_same_seed_same_trace(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        assert main(["search", str(cfg), "--strategy", "evolve", "--out", str(tmp_path / "a")]) == 0
        assert main(["search", str(cfg), "--strategy", "evolve", "--out", str(tmp_path / "b")]) == 0
        assert strip_meta(tmp_path / "a" / "search_trace.jsonl") == strip_meta(tmp_path / "b" / "search_trace.jsonl")

    def test_rank_then_query_strategy_runs(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        assert main(["search", str(cfg), "--strategy", "rank_then_query"]) == 0
        records = [json.loads(l) for l in strip_meta(tmp_path / "out" / "search_trace.jsonl")]
        assert len(records) == 8 + 5  # n_train + top_k true queries

    def test_best_so_far_monotone(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        assert main(["search", str(cfg), "--strategy", "random"]) == 0
        records = [json.loads(l) for l in strip_meta(tmp_path / "out" / "search_trace.jsonl")]
        bests = [r["best_so_far"] for r in records]
        assert bests == sorted(bests) or all(b == max(bests[: i + 1]) for i, b in enumerate(bests))


class TestEmbedCommand:
    def test_embedding_csv_schema(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        main(["pretrain", str(cfg), "--out", str(tmp_path / "pre")])
        ckpt = tmp_path / "pre" / "pretrain_checkpoint.json"
        records = make_annotated(sample_space(SpaceSpec(), 12, seed=5))
        data = tmp_path / "d.jsonl"
        write_dataset(str(data), records)
        out = tmp_path / "emb.csv"
        assert main(["embed", "--checkpoint", str(ckpt), "--dataset", str(data), "--out", str(out)]) == 0
        lines = strip_comments(out).splitlines()
        header = lines[0].split(",")
        assert header[0] == "id" and header[-1] == "test_acc"
        assert len(header) == 2 + 8  # embed_dim 8 in this config
        assert len(lines) - 1 == 12

    def test_permuted_duplicates_share_embeddings(self, tmp_path):
        from ctxnas.graphs import permute
        from ctxnas.predictor import AnnotatedArch

        cfg = write_config(tmp_path / "c.json")
        main(["pretrain", str(cfg), "--out", str(tmp_path / "pre")])
        ckpt = tmp_path / "pre" / "pretrain_checkpoint.json"
        (g,) = sample_space(SpaceSpec(), 1, seed=9)
        twin = permute(g, tuple(reversed(range(g.num_nodes))))
        records = [
            AnnotatedArch(graph=g, val_acc=0.9, test_acc=0.9, id="orig"),
            AnnotatedArch(graph=twin, val_acc=0.9, test_acc=0.9, id="twin"),
        ]
        data = tmp_path / "d.jsonl"
        write_dataset(str(data), records)
        out = tmp_path / "emb.csv"
        assert main(["embed", "--checkpoint", str(ckpt), "--dataset", str(data), "--out", str(out)]) == 0
        lines = strip_comments(out).splitlines()[1:]
        e_orig = np.array([float(x) for x in lines[0].split(",")[1:-1]])
        e_twin = np.array([float(x) for x in lines[1].split(",")[1:-1]])
        assert np.max(np.abs(e_orig - e_twin)) < 1e-9


def test_cli_entry_module_runs(tmp_path):
    import subprocess, sys

    result = subprocess.run(
        [sys.executable, "-m", "ctxnas", "pretrain", str(tmp_path / "missing.json")],
        capture_output=True,
        text=True,
    )
    assert result.returncode == 2
    assert "missing.json" in result.stderr
