"""Command-line pipeline: pretrain, rank, search, embed.

One declarative JSON config drives an experiment; every output file embeds the
master seed and a hash of the resolved config, and timestamps are confined to
header comment lines so reruns are byte-comparable.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .bench import (
    DEFAULT_VOCAB,
    EDGE_SPACE,
    NODE_SPACE,
    SpaceSpec,
    make_annotated,
    read_dataset,
    sample_space,
    synth_accuracy,
)
from .encoder import (
    EVAL,
    EncoderParams,
    encoder_from_json,
    encoder_to_json,
    encode_graph,
    load_checkpoint,
    save_checkpoint,
)
from .evaluation import evaluate_ranking, make_split
from .graphs import OpVocabulary
from .predictor import FinetuneConfig, finetune
from .pretrain import PretrainConfig, init_pretrain_encoders, pretrain
from .search import MutationSpec, QueryRecord, evolve, random_search, rank_then_query

__all__ = ["main", "ConfigError", "load_config", "ExperimentConfig"]


class ConfigError(Exception):
    """Invalid usage or configuration; reported with exit code 2."""


_DEFAULTS: dict = {
    "seed": 0,
    "out_dir": ".",
    "space": {
        "family": NODE_SPACE,
        "max_nodes": 7,
        "max_edges": 9,
        "num_positions": 4,
        "vocab": list(DEFAULT_VOCAB.names),
        "num_nodes": None,
    },
    "data": {"dataset": None, "corpus_size": 2000, "dataset_size": 2000},
    "pretrain": {
        "central_radius": 2,
        "context_radius": 3,
        "negative_ratio": 1,
        "centrals_per_graph": 3,
        "batch_size": 32,
        "epochs": 40,
        "learning_rate": 1e-3,
        "embed_dim": 32,
        "num_layers": 3,
        "dropout_rate": 0.1,
    },
    "finetune": {
        "mode": "partial",
        "loss": "bpr",
        "epochs": 40,
        "batch_size": 32,
        "learning_rate": 1e-3,
        "embed_dim": 32,
        "num_layers": 3,
        "dropout_rate": 0.1,
    },
    "split": {"n_train": 100, "n_val": 200, "n_test": None},
    "eval_runs": 10,
    "search": {
        "budget": 150,
        "population": 50,
        "tournament": 10,
        "n_train": 50,
        "top_k": 50,
        "space_size": 2000,
        "op_mutation_prob": 0.5,
        "edge_mutation_prob": 0.5,
    },
}


def _merge(defaults: dict, given: dict, path: str) -> dict:
    out = dict(defaults)
    for key, value in given.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"{here!r} must be an object")
            out[key] = _merge(defaults[key], value, here)
        else:
            out[key] = value
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment settings plus the hash identifying them."""

    raw: dict
    sha256: str
    seed: int
    out_dir: Path
    space: SpaceSpec
    vocab: OpVocabulary
    dataset_path: str | None
    corpus_size: int
    dataset_size: int
    pretrain_cfg: PretrainConfig
    finetune_template: dict
    split_sizes: tuple[int, int, int | None]
    eval_runs: int
    search: dict


def load_config(path: str) -> ExperimentConfig:
    """Read, merge with defaults, and validate a JSON config file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        given = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg}, line {exc.lineno})") from None
    if not isinstance(given, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    doc = _merge(_DEFAULTS, given, "")

    sha = hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()[:16]
    try:
        vocab = OpVocabulary(tuple(doc["space"]["vocab"]))
        space = SpaceSpec(
            family=doc["space"]["family"],
            max_nodes=doc["space"]["max_nodes"],
            max_edges=doc["space"]["max_edges"],
            num_positions=doc["space"]["num_positions"],
            vocab=vocab,
            num_nodes=doc["space"]["num_nodes"],
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config error at space: {exc}") from None
    try:
        pcfg = PretrainConfig(
            central_radius=doc["pretrain"]["central_radius"],
            context_radius=doc["pretrain"]["context_radius"],
            negative_ratio=doc["pretrain"]["negative_ratio"],
            centrals_per_graph=doc["pretrain"]["centrals_per_graph"],
            batch_size=doc["pretrain"]["batch_size"],
            epochs=doc["pretrain"]["epochs"],
            learning_rate=doc["pretrain"]["learning_rate"],
            seed=doc["seed"],
            embed_dim=doc["pretrain"]["embed_dim"],
            num_layers=doc["pretrain"]["num_layers"],
            dropout_rate=doc["pretrain"]["dropout_rate"],
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config error at pretrain: {exc}") from None
    ft = doc["finetune"]
    try:
        FinetuneConfig(
            mode=ft["mode"], loss_kind=ft["loss"], epochs=ft["epochs"], batch_size=ft["batch_size"],
            learning_rate=ft["learning_rate"], seed=0, embed_dim=ft["embed_dim"],
            num_layers=ft["num_layers"], dropout_rate=ft["dropout_rate"],
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config error at finetune: {exc}") from None

    split = doc["split"]
    for key in ("n_train", "n_val"):
        if not isinstance(split[key], int) or split[key] < 1:
            raise ConfigError(f"config error at split.{key}: expected a positive integer")
    if split["n_test"] is not None and (not isinstance(split["n_test"], int) or split["n_test"] < 1):
        raise ConfigError("config error at split.n_test: expected null or a positive integer")
    if not isinstance(doc["eval_runs"], int) or doc["eval_runs"] < 1:
        raise ConfigError("config error at eval_runs: expected a positive integer")
    if doc["data"]["dataset"] is not None and not Path(doc["data"]["dataset"]).is_file():
        raise ConfigError(f"config error at data.dataset: file not found: {doc['data']['dataset']}")

    return ExperimentConfig(
        raw=doc,
        sha256=sha,
        seed=doc["seed"],
        out_dir=Path(doc["out_dir"]),
        space=space,
        vocab=vocab,
        dataset_path=doc["data"]["dataset"],
        corpus_size=doc["data"]["corpus_size"],
        dataset_size=doc["data"]["dataset_size"],
        pretrain_cfg=pcfg,
        finetune_template=dict(ft),
        split_sizes=(split["n_train"], split["n_val"], split["n_test"]),
        eval_runs=doc["eval_runs"],
        search=dict(doc["search"]),
    )


def _finetune_cfg(cfg: ExperimentConfig, seed: int) -> FinetuneConfig:
    ft = cfg.finetune_template
    return FinetuneConfig(
        mode=ft["mode"], loss_kind=ft["loss"], epochs=ft["epochs"], batch_size=ft["batch_size"],
        learning_rate=ft["learning_rate"], seed=seed, embed_dim=ft["embed_dim"],
        num_layers=ft["num_layers"], dropout_rate=ft["dropout_rate"],
    )


# ---------------------------------------------------------------------------
# output helpers

def _timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _write_csv(path: Path, command: str, seed: int, sha: str, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"# ctxnas {command} seed={seed} config_sha256={sha}",
        f"# created={_timestamp()}",
        ",".join(header),
    ]
    for row in rows:
        lines.append(",".join(repr(x) if isinstance(x, float) else str(x) for x in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_trace(path: Path, command: str, strategy: str, seed: int, sha: str, records: list[QueryRecord]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        meta = {
            "kind": "meta", "command": command, "strategy": strategy,
            "seed": seed, "config_sha256": sha, "created": _timestamp(),
        }
        fh.write(json.dumps(meta) + "\n")
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "kind": "query", "step": rec.step, "wl_hash": rec.wl_hash,
                        "predicted": rec.predicted, "accuracy": rec.accuracy,
                        "best_so_far": rec.best_so_far,
                    }
                )
                + "\n"
            )


def _load_graph_corpus(cfg: ExperimentConfig) -> list:
    if cfg.dataset_path is not None:
        return [rec.graph for rec in read_dataset(cfg.dataset_path)]
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(4)[3])
    return sample_space(cfg.space, cfg.corpus_size, rng)


def _load_annotated(cfg: ExperimentConfig):
    if cfg.dataset_path is not None:
        return read_dataset(cfg.dataset_path)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(4)[3])
    return make_annotated(sample_space(cfg.space, cfg.dataset_size, rng))


def _load_pretrained(path: str) -> EncoderParams:
    doc = load_checkpoint(path)
    if doc.get("kind") == "pretrain":
        return encoder_from_json(doc["encoder"])
    if doc.get("kind") == "predictor":
        return encoder_from_json(doc["encoder"])
    raise ConfigError(f"{path}: checkpoint kind {doc.get('kind')!r} carries no encoder")


# ---------------------------------------------------------------------------
# subcommands

def cmd_pretrain(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else cfg.out_dir
    corpus = _load_graph_corpus(cfg)
    main_enc, aux_enc, history, adam = pretrain(corpus, cfg.pretrain_cfg, len(cfg.vocab))
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        str(out / "pretrain_checkpoint.json"),
        "pretrain",
        {
            "seed": cfg.seed,
            "config_sha256": cfg.sha256,
            "vocab": list(cfg.vocab.names),
            "encoder": encoder_to_json(main_enc),
            "aux_encoder": encoder_to_json(aux_enc),
            "adam": adam.to_json(),
        },
    )
    _write_csv(
        out / "pretrain_history.csv",
        "pretrain",
        cfg.seed,
        cfg.sha256,
        ["epoch", "mean_loss", "pos_sim_mean", "neg_sim_mean"],
        [[h.epoch, h.mean_loss, h.pos_sim_mean, h.neg_sim_mean] for h in history],
    )
    print(f"pretrained on {len(corpus)} graphs for {cfg.pretrain_cfg.epochs} epochs -> {out}")
    return 0


def cmd_rank(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else cfg.out_dir
    pretrained = _load_pretrained(args.pretrained) if args.pretrained else None
    data = _load_annotated(cfg)
    by_id = {rec.id: rec for rec in data}
    n_train, n_val, n_test = cfg.split_sizes
    needed = n_train + n_val + (n_test or 0)
    if needed > len(data):
        raise ConfigError(
            f"split needs {needed} architectures but the dataset holds only {len(data)}"
        )
    run_seeds = [int(s) for s in np.random.default_rng(cfg.seed).integers(0, 2**31 - 1, size=cfg.eval_runs)]
    rows = []
    for run_seed in run_seeds:
        split = make_split(sorted(by_id), n_train, n_val, n_test, run_seed)
        train = [by_id[i] for i in split.train_ids]
        test = [by_id[i] for i in split.test_ids]
        predictor = finetune(pretrained, train, _finetune_cfg(cfg, run_seed), vocab_size=len(cfg.vocab))
        report = evaluate_ranking(predictor, test, seed=run_seed)
        rows.append([run_seed, n_train, n_val, len(test), report.tau])
    taus = [row[4] for row in rows]
    variant = "pretrained" if pretrained is not None else "scratch"
    _write_csv(out / "rank_runs.csv", "rank", cfg.seed, cfg.sha256,
               ["seed", "n_train", "n_val", "n_test", "tau"], rows)
    _write_csv(
        out / "rank_summary.csv", "rank", cfg.seed, cfg.sha256,
        ["variant", "runs", "n_train", "tau_mean", "tau_std"],
        [[variant, len(taus), n_train, float(np.mean(taus)), float(np.std(taus))]],
    )
    print(f"{variant}: tau = {np.mean(taus):.4f} +/- {np.std(taus):.4f} over {len(taus)} runs -> {out}")
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else cfg.out_dir
    pretrained = _load_pretrained(args.pretrained) if args.pretrained else None
    root = np.random.default_rng(cfg.seed)
    sample_seed = int(root.integers(0, 2**31 - 1))
    search_seed = int(root.integers(0, 2**31 - 1))
    ft_seed = int(root.integers(0, 2**31 - 1))
    s = cfg.search

    if args.strategy == "random":
        state = random_search(synth_accuracy, cfg.space, s["budget"], search_seed)
    elif args.strategy == "evolve":
        annotations = make_annotated(sample_space(cfg.space, s["n_train"], sample_seed), prefix="anno")
        predictor = finetune(pretrained, annotations, _finetune_cfg(cfg, ft_seed), vocab_size=len(cfg.vocab))
        state = evolve(
            synth_accuracy, predictor, cfg.space,
            budget=s["budget"], pop_size=s["population"], tournament_size=s["tournament"],
            spec=MutationSpec(s["op_mutation_prob"], s["edge_mutation_prob"]),
            seed=search_seed,
        )
    elif args.strategy == "rank_then_query":
        space_list = sample_space(cfg.space, s["space_size"], sample_seed)
        _, state = rank_then_query(
            synth_accuracy, space_list, _finetune_cfg(cfg, ft_seed), len(cfg.vocab),
            n_train=s["n_train"], top_k=s["top_k"], seed=search_seed, pretrained=pretrained,
        )
    else:  # argparse choices make this unreachable
        raise ConfigError(f"unknown strategy {args.strategy!r}")

    best = state.best[1] if state.best else float("nan")
    _write_trace(out / "search_trace.jsonl", "search", args.strategy, cfg.seed, cfg.sha256, state.history)
    _write_csv(
        out / "search_summary.csv", "search", cfg.seed, cfg.sha256,
        ["strategy", "seed", "budget", "best_accuracy"],
        [[args.strategy, cfg.seed, state.budget, float(best)]],
    )
    print(f"{args.strategy}: best accuracy {best:.4f} after {state.queries_used} queries -> {out}")
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    doc = load_checkpoint(args.checkpoint)
    if "encoder" not in doc:
        raise ConfigError(f"{args.checkpoint}: checkpoint carries no encoder")
    enc = encoder_from_json(doc["encoder"]).clone(mode=EVAL)
    records = read_dataset(args.dataset)
    digest = hashlib.sha256()
    for path in (args.checkpoint, args.dataset):
        digest.update(Path(path).read_bytes())
    sha = digest.hexdigest()[:16]
    rows = []
    for rec in records:
        emb, _ = encode_graph(enc, rec.graph)
        rows.append([rec.id] + [float(x) for x in emb.data[0]] + [rec.test_acc])
    header = ["id"] + [f"e{i}" for i in range(enc.embed_dim)] + ["test_acc"]
    out = Path(args.out) if args.out else Path("embeddings.csv")
    _write_csv(out, "embed", int(doc.get("seed", 0)), sha, header, rows)
    print(f"wrote {len(rows)} embeddings of dim {enc.embed_dim} -> {out}")
    return 0


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxnas",
        description="Context-pretrained performance predictor pipeline for cell search spaces.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="self-supervised pretraining on unlabeled cells")
    p.add_argument("config", help="path to the experiment config (JSON)")
    p.add_argument("--out", help="output directory (defaults to config out_dir)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("rank", help="fine-tune and measure ranking quality over seeds")
    p.add_argument("config")
    p.add_argument("--out")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--pretrained", help="pretraining checkpoint to start from")
    group.add_argument("--scratch", action="store_true", help="train the encoder from scratch")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("search", help="search the space with a chosen strategy")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--strategy", required=True, choices=["evolve", "rank_then_query", "random"])
    p.add_argument("--pretrained", help="pretraining checkpoint for the predictor")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("embed", help="export architecture embeddings as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_embed)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not crashes
        print(f"failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
