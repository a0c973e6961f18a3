"""Performance prediction: a regression head on top of the graph encoder.

Fine-tuning regimes:

* ``decoder_only`` - encoder frozen (eval mode), only the head trains;
* ``full``         - encoder and head train jointly, batch-norm/dropout live;
* ``partial``      - encoder and head train jointly with batch-norm and
                     dropout bypassed.

Ranking-oriented training uses the pairwise log-sigmoid (BPR) loss over all
strictly ordered label pairs in a batch; plain mean squared error is the
regression alternative.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import (
    AdamState,
    DivergenceError,
    Tensor,
    adam_step,
    concat_rows,
    gather_rows,
    logsigmoid,
    mean_all,
    mul,
    sub,
    zero_grads,
)
from .encoder import (
    EVAL,
    PARTIAL,
    TRAIN,
    EncoderParams,
    MlpParams,
    encode_graph,
    encoder_from_json,
    encoder_to_json,
    init_encoder,
    init_mlp,
    load_checkpoint,
    mlp_forward,
    mlp_from_json,
    mlp_to_json,
    save_checkpoint,
)
from .graphs import CellGraph

__all__ = [
    "DECODER_ONLY",
    "FULL",
    "PARTIAL_FT",
    "AnnotatedArch",
    "FinetuneConfig",
    "PredictorParams",
    "DegenerateBatchError",
    "predict_score",
    "score_graphs",
    "bpr_loss",
    "mse_loss",
    "pairwise_rank_accuracy",
    "finetune",
    "save_predictor",
    "load_predictor",
]

DECODER_ONLY = "decoder_only"
FULL = "full"
PARTIAL_FT = "partial"
_FT_MODES = (DECODER_ONLY, FULL, PARTIAL_FT)


class DegenerateBatchError(ValueError):
    """A ranking batch with no strictly ordered label pair; callers skip it."""


@dataclass(frozen=True)
class AnnotatedArch:
    """An architecture with measured accuracies; the scarce training resource."""

    graph: CellGraph
    val_acc: float
    test_acc: float
    id: str

    def __post_init__(self):
        if not (0.0 <= self.val_acc <= 1.0 and 0.0 <= self.test_acc <= 1.0):
            raise ValueError(f"accuracies must lie in [0, 1] (arch {self.id})")


@dataclass(frozen=True)
class FinetuneConfig:
    mode: str = PARTIAL_FT
    loss_kind: str = "bpr"
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    embed_dim: int = 32
    num_layers: int = 3
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.mode not in _FT_MODES:
            raise ValueError(f"mode must be one of {_FT_MODES}")
        if self.loss_kind not in ("bpr", "mse"):
            raise ValueError("loss_kind must be 'bpr' or 'mse'")
        if self.loss_kind == "bpr" and self.batch_size < 2:
            raise ValueError("BPR needs batches of at least two items")


@dataclass
class PredictorParams:
    """Encoder plus two-layer regression head and the regime it was trained under."""

    encoder: EncoderParams
    head: MlpParams
    finetune_mode: str

    def __post_init__(self):
        if self.finetune_mode not in _FT_MODES:
            raise ValueError(f"finetune_mode must be one of {_FT_MODES}")
        if self.head.dims[0] != self.encoder.embed_dim or self.head.dims[-1] != 1:
            raise ValueError("head must map embed_dim to a single score")

    def score_mode(self) -> str:
        """Execution mode for inference: bypassed layers stay bypassed."""
        return PARTIAL if self.finetune_mode == PARTIAL_FT else EVAL


def _scoring_encoder(p: PredictorParams) -> tuple[EncoderParams, str]:
    """Encoder viewed in inference mode; parameter tensors are shared, not copied."""
    mode = p.score_mode()
    if p.encoder.mode == mode:
        return p.encoder, mode
    return replace(p.encoder, mode=mode), mode


def predict_score(p: PredictorParams, graph: CellGraph) -> float:
    """Deterministic scalar score of one architecture."""
    enc, mode = _scoring_encoder(p)
    emb, _ = encode_graph(enc, graph)
    return float(mlp_forward(p.head, emb, mode).data[0, 0])


def score_graphs(p: PredictorParams, graphs: list[CellGraph]) -> list[float]:
    enc, mode = _scoring_encoder(p)
    out = []
    for graph in graphs:
        emb, _ = encode_graph(enc, graph)
        out.append(float(mlp_forward(p.head, emb, mode).data[0, 0]))
    return out


def _ordered_pairs(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    better, worse = np.nonzero(labels[:, None] > labels[None, :])
    return better, worse


def _as_score_tensor(scores) -> Tensor:
    if isinstance(scores, Tensor):
        return scores
    return Tensor(np.asarray(scores, dtype=np.float64).reshape(-1, 1))


def bpr_loss(scores, labels) -> Tensor:
    """Mean -log sigmoid(s_i - s_j) over all pairs with label_i > label_j.

    Tied labels contribute no pairs. Raises DegenerateBatchError when no
    strictly ordered pair exists.
    """
    scores = _as_score_tensor(scores)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if scores.data.shape[0] != labels.shape[0]:
        raise ValueError("scores and labels must have matching lengths")
    if labels.shape[0] < 2:
        raise DegenerateBatchError("ranking needs at least two items")
    better, worse = _ordered_pairs(labels)
    if better.size == 0:
        raise DegenerateBatchError("no strictly ordered label pair in batch")
    margins = sub(gather_rows(scores, better), gather_rows(scores, worse))
    return mean_all(mul(logsigmoid(margins), -1.0))


def mse_loss(scores, labels) -> Tensor:
    """Mean squared difference between scores and labels."""
    scores = _as_score_tensor(scores)
    labels = np.asarray(labels, dtype=np.float64).reshape(scores.data.shape)
    if labels.size < 1:
        raise ValueError("mse needs at least one item")
    diff = sub(scores, Tensor(labels))
    return mean_all(mul(diff, diff))


def pairwise_rank_accuracy(scores: list[float], labels: list[float]) -> float:
    """Fraction of strictly ordered label pairs whose scores agree in order."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    better, worse = _ordered_pairs(y)
    if better.size == 0:
        raise DegenerateBatchError("no strictly ordered label pair")
    return float(np.mean(s[better] > s[worse]))


def _modes_for(ft_mode: str) -> tuple[str, str]:
    """(encoder mode, head mode) during fine-tuning."""
    if ft_mode == DECODER_ONLY:
        return EVAL, TRAIN
    if ft_mode == FULL:
        return TRAIN, TRAIN
    return PARTIAL, PARTIAL


def finetune(
    pretrained: EncoderParams | None,
    data: list[AnnotatedArch],
    cfg: FinetuneConfig,
    vocab_size: int | None = None,
) -> PredictorParams:
    """Train a predictor on annotated architectures against their validation accuracy.

    ``pretrained`` seeds the encoder; pass None for the from-scratch baseline
    (then ``vocab_size`` is required). The input encoder is never mutated.
    """
    if not data:
        raise ValueError("fine-tuning needs at least one annotated architecture")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
    enc_mode, head_mode = _modes_for(cfg.mode)
    if pretrained is not None:
        encoder = pretrained.clone(mode=enc_mode)
    else:
        if vocab_size is None:
            raise ValueError("vocab_size is required when training from scratch")
        encoder = init_encoder(
            vocab_size, cfg.embed_dim, cfg.num_layers,
            np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0]),
            cfg.dropout_rate, mode=enc_mode,
        )
    head = init_mlp(
        [encoder.embed_dim, encoder.embed_dim, 1],
        np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1]),
        cfg.dropout_rate,
    )

    trainable = head.named_parameters("head")
    if cfg.mode != DECODER_ONLY:
        trainable = encoder.named_parameters("enc") + trainable
    adam = AdamState()

    for _ in range(cfg.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(order), cfg.batch_size):
            batch = [data[i] for i in order[start : start + cfg.batch_size]]
            if cfg.loss_kind == "bpr" and len(batch) < 2:
                continue
            embeddings = []
            for arch in batch:
                emb, _ = encode_graph(encoder, arch.graph, rng)
                embeddings.append(emb.detach() if cfg.mode == DECODER_ONLY else emb)
            scores = mlp_forward(head, concat_rows(embeddings), head_mode, rng)
            labels = np.array([arch.val_acc for arch in batch])
            try:
                if cfg.loss_kind == "bpr":
                    loss = bpr_loss(scores, labels)
                else:
                    loss = mse_loss(scores, labels)
            except DegenerateBatchError:
                continue
            if not np.isfinite(loss.data):
                raise DivergenceError(f"fine-tuning diverged: loss={loss.data}")
            zero_grads(trainable)
            loss.backward()
            adam_step(trainable, adam, cfg.learning_rate)

    return PredictorParams(encoder, head, cfg.mode)


def save_predictor(path: str, p: PredictorParams, seed: int) -> None:
    save_checkpoint(
        path,
        "predictor",
        {
            "seed": seed,
            "finetune_mode": p.finetune_mode,
            "encoder": encoder_to_json(p.encoder),
            "head": mlp_to_json(p.head),
        },
    )


def load_predictor(path: str) -> PredictorParams:
    doc = load_checkpoint(path, "predictor")
    return PredictorParams(
        encoder=encoder_from_json(doc["encoder"]),
        head=mlp_from_json(doc["head"]),
        finetune_mode=doc["finetune_mode"],
    )
