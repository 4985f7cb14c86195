"""Match classification head, training loop, evaluation and attention diagnostics.

Pipeline per pair: serialize -> encode -> attribute-similarity matrix -> fuse
with the pooled sentence embedding -> linear head -> softmax. Training follows
the fixed protocol: fixed epochs, linear learning-rate decay to zero, and the
checkpoint with the best validation F1 wins (ties keep the earlier epoch).
"""

import json
import random
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from .attnet import AttentionParams, AttributeSimilarityMatrix, TokenEmbeddings, attribute_similarity_matrix, inter_attention, m2v, self_attention, compare_tokens, span_matrices
from .data import CandidatePair, DatasetBundle, EntityRecord, Metrics, compute_metrics
from .encoder import EncoderAdapter
from .errors import CheckpointError, ConfigError, TrainingDivergenceError
from .serialization import SerializedPair

FUSED_STATS_WIDTH = 4
FUSION_STRATEGIES = ("pooled_stats", "off")


@dataclass
class MatchPrediction:
    prob_no_match: float
    prob_match: float
    decision: int

    @classmethod
    def from_logits(cls, logits: torch.Tensor) -> "MatchPrediction":
        probs = F.softmax(logits.detach().double(), dim=-1)
        p0, p1 = probs[0].item(), probs[1].item()
        # Tie goes to non-match.
        return cls(prob_no_match=p0, prob_match=p1, decision=int(p1 > p0))

    def to_dict(self) -> dict:
        return {
            "prob_no_match": self.prob_no_match,
            "prob_match": self.prob_match,
            "decision": self.decision,
        }


@dataclass
class TrainConfig:
    max_seq_len: int = 256
    learning_rate: float = 3e-5
    epochs: Optional[int] = None  # None: picked from the training-set size
    batch_size: int = 32
    seed: int = 0
    mixed_precision: bool = True
    runs: int = 6
    checkpoint_dir: str = "checkpoints"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")

    def resolve_epochs(self, train_size: int) -> int:
        if self.epochs is not None:
            return self.epochs
        if train_size > 15000:
            return 10
        if train_size >= 1000:
            return 15
        return 40


def fuse_features(pooled: torch.Tensor, R: AttributeSimilarityMatrix) -> torch.Tensor:
    """Concatenate the pooled embedding with 4 summary statistics of R."""
    values = R.values
    if values.numel() == 0:
        raise ValueError("empty similarity matrix")
    stats = torch.stack(
        [
            values.max(dim=1).values.mean(),  # best counterpart per source attribute
            values.max(dim=0).values.mean(),  # best counterpart per target attribute
            values.mean(),
            values.max(),
        ]
    )
    return torch.cat([pooled, stats])


def classify(features: torch.Tensor, head: nn.Linear) -> MatchPrediction:
    if features.shape[-1] != head.in_features:
        raise ValueError(
            f"feature width {features.shape[-1]} does not match head width {head.in_features}"
        )
    return MatchPrediction.from_logits(head(features))


class MatchModel(nn.Module):
    """Encoder + attribute-association network + fused linear head."""

    def __init__(self, encoder: EncoderAdapter, m2v_axis: str = "col", fusion: str = "pooled_stats"):
        super().__init__()
        if fusion not in FUSION_STRATEGIES:
            raise ConfigError(f"fusion must be one of {FUSION_STRATEGIES}, got {fusion!r}")
        self.encoder = encoder
        self.encoder_model = encoder.model  # registers encoder parameters
        self.fusion = fusion
        self.attention = AttentionParams(encoder.hidden_size, m2v_axis=m2v_axis)
        feat_width = encoder.hidden_size + (FUSED_STATS_WIDTH if fusion == "pooled_stats" else 0)
        self.head = nn.Linear(feat_width, 2)

    @property
    def device(self):
        return next(self.parameters()).device

    def tokenize(self, pair: CandidatePair, max_seq_len: int = 256) -> SerializedPair:
        return self.encoder.pair_tokenizer.tokenize_with_spans(pair, max_len=max_seq_len)

    def embed(self, sp: SerializedPair) -> TokenEmbeddings:
        ids = torch.tensor([sp.token_ids], dtype=torch.long, device=self.device)
        hidden = self.encoder.forward_ids(ids)[0]
        return TokenEmbeddings(
            vectors=hidden,
            pooled=hidden[0],
            left_spans=sp.left_spans,
            right_spans=sp.right_spans,
        )

    def _embed_batch(self, sps):
        pad_id = self.encoder.hf_tokenizer.pad_token_id or 0
        max_len = max(len(sp.token_ids) for sp in sps)
        ids = torch.full((len(sps), max_len), pad_id, dtype=torch.long, device=self.device)
        mask = torch.zeros((len(sps), max_len), dtype=torch.long, device=self.device)
        for b, sp in enumerate(sps):
            ids[b, : len(sp.token_ids)] = torch.tensor(sp.token_ids, dtype=torch.long)
            mask[b, : len(sp.token_ids)] = 1
        hidden = self.encoder.forward_ids(ids, attention_mask=mask)
        return [
            TokenEmbeddings(
                vectors=hidden[b, : len(sp.token_ids)],
                pooled=hidden[b, 0],
                left_spans=sp.left_spans,
                right_spans=sp.right_spans,
            )
            for b, sp in enumerate(sps)
        ]

    def features_from_embeddings(self, emb: TokenEmbeddings) -> torch.Tensor:
        if self.fusion == "off":
            return emb.pooled
        R = attribute_similarity_matrix(emb, self.attention)
        return fuse_features(emb.pooled, R)

    def logits_for_batch(self, sps) -> torch.Tensor:
        embs = self._embed_batch(sps)
        features = torch.stack([self.features_from_embeddings(e) for e in embs])
        return self.head(features)

    def predict(self, pair: CandidatePair, max_seq_len: int = 256) -> MatchPrediction:
        if len(pair.left.attributes) == 0 or len(pair.right.attributes) == 0:
            raise ValueError("both records must have at least one attribute")
        self.eval()
        with torch.no_grad():
            sp = self.tokenize(pair, max_seq_len)
            emb = self.embed(sp)
            features = self.features_from_embeddings(emb)
            return classify(features, self.head)


def save_checkpoint(model: MatchModel, directory, manifest: dict):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    model.encoder.save(directory)
    torch.save(
        {"attention": model.attention.state_dict(), "head": model.head.state_dict()},
        directory / "matcher_weights.pt",
    )
    manifest = dict(manifest)
    manifest.setdefault("saved_at", time.strftime("%Y-%m-%dT%H:%M:%S"))
    manifest["fusion"] = model.fusion
    manifest["m2v_axis"] = model.attention.m2v_axis
    with open(directory / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_checkpoint(directory) -> MatchModel:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise CheckpointError(f"no manifest.json in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        encoder = EncoderAdapter.load(directory)
        model = MatchModel(
            encoder,
            m2v_axis=manifest.get("m2v_axis", "col"),
            fusion=manifest.get("fusion", "pooled_stats"),
        )
        state = torch.load(directory / "matcher_weights.pt", map_location="cpu", weights_only=True)
        model.attention.load_state_dict(state["attention"])
        model.head.load_state_dict(state["head"])
    except (OSError, KeyError, RuntimeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot load checkpoint from {directory}: {exc}") from exc
    model.eval()
    return model


def read_manifest(directory) -> dict:
    return json.loads((Path(directory) / "manifest.json").read_text(encoding="utf-8"))


def _as_model(model_or_path) -> MatchModel:
    if isinstance(model_or_path, MatchModel):
        return model_or_path
    return load_checkpoint(model_or_path)


def predict_bundle(model_or_path, bundle: DatasetBundle, max_seq_len: int = 256, batch_size: int = 32):
    """Predictions for every pair; computed pair-at-a-time so any chunking of the
    input yields identical results."""
    model = _as_model(model_or_path)
    del batch_size  # chunking cannot change per-pair results
    return [model.predict(p, max_seq_len=max_seq_len) for p in bundle.pairs]


def evaluate(model_or_path, test_set: DatasetBundle, max_seq_len: int = 256, batch_size: int = 32) -> Metrics:
    model = _as_model(model_or_path)
    preds = predict_bundle(model, test_set, max_seq_len=max_seq_len, batch_size=batch_size)
    return compute_metrics([p.decision for p in preds], test_set.labels)


def predict_pair(model_or_path, e1: EntityRecord, e2: EntityRecord, max_seq_len: int = 256) -> MatchPrediction:
    model = _as_model(model_or_path)
    return model.predict(CandidatePair(left=e1, right=e2), max_seq_len=max_seq_len)


MIN_BATCH_SIZE = 8


def train(model: MatchModel, config: TrainConfig, train_set: DatasetBundle, valid_set: DatasetBundle):
    """Fine-tune the full pipeline; returns the best-validation checkpoint path.

    On GPU memory exhaustion the batch size is halved (down to 8) and training
    restarts from the initial weights.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if any(p.label is None for p in train_set.pairs) or any(p.label is None for p in valid_set.pairs):
        raise ValueError("train and valid bundles must be fully labeled")

    import copy

    initial_state = copy.deepcopy(model.state_dict())
    batch_size = config.batch_size
    while True:
        try:
            return _fit(model, config, batch_size, train_set, valid_set)
        except torch.cuda.OutOfMemoryError:
            if batch_size <= MIN_BATCH_SIZE:
                raise
            batch_size = max(MIN_BATCH_SIZE, batch_size // 2)
            model.load_state_dict(initial_state)
            if model.device.type == "cuda":
                torch.cuda.empty_cache()


def _fit(model: MatchModel, config: TrainConfig, batch_size: int, train_set, valid_set):
    torch.manual_seed(config.seed)
    rng = random.Random(config.seed)
    device = model.device
    epochs = config.resolve_epochs(len(train_set))

    train_sps = [model.tokenize(p, config.max_seq_len) for p in train_set.pairs]
    labels = torch.tensor(train_set.labels, dtype=torch.long, device=device)

    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    steps_per_epoch = (len(train_sps) + batch_size - 1) // batch_size
    total_steps = max(1, epochs * steps_per_epoch)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: max(0.0, 1.0 - step / total_steps)
    )
    use_amp = config.mixed_precision and device.type == "cuda"
    scaler = torch.amp.GradScaler(enabled=use_amp)

    checkpoint_dir = Path(config.checkpoint_dir)
    best_f1 = -1.0
    best_epoch = -1
    history = []
    loss_history = []
    step = 0
    for epoch in range(epochs):
        model.train()
        order = list(range(len(train_sps)))
        rng.shuffle(order)
        for lo in range(0, len(order), batch_size):
            batch_idx = order[lo : lo + batch_size]
            optimizer.zero_grad()
            with torch.autocast(device_type=device.type, enabled=use_amp):
                logits = model.logits_for_batch([train_sps[i] for i in batch_idx])
                loss = F.cross_entropy(logits, labels[batch_idx])
            if not torch.isfinite(loss):
                raise TrainingDivergenceError(f"non-finite loss at step {step}")
            loss_history.append(loss.item())
            scaler.scale(loss).backward()
            scaler.step(optimizer)
            scaler.update()
            scheduler.step()
            step += 1
        valid_metrics = evaluate(model, valid_set, max_seq_len=config.max_seq_len)
        history.append(valid_metrics.f1)
        if valid_metrics.f1 > best_f1:
            best_f1 = valid_metrics.f1
            best_epoch = epoch
            save_checkpoint(
                model,
                checkpoint_dir,
                manifest={
                    "config": asdict(config),
                    "effective_batch_size": batch_size,
                    "epoch": epoch,
                    "valid_f1": best_f1,
                    "seed": config.seed,
                    "valid_f1_history": list(history),
                },
            )
    # Refresh the stored history so the manifest reflects all epochs.
    manifest = read_manifest(checkpoint_dir)
    manifest.update(
        {
            "valid_f1_history": history,
            "train_loss_history": loss_history,
            "epoch": best_epoch,
            "valid_f1": best_f1,
        }
    )
    with open(checkpoint_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return checkpoint_dir


def inspect_attention(model_or_path, pair: CandidatePair, max_seq_len: int = 256) -> dict:
    """Structured dump of all attention internals for one pair.

    Entries cover the left-to-right direction per attribute pair (i, j); the
    fused similarity matrix and prediction come from the same forward pass
    conventions as `predict`.
    """
    model = _as_model(model_or_path)
    model.eval()
    tok = model.encoder.pair_tokenizer
    with torch.no_grad():
        sp = model.tokenize(pair, max_seq_len)
        emb = model.embed(sp)
        left, right = span_matrices(emb)
        params = model.attention
        entries = []
        for i, H_i in enumerate(left):
            for j, H_j in enumerate(right):
                entry = {"i": i, "j": j}
                if H_i.shape[1] == 0 or H_j.shape[1] == 0:
                    entry.update(alpha=[], alpha_prime=[], beta=[], token_scores=[])
                else:
                    alpha = self_attention(H_i, params.W_self)
                    weights = m2v(alpha, axis=params.m2v_axis)
                    beta, attended = inter_attention(H_i, H_j, params.W_inter)
                    scores = compare_tokens(H_i, attended, params)
                    entry.update(
                        alpha=alpha.tolist(),
                        alpha_prime=weights.tolist(),
                        beta=beta.tolist(),
                        token_scores=scores.tolist(),
                    )
                entries.append(entry)
        R = attribute_similarity_matrix(emb, params)
        features = model.features_from_embeddings(emb)
        prediction = classify(features, model.head)
    return {
        "left_attributes": pair.left.names,
        "right_attributes": pair.right.names,
        "left_value_tokens": [tok.span_tokens(sp, s) for s in sp.left_spans],
        "right_value_tokens": [tok.span_tokens(sp, s) for s in sp.right_spans],
        "entries": entries,
        "R": R.values.tolist(),
        "truncated": sp.truncated,
        "prediction": prediction.to_dict(),
    }
