"""Encoder adapter: a contextual transformer encoder plus matching tokenizer.

Two construction paths:
  * a pretrained checkpoint name/path understood by `transformers`
    (e.g. "bert-base-uncased"), for full-scale runs;
  * a "random:..." spec building a small randomly initialized encoder with a
    self-contained word+character WordPiece vocabulary, for CPU tests and the
    toy training task (e.g. "random:hidden=64,layers=2,heads=2,seed=0").

Both register [COL] and [VAL] as additional special tokens.
"""

import tempfile
from pathlib import Path

import torch
from transformers import AutoModel, AutoTokenizer, BertConfig, BertModel, BertTokenizer

from . import synthetic
from .errors import ConfigError
from .serialization import COL, VAL, PairTokenizer

_BASE_SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]


def _random_vocab() -> list:
    words = set()
    for lst in (
        synthetic.FIRST_NAMES,
        synthetic.LAST_NAMES,
        synthetic.STREET_NAMES,
        synthetic.STREET_TYPES,
        synthetic.CITIES,
        synthetic.STATES,
    ):
        words.update(lst)
    chars = [chr(c) for c in range(33, 127)]
    vocab = list(_BASE_SPECIALS) + [COL, VAL] + sorted(words)
    vocab += chars + ["##" + c for c in chars]
    return vocab


def _build_random_tokenizer() -> BertTokenizer:
    with tempfile.TemporaryDirectory() as tmp:
        vocab_file = Path(tmp) / "vocab.txt"
        vocab_file.write_text("\n".join(_random_vocab()), encoding="utf-8")
        tok = BertTokenizer(str(vocab_file), do_lower_case=False, do_basic_tokenize=True)
    tok.add_special_tokens({"additional_special_tokens": [COL, VAL]})
    return tok


def _parse_random_spec(spec: str) -> dict:
    params = {"hidden": 64, "layers": 2, "heads": 2, "seed": 0}
    body = spec.split(":", 1)[1] if ":" in spec else ""
    for item in filter(None, body.split(",")):
        if "=" not in item:
            raise ConfigError(f"bad encoder spec item {item!r}")
        key, value = item.split("=", 1)
        if key not in params:
            raise ConfigError(f"unknown encoder spec key {key!r}")
        params[key] = int(value)
    if params["hidden"] % params["heads"] != 0:
        raise ConfigError("hidden size must be divisible by the head count")
    return params


class EncoderAdapter:
    """Owns the tokenizer + encoder pair and produces contextual token embeddings."""

    def __init__(self, model, hf_tokenizer, spec: str):
        self.model = model
        self.hf_tokenizer = hf_tokenizer
        self.pair_tokenizer = PairTokenizer(hf_tokenizer)
        self.spec = spec
        self.hidden_size = model.config.hidden_size

    @classmethod
    def build(cls, spec: str) -> "EncoderAdapter":
        if spec.startswith("random"):
            params = _parse_random_spec(spec)
            tok = _build_random_tokenizer()
            config = BertConfig(
                vocab_size=len(tok),
                hidden_size=params["hidden"],
                num_hidden_layers=params["layers"],
                num_attention_heads=params["heads"],
                intermediate_size=4 * params["hidden"],
                max_position_embeddings=512,
            )
            with torch.random.fork_rng():
                torch.manual_seed(params["seed"])
                model = BertModel(config)
        else:
            tok = AutoTokenizer.from_pretrained(spec)
            model = AutoModel.from_pretrained(spec)
            tok.add_special_tokens({"additional_special_tokens": [COL, VAL]})
            model.resize_token_embeddings(len(tok))
        model.eval()
        return cls(model=model, hf_tokenizer=tok, spec=spec)

    def forward_ids(self, token_ids, attention_mask=None):
        """Run the encoder; returns the (batch, seq, d) hidden states."""
        out = self.model(input_ids=token_ids, attention_mask=attention_mask)
        return out.last_hidden_state

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.hf_tokenizer.save_pretrained(str(directory / "tokenizer"))
        (directory / "encoder_spec.txt").write_text(self.spec, encoding="utf-8")
        self.model.config.to_json_file(str(directory / "encoder_config.json"))
        torch.save(self.model.state_dict(), directory / "encoder_weights.pt")

    @classmethod
    def load(cls, directory) -> "EncoderAdapter":
        directory = Path(directory)
        spec = (directory / "encoder_spec.txt").read_text(encoding="utf-8").strip()
        tok = AutoTokenizer.from_pretrained(str(directory / "tokenizer"))
        config = BertConfig.from_json_file(str(directory / "encoder_config.json"))
        model = BertModel(config)
        state = torch.load(directory / "encoder_weights.pt", map_location="cpu", weights_only=True)
        model.load_state_dict(state)
        model.eval()
        return cls(model=model, hf_tokenizer=tok, spec=spec)
