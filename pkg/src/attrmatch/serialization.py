"""Record serialization into marked token sequences with per-attribute spans.

The text form is "[COL] name [VAL] value ..." per attribute; a pair is
"[CLS] left [SEP] right [SEP]". Subword tokenization keeps, for every
attribute value, the half-open token range it occupies, so downstream
attention code can slice value tokens per attribute.
"""

import json
import re
from dataclasses import dataclass, field

from .data import CandidatePair, EntityRecord
from .errors import ConfigError, SerializationError

COL = "[COL]"
VAL = "[VAL]"
CLS = "[CLS]"
SEP = "[SEP]"

MIN_MAX_LEN = 16
DEFAULT_MAX_LEN = 256

_WS = re.compile(r"\s+")


def normalize_ws(text: str) -> str:
    return _WS.sub(" ", text).strip()


def serialize_entity(e: EntityRecord) -> str:
    """Flatten a record to the alternating [COL] name [VAL] value form."""
    if len(e.attributes) == 0:
        raise ValueError(f"record {e.id!r} has no attributes")
    parts = []
    for name, value in e.attributes:
        parts.append(COL)
        parts.append(normalize_ws(name))
        parts.append(VAL)
        value = normalize_ws(value)
        if value:
            parts.append(value)
    return " ".join(parts)


def serialize_pair(p: CandidatePair) -> str:
    return f"{CLS} {serialize_entity(p.left)} {SEP} {serialize_entity(p.right)} {SEP}"


def parse_serialized(s: str) -> EntityRecord:
    """Inverse of serialize_entity, up to whitespace normalization."""
    tokens = s.split()
    attrs = []
    i = 0
    name = None
    current = None  # words of the value being collected
    while i < len(tokens):
        tok = tokens[i]
        if tok == COL:
            if name is not None:
                attrs.append((name, " ".join(current)))
                name, current = None, None
            j = i + 1
            words = []
            while j < len(tokens) and tokens[j] not in (COL, VAL):
                words.append(tokens[j])
                j += 1
            if j >= len(tokens) or tokens[j] != VAL:
                raise SerializationError(f"missing {VAL} after {COL} at token {i}")
            if not words:
                raise SerializationError(f"empty attribute name at token {i}")
            name = " ".join(words)
            current = []
            i = j + 1
        elif tok == VAL:
            raise SerializationError(f"{VAL} before any {COL} at token {i}")
        else:
            if current is None:
                raise SerializationError(f"unexpected token {tok!r} at position {i}")
            current.append(tok)
            i += 1
    if name is not None:
        attrs.append((name, " ".join(current)))
    if not attrs:
        raise SerializationError("no attributes found")
    return EntityRecord(id="parsed", attributes=tuple(attrs))


@dataclass(frozen=True)
class AttrSpan:
    """Half-open token range [start, end) of one attribute's value tokens."""

    attr_index: int
    start: int
    end: int

    def __len__(self):
        return self.end - self.start


@dataclass
class SerializedPair:
    token_ids: list
    text: str
    left_spans: list = field(default_factory=list)
    right_spans: list = field(default_factory=list)
    sep_index: int = -1
    truncated: bool = False

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "text": self.text,
                "token_ids": self.token_ids,
                "left_spans": [[s.attr_index, s.start, s.end] for s in self.left_spans],
                "right_spans": [[s.attr_index, s.start, s.end] for s in self.right_spans],
                "sep_index": self.sep_index,
                "truncated": self.truncated,
            }
        )

    @classmethod
    def from_json_line(cls, line: str) -> "SerializedPair":
        d = json.loads(line)
        return cls(
            token_ids=d["token_ids"],
            text=d["text"],
            left_spans=[AttrSpan(*s) for s in d["left_spans"]],
            right_spans=[AttrSpan(*s) for s in d["right_spans"]],
            sep_index=d["sep_index"],
            truncated=d["truncated"],
        )


class PairTokenizer:
    """Wraps a subword tokenizer; builds marked token sequences with value spans.

    [COL]/[VAL] must be registered as additional special tokens on the wrapped
    tokenizer so they are never split into subwords.
    """

    def __init__(self, hf_tokenizer):
        self.tok = hf_tokenizer
        self.cls_id = hf_tokenizer.cls_token_id
        self.sep_id = hf_tokenizer.sep_token_id
        self.col_id = hf_tokenizer.convert_tokens_to_ids(COL)
        self.val_id = hf_tokenizer.convert_tokens_to_ids(VAL)
        unk = hf_tokenizer.unk_token_id
        if self.col_id == unk or self.val_id == unk:
            raise ConfigError(f"tokenizer lacks the {COL}/{VAL} special tokens")

    def _subword_ids(self, text: str) -> list:
        return self.tok.convert_tokens_to_ids(self.tok.tokenize(text))

    def tokenize_with_spans(self, p: CandidatePair, max_len: int = DEFAULT_MAX_LEN) -> SerializedPair:
        if max_len < MIN_MAX_LEN:
            raise ConfigError(f"max_len must be >= {MIN_MAX_LEN}, got {max_len}")
        ids = [self.cls_id]
        spans = {"left": [], "right": []}
        for side, record in (("left", p.left), ("right", p.right)):
            if len(record.attributes) == 0:
                raise ValueError(f"record {record.id!r} has no attributes")
            for ai, (name, value) in enumerate(record.attributes):
                ids.append(self.col_id)
                ids.extend(self._subword_ids(normalize_ws(name)))
                ids.append(self.val_id)
                start = len(ids)
                ids.extend(self._subword_ids(normalize_ws(value)))
                spans[side].append(AttrSpan(attr_index=ai, start=start, end=len(ids)))
            if side == "left":
                sep_index = len(ids)
                ids.append(self.sep_id)
        ids.append(self.sep_id)

        truncated = False
        all_spans = spans["left"] + spans["right"]
        while len(ids) > max_len:
            longest = max(all_spans, key=len)
            if len(longest) == 0:
                raise SerializationError(
                    f"sequence of markers and attribute names alone exceeds max_len={max_len}"
                )
            cut = longest.end - 1
            del ids[cut]
            truncated = True
            for side in ("left", "right"):
                spans[side] = [
                    AttrSpan(
                        s.attr_index,
                        s.start - (s.start > cut),
                        s.end - (s.end > cut),
                    )
                    for s in spans[side]
                ]
            if sep_index > cut:
                sep_index -= 1
            all_spans = spans["left"] + spans["right"]

        return SerializedPair(
            token_ids=ids,
            text=serialize_pair(p),
            left_spans=spans["left"],
            right_spans=spans["right"],
            sep_index=sep_index,
            truncated=truncated,
        )

    def decode_span(self, sp: SerializedPair, span: AttrSpan) -> str:
        tokens = self.tok.convert_ids_to_tokens(sp.token_ids[span.start : span.end])
        return self.tok.convert_tokens_to_string(tokens)

    def span_tokens(self, sp: SerializedPair, span: AttrSpan) -> list:
        return self.tok.convert_ids_to_tokens(sp.token_ids[span.start : span.end])
