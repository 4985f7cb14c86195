"""Attribute-association entity matching: library and CLI."""

from .data import (
    CandidatePair,
    DatasetBundle,
    EntityRecord,
    Metrics,
    SynonymLexicon,
    compute_metrics,
    load_magellan_dataset,
    merge_attributes,
    split_dataset,
)
from .serialization import (
    SerializedPair,
    parse_serialized,
    serialize_entity,
    serialize_pair,
)
from .synthetic import generate_uis_tables, random_person_records, synonym_negatives

__all__ = [
    "CandidatePair",
    "DatasetBundle",
    "EntityRecord",
    "Metrics",
    "SynonymLexicon",
    "SerializedPair",
    "compute_metrics",
    "generate_uis_tables",
    "load_magellan_dataset",
    "merge_attributes",
    "parse_serialized",
    "random_person_records",
    "serialize_entity",
    "serialize_pair",
    "split_dataset",
    "synonym_negatives",
]

__version__ = "0.1.0"
