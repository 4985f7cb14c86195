"""Synthetic heterogeneous-schema benchmark generation.

Produces two tables from a common base population: table A merges address+city
into one attribute, table B merges city+state, so matching pairs must bridge a
1:m attribute correspondence. Synonym substitution turns copies of positive
pairs into hard negatives.
"""

import random
import re

from .data import CandidatePair, EntityRecord, SynonymLexicon, merge_attributes
from .errors import GenerationError

BASE_SCHEMA = ("name", "address", "city", "state", "zip")

FIRST_NAMES = [
    "James", "Mary", "Robert", "Patricia", "John", "Jennifer", "Michael", "Linda",
    "David", "Elizabeth", "William", "Barbara", "Richard", "Susan", "Joseph",
    "Jessica", "Thomas", "Sarah", "Charles", "Karen", "Wei", "Li", "Ana", "Omar",
]
LAST_NAMES = [
    "Smith", "Johnson", "Williams", "Brown", "Jones", "Garcia", "Miller", "Davis",
    "Rodriguez", "Martinez", "Hernandez", "Lopez", "Wilson", "Anderson", "Thomas",
    "Taylor", "Moore", "Jackson", "Martin", "Lee", "Chen", "Nguyen", "Kumar",
]
STREET_NAMES = [
    "Elm", "Oak", "Maple", "Cedar", "Pine", "Walnut", "Chestnut", "Spruce",
    "River", "Lake", "Hill", "Sunset", "Park", "Main", "Washington", "Franklin",
]
STREET_TYPES = ["St", "Ave", "Rd", "Blvd", "Ln", "Dr"]
CITIES = [
    "Ames", "Boone", "Carroll", "Denison", "Eldora", "Fairfield", "Grinnell",
    "Harlan", "Indianola", "Jefferson", "Keokuk", "Lamoni", "Monticello",
    "Newton", "Osceola", "Pella", "Quimby", "Redfield", "Spencer", "Tipton",
]
STATES = ["IA", "IL", "MN", "MO", "NE", "SD", "WI", "KS", "OH", "MI"]


def random_person_records(count: int, seed: int) -> list:
    """Deterministically generate base person records with the five UIS attributes."""
    rng = random.Random(seed)
    records = []
    for i in range(count):
        name = f"{rng.choice(FIRST_NAMES)} {rng.choice(LAST_NAMES)}"
        address = f"{rng.randint(1, 9999)} {rng.choice(STREET_NAMES)} {rng.choice(STREET_TYPES)}"
        city = rng.choice(CITIES)
        state = rng.choice(STATES)
        zip_code = f"{rng.randint(10000, 99999)}"
        records.append(
            EntityRecord(
                id=f"base-{i}",
                attributes=(
                    ("name", name),
                    ("address", address),
                    ("city", city),
                    ("state", state),
                    ("zip", zip_code),
                ),
            )
        )
    return records


def _check_base_schema(record: EntityRecord):
    missing = [a for a in BASE_SCHEMA if a not in record.names]
    if missing:
        raise GenerationError(f"base record {record.id!r} missing attributes: {missing}")


def generate_uis_tables(base_records, seed: int, negatives: int = 0):
    """Build the two merged-schema tables plus labeled pairs.

    Returns (table_a, table_b, pairs): every base record yields one record per
    table and one positive pair; `negatives` extra pairs link distinct bases.
    """
    base_records = list(base_records)
    for r in base_records:
        _check_base_schema(r)
    n = len(base_records)
    table_a, table_b = [], []
    for i, r in enumerate(base_records):
        a = merge_attributes(r, "address", "city", "address_city")
        b = merge_attributes(r, "city", "state", "city_state")
        table_a.append(EntityRecord(id=f"a{i}", attributes=a.attributes))
        table_b.append(EntityRecord(id=f"b{i}", attributes=b.attributes))

    pairs = [CandidatePair(left=table_a[i], right=table_b[i], label=1) for i in range(n)]

    max_negatives = n * (n - 1)
    if negatives > max_negatives:
        raise GenerationError(
            f"requested {negatives} negatives but only {max_negatives} distinct non-matching pairs exist"
        )
    rng = random.Random(seed)
    seen = set()
    while len(seen) < negatives:
        i, j = rng.randrange(n), rng.randrange(n)
        if i != j:
            seen.add((i, j))
    for i, j in sorted(seen):
        pairs.append(CandidatePair(left=table_a[i], right=table_b[j], label=0))
    return table_a, table_b, pairs


def _substitute(value: str, term: str, replacement: str):
    pattern = re.compile(r"(?<!\w)" + re.escape(term) + r"(?!\w)")
    if not pattern.search(value):
        return None
    return pattern.sub(replacement, value)


def _pair_key(pair: CandidatePair):
    return (pair.left.attributes, pair.right.attributes)


def synonym_negatives(pairs, lexicon: SynonymLexicon, count: int, seed: int) -> list:
    """Create `count` label-0 pairs by synonym-substituting values of positive pairs."""
    if count < 0:
        raise ValueError("count must be non-negative")
    positives = [p for p in pairs if p.label == 1]
    if not positives:
        raise GenerationError("no positive pairs to derive negatives from")
    if not lexicon.entries:
        raise GenerationError("empty synonym lexicon")
    if count == 0:
        return []

    positive_keys = {_pair_key(p) for p in positives}
    candidates = []
    for pi, pair in enumerate(positives):
        for side in ("left", "right"):
            record = getattr(pair, side)
            for ai, (attr, value) in enumerate(record.attributes):
                for term in sorted(lexicon.entries):
                    for syn in sorted(lexicon.entries[term]):
                        if _substitute(value, term, syn) is not None:
                            candidates.append((pi, side, ai, term, syn))
    if not candidates:
        raise GenerationError("no positive pair has any value covered by the lexicon")

    rng = random.Random(seed)
    rng.shuffle(candidates)
    out, out_keys = [], set()
    for serial, (pi, side, ai, term, syn) in enumerate(candidates):
        if len(out) == count:
            break
        source = positives[pi]
        record = getattr(source, side)
        attr, value = record.attributes[ai]
        new_value = _substitute(value, term, syn)
        if new_value == value:
            continue
        attrs = list(record.attributes)
        attrs[ai] = (attr, new_value)
        mutated = EntityRecord(id=f"{record.id}~syn{serial}", attributes=tuple(attrs))
        candidate = (
            CandidatePair(left=mutated, right=source.right, label=0)
            if side == "left"
            else CandidatePair(left=source.left, right=mutated, label=0)
        )
        key = _pair_key(candidate)
        if key in positive_keys or key in out_keys:
            continue
        out_keys.add(key)
        out.append(candidate)
    if len(out) < count:
        raise GenerationError(
            f"requested {count} synonym negatives but only {len(out)} distinct ones are producible"
        )
    return out
