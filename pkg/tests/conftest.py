import csv
import random

import pytest
import torch

from attrmatch.data import CandidatePair, DatasetBundle, EntityRecord
from attrmatch.encoder import EncoderAdapter
from attrmatch.matcher import MatchModel, TrainConfig, read_manifest, train
from attrmatch.synthetic import generate_uis_tables, random_person_records

TINY_SPEC = "random:hidden=32,layers=1,heads=2,seed=0"
TOY_SPEC = "random:hidden=64,layers=2,heads=2,seed=0"


@pytest.fixture(scope="session")
def encoder():
    """Small read-only encoder shared by tests that never mutate weights."""
    return EncoderAdapter.build(TINY_SPEC)


@pytest.fixture()
def make_encoder():
    return EncoderAdapter.build


def toy_pairs(n_base=10, negatives=10, seed=0):
    base = random_person_records(n_base, seed=seed)
    _, _, pairs = generate_uis_tables(base, seed=seed, negatives=negatives)
    return pairs


@pytest.fixture(scope="session")
def toy_bundle():
    return DatasetBundle(pairs=toy_pairs(), name="toy", split_tag="unsplit")


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory, toy_bundle):
    """One 200-step training run on the 20-pair toy task, shared across tests."""
    checkpoint_dir = tmp_path_factory.mktemp("overfit") / "checkpoint"
    torch.manual_seed(0)
    model = MatchModel(EncoderAdapter.build(TOY_SPEC))
    config = TrainConfig(
        max_seq_len=256,
        learning_rate=1e-3,
        epochs=40,
        batch_size=4,  # 5 steps/epoch * 40 epochs = 200 steps
        seed=0,
        mixed_precision=False,
        runs=1,
        checkpoint_dir=str(checkpoint_dir),
    )
    checkpoint = train(model, config, toy_bundle, toy_bundle)
    return {
        "model": model,
        "checkpoint": checkpoint,
        "bundle": toy_bundle,
        "manifest": read_manifest(checkpoint),
    }


def random_record(rng, rid="r", min_attrs=1, max_attrs=5):
    n = rng.randint(min_attrs, max_attrs)
    attrs = []
    for i in range(n):
        name = f"attr{i}" if rng.random() < 0.5 else rand_word(rng)
        value = " ".join(rand_word(rng) for _ in range(rng.randint(0, 4)))
        attrs.append((name, value))
    # attribute names must be unique
    seen, unique = set(), []
    for k, v in attrs:
        while k in seen:
            k += rand_word(rng)
        seen.add(k)
        unique.append((k, v))
    return EntityRecord(id=f"{rid}{rng.randint(0, 10**9)}", attributes=tuple(unique))


def rand_word(rng, alphabet="abcdefghijklmnopqrstuvwxyz0123456789"):
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 8)))


def random_pair(rng):
    return CandidatePair(left=random_record(rng, "l"), right=random_record(rng, "r"))


def write_magellan_fixture(directory, num_pairs, num_pos, attrs_a, attrs_b, seed=0):
    """Write a Magellan-layout dataset with the requested shape facts."""
    rng = random.Random(seed)
    directory.mkdir(parents=True, exist_ok=True)
    n_records = max(2, (num_pairs + 1) // 2)

    def write_table(path, prefix, n_attrs):
        cols = [f"{prefix}attr{i}" for i in range(n_attrs)]
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["id"] + cols)
            for i in range(n_records):
                w.writerow([f"{prefix}{i}"] + [rand_word(rng) for _ in cols])
        return cols

    write_table(directory / "tableA.csv", "a", attrs_a)
    write_table(directory / "tableB.csv", "b", attrs_b)
    with open(directory / "pairs.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["ltable_id", "rtable_id", "label"])
        for k in range(num_pairs):
            label = 1 if k < num_pos else 0
            w.writerow([f"a{rng.randrange(n_records)}", f"b{rng.randrange(n_records)}", label])
    return directory
