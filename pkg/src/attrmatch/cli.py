"""Command-line interface: gen / train / eval / predict / inspect.

All behaviour is driven by a YAML config file; --seed/--runs/--out override
the corresponding config fields so repeated protocol runs stay reproducible.
"""

import csv
import json
import statistics
import sys
from pathlib import Path

import click
import yaml

from .data import (
    CandidatePair,
    DatasetBundle,
    SynonymLexicon,
    load_magellan_dataset,
    split_dataset,
)
from .errors import AttrMatchError, ConfigError
from .synthetic import generate_uis_tables, random_person_records, synonym_negatives

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _load_config(path):
    path = Path(path)
    if not path.exists():
        _usage_error(f"config file not found: {path}")
    with open(path, encoding="utf-8") as f:
        cfg = yaml.safe_load(f) or {}
    if not isinstance(cfg, dict):
        _usage_error(f"config root must be a mapping: {path}")
    return cfg


def _usage_error(message):
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_USAGE)


def _fail(message):
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_FAILURE)


def _generate_bundle(gen_cfg, seed=None):
    base_count = int(gen_cfg.get("base_count", 0))
    if base_count <= 0:
        _usage_error("empty dataset: generator base_count must be positive")
    gen_seed = int(seed if seed is not None else gen_cfg.get("seed", 0))
    negatives = int(gen_cfg.get("negatives", 3 * base_count))
    base = random_person_records(base_count, seed=gen_seed)
    table_a, table_b, pairs = generate_uis_tables(base, seed=gen_seed, negatives=negatives)
    if gen_cfg.get("lexicon"):
        lexicon = SynonymLexicon.load(gen_cfg["lexicon"])
        extra = int(gen_cfg.get("synonym_negatives", 0))
        if extra:
            pairs = pairs + synonym_negatives(pairs, lexicon, count=extra, seed=gen_seed + 1)
    return table_a, table_b, pairs


def _resolve_dataset(cfg, seed=None) -> DatasetBundle:
    ds = cfg.get("dataset") or {}
    if "path" in ds:
        path = Path(ds["path"])
        if not path.exists():
            _usage_error(f"dataset path does not exist: {path}")
        return load_magellan_dataset(path)
    if "generator" in ds:
        _, _, pairs = _generate_bundle(ds["generator"], seed=seed)
        return DatasetBundle(pairs=pairs, name="generated", split_tag="unsplit")
    _usage_error("config needs dataset.path or dataset.generator")


def _splits(cfg, train_cfg):
    bundle = _resolve_dataset(cfg)
    return split_dataset(bundle, seed=int(train_cfg.get("seed", 0)))


def _write_magellan(out_dir: Path, table_a, table_b, pairs):
    def write_table(path, base_records, extra_records):
        records = {r.id: r for r in base_records}
        for r in extra_records:
            records.setdefault(r.id, r)
        columns = base_records[0].names
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["id"] + columns)
            for r in records.values():
                writer.writerow([r.id] + [r.value(c) for c in columns])

    write_table(out_dir / "tableA.csv", table_a, [p.left for p in pairs])
    write_table(out_dir / "tableB.csv", table_b, [p.right for p in pairs])
    with open(out_dir / "pairs.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["ltable_id", "rtable_id", "label"])
        for p in pairs:
            writer.writerow([p.left.id, p.right.id, p.label])


def _read_pair_file(path) -> DatasetBundle:
    path = Path(path)
    if not path.exists():
        _usage_error(f"pair file not found: {path}")
    pairs = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                pairs.append(CandidatePair.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                _usage_error(f"{path}:{line_no}: bad pair record: {exc}")
    return DatasetBundle(pairs=pairs, name=path.stem, split_tag="unsplit")


def _model_settings(cfg):
    model_cfg = cfg.get("model") or {}
    return {
        "encoder": model_cfg.get("encoder", "bert-base-uncased"),
        "m2v_axis": model_cfg.get("m2v_axis", "col"),
        "fusion": model_cfg.get("fusion", "pooled_stats"),
    }


def _train_config(cfg, **overrides):
    from .matcher import TrainConfig

    train_cfg = dict(cfg.get("train") or {})
    train_cfg.update({k: v for k, v in overrides.items() if v is not None})
    known = set(TrainConfig.__dataclass_fields__)
    unknown = set(train_cfg) - known
    if unknown:
        _usage_error(f"unknown train config keys: {sorted(unknown)}")
    try:
        return TrainConfig(**train_cfg)
    except ConfigError as exc:
        _usage_error(str(exc))


@click.group()
def main():
    """Attribute-association entity matching."""


@main.command("gen")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="override the generator seed")
def cmd_gen(config_path, out_dir, seed):
    """Generate a synthetic heterogeneous-schema dataset in Magellan layout."""
    cfg = _load_config(config_path)
    gen_cfg = (cfg.get("dataset") or {}).get("generator")
    if gen_cfg is None:
        _usage_error("config needs dataset.generator for gen")
    try:
        table_a, table_b, pairs = _generate_bundle(gen_cfg, seed=seed)
    except AttrMatchError as exc:
        _fail(str(exc))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_magellan(out_dir, table_a, table_b, pairs)
    positives = sum(1 for p in pairs if p.label == 1)
    attrs = f"{len(table_a[0])}-{len(table_b[0])}"
    click.echo("size positives attrs")
    click.echo(f"{len(pairs)} {positives} {attrs}")


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--runs", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
def cmd_train(config_path, seed, runs, out_dir):
    """Run the seeded multi-run training protocol and report mean test F1."""
    cfg = _load_config(config_path)
    out_dir = Path(out_dir or cfg.get("output_dir") or "attrmatch-out")
    base_config = _train_config(cfg, seed=seed, runs=runs)
    settings = _model_settings(cfg)

    from .encoder import EncoderAdapter
    from .matcher import MatchModel, evaluate, train

    try:
        train_set, valid_set, test_set = _splits(cfg, {"seed": base_config.seed})
        out_dir.mkdir(parents=True, exist_ok=True)
        run_metrics = []
        for run in range(base_config.runs):
            run_seed = base_config.seed + run
            run_dir = out_dir / f"run_{run}"
            config = _train_config(
                cfg, seed=run_seed, runs=1, checkpoint_dir=str(run_dir / "checkpoint")
            )
            import torch

            torch.manual_seed(run_seed)
            encoder = EncoderAdapter.build(settings["encoder"])
            model = MatchModel(encoder, m2v_axis=settings["m2v_axis"], fusion=settings["fusion"])
            checkpoint = train(model, config, train_set, valid_set)
            metrics = evaluate(checkpoint, test_set, max_seq_len=config.max_seq_len)
            run_metrics.append(metrics)
            click.echo(f"run {run} (seed {run_seed}): test F1 {metrics.f1:.4f}")
        f1s = [m.f1 for m in run_metrics]
        summary = {
            "runs": [m.to_dict() for m in run_metrics],
            "mean_f1": statistics.fmean(f1s),
            "std_f1": statistics.pstdev(f1s) if len(f1s) > 1 else 0.0,
            "seeds": [base_config.seed + r for r in range(base_config.runs)],
        }
        with open(out_dir / "metrics.json", "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
        click.echo(f"mean test F1 over {len(f1s)} runs: {summary['mean_f1']:.4f}")
    except AttrMatchError as exc:
        _fail(str(exc))


@main.command("eval")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--out", "out_path", type=click.Path(), default=None)
def cmd_eval(config_path, checkpoint, out_path):
    """Evaluate a checkpoint on the test split of the configured dataset."""
    cfg = _load_config(config_path)
    if not Path(checkpoint).exists():
        _usage_error(f"checkpoint not found: {checkpoint}")
    from .matcher import evaluate, load_checkpoint

    try:
        config = _train_config(cfg)
        _, _, test_set = _splits(cfg, {"seed": config.seed})
        model = load_checkpoint(checkpoint)
        metrics = evaluate(model, test_set, max_seq_len=config.max_seq_len)
    except AttrMatchError as exc:
        _fail(str(exc))
    payload = json.dumps(metrics.to_dict(), indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(payload + "\n", encoding="utf-8")
    click.echo(payload)


@main.command("predict")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--pairs", "pairs_path", required=True, type=click.Path())
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--max-seq-len", type=int, default=256)
def cmd_predict(checkpoint, pairs_path, out_path, max_seq_len):
    """Predict match probabilities for a JSONL pair file; one JSON line per pair."""
    if not Path(checkpoint).exists():
        _usage_error(f"checkpoint not found: {checkpoint}")
    bundle = _read_pair_file(pairs_path)
    from .matcher import load_checkpoint, predict_bundle

    try:
        model = load_checkpoint(checkpoint)
        predictions = predict_bundle(model, bundle, max_seq_len=max_seq_len)
    except AttrMatchError as exc:
        _fail(str(exc))
    lines = [json.dumps(p.to_dict()) for p in predictions]
    if out_path:
        Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        click.echo(line)


@main.command("inspect")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--pairs", "pairs_path", required=True, type=click.Path())
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--max-seq-len", type=int, default=256)
def cmd_inspect(checkpoint, pairs_path, out_path, max_seq_len):
    """Dump attention internals (alpha, alpha', beta, token scores, R) per pair."""
    if not Path(checkpoint).exists():
        _usage_error(f"checkpoint not found: {checkpoint}")
    bundle = _read_pair_file(pairs_path)
    from .matcher import inspect_attention, load_checkpoint

    try:
        model = load_checkpoint(checkpoint)
        dumps = [inspect_attention(model, p, max_seq_len=max_seq_len) for p in bundle.pairs]
    except AttrMatchError as exc:
        _fail(str(exc))
    lines = [json.dumps(d) for d in dumps]
    if out_path:
        Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        for line in lines:
            click.echo(line)


if __name__ == "__main__":
    main()
