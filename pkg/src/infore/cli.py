"""Operator CLI: stage-oriented pipeline runs with resumable artifacts.

Each run lives under ``runs/<run_id>/`` with one directory per stage. Stages
form the dependency chain ingest -> extract -> (prune-train) -> prune ->
reason -> eval -> report; annotate and quality hang off eval. A stage whose
output already exists is skipped unless --force is given, and the resolved
configuration is frozen into the run directory the first time any stage runs.

Exit codes: 0 success, 2 configuration error, 3 missing upstream artifact,
4 backend failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from .core import (
    GenParams,
    InfoReError,
    MindMap,
    PrunedMindMap,
    Sample,
    Strategy,
    StrategyName,
    render_mindmap,
    parse_outline,
    flatten,
    iter_jsonl,
    write_jsonl,
)
from .datasets import DatasetName, DatasetSpec, ingest as ingest_dataset, load_samples, save_samples
from .evaluation import (
    EmptyAnnotationsError,
    ErrorAnnotation,
    RunReport,
    error_distribution,
    evaluate_run,
    quality_rank_score,
    RankTally,
    token_f1,
)
from .extraction import extract, load_mindmaps, save_mindmaps
from .gateway import BackendError, Gateway, MockMissError, make_backend
from .pruning import (
    PruningPolicy,
    RewardConfig,
    TrainConfig,
    greedy_prune,
    load_policy,
    make_scorer,
    save_policy,
    similarity_prune,
    train,
)
from .reasoning import load_results, reason, save_results
from .reporting import (
    quality_figure,
    training_figure,
    write_report_files,
)


class MissingUpstreamError(InfoReError):
    """A stage was requested before the stage it depends on has run."""


class RunLockedError(InfoReError):
    """Another process owns the run directory."""


STAGES = (
    "ingest",
    "extract",
    "prune_train",
    "prune",
    "reason",
    "eval",
    "report",
    "annotate",
    "quality",
)


@dataclass
class RunConfig:
    """Resolved settings for one run. Precedence: flags > config file > defaults."""

    run_id: str = ""
    runs_root: str = "runs"
    dataset: str = "HotpotQA"
    split: str = "test"
    expected_count: int | None = None
    source: str | None = None
    extraction_model: str = "mock-model"
    reasoning_model: str = "mock-model"
    strategies: list[str] = field(
        default_factory=lambda: ["standard", "cot", "infore", "infore_cot"]
    )
    include_original_context: bool = False
    pruner: str = "none"
    checkpoint: str | None = None
    scorer: str = "hash-64"
    drop_ratio: float = 0.3
    threshold: float = 0.5
    backend: str = "mock"
    base_url: str | None = None
    api_key_env: str = "INFORE_API_KEY"
    fixtures: str | None = None
    temperature: float = 0.0
    top_p: float = 1.0
    max_output: int = 1024
    seed: int = 0
    workers: int = 4
    episodes: int = 1000
    epochs: int = 5
    batch_size: int = 4
    learning_rate: float = 2e-6
    f1_coefficient: float = 10.0
    epsilon: float = 0.2
    reward_mode: str = "paper"

    def __post_init__(self) -> None:
        if self.pruner not in ("none", "policy", "similarity"):
            raise ValueError(f"pruner must be none/policy/similarity, got {self.pruner!r}")
        if self.backend not in ("live", "replay", "mock"):
            raise ValueError(f"backend must be live/replay/mock, got {self.backend!r}")
        for s in self.strategies:
            StrategyName(s)
        DatasetName(self.dataset)

    @property
    def run_dir(self) -> Path:
        return Path(self.runs_root) / self.run_id

    def gen_params(self) -> GenParams:
        return GenParams(self.temperature, self.top_p, self.max_output)

    def strategy_objects(self) -> list[Strategy]:
        return [
            Strategy(
                StrategyName(s),
                self.include_original_context
                and StrategyName(s) in (StrategyName.INFORE, StrategyName.INFORE_COT),
            )
            for s in self.strategies
        ]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, config file (explicit or the run's frozen copy), and
    explicitly provided flags, in increasing precedence."""
    data: dict = {}
    config_path = getattr(args, "config", None)
    runs_root = getattr(args, "runs_root", None) or "runs"
    run_id = getattr(args, "run_id", None)
    if config_path:
        data.update(json.loads(Path(config_path).read_text(encoding="utf-8")))
    else:
        frozen = Path(data.get("runs_root", runs_root)) / (run_id or "") / "config.json"
        if run_id and frozen.exists():
            data.update(json.loads(frozen.read_text(encoding="utf-8")))

    for key in RunConfig.__dataclass_fields__:
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if getattr(args, "strategies", None):
        data["strategies"] = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if not data.get("run_id"):
        raise ValueError("--run-id is required (or set run_id in the config file)")
    return RunConfig.from_dict(data)


@contextmanager
def run_lock(run_dir: Path):
    """One process owns a run directory at a time."""
    run_dir.mkdir(parents=True, exist_ok=True)
    lock_path = run_dir / ".lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunLockedError(f"run directory {run_dir} is locked by another process")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


def _freeze_config(config: RunConfig) -> None:
    frozen = config.run_dir / "config.json"
    if not frozen.exists():
        frozen.parent.mkdir(parents=True, exist_ok=True)
        frozen.write_text(json.dumps(config.to_dict(), indent=2), encoding="utf-8")


def _make_gateway(config: RunConfig, backend=None) -> Gateway:
    if backend is None:
        fixtures = config.fixtures
        if config.backend == "replay" and not fixtures:
            fixtures = str(config.run_dir / "cache" / "completions.jsonl")
        backend = make_backend(
            config.backend,
            fixtures=fixtures,
            base_url=config.base_url,
            api_key_env=config.api_key_env,
        )
    cache_path = None
    if config.backend == "live":
        cache_path = config.run_dir / "cache" / "completions.jsonl"
    return Gateway(backend, cache_path=cache_path)


def _require_artifact(path: Path, producing_stage: str) -> Path:
    if not path.exists():
        raise MissingUpstreamError(
            f"{path} not found; run the {producing_stage} stage first"
        )
    return path


def _answerer(gateway: Gateway, config: RunConfig):
    """Score a pruned map by reasoning over it and taking the answer F1."""
    strategy = Strategy(StrategyName.INFORE)
    params = config.gen_params()

    def answer(pruned: PrunedMindMap, sample: Sample) -> float:
        result = reason(
            sample, strategy, gateway, config.reasoning_model, pruned, params
        )
        if result.failure is not None:
            return 0.0
        return token_f1(result.answer or "", sample.gold_answers)

    return answer


def stage_ingest(config: RunConfig, force: bool = False, backend=None) -> Path:
    out = config.run_dir / "ingest" / "samples.jsonl"
    if out.exists() and not force:
        return out
    if not config.source:
        raise ValueError("ingest requires a source file (--source or config.source)")
    spec = DatasetSpec(
        DatasetName(config.dataset), config.split, config.expected_count
    )
    samples = ingest_dataset(spec, config.source, seed=config.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_samples(samples, out)
    return out


def stage_extract(config: RunConfig, force: bool = False, backend=None) -> Path:
    out = config.run_dir / "extract" / "mindmaps.jsonl"
    if out.exists() and not force:
        return out
    samples_path = _require_artifact(config.run_dir / "ingest" / "samples.jsonl", "ingest")
    samples = load_samples(samples_path)
    gateway = _make_gateway(config, backend)
    params = config.gen_params()
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        maps = list(
            pool.map(
                lambda s: extract(s, gateway, config.extraction_model, params), samples
            )
        )
    out.parent.mkdir(parents=True, exist_ok=True)
    save_mindmaps(maps, out)
    return out


def stage_prune_train(config: RunConfig, force: bool = False, backend=None) -> Path:
    outdir = config.run_dir / "prune_train"
    checkpoint = outdir / "checkpoint.json"
    if checkpoint.exists() and not force:
        return checkpoint
    samples_path = _require_artifact(config.run_dir / "ingest" / "samples.jsonl", "ingest")
    maps_path = _require_artifact(config.run_dir / "extract" / "mindmaps.jsonl", "extract")
    samples = {s.id: s for s in load_samples(samples_path)}
    maps = load_mindmaps(maps_path)
    pairs = [(m, samples[m.sample_id]) for m in maps if m.sample_id in samples]
    gateway = _make_gateway(config, backend)
    policy = PruningPolicy(make_scorer(config.scorer))
    tcfg = TrainConfig(
        episodes=config.episodes,
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        seed=config.seed,
        reward_mode=config.reward_mode,
    )
    rcfg = RewardConfig(config.f1_coefficient, config.epsilon)
    policy, history = train(policy, pairs, _answerer(gateway, config), tcfg, rcfg)
    outdir.mkdir(parents=True, exist_ok=True)
    save_policy(policy, rcfg, checkpoint)
    history.to_csv(outdir / "history.csv")
    figures = outdir / "figures"
    figures.mkdir(exist_ok=True)
    if history.records:
        training_figure(history, figures / "training_reward.png")
    return checkpoint


def stage_prune(config: RunConfig, force: bool = False, backend=None) -> Path:
    out = config.run_dir / "prune" / "pruned.jsonl"
    if out.exists() and not force:
        return out
    samples_path = _require_artifact(config.run_dir / "ingest" / "samples.jsonl", "ingest")
    maps_path = _require_artifact(config.run_dir / "extract" / "mindmaps.jsonl", "extract")
    samples = {s.id: s for s in load_samples(samples_path)}
    maps = load_mindmaps(maps_path)

    policy = None
    if config.pruner == "policy":
        checkpoint = config.checkpoint or str(config.run_dir / "prune_train" / "checkpoint.json")
        _require_artifact(Path(checkpoint), "prune-train")
        policy, _ = load_policy(checkpoint)
    scorer = make_scorer(config.scorer) if config.pruner == "similarity" else None

    rows = []
    for m in maps:
        sample = samples.get(m.sample_id)
        question = sample.question if sample else ""
        if config.pruner == "none":
            pruned = PrunedMindMap.keep_all(m)
        elif config.pruner == "policy":
            pruned = greedy_prune(policy, m, question, config.threshold)
        else:
            relations = [p.render() for p in flatten(m)]
            kept = similarity_prune(relations, question, scorer, config.drop_ratio)
            pruned = PrunedMindMap(m, kept)
        rows.append(
            {
                "sample_id": m.sample_id,
                "producer_model": m.producer_model,
                "kept": sorted(pruned.kept),
                "mind_map": render_mindmap(pruned.tree()),
            }
        )
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out, rows)
    return out


def stage_reason(config: RunConfig, force: bool = False, backend=None) -> Path:
    out = config.run_dir / "reason" / "results.jsonl"
    if out.exists() and not force:
        return out
    samples_path = _require_artifact(config.run_dir / "ingest" / "samples.jsonl", "ingest")
    samples = load_samples(samples_path)
    strategies = config.strategy_objects()

    pruned_maps: dict[str, MindMap] = {}
    if any(s.uses_mindmap for s in strategies):
        pruned_path = _require_artifact(config.run_dir / "prune" / "pruned.jsonl", "prune")
        for row in iter_jsonl(pruned_path):
            pruned_maps[row["sample_id"]] = MindMap(
                root=parse_outline(row["mind_map"]),
                sample_id=row["sample_id"],
                producer_model=row.get("producer_model", ""),
            )

    gateway = _make_gateway(config, backend)
    params = config.gen_params()
    results = []
    for strategy in strategies:
        def run_one(sample: Sample, strategy=strategy):
            reorganized = pruned_maps.get(sample.id) if strategy.uses_mindmap else None
            return reason(
                sample, strategy, gateway, config.reasoning_model, reorganized, params
            )

        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results.extend(pool.map(run_one, samples))

    out.parent.mkdir(parents=True, exist_ok=True)
    save_results(results, out)
    stats = {"backend_calls": gateway.backend_calls, "cache_hits": gateway.cache_hits}
    (out.parent / "stats.json").write_text(json.dumps(stats), encoding="utf-8")
    return out


def stage_eval(config: RunConfig, force: bool = False, backend=None) -> Path:
    out = config.run_dir / "eval" / "report.json"
    if out.exists() and not force:
        return out
    samples_path = _require_artifact(config.run_dir / "ingest" / "samples.jsonl", "ingest")
    results_path = _require_artifact(config.run_dir / "reason" / "results.jsonl", "reason")
    samples = load_samples(samples_path)
    results = load_results(results_path)
    stats_path = config.run_dir / "reason" / "stats.json"
    backend_calls = 0
    if stats_path.exists():
        backend_calls = json.loads(stats_path.read_text(encoding="utf-8")).get("backend_calls", 0)
    labels = {s.id: config.dataset for s in samples}
    report = evaluate_run(results, samples, dataset_labels=labels, backend_calls=backend_calls)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    return out


def stage_report(config: RunConfig, force: bool = False, backend=None) -> Path:
    outdir = config.run_dir / "report"
    out = outdir / "report.txt"
    if out.exists() and not force:
        return out
    eval_path = _require_artifact(config.run_dir / "eval" / "report.json", "eval")
    report = RunReport.from_dict(json.loads(eval_path.read_text(encoding="utf-8")))
    samples_path = config.run_dir / "ingest" / "samples.jsonl"
    labels = {}
    if samples_path.exists():
        labels = {s.id: config.dataset for s in load_samples(samples_path)}
    error_dist = None
    annotations_path = config.run_dir / "eval" / "annotations.jsonl"
    if annotations_path.exists():
        annotations = [
            ErrorAnnotation(r["sample_id"], r["category"], r["corrected"])
            for r in iter_jsonl(annotations_path)
        ]
        if annotations:
            error_dist = error_distribution(annotations)
    write_report_files(report, outdir, dataset_labels=labels, error_dist=error_dist)
    return out


def stage_annotate(
    config: RunConfig,
    sample_id: str,
    category: str,
    baseline: str = "standard",
    treatment: str = "infore",
) -> Path:
    """Record one categorized baseline error; the corrected flag is computed
    from the eval report, never hand-entered."""
    eval_path = _require_artifact(config.run_dir / "eval" / "report.json", "eval")
    report = RunReport.from_dict(json.loads(eval_path.read_text(encoding="utf-8")))
    f1s = {(s.sample_id, s.strategy): s.f1 for s in report.per_sample}
    if (sample_id, baseline) not in f1s:
        raise ValueError(f"sample {sample_id!r} has no {baseline} result in the report")
    baseline_f1 = f1s[(sample_id, baseline)]
    if baseline_f1 >= 1.0:
        raise ValueError(
            f"sample {sample_id!r} was answered correctly by {baseline}; "
            "only baseline errors can be annotated"
        )
    treatment_f1 = f1s.get((sample_id, treatment), 0.0)
    annotation = ErrorAnnotation(
        sample_id=sample_id, category=category, corrected=treatment_f1 >= 1.0
    )
    out = config.run_dir / "eval" / "annotations.jsonl"
    with open(out, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(annotation.to_dict(), ensure_ascii=False) + "\n")
    return out


def stage_quality(config: RunConfig, tallies_path: str, force: bool = False) -> Path:
    """Turn rank proportions per method into weighted average rank scores."""
    outdir = config.run_dir / "quality"
    out = outdir / "quality.json"
    if out.exists() and not force:
        return out
    tallies = json.loads(Path(tallies_path).read_text(encoding="utf-8"))
    scores = {
        method: quality_rank_score(RankTally(tuple(proportions)))
        for method, proportions in tallies.items()
    }
    outdir.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(scores, indent=2), encoding="utf-8")
    lines = [f"{method}\t{score:.2f}" for method, score in scores.items()]
    (outdir / "quality.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    figures = outdir / "figures"
    figures.mkdir(exist_ok=True)
    quality_figure(scores, figures / "quality.png")
    return out


_STAGE_FUNCS = {
    "ingest": stage_ingest,
    "extract": stage_extract,
    "prune_train": stage_prune_train,
    "prune": stage_prune,
    "reason": stage_reason,
    "eval": stage_eval,
    "report": stage_report,
}


def run_stage(
    config: RunConfig, stage: str, force: bool = False, backend=None, **kwargs
) -> Path:
    """Run one pipeline stage, writing its artifacts under the run directory.

    A stage whose primary artifact already exists is a no-op unless ``force``.
    ``backend`` optionally injects a pre-built gateway backend (tests use a
    scripted mock).
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    with run_lock(config.run_dir):
        _freeze_config(config)
        if stage == "annotate":
            return stage_annotate(config, **kwargs)
        if stage == "quality":
            return stage_quality(config, force=force, **kwargs)
        return _STAGE_FUNCS[stage](config, force=force, backend=backend)


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--run-id", dest="run_id", help="run identifier")
    parser.add_argument("--runs-root", dest="runs_root", help="root directory for runs")
    parser.add_argument("--force", action="store_true", help="re-run even if outputs exist")
    parser.add_argument(
        "--backend", choices=["live", "replay", "mock"], default=None, help="backend mode"
    )
    parser.add_argument("--seed", type=int, default=None, help="random seed")
    parser.add_argument("--fixtures", default=None, help="fixture/replay record file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infore",
        description="Re-organize reasoning context into pruned mind maps and evaluate strategies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    specs = {
        "ingest": "read a benchmark file into unified samples",
        "extract": "extract a mind map per sample",
        "prune-train": "train the pruning policy",
        "prune": "prune extracted mind maps",
        "reason": "run the configured strategies",
        "eval": "score results into a run report",
        "report": "render tables, CSV, and figures",
        "annotate": "record a categorized baseline error",
        "quality": "compute weighted average rank scores",
    }
    parsers = {}
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        _add_common_flags(p)
        parsers[name] = p

    parsers["ingest"].add_argument("--source", default=None, help="benchmark-native file")
    parsers["ingest"].add_argument("--dataset", default=None, help="dataset name")
    parsers["ingest"].add_argument("--split", default=None, choices=["train", "test"])
    parsers["ingest"].add_argument(
        "--expected-count", dest="expected_count", type=int, default=None
    )
    for name in ("extract", "prune-train", "reason"):
        parsers[name].add_argument("--base-url", dest="base_url", default=None)
    parsers["extract"].add_argument(
        "--extraction-model", dest="extraction_model", default=None
    )
    parsers["reason"].add_argument(
        "--reasoning-model", dest="reasoning_model", default=None
    )
    parsers["reason"].add_argument(
        "--strategies", default=None, help="comma-separated strategy names"
    )
    parsers["prune"].add_argument(
        "--pruner", choices=["none", "policy", "similarity"], default=None
    )
    parsers["prune"].add_argument("--checkpoint", default=None)
    parsers["prune"].add_argument("--threshold", type=float, default=None)
    parsers["prune"].add_argument("--drop-ratio", dest="drop_ratio", type=float, default=None)
    parsers["annotate"].add_argument("--sample-id", required=True)
    parsers["annotate"].add_argument("--category", required=True)
    parsers["annotate"].add_argument("--baseline", default="standard")
    parsers["annotate"].add_argument("--treatment", default="infore")
    parsers["quality"].add_argument("--tallies", required=True, help="rank proportions JSON")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    stage = args.command.replace("-", "_")
    try:
        config = resolve_config(args)
        if stage == "annotate":
            path = run_stage(
                config,
                "annotate",
                sample_id=args.sample_id,
                category=args.category,
                baseline=args.baseline,
                treatment=args.treatment,
            )
        elif stage == "quality":
            path = run_stage(config, "quality", force=args.force, tallies_path=args.tallies)
        else:
            path = run_stage(config, stage, force=args.force)
        print(path)
        return 0
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MissingUpstreamError as exc:
        print(f"missing upstream: {exc}", file=sys.stderr)
        return 3
    except (BackendError, MockMissError) as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return 4
    except InfoReError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
