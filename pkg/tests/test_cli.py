from __future__ import annotations

import json
from pathlib import Path

import pytest

from infore.cli import (
    MissingUpstreamError,
    RunConfig,
    main,
    run_stage,
)
from infore.core import GenParams, parse_outline, flatten, MindMap
from infore.datasets import load_samples
from infore.evaluation import RunReport
from infore.gateway import CompletionRequest, MockBackend, request_digest
from infore.reasoning import build_reasoning_prompt
from infore.core import Strategy, StrategyName

HOPS = [2, 2, 2, 2, 3, 3, 3, 4, 4, 4]

# correctness plan per strategy: which sample indices answer correctly;
# sample 9 under infore returns untagged prose (format failure)
PLAN = {
    "standard": set(range(6)),       # mean 0.6
    "cot": set(range(7)),            # mean 0.7
    "infore": set(range(8)),         # mean 0.8 with one format failure
    "infore_cot": set(range(9)),     # mean 0.9
}
FORMAT_FAILURE = ("infore", 9)


def label_of(i: int) -> str:
    return "SUPPORTED" if i % 2 == 0 else "REFUTED"


def flipped(label: str) -> str:
    return "REFUTED" if label == "SUPPORTED" else "SUPPORTED"


def claim_of(i: int) -> str:
    return f"Claim {i} states that person number {i} resides in metropolis {i}."


def outline_of(i: int) -> str:
    return (
        f"Topic {i}:\n"
        f"  Dweller: citizen-{i}\n"
        f"  District: ward-{i}\n"
        f"  Noise A: trivia-{i}\n"
        f"  Noise B: extra-{i}"
    )


def hover_source_record(i: int) -> dict:
    # body wording is kept disjoint from claims, outlines, and the prompt
    # templates so the leakage check cannot trip on legitimate shared text
    return {
        "uid": f"hv{i}",
        "claim": claim_of(i),
        "label": label_of(i),
        "num_hops": HOPS[i],
        "context": [
            {
                "title": f"Archive {i}",
                "text": (
                    f"Urban registry files, volume {i}: long-term dwellers are "
                    f"catalogued by housing bureau clerks under folio {i}."
                ),
            },
            {
                "title": f"Registry {i}",
                "text": (
                    f"Bureau almanac {i} lists notable occupants; their dossiers "
                    f"were archived beside folio {i} for safekeeping."
                ),
            },
        ],
    }


def scripted_handler(request: CompletionRequest) -> str:
    """Answer extraction and reasoning prompts according to the plan."""
    prompt = request.prompt
    index = next(i for i in range(10) if f"Claim {i} states" in prompt)
    if "summarize the evidence as a mind map" in prompt:
        return json.dumps({"mind_map": outline_of(index)})
    cot = "Let's think step by step." in prompt
    uses_mindmap = "Title: " not in prompt
    strategy = {
        (False, False): "standard",
        (True, False): "cot",
        (False, True): "infore",
        (True, True): "infore_cot",
    }[(cot, uses_mindmap)]
    if (strategy, index) == FORMAT_FAILURE:
        return "The records clearly support this claim, as discussed above."
    answer = label_of(index) if index in PLAN[strategy] else flipped(label_of(index))
    return f"<answer>{answer}</answer>"


@pytest.fixture
def e2e_config(tmp_path) -> RunConfig:
    source = tmp_path / "hover_fixture.jsonl"
    source.write_text(
        "\n".join(json.dumps(hover_source_record(i)) for i in range(10)) + "\n",
        encoding="utf-8",
    )
    return RunConfig(
        run_id="e2e",
        runs_root=str(tmp_path / "runs"),
        dataset="HOVER",
        split="test",
        source=str(source),
        pruner="similarity",
        drop_ratio=0.3,
        backend="mock",
        workers=2,
    )


def run_pipeline(config: RunConfig) -> Path:
    backend = MockBackend(handler=scripted_handler)
    for stage in ("ingest", "extract", "prune", "reason", "eval", "report"):
        run_stage(config, stage, backend=backend)
    return config.run_dir


class TestEndToEnd:
    def test_strategy_means_match_plan(self, e2e_config):
        run_dir = run_pipeline(e2e_config)
        report = RunReport.from_dict(
            json.loads((run_dir / "eval" / "report.json").read_text())
        )
        assert report.by_strategy["standard"] == pytest.approx(0.6)
        assert report.by_strategy["cot"] == pytest.approx(0.7)
        assert report.by_strategy["infore"] == pytest.approx(0.8)
        assert report.by_strategy["infore_cot"] == pytest.approx(0.9)
        assert report.by_dataset["HOVER"] == pytest.approx(0.75)
        assert report.format_failures == 1
        assert report.skipped_samples == 0

    def test_per_hop_means(self, e2e_config):
        run_dir = run_pipeline(e2e_config)
        report = RunReport.from_dict(
            json.loads((run_dir / "eval" / "report.json").read_text())
        )
        assert report.by_hops["standard"][2] == pytest.approx(1.0)
        assert report.by_hops["standard"][3] == pytest.approx(2 / 3)
        assert report.by_hops["standard"][4] == pytest.approx(0.0)
        assert report.by_hops["infore"][4] == pytest.approx(1 / 3)

    def test_no_original_document_leakage_in_infore_prompts(self, e2e_config):
        run_dir = run_pipeline(e2e_config)
        samples = {s.id: s for s in load_samples(run_dir / "ingest" / "samples.jsonl")}
        rows = [
            json.loads(line)
            for line in (run_dir / "reason" / "results.jsonl").read_text().splitlines()
        ]
        pruned = {
            json.loads(line)["sample_id"]: json.loads(line)["mind_map"]
            for line in (run_dir / "prune" / "pruned.jsonl").read_text().splitlines()
        }
        checked = 0
        for row in rows:
            if row["strategy"] not in ("infore", "infore_cot"):
                continue
            tree = MindMap(parse_outline(pruned[row["sample_id"]]))
            window = max(len(p.value) for p in flatten(tree)) + 1
            for doc in samples[row["sample_id"]].context:
                assert len(doc.body) > window
                for start in range(len(doc.body) - window + 1):
                    assert doc.body[start : start + window] not in row["prompt"]
            checked += 1
        assert checked == 20

    def test_similarity_pruner_dropped_relations(self, e2e_config):
        run_dir = run_pipeline(e2e_config)
        rows = [
            json.loads(line)
            for line in (run_dir / "prune" / "pruned.jsonl").read_text().splitlines()
        ]
        # 4 relations, drop floor(0.3 * 4) = 1, keep 3
        assert all(len(r["kept"]) == 3 for r in rows)

    def test_report_artifacts_written(self, e2e_config):
        run_dir = run_pipeline(e2e_config)
        report_dir = run_dir / "report"
        assert (report_dir / "report.json").exists()
        assert (report_dir / "report.txt").exists()
        assert (report_dir / "per_sample.csv").exists()
        assert (report_dir / "figures" / "strategy_f1.png").stat().st_size > 0
        assert (report_dir / "figures" / "hops_f1.png").stat().st_size > 0
        table = (report_dir / "report.txt").read_text()
        assert "InfoRE" in table and "HOVER" in table
        csv_lines = (report_dir / "per_sample.csv").read_text().splitlines()
        assert len(csv_lines) == 1 + 40

    def test_frozen_config_and_determinism(self, e2e_config, tmp_path):
        first_dir = run_pipeline(e2e_config)
        frozen = json.loads((first_dir / "config.json").read_text())
        assert frozen["run_id"] == "e2e"

        # a second run from the same resolved config reproduces the bytes
        second = RunConfig.from_dict({**frozen, "run_id": "e2e-again"})
        second_dir = run_pipeline(second)
        for artifact in ("reason/results.jsonl", "eval/report.json"):
            assert (first_dir / artifact).read_bytes() == (second_dir / artifact).read_bytes()

    def test_rerun_is_noop_without_force(self, e2e_config):
        backend = MockBackend(handler=scripted_handler)
        path = run_stage(e2e_config, "ingest", backend=backend)
        before = path.stat().st_mtime_ns
        assert run_stage(e2e_config, "ingest", backend=backend) == path
        assert path.stat().st_mtime_ns == before
        run_stage(e2e_config, "ingest", force=True, backend=backend)
        assert path.read_text()  # rewritten, still valid

    def test_reason_before_extract_raises_missing_upstream(self, e2e_config):
        backend = MockBackend(handler=scripted_handler)
        run_stage(e2e_config, "ingest", backend=backend)
        with pytest.raises(MissingUpstreamError):
            run_stage(e2e_config, "reason", backend=backend)

    def test_policy_pruner_stage(self, e2e_config):
        backend = MockBackend(handler=scripted_handler)
        config = RunConfig.from_dict(
            {
                **e2e_config.to_dict(),
                "run_id": "policy-run",
                "pruner": "policy",
                "episodes": 5,
                "epochs": 1,
                "batch_size": 2,
                "learning_rate": 0.03,
            }
        )
        run_stage(config, "ingest", backend=backend)
        run_stage(config, "extract", backend=backend)
        checkpoint = run_stage(config, "prune_train", backend=backend)
        assert checkpoint.exists()
        assert (checkpoint.parent / "history.csv").exists()
        assert (checkpoint.parent / "figures" / "training_reward.png").exists()
        pruned_path = run_stage(config, "prune", backend=backend)
        rows = [json.loads(l) for l in pruned_path.read_text().splitlines()]
        assert len(rows) == 10
        assert all(len(r["kept"]) >= 1 for r in rows)


class TestAnnotateAndQuality:
    def test_annotate_computes_corrected(self, e2e_config):
        run_pipeline(e2e_config)
        # sample 6: standard wrong, infore right -> corrected
        out = run_stage(e2e_config, "annotate", sample_id="hv6", category="CM")
        # sample 8: standard wrong, infore wrong -> not corrected
        run_stage(e2e_config, "annotate", sample_id="hv8", category="FE")
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert rows[0] == {"sample_id": "hv6", "category": "CM", "corrected": True}
        assert rows[1] == {"sample_id": "hv8", "category": "FE", "corrected": False}

    def test_annotate_rejects_correct_baseline(self, e2e_config):
        run_pipeline(e2e_config)
        with pytest.raises(ValueError):
            run_stage(e2e_config, "annotate", sample_id="hv0", category="CM")

    def test_report_includes_error_figure_after_annotation(self, e2e_config):
        run_pipeline(e2e_config)
        run_stage(e2e_config, "annotate", sample_id="hv6", category="CM")
        run_stage(e2e_config, "report", force=True)
        assert (e2e_config.run_dir / "report" / "figures" / "error_distribution.png").exists()

    def test_quality_scores(self, e2e_config, tmp_path):
        backend = MockBackend(handler=scripted_handler)
        run_stage(e2e_config, "ingest", backend=backend)
        tallies = tmp_path / "tallies.json"
        tallies.write_text(
            json.dumps(
                {
                    "Original": [0.22, 0.36, 0.42],
                    "Model A": [0.32, 0.36, 0.32],
                    "Model B": [0.46, 0.28, 0.26],
                }
            )
        )
        out = run_stage(e2e_config, "quality", tallies_path=str(tallies))
        scores = json.loads(out.read_text())
        assert scores["Original"] == pytest.approx(1.80)
        assert scores["Model A"] == pytest.approx(2.00)
        assert scores["Model B"] == pytest.approx(2.20)
        assert (out.parent / "quality.txt").exists()
        assert (out.parent / "figures" / "quality.png").exists()


class TestMainArgv:
    def _write_source(self, tmp_path, n=2) -> Path:
        source = tmp_path / "src.jsonl"
        source.write_text(
            "\n".join(json.dumps(hover_source_record(i)) for i in range(n)) + "\n"
        )
        return source

    def _fixture_for_standard(self, tmp_path, samples) -> Path:
        rows = []
        for sample in samples:
            prompt = build_reasoning_prompt(Strategy(StrategyName.STANDARD), sample)
            digest = request_digest(CompletionRequest("mock-model", prompt, GenParams()))
            rows.append(
                {
                    "request_digest": digest,
                    "response": f"<answer>{sample.gold_answers[0]}</answer>",
                    "backend": "mock",
                    "timestamp": "",
                }
            )
        path = tmp_path / "fixture.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        return path

    def test_full_cli_flow(self, tmp_path, capsys):
        source = self._write_source(tmp_path)
        root = str(tmp_path / "runs")
        base = ["--run-id", "r1", "--runs-root", root]
        assert main(["ingest", *base, "--source", str(source), "--dataset", "HOVER"]) == 0
        samples = load_samples(Path(root) / "r1" / "ingest" / "samples.jsonl")
        fixture = self._fixture_for_standard(tmp_path, samples)
        assert (
            main(
                [
                    "reason",
                    *base,
                    "--backend",
                    "mock",
                    "--fixtures",
                    str(fixture),
                    "--strategies",
                    "standard",
                ]
            )
            == 0
        )
        assert main(["eval", *base]) == 0
        assert main(["report", *base]) == 0
        report = RunReport.from_dict(
            json.loads((Path(root) / "r1" / "eval" / "report.json").read_text())
        )
        assert report.by_strategy["standard"] == pytest.approx(1.0)

    def test_exit_code_2_on_config_error(self, tmp_path):
        code = main(
            [
                "ingest",
                "--run-id",
                "r2",
                "--runs-root",
                str(tmp_path / "runs"),
                "--source",
                "x.jsonl",
                "--dataset",
                "NotADataset",
            ]
        )
        assert code == 2

    def test_exit_code_2_without_run_id(self, tmp_path):
        assert main(["eval", "--runs-root", str(tmp_path / "runs")]) == 2

    def test_exit_code_3_on_missing_upstream(self, tmp_path):
        assert main(["eval", "--run-id", "fresh", "--runs-root", str(tmp_path / "runs")]) == 3

    def test_exit_code_4_on_backend_miss(self, tmp_path):
        source = self._write_source(tmp_path)
        root = str(tmp_path / "runs")
        base = ["--run-id", "r4", "--runs-root", root]
        assert main(["ingest", *base, "--source", str(source), "--dataset", "HOVER"]) == 0
        code = main(
            ["reason", *base, "--backend", "mock", "--strategies", "standard"]
        )
        assert code == 4

    def test_lock_released_after_stage(self, tmp_path):
        source = self._write_source(tmp_path)
        root = tmp_path / "runs"
        base = ["--run-id", "r5", "--runs-root", str(root)]
        assert main(["ingest", *base, "--source", str(source), "--dataset", "HOVER"]) == 0
        assert not (root / "r5" / ".lock").exists()
