"""Command-line interface.

Subcommands: ingest, backfit, replay, simulate, report, explain, mf.
Every run takes a JSON config file; --seed, --rounds, --policy and --out
override the corresponding config values (flag > file > default). Commands
are re-runnable: the same config and seed produce byte-identical outputs.
On failure the exit code is nonzero, a one-line JSON error goes to stderr,
and partially written outputs are removed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .bandit import TrainingEvent, backfit, load_checkpoint, save_checkpoint
from .baselines import make_policy
from .config import RunConfig
from .data import (
    IngestError,
    catalog_orphan_issues,
    ingest_impressions,
    ingest_mf_scores,
    ingest_offers,
    ingest_transactions,
    write_validation_report,
)
from .errors import ConfigError
from .features import MemberStatsIndex, RunningScaler, build_context, build_seasonality_profile
from .harness import (
    ReplayDataset,
    SyntheticWorld,
    build_manifest,
    config_hash,
    files_fingerprint,
    run_replay,
    run_synthetic,
    write_manifest,
    write_metrics_csv,
    write_roundlog,
    write_summary_json,
)
from .interpret import (
    HttpLLMClient,
    LLMTransportError,
    MockLLMClient,
    TrajectoryStore,
    build_payload,
    explain,
)
from .mf import als_factorize, build_count_matrix, member_offer_scores, reconstruction_error, write_mf_scores


class OutputWriter:
    """Tracks files written by one command; removes them all on failure."""

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        self.paths: list[Path] = []

    def __enter__(self) -> "OutputWriter":
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self

    def register(self, name: str) -> Path:
        path = self.out_dir / name
        self.paths.append(path)
        return path

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is not None:
            for path in self.paths:
                try:
                    path.unlink(missing_ok=True)
                except OSError:
                    pass
        return False


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.run.seed = args.seed
    if getattr(args, "rounds", None) is not None:
        cfg.run.rounds = args.rounds
    if getattr(args, "policy", None) is not None:
        cfg.policy = args.policy
    if getattr(args, "out", None) is not None:
        cfg.run.out_dir = args.out
    cfg.validate()
    return cfg


def _require(value: str | None, key: str) -> str:
    if not value:
        raise ConfigError(f"missing config key: {key}")
    return value


def _load_dataset(cfg: RunConfig) -> tuple[ReplayDataset, dict[str, list[tuple[int, str]]]]:
    issues: dict[str, list[tuple[int, str]]] = {}
    tx = ingest_transactions(_require(cfg.data.transactions, "data.transactions"))
    issues["transactions"] = tx.issues
    offers = ingest_offers(_require(cfg.data.offers, "data.offers"))
    issues["offers"] = offers.issues
    imps = ingest_impressions(_require(cfg.data.impressions, "data.impressions"))
    issues["impressions"] = imps.issues
    if cfg.data.mf_scores:
        table, mf_issues = ingest_mf_scores(cfg.data.mf_scores, cfg.data.mf_default_score)
        issues["mf_scores"] = mf_issues
    else:
        from .data import MFScoreTable

        table = MFScoreTable(default_score=cfg.data.mf_default_score)
    issues["impression_orphans"] = catalog_orphan_issues(imps.records, offers.records)
    return ReplayDataset(tx.records, offers.records, imps.records, table), issues


def _data_paths(cfg: RunConfig) -> list[str]:
    return [p for p in (cfg.data.transactions, cfg.data.offers, cfg.data.impressions, cfg.data.mf_scores) if p]


def _skip_tallies(issues: dict[str, list[tuple[int, str]]]) -> dict[str, int]:
    return {f"ingest_{name}": len(items) for name, items in sorted(issues.items())}


def _build_policy(cfg: RunConfig, store=None):
    return make_policy(
        cfg.policy,
        cfg.learner_config(),
        cfg.exploration_config(),
        store=store,
        alpha_explore=cfg.linucb.alpha_explore,
        linucb_l2=cfg.linucb.l2_lambda,
        ts_v=cfg.ts.v,
        ts_l2=cfg.ts.l2_lambda,
        epsilon=cfg.egreedy.epsilon,
        epsilon_decay=cfg.egreedy.decay,
    )


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    dataset, issues = _load_dataset(cfg)
    with OutputWriter(cfg.run.out_dir) as out:
        for name, items in sorted(issues.items()):
            write_validation_report(out.register(f"validation_{name}.jsonl"), items)
        manifest = build_manifest(
            cfg.run.seed,
            cfg.to_dict(),
            files_fingerprint(_data_paths(cfg)),
            _skip_tallies(issues),
            command="ingest",
            counts={
                "transactions": len(dataset.transactions),
                "offers": len(dataset.offers),
                "impressions": len(dataset.impressions),
                "mf_scores": len(dataset.mf_table),
            },
        )
        write_manifest(out.register("manifest.json"), manifest)
    print(f"ingested {len(dataset.transactions)} transactions, {len(dataset.offers)} offers, "
          f"{len(dataset.impressions)} impressions -> {cfg.run.out_dir}")
    return 0


def _backfit_events(cfg: RunConfig, dataset: ReplayDataset) -> tuple[list[TrainingEvent], dict[str, int]]:
    """Training events from logged impressions: one per shown offer per
    category, in impression order, contexts normalized by a fresh scaler."""
    stats = MemberStatsIndex(dataset.transactions, cfg.features.default_cycle_days)
    profile = build_seasonality_profile(dataset.transactions, cfg.features.smoothing_window)
    catalog = dataset.catalog()
    scaler = RunningScaler()
    events: list[TrainingEvent] = []
    skipped = 0
    for idx, imp in enumerate(dataset.impressions):
        day = imp.timestamp.date()
        raw: list[tuple[str, str, np.ndarray, int]] = []
        for oid in imp.offers_shown:
            offer = catalog.get(oid)
            if offer is None or not offer.active_on(day):
                skipped += 1
                continue
            y = 1 if oid in imp.clipped else 0
            for c in sorted(offer.category_ids):
                x = build_context(
                    imp.member_id, offer, c, day, stats.stats(imp.member_id, c, day),
                    profile, dataset.mf_table, cfg.features.cold_start_mpg,
                ).values
                raw.append((imp.member_id, c, x, y))
        for _, _, x, _ in raw:
            scaler.update(x)
        for member, c, x, y in raw:
            events.append(TrainingEvent(t=idx, member_id=member, category_id=c, x=scaler.transform(x), y=y))
    return events, {"shown_offers_not_featurized": skipped}


def cmd_backfit(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    dataset, issues = _load_dataset(cfg)
    events, event_skips = _backfit_events(cfg, dataset)
    from .bandit import ModelStore

    learner = cfg.learner_config()
    store = ModelStore.from_config(learner)
    report = backfit(store, events, learner)
    with OutputWriter(cfg.run.out_dir) as out:
        save_checkpoint(out.register("checkpoint.jsonl"), store, learner)
        report_payload = {
            "n_events": report.n_events,
            "n_updates": report.n_updates,
            "holdout_size": report.holdout_size,
            "holdout_log_loss": report.holdout_log_loss,
            "prior_log_loss": report.prior_log_loss,
            "empty": report.empty,
        }
        Path(out.register("backfit_report.json")).write_text(
            json.dumps(report_payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        tallies = _skip_tallies(issues) | event_skips
        manifest = build_manifest(
            cfg.run.seed, cfg.to_dict(), files_fingerprint(_data_paths(cfg)), tallies,
            command="backfit", n_models=len(store),
        )
        write_manifest(out.register("manifest.json"), manifest)
    print(f"backfit {report.n_events} events into {len(store)} models -> {cfg.run.out_dir}")
    if report.empty:
        print("warning: no training events; store equals priors", file=sys.stderr)
    return 0


def _write_run_outputs(out: OutputWriter, result, cfg: RunConfig, fingerprint: str, command: str, extra_tallies=None) -> None:
    write_roundlog(out.register("rounds.jsonl"), result.records)
    write_metrics_csv(out.register("metrics.csv"), result.records)
    write_summary_json(out.register("summary.json"), result.summary)
    result.trajectories.save(out.register("trajectory.jsonl"))
    tallies = dict(result.skip_tallies)
    if extra_tallies:
        tallies.update(extra_tallies)
    manifest = build_manifest(
        cfg.run.seed, cfg.to_dict(), fingerprint, tallies,
        command=command, policy=cfg.policy, rounds=result.summary.rounds,
    )
    write_manifest(out.register("manifest.json"), manifest)


def cmd_replay(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    dataset, issues = _load_dataset(cfg)
    store = None
    if cfg.run.backfit_checkpoint:
        store, _ = load_checkpoint(cfg.run.backfit_checkpoint)
    policy = _build_policy(cfg, store=store)
    result = run_replay(
        dataset,
        policy,
        cfg.run.seed,
        cold_start_mpg=cfg.features.cold_start_mpg,
        default_cycle_days=cfg.features.default_cycle_days,
        smoothing_window=cfg.features.smoothing_window,
        thin_every=cfg.run.snapshot_every,
    )
    with OutputWriter(cfg.run.out_dir) as out:
        _write_run_outputs(
            out, result, cfg, files_fingerprint(_data_paths(cfg)), "replay", _skip_tallies(issues)
        )
    s = result.summary
    print(f"replayed {s.rounds} rounds ({s.matched_rounds} matched), "
          f"cumulative reward {s.cumulative_reward} -> {cfg.run.out_dir}")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    world = SyntheticWorld(cfg.world_config())
    policy = _build_policy(cfg)
    result = run_synthetic(world, policy, cfg.run.rounds, cfg.run.seed, thin_every=cfg.run.snapshot_every)
    fingerprint = "synthetic:" + config_hash(cfg.to_dict()["synthetic"])
    with OutputWriter(cfg.run.out_dir) as out:
        _write_run_outputs(out, result, cfg, fingerprint, "simulate")
    s = result.summary
    print(f"simulated {s.rounds} rounds: reward {s.cumulative_reward}, "
          f"regret {s.regret:.2f}, optimal rate {s.optimal_action_rate:.3f} -> {cfg.run.out_dir}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    run_dirs = [Path(d) for d in args.run_dirs]
    series = []
    summaries = []
    for d in run_dirs:
        metrics = d / "metrics.csv"
        summary = d / "summary.json"
        if not metrics.is_file() or not summary.is_file():
            raise ConfigError(f"run directory {d} is missing metrics.csv or summary.json")
        with metrics.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        series.append(rows)
        summaries.append(json.loads(summary.read_text(encoding="utf-8")))
    n_rounds = min(len(rows) for rows in series)
    columns = ["cum_reward", "avg_reward", "regret", "optimal_rate"]
    with OutputWriter(args.out) as out:
        with Path(out.register("merged.csv")).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round"] + [f"mean_{c}" for c in columns])
            for i in range(n_rounds):
                row: list[object] = [i + 1]
                for c in columns:
                    values = [float(rows[i][c]) for rows in series if rows[i][c] != ""]
                    row.append(sum(values) / len(values) if values else "")
                writer.writerow(row)
        merged = {
            "runs": [str(d) for d in run_dirs],
            "rounds_compared": n_rounds,
            "mean_cumulative_reward": float(np.mean([s["cumulative_reward"] for s in summaries])),
            "mean_regret": (
                float(np.mean([s["regret"] for s in summaries]))
                if all(s.get("regret") is not None for s in summaries)
                else None
            ),
            "mean_optimal_action_rate": (
                float(np.mean([s["optimal_action_rate"] for s in summaries]))
                if all(s.get("optimal_action_rate") is not None for s in summaries)
                else None
            ),
            "per_run": summaries,
        }
        Path(out.register("merged.json")).write_text(
            json.dumps(merged, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    print(f"merged {len(run_dirs)} runs over {n_rounds} rounds -> {args.out}")
    return 0


def cmd_explain(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    trajectory_path = args.trajectory or str(Path(cfg.run.out_dir) / "trajectory.jsonl")
    if not Path(trajectory_path).is_file():
        raise ConfigError(f"missing trajectory file: {trajectory_path}")
    store = TrajectoryStore.load(trajectory_path)
    payload = build_payload(
        store, args.member, as_of=args.as_of, detection=cfg.detection_config()
    )
    client = MockLLMClient() if args.mock else HttpLLMClient()
    print(explain(payload, client))
    return 0


def cmd_mf(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    tx = ingest_transactions(_require(cfg.data.transactions, "data.transactions"))
    offers = ingest_offers(_require(cfg.data.offers, "data.offers"))
    matrix, members, categories = build_count_matrix(tx.records)
    U, V = als_factorize(matrix, cfg.als_config())
    scores = member_offer_scores(U, V, members, categories, offers.records)
    with OutputWriter(cfg.run.out_dir) as out:
        write_mf_scores(out.register("mf_scores.csv"), scores)
        manifest = build_manifest(
            cfg.run.seed, cfg.to_dict(),
            files_fingerprint([cfg.data.transactions, cfg.data.offers]),
            {"ingest_transactions": len(tx.issues), "ingest_offers": len(offers.issues)},
            command="mf",
            matrix_shape=list(matrix.shape),
            reconstruction_error=reconstruction_error(matrix, U, V),
        )
        write_manifest(out.register("manifest.json"), manifest)
    print(f"factorized {matrix.shape[0]}x{matrix.shape[1]} counts at rank {cfg.mf.rank}; "
          f"{len(scores)} scores -> {cfg.run.out_dir}")
    return 0


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="JSON config file")
    sp.add_argument("--seed", type=int, help="override run.seed")
    sp.add_argument("--rounds", type=int, help="override run.rounds")
    sp.add_argument("--policy", help="override policy (camb|linucb|ts|egreedy|random)")
    sp.add_argument("--out", help="override run.out_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="offerbandit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, extra in (
        ("ingest", cmd_ingest, "validate input files and write skip reports"),
        ("backfit", cmd_backfit, "train per-category models from logged impressions"),
        ("replay", cmd_replay, "evaluate a policy against logged impressions"),
        ("simulate", cmd_simulate, "evaluate a policy in the synthetic world"),
        ("mf", cmd_mf, "factorize purchase counts into member/offer affinity scores"),
    ):
        sp = sub.add_parser(name, help=extra)
        _add_common(sp)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("report", help="average metrics across run directories")
    sp.add_argument("run_dirs", nargs="+", help="run output directories")
    sp.add_argument("--out", required=True, help="merged output directory")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("explain", help="render a member persona from weight trajectories")
    _add_common(sp)
    sp.add_argument("--member", required=True, help="member id to explain")
    sp.add_argument("--mock", action="store_true", help="use the offline rule-based client")
    sp.add_argument("--trajectory", help="trajectory file (default: <out_dir>/trajectory.jsonl)")
    sp.add_argument("--as-of", type=int, dest="as_of", help="only use snapshots up to this t")
    sp.set_defaults(func=cmd_explain)
    return parser


def _fail(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _fail("config", str(exc))
        return 2
    except IngestError as exc:
        _fail("ingest", str(exc))
        return 3
    except LLMTransportError as exc:
        _fail("llm-transport", str(exc))
        return 4
    except (OSError, ValueError, np.linalg.LinAlgError) as exc:
        _fail("runtime", str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
