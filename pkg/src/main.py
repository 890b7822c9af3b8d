"""
Main entry point - orchestrates data generation, training and evaluation
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Callable

import numpy as np
from dotenv import load_dotenv

from .alignment import TrajectoryPair, aligned_pdr
from .dataset import ScenarioConfig, generate_all, load_dataset, load_scenario
from .errors import ConfigurationError, DatasetError, TrainingDivergedError, WorkbenchError
from .evaluation import (
    ALL_METHODS,
    Baselines,
    Method,
    estimate_ranges,
    evaluate_positioning,
    evaluate_ranging,
    labeled_samples,
    link_statistics,
)
from .ftm_sim import BANDWIDTH_PRESETS
from .plotting import (
    plot_cdf,
    plot_costs,
    plot_epoch_trajectories,
    plot_range_scatter,
    plot_std_scatter,
    plot_test_errors,
    plot_trajectories,
)
from .positioning import trajectory_to_csv
from .publisher import CALIBRATION_FILE, TEST_FILE, LocalPublisher, Publisher, RunManifest
from .ranging_nn import load_model
from .training import (
    DEFAULT_EPOCHS,
    DEFAULT_LEARNING_RATE,
    DEFAULT_SPLIT,
    Optimizer,
    TrainConfig,
    held_out_to_csv,
    history_to_csv,
    train,
)

logger = logging.getLogger(__name__)

SCENARIO_FILE = "scenario.json"
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class FtmWorkbench:
    def __init__(self, publisher_factory: Callable[[Path], Publisher] = LocalPublisher):
        self.publisher_factory = publisher_factory
        load_dotenv()
        self._validate_env()
        self.workers = int(os.getenv("FTM_WORKERS", "1"))
        self.default_bandwidth = os.getenv("FTM_BANDWIDTH", "bw40")

    def _validate_env(self) -> None:
        """Validate optional environment variables."""
        workers = os.getenv("FTM_WORKERS", "1")
        if not workers.isdigit() or int(workers) < 1:
            raise ConfigurationError(f"FTM_WORKERS must be a positive integer, got {workers!r}")
        bandwidth = os.getenv("FTM_BANDWIDTH", "bw40")
        if bandwidth not in BANDWIDTH_PRESETS:
            raise ConfigurationError(f"FTM_BANDWIDTH must be one of {sorted(BANDWIDTH_PRESETS)}, got {bandwidth!r}")

    def generate(self, config: Path | None, out: Path, seed: int, segments: int, bandwidth: str | None = None) -> list[str]:
        """Synthesize training segments, a test walk and a calibration campaign."""
        if segments < 1:
            raise ConfigurationError(f"--segments must be >= 1, got {segments}")
        bandwidth = bandwidth or self.default_bandwidth
        scenario = load_scenario(config, bandwidth)
        publisher = self.publisher_factory(Path(out))
        publisher.write_manifest(RunManifest.for_inputs(
            "generate", [config] if config else [],
            seed=seed, bandwidth=bandwidth, output_dir=str(out), config_path=str(config) if config else None,
        ))

        logger.info(f"Generating {segments} segments at {bandwidth} (seed {seed})...")
        data = generate_all(scenario, seed, segments)
        written = [publisher.publish_text(SCENARIO_FILE, scenario.to_json() + "\n")]
        written += [publisher.publish_dataset(d) for d in data.segments]
        written.append(publisher.publish_dataset(data.test))
        written.append(publisher.publish_calibration(data.calibration))
        logger.info(f"  Wrote {len(written)} files to {out}")
        return written

    def train(self, data: Path, out: Path, epochs: int, learning_rate: float, split: float, seed: int,
              optimizer: str = Optimizer.PLAIN_GD.value, test: Path | None = None) -> Path:
        """Run the sensor-aided learning loop on every segment in data.

        The labeled test walk (test, or data/test.jsonl when present) is only
        scored after each epoch; it never drives an update.
        """
        source = self.publisher_factory(Path(data))
        dataset_files = source.list_datasets()
        if len(dataset_files) < 2:
            raise DatasetError(f"Need at least 2 segment datasets in {data}, found {len(dataset_files)}")
        scenario = self._scenario_for(Path(data) / SCENARIO_FILE)
        config = TrainConfig(learning_rate=learning_rate, epochs=epochs, split=split, seed=seed,
                             optimizer=optimizer, workers=self.workers)

        out = Path(out)
        sink = self.publisher_factory(out.parent)
        if test is None and (Path(data) / TEST_FILE).exists():
            test = Path(data) / TEST_FILE
        walk = load_dataset(test) if test is not None else None

        inputs = [Path(p) for p in dataset_files] + ([Path(test)] if test is not None else [])
        if (Path(data) / SCENARIO_FILE).exists():
            inputs.append(Path(data) / SCENARIO_FILE)
        sink.write_manifest(
            RunManifest.for_inputs("train", inputs, seed=seed, bandwidth=scenario.channel.name, output_dir=str(out.parent)),
            name=f"{out.stem}.manifest.json",
        )

        datasets = source.load_segments()
        try:
            result = train(datasets, config, scenario.site.ap_positions(), center=scenario.site.center, test=walk)
        except TrainingDivergedError as e:
            diag = sink.publish_text(f"{out.stem}.diverged.json", json.dumps(
                {"epoch": e.epoch, "cost": repr(e.cost), "parameters": e.snapshot}, indent=2) + "\n")
            logger.error(f"Training diverged at epoch {e.epoch}; snapshot written to {diag}")
            raise

        sink.publish_model(result.best, out.name)
        sink.publish_text(f"{out.stem}.history.csv", history_to_csv(result.history))
        plot_costs(result.history, sink.path(f"{out.stem}.costs.svg"))
        if walk is not None:
            sink.publish_text(f"{out.stem}.test_errors.csv", held_out_to_csv(result.held_out))
            plot_test_errors(result.held_out, sink.path(f"{out.stem}.test_errors.svg"))
            plot_epoch_trajectories(scenario.site, walk.truth, result.snapshots, sink.path(f"{out.stem}.trajectories.svg"))
            last = result.held_out[-1]
            logger.info(f"  Test walk after training: ranging MAE {last.ranging_mae:.3f} m, "
                        f"positioning MAE {last.positioning_mae:.3f} m")
        logger.info(f"  Best epoch {result.best_epoch}; model written to {out}")
        return out

    def evaluate(self, model: Path, test: Path, aps: Path | None, sensors: bool, report: Path) -> dict[str, float]:
        """Ranging and positioning reports for every method on a labeled walk."""
        module = load_model(model)
        dataset = load_dataset(test)
        scenario = self._scenario_for(aps, required=aps is not None)
        ap_map = scenario.site.ap_positions()
        unknown = dataset.ap_ids() - set(ap_map)
        if unknown:
            raise ConfigurationError(f"Test dataset references APs {sorted(unknown)} missing from {aps}")

        calibration_path = Path(test).parent / CALIBRATION_FILE
        inputs = [Path(model), Path(test)] + ([Path(aps)] if aps else [])
        inputs += [calibration_path] if calibration_path.exists() else []
        tag = "on" if sensors else "off"
        publisher = self.publisher_factory(Path(report))
        publisher.write_manifest(RunManifest.for_inputs(
            "eval", inputs, seed=dataset.metadata.seed, bandwidth=dataset.metadata.bandwidth,
            output_dir=str(report), config_path=str(aps) if aps else None,
        ), name=f"manifest_{tag}.json")

        calibration = self.publisher_factory(Path(test).parent).load_calibration() if calibration_path.exists() else None
        if calibration:
            baselines = Baselines.fit(calibration)
        else:
            logger.warning(f"No {CALIBRATION_FILE} next to {test}; using preset baselines")
            baselines = Baselines.for_bandwidth(dataset.metadata.bandwidth)

        samples = labeled_samples(dataset, ap_map, scenario.site)
        ranging = evaluate_ranging(samples, ALL_METHODS, baselines, module)
        for name, value in link_statistics(dataset, scenario.site).items():
            ranging.add("all", name, value)
        publisher.publish_text("ranging_report.csv", ranging.to_csv())
        publisher.publish_text("ranging_cdf.csv", ranging.cdf_to_csv())
        plot_cdf(ranging, publisher.path("ranging_cdf.svg"))
        measurements = [s.measurement for s in samples]
        d_nn, s_nn = estimate_ranges(Method.NN, measurements, baselines, module)
        d_raw, _ = estimate_ranges(Method.RAW, measurements, baselines)
        d_true = np.array([s.d_true for s in samples])
        plot_range_scatter(d_true, {Method.RAW.value: d_raw, Method.NN.value: d_nn},
                           publisher.path("range_scatter.svg"))
        plot_std_scatter(d_nn, s_nn, [s.los for s in samples], publisher.path("std_scatter.svg"))

        positioning = evaluate_positioning(dataset, ap_map, ALL_METHODS, sensors, baselines, module,
                                           center=scenario.site.center)
        publisher.publish_text(f"positioning_report_{tag}.csv", positioning.to_csv())
        publisher.publish_text(f"positioning_cdf_{tag}.csv", positioning.cdf_to_csv())
        plot_cdf(positioning, publisher.path(f"positioning_cdf_{tag}.svg"))
        for method, points in positioning.trajectories.items():
            publisher.publish_text(f"trajectory_{method}_{tag}.csv", trajectory_to_csv(points))

        nn_track = positioning.trajectories[Method.NN.value]
        pdr_aligned = aligned_pdr(TrajectoryPair(nn_track, dataset.pdr.positions)) if dataset.K >= 2 else None
        plot_trajectories(scenario.site, dataset.truth, positioning.trajectories,
                          publisher.path(f"trajectory_{tag}.svg"), pdr=pdr_aligned)

        summary = {f"ranging_{m.value}_mae": ranging.value(m.value, "mae") for m in ALL_METHODS}
        summary |= {f"positioning_{m.value}_mae": positioning.value(m.value, "mae") for m in ALL_METHODS}
        logger.info(f"  Reports written to {report}")
        return summary

    def _scenario_for(self, path: Path | None, required: bool = False) -> ScenarioConfig:
        if path is not None and Path(path).exists():
            return load_scenario(Path(path))
        if required:
            raise FileNotFoundError(f"Scenario config not found: {path}")
        logger.warning(f"No scenario at {path}; falling back to the default site")
        return load_scenario(None, self.default_bandwidth)


class WorkbenchArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    seed = int(text)
    if seed < 0:
        raise argparse.ArgumentTypeError(f"seed must be a non-negative integer, got {seed}")
    return seed


def build_parser() -> argparse.ArgumentParser:
    parser = WorkbenchArgumentParser(prog="ftmlab", description="Wi-Fi FTM sensor-aided learning workbench")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=WorkbenchArgumentParser)

    gen = sub.add_parser("generate", help="Synthesize datasets from a scenario")
    gen.add_argument("--config", type=Path, help="Scenario JSON (defaults to the built-in site)")
    gen.add_argument("--out", type=Path, required=True, help="Output directory")
    gen.add_argument("--seed", type=_seed, default=0)
    gen.add_argument("--segments", type=int, default=18, help="Number of K=100 training segments")
    gen.add_argument("--bw", choices=sorted(BANDWIDTH_PRESETS), help="Bandwidth preset (default: FTM_BANDWIDTH or bw40)")

    tr = sub.add_parser("train", help="Train the ranging module without ground truth")
    tr.add_argument("--data", type=Path, required=True, help="Directory of segment datasets")
    tr.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    tr.add_argument("--lr", type=float, default=DEFAULT_LEARNING_RATE)
    tr.add_argument("--split", type=float, default=DEFAULT_SPLIT)
    tr.add_argument("--seed", type=_seed, default=0)
    tr.add_argument("--out", type=Path, required=True, help="Model JSON path")
    tr.add_argument("--optimizer", choices=[o.value for o in Optimizer], default=Optimizer.PLAIN_GD.value)
    tr.add_argument("--test", type=Path, help="Labeled test walk scored after every epoch (default: DATA/test.jsonl)")

    ev = sub.add_parser("eval", help="Evaluate a model against the comparison methods")
    ev.add_argument("--model", type=Path, required=True)
    ev.add_argument("--test", type=Path, required=True, help="Labeled test dataset (JSONL)")
    ev.add_argument("--aps", type=Path, help="Scenario JSON with the AP layout")
    ev.add_argument("--sensors", choices=["on", "off"], default="off")
    ev.add_argument("--report", type=Path, required=True, help="Report directory")
    return parser


def _configure_logging() -> None:
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    log_file = os.getenv("FTM_LOG_FILE", "ftm-sensor-aided.log")
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=os.getenv("FTM_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s [%(levelname)s] %(message)s",
        handlers=handlers,
    )


def main(argv: list[str] | None = None) -> int:
    """CLI entry point."""
    args = build_parser().parse_args(argv)
    load_dotenv()
    _configure_logging()

    try:
        workbench = FtmWorkbench()
        if args.command == "generate":
            workbench.generate(args.config, args.out, args.seed, args.segments, args.bw)
        elif args.command == "train":
            workbench.train(args.data, args.out, args.epochs, args.lr, args.split, args.seed, args.optimizer,
                            args.test)
        else:
            workbench.evaluate(args.model, args.test, args.aps, args.sensors == "on", args.report)
    except (WorkbenchError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
