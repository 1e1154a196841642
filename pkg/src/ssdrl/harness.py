"""Experiment orchestration: config files, supervised vs semi-supervised
comparisons across seeds, report/summary CSVs and the command line.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .agent import MODES, SEMI_SUPERVISED, SUPERVISED, TrainConfig, evaluate, train
from .environment import GridWorld, generate_dataset, load_dataset, save_dataset
from .features import FeatureConfig
from .nn_core import child_rng, save_snapshot
from .vae import save_vae

log = logging.getLogger(__name__)

REPORT_HEADER = [
    "mode",
    "seed",
    "checkpoint_epoch",
    "mean_reward",
    "mean_distance_m",
    "start_distance_m",
    "end_distance_m",
]
SUMMARY_HEADER = ["mode", "n_seeds", "checkpoint_epoch", "start_distance_m", "end_distance_m", "difference_m", "mean_reward"]
EPOCH_DEFINITION = "one pass over the training samples"

# stream keys for child_rng
_DATA, _TEST, _TRAIN, _EVAL, _HOLDOUT = 1, 2, 3, 4, 5


class ConfigError(ValueError):
    """A config key is unknown or its value is invalid."""


@dataclass
class ExperimentConfig:
    # world
    rows: int = 8
    cols: int = 8
    cell_size: float = 3.048
    beacons_file: str = ""
    pathloss_n: float = 2.0
    offset_a: float = -60.0
    noise_sigma: float = 2.0
    delta: float = 3.0
    hearing_radius: float = 25.0
    # data: "synthetic" or a dataset CSV path
    dataset: str = "synthetic"
    test_dataset: str = ""
    labeled_per_cell: int = 2
    unlabeled: int = 1000
    test_per_cell: int = 1
    # features
    use_raw: bool = True
    use_s1: bool = False
    use_s2: bool = True
    range_count: int = 12
    ordered_pairs: bool = False
    # training
    horizon: int = 10
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_decay_fraction: float = 0.5
    batch_size: int = 32
    warmup: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    replay_capacity: int = 10000
    hidden: tuple = (64, 32)
    head_hidden: int = 32
    freeze_encoder: bool = True
    latent_dim: int = 8
    vae_hidden: int = 64
    vae_epochs: int = 30
    vae_batch_size: int = 64
    vae_learning_rate: float = 1e-3
    vae_inputs: str = "mean"
    alpha: Optional[float] = None
    # experiment
    modes: tuple = MODES
    seeds: tuple = tuple(range(10))
    checkpoints: tuple = (25, 50, 100, 150, 200)
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.seeds:
            raise ConfigError("seeds: must not be empty")
        if not self.checkpoints:
            raise ConfigError("checkpoints: must not be empty")
        if any(c < 1 for c in self.checkpoints):
            raise ConfigError("checkpoints: epochs must be >= 1")
        if list(self.checkpoints) != sorted(set(self.checkpoints)):
            raise ConfigError("checkpoints: must be strictly ascending")
        if not self.modes or any(m not in MODES for m in self.modes):
            raise ConfigError(f"modes: each must be one of {', '.join(MODES)}")
        if len(set(self.modes)) != len(self.modes):
            raise ConfigError("modes: duplicate entry")
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("rows/cols: must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        for key in ("labeled_per_cell", "unlabeled", "test_per_cell", "horizon"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key}: must be >= 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma: must satisfy 0 <= gamma < 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer: must be adam or sgd")
        if self.vae_inputs not in ("mean", "scans"):
            raise ConfigError("vae_inputs: must be mean or scans")
        if self.dataset != "synthetic" and not self.test_dataset and self.test_per_cell < 1:
            raise ConfigError("test_per_cell: a file dataset without test_dataset needs a held-out bundle per cell")
        try:
            self.feature_config()
        except ValueError as exc:
            raise ConfigError(f"features: {exc}") from None

    @property
    def epochs(self) -> int:
        return max(self.checkpoints)

    def world(self) -> GridWorld:
        beacons = load_beacons(self.beacons_file) if self.beacons_file else ()
        return GridWorld(
            self.rows, self.cols, self.cell_size, beacons, self.pathloss_n,
            self.offset_a, self.noise_sigma, self.delta, self.hearing_radius,
        )

    def feature_config(self, n_beacons: int = 13) -> FeatureConfig:
        return FeatureConfig(self.use_raw, self.use_s1, self.use_s2, self.range_count, n_beacons, self.ordered_pairs)

    def train_config(self, mode: str) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)} - {"mode", "epochs"}
        return TrainConfig(mode=mode, epochs=self.epochs, **{k: getattr(self, k) for k in names})

    def to_text(self) -> str:
        return "".join(f"{f.name} = {format_value(getattr(self, f.name))}\n" for f in fields(self))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
        return cls.from_strings(values)

    @classmethod
    def from_strings(cls, values: dict, base: Optional["ExperimentConfig"] = None) -> "ExperimentConfig":
        kinds = _field_kinds()
        parsed = {}
        for key, raw in values.items():
            if key not in kinds:
                raise ConfigError(f"{key}: unknown config key")
            parsed[key] = parse_value(key, kinds[key], raw)
        if base is None:
            return cls(**parsed)
        return replace(base, **parsed)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"), str(path))


def _field_kinds() -> dict:
    defaults = ExperimentConfig.__dataclass_fields__
    kinds = {}
    for name, f in defaults.items():
        if name == "alpha":
            kinds[name] = "optional_float"
        elif isinstance(f.default, bool):
            kinds[name] = "bool"
        elif isinstance(f.default, tuple):
            kinds[name] = "str_list" if name == "modes" else "int_list"
        else:
            kinds[name] = type(f.default).__name__
    return kinds


def parse_value(key: str, kind: str, raw: str):
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "optional_float":
            return None if raw.lower() in ("", "none", "auto") else float(raw)
        if kind == "int_list":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if kind == "str_list":
            return tuple(v for v in raw.replace(",", " ").split())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def format_value(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_beacons(path):
    """Beacon coordinates from a two-column ``x,y`` CSV (header required)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["x", "y"]:
            raise ConfigError(f"beacons_file: {path}:1: expected header x,y")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                raise ConfigError(f"beacons_file: {path}:{lineno}: bad coordinate row") from None
    if not out:
        raise ConfigError(f"beacons_file: {path} lists no beacons")
    return tuple(out)


def sample_digest(sample) -> str:
    h = hashlib.sha256(np.ascontiguousarray(sample.readings, dtype="<f8").tobytes())
    h.update(repr(sample.label).encode())
    return h.hexdigest()


def split_hash(samples) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(sample_digest(s).encode())
    return h.hexdigest()


def build_splits(config: ExperimentConfig, seed: int, world: GridWorld):
    """Training and test samples for one seed. Raises if they overlap."""
    if config.dataset == "synthetic":
        train_set = generate_dataset(world, config.labeled_per_cell, config.unlabeled, child_rng(seed, _DATA))
        test_set = generate_dataset(world, config.test_per_cell, 0, child_rng(seed, _TEST))
    else:
        samples = load_dataset(config.dataset, world.n_beacons)
        for s in samples:
            if s.label is not None and not world.contains(s.label):
                raise ConfigError(f"dataset: label {s.label} lies outside the {world.rows}x{world.cols} grid")
        if config.test_dataset:
            train_set = samples
            test_set = [s for s in load_dataset(config.test_dataset, world.n_beacons) if s.label is not None]
        else:
            train_set, test_set = hold_out(samples, config.test_per_cell, child_rng(seed, _HOLDOUT))
    overlap = {sample_digest(s) for s in train_set} & {sample_digest(s) for s in test_set}
    if overlap:
        raise ValueError(f"{len(overlap)} test samples also appear in the training data")
    return train_set, test_set


def hold_out(samples, per_cell: int, rng):
    """Move up to ``per_cell`` labeled bundles per cell into a test split,
    always leaving at least one for training."""
    by_cell: dict = {}
    for i, s in enumerate(samples):
        if s.label is not None:
            by_cell.setdefault(s.label, []).append(i)
    held = set()
    for cell in sorted(by_cell):
        idx = by_cell[cell]
        k = min(per_cell, len(idx) - 1)
        if k > 0:
            held.update(int(i) for i in rng.choice(idx, size=k, replace=False))
    train_set = [s for i, s in enumerate(samples) if i not in held]
    test_set = [s for i, s in enumerate(samples) if i in held]
    return train_set, test_set


@dataclass(frozen=True)
class ReportRow:
    mode: str
    seed: int
    checkpoint_epoch: int
    mean_reward: float
    mean_distance_m: float
    start_distance_m: float
    end_distance_m: float

    @property
    def improvement(self) -> float:
        return self.start_distance_m - self.end_distance_m

    def cells(self):
        return [
            self.mode, str(self.seed), str(self.checkpoint_epoch), repr(self.mean_reward),
            repr(self.mean_distance_m), repr(self.start_distance_m), repr(self.end_distance_m),
        ]


@dataclass
class ComparisonReport:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (mode, seed, message)

    def __len__(self):
        return len(self.rows)

    def select(self, mode=None, seed=None, checkpoint=None):
        return [
            r for r in self.rows
            if (mode is None or r.mode == mode)
            and (seed is None or r.seed == seed)
            and (checkpoint is None or r.checkpoint_epoch == checkpoint)
        ]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REPORT_HEADER)
            for r in self.rows:
                writer.writerow(r.cells())

    @classmethod
    def read_csv(cls, path) -> "ComparisonReport":
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != REPORT_HEADER:
                raise ValueError(f"{path}:1: expected header {','.join(REPORT_HEADER)}")
            for lineno, f in enumerate(reader, start=2):
                if not f:
                    continue
                try:
                    rows.append(ReportRow(f[0], int(f[1]), int(f[2]), *(float(v) for v in f[3:7])))
                except (ValueError, TypeError, IndexError) as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None
        return cls(rows)


def checkpoint_row(agent, mode, seed, epoch, test_set) -> ReportRow:
    # the eval stream depends on seed and checkpoint only, so both modes
    # start from the same cells
    stats = evaluate(agent, test_set, child_rng(seed, _EVAL, epoch))
    return ReportRow(
        mode, seed, epoch,
        float(np.mean([s.final_reward for s in stats])),
        float(np.mean([s.mean_distance for s in stats])),
        float(np.mean([s.start_distance for s in stats])),
        float(np.mean([s.final_distance for s in stats])),
    )


def run_cell(config: ExperimentConfig, mode: str, seed: int, out_dir=None):
    """Train one (mode, seed) agent and evaluate it at every checkpoint.

    Returns ``(rows, agent)``. With ``out_dir`` the per-epoch metrics and the
    trained weights are written there.
    """
    world = config.world()
    train_set, test_set = build_splits(config, seed, world)
    if not test_set:
        raise ValueError("test split is empty")
    checkpoints = set(config.checkpoints)
    rows = []

    def on_epoch(epoch, agent):
        if epoch in checkpoints:
            rows.append(checkpoint_row(agent, mode, seed, epoch, test_set))

    metrics_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.csv"
    agent = train(
        train_set, config.train_config(mode), child_rng(seed, _TRAIN),
        world, config.feature_config(world.n_beacons), on_epoch, metrics_path,
    )
    if out_dir is not None:
        save_snapshot(out_dir / "q_head.bdrl", agent.q.head)
        if agent.q.encoder is not None:
            save_snapshot(out_dir / "q_encoder.bdrl", agent.q.encoder)
        if agent.vae is not None:
            save_vae(out_dir / "vae", agent.vae)
    return rows, agent


def _cell_job(args):
    config, mode, seed = args
    try:
        rows, _ = run_cell(config, mode, seed)
        return mode, seed, rows, None
    except Exception as exc:  # one bad cell must not sink the rest
        log.exception("cell mode=%s seed=%d failed", mode, seed)
        return mode, seed, [], f"{type(exc).__name__}: {exc}"


def run_comparison(config: ExperimentConfig, out_dir=None) -> ComparisonReport:
    """Train every (mode, seed) cell and collect checkpoint evaluations.

    With ``out_dir``, writes ``report.csv`` and ``manifest.txt`` there.
    """
    jobs = [(config, mode, seed) for seed in config.seeds for mode in config.modes]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]

    report = ComparisonReport()
    order = {m: i for i, m in enumerate(config.modes)}
    for mode, seed, rows, err in sorted(results, key=lambda t: (order[t[0]], t[1])):
        report.rows.extend(sorted(rows, key=lambda r: r.checkpoint_epoch))
        if err is not None:
            report.failures.append((mode, seed, err))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.write_csv(out_dir / "report.csv")
        write_manifest(out_dir / "manifest.txt", config, report)
    return report


def write_manifest(path, config: ExperimentConfig, report: ComparisonReport) -> None:
    world = config.world()
    lines = [config.to_text()]
    lines.append(f"code_version = {__version__}\n")
    lines.append(f"numpy_version = {np.__version__}\n")
    lines.append(f"epoch_definition = {EPOCH_DEFINITION}\n")
    lines.append(f"n_beacons = {world.n_beacons}\n")
    lines.append("beacons = " + ";".join(f"{x!r},{y!r}" for x, y in world.beacons) + "\n")
    for seed in config.seeds:
        try:
            train_set, test_set = build_splits(config, seed, world)
        except Exception as exc:
            lines.append(f"split_error.{seed} = {exc}\n")
            continue
        lines.append(f"train_hash.{seed} = {split_hash(train_set)}\n")
        lines.append(f"test_hash.{seed} = {split_hash(test_set)}\n")
    for mode, seed, err in report.failures:
        lines.append(f"failed.{mode}.{seed} = {err}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


@dataclass(frozen=True)
class SummaryRow:
    mode: str
    n_seeds: int
    checkpoint_epoch: int
    start_distance_m: float
    end_distance_m: float
    mean_reward: float

    @property
    def difference_m(self) -> float:
        return self.start_distance_m - self.end_distance_m


@dataclass
class Summary:
    rows: list
    reward_ratio: Optional[float]

    def row(self, mode) -> SummaryRow:
        for r in self.rows:
            if r.mode == mode:
                return r
        raise KeyError(mode)

    def table(self) -> str:
        head = f"{'mode':<16} {'seeds':>5} {'epoch':>6} {'start (m)':>10} {'end (m)':>10} {'diff (m)':>10} {'reward':>9}"
        out = [head, "-" * len(head)]
        for r in self.rows:
            out.append(
                f"{r.mode:<16} {r.n_seeds:>5} {r.checkpoint_epoch:>6} {r.start_distance_m:>10.3f} "
                f"{r.end_distance_m:>10.3f} {r.difference_m:>10.3f} {r.mean_reward:>9.3f}"
            )
        ratio = "absent" if self.reward_ratio is None else f"{self.reward_ratio:.3f}"
        out.append(f"reward ratio semi/supervised: {ratio}")
        return "\n".join(out)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SUMMARY_HEADER)
            for r in self.rows:
                writer.writerow([
                    r.mode, r.n_seeds, r.checkpoint_epoch, repr(r.start_distance_m),
                    repr(r.end_distance_m), repr(r.difference_m), repr(r.mean_reward),
                ])
            writer.writerow(["reward_ratio", "", "", "", "", "", "" if self.reward_ratio is None else repr(self.reward_ratio)])


def summarize(report: ComparisonReport, checkpoint: Optional[int] = None) -> Summary:
    """Per-mode means over seeds at ``checkpoint`` (default: each mode's last).

    The reward ratio is semi-supervised over supervised mean reward; it is
    None unless both modes are present and the supervised reward is non-zero.
    """
    if not report.rows:
        raise ValueError("report is empty")
    modes = list(dict.fromkeys(r.mode for r in report.rows))
    rows = []
    for mode in modes:
        mine = report.select(mode=mode)
        epoch = checkpoint if checkpoint is not None else max(r.checkpoint_epoch for r in mine)
        sel = [r for r in mine if r.checkpoint_epoch == epoch]
        if not sel:
            continue
        rows.append(SummaryRow(
            mode, len(sel), epoch,
            float(np.mean([r.start_distance_m for r in sel])),
            float(np.mean([r.end_distance_m for r in sel])),
            float(np.mean([r.mean_reward for r in sel])),
        ))
    by_mode = {r.mode: r for r in rows}
    ratio = None
    if SUPERVISED in by_mode and SEMI_SUPERVISED in by_mode and by_mode[SUPERVISED].mean_reward != 0.0:
        ratio = by_mode[SEMI_SUPERVISED].mean_reward / by_mode[SUPERVISED].mean_reward
    return Summary(rows, ratio)


# command line

def _flag(name):
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="run a single seed (overrides seeds)")
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    overrides = common.add_argument_group("config overrides")
    for name in _field_kinds():
        overrides.add_argument(_flag(name), dest=f"cfg_{name}", metavar="VALUE")

    parser = argparse.ArgumentParser(prog="ssdrl", description="Semi-supervised deep RL for RSSI grid localisation")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset CSV")
    p = sub.add_parser("train", parents=[common], help="train one mode for one seed")
    p.add_argument("--mode", choices=MODES, default=SEMI_SUPERVISED)
    sub.add_parser("compare", parents=[common], help="run the supervised vs semi-supervised comparison")
    p = sub.add_parser("summarize", parents=[common], help="summarise a report CSV")
    p.add_argument("--report", help="report CSV (default: OUT/report.csv)")
    p.add_argument("--checkpoint", type=int, help="checkpoint epoch to summarise (default: last)")
    return parser


def config_from_args(args) -> ExperimentConfig:
    base = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    given = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    config = ExperimentConfig.from_strings(given, base)
    if args.seed is not None:
        config = replace(config, seeds=(args.seed,))
    return config


def _cmd_gen_data(config, args, out: Path):
    world = config.world()
    seed = config.seeds[0]
    train_set = generate_dataset(world, config.labeled_per_cell, config.unlabeled, child_rng(seed, _DATA))
    save_dataset(out / "dataset.csv", train_set)
    print(f"wrote {len(train_set)} bundles to {out / 'dataset.csv'}")
    if config.test_per_cell > 0:
        test_set = generate_dataset(world, config.test_per_cell, 0, child_rng(seed, _TEST))
        save_dataset(out / "test.csv", test_set)
        print(f"wrote {len(test_set)} bundles to {out / 'test.csv'}")
    return 0


def _cmd_train(config, args, out: Path):
    seed = config.seeds[0]
    rows, agent = run_cell(config, args.mode, seed, out)
    report = ComparisonReport(rows)
    report.write_csv(out / "report.csv")
    write_manifest(out / "manifest.txt", replace(config, modes=(args.mode,), seeds=(seed,)), report)
    if rows:
        print(summarize(report).table())
    return 0


def _cmd_compare(config, args, out: Path):
    report = run_comparison(config, out)
    for mode, seed, err in report.failures:
        print(f"cell {mode} seed {seed} failed: {err}", file=sys.stderr)
    if report.rows:
        summary = summarize(report)
        summary.write_csv(out / "summary.csv")
        print(summary.table())
    return 1 if report.failures else 0


def _cmd_summarize(config, args, out: Path):
    path = Path(args.report) if args.report else out / "report.csv"
    if not path.is_file():
        print(f"error: report not found: {path}", file=sys.stderr)
        return 2
    summary = summarize(ComparisonReport.read_csv(path), args.checkpoint)
    summary.write_csv(out / "summary.csv")
    print(summary.table())
    return 0


COMMANDS = {"gen-data": _cmd_gen_data, "train": _cmd_train, "compare": _cmd_compare, "summarize": _cmd_summarize}


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](config, args, out)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())
