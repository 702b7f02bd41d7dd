"""Experiment configuration, the round loop, sweeps, and metrics files.

Config files are JSON mirroring the ExperimentConfig dataclass tree.  Unknown
keys are rejected rather than ignored: a typo in a defense parameter must not
silently run a different experiment.

Outputs per run: metrics.csv (one row per round, fixed header), verdicts.csv
when detectors are configured, and FLSIM1 checkpoints of the global weights.
Reruns with the same config and seed produce byte-identical CSVs.
"""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import types
import typing
from dataclasses import dataclass, field, replace as dc_replace
from pathlib import Path

import numpy as np

from . import nn
from .attack import AttackConfig, Attacker, BenignHyperparams
from .data import (
    BackdoorSpec,
    Dataset,
    PIXEL_PATTERN,
    SEMANTIC,
    SyntheticTaskSpec,
    dirichlet_partition,
    gen_blobs,
    make_pixel_backdoor,
    make_semantic_backdoor,
    semantic_mask,
)
from .errors import ConfigError
from .params import ParameterVector, load_params, save_params
from .rounds import (
    STREAM_BACKDOOR,
    STREAM_INIT,
    STREAM_PARTITION,
    STREAM_ROLES,
    STREAM_SWEEP,
    DetectorConfig,
    EvalSuite,
    MetricsRecord,
    RoundConfig,
    RoundState,
    run_round,
    substream,
)

SINGLE_SHOT = "single_shot"
EVERY_OPPORTUNITY = "every_opportunity"
FIXED_ROUNDS = "fixed_rounds"


@dataclass
class ModelConfig:
    kind: str = nn.LINEAR_SOFTMAX
    hidden_dim: int = 16

    def __post_init__(self):
        if self.kind not in (nn.LINEAR_SOFTMAX, nn.MLP1):
            raise ConfigError(f"unknown model kind {self.kind!r}")


@dataclass
class ScheduleConfig:
    """When attack submissions happen.

    single_shot: exactly one attack at `round`, with a controlled participant
    forced into that round's selection.  fixed_rounds: the same at each listed
    round.  every_opportunity: whenever selection naturally includes a
    controlled participant.
    """

    kind: str = EVERY_OPPORTUNITY
    round: int = 0
    rounds: tuple = ()

    def __post_init__(self):
        if self.kind not in (SINGLE_SHOT, EVERY_OPPORTUNITY, FIXED_ROUNDS):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        self.rounds = tuple(int(r) for r in self.rounds)


@dataclass
class ExperimentConfig:
    task: SyntheticTaskSpec = field(default_factory=SyntheticTaskSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    round: RoundConfig = field(default_factory=RoundConfig)
    alpha: float = 0.9                 # Dirichlet skew of the partition
    test_count: int = 2000
    backdoors: tuple = ()              # BackdoorSpec entries
    pixel_train_count: int = 50
    attack: AttackConfig | None = None
    attacker_ids: tuple = ()
    attacker_fraction: float = 0.0     # used when attacker_ids is empty
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    total_rounds: int = 100
    master_seed: int = 0
    output_dir: str = "out"
    checkpoint_every: int = 0          # 0 disables periodic checkpoints
    detectors: tuple = ()              # DetectorConfig entries
    exclude_flagged: bool = False

    def __post_init__(self):
        if self.total_rounds < 0 or self.test_count < 1:
            raise ConfigError("bad total_rounds or test_count")
        if not 0.0 <= self.attacker_fraction <= 1.0:
            raise ConfigError("attacker_fraction must be in [0, 1]")
        self.attacker_ids = tuple(int(i) for i in self.attacker_ids)
        self.backdoors = tuple(self.backdoors)
        self.detectors = tuple(self.detectors)
        if self.attack is not None and not self.backdoors:
            raise ConfigError("an attack needs at least one backdoor spec")
        if self.schedule.kind == SINGLE_SHOT and self.schedule.round >= self.total_rounds:
            raise ConfigError("single_shot round is past the end of the run")


# ---------------------------------------------------------------------------
# strict JSON codec


def _decode_value(tp, value, path):
    origin = typing.get_origin(tp)
    # both typing.Optional[X] and the X | None spelling
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            if len(args) != len(typing.get_args(tp)):
                return None
            raise ConfigError(f"{path}: null not allowed")
        return _decode_value(args[0], value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    if tp is dict:
        # only used for pixel patterns: coordinate -> offset
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        try:
            return {int(k): float(v) for k, v in value.items()}
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: expected integer keys and numeric values")
    if tp is tuple or origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        args = typing.get_args(tp)
        if args and args[-1] is Ellipsis:
            inner = args[0]
            return tuple(_decode_value(inner, v, f"{path}[{i}]")
                         for i, v in enumerate(value))
        return tuple(value)
    if dataclasses.is_dataclass(tp):
        return _decode_dataclass(tp, value, path)
    raise ConfigError(f"{path}: unsupported config type {tp!r}")


_TUPLE_FIELD_TYPES = {
    (ExperimentConfig, "backdoors"): BackdoorSpec,
    (ExperimentConfig, "detectors"): DetectorConfig,
}


def _decode_dataclass(cls, obj, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object for {cls.__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    kwargs = {}
    for name, value in obj.items():
        element = _TUPLE_FIELD_TYPES.get((cls, name))
        if element is not None:
            if not isinstance(value, list):
                raise ConfigError(f"{path}.{name}: expected a list")
            kwargs[name] = tuple(
                _decode_dataclass(element, v, f"{path}.{name}[{i}]")
                for i, v in enumerate(value)
            )
        else:
            kwargs[name] = _decode_value(hints[name], value, f"{path}.{name}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{path}: {err}") from err


def config_from_dict(obj: dict) -> ExperimentConfig:
    return _decode_dataclass(ExperimentConfig, obj, "config")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from err
    return config_from_dict(obj)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# task assembly


@dataclass
class TaskData:
    train_pool: Dataset
    main_test: Dataset
    shards: dict                       # participant id -> Dataset
    backdoor_trains: list
    backdoor_evals: list               # (Dataset, target_label)


def build_task_data(cfg: ExperimentConfig) -> TaskData:
    """Generate the task, carve out backdoor sets, partition the rest.

    The main test split is generated alongside the training pool (same class
    means, disjoint examples).  Semantic backdoor examples are removed from
    both training and test data: the backdoor feature exists only in the
    attacker's sets.
    """
    full_spec = dc_replace(cfg.task, samples=cfg.task.samples + cfg.test_count)
    full = gen_blobs(full_spec)
    pool = full.subset(np.arange(cfg.task.samples))
    main_test = full.subset(np.arange(cfg.task.samples, len(full)))

    rng = substream(cfg.master_seed, STREAM_BACKDOOR)
    bd_trains, bd_evals = [], []
    for spec in cfg.backdoors:
        if spec.kind == SEMANTIC:
            bd_train, bd_eval, pool = make_semantic_backdoor(pool, spec, rng)
            if not spec.leak_to_benign:
                keep = ~semantic_mask(main_test, spec)
                main_test = main_test.subset(np.flatnonzero(keep))
        elif spec.kind == PIXEL_PATTERN:
            bd_train, bd_eval, pool = make_pixel_backdoor(
                pool, spec, cfg.pixel_train_count, rng)
        else:
            raise ConfigError(f"unknown backdoor kind {spec.kind!r}")
        bd_trains.append(bd_train)
        bd_evals.append((bd_eval, spec.target_label))

    partition = dirichlet_partition(pool, cfg.round.n, cfg.alpha,
                                    substream(cfg.master_seed, STREAM_PARTITION))
    shards = {i: partition.shard(i) for i in range(cfg.round.n)}
    return TaskData(pool, main_test, shards, bd_trains, bd_evals)


def make_template(cfg: ExperimentConfig) -> nn.Model:
    spec, mc = cfg.task, cfg.model
    if mc.kind == nn.LINEAR_SOFTMAX:
        model = nn.linear_softmax(spec.input_dim, spec.num_classes)
    else:
        model = nn.mlp1(spec.input_dim, spec.num_classes, mc.hidden_dim)
    init = nn.init_params(model, substream(cfg.master_seed, STREAM_INIT))
    return nn.with_params(model, init)


def resolve_attacker_ids(cfg: ExperimentConfig) -> tuple:
    if cfg.attack is None:
        return ()
    if cfg.attacker_ids:
        ids = cfg.attacker_ids
        if any(i < 0 or i >= cfg.round.n for i in ids):
            raise ConfigError("attacker id out of range")
        return tuple(sorted(set(ids)))
    count = int(round(cfg.attacker_fraction * cfg.round.n))
    if count < 1:
        raise ConfigError("attack configured but no participants are controlled")
    rng = substream(cfg.master_seed, STREAM_ROLES)
    return tuple(sorted(int(i) for i in rng.choice(cfg.round.n, size=count,
                                                   replace=False)))


def make_attacker(cfg: ExperimentConfig, td: TaskData) -> Attacker | None:
    if cfg.attack is None:
        return None
    ids = resolve_attacker_ids(cfg)
    hparams = BenignHyperparams(cfg.round.epochs, cfg.round.lr,
                                cfg.round.batch_size)
    return Attacker(cfg.attack, ids, td.backdoor_trains, td.backdoor_evals,
                    gamma_full=cfg.round.n / cfg.round.eta,
                    benign_hparams=hparams)


# ---------------------------------------------------------------------------
# metrics files


def csv_header(num_backdoors: int) -> list[str]:
    cols = ["round", "main_acc"]
    cols += [f"backdoor_acc_{i}" for i in range(num_backdoors)]
    cols += ["attacker_present", "max_update_norm", "median_update_norm",
             "aggregator", "gamma", "flags"]
    return cols


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def record_row(rec: MetricsRecord) -> list[str]:
    return (
        [_fmt(rec.round), _fmt(rec.main_acc)]
        + [_fmt(b) for b in rec.backdoor_acc]
        + [_fmt(rec.attacker_present), _fmt(rec.max_update_norm),
           _fmt(rec.median_update_norm), rec.aggregator, _fmt(rec.gamma),
           rec.flags]
    )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    final_state: RoundState
    out_dir: Path
    metrics_path: Path


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run all rounds, streaming metrics to disk; returns in-memory records too."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    td = build_task_data(cfg)
    attacker = make_attacker(cfg, td)
    template = make_template(cfg)
    suite = EvalSuite(
        template=template,
        main_test=td.main_test,
        backdoor_evals=tuple(td.backdoor_evals),
        detectors=cfg.detectors,
        exclude_flagged=cfg.exclude_flagged,
    )
    state = RoundState(0, template.params.copy(), cfg.master_seed)
    records = []
    metrics_path = out / "metrics.csv"
    verdicts_path = out / "verdicts.csv"
    metrics_fh = open(metrics_path, "w", newline="")
    verdicts_fh = open(verdicts_path, "w", newline="") if cfg.detectors else None
    try:
        writer = csv.writer(metrics_fh, lineterminator="\n")
        writer.writerow(csv_header(len(cfg.backdoors)))
        vwriter = None
        if verdicts_fh is not None:
            vwriter = csv.writer(verdicts_fh, lineterminator="\n")
            vwriter.writerow(["round", "detector", "participant", "score", "flagged"])
        for t in range(cfg.total_rounds):
            attack_now, force = _schedule_gate(cfg.schedule, t, attacker)
            try:
                state, rec = run_round(state, td.shards, cfg.round, suite,
                                       attacker if attack_now else None,
                                       force_attacker=force)
            except Exception:
                metrics_fh.write("#aborted\n")
                raise
            records.append(rec)
            writer.writerow(record_row(rec))
            if vwriter is not None:
                for v in rec.verdicts:
                    vwriter.writerow([rec.round, v.detector, v.participant_id,
                                      repr(v.score), int(v.flagged)])
            if cfg.checkpoint_every and t % cfg.checkpoint_every == 0:
                save_params(state.global_params, out / f"round_{t:05d}.ckpt")
        save_params(state.global_params, out / "final.ckpt")
    finally:
        metrics_fh.close()
        if verdicts_fh is not None:
            verdicts_fh.close()
    return ExperimentResult(cfg, records, state, out, metrics_path)


def _schedule_gate(schedule: ScheduleConfig, t: int, attacker) -> tuple[bool, bool]:
    if attacker is None:
        return False, False
    if schedule.kind == SINGLE_SHOT:
        hit = t == schedule.round
        return hit, hit
    if schedule.kind == FIXED_ROUNDS:
        hit = t in schedule.rounds
        return hit, hit
    return True, False


# ---------------------------------------------------------------------------
# sweeps


def _path_parts(cfg, dotted: str):
    parts = dotted.split(".")
    node = cfg
    for p in parts[:-1]:
        if not dataclasses.is_dataclass(node) or p not in {
            f.name for f in dataclasses.fields(node)
        }:
            raise ConfigError(f"grid key {dotted!r} does not resolve")
        node = getattr(node, p)
        if node is None:
            raise ConfigError(f"grid key {dotted!r} crosses an unset section")
    if not dataclasses.is_dataclass(node) or parts[-1] not in {
        f.name for f in dataclasses.fields(node)
    }:
        raise ConfigError(f"grid key {dotted!r} does not resolve")
    return parts


def _with_path(cfg, dotted: str, value):
    parts = _path_parts(cfg, dotted)

    def rebuild(node, i):
        if i == len(parts) - 1:
            return dc_replace(node, **{parts[i]: value})
        child = rebuild(getattr(node, parts[i]), i + 1)
        return dc_replace(node, **{parts[i]: child})

    return rebuild(cfg, 0)


def cell_seed(master_seed: int, index: int) -> int:
    ss = np.random.SeedSequence([int(master_seed), STREAM_SWEEP, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class SweepResult:
    cells: list                       # (index, overrides dict, ExperimentResult)
    summary_path: Path


def _mean(values) -> float | None:
    values = list(values)
    return float(np.mean(values)) if values else None


def sweep(cfg: ExperimentConfig, grid: dict, out_dir=None) -> SweepResult:
    """Cartesian product over dotted config paths; one run per cell.

    Every grid key is validated against the base config before any cell runs.
    Each cell gets a seed derived from (master_seed, cell index) and its own
    subdirectory.  An empty grid degenerates to a single cell running the
    base config.  summary.csv reports final and mean accuracies per cell;
    backdoor means are reported both over all rounds and from the first
    attack round on.
    """
    keys = sorted(grid)
    for key in keys:
        _path_parts(cfg, key)
        values = grid[key]
        if not isinstance(values, (list, tuple)) or not list(values):
            raise ConfigError(f"grid values for {key!r} must be a non-empty list")
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    rows = []
    num_backdoors = len(cfg.backdoors)
    for index, combo in enumerate(itertools.product(*(grid[k] for k in keys))):
        cell_cfg = cfg
        for key, value in zip(keys, combo):
            cell_cfg = _with_path(cell_cfg, key, value)
        seed = cell_seed(cfg.master_seed, index)
        cell_cfg = dc_replace(cell_cfg, master_seed=seed,
                              output_dir=str(out / f"cell_{index:03d}"))
        result = run_experiment(cell_cfg)
        overrides = dict(zip(keys, combo))
        cells.append((index, overrides, result))
        recs = result.records
        attack_rounds = [r.round for r in recs if r.attacker_present]
        post = [r for r in recs if attack_rounds and r.round >= attack_rounds[0]]
        row = {
            "cell": index,
            **{k: overrides[k] for k in keys},
            "seed": seed,
            "main_acc_final": recs[-1].main_acc if recs else None,
            "main_acc_mean": _mean(r.main_acc for r in recs),
        }
        for b in range(num_backdoors):
            row[f"backdoor_acc_{b}_final"] = (
                recs[-1].backdoor_acc[b] if recs else None)
            row[f"backdoor_acc_{b}_mean"] = _mean(
                r.backdoor_acc[b] for r in recs)
            row[f"backdoor_acc_{b}_post_attack"] = _mean(
                r.backdoor_acc[b] for r in post)
        rows.append(row)
    summary_path = out / "summary.csv"
    if rows:
        with open(summary_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]),
                                    lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _fmt(v) if not isinstance(v, str) else v
                                 for k, v in row.items()})
    return SweepResult(cells, summary_path)


# checkpoint io lives in params; re-exported here because runs produce them
save_checkpoint = save_params
load_checkpoint = load_params


def default_config(**overrides) -> ExperimentConfig:
    """The calibrated desk-scale scenario used by the demos.

    A 4-class, 10-feature blob task split across 100 participants, 10 per
    round, with a semantic backdoor in one class's feature tail.
    """
    cfg = ExperimentConfig(
        task=SyntheticTaskSpec(num_classes=4, input_dim=10, samples=10_000,
                               radius=3.0, noise=0.5, seed=14),
        model=ModelConfig(kind=nn.LINEAR_SOFTMAX),
        round=RoundConfig(n=100, m=10, eta=1.0, epochs=2, lr=0.1, batch_size=32),
        alpha=0.9,
        test_count=2000,
        backdoors=(BackdoorSpec(kind=SEMANTIC, source_class=0, target_label=3,
                                feature_index=7, threshold=1.5,
                                holdout_count=3, eval_augmentations=1000,
                                eval_jitter=0.05),),
        attack=AttackConfig(strategy="constrain_and_scale", gamma=100.0,
                            alpha=1.0, epochs=60, lr=0.05, step_sched=(40,),
                            epsilon=0.05, c=18, batch_size=64,
                            train_noise=0.05),
        attacker_ids=(17,),
        schedule=ScheduleConfig(kind=SINGLE_SHOT, round=60),
        total_rounds=80,
        master_seed=11,
        output_dir="out",
    )
    if overrides:
        cfg = dc_replace(cfg, **overrides)
    return cfg
