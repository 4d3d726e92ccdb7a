"""``nsad`` command line: check-rules, simulate, pretrain, train, eval, diagnose.

Exit codes: 0 success, 1 domain error (bad rules, data, checkpoint stage...),
2 I/O or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from nsad import __version__, evalstats, reasoner, report, sim, trainer
from nsad.data import DataError, Schema, format_schema, load_cohort, load_schema, write_records
from nsad.dsl import ParseError, RuleError, RuleSet, parse_rules, parse_ruleset, validate_ruleset
from nsad.perception import MlpModel

log = logging.getLogger("nsad")

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2
STAGE_FILE = {1: "stage1-seed{seed}.ckpt", 2: "stage2-seed{seed}.ckpt"}


class ConfigError(Exception):
    """Bad or missing configuration; exit code 2."""


class DomainError(Exception):
    """Valid configuration, but the inputs do not make sense; exit code 1."""


@dataclass
class RunConfig:
    config: Optional[str] = None
    schema: Optional[str] = None
    rules: Optional[str] = None
    records: Optional[str] = None
    logits: Optional[str] = None
    checkpoint: Optional[str] = None
    base_checkpoint: Optional[str] = None
    spec: Optional[str] = None
    out: str = "."
    id: Optional[str] = None
    seed: int = 0
    seeds: int = 1
    freeze_w: bool = False
    external_prose: bool = False
    epochs_per_stage: int = 30
    batch_size: int = 8
    lr_stage1: float = 1e-4
    lr_stage2: float = 1e-5
    gamma: float = 0.5
    step_size: int = 10
    class_weighting: bool = True
    hidden: tuple = (32, 16)
    extra: dict = field(default_factory=dict)

    @property
    def seed_list(self) -> list:
        return [self.seed + i for i in range(self.seeds)]

    def train_config(self, seed: int) -> trainer.TrainConfig:
        return trainer.TrainConfig(
            epochs_per_stage=self.epochs_per_stage, batch_size=self.batch_size,
            lr_stage1=self.lr_stage1, lr_stage2=self.lr_stage2, gamma=self.gamma,
            step_size=self.step_size, seed=seed, class_weighting=self.class_weighting,
            freeze_w=self.freeze_w,
        )


# config files may use the flag spellings
CONFIG_ALIASES = {"epochs": "epochs_per_stage", "lr1": "lr_stage1", "lr2": "lr_stage2"}


def _coerce(name: str, raw):
    kinds = {f.name: f.type for f in fields(RunConfig)}
    if name not in kinds or name in ("extra", "config"):
        raise ConfigError(f"unknown config key {name!r}")
    kind = kinds[name]
    if not isinstance(raw, str):
        return raw
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "yes", "1", "on")
        if kind == "tuple":
            return tuple(int(x) for x in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {name}") from None
    return raw


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        key = CONFIG_ALIASES.get(key, key)
        out[key] = _coerce(key, value)
    return out


def merge_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None and f.name not in ("extra",):
            values[f.name] = _coerce(f.name, v) if f.name != "config" else v
    cfg = RunConfig(**values)
    if cfg.seeds < 1 or cfg.seed < 0:
        raise ConfigError("--seed must be >= 0 and --seeds >= 1")
    return cfg


def _require(cfg: RunConfig, *names: str) -> None:
    for name in names:
        value = getattr(cfg, name)
        if value is None:
            raise ConfigError(f"--{name.replace('_', '-')} is required")
        if not Path(value).exists():
            raise ConfigError(f"{name} path does not exist: {value}")


# ---------------------------------------------------------------------------
# loading helpers
# ---------------------------------------------------------------------------


def _schema(cfg) -> Schema:
    return load_schema(cfg.schema)


def _rules(cfg, schema: Schema) -> RuleSet:
    with open(cfg.rules, encoding="utf-8") as fh:
        return parse_ruleset(fh.read(), schema.features)


def _cohort(cfg, schema: Schema):
    return load_cohort(cfg.records, schema, logits_path=cfg.logits)


def _model(cfg, schema: Schema) -> Optional[MlpModel]:
    if cfg.logits:
        return None
    if not schema.imaging:
        raise DomainError("schema declares no imaging columns and no --logits file was given")
    return MlpModel((len(schema.imaging), *cfg.hidden, 2))


def checkpoint_path(spec: Optional[str], stage: int, seed: int, n_seeds: int) -> Path:
    if spec is None:
        raise DomainError(f"stage mismatch: a stage-{stage} checkpoint is required")
    p = Path(spec)
    if "{seed}" in spec:
        return Path(spec.format(seed=seed))
    if p.is_dir():
        return p / STAGE_FILE[stage].format(seed=seed)
    if n_seeds > 1:
        raise ConfigError("with --seeds > 1 the checkpoint must be a directory or contain '{seed}'")
    return p


def _load_stage(spec, stage, seed, n_seeds) -> trainer.Checkpoint:
    path = checkpoint_path(spec, stage, seed, n_seeds)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    c = trainer.load_checkpoint(path)
    if c.stage != stage:
        raise DomainError(f"stage mismatch: {path} is a stage-{c.stage} checkpoint, expected stage {stage}")
    return c


def _outdir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_check_rules(rules_path, schema_path, stream=None) -> int:
    stream = stream or sys.stdout
    try:
        schema = load_schema(schema_path)
        with open(rules_path, encoding="utf-8") as fh:
            source = fh.read()
    except (OSError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        rules = parse_rules(source)
    except ParseError as exc:
        print(f"{rules_path}:{exc}", file=stream)
        return EXIT_DOMAIN
    rs = RuleSet(tuple(rules), schema.features)
    problems = validate_ruleset(rs, schema.features)
    for d in problems:
        print(f"{rules_path}:{d}", file=stream)
    if problems:
        return EXIT_DOMAIN
    n_params = sum(len(r.params) for r in rules)
    print(f"{rules_path}: ok ({len(rules)} rules, {n_params} parameters)", file=stream)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    if cfg.spec is not None:
        _require(cfg, "spec")
        spec = sim.load_spec(cfg.spec)
    else:
        spec = sim.default_spec()
    cohort = sim.simulate_cohort(spec, cfg.seed)
    out = _outdir(cfg)
    write_records(out / "records.csv", cohort)
    (out / "cohort.schema").write_text(format_schema(cohort.schema), encoding="utf-8")
    (out / "truth.nsr").write_text(spec.risk_rules, encoding="utf-8")
    manifest = {k: v for k, v in cohort.provenance.items()}
    manifest["files"] = {"records": "records.csv", "schema": "cohort.schema", "truth_rules": "truth.nsr"}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    ref = cohort.provenance["reference"]
    print(f"simulated {len(cohort)} samples (seed {cfg.seed}); "
          f"Bayes accuracy {ref['bayes_accuracy']:.4f}, imaging-only {ref['imaging_only_accuracy']:.4f}")
    return EXIT_OK


def cmd_pretrain(cfg: RunConfig) -> int:
    _require(cfg, "schema", "records")
    if cfg.logits:
        raise DomainError("pretraining needs imaging features; external logits leave nothing to pretrain")
    schema = _schema(cfg)
    cohort = _cohort(cfg, schema)
    model = _model(cfg, schema)
    out = _outdir(cfg)
    for seed in cfg.seed_list:
        ckpt = trainer.pretrain(model, cohort, cfg.train_config(seed))
        path = out / STAGE_FILE[1].format(seed=seed)
        trainer.save_checkpoint(ckpt, path)
        print(f"seed {seed}: stage-1 loss {ckpt.history[0] if ckpt.history else float('nan'):.4f} -> "
              f"{ckpt.history[-1] if ckpt.history else float('nan'):.4f}; wrote {path}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, "schema", "records", "rules")
    schema = _schema(cfg)
    rules = _rules(cfg, schema)
    cohort = _cohort(cfg, schema)
    model = _model(cfg, schema)
    out = _outdir(cfg)
    for seed in cfg.seed_list:
        start = None
        if model is not None:
            start = _load_stage(cfg.checkpoint, 1, seed, cfg.seeds)
        ckpt = trainer.train_joint(model, rules, cohort, cfg.train_config(seed), start)
        path = out / STAGE_FILE[2].format(seed=seed)
        trainer.save_checkpoint(ckpt, path)
        print(f"seed {seed}: stage-2 w = {ckpt.value(reasoner.BALANCE):.4f}; wrote {path}")
    return EXIT_OK


def _evaluate(model, rules, cohort, ckpt: trainer.Checkpoint) -> dict:
    hold = trainer.holdout_split(cohort)
    if not hold:
        raise DomainError("held-out split is empty")
    labels = [s.label for s in hold]
    if any(y is None for y in labels):
        raise DomainError("held-out samples need labels for evaluation")
    if ckpt.stage == 1:
        store = trainer.restore_store(ckpt, model)
        logits = trainer.perception_logits(model, store, hold)
    else:
        store = trainer.restore_store(ckpt, model, rules)
        _, logits = trainer.adjusted_logits(model, store, rules, hold)
    return evalstats.classification_report(logits, labels)


def cmd_eval(cfg: RunConfig) -> int:
    _require(cfg, "schema", "records")
    if cfg.checkpoint is None and cfg.base_checkpoint is None:
        raise ConfigError("--checkpoint (and optionally --base-checkpoint) is required")
    schema = _schema(cfg)
    cohort = _cohort(cfg, schema)
    model = _model(cfg, schema)
    rules = None
    if cfg.rules:
        _require(cfg, "rules")
        rules = _rules(cfg, schema)

    def runs(spec, stage):
        out = []
        for seed in cfg.seed_list:
            ckpt = _load_stage(spec, stage, seed, cfg.seeds)
            if stage == 2 and rules is None:
                raise ConfigError("--rules is required to evaluate a stage-2 checkpoint")
            out.append(_evaluate(model, rules, cohort, ckpt))
        return out

    methods = {}
    if cfg.base_checkpoint is not None:
        methods["Base"] = runs(cfg.base_checkpoint, 1)
    if cfg.checkpoint is not None:
        # a single stage-1 file given as --checkpoint evaluates perception alone
        path = checkpoint_path(cfg.checkpoint, 2, cfg.seed, cfg.seeds)
        stage = 2
        if path.is_file() and trainer.load_checkpoint(path).stage == 1 and "Base" not in methods:
            stage = 1
        methods["Ours" if stage == 2 else "Base"] = runs(cfg.checkpoint, stage)

    summaries = {}
    for name, per_seed in methods.items():
        if len(per_seed) >= 2:
            summaries[name] = evalstats.seed_aggregate(per_seed)
        else:
            only = per_seed[0]
            summaries[name] = evalstats.EvalSummary(per_seed, dict(only), {k: 0.0 for k in only})
    if "Base" in summaries and "Ours" in summaries and cfg.seeds >= 2:
        summaries["Ours"].tests = evalstats.compare(summaries["Base"], summaries["Ours"])

    out = _outdir(cfg)
    (out / "metrics.json").write_text(evalstats.summary_json(summaries, cfg.seed_list), encoding="utf-8")
    table = evalstats.format_table(summaries)
    (out / "metrics.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def cmd_diagnose(cfg: RunConfig) -> int:
    _require(cfg, "schema", "records", "rules")
    if cfg.id is None:
        raise ConfigError("--id is required")
    schema = _schema(cfg)
    rules = _rules(cfg, schema)
    cohort = _cohort(cfg, schema)
    model = _model(cfg, schema)
    try:
        sample = cohort.get(cfg.id)
    except KeyError:
        raise DomainError(f"unknown patient id {cfg.id!r}") from None
    ckpt = _load_stage(cfg.checkpoint, 2, cfg.seed, 1)
    store = trainer.restore_store(ckpt, model, rules)
    y = trainer.perception_logits(model, store, [sample])[0]
    adj = reasoner.adjust(rules, sample.record, (float(y[0]), float(y[1])), store)
    rep = report.build_report(adj, rules, sample.record)
    text, rep = report.render(rep, "external" if cfg.external_prose else "template")
    out = _outdir(cfg)
    (out / f"{cfg.id}.report.json").write_text(rep.to_json(), encoding="utf-8")
    (out / f"{cfg.id}.report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' config file; flags override it")
    p.add_argument("--schema", help="schema file ('feature <name> numeric|categorical', 'imaging <name>')")
    p.add_argument("--rules", help="rule file (.nsr)")
    p.add_argument("--records", help="records CSV (id,diagnosis,<features>...)")
    p.add_argument("--logits", help="external logits CSV (id,logit_cn,logit_ad)")
    p.add_argument("--checkpoint", help="checkpoint file, directory, or path containing {seed}")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, metavar="N", help="run seeds seed..seed+N-1")
    p.add_argument("--freeze-w", dest="freeze_w", action="store_const", const=True,
                   help="keep the balance factor fixed during joint training")
    p.add_argument("--external-prose", dest="external_prose", action="store_const", const=True,
                   help="ask the configured text-generation endpoint for report prose")
    p.add_argument("--epochs", dest="epochs_per_stage", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr1", dest="lr_stage1", type=float)
    p.add_argument("--lr2", dest="lr_stage2", type=float)
    p.add_argument("--hidden", help="hidden layer widths, e.g. 32,16")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsad", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"nsad {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-rules", help="parse and validate a rule file")
    _common(p)

    p = sub.add_parser("simulate", help="write a synthetic cohort")
    _common(p)
    p.add_argument("--spec", help="simulation spec (JSON); default is the built-in cohort")

    p = sub.add_parser("pretrain", help="stage 1: train perception alone")
    _common(p)

    p = sub.add_parser("train", help="stage 2: joint neural + symbolic fine-tuning")
    _common(p)

    p = sub.add_parser("eval", help="held-out metrics over seeds, with paired t-tests")
    _common(p)
    p.add_argument("--base-checkpoint", dest="base_checkpoint",
                   help="stage-1 checkpoints to compare against")

    p = sub.add_parser("diagnose", help="explanatory report for one patient")
    _common(p)
    p.add_argument("--id", help="patient id")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = merge_config(args)
        if args.command == "check-rules":
            _require(cfg, "rules", "schema")
            return cmd_check_rules(cfg.rules, cfg.schema)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DomainError, RuleError, DataError, sim.SimSpecError,
            trainer.TrainingError, trainer.CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
