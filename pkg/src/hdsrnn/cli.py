"""``hdsrnn`` command line: generate, preprocess, train, evaluate, sweep, export-attention, baseline.

Every command reads one YAML experiment file (``--config``), applies flag
overrides, echoes the resolved configuration into ``--out`` and writes its
artifacts there.  Unknown keys anywhere in the file are rejected.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .baselines import BaselineSpec, run_baseline
from .errors import ConfigurationError, HdsRnnError
from .evaluation import ATTENTION_CSV, DECODER_CSV, ENCODER_CSV, evaluate_model, export_spatial_weights
from .evaluation import sweep_decoder_length, sweep_encoder_length
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .pipeline import (DEFAULT_PERIOD, deseasonalize, difference, fit_seasonal, normalize, prepare,
                       read_panel_csv, split_windows, write_panel_csv)
from .synthdata import (GeneratorConfig, NetworkSpec, default_wds_spec, generate_panel, lagged_dependency_spec,
                        persistent_target_spec)
from .training import TrainConfig, fit

log = logging.getLogger("hdsrnn")

SYNTH_SPECS = {"default_wds": default_wds_spec, "lagged": lagged_dependency_spec, "persistent": persistent_target_spec}
DEFAULT_TARGETS = {"default_wds": "F8", "lagged": "Y", "persistent": "Y"}
RESOLVED_NAME = "resolved_config.yaml"


# --- configuration ---------------------------------------------------------------


@dataclass
class DataSettings:
    csv: str | None = None  # panel CSV; when absent the synthetic generator is used
    synth: str = "default_wds"  # built-in spec name or a NetworkSpec JSON path
    length: int = 48 * 60
    seed: int = 0
    noise_std: float = 0.2
    events_per_day: float = 2.0
    event_scale: float = 5.0


@dataclass
class PretreatSettings:
    period: int = DEFAULT_PERIOD
    ratios: tuple = (4, 1, 1)
    enabled: bool = True  # false: window the raw values as they are

    def __post_init__(self):
        self.ratios = tuple(self.ratios)
        if len(self.ratios) != 3 or min(self.ratios) <= 0:
            raise ConfigurationError(f"ratios must be three positive numbers, got {list(self.ratios)}")
        if self.period < 1:
            raise ConfigurationError("period must be >= 1")


@dataclass
class ExperimentConfig:
    data: DataSettings = field(default_factory=DataSettings)
    pretreatment: PretreatSettings = field(default_factory=PretreatSettings)
    model: dict = field(default_factory=dict)  # ModelConfig fields; n_sensors comes from the data
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int | None = None  # overrides train.rng_seed
    out: str = "runs/experiment"
    deterministic: bool = False

    def to_dict(self) -> dict:
        return {
            "data": dataclasses.asdict(self.data),
            "pretreatment": {"period": self.pretreatment.period, "ratios": list(self.pretreatment.ratios),
                             "enabled": self.pretreatment.enabled},
            "model": dict(self.model),
            "train": self.train.to_dict(),
            "seed": self.seed,
            "out": self.out,
            "deterministic": self.deterministic,
        }


def _section(cls, raw, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigurationError(f"section {name!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return cls(**raw)


def config_from_dict(raw: dict | None) -> ExperimentConfig:
    raw = dict(raw or {})
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown top-level config keys: {sorted(unknown)}")
    model = raw.get("model") or {}
    if not isinstance(model, dict):
        raise ConfigurationError("section 'model' must be a mapping")
    mkeys = {f.name for f in dataclasses.fields(ModelConfig)}
    bad = set(model) - mkeys
    if bad:
        raise ConfigurationError(f"unknown keys in 'model': {sorted(bad)}")
    if "spatial_variant" in model:
        ModelConfig(n_sensors=1, spatial_variant=model["spatial_variant"])  # fail early on a bad name
    train = raw.get("train") or {}
    if not isinstance(train, dict):
        raise ConfigurationError("section 'train' must be a mapping")
    return ExperimentConfig(
        data=_section(DataSettings, raw.get("data"), "data"),
        pretreatment=_section(PretreatSettings, raw.get("pretreatment"), "pretreatment"),
        model=dict(model),
        train=TrainConfig.from_dict(train),
        seed=raw.get("seed"),
        out=str(raw.get("out", ExperimentConfig.out)),
        deterministic=bool(raw.get("deterministic", False)),
    )


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML ({exc})") from None
    return config_from_dict(raw)


def resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.out is not None:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.deterministic:
        cfg.deterministic = True
    if cfg.seed is not None:
        cfg.train = dataclasses.replace(cfg.train, rng_seed=int(cfg.seed))
    return cfg


# --- data ------------------------------------------------------------------------


def network_spec(cfg: ExperimentConfig) -> NetworkSpec | None:
    if cfg.data.csv is not None:
        return None
    name = cfg.data.synth
    if name in SYNTH_SPECS:
        return SYNTH_SPECS[name]()
    path = Path(name)
    if not path.exists():
        raise ConfigurationError(f"synth must be one of {sorted(SYNTH_SPECS)} or a spec JSON path, got {name!r}")
    return NetworkSpec.load(path)


def load_panel(cfg: ExperimentConfig, spec: NetworkSpec | None = None):
    if cfg.data.csv is not None:
        return read_panel_csv(cfg.data.csv, cfg.pretreatment.ratios)
    spec = spec if spec is not None else network_spec(cfg)
    gen = GeneratorConfig(length=cfg.data.length, period=cfg.pretreatment.period, noise_std=cfg.data.noise_std,
                          seed=cfg.data.seed, events_per_day=cfg.data.events_per_day,
                          event_scale=cfg.data.event_scale, ratios=cfg.pretreatment.ratios)
    return generate_panel(spec, gen)


def model_config(cfg: ExperimentConfig, panel) -> ModelConfig:
    d = dict(cfg.model)
    n = d.pop("n_sensors", panel.n_sensors)
    if n != panel.n_sensors:
        raise ConfigurationError(f"model.n_sensors={n} but the panel has {panel.n_sensors} sensors")
    target = d.pop("target_sensor", None)
    if target is None:
        target = DEFAULT_TARGETS.get(cfg.data.synth, 0) if cfg.data.csv is None else 0
    return ModelConfig(n_sensors=n, target_sensor=panel.index_of(target), **d)


# --- output helpers --------------------------------------------------------------


def _atomic(path: Path, write) -> Path:
    """Write through a temporary sibling so a failed command never leaves a partial artifact."""
    tmp = path.with_name(path.name + ".part")
    write(tmp)
    os.replace(tmp, path)
    return path


def _write_text(path: Path, text: str) -> Path:
    return _atomic(path, lambda p: p.write_text(text))


def _json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True)


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / RESOLVED_NAME, yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return out


# --- commands --------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = resolve(args)
    if args.default_wds:
        cfg.data.synth = "default_wds"
    if args.spec is not None:
        cfg.data.synth = args.spec
    if args.length is not None:
        cfg.data.length = args.length
    if args.seed is not None:
        cfg.data.seed = args.seed
    cfg.data.csv = None
    spec = network_spec(cfg)
    panel = load_panel(cfg, spec)
    out = _outdir(cfg)
    _atomic(out / "panel.csv", lambda p: write_panel_csv(panel, p))
    _atomic(out / "network_spec.json", lambda p: spec.save(p))
    print(f"wrote {out / 'panel.csv'} ({panel.n_sensors} sensors x {panel.length} steps)")
    return 0


def cmd_preprocess(args) -> int:
    cfg = resolve(args)
    if not cfg.pretreatment.enabled:
        raise ConfigurationError("pretreatment is disabled in this config; nothing to preprocess")
    panel = load_panel(cfg)
    diff = difference(panel)
    dec = fit_seasonal(diff, cfg.pretreatment.period)
    z = normalize(deseasonalize(diff, dec), dec)
    out = _outdir(cfg)
    _atomic(out / "decomposition.json", lambda p: dec.save(p))
    _atomic(out / "residuals.csv", lambda p: write_panel_csv(z, p))
    print(f"wrote {out / 'decomposition.json'} and {out / 'residuals.csv'}")
    return 0


def _prepared(cfg: ExperimentConfig, mc: ModelConfig, panel):
    if not cfg.pretreatment.enabled:
        return split_windows(panel, mc.encoder_length, mc.decoder_length, mc.target_sensor)
    return prepare(panel, mc.encoder_length, mc.decoder_length, mc.target_sensor, cfg.pretreatment.period)


def cmd_train(args) -> int:
    cfg = resolve(args)
    panel = load_panel(cfg)
    mc = model_config(cfg, panel)
    data = _prepared(cfg, mc, panel)
    report, model = fit(mc, cfg.train, data, deterministic=cfg.deterministic)
    out = _outdir(cfg)
    _atomic(out / "checkpoint.json", lambda p: save_checkpoint(model, p))
    _write_text(out / "report.json", report.to_json())
    print(f"test mse {report.test_loss:.6g} (model scale), best epoch {report.best_epoch}; wrote {out / 'report.json'}")
    return 0


def _checkpoint_path(args, cfg) -> Path:
    return Path(args.checkpoint) if args.checkpoint else Path(cfg.out) / "checkpoint.json"


def cmd_evaluate(args) -> int:
    cfg = resolve(args)
    model = load_checkpoint(_checkpoint_path(args, cfg))
    panel = load_panel(cfg)
    data = _prepared(cfg, model.config, panel)
    scored = evaluate_model(model, data)
    out = _outdir(cfg)
    _write_text(out / "evaluation.json", _json({k: m.to_dict() for k, m in scored.items()}))
    for k, m in scored.items():
        print(f"{k:>13}: mse {m.mse:.6g} rmse {m.rmse:.6g} mae {m.mae:.6g}")
    return 0


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"expected comma-separated integers, got {text!r}") from None


def cmd_sweep(args) -> int:
    cfg = resolve(args)
    panel = load_panel(cfg)
    base = model_config(cfg, panel)
    values = _int_list(args.values)
    seeds = _int_list(args.seeds) if args.seeds else [cfg.train.rng_seed]
    if args.param == "encoder_length":
        res = sweep_encoder_length(base, cfg.train, panel, values, seeds, cfg.pretreatment.period, args.jobs,
                                   deterministic=True, pretreat=cfg.pretreatment.enabled)
        name = ENCODER_CSV
    else:
        res = sweep_decoder_length(base, cfg.train, panel, values, seeds, cfg.pretreatment.period, args.jobs,
                                   deterministic=True, pretreat=cfg.pretreatment.enabled)
        name = DECODER_CSV
    out = _outdir(cfg)
    _atomic(out / name, lambda p: res.to_csv(p))
    _write_text(out / f"sweep_{args.param}.json", _json(res.to_dict()))
    print(f"wrote {out / name}")
    return 0


def cmd_export_attention(args) -> int:
    cfg = resolve(args)
    model = load_checkpoint(_checkpoint_path(args, cfg))
    spec = network_spec(cfg)
    panel = load_panel(cfg, spec)
    data = _prepared(cfg, model.config, panel)
    summary = export_spatial_weights(model, data, spec, split=args.split)
    out = _outdir(cfg)
    _atomic(out / ATTENTION_CSV, lambda p: summary.to_csv(p))
    print(f"wrote {out / ATTENTION_CSV}")
    return 0


def cmd_baseline(args) -> int:
    cfg = resolve(args)
    panel = load_panel(cfg)
    mc = model_config(cfg, panel)
    spec = BaselineSpec(args.kind, order=args.order, period=cfg.pretreatment.period, model_config=mc,
                        train_config=cfg.train)
    data = _prepared(cfg, mc, panel)
    res = run_baseline(spec, data, mc.encoder_length, mc.decoder_length, deterministic=cfg.deterministic)
    out = _outdir(cfg)
    _write_text(out / f"baseline_{spec.kind}.json", _json(res.to_dict()))
    print(f"{spec.kind}: test mse {res.test_loss:.6g} (model scale)")
    return 0


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment file")
    common.add_argument("--seed", type=int, help="training seed (generator seed for 'generate')")
    common.add_argument("--out", help="output directory")
    common.add_argument("--deterministic", action="store_true", help="leave wall-clock fields empty")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hdsrnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic panel CSV")
    p.add_argument("--default-wds", action="store_true", help="use the built-in 18-sensor network")
    p.add_argument("--spec", help="built-in spec name or NetworkSpec JSON")
    p.add_argument("--length", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("preprocess", parents=[common], help="fit the pretreatment and write residuals")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="train a model; writes checkpoint and report")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on the test split")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common], help="encoder or decoder length sweep")
    p.add_argument("--param", choices=["encoder_length", "decoder_length"], required=True)
    p.add_argument("--values", required=True, help="comma-separated lengths")
    p.add_argument("--seeds", help="comma-separated seeds (default: the training seed)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-attention", parents=[common], help="mean spatial weight per sensor")
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("baseline", parents=[common], help="run one reference forecaster")
    p.add_argument("--kind", required=True)
    p.add_argument("--order", type=int, default=2, help="linear AR order")
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (HdsRnnError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
