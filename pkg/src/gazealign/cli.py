"""Command-line entry point: ``gazealign <command> [options]``.

Exit status is 0 on success, 1 on usage or configuration errors and 2 when
the data or a fit is unusable.  Fit flags (fallbacks, non-convergence) are
listed on stderr.

Configuration is one JSON document::

    {"seed": 2024,
     "benchmark": {...BenchmarkSpec fields...},
     "sensitivity": {...SensitivityConfig fields...},
     "train": {...TrainConfig fields...},
     "gla": {"anchor": 0, "unit_kind": "person", ...},
     "out": "results"}

``seed`` is mandatory and is the only source of randomness: it becomes the
benchmark seed, the alignment/training seed and the sensitivity seed unless
a section sets its own.  Every output is a pure function of the flags and
the config, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import glob
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .alignment import KINDS
from .analysis import (
    DeviationRow,
    DeviationTable,
    SensitivityConfig,
    monte_carlo_deviation,
    scaling_sweep,
    single_variable_sensitivity,
)
from .errors import GazeAlignError
from .pipeline import (
    ABLATION_AXES,
    UNIT_KINDS,
    BenchmarkSpec,
    GlaConfig,
    ablation_harness,
    evaluate_cross_domain,
    run_baseline,
    run_gla,
    scatter_rows,
    split_by_person,
    write_report,
    write_scatter_csv,
)
from .regressor import ModelParams, TrainConfig, mean_error
from .simulator import SyntheticDataset, save_domain

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _known(cls, d: dict, section: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise UsageError(f"unknown key(s) in config section {section!r}: {', '.join(unknown)}")
    return d


@dataclass
class ExperimentConfig:
    seed: int
    benchmark: BenchmarkSpec = field(default_factory=BenchmarkSpec)
    sensitivity: SensitivityConfig = field(default_factory=SensitivityConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    gla: GlaConfig = field(default_factory=GlaConfig)
    out: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if "seed" not in d or not isinstance(d["seed"], int):
            raise UsageError("config must set an integer 'seed'")
        _known(cls, d, "top level")
        seed = d["seed"]
        bench = dict(_known(BenchmarkSpec, d.get("benchmark", {}), "benchmark"))
        bench.setdefault("seed", seed)
        sens = dict(_known(SensitivityConfig, d.get("sensitivity", {}), "sensitivity"))
        sens.setdefault("seed", seed)
        for k in ("grid", "screen", "origin"):
            if k in sens:
                sens[k] = tuple(sens[k])
        train = TrainConfig(**_known(TrainConfig, d.get("train", {}), "train"))
        gla = dict(_known(GlaConfig, d.get("gla", {}), "gla"))
        gla.setdefault("seed", seed)
        gla["train"] = train
        try:
            return cls(
                seed, BenchmarkSpec(**bench), SensitivityConfig(**sens), train, GlaConfig(**gla), d.get("out")
            )
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc

    def to_dict(self) -> dict:
        gla = asdict(self.gla)
        gla.pop("train")
        return {
            "seed": self.seed,
            "benchmark": self.benchmark.to_dict(),
            "sensitivity": asdict(self.sensitivity),
            "train": asdict(self.train),
            "gla": gla,
            "out": self.out,
        }


def _out_dir(args, cfg: Optional[ExperimentConfig]) -> Path:
    out = args.out or (cfg.out if cfg else None)
    if not out:
        raise UsageError("an output location is required (--out or config 'out')")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_data(pattern: str) -> list:
    paths = sorted(p for p in glob.glob(pattern) if p.endswith(".jsonl"))
    if not paths:
        raise UsageError(f"no .jsonl files match {pattern!r}")
    return [SyntheticDataset.from_jsonl(p) for p in paths]


def _gla_cfg(cfg: ExperimentConfig, args) -> GlaConfig:
    threads = getattr(args, "threads", None)
    return replace(cfg.gla, threads=threads) if threads else cfg.gla


def _report_flags(flags) -> None:
    if flags:
        print("flags: " + ", ".join(flags), file=sys.stderr)


def _gla_flags(result) -> list:
    return sorted({f for r in result.reports["rounds"] for f in r["flags"]})


# --------------------------------------------------------------------------
# Commands


def cmd_simulate(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = _out_dir(args, cfg)
    sources, targets = cfg.benchmark.build()
    for d in sources:
        save_domain(d, out, f"source_{d.id}")
    for d in targets:
        save_domain(d, out, f"target_{d.id}")
    write_report({"benchmark": cfg.benchmark.to_dict(), "feature_map": cfg.benchmark.feature_map().to_dict()},
                 out / "benchmark.json")
    print(f"wrote {len(sources)} source and {len(targets)} target domains to {out}")
    return EXIT_OK


def _parse_taus(text: str) -> list:
    try:
        taus = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--tau expects numbers separated by commas, got {text!r}") from None
    if not taus or any(t < 0 for t in taus):
        raise UsageError("--tau values must be non-negative")
    return taus


def cmd_sensitivity(args) -> int:
    base = ExperimentConfig.load(args.config).sensitivity if args.config else SensitivityConfig()
    taus = _parse_taus(args.tau)
    over = {"n_systems": args.systems} if args.systems is not None else {}
    if args.seed is not None:
        over["seed"] = args.seed
    try:
        cfg = replace(base, tau=taus[0], **over)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.mode == "single":
        table = single_variable_sensitivity(cfg)
        table.write_sensitivity_csv(args.out)
    elif args.mode == "coupled":
        if len(taus) != 1:
            raise UsageError("--mode coupled takes a single --tau; use --mode sweep for several")
        mean, std = monte_carlo_deviation(cfg)
        DeviationTable([DeviationRow(taus[0], taus[0], mean, std)]).write_sweep_csv(args.out)
    else:
        scaling_sweep(taus, cfg).write_sweep_csv(args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if not args.out:
        raise UsageError("train needs --out for the model file")
    domains = _load_data(args.data)
    params = run_baseline(domains, _gla_cfg(cfg, args))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    params.save(args.out)
    x = np.concatenate([d.features for d in domains])
    y = np.concatenate([d.gaze_label for d in domains])
    print(f"train error vs labels: {mean_error(params, x, y):.4f} deg; model written to {args.out}")
    return EXIT_OK


def cmd_align(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    gla = replace(_gla_cfg(cfg, args), anchor=args.anchor, unit_kind=args.unit, function_kind=args.func)
    domains = _load_data(args.data)
    n_units = 2 if len(domains) == 1 else len(domains)
    if not 0 <= args.anchor < n_units:
        raise UsageError(f"--anchor must be in [0, {n_units - 1}]")
    out = _out_dir(args, cfg)
    result = run_gla(domains, gla)
    originals = split_by_person(domains[0], gla.seed) if len(domains) == 1 else domains
    for j, (orig, aligned) in enumerate(zip(originals, result.domains)):
        stem = f"domain_{aligned.id}" if len(domains) > 1 else f"domain_{aligned.id}_half{j}"
        orig.to_jsonl(out / f"{stem}.aligned.jsonl", aligned=aligned.gaze_label)
    result.params.save(out / "model.json")
    write_report({"config": asdict(gla), "reports": result.reports}, out / "report.json")
    _report_flags(_gla_flags(result))
    print(f"aligned {len(result.domains)} domains into {out}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    gla = _gla_cfg(cfg, args)
    out = _out_dir(args, cfg)
    sources, targets = cfg.benchmark.build()
    result = run_gla(sources, gla)
    baseline = run_baseline(sources, gla)
    evaluation = {}
    for ref in ("truth", "label"):
        with_gla = [evaluate_cross_domain(result.params, t, ref) for t in targets]
        without = [evaluate_cross_domain(baseline, t, ref) for t in targets]
        evaluation[ref] = {
            "targets": [t.id for t in targets],
            "with_gla_deg": with_gla,
            "without_gla_deg": without,
            "with_gla_avg_deg": float(np.mean(with_gla)),
            "without_gla_avg_deg": float(np.mean(without)),
        }
    report = {"config": cfg.to_dict(), "evaluation": evaluation, "reports": result.reports}
    write_report(report, out / "report.json")
    result.params.save(out / "model_gla.json")
    baseline.save(out / "model_baseline.json")
    _report_flags(_gla_flags(result))
    ev = evaluation["truth"]
    print(f"cross-domain error vs truth: with GLA {ev['with_gla_avg_deg']:.4f} deg, "
          f"without {ev['without_gla_avg_deg']:.4f} deg")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = _out_dir(args, cfg)
    table = ablation_harness(cfg.benchmark, args.axis, _gla_cfg(cfg, args), args.reference)
    table.write_csv(out / f"ablation_{args.axis}.csv")
    write_report(table.to_dict(), out / f"ablation_{args.axis}.json")
    for r in table.rows:
        print(f"{r.config:>16s}  avg {r.average:.4f} deg")
    return EXIT_OK


def cmd_scatter(args) -> int:
    try:
        params = ModelParams.load(args.model)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot load model {args.model}: {exc}") from exc
    data = SyntheticDataset.from_jsonl(args.data)
    write_scatter_csv(scatter_rows(params, data, args.person, args.reference), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gazealign", description="Gaze label alignment experiments (degrees, centimeters).")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True, out_help="output directory"):
        sp.add_argument("--config", required=config_required, help="experiment config JSON")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--threads", type=int, default=None, help="cap on worker threads")

    s = sub.add_parser("simulate", help="write the benchmark domains as JSONL")
    common(s)
    s.set_defaults(handler=cmd_simulate)

    s = sub.add_parser("sensitivity", help="calibration error propagation to CSV")
    s.add_argument("--mode", choices=("single", "coupled", "sweep"), required=True)
    s.add_argument("--tau", default="1", help="error std; comma-separated list for sweep")
    s.add_argument("--systems", type=int, default=None, help="number of simulated rigs")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--config", help="optional config supplying the sensitivity section")
    s.add_argument("--out", required=True, help="CSV path")
    s.set_defaults(handler=cmd_sensitivity)

    s = sub.add_parser("train", help="train a model on JSONL domains without alignment")
    s.add_argument("--data", required=True, help="glob of domain JSONL files")
    common(s, out_help="model JSON path")
    s.set_defaults(handler=cmd_train)

    s = sub.add_parser("align", help="align JSONL domains to an anchor")
    s.add_argument("--data", required=True, help="glob of domain JSONL files")
    s.add_argument("--anchor", type=int, default=0, help="index of the anchor among sorted files")
    s.add_argument("--unit", choices=UNIT_KINDS, default="person")
    s.add_argument("--func", choices=KINDS, default="rt")
    common(s)
    s.set_defaults(handler=cmd_align)

    s = sub.add_parser("pipeline", help="full alignment plus baseline on the benchmark")
    common(s)
    s.set_defaults(handler=cmd_pipeline)

    s = sub.add_parser("ablate", help="ablation table along one axis")
    s.add_argument("--axis", choices=ABLATION_AXES, required=True)
    s.add_argument("--reference", choices=("truth", "label"), default="truth")
    common(s)
    s.set_defaults(handler=cmd_ablate)

    s = sub.add_parser("scatter", help="per-person predicted vs reference angles")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True, help="one domain JSONL file")
    s.add_argument("--person", type=int, required=True)
    s.add_argument("--reference", choices=("truth", "label"), default="truth")
    s.add_argument("--out", required=True, help="CSV path")
    s.set_defaults(handler=cmd_scatter)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "threads", None) is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.handler(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except GazeAlignError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        _report_flags(getattr(exc, "flags", None))
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
