"""Command-line entry point.

Subcommands wire the library into reproducible runs:

* ``synth``    generate per-class CSVs from a synthetic-distribution spec
* ``train``    fit one classifier on benign + known-attack flows
* ``pipeline`` run the full injection experiment and write its artifacts
* ``cox``      fit proportional hazards on an existing survival table
* ``km``       fit a Kaplan-Meier curve on an existing survival table

Every command is deterministic given its config and seed.  Failures exit
with a machine-readable JSON line on stderr and a deterministic exit
code: 2 input error, 3 numerical failure, 4 accuracy-gate failure.
``FLOWHAZARD_LOG`` selects log verbosity (error, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, replace

from .errors import (
    EXIT_OK,
    FlowHazardError,
    InvalidSpec,
    MissingInput,
)
from .experiment import (
    AttackCombination,
    ExperimentConfig,
    SelectionRule,
    aggregate_cox_to_csv,
    read_survival_table,
    report_to_json_dict,
    run_experiment,
    write_survival_table,
)
from .flowdata import (
    FlowSchema,
    SyntheticSpec,
    binary_dataset,
    cicids2017_schema,
    filter_label,
    parse_flow_csv,
    serialize_flow_csv,
    subset,
    synthesize_flows,
)
from .models import (
    evaluate_accuracy,
    model_to_json,
    regressor_from_dict,
    train,
)
from .seeding import rng_from
from .survival import (
    CoxOptions,
    cox_convergence_report,
    cox_fit,
    cox_to_csv,
    km_fit,
    km_to_csv,
)
from .svgplot import km_svg

log = logging.getLogger("flowhazard")

_EMIT_CHOICES = ("km", "cox", "json", "svg")


def _configure_logging():
    level = os.environ.get("FLOWHAZARD_LOG", "error").strip().lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    logging.basicConfig(
        level=levels.get(level, logging.ERROR),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _fail(err: FlowHazardError) -> int:
    payload = {"error": err.kind, "message": str(err),
               "exit_code": err.exit_code}
    if hasattr(err, "achieved"):
        payload["achieved"] = err.achieved
        payload["required"] = err.required
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return err.exit_code


def _require_path(path: str) -> str:
    if not os.path.exists(path):
        raise MissingInput(f"input path does not exist: {path}")
    return path


def _load_json(path: str) -> dict:
    with open(_require_path(path)) as fh:
        return json.load(fh)


def _dump_json(obj: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class PipelineConfig:
    """Parsed pipeline config: schema, inputs, experiment, emit flags."""

    schema: FlowSchema
    experiment: ExperimentConfig
    output_dir: str
    emit: frozenset
    benign_label: str
    csv_inputs: dict | None  # benign_csv / pre_attack_csv / post_attack_csv
    synthetic: dict | None   # spec (SyntheticSpec) + rows_per_class


def _schema_from_config(doc: dict, synthetic_spec) -> FlowSchema:
    raw = doc.get("schema")
    if raw is None:
        if synthetic_spec is not None:
            return synthetic_spec.schema
        return cicids2017_schema()
    if "preset" in raw:
        if raw["preset"] != "cicids2017":
            raise InvalidSpec(f"unknown schema preset {raw['preset']!r}")
        return cicids2017_schema()
    return FlowSchema(
        tuple(raw["features"]), label_column=raw.get("label_column", "Label")
    )


def _experiment_from_config(doc: dict) -> ExperimentConfig:
    exp = doc.get("experiment")
    if exp is None:
        raise InvalidSpec("config is missing the 'experiment' section")
    try:
        regressor = regressor_from_dict(exp["regressor"])
        combo = AttackCombination(
            pre_attack=exp["combination"]["pre_attack"],
            post_attack=exp["combination"]["post_attack"],
        )
    except (KeyError, TypeError, ValueError) as err:
        raise InvalidSpec(f"bad experiment config: {err}")
    band = exp.get("band", [0.40, 0.60])
    cox_raw = exp.get("cox", {})
    sel_raw = exp.get("selection", {})
    try:
        return ExperimentConfig(
            regressor=regressor,
            combination=combo,
            band_low=float(band[0]),
            band_high=float(band[1]),
            seq_len=int(exp.get("seq_len", 100)),
            n_sequences=int(exp.get("n_sequences", 500)),
            n_iterations=int(exp.get("n_iterations", 10)),
            master_seed=int(exp.get("master_seed", 0)),
            cox_options=CoxOptions(
                ridge=float(cox_raw.get("ridge", 1e-3)),
                tol=float(cox_raw.get("tol", 1e-8)),
                max_iter=int(cox_raw.get("max_iter", 100)),
            ),
            accuracy_gate=float(exp.get("accuracy_gate", 0.95)),
            holdout_fraction=float(exp.get("holdout_fraction", 0.2)),
            selection=SelectionRule(
                min_abs_beta=float(sel_raw.get("min_abs_beta", 1e-3)),
                min_fraction=float(sel_raw.get("min_fraction", 0.8)),
            ),
        )
    except ValueError as err:
        raise InvalidSpec(f"bad experiment config: {err}")


def load_pipeline_config(path: str, args) -> PipelineConfig:
    doc = _load_json(path)
    # paths inside the config resolve relative to the config file itself;
    # the --out flag stays relative to the working directory
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return os.path.join(base, p) if not os.path.isabs(p) else p

    inputs = doc.get("inputs", {})
    synthetic = None
    csv_inputs = None
    spec = None
    if "synthetic_spec" in inputs:
        spec_doc = _load_json(resolve(inputs["synthetic_spec"]))
        spec = SyntheticSpec.from_json_dict(spec_doc)
        synthetic = {
            "spec": spec,
            "rows_per_class": int(inputs.get("rows_per_class", 1000)),
        }
    else:
        missing = [
            k for k in ("benign_csv", "pre_attack_csv", "post_attack_csv")
            if k not in inputs
        ]
        if missing:
            raise InvalidSpec(
                f"inputs must name either synthetic_spec or CSV paths; "
                f"missing {missing}"
            )
        csv_inputs = {
            k: _require_path(resolve(inputs[k]))
            for k in ("benign_csv", "pre_attack_csv", "post_attack_csv")
        }

    experiment = _experiment_from_config(doc)
    if getattr(args, "seed", None) is not None:
        experiment = replace(experiment, master_seed=args.seed)

    emit = doc.get("emit", list(_EMIT_CHOICES))
    if getattr(args, "emit", None):
        emit = [e.strip() for e in args.emit.split(",") if e.strip()]
    bad = set(emit) - set(_EMIT_CHOICES)
    if bad:
        raise InvalidSpec(f"unknown emit flags {sorted(bad)}")

    output_dir = getattr(args, "out", None) or resolve(
        doc.get("output_dir", ".")
    )
    return PipelineConfig(
        schema=_schema_from_config(doc, spec),
        experiment=experiment,
        output_dir=output_dir,
        emit=frozenset(emit),
        benign_label=doc.get("benign_label", "BENIGN"),
        csv_inputs=csv_inputs,
        synthetic=synthetic,
    )


def _load_role_datasets(cfg: PipelineConfig):
    """Benign / known-attack / novel-attack datasets per the config.

    When the inputs are CSV files, a per-role sanitization report is
    written next to the other artifacts as sanitization.json.
    """
    combo = cfg.experiment.combination
    if cfg.synthetic is not None:
        spec = cfg.synthetic["spec"]
        pool = synthesize_flows(
            spec, cfg.synthetic["rows_per_class"],
            seed=(cfg.experiment.master_seed, 104729),
        )
        benign = filter_label(pool, cfg.benign_label)
        pre_attack = filter_label(pool, combo.pre_attack)
        post = filter_label(pool, combo.post_attack)
        return benign, pre_attack, post

    reports = {}

    def load(role, path, label):
        ds = parse_flow_csv(path, cfg.schema)
        reports[role] = ds.report.to_json_dict()
        if len(set(ds.labels)) > 1:
            ds = filter_label(ds, label)
        return ds

    benign = load("benign", cfg.csv_inputs["benign_csv"], cfg.benign_label)
    pre_attack = load(
        "pre_attack", cfg.csv_inputs["pre_attack_csv"], combo.pre_attack
    )
    post = load("post_attack", cfg.csv_inputs["post_attack_csv"],
                combo.post_attack)
    os.makedirs(cfg.output_dir, exist_ok=True)
    _dump_json(reports, os.path.join(cfg.output_dir, "sanitization.json"))
    return benign, pre_attack, post


def cmd_synth(args) -> int:
    spec = SyntheticSpec.from_json(open(_require_path(args.spec)).read())
    dataset = synthesize_flows(spec, args.n, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    written = []
    for label in spec.classes:
        part = filter_label(dataset, label)
        slug = "".join(
            ch.lower() if ch.isalnum() else "_" for ch in label
        ).strip("_")
        path = os.path.join(args.out, f"{slug}.csv")
        serialize_flow_csv(part, path)
        written.append(path)
    for path in written:
        print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_pipeline_config(args.config, args)
    exp = cfg.experiment
    benign, pre_attack, _ = _load_role_datasets(cfg)
    pre = binary_dataset(benign, pre_attack, seed=(exp.master_seed, 0, 0))
    rng = rng_from(exp.master_seed, 0, 1)
    n_hold = max(1, int(round(exp.holdout_fraction * len(pre))))
    perm = rng.permutation(len(pre))
    train_ds = subset(pre, perm[n_hold:])
    holdout = subset(pre, perm[:n_hold])
    model = train(exp.regressor, train_ds, seed=(exp.master_seed, 0, 2))
    holdout_acc = evaluate_accuracy(model, holdout)

    os.makedirs(cfg.output_dir, exist_ok=True)
    model_path = os.path.join(cfg.output_dir, "model.json")
    with open(model_path, "w") as fh:
        fh.write(model_to_json(model))
    report = {
        "kind": exp.regressor.kind,
        "n_train": len(train_ds),
        "n_holdout": len(holdout),
        "train_accuracy": model.train_report.train_accuracy,
        "holdout_accuracy": holdout_acc,
        "master_seed": exp.master_seed,
    }
    _dump_json(report, os.path.join(cfg.output_dir, "train_report.json"))
    print(
        f"trained {exp.regressor.kind}: train accuracy "
        f"{model.train_report.train_accuracy:.4f}, holdout accuracy "
        f"{holdout_acc:.4f} -> {model_path}"
    )
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = load_pipeline_config(args.config, args)
    benign, pre_attack, post = _load_role_datasets(cfg)
    log.info(
        "running experiment: %d iterations x %d sequences",
        cfg.experiment.n_iterations, cfg.experiment.n_sequences,
    )
    report = run_experiment(cfg.experiment, benign, pre_attack, post)

    os.makedirs(cfg.output_dir, exist_ok=True)
    _dump_json(
        report_to_json_dict(report),
        os.path.join(cfg.output_dir, "report.json"),
    )
    if "cox" in cfg.emit:
        aggregate_cox_to_csv(
            report, os.path.join(cfg.output_dir, "cox_table.csv")
        )
        for it in report.successes:
            write_survival_table(
                it.results,
                report.feature_names,
                os.path.join(
                    cfg.output_dir, f"survival_iter{it.iteration:02d}.csv"
                ),
            )
    if "km" in cfg.emit:
        km_to_csv(report.pooled_km,
                  os.path.join(cfg.output_dir, "km_curve.csv"))
    if "svg" in cfg.emit:
        combo = cfg.experiment.combination
        title = (f"{combo.pre_attack} trained, {combo.post_attack} injected "
                 f"({cfg.experiment.regressor.kind})")
        with open(os.path.join(cfg.output_dir, "km.svg"), "w") as fh:
            fh.write(km_svg(report.pooled_km, title=title))
    print(
        f"detection rate {report.detection_rate:.4f} over "
        f"{len(report.successes)}/{cfg.experiment.n_iterations} iterations; "
        f"{report.n_converged} converged fits; selected features: "
        f"{', '.join(report.selected_features) or '(none)'}"
    )
    return EXIT_OK


def cmd_cox(args) -> int:
    records, names = read_survival_table(_require_path(args.table))
    options = CoxOptions(ridge=args.ridge, tol=args.tol, max_iter=args.max_iter)
    model = cox_fit(records, options, feature_names=names)
    os.makedirs(args.out, exist_ok=True)
    table_path = os.path.join(args.out, "cox_table.csv")
    cox_to_csv(model, table_path)
    _dump_json(
        cox_convergence_report(model),
        os.path.join(args.out, "cox_convergence.json"),
    )
    print(
        f"fit {len(names)} covariates on {len(records)} records: "
        f"converged={model.converged} iterations={model.iterations} "
        f"-> {table_path}"
    )
    return EXIT_OK


def cmd_km(args) -> int:
    records, _ = read_survival_table(_require_path(args.table))
    curve = km_fit(records)
    os.makedirs(args.out, exist_ok=True)
    curve_path = os.path.join(args.out, "km_curve.csv")
    km_to_csv(curve, curve_path)
    if args.svg:
        with open(os.path.join(args.out, "km.svg"), "w") as fh:
            fh.write(km_svg(curve))
    n_events = int(curve.n_event.sum()) if curve.times.size else 0
    print(
        f"{curve.n_total} records, {n_events} events over "
        f"{curve.times.size} distinct times -> {curve_path}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowhazard",
        description=(
            "Survival analysis of novelty detection in network-flow "
            "classifiers"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic flow CSVs per class")
    p.add_argument("--spec", required=True, help="synthetic spec JSON")
    p.add_argument("--n", type=int, default=1000, help="rows per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one classifier on pre-novelty data")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--out", default=None, help="override output directory")
    p.add_argument("--seed", type=int, default=None, help="override master seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pipeline", help="run the full injection experiment")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--out", default=None, help="override output directory")
    p.add_argument("--seed", type=int, default=None, help="override master seed")
    p.add_argument(
        "--emit", default=None,
        help="comma-separated artifact flags: km,cox,json,svg",
    )
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("cox", help="fit proportional hazards on a survival table")
    p.add_argument("--table", required=True, help="survival table CSV")
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_cox)

    p = sub.add_parser("km", help="fit a Kaplan-Meier curve on a survival table")
    p.add_argument("--table", required=True, help="survival table CSV")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--svg", action="store_true", help="also emit km.svg")
    p.set_defaults(func=cmd_km)

    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FlowHazardError as err:
        log.debug("command failed", exc_info=True)
        return _fail(err)


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
