"""Command-line entry point: ``symptom-forecast <command>``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 internal invariant failure.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import domain, synthgen
from .baselines import NaivePriorClassifier, PreviousValueClassifier
from .domain import DataError, ModelVariant
from .explain import MissingCoverError, importance_summary
from .gbdt import GbdtParams, LeafwiseGBDTClassifier
from .harness import cv_depth_sweep, run_experiment, write_table
from .metrics import CLASSES, evaluate
from .sampling import smote_for_variant, write_balanced

EXIT_DATA = 3
EXIT_INVARIANT = 4


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (click.exceptions.Exit, click.exceptions.Abort, click.ClickException):
            raise
        except (DataError, MissingCoverError, ValueError, KeyError, OSError) as exc:
            click.echo(f"data error: {exc}", err=True)
            ctx.exit(EXIT_DATA)
        except AssertionError as exc:
            click.echo(f"invariant failure: {exc}", err=True)
            ctx.exit(EXIT_INVARIANT)


def parse_depths(text: str) -> list:
    """``"1..25"``, ``"3"`` or ``"1,2,8"``."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = (int(p) for p in text.split("..", 1))
            depths = list(range(lo, hi + 1))
        else:
            depths = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise click.BadParameter(f"cannot parse depths {text!r}; use e.g. 1..25 or 1,2,8") from None
    if not depths or min(depths) < 1:
        raise click.BadParameter("depths must be a non-empty set of integers >= 1")
    return sorted(set(depths))


def _variant(_ctx, _param, value):
    return ModelVariant.parse(value) if value else None


VARIANT = click.Choice(["lp1", "lp2", "lt1", "lt2"], case_sensitive=False)


def _boost_options(fn):
    fn = click.option("--rounds", default=100, show_default=True, help="Boosting rounds.")(fn)
    fn = click.option("--learning-rate", default=0.1, show_default=True)(fn)
    fn = click.option("--max-leaves", default=31, show_default=True)(fn)
    fn = click.option("--min-leaf", default=20, show_default=True, help="Minimum samples per leaf.")(fn)
    return fn


def _params(rounds, learning_rate, max_leaves, min_leaf, depth=6, seed=0) -> GbdtParams:
    return GbdtParams(
        max_depth=depth, num_rounds=rounds, learning_rate=learning_rate, max_leaves=max_leaves,
        min_samples_per_leaf=min_leaf, rng_seed=seed,
    ).validate()


def _write_json(path, doc) -> None:
    with open(domain.ensure_path(path), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


@click.group(cls=_Group)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Forecast next-visit symptom levels with boosted trees."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Cohort JSON.")
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, help="Overrides rng_seed from the config.")
@click.option("--n-patients", type=int, help="Overrides n_patients from the config.")
def synth(config_path, out_dir, seed, n_patients):
    """Generate a synthetic cohort: profiles.csv, surveys.csv, audit.json."""
    config = synthgen.CohortConfig.from_json(config_path) if config_path else synthgen.CohortConfig()
    if seed is not None:
        config.rng_seed = seed
    if n_patients is not None:
        config.n_patients = n_patients
    config.validate()
    profiles, surveys = synthgen.generate(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    domain.write_profiles(profiles, out / "profiles.csv")
    domain.write_surveys(surveys, out / "surveys.csv")
    _write_json(out / "audit.json", {"config": config.to_dict(), **synthgen.audit(profiles, surveys, config)})
    click.echo(f"{len(profiles)} patients, {len(surveys)} surveys -> {out}")


@cli.command()
@click.option("--profiles", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--surveys", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def ingest(profiles, surveys, out):
    """Turn profile and survey tables into consecutive-visit transitions."""
    prof, surv = domain.ingest_csv(profiles, surveys)
    examples = domain.build_transitions(prof, surv)
    domain.write_transitions(examples, domain.ensure_path(out))
    click.echo(f"{len(examples)} transitions -> {out}")


@cli.command()
@click.option("--in", "in_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--date", "split_date", default="2017-10-04", show_default=True)
@click.option("--out-train", type=click.Path(dir_okay=False), required=True)
@click.option("--out-test", type=click.Path(dir_okay=False), required=True)
def split(in_path, split_date, out_train, out_test):
    """Split transitions by target survey date."""
    try:
        date = domain.parse_date(split_date)
    except ValueError:
        raise click.BadParameter(f"not an ISO date: {split_date!r}", param_hint="--date") from None
    parts = domain.date_split(domain.read_transitions(in_path), date)
    domain.write_transitions(parts.train, domain.ensure_path(out_train))
    domain.write_transitions(parts.test, domain.ensure_path(out_test))
    total = len(parts.train) + len(parts.test)
    frac = len(parts.train) / total if total else 0.0
    click.echo(f"train {len(parts.train)} ({frac:.1%}), test {len(parts.test)}")


@cli.command()
@click.option("--train", "train_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--variant", type=VARIANT, callback=_variant, required=True)
@click.option("--depths", default="1..25", show_default=True, help="Range like 1..25 or a list 1,2,8.")
@click.option("--seed", default=0, show_default=True)
@click.option("--folds", default=5, show_default=True)
@click.option("--smote/--no-smote", default=True, show_default=True)
@click.option("--jobs", default=1, show_default=True, help="Folds fitted in parallel.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_boost_options
def cv(train_path, variant, depths, seed, folds, smote, jobs, out, rounds, learning_rate, max_leaves, min_leaf):
    """Patient-grouped cross-validation over max_depth."""
    depth_list = parse_depths(depths)
    examples = domain.read_transitions(train_path)
    X, y = domain.to_matrix(examples, variant)
    params = _params(rounds, learning_rate, max_leaves, min_leaf, seed=seed)
    result = cv_depth_sweep(X, y, domain.patient_ids(examples), variant, depth_list, params, seed, folds, smote, jobs)
    doc = {"variant": variant.name, "seed": seed, "smote": smote, **result.to_dict()}
    _write_json(out, doc)
    click.echo(f"{variant.name}: selected depth {result.selected_depth} "
               f"(mean WMAE {result.mean_scores[result.selected_depth]:.4f})")


@cli.command()
@click.option("--train", "train_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--variant", type=VARIANT, callback=_variant, required=True)
@click.option("--depth", default=6, show_default=True)
@click.option("--smote/--no-smote", default=True, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--balanced-out", type=click.Path(dir_okay=False), help="Also write the SMOTE-balanced training set.")
@_boost_options
def train(train_path, variant, depth, smote, seed, out, balanced_out, rounds, learning_rate, max_leaves, min_leaf):
    """Fit one model variant and save it as JSON."""
    examples = domain.read_transitions(train_path)
    X, y = domain.to_matrix(examples, variant)
    if len(y) == 0:
        raise DataError(f"{train_path} holds no transitions")
    params = _params(rounds, learning_rate, max_leaves, min_leaf, depth=depth, seed=seed)
    if smote:
        sm = smote_for_variant(variant, random_state=seed)
        Xb, yb = sm.fit_resample(X, y)
        mask = sm.synthetic_mask_
    else:
        Xb, yb, mask = X, y, np.zeros(len(y), dtype=bool)
    if balanced_out:
        write_balanced(domain.ensure_path(balanced_out), Xb, yb, mask, variant)
    model = LeafwiseGBDTClassifier(
        max_depth=params.max_depth, num_rounds=params.num_rounds, learning_rate=params.learning_rate,
        max_leaves=params.max_leaves, min_samples_per_leaf=params.min_samples_per_leaf,
        categorical_features=tuple(variant.categorical_indices), classes=CLASSES, random_state=seed,
    ).fit(Xb, yb)
    model.feature_names_ = list(variant.feature_names)
    meta = {
        "variant": variant.name,
        "seed": seed,
        "smote": smote,
        "n_train": int(len(y)),
        "n_synthetic": int(mask.sum()),
        # the naive-prior baseline needs the training majority, which the test set cannot supply
        "np_class": int(NaivePriorClassifier().fit(X, y).dominant_class_),
    }
    model.save(domain.ensure_path(out), meta=meta)
    click.echo(f"{variant.name} depth {depth}: {len(model.trees_)} trees -> {out}")


@cli.command(name="evaluate")
@click.option("--model", "model_paths", type=click.Path(exists=True, dir_okay=False), multiple=True, required=True,
              help="Repeat for both variants of a symptom.")
@click.option("--test", "test_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--baselines", default="np,pv", show_default=True, help="Comma list from np, pv; empty for none.")
@click.option("--train", "train_path", type=click.Path(exists=True, dir_okay=False),
              help="Fit NP here instead of using the majority class stored with the model.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--table", type=click.Path(dir_okay=False))
def evaluate_cmd(model_paths, test_path, baselines, train_path, out, table):
    """Score models and baselines on a test set."""
    wanted = [b.strip().lower() for b in baselines.split(",") if b.strip()]
    unknown = set(wanted) - {"np", "pv"}
    if unknown:
        raise click.BadParameter(f"unknown baselines {sorted(unknown)}", param_hint="--baselines")
    models = [LeafwiseGBDTClassifier.load(p) for p in model_paths]
    variants = [ModelVariant.parse(m.meta_.get("variant", "")) for m in models]
    symptoms = {v.symptom for v in variants}
    if len(symptoms) != 1:
        raise click.BadParameter("all models must forecast the same symptom", param_hint="--model")
    symptom = symptoms.pop()
    examples = domain.read_transitions(test_path)
    reference = ModelVariant.for_symptom(symptom)[1]
    X_ref, y_test = domain.to_matrix(examples, reference)

    reports = {}
    if "np" in wanted:
        if train_path:
            X_tr, y_tr = domain.to_matrix(domain.read_transitions(train_path), reference)
            np_model = NaivePriorClassifier().fit(X_tr, y_tr)
        else:
            np_model = NaivePriorClassifier()
            np_model.dominant_class_ = int(models[0].meta_["np_class"])
        reports["NP"] = evaluate(y_test, np_model.predict(X_ref))
    if "pv" in wanted:
        reports["PV"] = evaluate(y_test, PreviousValueClassifier.for_variant(reference).fit().predict(X_ref))
    for model, variant in zip(models, variants):
        X, _ = domain.to_matrix(examples, variant)
        reports[variant.name] = evaluate(y_test, model.predict(X))

    _write_json(out, {
        "symptom": symptom,
        "test_hash": domain.dataset_hash(examples),
        "n_test": len(examples),
        "reports": {k: r.to_dict() for k, r in reports.items()},
    })
    if table:
        write_table(domain.ensure_path(table), list(reports.values()), list(reports))
    click.echo(", ".join(f"{k} WMAE {r.wmae:.4f}" for k, r in reports.items()))


@cli.command()
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--max-rows", type=int, help="Explain only the first N rows.")
def explain(model_path, data_path, out, max_rows):
    """Mean |SHAP| per (feature, class) plus total split gain, as CSV."""
    model = LeafwiseGBDTClassifier.load(model_path)
    variant = ModelVariant.parse(model.meta_.get("variant", ""))
    examples = domain.read_transitions(data_path)
    if max_rows is not None:
        examples = examples[:max_rows]
    X, _ = domain.to_matrix(examples, variant)
    summary = importance_summary(model, X, list(variant.feature_names))
    summary.write_csv(domain.ensure_path(out))
    click.echo(f"{variant.name}: " + " > ".join(summary.ranking()))


@cli.command()
@click.option("--train", "train_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--test", "test_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--symptom", type=click.Choice(["pain", "tiredness"]), required=True)
@click.option("--date", "split_date", default="2017-10-04", show_default=True, help="Split date, for the report.")
@click.option("--depths", default="1..25", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--jobs", default=1, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="report.json")
@click.option("--table", type=click.Path(dir_okay=False), help="table.csv")
@_boost_options
def experiment(train_path, test_path, symptom, split_date, depths, seed, jobs, out, table, rounds, learning_rate, max_leaves,
               min_leaf):
    """CV depth selection, retraining and four-way evaluation for one symptom."""
    train_ex = domain.read_transitions(train_path)
    test_ex = domain.read_transitions(test_path)
    parts = domain.SplitDataset(train=train_ex, test=test_ex, split_date=domain.parse_date(split_date))
    params = _params(rounds, learning_rate, max_leaves, min_leaf, seed=seed)
    report = run_experiment(parts, symptom, params, seed, parse_depths(depths), n_jobs=jobs)
    _write_json(out, report.to_dict())
    if table:
        report.write(table_path=domain.ensure_path(table))
    click.echo(", ".join(f"{k} WMAE {r.wmae:.4f}" for k, r in report.reports.items()))


def main(argv=None):
    return cli.main(args=argv, prog_name="symptom-forecast")


if __name__ == "__main__":
    sys.exit(main())
