"""Command-line front end: simulate, fit, compare, test.

Every command is deterministic given its config and seed: outputs carry no
timestamps, floats are written at repr precision, and JSON keys are sorted.
Exit codes: 0 success, 1 validation/parse error, 2 estimation failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataio
from .em import FitOptions, FitResult, e_step, fit
from .errors import (DataFormatError, DegenerateLikelihoodError,
                     EstimationError, SpecValidationError)
from .inference import (BootstrapOptions, bic, bic_star, check_nested,
                        embed_params, lr_test, model_table)
from .likelihood import Dataset
from .model_spec import require_valid
from .simulate import ArmTemplate, DesignPlan, paper_fixture, simulate


def _add_fit_flags(parser) -> None:
    parser.add_argument("--starts", type=int, default=5,
                        help="number of random EM starts (default 5)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--tol", type=float, default=1e-8,
                        help="relative loglik convergence threshold")
    parser.add_argument("--max-iter", type=int, default=1000)


def _fit_options(args) -> FitOptions:
    return FitOptions(n_starts=args.starts, seed=args.seed, tol=args.tol,
                      max_iter=args.max_iter)


def _load_inputs(args):
    spec, covariate_names = dataio.load_model_config(args.model)
    require_valid(spec)
    data = dataio.load_dataset(args.data, args.covariates, spec, covariate_names)
    data_hash = dataio.file_sha256(args.data, args.covariates)
    return spec, covariate_names, data, data_hash


def _write_fit_outputs(out_dir: Path, result: FitResult, data: Dataset,
                       data_hash: str, args) -> None:
    spec = result.spec
    dataio.write_json(out_dir / "params.json",
                      dataio.params_to_dict(result.params, spec))
    n = data.n_subjects
    total = data.total_trials
    summary = {
        "loglik": result.loglik,
        "n_free_params": result.n_free_params,
        "bic": bic(result.loglik, result.n_free_params, n),
        "bic_star": bic_star(result.loglik, result.n_free_params, total),
        "n_iter": result.n_iter,
        "converged": result.converged,
        "start_logliks": [None if np.isnan(v) else v for v in result.start_logliks],
        "notes": list(result.notes),
        "n_subjects": n,
        "total_trials": total,
        "data_sha256": data_hash,
        "seed": args.seed,
        "n_starts": args.starts,
        "tol": args.tol,
        "max_iter": args.max_iter,
    }
    dataio.write_json(out_dir / "summary.json", summary)

    post, _ = e_step(data, spec, result.params)
    k = spec.n_states
    with (out_dir / "posteriors.csv").open("w", newline="") as handle:
        handle.write("subject_id,occasion,map_state,"
                     + ",".join(f"p_state_{c + 1}" for c in range(k)) + "\n")
        for i, sid in enumerate(data.subject_ids):
            for t in range(int(data.lengths[i])):
                probs = post.state[i, t]
                cells = ",".join(f"{v:.12g}" for v in probs)
                handle.write(f"{sid},{t + 1},{int(probs.argmax()) + 1},{cells}\n")


def cmd_fit(args) -> int:
    spec, _names, data, data_hash = _load_inputs(args)
    result = fit(data, spec, _fit_options(args))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_fit_outputs(out_dir, result, data, data_hash, args)
    print(f"loglik {result.loglik:.6f}  free params {result.n_free_params}  "
          f"converged {result.converged}  ({out_dir})")
    return 0


def _shared_int(values) -> int:
    unique = set(values)
    if len(unique) != 1:
        raise DataFormatError(f"inconsistent values across fits: {sorted(unique)}")
    return unique.pop()


def _format_table(rows) -> str:
    width = max([len(r.label) for r in rows] + [5])
    lines = [f"{'model':<{width}}  {'loglik':>12}  {'par.':>5}  "
             f"{'BIC':>10}  {'BIC*':>10}"]
    for r in rows:
        b = f"{r.bic:>9.1f}{'*' if r.bic_is_min else ' '}"
        s = f"{r.bic_star:>9.1f}{'*' if r.bic_star_is_min else ' '}"
        lines.append(f"{r.label:<{width}}  {r.loglik:>12.4f}  "
                     f"{r.n_free_params:>5d}  {b:>10}  {s:>10}")
    lines.append("(* = minimum among models with the same parameter count)")
    return "\n".join(lines)


def cmd_compare(args) -> int:
    entries = []
    if args.fits:
        if args.k_range is not None:
            raise DataFormatError("give either fit directories or --k-range, not both")
        hashes, ns, totals = [], [], []
        for fit_dir in args.fits:
            summary = dataio.read_json(Path(fit_dir) / "summary.json")
            entries.append((Path(fit_dir).name, summary["loglik"],
                            summary["n_free_params"]))
            hashes.append(summary["data_sha256"])
            ns.append(summary["n_subjects"])
            totals.append(summary["total_trials"])
        if len(set(hashes)) != 1:
            raise DataFormatError("fits were produced from different datasets")
        n, total = _shared_int(ns), _shared_int(totals)
    else:
        if args.k_range is None:
            raise DataFormatError("need fit directories or --data/--model/--k-range")
        lo, _, hi = args.k_range.partition(":")
        k_values = range(int(lo), int(hi) + 1)
        spec, _names, data, _hash = _load_inputs(args)
        n, total = data.n_subjects, data.total_trials
        for k in k_values:
            spec_k = replace(spec, n_states=k)
            result = fit(data, spec_k, _fit_options(args))
            entries.append((f"k={k}", result.loglik, result.n_free_params))

    rows = model_table(entries, n, total)
    text = _format_table(rows)
    print(text)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "comparison.txt").write_text(text + "\n")
    with (out_dir / "comparison.csv").open("w", newline="") as handle:
        handle.write("label,loglik,n_free_params,bic,bic_star,"
                     "bic_is_min,bic_star_is_min\n")
        for r in rows:
            handle.write(f"{r.label},{r.loglik!r},{r.n_free_params},"
                         f"{r.bic!r},{r.bic_star!r},"
                         f"{int(r.bic_is_min)},{int(r.bic_star_is_min)}\n")
    return 0


def cmd_test(args) -> int:
    spec_null, names_null = dataio.load_model_config(args.null)
    spec_alt, names_alt = dataio.load_model_config(args.alt)
    require_valid(spec_null)
    require_valid(spec_alt)
    if names_null != names_alt:
        raise DataFormatError("null and alternative declare different covariates")
    data = dataio.load_dataset(args.data, args.covariates, spec_alt, names_alt)
    problems = check_nested(spec_null, spec_alt)
    if problems:
        raise DataFormatError("models are not nested: " + "; ".join(problems))
    options = _fit_options(args)
    fit_null = fit(data, spec_null, options)
    warm = embed_params(fit_null.params, spec_null, spec_alt)
    fit_alt = fit(data, spec_alt, options, extra_starts=[warm])
    bootstrap = None
    if args.bootstrap:
        bootstrap = BootstrapOptions(
            n_replicates=args.bootstrap, seed=args.seed,
            fit_options=replace(options, n_starts=1), workers=args.workers)
    result = lr_test(fit_null, fit_alt, data=data, bootstrap=bootstrap)
    payload = {
        "statistic": result.statistic,
        "df": result.df,
        "p_value_chisq": result.p_value_chisq,
        "p_value_bootstrap": result.p_value_bootstrap,
        "boundary": result.boundary,
        "n_bootstrap": result.n_bootstrap,
        "loglik_null": fit_null.loglik,
        "loglik_alt": fit_alt.loglik,
        "n_free_params_null": fit_null.n_free_params,
        "n_free_params_alt": fit_alt.n_free_params,
    }
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataio.write_json(out_dir / "lr_test.json", payload)
    boot = ("" if result.p_value_bootstrap is None
            else f"  bootstrap p {result.p_value_bootstrap:.4f}")
    flag = "  [boundary]" if result.boundary else ""
    print(f"D {result.statistic:.4f}  df {result.df}  "
          f"chi2 p {result.p_value_chisq:.4f}{boot}{flag}")
    return 0


def _plan_from_json(raw: dict) -> DesignPlan:
    arms = []
    for arm in raw["arms"]:
        items = tuple(int(j) - 1 for j in arm["items"])
        regimes = tuple(-1 if r is None else int(r) - 1 for r in arm["regimes"])
        arms.append(ArmTemplate(items, regimes))
    age_range = raw.get("age_range")
    return DesignPlan(
        n_subjects=int(raw["n_subjects"]),
        arms=tuple(arms),
        age_range=None if age_range is None else (float(age_range[0]),
                                                  float(age_range[1])),
        assignment=str(raw.get("assignment", "random_halves")),
    )


def cmd_simulate(args) -> int:
    if args.fixture is not None:
        if args.fixture != "paper":
            raise DataFormatError(f"unknown fixture {args.fixture!r}")
        spec, params, plan = paper_fixture(115 if args.n is None else args.n)
        covariate_names = ["age"]
    else:
        if not (args.model and args.params and args.plan):
            raise DataFormatError(
                "simulate needs --fixture or all of --model/--params/--plan")
        spec, covariate_names = dataio.load_model_config(args.model)
        require_valid(spec)
        params = dataio.params_from_dict(dataio.read_json(args.params), spec)
        plan = _plan_from_json(dataio.read_json(args.plan))
        if args.n is not None:
            plan = replace(plan, n_subjects=args.n)

    sim = simulate(params, spec, plan, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_rows = dataio.write_data_file(out_dir / "data.csv", sim.data)
    dataio.write_covariates_file(out_dir / "covariates.csv", sim.data,
                                 covariate_names)
    dataio.write_truth_file(out_dir / "truth.csv", sim.data, sim.states)
    dataio.write_json(out_dir / "model.json",
                      dataio.model_config_to_dict(spec, covariate_names))
    manifest = {
        "seed": args.seed,
        "n_subjects": sim.data.n_subjects,
        "n_trial_rows": n_rows,
        "arm_of": {sid: int(a) for sid, a in zip(sim.data.subject_ids, sim.arm_of)},
    }
    dataio.write_json(out_dir / "manifest.json", manifest)
    print(f"wrote {n_rows} trial rows for {sim.data.n_subjects} subjects ({out_dir})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lmirt",
        description="Latent Markov item-response models: simulate, fit, "
                    "compare and test.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a dataset")
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--fixture", choices=["paper"],
                       help="use the built-in benchmark model")
    p_sim.add_argument("--n", type=int, default=None,
                       help="subject count (fixture default 115)")
    p_sim.add_argument("--model", help="model config (generic mode)")
    p_sim.add_argument("--params", help="parameter file (generic mode)")
    p_sim.add_argument("--plan", help="design plan file (generic mode)")
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="estimate a model")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--covariates")
    p_fit.add_argument("--model", required=True)
    p_fit.add_argument("--out", required=True)
    _add_fit_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_cmp = sub.add_parser("compare", help="tabulate BIC/BIC* across fits")
    p_cmp.add_argument("fits", nargs="*", help="fit output directories")
    p_cmp.add_argument("--out", required=True)
    p_cmp.add_argument("--data")
    p_cmp.add_argument("--covariates")
    p_cmp.add_argument("--model")
    p_cmp.add_argument("--k-range", help="state-count sweep, e.g. 1:4")
    _add_fit_flags(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_test = sub.add_parser("test", help="likelihood-ratio test of nested models")
    p_test.add_argument("--data", required=True)
    p_test.add_argument("--covariates")
    p_test.add_argument("--null", required=True, help="constrained model config")
    p_test.add_argument("--alt", required=True, help="larger model config")
    p_test.add_argument("--out", required=True)
    p_test.add_argument("--bootstrap", type=int, default=0,
                        help="parametric-bootstrap replicates for the p-value")
    p_test.add_argument("--workers", type=int, default=1,
                        help="process parallelism cap for bootstrap replicates")
    _add_fit_flags(p_test)
    p_test.set_defaults(func=cmd_test)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DataFormatError, SpecValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (EstimationError, DegenerateLikelihoodError) as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
