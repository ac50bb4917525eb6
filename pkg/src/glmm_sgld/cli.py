"""Command-line front end.

Verbs: ``generate`` (synthetic datasets), ``fit`` (one SGLD chain),
``correct`` (post-hoc covariance correction of a saved chain), ``gibbs``
(full-data comparator for the logistic model), ``bench`` (replicated
experiment grid with metrics), and ``report`` (summary tables from a metrics
CSV). Every flag has a config-file equivalent; values from the config file
override built-in defaults, and command-line flags override both.
"""
from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .correction import posthoc_correct, write_correction_report
from .data_io import (
    load_chain,
    load_config,
    load_dataset,
    load_truth,
    merge_options,
    meta_path,
    save_chain,
    save_dataset,
    truth_path,
    write_manifest,
)
from .datagen import DESIGNS, generate_data
from .metrics import (
    format_report,
    load_metrics,
    rows_from_chain,
    rows_from_moments,
    save_metrics,
    save_report_csv,
    summarize,
)
from .model import Dataset, GlmmModel
from .priors import PriorSpec
from .reference import (
    full_gibbs_bernoulli,
    lmm_posterior,
    lmm_ppd,
    simulate_ppd_from_chain,
)
from .sgld import Chain, SgldConfig, run_chain

PRIOR_DEFAULTS = {
    "beta_variance": 100.0,
    "scale_df": 3.0,
    "scale_s": 2.0,
    "alpha_variance": 100.0,
}
SGLD_DEFAULTS = {
    "batch_size": 5,
    "delta": None,
    "n_inner_draws": 100,
    "inner_burn_in": 100,
    "n_iterations": None,
    "time_budget": None,
    "budget_seconds": None,
    "thin": None,
    "target_samples": 5000,
    "warmup_iterations": None,
    "seed": 0,
}
EXPERIMENT_DEFAULTS = {
    "design": "lmm-fixed",
    "n": 100,
    "n_i": 10,
    "replications": 5,
    "seed": 1,
    "output_dir": "runs/bench",
    "batch_sizes": [5],
    "deltas": "auto",
    "gibbs_sweeps": 0,
    "workers": 1,
    "stable_timings": False,
    "keep_chains": True,
}
TRUTH_DEFAULTS = {"beta": None, "sigma2": None, "cov": None}
PPD_DESIGN_ROW = np.array([[1.0, 1.0]])  # new-subject design row for PPD checks


# ---------------------------------------------------------------------------
# option plumbing


def _float_list(value) -> list[float]:
    if value is None:
        return []
    if isinstance(value, (list, tuple, np.ndarray)):
        return [float(v) for v in value]
    return [float(part) for part in str(value).split(",") if part.strip()]


def _int_list(value) -> list[int]:
    return [int(v) for v in _float_list(value)]


def _square_matrix(value) -> np.ndarray | None:
    if value is None:
        return None
    if isinstance(value, str):
        arr = np.asarray(_float_list(value))
    else:
        arr = np.asarray(value, dtype=float)
    if arr.ndim == 2:
        return arr
    flat = arr.ravel()
    side = int(round(flat.size ** 0.5))
    if side * side != flat.size:
        raise ValueError("covariance needs a square number of entries")
    return flat.reshape(side, side)


def _opt_float(value) -> float | None:
    if value in (None, "", "auto", "none"):
        return None
    return float(value)


def _opt_int(value) -> int | None:
    return None if value in (None, "", "none") else int(value)


def _section(sections: dict, name: str, keys) -> dict:
    """Subset of one config section restricted to the given keys."""
    return {k: v for k, v in sections.get(name, {}).items() if k in keys}


def _load_sections(args) -> dict:
    config = getattr(args, "config", None)
    return load_config(config) if config else {}


def _flags(args, names: dict) -> dict:
    return {key: getattr(args, attr, None) for key, attr in names.items()}


def build_prior(sections: dict) -> PriorSpec:
    merged = merge_options(PRIOR_DEFAULTS, sections.get("prior", {}), {})
    return PriorSpec(**merged)


def build_model(data: Dataset, truth: dict | None, sections: dict, args) -> GlmmModel:
    """Assemble the model for a dataset.

    Family and fixed parameters come from flags, then the [model] config
    section, then the dataset's truth sidecar (the lmm-fixed design pins the
    dispersion and covariance at their generating values).
    """
    cfg = sections.get("model", {})
    design = (truth or {}).get("design")

    family = getattr(args, "family", None) or cfg.get("family") or (truth or {}).get("family")
    if family is None:
        raise ValueError(
            "model family unknown: pass --family, a [model] config section, "
            "or keep the dataset's truth sidecar next to the CSV"
        )

    missingness = getattr(args, "missingness", None)
    if missingness is None and "missingness" in cfg:
        missingness = cfg["missingness"].strip().lower() in ("1", "true", "yes", "on")
    if missingness is None:
        missingness = design == "missingness" or data.w is not None

    fixed_sigma2 = _opt_float(getattr(args, "fixed_sigma2", None))
    if fixed_sigma2 is None and "fixed_sigma2" in cfg:
        fixed_sigma2 = _opt_float(cfg["fixed_sigma2"])
    fixed_cov = _square_matrix(getattr(args, "fixed_cov", None))
    if fixed_cov is None and "fixed_cov" in cfg:
        fixed_cov = _square_matrix(cfg["fixed_cov"])
    if design == "lmm-fixed" and truth is not None:
        if fixed_sigma2 is None:
            fixed_sigma2 = truth["sigma2"]
        if fixed_cov is None:
            fixed_cov = _square_matrix(truth["cov"])

    return GlmmModel.for_data(
        family,
        data,
        fixed_dispersion=fixed_sigma2,
        fixed_cov=fixed_cov,
        missingness=missingness,
    )


def _sgld_config(opts: dict) -> SgldConfig:
    n_iterations = _opt_int(opts.get("n_iterations"))
    time_budget = _opt_float(opts.get("time_budget"))
    budget_seconds = _opt_float(opts.get("budget_seconds"))
    if n_iterations is None and time_budget is None and budget_seconds is None:
        time_budget = 20.0  # desk-scale default: T = 20 units of continuous time
    return SgldConfig(
        minibatch_size=int(opts["batch_size"]),
        delta=_opt_float(opts.get("delta")),
        n_inner_draws=int(opts["n_inner_draws"]),
        inner_burn_in=int(opts["inner_burn_in"]),
        n_iterations=n_iterations,
        time_budget=time_budget,
        budget_seconds=budget_seconds,
        thin=_opt_int(opts.get("thin")),
        target_samples=int(opts["target_samples"]),
        warmup_iterations=_opt_int(opts.get("warmup_iterations")),
        seed=int(opts["seed"]),
        checkpoint_every=_opt_int(opts.get("checkpoint_every")),
        checkpoint_path=opts.get("checkpoint_path"),
    )


def _derived_seed(*key: int) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# verbs


def cmd_generate(args) -> int:
    sections = _load_sections(args)
    exp = merge_options(
        {"design": "lmm-fixed", "n": 100, "n_i": 10, "seed": 1},
        _section(sections, "experiment", ("design", "n", "n_i", "seed")),
        _flags(args, {"design": "design", "n": "n", "n_i": "n_i", "seed": "seed"}),
    )
    tru = merge_options(
        dict(TRUTH_DEFAULTS),
        _section(sections, "truth", TRUTH_DEFAULTS),
        _flags(args, {"beta": "beta", "sigma2": "sigma2", "cov": "cov"}),
    )
    beta = np.asarray(_float_list(tru["beta"])) if tru["beta"] is not None else None
    data, truth = generate_data(
        exp["design"],
        int(exp["n"]),
        int(exp["n_i"]),
        beta=beta,
        sigma2=_opt_float(tru["sigma2"]),
        cov=_square_matrix(tru["cov"]),
        seed=int(exp["seed"]),
    )
    save_dataset(args.out, data, truth)
    print(
        f"wrote {args.out} ({truth['design']}, n={truth['n']}, n_i={truth['n_i']}) "
        f"and {truth_path(args.out)}"
    )
    return 0


def cmd_fit(args) -> int:
    sections = _load_sections(args)
    data = load_dataset(args.data)
    truth = load_truth(args.data)
    model = build_model(data, truth, sections, args)
    prior = build_prior(sections)
    opts = merge_options(
        SGLD_DEFAULTS,
        sections.get("sgld", {}),
        _flags(
            args,
            {
                "batch_size": "batch_size",
                "delta": "delta",
                "n_inner_draws": "inner_draws",
                "inner_burn_in": "inner_burn_in",
                "n_iterations": "iterations",
                "time_budget": "time_budget",
                "budget_seconds": "budget_seconds",
                "thin": "thin",
                "target_samples": "target_samples",
                "warmup_iterations": "warmup_iterations",
                "seed": "seed",
            },
        ),
    )
    opts["checkpoint_every"] = args.checkpoint_every
    opts["checkpoint_path"] = args.checkpoint_path
    config = _sgld_config(opts)
    chain = run_chain(model, data, prior, config, resume_from=args.resume_from)
    if args.stable_timings:
        chain.runtime_seconds = 0.0
    chain.meta.update({"sampler": "sgld", "data": str(args.data)})
    if truth is not None:
        chain.meta["design"] = truth["design"]
    save_chain(args.out, chain)
    print(
        f"wrote {args.out}: {chain.n_samples} samples, eps={chain.step_size:.3e}, "
        f"delta={chain.delta:g}, runtime={chain.runtime_seconds:.1f}s"
    )
    return 0


def _corrected_chain(chain: Chain, result, seconds: float) -> Chain:
    return Chain(
        samples=result.corrected,
        iterations=chain.iterations.copy(),
        initial=chain.initial.copy(),
        final=result.corrected[-1].copy(),
        step_size=chain.step_size,
        delta=chain.delta,
        n_subjects=chain.n_subjects,
        labels=list(chain.labels),
        config=chain.config,
        diagnostics={"lyapunov_residual": result.residual},
        runtime_seconds=seconds,
        meta={**chain.meta, "corrected": True},
    )


def cmd_correct(args) -> int:
    sections = _load_sections(args)
    chain = load_chain(args.chain)
    if chain.meta.get("sampler", "sgld") != "sgld" or chain.config is None:
        raise ValueError("the correction applies to sgld chains with saved configs")
    data = load_dataset(args.data)
    truth = load_truth(args.data)
    model = build_model(data, truth, sections, args)
    start = time.perf_counter()
    result, _ = posthoc_correct(
        model,
        data,
        chain,
        n_draws=args.inner_draws,
        seed=args.seed,
        pass_index=args.pass_index,
    )
    seconds = 0.0 if args.stable_timings else time.perf_counter() - start
    corrected = _corrected_chain(chain, result, seconds)
    corrected.meta["source_chain"] = str(args.chain)
    save_chain(args.out, corrected)
    if args.report:
        write_correction_report(result, args.report)
    print(
        f"wrote {args.out}: Lyapunov residual {result.residual:.2e}, "
        f"map deviation |G-I|_F = {np.linalg.norm(result.g - np.eye(result.g.shape[0])):.3f}"
    )
    return 0


def cmd_gibbs(args) -> int:
    sections = _load_sections(args)
    data = load_dataset(args.data)
    prior = build_prior(sections)
    chain = full_gibbs_bernoulli(
        data,
        prior,
        args.sweeps,
        seed=args.seed,
        burn_in=args.burn_in,
        thin=args.thin,
    )
    if args.stable_timings:
        chain.runtime_seconds = 0.0
    chain.meta["data"] = str(args.data)
    save_chain(args.out, chain)
    print(
        f"wrote {args.out}: {chain.n_samples} samples, "
        f"delta acceptance {chain.diagnostics['acceptance_rate']:.2f}"
    )
    return 0


def cmd_report(args) -> int:
    rows = load_metrics(args.metrics)
    summary = summarize(rows, oracle_method=args.oracle)
    text = format_report(summary)
    if args.out:
        Path(args.out).write_text(text)
    if args.csv:
        save_report_csv(args.csv, summary)
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# bench


def _experiment_options(args) -> dict:
    sections = _load_sections(args)
    opts = merge_options(
        EXPERIMENT_DEFAULTS,
        sections.get("experiment", {}),
        _flags(
            args,
            {
                "design": "design",
                "n": "n",
                "n_i": "n_i",
                "replications": "replications",
                "seed": "seed",
                "output_dir": "output_dir",
                "batch_sizes": "batch_sizes",
                "deltas": "deltas",
                "gibbs_sweeps": "gibbs_sweeps",
                "workers": "workers",
                "stable_timings": "stable_timings",
                "keep_chains": "keep_chains",
            },
        ),
    )
    if opts["design"] not in DESIGNS:
        raise ValueError(f"unknown design {opts['design']!r}; expected one of {DESIGNS}")
    opts["batch_sizes"] = _int_list(opts["batch_sizes"])
    deltas = opts["deltas"]
    opts["deltas"] = [None] if str(deltas).strip() == "auto" else _float_list(deltas)
    if not opts["batch_sizes"] or not opts["deltas"]:
        raise ValueError("batch_sizes and deltas must be non-empty")
    if int(opts["gibbs_sweeps"]) > 0 and opts["design"] != "bernoulli":
        raise ValueError("the gibbs comparator requires the bernoulli design")

    sgld = merge_options(
        SGLD_DEFAULTS,
        sections.get("sgld", {}),
        {
            "n_iterations": getattr(args, "iterations", None),
            "time_budget": getattr(args, "time_budget", None),
            "budget_seconds": getattr(args, "budget_seconds", None),
            "n_inner_draws": getattr(args, "inner_draws", None),
            "inner_burn_in": getattr(args, "inner_burn_in", None),
            "target_samples": getattr(args, "target_samples", None),
        },
    )
    prior = merge_options(PRIOR_DEFAULTS, sections.get("prior", {}), {})
    tru = merge_options(dict(TRUTH_DEFAULTS), sections.get("truth", {}), {})
    return {
        "experiment": opts,
        "sgld": sgld,
        "prior": prior,
        "truth": tru,
    }


def _run_replication(task: dict) -> tuple[int, list, list[str]]:
    """One replication of the experiment grid; returns (rep, rows, files)."""
    exp = task["experiment"]
    rep = task["rep"]
    design, n, n_i = exp["design"], int(exp["n"]), int(exp["n_i"])
    master = int(exp["seed"])
    stable = bool(exp["stable_timings"])
    out_dir = Path(exp["output_dir"])
    rows: list = []
    files: list[str] = []

    tru = task["truth"]
    data, truth = generate_data(
        design,
        n,
        n_i,
        beta=np.asarray(_float_list(tru["beta"])) if tru["beta"] is not None else None,
        sigma2=_opt_float(tru["sigma2"]),
        cov=_square_matrix(tru["cov"]),
        seed=_derived_seed(master, rep, 0),
    )
    if exp["keep_chains"]:
        data_file = out_dir / f"rep{rep:03d}_data.csv"
        save_dataset(data_file, data, truth)
        files += [str(data_file), str(truth_path(data_file))]

    model = GlmmModel.for_data(
        truth["family"],
        data,
        fixed_dispersion=truth["sigma2"] if design == "lmm-fixed" else None,
        fixed_cov=_square_matrix(truth["cov"]) if design == "lmm-fixed" else None,
        missingness=design == "missingness",
    )
    prior = PriorSpec(**task["prior"])
    labels = model.coordinate_labels()

    ppd_truth_var = None
    if design == "lmm-fixed":
        post_mean, post_cov = lmm_posterior(
            data, truth["sigma2"], np.asarray(truth["cov"]),
            prior_variance=prior.beta_variance,
        )
        rows += rows_from_moments(
            post_mean, post_cov, labels,
            design=design, n=n, method="closed-form", replication=rep,
        )
        _, ppd_cov = lmm_ppd(
            PPD_DESIGN_ROW, PPD_DESIGN_ROW, post_mean, post_cov,
            truth["sigma2"], np.asarray(truth["cov"]),
        )
        ppd_truth_var = float(ppd_cov[0, 0])

    def ppd_ratio(chain: Chain, salt: int) -> float | None:
        if ppd_truth_var is None:
            return None
        draws = simulate_ppd_from_chain(
            chain, model, PPD_DESIGN_ROW, PPD_DESIGN_ROW,
            np.random.default_rng(_derived_seed(master, rep, 3, salt)),
        )
        return float(np.log(draws.var(ddof=1) / ppd_truth_var))

    for i_s, s in enumerate(exp["batch_sizes"]):
        for i_d, delta in enumerate(exp["deltas"]):
            sgld_opts = dict(task["sgld"])
            sgld_opts["batch_size"] = s
            sgld_opts["delta"] = delta
            sgld_opts["seed"] = _derived_seed(master, rep, 1, i_s, i_d)
            config = _sgld_config(sgld_opts)
            chain = run_chain(model, data, prior, config)
            start = time.perf_counter()
            result, _ = posthoc_correct(model, data, chain)
            corrected = _corrected_chain(
                chain, result, chain.runtime_seconds + time.perf_counter() - start
            )
            if stable:
                chain.runtime_seconds = 0.0
                corrected.runtime_seconds = 0.0
            cell = f"rep{rep:03d}_s{s}_d{chain.delta:g}"
            common = dict(design=design, n=n, s=s, delta=float(chain.delta), replication=rep)
            rows += rows_from_chain(
                chain, method="sgld",
                ppd_log_variance_ratio=ppd_ratio(chain, 2 * (i_s * 17 + i_d)),
                **common,
            )
            rows += rows_from_chain(
                corrected, method="sgld-corrected",
                ppd_log_variance_ratio=ppd_ratio(corrected, 2 * (i_s * 17 + i_d) + 1),
                **common,
            )
            if exp["keep_chains"]:
                raw_file = out_dir / f"{cell}_sgld.csv"
                cor_file = out_dir / f"{cell}_corrected.csv"
                save_chain(raw_file, chain)
                save_chain(cor_file, corrected)
                files += [str(raw_file), str(meta_path(raw_file)),
                          str(cor_file), str(meta_path(cor_file))]

    if int(exp["gibbs_sweeps"]) > 0:
        gibbs = full_gibbs_bernoulli(
            data, prior, int(exp["gibbs_sweeps"]), seed=_derived_seed(master, rep, 2)
        )
        if stable:
            gibbs.runtime_seconds = 0.0
        rows += rows_from_chain(
            gibbs, method="gibbs",
            design=design, n=n, s=0, delta=float("nan"), replication=rep,
        )
        if exp["keep_chains"]:
            gibbs_file = out_dir / f"rep{rep:03d}_gibbs.csv"
            save_chain(gibbs_file, gibbs)
            files += [str(gibbs_file), str(meta_path(gibbs_file))]

    return rep, rows, files


def run_experiment(options: dict) -> int:
    """Replicated grid: generate, fit, correct, compare; single-writer output.

    Replications run in a worker pool with deterministically derived
    per-replication seeds. Failed replications are logged and skipped; the
    exit code is nonzero when more than 10% fail.
    """
    exp = options["experiment"]
    out_dir = Path(exp["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    replications = int(exp["replications"])
    tasks = [dict(options, rep=rep) for rep in range(replications)]

    results: list[tuple[int, list, list[str]]] = []
    failures: list[int] = []

    def record(rep: int, outcome):
        if isinstance(outcome, Exception):
            failures.append(rep)
            print(f"replication {rep} failed: {outcome}", file=sys.stderr)
        else:
            results.append(outcome)

    workers = int(exp["workers"])
    if workers <= 1:
        for task in tasks:
            try:
                record(task["rep"], _run_replication(task))
            except Exception as exc:  # noqa: BLE001 - replication isolation
                record(task["rep"], exc)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [(task["rep"], pool.submit(_run_replication, task)) for task in tasks]
            for rep, future in futures:
                try:
                    record(rep, future.result())
                except Exception as exc:  # noqa: BLE001 - replication isolation
                    record(rep, exc)

    all_rows = [row for _, rows, _ in results for row in rows]
    all_rows.sort(
        key=lambda r: (
            r.design, r.n, r.s, -1.0 if np.isnan(r.delta) else r.delta,
            r.method, r.parameter, r.replication,
        )
    )
    metrics_file = out_dir / "metrics.csv"
    save_metrics(metrics_file, all_rows)
    summary = summarize(all_rows)
    report_text = format_report(summary)
    (out_dir / "report.txt").write_text(report_text)
    save_report_csv(out_dir / "report.csv", summary)

    chain_files = sorted(name for _, _, fs in results for name in fs)
    write_manifest(
        out_dir / "manifest.json",
        seeds={
            "master": int(exp["seed"]),
            "replications": {
                str(rep): {
                    "data": _derived_seed(int(exp["seed"]), rep, 0),
                    "fit": _derived_seed(int(exp["seed"]), rep, 1, 0, 0),
                    "gibbs": _derived_seed(int(exp["seed"]), rep, 2),
                }
                for rep in range(replications)
            },
        },
        files=[metrics_file, out_dir / "report.csv"] + chain_files,
        extra={"design": exp["design"], "failed_replications": sorted(failures)},
    )
    print(report_text, end="")
    print(f"metrics: {metrics_file} ({len(all_rows)} rows)")
    if failures:
        print(
            f"{len(failures)}/{replications} replications failed: {sorted(failures)}",
            file=sys.stderr,
        )
    return 1 if len(failures) > 0.10 * replications else 0


def cmd_bench(args) -> int:
    return run_experiment(_experiment_options(args))


# ---------------------------------------------------------------------------
# parser


def _add_config(sub):
    sub.add_argument("--config", help="INI config file; flags override it")


def _add_model_flags(sub):
    sub.add_argument("--family", help="gaussian | bernoulli-logit | poisson")
    sub.add_argument(
        "--missingness",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="include the all-zero dropout block",
    )
    sub.add_argument("--fixed-sigma2", dest="fixed_sigma2", help="pin the noise variance")
    sub.add_argument(
        "--fixed-cov",
        dest="fixed_cov",
        help="pin the random-effect covariance (comma-separated, row major)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glmm-sgld",
        description=(
            "Minibatch Langevin sampling for mixed models with a post-hoc "
            "covariance correction"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="simulate a benchmark dataset")
    _add_config(gen)
    gen.add_argument("--design", choices=DESIGNS)
    gen.add_argument("--n", type=int, help="number of subjects")
    gen.add_argument("--n-i", dest="n_i", type=int, help="rows per subject")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--beta", help="comma-separated true fixed effects")
    gen.add_argument("--sigma2", help="true noise variance (gaussian designs)")
    gen.add_argument("--cov", help="true random-effect covariance, row major")
    gen.add_argument("--out", required=True, help="dataset CSV path")
    gen.set_defaults(func=cmd_generate)

    fit = sub.add_parser("fit", help="run one SGLD chain on a dataset")
    _add_config(fit)
    _add_model_flags(fit)
    fit.add_argument("--data", required=True)
    fit.add_argument("--out", required=True, help="chain CSV path")
    fit.add_argument("--batch-size", "-s", dest="batch_size", type=int)
    fit.add_argument("--delta", help="step-size exponent in (0, 1], or 'auto'")
    fit.add_argument("--iterations", type=int, help="outer iteration count")
    fit.add_argument("--time-budget", dest="time_budget", type=float,
                     help="continuous-time budget T (iterations = T / eps)")
    fit.add_argument("--budget-seconds", dest="budget_seconds", type=float,
                     help="wall-clock budget in seconds")
    fit.add_argument("--inner-draws", dest="inner_draws", type=int,
                     help="Monte Carlo draws per subject gradient")
    fit.add_argument("--inner-burn-in", dest="inner_burn_in", type=int)
    fit.add_argument("--thin", type=int)
    fit.add_argument("--target-samples", dest="target_samples", type=int)
    fit.add_argument("--warmup-iterations", dest="warmup_iterations", type=int)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    fit.add_argument("--checkpoint-path", dest="checkpoint_path")
    fit.add_argument("--resume-from", dest="resume_from", help="checkpoint .npz to resume")
    fit.add_argument("--stable-timings", dest="stable_timings", action="store_true",
                     help="record zero runtimes for byte-stable outputs")
    fit.set_defaults(func=cmd_fit)

    cor = sub.add_parser("correct", help="apply the covariance correction to a chain")
    _add_config(cor)
    _add_model_flags(cor)
    cor.add_argument("--chain", required=True)
    cor.add_argument("--data", required=True)
    cor.add_argument("--out", required=True, help="corrected chain CSV path")
    cor.add_argument("--report", help="write the correction report here")
    cor.add_argument("--inner-draws", dest="inner_draws", type=int,
                     help="draws per subject in the fresh noise pass")
    cor.add_argument("--seed", type=int, help="stream seed for the noise pass")
    cor.add_argument("--pass-index", dest="pass_index", type=int, default=0,
                     help="bump to rerun the noise pass on fresh streams")
    cor.add_argument("--stable-timings", dest="stable_timings", action="store_true")
    cor.set_defaults(func=cmd_correct)

    gib = sub.add_parser("gibbs", help="full-data comparator for the logistic model")
    _add_config(gib)
    gib.add_argument("--data", required=True)
    gib.add_argument("--out", required=True)
    gib.add_argument("--sweeps", type=int, default=50_000)
    gib.add_argument("--burn-in", dest="burn_in", type=int)
    gib.add_argument("--thin", type=int, default=1)
    gib.add_argument("--seed", type=int, default=0)
    gib.add_argument("--stable-timings", dest="stable_timings", action="store_true")
    gib.set_defaults(func=cmd_gibbs)

    ben = sub.add_parser("bench", help="replicated experiment grid with metrics")
    _add_config(ben)
    ben.add_argument("--design", choices=DESIGNS)
    ben.add_argument("--n", type=int)
    ben.add_argument("--n-i", dest="n_i", type=int)
    ben.add_argument("--replications", type=int)
    ben.add_argument("--seed", type=int)
    ben.add_argument("--output-dir", dest="output_dir")
    ben.add_argument("--batch-sizes", dest="batch_sizes",
                     help="comma-separated minibatch sizes, e.g. 1,5,10")
    ben.add_argument("--deltas", help="comma-separated exponents, or 'auto'")
    ben.add_argument("--iterations", type=int)
    ben.add_argument("--time-budget", dest="time_budget", type=float)
    ben.add_argument("--budget-seconds", dest="budget_seconds", type=float,
                     help="wall-clock budget per chain in seconds")
    ben.add_argument("--inner-draws", dest="inner_draws", type=int)
    ben.add_argument("--inner-burn-in", dest="inner_burn_in", type=int)
    ben.add_argument("--target-samples", dest="target_samples", type=int)
    ben.add_argument("--gibbs-sweeps", dest="gibbs_sweeps", type=int,
                     help="add a full-data Gibbs comparator (bernoulli design)")
    ben.add_argument("--workers", type=int, help="replication worker processes")
    ben.add_argument("--stable-timings", dest="stable_timings",
                     action=argparse.BooleanOptionalAction, default=None,
                     help="record zero wall-clock so outputs are byte-stable")
    ben.add_argument("--keep-chains", dest="keep_chains",
                     action=argparse.BooleanOptionalAction, default=None,
                     help="write per-replication chain CSVs (default on)")
    ben.set_defaults(func=cmd_bench)

    rep = sub.add_parser("report", help="summarize a metrics CSV")
    rep.add_argument("--metrics", required=True)
    rep.add_argument("--oracle", default="closed-form",
                     help="method treated as the truth for variance ratios")
    rep.add_argument("--out", help="write the plain-text report here")
    rep.add_argument("--csv", help="write the summary CSV here")
    rep.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
