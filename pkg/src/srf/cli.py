"""Command-line pipeline around the library.

Every subcommand resolves its options (including the seed, which falls back
to the SRF_SEED environment variable and then to 0), runs, writes its output
files plus a manifest.json into --out-dir, and exits 0 only if everything
was written.  Manifests record the resolved parameters, so ``srf rerun
manifest.json`` reproduces a run byte for byte; nothing written here embeds
timestamps or machine state.  Runtime failures print ``error: ...`` to
stderr and exit 1 (argparse usage problems exit 2); --error-json
additionally writes the failure as JSON for machine consumption.
"""

import argparse
import os
import sys

import numpy as np

from . import __version__, consensus, evaluate, fileio, hyptest, rank, simulate
from .simmat import (
    DenseSimilarity,
    FeatureMatrix,
    linear_kernel,
    ppmi_similarity,
    preprocess_associations,
    rbf_kernel,
    symmetrize_clip,
    triplet_judgments_to_counts,
    triplet_similarity,
)
from .solver import SolverConfig, fit


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value]
    return value


def _int_list(text):
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _solver_config(params):
    return SolverConfig(
        rho=params["rho"],
        outer_iters=params["outer_iters"],
        inner_sweeps=params["inner_sweeps"],
        tol=params["tol"],
        seed=params["seed"],
    )


def _add_solver_args(parser):
    parser.add_argument("--rho", type=float, default=3.0)
    parser.add_argument("--tol", type=float, default=1e-5)
    parser.add_argument("--outer-iters", type=int, default=200)
    parser.add_argument("--inner-sweeps", type=int, default=50)


def _add_matrix_args(parser):
    parser.add_argument("--input", required=True, help="similarity matrix file")
    parser.add_argument(
        "--format",
        choices=("dense", "sparse"),
        default="dense",
        help="dense CSV matrix or sparse i,j,value edge list",
    )
    parser.add_argument("--mask", default=None, help="0/1 CSV mask (dense format only)")
    parser.add_argument("--n", type=int, default=None, help="item count for sparse input")


def _load_similarity(params):
    if params["format"] == "sparse":
        if params.get("mask"):
            raise ValueError("sparse input carries its own mask; --mask is not allowed")
        return fileio.read_sparse_similarity(params["input"], n=params.get("n"))
    values = fileio.read_dense_matrix(params["input"])
    mask = fileio.read_dense_matrix(params["mask"]) if params.get("mask") else None
    return DenseSimilarity(values=values, mask=mask)


def _write_similarity(out_dir, s):
    fileio.write_dense_matrix(os.path.join(out_dir, "values.csv"), s.values)
    fileio.write_int_matrix(os.path.join(out_dir, "mask.csv"), s.mask)
    return ["values.csv", "mask.csv"]


def _run_build_sim(params, out_dir):
    kind = params["kind"]
    outputs = []
    if kind == "triplets":
        judgments = fileio.read_triplets(params["input"])
        n = params.get("n") or max(max(t) for t in judgments) + 1
        counts = triplet_judgments_to_counts(judgments, n)
        s = triplet_similarity(counts, alpha=params["alpha"])
    elif kind == "associations":
        raw = fileio.read_associations(params["input"])
        assoc = preprocess_associations(raw)
        s = ppmi_similarity(assoc, zeros_as_missing=params["zeros_as_missing"])
        fileio.write_labels(os.path.join(out_dir, "labels.txt"), s.item_labels)
        outputs.append("labels.txt")
    elif kind == "dense":
        values = fileio.read_dense_matrix(params["input"])
        mask = fileio.read_dense_matrix(params["mask"]) if params.get("mask") else None
        s = symmetrize_clip(values, mask)
    elif kind == "sparse":
        s = fileio.read_sparse_similarity(params["input"], n=params.get("n"))
    else:
        features = FeatureMatrix(values=fileio.read_dense_matrix(params["input"]))
        if kind == "features-linear":
            s = linear_kernel(features)
        else:
            s = rbf_kernel(features, multiplier=params["multiplier"])
    outputs += _write_similarity(out_dir, s)
    summary = {
        "kind": kind,
        "n": s.n,
        "observed_offdiagonal_fraction": simulate.observed_fraction(s.mask),
    }
    fileio.write_json(os.path.join(out_dir, "summary.json"), _jsonable(summary))
    return outputs + ["summary.json"]


def _run_fit(params, out_dir):
    s = _load_similarity(params)
    result = fit(s, params["rank"], _solver_config(params))
    fileio.write_dense_matrix(os.path.join(out_dir, "embedding.csv"), result.embedding)
    rows = [
        (it + 1, loss, lag, act[0], act[1])
        for it, (loss, lag, act) in enumerate(
            zip(result.loss_trace, result.lagrangian_trace, result.projection_activity)
        )
    ]
    fileio.write_table(
        os.path.join(out_dir, "trace.csv"),
        ("iteration", "loss", "lagrangian", "active_observed", "active_unobserved"),
        rows,
    )
    summary = {
        "converged": result.converged,
        "n_iterations": result.n_iterations,
        "final_loss": result.final_loss,
        "bounds": list(result.bounds),
        "rank": params["rank"],
    }
    fileio.write_json(os.path.join(out_dir, "summary.json"), _jsonable(summary))
    return ["embedding.csv", "trace.csv", "summary.json"]


def _run_select_rank(params, out_dir):
    s = _load_similarity(params)
    calibration = rank.calibrate(s, delta=params["delta"], seed=params["seed"])
    config = rank.CvConfig(
        rank_grid=tuple(params["rank_grid"]),
        folds=params["folds"],
        repeats=params["repeats"],
        seed=params["seed"],
        solver=_solver_config(params),
    )
    curve = rank.cross_validate(s, calibration, config, n_jobs=params["threads"])
    fileio.write_table(
        os.path.join(out_dir, "cv.csv"),
        ("rank", "repeat", "fold", "validation_mse"),
        curve.cells,
    )
    summary = {
        "selected_rank": curve.selected_rank,
        "k_cut": calibration.k_cut,
        "p_star": calibration.p_star,
        "fold_invariant_p": rank.fold_invariant_p(calibration.p_star, params["folds"]),
        "ranks": list(curve.ranks),
        "mean_mse": list(curve.mean_mse),
        "std_mse": list(curve.std_mse),
    }
    fileio.write_json(os.path.join(out_dir, "summary.json"), _jsonable(summary))
    return ["cv.csv", "summary.json"]


def _run_consensus(params, out_dir):
    s = _load_similarity(params)
    result = consensus.consensus_fit(
        s,
        params["rank"],
        config=_solver_config(params),
        n_runs=params["runs"],
        n_splits=params["splits"],
        n_jobs=params["threads"],
    )
    fileio.write_dense_matrix(os.path.join(out_dir, "embedding.csv"), result.embedding)
    fileio.write_dense_matrix(os.path.join(out_dir, "alignment.csv"), result.mean_alignment)
    report = {
        "central_index": result.central_index,
        "seeds": result.seeds,
        "reliability": result.reliability,
        "runs": params["runs"],
    }
    fileio.write_json(os.path.join(out_dir, "report.json"), _jsonable(report))
    return ["embedding.csv", "alignment.csv", "report.json"]


_SIM_DEFAULTS = {
    "rank-detection": {
        "true_ranks": [3, 4, 5, 6, 7, 8],
        "snrs": [0.6, 0.9],
        "retentions": [0.7, 1.0],
        "alphas": [0.2],
        "n_seeds": 3,
        "n": 100,
        "rank_grid": [2, 3, 4, 5, 6, 7, 8, 9, 10],
        "folds": 5,
        "repeats": 2,
        "outer_iters": 80,
        "inner_sweeps": 15,
        "tol": 2e-4,
    },
    "missing-data": {
        "retentions": [0.05, 0.1, 0.2, 0.4, 0.7, 1.0],
        "n": 100,
        "rank": 5,
        "alpha": 0.2,
        "snr": 0.9,
        "n_seeds": 3,
    },
}


def _run_simulate(params, out_dir):
    what = params["what"]
    settings = params["settings"]
    seed = params["seed"]
    threads = params["threads"]
    if what == "rank-detection":
        cv_kwargs = {
            "folds": settings["folds"],
            "repeats": settings["repeats"],
            "solver": SolverConfig(
                outer_iters=settings["outer_iters"],
                inner_sweeps=settings["inner_sweeps"],
                tol=settings["tol"],
            ),
        }
        rows, mae = simulate.rank_detection_experiment(
            true_ranks=settings["true_ranks"],
            snrs=settings["snrs"],
            retentions=settings["retentions"],
            alphas=settings["alphas"],
            n_seeds=settings["n_seeds"],
            n=settings["n"],
            rank_grid=tuple(settings["rank_grid"]),
            seed=seed,
            cv_kwargs=cv_kwargs,
            n_jobs=threads,
        )
        header = ("true_rank", "alpha", "snr", "retention", "seed", "cv", "parallel_analysis", "scree")
        table = [[row[key] for key in header] for row in rows]
        summary = {"mae": mae}
    else:
        rows = simulate.missing_data_experiment(
            retentions=settings["retentions"],
            n=settings["n"],
            rank=settings["rank"],
            alpha=settings["alpha"],
            snr=settings["snr"],
            n_seeds=settings["n_seeds"],
            seed=seed,
            n_jobs=threads,
        )
        header = ("retention", "method", "heldout_r2", "alignment")
        table = [[row[key] for key in header] for row in rows]
        summary = {
            "best_method_by_retention": {
                str(ret): max(
                    (row for row in rows if row["retention"] == ret),
                    key=lambda row: row["heldout_r2"],
                )["method"]
                for ret in settings["retentions"]
            }
        }
    fileio.write_table(os.path.join(out_dir, "results.csv"), header, table)
    fileio.write_json(os.path.join(out_dir, "summary.json"), _jsonable(summary))
    return ["results.csv", "summary.json"]


def _run_power(params, out_dir):
    source = None
    if params.get("source"):
        source = fileio.read_dense_matrix(params["source"])
    result = hyptest.power_experiment(
        design=params["design"],
        snr_grid=tuple(params["snr_grid"]),
        repeats=params["repeats"],
        n_perm=params["n_perm"],
        levels=tuple(params["levels"]),
        n_items=params["n_items"],
        k=params["k"],
        source=source,
        alpha=params["alpha"],
        null=params["null"],
        seed=params["seed"],
        n_jobs=params["threads"],
    )
    rows = [
        (
            "" if row.snr is None else row.snr,
            row.method,
            row.hypothesis,
            row.repeat,
            row.p_value,
            int(row.rejected),
            row.column_variance,
        )
        for row in result.rows
    ]
    fileio.write_table(
        os.path.join(out_dir, "power.csv"),
        ("snr", "method", "hypothesis", "repeat", "p_value", "rejected", "column_variance"),
        rows,
    )
    table = result.power_table()
    fileio.write_table(
        os.path.join(out_dir, "aggregate.csv"),
        ("snr", "method", "rejection_rate"),
        [("" if snr is None else snr, method, rate) for (snr, method), rate in table.items()],
    )
    quartiles = hyptest.variance_quartile_power(result)
    fileio.write_table(
        os.path.join(out_dir, "quartiles.csv"),
        ("method", "variance_quartile", "rejection_rate"),
        [(method, q, rate) for (method, q), rate in quartiles.items()],
    )
    summary = {
        "design": params["design"],
        "alpha": params["alpha"],
        "n_perm": params["n_perm"],
        "repeats": params["repeats"],
        "uncorrected_rate": result.uncorrected_rate(),
        "rejection_rates": {f"{snr}|{method}": rate for (snr, method), rate in table.items()},
    }
    fileio.write_json(os.path.join(out_dir, "summary.json"), _jsonable(summary))
    return ["power.csv", "aggregate.csv", "quartiles.csv", "summary.json"]


_EVALUATE_NEEDS = {
    "r2": ("input",),
    "triplets": ("triplets",),
    "auc": ("positives", "negatives"),
    "ridge": ("targets",),
}


def _run_evaluate(params, out_dir):
    w = fileio.read_dense_matrix(params["embedding"])
    what = params["what"]
    for needed in _EVALUATE_NEEDS[what]:
        if not params.get(needed):
            raise ValueError(f"evaluate --what {what} requires --{needed}")
    outputs = ["summary.json"]
    if what == "r2":
        s = _load_similarity(params)
        summary = {"r2": evaluate.explained_variance(s, w)}
    elif what == "triplets":
        judgments = fileio.read_triplets(params["triplets"])
        score = evaluate.triplet_accuracy(w, judgments)
        summary = {
            "accuracy": score.accuracy,
            "n_correct": score.n_correct,
            "n_total": score.n_total,
            "n_ties": score.n_ties,
        }
    elif what == "auc":
        positives = fileio.read_pairs(params["positives"])
        negatives = fileio.read_pairs(params["negatives"])
        summary = {"auc": evaluate.link_auc(w, positives, negatives)}
    else:
        target = fileio.read_targets(params["targets"], w.shape[0])
        config = evaluate.RidgeConfig(folds=params["folds"], seed=params["seed"])
        result = evaluate.ridge_predict(w, target, config)
        fileio.write_table(
            os.path.join(out_dir, "predictions.csv"),
            ("item", "actual", "predicted", "fold"),
            [
                (i, float(target[i]), float(result.predictions[i]), int(result.fold_id[i]))
                for i in range(w.shape[0])
            ],
        )
        outputs.append("predictions.csv")
        summary = {
            "spearman": result.spearman,
            "alphas": list(result.alphas),
        }
    fileio.write_json(os.path.join(out_dir, "summary.json"), _jsonable(summary))
    return outputs


_RUNNERS = {
    "build-sim": _run_build_sim,
    "fit": _run_fit,
    "select-rank": _run_select_rank,
    "consensus": _run_consensus,
    "simulate": _run_simulate,
    "power": _run_power,
    "evaluate": _run_evaluate,
}

_CONTROL_KEYS = ("command", "error_json", "out_dir", "manifest", "config")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="srf",
        description="similarity factorization pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", required=True)
        p.add_argument("--seed", type=int, default=None, help="falls back to SRF_SEED, then 0")
        p.add_argument("--error-json", default=None, help="also write failures to this JSON file")
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("build-sim", help="construct a similarity matrix from raw data")
    common(p)
    p.add_argument(
        "--kind",
        required=True,
        choices=("triplets", "associations", "dense", "sparse", "features-linear", "features-rbf"),
    )
    p.add_argument("--input", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--alpha", type=float, default=1.0, help="triplet smoothing")
    p.add_argument("--multiplier", type=float, default=0.4, help="rbf bandwidth multiplier")
    p.add_argument("--zeros-as-missing", action="store_true")

    p = sub.add_parser("fit", help="fit one embedding")
    common(p)
    _add_matrix_args(p)
    _add_solver_args(p)
    p.add_argument("--rank", type=int, required=True)

    p = sub.add_parser("select-rank", help="calibrated cross-validated rank selection")
    common(p)
    _add_matrix_args(p)
    _add_solver_args(p)
    p.add_argument("--rank-grid", type=_int_list, required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--delta", type=float, default=0.1)

    p = sub.add_parser("consensus", help="multi-seed consensus embedding")
    common(p)
    _add_matrix_args(p)
    _add_solver_args(p)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--runs", type=int, default=30)
    p.add_argument("--splits", type=int, default=100)

    p = sub.add_parser("simulate", help="synthetic-data experiments")
    common(p)
    p.add_argument("--what", required=True, choices=tuple(_SIM_DEFAULTS))
    p.add_argument("--config", default=None, help="JSON file overriding experiment settings")

    p = sub.add_parser("power", help="matrix-level vs embedding-level test power")
    common(p)
    p.add_argument("--design", choices=("factorial", "spose"), default="factorial")
    p.add_argument("--snr-grid", type=_float_list, default=[0.2, 0.4, 0.6, 0.8])
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--n-perm", type=int, default=1000)
    p.add_argument("--levels", type=_int_list, default=[3, 3, 3, 3])
    p.add_argument("--n-items", type=int, default=36)
    p.add_argument("--k", type=int, default=5, help="hypothesis count for the spose design")
    p.add_argument("--source", default=None, help="embedding CSV to subsample (spose design)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--null", action="store_true", help="structureless data for false positive rates")
    _add_solver_args(p)

    p = sub.add_parser("evaluate", help="score an embedding")
    common(p)
    p.add_argument("--what", required=True, choices=("r2", "triplets", "auc", "ridge"))
    p.add_argument("--embedding", required=True)
    p.add_argument("--input", default=None)
    p.add_argument("--format", choices=("dense", "sparse"), default="dense")
    p.add_argument("--mask", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--triplets", default=None)
    p.add_argument("--positives", default=None)
    p.add_argument("--negatives", default=None)
    p.add_argument("--targets", default=None)
    p.add_argument("--folds", type=int, default=5)

    p = sub.add_parser("rerun", help="repeat a previous run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default=None, help="defaults to the manifest's directory")
    p.add_argument("--error-json", default=None)

    return parser


def _resolve_params(args):
    params = {k: v for k, v in vars(args).items() if k not in _CONTROL_KEYS}
    if params.get("seed") is None:
        params["seed"] = int(os.environ.get("SRF_SEED", "0"))
    if args.command == "simulate":
        settings = dict(_SIM_DEFAULTS[args.what])
        if args.config:
            overrides = fileio.read_json(args.config)
            unknown = set(overrides) - set(settings)
            if unknown:
                raise ValueError(f"unknown settings for {args.what}: {sorted(unknown)}")
            settings.update(overrides)
        params["settings"] = settings
    return params


def _execute(command, params, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    outputs = _RUNNERS[command](params, out_dir)
    manifest = {
        "command": command,
        "package_version": __version__,
        "parameters": _jsonable(params),
        "outputs": sorted(outputs),
    }
    fileio.write_json(os.path.join(out_dir, "manifest.json"), manifest)


def main(argv=None):
    args = _build_parser().parse_args(argv)
    error_json = getattr(args, "error_json", None)
    try:
        if args.command == "rerun":
            manifest = fileio.read_json(args.manifest)
            for key in ("command", "parameters"):
                if key not in manifest:
                    raise ValueError(f"manifest is missing {key!r}")
            command = manifest["command"]
            if command not in _RUNNERS:
                raise ValueError(f"manifest names unknown command {command!r}")
            out_dir = args.out_dir or os.path.dirname(os.path.abspath(args.manifest))
            _execute(command, manifest["parameters"], out_dir)
        else:
            _execute(args.command, _resolve_params(args), args.out_dir)
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        print(f"error: {exc}", file=sys.stderr)
        if error_json:
            fileio.write_json(
                error_json, {"error": type(exc).__name__, "message": str(exc)}
            )
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
