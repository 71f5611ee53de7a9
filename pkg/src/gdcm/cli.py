"""Command-line pipelines: simulate, fit, gof, report, study.

``study`` reproduces the factorial simulation layout end to end: for each
(K, scenario, N) condition it simulates replications, fits both the
graph-augmented model and the graph-free baseline, scores recovery
against the truth, and writes condition-level summary tables.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import core, estimate, gof, report, rng, simulate
from .estimate import FitConfig, NumericalError
from .report import RecoveryMetrics
from .simulate import SimConfig, sim_config

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: str, header, rows):
    def render(fh):
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    simulate._write_atomic_text(path, render)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _sim_config_from_args(args) -> SimConfig:
    doc = {}
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
    for key, val in (("K", args.K), ("J", args.J), ("N", args.N),
                     ("scenario", args.scenario), ("seed", args.seed),
                     ("edge_value", args.edge_value),
                     ("burn_in", args.burn_in),
                     ("attr_success", args.attr_success)):
        if val is not None:
            doc[key] = val
    doc.setdefault("J", 30)
    doc.setdefault("seed", 0)
    for key in ("K", "N", "scenario"):
        if key not in doc:
            raise ValueError(f"missing required setting {key!r}")
    return SimConfig.from_dict(doc)


def cmd_simulate(args) -> int:
    config = _sim_config_from_args(args)
    os.makedirs(args.out, exist_ok=True)
    x, truth = simulate.simulate_dataset(config)
    simulate.write_responses_csv(x, os.path.join(args.out, "responses.csv"))
    simulate.write_qmatrix_csv(truth.model.q, os.path.join(args.out, "qmatrix.csv"))
    simulate.write_truth_json(truth, os.path.join(args.out, "truth.json"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _fit_config_from_args(args) -> FitConfig:
    doc = {}
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
    if args.lambda_ is not None:
        if args.lambda_ == "auto":
            doc["lambda"] = "auto"
        else:
            doc["lambda"] = float(args.lambda_)
    if args.seed is not None:
        doc["seed"] = args.seed
    return FitConfig.from_dict(doc)


def cmd_fit(args) -> int:
    x = simulate.read_responses_csv(args.responses)
    q = simulate.read_qmatrix_csv(args.qmatrix)
    config = _fit_config_from_args(args)
    result = estimate.fit(x, q, config, family=args.model,
                          graph=not args.no_graph)
    estimate.save_fit_result(result, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# gof
# ---------------------------------------------------------------------------

def cmd_gof(args) -> int:
    if args.bootstrap < 1:
        raise ValueError("need at least one bootstrap replicate")
    fit_res = estimate.load_fit_result(args.fit)
    x = simulate.read_responses_csv(args.responses)
    if x.J != fit_res.model.J:
        raise ValueError(
            f"responses have {x.J} items but the fit has {fit_res.model.J}")
    result = gof.run_gof(fit_res.model, x, B=args.bootstrap,
                         burn_in=args.burn_in, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    gof.write_gof_json(result, os.path.join(args.out, "gof.json"))
    gof.write_histogram_csv(result, os.path.join(args.out, "histogram.csv"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(args) -> int:
    fit_res = estimate.load_fit_result(args.fit)
    phi = fit_res.model.phi
    if args.metrics and not args.truth:
        raise ValueError("recovery metrics need --truth")
    if args.metrics:
        truth = simulate.read_truth_json(args.truth)
        metrics = report.recovery_metrics(fit_res.model, truth.model)
        report.write_metrics_json(metrics, args.metrics)
    if args.heatmap:
        report.export_heatmap(phi, args.heatmap)
    if args.cliques:
        report.write_cliques_json(phi, args.cliques)
    if args.edges:
        report.write_edges_csv(phi, args.edges, top=args.top)
    return EXIT_OK


# ---------------------------------------------------------------------------
# study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StudyCondition:
    K: int
    scenario: str
    N: int


@dataclass
class StudyConfig:
    conditions: list
    replications: int = 20
    J: int = 30
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)
    edge_value: float = 1.0
    sim: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.conditions:
            raise ValueError("condition grid is empty")
        if self.replications < 1:
            raise ValueError("need at least one replication")

    def to_dict(self) -> dict:
        return {
            "conditions": [c.__dict__ for c in self.conditions],
            "replications": self.replications,
            "J": self.J,
            "seed": self.seed,
            "fit": self.fit.to_dict(),
            "edge_value": self.edge_value,
            "sim": self.sim,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "StudyConfig":
        conds = [StudyCondition(int(c["K"]), c["scenario"], int(c["N"]))
                 for c in doc["conditions"]]
        return cls(
            conditions=conds,
            replications=int(doc.get("replications", 20)),
            J=int(doc.get("J", 30)),
            seed=int(doc.get("seed", 0)),
            fit=FitConfig.from_dict(doc.get("fit", {})),
            edge_value=float(doc.get("edge_value", 1.0)),
            sim=dict(doc.get("sim", {})),
        )


@dataclass
class ReplicationRecord:
    rep: int
    seed: int
    gdcm: RecoveryMetrics
    dcm: RecoveryMetrics
    gdcm_dev_guess: float
    gdcm_dev_slip: float
    dcm_dev_guess: float
    dcm_dev_slip: float
    gdcm_lambda: float
    gdcm_n_edges: int
    gdcm_converged: bool
    dcm_converged: bool


_SCENARIO_ID = {"null": 0, "pair": 1, "triplet": 2}


def replication_seed(root_seed: int, cond: StudyCondition, rep: int) -> int:
    """Stable per-replication seed, independent of condition ordering."""
    return rng.derive_seed(root_seed, rng.TAG_REPLICATION, cond.K,
                           _SCENARIO_ID[cond.scenario], cond.N, rep)


def run_replication(cond: StudyCondition, rep: int, study: StudyConfig) -> ReplicationRecord:
    seed = replication_seed(study.seed, cond, rep)
    config = sim_config(cond.K, cond.N, cond.scenario, J=study.J,
                        edge_value=study.edge_value, seed=seed, **study.sim)
    x, truth = simulate.simulate_dataset(config)
    gdcm_res = estimate.fit(x, truth.model.q, study.fit, family="dina", graph=True)
    dcm_res = estimate.fit(x, truth.model.q, study.fit, family="dina", graph=False)
    g_true = core.dina_params(truth.model.beta, truth.model.q)
    g_gdcm = core.dina_params(gdcm_res.model.beta, gdcm_res.model.q)
    g_dcm = core.dina_params(dcm_res.model.beta, dcm_res.model.q)
    return ReplicationRecord(
        rep=rep,
        seed=seed,
        gdcm=report.recovery_metrics(gdcm_res.model, truth.model),
        dcm=report.recovery_metrics(dcm_res.model, truth.model),
        gdcm_dev_guess=report.mean_deviation(g_gdcm.guess, g_true.guess),
        gdcm_dev_slip=report.mean_deviation(g_gdcm.slip, g_true.slip),
        dcm_dev_guess=report.mean_deviation(g_dcm.guess, g_true.guess),
        dcm_dev_slip=report.mean_deviation(g_dcm.slip, g_true.slip),
        gdcm_lambda=gdcm_res.lambda_,
        gdcm_n_edges=gdcm_res.n_edges,
        gdcm_converged=gdcm_res.converged,
        dcm_converged=dcm_res.converged,
    )


def _replication_task(payload):
    cond_doc, rep, study_doc = payload
    cond = StudyCondition(**cond_doc)
    study = StudyConfig.from_dict(study_doc)
    try:
        return run_replication(cond, rep, study)
    except Exception as exc:  # logged and excluded by the caller
        return (cond, rep, f"{type(exc).__name__}: {exc}")


def run_condition(cond: StudyCondition, study: StudyConfig,
                  threads: int = 1) -> tuple:
    """All replications of one condition; returns (records, failures)."""
    payloads = [(cond.__dict__, rep, study.to_dict())
                for rep in range(study.replications)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            raw = list(pool.map(_replication_task, payloads))
    else:
        raw = [_replication_task(p) for p in payloads]
    records = [r for r in raw if isinstance(r, ReplicationRecord)]
    failures = [r for r in raw if not isinstance(r, ReplicationRecord)]
    for _, rep, msg in failures:
        print(f"warning: {cond} rep {rep} failed: {msg}", file=sys.stderr)
    return records, failures


def run_study(study: StudyConfig, out_dir: str | None = None,
              threads: int = 1, progress=None) -> dict:
    """Run every condition; optionally write the summary tables."""
    results = {}
    for cond in study.conditions:
        if progress:
            progress(f"condition K={cond.K} {cond.scenario} N={cond.N}")
        results[cond] = run_condition(cond, study, threads=threads)
    if out_dir is not None:
        write_study_tables(study, results, out_dir)
    return results


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def write_study_tables(study: StudyConfig, results: dict, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    core.write_json_atomic(study.to_dict(), os.path.join(out_dir, "study_config.json"))

    cond_cols = ["K", "scenario", "N", "replications", "seed"]
    t1, t2, t3, t4, det = [], [], [], [], []
    for cond, (records, failures) in results.items():
        base = [cond.K, cond.scenario, cond.N, len(records), study.seed]
        g = report.aggregate_replications([r.gdcm for r in records]) if records else None
        d = report.aggregate_replications([r.dcm for r in records]) if records else None
        if records:
            t1.append(base + [g.rmsd_guess, g.rmsd_slip, d.rmsd_guess, d.rmsd_slip])
            t2.append(base + [g.bias_guess, g.bias_slip, d.bias_guess, d.bias_slip])
            t3.append(base + [g.rmsd_phi, g.fpr, g.cpr,
                              _mean([r.gdcm_n_edges for r in records])])
            t4.append(base + [g.pi_distance, d.pi_distance])
        for r in records:
            det.append([cond.K, cond.scenario, cond.N, r.rep, r.seed,
                        r.gdcm.rmsd_guess, r.gdcm.rmsd_slip,
                        r.gdcm.bias_guess, r.gdcm.bias_slip,
                        r.gdcm.rmsd_phi, r.gdcm.fpr, r.gdcm.cpr,
                        r.gdcm.pi_distance, r.gdcm_n_edges, r.gdcm_lambda,
                        r.gdcm_converged,
                        r.dcm.rmsd_guess, r.dcm.rmsd_slip,
                        r.dcm.bias_guess, r.dcm.bias_slip, r.dcm.pi_distance,
                        r.dcm_converged,
                        r.gdcm_dev_guess, r.gdcm_dev_slip,
                        r.dcm_dev_guess, r.dcm_dev_slip])

    _write_csv(os.path.join(out_dir, "table1_rmsd.csv"),
               cond_cols + ["gdcm_guess", "gdcm_slip", "dcm_guess", "dcm_slip"], t1)
    _write_csv(os.path.join(out_dir, "table2_bias.csv"),
               cond_cols + ["gdcm_guess", "gdcm_slip", "dcm_guess", "dcm_slip"], t2)
    _write_csv(os.path.join(out_dir, "table3_phi.csv"),
               cond_cols + ["gdcm_rmsd_phi", "gdcm_fpr", "gdcm_cpr",
                            "gdcm_n_edges_mean"], t3)
    _write_csv(os.path.join(out_dir, "table4_pi.csv"),
               cond_cols + ["gdcm_pi_distance", "dcm_pi_distance"], t4)
    _write_csv(os.path.join(out_dir, "replications.csv"),
               ["K", "scenario", "N", "rep", "seed",
                "gdcm_rmsd_guess", "gdcm_rmsd_slip", "gdcm_bias_guess",
                "gdcm_bias_slip", "gdcm_rmsd_phi", "gdcm_fpr", "gdcm_cpr",
                "gdcm_pi_distance", "gdcm_n_edges", "gdcm_lambda",
                "gdcm_converged",
                "dcm_rmsd_guess", "dcm_rmsd_slip", "dcm_bias_guess",
                "dcm_bias_slip", "dcm_pi_distance", "dcm_converged",
                "gdcm_dev_guess", "gdcm_dev_slip", "dcm_dev_guess",
                "dcm_dev_slip"], det)


def cmd_study(args) -> int:
    with open(args.config) as fh:
        study = StudyConfig.from_dict(json.load(fh))
    run_study(study, out_dir=args.out, threads=args.threads,
              progress=lambda msg: print(msg, file=sys.stderr))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gdcm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[], help="generate a synthetic dataset")
    p.add_argument("--config", help="SimConfig JSON; flags override it")
    p.add_argument("--K", type=int)
    p.add_argument("--J", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--scenario", choices=simulate.SCENARIO_KINDS)
    p.add_argument("--edge-value", dest="edge_value", type=float)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--attr-success", dest="attr_success", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the model to responses + Q-matrix")
    p.add_argument("--responses", required=True)
    p.add_argument("--qmatrix", required=True)
    p.add_argument("--model", choices=core.FAMILIES, default="dina")
    p.add_argument("--lambda", dest="lambda_",
                   help="'auto' for BIC path selection or a fixed value")
    p.add_argument("--no-graph", action="store_true",
                   help="pin the interaction matrix at zero (baseline fit)")
    p.add_argument("--config", help="FitConfig JSON; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="fit result JSON path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("gof", help="parametric-bootstrap fit check")
    p.add_argument("--fit", required=True, help="fit result JSON")
    p.add_argument("--responses", required=True)
    p.add_argument("--bootstrap", type=int, default=500)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_gof)

    p = sub.add_parser("report", help="recovery metrics and graph summaries")
    p.add_argument("--fit", required=True, help="fit result JSON")
    p.add_argument("--truth", help="truth JSON from simulate")
    p.add_argument("--metrics", help="recovery metrics JSON output (needs --truth)")
    p.add_argument("--heatmap", help="heat-map grid CSV output")
    p.add_argument("--cliques", help="maximal cliques JSON output")
    p.add_argument("--edges", help="ranked edge list CSV output")
    p.add_argument("--top", type=int, help="keep only the strongest edges")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("study", help="replicated simulate/fit/report pipeline")
    p.add_argument("--config", required=True, help="StudyConfig JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except NumericalError as exc:
        print(f"gdcm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"gdcm: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
