"""Batch command-line front end.

Every subcommand reads a JSON manifest, runs one analysis and writes its
outputs plus ``run.json`` (seed, manifest content and hash, package
versions) to ``--out``. Errors are reported as a one-line JSON object on
stderr with a nonzero exit status.

Model manifests carry a ``model`` field selecting the builder:

* ``"severity"`` -- the fields of :class:`~episynth.severity.SeverityConfig`;
* ``"transmission"`` -- ``scenario`` holds the
  :class:`~episynth.transmission.TransmissionScenario` fields;
* ``"graph"`` -- ``nodes`` declares a small graph directly (basic nodes with
  priors, functional nodes from a fixed menu of operations, data nodes).

Observed streams are listed under ``streams`` (paths relative to the manifest).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import scipy

from episynth import __version__
from episynth.core.graph import BasicNode, DataNode, FunctionalNode, ModelGraph
from episynth.core.likelihoods import Binomial, LogNormalPoint, NegBinomial, Normal, Poisson
from episynth.core.priors import PriorSpec
from episynth.core.streams import AgeStructure, DataStream, StreamKind, load_manifest, write_stream_csv
from episynth.errors import ConfigurationError, EpisynthError
from episynth.logs import get_logger, kv

log = get_logger(__name__)

COMMANDS = ("simulate", "fit-severity", "fit-transmission", "smc-run", "meld", "conflict", "deviance",
            "regression")

DEFAULT_KINDS = {"gp": "GPConsultations", "positivity": "ViroPositivity", "sero": "SeroPrevalence",
                 "confirmed": "ConfirmedCases"}

_OPS = {
    "identity": lambda x: x,
    "exp": np.exp,
    "log": np.log,
    "logit": lambda p: np.log(p) - np.log1p(-p),
    "expit": lambda x: 1.0 / (1.0 + np.exp(-x)),
    "sum": lambda *xs: sum(np.asarray(x, dtype=float) for x in xs),
    "product": lambda *xs: np.prod(np.broadcast_arrays(*[np.asarray(x, dtype=float) for x in xs]), axis=0),
}
_LIKELIHOODS = {"binomial": Binomial, "poisson": Poisson, "normal": Normal, "lognormal_point": LogNormalPoint,
                "negbin": NegBinomial}


class CLIError(EpisynthError):
    """Raised for invalid command-line usage."""


# --- manifests and models ------------------------------------------------------------------------

def read_json(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: manifest must be a JSON object")
    return raw


def config_hash(raw: Mapping[str, Any]) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()


def _field(d: Mapping[str, Any], key: str, where: str = ""):
    if key not in d:
        raise ConfigurationError(f"manifest field missing: {where}{key}")
    return d[key]


def declarative_graph(nodes: Sequence[Mapping[str, Any]]) -> ModelGraph:
    """Graph from ``[{"name", "type": basic|functional|data, ...}, ...]``."""
    out = []
    for i, n in enumerate(nodes):
        where = f"nodes[{i}]."
        name, kind = _field(n, "name", where), _field(n, "type", where)
        if kind == "basic":
            out.append(BasicNode(name, PriorSpec.from_dict(_field(n, "prior", where)), n.get("size")))
        elif kind == "functional":
            op = _field(n, "op", where)
            if op not in _OPS:
                raise ConfigurationError(f"{where}op: unknown operation {op!r}; use one of {sorted(_OPS)}")
            out.append(FunctionalNode(name, tuple(_field(n, "parents", where)), _OPS[op]))
        elif kind == "data":
            lik = _field(n, "likelihood", where)
            if lik not in _LIKELIHOODS:
                raise ConfigurationError(f"{where}likelihood: unknown {lik!r}; use one of {sorted(_LIKELIHOODS)}")
            extra = {"size": float(n["size"])} if lik == "negbin" and "size" in n else {}
            out.append(DataNode(name, _field(n, "parent", where), _LIKELIHOODS[lik](n.get("index", "scalar"), **extra)))
        else:
            raise ConfigurationError(f"{where}type: unknown node type {kind!r}")
    return ModelGraph(out)


def build_model(manifest: str | Path, naive_ds: bool = False) -> tuple[ModelGraph, dict[str, DataStream], dict]:
    """``(graph, observed streams, raw manifest)`` for a model manifest."""
    raw = read_json(manifest)
    model = _field(raw, "model")
    data = load_manifest(manifest).streams if raw.get("streams") else {}
    if model == "severity":
        from episynth.severity import SeverityConfig, build_severity_graph
        cfg = SeverityConfig.from_dict(raw)
        if naive_ds:
            cfg.naive_ds = True
        graph = build_severity_graph(cfg)
    elif model == "transmission":
        from episynth.transmission import TransmissionScenario, build_transmission_graph
        graph = build_transmission_graph(TransmissionScenario.from_dict(_field(raw, "scenario")))
    elif model == "graph":
        graph = declarative_graph(_field(raw, "nodes"))
    else:
        raise ConfigurationError(f"manifest field model: unknown model {model!r}")
    return graph, data, raw


def chain_config(raw: Mapping[str, Any], args) -> "ChainConfig":
    from episynth.mcmc import ChainConfig
    cfg = ChainConfig.from_dict(raw.get("sampler", {}))
    if args.iterations is not None:
        burn = min(cfg.burn_in, args.iterations // 2)
        cfg = replace(cfg, iterations=args.iterations, burn_in=burn)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _chain_job(job):
    from episynth.mcmc import run_chain
    manifest, naive, cfg, chain = job
    graph, data, _ = build_model(manifest, naive)
    return run_chain(graph, data, cfg, chain=chain)


def run_model_chains(manifest, cfg, n_chains: int, threads: int, naive: bool = False):
    """Chains ``0..n_chains-1``; in worker processes when ``threads > 1``."""
    jobs = [(str(manifest), naive, cfg, c) for c in range(n_chains)]
    if threads > 1 and n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(threads, n_chains)) as ex:
            return list(ex.map(_chain_job, jobs))
    return [_chain_job(j) for j in jobs]


# --- shared writers ----------------------------------------------------------------------------------

def write_parameter_summary(path: Path, names: Sequence[str], draws: np.ndarray, mcse=None) -> Path:
    """``parameter, mean, median, q2.5, q97.5, mcse`` for each column of ``draws``."""
    from episynth.mcmc import batch_means_mcse
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "mean", "median", "q2.5", "q97.5", "mcse"])
        for j, name in enumerate(names):
            x = draws[:, j]
            q = np.quantile(x, [0.5, 0.025, 0.975])
            e = batch_means_mcse(x) if mcse is None else mcse[j]
            w.writerow([name, *(f"{v:.6g}" for v in (x.mean(), *q, e))])
    return path


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")


def _fit_outputs(out: Path, graph: ModelGraph, data, samples, prefix: str = "") -> None:
    from episynth.mcmc import combine, convergence_report, deviance_summary, write_deviance_csv
    s = combine(samples) if len(samples) > 1 else samples[0]
    s.write_csv(out / f"{prefix}draws.csv")
    write_parameter_summary(out / f"{prefix}summary.csv", s.names, s.draws)
    if len(samples) > 1:
        write_json(out / f"{prefix}convergence.json", convergence_report(samples))
    if s.node_loglik:
        write_deviance_csv(deviance_summary(s, graph, data), out / f"{prefix}deviance.csv")


# --- subcommands ------------------------------------------------------------------------------------

def cmd_simulate(args, raw, out: Path) -> dict:
    from episynth.simulate import Shock, simulate_severity, simulate_transmission, write_fixture
    from episynth.smc import split_batches
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    model = _field(raw, "model")
    if model == "transmission":
        from episynth.transmission import TransmissionScenario
        sc = TransmissionScenario.from_dict(_field(raw, "scenario"))
        shock = Shock(**raw["shock"]) if raw.get("shock") else None
        data, truth = simulate_transmission(
            sc, _field(raw, "theta"), seed, n_swabs=raw.get("n_swabs", 100), sero_days=raw.get("sero_days", ()),
            sero_n=raw.get("sero_n", 500), shock=shock, eta=raw.get("eta"))
        extra = {"model": "transmission", "scenario": raw["scenario"]}
        ages = sc.ages
    elif model == "severity":
        from episynth.severity import SeverityParams
        ages = AgeStructure(tuple(raw.get("ages", {}).get("labels", AgeStructure().labels)))
        params = SeverityParams(**_field(raw, "params"))
        data, truth = simulate_severity(params, _field(raw, "N_Pop"), seed, sero_n=raw.get("sero_n", 500),
                                        symptomatic=raw.get("symptomatic", "binomial"),
                                        streams=raw.get("streams"))
        extra = {"model": "severity", "N_Pop": raw["N_Pop"],
                 "waves": raw.get("waves", [{"wave": 1, "streams": list(raw.get("streams") or
                                                                       ["sero_baseline", "sero_post", "y_S", "y_H",
                                                                        "y_D", "y_ICU_H", "y_D_H"]),
                                             "symptomatic": raw.get("symptomatic", "binomial")}])}
    else:
        raise ConfigurationError(f"manifest field model: cannot simulate {model!r}")
    path = write_fixture(out, data, truth, ages, extra)
    if raw.get("batches"):
        bdir = out / "batches"
        bdir.mkdir(exist_ok=True)
        for i, batch in enumerate(split_batches(data, raw["batches"]), start=1):
            write_batch_csv(batch, bdir / f"batch_{i:04d}.csv")
    return {"fixture": str(path.relative_to(out))}


def cmd_fit(args, raw, out: Path, expected: str) -> dict:
    model = _field(raw, "model")
    if model != expected:
        raise ConfigurationError(f"manifest field model: expected {expected!r}, got {model!r}")
    cfg = chain_config(raw, args)
    n_chains = int(raw.get("chains", 2))
    graph, data, _ = build_model(args.manifest, args.naive_ds)
    samples = run_model_chains(args.manifest, cfg, n_chains, args.threads, args.naive_ds)
    _fit_outputs(out, graph, data, samples)
    if expected == "severity":
        from episynth.mcmc import combine
        from episynth.severity import SeverityConfig, summarize_severity, write_summary_csv
        s = combine(samples) if len(samples) > 1 else samples[0]
        ages = SeverityConfig.from_dict(raw).ages
        write_summary_csv(summarize_severity(graph, s.to_theta(graph), ages), out / "severity_summary.csv")
    return {"chains": n_chains, "iterations": cfg.iterations, "burn_in": cfg.burn_in}


def write_batch_csv(batch: Mapping[str, DataStream], path: Path) -> Path:
    """One batch of observations: ``stream, kind, time_index, age_index, value, denominator``."""
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stream", "kind", "time_index", "age_index", "value", "denominator"])
        for name in sorted(batch):
            s = batch[name]
            for t, a, v, d in zip(s.time_index, s.age_index, s.value, s.denominator):
                w.writerow([name, s.kind.value, int(t), int(a), repr(float(v)),
                            "" if np.isnan(d) else repr(float(d))])
    return path


def read_batch_csv(path: Path, kinds: Mapping[str, str] | None = None) -> dict[str, DataStream]:
    if not path.exists():
        raise FileNotFoundError(f"batch file not found: {path}")
    rows: dict[str, list] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"stream", "time_index", "age_index", "value", "denominator"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ConfigurationError(f"{path}: batch file needs columns {sorted(need)}")
        for r in reader:
            rows.setdefault(r["stream"], []).append(r)
    out = {}
    for name, rs in rows.items():
        kind = rs[0].get("kind") or (kinds or {}).get(name) or DEFAULT_KINDS.get(name)
        if kind is None:
            raise ConfigurationError(f"{path}: no stream kind for {name!r}")
        d = [float(r["denominator"]) if r["denominator"] else np.nan for r in rs]
        out[name] = DataStream(name, StreamKind(kind), np.array([int(r["time_index"]) for r in rs]),
                               np.array([int(r["age_index"]) for r in rs]),
                               np.array([float(r["value"]) for r in rs]), np.array(d))
    return out


def cmd_smc(args, raw, out: Path) -> dict:
    from episynth.smc import (SMCConfig, predictive_summary, run_smc, write_predictive_csv,
                              write_summary_csv)
    if args.batches is None:
        raise CLIError("smc-run needs --batches DIR")
    files = sorted(Path(args.batches).glob("batch_*.csv"))
    if not files:
        raise FileNotFoundError(f"no batch_*.csv files in {args.batches}")
    graph, _, _ = build_model(args.manifest)
    opts = dict(raw.get("smc", {}))
    if args.particles is not None:
        opts["n_particles"] = args.particles
    if args.seed is not None:
        opts["seed"] = args.seed
    cfg = SMCConfig(**opts)
    batches = [read_batch_csv(f, raw.get("stream_kinds")) for f in files]
    node = raw.get("predictive_node", "N_Sym" if "N_Sym" in graph else None)
    labels = None
    if raw.get("model") == "transmission":
        labels = raw["scenario"].get("ages", {}).get("labels")
    pred_rng = np.random.default_rng([cfg.seed, 1])

    def emit(b, ens, row):
        write_summary_csv([row], out / f"summary_{b + 1:04d}.csv")
        if node is not None:
            bands = predictive_summary(ens, graph, node, pred_rng)
            write_predictive_csv(bands, labels or [f"a{i}" for i in range(bands.shape[2])], out / f"predictive_{b + 1:04d}.csv")
        log.info(kv("batch_done", batch=b + 1, ess=row["ess"]))

    res = run_smc(graph, batches, cfg, callback=emit)
    x = res.draws()
    idx = np.random.default_rng([cfg.seed, 2]).choice(len(x), size=len(x), p=res.ensemble.weights)
    write_parameter_summary(out / "summary.csv", res.names, x[idx], mcse=res.mcse())
    write_json(out / "history.json", res.ensemble.history)
    return {"batches": [f.name for f in files], "particles": cfg.n_particles, "min_ess": res.min_ess()}


def cmd_meld(args, raw, out: Path) -> dict:
    from episynth.melding import (MeldedModel, Submodel, meld_posterior, summarize, write_pooled_density_csv,
                                  write_summary_csv)
    base = Path(args.manifest).parent
    link = _field(raw, "link")
    subs = []
    for i, entry in enumerate(_field(raw, "submodels")):
        graph, data, _ = build_model(base / _field(entry, "manifest", f"submodels[{i}]."))
        subs.append(Submodel(graph, data, link, label=entry.get("label", f"model{i}"),
                             log_embedding=bool(entry.get("log_embedding", False))))
    rule = args.pooling or raw.get("pooling", "log")
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    model = MeldedModel(subs, rule=rule, weights=raw.get("weights"), seed=seed)
    cfg = chain_config(raw, args)
    s = meld_posterior(model, cfg)
    s.write_csv(out / "draws.csv")
    write_summary_csv(summarize(s, s.meta.get("link") if model.owner is not None else None), out / "summary.csv")
    write_pooled_density_csv(model.marginals, out / "pooled_density.csv", raw.get("weights"))
    return {"pooling": rule, "link": link, "parameters": model.names}


def cmd_conflict(args, raw, out: Path) -> dict:
    from episynth.conflict import (NodeSplit, difference_sample, format_report, full_model_draws,
                                   pairwise_conflicts, split_and_fit, write_delta_histogram, write_overlay_csv,
                                   write_report_json)
    graph, data, _ = build_model(args.manifest)
    split = NodeSplit.from_dict(_field(raw, "split"))
    if args.conflict_method:
        split = replace(split, method=args.conflict_method)
    cfg = chain_config(raw, args)
    fit = split_and_fit(graph, data, split, cfg)
    rng = np.random.default_rng([cfg.seed, 7])
    pvals = pairwise_conflicts(fit, rng, split.method)
    write_report_json(split.separator, pvals, out / "conflict.json")
    (out / "conflict.txt").write_text(format_report(split.separator, pvals, split.scale, split.method))
    overlay = dict(fit.separator)
    if raw.get("full_model", True):
        overlay["full"] = full_model_draws(graph, data, split.separator, cfg)
    if all(np.ndim(v) == 1 for v in overlay.values()):
        write_overlay_csv(overlay, out / "overlay.csv", split.scale)
        names = [p.name for p in split.partitions]
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                d = difference_sample(fit.separator[a], fit.separator[b], split.scale, rng, (a, b))
                write_delta_histogram(d, out / f"delta_{a}_{b}.csv")
    return {"separator": split.separator, "method": split.method,
            "pvalues": {f"{a}|{b}": np.asarray(c).tolist() for (a, b), c in pvals.items()}}


def cmd_deviance(args, raw, out: Path) -> dict:
    from episynth.mcmc import DevianceRow, write_deviance_csv
    if "table" in raw:
        path = Path(args.manifest).parent / raw["table"]
        if not path.exists():
            raise FileNotFoundError(f"deviance table not found: {path}")
        rows, extra = [], {}
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            cols = list(reader.fieldnames or [])
            for c in ("D_bar", "D_hat"):
                if c not in cols:
                    raise ConfigurationError(f"{path}: column missing: {c}")
            key = cols[0]
            passthrough = [c for c in cols[1:] if c not in ("D_bar", "D_hat", "p_D", "DIC")]
            for r in reader:
                rows.append(DevianceRow(r[key], float(r["D_bar"]), float(r["D_hat"])))
                extra[r[key]] = {c: r[c] for c in passthrough}
        write_deviance_csv(rows, out / "deviance.csv", extra, passthrough)
        return {"rows": len(rows), "source": "table"}
    graph, data, _ = build_model(args.manifest, args.naive_ds)
    cfg = chain_config(raw, args)
    samples = run_model_chains(args.manifest, cfg, int(raw.get("chains", 1)), args.threads, args.naive_ds)
    _fit_outputs(out, graph, data, samples)
    return {"source": "fit", "naive_ds": args.naive_ds}


def cmd_regression(args, raw, out: Path) -> dict:
    from episynth.regression import JointRegressionSpec, fit_joint_regression
    streams = load_manifest(args.manifest).streams
    gp = streams.get(raw.get("consultations", "gp"))
    pos = streams.get(raw.get("positivity", "positivity"))
    if gp is None or pos is None:
        raise ConfigurationError("manifest field missing: streams (need consultation and positivity streams)")
    spec = JointRegressionSpec(int(raw.get("degree", 3)), raw.get("eta"), float(raw.get("prior_sd", 10.0)))
    p_G = raw.get("p_G", 1.0)
    if isinstance(p_G, Mapping):
        p_G = (float(_field(p_G, "a", "p_G.")), float(_field(p_G, "b", "p_G.")))
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    res = fit_joint_regression(spec, gp, pos, p_G, n_draws=int(raw.get("n_draws", 4000)), seed=seed)
    labels = raw.get("ages", {}).get("labels")
    rows = res.summary_rows(labels)
    with (out / "regression_summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["age", "y_hat", "sigma_hat", "N_S_median"])
        for r in rows:
            w.writerow([r["age"], *(f"{r[c]:.6g}" for c in ("y_hat", "sigma_hat", "N_S_median"))])
    lo, hi = res.interval()
    with (out / "coefficients.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coefficient", "estimate", "sd", "q2.5", "q97.5"])
        nB = len(res.beta_B)
        for j, (b, s) in enumerate(zip(res.beta, res.sd())):
            name = f"beta_B[{j}]" if j < nB else f"beta_G[{j - nB}]"
            w.writerow([name, *(f"{v:.6g}" for v in (b, s, lo[j], hi[j]))])
    write_stream_csv(res.to_stream(raw.get("output_stream", "y_S")), out / "y_S.csv")
    return {"converged": bool(res.converged), "degree": spec.degree}


# --- entry point ------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="episynth", description="Bayesian evidence synthesis for epidemics.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--manifest", "--scenario", dest="manifest", required=True, help="JSON manifest")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, default=None, help="master seed (overrides the manifest)")
        s.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker processes for independent chains (default: available cores)")
        s.add_argument("--iterations", type=int, default=None)
        s.add_argument("--particles", type=int, default=None)
        s.add_argument("--naive-ds", action="store_true", help="fix symptomatic detection at 1")
        s.add_argument("--pooling", choices=("linear", "log", "dictatorial"), default=None)
        s.add_argument("--conflict-method", choices=("quantile", "density"), default=None)
        s.add_argument("--batches", default=None, help="directory of batch_NNNN.csv files (smc-run)")
    return p


def _metadata(args, raw, argv) -> dict:
    return {
        "command": args.command,
        "argv": list(argv),
        "seed": args.seed,
        "config_hash": config_hash(raw),
        "manifest": raw,
        "settings": {k: getattr(args, k) for k in ("iterations", "particles", "naive_ds", "pooling",
                                                     "conflict_method")},
        "versions": {"episynth": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }


def _error_report(exc: BaseException) -> tuple[int, dict]:
    if isinstance(exc, FileNotFoundError):
        return 3, {"error": "io", "message": str(exc)}
    if isinstance(exc, (ConfigurationError, CLIError, TypeError)):
        return 2, {"error": "schema" if not isinstance(exc, CLIError) else "usage", "message": str(exc)}
    return 1, {"error": type(exc).__name__, "message": str(exc)}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    handlers = {
        "simulate": cmd_simulate,
        "fit-severity": lambda a, r, o: cmd_fit(a, r, o, "severity"),
        "fit-transmission": lambda a, r, o: cmd_fit(a, r, o, "transmission"),
        "smc-run": cmd_smc,
        "meld": cmd_meld,
        "conflict": cmd_conflict,
        "deviance": cmd_deviance,
        "regression": cmd_regression,
    }
    try:
        raw = read_json(args.manifest)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        log.info(kv("start", command=args.command, manifest=args.manifest, out=str(out)))
        result = handlers[args.command](args, raw, out)
        meta = _metadata(args, raw, argv)
        meta["result"] = result
        write_json(out / "run.json", meta)
    except (EpisynthError, OSError, TypeError, ValueError) as exc:
        code, report = _error_report(exc)
        report["command"] = args.command
        print(json.dumps(report, sort_keys=True), file=sys.stderr)
        return code
    log.info(kv("done", command=args.command))
    return 0


if __name__ == "__main__":
    sys.exit(main())
