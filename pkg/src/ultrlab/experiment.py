"""Experiment driver: one declarative INI config describes a whole grid
(simulate -> train -> evaluate -> compare), and every output file records
the config hash and artifact version so runs are reproducible byte for byte.

Config sections and keys (all have defaults except the dataset paths):

    [experiment]  out_dir, methods (space-separated), seeds (space-separated)
    [data]        annotated_train, annotated_eval, sessions, ground_truth
    [clicksim]    gamma, noise, sessions_per_query, initial_ranker, seed, list_len
    [train]       batch_size, steps, learning_rate, weight_clip_max,
                  encoder_layers, encoder_heads, ipw_propensity_path, log_every
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import __version__
from .clicksim import ClickModelConfig, export_ground_truth, simulate_corpus
from .data import (
    atomic_write_text,
    filter_sessions,
    fit_and_apply_normalization,
    load_annotated,
    load_sessions,
    load_vector,
    normalize_queries,
    save_sessions,
    save_vector,
)
from .metrics import (
    EVAL_KS,
    METRIC_NAMES,
    EvalReport,
    compare_reports,
    evaluate_ranker,
    propensity_report,
)
from .models import load_model, save_model
from .training import EVAL_MODEL, METHODS, TrainConfig, train


class ExperimentError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    out_dir: str = "runs/exp"
    methods: list[str] = field(default_factory=lambda: ["naive", "dla", "cdla_ld"])
    seeds: list[int] = field(default_factory=lambda: [7])
    annotated_train: str = ""
    annotated_eval: str = ""
    sessions: str = ""
    ground_truth: str = ""
    gamma: float = 1.0
    noise: float = 0.1
    sessions_per_query: int = 50
    initial_ranker: str = "feature:0"
    sim_seed: int = 101
    list_len: int = 10
    batch_size: int = 30
    steps: int = 2000
    learning_rate: float = 2e-5
    weight_clip_max: float = 10.0
    encoder_layers: int = 2
    encoder_heads: int = 4
    ipw_propensity_path: str = ""
    log_every: int = 100

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ExperimentError(f"unknown method {m!r}; expected one of {METHODS}")
        if not self.seeds:
            raise ExperimentError("at least one seed is required")
        if not self.sessions:
            self.sessions = os.path.join(self.out_dir, "sessions.txt")
        if not self.ground_truth:
            self.ground_truth = os.path.join(self.out_dir, "ground_truth.txt")

    def config_hash(self):
        canon = "\n".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]

    def header(self, kind, **extra):
        parts = [f"ultrlab v{__version__} config={self.config_hash()} kind={kind}"]
        parts.extend(f"{k}={v}" for k, v in extra.items())
        return [" ".join(parts)]


_SECTION_FIELDS = {
    "experiment": ("out_dir", "methods", "seeds"),
    "data": ("annotated_train", "annotated_eval", "sessions", "ground_truth"),
    "clicksim": ("gamma", "noise", "sessions_per_query", "initial_ranker", "seed", "list_len"),
    "train": (
        "batch_size",
        "steps",
        "learning_rate",
        "weight_clip_max",
        "encoder_layers",
        "encoder_heads",
        "ipw_propensity_path",
        "log_every",
    ),
}

_INT_KEYS = {
    "sessions_per_query", "seed", "list_len", "batch_size", "steps",
    "encoder_layers", "encoder_heads", "log_every",
}
_FLOAT_KEYS = {"gamma", "noise", "learning_rate", "weight_clip_max"}


def load_config(path, seed_override=None, out_override=None):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    if not parser.read(path):
        raise ExperimentError(f"cannot read config file {path}")
    values = {}
    for section in parser.sections():
        if section not in _SECTION_FIELDS:
            raise ExperimentError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTION_FIELDS[section]:
                raise ExperimentError(f"unknown key {key!r} in section [{section}]")
            name = "sim_seed" if (section == "clicksim" and key == "seed") else key
            if key == "methods":
                values[name] = raw.split()
            elif key == "seeds":
                values[name] = [int(tok) for tok in raw.split()]
            elif key in _INT_KEYS:
                values[name] = int(raw)
            elif key in _FLOAT_KEYS:
                values[name] = float(raw)
            else:
                values[name] = raw.strip()
    config = ExperimentConfig(**values)
    if out_override:
        config.out_dir = out_override
        if "sessions" not in values:
            config.sessions = os.path.join(out_override, "sessions.txt")
        if "ground_truth" not in values:
            config.ground_truth = os.path.join(out_override, "ground_truth.txt")
    if seed_override is not None:
        config.seeds = [seed_override]
    return config


def run_dir(config, method, seed):
    return os.path.join(config.out_dir, "runs", f"{method}_s{seed}")


def report_path(config, method, seed):
    return os.path.join(config.out_dir, "reports", f"{method}_s{seed}_eval.tsv")


def cmd_simulate(config):
    """Simulate click sessions for the annotated training queries and write
    the session file plus the normalized ground-truth propensity vector."""
    if not config.annotated_train or not os.path.exists(config.annotated_train):
        raise ExperimentError(f"annotated training set not found: {config.annotated_train!r}")
    queries = load_annotated(config.annotated_train)
    click_cfg = ClickModelConfig(
        propensity_exponent=config.gamma, noise=config.noise, seed=config.sim_seed
    )
    sessions = simulate_corpus(
        queries,
        click_cfg,
        config.sessions_per_query,
        initial_ranker=config.initial_ranker,
        list_len=config.list_len,
    )
    os.makedirs(config.out_dir, exist_ok=True)
    save_sessions(
        config.sessions,
        sessions,
        header=config.header(
            "sessions",
            gamma=config.gamma,
            noise=config.noise,
            sessions_per_query=config.sessions_per_query,
            initial_ranker=config.initial_ranker,
        ),
    )
    truth = export_ground_truth(click_cfg)
    save_vector(
        config.ground_truth,
        truth.normalized_propensity,
        header=config.header("ground-truth", gamma=config.gamma, noise=config.noise),
    )
    return config.sessions, config.ground_truth


def _prepare_training_data(config):
    sessions = load_sessions(config.sessions)
    filtered = filter_sessions(sessions)
    normalized, _, stats = fit_and_apply_normalization(filtered)
    return normalized, stats


def cmd_train(config):
    """Train every (method, seed) pair in the grid; each run directory gets
    one checkpoint per model plus a loss-curve TSV."""
    normalized, stats = _prepare_training_data(config)
    run_dirs = []
    for method in config.methods:
        for seed in config.seeds:
            ipw_path = config.ipw_propensity_path
            if method == "ipw" and not ipw_path:
                ipw_path = config.ground_truth  # simulator truth doubles as the supplied file
            train_cfg = TrainConfig(
                method=method,
                batch_size=config.batch_size,
                steps=config.steps,
                learning_rate=config.learning_rate,
                weight_clip_max=config.weight_clip_max,
                seed=seed,
                encoder_layers=config.encoder_layers,
                encoder_heads=config.encoder_heads,
                ipw_propensity_path=ipw_path or None,
                log_every=config.log_every,
            )
            result = train(train_cfg, normalized)
            directory = run_dir(config, method, seed)
            os.makedirs(directory, exist_ok=True)
            meta = {
                "artifact": f"ultrlab v{__version__}",
                "config_hash": config.config_hash(),
                "method": method,
                "seed": str(seed),
                "encoder_layers": str(config.encoder_layers),
                "encoder_heads": str(config.encoder_heads),
            }
            for key, model in result.models.items():
                kind_meta = dict(meta, kind=key)
                stats_arg = stats if key in ("pointwise", "listwise") else None
                save_model(
                    os.path.join(directory, f"{key}.ckpt"), model, kind_meta, feature_stats=stats_arg
                )
            curve_lines = ["step\tloss\tvalue"]
            curve_lines.extend(f"{r.step}\t{r.name}\t{r.value!r}" for r in result.loss_curves)
            header = "\n".join(f"# {h}" for h in config.header("losses", method=method, seed=seed))
            atomic_write_text(
                os.path.join(directory, "losses.tsv"), header + "\n" + "\n".join(curve_lines) + "\n"
            )
            run_dirs.append(directory)
    return run_dirs


def save_report(path, report, header_lines):
    lines = [f"# {h}" for h in header_lines]
    lines.append("scope\tqid\tmetric\tk\tvalue")
    for metric in METRIC_NAMES:
        for k in EVAL_KS:
            values = report.per_query[(metric, k)]
            for qid, value in zip(report.query_ids, values):
                lines.append(f"query\t{qid}\t{metric}\t{k}\t{value!r}")
    for metric in METRIC_NAMES:
        for k in EVAL_KS:
            lines.append(f"mean\t-\t{metric}\t{k}\t{report.mean(metric, k)!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_report(path):
    method = ""
    query_ids = []
    buckets = {(m, k): {} for m in METRIC_NAMES for k in EVAL_KS}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                for token in line.split():
                    if token.startswith("method="):
                        method = token.split("=", 1)[1]
                continue
            if line.startswith("scope\t"):
                continue
            scope, qid, metric, k, value = line.split("\t")
            if scope != "query":
                continue
            key = (metric, int(k))
            if qid not in buckets[key]:
                if key == (METRIC_NAMES[0], EVAL_KS[0]):
                    query_ids.append(qid)
                buckets[key][qid] = float(value)
    per_query = {
        key: np.array([vals[qid] for qid in query_ids]) for key, vals in buckets.items()
    }
    return EvalReport(method=method, query_ids=query_ids, per_query=per_query)


def cmd_evaluate(config):
    """Evaluate every trained run on the annotated evaluation set; per-seed
    reports keep per-query values, summaries aggregate mean and std."""
    if not config.annotated_eval or not os.path.exists(config.annotated_eval):
        raise ExperimentError(f"annotated evaluation set not found: {config.annotated_eval!r}")
    queries = load_annotated(config.annotated_eval)
    os.makedirs(os.path.join(config.out_dir, "reports"), exist_ok=True)
    written = []
    for method in config.methods:
        seed_reports = []
        for seed in config.seeds:
            ckpt = os.path.join(run_dir(config, method, seed), f"{EVAL_MODEL[method]}.ckpt")
            if not os.path.exists(ckpt):
                raise ExperimentError(f"missing checkpoint {ckpt}; run train first")
            model, meta, stats = load_model(ckpt)
            if stats is None:
                raise ExperimentError(f"{ckpt} carries no feature statistics")
            normalized = normalize_queries(queries, stats)
            report = evaluate_ranker(lambda feats: model.score(feats).values, normalized)
            report.method = method
            path = report_path(config, method, seed)
            save_report(path, report, config.header("eval", method=method, seed=seed))
            seed_reports.append(report)
            written.append(path)
        summary = os.path.join(config.out_dir, "reports", f"{method}_summary.tsv")
        lines = [
            f"# {h}"
            for h in config.header(
                "eval-summary", method=method, seeds=",".join(str(s) for s in config.seeds)
            )
        ]
        lines.append("metric\tk\tmean\tstd\tseed_values")
        for metric in METRIC_NAMES:
            for k in EVAL_KS:
                vals = np.array([r.mean(metric, k) for r in seed_reports])
                seedvals = " ".join(repr(float(v)) for v in vals)
                lines.append(f"{metric}\t{k}\t{vals.mean()!r}\t{vals.std()!r}\t{seedvals}")
        atomic_write_text(summary, "\n".join(lines) + "\n")
        written.append(summary)
    return written


def cmd_compare(report_a_path, report_b_path, out_path=None, alpha=0.05):
    """Paired significance table between two per-seed evaluation reports."""
    report_a = load_report(report_a_path)
    report_b = load_report(report_b_path)
    rows = compare_reports(report_a, report_b, alpha=alpha)
    lines = [
        f"# ultrlab v{__version__} kind=compare a={report_a_path} b={report_b_path} alpha={alpha}"
    ]
    lines.append("metric\tk\tmean_a\tmean_b\tdiff\tp_value\tsignificant")
    for row in rows:
        mark = "*" if row.significant else "-"
        diff = row.mean_a - row.mean_b
        lines.append(
            f"{row.metric}\t{row.k}\t{row.mean_a!r}\t{row.mean_b!r}\t{diff!r}\t{row.p_value!r}\t{mark}"
        )
    text = "\n".join(lines) + "\n"
    if out_path:
        atomic_write_text(out_path, text)
    return rows, text


def cmd_propensity_report(config):
    """Write the learned normalized propensity table for every run that
    trained a propensity model, next to the truth and observed CTR."""
    truth = load_vector(config.ground_truth) if os.path.exists(config.ground_truth) else None
    sessions = load_sessions(config.sessions) if os.path.exists(config.sessions) else None
    os.makedirs(os.path.join(config.out_dir, "reports"), exist_ok=True)
    written = []
    for method in config.methods:
        for seed in config.seeds:
            ckpt = os.path.join(run_dir(config, method, seed), "propensity.ckpt")
            if not os.path.exists(ckpt):
                continue
            model, meta, _ = load_model(ckpt)
            rows = propensity_report(
                model.propensity().normalized, truth_normalized=truth, sessions=sessions
            )
            lines = [
                f"# {h}"
                for h in config.header("propensity", method=method, seed=seed)
            ]
            lines.append("position\tlearned\ttruth\tabs_deviation\tmean_ctr")
            for row in rows:
                truth_s = repr(row.truth) if row.truth is not None else "-"
                dev_s = repr(row.abs_deviation) if row.abs_deviation is not None else "-"
                ctr_s = repr(row.mean_ctr) if row.mean_ctr is not None else "-"
                lines.append(f"{row.position}\t{row.learned!r}\t{truth_s}\t{dev_s}\t{ctr_s}")
            path = os.path.join(
                config.out_dir, "reports", f"propensity_{method}_s{seed}.tsv"
            )
            atomic_write_text(path, "\n".join(lines) + "\n")
            written.append(path)
    return written
