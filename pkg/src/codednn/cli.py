"""Command-line pipeline: train experts, build coded models, evaluate, simulate, report.

Exit codes: 0 on success, 1 on a validation problem, 2 when a required
artifact (checkpoint or results file) is missing.
"""

from __future__ import annotations

import functools
import os
import sys

import click
import numpy as np

from . import coding, decoding, pipeline, report
from .config import ConfigError, ExperimentConfig, load_config, mix_seed
from .net import TrainConfig
from .simulate import (CODED_SERVER, POLICY_CODED, POLICY_UNCODED, ServerSpec,
                       TrafficSpec, run_sim, simulate_queries, summarize)
from .store import MissingArtifactError, append_csv, atomic_write_text, read_csv, save_diag_fisher

EXPERTS_HEADER = ["config", "scenario", "seed", "expert", "train_accuracy", "test_accuracy"]
NDA_HEADER = ["config", "scenario", "method", "seed", "expert", "nda",
              "expert_accuracy", "test_size"]
ABLATE_HEADER = ["config", "scenario", "method", "seed", "p", "expert", "nda"]
CURVE_HEADER = ["config", "scenario", "seed", "epoch", "train_decode_nda", "test_nda",
                "coding_loss"]
LATENCY_HEADER = ["config", "seed", "policy", "completed", "arrivals", "in_flight",
                  "mean_latency", "p50", "p99", "decode_fraction", "agreement_rate"]
RAW_HEADER = ["config", "policy", "seed", "expert", "arrival", "completion", "path",
              "decode_agree"]


def _load(config_path, out, seed) -> ExperimentConfig:
    cfg = load_config(config_path)
    if out is not None:
        cfg.resolved["output_dir"] = out
    if seed is not None:
        cfg.resolved["seeds"] = [int(seed)]
    return cfg


def _command(func):
    """Map domain errors onto the documented exit codes."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            func(*args, **kwargs)
        except MissingArtifactError as err:
            click.echo(f"missing artifact: {err}", err=True)
            sys.exit(2)
        except (ConfigError, ValueError) as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(1)

    return wrapper


def _common_options(func):
    func = click.option("--config", "config_path", required=True,
                        type=click.Path(), help="experiment config document")(func)
    func = click.option("--out", default=None, type=click.Path(),
                        help="override the configured output directory")(func)
    func = click.option("--seed", default=None, type=int,
                        help="run a single seed instead of the configured list")(func)
    return func


@click.group()
def main():
    """Erasure-coded inference over neural networks."""


@main.command("train-experts")
@_common_options
@_command
def cmd_train_experts(config_path, out, seed):
    """Generate scenario data and fit the base and expert networks."""
    cfg = _load(config_path, out, seed)
    rows = []
    for run_seed in cfg.seeds:
        data = pipeline.build_data(cfg, run_seed)
        bundle = pipeline.train_experts(cfg, run_seed, data)
        pipeline.save_experts(cfg, cfg.output_dir, run_seed, bundle)
        for i in range(len(bundle.experts)):
            rows.append([cfg.hash, cfg.scenario_name, run_seed, i,
                         bundle.train_accuracy[i], bundle.test_accuracy[i]])
            click.echo(f"seed {run_seed} expert {i}: "
                       f"train acc {bundle.train_accuracy[i]:.4f} "
                       f"test acc {bundle.test_accuracy[i]:.4f}")
    append_csv(os.path.join(pipeline.results_dir(cfg.output_dir), "experts.csv"),
               EXPERTS_HEADER, rows)


@main.command("code")
@click.option("--method", required=True, type=click.Choice(list(coding.METHODS)))
@_common_options
@_command
def cmd_code(config_path, out, seed, method):
    """Build one coded checkpoint per seed from the expert checkpoints."""
    cfg = _load(config_path, out, seed)
    for run_seed in cfg.seeds:
        data = pipeline.build_data(cfg, run_seed)
        base, experts = pipeline.load_experts(cfg, cfg.output_dir, run_seed)
        bundle = pipeline.ExpertBundle(base, experts, [], [])
        fishers = None
        if method == coding.METHOD_COIN:
            fishers = pipeline.compute_fishers(experts, data.probe)
            for i, fisher in enumerate(fishers):
                save_diag_fisher(pipeline.fisher_path(cfg.output_dir, run_seed, i), fisher)
        coded = pipeline.build_coded(cfg, method, run_seed, data, bundle, fishers)
        pipeline.save_coded(cfg, cfg.output_dir, run_seed, coded)
        click.echo(f"seed {run_seed} {method}: hyperparams {coded.hyperparams}")


@main.command("evaluate")
@_common_options
@_command
def cmd_evaluate(config_path, out, seed):
    """Decode every expert from every coded checkpoint and append the results."""
    cfg = _load(config_path, out, seed)
    rows = []
    for run_seed in cfg.seeds:
        data = pipeline.build_data(cfg, run_seed)
        _, experts = pipeline.load_experts(cfg, cfg.output_dir, run_seed)
        for method in cfg.methods:
            coded = pipeline.load_coded(cfg.output_dir, run_seed, method)
            nda_rep, loss, _ = pipeline.evaluate_coded(cfg, data, experts, coded)
            for i, value in enumerate(nda_rep.per_network):
                rows.append([cfg.hash, cfg.scenario_name, method, run_seed, str(i),
                             value, nda_rep.denominators[i], nda_rep.test_sizes[i]])
            rows.append([cfg.hash, cfg.scenario_name, method, run_seed, "avg",
                         nda_rep.average, "", ""])
            click.echo(f"seed {run_seed} {method}: avg NDA {nda_rep.average:.2f} "
                       f"(coding loss {loss:.3e})")
    append_csv(os.path.join(pipeline.results_dir(cfg.output_dir), "nda.csv"),
               NDA_HEADER, rows)


@main.command("ablate-p")
@_common_options
@_command
def cmd_ablate_p(config_path, out, seed):
    """Re-code and re-evaluate at every probe size in the configured list."""
    cfg = _load(config_path, out, seed)
    rows = []
    for run_seed in cfg.seeds:
        base, experts = pipeline.load_experts(cfg, cfg.output_dir, run_seed)
        bundle = pipeline.ExpertBundle(base, experts, [], [])
        for p in cfg.ablate_p:
            data = pipeline.build_data(cfg, run_seed, probe_size=p)
            for method in cfg.methods:
                coded = pipeline.build_coded(cfg, method, run_seed, data, bundle)
                nda_rep, _, _ = pipeline.evaluate_coded(cfg, data, experts, coded)
                for i, value in enumerate(nda_rep.per_network):
                    rows.append([cfg.hash, cfg.scenario_name, method, run_seed, p,
                                 str(i), value])
                rows.append([cfg.hash, cfg.scenario_name, method, run_seed, p,
                             "avg", nda_rep.average])
                click.echo(f"seed {run_seed} P={p} {method}: avg NDA {nda_rep.average:.2f}")
    append_csv(os.path.join(pipeline.results_dir(cfg.output_dir), "ablate_p.csv"),
               ABLATE_HEADER, rows)


@main.command("distill-curve")
@_common_options
@_command
def cmd_distill_curve(config_path, out, seed):
    """Track decoded accuracy on the training probe vs the test sets per epoch."""
    cfg = _load(config_path, out, seed)
    if coding.METHOD_DISTILL not in cfg.methods:
        raise ConfigError("distill-curve needs 'distill' in the configured methods")
    rows = []
    for run_seed in cfg.seeds:
        data = pipeline.build_data(cfg, run_seed)
        _, experts = pipeline.load_experts(cfg, cfg.output_dir, run_seed)
        val_sets = pipeline.probe_validation_sets(data)

        def on_epoch(epoch, params, _seed=run_seed):
            train_nda = np.mean([
                decoding.nda(params, experts, i, val, cfg.weights)
                for i, val in enumerate(val_sets)
            ])
            test_nda = np.mean([
                decoding.nda(params, experts, i, test, cfg.weights)
                for i, test in enumerate(data.test)
            ])
            loss = decoding.empirical_coding_loss(params, experts, cfg.weights, data.probe)
            rows.append([cfg.hash, cfg.scenario_name, _seed, epoch,
                         float(train_nda), float(test_nda), loss])

        init = coding.vanilla_average(experts, cfg.weights).params
        section = cfg.distill_train
        coding.distill(experts, cfg.weights, data.probe, init,
                       TrainConfig(section["learning_rate"], section["epochs"],
                                   section["batch_size"], section["weight_decay"],
                                   mix_seed(run_seed, "distill"), "squared_error"),
                       on_epoch=on_epoch)
        click.echo(f"seed {run_seed}: final train decode NDA {rows[-1][4]:.2f}, "
                   f"test NDA {rows[-1][5]:.2f}")
    append_csv(os.path.join(pipeline.results_dir(cfg.output_dir), "distill_curve.csv"),
               CURVE_HEADER, rows)


@main.command("simulate")
@_common_options
@_command
def cmd_simulate(config_path, out, seed):
    """Run the serving simulation for each configured policy."""
    cfg = _load(config_path, out, seed)
    sim = cfg.simulator
    if sim is None:
        raise ConfigError("config has no simulator section")
    lat_rows, raw_rows = [], []
    for run_seed in cfg.seeds:
        data = pipeline.build_data(cfg, run_seed)
        _, experts = pipeline.load_experts(cfg, cfg.output_dir, run_seed)
        pools = [t.inputs for t in data.test]
        traffic = TrafficSpec(tuple(sim["arrival_rates"]), sim["horizon"],
                              ensemble_rate=sim["ensemble_rate"])
        servers = [
            ServerSpec(i, sim["service_rate"], sim["straggler_prob"],
                       sim["slowdown"], sim["service"])
            for i in range(len(experts))
        ]
        coded = None
        if POLICY_CODED in sim["policies"]:
            coded = pipeline.load_coded(cfg.output_dir, run_seed, sim["method"])
            servers.append(ServerSpec(CODED_SERVER, sim["service_rate"],
                                      sim["straggler_prob"], sim["slowdown"],
                                      sim["service"]))
        for policy in sim["policies"]:
            records = simulate_queries(
                servers, traffic, policy, cfg.network, experts,
                weights=cfg.weights, query_pools=pools,
                coded=coded.params if coded is not None else None,
                seed=mix_seed(run_seed, "sim"),
            )
            if any(r.completion is not None for r in records):
                rep = summarize(records, policy, arrivals=len(records))
            else:
                from .simulate import _empty_report

                rep = _empty_report(policy, len(records))
            lat_rows.append([cfg.hash, run_seed] + rep.csv_row())
            for r in records:
                raw_rows.append([
                    cfg.hash, policy, run_seed, r.expert, r.arrival,
                    "" if r.completion is None else r.completion,
                    "" if r.path is None else r.path,
                    "" if r.decode_agree is None else int(r.decode_agree),
                ])
            click.echo(f"seed {run_seed} {policy}: completed {rep.completed}, "
                       f"p99 {rep.p99:.3f}" if rep.completed else
                       f"seed {run_seed} {policy}: no completed queries")
    append_csv(os.path.join(pipeline.results_dir(cfg.output_dir), "latency.csv"),
               LATENCY_HEADER, lat_rows)
    append_csv(os.path.join(pipeline.results_dir(cfg.output_dir), "latency_raw.csv"),
               RAW_HEADER, raw_rows)


@main.command("report")
@_common_options
@_command
def cmd_report(config_path, out, seed):
    """Render figures and the summary table from the accumulated results."""
    cfg = _load(config_path, out, seed)
    rdir = pipeline.results_dir(cfg.output_dir)
    fdir = pipeline.figures_dir(cfg.output_dir)
    os.makedirs(fdir, exist_ok=True)

    _, nda_rows = read_csv(os.path.join(rdir, "nda.csv"))
    if not nda_rows:
        raise MissingArtifactError("nda.csv has no result rows")
    seen = report.check_single_config(nda_rows)
    if seen != cfg.hash:
        raise ConfigError(
            f"results were produced with config {seen}, current config is {cfg.hash}"
        )
    report.render_nda_figure(
        nda_rows, os.path.join(fdir, f"nda_{nda_rows[0][1]}.svg"), cfg.hash)
    text = f"config {cfg.hash}\n\n" + report.summary_table(nda_rows)
    atomic_write_text(os.path.join(cfg.output_dir, "summary.txt"), text)
    report.write_summary_csv(os.path.join(cfg.output_dir, "summary.csv"),
                             nda_rows, cfg.hash)
    click.echo(text)

    ablate = os.path.join(rdir, "ablate_p.csv")
    if os.path.exists(ablate):
        _, rows = read_csv(ablate)
        if rows:
            report.check_single_config(rows)
            report.render_p_ablation(rows, os.path.join(fdir, "p_ablation.svg"), cfg.hash)
    curve = os.path.join(rdir, "distill_curve.csv")
    if os.path.exists(curve):
        _, rows = read_csv(curve)
        if rows:
            report.check_single_config(rows)
            report.render_distill_curve(rows, os.path.join(fdir, "distill_curve.svg"),
                                        cfg.hash)
    raw = os.path.join(rdir, "latency_raw.csv")
    if os.path.exists(raw):
        _, rows = read_csv(raw)
        if rows:
            report.check_single_config(rows)
            report.render_latency_cdf(rows, os.path.join(fdir, "latency_cdf.svg"),
                                      cfg.hash)


if __name__ == "__main__":
    main()
