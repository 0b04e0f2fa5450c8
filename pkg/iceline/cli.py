#!/usr/bin/env python3

# iceline - stochastic ice-line energy-balance model
# SPDX-License-Identifier: MPL-2.0

import argparse
import logging
import math
import os
import shutil
import sys
import tempfile

import iceline
import iceline.config
from iceline import averaging, experiments, simulator, utils
from iceline.frozen import DegenerateModelError, StabilityError
from iceline.model import ModelParams, validate_assumptions
from iceline.utils import json_pretty_print, yaml

__version__ = iceline.__version__

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4

CONSOLE_HANDLER_NAME = "iceline-console"

NUMERICAL_ERRORS = (
    StabilityError,
    DegenerateModelError,
    averaging.DivergenceError,
    FloatingPointError,
    OverflowError,
)


class Color:
    def __init__(self, do_color=True):
        self.isatty = sys.stdout.isatty()
        self.do_color = do_color
        if not self.do_color:
            return
        if not self.isatty:
            self.do_color = False
            return
        try:
            import termcolor

            self.termcolor = termcolor
        except ImportError:
            self.do_color = False

    def colored(self, st, *args, **kwargs):
        if not self.do_color:
            return st
        return self.termcolor.colored(st, *args, **kwargs)

    def status(self, passed):
        if passed:
            return self.colored("pass", "green")
        return self.colored("FAIL", "red", attrs=["bold"])


def _defaults_epilog():
    params = ModelParams()
    return "model defaults: {} (A = {:.6g}, B = {:.6g})".format(
        ", ".join("{}={}".format(k, v) for k, v in params.to_dict().items()),
        params.A,
        params.B,
    )


def parse_args(argv=None):
    parser = argparse.ArgumentParser(
        description="Stochastic ice-line energy-balance model ({})".format(__version__),
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        epilog=_defaults_epilog(),
    )
    parser.add_argument(
        "--version",
        action="version",
        version=__version__,
        help="report the program version",
    )
    parser.add_argument(
        "--debug", action="store_true", help="output additional debugging information"
    )
    parser.add_argument(
        "--no-color", action="store_true", help="never color the validation report"
    )

    subparsers = parser.add_subparsers(dest="command")
    subparsers.required = True

    helps = {
        "drift-curve": "tabulate the averaged drift for several insolation values",
        "density": "stationary density of the averaged ice line",
        "equilibria": "equilibria of the averaged drift",
        "mfpt": "mean transition times between stable equilibria",
        "simulate": "simulate the slow-fast system",
        "converge": "coupled slow-fast vs averaged convergence experiment",
        "ergodic": "time-average error along frozen paths",
        "sobolev": "W^1,2 norm diagnostic of the temperature field",
        "validate": "check the structural model assumptions",
        "confine": "count ice-line boundary contacts",
    }
    for kind in iceline.KINDS:
        p = subparsers.add_parser(
            kind,
            help=helps[kind],
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
            epilog=_defaults_epilog(),
        )
        p.add_argument(
            "--config",
            "-c",
            type=str,
            action="append",
            default=None,
            help="experiment config or run manifest (repeat to merge several)",
        )
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="base random seed")
        p.add_argument("--paths", type=int, default=None, help="ensemble size")
        p.add_argument("--eps", type=float, nargs="+", default=None, help="scale separation(s)")
        p.add_argument("--workers", type=int, default=None, help="worker processes for ensembles")

    optional_formats = []
    if not isinstance(yaml, ImportError):
        optional_formats.append("yaml")
    parser_params = subparsers.add_parser("params", help="print the resolved model parameters")
    parser_params.add_argument(
        "--config", "-c", type=str, action="append", default=None, help="experiment config"
    )
    parser_params.add_argument(
        "--format",
        type=str,
        choices=["json", *optional_formats],
        default="json",
        help="output format",
    )

    args = parser.parse_args(argv)
    args.parser = parser
    return args


def apply_overrides(spec, args):
    """Command-line flags take precedence over the config file."""
    run = {}
    if args.seed is not None:
        run["seed"] = args.seed
    if args.paths is not None:
        run["n_paths"] = args.paths
    if args.workers is not None:
        run["workers"] = args.workers
    if args.eps is not None:
        if spec.kind == "converge":
            spec.options["epsilons"] = list(args.eps)
        elif len(args.eps) == 1:
            run["epsilon"] = args.eps[0]
        else:
            raise iceline.config.ConfigError("--eps takes a single value for {}".format(spec.kind))
    if run:
        spec.run = spec.run.replace(**run)
    if args.out is not None:
        spec.output_dir = args.out
    return spec


class Driver:
    def __init__(self, args):
        self.args = args
        self.color = Color(not getattr(args, "no_color", False))

        self.logger = logging.getLogger()
        self.logger.setLevel(logging.DEBUG)
        for handler in list(self.logger.handlers):
            if handler.get_name() == CONSOLE_HANDLER_NAME:
                self.logger.removeHandler(handler)
        lh_console = logging.StreamHandler()
        lh_console.set_name(CONSOLE_HANDLER_NAME)
        log_format = "%(levelname)s: %(message)s"
        if sys.stderr.isatty():
            log_format = "[%(asctime)s] " + log_format
        lh_console.setFormatter(logging.Formatter(log_format))
        if self.args.debug:
            lh_console.setLevel(logging.DEBUG)
        else:
            lh_console.setLevel(logging.INFO)
        self.logger.addHandler(lh_console)

    def load_spec(self, kind=None):
        if self.args.config:
            spec = iceline.config.load_config(*self.args.config)
        else:
            spec = iceline.ExperimentSpec(kind or "validate")
        if kind is not None and spec.kind != kind:
            raise iceline.config.ConfigError(
                "config is for {}, not {}".format(spec.kind, kind)
            )
        return spec

    def cmd_params(self):
        spec = self.load_spec()
        out = spec.params.to_dict()
        out["derived"] = {"A": spec.params.A, "B": spec.params.B}
        if self.args.format == "yaml":
            print(yaml.safe_dump(out), end="")
        else:
            print(json_pretty_print(out))
        return EXIT_OK

    def cmd_experiment(self):
        spec = apply_overrides(self.load_spec(self.args.command), self.args)
        return run_experiment(spec, self.color)

    def main(self):
        cmd_map = {"params": self.cmd_params}
        try:
            return cmd_map.get(self.args.command, self.cmd_experiment)()
        except iceline.config.ConfigError as e:
            self.logger.error(str(e))
            return EXIT_CONFIG


class Experiment:
    """Runs one ExperimentSpec, writing its artifacts into a scratch directory."""

    def __init__(self, spec, out_dir, color=None):
        self.spec = spec
        self.out_dir = out_dir
        self.color = color if color is not None else Color(False)
        self.logger = logging.getLogger(__name__)
        self.params = spec.params
        self.noise = spec.noise
        self.options = spec.options
        self.artifacts = []

    def path(self, name):
        self.artifacts.append(name)
        filename = os.path.join(self.out_dir, name)
        utils.ensure_dir(os.path.dirname(filename))
        self.logger.info("Writing {}".format(os.path.join(self.spec.output_dir, name)))
        return filename

    def write_json(self, name, v):
        utils.write_json_file(self.path(name), v)

    def averaged_model(self, params=None):
        return averaging.tabulate(
            params or self.params,
            self.noise,
            n_grid=self.options["n_grid"],
            delta=self.options["delta"],
            order=self.options["quadrature_order"],
            workers=self.spec.run.workers,
        )

    def exp_validate(self):
        report = validate_assumptions(
            self.params, self.noise, self.options["kappa_prime"], self.options["mu_sup"]
        )
        for check in report.checks:
            print("{:7} {} (margin {:.6g}): {}".format(
                check.name, self.color.status(check.passed), check.margin, check.detail
            ))
        self.write_json("validation.json", report.to_dict())
        return report.to_dict(), EXIT_OK if report.passed else EXIT_VALIDATION

    def exp_drift_curve(self):
        curves = averaging.drift_curve(
            self.params,
            self.noise,
            self.options["q_values"],
            self.options["n_grid"],
            self.options["delta"],
            self.options["quadrature_order"],
            workers=self.spec.run.workers,
        )
        summary = {}
        for q, model in curves.items():
            model.to_csv(self.path("drift_curve_Q{:g}.csv".format(q)))
            summary["{:g}".format(q)] = [e.to_dict() for e in model.equilibria]
        self.write_json("drift_curve.json", summary)
        return summary, EXIT_OK

    def exp_equilibria(self):
        model = self.averaged_model()
        averaging.find_equilibria(model)
        model.to_csv(self.path("averaged.csv"))
        summary = model.to_dict()
        self.write_json("equilibria.json", summary)
        return summary, EXIT_OK

    def exp_density(self):
        model = self.averaged_model()
        averaging.find_equilibria(model)
        averaging.stationary_density(model)
        model.to_csv(self.path("averaged.csv"))
        summary = model.to_dict()
        self.write_json("density.json", summary)
        return summary, EXIT_OK

    def exp_mfpt(self):
        model = self.averaged_model()
        averaging.find_equilibria(model)
        averaging.stationary_density(model)
        averaging.mfpt_matrix(model)
        summary = model.to_dict()
        start = self.options["mfpt_from"]
        target = self.options["mfpt_to"]
        if start is not None and target is not None:
            log_T = averaging.log_mean_first_passage(model, start, target, self.options["reflect_at"])
            passage = {
                "from": start,
                "to": target,
                "reflect_at": self.options["reflect_at"],
                "log10_time": log_T / math.log(10.0),
                "time": math.exp(log_T) if log_T < 700 else math.inf,
            }
            if self.options["mc_paths"] > 0:
                estimate = averaging.mfpt_monte_carlo(
                    model,
                    start,
                    target,
                    n_paths=self.options["mc_paths"],
                    dt=self.options["mc_dt"],
                    seed=self.spec.run.seed,
                    reflect_at=self.options["reflect_at"],
                    workers=self.spec.run.workers,
                )
                passage["monte_carlo"] = estimate.to_dict()
                if passage["time"] not in (0.0, math.inf):
                    passage["relative_error"] = abs(estimate.mean - passage["time"]) / passage["time"]
            summary["passage"] = passage
        self.write_json("mfpt.json", summary)
        return summary, EXIT_OK

    def exp_simulate(self):
        ensemble = simulator.run_slowfast_ensemble(self.spec.run, self.params, self.noise)
        for i in range(len(ensemble)):
            ensemble.path(i).to_csv(self.path(os.path.join("paths", "path_{:05d}.csv".format(i))))
        summary = ensemble.summary()
        if self.options["weak_levels"] > 0:
            report = experiments.weak_refinement(
                self.spec.run, self.averaged_model(), self.options["weak_dt"], self.options["weak_levels"]
            )
            summary["weak_refinement"] = report.to_dict()
        self.write_json("simulate.json", summary)
        return summary, EXIT_NUMERICAL if ensemble.n_aborted else EXIT_OK

    def exp_converge(self):
        report = experiments.convergence_experiment(
            self.spec.run,
            self.params,
            self.noise,
            self.options["epsilons"],
            self.options["threshold"],
            model=self.averaged_model(),
        )
        summary = report.to_dict()
        summary["run"] = self.spec.run.to_dict()
        self.write_json("convergence.json", summary)
        return summary, EXIT_OK if report.passed else EXIT_VALIDATION

    def exp_ergodic(self):
        reports = []
        run = self.spec.run
        for eta in self.options["etas"]:
            report = experiments.ergodic_average_experiment(
                self.params,
                self.noise,
                eta,
                self.options["horizons"],
                n_paths=run.n_paths,
                dt=run.dt,
                seed=run.seed,
                X0=run.X0,
                n_lat=run.n_lat,
                order=self.options["quadrature_order"],
                workers=run.workers,
            )
            utils.write_csv_file(
                self.path("ergodic_eta{:g}.csv".format(eta)),
                ("T", "error", "stderr"),
                zip(report.horizons, report.errors, report.stderrs),
            )
            reports.append(report.to_dict())
        summary = {"reports": reports}
        self.write_json("ergodic.json", summary)
        return summary, EXIT_OK

    def exp_sobolev(self):
        ensemble = simulator.run_slowfast_ensemble(
            self.spec.run, self.params, self.noise, snapshot_stride=self.options["snapshot_stride"]
        )
        report = experiments.sobolev_diagnostic(ensemble)
        report.to_csv(self.path("sobolev.csv"))
        ensemble.path(0).snapshots_to_csv(self.path("snapshots_path_00000.csv"))
        summary = report.to_dict()
        summary["ensemble"] = ensemble.summary()
        self.write_json("sobolev.json", summary)
        return summary, EXIT_NUMERICAL if ensemble.n_aborted else EXIT_OK

    def exp_confine(self):
        summary = experiments.confinement_experiment(self.spec.run, self.params, self.noise)
        self.write_json("confinement.json", summary)
        return summary, EXIT_NUMERICAL if summary["aborted"] else EXIT_OK

    def run(self):
        return getattr(self, "exp_{}".format(self.spec.kind.replace("-", "_")))()


def run_experiment(spec, color=None):
    """Run spec and move its artifacts and manifest into spec.output_dir.

    Nothing is written to output_dir unless the experiment finishes; the
    return value is the process exit code.
    """
    logger = logging.getLogger(__name__)
    manifest = iceline.RunManifest(spec)
    manifest.start()
    parent = os.path.dirname(os.path.abspath(spec.output_dir))
    utils.ensure_dir(parent)
    scratch = tempfile.mkdtemp(prefix=".iceline-", dir=parent)
    logger.info("Running {} (seed {})".format(spec.kind, spec.run.seed))
    try:
        experiment = Experiment(spec, scratch, color)
        try:
            summary, exit_code = experiment.run()
        except NUMERICAL_ERRORS as e:
            logger.error("{}: {}".format(type(e).__name__, e))
            return EXIT_NUMERICAL
        except ValueError as e:
            logger.error("{}: {}".format(type(e).__name__, e))
            return EXIT_CONFIG
        if exit_code == EXIT_NUMERICAL:
            logger.error("{}: numerical abort".format(spec.kind))
            return exit_code
        manifest.summary = summary
        manifest.artifacts = list(experiment.artifacts)
        manifest.stop(exit_code)
        utils.write_json_file(os.path.join(scratch, "manifest.json"), manifest.to_dict())
        utils.ensure_dir(spec.output_dir)
        for name in experiment.artifacts + ["manifest.json"]:
            target = os.path.join(spec.output_dir, name)
            utils.ensure_dir(os.path.dirname(target))
            os.replace(os.path.join(scratch, name), target)
        logger.info("Finished {} with exit code {}".format(spec.kind, exit_code))
        return exit_code
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def main(argv=None):
    args = parse_args(argv)
    d = Driver(args)
    return d.main()


if __name__ == "__main__":
    sys.exit(main())
