"""Command line interface: ``ctnor {fit,discover,changepoint,synth}``.

Settings come from an optional JSON config file (``--config``); command-line
flags override it.  Every command writes its results into ``--out`` and is
deterministic given its config and seed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import io
from .em import fit, fit_config_from_dict
from .errors import CtnorError, EmptySegment, NoExplanation, TraceParseError
from .stat_tests import Method, changepoint_test, discover, qq_points, roc_curve
from .synth import (
    ChangepointSpec,
    baseline_binomial,
    scenario_51,
    scenario_changepoint,
    unique_vicinity_counts,
)
from .trace_model import LEAK, enable_autocorrelation

log = logging.getLogger("ctnor")


@dataclass
class RunConfig:
    trace: str | None = None
    output_channel: str | None = None
    channel_groups: dict = field(default_factory=dict)
    delay_families: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)
    tests: str = "dependency"
    fast_bound: bool = False
    compare_exact: bool = False
    changepoint_interval: list | None = None
    changepoint_refit: bool = False
    channels: list | None = None
    baseline_windows: list = field(default_factory=list)
    autocorrelation: bool = False
    omega0: float | None = None
    truth: str | None = None
    manifest: str | None = None
    out: str = "."
    seed: int = 0
    scenario: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path):
        data = io.read_json(path)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise TraceParseError(f"unknown config keys {sorted(unknown)}", None, path)
        return cls(**data)

    def fit_config(self):
        d = dict(self.fit)
        d["delay_families"] = self.delay_families
        if d.get("init_strategy") == "random_seeded" and d.get("seed") is None:
            d["seed"] = self.seed
        return fit_config_from_dict(d)

    def load_trace(self):
        if not self.trace:
            raise CtnorError("no trace file given (--trace or 'trace' in the config)")
        trace = io.read_trace(self.trace, self.channel_groups, self.output_channel)
        if self.autocorrelation:
            trace = enable_autocorrelation(trace)
        return trace


def _add_common(p, trace=True):
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    if trace:
        p.add_argument("--trace", help="trace file")
        p.add_argument("--horizon", type=float, help="candidate horizon in seconds")
        p.add_argument("--max-iters", type=int)
        p.add_argument("--rel-tol", type=float)
        p.add_argument("--autocorrelation", action="store_true", default=None,
                       help="let outputs be explained by earlier outputs")


def build_parser():
    parser = argparse.ArgumentParser(prog="ctnor", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model to a trace")
    _add_common(p)

    p = sub.add_parser("discover", help="dependency tests for every input channel")
    _add_common(p)
    p.add_argument("--fast-bound", action="store_true", default=None,
                   help="use the no-refit bound statistic")
    p.add_argument("--compare-exact", action="store_true", default=None,
                   help="with --fast-bound, also emit exact refit rows")
    p.add_argument("--truth", help="truth file; enables ROC output")
    p.add_argument("--manifest", help="scenario manifest with causal flags")
    p.add_argument("--omega0", type=float, help="chi-bar zero mass (default: estimated)")
    p.add_argument("--tests", choices=["dependency", "both"],
                   help="'both' also runs changepoint tests when an interval is configured")
    p.add_argument("--baseline-window", type=float, action="append", dest="baseline_windows",
                   help="co-occurrence window W for baseline detectors (repeatable)")

    p = sub.add_parser("changepoint", help="two-period weight change tests")
    _add_common(p)
    p.add_argument("--interval", type=float, nargs=2, metavar=("START", "END"))
    p.add_argument("--channel", action="append", dest="channels")
    p.add_argument("--refit", action="store_true", default=None,
                   help="fit the alternative by full EM instead of one M-step")

    p = sub.add_parser("synth", help="generate a synthetic scenario")
    _add_common(p, trace=False)
    p.add_argument("--scenario", choices=["scenario_51", "changepoint"])
    p.add_argument("--hours", type=int)
    p.add_argument("--causal-weight", type=float)
    p.add_argument("--delay-rate", type=float)
    p.add_argument("--rate-convention", choices=["rate", "mean"])
    p.add_argument("--noise-per-hour", type=float)
    p.add_argument("--w-before", type=float)
    p.add_argument("--w-after", type=float)
    return parser


_FIT_FLAGS = {"horizon": "horizon", "max_iters": "max_iters", "rel_tol": "rel_tol"}
_SCENARIO_FLAGS = ("scenario", "hours", "causal_weight", "delay_rate", "rate_convention",
                   "noise_per_hour", "w_before", "w_after")


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for name in ("out", "seed", "trace", "autocorrelation", "fast_bound", "compare_exact",
                 "truth", "manifest", "omega0", "channels", "tests"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if getattr(args, "baseline_windows", None):
        cfg.baseline_windows = args.baseline_windows
    if getattr(args, "interval", None):
        cfg.changepoint_interval = list(args.interval)
    if getattr(args, "refit", None):
        cfg.changepoint_refit = True
    for flag, key in _FIT_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            cfg.fit[key] = v
    for key in _SCENARIO_FLAGS:
        v = getattr(args, key, None)
        if v is not None:
            cfg.scenario[key] = v
    return cfg


def _outdir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_fit(out, trace, report):
    io.write_model(out / "model.json", report.model)
    (out / "trajectory.csv").write_text(report.trajectory_table())
    rows = [(ch, trace.count(ch), report.model.weights[ch], ch in report.excluded_channels)
            for ch in trace.channel_ids]
    rows.append((LEAK, 1, report.model.leak, False))
    io.write_table(out / "weights.csv", ["channel_id", "n_events", "w_hat", "excluded"], rows)


def cmd_fit(cfg: RunConfig):
    trace = cfg.load_trace()
    report = fit(trace, cfg.fit_config())
    out = _outdir(cfg)
    _write_fit(out, trace, report)
    log.info("fit: %d iterations, converged=%s, log-likelihood %.6f",
             report.iterations, report.converged, report.log_likelihood)
    return report


def _causal_labels(cfg, channels):
    if cfg.manifest:
        causal = io.read_json(cfg.manifest).get("causal")
        if causal is not None:
            return {ch: bool(causal.get(ch, False)) for ch in channels}
    if cfg.truth:
        chans, _ = io.read_truth(cfg.truth)
        caused = set(chans)
        return {ch: ch in caused for ch in channels}
    return None


def cmd_discover(cfg: RunConfig):
    trace = cfg.load_trace()
    fc = cfg.fit_config()
    method = Method.FAST_BOUND if cfg.fast_bound else Method.EXACT
    results, full = discover(trace, fc, channels=cfg.channels, method=method, omega0=cfg.omega0)
    batches = [results]
    if cfg.fast_bound and cfg.compare_exact:
        exact, _ = discover(trace, fc, channels=cfg.channels, method=Method.EXACT,
                            omega0=cfg.omega0, full=full)
        batches.insert(0, exact)
    out = _outdir(cfg)
    _write_fit(out, trace, full)
    rows = []
    for i, ch in enumerate(r.channel for r in results):
        for batch in batches:
            r = batch[i]
            rows.append((r.channel, r.statistic, r.p_value, r.method.value, r.w_hat))
    io.write_table(out / "pvalues.csv", ["channel_id", "statistic", "p_value", "method", "w_hat"], rows)

    labels = _causal_labels(cfg, [r.channel for r in results])
    nonzero = [r for r in results if r.statistic > 0]
    if labels is not None:
        nonzero = [r for r in nonzero if not labels[r.channel]]
    u, p = qq_points([r.p_value for r in nonzero])
    io.write_table(out / "qq.csv", ["uniform_quantile", "p_value"], zip(u, p))
    if labels is not None:
        y = [labels[r.channel] for r in results]
        if any(y) and not all(y):
            fpr, tpr = roc_curve([-r.p_value for r in results], y)
            io.write_table(out / "roc.csv", ["fpr", "tpr"], zip(fpr, tpr))
        else:
            log.warning("ROC needs both causal and non-causal channels; roc.csv not written")
    if cfg.baseline_windows:
        brows = []
        for W in cfg.baseline_windows:
            uv = unique_vicinity_counts(trace, W)
            for r in results:
                brows.append((r.channel, W, baseline_binomial(trace, W, r.channel),
                              uv.get(r.channel, 0), uv.get(r.channel, 0) > 0))
        io.write_table(out / "baselines.csv",
                       ["channel_id", "W", "binomial_p", "unique_vicinity_count",
                        "unique_vicinity"], brows)
    if cfg.tests == "both" and cfg.changepoint_interval:
        cmd_changepoint(cfg, trace=trace, full=full)
    return results


def cmd_changepoint(cfg: RunConfig, trace=None, full=None):
    if not cfg.changepoint_interval:
        raise CtnorError("changepoint needs an interval (--interval START END)")
    trace = cfg.load_trace() if trace is None else trace
    fc = cfg.fit_config()
    full = fit(trace, fc) if full is None else full
    channels = cfg.channels or [ch for ch in trace.channel_ids if ch != trace.autocorr_channel]
    rows, results = [], []
    for ch in channels:
        spec = ChangepointSpec(ch, tuple(cfg.changepoint_interval))
        try:
            r = changepoint_test(trace, fc, spec, full=full, refit=cfg.changepoint_refit)
        except EmptySegment as exc:
            log.warning("%s: %s", ch, exc)
            rows.append((ch, float("nan"), float("nan"), "", float("nan"), float("nan"),
                         "empty_segment"))
            continue
        results.append(r)
        rows.append((ch, r.statistic, r.p_value, r.null_kind.value, r.extra["w_inside"],
                     r.extra["w_outside"], "ok"))
    out = _outdir(cfg)
    io.write_table(out / "changepoint.csv",
                   ["channel_id", "statistic", "p_value", "null_kind", "w_inside",
                    "w_outside", "status"], rows)
    return results


def cmd_synth(cfg: RunConfig):
    sc = dict(cfg.scenario)
    name = sc.pop("scenario", "scenario_51")
    hours = int(sc.pop("hours", 2))
    for key in ("causal_weight", "noise_per_hour", "w_before", "w_after"):
        if key in sc and sc[key] < 0:
            raise CtnorError(f"{key} must be non-negative, got {sc[key]}")
    if "delay_rate" in sc and not sc["delay_rate"] > 0:
        raise CtnorError(f"delay_rate must be positive, got {sc['delay_rate']}")
    if name == "scenario_51":
        allowed = {"causal_weight", "delay_rate", "rate_convention", "noise_per_hour"}
        extra = set(sc) - allowed
        if extra:
            raise CtnorError(f"scenario_51 does not take {sorted(extra)}")
        trace, truth = scenario_51(hours, cfg.seed, **sc)
    elif name == "changepoint":
        if "w_before" not in sc or "w_after" not in sc:
            raise CtnorError("changepoint scenario needs --w-before and --w-after")
        wb, wa = sc.pop("w_before"), sc.pop("w_after")
        extra = set(sc) - {"causal_weight", "delay_rate", "rate_convention", "noise_per_hour"}
        if extra:
            raise CtnorError(f"changepoint scenario does not take {sorted(extra)}")
        trace, truth, spec = scenario_changepoint(wb, wa, hours, cfg.seed, **sc)
    else:
        raise CtnorError(f"unknown scenario {name!r}")
    out = _outdir(cfg)
    io.write_trace(out / "trace.csv", trace)
    io.write_truth(out / "truth.csv", truth)
    manifest = dict(truth.params)
    manifest["causal"] = truth.causal
    manifest["true_weights"] = {k: (list(v) if isinstance(v, tuple) else v)
                                for k, v in truth.weights.items()}
    manifest["leak"] = truth.leak
    manifest["delays"] = {g: f.to_dict() for g, f in truth.delays.items()}
    io.write_manifest(out / "manifest.json", manifest)
    return trace, truth


COMMANDS = {"fit": cmd_fit, "discover": cmd_discover, "changepoint": cmd_changepoint,
            "synth": cmd_synth}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except TraceParseError as exc:
        print(f"ctnor: parse error: {exc}", file=sys.stderr)
        return 2
    except NoExplanation as exc:
        print(f"ctnor: {exc}. Hint: give the leak a positive weight or raise --horizon.",
              file=sys.stderr)
        return 1
    except (CtnorError, ValueError, KeyError, OSError) as exc:
        print(f"ctnor: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
