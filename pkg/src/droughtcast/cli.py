"""Command-line entry point.

Subcommands: synth, stats, split, train, predict, evaluate,
ablate {crop,zoom,ensemble,multiclass}, render.

Option precedence is flags > config file > defaults; config files are
plain `key=value` lines whose keys must match the subcommand's options.
Every run prints its resolved configuration and its hash, so piping that
output back in via --config replays the run.  Exit codes: 0 success,
1 usage error, 2 data error, 3 numeric divergence.
"""

import argparse
import hashlib
import os
import sys

import numpy as np

from . import convlstm, harness, linear, metrics, render
from .cube import (
    load_cube,
    load_cube_csv,
    load_forecast,
    out_of_time_split,
    save_cube,
    save_forecast,
    summarize,
)
from .errors import DataError, DivergenceError
from .features import WindowSpec, build_design
from .gbdt import GbdtHyper, fit_gbdt, format_gbdt, parse_gbdt, predict_gbdt
from .harness import ExperimentConfig
from .labels import ClassScheme, binarize, label_cube
from .synth import SynthParams, generate


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


_SCHEMES = ("binary", "three", "five")


def _scheme_from(args):
    name = args["scheme"]
    if name == "binary":
        return ClassScheme.binary(args["threshold"])
    if name == "three":
        return ClassScheme.three_class()
    if name == "five":
        return ClassScheme.five_class()
    raise UsageError(f"unknown scheme {name!r}; choose from {_SCHEMES}")


def _parse_opt_value(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def _parse_opts(pairs):
    options = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise UsageError(f"--opt expects key=value, got {pair!r}")
        options[key] = _parse_opt_value(value)
    return options


def _parse_float_list(text):
    if not str(text).strip():
        return ()
    return tuple(float(v) for v in str(text).split(","))


def _parse_int_list(text):
    if not str(text).strip():
        return ()
    return tuple(int(v) for v in str(text).split(","))


def _load_any_cube(path):
    if str(path).endswith(".csv"):
        return load_cube_csv(path)
    return load_cube(path)


def _read_config_file(path):
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            values[key.strip()] = value.strip()
    return values


def _merge(args_ns, spec):
    """flags > config file > defaults; unknown config keys are rejected."""
    cli = vars(args_ns)
    merged = {name: default for name, (default, _) in spec.items()}
    if cli.get("config"):
        file_values = _read_config_file(cli["config"])
        for key, raw in file_values.items():
            if key in ("command", "config_hash"):
                continue
            if key not in spec:
                raise UsageError(f"unknown config key {key!r}")
            merged[key] = spec[key][1](raw)
    for name in spec:
        if cli.get(name) is not None:
            merged[name] = cli[name]
    return merged


def _resolved_lines(command, merged):
    lines = [f"command={command}"]
    for key in sorted(merged):
        value = merged[key]
        if value is None:
            continue
        if isinstance(value, (tuple, list)):
            join = ";" if key == "opt" else ","
            value = join.join(str(v) for v in value)
        lines.append(f"{key}={value}")
    return lines


def _announce(command, merged, out_stream):
    lines = _resolved_lines(command, merged)
    digest = hashlib.sha256("\n".join(lines).encode()).hexdigest()[:12]
    for line in lines:
        print(line, file=out_stream)
    print(f"config_hash={digest}", file=out_stream)
    return digest


def _threads_default():
    env = os.environ.get("DROUGHTCAST_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _opt_list(raw):
    if isinstance(raw, str):
        return [p for p in raw.split(";") if p]
    return raw


# per-subcommand option tables: name -> (default, parser-from-string)
_COMMON = {
    "seed": (0, int),
    "threads": (_threads_default(), int),
}

_SPECS = {
    "synth": {
        **_COMMON,
        "t_len": (600, int),
        "rows": (16, int),
        "cols": (16, int),
        "ar_coeff": (0.95, float),
        "spatial_sigma": (1.5, float),
        "seasonal_amp": (0.5, float),
        "noise_sd": (1.0, float),
        "value_scale": (2.0, float),
        "out": (None, str),
    },
    "stats": {
        **_COMMON,
        "cube": (None, str),
        "threshold": (-2.0, float),
    },
    "split": {
        **_COMMON,
        "cube": (None, str),
        "train_frac": (0.7, float),
        "out_train": (None, str),
        "out_test": (None, str),
    },
    "train": {
        **_COMMON,
        "model": (None, str),
        "cube": (None, str),
        "scheme": ("binary", str),
        "threshold": (-2.0, float),
        "history": (None, int),
        "horizon": (1, int),
        "neighborhood": (3, int),
        "opt": ((), _opt_list),
        "out": (None, str),
    },
    "predict": {
        **_COMMON,
        "model_file": (None, str),
        "cube": (None, str),
        "out": (None, str),
    },
    "evaluate": {
        **_COMMON,
        "forecast": (None, str),
        "cube": (None, str),
        "scheme": ("binary", str),
        "threshold": (-2.0, float),
        "metrics": ("roc_auc", str),
        "map_out": (None, str),
    },
    "ablate": {
        **_COMMON,
        "study": (None, str),
        "model": (None, str),
        "cube": (None, str),
        "scheme": ("binary", str),
        "threshold": (-2.0, float),
        "history": (None, int),
        "horizon": (1, int),
        "neighborhood": (3, int),
        "train_frac": (0.7, float),
        "crop_fracs": ((0.0, 0.1, 0.2, 0.3, 0.4, 0.5), _parse_float_list),
        "zoom_areas": ((1.0, 0.75, 0.53, 0.27), _parse_float_list),
        "seeds": ((0, 1, 2, 3, 4), _parse_int_list),
        "opt": ((), _opt_list),
        "out": (None, str),
    },
    "render": {
        **_COMMON,
        "input": (None, str),
        "out": (None, str),
        "vmin": (None, float),
        "vmax": (None, float),
        "palette": (",".join(render.DEFAULT_PALETTE), str),
    },
}

_REQUIRED = {
    "synth": ("out",),
    "stats": ("cube",),
    "split": ("cube", "out_train", "out_test"),
    "train": ("model", "cube", "out"),
    "predict": ("model_file", "cube", "out"),
    "evaluate": ("forecast", "cube"),
    "ablate": ("study", "model", "cube", "out"),
    "render": ("input", "out"),
}

_DEFAULT_HISTORY = {"logreg": 1, "gbdt": 1, "convlstm": 6, "baseline": 1, "rolling": 6}

_MODEL_MAGIC = "droughtcast-model"


def _default_window(merged):
    history = merged["history"]
    if history is None:
        history = _DEFAULT_HISTORY.get(merged["model"], 1)
    return WindowSpec(
        history_len=history, horizon=merged["horizon"], neighborhood=merged["neighborhood"]
    )


def _cmd_synth(merged, out):
    params = SynthParams(
        t_len=merged["t_len"],
        rows=merged["rows"],
        cols=merged["cols"],
        ar_coeff=merged["ar_coeff"],
        spatial_sigma=merged["spatial_sigma"],
        seasonal_amp=merged["seasonal_amp"],
        noise_sd=merged["noise_sd"],
        value_scale=merged["value_scale"],
        seed=merged["seed"],
    )
    save_cube(generate(params), merged["out"])
    print(f"wrote {merged['out']}", file=out)
    return 0


def _cmd_stats(merged, out):
    cube = _load_any_cube(merged["cube"])
    stats = summarize(cube, ClassScheme.binary(merged["threshold"]))
    print(f"span_months={stats.span_months}", file=out)
    print(f"pct_normal={stats.pct_normal:.10g}", file=out)
    print(f"pct_drought={stats.pct_drought:.10g}", file=out)
    return 0


def _cmd_split(merged, out):
    cube = _load_any_cube(merged["cube"])
    train, test = out_of_time_split(cube, merged["train_frac"])
    save_cube(train, merged["out_train"])
    save_cube(test, merged["out_test"])
    print(f"wrote {merged['out_train']} ({train.t_len} months)", file=out)
    print(f"wrote {merged['out_test']} ({test.t_len} months)", file=out)
    return 0


def _write_model_bundle(path, kind, scheme, window, payload_lines):
    lines = [
        f"{_MODEL_MAGIC} 1",
        f"kind {kind}",
        f"scheme {' '.join(format(t, '.17g') for t in scheme.thresholds)}",
        f"window {window.history_len} {window.horizon} {window.neighborhood}",
        "---",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        fh.write(payload_lines)


def _read_model_bundle(path):
    with open(path) as fh:
        text = fh.read()
    head, sep, payload = text.partition("\n---\n")
    if not sep:
        raise DataError(f"{path}: not a droughtcast model bundle")
    fields = {}
    for line in head.splitlines():
        key, _, rest = line.partition(" ")
        fields[key] = rest.strip()
    if _MODEL_MAGIC not in fields:
        raise DataError(f"{path}: not a droughtcast model bundle")
    scheme = ClassScheme(thresholds=tuple(float(v) for v in fields["scheme"].split()))
    h, hz, k = (int(v) for v in fields["window"].split())
    return fields["kind"], scheme, WindowSpec(history_len=h, horizon=hz, neighborhood=k), payload


def _cmd_train(merged, out):
    model_name = merged["model"]
    if model_name not in harness.MODEL_NAMES:
        raise UsageError(f"unknown model {model_name!r}; choose from {harness.MODEL_NAMES}")
    cube = _load_any_cube(merged["cube"])
    scheme = _scheme_from(merged)
    window = _default_window(merged)
    options = _parse_opts(_opt_list(merged["opt"]))
    labels = label_cube(cube, scheme)

    if model_name == "convlstm":
        val_frac = float(options.pop("val_frac", 0.2))
        hyper = convlstm.ConvLstmHyper(
            n_classes=scheme.n_classes,
            history_len=window.history_len,
            horizon=window.horizon,
            seed=merged["seed"],
            **options,
        )
        fit_part, val_part = out_of_time_split(cube, 1.0 - val_frac)
        params, log = convlstm.fit(
            fit_part, label_cube(fit_part, scheme), val_part, label_cube(val_part, scheme), hyper
        )
        convlstm.save_checkpoint(params, hyper, merged["out"])
        print(f"wrote {merged['out']} after {len(log)} epochs", file=out)
        return 0

    if model_name == "baseline":
        model = linear.fit_majority(labels)
        payload = (
            f"majority_class {model.majority_class}\n"
            + "class_prior " + " ".join(format(v, ".17g") for v in model.class_prior) + "\n"
        )
        _write_model_bundle(merged["out"], "baseline", scheme, window, payload)
    elif model_name == "rolling":
        rolling_window = int(options.pop("rolling_window", window.history_len))
        _write_model_bundle(merged["out"], "rolling", scheme, window, f"rolling_window {rolling_window}\n")
    elif model_name == "logreg":
        design = build_design(cube, labels, window)
        model = linear.fit_logreg(design, **options)
        _write_model_bundle(merged["out"], "logreg", scheme, window, linear.format_linear(model))
    elif model_name == "gbdt":
        design = build_design(cube, labels, window)
        model = fit_gbdt(design, GbdtHyper(**options))
        _write_model_bundle(merged["out"], "gbdt", scheme, window, format_gbdt(model))
    print(f"wrote {merged['out']}", file=out)
    return 0


def _cmd_predict(merged, out):
    cube = _load_any_cube(merged["cube"])
    path = merged["model_file"]
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == convlstm.CLSP_MAGIC:
        params, hyper = convlstm.load_checkpoint(path)
        forecast = convlstm.predict(params, cube, hyper)
    else:
        kind, scheme, window, payload = _read_model_bundle(path)
        if kind == "baseline":
            fields = dict(line.split(" ", 1) for line in payload.strip().splitlines())
            prior = np.array([float(v) for v in fields["class_prior"].split()])
            model = linear.BaselineModel(majority_class=int(fields["majority_class"]), class_prior=prior)
            forecast = linear.predict_constant(model, cube.t_len, cube.rows, cube.cols, cube.start_month)
        elif kind == "rolling":
            fields = dict(line.split(" ", 1) for line in payload.strip().splitlines())
            forecast = linear.predict_rolling(label_cube(cube, scheme), int(fields["rolling_window"]))
        elif kind in ("logreg", "gbdt"):
            # design targets are irrelevant at predict time; any labeling
            # with the cube's own mask works
            design = build_design(cube, binarize(cube, 0.0), window)
            if kind == "logreg":
                model = linear.parse_linear(payload)
                probs = linear.predict_logreg(model, design)
                n_classes = model.n_classes
            else:
                model = parse_gbdt(payload)
                probs = predict_gbdt(model, design)
                n_classes = model.n_classes
            forecast = harness._assemble_sample_forecast(
                probs, design, cube.shape, n_classes, cube.start_month
            )
        else:
            raise DataError(f"{path}: unknown model kind {kind!r}")
    save_forecast(forecast, merged["out"])
    print(f"wrote {merged['out']} ({int(forecast.predicted.sum())} predicted months)", file=out)
    return 0


def _cmd_evaluate(merged, out):
    forecast = load_forecast(merged["forecast"])
    cube = _load_any_cube(merged["cube"])
    scheme = _scheme_from(merged)
    labels = label_cube(cube, scheme)
    wanted = [m.strip() for m in merged["metrics"].split(",") if m.strip()]
    last_map = None
    for metric in wanted:
        mm = metrics.per_cell_map(forecast, labels, metric)
        last_map = mm
        print(f"{metric} median={mm.median:.10g} n_defined={mm.n_defined}", file=out)
    if merged["map_out"] and last_map is not None:
        metrics.export_metric_map_csv(last_map, merged["map_out"])
        print(f"wrote {merged['map_out']}", file=out)
    return 0


def _cmd_ablate(merged, out):
    study = merged["study"]
    if study not in ("crop", "zoom", "ensemble", "multiclass"):
        raise UsageError(f"unknown ablation {study!r}")
    scheme = _scheme_from(merged)
    window = _default_window(merged)
    out_dir = merged["out"]
    os.makedirs(out_dir, exist_ok=True)
    config = ExperimentConfig(
        datasets=(merged["cube"],),
        model=merged["model"],
        scheme=scheme,
        window=window,
        horizons=(merged["horizon"],),
        seeds=tuple(merged["seeds"]) or (merged["seed"],),
        crop_fracs=tuple(merged["crop_fracs"]),
        zoom_areas=tuple(merged["zoom_areas"]),
        train_frac=merged["train_frac"],
        out_dir=out_dir,
        threads=merged["threads"],
        model_options=_parse_opts(_opt_list(merged["opt"])),
    )
    if study == "crop":
        table = harness.crop_study(config)
    elif study == "zoom":
        table = harness.zoom_study(config)
    elif study == "ensemble":
        table = harness.seed_ensemble(config)
    else:
        table = harness.multiclass_study(config)
    report_path = os.path.join(out_dir, f"report_{study}.csv")
    table.write_csv(report_path)
    with open(os.path.join(out_dir, "resolved.config"), "w") as fh:
        fh.write("\n".join(_resolved_lines("ablate", merged)) + "\n")
    print(f"wrote {report_path} ({len(table.rows)} rows)", file=out)
    return 0


def _cmd_render(merged, out):
    mm = metrics.load_metric_map_csv(merged["input"])
    palette = tuple(merged["palette"].split(","))
    if len(palette) != 2:
        raise UsageError("--palette expects two comma-separated #rrggbb colors")
    render.render_svg(mm, merged["out"], vmin=merged["vmin"], vmax=merged["vmax"], palette=palette)
    print(f"wrote {merged['out']}", file=out)
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "stats": _cmd_stats,
    "split": _cmd_split,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "ablate": _cmd_ablate,
    "render": _cmd_render,
}


def _build_parser():
    parser = _Parser(prog="droughtcast", description="PDSI drought forecasting toolkit")
    sub = parser.add_subparsers(dest="command")
    for command, spec in _SPECS.items():
        p = sub.add_parser(command, prog=f"droughtcast {command}")
        p.add_argument("--config", default=None)
        if command == "ablate":
            p.add_argument("study", nargs="?", default=None, choices=("crop", "zoom", "ensemble", "multiclass"))
        elif command in ("stats",):
            p.add_argument("cube", nargs="?", default=None)
        for name, (default, caster) in spec.items():
            if command == "ablate" and name == "study":
                continue
            if command == "stats" and name == "cube":
                continue
            flag = "--" + name.replace("_", "-")
            if name == "opt":
                p.add_argument(flag, action="append", default=None, dest="opt")
            else:
                p.add_argument(flag, default=None, type=caster if caster in (int, float, str) else str, dest=name)
    return parser


def main(argv=None, out=None):
    out = out or sys.stdout
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
        if not ns.command:
            raise UsageError("a subcommand is required (synth, stats, split, train, predict, evaluate, ablate, render)")
        spec = _SPECS[ns.command]
        cli = vars(ns)
        # list-typed options arrive as strings from the command line
        for name, (default, caster) in spec.items():
            if cli.get(name) is not None and caster not in (int, float, str):
                cli[name] = caster(cli[name])
        merged = _merge(ns, spec)
        missing = [name for name in _REQUIRED[ns.command] if merged.get(name) in (None, "")]
        if missing:
            raise UsageError(f"missing required options: {', '.join('--' + m.replace('_', '-') for m in missing)}")
        _announce(ns.command, merged, out)
        return _HANDLERS[ns.command](merged, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())
