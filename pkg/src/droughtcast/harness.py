"""Experiment suites: horizon sweep, per-region table, crop study, zoom
study, seed ensembles and the multiclass study.

Every run is reproducible from (config, seed): model training is
deterministic, report rows carry the resolved-config hash, and reruns emit
bit-identical CSV files.  Independent (horizon | seed | area) runs can be
dispatched to a thread pool; rows are assembled in a fixed order
regardless of completion order.
"""

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import convlstm, gbdt, linear, metrics
from .cube import ForecastCube, PdsiCube, crop_center, crop_center_box, load_cube, out_of_time_split
from .features import WindowSpec, build_design
from .labels import ClassScheme, label_cube

REPORT_HEADER = "experiment,model,region,horizon,seed,crop,area,metric,value,config_hash"

MODEL_NAMES = ("baseline", "rolling", "logreg", "gbdt", "convlstm")


@dataclass(frozen=True)
class ExperimentConfig:
    """One model, one scheme, one window; datasets are paths or in-memory cubes."""

    datasets: tuple
    model: str
    scheme: ClassScheme = field(default_factory=ClassScheme.binary)
    window: WindowSpec = field(default_factory=WindowSpec)
    horizons: tuple = (1,)
    seeds: tuple = (0,)
    crop_fracs: tuple = ()
    zoom_areas: tuple = ()
    train_frac: float = 0.7
    out_dir: str = None
    threads: int = 1
    model_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODEL_NAMES}")
        if not self.datasets:
            raise ValueError("at least one dataset is required")
        if not self.horizons or min(self.horizons) < 1:
            raise ValueError("horizons must be >= 1")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")

    def resolved_text(self):
        """Canonical key=value rendering used for hashing and replay files."""
        parts = []
        for name, cube_or_path in zip(self._region_names(), self.datasets):
            if isinstance(cube_or_path, PdsiCube):
                digest = hashlib.sha256(cube_or_path.values.tobytes()).hexdigest()[:12]
                parts.append(f"dataset.{name}=cube:{digest}")
            else:
                parts.append(f"dataset.{name}={cube_or_path}")
        parts.append(f"model={self.model}")
        parts.append(f"scheme={','.join(format(t, 'g') for t in self.scheme.thresholds)}")
        parts.append(
            f"window={self.window.history_len},{self.window.horizon},{self.window.neighborhood}"
        )
        parts.append(f"horizons={','.join(str(h) for h in self.horizons)}")
        parts.append(f"seeds={','.join(str(s) for s in self.seeds)}")
        parts.append(f"crop_fracs={','.join(format(c, 'g') for c in self.crop_fracs)}")
        parts.append(f"zoom_areas={','.join(format(a, 'g') for a in self.zoom_areas)}")
        parts.append(f"train_frac={format(self.train_frac, 'g')}")
        for key in sorted(self.model_options):
            parts.append(f"opt.{key}={self.model_options[key]}")
        return "\n".join(parts) + "\n"

    def config_hash(self):
        return hashlib.sha256(self.resolved_text().encode()).hexdigest()[:12]

    def _region_names(self):
        names = []
        for i, entry in enumerate(self.datasets):
            if isinstance(entry, PdsiCube):
                names.append(f"cube{i}")
            else:
                stem = os.path.splitext(os.path.basename(str(entry)))[0]
                names.append(stem)
        return names


@dataclass(frozen=True)
class ReportRow:
    experiment: str
    model: str
    region: str
    horizon: object = ""
    seed: object = ""
    crop: object = ""
    area: str = ""
    metric: str = ""
    value: float = float("nan")
    config_hash: str = ""

    def to_csv(self):
        fields = [
            self.experiment,
            self.model,
            self.region,
            str(self.horizon),
            str(self.seed),
            str(self.crop),
            self.area,
            self.metric,
            format(self.value, ".10g"),
            self.config_hash,
        ]
        return ",".join(fields)


@dataclass
class ReportTable:
    rows: list

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(REPORT_HEADER + "\n")
            for row in self.rows:
                fh.write(row.to_csv() + "\n")

    def values(self, **selectors):
        """Metric values of the rows matching every selector, in row order."""
        out = []
        for row in self.rows:
            if all(getattr(row, key) == want for key, want in selectors.items()):
                out.append(row.value)
        return out


def _resolve_dataset(entry):
    if isinstance(entry, PdsiCube):
        return entry
    return load_cube(entry)


def _metric_names(scheme):
    return ("roc_auc", "pr_auc", "f1") if scheme.n_classes == 2 else ("accuracy",)


def _assemble_sample_forecast(probs, design, shape, n_classes, start_month):
    """Scatter per-sample probabilities back onto the grid."""
    t_len, rows, cols = shape
    out = np.zeros((t_len, n_classes, rows, cols), dtype=np.float64)
    predicted = np.zeros(t_len, dtype=bool)
    first_target = design.spec.history_len + design.spec.horizon - 1
    predicted[first_target:] = True
    t_idx = design.provenance[:, 0]
    r_idx = design.provenance[:, 1]
    c_idx = design.provenance[:, 2]
    out[t_idx, :, r_idx, c_idx] = probs
    return ForecastCube(probs=out, predicted=predicted, start_month=start_month)


def train_and_forecast(model_name, train_cube, test_cube, scheme, window, seed, options=None, log_sink=None):
    """Fit one model on the train cube and forecast every test month it can.

    `window.horizon` carries the forecast horizon.  Returns the test-side
    ForecastCube; months whose history window does not fit inside the test
    cube are left unpredicted.
    """
    forecaster = make_forecaster(model_name, train_cube, scheme, window, seed, options, log_sink)
    return forecaster(test_cube)


def _open_train_log(config, tag):
    if config.out_dir is None:
        return None, None
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, f"trainlog_{tag}.txt")
    fh = open(path, "w")

    def sink(record):
        fh.write(" ".join(f"{k}={format(v, '.10g') if isinstance(v, float) else v}" for k, v in record.items()) + "\n")

    return sink, fh


def _run_one(config, cube, region, horizon, seed, tag):
    window = replace(config.window, horizon=horizon)
    train_cube, test_cube = out_of_time_split(cube, config.train_frac)
    sink, fh = _open_train_log(config, tag)
    try:
        forecast = train_and_forecast(
            config.model, train_cube, test_cube, config.scheme, window, seed,
            config.model_options, log_sink=sink,
        )
    finally:
        if fh is not None:
            fh.close()
    return forecast, label_cube(test_cube, config.scheme)


def _metric_rows(forecast, test_labels, config, experiment, region, horizon, seed, crop="", area=""):
    rows = []
    for metric in _metric_names(config.scheme):
        mm = metrics.per_cell_map(forecast, test_labels, metric)
        rows.append(
            ReportRow(
                experiment=experiment,
                model=config.model,
                region=region,
                horizon=horizon,
                seed=seed,
                crop=crop,
                area=area,
                metric=metric,
                value=mm.median,
                config_hash=config.config_hash(),
            )
        )
    return rows


def _map_jobs(config, jobs):
    """Run (key, thunk) jobs, possibly on a thread pool; yield in key order."""
    if config.threads <= 1 or len(jobs) <= 1:
        return [(key, thunk()) for key, thunk in jobs]
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        futures = [(key, pool.submit(thunk)) for key, thunk in jobs]
        return [(key, fut.result()) for key, fut in futures]


def horizon_sweep(config):
    """Median metrics per (region, horizon) for the configured model.

    With several regions, an extra `mean` row per (horizon, metric) carries
    the unweighted mean of the per-region medians.
    """
    rows = []
    seed = config.seeds[0]
    for region, entry in zip(config._region_names(), config.datasets):
        cube = _resolve_dataset(entry)
        jobs = [
            (
                horizon,
                (lambda h=horizon: _run_one(config, cube, region, h, seed, f"sweep_{region}_{config.model}_h{h}")),
            )
            for horizon in config.horizons
        ]
        for horizon, (forecast, test_labels) in _map_jobs(config, jobs):
            rows.extend(
                _metric_rows(forecast, test_labels, config, "horizon_sweep", region, horizon, seed)
            )
    if len(config.datasets) > 1:
        for horizon in config.horizons:
            for metric in _metric_names(config.scheme):
                per_region = [
                    r.value for r in rows if r.horizon == horizon and r.metric == metric
                ]
                rows.append(
                    ReportRow(
                        experiment="horizon_sweep",
                        model=config.model,
                        region="mean",
                        horizon=horizon,
                        seed=seed,
                        metric=metric,
                        value=float(np.mean(per_region)),
                        config_hash=config.config_hash(),
                    )
                )
    return ReportTable(rows=rows)


def region_table(config, horizon=None):
    """One metric block per region at a fixed horizon."""
    horizon = horizon if horizon is not None else config.horizons[0]
    rows = []
    seed = config.seeds[0]
    jobs = []
    for region, entry in zip(config._region_names(), config.datasets):
        cube = _resolve_dataset(entry)
        jobs.append(
            (
                region,
                (lambda c=cube, r=region: _run_one(config, c, r, horizon, seed, f"region_{r}_{config.model}")),
            )
        )
    for region, (forecast, test_labels) in _map_jobs(config, jobs):
        rows.extend(_metric_rows(forecast, test_labels, config, "region_table", region, horizon, seed))
    return ReportTable(rows=rows)


def crop_study(config):
    """Median score over center-cropped evaluation regions of one trained model.

    Crop percentages are the REMOVED area fraction; the model is trained
    once on the full region and only the metric map is cropped.
    """
    if any(not 0.0 <= c <= 0.9 for c in config.crop_fracs):
        raise ValueError("crop fractions must lie in [0, 0.9]")
    region = config._region_names()[0]
    cube = _resolve_dataset(config.datasets[0])
    seed = config.seeds[0]
    horizon = config.horizons[0]
    forecast, test_labels = _run_one(config, cube, region, horizon, seed, f"crop_{region}_{config.model}")
    metric = _metric_names(config.scheme)[0]
    mm = metrics.per_cell_map(forecast, test_labels, metric)
    rows = []
    for crop in config.crop_fracs:
        r0, r1, c0, c1 = crop_center_box(cube.rows, cube.cols, 1.0 - crop)
        if (r1 - r0) * (c1 - c0) < 4:
            raise ValueError(f"crop {crop} leaves fewer than 4 cells")
        med = metrics.median_of_map_region(mm, r0, r1, c0, c1)
        rows.append(
            ReportRow(
                experiment="crop_study",
                model=config.model,
                region=region,
                horizon=horizon,
                seed=seed,
                crop=crop,
                metric=metric,
                value=med,
                config_hash=config.config_hash(),
            )
        )
    return ReportTable(rows=rows)


def zoom_study(config):
    """Upper-triangular matrix: train on each area, evaluate on nested areas."""
    areas = config.zoom_areas
    if not areas or any(a <= 0 or a > 1.0 for a in areas) or any(
        a <= b for a, b in zip(areas, areas[1:])
    ):
        raise ValueError("zoom areas must be descending fractions in (0, 1]")
    region = config._region_names()[0]
    cube = _resolve_dataset(config.datasets[0])
    seed = config.seeds[0]
    horizon = config.horizons[0]
    window = replace(config.window, horizon=horizon)
    train_full, test_full = out_of_time_split(cube, config.train_frac)
    metric = _metric_names(config.scheme)[0]
    rows = []

    def train_at(area):
        sink, fh = _open_train_log(config, f"zoom_{region}_{config.model}_a{area:g}")
        try:
            return make_forecaster(
                config.model, crop_center(train_full, area), config.scheme, window, seed,
                config.model_options, sink,
            )
        finally:
            if fh is not None:
                fh.close()

    jobs = [(area, (lambda a=area: train_at(a))) for area in areas]
    for train_area, forecaster in _map_jobs(config, jobs):
        for eval_area in areas:
            if eval_area > train_area:
                continue
            test_eval = crop_center(test_full, eval_area)
            forecast = forecaster(test_eval)
            mm = metrics.per_cell_map(forecast, label_cube(test_eval, config.scheme), metric)
            rows.append(
                ReportRow(
                    experiment="zoom_study",
                    model=config.model,
                    region=region,
                    horizon=horizon,
                    seed=seed,
                    area=f"{train_area:g}->{eval_area:g}",
                    metric=metric,
                    value=mm.median,
                    config_hash=config.config_hash(),
                )
            )
    return ReportTable(rows=rows)


def make_forecaster(model_name, train_cube, scheme, window, seed, options=None, log_sink=None):
    """Train once, return a closure forecasting any (spatially cropped) cube.

    The closure contract is what lets the zoom study evaluate one trained
    checkpoint on several nested areas without retraining.
    """
    options = dict(options or {})
    train_labels = label_cube(train_cube, scheme)

    if model_name == "baseline":
        model = linear.fit_majority(train_labels)
        return lambda cube: linear.predict_constant(model, cube.t_len, cube.rows, cube.cols, cube.start_month)
    if model_name == "rolling":
        rolling_window = int(options.pop("rolling_window", 6))
        return lambda cube: linear.predict_rolling(label_cube(cube, scheme), rolling_window)
    if model_name == "logreg":
        model = linear.fit_logreg(build_design(train_cube, train_labels, window), **options)

        def run(cube):
            design = build_design(cube, label_cube(cube, scheme), window)
            probs = linear.predict_logreg(model, design)
            return _assemble_sample_forecast(probs, design, cube.shape, scheme.n_classes, cube.start_month)

        return run
    if model_name == "gbdt":
        model = gbdt.fit_gbdt(build_design(train_cube, train_labels, window), gbdt.GbdtHyper(**options))

        def run(cube):
            design = build_design(cube, label_cube(cube, scheme), window)
            probs = gbdt.predict_gbdt(model, design)
            return _assemble_sample_forecast(probs, design, cube.shape, scheme.n_classes, cube.start_month)

        return run
    if model_name == "convlstm":
        val_frac = float(options.pop("val_frac", 0.2))
        hyper = convlstm.ConvLstmHyper(
            n_classes=scheme.n_classes,
            history_len=window.history_len,
            horizon=window.horizon,
            seed=seed,
            **options,
        )
        fit_part, val_part = out_of_time_split(train_cube, 1.0 - val_frac)
        params, _ = convlstm.fit(
            fit_part, label_cube(fit_part, scheme), val_part, label_cube(val_part, scheme), hyper,
            log_sink=log_sink,
        )
        return lambda cube: convlstm.predict(params, cube, hyper)
    raise ValueError(f"unknown model {model_name!r}")


def seed_ensemble(config):
    """Per-seed runs plus the averaged-probability ensemble row."""
    if len(config.seeds) < 2:
        raise ValueError("seed ensembles need at least 2 seeds")
    region = config._region_names()[0]
    cube = _resolve_dataset(config.datasets[0])
    horizon = config.horizons[0]
    jobs = [
        (
            (i, seed),
            (lambda s=seed: _run_one(config, cube, region, horizon, s, f"ensemble_{region}_{config.model}_s{s}")),
        )
        for i, seed in enumerate(config.seeds)
    ]
    rows = []
    members = []
    test_labels = None
    for (_, seed), (forecast, labels) in _map_jobs(config, jobs):
        members.append(forecast)
        test_labels = labels
        rows.extend(
            _metric_rows(forecast, labels, config, "seed_ensemble", region, horizon, seed)
        )
    mean_probs = np.mean([m.probs for m in members], axis=0)
    ensemble = ForecastCube(
        probs=mean_probs, predicted=members[0].predicted, start_month=members[0].start_month
    )
    rows.extend(
        _metric_rows(ensemble, test_labels, config, "seed_ensemble", region, horizon, "ensemble")
    )
    return ReportTable(rows=rows)


def multiclass_study(config):
    """Median accuracy per horizon for a 3- or 5-class scheme."""
    if config.scheme.n_classes not in (3, 5):
        raise ValueError("multiclass study requires a 3- or 5-class scheme")
    rows = [replace(row, experiment="multiclass_study") for row in horizon_sweep(config).rows]
    return ReportTable(rows=rows)
