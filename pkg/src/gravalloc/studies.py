"""Study runners: every quantitative law the package reproduces, as one
configurable Monte Carlo experiment each, plus schema validation for the
study configs. The CLI is a thin wrapper over ``run``.

Seeds: each study derives independent substreams from its master seed with
fixed integer tags (configurations, starts, trials), so reports depend only
on the resolved configuration and never on threading or chunking.
"""

from __future__ import annotations

import math
import os
import time

import numpy as np

from .config import Configuration
from .critical import CriticalOptions, find_local_maxima
from .errors import ConfigInvalid, StudyFailed
from .flow import (
    UNASSIGNED,
    FlowOptions,
    allocate_arrays,
    basin_raster,
    raster_pixel_weights,
)
from .forces import force_eval
from .matching import (
    greedy_nearest_pair_match,
    online_gravitational_match,
    optimal_match,
    square_optimal_mean,
)
from .processes import (
    kostlan_roots_batch,
    sample_kostlan_roots,
    sample_uniform,
    substream_rng,
    uniform_sphere_points,
)
from .report import ExperimentReport, golden_angle_palette, raster_sidecar, write_ppm
from .stats import binomial_band, exponential_cdf, ks_statistic, summarize
from .tree import build_force_tree

_EXPECTED_KOSTLAN_MEAN_FORCE = math.pi ** 1.5 / 2.0
_KOSTLAN_DISTANCE_BOUND = math.sqrt(math.pi) / 4.0

# Seed tags: keep every random stream of a study disjoint and documented.
_TAG_CONFIG = 0
_TAG_STARTS = 1
_TAG_TRIAL = 2
_TAG_FORCE_POINTS = 3


def resolve_threads(requested=None) -> int:
    env = os.environ.get("GRAVALLOC_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigInvalid(f"GRAVALLOC_THREADS must be an integer, got {env!r}")
    if requested is not None:
        return max(1, int(requested))
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# Config schema


_FLOW_SCHEMA = {
    "capture_radius": float,
    "max_flow_time": float,
    "initial_step": float,
    "error_tolerance": float,
    "max_steps": int,
    "near_clamp": float,
    "max_step_size": float,
    "use_tree": bool,
    "tree_theta": float,
    "check_energy": bool,
}

_COMMON = {
    "seed": (int, 0),
    "out": (str, None),
    "csv": (bool, False),
    "flow": (dict, None),
}

_SCHEMAS = {
    "allocate": {"n": (int, 32), "samples": (int, 200_000), "process": (str, "uniform")},
    "tau": {"n": (int, 64), "samples": (int, 20_000), "process": (str, "uniform")},
    "identity": {"n": (int, 256), "samples": (int, 50_000), "process": (str, "uniform")},
    "distance": {
        "ns": (list, [64, 256, 1024]),
        "samples": (int, 10_000),
        "configs": (int, 4),
        "process": (str, "uniform"),
    },
    "maxima": {
        "ns": (list, [128, 512, 2048]),
        "trials": (int, 20),
        "seeds_per_source": (int, 20),
        "process": (str, "uniform"),
    },
    "matching": {
        "n": (int, 256),
        "trials": (int, 20),
        "methods": (list, ["optimal", "online", "greedy"]),
    },
    "kostlan-force": {
        "n": (int, 64),
        "trials": (int, 100_000),
        "identity_ns": (list, [8, 64, 256]),
        "identity_draws": (int, 50),
        "method": (str, "roots"),
    },
    "kostlan-distance": {
        "ns": (list, [64, 256, 1024]),
        "samples": (int, 3_000),
        "configs": (int, 3),
    },
    "square-baseline": {"ns": (list, [64, 256, 1024]), "trials": (int, 20)},
    "raster": {
        "n": (int, 40),
        "width": (int, 256),
        "height": (int, 128),
        "process": (str, "uniform"),
        "image_out": (str, "raster.ppm"),
        "sidecar_out": (str, "raster_pixels.json"),
    },
}

_PROCESSES = ("uniform", "kostlan")


def study_names() -> list[str]:
    return sorted(_SCHEMAS)


def validate_config(config: dict) -> dict:
    """Check one study config against its schema; returns it with defaults.

    Unknown keys, wrong types, and out-of-range values are rejected with
    ConfigInvalid before any computation starts.
    """
    if not isinstance(config, dict):
        raise ConfigInvalid("config must be a JSON object")
    study = config.get("study")
    if study not in _SCHEMAS:
        raise ConfigInvalid(f"unknown study {study!r}; expected one of {study_names()}")
    schema = {**_COMMON, **_SCHEMAS[study]}
    resolved = {"study": study}
    for key, value in config.items():
        if key == "study":
            continue
        if key not in schema:
            raise ConfigInvalid(f"unknown key {key!r} for study {study!r}")
    for key, (typ, default) in schema.items():
        if key in config and config[key] is not None:
            value = config[key]
            if typ is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if typ is int and isinstance(value, bool):
                raise ConfigInvalid(f"key {key!r} must be {typ.__name__}")
            if not isinstance(value, typ):
                raise ConfigInvalid(f"key {key!r} must be {typ.__name__}")
            resolved[key] = value
        else:
            resolved[key] = default
    if "process" in resolved and resolved["process"] not in _PROCESSES:
        raise ConfigInvalid(f"process must be one of {_PROCESSES}")
    for key in ("n", "samples", "trials", "configs", "width", "height",
                "seeds_per_source", "identity_draws"):
        if key in resolved and (not isinstance(resolved[key], int) or resolved[key] < 1):
            raise ConfigInvalid(f"key {key!r} must be a positive integer")
    if "ns" in resolved:
        ns = resolved["ns"]
        if not ns or not all(isinstance(v, int) and v >= 1 for v in ns):
            raise ConfigInvalid("'ns' must be a non-empty list of positive integers")
    if resolved.get("flow") is not None:
        flow = resolved["flow"]
        for key, value in flow.items():
            if key not in _FLOW_SCHEMA:
                raise ConfigInvalid(f"unknown flow option {key!r}")
            typ = _FLOW_SCHEMA[key]
            if typ is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
                flow[key] = value
            if not isinstance(value, typ):
                raise ConfigInvalid(f"flow option {key!r} must be {typ.__name__}")
    if "method" in resolved and resolved["method"] not in ("roots", "coefficients"):
        raise ConfigInvalid("method must be 'roots' or 'coefficients'")
    if "methods" in resolved:
        for m in resolved["methods"]:
            if m not in ("optimal", "online", "greedy"):
                raise ConfigInvalid(f"unknown matching method {m!r}")
    return resolved


def _flow_options(config: dict) -> FlowOptions:
    flow = config.get("flow")
    return FlowOptions(**flow) if flow else FlowOptions()


def _sample_config(process: str, n: int, seed: int, index: int = 0) -> Configuration:
    sub = np.random.SeedSequence(seed, spawn_key=(_TAG_CONFIG, index)).generate_state(1)[0]
    if process == "kostlan":
        return sample_kostlan_roots(n, int(sub))
    return sample_uniform(n, int(sub))


def _starts(config_seed: int, m: int, params, index: int = 0) -> np.ndarray:
    rng = substream_rng(config_seed, _TAG_STARTS, index)
    return uniform_sphere_points(rng, m, params)


# ---------------------------------------------------------------------------
# Individual studies


def run_allocate(config: dict, threads: int) -> ExperimentReport:
    n, samples, seed = config["n"], config["samples"], config["seed"]
    cfg = _sample_config(config["process"], n, seed)
    opts = _flow_options(config)
    starts = _starts(seed, samples, cfg.params)
    res = allocate_arrays(starts, cfg, opts, threads=threads)
    dist = np.linalg.norm(starts - np.where(
        res.target[:, None] != UNASSIGNED, cfg.sources[res.target], starts), axis=1)
    records = [
        {
            "i": i,
            "target": int(res.target[i]),
            "tau": float(res.tau[i]),
            "arc_length": float(res.arc_length[i]),
            "distance": float(dist[i]) if res.target[i] != UNASSIGNED else None,
        }
        for i in range(samples)
    ]
    assigned = res.target != UNASSIGNED
    counts = np.bincount(res.target[assigned], minlength=n)
    band = binomial_band(1.0 / n, samples)
    freq = counts / samples
    within = int((np.abs(freq - 1.0 / n) <= band).sum())
    summary = {
        "counts": [int(c) for c in counts],
        "unassigned": int(samples - assigned.sum()),
        "unassigned_fraction": float((samples - assigned.sum()) / samples),
        "frequency_band_5sigma": band,
        "sources_within_band": within,
        "fraction_sources_within_band": within / n,
        "mean_tau": float(res.tau[assigned].mean()),
        "mean_distance": float(dist[assigned].mean()),
        "mean_arc_length": float(res.arc_length[assigned].mean()),
    }
    reference = {"fair_share": 1.0 / n, "cell_area": 1.0}
    return ExperimentReport("allocate", _params(config), summary, records, reference)


def run_tau(config: dict, threads: int) -> ExperimentReport:
    n, samples, seed = config["n"], config["samples"], config["seed"]
    cfg = _sample_config(config["process"], n, seed)
    opts = _flow_options(config)
    starts = _starts(seed, samples, cfg.params)
    res = allocate_arrays(starts, cfg, opts, threads=threads)
    records = [
        {"i": i, "target": int(res.target[i]), "tau": float(res.tau[i])}
        for i in range(samples)
    ]
    assigned = res.target != UNASSIGNED
    taus = res.tau[assigned]
    ks = ks_statistic(taus, exponential_cdf(2.0 * math.pi))
    summary = {
        "ks_statistic": ks,
        "unassigned": int(samples - assigned.sum()),
        "tau": summarize(taus),
        "expected_mean": 1.0 / (2.0 * math.pi),
    }
    reference = {"law": "exponential with rate 2*pi", "rate": 2.0 * math.pi}
    return ExperimentReport("tau", _params(config), summary, records, reference)


def run_identity(config: dict, threads: int) -> ExperimentReport:
    """Travel-cost balance: mean arc length vs mean force over 2*pi."""
    n, samples, seed = config["n"], config["samples"], config["seed"]
    cfg = _sample_config(config["process"], n, seed)
    opts = _flow_options(config)
    starts = _starts(seed, samples, cfg.params, index=0)
    res = allocate_arrays(starts, cfg, opts, threads=threads)
    assigned = res.target != UNASSIGNED
    arcs = res.arc_length[assigned]
    force_points = _starts(seed, samples, cfg.params, index=1)
    fmag = np.empty(samples)
    chunk = max(256, 4_000_000 // max(n, 1))
    for s in range(0, samples, chunk):
        f, _, _ = force_eval(force_points[s : s + chunk], cfg)
        fmag[s : s + chunk] = np.linalg.norm(f, axis=1)
    lhs = float(arcs.mean())
    rhs = float(fmag.mean() / (2.0 * math.pi))
    records = [
        {"i": i, "side": "arc", "value": float(res.arc_length[i])} for i in range(samples)
    ] + [
        {"i": i, "side": "force", "value": float(fmag[i])} for i in range(samples)
    ]
    summary = {
        "mean_arc_length": lhs,
        "mean_force_over_2pi": rhs,
        "relative_gap": abs(lhs - rhs) / rhs,
        "unassigned": int(samples - assigned.sum()),
        "arc": summarize(arcs),
        "force": summarize(fmag),
    }
    reference = {
        "identity": "mean arc length equals mean force magnitude / (2*pi)",
    }
    return ExperimentReport("identity", _params(config), summary, records, reference)


def run_distance(config: dict, threads: int) -> ExperimentReport:
    return _distance_like(config, threads, "distance", config["process"])


def run_kostlan_distance(config: dict, threads: int) -> ExperimentReport:
    report = _distance_like(config, threads, "kostlan-distance", "kostlan")
    per_n = report.summary["per_n"]
    ns = sorted(int(k) for k in per_n)
    means = {n: per_n[str(n)]["mean"] for n in ns}
    report.summary["growth_ratio"] = means[ns[-1]] / means[ns[0]]
    report.reference["mean_distance_bound"] = _KOSTLAN_DISTANCE_BOUND
    return report


def _distance_like(config: dict, threads: int, study: str, process: str) -> ExperimentReport:
    ns, samples, seed = config["ns"], config["samples"], config["seed"]
    configs = config["configs"]
    opts = _flow_options(config)
    records = []
    per_n = {}
    for n in ns:
        dists = []
        tails = {r: 0 for r in (1, 2, 4, 8)}
        unassigned = 0
        per_config = [samples // configs] * configs
        for c in range(samples % configs):
            per_config[c] += 1
        for c, m in enumerate(per_config):
            if m == 0:
                continue
            cfg = _sample_config(process, n, seed, index=_pair_index(n, c))
            starts = _starts(seed, m, cfg.params, index=_pair_index(n, c))
            res = allocate_arrays(starts, cfg, opts, threads=threads)
            ok = res.target != UNASSIGNED
            unassigned += int(m - ok.sum())
            d = np.linalg.norm(starts[ok] - cfg.sources[res.target[ok]], axis=1)
            dists.append(d)
            records.extend(
                {"n": n, "config": c, "i": i, "distance": float(v)}
                for i, v in enumerate(d)
            )
        dall = np.concatenate(dists)
        scale = math.sqrt(math.log(n)) if n > 1 else 1.0
        for r in tails:
            tails[r] = int((dall > r * scale).sum())
        per_n[str(n)] = {
            **summarize(dall),
            "mean_over_sqrt_log_n": float(dall.mean() / scale),
            "tail_counts": {str(r): tails[r] for r in tails},
            "unassigned": unassigned,
        }
    scaled = [per_n[str(n)]["mean_over_sqrt_log_n"] for n in ns if n > 1]
    summary = {
        "per_n": per_n,
        "band_ratio": (max(scaled) / min(scaled)) if scaled else None,
    }
    reference = {"scaling": "mean allocation distance grows like sqrt(log n)"}
    return ExperimentReport(study, _params(config), summary, records, reference)


def _pair_index(n: int, c: int) -> int:
    return n * 1000 + c


def run_maxima(config: dict, threads: int) -> ExperimentReport:
    ns, trials, seed = config["ns"], config["trials"], config["seed"]
    crit = CriticalOptions(seeds_per_source=config["seeds_per_source"])
    records = []
    per_n = {}
    for n in ns:
        counts = []
        for t in range(trials):
            cfg = _sample_config(config["process"], n, seed, index=_pair_index(n, t))
            if n >= 1024:
                build_force_tree(cfg)
            maxima, diag = find_local_maxima(cfg, crit)
            counts.append(len(maxima))
            records.append({"n": n, "trial": t, "count": len(maxima), **diag})
        stats = summarize(np.array(counts, dtype=float))
        stats["scaled_count"] = float(np.mean(counts) * math.log(n) / n)
        per_n[str(n)] = stats
    scaled = [per_n[str(n)]["scaled_count"] for n in ns]
    summary = {"per_n": per_n, "band_ratio": max(scaled) / min(scaled)}
    reference = {"scaling": "expected count of local maxima is of order n / log n"}
    return ExperimentReport("maxima", _params(config), summary, records, reference)


def run_matching(config: dict, threads: int) -> ExperimentReport:
    n, trials, seed = config["n"], config["trials"], config["seed"]
    methods = config["methods"]
    opts = _flow_options(config)
    records = []
    sums = {m: [] for m in methods}
    violations = 0
    for t in range(trials):
        a = sample_uniform(n, int(np.random.SeedSequence(seed, spawn_key=(_TAG_TRIAL, t, 0)).generate_state(1)[0]))
        b = sample_uniform(n, int(np.random.SeedSequence(seed, spawn_key=(_TAG_TRIAL, t, 1)).generate_state(1)[0]))
        results = {}
        for method in methods:
            if method == "optimal":
                results[method] = optimal_match(a.sources, b.sources)
            elif method == "greedy":
                results[method] = greedy_nearest_pair_match(a.sources, b.sources)
            elif method == "online":
                results[method] = online_gravitational_match(a.sources, b, opts, threads=threads)
        for method, res in results.items():
            records.append(
                {
                    "trial": t,
                    "method": method,
                    "mean_distance": res.mean_distance,
                    "max_distance": res.max_distance,
                    "total_distance": res.total_distance,
                }
            )
            sums[method].append(res.mean_distance)
        if "optimal" in results:
            opt_total = results["optimal"].total_distance
            for method, res in results.items():
                if method != "optimal" and res.total_distance < opt_total - 1e-9:
                    violations += 1
    summary = {
        "per_method": {m: summarize(np.array(v)) for m, v in sums.items() if v},
        "optimal_exceeded_count": violations,
    }
    if "optimal" in sums and "online" in sums:
        summary["online_over_optimal"] = float(np.mean(sums["online"]) / np.mean(sums["optimal"]))
    reference = {"bound": "online mean distance is within a log factor of optimal"}
    return ExperimentReport("matching", _params(config), summary, records, reference)


def run_kostlan_force(config: dict, threads: int) -> ExperimentReport:
    n, trials, seed = config["n"], config["trials"], config["seed"]
    records = []
    identity_worst = 0.0
    for n_id in config["identity_ns"]:
        draws = config["identity_draws"]
        zetas, roots = kostlan_roots_batch(n_id, _seed_for(seed, _TAG_TRIAL, n_id), draws)
        f0 = np.abs(np.conj(1.0 / roots).sum(axis=1)) / math.sqrt(n_id)
        ratio = np.abs(zetas[:, 1] / zetas[:, 0])
        rel = np.abs(f0 - ratio) / ratio
        identity_worst = max(identity_worst, float(rel.max()))
        records.extend(
            {
                "kind": "identity",
                "n": n_id,
                "draw": d,
                "force_from_roots": float(f0[d]),
                "coeff_ratio": float(ratio[d]),
                "rel_diff": float(rel[d]),
            }
            for d in range(draws)
        )
    mags = np.empty(trials)
    chunk = max(1, min(2000, 2_000_000 // max(n, 1)))
    use_roots = config["method"] == "roots"
    for s in range(0, trials, chunk):
        count = min(chunk, trials - s)
        if use_roots:
            zetas, roots = kostlan_roots_batch(n, _seed_for(seed, _TAG_FORCE_POINTS, s), count)
            f0 = np.abs(np.conj(1.0 / roots).sum(axis=1)) / math.sqrt(n)
        else:
            rng = substream_rng(_seed_for(seed, _TAG_FORCE_POINTS, s))
            z = (rng.normal(size=(count, 2)) + 1j * rng.normal(size=(count, 2))) / math.sqrt(2)
            f0 = np.abs(z[:, 1] / z[:, 0])
        mags[s : s + count] = math.sqrt(math.pi) * f0
    records.extend(
        {"kind": "force", "n": n, "draw": d, "force_magnitude": float(mags[d])}
        for d in range(trials)
    )
    mean = float(mags.mean())
    summary = {
        "identity_max_rel_diff": identity_worst,
        "force_magnitude": summarize(mags),
        "mean_force": mean,
        "expected_mean_force": _EXPECTED_KOSTLAN_MEAN_FORCE,
        "relative_error": abs(mean - _EXPECTED_KOSTLAN_MEAN_FORCE) / _EXPECTED_KOSTLAN_MEAN_FORCE,
    }
    reference = {
        "closed_form": "force at the chart center is sqrt(pi) * conj(zeta1/zeta0)",
        "expected_mean_force": _EXPECTED_KOSTLAN_MEAN_FORCE,
    }
    return ExperimentReport("kostlan-force", _params(config), summary, records, reference)


def _seed_for(seed: int, tag: int, index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(tag, index)).generate_state(1)[0])


def run_square_baseline(config: dict, threads: int) -> ExperimentReport:
    ns, trials, seed = config["ns"], config["trials"], config["seed"]
    records = []
    per_n = {}
    for n in ns:
        means = [
            square_optimal_mean(n, _seed_for(seed, _TAG_TRIAL, _pair_index(n, t)))
            for t in range(trials)
        ]
        records.extend(
            {"n": n, "trial": t, "mean_distance": float(v)} for t, v in enumerate(means)
        )
        stats = summarize(np.array(means))
        if n > 1:
            stats["mean_over_sqrt_log_n"] = float(np.mean(means) / math.sqrt(math.log(n)))
        per_n[str(n)] = stats
    scaled = [per_n[str(n)].get("mean_over_sqrt_log_n") for n in ns if n > 1]
    scaled = [s for s in scaled if s is not None]
    summary = {
        "per_n": per_n,
        "band_ratio": (max(scaled) / min(scaled)) if scaled else None,
    }
    reference = {"scaling": "optimal mean matching distance is of order sqrt(log n)"}
    return ExperimentReport("square-baseline", _params(config), summary, records, reference)


def run_raster(config: dict, threads: int) -> ExperimentReport:
    n, width, height, seed = config["n"], config["width"], config["height"], config["seed"]
    cfg = _sample_config(config["process"], n, seed)
    opts = _flow_options(config)
    if opts.use_tree:
        build_force_tree(cfg)
    grid = basin_raster(cfg, opts, width=width, height=height, threads=threads)
    palette = golden_angle_palette(n)
    write_ppm(config["image_out"], grid, palette)
    sidecar = raster_sidecar(cfg.params, width, height)
    import json

    with open(config["sidecar_out"], "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=1)
    weights = np.broadcast_to(raster_pixel_weights(height)[:, None], grid.shape)
    total_w = weights.sum()
    hist = []
    freq_dev = []
    for i in range(n):
        mask = grid == i
        wfreq = float(weights[mask].sum() / total_w)
        hist.append({"index": i, "pixels": int(mask.sum()), "weighted_frequency": wfreq})
        freq_dev.append(abs(wfreq - 1.0 / n))
    unassigned = int((grid == UNASSIGNED).sum())
    summary = {
        "distinct_indices": int(len(np.unique(grid[grid != UNASSIGNED]))),
        "unassigned_pixels": unassigned,
        "max_weighted_frequency_deviation": float(max(freq_dev)),
        "image": config["image_out"],
        "sidecar": config["sidecar_out"],
    }
    reference = {"fair_share": 1.0 / n}
    return ExperimentReport("raster", _params(config), summary, records=hist, reference=reference)


def _params(config: dict) -> dict:
    params = dict(config)
    flow = params.get("flow")
    full_flow = FlowOptions(**flow) if flow else FlowOptions()
    params["flow"] = {k: getattr(full_flow, k) for k in _FLOW_SCHEMA}
    return params


_RUNNERS = {
    "allocate": run_allocate,
    "tau": run_tau,
    "identity": run_identity,
    "distance": run_distance,
    "maxima": run_maxima,
    "matching": run_matching,
    "kostlan-force": run_kostlan_force,
    "kostlan-distance": run_kostlan_distance,
    "square-baseline": run_square_baseline,
    "raster": run_raster,
}


def run(config: dict, threads: int = None) -> ExperimentReport:
    """Validate, execute, and time one study; writes nothing by itself
    except raster image outputs, which are part of that study's contract."""
    resolved = validate_config(config)
    nthreads = resolve_threads(threads)
    t0 = time.perf_counter()
    try:
        report = _RUNNERS[resolved["study"]](resolved, nthreads)
    except ConfigInvalid:
        raise
    except Exception as exc:  # surfaced as a study failure with context
        raise StudyFailed(f"study {resolved['study']!r} failed: {exc}") from exc
    report.wall_clock_seconds = time.perf_counter() - t0
    return report
