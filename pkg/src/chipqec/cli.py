"""Command-line entry point.

Each subcommand wraps one library operation.  Outputs are JSON records or
CSV series (UTF-8, LF).  When ``--out`` is given, a run manifest with the
full parameter set, seed, and sha256 digests of every written file lands
next to the output, and re-running the printed invocation reproduces the
CSV/JSON bytes exactly; without ``--out`` the record goes to stdout.
``--plot`` additionally renders a PNG chart beside the delimited output.
All randomness flows from the explicit ``--seed``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import click

from chipqec import __version__
from chipqec.adapt import Unusable, adapt_code
from chipqec.circuit import (
    NoiseModel,
    emit_text,
    memory_circuit,
    stability_circuit,
)
from chipqec.engine import (
    InsufficientData,
    estimate_ler,
    fit_slope,
    stability_compare,
)
from chipqec.lattice import (
    DefectMap,
    DefectModel,
    build_patch,
    sample_defects,
)
from chipqec.metrics import compute_metrics
from chipqec.yieldsim import (
    SelectionPolicy,
    application_fidelity,
    distance_distribution,
    shor_table,
    yield_curve,
)

_MODELS = click.Choice([m.value for m in DefectModel])


# ------------------------------------------------------------------ plumbing


def _read_defects(path: str) -> DefectMap:
    try:
        return DefectMap.from_json(Path(path).read_text(encoding="utf-8"))
    except (ValueError, KeyError, TypeError) as exc:
        raise click.ClickException(f"malformed defect file {path}: {exc}") from exc


def _adapt_or_fail(defects: DefectMap):
    code = adapt_code(build_patch(defects.l), defects)
    if isinstance(code, Unusable):
        raise click.ClickException(f"unusable patch (l={code.l}): {code.reason}")
    return code


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _coord(text: str) -> tuple[int, int]:
    r, c = (int(tok) for tok in text.split(","))
    return r, c


def _sizes(text: str) -> list[int]:
    if ":" in text:
        start, stop, *step = (int(tok) for tok in text.split(":"))
        return list(range(start, stop + 1, step[0] if step else 1))
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _invocation(subcommand: str, params: dict) -> str:
    parts = ["chipqec", subcommand]
    for key in sorted(params):
        value = params[key]
        if value is None or value is False:
            continue
        flag = "--" + key.replace("_", "-")
        if value is True:
            parts.append(flag)
        else:
            parts.append(f"{flag} {value}")
    return " ".join(parts)


def _finish(subcommand, params, out, content, plotter=None):
    """Write (or print) the primary record; with a file, add the manifest."""
    if out is None:
        click.echo(content, nl=False)
        return
    out = Path(out)
    data = content.encode("utf-8")
    out.write_bytes(data)
    outputs = {out.name: hashlib.sha256(data).hexdigest()}
    if plotter is not None:
        png = out.with_suffix(".png")
        plotter(png)
        outputs[png.name] = hashlib.sha256(png.read_bytes()).hexdigest()
    manifest = {
        "subcommand": subcommand,
        "parameters": {k: str(v) if isinstance(v, Path) else v for k, v in params.items()},
        "seed": params.get("seed"),
        "tool_version": __version__,
        "invocation": _invocation(subcommand, params),
        "outputs": outputs,
    }
    text = json.dumps(manifest, indent=1, sort_keys=True) + "\n"
    out.with_suffix(out.suffix + ".manifest.json").write_bytes(text.encode("utf-8"))


def _plot(path: Path, draw) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    draw(ax)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# ------------------------------------------------------------------ commands


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(version=__version__, prog_name="chipqec")
@click.option(
    "--config",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="JSON file mirroring subcommand flags, e.g. {\"run-memory\": {\"p\": 1e-3}}.",
)
@click.pass_context
def main(ctx, config):
    """Adapt surface codes to defective chiplets and score the results."""
    if config:
        try:
            ctx.default_map = json.loads(Path(config).read_text(encoding="utf-8"))
        except ValueError as exc:
            raise click.ClickException(f"malformed config file {config}: {exc}")


@main.command()
@click.option("--defects", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def adapt(defects, out):
    """Adapt the standard patch to a defect map; print the code as JSON."""
    params = {"defects": defects, "out": out}
    code = _adapt_or_fail(_read_defects(defects))
    _finish("adapt", params, out, code.to_json() + "\n")


@main.command()
@click.option("--defects", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--d-target", type=int, default=None)
@click.option("--l", type=int, default=None, help="Patch size for batch sampling.")
@click.option("--model", type=_MODELS, default=None)
@click.option("--rate", type=float, default=None)
@click.option("--samples", type=int, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def metrics(defects, d_target, l, model, rate, samples, seed, out):
    """Patch metrics for one defect file, or CSV over a sampled population."""
    params = {"defects": defects, "d_target": d_target, "l": l, "model": model,
              "rate": rate, "samples": samples, "seed": seed, "out": out}
    if defects is not None:
        code = _adapt_or_fail(_read_defects(defects))
        _finish("metrics", params, out, compute_metrics(code, d_target).to_json() + "\n")
        return
    if None in (l, model, rate, samples):
        raise click.UsageError("need --defects, or --l/--model/--rate/--samples")
    layout = build_patch(l)
    rows = []
    for i in range(samples):
        defects = sample_defects(layout, DefectModel(model), rate, seed + i)
        code = adapt_code(layout, defects)
        if isinstance(code, Unusable):
            rows.append([i, 0] + [""] * 7)
            continue
        m = compute_metrics(code, d_target)
        rows.append([i, 1, m.d_x, m.d_z, m.n_min_x, m.n_min_z,
                     m.disabled_fraction, m.cluster_diameter, m.num_faulty])
    header = ["sample", "usable", "d_x", "d_z", "n_min_x", "n_min_z",
              "disabled_fraction", "cluster_diameter", "num_faulty"]
    _finish("metrics", params, out, _csv_text(header, rows))


@main.command("sample-defects")
@click.option("--l", required=True, type=int)
@click.option("--model", required=True, type=_MODELS)
@click.option("--rate", required=True, type=float)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def sample_defects_cmd(l, model, rate, seed, out):
    """Draw one random defect map and print it as JSON."""
    params = {"l": l, "model": model, "rate": rate, "seed": seed, "out": out}
    defects = sample_defects(build_patch(l), DefectModel(model), rate, seed)
    _finish("sample-defects", params, out, defects.to_json() + "\n")


@main.command("emit-circuit")
@click.option("--defects", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--rounds", required=True, type=int)
@click.option("--p", required=True, type=float)
@click.option("--stability", is_flag=True, default=False)
@click.option("--bad-qubit", default=None, help="r,c,scale (stability only).")
@click.option("--disable-bad", is_flag=True, default=False)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def emit_circuit(defects, rounds, p, stability, bad_qubit, disable_bad, out):
    """Emit the noisy syndrome-extraction circuit in stim-style text."""
    params = {"defects": defects, "rounds": rounds, "p": p, "stability": stability,
              "bad_qubit": bad_qubit, "disable_bad": disable_bad, "out": out}
    dmap = _read_defects(defects)
    noise = NoiseModel(p)
    try:
        if stability:
            bad = None
            if bad_qubit is not None:
                r, c, scale = bad_qubit.split(",")
                bad = ((int(r), int(c)), float(scale))
            circuit = stability_circuit(dmap.l, rounds, noise, bad, disable_bad)
        else:
            circuit = memory_circuit(_adapt_or_fail(dmap), rounds, noise)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    _finish("emit-circuit", params, out, emit_text(circuit))


@main.command("run-memory")
@click.option("--defects", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--p", required=True, type=float)
@click.option("--rounds", type=int, default=None, help="Defaults to the patch size.")
@click.option("--shots", required=True, type=int)
@click.option("--seed", type=int, default=0)
@click.option("--workers", type=int, default=1)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def run_memory(defects, p, rounds, shots, seed, workers, out):
    """Memory-experiment logical error rate with a Wilson interval."""
    params = {"defects": defects, "p": p, "rounds": rounds, "shots": shots,
              "seed": seed, "workers": workers, "out": out}
    dmap = _read_defects(defects)
    code = _adapt_or_fail(dmap)
    ler, ci = estimate_ler(code, NoiseModel(p), rounds or dmap.l, shots, seed, workers)
    record = {"ler": ler, "ci": list(ci), "shots": shots}
    _finish("run-memory", params, out, json.dumps(record) + "\n")


@main.command("fit-slope")
@click.option("--points", required=True, type=click.Path(exists=True, dir_okay=False),
              help="CSV of p,ler rows.")
@click.option("--plot", is_flag=True, default=False)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def fit_slope_cmd(points, plot, out):
    """Fit the log-log slope of logical vs physical error rate."""
    params = {"points": points, "plot": plot, "out": out}
    rows = []
    for line in Path(points).read_text(encoding="utf-8").splitlines():
        try:
            p, ler = (float(tok) for tok in line.split(","))
        except ValueError:
            continue  # header or blank
        rows.append((p, ler))
    try:
        fit = fit_slope(rows)
    except (InsufficientData, ValueError) as exc:
        raise click.ClickException(str(exc))
    record = {"alpha_d": fit.alpha_d, "log_intercept": fit.log_intercept,
              "r_squared": fit.r_squared, "points": [list(pt) for pt in fit.points]}

    def draw(ax):
        import numpy as np

        ps = np.array([pt[0] for pt in rows])
        ax.loglog([pt[0] for pt in rows], [pt[1] for pt in rows], "o", label="measured")
        ax.loglog(ps, np.exp(fit.log_intercept) * ps**fit.alpha_d, "-",
                  label=f"slope {fit.alpha_d:.2f}")
        ax.set_xlabel("physical error rate")
        ax.set_ylabel("logical error rate")
        ax.legend()

    plotter = (lambda png: _plot(png, draw)) if plot else None
    if plot and out is None:
        raise click.UsageError("--plot needs --out")
    _finish("fit-slope", params, out, json.dumps(record) + "\n", plotter)


@main.command()
@click.option("--l", required=True, type=int)
@click.option("--bad", required=True, help="r,c of the bad data qubit.")
@click.option("--bad-p", required=True, type=float)
@click.option("--good-ps", required=True, help="Comma-separated good-qubit rates.")
@click.option("--rounds", required=True, type=int)
@click.option("--shots", required=True, type=int)
@click.option("--seed", type=int, default=0)
@click.option("--workers", type=int, default=1)
@click.option("--plot", is_flag=True, default=False)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def stability(l, bad, bad_p, good_ps, rounds, shots, seed, workers, plot, out):
    """Keep-vs-disable comparison for one bad qubit in a stability patch."""
    params = {"l": l, "bad": bad, "bad_p": bad_p, "good_ps": good_ps,
              "rounds": rounds, "shots": shots, "seed": seed, "workers": workers,
              "plot": plot, "out": out}
    try:
        table = stability_compare(l, _coord(bad), bad_p, _floats(good_ps),
                                  rounds, shots, seed, workers)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    header = ["p", "ler_keep", "keep_lo", "keep_hi",
              "ler_disable", "disable_lo", "disable_hi"]
    rows = [[r.p, r.ler_keep, *r.ci_keep, r.ler_disable, *r.ci_disable]
            for r in table]

    def draw(ax):
        ps = [r.p for r in table]
        ax.loglog(ps, [r.ler_keep for r in table], "o-", label="keep")
        ax.loglog(ps, [r.ler_disable for r in table], "s-", label="disable")
        ax.set_xlabel("good-qubit error rate")
        ax.set_ylabel("logical error rate")
        ax.legend()

    plotter = (lambda png: _plot(png, draw)) if plot else None
    if plot and out is None:
        raise click.UsageError("--plot needs --out")
    _finish("stability", params, out, _csv_text(header, rows), plotter)


def _policy(d_target, tie_break, rotation, standard, baseline) -> SelectionPolicy:
    try:
        return SelectionPolicy(d_target, tie_break, rotation, standard, baseline)
    except ValueError as exc:
        raise click.UsageError(str(exc))


@main.command("yield")
@click.option("--l", required=True, type=int)
@click.option("--model", required=True, type=_MODELS)
@click.option("--rates", required=True, help="Comma-separated defect rates.")
@click.option("--d-target", required=True, type=int)
@click.option("--tie-break", type=click.Choice(["none", "operator_count"]),
              default="operator_count")
@click.option("--rotation", is_flag=True, default=False)
@click.option("--standard", type=int, default=None)
@click.option("--baseline", type=click.Choice(["indicator_based", "fewest_faulty",
                                               "defect_free_only"]),
              default="indicator_based")
@click.option("--samples", type=int, default=10_000)
@click.option("--seed", type=int, default=0)
@click.option("--workers", type=int, default=1)
@click.option("--plot", is_flag=True, default=False)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def yield_cmd(l, model, rates, d_target, tie_break, rotation, standard, baseline,
              samples, seed, workers, plot, out):
    """Acceptance rate and overhead per defect rate under one policy."""
    params = {"l": l, "model": model, "rates": rates, "d_target": d_target,
              "tie_break": tie_break, "rotation": rotation, "standard": standard,
              "baseline": baseline, "samples": samples, "seed": seed,
              "workers": workers, "plot": plot, "out": out}
    policy = _policy(d_target, tie_break, rotation, standard, baseline)
    reports = yield_curve(l, DefectModel(model), _floats(rates), policy, samples,
                          seed, workers, histogram=False)
    header = ["rate", "yield", "ci_lo", "ci_hi", "overhead"]
    rows = [[r.rate, r.yield_, *r.ci, r.overhead_factor] for r in reports]

    def draw(ax):
        xs = [r.rate for r in reports]
        ys = [r.yield_ for r in reports]
        errs = [[y - r.ci[0] for y, r in zip(ys, reports)],
                [r.ci[1] - y for y, r in zip(ys, reports)]]
        ax.errorbar(xs, ys, yerr=errs, fmt="o-")
        ax.set_xscale("log")
        ax.set_xlabel("defect rate")
        ax.set_ylabel("yield")

    plotter = (lambda png: _plot(png, draw)) if plot else None
    if plot and out is None:
        raise click.UsageError("--plot needs --out")
    _finish("yield", params, out, _csv_text(header, rows), plotter)


@main.command("optimal-l")
@click.option("--l-range", required=True, help="e.g. 9,11,13 or 9:17:2.")
@click.option("--model", required=True, type=_MODELS)
@click.option("--rate", required=True, type=float)
@click.option("--d-target", required=True, type=int)
@click.option("--samples", type=int, default=10_000)
@click.option("--seed", type=int, default=0)
@click.option("--workers", type=int, default=1)
@click.option("--plot", is_flag=True, default=False)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def optimal_l(l_range, model, rate, d_target, samples, seed, workers, plot, out):
    """Sweep chiplet sizes at one defect rate; flag the overhead argmin."""
    params = {"l_range": l_range, "model": model, "rate": rate,
              "d_target": d_target, "samples": samples, "seed": seed,
              "workers": workers, "plot": plot, "out": out}
    policy = _policy(d_target, "operator_count", False, None, "indicator_based")
    sizes = _sizes(l_range)
    if not sizes:
        raise click.UsageError("empty --l-range")
    reports = [
        yield_curve(l, DefectModel(model), [rate], policy, samples, seed,
                    workers, histogram=False)[0]
        for l in sizes
    ]
    best = min(range(len(sizes)), key=lambda i: (reports[i].overhead_factor, sizes[i]))
    header = ["l", "yield", "overhead", "best"]
    rows = [[l, r.yield_, r.overhead_factor, int(i == best)]
            for i, (l, r) in enumerate(zip(sizes, reports))]

    def draw(ax):
        ax.plot(sizes, [r.overhead_factor for r in reports], "o-")
        ax.axvline(sizes[best], ls="--", color="gray")
        ax.set_xlabel("chiplet size l")
        ax.set_ylabel("overhead factor")

    plotter = (lambda png: _plot(png, draw)) if plot else None
    if plot and out is None:
        raise click.UsageError("--plot needs --out")
    _finish("optimal-l", params, out, _csv_text(header, rows), plotter)


@main.command("distance-dist")
@click.option("--l", required=True, type=int)
@click.option("--model", required=True, type=_MODELS)
@click.option("--rate", required=True, type=float)
@click.option("--samples", type=int, default=10_000)
@click.option("--seed", type=int, default=0)
@click.option("--workers", type=int, default=1)
@click.option("--plot", is_flag=True, default=False)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def distance_dist(l, model, rate, samples, seed, workers, plot, out):
    """Histogram of achieved code distance over the sampled population."""
    params = {"l": l, "model": model, "rate": rate, "samples": samples,
              "seed": seed, "workers": workers, "plot": plot, "out": out}
    hist = distance_distribution(l, DefectModel(model), rate, samples, seed,
                                 workers)
    rows = [[d, n] for d, n in hist.items()]

    def draw(ax):
        ax.bar(list(hist), list(hist.values()))
        ax.set_xlabel("code distance")
        ax.set_ylabel("chiplets")

    plotter = (lambda png: _plot(png, draw)) if plot else None
    if plot and out is None:
        raise click.UsageError("--plot needs --out")
    _finish("distance-dist", params, out, _csv_text(["d", "count"], rows), plotter)


@main.command()
@click.option("--dist", required=True, type=click.Path(exists=True, dir_okay=False),
              help="CSV of d,count rows.")
@click.option("--patches", type=int, default=226 * 63)
@click.option("--cycles", type=float, default=2.5e10)
@click.option("--p-phys", type=float, default=1e-3)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def fidelity(dist, patches, cycles, p_phys, out):
    """Application fidelity from a code-distance distribution."""
    params = {"dist": dist, "patches": patches, "cycles": cycles,
              "p_phys": p_phys, "out": out}
    histogram: dict[int, float] = {}
    for line in Path(dist).read_text(encoding="utf-8").splitlines():
        try:
            d, count = line.split(",")
            histogram[int(d)] = float(count)
        except ValueError:
            continue
    try:
        est = application_fidelity(histogram, patches, cycles, p_phys)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    record = {"patches": est.patches, "cycles": est.cycles, "p_phys": est.p_phys,
              "distribution": {str(d): w for d, w in est.distribution.items()},
              "patch_round_error": est.patch_round_error, "fidelity": est.fidelity}
    _finish("fidelity", params, out, json.dumps(record) + "\n")


@main.command("shor-table")
@click.option("--rate", required=True, type=float)
@click.option("--model", type=_MODELS, default=DefectModel.LINKS_AND_QUBITS.value)
@click.option("--samples", type=int, default=10_000)
@click.option("--seed", type=int, default=0)
@click.option("--workers", type=int, default=1)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def shor_table_cmd(rate, model, samples, seed, workers, out):
    """Yield/overhead/total-qubit table for the reference application."""
    params = {"rate": rate, "model": model, "samples": samples, "seed": seed,
              "workers": workers, "out": out}
    try:
        rows = shor_table(rate, DefectModel(model), None, samples, seed, workers)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"{'approach':<20}{'l':>4}{'yield':>12}{'overhead':>12}{'qubits':>12}")
    for r in rows:
        click.echo(f"{r.label:<20}{r.l:>4}{r.yield_:>12.3g}"
                   f"{r.overhead:>12.4g}{r.total_qubits:>12.4g}")
    record = [{"approach": r.label, "l": r.l, "yield": r.yield_,
               "overhead": r.overhead, "total_qubits": r.total_qubits}
              for r in rows]
    _finish("shor-table", params, out, json.dumps(record, indent=1) + "\n")


if __name__ == "__main__":
    main()
