import json
import logging
import sys

import click
import numpy as np

from models.analysis import (
    alpha_min_receptive,
    channels_at_least,
    match_vgg,
    prop2_bound,
    theorem1_bound,
    total_receptive,
    total_stride,
    vgg_effective_B,
)
from models.config import (
    DEFAULT_SEED,
    DEFAULT_TOL,
    DEFAULT_TRIALS,
    EQUIV_INPUTS,
    EXACT_MODE_MAX_H,
    GRID_CAP,
    PARTITION_KINDS,
    SCALAR_MODES,
)
from models.constructions import (
    ConstructionConfig,
    claim3_params,
    claim4_compile,
    random_params,
    random_two_anchor,
    theorem1_params,
    theorem3_params,
)
from models.errors import ConvACError, SpecError
from models.grid import (
    all_partition_ranks,
    build_grid_tensor,
    parse_partition,
    partition_positions,
)
from models.network import LayerSpec, NetworkParams, NetworkSpec, forward_batch, lift_params, validate
from models.tensor_core import matricize, matrix_rank, rank_threshold, singular_values
from models.verify import SUITES, outputs_agree, random_inputs, run_suite
from storage.arch_storage import load_arch
from storage.params_storage import load_params, save_params as write_params

logger = logging.getLogger(__name__)


def emit(ctx, payload, lines):
    if ctx.obj["format"] == "json":
        click.echo(json.dumps(payload, indent=2))
    else:
        for line in lines:
            click.echo(line)


def fail(ctx, error):
    # Library errors exit with 2 and a one-line message
    if ctx.obj["format"] == "json":
        click.echo(json.dumps({"error": error.to_dict()}, indent=2))
    else:
        click.echo(f"error [{error.code}]: {error.message}", err=True)
    ctx.exit(2)


class ConvACGroup(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except ConvACError as e:
            fail(ctx, e)


@click.group(cls=ConvACGroup)
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text")
@click.option("--cap", type=int, default=GRID_CAP, show_default=True, help="Largest M^N to enumerate.")
@click.option("--threads", type=int, default=1, show_default=True)
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default="WARNING",
)
@click.pass_context
def cli(ctx, fmt, cap, threads, log_level):
    """Expressive-efficiency analysis of convolutional arithmetic circuits."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    ctx.ensure_object(dict)
    ctx.obj.update(format=fmt, cap=cap, threads=threads)


# Architecture analysis

def layer_table(spec):
    rows = validate(spec).layers
    for row in rows:
        row["T_S"] = total_stride(spec, row["layer"])
        row["T_R"] = total_receptive(spec, row["layer"])
    return rows


def power_text(base, exponent, log10):
    return f"{base}^{exponent} (log10 {log10:.3f})"


@cli.command()
@click.argument("arch")
@click.pass_context
def analyze(ctx, arch):
    """Strides, receptive fields and the overlap lower bound of ARCH."""
    spec = load_arch(arch)
    diagnostics = validate(spec)
    rows = layer_table(spec)

    report, skipped = None, None
    if not spec.is_collapsing:
        skipped = f"network does not collapse (final size {spec.spatial_sizes()[-1]})"
    else:
        try:
            report = theorem1_bound(spec)
        except SpecError as e:
            skipped = e.message

    prop2 = None
    matched = match_vgg(spec)
    if matched is not None:
        K, C = matched
        B = vgg_effective_B(K, C)
        prop2 = prop2_bound(B, spec.H, spec.M).to_dict()
        prop2.update(K=K, C=C, channels_at_least_2M=channels_at_least(spec, 2 * spec.M))

    payload = {
        "arch": arch,
        "spec": spec.to_dict(),
        "layers": rows,
        "non_overlapping": diagnostics.non_overlapping,
        "notes": diagnostics.notes,
        "bound": report.to_dict() if report else None,
        "bound_skipped": skipped,
        "prop2": prop2,
    }

    lines = [f"{arch}: H={spec.H} M={spec.M} L={spec.L}"]
    lines.append("layer   R   S    D  shared  H_in  H_out   T_S   T_R  overlap")
    for row in rows:
        lines.append(
            f"{row['layer']:>5} {row['R']:>3} {row['S']:>3} {row['D']:>4}  {str(row['shared']):<6}"
            f" {row['h_in']:>5} {row['h_out']:>6} {row['T_S']:>5} {row['T_R']:>5}  "
            f"{'yes' if row['overlapping'] else 'no'}"
        )
    lines.extend(f"note: {note}" for note in diagnostics.notes)
    if report:
        for entry in report.per_K:
            lines.append(
                f"K={entry.K}: alpha-min {entry.alpha_min}, "
                f"bound {power_text(entry.base, entry.exponent, entry.to_dict()['log10'])}"
            )
        lines.append(f"lower bound: {power_text(report.base, report.exponent, report.log10)}")
        lines.append(f"lower bound (exact): {report.bound}")
        if report.trivial:
            lines.append("trivial: no better than a non-overlapping network of the same widths")
        lines.append(f"non-overlapping networks need next-to-last width >= {report.min_nonoverlap_channels}")
    else:
        lines.append(f"bound skipped: {skipped}")
    if prop2:
        lines.append(
            f"conv/pool pattern: K={prop2['K']} C={prop2['C']} -> B={prop2['B']}, "
            f"exact exponent {prop2['exact_exponent']}, closed form {prop2['tau_exponent_float']:.3f}"
        )
        if not prop2["channels_at_least_2M"]:
            lines.append("closed form assumes every layer has at least 2M channels")
    emit(ctx, payload, lines)


# Grid-tensor rank

def default_mode(spec, mode):
    if mode:
        return mode
    return "exact" if spec.H <= EXACT_MODE_MAX_H else "float"


def build_params(spec, source, partition_text, mode):
    kind = partition_text if partition_text in PARTITION_KINDS else "left-right"
    if source.startswith("random:"):
        try:
            seed = int(source[len("random:"):])
        except ValueError:
            raise click.BadParameter(f"bad seed in '{source}'", param_hint="--params")
        return random_params(spec, seed, mode=mode)
    if source.startswith("file:"):
        return load_params(source[len("file:"):], spec).astype(mode)
    if source == "claim3":
        first = spec.layer(1)
        cfg = ConstructionConfig(
            H=spec.H,
            M=spec.M,
            R=first.R,
            S=first.S,
            D=min(first.D, spec.M),
            partition_kind=kind,
            mode=mode,
        )
        return claim3_params(cfg, spec)
    if source == "theorem1":
        return theorem1_params(spec, partition_kind=kind, mode=mode)
    if source == "theorem3":
        if partition_text == "all":
            raise click.BadParameter("theorem3 needs one partition", param_hint="--partition")
        first = spec.layer(1)
        part = parse_partition(partition_text, spec.H)
        return theorem3_params(spec.H, spec.M, first.D, part, first.shared, mode=mode, spec=spec)
    raise click.BadParameter(
        f"unknown params source '{source}' (random:<seed>, claim3, theorem1, theorem3, file:<path>)",
        param_hint="--params",
    )


def sv_tail(matrix, rank, tol, width=3):
    sv = singular_values(matrix)
    threshold = rank_threshold(sv, matrix.dims, tol)
    lo, hi = max(0, rank - width), min(len(sv), rank + width)
    return [float(s) for s in sv[lo:hi]], lo, threshold


@cli.command()
@click.argument("arch")
@click.option("--params", "source", default=f"random:{DEFAULT_SEED}", show_default=True,
              help="random:<seed> | claim3 | theorem1 | theorem3 | file:<path>")
@click.option("--partition", "partition_text", default="left-right", show_default=True,
              help="left-right | top-bottom | custom:I|J | all")
@click.option("--mode", type=click.Choice(SCALAR_MODES), default=None,
              help=f"Defaults to exact for H <= {EXACT_MODE_MAX_H}.")
@click.option("--tol", type=float, default=DEFAULT_TOL, show_default=True)
@click.option("--channel", type=int, default=0, show_default=True, help="Output channel y.")
@click.option("--save-params", "save_path", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def rank(ctx, arch, source, partition_text, mode, tol, channel, save_path):
    """Rank of the matricized grid tensor of ARCH."""
    spec = load_arch(arch)
    mode = default_mode(spec, mode)
    params = build_params(spec, source, partition_text, mode)
    if save_path:
        write_params(params, save_path)

    grid = build_grid_tensor(
        spec, params, output_channel=channel, cap=ctx.obj["cap"], threads=ctx.obj["threads"]
    )
    payload = {"arch": arch, "params": source, "mode": mode, "channel": channel}

    if partition_text == "all":
        ranks = all_partition_ranks(grid, tol)
        payload["partitions"] = [dict(part.to_dict(), rank=r) for part, r in ranks]
        payload["min_rank"] = min(r for _, r in ranks)
        lines = [f"{part.P} | {part.Q}: rank {r}" for part, r in ranks]
        lines.append(f"minimum over {len(ranks)} even partitions: {payload['min_rank']}")
        emit(ctx, payload, lines)
        return

    part = parse_partition(partition_text, spec.H)
    matrix = matricize(grid, part)
    r = matrix_rank(matrix, tol)
    payload.update(
        partition=part.to_dict(),
        positions=partition_positions(part, spec.H),
        shape=list(matrix.dims),
        rank=r,
    )
    lines = [
        f"{arch} [{mode}] params {source}, partition {partition_text}",
        f"matricization {matrix.rows} x {matrix.cols}, rank {r}",
    ]
    if mode == "float":
        tail, start, threshold = sv_tail(matrix, r, tol)
        payload.update(singular_values_tail=tail, tail_start=start, threshold=threshold)
        lines.append(f"threshold {threshold:.3e}; singular values from #{start}: "
                     + ", ".join(f"{s:.3e}" for s in tail))
    emit(ctx, payload, lines)


# Verification suites

@cli.command()
@click.option("--suite", type=click.Choice(("all",) + SUITES), default="all", show_default=True)
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True)
@click.option("--trials", type=int, default=DEFAULT_TRIALS, show_default=True)
@click.option("--inputs", type=int, default=EQUIV_INPUTS, show_default=True)
@click.pass_context
def verify(ctx, suite, seed, trials, inputs):
    """Run the verification suites; exit 1 when any case fails."""
    names = SUITES if suite == "all" else (suite,)
    results = [
        run_suite(
            name,
            seed=seed,
            trials=trials,
            inputs=inputs,
            cap=ctx.obj["cap"],
            threads=ctx.obj["threads"],
        )
        for name in names
    ]
    passed = all(result.passed for result in results)

    lines = []
    for result in results:
        ok = len(result.cases) - len(result.failures)
        lines.append(f"{result.name}: {ok}/{len(result.cases)} passed")
        lines.extend(f"  FAIL {case.name} {case.detail}" for case in result.failures)
    lines.append("all passed" if passed else "FAILED")
    emit(ctx, {"passed": passed, "suites": [result.to_dict() for result in results]}, lines)
    if not passed:
        ctx.exit(1)


# Functional equivalence

@cli.command()
@click.argument("arch")
@click.argument("small", required=False)
@click.option("--kind", type=click.Choice(["prop1", "claim4"]), default="prop1", show_default=True)
@click.option("--window", type=int, default=None, help="claim4: big window (default: smallest above H/2).")
@click.option("--channels", type=int, default=None, help="claim4: big-window channel count.")
@click.option("--orientation", type=click.Choice(PARTITION_KINDS), default="left-right", show_default=True)
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True)
@click.option("--inputs", type=int, default=EQUIV_INPUTS, show_default=True)
@click.pass_context
def equiv(ctx, arch, small, kind, window, channels, orientation, seed, inputs):
    """prop1: ARCH reproduces SMALL. claim4: ARCH's stack replays one big window."""
    spec = load_arch(arch)
    rng = np.random.default_rng(seed)
    batch = random_inputs(rng, inputs, spec.M, spec.H)

    if kind == "prop1":
        if small is None:
            raise click.UsageError("prop1 needs the smaller architecture")
        small_spec = load_arch(small)
        small_params = random_params(small_spec, seed)
        big_params = lift_params(spec, small_spec, small_params)
        reference = forward_batch(small_spec, small_params, batch)
        D = reference.shape[1]
        detail = {"small": small}
    else:
        if window is None:
            window = alpha_min_receptive(spec, spec.L, spec.H // 2).value
        if channels is None:
            channels = max(1, min([layer.D // 2 for layer in spec.layers[:-1]] + [spec.layers[-1].D]))
        psi = LayerSpec(window, total_stride(spec, spec.L), channels)
        psi_params = random_two_anchor(psi, spec.M, seed, orientation)
        big_params = claim4_compile(psi, psi_params, spec)
        reference = forward_batch(NetworkSpec(spec.H, spec.M, (psi,)), NetworkParams((psi_params,)), batch)
        D = channels
        detail = {"window": window, "stride": psi.S, "channels": channels, "orientation": orientation}

    out = forward_batch(spec, big_params, batch)
    agree = out.shape[2:] == reference.shape[2:] and outputs_agree(out, reference, D)
    payload = dict(arch=arch, kind=kind, inputs=inputs, equal=agree, **detail)
    emit(ctx, payload, [f"{kind}: {'equal' if agree else 'DIFFERENT'} on {inputs} inputs {detail}"])
    if not agree:
        ctx.exit(1)


if __name__ == "__main__":
    cli()
