"""Command-line surface: plan, analyze, reconcile, train, eval, gradcheck.

Usage problems (bad flags, malformed JSON, unknown presets) exit with
code 2; runtime failures (NaN loss, corrupt checkpoints, io errors) exit
with code 1.
"""

from __future__ import annotations

import functools
import json
from pathlib import Path

import click

from . import analysis, config
from .data import load_cifar10
from .errors import ConfigError, HsnetError
from .gradcheck import gradcheck as run_gradcheck
from .hsblock import HsBlockConfig, channel_plan
from .network import NETWORK_PRESETS, preset
from .train import evaluate, load_network_checkpoint, train as run_train


def _runtime_errors(fn):
    # Config problems are turned into UsageError (exit 2) where configs are
    # parsed; anything else from the library is a runtime failure (exit 1).
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.UsageError:
            raise
        except (HsnetError, OSError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _load_network(config_path, preset_name):
    if (config_path is None) == (preset_name is None):
        raise click.UsageError("give exactly one of --config or --preset")
    try:
        if preset_name is not None:
            return preset(preset_name)
        return config.parse_network(config.load_document(config_path))
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc


@click.group()
def main():
    """Hierarchical-split residual networks on the CPU."""


@main.command()
@click.option("--s", "s", type=int, required=True, help="Number of channel groups.")
@click.option("--w", "w", type=int, required=True, help="Channels per group.")
@click.option("--k", "k", type=int, default=3, show_default=True, help="Kernel size.")
@click.option("--variant", default="preserve", show_default=True,
              type=click.Choice(["preserve", "split-first", "project"]))
@_runtime_errors
def plan(s, w, k, variant):
    """Print the channel plan of one hierarchical-split stage."""
    try:
        cfg = HsBlockConfig(s=s, w=w, k=k, variant=variant)
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc
    p = channel_plan(cfg)
    click.echo(f"channel plan: s={s} w={w} k={k} variant={variant}")
    click.echo(f"{'group':>5} {'conv in':>8} {'conv out':>9} {'kept':>6} {'forwarded':>10}")
    click.echo(f"{1:>5} {'-':>8} {'-':>9} {p.out[0]:>6} {p.fwd[0]:>10}")
    for i in range(2, s + 1):
        fwd = p.fwd[i - 1] if i < s else 0
        click.echo(
            f"{i:>5} {p.conv_in[i - 2]:>8} {p.conv_out[i - 2]:>9} {p.out[i - 1]:>6} {fwd:>10}"
        )
    click.echo(f"out widths: {list(p.out)} (sum={p.total_out}, s*w={s * w})")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--preset", "preset_name", type=click.Choice(sorted(NETWORK_PRESETS)))
@click.option("--image-size", type=int, default=None, help="Override the config image size.")
@click.option("--full", is_flag=True, help="List every layer row.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None,
              help="Also write the per-layer rows as CSV.")
@_runtime_errors
def analyze(config_path, preset_name, image_size, full, csv_path):
    """Parameter and FLOP accounting for one network config."""
    net_cfg = _load_network(config_path, preset_name)
    report = analysis.count_config(net_cfg, image_size)
    click.echo(analysis.report_text(report, full=full))
    if csv_path:
        lines = ["name,kind,params,flops"]
        lines += [f"{r.name},{r.kind},{r.params},{r.flops}" for r in report.rows]
        Path(csv_path).write_text("\n".join(lines) + "\n")
        click.echo(f"per-layer rows written to {csv_path}")


@main.command()
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True,
              help="CSV output path.")
@click.option("--image-size", type=int, default=224, show_default=True)
@_runtime_errors
def reconcile(out_path, image_size):
    """Sweep presets x variants and report budget deviations."""
    rows = analysis.reconcile(image_size=image_size)
    Path(out_path).write_text(analysis.reconcile_csv(rows))
    click.echo(analysis.reconcile_text(rows))
    click.echo(f"\nCSV written to {out_path}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@_runtime_errors
def train(config_path, out_dir):
    """Train per the config; logs and checkpoints land in --out."""
    try:
        cfg = config.parse_train(config.load_document(config_path))
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc
    rows = run_train(cfg, out_dir)
    final = rows[-1]
    click.echo(
        f"done: {cfg.epochs} epochs, final train acc {final['train_acc']:.4f}, "
        f"eval acc {final['eval_acc']:.4f}; log at {Path(out_dir) / 'log.jsonl'}"
    )


@main.command("eval")
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
@click.option("--batch-size", type=int, default=256, show_default=True)
@_runtime_errors
def eval_cmd(ckpt_path, data_path, split, batch_size):
    """Top-1/top-5 accuracy of a checkpoint on a dataset."""
    net = load_network_checkpoint(ckpt_path)
    ds = load_cifar10(data_path, split=split)
    result = evaluate(net, ds, batch_size=batch_size)
    click.echo(json.dumps({
        "dataset": ds.name, "n": len(ds),
        "top1": result.top1, "top5": result.top5, "loss": result.loss,
    }, sort_keys=True))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--preset", "preset_name", type=click.Choice(sorted(NETWORK_PRESETS)))
@click.option("--samples", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tol", type=float, default=1e-3, show_default=True)
@_runtime_errors
def gradcheck(config_path, preset_name, samples, seed, tol):
    """Finite-difference audit; exits nonzero if any sample fails."""
    net_cfg = _load_network(config_path, preset_name)
    report = run_gradcheck(net_cfg, samples=samples, seed=seed, tol=tol)
    for row in report.rows:
        status = "ok" if row.rel_error < tol else "FAIL"
        click.echo(
            f"{status:4} {row.param}[{row.index}] analytic={row.analytic:+.6e} "
            f"numeric={row.numeric:+.6e} rel={row.rel_error:.3e}"
        )
    click.echo(
        f"{'PASS' if report.passed else 'FAIL'}: {len(report.rows)} samples, "
        f"max rel error {report.max_rel_error:.3e} (tol {tol:g})"
    )
    if not report.passed:
        raise click.ClickException("gradient audit failed")


if __name__ == "__main__":
    main()
