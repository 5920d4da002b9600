# cli.py
import os
import signal
import sys

# Force the project root into the Python path so the flat package layout imports cleanly
sys.path.insert(0, os.path.abspath(os.path.dirname(__file__)))

import click

from config import DCC_SEED
from orchestration.main_orchestrator import MainOrchestrator
from utils.log_utils import configure_logging


def _config_options(fn):
    fn = click.option("--eq7-division", is_flag=True, help="Divide filter offsets by the stride, as printed.")(fn)
    fn = click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE",
                      help="Override one config value; repeatable.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                      help="TOML run configuration.")(fn)
    return fn


def _overrides(overrides, eq7_division=False, **shortcuts) -> list[str]:
    out = []
    for key, value in shortcuts.items():
        if value is not None:
            out.append(f"{key}={value}")
    if eq7_division:
        out.append("glimpse.eq7_division=true")
    return out + list(overrides)


def _finish(result: dict) -> None:
    if not result.get("success"):
        click.echo(f"❌ {result.get('message', 'failed')}", err=True)
    elif result.get("message"):
        click.echo(f"✅ {result['message']}")
    sys.exit(result.get("exit_code", 0))


def _orchestrator(show_progress: bool = True) -> MainOrchestrator:
    orchestrator = MainOrchestrator(show_progress=show_progress)
    signal.signal(signal.SIGINT, lambda *_: orchestrator.trigger_kill_switch())
    return orchestrator


@click.group()
@click.option("--log-level", default=None, help="Console log level (defaults to DCC_LOG_LEVEL).")
def cli(log_level):
    """Deep co-attention comparator: train, evaluate, check gradients and visualize glimpses."""
    configure_logging(log_level)


@cli.command()
@_config_options
@click.option("--data", "data_dir", type=click.Path(file_okay=False), default=None,
              help="Dataset directory <identity>/<camera>_<index>.<png|ppm>.")
@click.option("--synthetic", is_flag=True, help="Train on generated identities (the default without --data).")
@click.option("--ids", type=int, default=None, help="Synthetic identities.")
@click.option("--views", type=int, default=None, help="Synthetic views per identity.")
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None, help=f"Run seed (default DCC_SEED={DCC_SEED}).")
@click.option("--out", "run_dir", type=click.Path(file_okay=False), default=None, help="Run directory.")
@click.option("--resume", type=click.Path(dir_okay=False), default=None, help="Checkpoint to continue from.")
@click.option("--no-progress", is_flag=True)
def train(config_path, overrides, eq7_division, data_dir, synthetic, ids, views, epochs, seed, run_dir,
          resume, no_progress):
    """Train on episodes and write checkpoints plus a metrics log."""
    if synthetic and data_dir:
        raise click.UsageError("--synthetic and --data are mutually exclusive")
    sets = _overrides(overrides, eq7_division, **{"data.ids": ids, "data.views": views,
                                                  "train.epochs": epochs, "train.seed": seed})
    orchestrator = _orchestrator(show_progress=not no_progress)
    _finish(orchestrator.run_training(config_path, sets, data_dir=data_dir, run_dir=run_dir, resume=resume))


@cli.command("eval")
@_config_options
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False))
@click.option("--data", "data_dir", type=click.Path(file_okay=False), default=None,
              help="Test directory; unseen synthetic identities when omitted.")
@click.option("--trials", type=int, default=None, help="Single-shot gallery draws to average.")
@click.option("--symmetric", is_flag=True, help="Average the score of (probe, gallery) and (gallery, probe).")
@click.option("--output", "output_path", type=click.Path(dir_okay=False), default=None)
def eval_command(config_path, overrides, eq7_division, checkpoint_path, data_dir, trials, symmetric, output_path):
    """Single-shot CMC / mAP of a checkpoint."""
    sets = _overrides(overrides, eq7_division, **{"eval.symmetric": "true" if symmetric else None})
    orchestrator = _orchestrator()
    _finish(orchestrator.run_evaluation(checkpoint_path, config_path, sets, data_dir=data_dir,
                                        trials=trials, output_path=output_path))


@cli.command()
@click.option("--block", "blocks", multiple=True, help="Restrict to a block (ops, coattention, glimpse, "
                                                       "comparator, head, end_to_end); repeatable.")
@click.option("--perturb-weight", default=None, help="Check a single end-to-end weight (e.g. wl, wg, head).")
@click.option("--epsilon", type=float, default=1e-6, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--corrupt", type=float, default=1.0, hidden=True)
def gradcheck(blocks, perturb_weight, epsilon, seed, corrupt):
    """Finite-difference check of every differentiable block."""
    orchestrator = _orchestrator()
    _finish(orchestrator.run_gradcheck(blocks=list(blocks) or None, epsilon=epsilon,
                                       seed=DCC_SEED if seed is None else seed,
                                       perturb_weight=perturb_weight, corrupt=corrupt))


@cli.command("glimpse-viz")
@_config_options
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "output_dir", required=True, type=click.Path(file_okay=False))
@click.option("--image-a", type=click.Path(dir_okay=False), default=None)
@click.option("--image-b", type=click.Path(dir_okay=False), default=None)
@click.option("--coattention-maps", is_flag=True, help="Also write co-attention heat maps.")
def glimpse_viz(config_path, overrides, eq7_division, checkpoint_path, output_dir, image_a, image_b,
                coattention_maps):
    """Overlay every step's glimpse window on the compared images."""
    orchestrator = _orchestrator()
    _finish(orchestrator.run_glimpse_viz(checkpoint_path, output_dir, image_a=image_a, image_b=image_b,
                                         config_path=config_path, overrides=_overrides(overrides, eq7_division),
                                         coattention_maps=coattention_maps))


@cli.command("synth-data")
@_config_options
@click.option("--out", "output_dir", required=True, type=click.Path(file_okay=False))
@click.option("--ids", type=int, default=None)
@click.option("--views", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--format", "image_format", type=click.Choice(["ppm", "png"]), default="ppm", show_default=True)
def synth_data(config_path, overrides, eq7_division, output_dir, ids, views, seed, image_format):
    """Write a synthetic identity dataset as <identity>/<camera>_<index> images."""
    sets = _overrides(overrides, eq7_division, **{"data.ids": ids, "data.views": views, "train.seed": seed})
    orchestrator = _orchestrator()
    _finish(orchestrator.run_synth_data(output_dir, config_path, sets, image_format=image_format))


if __name__ == "__main__":
    cli()
