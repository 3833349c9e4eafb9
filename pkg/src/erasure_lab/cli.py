"""Command-line interface.

Each subcommand runs one phase under the run's output directory and exits
0 only when the phase completed and its hard invariants held. Failures
print a single machine-parsable `<error-class>: message` line to stderr.
"""

from __future__ import annotations

import sys

import click

from . import pipeline
from .checkpoint import CheckpointError
from .config import ConfigError, parse_config
from .dataio import DataError
from .diffusion import DivergenceError
from .pipeline import AuditOrderingError
from .results import ResultsError

EXIT_CODES = {
    "config-error": 2,
    "data-error": 3,
    "checkpoint-error": 4,
    "divergence-error": 5,
    "invariant-violation": 6,
    "internal-error": 1,
}


def _fail(kind: str, message: str):
    click.echo(f"{kind}: {message}", err=True)
    sys.exit(EXIT_CODES[kind])


def _load(config, seed, out):
    cfg = parse_config(config)
    if seed is not None:
        cfg.data["seed"] = int(seed)
    if out is not None:
        cfg.data["output_dir"] = out
    return cfg, pipeline.prepare_run_dir(cfg)


def _run(phase_fn, config, seed, out, quiet, describe, **kw):
    try:
        cfg, run_dir = _load(config, seed, out)
        result = phase_fn(cfg, run_dir, **kw)
        if not quiet:
            click.echo(describe(cfg, run_dir, result))
    except ConfigError as e:
        _fail("config-error", str(e))
    except (DataError, ResultsError) as e:
        _fail("data-error", str(e))
    except CheckpointError as e:
        _fail("checkpoint-error", str(e))
    except DivergenceError as e:
        _fail("divergence-error", str(e))
    except AuditOrderingError as e:
        _fail("invariant-violation", str(e))
    except Exception as e:  # noqa: BLE001 - last-resort CLI boundary
        _fail("internal-error", f"{type(e).__name__}: {e}")


def common_options(fn):
    fn = click.option("--config", required=True, type=click.Path(), help="run config (YAML)")(fn)
    fn = click.option("--seed", type=int, default=None, help="override the config seed")(fn)
    fn = click.option("--out", type=click.Path(), default=None, help="override the output directory")(fn)
    fn = click.option("--quiet", is_flag=True, help="suppress the summary line")(fn)
    return fn


@click.group()
def main():
    """Concept-erasure laboratory for toy conditional diffusion models."""


@main.command("gen-data")
@common_options
def gen_data(config, seed, out, quiet):
    """Sample the benchmark dataset."""
    _run(pipeline.phase_gen_data, config, seed, out, quiet,
         lambda cfg, rd, p: f"dataset written: {p}")


@main.command("train-base")
@common_options
def train_base(config, seed, out, quiet):
    """Train the conditional base model and freeze the anchor copy."""
    _run(pipeline.phase_train_base, config, seed, out, quiet,
         lambda cfg, rd, p: f"base checkpoint: {p}")


@main.command("erase")
@common_options
@click.option("--resume", type=click.Path(), default=None,
              help="resume an interrupted erasure checkpoint")
@click.option("--stop-at", type=int, default=None,
              help="pause the job after this iteration (checkpoint and exit)")
def erase(config, seed, out, quiet, resume, stop_at):
    """Run adversarial erasure on the trained base model."""
    _run(pipeline.phase_erase, config, seed, out, quiet,
         lambda cfg, rd, p: f"erased checkpoint: {p}",
         resume=resume, stop_at=stop_at)


@main.command("evaluate")
@common_options
@click.option("--checkpoint", "which", default="erased", show_default=True,
              type=click.Choice(["base", "erased"]))
def evaluate(config, seed, out, quiet, which):
    """Concept accuracy, fidelity, alignment and the composite score."""
    _run(pipeline.phase_evaluate, config, seed, out, quiet,
         lambda cfg, rd, rep: (
             f"acc={rep.acc:.4f} fd2_neutral={rep.fd2_neutral:.4f} "
             f"alignment={rep.alignment:.2f} H={rep.harmonic:.4f}"
         ), which=which)


@main.command("audit")
@common_options
@click.option("--checkpoint", "which", default="erased", show_default=True,
              type=click.Choice(["base", "erased"]))
def audit(config, seed, out, quiet, which):
    """Information-leakage bound suite on one checkpoint."""
    def describe(cfg, rd, a):
        ln2 = 0.6931471805599453
        return (f"plugin_mi={a.plugin_mi:.4f} nats ({a.plugin_mi / ln2:.4f} bits) "
                f"entropy_bound={a.entropy_bound:.4f} fano_bound={a.fano_bound:.4f} "
                f"tv={a.tv:.4f} pinsker={a.pinsker:.4f} "
                f"l_adv_final={a.l_adv_final:.4f} bound-ordering=ok")
    _run(pipeline.phase_audit, config, seed, out, quiet, describe, which=which)


@main.command("attack")
@common_options
@click.option("--checkpoint", "which", default="erased", show_default=True,
              type=click.Choice(["base", "erased"]))
def attack(config, seed, out, quiet, which):
    """Adaptive multi-query attacks against one checkpoint."""
    _run(pipeline.phase_attack, config, seed, out, quiet,
         lambda cfg, rd, ts: f"{len(ts)} attack settings recorded", which=which)


@main.command("sweep")
@common_options
def sweep(config, seed, out, quiet):
    """Erasure/fidelity trade-off sweep over lambda."""
    _run(pipeline.phase_sweep, config, seed, out, quiet,
         lambda cfg, rd, pts: " ".join(
             f"lam={p.lam:g}:mi={p.mi:.4f},fd2={p.fd2_neutral:.4f}" for p in pts
         ))


@main.command("report")
@common_options
def report(config, seed, out, quiet):
    """Emit CSV and SVG reports from the run's results."""
    _run(pipeline.phase_report, config, seed, out, quiet,
         lambda cfg, rd, arts: "\n".join(arts))


if __name__ == "__main__":
    main()
