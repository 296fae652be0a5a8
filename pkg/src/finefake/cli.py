"""Operator CLI: a thin client of the HTTP service.

Every subcommand builds a request model, posts it to the service (an
in-process app instance by default, or a remote server via --server /
$FINEFAKE_SERVER), and renders the response. Exit codes: 0 success,
2 config/input error, 3 training protocol error, 4 checkpoint error.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import httpx

from . import __version__
from .config import load_run_config, parse_overrides
from .errors import ConfigurationError

EXIT_CODES = {"config": 2, "protocol": 3, "checkpoint": 4}


class ServiceClient:
    """Posts request payloads to the service, in-process or remote."""

    def __init__(self, server: str | None):
        if server:
            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            # in-process transport: same request path, no socket
            from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app(), raise_server_exceptions=False)

    def post(self, path: str, payload: dict) -> dict:
        try:
            response = self._client.post(path, json=payload)
        except httpx.HTTPError as exc:
            click.echo(f"error: cannot reach service: {exc}", err=True)
            sys.exit(1)
        if response.status_code == 200:
            return response.json()
        try:
            body = response.json()
        except ValueError:
            body = {"error_kind": "internal", "detail": response.text}
        if response.status_code == 422:  # request model validation
            body = {"error_kind": "config", "detail": body.get("detail", body)}
        kind = body.get("error_kind", "internal")
        click.echo(f"error ({kind}): {body.get('detail')}", err=True)
        sys.exit(EXIT_CODES.get(kind, 1))


def _config_payload(config, profile, sets, extra_overrides=None) -> dict:
    overrides = parse_overrides(list(sets))
    if extra_overrides:
        for dotted, value in extra_overrides.items():
            node = overrides
            parts = dotted.split(".")
            for part in parts[:-1]:
                node = node.setdefault(part, {})
            node[parts[-1]] = value
    cfg = load_run_config(config, profile=profile, overrides=overrides)
    return cfg.model_dump(mode="json")


def _parse_toggles(raw: str) -> dict:
    toggles = {}
    for part in raw.split(","):
        if "=" not in part:
            raise ConfigurationError(f"toggle {part!r} is not of the form name=on|off")
        name, value = part.split("=", 1)
        name = name.strip()
        if name not in ("bs", "refinement"):
            raise ConfigurationError(f"unknown toggle {name!r}")
        value = value.strip().lower()
        if value not in ("on", "off", "true", "false"):
            raise ConfigurationError(f"toggle value {value!r} must be on or off")
        toggles[name] = value in ("on", "true")
    return toggles


def common_options(fn):
    fn = click.option("--server", envvar="FINEFAKE_SERVER", default=None,
                      help="Remote service URL; default runs in-process.")(fn)
    return fn


def config_options(fn):
    fn = click.option("--config", type=click.Path(), default=None, help="YAML run config.")(fn)
    fn = click.option("--profile", type=click.Choice(["paper", "desk"]), default=None)(fn)
    fn = click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
                      help="Dotted-path config override, repeatable.")(fn)
    return fn


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Fine-grained forgery detection: data synthesis, training,
    cross-manipulation evaluation, and saliency maps."""


@main.command()
@config_options
@common_options
@click.option("--out", required=True, help="Dataset output directory.")
def synth(config, profile, sets, server, out):
    """Generate a synthetic forgery dataset (images + manifest + regions)."""
    try:
        payload = {"config": _config_payload(config, profile, sets), "out_dir": out}
    except ConfigurationError as exc:
        click.echo(f"error (config): {exc}", err=True)
        sys.exit(2)
    result = ServiceClient(server).post("/synth", payload)
    click.echo(json.dumps(result, indent=2))


@main.command()
@config_options
@common_options
@click.option("--data", required=True, help="Dataset directory (with manifest.csv).")
@click.option("--out", required=True, help="Run output directory.")
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--toggles", default=None, metavar="bs=on,refinement=off",
              help="Module toggles for ablations.")
def train(config, profile, sets, server, data, out, seed, epochs, batch_size, toggles):
    """Train a detector and write checkpoint + metrics log."""
    extra = {}
    if seed is not None:
        extra["train.seed"] = seed
    if epochs is not None:
        extra["train.max_epochs"] = epochs
    if batch_size is not None:
        extra["train.batch_size"] = batch_size
    try:
        if toggles is not None:
            for name, value in _parse_toggles(toggles).items():
                extra[f"train.toggles.{name}"] = value
        payload = {
            "config": _config_payload(config, profile, sets, extra),
            "data_dir": data,
            "out_dir": out,
        }
        if not Path(data).exists() and not _is_remote(server):
            click.echo(f"error (config): data path not found: {data}", err=True)
            sys.exit(2)
    except ConfigurationError as exc:
        click.echo(f"error (config): {exc}", err=True)
        sys.exit(2)
    result = ServiceClient(server).post("/train", payload)
    click.echo(json.dumps(result, indent=2))


def _is_remote(server: str | None) -> bool:
    return bool(server or os.environ.get("FINEFAKE_SERVER"))


@main.command("eval")
@common_options
@click.option("--checkpoint", required=True, help="Checkpoint directory.")
@click.option("--data", "data_dirs", required=True, multiple=True,
              help="Dataset directory to evaluate; repeatable.")
@click.option("--cross", default=None, metavar="NAME[,NAME...]",
              help="Also evaluate sibling datasets with these directory names.")
@click.option("--out", required=True, help="Report output directory.")
@click.option("--split", default="test", show_default=True)
def eval_cmd(server, checkpoint, data_dirs, cross, out, split):
    """Evaluate a checkpoint on one or more manipulation families,
    one report file per (train family, test family) cell."""
    dirs = list(data_dirs)
    if cross:
        parent = Path(dirs[0]).parent
        dirs.extend(str(parent / name.strip()) for name in cross.split(","))
    payload = {
        "checkpoint_dir": checkpoint,
        "data_dirs": dirs,
        "out_dir": out,
        "split": split,
    }
    result = ServiceClient(server).post("/eval", payload)
    click.echo(json.dumps(result, indent=2))


@main.command()
@common_options
@click.option("--checkpoint", required=True, help="Checkpoint directory.")
@click.option("--data", required=True, help="Dataset directory.")
@click.option("--out", required=True, help="Overlay output directory.")
@click.option("--max-images", type=int, default=8, show_default=True)
@click.option("--target-class", type=int, default=1, show_default=True)
@click.option("--block-index", type=int, default=-1, show_default=True)
@click.option("--alpha", type=float, default=0.5, show_default=True)
def gradcam(server, checkpoint, data, out, max_images, target_class, block_index, alpha):
    """Write Grad-CAM overlays and artifact-region overlap statistics."""
    payload = {
        "checkpoint_dir": checkpoint,
        "data_dir": data,
        "out_dir": out,
        "max_images": max_images,
        "target_class": target_class,
        "block_index": block_index,
        "alpha": alpha,
    }
    result = ServiceClient(server).post("/gradcam", payload)
    click.echo(json.dumps(result, indent=2))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8411, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
